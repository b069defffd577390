//! One function per subcommand. Each returns the text meant for stdout and
//! leaves process exit codes to the binary.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mmcse_core::data::{gen_audio, gen_images, gen_text, gen_triplets, inject_noise};
use mmcse_core::encoder::Encoder;
use mmcse_core::metrics::{eval_sts, retrieve_topk, RetrievalHit, RetrievalRow};
use mmcse_core::rng::derive_seed;
use mmcse_core::training::LogRecord;

use crate::checkpoint::Checkpoint;
use crate::experiment::{self, Sweep};
use crate::formats::{self, Dataset};
use crate::plot::{line_chart, Series};
use crate::report::{table_row, ReportFile, TABLE_HEADER};
use crate::selftest::{format_table, run_selftest, SelftestOptions};
use crate::{write_file, CliError, Result, RunConfig};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.tsv";
pub const METRICS_FILE: &str = "metrics.json";

/// Appends lines to a file and flushes each one, so an aborted run leaves
/// everything written so far on disk.
struct LineSink {
    path: PathBuf,
    file: File,
    error: Option<std::io::Error>,
}

impl LineSink {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        write_file(&path, format!("{header}\n"))?;
        let file = File::options().append(true).open(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(LineSink { path, file, error: None })
    }

    fn line(&mut self, s: &str) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.file, "{s}").and_then(|_| self.file.flush()) {
                self.error = Some(e);
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.error {
            Some(e) => Err(CliError::io(&self.path, e)),
            None => Ok(()),
        }
    }
}

fn training_plots(dir: &Path, log: &[LogRecord]) -> Result<()> {
    let mut losses: Vec<Series> = Vec::new();
    let mut dev = Series { name: "dev spearman".into(), points: Vec::new() };
    for r in log {
        match r {
            LogRecord::Loss { step, name, value } => {
                let s = match losses.iter_mut().position(|s| s.name == *name) {
                    Some(i) => &mut losses[i],
                    None => {
                        losses.push(Series { name: (*name).into(), points: Vec::new() });
                        losses.last_mut().expect("just pushed")
                    }
                };
                s.points.push((*step as f64, *value));
            }
            LogRecord::Validation { step, spearman, .. } => dev.points.push((*step as f64, *spearman)),
        }
    }
    line_chart(&dir.join("train_loss.svg"), "training loss", "step", "loss", &losses)?;
    line_chart(&dir.join("dev_spearman.svg"), "dev Spearman", "step", "spearman", &[dev])
}

/// Trains one arm and writes the effective config, the log, the best
/// checkpoint, its test report and two plots into `out_dir`.
pub fn train(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.out_path();
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())?;
    let mut sink = LineSink::create(dir.join(LOG_FILE), formats::LOG_HEADER)?;
    let outcome = experiment::run_arm(cfg, &mut |r| sink.line(&formats::log_line(r)));
    sink.finish()?;
    let arm = outcome?;

    let step = arm.selection.best_step as u64;
    Checkpoint::new(cfg, step, arm.encoder.params()).save(&dir.join(CHECKPOINT_FILE))?;
    let report = ReportFile::new(arm.best.clone(), cfg.seed, step, cfg.hash());
    report.save(&dir.join(METRICS_FILE))?;
    training_plots(&dir, &arm.log)?;
    Ok(format!(
        "best dev spearman {:.4} at step {step}; test spearman {:.4}, alignment {:.4}, uniformity {:.4}\nwrote {}\n",
        arm.selection.best_validation_score,
        arm.best.spearman,
        arm.best.alignment,
        arm.best.uniformity_log,
        dir.display()
    ))
}

fn retrieval_rows(encoder: &Encoder, pairs: &[mmcse_core::metrics::ScoredPair], k: usize) -> Result<Vec<RetrievalRow>> {
    let queries: Vec<&[u32]> = pairs.iter().map(|p| p.a.as_slice()).collect();
    let corpus: Vec<&[u32]> = pairs.iter().map(|p| p.b.as_slice()).collect();
    let q = encoder.represent_text(&queries, 64)?.vectors;
    let c = encoder.represent_text(&corpus, 64)?.vectors;
    (0..pairs.len())
        .map(|i| {
            let hits = retrieve_topk(q.row(i), &c, k)?
                .into_iter()
                .map(|(index, score)| RetrievalHit { index, score })
                .collect();
            Ok(RetrievalRow { query: i, hits })
        })
        .collect()
}

/// Scores a checkpoint on an STS file. With `retrieve_k`, every left
/// sentence also retrieves its nearest right sentences.
pub fn eval(checkpoint: &Path, dataset: &Path, out: Option<&Path>, retrieve_k: Option<usize>) -> Result<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let pairs = match formats::load_dataset(dataset)? {
        Dataset::Sts(p) => p,
        other => return Err(CliError::format(dataset, format!("expected an sts dataset, got {}", other.kind()))),
    };
    let encoder = ckpt.encoder()?;
    let mut metrics = eval_sts(&encoder, &pairs, ckpt.config.threshold())?;
    if let Some(k) = retrieve_k {
        metrics.retrieval = Some(retrieval_rows(&encoder, &pairs, k)?);
    }
    let json = ReportFile::new(metrics, ckpt.config.seed, ckpt.step, ckpt.config.hash()).to_json();
    match out {
        Some(path) => {
            write_file(path, &json)?;
            Ok(format!("wrote {}\n", path.display()))
        }
        None => Ok(json),
    }
}

pub fn selftest(opts: &SelftestOptions) -> Result<String> {
    let results = run_selftest(opts);
    let table = format_table(&results);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(table)
    } else {
        print!("{table}");
        Err(CliError::SelfTest(failed.join(", ")))
    }
}

/// Runs a sweep, appending each finished grid point to
/// `ablation_<sweep>.tsv` before starting the next.
pub fn ablate(cfg: &RunConfig, sweep: Sweep) -> Result<String> {
    let dir = cfg.out_path();
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())?;
    let table = dir.join(format!("ablation_{}.tsv", sweep.name()));
    let mut sink = LineSink::create(table.clone(), TABLE_HEADER)?;
    let outcome = experiment::run_sweep(cfg, sweep, &mut |row| {
        sink.line(&table_row(row));
        Ok(())
    });
    sink.finish()?;
    let rows = outcome?;

    let mut series = vec![Series { name: "spearman median".into(), points: Vec::new() }];
    if sweep == Sweep::Seeds {
        series[0].name = "spearman".into();
        series[0].points = rows[0].spearman.iter().enumerate().map(|(i, s)| ((cfg.seed + i as u64) as f64, *s)).collect();
    } else {
        series[0].points = rows.iter().map(|r| (r.x, r.spearman_median())).collect();
    }
    let svg = dir.join(format!("ablation_{}.svg", sweep.name()));
    line_chart(&svg, &format!("{} sweep", sweep.name()), sweep.x_label(), "test spearman", &series)?;
    Ok(format!("{} rows\nwrote {} and {}\n", rows.len(), table.display(), svg.display()))
}

/// Ranked `rank <TAB> score <TAB> tokens` lines for the `k` corpus
/// sentences closest to `query`.
pub fn retrieve(checkpoint: &Path, corpus: &Path, query: &str, k: usize) -> Result<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let sentences: Vec<Vec<u32>> = match formats::load_dataset(corpus)? {
        Dataset::Sentences(v) => v.into_iter().map(|s| s.tokens).collect(),
        other => return Err(CliError::format(corpus, format!("expected a sentences dataset, got {}", other.kind()))),
    };
    if k > sentences.len() {
        return Err(CliError::Usage(format!("k = {k} exceeds the corpus size {}", sentences.len())));
    }
    let query = formats::parse_tokens(query).map_err(|e| CliError::Usage(format!("query: {e}")))?;
    let encoder = ckpt.encoder()?;
    let q = encoder.represent_text(&[query], 1)?.vectors;
    let c = encoder.represent_text(&sentences, 64)?.vectors;
    let mut out = String::new();
    for (rank, (i, score)) in retrieve_topk(q.row(0), &c, k)?.into_iter().enumerate() {
        let tokens: Vec<String> = sentences[i].iter().map(u32::to_string).collect();
        out.push_str(&format!("{}\t{score:.4}\t{}\n", rank + 1, tokens.join(" ")));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Sentences,
    Triplets,
    DevSts,
    TestSts,
    Images,
    Audio,
}

impl std::str::FromStr for DataKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('_', "-").as_str() {
            "sentences" => DataKind::Sentences,
            "triplets" => DataKind::Triplets,
            "dev-sts" => DataKind::DevSts,
            "test-sts" => DataKind::TestSts,
            "images" => DataKind::Images,
            "audio" => DataKind::Audio,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown data kind {other:?}; expected sentences, triplets, dev-sts, test-sts, images or audio"
                )))
            }
        })
    }
}

/// Writes one generated dataset. Triplets carry the configured noise.
pub fn gen_data(cfg: &RunConfig, kind: DataKind, out: &Path) -> Result<String> {
    let data = match kind {
        DataKind::Sentences => Dataset::Sentences(gen_text(&cfg.corpus())?),
        DataKind::Triplets => {
            let corpus = gen_text(&cfg.corpus())?;
            let triplets = gen_triplets(&corpus, derive_seed(cfg.data_seed, "triplets", 0))?;
            Dataset::Triplets(inject_noise(&triplets, &cfg.noise(), cfg.vocab_size)?.0)
        }
        DataKind::DevSts => Dataset::Sts(experiment::dev_pairs(cfg)?),
        DataKind::TestSts => Dataset::Sts(experiment::test_pairs(cfg)?),
        DataKind::Images => Dataset::Images(gen_images(&cfg.images())?),
        DataKind::Audio => Dataset::Audio(gen_audio(&cfg.audio())?),
    };
    formats::save_dataset(out, &data)?;
    Ok(format!("wrote {} {} records to {}\n", data.len(), data.kind(), out.display()))
}

/// A checkpoint of the untrained encoder for `cfg`.
pub fn init_checkpoint(cfg: &RunConfig, out: &Path) -> Result<String> {
    let encoder = Encoder::new(cfg.encoder(), cfg.seed)?;
    Checkpoint::new(cfg, 0, encoder.params()).save(out)?;
    Ok(format!("wrote {}\n", out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(dir: &Path) -> RunConfig {
        RunConfig {
            out_dir: dir.display().to_string(),
            ..crate::selftest::determinism_config()
        }
    }

    #[test]
    fn train_writes_every_artifact_and_eval_reproduces_the_report() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy(tmp.path());
        train(&cfg).unwrap();
        for f in [CONFIG_FILE, CHECKPOINT_FILE, LOG_FILE, METRICS_FILE, "train_loss.svg", "dev_spearman.svg"] {
            assert!(tmp.path().join(f).exists(), "{f}");
        }
        let reloaded = RunConfig::parse(&std::fs::read_to_string(tmp.path().join(CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(reloaded.to_text(), cfg.to_text());

        let sts = tmp.path().join("test.sts");
        gen_data(&cfg, DataKind::TestSts, &sts).unwrap();
        let json = eval(&tmp.path().join(CHECKPOINT_FILE), &sts, None, None).unwrap();
        assert_eq!(json, std::fs::read_to_string(tmp.path().join(METRICS_FILE)).unwrap());
    }

    #[test]
    fn retrieval_puts_the_query_first_and_rejects_large_k() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy(tmp.path());
        let ckpt = tmp.path().join("init.bin");
        init_checkpoint(&cfg, &ckpt).unwrap();
        let corpus = tmp.path().join("corpus.txt");
        gen_data(&cfg, DataKind::Sentences, &corpus).unwrap();
        let Dataset::Sentences(s) = formats::load_dataset(&corpus).unwrap() else { panic!() };
        let query: Vec<String> = s[7].tokens.iter().map(u32::to_string).collect();
        let out = retrieve(&ckpt, &corpus, &query.join(" "), 3).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        let first: Vec<&str> = lines[0].split('\t').collect();
        assert_eq!((first[0], first[1], first[2]), ("1", "1.0000", query.join(" ").as_str()));
        assert!(retrieve(&ckpt, &corpus, "2 3", s.len() + 1).is_err());
    }

    #[test]
    fn data_kinds_parse() {
        assert_eq!("dev_sts".parse::<DataKind>().unwrap(), DataKind::DevSts);
        assert!("video".parse::<DataKind>().is_err());
    }
}
