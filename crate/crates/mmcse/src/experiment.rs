//! Dataset preparation, single training arms and ablation sweeps.

use mmcse_core::data::{
    gen_audio, gen_images, gen_sts_pairs, gen_text, gen_triplets, inject_noise, subsample, NoiseReport, Sentence,
};
use mmcse_core::encoder::Encoder;
use mmcse_core::losses::ModalLoss;
use mmcse_core::metrics::{eval_sts, MetricsReport, ScoredPair};
use mmcse_core::rng::derive_seed;
use mmcse_core::training::{train, LogRecord, ModalData, ModalityChoice, SelectionState, TextData, TrainData};

use crate::report::AblationRow;
use crate::{CliError, Result, RunConfig};

/// Everything generated from a config's data settings.
pub struct Prepared {
    pub corpus: Vec<Sentence>,
    pub data: TrainData,
    pub test: Vec<ScoredPair>,
    pub noise: NoiseReport,
}

pub fn dev_pairs(cfg: &RunConfig) -> Result<Vec<ScoredPair>> {
    Ok(gen_sts_pairs(&cfg.corpus(), cfg.dev_pairs, cfg.sts_same_cluster, derive_seed(cfg.data_seed, "dev-sts", 0))?)
}

pub fn test_pairs(cfg: &RunConfig) -> Result<Vec<ScoredPair>> {
    Ok(gen_sts_pairs(&cfg.corpus(), cfg.test_pairs, cfg.sts_same_cluster, derive_seed(cfg.data_seed, "test-sts", 0))?)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let corpus = gen_text(&cfg.corpus())?;
    let mut noise = NoiseReport::default();
    let text = if cfg.supervised_text {
        let triplets = gen_triplets(&corpus, derive_seed(cfg.data_seed, "triplets", 0))?;
        let (noisy, report) = inject_noise(&triplets, &cfg.noise(), cfg.vocab_size)?;
        noise = report;
        let keep = ((cfg.triplet_fraction * noisy.len() as f64).round() as usize).max(1);
        TextData::Supervised(subsample(&noisy, keep, derive_seed(cfg.data_seed, "subsample", 0))?)
    } else {
        TextData::Unsupervised(corpus.iter().map(|s| s.tokens.clone()).collect())
    };
    let modal = match cfg.modality {
        ModalityChoice::None => ModalData::None,
        ModalityChoice::Image => ModalData::Images(gen_images(&cfg.images())?),
        ModalityChoice::Audio => ModalData::Audio(gen_audio(&cfg.audio())?),
    };
    Ok(Prepared {
        corpus,
        data: TrainData {
            text,
            modal,
            dev: dev_pairs(cfg)?,
        },
        test: test_pairs(cfg)?,
        noise,
    })
}

pub struct ArmOutcome {
    pub selection: SelectionState,
    pub log: Vec<LogRecord>,
    /// Best-dev checkpoint scored on the test pairs.
    pub best: MetricsReport,
    /// Final parameters scored on the test pairs.
    pub last: MetricsReport,
    /// Encoder holding the best-dev checkpoint.
    pub encoder: Encoder,
    pub noise: NoiseReport,
}

/// Trains one arm and scores it on the held-out test pairs.
pub fn run_arm(cfg: &RunConfig, on_log: &mut dyn FnMut(&LogRecord)) -> Result<ArmOutcome> {
    let prepared = prepare(cfg)?;
    run_prepared(cfg, &prepared, on_log)
}

pub fn run_prepared(cfg: &RunConfig, prepared: &Prepared, on_log: &mut dyn FnMut(&LogRecord)) -> Result<ArmOutcome> {
    let mut encoder = Encoder::new(cfg.encoder(), cfg.seed)?;
    let mut log = Vec::new();
    let selection = train(&mut encoder, &prepared.data, &cfg.train(), &mut |r| {
        on_log(r);
        log.push(r.clone());
    })?;
    let last = eval_sts(&encoder, &prepared.test, cfg.threshold())?;
    encoder.params_mut().restore(&selection.best_checkpoint)?;
    let best = eval_sts(&encoder, &prepared.test, cfg.threshold())?;
    Ok(ArmOutcome {
        selection,
        log,
        best,
        last,
        encoder,
        noise: prepared.noise.clone(),
    })
}

/// Test-set metrics of the untrained encoder for `cfg.seed`.
pub fn random_init_report(cfg: &RunConfig) -> Result<MetricsReport> {
    let encoder = Encoder::new(cfg.encoder(), cfg.seed)?;
    Ok(eval_sts(&encoder, &test_pairs(cfg)?, cfg.threshold())?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Noise,
    Subsample,
    Seeds,
    LossVariant,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Noise => "noise",
            Sweep::Subsample => "subsample",
            Sweep::Seeds => "seeds",
            Sweep::LossVariant => "loss_variant",
        }
    }

    pub fn x_label(self) -> &'static str {
        match self {
            Sweep::Noise => "noise level (deletion fraction)",
            Sweep::Subsample => "fraction of triplets",
            Sweep::Seeds => "seed",
            Sweep::LossVariant => "modal loss (0 = supcon, 1 = simclr)",
        }
    }
}

impl std::str::FromStr for Sweep {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "noise" => Ok(Sweep::Noise),
            "subsample" => Ok(Sweep::Subsample),
            "seeds" => Ok(Sweep::Seeds),
            "loss_variant" => Ok(Sweep::LossVariant),
            other => Err(CliError::Usage(format!(
                "unknown sweep {other:?}; expected noise, subsample, seeds or loss_variant"
            ))),
        }
    }
}

/// `(label, x, config)` for every grid point.
pub fn grid(cfg: &RunConfig, sweep: Sweep) -> Result<Vec<(String, f64, RunConfig)>> {
    let mut points = Vec::new();
    match sweep {
        Sweep::Noise => {
            for (d, i, s) in cfg.noise_levels()? {
                let mut c = cfg.clone();
                c.supervised_text = true;
                (c.noise_delete, c.noise_insert, c.noise_swap) = (d, i, s);
                points.push((format!("[{d},{i},{s}]"), d, c));
            }
        }
        Sweep::Subsample => {
            for f in cfg.subsample_levels()? {
                let mut c = cfg.clone();
                c.supervised_text = true;
                c.triplet_fraction = f;
                points.push((format!("{f}"), f, c));
            }
        }
        Sweep::Seeds => points.push(("seeds".into(), cfg.seed as f64, cfg.clone())),
        Sweep::LossVariant => {
            if cfg.modality == ModalityChoice::None {
                return Err(CliError::Config("the loss_variant sweep needs modality image or audio".into()));
            }
            for (x, v) in [(0.0, ModalLoss::SupCon), (1.0, ModalLoss::SimClr)] {
                let mut c = cfg.clone();
                c.modal_loss = v;
                points.push((if x == 0.0 { "supcon" } else { "simclr" }.into(), x, c));
            }
        }
    }
    Ok(points)
}

/// Runs every grid point over its seeds and hands each finished row to
/// `on_row` before starting the next one.
pub fn run_sweep(cfg: &RunConfig, sweep: Sweep, on_row: &mut dyn FnMut(&AblationRow) -> Result<()>) -> Result<Vec<AblationRow>> {
    let seeds: Vec<u64> = match sweep {
        Sweep::Seeds => (0..cfg.seed_count.max(2) as u64).map(|i| cfg.seed + i).collect(),
        _ => (0..cfg.sweep_seeds.max(1) as u64).map(|i| cfg.seed + i).collect(),
    };
    let mut rows = Vec::new();
    for (label, x, point) in grid(cfg, sweep)? {
        let prepared = prepare(&point)?;
        let mut row = AblationRow {
            sweep: sweep.name().into(),
            level: label,
            x,
            spearman: Vec::new(),
            alignment: Vec::new(),
            uniformity: Vec::new(),
        };
        for &seed in &seeds {
            let arm = RunConfig { seed, ..point.clone() };
            let out = run_prepared(&arm, &prepared, &mut |_| {})?;
            row.spearman.push(out.best.spearman);
            row.alignment.push(out.best.alignment);
            row.uniformity.push(out.best.uniformity_log);
        }
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> RunConfig {
        RunConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 16,
            ff_dim: 32,
            max_steps: 2,
            text_batch_size: 8,
            modal_batch_size: 8,
            validation_interval: 1,
            sentences_per_cluster: 10,
            images_per_class: 4,
            clips_per_class: 4,
            dev_pairs: 30,
            test_pairs: 30,
            ..RunConfig::default()
        }
    }

    #[test]
    fn grids_have_the_documented_shape() {
        let cfg = toy();
        let noise = grid(&cfg, Sweep::Noise).unwrap();
        assert_eq!(noise.len(), 4);
        assert!(noise.windows(2).all(|w| w[0].1 < w[1].1));
        assert_eq!(grid(&cfg, Sweep::Subsample).unwrap().len(), 3);
        assert!(grid(&cfg, Sweep::LossVariant).is_err());
        assert!("bogus".parse::<Sweep>().is_err());
        assert_eq!("loss-variant".parse::<Sweep>().unwrap(), Sweep::LossVariant);
    }

    #[test]
    fn seed_sweep_reports_spread() {
        let cfg = RunConfig { seed_count: 3, ..toy() };
        let mut seen = 0;
        let rows = run_sweep(&cfg, Sweep::Seeds, &mut |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!((rows.len(), seen), (1, 1));
        assert_eq!(rows[0].spearman.len(), 3);
        assert!(crate::report::table_row(&rows[0]).split('\t').all(|f| f != "NaN"));
    }

    #[test]
    fn supervised_preparation_applies_noise_and_subsampling() {
        let cfg = RunConfig {
            supervised_text: true,
            triplet_fraction: 0.5,
            noise_delete: 1.0,
            ..toy()
        };
        let p = prepare(&cfg).unwrap();
        let triplets = cfg.num_clusters * cfg.sentences_per_cluster;
        assert_eq!(p.data.text.len(), triplets / 2);
        // Deleting everything is clipped to one token in all three sentences.
        assert_eq!(p.noise.clipped, 3 * triplets);
        match &p.data.text {
            TextData::Supervised(t) => assert!(t.iter().all(|r| r.src.len() == 1)),
            _ => panic!("expected triplets"),
        }
    }
}
