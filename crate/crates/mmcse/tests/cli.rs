use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mmcse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmcse"))
        .args(args)
        .env_remove("MMCSE_SEED")
        .env_remove("MMCSE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 16] = [
    "--num-layers", "1", "--hidden-dim", "16", "--ff-dim", "32", "--max-steps", "2", "--text-batch-size", "8",
    "--sentences-per-cluster", "10", "--dev-pairs", "30", "--test-pairs", "30",
];

#[test]
fn exit_codes() {
    assert_eq!(mmcse(&["--help"]).status.code(), Some(0));
    assert_eq!(mmcse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mmcse(&["train", "--no-such-key", "3"]).status.code(), Some(1));
    assert_eq!(mmcse(&["train", "--hidden-dim", "seven"]).status.code(), Some(1));
    let missing = mmcse(&["eval", "--checkpoint", "/definitely/missing.bin", "--dataset", "/missing.tsv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.bin"));
    assert_eq!(mmcse(&["ablate", "--sweep", "colour"]).status.code(), Some(1));
}

#[test]
fn golden_report_of_the_random_init_fixture() {
    let out = mmcse(&["eval", "--checkpoint", s(&fixture("random_init.ckpt")), "--dataset", s(&fixture("sts.tsv"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = std::fs::read(fixture("golden_report.json")).unwrap();
    assert_eq!(out.stdout, golden);
    let again = mmcse(&["eval", "--checkpoint", s(&fixture("random_init.ckpt")), "--dataset", s(&fixture("sts.tsv"))]);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn checkpoint_version_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(fixture("random_init.ckpt")).unwrap();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    let path = tmp.path().join("future.ckpt");
    std::fs::write(&path, bytes).unwrap();
    let out = mmcse(&["eval", "--checkpoint", s(&path), "--dataset", s(&fixture("sts.tsv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
}

#[test]
fn perturbed_selftest_fails_with_code_2() {
    let out = mmcse(&["selftest", "--perturb-gradient"]);
    assert_eq!(out.status.code(), Some(2));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().any(|l| l.starts_with("FAIL") && l.contains("grad")));
    assert!(table.lines().any(|l| l.starts_with("PASS") && l.contains("oracle")));
}

#[test]
fn retrieve_ranks_the_query_first() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus.tsv");
    let mut args = vec!["gen-data", "--kind", "sentences", "--out", s(&corpus)];
    args.extend(["--sentences-per-cluster", "5"]);
    assert_eq!(mmcse(&args).status.code(), Some(0));
    let text = std::fs::read_to_string(&corpus).unwrap();
    let query = text.lines().nth(13).unwrap().split('\t').nth(1).unwrap().to_string();

    let ckpt = fixture("random_init.ckpt");
    let out = mmcse(&["retrieve", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--query", &query]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], format!("1\t1.0000\t{query}"));
    for (i, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f[0], (i + 1).to_string());
        assert_eq!(f[1].split('.').nth(1).map(str::len), Some(4));
    }
    let too_many = mmcse(&["retrieve", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--query", &query, "-k", &(text.lines().count()).to_string()]);
    assert_eq!(too_many.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts_and_reruns_from_its_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let mut args = vec!["train", "--modality", "image", "--images-per-class", "4", "--out-dir", s(&dir)];
    args.extend(TINY);
    let out = mmcse(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "checkpoint.bin", "train_log.tsv", "metrics.json", "train_loss.svg", "dev_spearman.svg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.join("train_log.tsv")).unwrap();
    assert!(log.contains("\tmodal_image\t"));
    let first = std::fs::read(dir.join("checkpoint.bin")).unwrap();

    // Re-running from the written config reproduces the run.
    let config = tmp.path().join("saved.conf");
    std::fs::copy(dir.join("config.txt"), &config).unwrap();
    let again = mmcse(&["train", "--config", s(&config)]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("checkpoint.bin")).unwrap(), first);
    assert_eq!(std::fs::read_to_string(dir.join("train_log.tsv")).unwrap(), log);
}

#[test]
fn numerical_blow_up_exits_2_and_keeps_the_partial_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let mut args = vec!["train", "--text-lr", "1e300", "--out-dir", s(&dir)];
    args.extend(TINY);
    args.extend(["--max-steps", "20"]);
    let out = mmcse(&args);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.join("train_log.tsv")).unwrap();
    assert!(log.lines().count() > 1);
    assert!(!dir.join("checkpoint.bin").exists());
}

fn table_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn ablation_tables_have_the_documented_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("abl");
    for (sweep, rows) in [("noise", 4), ("subsample", 3), ("seeds", 1)] {
        let mut args = vec!["ablate", "--sweep", sweep, "--out-dir", s(&dir), "--seed-count", "5"];
        args.extend(TINY);
        let out = mmcse(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let table = dir.join(format!("ablation_{sweep}.tsv"));
        let t = table_rows(&table);
        assert_eq!(t.len(), rows, "{sweep}");
        assert!(dir.join(format!("ablation_{sweep}.svg")).exists());
        let xs: Vec<f64> = t.iter().map(|r| r[2].parse().unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "{sweep}: {xs:?}");
        if sweep == "seeds" {
            assert_eq!(t[0][3], "5");
            // spearman_mean and spearman_std
            assert!(t[0][4].parse::<f64>().unwrap().is_finite());
            assert!(t[0][5].parse::<f64>().unwrap().is_finite());
        }
    }
}
