//! Release gate: gradient checks, oracle comparisons, analytic identities,
//! shape contracts and a determinism run.

use std::fmt::Write as _;
use std::time::Instant;

use mmcse_core::autograd::{ParamId, ParamStore, Tape, Var};
use mmcse_core::encoder::{
    blockify_spectrogram, patchify_image, Encoder, EncoderConfig, Modality, PatchBatch, SpectrogramBatch,
    TokenBatch,
};
use mmcse_core::gradcheck::GradCheck;
use mmcse_core::losses::{self, values, LossValue, Reduction, DEFAULT_TAU_MODAL, DEFAULT_TAU_TEXT};
use mmcse_core::metrics;
use mmcse_core::rng::StreamKey;
use mmcse_core::training::ModalityChoice;
use mmcse_core::Tensor;

use crate::oracle::{self, Rows};
use crate::{experiment, formats, report::ReportFile, Result, RunConfig};

#[derive(Clone, Copy, Debug)]
pub struct SelftestOptions {
    /// Shifts every analytic gradient before comparison, to show the
    /// gradient checks can fail.
    pub perturb_gradient: bool,
    /// Random instances per oracle comparison and identity.
    pub instances: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            perturb_gradient: false,
            instances: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    /// Acceptance criterion the check belongs to.
    pub criterion: u8,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

const ORACLE_TOL: f64 = 1e-10;
const BRIDGE_TOL: f64 = 1e-9;
const GRAD_BATCH: usize = 8;
const GRAD_WIDTH: usize = 16;
const PERTURBATION: f64 = 1e-2;

/// Counter-based draws from one keyed stream.
struct Draws {
    key: StreamKey,
    n: u64,
}

impl Draws {
    fn new(label: &str) -> Self {
        Draws {
            key: StreamKey::root(42).child("selftest").child(label),
            n: 0,
        }
    }

    fn bits(&mut self) -> u64 {
        self.n += 1;
        self.key.at(self.n).value()
    }

    fn uniform(&mut self) -> f64 {
        (self.bits() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn below(&mut self, n: usize) -> usize {
        (self.bits() % n as u64) as usize
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn rows(&mut self, n: usize, h: usize) -> Rows {
        (0..n).map(|_| (0..h).map(|_| self.normal()).collect()).collect()
    }

    /// Labels over a few classes with at least two distinct values.
    fn labels(&mut self, n: usize) -> Vec<usize> {
        loop {
            let l: Vec<usize> = (0..n).map(|_| self.below(3)).collect();
            if l.iter().any(|&x| x != l[0]) {
                return l;
            }
        }
    }

    fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            p.swap(i, self.below(i + 1));
        }
        p
    }
}

fn tensor(rows: &Rows) -> Tensor {
    Tensor::from_rows(rows).expect("rectangular rows")
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of a loss value from per-anchor oracle terms, totals
/// included.
fn loss_gap(got: &LossValue, want: &[f64]) -> f64 {
    max_diff(&got.per_anchor, want).max((got.total - want.iter().sum::<f64>()).abs())
}

fn timed(name: &str, criterion: u8, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.into(),
        criterion,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn gradcheck(opts: &SelftestOptions) -> GradCheck {
    let mut g = GradCheck::new(1e-5, 1e-4);
    if opts.perturb_gradient {
        g.analytic_offset = PERTURBATION;
    }
    g
}

fn grad_verdict(report: mmcse_core::gradcheck::GradCheckReport) -> (bool, String) {
    let flagged: usize = report.params.iter().map(|p| p.flagged.len()).sum();
    (
        report.passed(),
        format!(
            "max rel err {:.2e} over {} params, {flagged} flagged",
            report.max_rel_error,
            report.params.len()
        ),
    )
}

fn loss_gradcheck<F>(opts: &SelftestOptions, label: &str, inputs: usize, loss: F) -> Result<(bool, String)>
where
    F: Fn(&mut Tape, &[Var]) -> mmcse_core::Result<Var>,
{
    let mut d = Draws::new(label);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = (0..inputs)
        .map(|k| store.add(format!("x{k}"), tensor(&d.rows(GRAD_BATCH, GRAD_WIDTH))))
        .collect::<mmcse_core::Result<_>>()?;
    let report = gradcheck(opts).run(&mut store, &ids, |tape, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        loss(tape, &vars)
    })?;
    Ok(grad_verdict(report))
}

/// Small enough that every parameter of the stack can be perturbed.
fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 8,
        ff_dim: 12,
        dropout_rate: 0.1,
        max_seq_len: 12,
        vocab_size: 24,
        image_size: (4, 4),
        patch_grid: (2, 2),
        spectrogram_frames: 4,
        spectrogram_bins: 4,
        audio_block: (2, 2),
        layer_norm_eps: 1e-5,
    }
}

fn encoder_gradcheck(opts: &SelftestOptions, modality: Modality) -> Result<(bool, String)> {
    let cfg = tiny_encoder_config();
    let mut enc = Encoder::new(cfg.clone(), 7)?;
    let mut d = Draws::new("encoder");
    let sentences: Vec<Vec<u32>> = (0..3)
        .map(|_| (0..d.range(3, 6)).map(|_| d.range(2, cfg.vocab_size - 1) as u32).collect())
        .collect();
    let pixels = Tensor::new(vec![3, 3, 4, 4], (0..144).map(|_| d.uniform()).collect())?;
    let frames = Tensor::new(vec![3, 4, 4], (0..48).map(|_| d.normal()).collect())?;
    let ids = enc.param_ids_for(modality);
    let report = gradcheck(opts).run(enc.params_mut(), &ids, |tape, store| {
        let enc = Encoder::from_params(cfg.clone(), store)?;
        let feats = match modality {
            Modality::Text => enc.embed_text(tape, &TokenBatch::from_sentences(&sentences)?)?,
            Modality::Image => enc.embed_image(tape, &PatchBatch { pixels: pixels.clone() })?,
            Modality::Audio => enc.embed_audio(tape, &SpectrogramBatch { frames: frames.clone() })?,
        };
        let (a, b) = enc.encode_twice(tape, &feats, 1, 2)?;
        let terms = match modality {
            Modality::Text => losses::text_unsup_loss(tape, a, b, DEFAULT_TAU_TEXT, Reduction::Sum)?,
            _ => losses::modal_supcon_loss(tape, a, b, &[0, 1, 0], DEFAULT_TAU_MODAL, Reduction::Sum)?,
        };
        Ok(terms.total)
    })?;
    Ok(grad_verdict(report))
}

fn gradient_checks(opts: &SelftestOptions, out: &mut Vec<CheckResult>) {
    let (tt, tm) = (DEFAULT_TAU_TEXT, DEFAULT_TAU_MODAL);
    out.push(timed("grad text unsupervised loss", 1, || {
        loss_gradcheck(opts, "g-unsup", 2, |t, v| Ok(losses::text_unsup_loss(t, v[0], v[1], tt, Reduction::Sum)?.total))
    }));
    out.push(timed("grad text supervised loss", 1, || {
        loss_gradcheck(opts, "g-sup", 3, |t, v| {
            Ok(losses::text_sup_loss(t, v[0], v[1], v[2], tt, Reduction::Sum)?.total)
        })
    }));
    for (modality, label) in [("image", "g-image"), ("audio", "g-audio")] {
        let labels = Draws::new(label).labels(GRAD_BATCH);
        out.push(timed(&format!("grad {modality} supcon loss"), 1, || {
            loss_gradcheck(opts, label, 2, |t, v| {
                Ok(losses::modal_supcon_loss(t, v[0], v[1], &labels, tm, Reduction::Sum)?.total)
            })
        }));
        out.push(timed(&format!("grad {modality} simclr loss"), 1, || {
            loss_gradcheck(opts, label, 2, |t, v| Ok(losses::modal_simclr_loss(t, v[0], v[1], tm, Reduction::Mean)?.total))
        }));
    }
    out.push(timed("grad combined multi-task loss", 1, || {
        let labels = Draws::new("g-combined").labels(GRAD_BATCH);
        loss_gradcheck(opts, "g-combined", 4, |t, v| {
            let lt = losses::text_unsup_loss(t, v[0], v[1], tt, Reduction::Sum)?;
            let lm = losses::modal_supcon_loss(t, v[2], v[3], &labels, tm, Reduction::Sum)?;
            losses::combine(t, lt.total, lm.total, 0.5)
        })
    }));
    for (modality, name) in [
        (Modality::Text, "grad encoder text path"),
        (Modality::Image, "grad encoder image path"),
        (Modality::Audio, "grad encoder audio path"),
    ] {
        out.push(timed(name, 1, || encoder_gradcheck(opts, modality)));
    }
}

/// Runs `instances` random comparisons and reports the worst gap.
fn compare(instances: usize, tol: f64, label: &str, mut one: impl FnMut(&mut Draws) -> Result<f64>) -> Result<(bool, String)> {
    let mut d = Draws::new(label);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let gap = one(&mut d)?;
        if !(gap <= tol) {
            return Ok((false, format!("gap {gap:.3e} exceeds {tol:e}")));
        }
        worst = worst.max(gap);
    }
    Ok((true, format!("{instances} instances, max gap {worst:.2e}")))
}

fn batch_dims(d: &mut Draws) -> (usize, usize) {
    (d.range(2, 8), d.range(2, 16))
}

fn oracle_checks(opts: &SelftestOptions, out: &mut Vec<CheckResult>) {
    let n = opts.instances;
    out.push(timed("oracle text unsupervised loss", 2, || {
        compare(n, ORACLE_TOL, "o-unsup", |d| {
            let (b, h) = batch_dims(d);
            let (x, y) = (d.rows(b, h), d.rows(b, h));
            let got = values::text_unsup(&tensor(&x), &tensor(&y), DEFAULT_TAU_TEXT)?;
            Ok(loss_gap(&got, &oracle::simclr(&x, &y, DEFAULT_TAU_TEXT)))
        })
    }));
    out.push(timed("oracle text supervised loss", 2, || {
        compare(n, ORACLE_TOL, "o-sup", |d| {
            let (b, h) = batch_dims(d);
            let (s, p, q) = (d.rows(b, h), d.rows(b, h), d.rows(b, h));
            let got = values::text_sup(&tensor(&s), &tensor(&p), &tensor(&q), DEFAULT_TAU_TEXT)?;
            Ok(loss_gap(&got, &oracle::text_sup(&s, &p, &q, DEFAULT_TAU_TEXT)))
        })
    }));
    out.push(timed("oracle modal supcon loss", 2, || {
        compare(n, ORACLE_TOL, "o-supcon", |d| {
            let (b, h) = batch_dims(d);
            let (x, y, l) = (d.rows(b, h), d.rows(b, h), d.labels(b));
            let got = values::modal_supcon(&tensor(&x), &tensor(&y), &l, DEFAULT_TAU_MODAL)?;
            Ok(loss_gap(&got, &oracle::supcon(&x, &y, &l, DEFAULT_TAU_MODAL)))
        })
    }));
    out.push(timed("oracle modal simclr loss", 2, || {
        compare(n, ORACLE_TOL, "o-simclr", |d| {
            let (b, h) = batch_dims(d);
            let (x, y) = (d.rows(b, h), d.rows(b, h));
            let got = values::modal_simclr(&tensor(&x), &tensor(&y), DEFAULT_TAU_MODAL)?;
            Ok(loss_gap(&got, &oracle::simclr(&x, &y, DEFAULT_TAU_MODAL)))
        })
    }));
    out.push(timed("oracle alignment", 2, || {
        compare(n, ORACLE_TOL, "o-align", |d| {
            let (b, h) = (d.range(1, 40), d.range(2, 16));
            let (x, y) = (d.rows(b, h), d.rows(b, h));
            Ok((metrics::alignment(&tensor(&x), &tensor(&y))? - oracle::alignment(&x, &y)).abs())
        })
    }));
    out.push(timed("oracle uniformity", 2, || {
        compare(n, ORACLE_TOL, "o-uniform", |d| {
            let (b, h) = (d.range(2, 40), d.range(2, 16));
            let x = d.rows(b, h);
            let got = metrics::uniformity(&tensor(&x))?;
            let (log, raw) = oracle::uniformity(&x);
            Ok((got.log - log).abs().max((got.raw - raw).abs()))
        })
    }));
    out.push(timed("oracle spearman", 2, || {
        compare(n, ORACLE_TOL, "o-spearman", |d| {
            let len = d.range(3, 60);
            // Every other instance uses a coarse grid so ties are common.
            let coarse = d.below(2) == 0;
            let draw = |d: &mut Draws| -> Vec<f64> {
                loop {
                    let v: Vec<f64> = (0..len)
                        .map(|_| if coarse { d.below(6) as f64 } else { d.normal() })
                        .collect();
                    if v.iter().any(|&x| x != v[0]) {
                        return v;
                    }
                }
            };
            let (x, y) = (draw(d), draw(d));
            Ok((metrics::spearman(&x, &y)? - oracle::spearman(&x, &y)).abs())
        })
    }));
    out.push(timed("oracle top-k retrieval", 2, || {
        compare(n, ORACLE_TOL, "o-topk", |d| {
            let (rows, h) = (d.range(1, 20), d.range(2, 8));
            let mut corpus = d.rows(rows, h);
            // Duplicate a few rows to force ties.
            for _ in 0..d.below(3) {
                let src = corpus[d.below(corpus.len())].clone();
                corpus.push(src);
            }
            let query = d.rows(1, h).remove(0);
            let k = d.range(1, corpus.len());
            let got = metrics::retrieve_topk(&query, &tensor(&corpus), k)?;
            let want = oracle::top_k(&query, &corpus, k);
            if got.iter().map(|g| g.0).ne(want.iter().map(|w| w.0)) {
                return Ok(f64::INFINITY);
            }
            Ok(got.iter().zip(&want).map(|(g, w)| (g.1 - w.1).abs()).fold(0.0, f64::max))
        })
    }));
}

fn bridge_check(opts: &SelftestOptions) -> Result<(bool, String)> {
    compare(opts.instances, BRIDGE_TOL, "bridge", |d| {
        let (b, h) = batch_dims(d);
        let (x, y) = (tensor(&d.rows(b, h)), tensor(&d.rows(b, h)));
        let labels = d.permutation(b);
        let sup = values::modal_supcon(&x, &y, &labels, DEFAULT_TAU_MODAL)?;
        let sim = values::modal_simclr(&x, &y, DEFAULT_TAU_MODAL)?;
        let bridged: Vec<f64> = sup.per_anchor.iter().map(|s| s.exp().ln_1p()).collect();
        Ok(max_diff(&sim.per_anchor, &bridged))
    })
}

type LossFn = fn(&[Tensor], &[usize]) -> mmcse_core::Result<LossValue>;

/// The four losses over a batch of three view matrices and labels; the
/// simclr-shaped ones ignore the third matrix.
const ALL_LOSSES: [(&str, LossFn); 4] = [
    ("text_unsup", |v, _| values::text_unsup(&v[0], &v[1], DEFAULT_TAU_TEXT)),
    ("text_sup", |v, _| values::text_sup(&v[0], &v[1], &v[2], DEFAULT_TAU_TEXT)),
    ("modal_supcon", |v, l| values::modal_supcon(&v[0], &v[1], l, DEFAULT_TAU_MODAL)),
    ("modal_simclr", |v, _| values::modal_simclr(&v[0], &v[1], DEFAULT_TAU_MODAL)),
];

fn analytic_checks(opts: &SelftestOptions, out: &mut Vec<CheckResult>) {
    out.push(timed("single-anchor simclr loss is zero", 4, || {
        let mut d = Draws::new("single");
        for _ in 0..opts.instances {
            let h = d.range(2, 16);
            let (x, y) = (tensor(&d.rows(1, h)), tensor(&d.rows(1, h)));
            let a = values::text_unsup(&x, &y, DEFAULT_TAU_TEXT)?.total;
            let b = values::modal_simclr(&x, &y, DEFAULT_TAU_MODAL)?.total;
            if a != 0.0 || b != 0.0 {
                return Ok((false, format!("got {a:e} and {b:e}")));
            }
        }
        Ok((true, format!("{} instances exactly 0", opts.instances)))
    }));
    out.push(timed("collapsed batch gives N ln N", 4, || {
        compare(opts.instances, 1e-9, "collapse", |d| {
            let (b, h) = batch_dims(d);
            let row = d.rows(1, h).remove(0);
            let x = tensor(&vec![row; b]);
            let want = b as f64 * (b as f64).ln();
            let a = values::text_unsup(&x, &x, DEFAULT_TAU_TEXT)?.total;
            let c = values::modal_simclr(&x, &x, DEFAULT_TAU_MODAL)?.total;
            Ok((a - want).abs().max((c - want).abs()))
        })
    }));
    out.push(timed("losses ignore positive row rescaling", 4, || {
        compare(opts.instances, 1e-10, "scale", |d| {
            let (b, h) = batch_dims(d);
            let views: Vec<Rows> = (0..3).map(|_| d.rows(b, h)).collect();
            let labels = d.labels(b);
            let scaled: Vec<Rows> = views
                .iter()
                .map(|v| {
                    v.iter()
                        .map(|r| {
                            let s = 10f64.powf(4.0 * d.uniform() - 2.0);
                            r.iter().map(|x| x * s).collect()
                        })
                        .collect()
                })
                .collect();
            let (p, q): (Vec<Tensor>, Vec<Tensor>) = (views.iter().map(tensor).collect(), scaled.iter().map(tensor).collect());
            let mut worst = 0.0f64;
            for (_, f) in ALL_LOSSES {
                let (u, v) = (f(&p, &labels)?, f(&q, &labels)?);
                worst = worst.max(max_diff(&u.per_anchor, &v.per_anchor)).max((u.total - v.total).abs());
            }
            Ok(worst)
        })
    }));
    out.push(timed("losses commute with batch permutation", 4, || {
        compare(opts.instances, 1e-12, "permute", |d| {
            let (b, h) = batch_dims(d);
            let views: Vec<Rows> = (0..3).map(|_| d.rows(b, h)).collect();
            let labels = d.labels(b);
            let perm = d.permutation(b);
            let moved: Vec<Rows> = views.iter().map(|v| perm.iter().map(|&i| v[i].clone()).collect()).collect();
            let moved_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let (p, q): (Vec<Tensor>, Vec<Tensor>) = (views.iter().map(tensor).collect(), moved.iter().map(tensor).collect());
            let mut worst = 0.0f64;
            for (_, f) in ALL_LOSSES {
                let (u, v) = (f(&p, &labels)?, f(&q, &moved_labels)?);
                let back: Vec<f64> = perm.iter().map(|&i| u.per_anchor[i]).collect();
                worst = worst.max(max_diff(&back, &v.per_anchor)).max((u.total - v.total).abs());
            }
            Ok(worst)
        })
    }));
}

/// The full-scale config expressed through run-config keys.
pub fn full_scale_run_config() -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("num_layers", "12"),
        ("num_heads", "12"),
        ("hidden_dim", "768"),
        ("ff_dim", "3072"),
        ("max_seq_len", "512"),
        ("vocab_size", "30522"),
        ("image_height", "224"),
        ("image_width", "224"),
        ("patch_rows", "14"),
        ("patch_cols", "14"),
        ("spectrogram_frames", "1024"),
        ("spectrogram_bins", "128"),
        ("audio_block_frames", "24"),
        ("audio_block_bins", "24"),
    ] {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn shape_checks(out: &mut Vec<CheckResult>) {
    out.push(timed("full-scale sequence lengths", 9, || {
        let from_keys = full_scale_run_config()?.encoder();
        from_keys.validate()?;
        let builtin = EncoderConfig::full_scale();
        let lens = [
            from_keys.image_seq_len()?,
            from_keys.audio_seq_len()?,
            builtin.image_seq_len()?,
            builtin.audio_seq_len()?,
        ];
        Ok((lens == [197, 211, 197, 211], format!("image {} audio {}", lens[0], lens[1])))
    }));
    out.push(timed("full-scale patch and block rows", 9, || {
        let cfg = EncoderConfig::full_scale();
        let patches = patchify_image(&cfg, &Tensor::zeros(&[1, 3, 224, 224]))?;
        let blocks = blockify_spectrogram(&cfg, &Tensor::zeros(&[1, 1024, 128]))?;
        Ok((
            patches.shape() == [196, 768] && blocks.shape() == [210, 576],
            format!("patches {:?}, blocks {:?}", patches.shape(), blocks.shape()),
        ))
    }));
}

/// A few-step multi-modal run small enough for the gate.
pub fn determinism_config() -> RunConfig {
    RunConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 8,
        ff_dim: 16,
        max_steps: 3,
        text_batch_size: 8,
        modal_batch_size: 6,
        validation_interval: 1,
        sentences_per_cluster: 6,
        audio_classes: 3,
        clips_per_class: 4,
        dev_pairs: 24,
        test_pairs: 24,
        modality: ModalityChoice::Audio,
        ..RunConfig::default()
    }
}

/// Log, parameters and report of one run, as bytes.
pub fn run_fingerprint(cfg: &RunConfig) -> Result<(String, Vec<u64>, String)> {
    let arm = experiment::run_arm(cfg, &mut |_| {})?;
    let params = arm
        .selection
        .best_checkpoint
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect();
    let report = ReportFile::new(arm.best, cfg.seed, arm.selection.best_step as u64, cfg.hash());
    Ok((formats::log_to_string(&arm.log), params, report.to_json()))
}

fn determinism_check() -> Result<(bool, String)> {
    let cfg = determinism_config();
    let first = run_fingerprint(&cfg)?;
    let second = run_fingerprint(&cfg)?;
    let same = [first.0 == second.0, first.1 == second.1, first.2 == second.2];
    Ok((
        same.iter().all(|&s| s),
        format!("log {} params {} report {}", same[0], same[1], same[2]),
    ))
}

pub fn run_selftest(opts: &SelftestOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    gradient_checks(opts, &mut out);
    oracle_checks(opts, &mut out);
    out.push(timed("supcon/simclr bridge identity", 3, || bridge_check(opts)));
    analytic_checks(opts, &mut out);
    shape_checks(&mut out);
    out.push(timed("repeat run is bit-identical", 5, determinism_check));
    out
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let _ = writeln!(
            s,
            "{}  c{:<2} {:<width$}  {:>7.3}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.criterion,
            r.name,
            r.seconds,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    let _ = writeln!(s, "{} checks, {failed} failed, {total:.2}s", results.len());
    s
}
