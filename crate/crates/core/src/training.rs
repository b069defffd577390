//! The alternating multi-task loop: one text step then one modal step per
//! iteration, each with its own AdamW, plus dev-set model selection.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{ParamStore, Tape, Var};
use crate::data::{
    augment_image, batch_streams, AugmentConfig, LabeledClip, LabeledImage, TripletRecord,
};
use crate::encoder::{Encoder, Mode, Modality, PatchBatch, SpectrogramBatch, TokenBatch};
use crate::losses::{self, LossConfig, ModalLoss};
use crate::metrics::{eval_sts, PositiveThreshold, ScoredPair};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::{fnv1a, StreamKey};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ModalityChoice {
    Image,
    Audio,
    None,
}

/// How the two losses update the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum UpdateMode {
    /// Text step then modal step, each with its own optimizer.
    Alternating,
    /// One step on `text + ω · modal` with a single optimizer at `text_lr`.
    Summed,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub max_steps: usize,
    pub text_batch_size: usize,
    pub modal_batch_size: usize,
    pub text_lr: f64,
    pub modal_lr: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Validate every this many steps (and after the last one); 0 validates
    /// only at the start and the end.
    pub validation_interval: usize,
    pub supervised_text: bool,
    pub modality: ModalityChoice,
    pub update: UpdateMode,
    /// Global gradient-norm bound per optimizer; off when `None`.
    pub grad_clip: Option<f64>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 1000,
            text_batch_size: 64,
            modal_batch_size: 48,
            text_lr: 3e-4,
            modal_lr: 3e-5,
            weight_decay: 0.01,
            loss: LossConfig::default(),
            seed: 42,
            validation_interval: 100,
            supervised_text: false,
            modality: ModalityChoice::None,
            update: UpdateMode::Alternating,
            grad_clip: None,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.text_batch_size == 0 || self.modal_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.text_lr > 0.0 && self.modal_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.text_batch_size < 2 && !self.supervised_text {
            // A single sentence has no in-batch negatives.
            return Err(Error::Config("unsupervised text batches need at least 2 sentences".into()));
        }
        self.augment.validate()?;
        self.loss.validate()
    }

    fn optimizer(&self, lr: f64) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::new(lr)
        }
    }
}

/// Steps needed to see `dataset_len` examples once.
pub fn steps_per_epoch(dataset_len: usize, batch_size: usize) -> usize {
    dataset_len.div_ceil(batch_size.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub enum TextData {
    Unsupervised(Vec<Vec<u32>>),
    Supervised(Vec<TripletRecord>),
}

impl TextData {
    pub fn len(&self) -> usize {
        match self {
            TextData::Unsupervised(s) => s.len(),
            TextData::Supervised(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> TextBatch<'_> {
        match self {
            TextData::Unsupervised(s) => TextBatch::Unsupervised(idx.iter().map(|&i| s[i].as_slice()).collect()),
            TextData::Supervised(t) => TextBatch::Supervised(idx.iter().map(|&i| &t[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModalData {
    None,
    Images(Vec<LabeledImage>),
    Audio(Vec<LabeledClip>),
}

impl ModalData {
    pub fn len(&self) -> usize {
        match self {
            ModalData::None => 0,
            ModalData::Images(v) => v.len(),
            ModalData::Audio(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Option<ModalBatch<'_>> {
        match self {
            ModalData::None => None,
            ModalData::Images(v) => Some(ModalBatch::Images(idx.iter().map(|&i| &v[i]).collect())),
            ModalData::Audio(v) => Some(ModalBatch::Audio(idx.iter().map(|&i| &v[i]).collect())),
        }
    }
}

#[derive(Clone, Debug)]
pub enum TextBatch<'a> {
    Unsupervised(Vec<&'a [u32]>),
    Supervised(Vec<&'a TripletRecord>),
}

#[derive(Clone, Debug)]
pub enum ModalBatch<'a> {
    Images(Vec<&'a LabeledImage>),
    Audio(Vec<&'a LabeledClip>),
}

impl ModalBatch<'_> {
    pub fn labels(&self) -> Vec<usize> {
        match self {
            ModalBatch::Images(v) => v.iter().map(|x| x.label).collect(),
            ModalBatch::Audio(v) => v.iter().map(|x| x.label).collect(),
        }
    }
}

/// What one optimizer step saw: the reduced loss and the representations it
/// was computed from (before the update).
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub representations: Vec<Tensor>,
}

fn seed_of(key: StreamKey, label: &str) -> u64 {
    key.child(label).value()
}

fn clip_gradients(store: &mut ParamStore, opt: &AdamW, max_norm: f64) -> Result<()> {
    let owned: Vec<_> = opt.param_ids().iter().copied().filter(|&id| store.get(id).has_grad()).collect();
    let sq: f64 = owned
        .iter()
        .map(|&id| store.get(id).grad().data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        for id in owned {
            let g = store.get(id).grad();
            let scaled = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| x * s).collect())?;
            store.set_grad(id, scaled)?;
        }
    }
    Ok(())
}

fn apply(encoder: &mut Encoder, tape: &Tape, loss: Var, opt: &mut AdamW, clip: Option<f64>) -> Result<()> {
    let grads = tape.backward(loss)?;
    let store = encoder.params_mut();
    store.accumulate(&grads);
    if let Some(c) = clip {
        clip_gradients(store, opt, c)?;
    }
    opt.step(store)
}

fn text_loss(encoder: &Encoder, tape: &mut Tape, batch: &TextBatch<'_>, cfg: &TrainConfig, key: StreamKey) -> Result<(Var, Vec<Var>)> {
    let lc = &cfg.loss;
    match batch {
        TextBatch::Unsupervised(sentences) => {
            let tokens = TokenBatch::from_sentences(sentences)?;
            let feats = encoder.embed_text(tape, &tokens)?;
            let (a, b) = encoder.encode_twice(tape, &feats, seed_of(key, "view-a"), seed_of(key, "view-b"))?;
            Ok((losses::text_unsup_loss(tape, a, b, lc.tau_text, lc.reduction)?.total, [a, b].to_vec()))
        }
        TextBatch::Supervised(triplets) => {
            let mut views = Vec::with_capacity(3);
            for (role, pick) in [
                ("src", (|t: &TripletRecord| t.src.as_slice()) as fn(&TripletRecord) -> &[u32]),
                ("pos", |t| t.pos.as_slice()),
                ("neg", |t| t.neg.as_slice()),
            ] {
                let sentences: Vec<&[u32]> = triplets.iter().map(|t| pick(t)).collect();
                let tokens = TokenBatch::from_sentences(&sentences)?;
                let feats = encoder.embed_text(tape, &tokens)?;
                let mode = Mode::Train { dropout_seed: seed_of(key, role) };
                views.push(encoder.encode(tape, &feats, mode)?);
            }
            let t = losses::text_sup_loss(tape, views[0], views[1], views[2], lc.tau_text, lc.reduction)?;
            Ok((t.total, views))
        }
    }
}

/// Unweighted modal loss and its two views.
fn modal_loss(encoder: &Encoder, tape: &mut Tape, batch: &ModalBatch<'_>, cfg: &TrainConfig, key: StreamKey) -> Result<(Var, Vec<Var>)> {
    let (a, b) = match batch {
        ModalBatch::Images(images) => {
            let mut views = Vec::with_capacity(2);
            for label in ["view-a", "view-b"] {
                let vk = key.child(label);
                let aug = images
                    .iter()
                    .enumerate()
                    .map(|(i, im)| augment_image(im, &cfg.augment, vk.child("augment").at(i as u64).value()))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&LabeledImage> = aug.iter().collect();
                let feats = encoder.embed_image(tape, &PatchBatch::from_images(&refs)?)?;
                let mode = Mode::Train { dropout_seed: seed_of(vk, "dropout") };
                views.push(encoder.encode(tape, &feats, mode)?);
            }
            (views[0], views[1])
        }
        ModalBatch::Audio(clips) => {
            let feats = encoder.embed_audio(tape, &SpectrogramBatch::from_clips(clips)?)?;
            encoder.encode_twice(tape, &feats, seed_of(key, "view-a"), seed_of(key, "view-b"))?
        }
    };
    let lc = &cfg.loss;
    let terms = match lc.modal_variant {
        ModalLoss::SupCon => losses::modal_supcon_loss(tape, a, b, &batch.labels(), lc.tau_modal, lc.reduction)?,
        ModalLoss::SimClr => losses::modal_simclr_loss(tape, a, b, lc.tau_modal, lc.reduction)?,
    };
    Ok((terms.total, [a, b].to_vec()))
}

fn output(tape: &Tape, loss: Var, reps: &[Var]) -> StepOutput {
    StepOutput {
        loss: tape.scalar(loss),
        representations: reps.iter().map(|&v| tape.value(v).clone()).collect(),
    }
}

/// Two dropout views (unsupervised) or one view each of source, entailment
/// and contradiction (supervised), then one text-optimizer update.
pub fn train_text_step(
    encoder: &mut Encoder,
    batch: &TextBatch<'_>,
    opt: &mut AdamW,
    cfg: &TrainConfig,
    key: StreamKey,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let (loss, reps) = text_loss(encoder, &mut tape, batch, cfg, key)?;
    let out = output(&tape, loss, &reps);
    if out.loss.is_finite() {
        apply(encoder, &tape, loss, opt, cfg.grad_clip)?;
    }
    Ok(out)
}

/// Two augmented views per image (or two dropout passes per spectrogram),
/// the configured modal loss scaled by ω, then one modal-optimizer update.
/// With ω = 0 nothing is computed and the parameters stay untouched.
pub fn train_modal_step(
    encoder: &mut Encoder,
    batch: &ModalBatch<'_>,
    opt: &mut AdamW,
    cfg: &TrainConfig,
    key: StreamKey,
) -> Result<Option<StepOutput>> {
    let omega = cfg.loss.omega_modal;
    if omega == 0.0 {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let (loss, reps) = modal_loss(encoder, &mut tape, batch, cfg, key)?;
    let weighted = tape.scale(loss, omega);
    let out = output(&tape, loss, &reps);
    if out.loss.is_finite() {
        apply(encoder, &tape, weighted, opt, cfg.grad_clip)?;
    }
    Ok(Some(out))
}

/// One backward pass through `text + ω · modal` and a single update of every
/// parameter either path reaches. Returns the two unweighted losses.
pub fn train_summed_step(
    encoder: &mut Encoder,
    text: &TextBatch<'_>,
    modal: Option<&ModalBatch<'_>>,
    opt: &mut AdamW,
    cfg: &TrainConfig,
    keys: (StreamKey, StreamKey),
) -> Result<(StepOutput, Option<StepOutput>)> {
    let mut tape = Tape::new();
    let (lt, rt) = text_loss(encoder, &mut tape, text, cfg, keys.0)?;
    let text_out = output(&tape, lt, &rt);
    let (total, modal_out) = match modal {
        Some(batch) => {
            let (lm, rm) = modal_loss(encoder, &mut tape, batch, cfg, keys.1)?;
            let out = output(&tape, lm, &rm);
            (losses::combine(&mut tape, lt, lm, cfg.loss.omega_modal)?, Some(out))
        }
        None => (lt, None),
    };
    if tape.scalar(total).is_finite() {
        let grads = tape.backward(total)?;
        let store = encoder.params_mut();
        store.accumulate(&grads);
        if let Some(c) = cfg.grad_clip {
            clip_gradients(store, opt, c)?;
        }
        opt.step(store)?;
    }
    Ok((text_out, modal_out))
}

/// Best-so-far dev score with its parameter snapshot.
#[derive(Clone, Debug)]
pub struct SelectionState {
    pub best_validation_score: f64,
    pub best_step: usize,
    pub best_checkpoint: Vec<Tensor>,
    pub history: Vec<(usize, f64)>,
}

impl SelectionState {
    fn observe(&mut self, step: usize, score: f64, store: &ParamStore) -> bool {
        self.history.push((step, score));
        let better = score > self.best_validation_score;
        if better {
            self.best_validation_score = score;
            self.best_step = step;
            self.best_checkpoint = store.snapshot();
        }
        better
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LogRecord {
    Loss { step: usize, name: &'static str, value: f64 },
    Validation { step: usize, spearman: f64, selected: bool },
}

/// Everything a run reads besides the config.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub text: TextData,
    pub modal: ModalData,
    pub dev: Vec<ScoredPair>,
}

fn batch_hash(indices: &[usize]) -> u64 {
    let bytes: Vec<u8> = indices.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
    fnv1a(&bytes)
}

fn overflow(e: Error, abort: impl FnOnce() -> Error) -> Error {
    match e {
        Error::DegenerateInput(_) => abort(),
        e => e,
    }
}

fn finite_params(store: &ParamStore, opt: &AdamW) -> bool {
    opt.param_ids().iter().all(|&id| store.get(id).value().is_finite())
}

fn dev_score(encoder: &Encoder, dev: &[ScoredPair]) -> Result<f64> {
    Ok(eval_sts(encoder, dev, PositiveThreshold::default())?.spearman)
}

/// Runs `cfg.max_steps` iterations. The encoder keeps its final parameters;
/// the best dev checkpoint is returned in the selection state.
pub fn train(
    encoder: &mut Encoder,
    data: &TrainData,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<SelectionState> {
    cfg.validate()?;
    let text_name = if cfg.supervised_text { "text_sup" } else { "text_unsup" };
    match (cfg.supervised_text, &data.text) {
        (true, TextData::Supervised(_)) | (false, TextData::Unsupervised(_)) => {}
        _ => return Err(Error::Config("text data does not match supervised_text".into())),
    }
    let modality = match (cfg.modality, &data.modal) {
        (ModalityChoice::None, _) => None,
        (ModalityChoice::Image, ModalData::Images(v)) if !v.is_empty() => Some(Modality::Image),
        (ModalityChoice::Audio, ModalData::Audio(v)) if !v.is_empty() => Some(Modality::Audio),
        (m, _) => return Err(Error::Config(format!("no {m:?} data for the modal arm"))),
    };
    let modal_name = match cfg.modality {
        ModalityChoice::Image => "modal_image",
        _ => "modal_audio",
    };

    let store = encoder.params();
    let summed = cfg.update == UpdateMode::Summed;
    let text_ids = if summed {
        let mut ids = encoder.param_ids_for(Modality::Text);
        if let Some(m) = modality {
            ids.extend(encoder.front_end_param_ids(m));
        }
        ids
    } else {
        encoder.param_ids_for(Modality::Text)
    };
    let mut opt_text = AdamW::new(cfg.optimizer(cfg.text_lr), store, text_ids);
    let mut opt_modal = match (summed, modality) {
        (false, Some(m)) => Some(AdamW::new(cfg.optimizer(cfg.modal_lr), store, encoder.param_ids_for(m))),
        _ => None,
    };
    let mut streams = batch_streams(
        data.text.len(),
        cfg.text_batch_size,
        modality.map(|_| (data.modal.len(), cfg.modal_batch_size)),
        cfg.seed,
    )?;

    let initial = dev_score(encoder, &data.dev)?;
    let mut state = SelectionState {
        best_validation_score: initial,
        best_step: 0,
        best_checkpoint: encoder.params().snapshot(),
        history: [(0, initial)].to_vec(),
    };
    log(&LogRecord::Validation { step: 0, spearman: initial, selected: true });

    let root = StreamKey::root(cfg.seed);
    let abort = |step, name, lr, idx: &[usize]| Error::NumericalAbort {
        step,
        loss_name: name,
        lr,
        batch_hash: batch_hash(idx),
    };
    for step in 1..=cfg.max_steps {
        let (text_idx, modal_idx) = streams.next();
        let text_key = root.child("text-step").at(step as u64);
        let modal_key = root.child("modal-step").at(step as u64);
        let text_batch = data.text.batch(&text_idx);
        let modal_batch = modal_idx.as_ref().and_then(|idx| data.modal.batch(idx));

        // Overflowing weights surface as non-finite norms inside the forward
        // pass or as non-finite parameters after an update.
        let modal_lr = if summed { cfg.text_lr } else { cfg.modal_lr };
        let modal_slice = modal_idx.as_deref().unwrap_or(&[]);
        let text_abort = || abort(step, text_name, cfg.text_lr, &text_idx);
        let (text_out, modal_out) = if summed {
            train_summed_step(encoder, &text_batch, modal_batch.as_ref(), &mut opt_text, cfg, (text_key, modal_key))
                .map_err(|e| overflow(e, text_abort))?
        } else {
            let t = train_text_step(encoder, &text_batch, &mut opt_text, cfg, text_key)
                .map_err(|e| overflow(e, text_abort))?;
            if !finite_params(encoder.params(), &opt_text) {
                return Err(text_abort());
            }
            let m = match (opt_modal.as_mut(), modal_batch.as_ref()) {
                (Some(opt), Some(batch)) => train_modal_step(encoder, batch, opt, cfg, modal_key)
                    .map_err(|e| overflow(e, || abort(step, modal_name, modal_lr, modal_slice)))?,
                _ => None,
            };
            (t, m)
        };
        if !text_out.loss.is_finite() || !finite_params(encoder.params(), &opt_text) {
            return Err(text_abort());
        }
        log(&LogRecord::Loss { step, name: text_name, value: text_out.loss });
        if let Some(out) = modal_out {
            let params_ok = opt_modal.as_ref().map_or(true, |o| finite_params(encoder.params(), o));
            if !out.loss.is_finite() || !params_ok {
                return Err(abort(step, modal_name, modal_lr, modal_slice));
            }
            log(&LogRecord::Loss { step, name: modal_name, value: out.loss });
        }

        let due = cfg.validation_interval > 0 && step % cfg.validation_interval == 0;
        if due || step == cfg.max_steps {
            let score = dev_score(encoder, &data.dev).map_err(|e| overflow(e, text_abort))?;
            let selected = state.observe(step, score, encoder.params());
            log(&LogRecord::Validation { step, spearman: score, selected });
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        gen_audio, gen_images, gen_sts_pairs, gen_text, gen_triplets, AudioSpec, CorpusSpec, ImageSpec,
    };
    use crate::encoder::EncoderConfig;
    use crate::losses::values;
    use alloc::vec;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 16,
            ff_dim: 32,
            image_size: (8, 8),
            patch_grid: (2, 2),
            spectrogram_frames: 8,
            spectrogram_bins: 8,
            audio_block: (4, 4),
            ..EncoderConfig::desk()
        }
    }

    fn corpus() -> CorpusSpec {
        CorpusSpec {
            num_clusters: 4,
            sentences_per_cluster: 20,
            ..CorpusSpec::default()
        }
    }

    fn data(modality: ModalityChoice, supervised: bool) -> TrainData {
        let sentences = gen_text(&corpus()).unwrap();
        let text = if supervised {
            TextData::Supervised(gen_triplets(&sentences, 1).unwrap())
        } else {
            TextData::Unsupervised(sentences.into_iter().map(|s| s.tokens).collect())
        };
        let modal = match modality {
            ModalityChoice::None => ModalData::None,
            ModalityChoice::Image => ModalData::Images(
                gen_images(&ImageSpec { num_classes: 4, per_class: 8, height: 8, width: 8, ..ImageSpec::default() }).unwrap(),
            ),
            ModalityChoice::Audio => ModalData::Audio(
                gen_audio(&AudioSpec { num_classes: 4, per_class: 8, frames: 8, bins: 8, ..AudioSpec::default() }).unwrap(),
            ),
        };
        TrainData { text, modal, dev: gen_sts_pairs(&corpus(), 40, 0.5, 7).unwrap() }
    }

    fn cfg(steps: usize, modality: ModalityChoice) -> TrainConfig {
        TrainConfig {
            max_steps: steps,
            text_batch_size: 8,
            modal_batch_size: 8,
            validation_interval: 2,
            modality,
            ..TrainConfig::default()
        }
    }

    fn run(c: &TrainConfig, d: &TrainData) -> (Vec<LogRecord>, Vec<Tensor>, SelectionState) {
        let mut enc = Encoder::new(tiny_encoder(), 42).unwrap();
        let mut logs = Vec::new();
        let state = train(&mut enc, d, c, &mut |r| logs.push(r.clone())).unwrap();
        (logs, enc.params().snapshot(), state)
    }

    #[test]
    fn runs_are_bit_identical() {
        for m in [ModalityChoice::Image, ModalityChoice::Audio] {
            let d = data(m, false);
            let c = cfg(3, m);
            let (la, pa, _) = run(&c, &d);
            let (lb, pb, _) = run(&c, &d);
            assert_eq!(la, lb);
            assert_eq!(pa, pb);
            assert!(la.iter().any(|r| matches!(r, LogRecord::Loss { name: "modal_image" | "modal_audio", .. })));
        }
    }

    #[test]
    fn zero_omega_matches_text_only() {
        let mut c = cfg(3, ModalityChoice::Image);
        c.loss.omega_modal = 0.0;
        let (_, with_modal, _) = run(&c, &data(ModalityChoice::Image, false));
        let (_, text_only, _) = run(&cfg(3, ModalityChoice::None), &data(ModalityChoice::None, false));
        assert_eq!(with_modal, text_only);
    }

    #[test]
    fn zero_steps_keeps_initial_checkpoint() {
        let d = data(ModalityChoice::None, false);
        let (logs, params, state) = run(&cfg(0, ModalityChoice::None), &d);
        assert_eq!(state.best_checkpoint, params);
        assert_eq!(state.history.len(), 1);
        assert_eq!(logs.len(), 1);
        let fresh = Encoder::new(tiny_encoder(), 42).unwrap();
        assert_eq!(state.best_validation_score, dev_score(&fresh, &d.dev).unwrap());
    }

    #[test]
    fn best_score_is_max_of_history() {
        let (_, _, state) = run(&cfg(6, ModalityChoice::None), &data(ModalityChoice::None, false));
        let max = state.history.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(state.best_validation_score, max);
        assert_eq!(state.history.len(), 4);
    }

    #[test]
    fn text_step_loss_matches_oracle_values() {
        let d = data(ModalityChoice::None, true);
        let c = TrainConfig { supervised_text: true, ..cfg(1, ModalityChoice::None) };
        let mut enc = Encoder::new(tiny_encoder(), 1).unwrap();
        let mut opt = AdamW::new(c.optimizer(c.text_lr), enc.params(), enc.param_ids_for(Modality::Text));
        let out = train_text_step(&mut enc, &d.text.batch(&[0, 5, 30, 60]), &mut opt, &c, StreamKey::root(3)).unwrap();
        let r = &out.representations;
        let oracle = values::text_sup(&r[0], &r[1], &r[2], c.loss.tau_text).unwrap();
        assert!((oracle.total - out.loss).abs() < 1e-10);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn modal_step_bridge_identity() {
        let d = data(ModalityChoice::Audio, false);
        let mut c = cfg(1, ModalityChoice::Audio);
        let batch = d.modal.batch(&[0, 8, 16, 24]).unwrap();
        let mut enc = Encoder::new(tiny_encoder(), 1).unwrap();
        let mut opt = AdamW::new(c.optimizer(c.modal_lr), enc.params(), enc.param_ids_for(Modality::Audio));
        let sup = train_modal_step(&mut enc.clone(), &batch, &mut opt.clone(), &c, StreamKey::root(3)).unwrap().unwrap();
        c.loss.modal_variant = ModalLoss::SimClr;
        let sim = train_modal_step(&mut enc, &batch, &mut opt, &c, StreamKey::root(3)).unwrap().unwrap();
        let r = &sup.representations;
        assert_eq!(r, &sim.representations);
        let a = values::modal_supcon(&r[0], &r[1], &batch.labels(), c.loss.tau_modal).unwrap();
        let b = values::modal_simclr(&r[0], &r[1], c.loss.tau_modal).unwrap();
        for (s, m) in a.per_anchor.iter().zip(&b.per_anchor) {
            assert!((libm::log1p(libm::exp(*s)) - m).abs() < 1e-9);
        }
        assert!((a.total - sup.loss).abs() < 1e-10);
    }

    #[test]
    fn modal_step_with_zero_omega_is_a_no_op() {
        let d = data(ModalityChoice::Image, false);
        let mut c = cfg(1, ModalityChoice::Image);
        c.loss.omega_modal = 0.0;
        let mut enc = Encoder::new(tiny_encoder(), 1).unwrap();
        let before = enc.params().snapshot();
        let mut opt = AdamW::new(c.optimizer(c.modal_lr), enc.params(), enc.param_ids_for(Modality::Image));
        let out = train_modal_step(&mut enc, &d.modal.batch(&[0, 9]).unwrap(), &mut opt, &c, StreamKey::root(1)).unwrap();
        assert!(out.is_none());
        assert_eq!(enc.params().snapshot(), before);
    }

    #[test]
    fn same_label_batch_reports_labels() {
        let d = data(ModalityChoice::Image, false);
        let c = cfg(1, ModalityChoice::Image);
        let mut enc = Encoder::new(tiny_encoder(), 1).unwrap();
        let mut opt = AdamW::new(c.optimizer(c.modal_lr), enc.params(), enc.param_ids_for(Modality::Image));
        let err = train_modal_step(&mut enc, &d.modal.batch(&[0, 1, 2]).unwrap(), &mut opt, &c, StreamKey::root(1)).unwrap_err();
        assert!(matches!(err, Error::EmptyDenominator { ref labels, .. } if labels == &vec![0, 0, 0]));
    }

    #[test]
    fn text_loss_decreases() {
        let d = data(ModalityChoice::None, false);
        let c = TrainConfig { text_lr: 1e-3, ..cfg(40, ModalityChoice::None) };
        let (logs, _, _) = run(&c, &d);
        let losses: Vec<f64> = logs
            .iter()
            .filter_map(|r| match r {
                LogRecord::Loss { value, .. } => Some(*value),
                _ => None,
            })
            .collect();
        let head: f64 = losses[..5].iter().sum();
        let tail: f64 = losses[losses.len() - 5..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn clipping_bounds_the_update() {
        let d = data(ModalityChoice::None, false);
        let c = TrainConfig { grad_clip: Some(1e-6), ..cfg(2, ModalityChoice::None) };
        let (_, clipped, _) = run(&c, &d);
        let (_, free, _) = run(&cfg(2, ModalityChoice::None), &d);
        assert_ne!(clipped, free);
    }

    #[test]
    fn summed_mode_runs_and_is_deterministic() {
        let d = data(ModalityChoice::Image, false);
        let c = TrainConfig { update: UpdateMode::Summed, ..cfg(2, ModalityChoice::Image) };
        let (la, pa, _) = run(&c, &d);
        let (lb, pb, _) = run(&c, &d);
        assert_eq!((la.clone(), pa.clone()), (lb, pb));
        let (_, alt, _) = run(&cfg(2, ModalityChoice::Image), &d);
        assert_ne!(pa, alt);
        assert_eq!(la.iter().filter(|r| matches!(r, LogRecord::Loss { .. })).count(), 4);
    }

    #[test]
    fn summed_gradient_is_weighted_sum() {
        // One summed step with ω = 0 equals a text step with the same key
        // when the optimizer only owns text-path parameters.
        let d = data(ModalityChoice::Audio, false);
        let mut c = cfg(1, ModalityChoice::Audio);
        c.loss.omega_modal = 0.0;
        let enc0 = Encoder::new(tiny_encoder(), 5).unwrap();
        let ids = enc0.param_ids_for(Modality::Text);
        let text = d.text.batch(&[0, 21, 42, 63]);
        let modal = d.modal.batch(&[0, 8, 16]).unwrap();
        let key = StreamKey::root(9);

        let mut a = enc0.clone();
        let mut opt = AdamW::new(c.optimizer(c.text_lr), a.params(), ids.clone());
        train_summed_step(&mut a, &text, Some(&modal), &mut opt, &c, (key, key.child("m"))).unwrap();
        let mut b = enc0.clone();
        let mut opt = AdamW::new(c.optimizer(c.text_lr), b.params(), ids);
        train_text_step(&mut b, &text, &mut opt, &c, key).unwrap();
        for id in a.params().ids() {
            let (x, y) = (a.params().get(id).value(), b.params().get(id).value());
            assert!(x.max_abs_diff(y) < 1e-12, "{}", a.params().get(id).name());
        }
    }

    #[test]
    fn mismatched_data_is_rejected() {
        let d = data(ModalityChoice::None, false);
        let mut enc = Encoder::new(tiny_encoder(), 1).unwrap();
        assert!(train(&mut enc, &d, &cfg(1, ModalityChoice::Image), &mut |_| {}).is_err());
        let c = TrainConfig { supervised_text: true, ..cfg(1, ModalityChoice::None) };
        assert!(train(&mut enc, &d, &c, &mut |_| {}).is_err());
        assert_eq!(steps_per_epoch(100, 48), 3);
    }
}
