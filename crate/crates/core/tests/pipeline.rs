//! Whole-pipeline checks through the public API only.

use mmcse_core::data::{
    gen_audio, gen_images, gen_sts_pairs, gen_text, gen_triplets, AudioSpec, CorpusSpec, ImageSpec,
};
use mmcse_core::encoder::{Encoder, EncoderConfig, Mode, Modality, PatchBatch};
use mmcse_core::autograd::Tape;
use mmcse_core::losses::values;
use mmcse_core::metrics::{eval_sts, PositiveThreshold};
use mmcse_core::training::{train, LogRecord, ModalData, ModalityChoice, TextData, TrainConfig, TrainData, UpdateMode};
use mmcse_core::{Error, Tensor};

fn encoder_config() -> EncoderConfig {
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
        num_clusters: 5,
        sentences_per_cluster: 16,
        ..CorpusSpec::default()
    }
}

fn data(modal: ModalData, supervised: bool) -> TrainData {
    let sentences = gen_text(&corpus()).unwrap();
    let text = if supervised {
        TextData::Supervised(gen_triplets(&sentences, 3).unwrap())
    } else {
        TextData::Unsupervised(sentences.into_iter().map(|s| s.tokens).collect())
    };
    TrainData {
        text,
        modal,
        dev: gen_sts_pairs(&corpus(), 40, 0.5, 9).unwrap(),
    }
}

fn images() -> ModalData {
    ModalData::Images(
        gen_images(&ImageSpec {
            num_classes: 3,
            per_class: 4,
            height: 8,
            width: 8,
            ..ImageSpec::default()
        })
        .unwrap(),
    )
}

fn audio() -> ModalData {
    ModalData::Audio(
        gen_audio(&AudioSpec {
            num_classes: 3,
            per_class: 4,
            frames: 8,
            bins: 8,
            ..AudioSpec::default()
        })
        .unwrap(),
    )
}

fn config(modality: ModalityChoice) -> TrainConfig {
    TrainConfig {
        max_steps: 4,
        text_batch_size: 8,
        modal_batch_size: 6,
        validation_interval: 2,
        modality,
        ..TrainConfig::default()
    }
}

fn run(d: &TrainData, cfg: &TrainConfig) -> (Vec<LogRecord>, Vec<Tensor>, Vec<Tensor>) {
    let mut enc = Encoder::new(encoder_config(), cfg.seed).unwrap();
    let mut log = Vec::new();
    let state = train(&mut enc, d, cfg, &mut |r| log.push(r.clone())).unwrap();
    (log, state.best_checkpoint, enc.params().snapshot())
}

#[test]
fn every_arm_trains_and_repeats_bit_for_bit() {
    for (modal, modality) in [
        (ModalData::None, ModalityChoice::None),
        (images(), ModalityChoice::Image),
        (audio(), ModalityChoice::Audio),
    ] {
        for supervised in [false, true] {
            let d = data(modal.clone(), supervised);
            let cfg = TrainConfig { supervised_text: supervised, ..config(modality) };
            let first = run(&d, &cfg);
            let second = run(&d, &cfg);
            assert_eq!(first.0, second.0, "{modality:?} supervised={supervised}");
            let bits = |ts: &[Tensor]| -> Vec<u64> { ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect() };
            assert_eq!(bits(&first.1), bits(&second.1));
            assert_eq!(bits(&first.2), bits(&second.2));

            let losses = first.0.iter().filter(|r| matches!(r, LogRecord::Loss { .. })).count();
            let per_step = if modality == ModalityChoice::None { 1 } else { 2 };
            assert_eq!(losses, cfg.max_steps * per_step);
        }
    }
}

#[test]
fn summed_mode_logs_both_losses_and_differs_from_alternating() {
    let d = data(images(), false);
    let alt = run(&d, &config(ModalityChoice::Image));
    let sum = run(&d, &TrainConfig { update: UpdateMode::Summed, ..config(ModalityChoice::Image) });
    assert_eq!(alt.0.len(), sum.0.len());
    assert_ne!(alt.2, sum.2);
}

#[test]
fn a_different_seed_gives_a_different_run() {
    let d = data(ModalData::None, false);
    let a = run(&d, &config(ModalityChoice::None));
    let b = run(&d, &TrainConfig { seed: 7, ..config(ModalityChoice::None) });
    assert_ne!(a.2, b.2);
}

#[test]
fn missing_modal_data_is_a_config_error() {
    let mut enc = Encoder::new(encoder_config(), 1).unwrap();
    let err = train(&mut enc, &data(ModalData::None, false), &config(ModalityChoice::Audio), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
}

#[test]
fn image_batches_flow_into_the_shared_stack() {
    let cfg = encoder_config();
    let enc = Encoder::new(cfg.clone(), 3).unwrap();
    let ModalData::Images(imgs) = images() else { unreachable!() };
    let refs: Vec<_> = imgs.iter().take(5).collect();
    let mut tape = Tape::new();
    let feats = enc.embed_image(&mut tape, &PatchBatch::from_images(&refs).unwrap()).unwrap();
    assert_eq!(feats.seqs.iter().map(|s| s.1).collect::<Vec<_>>(), vec![cfg.image_seq_len().unwrap(); 5]);
    let (a, b) = enc.encode_twice(&mut tape, &feats, 1, 2).unwrap();
    let eval = enc.encode(&mut tape, &feats, Mode::Eval).unwrap();
    assert_eq!(tape.value(a).shape(), &[5, cfg.hidden_dim]);
    assert_ne!(tape.value(a), tape.value(b));
    let labels: Vec<usize> = refs.iter().map(|i| i.label).collect();
    let loss = values::modal_supcon(tape.value(a), tape.value(b), &labels, 0.07).unwrap();
    assert!(loss.total.is_finite() && loss.per_anchor.len() == 5);
    assert_eq!(tape.value(eval).shape(), &[5, cfg.hidden_dim]);
    assert!(!enc.param_ids_for(Modality::Image).is_empty());
}

#[test]
fn untrained_encoder_scores_every_metric() {
    let enc = Encoder::new(encoder_config(), 5).unwrap();
    let pairs = gen_sts_pairs(&corpus(), 80, 0.5, 11).unwrap();
    let report = eval_sts(&enc, &pairs, PositiveThreshold::default()).unwrap();
    assert!((-1.0..=1.0).contains(&report.spearman));
    assert!((0.0..=4.0).contains(&report.alignment));
    assert!(report.uniformity_log <= 0.0);
    assert!((report.uniformity_log.exp() - report.uniformity_raw).abs() < 1e-12);
}
