use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use super::TripletRecord;
use crate::encoder::FIRST_WORD_TOKEN;
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Token-level corruption applied to every sentence of a triplet, in the
/// order delete, insert, swap.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    /// Fraction of tokens deleted (rounded to the nearest count).
    pub p_delete: f64,
    pub n_insert: usize,
    pub n_swap: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NoiseReport {
    /// Sentences whose deletion count was capped to keep one token.
    pub clipped: usize,
}

fn corrupt(tokens: &[u32], spec: &NoiseSpec, vocab_size: usize, key: StreamKey, report: &mut NoiseReport) -> Vec<u32> {
    let mut rng = key.rng();
    let len = tokens.len();
    let mut k = libm::round(spec.p_delete * len as f64) as usize;
    if len > 0 && k >= len {
        k = len - 1;
        report.clipped += 1;
    }
    let mut drop = alloc::vec![false; len];
    for i in index::sample(&mut rng, len, k.min(len)) {
        drop[i] = true;
    }
    let mut out: Vec<u32> = tokens
        .iter()
        .zip(&drop)
        .filter(|(_, d)| !**d)
        .map(|(t, _)| *t)
        .collect();
    for _ in 0..spec.n_insert {
        let pos = rng.gen_range(0..=out.len());
        out.insert(pos, rng.gen_range(FIRST_WORD_TOKEN..vocab_size as u32));
    }
    if out.len() >= 2 {
        for _ in 0..spec.n_swap {
            let i = rng.gen_range(0..out.len());
            let mut j = rng.gen_range(0..out.len() - 1);
            if j >= i {
                j += 1;
            }
            out.swap(i, j);
        }
    }
    out
}

pub fn inject_noise(triplets: &[TripletRecord], spec: &NoiseSpec, vocab_size: usize) -> Result<(Vec<TripletRecord>, NoiseReport)> {
    if !(0.0..=1.0).contains(&spec.p_delete) {
        return Err(Error::Config(format!("p_delete {} outside [0, 1]", spec.p_delete)));
    }
    if vocab_size <= FIRST_WORD_TOKEN as usize {
        return Err(Error::Config("vocabulary has no word tokens".into()));
    }
    let key = StreamKey::root(spec.seed).child("noise");
    let mut report = NoiseReport::default();
    let out = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let k = key.at(i as u64);
            TripletRecord {
                src: corrupt(&t.src, spec, vocab_size, k.child("src"), &mut report),
                pos: corrupt(&t.pos, spec, vocab_size, k.child("pos"), &mut report),
                neg: corrupt(&t.neg, spec, vocab_size, k.child("neg"), &mut report),
            }
        })
        .collect();
    Ok((out, report))
}
