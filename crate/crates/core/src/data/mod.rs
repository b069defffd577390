//! Synthetic stand-ins for the text, NLI, image and audio corpora.
//!
//! Every generator is a pure function of its spec and seed. Text and modal
//! datasets are separate types with no shared identifiers: nothing pairs a
//! sentence with an image or a clip.

mod audio;
mod image;
mod noise;
mod stream;
mod text;

pub use audio::{gen_audio, AudioSource, AudioSpec, LabeledClip};
pub use image::{augment_image, gen_images, AugmentConfig, ImageSource, ImageSpec, LabeledImage};
pub use noise::{inject_noise, NoiseReport, NoiseSpec};
pub use stream::{batch_streams, CyclingSampler, PairedStreams};
pub use text::{
    gen_sts_pairs, gen_text, gen_triplets, gold_score, CorpusSpec, Sentence, TokenPartition,
    TripletRecord,
};

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;

use crate::rng::StreamKey;
use crate::{Error, Result};

/// `n` items drawn uniformly without replacement.
pub fn subsample<T: Clone>(data: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > data.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} items from {}",
            data.len()
        )));
    }
    let mut rng = StreamKey::root(seed).child("subsample").rng();
    Ok(index::sample(&mut rng, data.len(), n)
        .into_iter()
        .map(|i| data[i].clone())
        .collect())
}

pub(crate) fn uniform<R: rand::Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_cases() {
        let data: Vec<u32> = (0..50).collect();
        let mut all = subsample(&data, 50, 1).unwrap();
        all.sort_unstable();
        assert_eq!(all, data);
        assert!(subsample(&data, 0, 1).unwrap().is_empty());
        assert!(subsample(&data, 51, 1).is_err());
        assert_eq!(subsample(&data, 10, 3).unwrap(), subsample(&data, 10, 3).unwrap());
    }

    #[test]
    fn subsample_seeds_give_different_subsets() {
        // Two uniform 10-of-50 subsets coincide with probability 1/C(50,10)
        // ≈ 1e-10 per seed pair; over 45 pairs a collision is negligible.
        let data: Vec<u32> = (0..50).collect();
        let sets: Vec<Vec<u32>> = (0..10)
            .map(|s| {
                let mut v = subsample(&data, 10, s).unwrap();
                v.sort_unstable();
                v
            })
            .collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert_ne!(sets[i], sets[j]);
            }
        }
    }
}
