use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::StreamKey;
use crate::{Error, Result};

/// Endless batches over `0..len`. Each epoch is a fresh permutation keyed by
/// the epoch number; a batch that crosses an epoch boundary continues into
/// the next permutation.
#[derive(Clone, Debug)]
pub struct CyclingSampler {
    len: usize,
    batch: usize,
    key: StreamKey,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl CyclingSampler {
    pub fn new(len: usize, batch: usize, key: StreamKey) -> Result<Self> {
        if len == 0 || batch == 0 {
            return Err(Error::InvalidArgument("sampler needs data and a positive batch".into()));
        }
        let mut s = CyclingSampler {
            len,
            batch,
            key,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut self.key.at(self.epoch).rng());
        self.pos = 0;
    }

    /// Completed passes over the data.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.len {
                self.epoch += 1;
                self.shuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Independent text and modal index streams for one training run.
#[derive(Clone, Debug)]
pub struct PairedStreams {
    pub text: CyclingSampler,
    pub modal: Option<CyclingSampler>,
}

impl PairedStreams {
    pub fn next(&mut self) -> (Vec<usize>, Option<Vec<usize>>) {
        (self.text.next_batch(), self.modal.as_mut().map(CyclingSampler::next_batch))
    }
}

/// `modal` is `(dataset length, batch size)` when a modality is trained.
pub fn batch_streams(text_len: usize, text_batch: usize, modal: Option<(usize, usize)>, seed: u64) -> Result<PairedStreams> {
    let root = StreamKey::root(seed);
    Ok(PairedStreams {
        text: CyclingSampler::new(text_len, text_batch, root.child("text-stream"))?,
        modal: modal
            .map(|(len, batch)| CyclingSampler::new(len, batch, root.child("modal-stream")))
            .transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_epoch_covers_everything() {
        let mut s = CyclingSampler::new(10, 5, StreamKey::root(1)).unwrap();
        let mut seen: Vec<usize> = s.next_batch();
        seen.extend(s.next_batch());
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let e1: Vec<usize> = [s.next_batch(), s.next_batch()].concat();
        assert_eq!(s.epoch(), 1);
        let mut sorted = e1.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_wrap_across_epochs() {
        let mut s = CyclingSampler::new(3, 5, StreamKey::root(2)).unwrap();
        assert_eq!(s.next_batch().len(), 5);
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = batch_streams(100, 8, Some((50, 4)), 42).unwrap();
        let mut b = batch_streams(100, 8, Some((50, 4)), 42).unwrap();
        let mut c = batch_streams(100, 8, None, 42).unwrap();
        for _ in 0..30 {
            let (ta, ma) = a.next();
            let (tb, mb) = b.next();
            let (tc, mc) = c.next();
            assert_eq!((&ta, &ma), (&tb, &mb));
            // The modal stream does not perturb the text stream.
            assert_eq!(ta, tc);
            assert!(mc.is_none());
        }
        assert!(batch_streams(0, 8, None, 1).is_err());
    }
}
