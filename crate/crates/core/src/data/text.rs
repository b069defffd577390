use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::encoder::FIRST_WORD_TOKEN;
use crate::metrics::ScoredPair;
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Clustered synthetic text. Each cluster owns a disjoint set of signal
/// tokens; background tokens are shared by all clusters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusSpec {
    pub num_clusters: usize,
    pub sentences_per_cluster: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of each sentence drawn from its cluster's signal tokens.
    pub signal_strength: f64,
    pub signal_tokens_per_cluster: usize,
    pub background_tokens: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_clusters: 20,
            sentences_per_cluster: 200,
            vocab_size: 512,
            min_len: 8,
            max_len: 14,
            signal_strength: 0.5,
            signal_tokens_per_cluster: 12,
            background_tokens: 256,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenPartition {
    pub signal: Vec<Vec<u32>>,
    pub background: Vec<u32>,
}

impl TokenPartition {
    pub fn is_signal(&self, token: u32) -> bool {
        let start = FIRST_WORD_TOKEN;
        let end = start + (self.signal.len() * self.signal.first().map_or(0, Vec::len)) as u32;
        (start..end).contains(&token)
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.sentences_per_cluster == 0 {
            return Err(Error::Spec("cluster counts must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Spec(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::Spec("signal_strength must lie in [0, 1]".into()));
        }
        if self.signal_tokens_per_cluster == 0 || self.background_tokens == 0 {
            return Err(Error::Spec("token set sizes must be positive".into()));
        }
        let needed = FIRST_WORD_TOKEN as usize
            + self.num_clusters * self.signal_tokens_per_cluster
            + self.background_tokens;
        if needed > self.vocab_size {
            return Err(Error::Spec(format!(
                "vocabulary of {} cannot hold {needed} reserved, signal and background tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<TokenPartition> {
        self.validate()?;
        let k = self.signal_tokens_per_cluster as u32;
        let signal = (0..self.num_clusters as u32)
            .map(|c| (FIRST_WORD_TOKEN + c * k..FIRST_WORD_TOKEN + (c + 1) * k).collect())
            .collect();
        let start = FIRST_WORD_TOKEN + self.num_clusters as u32 * k;
        let background = (start..start + self.background_tokens as u32).collect();
        Ok(TokenPartition { signal, background })
    }

    pub fn len(&self) -> usize {
        self.num_clusters * self.sentences_per_cluster
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sentence {
    pub tokens: Vec<u32>,
    pub cluster: usize,
}

/// (source, entailment, contradiction).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TripletRecord {
    pub src: Vec<u32>,
    pub pos: Vec<u32>,
    pub neg: Vec<u32>,
}

fn sentence(spec: &CorpusSpec, part: &TokenPartition, cluster: usize, key: StreamKey) -> Sentence {
    let mut rng = key.rng();
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let n_signal = libm::round(spec.signal_strength * len as f64) as usize;
    let pool = &part.signal[cluster];
    let mut tokens: Vec<u32> = if n_signal <= pool.len() {
        index::sample(&mut rng, pool.len(), n_signal)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..n_signal).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    };
    for _ in n_signal..len {
        tokens.push(part.background[rng.gen_range(0..part.background.len())]);
    }
    tokens.shuffle(&mut rng);
    Sentence { tokens, cluster }
}

/// Cluster-major list of sentences.
pub fn gen_text(spec: &CorpusSpec) -> Result<Vec<Sentence>> {
    let part = spec.partition()?;
    let key = StreamKey::root(spec.seed).child("text-corpus");
    let mut out = Vec::with_capacity(spec.len());
    for c in 0..spec.num_clusters {
        for i in 0..spec.sentences_per_cluster {
            let idx = (c * spec.sentences_per_cluster + i) as u64;
            out.push(sentence(spec, &part, c, key.at(idx)));
        }
    }
    Ok(out)
}

/// Gold similarity in `[0, 5]`: five times the Jaccard overlap of the two
/// sentences' signal-token sets (0 when both are empty).
pub fn gold_score(a: &[u32], b: &[u32], part: &TokenPartition) -> f64 {
    let mut sa: Vec<u32> = a.iter().copied().filter(|&t| part.is_signal(t)).collect();
    let mut sb: Vec<u32> = b.iter().copied().filter(|&t| part.is_signal(t)).collect();
    sa.sort_unstable();
    sa.dedup();
    sb.sort_unstable();
    sb.dedup();
    let inter = sa.iter().filter(|t| sb.binary_search(t).is_ok()).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        0.0
    } else {
        5.0 * inter as f64 / union as f64
    }
}

/// Held-out STS pairs from a fresh corpus drawn with `spec` under `seed`.
/// A fraction `same_cluster` of pairs is drawn within one cluster; the rest
/// span two different clusters.
pub fn gen_sts_pairs(spec: &CorpusSpec, n_pairs: usize, same_cluster: f64, seed: u64) -> Result<Vec<ScoredPair>> {
    let held_out = CorpusSpec {
        seed,
        ..spec.clone()
    };
    let part = held_out.partition()?;
    let corpus = gen_text(&held_out)?;
    let per = spec.sentences_per_cluster;
    if spec.num_clusters < 2 || per < 2 {
        return Err(Error::Sampling("STS pairs need two clusters of two sentences".into()));
    }
    let mut rng = StreamKey::root(seed).child("sts-pairs").rng();
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.gen_range(0..corpus.len());
        let ci = corpus[i].cluster;
        let j = if rng.gen::<f64>() < same_cluster {
            let mut k = rng.gen_range(0..per - 1);
            if ci * per + k >= i {
                k += 1;
            }
            ci * per + k
        } else {
            let mut c = rng.gen_range(0..spec.num_clusters - 1);
            if c >= ci {
                c += 1;
            }
            c * per + rng.gen_range(0..per)
        };
        let (a, b) = (&corpus[i].tokens, &corpus[j].tokens);
        out.push(ScoredPair {
            a: a.clone(),
            b: b.clone(),
            gold: gold_score(a, b, &part),
        });
    }
    Ok(out)
}

/// One triplet per sentence: the entailment is another sentence of the same
/// cluster, the contradiction a sentence of a uniformly chosen other cluster.
pub fn gen_triplets(corpus: &[Sentence], seed: u64) -> Result<Vec<TripletRecord>> {
    let clusters = corpus.iter().map(|s| s.cluster).max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, s) in corpus.iter().enumerate() {
        members[s.cluster].push(i);
    }
    let present: Vec<usize> = (0..clusters).filter(|&c| !members[c].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::Sampling("triplets need at least two clusters".into()));
    }
    if let Some(&c) = present.iter().find(|&&c| members[c].len() < 2) {
        return Err(Error::Sampling(format!("cluster {c} has a single sentence")));
    }
    let key = StreamKey::root(seed).child("triplets");
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = key.at(i as u64).rng();
            let own = &members[s.cluster];
            let mut k = rng.gen_range(0..own.len() - 1);
            if own[k] == i {
                k = own.len() - 1;
            }
            let pos = own[k];
            let others: Vec<usize> = present.iter().copied().filter(|&c| c != s.cluster).collect();
            let nc = others[rng.gen_range(0..others.len())];
            let neg = members[nc][rng.gen_range(0..members[nc].len())];
            Ok(TripletRecord {
                src: s.tokens.clone(),
                pos: corpus[pos].tokens.clone(),
                neg: corpus[neg].tokens.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec::default();
        assert_eq!(gen_text(&spec).unwrap(), gen_text(&spec).unwrap());
        let other = CorpusSpec { seed: 43, ..spec.clone() };
        assert_ne!(gen_text(&spec).unwrap(), gen_text(&other).unwrap());
        assert_eq!(gen_text(&spec).unwrap().len(), 4000);
    }

    #[test]
    fn signal_strength_extremes() {
        let spec = CorpusSpec {
            signal_strength: 1.0,
            ..CorpusSpec::default()
        };
        let part = spec.partition().unwrap();
        for s in gen_text(&spec).unwrap() {
            assert!(s.tokens.iter().all(|t| part.signal[s.cluster].contains(t)));
        }
        let spec = CorpusSpec {
            signal_strength: 0.0,
            ..CorpusSpec::default()
        };
        for s in gen_text(&spec).unwrap() {
            assert!(s.tokens.iter().all(|t| part.background.contains(t)));
        }
    }

    #[test]
    fn vocab_too_small_is_a_spec_error() {
        let spec = CorpusSpec {
            vocab_size: 100,
            ..CorpusSpec::default()
        };
        assert!(matches!(gen_text(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn nearest_centroid_recovers_clusters() {
        let spec = CorpusSpec::default();
        let train = gen_text(&spec).unwrap();
        let test = gen_text(&CorpusSpec { seed: 7, ..spec.clone() }).unwrap();
        let v = spec.vocab_size;
        let bow = |s: &Sentence| {
            let mut x = vec![0.0; v];
            for &t in &s.tokens {
                x[t as usize] += 1.0;
            }
            x
        };
        let mut centroids = vec![vec![0.0; v]; spec.num_clusters];
        for s in &train {
            for (c, x) in centroids[s.cluster].iter_mut().zip(bow(s)) {
                *c += x / spec.sentences_per_cluster as f64;
            }
        }
        let correct = test
            .iter()
            .filter(|s| {
                let x = bow(s);
                let best = (0..spec.num_clusters)
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a].iter().zip(&x).map(|(c, v)| (c - v) * (c - v)).sum();
                        let db: f64 = centroids[b].iter().zip(&x).map(|(c, v)| (c - v) * (c - v)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == s.cluster
            })
            .count();
        assert!(correct as f64 / test.len() as f64 >= 0.9);
    }

    #[test]
    fn gold_scores() {
        let part = CorpusSpec::default().partition().unwrap();
        let a = [2u32, 3, 4, 200];
        assert_eq!(gold_score(&a, &a, &part), 5.0);
        assert_eq!(gold_score(&[2, 3], &[3, 4], &part), 5.0 / 3.0);
        assert_eq!(gold_score(&[2, 3], &[20, 21], &part), 0.0);
        let bg = part.background[0];
        assert_eq!(gold_score(&[bg], &[bg], &part), 0.0);
    }

    #[test]
    fn sts_pairs_are_graded() {
        let pairs = gen_sts_pairs(&CorpusSpec::default(), 200, 0.5, 9).unwrap();
        assert_eq!(pairs.len(), 200);
        assert!(pairs.iter().all(|p| (0.0..=5.0).contains(&p.gold)));
        let distinct: Vec<u64> = {
            let mut g: Vec<u64> = pairs.iter().map(|p| p.gold.to_bits()).collect();
            g.sort_unstable();
            g.dedup();
            g
        };
        assert!(distinct.len() > 5);
        assert_eq!(pairs, gen_sts_pairs(&CorpusSpec::default(), 200, 0.5, 9).unwrap());
    }

    #[test]
    fn triplets_follow_clusters() {
        let spec = CorpusSpec {
            num_clusters: 2,
            sentences_per_cluster: 20,
            ..CorpusSpec::default()
        };
        let part = spec.partition().unwrap();
        let corpus = gen_text(&spec).unwrap();
        let triplets = gen_triplets(&corpus, 3).unwrap();
        assert_eq!(triplets.len(), corpus.len());
        let cluster_of = |tokens: &[u32]| {
            (0..2).find(|&c| tokens.iter().any(|t| part.signal[c].contains(t))).unwrap()
        };
        for (t, s) in triplets.iter().zip(&corpus) {
            assert_eq!(cluster_of(&t.pos), s.cluster);
            assert_eq!(cluster_of(&t.neg), 1 - s.cluster);
        }
        assert_eq!(triplets, gen_triplets(&corpus, 3).unwrap());

        let lonely = vec![
            corpus[0].clone(),
            corpus[1].clone(),
            Sentence { tokens: vec![2], cluster: 1 },
        ];
        assert!(matches!(gen_triplets(&lonely, 1), Err(Error::Sampling(_))));
        assert!(gen_triplets(&corpus[..20], 1).is_err());
    }
}
