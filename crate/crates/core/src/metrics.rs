//! Evaluation: rank correlation against gold similarity, alignment and
//! uniformity of normalized embeddings, top-k retrieval and seed-sweep
//! aggregation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::Encoder;
use crate::tensor::{cosine_similarity, dot, norm};
use crate::{Error, Result, Tensor};

/// Two token sequences and their gold similarity.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredPair {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub gold: f64,
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero rank variance".into()));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of fractional ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold scores",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least two points".into()));
    }
    pearson(&fractional_ranks(pred), &fractional_ranks(gold))
}

fn unit_rows(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (n, _) = x.dims2()?;
    (0..n)
        .map(|i| {
            let r = x.row(i);
            let nr = norm(r);
            if nr == 0.0 {
                return Err(Error::DegenerateInput(format!("row {i} has zero norm")));
            }
            Ok(r.iter().map(|v| v / nr).collect())
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared distance between L2-normalized positive pairs (row `i` of
/// `a` with row `i` of `b`). Lower is better.
pub fn alignment(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Alignment(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ua, ub) = (unit_rows(a)?, unit_rows(b)?);
    if ua.is_empty() {
        return Err(Error::InvalidArgument("alignment of no pairs".into()));
    }
    let total: f64 = ua.iter().zip(&ub).map(|(x, y)| squared_distance(x, y)).sum();
    Ok(total / ua.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uniformity {
    /// Mean of `exp(−2‖fᵢ − fⱼ‖²)` over unordered distinct pairs.
    pub raw: f64,
    /// `ln(raw)`.
    pub log: f64,
}

/// Gaussian-potential uniformity of L2-normalized rows.
pub fn uniformity(reps: &Tensor) -> Result<Uniformity> {
    let u = unit_rows(reps)?;
    let n = u.len();
    if n < 2 {
        return Err(Error::InvalidArgument("uniformity needs at least two points".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            // ‖a − b‖² = 2 − 2·a·b for unit vectors.
            let d2 = (2.0 - 2.0 * dot(&u[i], &u[j])).max(0.0);
            total += libm::exp(-2.0 * d2);
        }
    }
    let raw = total / (n * (n - 1) / 2) as f64;
    Ok(Uniformity {
        raw,
        log: libm::log(raw),
    })
}

/// Indices of the `k` corpus rows most cosine-similar to `query`, best
/// first, ties broken by lower index.
pub fn retrieve_topk(query: &[f64], corpus: &Tensor, k: usize) -> Result<Vec<(usize, f64)>> {
    let (n, _) = corpus.dims2()?;
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds corpus size {n}")));
    }
    let mut scored = (0..n)
        .map(|i| Ok((i, cosine_similarity(query, corpus.row(i))?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Which STS pairs count as positives for alignment.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PositiveThreshold {
    /// Pairs whose gold score is at least this value.
    Absolute(f64),
    /// Pairs whose gold score is at least this quantile of the set's gold
    /// scores (and strictly positive).
    Quantile(f64),
}

impl Default for PositiveThreshold {
    fn default() -> Self {
        PositiveThreshold::Quantile(0.75)
    }
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalHit {
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalRow {
    pub query: usize,
    pub hits: Vec<RetrievalHit>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub spearman: MeanStd,
    pub alignment: MeanStd,
    pub uniformity_log: MeanStd,
    pub uniformity_raw: MeanStd,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub spearman: f64,
    pub alignment: f64,
    pub uniformity_log: f64,
    pub uniformity_raw: f64,
    pub retrieval: Option<Vec<RetrievalRow>>,
    pub aggregate: Option<Aggregate>,
}

/// Encodes both sides of every pair in eval mode and scores them.
pub fn eval_sts(encoder: &Encoder, pairs: &[ScoredPair], threshold: PositiveThreshold) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty STS pair set".into()));
    }
    let left: Vec<&[u32]> = pairs.iter().map(|p| p.a.as_slice()).collect();
    let right: Vec<&[u32]> = pairs.iter().map(|p| p.b.as_slice()).collect();
    let ea = encoder.represent_text(&left, 64)?.vectors;
    let eb = encoder.represent_text(&right, 64)?.vectors;
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    let pred = (0..pairs.len())
        .map(|i| cosine_similarity(ea.row(i), eb.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let spearman = spearman(&pred, &gold)?;

    let cut = match threshold {
        PositiveThreshold::Absolute(t) => t,
        PositiveThreshold::Quantile(q) => quantile(&gold, q),
    };
    let positive: Vec<usize> = (0..pairs.len())
        .filter(|&i| {
            gold[i] >= cut && (matches!(threshold, PositiveThreshold::Absolute(_)) || gold[i] > 0.0)
        })
        .collect();
    if positive.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no STS pair reaches the positive threshold {cut}"
        )));
    }
    let h = ea.shape()[1];
    let pick = |m: &Tensor| -> Result<Tensor> {
        let data = positive.iter().flat_map(|&i| m.row(i).iter().copied()).collect();
        Tensor::new(vec![positive.len(), h], data)
    };
    let alignment = alignment(&pick(&ea)?, &pick(&eb)?)?;

    let mut all = ea.into_data();
    all.extend(eb.into_data());
    let uniformity = uniformity(&Tensor::new(vec![2 * pairs.len(), h], all)?)?;

    Ok(MetricsReport {
        spearman,
        alignment,
        uniformity_log: uniformity.log,
        uniformity_raw: uniformity.raw,
        retrieval: None,
        aggregate: None,
    })
}

/// Mean and sample standard deviation (`n − 1` denominator).
pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("mean/std needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MeanStd {
        mean,
        std: libm::sqrt(var),
    })
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<Aggregate> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("aggregate needs at least two reports".into()));
    }
    let field = |f: fn(&MetricsReport) -> f64| -> Result<MeanStd> {
        mean_std(&reports.iter().map(f).collect::<Vec<_>>())
    };
    Ok(Aggregate {
        spearman: field(|r| r.spearman)?,
        alignment: field(|r| r.alignment)?,
        uniformity_log: field(|r| r.uniformity_log)?,
        uniformity_raw: field(|r| r.uniformity_raw)?,
    })
}
