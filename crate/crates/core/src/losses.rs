//! Contrastive objectives.
//!
//! All losses share one shape: rows are L2-normalized, a cosine-similarity
//! matrix is scaled by `1/τ`, and each anchor contributes
//! `−log(Σ_{positive} e^{s/τ} / Σ_{denominator} e^{s/τ})`. They differ only in
//! which columns land in the positive set and the denominator:
//!
//! | loss | positive set of anchor `i` | denominator of anchor `i` |
//! |---|---|---|
//! | SimCLR (text unsup., modal) | `{i}` | all `j` |
//! | supervised text | `{i}` among entailments | all entailments and contradictions |
//! | modal SupCon variant | `{i}` ∪ same-class `j ≠ i` | cross-class `j` only |
//!
//! The SupCon denominator deliberately omits the positive terms, so it is not
//! the textbook SupCon normalization. With all labels distinct the two modal
//! losses are linked per anchor by `simclr = ln(1 + exp(supcon))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::{Error, Result, Tensor};

pub const DEFAULT_TAU_TEXT: f64 = 0.05;
pub const DEFAULT_TAU_MODAL: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ModalLoss {
    SupCon,
    SimClr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Reduction {
    /// Sum over anchors.
    Sum,
    /// Mean over anchors.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    pub tau_text: f64,
    pub tau_modal: f64,
    pub modal_variant: ModalLoss,
    pub omega_modal: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau_text: DEFAULT_TAU_TEXT,
            tau_modal: DEFAULT_TAU_MODAL,
            modal_variant: ModalLoss::SupCon,
            omega_modal: 1.0,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_text > 0.0 && self.tau_modal > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must be positive (text {}, modal {})",
                self.tau_text, self.tau_modal
            )));
        }
        if !(self.omega_modal >= 0.0 && self.omega_modal.is_finite()) {
            return Err(Error::Config(format!(
                "omega_modal must be a nonnegative number, got {}",
                self.omega_modal
            )));
        }
        Ok(())
    }
}

/// A loss recorded on a tape: the reduced scalar and the `N` per-anchor terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub per_anchor: Var,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

fn check_aligned(tape: &Tape, vars: &[Var]) -> Result<(usize, usize)> {
    let (n, h) = tape.value(vars[0]).dims2()?;
    for &v in &vars[1..] {
        let s = tape.value(v).shape();
        if s != [n, h] {
            return Err(Error::Alignment(format!(
                "expected {n}×{h} representations, got {s:?}"
            )));
        }
    }
    Ok((n, h))
}

/// Cosine similarities of every row of `a` against every row of `b`, over τ.
fn scaled_cosine(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Result<Var> {
    let an = tape.normalize_rows(a)?;
    let bn = tape.normalize_rows(b)?;
    let sim = tape.matmul_nt(an, bn)?;
    Ok(tape.scale(sim, 1.0 / tau))
}

fn reduce(tape: &mut Tape, per_anchor: Var, reduction: Reduction) -> LossTerms {
    let total = match reduction {
        Reduction::Sum => tape.sum(per_anchor),
        Reduction::Mean => tape.mean(per_anchor),
    };
    LossTerms { total, per_anchor }
}

fn simclr(tape: &mut Tape, a: Var, b: Var, tau: f64, reduction: Reduction) -> Result<LossTerms> {
    check_tau(tau)?;
    let (n, _) = check_aligned(tape, &[a, b])?;
    let logits = scaled_cosine(tape, a, b, tau)?;
    let mut positive = vec![false; n * n];
    for i in 0..n {
        positive[i * n + i] = true;
    }
    let per = tape.contrast(logits, positive, vec![true; n * n])?;
    Ok(reduce(tape, per, reduction))
}

/// Unsupervised text loss over two dropout views of the same sentences.
pub fn text_unsup_loss(
    tape: &mut Tape,
    views_a: Var,
    views_b: Var,
    tau: f64,
    reduction: Reduction,
) -> Result<LossTerms> {
    simclr(tape, views_a, views_b, tau, reduction)
}

/// Supervised text loss over (source, entailment, contradiction) triples. The
/// contradictions act as hard negatives: every anchor's denominator holds all
/// entailments and all contradictions of the batch.
pub fn text_sup_loss(
    tape: &mut Tape,
    source: Var,
    entailment: Var,
    contradiction: Var,
    tau: f64,
    reduction: Reduction,
) -> Result<LossTerms> {
    check_tau(tau)?;
    let (n, _) = check_aligned(tape, &[source, entailment, contradiction])?;
    let s = tape.normalize_rows(source)?;
    let p = tape.normalize_rows(entailment)?;
    let q = tape.normalize_rows(contradiction)?;
    let candidates = tape.concat_rows(&[p, q])?;
    let sim = tape.matmul_nt(s, candidates)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let m = 2 * n;
    let mut positive = vec![false; n * m];
    for i in 0..n {
        positive[i * m + i] = true;
    }
    let per = tape.contrast(logits, positive, vec![true; n * m])?;
    Ok(reduce(tape, per, reduction))
}

/// Positive and denominator masks of the modal SupCon variant.
pub fn supcon_masks(labels: &[usize]) -> Result<(Vec<bool>, Vec<bool>)> {
    let n = labels.len();
    let mut positive = vec![false; n * n];
    let mut denominator = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let same = labels[i] == labels[j];
            positive[i * n + j] = i == j || same;
            denominator[i * n + j] = !same;
        }
        if !denominator[i * n..(i + 1) * n].iter().any(|&d| d) {
            return Err(Error::EmptyDenominator {
                anchor: i,
                labels: labels.to_vec(),
            });
        }
    }
    Ok((positive, denominator))
}

/// Modal SupCon variant: the anchor's own second view and every same-class
/// second view sit in the numerator; only cross-class views form the
/// denominator.
pub fn modal_supcon_loss(
    tape: &mut Tape,
    views_a: Var,
    views_b: Var,
    labels: &[usize],
    tau: f64,
    reduction: Reduction,
) -> Result<LossTerms> {
    check_tau(tau)?;
    let (n, _) = check_aligned(tape, &[views_a, views_b])?;
    if labels.len() != n {
        return Err(Error::Alignment(format!(
            "{} labels for {n} representations",
            labels.len()
        )));
    }
    let (positive, denominator) = supcon_masks(labels)?;
    let logits = scaled_cosine(tape, views_a, views_b, tau)?;
    let per = tape.contrast(logits, positive, denominator)?;
    Ok(reduce(tape, per, reduction))
}

/// Modal SimCLR loss; the same form as the unsupervised text loss.
pub fn modal_simclr_loss(
    tape: &mut Tape,
    views_a: Var,
    views_b: Var,
    tau: f64,
    reduction: Reduction,
) -> Result<LossTerms> {
    simclr(tape, views_a, views_b, tau, reduction)
}

/// `loss_text + omega · loss_modal`.
pub fn combine(tape: &mut Tape, loss_text: Var, loss_modal: Var, omega: f64) -> Result<Var> {
    let weighted = tape.scale(loss_modal, omega);
    tape.add(loss_text, weighted)
}

pub fn combine_values(loss_text: f64, loss_modal: f64, omega: f64) -> f64 {
    loss_text + omega * loss_modal
}

/// Loss value computed outside of training.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_anchor: Vec<f64>,
}

fn evaluate<F>(inputs: &[&Tensor], build: F) -> Result<LossValue>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<LossTerms>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let terms = build(&mut tape, &vars)?;
    Ok(LossValue {
        total: tape.scalar(terms.total),
        per_anchor: tape.value(terms.per_anchor).data().to_vec(),
    })
}

/// Value-only entry points over plain tensors (sum reduction).
pub mod values {
    use super::*;

    pub fn text_unsup(a: &Tensor, b: &Tensor, tau: f64) -> Result<LossValue> {
        evaluate(&[a, b], |t, v| text_unsup_loss(t, v[0], v[1], tau, Reduction::Sum))
    }

    pub fn text_sup(src: &Tensor, pos: &Tensor, neg: &Tensor, tau: f64) -> Result<LossValue> {
        evaluate(&[src, pos, neg], |t, v| {
            text_sup_loss(t, v[0], v[1], v[2], tau, Reduction::Sum)
        })
    }

    pub fn modal_supcon(a: &Tensor, b: &Tensor, labels: &[usize], tau: f64) -> Result<LossValue> {
        evaluate(&[a, b], |t, v| {
            modal_supcon_loss(t, v[0], v[1], labels, tau, Reduction::Sum)
        })
    }

    pub fn modal_simclr(a: &Tensor, b: &Tensor, tau: f64) -> Result<LossValue> {
        evaluate(&[a, b], |t, v| modal_simclr_loss(t, v[0], v[1], tau, Reduction::Sum))
    }
}
