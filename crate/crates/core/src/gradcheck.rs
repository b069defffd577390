//! Central finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`,
/// so entries whose gradient is essentially zero are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat indices whose relative error exceeded the tolerance.
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub evaluations: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged.is_empty())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    pub floor: f64,
    /// Added to every analytic gradient entry before comparison. Only used
    /// to prove that the harness notices a wrong gradient.
    pub analytic_offset: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tol: 1e-4,
            floor: DEFAULT_FLOOR,
            analytic_offset: 0.0,
        }
    }
}

impl GradCheck {
    pub fn new(step: f64, tol: f64) -> Self {
        GradCheck {
            step,
            tol,
            ..Self::default()
        }
    }

    /// Compares the tape gradient of `loss_fn` against central differences
    /// for every element of `params`. `store` is restored before returning.
    pub fn run<F>(&self, store: &mut ParamStore, params: &[ParamId], mut loss_fn: F) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let first = evaluate(&mut loss_fn, store)?;
        let second = evaluate(&mut loss_fn, store)?;
        if first.to_bits() != second.to_bits() {
            return Err(Error::NonDeterministic { first, second });
        }

        let grads = {
            let mut tape = Tape::new();
            let loss = loss_fn(&mut tape, store)?;
            tape.backward(loss)?
        };

        let mut evaluations = 3;
        let mut report = GradCheckReport {
            params: Vec::with_capacity(params.len()),
            max_rel_error: 0.0,
            evaluations: 0,
        };
        for &id in params {
            let n = store.get(id).value().len();
            let analytic: Vec<f64> = match grads.get(id) {
                Some(g) => g.data().to_vec(),
                None => alloc::vec![0.0; n],
            };
            let mut check = ParamCheck {
                name: store.get(id).name().into(),
                max_rel_error: 0.0,
                max_abs_error: 0.0,
                flagged: Vec::new(),
            };
            for k in 0..n {
                let orig = store.get(id).value().data()[k];
                store.get_mut(id).value_mut().data_mut()[k] = orig + self.step;
                let plus = evaluate(&mut loss_fn, store);
                store.get_mut(id).value_mut().data_mut()[k] = orig - self.step;
                let minus = evaluate(&mut loss_fn, store);
                store.get_mut(id).value_mut().data_mut()[k] = orig;
                let numeric = (plus? - minus?) / (2.0 * self.step);
                evaluations += 2;

                let a = analytic[k] + self.analytic_offset;
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(self.floor);
                check.max_abs_error = check.max_abs_error.max(abs);
                check.max_rel_error = check.max_rel_error.max(rel);
                if !(rel < self.tol) {
                    check.flagged.push(k);
                }
            }
            report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
            report.params.push(check);
        }
        report.evaluations = evaluations;
        Ok(report)
    }
}

fn evaluate<F>(loss_fn: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    Ok(tape.scalar(loss))
}

/// [`GradCheck::run`] with the given step and tolerance.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    loss_fn: F,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    GradCheck::new(step, tol).run(store, params, loss_fn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use core::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .add("p", Tensor::new(alloc::vec![1, 4], alloc::vec![0.3, -1.2, 2.5, 0.7]).unwrap())
            .unwrap();
        let report = grad_check(
            &mut store,
            &[id],
            |tape, s| {
                let p = tape.param(s, id);
                let sq = tape.matmul_nt(p, p)?;
                let total = tape.sum(sq);
                Ok(tape.scale(total, 0.5))
            },
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(alloc::vec![1.0, 2.0])).unwrap();
        let check = GradCheck {
            analytic_offset: 0.1,
            ..GradCheck::default()
        };
        let report = check
            .run(&mut store, &[id], |tape, s| {
                let p = tape.param(s, id);
                Ok(tape.sum(p))
            })
            .unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].flagged, alloc::vec![0, 1]);
    }

    #[test]
    fn detects_nondeterminism() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(alloc::vec![1.0])).unwrap();
        let calls = Cell::new(0u32);
        let err = grad_check(
            &mut store,
            &[id],
            |tape, s| {
                calls.set(calls.get() + 1);
                let p = tape.param(s, id);
                let total = tape.sum(p);
                Ok(tape.add_scalar(total, f64::from(calls.get())))
            },
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }
}
