//! Central finite-difference verification of analytic gradients.

pub mod trials;

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::rng::rng_from;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Perturbation size; defaults to the element type's [`Scalar::FD_STEP`].
    pub step: Option<f64>,
    /// Check at most this many randomly chosen elements per parameter.
    pub max_elements_per_param: Option<usize>,
    /// Seed for element sampling.
    pub seed: u64,
    /// When set, each element is also differenced at a quarter step. If the
    /// two central differences disagree by more than this relative amount a
    /// ReLU or max-pool kink lies inside the stencil, and the element is
    /// skipped (and counted) instead of compared. Smooth points agree to
    /// O(h^2), so a wrong gradient is still caught.
    pub kink_guard: Option<f64>,
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckConfig {
            tolerance,
            step: None,
            max_elements_per_param: None,
            seed: 0,
            kink_guard: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Elements dropped by the kink guard.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error >= self.tolerance)
    }
}

/// Relative error with unit floor: `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_loss<S: Scalar, F>(loss_fn: &mut F, params: &ParamStore<S>) -> Result<f64>
where
    F: FnMut(&mut Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss_fn(&mut tape, params)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", "loss must be a single element"));
    }
    let l = v.item().to_f64();
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss(alloc::format!("{l}")));
    }
    Ok(l)
}

/// Compares the tape's gradients of `loss_fn` against central differences for
/// every parameter in `params`.
///
/// `loss_fn` builds the scalar loss on the tape it is given, binding parameters
/// from the store it is given (which may be a perturbed copy).
pub fn grad_check<S: Scalar, F>(params: &ParamStore<S>, mut loss_fn: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss_fn(&mut tape, params)?;
    let l0 = tape.value(out).item().to_f64();
    if !l0.is_finite() {
        return Err(Error::NonFiniteLoss(alloc::format!("{l0}")));
    }
    let analytic = tape.backward(out)?.into_params();
    drop(tape);

    let h: f64 = cfg.step.unwrap_or(S::FD_STEP);
    let mut rng = rng_from(cfg.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        params: Vec::new(),
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name)?.len();
        let indices: Vec<usize> = match cfg.max_elements_per_param {
            Some(max) if max < n => {
                let mut v = sample(&mut rng, n, max).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: name.clone(),
            checked: indices.len(),
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut first = true;
        for i in indices {
            let orig = params.get(&name)?.data()[i];
            let mut central = |step: f64, work: &mut ParamStore<S>| -> Result<f64> {
                work.get_mut(&name)?.data_mut()[i] = S::from_f64(orig.to_f64() + step);
                let plus = eval_loss(&mut loss_fn, work)?;
                work.get_mut(&name)?.data_mut()[i] = S::from_f64(orig.to_f64() - step);
                let minus = eval_loss(&mut loss_fn, work)?;
                work.get_mut(&name)?.data_mut()[i] = orig;
                Ok((plus - minus) / (2.0 * step))
            };
            let numeric = central(h, &mut work)?;
            if let Some(guard) = cfg.kink_guard {
                let quarter = central(h / 4.0, &mut work)?;
                if relative_error(numeric, quarter) > guard {
                    check.checked -= 1;
                    check.skipped += 1;
                    continue;
                }
            }
            let a = analytic.get(&name).map(|g| g.data()[i].to_f64()).unwrap_or(0.0);
            let err = relative_error(a, numeric);
            if first || err > check.max_rel_error {
                first = false;
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn relu_report(p: f64, guard: Option<f64>) -> GradCheckReport {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::scalar(p));
        let cfg = GradCheckConfig { kink_guard: guard, ..GradCheckConfig::with_tolerance(1e-6) };
        grad_check(
            &store,
            |tape, ps| {
                let p = ps.bind(tape, "p")?;
                let r = tape.relu(p);
                Ok(tape.sum(r))
            },
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn kink_guard_skips_straddled_kinks_only() {
        // kink 0.3 steps away: h and h/4 stencils disagree
        let r = relu_report(-0.3e-6, Some(1e-7));
        assert_eq!((r.checked(), r.skipped()), (0, 1));
        assert!(!relu_report(-0.3e-6, None).passed());
        // kink dead centre looks smooth to the guard, so the mismatch is still reported
        let r = relu_report(0.0, Some(1e-7));
        assert_eq!(r.skipped(), 0);
        assert!(!r.passed());
        // far from the kink nothing is skipped
        let r = relu_report(0.5, Some(1e-7));
        assert_eq!((r.checked(), r.skipped()), (1, 0));
        assert!(r.passed());
    }

    #[test]
    fn quadratic_has_known_derivative() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::scalar(3.0));
        let report = grad_check(
            &store,
            |tape, ps| {
                let p = ps.bind(tape, "p")?;
                let sq = tape.mul(p, p)?;
                Ok(tape.sum(sq))
            },
            &GradCheckConfig::with_tolerance(1e-6),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!((report.params[0].analytic - 6.0).abs() < 1e-12);
        assert!((report.params[0].numeric - 6.0).abs() < 1e-6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu'(0) is 0 on the tape while the central difference sees 0.5.
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::scalar(0.0));
        let report = grad_check(
            &store,
            |tape, ps| {
                let p = ps.bind(tape, "p")?;
                let r = tape.relu(p);
                Ok(tape.sum(r))
            },
            &GradCheckConfig::with_tolerance(1e-6),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", Tensor::scalar(f64::NAN));
        let err = grad_check(
            &store,
            |tape, ps| {
                let p = ps.bind(tape, "p")?;
                Ok(tape.sum(p))
            },
            &GradCheckConfig::with_tolerance(1e-6),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)));
    }
}
