//! Central finite-difference verification of tape gradients.
//!
//! A coordinate whose `±eps` probes take a different piecewise branch than
//! the base point (a ReLU input changing sign, a new max-pool winner, a loss
//! clamp switching) has no derivative estimate from central differences; it
//! is counted in [`GradReport::nonsmooth`] instead of being compared.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{BatError, Result};

/// Denominator floor for relative errors, so entries whose true gradient is
/// zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// `(label, max relative error)` per checked input or parameter.
    pub entries: Vec<(String, f64)>,
    pub tol: f64,
    /// Coordinates compared against finite differences.
    pub checked: usize,
    /// Coordinates skipped because a probe crossed a branch point.
    pub nonsmooth: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.1 <= self.tol)
    }

    pub fn nonsmooth_fraction(&self) -> f64 {
        self.nonsmooth as f64 / (self.checked + self.nonsmooth).max(1) as f64
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

struct Probe {
    value: f64,
    signature: u64,
}

fn scalar_value(tape: &Tape, out: Var) -> Result<f64> {
    tape.check_finite()?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(BatError::dim(format!("grad_check needs a scalar output, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Checks `f` with respect to every entry of every input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    check_inputs(f, inputs, eps, tol, &Tape::new)
}

/// Like [`grad_check`], on training tapes seeded with `seed`, so every probe
/// draws the same dropout masks.
pub fn grad_check_training<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64, seed: u64) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    check_inputs(f, inputs, eps, tol, &|| Tape::training(seed))
}

fn check_inputs<F>(mut f: F, inputs: &[Tensor], eps: f64, tol: f64, make: &dyn Fn() -> Tape) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(BatError::Argument(format!("eps must be positive, got {eps}")));
    }
    let mut tape = make();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_value(&tape, out)?;
    let base = tape.branch_signature();
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.len()], <[f64]>::to_vec)).collect();

    let mut eval = |probe: &[Tensor]| -> Result<Probe> {
        let mut tape = make();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(Probe { value: scalar_value(&tape, out)?, signature: tape.branch_signature() })
    };

    let mut probe = inputs.to_vec();
    let mut entries = Vec::with_capacity(inputs.len());
    let (mut checked, mut nonsmooth) = (0, 0);
    for (i, grads) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            if up.signature != base || down.signature != base {
                nonsmooth += 1;
                continue;
            }
            checked += 1;
            worst = worst.max(rel_error(grads[j], (up.value - down.value) / (2.0 * eps)));
        }
        entries.push((format!("input{i}"), worst));
    }
    Ok(GradReport { entries, tol, checked, nonsmooth })
}

/// Checks `f` with respect to every scalar of every parameter in `store`.
pub fn grad_check_params<F>(mut f: F, store: &ParamStore, eps: f64, tol: f64) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(BatError::Argument(format!("eps must be positive, got {eps}")));
    }
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    scalar_value(&tape, out)?;
    let base = tape.branch_signature();
    tape.backward(out)?;
    tape.accumulate_param_grads(&mut work);
    let analytic: Vec<Vec<f64>> = work.iter().map(|p| p.grad.clone()).collect();

    let mut eval = |work: &ParamStore| -> Result<Probe> {
        let mut t = Tape::new();
        let o = f(&mut t, work)?;
        Ok(Probe { value: scalar_value(&t, o)?, signature: t.branch_signature() })
    };
    let mut entries = Vec::with_capacity(store.len());
    let (mut checked, mut nonsmooth) = (0, 0);
    for (pi, id) in store.ids().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..store.get(id).tensor.len() {
            let orig = store.get(id).tensor.data()[j];
            work.get_mut(id).tensor.data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[j] = orig;
            if up.signature != base || down.signature != base {
                nonsmooth += 1;
                continue;
            }
            checked += 1;
            worst = worst.max(rel_error(analytic[pi][j], (up.value - down.value) / (2.0 * eps)));
        }
        entries.push((store.get(id).name.clone(), worst));
    }
    Ok(GradReport { entries, tol, checked, nonsmooth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let v = tape.input(x.clone());
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[2.0, 4.0]);

        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn non_finite_intermediate_names_op() {
        let x = Tensor::from_vec(vec![f64::MAX]);
        let err = grad_check(
            |t, v| {
                let y = t.scale(v[0], 10.0);
                Ok(t.sum(y))
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, BatError::Numeric { ref op, .. } if op == "scale"), "{err}");
    }

    #[test]
    fn relu_kink_is_skipped_not_compared() {
        let x = Tensor::from_vec(vec![0.0, 1.0, -2.0]);
        let report = grad_check(
            |t, v| {
                let r = t.relu(v[0]);
                Ok(t.sum(r))
            },
            &[x],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert_eq!((report.checked, report.nonsmooth), (2, 1));
        assert!(report.passed());
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[Tensor::from_vec(vec![1.0])], 0.0, 1e-4);
        assert!(r.is_err());
    }
}
