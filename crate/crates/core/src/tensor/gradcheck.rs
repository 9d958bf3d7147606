//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::parallel::{map_range, Execution};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over all checked elements of `|a - n| / max(|a|, |n|, floor)`
    /// with `floor = REL_FLOOR * max(1, |f(x)|)`.
    pub max_rel_error: f64,
    /// Max relative error per input tensor.
    pub per_input: Vec<f64>,
    /// `(input, element)` where the max was attained.
    pub worst: Option<(usize, usize)>,
    pub elements: usize,
    /// Elements whose `x +- h` stencil crossed a PReLU kink and were
    /// re-differenced with a smaller step.
    pub refined: usize,
}

/// Smallest step tried when a stencil straddles a kink.
pub const MIN_STEP: f64 = 1e-8;

/// Gradient entries smaller than this fraction of `|f|` are compared on that
/// scale. Central differences of a value `f` carry rounding noise of roughly
/// `eps_mach * |f| / h` (about `2e-11 |f|` at `h = 1e-5`), so a relative error
/// on entries far below `|f|` would measure the oracle, not the gradient.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, 1e-8)
}

pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok((v.item(), tape.activation_pattern()))
}

/// Compares tape gradients of the scalar function `f` at `inputs` against
/// central differences `(f(x+h) - f(x-h)) / 2h`, element by element.
///
/// A central difference is only an estimate of the derivative when `f` is
/// smooth on `[x - h, x + h]`. If either probe lands on the other side of a
/// PReLU kink than `x`, the step for that element is divided by 10 until it
/// does not (down to [`MIN_STEP`]); such elements are counted in `refined`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    grad_check_with(f, inputs, h, Execution::default())
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], h: f64, exec: Execution) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.value(out).clone();
    let grads = tape.backward(out)?;
    let (again, pattern) = eval_scalar(&f, inputs)?;
    if again.to_bits() != f0.item().to_bits() {
        return Err(Error::contract(
            "function under grad_check is not deterministic (two evaluations differ)",
        ));
    }

    // flat list of (input, element)
    let index: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
        .collect();
    let numeric = map_range(exec, index.len(), |k| -> Result<(f64, bool)> {
        let (i, e) = index[k];
        let mut xs = inputs.to_vec();
        let x0 = xs[i].data()[e];
        let mut step = h;
        loop {
            xs[i].data_mut()[e] = x0 + step;
            let (fp, pp) = eval_scalar(&f, &xs)?;
            xs[i].data_mut()[e] = x0 - step;
            let (fm, pm) = eval_scalar(&f, &xs)?;
            let smooth = pp == pattern && pm == pattern;
            if smooth || step / 10.0 < MIN_STEP {
                return Ok(((fp - fm) / (2.0 * step), step != h));
            }
            step /= 10.0;
        }
    });

    let floor = REL_FLOOR * f0.item().abs().max(1.0);
    let mut per_input = vec![0.0f64; inputs.len()];
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut refined = 0;
    for (k, num) in numeric.into_iter().enumerate() {
        let (num, was_refined) = num?;
        refined += was_refined as usize;
        let (i, e) = index[k];
        let ana = grads.get(vars[i]).map_or(0.0, |g| g.data()[e]);
        let err = relative_error_floor(ana, num, floor);
        if err > per_input[i] {
            per_input[i] = err;
        }
        if err > max_rel_error || worst.is_none() {
            max_rel_error = max_rel_error.max(err);
            worst = Some((i, e));
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_input,
        worst,
        elements: index.len(),
        refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_no_error() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.1, 5.0, -0.7]).unwrap();
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[x], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.elements, 6);
    }

    #[test]
    fn rejects_nondeterministic_function() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let counter = AtomicU64::new(0);
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let res = grad_check(
            |t, v| {
                let bump = counter.fetch_add(1, Ordering::SeqCst) as f64;
                let s = t.sum(v[0]);
                Ok(t.add_scalar(s, bump))
            },
            &[x],
            1e-5,
        );
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn kink_straddling_stencil_is_refined() {
        // prelu(x) with x a step of 3e-6 above the kink: h = 1e-5 straddles it
        let x = Tensor::new(vec![1], vec![3e-6]).unwrap();
        let s = Tensor::new(vec![1], vec![0.25]).unwrap();
        let r = grad_check(
            |t, v| {
                let y = t.prelu(v[0], v[1])?;
                Ok(t.sum(y))
            },
            &[x, s],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.refined, 1);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|t, v| Ok(t.sum(v[0])), &[x], 0.0).is_err());
    }
}
