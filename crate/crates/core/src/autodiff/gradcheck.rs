//! Central-difference gradient checking.

use super::{Tape, Tensor, TensorError, Var};

/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-8;

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64, TensorError>
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let leaf = tape.constant(x.clone());
    let out = f(&mut tape, leaf)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(TensorError::NotScalar(value.shape().to_vec()));
    }
    Ok(value.item())
}

/// Gradient of a scalar function computed by reverse mode.
pub fn analytic_gradient<F>(f: &F, x: &Tensor) -> Result<Vec<f64>, TensorError>
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone().with_requires_grad(true));
    let out = f(&mut tape, leaf)?;
    tape.backward(out)?;
    Ok(tape.grad(leaf).expect("requires_grad leaf has a gradient").to_vec())
}

/// Central-difference estimate `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn numeric_gradient<F>(f: &F, x: &Tensor, eps: f64) -> Result<Vec<f64>, TensorError>
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Result<Var, TensorError>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = evaluate(f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = evaluate(f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Maximum over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must be deterministic; two evaluations at `x` that disagree are
/// reported as [`TensorError::NonDeterministic`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Result<Var, TensorError>,
{
    if !(eps > 0.0) {
        return Err(TensorError::InvalidStep(eps));
    }
    let first = evaluate(&f, x)?;
    let second = evaluate(&f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic {
            first,
            second,
        });
    }
    let analytic = analytic_gradient(&f, x)?;
    let numeric = numeric_gradient(&f, x, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let x = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let err = grad_check(
            |t, x| {
                let y = t.scale(x, 3.0)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn random_dropout_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0u64);
        let x = Tensor::vector(vec![1.0; 16]);
        let res = grad_check(
            |t, x| {
                use rand::SeedableRng;
                calls.set(calls.get() + 1);
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(calls.get());
                let y = t.dropout(x, 0.5, &mut rng, true)?;
                t.sum(y)
            },
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(TensorError::NonDeterministic { .. })));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(grad_check(|t, x| t.sum(x), &x, 0.0), Err(TensorError::InvalidStep(_))));
    }
}
