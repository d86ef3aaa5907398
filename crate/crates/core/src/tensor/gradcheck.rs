use alloc::vec::Vec;

use super::{Module, Tape, TensorError, Var};
use crate::real::Real;

/// Compares tape gradients against central differences for every parameter
/// element of `module`.
///
/// Returns `max |analytic - numeric| / max(1, |analytic|)`. `loss` must be a
/// deterministic function of the parameters (draw any noise up front).
pub fn finite_diff_check<F, M, L>(module: &mut M, mut loss: L, epsilon: F) -> Result<F, TensorError>
where
    F: Real,
    M: Module<F>,
    L: FnMut(&M, &mut Tape<F>) -> Result<Var, TensorError>,
{
    if !(epsilon > F::zero()) {
        return Err(TensorError::Contract("finite-difference epsilon must be positive".into()));
    }
    let mut tape = Tape::new();
    let l = loss(module, &mut tape)?;
    let grads = tape.backward(l)?;
    let analytic: Vec<Vec<F>> = module
        .params()
        .iter()
        .map(|p| grads.param(p.id()).map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![F::zero(); p.len()]))
        .collect();
    drop(tape);

    let eval = |m: &M, loss: &mut L| -> Result<F, TensorError> {
        let mut t = Tape::new();
        let v = loss(m, &mut t)?;
        Ok(t.scalar(v))
    };

    let two = F::one() + F::one();
    let mut worst = F::zero();
    let n_params = analytic.len();
    for pi in 0..n_params {
        let len = analytic[pi].len();
        for ei in 0..len {
            let orig = module.params()[pi].data()[ei];
            module.params_mut()[pi].data_mut()[ei] = orig + epsilon;
            let up = eval(module, &mut loss)?;
            module.params_mut()[pi].data_mut()[ei] = orig - epsilon;
            let down = eval(module, &mut loss)?;
            module.params_mut()[pi].data_mut()[ei] = orig;

            let numeric = (up - down) / (two * epsilon);
            let a = analytic[pi][ei];
            let err = (a - numeric).abs() / a.abs().max(F::one());
            if !err.is_finite() {
                return Err(TensorError::NonFinite("finite-difference check"));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, Mlp};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_small_mlp_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mlp = Mlp::<f64>::new(3, &[6, 5], 2, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let err = finite_diff_check(
            &mut mlp,
            |m, t| {
                let xv = t.constant(4, 3, x.clone());
                let y = m.forward(t, xv)?;
                let sq = t.square(y);
                Ok(t.mean(sq))
            },
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn linear_loss_is_exact_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::<f64>::new(2, &[], 1, Activation::Linear, &mut rng);
        let err = finite_diff_check(
            &mut mlp,
            |m, t| {
                let xv = t.constant(1, 2, vec![0.5, -1.5]);
                let y = m.forward(t, xv)?;
                Ok(t.sum(y))
            },
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mlp = Mlp::<f64>::new(2, &[3], 1, Activation::Relu, &mut rng);
        let err = finite_diff_check(&mut mlp, |_, t| Ok(t.scalar_const(4.2)), 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_positive_epsilon_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mlp = Mlp::<f64>::new(2, &[3], 1, Activation::Relu, &mut rng);
        assert!(finite_diff_check(&mut mlp, |_, t| Ok(t.scalar_const(0.0)), 0.0).is_err());
    }
}
