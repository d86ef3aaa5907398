//! Skill discriminator `q(z | phi(s))`, its cross-entropy loss and the
//! mutual-information reward derived from it.

use alloc::vec::Vec;
use alloc::{format, string::String};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::skill::DiscreteSkill;
use crate::tensor::{Activation, Adam, Module, Mlp, Tape, Tensor, TensorError, Var};

/// Probabilities are floored here before any logarithm.
pub const PROB_FLOOR: f64 = 1e-8;

/// State preprocessing applied before the discriminator network.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "indices")]
pub enum FeatureMap {
    #[default]
    Identity,
    /// Keep only the listed state coordinates, in order.
    Select(Vec<usize>),
}

impl FeatureMap {
    pub fn output_dim(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => state_dim,
            FeatureMap::Select(idx) => idx.len(),
        }
    }

    /// Maps `rows` stacked states of width `state_dim`.
    pub fn apply<F: Copy>(&self, states: &[F], state_dim: usize) -> Result<Vec<F>, TensorError> {
        if state_dim == 0 || states.len() % state_dim != 0 {
            return Err(TensorError::Dimension { op: "feature map", expected: state_dim, found: states.len() });
        }
        match self {
            FeatureMap::Identity => Ok(states.to_vec()),
            FeatureMap::Select(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= state_dim) {
                    return Err(TensorError::Index { index: bad, len: state_dim });
                }
                Ok(states.chunks(state_dim).flat_map(|row| idx.iter().map(move |&i| row[i])).collect())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<F = f32> {
    net: Mlp<F>,
    feature_map: FeatureMap,
    state_dim: usize,
}

impl<F: Real> Discriminator<F> {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, feature_map: FeatureMap, hidden: &[usize], count: usize, rng: &mut R) -> Self {
        let net = Mlp::new(feature_map.output_dim(state_dim), hidden, count, Activation::Relu, rng);
        Self { net, feature_map, state_dim }
    }

    pub fn from_net(net: Mlp<F>, feature_map: FeatureMap, state_dim: usize) -> Result<Self, TensorError> {
        let want = feature_map.output_dim(state_dim);
        if net.input_dim() != want {
            return Err(TensorError::Dimension { op: "discriminator", expected: want, found: net.input_dim() });
        }
        Ok(Self { net, feature_map, state_dim })
    }

    pub fn count(&self) -> usize {
        self.net.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn net(&self) -> &Mlp<F> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<F> {
        &mut self.net
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    fn rows(&self, states: &[F]) -> Result<usize, TensorError> {
        if states.is_empty() || states.len() % self.state_dim != 0 {
            return Err(TensorError::Dimension { op: "discriminator input", expected: self.state_dim, found: states.len() });
        }
        Ok(states.len() / self.state_dim)
    }

    /// Softmax over skills for each stacked state.
    pub fn predict_batch(&self, states: &[F]) -> Result<Vec<F>, TensorError> {
        let rows = self.rows(states)?;
        let feats = self.feature_map.apply(states, self.state_dim)?;
        let mut logits = self.net.infer(&feats, rows)?;
        for row in logits.chunks_mut(self.count()) {
            softmax_in_place(row);
        }
        Ok(logits)
    }

    pub fn predict(&self, state: &[F]) -> Result<Vec<F>, TensorError> {
        if state.len() != self.state_dim {
            return Err(TensorError::Dimension { op: "discriminator input", expected: self.state_dim, found: state.len() });
        }
        self.predict_batch(state)
    }

    /// Floored log-probabilities `max(log q, ln 1e-8)` on the tape.
    pub fn log_probs_var(&self, tape: &mut Tape<F>, states: &[F], track: bool) -> Result<Var, TensorError> {
        let rows = self.rows(states)?;
        let feats = self.feature_map.apply(states, self.state_dim)?;
        let x = tape.constant(rows, self.net.input_dim(), feats);
        let logits = if track { self.net.forward(tape, x)? } else { self.net.forward_frozen(tape, x)? };
        let lp = tape.log_softmax(logits);
        Ok(tape.clamp(lp, F::lit(libm::log(PROB_FLOOR)), F::zero()))
    }

    /// Mean one-hot cross-entropy `-(1/B) sum_j log q(z_j | s_j)`.
    pub fn ce_loss_var(&self, tape: &mut Tape<F>, states: &[F], labels: &[usize], track: bool) -> Result<Var, TensorError> {
        if labels.is_empty() {
            return Err(TensorError::Contract("cross-entropy of an empty batch".into()));
        }
        let rows = self.rows(states)?;
        if rows != labels.len() {
            return Err(TensorError::Dimension { op: "ce_loss labels", expected: rows, found: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&z| z >= self.count()) {
            return Err(TensorError::Index { index: bad, len: self.count() });
        }
        let lp = self.log_probs_var(tape, states, track)?;
        let picked = tape.pick_cols(lp, labels);
        let m = tape.mean(picked);
        Ok(tape.neg(m))
    }

    pub fn ce_loss(&self, states: &[F], labels: &[usize]) -> Result<F, TensorError> {
        if labels.is_empty() {
            return Err(TensorError::Contract("cross-entropy of an empty batch".into()));
        }
        let mut tape = Tape::new();
        let l = self.ce_loss_var(&mut tape, states, labels, false)?;
        Ok(tape.scalar(l))
    }

    /// One Adam step on the cross-entropy; returns the pre-step loss.
    pub fn update(&mut self, adam: &mut Adam<F>, states: &[F], labels: &[usize]) -> Result<F, TensorError> {
        let mut tape = Tape::new();
        let l = self.ce_loss_var(&mut tape, states, labels, true)?;
        let value = tape.scalar(l);
        let grads = tape.backward(l)?;
        self.load_grads(&grads);
        adam.step(&mut self.params_mut())?;
        Ok(value)
    }

    /// `R_f = ln C + ln q(z | phi(s'))` with the log floored.
    pub fn intrinsic_reward(&self, next_state: &[F], z: DiscreteSkill) -> Result<f64, TensorError> {
        let q = self.predict(next_state)?;
        if z.index() >= q.len() {
            return Err(TensorError::Index { index: z.index(), len: q.len() });
        }
        Ok(mi_reward(q[z.index()].to_f64().unwrap(), q.len()))
    }

    /// Rewards for stacked next states, one skill label per row.
    pub fn intrinsic_rewards(&self, next_states: &[F], labels: &[usize]) -> Result<Vec<f64>, TensorError> {
        let q = self.predict_batch(next_states)?;
        let c = self.count();
        if q.len() / c != labels.len() {
            return Err(TensorError::Dimension { op: "intrinsic reward labels", expected: q.len() / c, found: labels.len() });
        }
        labels
            .iter()
            .enumerate()
            .map(|(r, &z)| {
                if z >= c {
                    return Err(TensorError::Index { index: z, len: c });
                }
                Ok(mi_reward(q[r * c + z].to_f64().unwrap(), c))
            })
            .collect()
    }

    pub fn cast<G: Real>(&self) -> Discriminator<G> {
        Discriminator { net: self.net.cast(), feature_map: self.feature_map.clone(), state_dim: self.state_dim }
    }
}

crate::persist_via_module!(Discriminator);

impl<F: Real> Module<F> for Discriminator<F> {
    fn params(&self) -> Vec<&Tensor<F>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.net.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names().into_iter().map(|n| format!("net.{n}")).collect()
    }
}

/// `-ln p(z) + ln max(q, 1e-8)` under a uniform prior over `count` skills.
pub fn mi_reward(q_true: f64, count: usize) -> f64 {
    libm::log(count as f64) + libm::log(q_true.max(PROB_FLOOR))
}

fn softmax_in_place<F: Real>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::normal;
    use crate::tensor::AdamConfig;
    use crate::Rng as ChaCha;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn zero_disc(state_dim: usize, count: usize) -> Discriminator<f64> {
        let mut rng = ChaCha::seed_from_u64(0);
        let mut d = Discriminator::new(state_dim, FeatureMap::Identity, &[8], count, &mut rng);
        for p in d.params_mut() {
            p.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        d
    }

    #[test]
    fn zero_net_predicts_uniform() {
        let d = zero_disc(3, 10);
        let q = d.predict(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(q.len(), 10);
        for p in q {
            assert_abs_diff_eq!(p, 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrong_width_is_a_dimension_error() {
        let d = zero_disc(3, 10);
        assert!(matches!(d.predict(&[0.0; 4]), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn uniform_cross_entropy_is_ln_c() {
        let d = zero_disc(2, 10);
        let l = d.ce_loss(&[0.0, 1.0, 2.0, 3.0], &[4, 7]).unwrap();
        assert_abs_diff_eq!(l, 10f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn empty_batch_is_a_contract_error() {
        let d = zero_disc(2, 10);
        assert!(matches!(d.ce_loss(&[], &[]), Err(TensorError::Contract(_))));
    }

    #[test]
    fn floored_and_perfect_predictions() {
        // A single linear layer with huge logits for one class.
        let mut d = zero_disc(1, 3);
        let mut rng = ChaCha::seed_from_u64(1);
        *d.net_mut() = Mlp::new(1, &[], 3, Activation::Relu, &mut rng);
        for p in d.params_mut() {
            p.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        d.params_mut()[1].data_mut().copy_from_slice(&[200.0, 0.0, 0.0]);
        assert_abs_diff_eq!(d.ce_loss(&[0.0], &[0]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.ce_loss(&[0.0], &[1]).unwrap(), -(1e-8f64.ln()), epsilon = 1e-9);
        assert_abs_diff_eq!(-(1e-8f64.ln()), 18.420680743952367, epsilon = 1e-12);
    }

    #[test]
    fn ce_matches_brute_force_log_likelihood() {
        let mut rng = ChaCha::seed_from_u64(3);
        let d = Discriminator::<f64>::new(4, FeatureMap::Identity, &[16, 16], 5, &mut rng);
        let states: Vec<f64> = (0..40).map(|_| normal(&mut rng)).collect();
        let labels = vec![0, 4, 2, 2, 1, 3, 0, 4, 1, 3];
        let brute: f64 = labels
            .iter()
            .enumerate()
            .map(|(j, &z)| {
                let q = d.predict(&states[j * 4..(j + 1) * 4]).unwrap();
                -q[z].max(PROB_FLOOR).ln()
            })
            .sum::<f64>()
            / labels.len() as f64;
        assert_abs_diff_eq!(d.ce_loss(&states, &labels).unwrap(), brute, epsilon = 1e-12);
    }

    #[test]
    fn reward_hand_values() {
        assert_abs_diff_eq!(mi_reward(1.0, 10), 10f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(mi_reward(0.1, 10), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mi_reward(0.5, 10), 1.6094379124341003, epsilon = 1e-12);
    }

    #[test]
    fn intrinsic_reward_of_uninformed_discriminator_is_zero() {
        let d = zero_disc(2, 10);
        let r = d.intrinsic_reward(&[1.0, -1.0], DiscreteSkill::new(3, 10).unwrap()).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn select_feature_map_picks_coordinates() {
        let m = FeatureMap::Select(vec![2, 0]);
        assert_eq!(m.apply(&[1, 2, 3, 4, 5, 6], 3).unwrap(), vec![3, 1, 6, 4]);
        assert!(m.apply(&[1, 2], 2).is_err());
    }

    #[test]
    fn separated_clusters_are_learned() {
        let mut rng = ChaCha::seed_from_u64(7);
        let centers = [[4.0f32, 0.0], [-4.0, 0.0], [0.0, 4.0], [0.0, -4.0]];
        let mut d = Discriminator::<f32>::new(2, FeatureMap::Identity, &[32, 32], 4, &mut rng);
        let mut adam = Adam::new(AdamConfig::with_lr(3e-4));
        let mut last = f32::INFINITY;
        for _ in 0..2000 {
            let mut states = Vec::with_capacity(128);
            let mut labels = Vec::with_capacity(64);
            for _ in 0..64 {
                let z = rng.random_range(0..4);
                states.push(centers[z][0] + 0.3 * normal(&mut rng) as f32);
                states.push(centers[z][1] + 0.3 * normal(&mut rng) as f32);
                labels.push(z);
            }
            last = d.update(&mut adam, &states, &labels).unwrap();
        }
        assert!(last < 0.1, "final loss {last}");
    }

    proptest! {
        #[test]
        fn reward_is_bounded(q in 0.0f64..=1.0, c in 2usize..50) {
            let r = mi_reward(q, c);
            let lnc = (c as f64).ln();
            prop_assert!(r <= lnc);
            prop_assert!(r >= lnc + PROB_FLOOR.ln());
        }

        #[test]
        fn probabilities_sum_to_one(x in proptest::collection::vec(-50.0f64..50.0, 3)) {
            let mut rng = ChaCha::seed_from_u64(11);
            let d = Discriminator::<f64>::new(3, FeatureMap::Identity, &[8], 6, &mut rng);
            let q = d.predict(&x).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(q.iter().all(|&p| p >= 0.0 && p <= 1.0));
        }
    }
}
