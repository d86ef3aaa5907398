//! Discrete skills, the trainable skill encoder, continuous skill sampling and
//! the skill-diversity objective.
//!
//! A discrete skill `z` in `0..C` is embedded into a `d`-dimensional mean
//! `mu_z` by a single trainable lookup layer. Continuous skills are drawn
//! around that mean and squashed into `(-1, 1)^d` with `tanh`.

use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::sampling::{normals, open_unit};
use crate::tensor::{Adam, Module, Tape, Tensor, TensorError, Var};

/// Squashed components are clamped to `±SQUASH_LIMIT` so that they stay
/// strictly inside `(-1, 1)` even where `tanh` rounds to one in `f32`.
pub const SQUASH_LIMIT: f64 = 1.0 - 1e-6;

/// Embedding norms below this are treated as degenerate.
pub const MIN_EMBEDDING_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkillError {
    #[error("skill index {z} out of range for {count} skills")]
    Index { z: usize, count: usize },
    #[error("skill {z} has a degenerate embedding (norm {norm:e})")]
    DegenerateEmbedding { z: usize, norm: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteSkill {
    z: usize,
    count: usize,
}

impl DiscreteSkill {
    pub fn new(z: usize, count: usize) -> Result<Self, SkillError> {
        if z >= count {
            return Err(SkillError::Index { z, count });
        }
        Ok(Self { z, count })
    }

    /// Draws from the uniform prior `p(z)`.
    pub fn sample<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Self {
        Self { z: rng.random_range(0..count), count }
    }

    pub fn index(self) -> usize {
        self.z
    }

    pub fn count(self) -> usize {
        self.count
    }

    /// `ln p(z)` under the uniform prior.
    pub fn log_prior(self) -> f64 {
        -libm::log(self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSkill {
    pub raw: Vec<f32>,
    pub squashed: Vec<f32>,
}

impl ContinuousSkill {
    pub fn from_raw(raw: Vec<f32>) -> Self {
        let squashed = raw.iter().map(|&x| squash(x)).collect();
        Self { raw, squashed }
    }

    pub fn dim(&self) -> usize {
        self.squashed.len()
    }
}

pub fn squash<F: Real>(x: F) -> F {
    let lim = F::lit(SQUASH_LIMIT);
    x.tanh().max(-lim).min(lim)
}

/// Which norm divides `tanh(mu)` in the unit embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingNorm {
    /// `tanh(mu) / ||mu||` (default).
    #[default]
    Mean,
    /// `tanh(mu) / ||tanh(mu)||`, a true unit vector.
    Squashed,
}

#[derive(Debug, Clone)]
pub struct SkillEncoder<F = f32> {
    table: Tensor<F>,
    sigma: F,
    norm: EmbeddingNorm,
}

impl<F: Real> SkillEncoder<F> {
    /// Table entries drawn from `N(0, 0.1^2)`.
    pub fn new<R: Rng + ?Sized>(count: usize, dim: usize, sigma: F, rng: &mut R) -> Self {
        let data: Vec<F> = normals::<F, _>(rng, count * dim).into_iter().map(|x| x * F::lit(0.1)).collect();
        let table = Tensor::new(vec![count, dim], data).unwrap().trainable();
        Self { table, sigma, norm: EmbeddingNorm::default() }
    }

    pub fn from_table(table: Tensor<F>, sigma: F) -> Result<Self, SkillError> {
        if table.shape().len() != 2 || table.shape()[0] == 0 {
            return Err(TensorError::Contract("encoder table must be a non-empty C x d matrix".into()).into());
        }
        let mut table = table;
        table.set_requires_grad(true);
        Ok(Self { table, sigma, norm: EmbeddingNorm::default() })
    }

    pub fn with_norm(mut self, norm: EmbeddingNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn count(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn sigma(&self) -> F {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: F) {
        self.sigma = sigma;
    }

    pub fn norm(&self) -> EmbeddingNorm {
        self.norm
    }

    pub fn table(&self) -> &Tensor<F> {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut Tensor<F> {
        &mut self.table
    }

    fn check(&self, z: DiscreteSkill) -> Result<usize, SkillError> {
        if z.index() >= self.count() {
            return Err(SkillError::Index { z: z.index(), count: self.count() });
        }
        Ok(z.index())
    }

    /// `mu_z`: row `z` of the table.
    pub fn encode(&self, z: DiscreteSkill) -> Result<&[F], SkillError> {
        let i = self.check(z)?;
        let d = self.dim();
        Ok(&self.table.data()[i * d..(i + 1) * d])
    }

    /// Differentiable lookup of several rows.
    pub fn encode_rows(&self, tape: &mut Tape<F>, idx: &[usize], track: bool) -> Result<Var, SkillError> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.count()) {
            return Err(SkillError::Index { z: bad, count: self.count() });
        }
        let t = tape.param(&self.table, track);
        Ok(tape.gather_rows(t, idx))
    }

    /// `raw ~ N(mu_z, sigma^2 I)`, `squashed = tanh(raw)`.
    pub fn sample_skill<R: Rng + ?Sized>(&self, z: DiscreteSkill, rng: &mut R) -> Result<ContinuousSkill, SkillError> {
        let mu = self.encode(z)?;
        let noise: Vec<f64> = normals(rng, mu.len());
        let sigma = self.sigma.to_f64().unwrap();
        let raw = mu.iter().zip(noise).map(|(&m, e)| (m.to_f64().unwrap() + sigma * e) as f32).collect();
        Ok(ContinuousSkill::from_raw(raw))
    }

    /// Noise-free skill `tanh(mu_z)`.
    pub fn mean_skill(&self, z: DiscreteSkill) -> Result<ContinuousSkill, SkillError> {
        let raw = self.encode(z)?.iter().map(|x| x.to_f32().unwrap()).collect();
        Ok(ContinuousSkill::from_raw(raw))
    }

    /// `tanh(mu_z) / ||mu_z||_2` (or the squashed-norm variant).
    pub fn unit_embedding(&self, z: DiscreteSkill) -> Result<Vec<F>, SkillError> {
        let mu = self.encode(z)?;
        let th: Vec<F> = mu.iter().map(|x| x.tanh()).collect();
        let denom = match self.norm {
            EmbeddingNorm::Mean => l2(mu),
            EmbeddingNorm::Squashed => l2(&th),
        };
        if denom.to_f64().unwrap() < MIN_EMBEDDING_NORM {
            return Err(SkillError::DegenerateEmbedding { z: z.index(), norm: denom.to_f64().unwrap() });
        }
        Ok(th.into_iter().map(|x| x / denom).collect())
    }

    fn check_norms(&self) -> Result<(), SkillError> {
        for z in 0..self.count() {
            let d = self.dim();
            let row = &self.table.data()[z * d..(z + 1) * d];
            let n = match self.norm {
                EmbeddingNorm::Mean => l2(row),
                EmbeddingNorm::Squashed => l2(&row.iter().map(|x| x.tanh()).collect::<Vec<_>>()),
            };
            if n.to_f64().unwrap() < MIN_EMBEDDING_NORM {
                return Err(SkillError::DegenerateEmbedding { z, norm: n.to_f64().unwrap() });
            }
        }
        Ok(())
    }

    /// Records `-sum_{k<l} ||mu_hat_k - mu_hat_l||_2` on the tape.
    pub fn sd_loss_var(&self, tape: &mut Tape<F>, track: bool) -> Result<Var, SkillError> {
        self.check_norms()?;
        let c = self.count();
        if c < 2 {
            return Ok(tape.scalar_const(F::zero()));
        }
        let all: Vec<usize> = (0..c).collect();
        let mu = self.encode_rows(tape, &all, track)?;
        let th = tape.tanh(mu);
        let denom_src = match self.norm {
            EmbeddingNorm::Mean => mu,
            EmbeddingNorm::Squashed => th,
        };
        let sq = tape.square(denom_src);
        let ss = tape.sum_cols(sq);
        let norms = tape.sqrt(ss);
        let unit = tape.div_col(th, norms);

        let (mut left, mut right) = (Vec::new(), Vec::new());
        for k in 0..c {
            for l in k + 1..c {
                left.push(k);
                right.push(l);
            }
        }
        let a = tape.gather_rows(unit, &left);
        let b = tape.gather_rows(unit, &right);
        let diff = tape.sub(a, b);
        let dsq = tape.square(diff);
        let dss = tape.sum_cols(dsq);
        let dist = tape.sqrt(dss);
        let total = tape.sum(dist);
        Ok(tape.neg(total))
    }

    pub fn sd_loss(&self) -> Result<F, SkillError> {
        let mut tape = Tape::new();
        let v = self.sd_loss_var(&mut tape, false)?;
        Ok(tape.scalar(v))
    }

    /// One optimizer step on the skill-diversity objective; returns the loss
    /// before the step.
    pub fn sd_step(&mut self, adam: &mut Adam<F>) -> Result<F, SkillError> {
        let mut tape = Tape::new();
        let loss = self.sd_loss_var(&mut tape, true)?;
        let value = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        self.load_grads(&grads);
        adam.step(&mut self.params_mut())?;
        Ok(value)
    }

    /// Smallest pairwise distance between unit embeddings.
    pub fn min_pairwise_distance(&self) -> Result<F, SkillError> {
        let units: Vec<Vec<F>> =
            (0..self.count()).map(|z| self.unit_embedding(DiscreteSkill { z, count: self.count() })).collect::<Result<_, _>>()?;
        let mut best = F::infinity();
        for k in 0..units.len() {
            for l in k + 1..units.len() {
                let d: F = units[k].iter().zip(&units[l]).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>().sqrt();
                best = best.min(d);
            }
        }
        Ok(best)
    }

    pub fn cast<G: Real>(&self) -> SkillEncoder<G> {
        SkillEncoder { table: self.table.cast(), sigma: G::lit(self.sigma.to_f64().unwrap()), norm: self.norm }
    }
}

crate::persist_via_module!(SkillEncoder);

impl<F: Real> Module<F> for SkillEncoder<F> {
    fn params(&self) -> Vec<&Tensor<F>> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![&mut self.table]
    }

    fn param_names(&self) -> Vec<alloc::string::String> {
        vec![format!("embedding")]
    }
}

/// Continuous skill drawn uniformly on `(-1, 1)^d`, independent of the encoder.
pub fn sample_random_skill<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ContinuousSkill {
    let squashed: Vec<f32> = (0..dim).map(|_| (open_unit(rng).clamp(-SQUASH_LIMIT, SQUASH_LIMIT)) as f32).collect();
    let raw = squashed.iter().map(|&s| libm::atanhf(s)).collect();
    ContinuousSkill { raw, squashed }
}

fn l2<F: Real>(x: &[F]) -> F {
    x.iter().map(|&v| v * v).sum::<F>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::AdamConfig;
    use crate::Rng as ChaCha;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn encoder_with(rows: &[&[f64]]) -> SkillEncoder<f64> {
        let d = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SkillEncoder::from_table(Tensor::new(vec![rows.len(), d], data).unwrap(), 0.3).unwrap()
    }

    fn skill(z: usize, c: usize) -> DiscreteSkill {
        DiscreteSkill::new(z, c).unwrap()
    }

    #[test]
    fn out_of_range_skill_is_an_index_error() {
        assert_eq!(DiscreteSkill::new(10, 10), Err(SkillError::Index { z: 10, count: 10 }));
        let enc = encoder_with(&[&[1.0, 0.0]]);
        assert!(matches!(enc.encode(DiscreteSkill { z: 3, count: 5 }), Err(SkillError::Index { .. })));
    }

    #[test]
    fn zero_table_encodes_zero() {
        let enc = SkillEncoder::<f64>::from_table(Tensor::zeros(&[4, 3]), 0.3).unwrap();
        assert_eq!(enc.encode(skill(2, 4)).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_is_a_row_lookup() {
        let enc = encoder_with(&[&[0.0, 0.0], &[1.0, -1.0]]);
        assert_eq!(enc.encode(skill(1, 2)).unwrap(), &[1.0, -1.0]);
    }

    #[test]
    fn zero_sigma_sample_equals_mean() {
        let mut rng = ChaCha::seed_from_u64(0);
        let mut enc = encoder_with(&[&[0.25, -0.5, 0.125]]);
        enc.set_sigma(0.0);
        let s = enc.sample_skill(skill(0, 1), &mut rng).unwrap();
        assert_eq!(s.raw, vec![0.25f32, -0.5, 0.125]);
        for (q, r) in s.squashed.iter().zip(&s.raw) {
            assert_eq!(*q, r.tanh());
        }
    }

    #[test]
    fn squashed_stays_strictly_inside_even_when_saturated() {
        let s = ContinuousSkill::from_raw(vec![50.0, -50.0, 0.0]);
        assert!(s.squashed.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let mut rng = ChaCha::seed_from_u64(42);
        let mu = [0.4, -0.2, 0.0, 0.1];
        let enc = encoder_with(&[&mu]);
        let n = 100_000;
        let mut sum = [0.0f64; 4];
        for _ in 0..n {
            let s = enc.sample_skill(skill(0, 1), &mut rng).unwrap();
            for (a, r) in sum.iter_mut().zip(&s.raw) {
                *a += *r as f64;
            }
        }
        let se = 0.3 / (n as f64).sqrt();
        for (a, m) in sum.iter().zip(mu) {
            assert!((a / n as f64 - m).abs() < 3.0 * se, "{} vs {m}", a / n as f64);
        }
    }

    #[test]
    fn unit_embedding_with_unit_mean_is_tanh() {
        let mu = [0.6, 0.8];
        let enc = encoder_with(&[&mu]);
        let u = enc.unit_embedding(skill(0, 1)).unwrap();
        assert_abs_diff_eq!(u[0], 0.6f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 0.8f64.tanh(), epsilon = 1e-15);
    }

    #[test]
    fn unit_embedding_of_large_axis_vector() {
        let enc = encoder_with(&[&[10.0, 0.0, 0.0]]);
        let u = enc.unit_embedding(skill(0, 1)).unwrap();
        assert_abs_diff_eq!(u[0], 10f64.tanh() / 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[0], 0.1, epsilon = 1e-8);
        assert_eq!(&u[1..], &[0.0, 0.0]);
    }

    #[test]
    fn unit_embedding_is_not_scale_invariant() {
        let a = encoder_with(&[&[0.5, 1.0]]).unit_embedding(skill(0, 1)).unwrap();
        let b = encoder_with(&[&[1.0, 2.0]]).unit_embedding(skill(0, 1)).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn zero_norm_row_is_degenerate() {
        let enc = encoder_with(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(enc.unit_embedding(skill(0, 2)), Err(SkillError::DegenerateEmbedding { z: 0, .. })));
        assert!(matches!(enc.sd_loss(), Err(SkillError::DegenerateEmbedding { z: 0, .. })));
    }

    #[test]
    fn single_skill_has_zero_diversity_loss() {
        assert_eq!(encoder_with(&[&[0.3, 0.1]]).sd_loss().unwrap(), 0.0);
    }

    #[test]
    fn antipodal_unit_pair_gives_minus_two() {
        let enc = encoder_with(&[&[1.0, 0.0], &[-1.0, 0.0]]).with_norm(EmbeddingNorm::Squashed);
        assert_abs_diff_eq!(enc.sd_loss().unwrap(), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn three_skills_at_120_degrees_reach_the_circle_optimum() {
        // Brute-force the optimum of -sum pairwise distances over three unit
        // vectors in the plane: fix one at angle 0 and grid the other two.
        let mut best = 0.0f64;
        let steps = 720;
        for i in 0..steps {
            for j in 0..steps {
                let (a, b) = (
                    i as f64 * core::f64::consts::TAU / steps as f64,
                    j as f64 * core::f64::consts::TAU / steps as f64,
                );
                let p = [(1.0, 0.0), (a.cos(), a.sin()), (b.cos(), b.sin())];
                let d = |u: (f64, f64), v: (f64, f64)| ((u.0 - v.0).powi(2) + (u.1 - v.1).powi(2)).sqrt();
                best = best.min(-(d(p[0], p[1]) + d(p[0], p[2]) + d(p[1], p[2])));
            }
        }
        assert_abs_diff_eq!(best, -5.196152, epsilon = 1e-5);

        let angles = [0.0f64, 2.0 * core::f64::consts::FRAC_PI_3, 4.0 * core::f64::consts::FRAC_PI_3];
        // Pick mu with tanh(mu) on the unit circle so mu_hat is exactly unit length.
        let rows: Vec<[f64; 2]> = angles.iter().map(|t| [(0.8 * t.cos()).atanh(), (0.8 * t.sin()).atanh()]).collect();
        let enc = encoder_with(&[&rows[0], &rows[1], &rows[2]]).with_norm(EmbeddingNorm::Squashed);
        assert_abs_diff_eq!(enc.sd_loss().unwrap(), best, epsilon = 1e-5);
    }

    #[test]
    fn sd_loss_is_permutation_invariant() {
        let a = encoder_with(&[&[0.3, 0.1], &[-0.2, 0.4], &[0.05, -0.3]]);
        let b = encoder_with(&[&[0.05, -0.3], &[0.3, 0.1], &[-0.2, 0.4]]);
        assert_abs_diff_eq!(a.sd_loss().unwrap(), b.sd_loss().unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn encoder_gradient_touches_only_looked_up_rows() {
        let enc = encoder_with(&[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]]);
        let mut tape = Tape::new();
        let rows = enc.encode_rows(&mut tape, &[1], true).unwrap();
        let l = tape.sum(rows);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(enc.table().id()).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sd_loss_decreases_over_early_updates() {
        let mut rng = ChaCha::seed_from_u64(5);
        let mut enc = SkillEncoder::<f32>::new(10, 7, 0.3, &mut rng);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-5));
        let start = enc.sd_loss().unwrap();
        for _ in 0..100 {
            enc.sd_step(&mut adam).unwrap();
        }
        assert!(enc.sd_loss().unwrap() < start);
    }

    #[test]
    fn random_skills_are_inside_the_box_and_centered() {
        let mut rng = ChaCha::seed_from_u64(9);
        let n = 100_000;
        let mut sum = [0.0f64; 7];
        for _ in 0..n {
            let s = sample_random_skill(7, &mut rng);
            assert!(s.squashed.iter().all(|x| x.abs() < 1.0));
            for (a, x) in sum.iter_mut().zip(&s.squashed) {
                *a += *x as f64;
            }
        }
        assert!(sum.iter().all(|a| (a / n as f64).abs() < 0.02));
    }
}
