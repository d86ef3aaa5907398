use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;
use crate::tensor::{Activation, Module, Mlp, Persist, Tape, Tensor, TensorError, Var};

/// Two Q networks with Polyak-averaged targets. With `twin` off only the
/// first network is used and the "minimum" is that network alone.
#[derive(Debug, Clone)]
pub struct TwinCritic<F = f32> {
    q1: Mlp<F>,
    q2: Mlp<F>,
    t1: Mlp<F>,
    t2: Mlp<F>,
    twin: bool,
}

impl<F: Real> TwinCritic<F> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], twin: bool, rng: &mut R) -> Self {
        let q1 = Mlp::new(input_dim, hidden, 1, Activation::Relu, rng);
        let q2 = Mlp::new(input_dim, hidden, 1, Activation::Relu, rng);
        let (t1, t2) = (q1.clone(), q2.clone());
        Self { q1, q2, t1, t2, twin }
    }

    pub fn from_nets(q1: Mlp<F>, q2: Mlp<F>, twin: bool) -> Result<Self, TensorError> {
        if q1.input_dim() != q2.input_dim() || q1.output_dim() != 1 || q2.output_dim() != 1 {
            return Err(TensorError::Contract("twin critics must share the input width and emit one value".into()));
        }
        let (t1, t2) = (q1.clone(), q2.clone());
        Ok(Self { q1, q2, t1, t2, twin })
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    pub fn twin(&self) -> bool {
        self.twin
    }

    pub fn online(&self) -> (&Mlp<F>, &Mlp<F>) {
        (&self.q1, &self.q2)
    }

    pub fn online_mut(&mut self) -> (&mut Mlp<F>, &mut Mlp<F>) {
        (&mut self.q1, &mut self.q2)
    }

    pub fn targets(&self) -> (&Mlp<F>, &Mlp<F>) {
        (&self.t1, &self.t2)
    }

    /// Online values on the tape: `(q1, Some(q2))`, or `(q1, None)` without twin.
    pub fn forward(&self, tape: &mut Tape<F>, x: Var, track: bool) -> Result<(Var, Option<Var>), TensorError> {
        let f = |m: &Mlp<F>, tape: &mut Tape<F>| if track { m.forward(tape, x) } else { m.forward_frozen(tape, x) };
        let a = f(&self.q1, tape)?;
        let b = if self.twin { Some(f(&self.q2, tape)?) } else { None };
        Ok((a, b))
    }

    /// Elementwise minimum of the online critics on the tape.
    pub fn min_var(&self, tape: &mut Tape<F>, x: Var, track: bool) -> Result<Var, TensorError> {
        match self.forward(tape, x, track)? {
            (a, Some(b)) => Ok(tape.minimum(a, b)),
            (a, None) => Ok(a),
        }
    }

    fn min_of(&self, a: &Mlp<F>, b: &Mlp<F>, x: &[F], rows: usize) -> Result<Vec<F>, TensorError> {
        let va = a.infer(x, rows)?;
        if !self.twin {
            return Ok(va);
        }
        let vb = b.infer(x, rows)?;
        Ok(va.into_iter().zip(vb).map(|(p, q)| p.min(q)).collect())
    }

    pub fn target_min(&self, x: &[F], rows: usize) -> Result<Vec<F>, TensorError> {
        self.min_of(&self.t1, &self.t2, x, rows)
    }

    pub fn online_min(&self, x: &[F], rows: usize) -> Result<Vec<F>, TensorError> {
        self.min_of(&self.q1, &self.q2, x, rows)
    }

    /// `target <- tau * online + (1 - tau) * target`.
    pub fn polyak(&mut self, tau: F) -> Result<(), TensorError> {
        if !(tau >= F::zero() && tau <= F::one()) {
            return Err(TensorError::Contract(format!("polyak factor {tau} outside [0, 1]")));
        }
        self.t1.soft_update_from(&self.q1, tau);
        self.t2.soft_update_from(&self.q2, tau);
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> TwinCritic<G> {
        TwinCritic { q1: self.q1.cast(), q2: self.q2.cast(), t1: self.t1.cast(), t2: self.t2.cast(), twin: self.twin }
    }
}

impl<F: Real> Module<F> for TwinCritic<F> {
    fn params(&self) -> Vec<&Tensor<F>> {
        let mut v = self.q1.params();
        v.extend(self.q2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut v = self.q1.params_mut();
        v.extend(self.q2.params_mut());
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.q1.param_names().into_iter().map(|n| format!("q1.{n}")).collect();
        v.extend(self.q2.param_names().into_iter().map(|n| format!("q2.{n}")));
        v
    }
}

impl<F: Real> Persist<F> for TwinCritic<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut v: Vec<(String, &Tensor<F>)> = self.param_names().into_iter().zip(self.params()).collect();
        for (tag, net) in [("target1", &self.t1), ("target2", &self.t2)] {
            v.extend(net.param_names().into_iter().map(|n| format!("{tag}.{n}")).zip(net.params()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let names = self.param_names();
        let n1 = self.t1.param_names();
        let n2 = self.t2.param_names();
        let mut v: Vec<(String, &mut Tensor<F>)> = Vec::new();
        let mut online = self.q1.params_mut();
        online.extend(self.q2.params_mut());
        v.extend(names.into_iter().zip(online));
        v.extend(n1.into_iter().map(|n| format!("target1.{n}")).zip(self.t1.params_mut()));
        v.extend(n2.into_iter().map(|n| format!("target2.{n}")).zip(self.t2.params_mut()));
        v
    }
}
