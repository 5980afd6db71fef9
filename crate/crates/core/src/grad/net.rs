//! Fully connected feed-forward networks with a flat parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::matrix::{gemm, Matrix, Trans};
use crate::grad::tape::{ParamId, Tape, Var};
use crate::grad::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Silu,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Silu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Silu),
            _ => None,
        }
    }

    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (F::one() + (-x).exp()),
        }
    }
}

/// Layers `dims[0] -> dims[1] -> ... -> dims[n]`. Layer `l` stores its
/// weights (`dims[l] x dims[l+1]`, row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<F> {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<F>,
    seed: u64,
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl<F: Real> DenseNet<F> {
    /// Hidden layers use `hidden`, the last layer `output`. Weights and
    /// biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        let layers = dims.len().saturating_sub(1);
        let activations = (0..layers)
            .map(|l| if l + 1 == layers { output } else { hidden })
            .collect();
        let mut net = Self::zeros(dims, activations)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[offset..offset + (w[0] + 1) * w[1]] {
                *p = F::of(rng.random_range(-bound..bound));
            }
            offset += (w[0] + 1) * w[1];
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {dims:?}")));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config("one activation per layer is required".into()));
        }
        Ok(DenseNet {
            dims: dims.to_vec(),
            activations,
            params: vec![F::zero(); param_count(dims)],
            seed: 0,
        })
    }

    pub fn from_parts(dims: &[usize], activations: Vec<Activation>, params: Vec<F>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        if params.len() != net.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        net.seed = seed;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Start of layer `l` inside the parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.dims[..=l])
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Contract(format!(
                "network expects {} inputs, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        self.check_input(x.cols())?;
        let rows = x.rows();
        let mut cur = x.clone();
        let mut offset = 0;
        for (w, act) in self.dims.windows(2).zip(&self.activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            let mut out = Matrix::zeros(rows, fan_out);
            for i in 0..rows {
                out.row_mut(i).copy_from_slice(bias);
            }
            gemm(
                rows,
                fan_in,
                fan_out,
                F::one(),
                cur.data(),
                Trans::No,
                weights,
                Trans::No,
                F::one(),
                out.data_mut(),
            );
            if *act != Activation::Identity {
                out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            cur = out;
            offset += (fan_in + 1) * fan_out;
        }
        Ok(cur)
    }

    /// Records the forward pass on `tape`; `p` must be this net's parameters.
    pub fn forward_tape(&self, tape: &mut Tape<'_, F>, p: ParamId, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).cols())?;
        let mut cur = x;
        let mut offset = 0;
        for (w, act) in self.dims.windows(2).zip(&self.activations) {
            cur = tape.affine(cur, p, offset, w[0], w[1])?;
            cur = match act {
                Activation::Identity => cur,
                Activation::Tanh => tape.tanh(cur),
                Activation::Silu => tape.silu(cur),
            };
            offset += (w[0] + 1) * w[1];
        }
        Ok(cur)
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Self, tau: F) -> Result<()> {
        if self.dims != online.dims {
            return Err(Error::Contract("soft update between different shapes".into()));
        }
        for (t, &o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (F::one() - tau) * *t;
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> DenseNet<G> {
        DenseNet {
            dims: self.dims.clone(),
            activations: self.activations.clone(),
            params: self.params.iter().map(|v| G::of(v.as_f64())).collect(),
            seed: self.seed,
        }
    }
}
