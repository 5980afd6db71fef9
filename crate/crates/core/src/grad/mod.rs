//! Numeric core: matrices, a reverse-mode tape, dense networks, Adam and
//! checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod matrix;
pub mod net;
pub mod real;
pub mod tape;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, NetRecord};
pub use matrix::Matrix;
pub use net::{Activation, DenseNet};
pub use real::Real;
pub use tape::{Gradients, ParamId, Segment, Tape, Var};

/// Sinusoidal embedding of a step index: `dim / 2` sines followed by the
/// matching cosines at geometrically spaced frequencies.
pub fn time_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (step as f64 * freq).sin();
        out[half + i] = (step as f64 * freq).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_shape_and_distinct_steps() {
        let a = time_embedding(1, 16);
        let b = time_embedding(2, 16);
        assert_eq!(a.len(), 16);
        assert_ne!(a, b);
        assert_eq!(time_embedding(0, 16)[8], 1.0);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
