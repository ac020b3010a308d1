use rand::Rng;

use crate::error::{invalid, Result};
use crate::nn::{Conv1d, Graph, LayerSpec, ParamStore, Tensor, Var};
use crate::Scalar;

/// Convolutional trajectory encoder: a strided convolution that downsamples
/// `T × 3` root positions to `T / factor` rows, then a width-preserving
/// convolution.
#[derive(Debug, Clone)]
pub struct TrajectoryEncoder {
    pub down: Conv1d,
    pub mix: Conv1d,
    pub factor: usize,
}

impl TrajectoryEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        factor: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            down: Conv1d::new(store, &format!("{name}.down"), 3, width, factor, factor, 0, rng)?,
            mix: Conv1d::new(store, &format!("{name}.mix"), width, width, 3, 1, 1, rng)?,
            factor,
        })
    }

    pub fn specs(&self, name: &str) -> Vec<(String, LayerSpec)> {
        vec![
            (format!("{name}.down"), self.down.spec()),
            (format!("{name}.mix"), self.mix.spec()),
        ]
    }

    /// Number of output rows for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        frames / self.factor
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, traj: Var) -> Result<Var> {
        let (frames, width) = (g.value(traj).rows(), g.value(traj).cols());
        if width != 3 {
            return Err(invalid!("trajectory must have 3 columns, got {width}"));
        }
        if frames < self.factor {
            return Err(invalid!(
                "trajectory of {frames} frames is shorter than the encoder kernel ({})",
                self.factor
            ));
        }
        let h = self.down.forward(g, traj)?;
        let h = g.silu(h);
        self.mix.forward(g, h)
    }

    /// Encodes a trajectory outside of any training graph.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, traj: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let v = g.input(traj.clone());
        let out = self.forward(&mut g, v)?;
        Ok(g.value(out).clone())
    }
}
