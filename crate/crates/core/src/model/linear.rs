//! Per-node affine baseline: every node independently maps its feature
//! vector through `y = x W + b`, stepwise. No graph, no recurrence; its
//! closed-form gradient makes it the sanity anchor for the training stack.

use super::{check_batch_shape, mae_sign, ModelError, ParamInit, SequenceModel};
use crate::batching::Batch;
use crate::dataset::GraphSpec;

/// Node-independent affine map `W: F x F`, `b: F`, applied at each time
/// step; the horizon shift is carried by the training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSeq2Seq {
    features: usize,
    theta: Vec<f64>, // W row-major (in-feature x out-feature), then b
}

impl LinearSeq2Seq {
    pub fn new(features: usize, seed: u64) -> Self {
        let mut init = ParamInit::new(seed);
        let mut theta = Vec::with_capacity(features * features + features);
        init.fill(&mut theta, features * features + features, features);
        Self { features, theta }
    }

    /// Identity map: `W = I`, `b = 0`.
    pub fn identity(features: usize) -> Self {
        let mut theta = vec![0.0; features * features + features];
        for i in 0..features {
            theta[i * features + i] = 1.0;
        }
        Self { features, theta }
    }

    pub fn param_count(features: usize) -> usize {
        features * features + features
    }

    fn weight(&self, f_in: usize, f_out: usize) -> f64 {
        self.theta[f_in * self.features + f_out]
    }

    fn bias(&self, f_out: usize) -> f64 {
        self.theta[self.features * self.features + f_out]
    }
}

impl SequenceModel for LinearSeq2Seq {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn features(&self) -> usize {
        self.features
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn forward(
        &self,
        x: &[f64],
        input_len: usize,
        graph: &GraphSpec,
    ) -> Result<Vec<f64>, ModelError> {
        let f = self.features;
        let n = graph.n();
        if x.len() != input_len * n * f {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} elements, expected {input_len}x{n}x{f}",
                x.len()
            )));
        }
        let mut out = vec![0.0; x.len()];
        for cell in 0..input_len * n {
            let xi = &x[cell * f..(cell + 1) * f];
            let yo = &mut out[cell * f..(cell + 1) * f];
            for (f_out, y) in yo.iter_mut().enumerate() {
                let mut acc = self.bias(f_out);
                for (f_in, &xv) in xi.iter().enumerate() {
                    acc += xv * self.weight(f_in, f_out);
                }
                *y = acc;
            }
        }
        Ok(out)
    }

    fn backward(&self, batch: &Batch, graph: &GraphSpec) -> Result<(f64, Vec<f64>), ModelError> {
        check_batch_shape(batch, graph, self.features)?;
        let f = self.features;
        let cells = batch.len() * batch.input_len * batch.nodes;
        let inv = 1.0 / (cells * f) as f64;

        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        for j in 0..batch.len() {
            let x = batch.x_sample(j);
            let y = batch.y_sample(j);
            let y_hat = self.forward(x, batch.input_len, graph)?;
            for cell in 0..batch.input_len * batch.nodes {
                let xi = &x[cell * f..(cell + 1) * f];
                for f_out in 0..f {
                    let e = y_hat[cell * f + f_out] - y[cell * f + f_out];
                    loss += e.abs();
                    let d = mae_sign(e) * inv;
                    if d != 0.0 {
                        for f_in in 0..f {
                            grad[f_in * f + f_out] += d * xi[f_in];
                        }
                        grad[f * f + f_out] += d;
                    }
                }
            }
        }
        Ok((loss * inv, grad))
    }
}
