//! Graph-convolutional GRU: a single recurrent layer whose gates consume
//! K-hop diffusion features of `[input, hidden]` under the row-normalized
//! random-walk matrix, followed by a linear projection back to feature
//! space. One output per input step, hidden state zeroed at sequence start.

use super::{check_batch_shape, mae_sign, ModelError, ParamInit, SequenceModel};
use crate::batching::Batch;
use crate::dataset::GraphSpec;

#[derive(Debug, Clone, Copy)]
struct Layout {
    f: usize,
    h: usize,
    k: usize,
    d_in: usize,   // f + h
    d_diff: usize, // k * d_in
    w_r: usize,
    b_r: usize,
    w_u: usize,
    b_u: usize,
    w_c: usize,
    b_c: usize,
    w_o: usize,
    b_o: usize,
    total: usize,
}

impl Layout {
    fn new(f: usize, h: usize, k: usize) -> Self {
        let d_in = f + h;
        let d_diff = k * d_in;
        let w_r = 0;
        let b_r = w_r + d_diff * h;
        let w_u = b_r + h;
        let b_u = w_u + d_diff * h;
        let w_c = b_u + h;
        let b_c = w_c + d_diff * h;
        let w_o = b_c + h;
        let b_o = w_o + h * f;
        let total = b_o + f;
        Self { f, h, k, d_in, d_diff, w_r, b_r, w_u, b_u, w_c, b_c, w_o, b_o, total }
    }
}

/// One recurrent graph-convolutional layer with GRU gating.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcgru {
    features: usize,
    hidden: usize,
    diffusion_order: usize,
    theta: Vec<f64>,
}

impl Gcgru {
    /// `diffusion_order` K uses random-walk powers `0..K-1`; K = 1 reduces
    /// to a graph-free GRU.
    pub fn new(features: usize, hidden: usize, diffusion_order: usize, seed: u64) -> Self {
        let k = diffusion_order.max(1);
        let lo = Layout::new(features, hidden, k);
        let mut init = ParamInit::new(seed);
        let mut theta = Vec::with_capacity(lo.total);
        for _ in 0..3 {
            init.fill(&mut theta, lo.d_diff * lo.h + lo.h, lo.d_diff);
        }
        init.fill(&mut theta, lo.h * lo.f + lo.f, lo.h);
        Self { features, hidden, diffusion_order: k, theta }
    }

    pub fn with_params(
        features: usize,
        hidden: usize,
        diffusion_order: usize,
        theta: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let k = diffusion_order.max(1);
        let lo = Layout::new(features, hidden, k);
        if theta.len() != lo.total {
            return Err(ModelError::DimensionMismatch { expected: lo.total, found: theta.len() });
        }
        Ok(Self { features, hidden, diffusion_order: k, theta })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn diffusion_order(&self) -> usize {
        self.diffusion_order
    }

    pub fn param_count(features: usize, hidden: usize, diffusion_order: usize) -> usize {
        Layout::new(features, hidden, diffusion_order.max(1)).total
    }

    fn layout(&self) -> Layout {
        Layout::new(self.features, self.hidden, self.diffusion_order)
    }

    /// Stack `[m, A m, ..., A^{K-1} m]` along the feature axis.
    fn diffusion(&self, m: &[f64], n: usize, a_rw: &[f64], out: &mut [f64]) {
        let lo = self.layout();
        debug_assert_eq!(out.len(), n * lo.d_diff);
        for i in 0..n {
            out[i * lo.d_diff..i * lo.d_diff + lo.d_in]
                .copy_from_slice(&m[i * lo.d_in..(i + 1) * lo.d_in]);
        }
        if lo.k == 1 {
            return;
        }
        let mut cur = m.to_vec();
        let mut next = vec![0.0; n * lo.d_in];
        for kk in 1..lo.k {
            graph_apply(a_rw, n, &cur, lo.d_in, &mut next);
            for i in 0..n {
                out[i * lo.d_diff + kk * lo.d_in..i * lo.d_diff + (kk + 1) * lo.d_in]
                    .copy_from_slice(&next[i * lo.d_in..(i + 1) * lo.d_in]);
            }
            std::mem::swap(&mut cur, &mut next);
        }
    }

    /// Pull the diffusion stack apart: `dm = sum_k (A^T)^k g_k`, evaluated
    /// by Horner recursion from the deepest hop inward.
    fn diffusion_backward(&self, g: &[f64], n: usize, a_rw: &[f64]) -> Vec<f64> {
        let lo = self.layout();
        let block = |kk: usize, i: usize| g[i * lo.d_diff + kk * lo.d_in..i * lo.d_diff + (kk + 1) * lo.d_in].to_vec();
        let mut acc = vec![0.0; n * lo.d_in];
        for i in 0..n {
            acc[i * lo.d_in..(i + 1) * lo.d_in].copy_from_slice(&block(lo.k - 1, i));
        }
        if lo.k == 1 {
            return acc;
        }
        let mut tmp = vec![0.0; n * lo.d_in];
        for kk in (0..lo.k - 1).rev() {
            graph_apply_transpose(a_rw, n, &acc, lo.d_in, &mut tmp);
            for i in 0..n {
                for (j, t) in tmp[i * lo.d_in..(i + 1) * lo.d_in].iter_mut().enumerate() {
                    *t += g[i * lo.d_diff + kk * lo.d_in + j];
                }
            }
            std::mem::swap(&mut acc, &mut tmp);
        }
        acc
    }

    fn run(&self, x: &[f64], input_len: usize, n: usize, a_rw: &[f64], want_tape: bool) -> (Vec<f64>, Tape) {
        let lo = self.layout();
        let (w_r, b_r) = (&self.theta[lo.w_r..lo.b_r], &self.theta[lo.b_r..lo.w_u]);
        let (w_u, b_u) = (&self.theta[lo.w_u..lo.b_u], &self.theta[lo.b_u..lo.w_c]);
        let (w_c, b_c) = (&self.theta[lo.w_c..lo.b_c], &self.theta[lo.b_c..lo.w_o]);
        let (w_o, b_o) = (&self.theta[lo.w_o..lo.b_o], &self.theta[lo.b_o..lo.total]);

        let mut tape = Tape::default();
        let mut h_state = vec![0.0; n * lo.h];
        if want_tape {
            tape.h_states.push(h_state.clone());
        }
        let mut y_hat = vec![0.0; input_len * n * lo.f];

        let mut m = vec![0.0; n * lo.d_in];
        let mut d1 = vec![0.0; n * lo.d_diff];
        let mut d2 = vec![0.0; n * lo.d_diff];
        let mut r = vec![0.0; n * lo.h];
        let mut u = vec![0.0; n * lo.h];
        let mut c = vec![0.0; n * lo.h];

        for t in 0..input_len {
            let x_t = &x[t * n * lo.f..(t + 1) * n * lo.f];

            // m1 = [x_t | h]
            for i in 0..n {
                m[i * lo.d_in..i * lo.d_in + lo.f].copy_from_slice(&x_t[i * lo.f..(i + 1) * lo.f]);
                m[i * lo.d_in + lo.f..(i + 1) * lo.d_in]
                    .copy_from_slice(&h_state[i * lo.h..(i + 1) * lo.h]);
            }
            self.diffusion(&m, n, a_rw, &mut d1);

            matmul_bias(&d1, n, lo.d_diff, w_r, lo.h, b_r, &mut r);
            for v in &mut r {
                *v = sigmoid(*v);
            }
            matmul_bias(&d1, n, lo.d_diff, w_u, lo.h, b_u, &mut u);
            for v in &mut u {
                *v = sigmoid(*v);
            }

            // m2 = [x_t | r .* h]
            for i in 0..n {
                for j in 0..lo.h {
                    m[i * lo.d_in + lo.f + j] = r[i * lo.h + j] * h_state[i * lo.h + j];
                }
            }
            self.diffusion(&m, n, a_rw, &mut d2);
            matmul_bias(&d2, n, lo.d_diff, w_c, lo.h, b_c, &mut c);
            for v in &mut c {
                *v = v.tanh();
            }

            for j in 0..n * lo.h {
                h_state[j] = u[j] * h_state[j] + (1.0 - u[j]) * c[j];
            }
            matmul_bias(&h_state, n, lo.h, w_o, lo.f, b_o, &mut y_hat[t * n * lo.f..(t + 1) * n * lo.f]);

            if want_tape {
                tape.steps.push(StepTape {
                    d1: d1.clone(),
                    d2: d2.clone(),
                    r: r.clone(),
                    u: u.clone(),
                    c: c.clone(),
                });
                tape.h_states.push(h_state.clone());
            }
        }
        (y_hat, tape)
    }

    /// Reverse pass for one sample; `d_y` is already scaled by the batch
    /// normalizer, so contributions just add into `grad`.
    fn backprop(&self, tape: &Tape, d_y: &[f64], n: usize, a_rw: &[f64], grad: &mut [f64]) {
        let lo = self.layout();
        let w_r = &self.theta[lo.w_r..lo.b_r];
        let w_u = &self.theta[lo.w_u..lo.b_u];
        let w_c = &self.theta[lo.w_c..lo.b_c];
        let w_o = &self.theta[lo.w_o..lo.b_o];
        let input_len = tape.steps.len();

        let mut d_h = vec![0.0; n * lo.h];
        let mut d_pre = vec![0.0; n * lo.h];
        let mut d_pre_u = vec![0.0; n * lo.h];
        let mut dd = vec![0.0; n * lo.d_diff];

        for t in (0..input_len).rev() {
            let step = &tape.steps[t];
            let h_prev = &tape.h_states[t];
            let h_cur = &tape.h_states[t + 1];
            let d_y_t = &d_y[t * n * lo.f..(t + 1) * n * lo.f];

            // output projection
            for i in 0..n {
                for j in 0..lo.h {
                    let mut acc = 0.0;
                    for ff in 0..lo.f {
                        acc += d_y_t[i * lo.f + ff] * w_o[j * lo.f + ff];
                    }
                    d_h[i * lo.h + j] += acc;
                }
            }
            accumulate_weight_grad(h_cur, n, lo.h, d_y_t, lo.f, &mut grad[lo.w_o..lo.b_o]);
            accumulate_bias_grad(d_y_t, n, lo.f, &mut grad[lo.b_o..lo.total]);

            // gate algebra: h = u .* h_prev + (1 - u) .* c
            let mut d_h_prev = vec![0.0; n * lo.h];
            for j in 0..n * lo.h {
                let du = d_h[j] * (h_prev[j] - step.c[j]);
                let dc = d_h[j] * (1.0 - step.u[j]);
                d_h_prev[j] = d_h[j] * step.u[j];
                d_pre[j] = dc * (1.0 - step.c[j] * step.c[j]); // candidate pre-activation
                d_pre_u[j] = du * step.u[j] * (1.0 - step.u[j]);
            }

            // candidate path: pre_c = d2 W_c + b_c
            accumulate_weight_grad(&step.d2, n, lo.d_diff, &d_pre, lo.h, &mut grad[lo.w_c..lo.b_c]);
            accumulate_bias_grad(&d_pre, n, lo.h, &mut grad[lo.b_c..lo.w_o]);
            matmul_transpose_b(&d_pre, n, lo.h, w_c, lo.d_diff, &mut dd);
            let dm2 = self.diffusion_backward(&dd, n, a_rw);
            let mut d_pre_r = vec![0.0; n * lo.h];
            for i in 0..n {
                for j in 0..lo.h {
                    let drh = dm2[i * lo.d_in + lo.f + j];
                    let dr = drh * h_prev[i * lo.h + j];
                    d_h_prev[i * lo.h + j] += drh * step.r[i * lo.h + j];
                    d_pre_r[i * lo.h + j] =
                        dr * step.r[i * lo.h + j] * (1.0 - step.r[i * lo.h + j]);
                }
            }

            // gate paths: pre_r/pre_u = d1 W + b
            accumulate_weight_grad(&step.d1, n, lo.d_diff, &d_pre_r, lo.h, &mut grad[lo.w_r..lo.b_r]);
            accumulate_bias_grad(&d_pre_r, n, lo.h, &mut grad[lo.b_r..lo.w_u]);
            accumulate_weight_grad(&step.d1, n, lo.d_diff, &d_pre_u, lo.h, &mut grad[lo.w_u..lo.b_u]);
            accumulate_bias_grad(&d_pre_u, n, lo.h, &mut grad[lo.b_u..lo.w_c]);

            matmul_transpose_b(&d_pre_r, n, lo.h, w_r, lo.d_diff, &mut dd);
            let mut dd_u = vec![0.0; n * lo.d_diff];
            matmul_transpose_b(&d_pre_u, n, lo.h, w_u, lo.d_diff, &mut dd_u);
            for (a, b) in dd.iter_mut().zip(&dd_u) {
                *a += b;
            }
            let dm1 = self.diffusion_backward(&dd, n, a_rw);
            for i in 0..n {
                for j in 0..lo.h {
                    d_h_prev[i * lo.h + j] += dm1[i * lo.d_in + lo.f + j];
                }
            }

            d_h = d_h_prev;
        }
    }
}

#[derive(Debug, Default)]
struct Tape {
    steps: Vec<StepTape>,
    h_states: Vec<Vec<f64>>,
}

#[derive(Debug)]
struct StepTape {
    d1: Vec<f64>,
    d2: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    c: Vec<f64>,
}

impl SequenceModel for Gcgru {
    fn name(&self) -> &'static str {
        "gcgru"
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
        let n = graph.n();
        if x.len() != input_len * n * self.features {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} elements, expected {input_len}x{n}x{}",
                x.len(),
                self.features
            )));
        }
        let a_rw = graph.random_walk_matrix();
        Ok(self.run(x, input_len, n, &a_rw, false).0)
    }

    fn backward(&self, batch: &Batch, graph: &GraphSpec) -> Result<(f64, Vec<f64>), ModelError> {
        check_batch_shape(batch, graph, self.features)?;
        let n = graph.n();
        let t_in = batch.input_len;
        let a_rw = graph.random_walk_matrix();
        let elems = batch.len() * t_in * n * self.features;
        let inv = 1.0 / elems as f64;

        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        let mut d_y = vec![0.0; t_in * n * self.features];
        for j in 0..batch.len() {
            let x = batch.x_sample(j);
            let y = batch.y_sample(j);
            let (y_hat, tape) = self.run(x, t_in, n, &a_rw, true);
            for (idx, (&a, &b)) in y_hat.iter().zip(y).enumerate() {
                let e = a - b;
                loss += e.abs();
                d_y[idx] = mae_sign(e) * inv;
            }
            self.backprop(&tape, &d_y, n, &a_rw, &mut grad);
        }
        Ok((loss * inv, grad))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `out[r, q] = sum_p a[r, p] * b[p, q] + bias[q]`
fn matmul_bias(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize, bias: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let a_row = &a[r * inner..(r + 1) * inner];
        let o_row = &mut out[r * cols..(r + 1) * cols];
        o_row.copy_from_slice(bias);
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * cols..(p + 1) * cols];
            for q in 0..cols {
                o_row[q] += av * b_row[q];
            }
        }
    }
}

/// `out[r, p] = sum_q d[r, q] * w[p, q]` (multiply by the transpose of `w`).
fn matmul_transpose_b(d: &[f64], rows: usize, cols: usize, w: &[f64], inner: usize, out: &mut [f64]) {
    for r in 0..rows {
        let d_row = &d[r * cols..(r + 1) * cols];
        let o_row = &mut out[r * inner..(r + 1) * inner];
        for p in 0..inner {
            let w_row = &w[p * cols..(p + 1) * cols];
            let mut acc = 0.0;
            for q in 0..cols {
                acc += d_row[q] * w_row[q];
            }
            o_row[p] = acc;
        }
    }
}

/// `grad_w[p, q] += sum_r input[r, p] * d[r, q]`
fn accumulate_weight_grad(input: &[f64], rows: usize, p_dim: usize, d: &[f64], q_dim: usize, grad_w: &mut [f64]) {
    for r in 0..rows {
        let in_row = &input[r * p_dim..(r + 1) * p_dim];
        let d_row = &d[r * q_dim..(r + 1) * q_dim];
        for (p, &iv) in in_row.iter().enumerate() {
            if iv == 0.0 {
                continue;
            }
            let g_row = &mut grad_w[p * q_dim..(p + 1) * q_dim];
            for q in 0..q_dim {
                g_row[q] += iv * d_row[q];
            }
        }
    }
}

fn accumulate_bias_grad(d: &[f64], rows: usize, q_dim: usize, grad_b: &mut [f64]) {
    for r in 0..rows {
        for q in 0..q_dim {
            grad_b[q] += d[r * q_dim + q];
        }
    }
}

/// `out[i, :] = sum_j a[i, j] * x[j, :]`
fn graph_apply(a: &[f64], n: usize, x: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        let o_row = &mut out[i * d..(i + 1) * d];
        for j in 0..n {
            let w = a[i * n + j];
            if w == 0.0 {
                continue;
            }
            let x_row = &x[j * d..(j + 1) * d];
            for q in 0..d {
                o_row[q] += w * x_row[q];
            }
        }
    }
}

/// `out[j, :] = sum_i a[i, j] * x[i, :]`
fn graph_apply_transpose(a: &[f64], n: usize, x: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        let x_row = &x[i * d..(i + 1) * d];
        for j in 0..n {
            let w = a[i * n + j];
            if w == 0.0 {
                continue;
            }
            let o_row = &mut out[j * d..(j + 1) * d];
            for q in 0..d {
                o_row[q] += w * x_row[q];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_weighted_adjacency, Edge};
    use crate::model::test_util::{fd_gradient, synthetic_batch};

    fn ring_graph(n: usize) -> GraphSpec {
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            edges.push(Edge::new(ids[i].clone(), ids[j].clone(), 1.0));
            edges.push(Edge::new(ids[j].clone(), ids[i].clone(), 1.0));
        }
        build_weighted_adjacency(&edges, &ids, 2.0, 0.0).unwrap()
    }

    #[test]
    fn zero_params_emit_zero_predictions() {
        let dim = Gcgru::param_count(2, 4, 2);
        let model = Gcgru::with_params(2, 4, 2, vec![0.0; dim]).unwrap();
        let graph = ring_graph(5);
        let x: Vec<f64> = (0..3 * 5 * 2).map(|v| (v as f64).sin()).collect();
        let y = model.forward(&x, 3, &graph).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn order_one_diffusion_ignores_the_graph() {
        let model = Gcgru::new(1, 3, 1, 99);
        let x: Vec<f64> = (0..4 * 6).map(|v| (v as f64 * 0.3).cos()).collect();
        let with_graph = model.forward(&x, 4, &ring_graph(6)).unwrap();
        let without = model.forward(&x, 4, &GraphSpec::edgeless(6)).unwrap();
        let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(&with_graph), bits(&without));
    }

    #[test]
    fn outputs_are_permutation_equivariant() {
        let n = 6;
        let model = Gcgru::new(2, 5, 2, 3);
        let graph = ring_graph(n);
        let t_in = 4;
        let x: Vec<f64> = (0..t_in * n * 2).map(|v| ((v * 7 % 13) as f64 - 6.0) * 0.17).collect();
        let y = model.forward(&x, t_in, &graph).unwrap();

        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                adj[i * n + j] = graph.weight(perm[i], perm[j]);
            }
        }
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let permuted_graph = GraphSpec::new(ids, Vec::new(), adj).unwrap();
        let mut px = vec![0.0; x.len()];
        for t in 0..t_in {
            for i in 0..n {
                for f in 0..2 {
                    px[(t * n + i) * 2 + f] = x[(t * n + perm[i]) * 2 + f];
                }
            }
        }
        let py = model.forward(&px, t_in, &permuted_graph).unwrap();
        for t in 0..t_in {
            for i in 0..n {
                for f in 0..2 {
                    let a = py[(t * n + i) * 2 + f];
                    let b = y[(t * n + perm[i]) * 2 + f];
                    assert!((a - b).abs() <= 1e-12, "t={t} i={i} f={f}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for diffusion_order in 1..=3 {
            let graph = ring_graph(4);
            let model = Gcgru::new(2, 3, diffusion_order, 17);
            let batch = synthetic_batch(2, 3, 4, 2, 555);
            let (loss, grad) = model.backward(&batch, &graph).unwrap();
            assert!(loss.is_finite());
            assert_eq!(grad.len(), model.params().len());

            // the oracle itself carries eps*|f|/(2h) ~ 2e-10 of rounding
            // noise, so coordinates below that floor are held to an
            // absolute tolerance
            let fd = fd_gradient(&model, &batch, &graph, 1e-6);
            for (i, (&g, &gf)) in grad.iter().zip(&fd).enumerate() {
                let scale = g.abs().max(gf.abs());
                let tol = 1e-9 + 1e-5 * scale;
                assert!(
                    (g - gf).abs() <= tol,
                    "K={diffusion_order} coordinate {i}: analytic {g} vs fd {gf} (diff {:.3e}, tol {tol:.3e})",
                    (g - gf).abs()
                );
            }
        }
    }

    #[test]
    fn backward_enforces_stepwise_shapes() {
        let model = Gcgru::new(1, 2, 2, 0);
        let graph = ring_graph(3);
        let mut batch = synthetic_batch(1, 2, 3, 1, 8);
        batch.output_len = 3;
        assert!(matches!(
            model.backward(&batch, &graph),
            Err(ModelError::ShapeMismatch(_))
        ));
    }
}
