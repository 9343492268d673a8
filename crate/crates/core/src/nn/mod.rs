//! Minimal neural-net layers with hand-written backward passes. Everything
//! is f64 and Array2; biases and per-feature vectors are (1, n) rows.
//! Layers cache what their backward needs, so the call order is always
//! forward then backward on the same instance.

pub mod textcnn;

use ndarray::{Array2, Axis};
use rand::Rng;

/// Trainable tensor with gradient and Adam moments kept together so
/// checkpointing and optimizer steps need no side tables.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: Array2<f64>,
    pub g: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Param {
    pub fn new(w: Array2<f64>) -> Self {
        let z = Array2::zeros(w.raw_dim());
        Param { g: z.clone(), m: z.clone(), v: z, w }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }
}

/// Standard Adam. `t` is shared across all params passed to one instance.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            p.m.zip_mut_with(&p.g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            p.v.zip_mut_with(&p.g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v, lr, eps) = (&p.m, &p.v, self.lr, self.eps);
            p.w.indexed_iter_mut().for_each(|((i, j), w)| {
                let mhat = m[(i, j)] / b1t;
                let vhat = v[(i, j)] / b2t;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}

/// Standard normal via Box-Muller.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn he_init<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let s = (2.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| normal(rng) * s)
}

pub fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer, y = x W + b.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    cache_x: Option<Array2<f64>>,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Param::new(he_init(rng, inputs, outputs)),
            b: Param::zeros(1, outputs),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.cache_x = Some(x.clone());
        x.dot(&self.w.w) + &self.b.w
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        self.w.g += &x.t().dot(dy);
        self.b.g += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.w.t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array2<f64>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        dy * self.mask.as_ref().expect("forward before backward")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    y: Option<Array2<f64>>,
}

impl Sigmoid {
    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = x.mapv(sigmoid);
        self.y = Some(y.clone());
        y
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        let y = self.y.as_ref().expect("forward before backward");
        dy * &(y * &y.mapv(|v| 1.0 - v))
    }
}

/// Batch normalization over the batch axis with running statistics for
/// inference. `train` selects batch stats (and updates the running ones);
/// inference uses the frozen running stats and is purely elementwise.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
    momentum: f64,
    eps: f64,
    cache: Option<(Array2<f64>, Array2<f64>)>, // (xhat, inv_std broadcast row)
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array2::ones((1, width))),
            beta: Param::zeros(1, width),
            running_mean: Array2::zeros((1, width)),
            running_var: Array2::ones((1, width)),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        if train {
            let nb = x.nrows() as f64;
            let mean = x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
            let centered = x - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
            let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
            let xhat = &centered * &inv_std;
            self.running_mean = &self.running_mean * (1.0 - self.momentum) + &mean * self.momentum;
            // unbiased variance for the running estimate, batch variance in the pass
            let unbias = if nb > 1.0 { nb / (nb - 1.0) } else { 1.0 };
            self.running_var =
                &self.running_var * (1.0 - self.momentum) + &var.mapv(|v| v * unbias) * self.momentum;
            let y = &xhat * &self.gamma.w + &self.beta.w;
            self.cache = Some((xhat, inv_std));
            y
        } else {
            let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
            (x - &self.running_mean) * &inv_std * &self.gamma.w + &self.beta.w
        }
    }

    /// Backward for the training-mode pass.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.as_ref().expect("train forward before backward");
        let nb = dy.nrows() as f64;
        self.gamma.g += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.g += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.w;
        let sum_dxhat = dxhat.sum_axis(Axis(0)).insert_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        (&dxhat - &(sum_dxhat / nb) - xhat * &(sum_dxhat_xhat / nb)) * inv_std
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Inverted dropout with an externally supplied mask so training can
/// resample per step while gradient checks hold the mask fixed.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate));
        Dropout { rate, mask: None }
    }

    pub fn sample_mask<R: Rng>(&self, rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        Array2::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
    }

    /// `mask: None` means inference (identity).
    pub fn forward(&mut self, x: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
        match mask {
            Some(m) => {
                self.mask = Some(m.clone());
                x * m
            }
            None => {
                self.mask = None;
                x.clone()
            }
        }
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        match &self.mask {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

/// Squashes into (r_min, r_max): (r_max - r_min) * sigmoid(x) + r_min.
#[derive(Debug, Clone)]
pub struct Rescale {
    pub r_min: f64,
    pub r_max: f64,
    s: Option<Array2<f64>>,
}

impl Rescale {
    pub fn new(r_min: f64, r_max: f64) -> Self {
        assert!(r_min < r_max);
        Rescale { r_min, r_max, s: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let s = x.mapv(sigmoid);
        let y = s.mapv(|v| (self.r_max - self.r_min) * v + self.r_min);
        self.s = Some(s);
        y
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        let s = self.s.as_ref().expect("forward before backward");
        dy * &s.mapv(|v| (self.r_max - self.r_min) * v * (1.0 - v))
    }
}

/// Scalar version used by the pruning pipeline.
pub fn rescale(x: f64, r_min: f64, r_max: f64) -> f64 {
    (r_max - r_min) * sigmoid(x) + r_min
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
    eps: f64,
    cache: Option<(Array2<f64>, Vec<f64>)>, // (xhat, inv_std per row)
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gain: Param::new(Array2::ones((1, width))),
            bias: Param::zeros(1, width),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_stds = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            row.mapv_inplace(|v| v * inv_std);
            inv_stds.push(inv_std);
        }
        let y = &xhat * &self.gain.w + &self.bias.w;
        self.cache = Some((xhat, inv_stds));
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_stds) = self.cache.as_ref().expect("forward before backward");
        let n = dy.ncols() as f64;
        self.gain.g += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.bias.g += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gain.w;
        let mut dx = Array2::zeros(dy.raw_dim());
        for r in 0..dy.nrows() {
            let dxh = dxhat.row(r);
            let xh = xhat.row(r);
            let sum_dxh = dxh.sum();
            let sum_dxh_xh = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
            for c in 0..dy.ncols() {
                dx[(r, c)] = (dxh[c] - sum_dxh / n - xh[c] * sum_dxh_xh / n) * inv_stds[r];
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.bias]
    }
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Central finite difference of a scalar function at x0.
pub fn central_diff<F: FnMut(f64) -> f64>(x0: f64, h: f64, mut eval: F) -> f64 {
    (eval(x0 + h) - eval(x0 - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// FD-checks an analytic gradient for a scalar loss over one tensor.
    fn check_param<F: FnMut(&Array2<f64>) -> f64>(
        w0: &Array2<f64>,
        g: &Array2<f64>,
        mut loss: F,
        tol: f64,
    ) {
        let mut w = w0.clone();
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                let x0 = w[(i, j)];
                w[(i, j)] = x0 + 1e-5;
                let up = loss(&w);
                w[(i, j)] = x0 - 1e-5;
                let dn = loss(&w);
                w[(i, j)] = x0;
                let fd = (up - dn) / 2e-5;
                assert!(
                    rel_err(fd, g[(i, j)]) < tol || (fd.abs() < 1e-9 && g[(i, j)].abs() < 1e-9),
                    "grad mismatch at ({i},{j}): fd={fd} analytic={}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn dense_gradients_match_fd() {
        let mut r = stream(1, "t");
        let x = uniform_init(&mut r, 4, 3, 1.0);
        let mut layer = Dense::new(&mut r, 3, 2);
        let y = layer.forward(&x);
        let dy = Array2::ones(y.raw_dim());
        let dx = layer.backward(&dy);
        let w = layer.w.w.clone();
        let b = layer.b.w.clone();
        check_param(&w, &layer.w.g, |wp| (x.dot(wp) + &b).sum(), 1e-5);
        check_param(&b, &layer.b.g, |bp| (x.dot(&w) + bp).sum(), 1e-5);
        // input gradient: loss = sum(y), dx = ones * W^T
        let expect_dx = Array2::ones((4, 2)).dot(&w.t());
        assert!(dx.iter().zip(expect_dx.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_train_gradients_match_fd() {
        let mut r = stream(2, "t");
        let x = uniform_init(&mut r, 6, 3, 2.0);
        let weight = uniform_init(&mut r, 3, 1, 1.0);
        let run = |bn_gamma: &Array2<f64>, bn_beta: &Array2<f64>, xin: &Array2<f64>| -> f64 {
            let mut bn = BatchNorm::new(3);
            bn.gamma.w.assign(bn_gamma);
            bn.beta.w.assign(bn_beta);
            bn.forward(xin, true).dot(&weight).sum()
        };
        let mut bn = BatchNorm::new(3);
        let gamma0 = uniform_init(&mut r, 1, 3, 1.0).mapv(|v| v + 1.5);
        let beta0 = uniform_init(&mut r, 1, 3, 0.5);
        bn.gamma.w.assign(&gamma0);
        bn.beta.w.assign(&beta0);
        let y = bn.forward(&x, true);
        let dy = Array2::ones(y.raw_dim()).dot(&Array2::from_diag(&weight.column(0).to_owned()));
        let dx = bn.backward(&dy);
        check_param(&gamma0, &bn.gamma.g, |g| run(g, &beta0, &x), 1e-4);
        check_param(&beta0, &bn.beta.g, |b| run(&gamma0, b, &x), 1e-4);
        // input grads elementwise
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                let x0 = xp[(i, j)];
                xp[(i, j)] = x0 + 1e-5;
                let up = run(&gamma0, &beta0, &xp);
                xp[(i, j)] = x0 - 1e-5;
                let dn = run(&gamma0, &beta0, &xp);
                let fd = (up - dn) / 2e-5;
                assert!(
                    rel_err(fd, dx[(i, j)]) < 1e-3 || (fd.abs() < 1e-8 && dx[(i, j)].abs() < 1e-8),
                    "bn dx mismatch at ({i},{j}): fd={fd} analytic={}",
                    dx[(i, j)]
                );
            }
        }
    }

    #[test]
    fn batchnorm_inference_uses_running_stats() {
        let mut r = stream(3, "t");
        let mut bn = BatchNorm::new(2);
        for _ in 0..50 {
            let x = uniform_init(&mut r, 8, 2, 1.0).mapv(|v| v * 2.0 + 3.0);
            bn.forward(&x, true);
        }
        let x = Array2::from_shape_fn((1, 2), |_| 3.0);
        let y1 = bn.forward(&x, false);
        let y2 = bn.forward(&x, false);
        assert_eq!(y1, y2);
        // near the accumulated mean the normalized output is near zero
        assert!(y1.iter().all(|v| v.abs() < 0.5), "{y1:?}");
    }

    #[test]
    fn dropout_mask_and_identity() {
        let mut r = stream(4, "t");
        let mut d = Dropout::new(0.5);
        let x = Array2::ones((4, 4));
        let mask = d.sample_mask(&mut r, 4, 4);
        let y = d.forward(&x, Some(&mask));
        assert_eq!(y, mask.clone());
        let dx = d.backward(&Array2::ones((4, 4)));
        assert_eq!(dx, mask);
        let y_inf = d.forward(&x, None);
        assert_eq!(y_inf, x);
    }

    #[test]
    fn rescale_layer_matches_scalar_and_fd() {
        let mut r = stream(5, "t");
        let x = uniform_init(&mut r, 3, 3, 4.0);
        let mut layer = Rescale::new(1.0, 5.0);
        let y = layer.forward(&x);
        for (yv, xv) in y.iter().zip(x.iter()) {
            assert!((yv - rescale(*xv, 1.0, 5.0)).abs() < 1e-15);
        }
        let dx = layer.backward(&Array2::ones((3, 3)));
        for i in 0..3 {
            for j in 0..3 {
                let fd = central_diff(x[(i, j)], 1e-6, |v| rescale(v, 1.0, 5.0));
                assert!(rel_err(fd, dx[(i, j)]) < 1e-6);
            }
        }
    }

    #[test]
    fn layernorm_gradients_match_fd() {
        let mut r = stream(6, "t");
        let x = uniform_init(&mut r, 4, 5, 2.0);
        let weight = uniform_init(&mut r, 5, 1, 1.0);
        let gain0 = uniform_init(&mut r, 1, 5, 0.5).mapv(|v| v + 1.0);
        let bias0 = uniform_init(&mut r, 1, 5, 0.3);
        let run = |gain: &Array2<f64>, bias: &Array2<f64>, xin: &Array2<f64>| {
            let mut ln = LayerNorm::new(5);
            ln.gain.w.assign(gain);
            ln.bias.w.assign(bias);
            ln.forward(xin).dot(&weight).sum()
        };
        let mut ln = LayerNorm::new(5);
        ln.gain.w.assign(&gain0);
        ln.bias.w.assign(&bias0);
        let y = ln.forward(&x);
        let dy = Array2::ones(y.raw_dim()).dot(&Array2::from_diag(&weight.column(0).to_owned()));
        let dx = ln.backward(&dy);
        check_param(&gain0, &ln.gain.g, |g| run(g, &bias0, &x), 1e-4);
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                let x0 = xp[(i, j)];
                xp[(i, j)] = x0 + 1e-5;
                let up = run(&gain0, &bias0, &xp);
                xp[(i, j)] = x0 - 1e-5;
                let dn = run(&gain0, &bias0, &xp);
                let fd = (up - dn) / 2e-5;
                assert!(
                    rel_err(fd, dx[(i, j)]) < 1e-3 || (fd.abs() < 1e-8 && dx[(i, j)].abs() < 1e-8)
                );
            }
        }
    }

    #[test]
    fn adam_decreases_quadratic() {
        let mut p = Param::new(Array2::from_shape_fn((1, 3), |(_, j)| j as f64 + 1.0));
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            p.zero_grad();
            let g = p.w.mapv(|v| 2.0 * v);
            p.g.assign(&g);
            opt.step(&mut [&mut p]);
        }
        assert!(p.w.iter().all(|v| v.abs() < 1e-2), "{:?}", p.w);
    }

    #[test]
    fn softmax_rows_normalized() {
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64);
        let s = softmax_rows(&x);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!(s[(0, 3)] > s[(0, 0)]);
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
