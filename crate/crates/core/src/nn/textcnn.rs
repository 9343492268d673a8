//! Convolutional text feature extractor: windows of word vectors, ReLU,
//! max-over-time pooling, linear projection. Word embeddings are frozen,
//! so backward only accumulates parameter gradients.

use ndarray::{Array2, Axis};
use rand::Rng;

use super::{he_init, Dense, Param};

#[derive(Debug, Clone)]
pub struct TextCnn {
    pub width: usize,
    pub dim: usize,
    pub filters: Param, // (width * dim, n_filters)
    pub fb: Param,      // (1, n_filters)
    pub proj: Dense,    // n_filters -> out_dim
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    windows: Array2<f64>,   // (positions, width * dim)
    relu_mask: Array2<f64>, // (positions, n_filters)
    argmax: Vec<usize>,     // per filter, first max position
}

impl TextCnn {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, width: usize, n_filters: usize, out_dim: usize) -> Self {
        assert!(width >= 1 && dim >= 1 && n_filters >= 1);
        TextCnn {
            width,
            dim,
            filters: Param::new(he_init(rng, width * dim, n_filters)),
            fb: Param::zeros(1, n_filters),
            proj: Dense::new(rng, n_filters, out_dim),
            cache: None,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.proj.w.w.ncols()
    }

    /// doc: (tokens, dim); zero-padded up to the filter width, so an empty
    /// document still produces a (bias-only) feature vector.
    pub fn forward(&mut self, doc: &Array2<f64>) -> Array2<f64> {
        if doc.nrows() > 0 {
            assert_eq!(doc.ncols(), self.dim, "embedding width mismatch");
        }
        let l = doc.nrows().max(self.width);
        let positions = l - self.width + 1;
        let mut windows = Array2::zeros((positions, self.width * self.dim));
        for p in 0..positions {
            for k in 0..self.width {
                let row = p + k;
                if row < doc.nrows() {
                    for c in 0..self.dim {
                        windows[(p, k * self.dim + c)] = doc[(row, c)];
                    }
                }
            }
        }
        let mut conv = windows.dot(&self.filters.w) + &self.fb.w;
        let relu_mask = conv.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        conv *= &relu_mask;
        let n_filters = conv.ncols();
        let mut pooled = Array2::zeros((1, n_filters));
        let mut argmax = vec![0usize; n_filters];
        for f in 0..n_filters {
            let mut best = f64::NEG_INFINITY;
            for p in 0..positions {
                if conv[(p, f)] > best {
                    best = conv[(p, f)];
                    argmax[f] = p;
                }
            }
            pooled[(0, f)] = best;
        }
        self.cache = Some(Cache { windows, relu_mask, argmax });
        self.proj.forward(&pooled)
    }

    /// Accumulates parameter gradients; input gradients are not produced.
    pub fn backward(&mut self, dy: &Array2<f64>) {
        let dpooled = self.proj.backward(dy);
        let cache = self.cache.as_ref().expect("forward before backward");
        let positions = cache.windows.nrows();
        let n_filters = dpooled.ncols();
        let mut dconv = Array2::zeros((positions, n_filters));
        for f in 0..n_filters {
            let p = cache.argmax[f];
            dconv[(p, f)] = dpooled[(0, f)] * cache.relu_mask[(p, f)];
        }
        self.filters.g += &cache.windows.t().dot(&dconv);
        self.fb.g += &dconv.sum_axis(Axis(0)).insert_axis(Axis(0));
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.filters, &mut self.fb];
        ps.extend(self.proj.params_mut());
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_init;
    use crate::rng::stream;

    #[test]
    fn single_filter_hand_oracle() {
        let mut r = stream(1, "cnn");
        let mut cnn = TextCnn::new(&mut r, 2, 2, 1, 1);
        // filter picks out (w00, w01, w10, w11); projection identity
        cnn.filters.w.assign(&Array2::from_shape_vec((4, 1), vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        cnn.fb.w.fill(0.0);
        cnn.proj.w.w.assign(&Array2::from_shape_vec((1, 1), vec![1.0]).unwrap());
        cnn.proj.b.w.fill(0.0);
        // doc rows: (1,2), (3,4), (0,-9)
        let doc = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 3.0, 4.0, 0.0, -9.0]).unwrap();
        // windows: [1,2,3,4] -> 1+4 = 5; [3,4,0,-9] -> 3-9 = -6 -> relu 0; max = 5
        let y = cnn.forward(&doc);
        assert!((y[(0, 0)] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_doc_gives_bias_only_features() {
        let mut r = stream(2, "cnn");
        let mut cnn = TextCnn::new(&mut r, 3, 3, 4, 2);
        let empty = Array2::zeros((0, 3));
        let y = cnn.forward(&empty);
        // conv over all-zero window = filter bias; relu; projection
        let mut expect_pooled = Array2::zeros((1, 4));
        for f in 0..4 {
            expect_pooled[(0, f)] = cnn.fb.w[(0, f)].max(0.0);
        }
        let expect = expect_pooled.dot(&cnn.proj.w.w) + &cnn.proj.b.w;
        assert!(y.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_fd() {
        let mut r = stream(3, "cnn");
        let doc = uniform_init(&mut r, 5, 3, 1.0);
        let mut cnn = TextCnn::new(&mut r, 3, 2, 4, 2);
        let target = uniform_init(&mut r, 1, 2, 1.0);
        let loss_of = |cnn_probe: &mut TextCnn| {
            let y = cnn_probe.forward(&doc);
            (&y - &target).mapv(|v| v * v).sum()
        };
        let y = cnn.forward(&doc);
        let dy = (&y - &target).mapv(|v| 2.0 * v);
        cnn.backward(&dy);
        let tensors: Vec<(Array2<f64>, Array2<f64>)> = vec![
            (cnn.filters.w.clone(), cnn.filters.g.clone()),
            (cnn.fb.w.clone(), cnn.fb.g.clone()),
            (cnn.proj.w.w.clone(), cnn.proj.w.g.clone()),
            (cnn.proj.b.w.clone(), cnn.proj.b.g.clone()),
        ];
        for (ti, (w0, g)) in tensors.iter().enumerate() {
            for i in 0..w0.nrows() {
                for j in 0..w0.ncols() {
                    let mut probe = cnn.clone();
                    let assign = |p: &mut TextCnn, v: f64| match ti {
                        0 => p.filters.w[(i, j)] = v,
                        1 => p.fb.w[(i, j)] = v,
                        2 => p.proj.w.w[(i, j)] = v,
                        _ => p.proj.b.w[(i, j)] = v,
                    };
                    let x0 = w0[(i, j)];
                    assign(&mut probe, x0 + 1e-5);
                    let up = loss_of(&mut probe);
                    assign(&mut probe, x0 - 1e-5);
                    let dn = loss_of(&mut probe);
                    let fd = (up - dn) / 2e-5;
                    let a = g[(i, j)];
                    let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
                    assert!(err < 1e-4 || (fd.abs() < 1e-9 && a.abs() < 1e-9), "tensor {ti} ({i},{j}): fd={fd} analytic={a}");
                }
            }
        }
    }

    #[test]
    fn short_doc_padded_to_width() {
        let mut r = stream(4, "cnn");
        let mut cnn = TextCnn::new(&mut r, 2, 3, 2, 2);
        let doc = uniform_init(&mut r, 1, 2, 1.0);
        let y = cnn.forward(&doc);
        assert_eq!(y.dim(), (1, 2));
        assert!(y.iter().all(|v| v.is_finite()));
    }
}
