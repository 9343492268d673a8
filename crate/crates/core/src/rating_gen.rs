//! Rating generator: an autoencoder reconstructs template rows into dense
//! real-valued ratings, which pruning turns into discrete fake profiles
//! (target forced to r_max, F-1 fillers closest to their template values).
//!
//! Training crosses the discrete pruning ops with a straight-through
//! estimator: the forward pass is exact, the backward pass treats rounding
//! as identity and the filler mask as a constant.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::data::{RatingScale, SparseMatrix};
use crate::error::{Error, Result};
use crate::nn::{Adam, BatchNorm, Dense, Dropout, Param, Relu, Rescale};
use crate::templates::TemplateMatrix;

const MIN_WIDTH: usize = 8;
const ENCODER_LAYERS: usize = 3;
pub const DROPOUT_RATE: f64 = 0.5;
pub const PRETRAIN_LR: f64 = 1e-2;

/// Hidden layer: Dense, BatchNorm, ReLU, Dropout.
#[derive(Debug, Clone)]
struct Block {
    dense: Dense,
    bn: BatchNorm,
    relu: Relu,
    drop: Dropout,
}

impl Block {
    fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Block {
            dense: Dense::new(rng, inputs, outputs),
            bn: BatchNorm::new(outputs),
            relu: Relu::default(),
            drop: Dropout::new(DROPOUT_RATE),
        }
    }

    fn forward(&mut self, x: &Array2<f64>, train: bool, mask: Option<&Array2<f64>>) -> Array2<f64> {
        let y = self.dense.forward(x);
        let y = self.bn.forward(&y, train);
        let y = self.relu.forward(&y);
        self.drop.forward(&y, mask)
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let dy = self.drop.backward(dy);
        let dy = self.relu.backward(&dy);
        let dy = self.bn.backward(&dy);
        self.dense.backward(&dy)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.dense.params_mut();
        ps.extend(self.bn.params_mut());
        ps
    }
}

/// Encoder of three halving layers, decoder mirroring back up, final dense
/// into a ReScale squashing into (r_min, r_max).
#[derive(Debug, Clone)]
pub struct Autoencoder {
    blocks: Vec<Block>,
    final_dense: Dense,
    rescale: Rescale,
    pub input_width: usize,
    pub scale: RatingScale,
}

/// Output widths of the five hidden blocks for input width n.
pub fn hidden_widths(n: usize) -> Vec<usize> {
    let mut enc = Vec::with_capacity(ENCODER_LAYERS);
    let mut w = n;
    for _ in 0..ENCODER_LAYERS {
        w = (w / 2).max(MIN_WIDTH);
        enc.push(w);
    }
    let mut all = enc.clone();
    for k in (0..ENCODER_LAYERS - 1).rev() {
        all.push(enc[k]);
    }
    all
}

impl Autoencoder {
    pub fn new<R: Rng>(rng: &mut R, n: usize, scale: RatingScale) -> Self {
        let widths = hidden_widths(n);
        let mut blocks = Vec::with_capacity(widths.len());
        let mut prev = n;
        for &w in &widths {
            blocks.push(Block::new(rng, prev, w));
            prev = w;
        }
        Autoencoder {
            blocks,
            final_dense: Dense::new(rng, prev, n),
            rescale: Rescale::new(scale.min as f64, scale.max as f64),
            input_width: n,
            scale,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// One dropout mask per hidden block for a batch of the given size.
    pub fn sample_masks<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<Array2<f64>> {
        self.blocks
            .iter()
            .map(|b| b.drop.sample_mask(rng, batch, b.bn.gamma.w.ncols()))
            .collect()
    }

    /// masks = None means inference (running batch-norm stats, no dropout).
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        train: bool,
        masks: Option<&[Array2<f64>]>,
    ) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width {
            return Err(Error::ShapeMismatch {
                msg: format!("generator expects width {}, got {}", self.input_width, x.ncols()),
            });
        }
        if let Some(ms) = masks {
            assert_eq!(ms.len(), self.blocks.len(), "one dropout mask per block");
        }
        let mut h = x.clone();
        for (k, b) in self.blocks.iter_mut().enumerate() {
            let mask = masks.map(|ms| &ms[k]);
            h = b.forward(&h, train, mask);
        }
        let h = self.final_dense.forward(&h);
        Ok(self.rescale.forward(&h))
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let dy = self.rescale.backward(dy);
        let mut dy = self.final_dense.backward(&dy);
        for b in self.blocks.iter_mut().rev() {
            dy = b.backward(&dy);
        }
        dy
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        for b in &mut self.blocks {
            ps.extend(b.params_mut());
        }
        ps.extend(self.final_dense.params_mut());
        ps
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Tensors in checkpoint order, including batch-norm running statistics.
    pub fn tensors(&self) -> Vec<Array2<f64>> {
        let mut ts = Vec::new();
        for b in &self.blocks {
            ts.push(b.dense.w.w.clone());
            ts.push(b.dense.b.w.clone());
            ts.push(b.bn.gamma.w.clone());
            ts.push(b.bn.beta.w.clone());
            ts.push(b.running_mean());
            ts.push(b.running_var());
        }
        ts.push(self.final_dense.w.w.clone());
        ts.push(self.final_dense.b.w.clone());
        ts
    }

    pub fn assign_tensors(&mut self, ts: &[Array2<f64>]) -> Result<()> {
        let expect = self.blocks.len() * 6 + 2;
        if ts.len() != expect {
            return Err(Error::Checkpoint(format!(
                "generator checkpoint holds {} tensors, expected {expect}",
                ts.len()
            )));
        }
        let mut it = ts.iter();
        let mut take = |target: &mut Array2<f64>| -> Result<()> {
            let t = it.next().unwrap();
            if t.raw_dim() != target.raw_dim() {
                return Err(Error::Checkpoint("tensor shape mismatch".into()));
            }
            target.assign(t);
            Ok(())
        };
        for b in &mut self.blocks {
            take(&mut b.dense.w.w)?;
            take(&mut b.dense.b.w)?;
            take(&mut b.bn.gamma.w)?;
            take(&mut b.bn.beta.w)?;
            take(&mut b.bn.running_mean)?;
            take(&mut b.bn.running_var)?;
        }
        take(&mut self.final_dense.w.w)?;
        take(&mut self.final_dense.b.w)?;
        Ok(())
    }
}

impl Block {
    fn running_mean(&self) -> Array2<f64> {
        self.bn.running_mean.clone()
    }

    fn running_var(&self) -> Array2<f64> {
        self.bn.running_var.clone()
    }
}

/// Inference-mode reconstruction of the template rows.
pub fn reconstruct(templates: &TemplateMatrix, gen: &mut Autoencoder, train: bool) -> Result<Array2<f64>> {
    gen.forward(&templates.rows, train, None)
}

/// Fit the autoencoder to its reconstruction role before the adversarial
/// phase: masked MSE over the template support, so d starts out tracking e
/// where e is nonzero and pruning distances are small. Dropout stays off
/// here (it belongs to the adversarial perturbation phase; with it on the
/// fit plateaus far from the templates). Returns the per-epoch loss trace.
pub fn pretrain_reconstruction(
    gen: &mut Autoencoder,
    templates: &TemplateMatrix,
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    let e = &templates.rows;
    let support = e.mapv(|v| if v != 0.0 { 1.0_f64 } else { 0.0 });
    let nnz = support.sum().max(1.0);
    let mut opt = Adam::new(lr);
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let d = gen.forward(e, true, None)?;
        let diff = (&d - e) * &support;
        trace.push(diff.mapv(|v| v * v).sum() / nnz);
        let dd = diff.mapv(|v| 2.0 * v / nnz);
        gen.zero_grads();
        gen.backward(&dd);
        opt.step(&mut gen.params_mut());
    }
    Ok(trace)
}

/// Round half-up, clamped into the scale.
pub fn round_off(x: f64, r_min: i64, r_max: i64) -> i64 {
    ((x + 0.5).floor() as i64).clamp(r_min, r_max)
}

/// Filler mask over one row: among items i != t with a template rating, the
/// F-1 smallest |d_i - e_i| win (ties to the lower index).
pub fn select_fillers(d_row: ArrayView1<f64>, e_row: ArrayView1<f64>, f_size: usize, t: usize) -> Vec<bool> {
    assert!(f_size >= 1);
    assert_eq!(d_row.len(), e_row.len());
    let mut candidates: Vec<(f64, usize)> = (0..e_row.len())
        .filter(|&i| i != t && e_row[i] != 0.0)
        .map(|i| ((d_row[i] - e_row[i]).abs(), i))
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut mask = vec![false; e_row.len()];
    for &(_, i) in candidates.iter().take(f_size - 1) {
        mask[i] = true;
    }
    mask
}

/// Discrete fake profiles plus the filler masks the backward pass reuses.
#[derive(Debug, Clone)]
pub struct FakeRatingMatrix {
    pub ratings: SparseMatrix,
    pub filler_masks: Vec<Vec<bool>>,
    pub target_item: usize,
}

impl FakeRatingMatrix {
    /// 1.0 on filler positions, 0.0 elsewhere (target column excluded): the
    /// constant mask the straight-through backward multiplies into.
    pub fn straight_through_mask(&self) -> Array2<f64> {
        let a = self.filler_masks.len();
        let n = self.ratings.n_cols();
        Array2::from_shape_fn((a, n), |(r, c)| if self.filler_masks[r][c] { 1.0 } else { 0.0 })
    }
}

/// Apply the pruning rule to a dense reconstruction.
pub fn prune(d: &Array2<f64>, templates: &TemplateMatrix, f_size: usize, scale: RatingScale) -> FakeRatingMatrix {
    assert_eq!(d.raw_dim(), templates.rows.raw_dim(), "reconstruction shape");
    assert!(scale.min >= 1, "pruning needs r_min >= 1 so 0 can mean absent");
    let t = templates.target_item;
    let (a, n) = (d.nrows(), d.ncols());
    let mut ratings = SparseMatrix::zeros(a, n);
    let mut filler_masks = Vec::with_capacity(a);
    for r in 0..a {
        let mask = select_fillers(d.row(r), templates.rows.row(r), f_size, t);
        for (i, &m) in mask.iter().enumerate() {
            if m {
                ratings.set(r, i, round_off(d[(r, i)], scale.min, scale.max) as f64);
            }
        }
        ratings.set(r, t, scale.max as f64);
        filler_masks.push(mask);
    }
    FakeRatingMatrix { ratings, filler_masks, target_item: t }
}

/// Differentiable relaxation used by gradient checks: the reconstruction
/// masked to the (frozen) filler support, with the target column pinned at
/// r_max. Rounding is dropped, matching the straight-through backward.
pub fn relaxed_fake(d: &Array2<f64>, mask: &Array2<f64>, t: usize, r_max: f64) -> Array2<f64> {
    let mut y = d * mask;
    for r in 0..y.nrows() {
        y[(r, t)] = r_max;
    }
    y
}
