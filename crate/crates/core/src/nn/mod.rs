//! Minimal neural-network layers used by the autoencoder, the GAN heads,
//! and the classifier zoo.
//!
//! Everything is CPU `ndarray` with explicit forward/backward passes; there
//! is no tape. Layers are generic over the float type so unit tests can
//! verify gradients against central finite differences in `f64` while
//! training runs in `f32`. All randomness comes from [`crate::rng`], so a
//! fixed seed reproduces parameters and update order bit-for-bit.

mod conv;
mod dense;
mod embedding;
mod lstm;

pub use conv::{Conv1d, ParallelConvs};
pub use dense::Dense;
pub use embedding::Embedding;
pub use lstm::{Lstm, LstmCache};

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayViewD, ArrayViewMutD, Axis, NdFloat, Zip};

use crate::rng::SplitMix64;

/// Float bound for all layers.
pub trait Scalar: NdFloat {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Uniform Glorot initialization: limit = sqrt(6 / (fan_in + fan_out)),
/// drawn in row-major order from the given stream.
pub fn glorot<F: Scalar>(rng: &mut SplitMix64, fan_in: usize, fan_out: usize, n: usize) -> Vec<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| F::from_f64((rng.next_f64() * 2.0 - 1.0) * limit)).collect()
}

pub fn relu_inplace<F: Scalar>(x: &mut ArrayD<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// ReLU backward using the forward *output* as the mask (slope 0 at 0).
pub fn relu_mask_backward<F: Scalar, D: ndarray::Dimension>(
    dy: &mut ndarray::Array<F, D>,
    y: &ndarray::Array<F, D>,
) {
    Zip::from(dy).and(y).for_each(|d, &out| {
        if out <= F::zero() {
            *d = F::zero();
        }
    });
}

/// Softmax over the last axis, in place.
pub fn softmax_last_axis<F: Scalar>(x: &mut Array3<F>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Backward through a row-wise softmax: given dL/dp and p, returns dL/dz
/// where z are the logits.
pub fn softmax_backward<F: Scalar>(dp: &Array3<F>, p: &Array3<F>) -> Array3<F> {
    let mut dz = dp.clone();
    for (mut dz_row, p_row) in dz.rows_mut().into_iter().zip(p.rows()) {
        let dot = dz_row
            .iter()
            .zip(p_row.iter())
            .fold(F::zero(), |acc, (&d, &pv)| acc + d * pv);
        Zip::from(&mut dz_row).and(&p_row).for_each(|d, &pv| {
            *d = pv * (*d - dot);
        });
    }
    dz
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Default::default() }
    }
}

/// Per-model optimizer state: first/second moments per parameter tensor,
/// in the model's documented parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    t: i32,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    cfg: AdamConfig,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { t: 0, m: Vec::new(), v: Vec::new(), cfg }
    }

    /// Applies one update step. `params` and `grads` must line up with each
    /// other and keep a stable order across steps.
    pub fn step(&mut self, mut params: Vec<ArrayViewMutD<F>>, grads: &[ArrayD<F>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
            self.v = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
        }
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let eps = F::from_f64(self.cfg.eps);
        let correction =
            self.cfg.lr * (1.0 - self.cfg.beta2.powi(self.t)).sqrt() / (1.0 - self.cfg.beta1.powi(self.t));
        let lr_t = F::from_f64(correction);
        let one = F::one();

        for ((param, grad), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - lr_t * *m / (v.sqrt() + eps);
            });
        }
    }
}

/// Dynamic views over a model's gradient tensors, for norm checks.
pub fn grads_all_finite<F: Scalar>(grads: &[ArrayD<F>]) -> bool {
    grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
}

/// Concatenates equally-shaped (batch, len, c) tensors along the channel
/// axis with per-row block copies.
pub fn concat_channels<F: Scalar>(parts: &[&Array3<F>]) -> Array3<F> {
    let (batch, len, c) = parts[0].dim();
    debug_assert!(parts.iter().all(|p| p.dim() == (batch, len, c)));
    let total = c * parts.len();
    let mut out = Array3::zeros((batch, len, total));
    {
        let dst = out.as_slice_mut().expect("out is standard layout");
        for (i, part) in parts.iter().enumerate() {
            let src = part.as_slice().expect("part is standard layout");
            for row in 0..batch * len {
                dst[row * total + i * c..row * total + (i + 1) * c]
                    .copy_from_slice(&src[row * c..(row + 1) * c]);
            }
        }
    }
    out
}

/// Inverse of [`concat_channels`]: splits the channel axis into `parts`
/// equal tensors.
pub fn split_channels<F: Scalar>(x: &Array3<F>, parts: usize) -> Vec<Array3<F>> {
    let (batch, len, total) = x.dim();
    debug_assert_eq!(total % parts, 0);
    let c = total / parts;
    let src = x.as_slice().expect("x is standard layout");
    (0..parts)
        .map(|i| {
            let mut out = Array3::zeros((batch, len, c));
            {
                let dst = out.as_slice_mut().expect("out is standard layout");
                for row in 0..batch * len {
                    dst[row * c..(row + 1) * c]
                        .copy_from_slice(&src[row * total + i * c..row * total + (i + 1) * c]);
                }
            }
            out
        })
        .collect()
}

/// Mean squared error between two equally-shaped tensors.
pub fn mse<F: Scalar>(a: ArrayViewD<F>, b: ArrayViewD<F>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.len() as f64;
    let mut acc = 0.0f64;
    Zip::from(&a).and(&b).for_each(|&x, &y| {
        let d = (x - y).to_f64();
        acc += d * d;
    });
    acc / n
}

/// Row-wise mean over the batch axis.
pub fn batch_mean<F: Scalar>(x: &Array2<F>) -> Array1<F> {
    let n = F::from_f64(x.nrows() as f64);
    x.sum_axis(Axis(0)) / n
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference gradient checking in f64.

    /// Relative error between analytic and numeric values.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        (analytic - numeric).abs() / denom
    }

    /// Checks d(loss)/d(theta[i]) for a sampled set of coordinates.
    ///
    /// `loss` must be a pure function of the parameter vector.
    #[allow(dead_code)]
    pub fn check_subset<Lf>(
        theta: &mut [f64],
        analytic: &[f64],
        coords: &[usize],
        mut loss: Lf,
        h: f64,
        tol: f64,
    ) where
        Lf: FnMut(&[f64]) -> f64,
    {
        for &i in coords {
            let orig = theta[i];
            theta[i] = orig + h;
            let up = loss(theta);
            theta[i] = orig - h;
            let down = loss(theta);
            theta[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic[i], numeric);
            assert!(
                err < tol,
                "coordinate {i}: analytic {} vs numeric {} (rel err {err:.3e})",
                analytic[i],
                numeric
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = arr3(&[[[1.0f64, 2.0, 3.0], [0.0, 0.0, 0.0]]]);
        softmax_last_axis(&mut x);
        for row in x.rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(x[[0, 0, 2]] > x[[0, 0, 0]]);
        assert!((x[[0, 1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = ndarray::ArrayD::<f64>::zeros(ndarray::IxDyn(&[3]));
        let g = ndarray::ArrayD::<f64>::from_elem(ndarray::IxDyn(&[3]), 1.0);
        let mut state = AdamState::new(AdamConfig::with_lr(0.1));
        state.step(vec![p.view_mut()], &[g.clone()]);
        assert!(p.iter().all(|&v| v < 0.0));
        state.step(vec![p.view_mut()], &[g]);
        assert!(p.iter().all(|&v| v < -0.1));
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        use crate::rng::SplitMix64;
        let mut rng = SplitMix64::new(11);
        let mut z = Array3::<f64>::zeros((2, 3, 5));
        z.mapv_inplace(|_| rng.next_f64() * 2.0 - 1.0);
        let mut weights = Array3::<f64>::zeros((2, 3, 5));
        weights.mapv_inplace(|_| rng.next_f64());

        // loss = sum(w * softmax(z))
        let loss_of = |z: &Array3<f64>| {
            let mut p = z.clone();
            softmax_last_axis(&mut p);
            (&p * &weights).sum()
        };

        let mut p = z.clone();
        softmax_last_axis(&mut p);
        let dz = softmax_backward(&weights, &p);

        let h = 1e-6;
        for idx in [[0usize, 0, 0], [1, 2, 4], [0, 1, 3], [1, 0, 2]] {
            let mut zp = z.clone();
            zp[idx] += h;
            let mut zm = z.clone();
            zm[idx] -= h;
            let numeric = (loss_of(&zp) - loss_of(&zm)) / (2.0 * h);
            let err = gradcheck::rel_err(dz[idx], numeric);
            assert!(err < 1e-5, "dz at {idx:?}: {} vs {numeric} ({err:.2e})", dz[idx]);
        }
    }
}
