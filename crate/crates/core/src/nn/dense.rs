//! Fully-connected layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};

use super::{glorot, Scalar};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct Dense<F> {
    /// (in, out)
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(rng: &mut SplitMix64, d_in: usize, d_out: usize) -> Self {
        let data = glorot::<F>(rng, d_in, d_out, d_in * d_out);
        let w = Array2::from_shape_vec((d_in, d_out), data).expect("shape matches data");
        Self { w, b: Array1::zeros(d_out) }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = Array2::zeros((x.nrows(), self.w.ncols()));
        y += &self.b;
        general_mat_mul(F::one(), x, &self.w, F::one(), &mut y);
        y
    }

    pub fn backward(
        &self,
        x: &Array2<F>,
        dy: &Array2<F>,
        compute_dw: bool,
        compute_dx: bool,
    ) -> (Option<(Array2<F>, Array1<F>)>, Option<Array2<F>>) {
        let dw_db = compute_dw.then(|| {
            let mut dw = Array2::zeros(self.w.raw_dim());
            general_mat_mul(F::one(), &x.t(), dy, F::zero(), &mut dw);
            (dw, dy.sum_axis(Axis(0)))
        });
        let dx = compute_dx.then(|| {
            let mut dx = Array2::zeros(x.raw_dim());
            general_mat_mul(F::one(), dy, &self.w.t(), F::zero(), &mut dx);
            dx
        });
        (dw_db, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(23);
        let layer = Dense::<f64>::new(&mut rng, 5, 3);
        let mut x = Array2::<f64>::zeros((4, 5));
        x.mapv_inplace(|_| rng.next_f64() - 0.5);

        let loss_for = |layer: &Dense<f64>, x: &Array2<f64>| {
            let y = layer.forward(x);
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };

        let y = layer.forward(&x);
        let (dwdb, dx) = layer.backward(&x, &y, true, true);
        let (dw, db) = dwdb.unwrap();
        let dx = dx.unwrap();

        let h = 1e-6;
        for idx in [[0usize, 0], [4, 2], [2, 1]] {
            let mut cp = layer.clone();
            cp.w[idx] += h;
            let up = loss_for(&cp, &x);
            cp.w[idx] -= 2.0 * h;
            let down = loss_for(&cp, &x);
            assert!(gradcheck::rel_err(dw[idx], (up - down) / (2.0 * h)) < 1e-5);
        }
        for i in 0..3 {
            let mut cp = layer.clone();
            cp.b[i] += h;
            let up = loss_for(&cp, &x);
            cp.b[i] -= 2.0 * h;
            let down = loss_for(&cp, &x);
            assert!(gradcheck::rel_err(db[i], (up - down) / (2.0 * h)) < 1e-5);
        }
        for idx in [[0usize, 0], [3, 4]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let up = loss_for(&layer, &xp);
            xp[idx] -= 2.0 * h;
            let down = loss_for(&layer, &xp);
            assert!(gradcheck::rel_err(dx[idx], (up - down) / (2.0 * h)) < 1e-5);
        }
    }
}
