//! Single-layer LSTM over fixed-length sequences, returning the final
//! hidden state. Gate order in the packed weight matrices is [i, f, g, o];
//! the forget-gate bias starts at 1.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Axis};

use super::{glorot, sigmoid, Scalar};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct Lstm<F> {
    /// (input, 4*hidden)
    pub wx: Array2<F>,
    /// (hidden, 4*hidden)
    pub wh: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug)]
pub struct LstmCache<F> {
    x: Array3<F>,
    /// Post-activation gates per step: (batch, 4*hidden).
    gates: Vec<Array2<F>>,
    /// Cell states; index 0 is the initial zero state.
    c: Vec<Array2<F>>,
    /// Hidden states; index 0 is the initial zero state.
    h: Vec<Array2<F>>,
    tanh_c: Vec<Array2<F>>,
}

impl<F: Scalar> Lstm<F> {
    pub fn new(rng: &mut SplitMix64, d_in: usize, hidden: usize) -> Self {
        let wx_data = glorot::<F>(rng, d_in, 4 * hidden, d_in * 4 * hidden);
        let wh_data = glorot::<F>(rng, hidden, 4 * hidden, hidden * 4 * hidden);
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(F::one());
        Self {
            wx: Array2::from_shape_vec((d_in, 4 * hidden), wx_data).expect("wx shape"),
            wh: Array2::from_shape_vec((hidden, 4 * hidden), wh_data).expect("wh shape"),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    pub fn forward(&self, x: &Array3<F>) -> (Array2<F>, LstmCache<F>) {
        let (batch, steps, _) = x.dim();
        let hidden = self.hidden();
        let mut gates = Vec::with_capacity(steps);
        let mut c = Vec::with_capacity(steps + 1);
        let mut h = Vec::with_capacity(steps + 1);
        let mut tanh_c = Vec::with_capacity(steps);
        c.push(Array2::zeros((batch, hidden)));
        h.push(Array2::zeros((batch, hidden)));

        for t in 0..steps {
            let x_t = x.index_axis(Axis(1), t);
            let mut z = Array2::zeros((batch, 4 * hidden));
            z += &self.b;
            general_mat_mul(F::one(), &x_t, &self.wx, F::one(), &mut z);
            general_mat_mul(F::one(), &h[t].view(), &self.wh, F::one(), &mut z);

            for (col, v) in z.indexed_iter_mut() {
                let gate = col.1 / hidden;
                *v = if gate == 2 { v.tanh() } else { sigmoid(*v) };
            }

            let i = z.slice(s![.., 0..hidden]);
            let f = z.slice(s![.., hidden..2 * hidden]);
            let g = z.slice(s![.., 2 * hidden..3 * hidden]);
            let o = z.slice(s![.., 3 * hidden..4 * hidden]);

            let c_t = &(&f * &c[t]) + &(&i * &g);
            let tanh_c_t = c_t.mapv(|v| v.tanh());
            let h_t = &o * &tanh_c_t;

            gates.push(z.clone());
            c.push(c_t);
            tanh_c.push(tanh_c_t);
            h.push(h_t);
        }

        let last = h[steps].clone();
        (last, LstmCache { x: x.clone(), gates, c, h, tanh_c })
    }

    /// Hidden states gathered at per-sample positions (e.g. the last
    /// non-pad token), avoiding the state washout of trailing PAD steps.
    pub fn forward_at(
        &self,
        x: &Array3<F>,
        positions: &[usize],
    ) -> (Array2<F>, LstmCache<F>) {
        let (_, cache) = self.forward(x);
        let hidden = self.hidden();
        let mut h_sel = Array2::zeros((positions.len(), hidden));
        for (i, &p) in positions.iter().enumerate() {
            h_sel.row_mut(i).assign(&cache.h[p + 1].row(i));
        }
        (h_sel, cache)
    }

    /// BPTT from per-sample gradients injected at the given positions.
    pub fn backward_at(
        &self,
        cache: &LstmCache<F>,
        dh_sel: &Array2<F>,
        positions: &[usize],
        compute_dx: bool,
    ) -> ((Array2<F>, Array2<F>, Array1<F>), Option<Array3<F>>) {
        self.backward_impl(cache, dh_sel, Some(positions), compute_dx)
    }

    /// BPTT from a gradient on the final hidden state.
    pub fn backward(
        &self,
        cache: &LstmCache<F>,
        dh_last: &Array2<F>,
        compute_dx: bool,
    ) -> ((Array2<F>, Array2<F>, Array1<F>), Option<Array3<F>>) {
        self.backward_impl(cache, dh_last, None, compute_dx)
    }

    fn backward_impl(
        &self,
        cache: &LstmCache<F>,
        dh_in: &Array2<F>,
        positions: Option<&[usize]>,
        compute_dx: bool,
    ) -> ((Array2<F>, Array2<F>, Array1<F>), Option<Array3<F>>) {
        let (batch, steps, d_in) = cache.x.dim();
        let hidden = self.hidden();
        let mut dwx = Array2::zeros(self.wx.raw_dim());
        let mut dwh = Array2::zeros(self.wh.raw_dim());
        let mut db = Array1::zeros(4 * hidden);
        let mut dx = compute_dx.then(|| Array3::zeros((batch, steps, d_in)));

        let mut dh = match positions {
            None => dh_in.clone(),
            Some(_) => Array2::zeros((batch, hidden)),
        };
        let mut dc: Array2<F> = Array2::zeros((batch, hidden));

        for t in (0..steps).rev() {
            if let Some(positions) = positions {
                for (i, &p) in positions.iter().enumerate() {
                    if p == t {
                        let mut row = dh.row_mut(i);
                        row += &dh_in.row(i);
                    }
                }
            }
            let z = &cache.gates[t];
            let i = z.slice(s![.., 0..hidden]);
            let f = z.slice(s![.., hidden..2 * hidden]);
            let g = z.slice(s![.., 2 * hidden..3 * hidden]);
            let o = z.slice(s![.., 3 * hidden..4 * hidden]);
            let tanh_c = &cache.tanh_c[t];
            let c_prev = &cache.c[t];

            // dh flows into o and c; dc accumulates across steps.
            let one = F::one();
            let dct = &dc + &(&dh * &o.mapv(|v| v) * &tanh_c.mapv(|v| one - v * v));

            let mut dz = Array2::zeros((batch, 4 * hidden));
            {
                let mut dzi = dz.slice_mut(s![.., 0..hidden]);
                dzi.assign(&(&dct * &g));
                dzi.zip_mut_with(&i, |d, &iv| *d = *d * iv * (one - iv));
            }
            {
                let mut dzf = dz.slice_mut(s![.., hidden..2 * hidden]);
                dzf.assign(&(&dct * c_prev));
                dzf.zip_mut_with(&f, |d, &fv| *d = *d * fv * (one - fv));
            }
            {
                let mut dzg = dz.slice_mut(s![.., 2 * hidden..3 * hidden]);
                dzg.assign(&(&dct * &i));
                dzg.zip_mut_with(&g, |d, &gv| *d = *d * (one - gv * gv));
            }
            {
                let mut dzo = dz.slice_mut(s![.., 3 * hidden..4 * hidden]);
                dzo.assign(&(&dh * tanh_c));
                dzo.zip_mut_with(&o, |d, &ov| *d = *d * ov * (one - ov));
            }

            let x_t = cache.x.index_axis(Axis(1), t);
            general_mat_mul(F::one(), &x_t.t(), &dz.view(), F::one(), &mut dwx);
            general_mat_mul(F::one(), &cache.h[t].t(), &dz.view(), F::one(), &mut dwh);
            db += &dz.sum_axis(Axis(0));

            if let Some(dx) = dx.as_mut() {
                let mut dx_t = Array2::zeros((batch, d_in));
                general_mat_mul(F::one(), &dz.view(), &self.wx.t(), F::zero(), &mut dx_t);
                dx.index_axis_mut(Axis(1), t).assign(&dx_t);
            }

            let mut dh_prev = Array2::zeros((batch, hidden));
            general_mat_mul(F::one(), &dz.view(), &self.wh.t(), F::zero(), &mut dh_prev);
            dh = dh_prev;
            dc = &dct * &f;
        }

        ((dwx, dwh, db), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(73);
        let lstm = Lstm::<f64>::new(&mut rng, 3, 5);
        let mut x = Array3::<f64>::zeros((2, 4, 3));
        x.mapv_inplace(|_| rng.next_f64() - 0.5);

        let loss_for = |lstm: &Lstm<f64>, x: &Array3<f64>| {
            let (h, _) = lstm.forward(x);
            0.5 * h.iter().map(|v| v * v).sum::<f64>()
        };

        let (h, cache) = lstm.forward(&x);
        let ((dwx, dwh, db), dx) = lstm.backward(&cache, &h, true);
        let dx = dx.unwrap();

        let h_step = 1e-6;
        for idx in [[0usize, 0], [2, 19], [1, 7], [0, 12]] {
            let mut cp = lstm.clone();
            cp.wx[idx] += h_step;
            let up = loss_for(&cp, &x);
            cp.wx[idx] -= 2.0 * h_step;
            let down = loss_for(&cp, &x);
            let numeric = (up - down) / (2.0 * h_step);
            assert!(
                gradcheck::rel_err(dwx[idx], numeric) < 1e-5,
                "wx {idx:?}: {} vs {numeric}",
                dwx[idx]
            );
        }
        for idx in [[0usize, 0], [4, 19], [2, 11]] {
            let mut cp = lstm.clone();
            cp.wh[idx] += h_step;
            let up = loss_for(&cp, &x);
            cp.wh[idx] -= 2.0 * h_step;
            let down = loss_for(&cp, &x);
            let numeric = (up - down) / (2.0 * h_step);
            assert!(gradcheck::rel_err(dwh[idx], numeric) < 1e-5);
        }
        for i in [0usize, 6, 13, 19] {
            let mut cp = lstm.clone();
            cp.b[i] += h_step;
            let up = loss_for(&cp, &x);
            cp.b[i] -= 2.0 * h_step;
            let down = loss_for(&cp, &x);
            let numeric = (up - down) / (2.0 * h_step);
            assert!(gradcheck::rel_err(db[i], numeric) < 1e-5);
        }
        for idx in [[0usize, 0, 0], [1, 3, 2], [0, 2, 1]] {
            let mut xp = x.clone();
            xp[idx] += h_step;
            let up = loss_for(&lstm, &xp);
            xp[idx] -= 2.0 * h_step;
            let down = loss_for(&lstm, &xp);
            let numeric = (up - down) / (2.0 * h_step);
            assert!(gradcheck::rel_err(dx[idx], numeric) < 1e-5);
        }
    }

    #[test]
    fn positional_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(91);
        let lstm = Lstm::<f64>::new(&mut rng, 3, 4);
        let mut x = Array3::<f64>::zeros((3, 5, 3));
        x.mapv_inplace(|_| rng.next_f64() - 0.5);
        let positions = [1usize, 4, 2];

        let loss_for = |lstm: &Lstm<f64>, x: &Array3<f64>| {
            let (h, _) = lstm.forward_at(x, &positions);
            0.5 * h.iter().map(|v| v * v).sum::<f64>()
        };

        let (h, cache) = lstm.forward_at(&x, &positions);
        let ((dwx, _, db), dx) = lstm.backward_at(&cache, &h, &positions, true);
        let dx = dx.unwrap();

        let hs = 1e-6;
        for idx in [[0usize, 0], [2, 11], [1, 5]] {
            let mut cp = lstm.clone();
            cp.wx[idx] += hs;
            let up = loss_for(&cp, &x);
            cp.wx[idx] -= 2.0 * hs;
            let down = loss_for(&cp, &x);
            let numeric = (up - down) / (2.0 * hs);
            assert!(gradcheck::rel_err(dwx[idx], numeric) < 1e-5, "wx {idx:?}");
        }
        for i in [0usize, 7, 15] {
            let mut cp = lstm.clone();
            cp.b[i] += hs;
            let up = loss_for(&cp, &x);
            cp.b[i] -= 2.0 * hs;
            let down = loss_for(&cp, &x);
            let numeric = (up - down) / (2.0 * hs);
            assert!(gradcheck::rel_err(db[i], numeric) < 1e-5, "b {i}");
        }
        // Gradient w.r.t. inputs after a sample's position must be zero.
        for idx in [[0usize, 3, 0], [0, 2, 1], [2, 4, 2]] {
            assert_eq!(dx[idx], 0.0, "gradient leaked past position at {idx:?}");
        }
        for idx in [[0usize, 0, 0], [1, 3, 2], [2, 1, 1]] {
            let mut xp = x.clone();
            xp[idx] += hs;
            let up = loss_for(&lstm, &xp);
            xp[idx] -= 2.0 * hs;
            let down = loss_for(&lstm, &xp);
            let numeric = (up - down) / (2.0 * hs);
            assert!(gradcheck::rel_err(dx[idx], numeric) < 1e-5, "x {idx:?}");
        }
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = SplitMix64::new(1);
        let lstm = Lstm::<f32>::new(&mut rng, 2, 3);
        for i in 0..3 {
            assert_eq!(lstm.b[3 + i], 1.0);
            assert_eq!(lstm.b[i], 0.0);
        }
    }
}
