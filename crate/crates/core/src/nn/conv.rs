//! 1-D convolution with length-preserving ("same") padding.
//!
//! Activations are (batch, length, channels), flattened to (batch*length,
//! channels) row matrices. Each kernel offset contributes one GEMM taken
//! directly against a row-shifted view of the input -- no im2col buffer and
//! no padded copy. A shifted view bleeds across sample boundaries, so the
//! few contaminated rows per sample are corrected afterwards; that costs a
//! handful of row-vector products instead of megabytes of window copies.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};

use super::{glorot, Scalar};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    /// (k, c_in, c_out)
    pub w: Array3<F>,
    pub b: Array1<F>,
}

// Boundary corrections touch a handful of rows per sample; they must walk
// `w` along its contiguous rows or they dominate the whole conv.

/// y_row -= x_row @ w  (w: c_in x c_out, row-contiguous)
fn sub_vec_mat<F: Scalar>(
    mut y_row: ndarray::ArrayViewMut1<F>,
    x_row: ndarray::ArrayView1<F>,
    w: &ArrayView2<F>,
) {
    let y = y_row.as_slice_mut().expect("y row is contiguous");
    for (c, &xv) in x_row.iter().enumerate() {
        let w_row = w.row(c);
        let w_row = w_row.as_slice().expect("w row is contiguous");
        for (d, &wv) in y.iter_mut().zip(w_row) {
            *d = *d - xv * wv;
        }
    }
}

/// dx_row -= w @ dy_row  (w: c_in x c_out, row-contiguous)
fn sub_mat_vec<F: Scalar>(
    mut dx_row: ndarray::ArrayViewMut1<F>,
    w: &ArrayView2<F>,
    dy_row: ndarray::ArrayView1<F>,
) {
    let dy = dy_row.as_slice().expect("dy row is contiguous");
    for (c, d) in dx_row.iter_mut().enumerate() {
        let w_row = w.row(c);
        let w_row = w_row.as_slice().expect("w row is contiguous");
        let mut acc = F::zero();
        for (&wv, &gv) in w_row.iter().zip(dy) {
            acc = acc + wv * gv;
        }
        *d = *d - acc;
    }
}

/// dw -= outer(x_row, dy_row)
fn outer_sub<F: Scalar>(
    dw: &mut ArrayViewMut2<F>,
    x_row: ndarray::ArrayView1<F>,
    dy_row: ndarray::ArrayView1<F>,
) {
    let dy = dy_row.as_slice().expect("dy row is contiguous");
    for (c, &xv) in x_row.iter().enumerate() {
        let mut dw_row = dw.row_mut(c);
        let dw_row = dw_row.as_slice_mut().expect("dw row is contiguous");
        for (d, &gv) in dw_row.iter_mut().zip(dy) {
            *d = *d - xv * gv;
        }
    }
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(rng: &mut SplitMix64, k: usize, c_in: usize, c_out: usize) -> Self {
        let fan_in = k * c_in;
        let data = glorot::<F>(rng, fan_in, c_out, k * c_in * c_out);
        let w = Array3::from_shape_vec((k, c_in, c_out), data).expect("shape matches data");
        Self { w, b: Array1::zeros(c_out) }
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[2]
    }

    /// Left pad for "same" output length: (k-1)/2, remainder on the right.
    pub fn pad_left(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        self.forward_impl(x, true)
    }

    /// Linear part of the forward pass (no bias), for tangent propagation.
    pub fn forward_linear(&self, x: &Array3<F>) -> Array3<F> {
        self.forward_impl(x, false)
    }

    fn forward_impl(&self, x: &Array3<F>, with_bias: bool) -> Array3<F> {
        let (batch, len, _) = x.dim();
        let mut y = Array3::zeros((batch, len, self.c_out()));
        {
            let mut y2 = y
                .view_mut()
                .into_shape_with_order((batch * len, self.c_out()))
                .expect("y is contiguous");
            if with_bias {
                y2 += &self.b;
            }
            self.accumulate_into(x, &mut y2);
        }
        y
    }

    /// y2 += conv(x), where y2 is any (batch*len, c_out) view (possibly a
    /// column block of a wider matrix).
    pub fn accumulate_into(&self, x: &Array3<F>, y2: &mut ArrayViewMut2<F>) {
        let (batch, len, c_in) = x.dim();
        debug_assert_eq!(c_in, self.c_in());
        let rows = batch * len;
        let x2 = x.view().into_shape_with_order((rows, c_in)).expect("x is contiguous");
        let pl = self.pad_left() as isize;

        for j in 0..self.kernel() {
            let w_j = self.w.index_axis(Axis(0), j);
            let r = j as isize - pl;
            if r >= 0 {
                let r = r as usize;
                let a = x2.slice(s![r..rows, ..]);
                let mut out = y2.slice_mut(s![0..rows - r, ..]);
                general_mat_mul(F::one(), &a, &w_j, F::one(), &mut out);
                // Rows whose shifted read crossed into the next sample.
                for b in 0..batch.saturating_sub(1) {
                    for t in len - r..len {
                        let p = b * len + t;
                        sub_vec_mat(y2.row_mut(p), x2.row(p + r), &w_j);
                    }
                }
            } else {
                let m = (-r) as usize;
                let a = x2.slice(s![0..rows - m, ..]);
                let mut out = y2.slice_mut(s![m..rows, ..]);
                general_mat_mul(F::one(), &a, &w_j, F::one(), &mut out);
                for b in 1..batch {
                    for t in 0..m {
                        let p = b * len + t;
                        sub_vec_mat(y2.row_mut(p), x2.row(p - m), &w_j);
                    }
                }
            }
        }
    }

    /// Backward pass against the stored input. Weight gradients are skipped
    /// when the layer is frozen; the input gradient is skipped when nothing
    /// upstream trains.
    pub fn backward(
        &self,
        x: &Array3<F>,
        dy: &Array3<F>,
        compute_dw: bool,
        compute_dx: bool,
    ) -> (Option<(Array3<F>, Array1<F>)>, Option<Array3<F>>) {
        let (batch, len, c_in) = x.dim();
        let rows = batch * len;
        let c_out = self.c_out();
        debug_assert_eq!(dy.dim(), (batch, len, c_out));
        let x2 = x.view().into_shape_with_order((rows, c_in)).expect("x is contiguous");
        let dy2 = dy.view().into_shape_with_order((rows, c_out)).expect("dy is contiguous");
        let pl = self.pad_left() as isize;

        let dw_db = compute_dw.then(|| {
            let mut dw = Array3::zeros(self.w.raw_dim());
            for j in 0..self.kernel() {
                let r = j as isize - pl;
                let mut dw_j = dw.index_axis_mut(Axis(0), j);
                if r >= 0 {
                    let r = r as usize;
                    let a = x2.slice(s![r..rows, ..]);
                    let g = dy2.slice(s![0..rows - r, ..]);
                    general_mat_mul(F::one(), &a.t(), &g, F::one(), &mut dw_j);
                    for b in 0..batch.saturating_sub(1) {
                        for t in len - r..len {
                            let p = b * len + t;
                            outer_sub(&mut dw_j, x2.row(p + r), dy2.row(p));
                        }
                    }
                } else {
                    let m = (-r) as usize;
                    let a = x2.slice(s![0..rows - m, ..]);
                    let g = dy2.slice(s![m..rows, ..]);
                    general_mat_mul(F::one(), &a.t(), &g, F::one(), &mut dw_j);
                    for b in 1..batch {
                        for t in 0..m {
                            let p = b * len + t;
                            outer_sub(&mut dw_j, x2.row(p - m), dy2.row(p));
                        }
                    }
                }
            }
            (dw, dy2.sum_axis(Axis(0)))
        });

        let dx = compute_dx.then(|| {
            let mut dx = Array3::zeros((batch, len, c_in));
            {
                let mut dx2 = dx
                    .view_mut()
                    .into_shape_with_order((rows, c_in))
                    .expect("dx is contiguous");
                for j in 0..self.kernel() {
                    let r = j as isize - pl;
                    let w_j = self.w.index_axis(Axis(0), j);
                    let w_t = w_j.t();
                    if r >= 0 {
                        let r = r as usize;
                        // dx[q] += dy[q - r] @ w^T for q >= r.
                        let g = dy2.slice(s![0..rows - r, ..]);
                        let mut out = dx2.slice_mut(s![r..rows, ..]);
                        general_mat_mul(F::one(), &g, &w_t, F::one(), &mut out);
                        for b in 1..batch {
                            for q in b * len..b * len + r {
                                sub_mat_vec(dx2.row_mut(q), &w_j, dy2.row(q - r));
                            }
                        }
                    } else {
                        let m = (-r) as usize;
                        let g = dy2.slice(s![m..rows, ..]);
                        let mut out = dx2.slice_mut(s![0..rows - m, ..]);
                        general_mat_mul(F::one(), &g, &w_t, F::one(), &mut out);
                        for b in 0..batch.saturating_sub(1) {
                            for q in b * len + len - m..(b + 1) * len {
                                sub_mat_vec(dx2.row_mut(q), &w_j, dy2.row(q + m));
                            }
                        }
                    }
                }
            }
            dx
        });

        (dw_db, dx)
    }
}

/// Three parallel convolutions over one shared input, evaluated as a
/// single im2col GEMM over a shared window with block-structured fused
/// weights, the outputs already concatenated along the channel axis.
///
/// Fusing pushes the contraction width from c_in (8 on the decoder side)
/// to window*c_in, which the GEMM kernels need to run anywhere near peak.
/// Window cells a kernel does not cover stay structurally zero and receive
/// no gradient.
#[derive(Debug, Clone)]
pub struct ParallelConvs<F> {
    pub convs: Vec<Conv1d<F>>,
    window: usize,
    window_pad_left: usize,
}

impl<F: Scalar> ParallelConvs<F> {
    pub fn new(convs: Vec<Conv1d<F>>) -> Self {
        debug_assert!(!convs.is_empty());
        let window = convs.iter().map(|c| c.kernel()).max().expect("non-empty");
        let window_pad_left = (window - 1) / 2;
        debug_assert!(convs.iter().all(|c| {
            let lo = window_pad_left as isize - c.pad_left() as isize;
            lo >= 0 && lo as usize + c.kernel() <= window
        }));
        Self { convs, window, window_pad_left }
    }

    pub fn c_in(&self) -> usize {
        self.convs[0].c_in()
    }

    pub fn c_out_total(&self) -> usize {
        self.convs.iter().map(|c| c.c_out()).sum()
    }

    /// Window cell of conv offset `j` for a member kernel.
    fn cell(&self, conv: &Conv1d<F>, j: usize) -> usize {
        j + self.window_pad_left - conv.pad_left()
    }

    fn fused_weights(&self) -> Array2<F> {
        let c_in = self.c_in();
        let mut fused = Array2::zeros((self.window * c_in, self.c_out_total()));
        let mut col = 0;
        for conv in &self.convs {
            for j in 0..conv.kernel() {
                let jw = self.cell(conv, j);
                fused
                    .slice_mut(s![jw * c_in..(jw + 1) * c_in, col..col + conv.c_out()])
                    .assign(&conv.w.index_axis(Axis(0), j));
            }
            col += conv.c_out();
        }
        fused
    }

    /// im2col over the shared window; out-of-range cells stay zero.
    fn build_xcol(&self, x: &Array3<F>) -> Array2<F> {
        let (batch, len, c_in) = x.dim();
        debug_assert_eq!(c_in, self.c_in());
        let width = self.window * c_in;
        let mut xcol = Array2::zeros((batch * len, width));
        {
            let src = x.as_slice().expect("x is standard layout");
            let dst = xcol.as_slice_mut().expect("xcol is standard layout");
            let pl = self.window_pad_left as isize;
            for b in 0..batch {
                let sample = &src[b * len * c_in..(b + 1) * len * c_in];
                for t in 0..len {
                    let row = &mut dst[(b * len + t) * width..(b * len + t + 1) * width];
                    for jw in 0..self.window {
                        let src_t = t as isize + jw as isize - pl;
                        if src_t < 0 || src_t >= len as isize {
                            continue;
                        }
                        let s = src_t as usize * c_in;
                        row[jw * c_in..(jw + 1) * c_in].copy_from_slice(&sample[s..s + c_in]);
                    }
                }
            }
        }
        xcol
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        self.forward_impl(x, true)
    }

    pub fn forward_linear(&self, x: &Array3<F>) -> Array3<F> {
        self.forward_impl(x, false)
    }

    fn forward_impl(&self, x: &Array3<F>, with_bias: bool) -> Array3<F> {
        let (batch, len, _) = x.dim();
        let total = self.c_out_total();
        let xcol = self.build_xcol(x);
        let mut y = Array2::zeros((batch * len, total));
        if with_bias {
            let mut col = 0;
            for conv in &self.convs {
                let mut block = y.slice_mut(s![.., col..col + conv.c_out()]);
                block += &conv.b;
                col += conv.c_out();
            }
        }
        general_mat_mul(F::one(), &xcol, &self.fused_weights(), F::one(), &mut y);
        y.into_shape_with_order((batch, len, total)).expect("fused output shape")
    }

    /// Backward from the concatenated output gradient. Returns per-conv
    /// (dw, db) pairs in member order and/or the input gradient.
    #[allow(clippy::type_complexity)]
    pub fn backward(
        &self,
        x: &Array3<F>,
        dy: &Array3<F>,
        compute_dw: bool,
        compute_dx: bool,
    ) -> (Option<Vec<(Array3<F>, Array1<F>)>>, Option<Array3<F>>) {
        let (batch, len, c_in) = x.dim();
        let rows = batch * len;
        let total = self.c_out_total();
        let dy2 = dy.view().into_shape_with_order((rows, total)).expect("dy is contiguous");

        let grads = compute_dw.then(|| {
            let xcol = self.build_xcol(x);
            let mut dw_fused = Array2::zeros((self.window * c_in, total));
            general_mat_mul(F::one(), &xcol.t(), &dy2, F::zero(), &mut dw_fused);
            let db_all = dy2.sum_axis(Axis(0));

            let mut out = Vec::with_capacity(self.convs.len());
            let mut col = 0;
            for conv in &self.convs {
                let mut dw = Array3::zeros(conv.w.raw_dim());
                for j in 0..conv.kernel() {
                    let jw = self.cell(conv, j);
                    dw.index_axis_mut(Axis(0), j).assign(&dw_fused.slice(s![
                        jw * c_in..(jw + 1) * c_in,
                        col..col + conv.c_out()
                    ]));
                }
                let db = db_all.slice(s![col..col + conv.c_out()]).to_owned();
                out.push((dw, db));
                col += conv.c_out();
            }
            out
        });

        let dx = compute_dx.then(|| {
            let width = self.window * c_in;
            let mut dxcol = Array2::zeros((rows, width));
            general_mat_mul(F::one(), &dy2, &self.fused_weights().t(), F::zero(), &mut dxcol);

            // col2im: scatter-add the window cells back onto the input grid.
            let mut dx = Array3::zeros((batch, len, c_in));
            {
                let src = dxcol.as_slice().expect("dxcol is standard layout");
                let dst = dx.as_slice_mut().expect("dx is standard layout");
                let pl = self.window_pad_left as isize;
                for b in 0..batch {
                    let sample = &mut dst[b * len * c_in..(b + 1) * len * c_in];
                    for t in 0..len {
                        let row = &src[(b * len + t) * width..(b * len + t + 1) * width];
                        for jw in 0..self.window {
                            let src_t = t as isize + jw as isize - pl;
                            if src_t < 0 || src_t >= len as isize {
                                continue;
                            }
                            let d = src_t as usize * c_in;
                            let dst_block = &mut sample[d..d + c_in];
                            let src_block = &row[jw * c_in..(jw + 1) * c_in];
                            for (dv, &sv) in dst_block.iter_mut().zip(src_block) {
                                *dv = *dv + sv;
                            }
                        }
                    }
                }
            }
            dx
        });

        (grads, dx)
    }
}
