//! Token embedding with two input paths: discrete id gather and a
//! continuous (one-hot or softmax) matrix product. On a one-hot input the
//! two paths agree exactly, which is what lets the critic consume
//! generator softmax outputs.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3};

use super::{glorot, Scalar};
use crate::corpus::TokenSeq;
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct Embedding<F> {
    /// (vocab, dim)
    pub w: Array2<F>,
    /// When set, `w` stays the identity and receives no gradients.
    pub frozen_one_hot: bool,
}

impl<F: Scalar> Embedding<F> {
    pub fn new(rng: &mut SplitMix64, vocab: usize, dim: usize) -> Self {
        let data = glorot::<F>(rng, vocab, dim, vocab * dim);
        let w = Array2::from_shape_vec((vocab, dim), data).expect("shape matches data");
        Self { w, frozen_one_hot: false }
    }

    /// Identity embedding (requires vocab == dim); stays frozen.
    pub fn identity(vocab: usize) -> Self {
        Self { w: Array2::eye(vocab), frozen_one_hot: true }
    }

    pub fn vocab(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward_ids(&self, seqs: &[TokenSeq]) -> Array3<F> {
        let seq_len = crate::corpus::SEQ_LEN;
        let mut out = Array3::zeros((seqs.len(), seq_len, self.dim()));
        for (b, seq) in seqs.iter().enumerate() {
            for (t, &id) in seq.ids().iter().enumerate() {
                out.slice_mut(ndarray::s![b, t, ..]).assign(&self.w.row(id as usize));
            }
        }
        out
    }

    /// Gradient of the gather: scatter-add rows of `dy` into `dw`.
    pub fn backward_ids(&self, seqs: &[TokenSeq], dy: &Array3<F>) -> Array2<F> {
        let mut dw = Array2::zeros(self.w.raw_dim());
        for (b, seq) in seqs.iter().enumerate() {
            for (t, &id) in seq.ids().iter().enumerate() {
                let mut row = dw.row_mut(id as usize);
                row += &dy.slice(ndarray::s![b, t, ..]);
            }
        }
        dw
    }

    /// Continuous path: x (batch, len, vocab) -> (batch, len, dim).
    pub fn forward_soft(&self, x: &Array3<F>) -> Array3<F> {
        let (batch, len, vocab) = x.dim();
        debug_assert_eq!(vocab, self.vocab());
        let x2 = x.to_shape((batch * len, vocab)).expect("x contiguous");
        let mut y = Array2::zeros((batch * len, self.dim()));
        general_mat_mul(F::one(), &x2.view(), &self.w, F::zero(), &mut y);
        y.into_shape_with_order((batch, len, self.dim())).expect("y shape")
    }

    pub fn backward_soft(
        &self,
        x: &Array3<F>,
        dy: &Array3<F>,
        compute_dw: bool,
        compute_dx: bool,
    ) -> (Option<Array2<F>>, Option<Array3<F>>) {
        let (batch, len, vocab) = x.dim();
        let dim = self.dim();
        let x2 = x.to_shape((batch * len, vocab)).expect("x contiguous");
        let dy2 = dy.to_shape((batch * len, dim)).expect("dy contiguous");

        let dw = compute_dw.then(|| {
            let mut dw = Array2::zeros(self.w.raw_dim());
            general_mat_mul(F::one(), &x2.t(), &dy2.view(), F::zero(), &mut dw);
            dw
        });
        let dx = compute_dx.then(|| {
            let mut dx2 = Array2::zeros((batch * len, vocab));
            general_mat_mul(F::one(), &dy2.view(), &self.w.t(), F::zero(), &mut dx2);
            dx2.into_shape_with_order((batch, len, vocab)).expect("dx shape")
        });
        (dw, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode, one_hot_batch, Vocabulary};

    #[test]
    fn soft_path_agrees_with_gather_on_one_hot() {
        let vocab = Vocabulary::standard();
        let mut rng = SplitMix64::new(41);
        let emb = Embedding::<f32>::new(&mut rng, 39, 16);
        let seqs = vec![encode("abc", &vocab).unwrap(), encode("z-9", &vocab).unwrap()];

        let gathered = emb.forward_ids(&seqs);
        let soft = emb.forward_soft(&one_hot_batch(&seqs));
        let max_err = gathered
            .iter()
            .zip(soft.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err == 0.0, "paths disagree by {max_err}");
    }

    #[test]
    fn identity_embedding_passes_one_hot_through() {
        let vocab = Vocabulary::standard();
        let emb = Embedding::<f32>::identity(39);
        let seqs = vec![encode("ab", &vocab).unwrap()];
        let x = one_hot_batch(&seqs);
        let y = emb.forward_soft(&x);
        assert_eq!(x, y);
    }

    #[test]
    fn scatter_gradient_matches_dense_product() {
        let vocab = Vocabulary::standard();
        let mut rng = SplitMix64::new(42);
        let emb = Embedding::<f64>::new(&mut rng, 39, 8);
        let seqs = vec![encode("aa", &vocab).unwrap()];
        let mut dy = Array3::<f64>::zeros((1, crate::corpus::SEQ_LEN, 8));
        dy.mapv_inplace(|_| rng.next_f64());

        let scattered = emb.backward_ids(&seqs, &dy);
        let x: Array3<f64> = one_hot_batch(&seqs).mapv(|v| v as f64);
        let (dense, _) = emb.backward_soft(&x, &dy, true, false);
        let dense = dense.unwrap();

        let max_err = scattered
            .iter()
            .zip(dense.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12);
    }
}
