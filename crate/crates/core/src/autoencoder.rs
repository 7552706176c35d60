//! The reconstruction autoencoder whose halves seed the GAN: a
//! convolutional encoder squeezing a 60-token domain into a 480-dim
//! bottleneck, and a decoder expanding it back to per-position token
//! probabilities.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{SplitDataset, TokenSeq, PAD_INDEX, SEQ_LEN, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::nn::{
    mse, relu_mask_backward, softmax_backward, softmax_last_axis, AdamConfig, AdamState, Conv1d,
    Embedding, ParallelConvs, Scalar,
};
use crate::rng::{shuffle, SplitMix64};

/// Kernel sizes of the three parallel convolutions.
pub const PARALLEL_KERNELS: [usize; 3] = [2, 3, 4];
/// Kernel size of the encoder merge convolution.
pub const ENC_MERGE_KERNEL: usize = 2;
/// Kernel size of the decoder merge convolution.
pub const DEC_MERGE_KERNEL: usize = 3;
/// Kernel size of the decoder output convolution.
pub const OUT_KERNEL: usize = 3;

/// Architecture constants. The defaults reproduce the reference topology:
/// 39-dim embedding, three parallel 256-filter convolutions (kernels 2/3/4),
/// an 8-filter merge giving the 480-dim bottleneck, a 32-filter decoder
/// merge, and a 39-filter softmax output. Tests shrink the filter counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub parallel_filters: usize,
    pub enc_merge_filters: usize,
    pub dec_merge_filters: usize,
    /// Freeze the embedding to the identity (one-hot) instead of training it.
    pub frozen_one_hot_embedding: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: VOCAB_SIZE,
            parallel_filters: 256,
            enc_merge_filters: 8,
            dec_merge_filters: 32,
            frozen_one_hot_embedding: false,
        }
    }
}

impl ArchConfig {
    /// Latent width: sequence length times merge filters (480 by default).
    pub fn bottleneck(&self) -> usize {
        SEQ_LEN * self.enc_merge_filters
    }

    /// Shrunk topology for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 8,
            parallel_filters: 6,
            enc_merge_filters: 2,
            dec_merge_filters: 5,
            frozen_one_hot_embedding: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frozen_one_hot_embedding && self.embed_dim != VOCAB_SIZE {
            return Err(Error::Config(format!(
                "one-hot embedding requires embed_dim {VOCAB_SIZE}, got {}",
                self.embed_dim
            )));
        }
        if self.embed_dim == 0
            || self.parallel_filters == 0
            || self.enc_merge_filters == 0
            || self.dec_merge_filters == 0
        {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Input to the encoder: discrete token ids or an already-continuous
/// (one-hot / softmax) tensor of shape (batch, SEQ_LEN, VOCAB_SIZE).
pub enum EncoderInput<'a, F> {
    Ids(&'a [TokenSeq]),
    Soft(&'a Array3<F>),
}

/// Shared window geometry for the parallel trio: wide enough for the
/// largest kernel, with each kernel's own "same" padding embedded.
const WINDOW: usize = 4;
const WINDOW_PAD_LEFT: usize = 1;

/// Gradients in the documented parameter order (see `param_views_mut`).
pub type Grads<F> = Vec<ArrayD<F>>;

#[derive(Debug, Clone)]
pub struct Encoder<F> {
    pub emb: Embedding<F>,
    pub parallel: ParallelConvs<F>,
    pub merge: Conv1d<F>,
    pub cfg: ArchConfig,
}

enum EncInput<F> {
    Ids(Vec<TokenSeq>),
    Soft { x: Array3<F>, embedded: Array3<F> },
}

pub struct EncoderCache<F> {
    input: EncInput<F>,
    /// ReLU'd concatenated parallel outputs (the merge conv's input).
    cat_out: Array3<F>,
    /// ReLU'd merge output.
    merge_out: Array3<F>,
    batch: usize,
}

impl<F: Scalar> Encoder<F> {
    pub fn new(cfg: &ArchConfig, rng: &mut SplitMix64) -> Self {
        let emb = if cfg.frozen_one_hot_embedding {
            Embedding::identity(VOCAB_SIZE)
        } else {
            Embedding::new(rng, VOCAB_SIZE, cfg.embed_dim)
        };
        let convs = PARALLEL_KERNELS
            .iter()
            .map(|&k| Conv1d::new(rng, k, cfg.embed_dim, cfg.parallel_filters))
            .collect();
        let merge =
            Conv1d::new(rng, ENC_MERGE_KERNEL, 3 * cfg.parallel_filters, cfg.enc_merge_filters);
        Self { emb, parallel: ParallelConvs::new(convs), merge, cfg: cfg.clone() }
    }

    /// Per-window-offset lookup tables `A_j[token] = W_emb[token] @ W_conv`
    /// that turn the embedding plus the parallel convolutions into pure
    /// gather-adds on the discrete path.
    fn token_tables(&self) -> Vec<Array2<F>> {
        let total = self.parallel.c_out_total();
        let mut tables = vec![Array2::<F>::zeros((VOCAB_SIZE, total)); WINDOW];
        let mut col = 0;
        for conv in &self.parallel.convs {
            for j in 0..conv.kernel() {
                let jw = j + WINDOW_PAD_LEFT - conv.pad_left();
                let w_j = conv.w.index_axis(Axis(0), j);
                let mut block = tables[jw].slice_mut(s![.., col..col + conv.c_out()]);
                ndarray::linalg::general_mat_mul(
                    F::one(),
                    &self.emb.w.view(),
                    &w_j,
                    F::one(),
                    &mut block,
                );
            }
            col += conv.c_out();
        }
        tables
    }

    /// Concatenated parallel-conv output on the discrete path, biases
    /// included, no activation.
    fn parallel_forward_ids(&self, seqs: &[TokenSeq]) -> Array3<F> {
        let tables = self.token_tables();
        let batch = seqs.len();
        let total = self.parallel.c_out_total();
        let mut cat = Array3::zeros((batch, SEQ_LEN, total));
        {
            let flat = cat.as_slice_mut().expect("cat is standard layout");
            let mut bias = vec![F::zero(); total];
            let mut col = 0;
            for conv in &self.parallel.convs {
                for (i, &b) in conv.b.iter().enumerate() {
                    bias[col + i] = b;
                }
                col += conv.c_out();
            }
            for row in flat.chunks_exact_mut(total) {
                row.copy_from_slice(&bias);
            }
            for (b, seq) in seqs.iter().enumerate() {
                let ids = seq.ids();
                for t in 0..SEQ_LEN {
                    let row = &mut flat[(b * SEQ_LEN + t) * total..(b * SEQ_LEN + t + 1) * total];
                    for (jw, table) in tables.iter().enumerate() {
                        let src = t as isize + jw as isize - WINDOW_PAD_LEFT as isize;
                        if src < 0 || src >= SEQ_LEN as isize {
                            continue;
                        }
                        let a_row = table.row(ids[src as usize] as usize);
                        let a = a_row.as_slice().expect("table row is contiguous");
                        for (d, &s) in row.iter_mut().zip(a) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
        cat
    }

    /// Backward through the discrete path: per-offset token bucket sums,
    /// then small GEMMs against the embedding and kernel factors.
    fn parallel_backward_ids(
        &self,
        seqs: &[TokenSeq],
        dcat: &Array3<F>,
        train_emb: bool,
    ) -> (Vec<(Array3<F>, Array1<F>)>, Option<Array2<F>>) {
        let total = self.parallel.c_out_total();
        let mut da = vec![Array2::<F>::zeros((VOCAB_SIZE, total)); WINDOW];
        {
            let flat = dcat.as_slice().expect("dcat is standard layout");
            for (b, seq) in seqs.iter().enumerate() {
                let ids = seq.ids();
                for t in 0..SEQ_LEN {
                    let row = &flat[(b * SEQ_LEN + t) * total..(b * SEQ_LEN + t + 1) * total];
                    for (jw, da_j) in da.iter_mut().enumerate() {
                        let src = t as isize + jw as isize - WINDOW_PAD_LEFT as isize;
                        if src < 0 || src >= SEQ_LEN as isize {
                            continue;
                        }
                        let mut bucket = da_j.row_mut(ids[src as usize] as usize);
                        let dst = bucket.as_slice_mut().expect("bucket row is contiguous");
                        for (d, &s) in dst.iter_mut().zip(row) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }

        let rows = seqs.len() * SEQ_LEN;
        let dy2 = dcat.view().into_shape_with_order((rows, total)).expect("dcat contiguous");
        let db_all = dy2.sum_axis(Axis(0));

        let mut grads = Vec::with_capacity(self.parallel.convs.len());
        let mut demb: Option<Array2<F>> =
            train_emb.then(|| Array2::zeros((VOCAB_SIZE, self.cfg.embed_dim)));
        let mut col = 0;
        for conv in &self.parallel.convs {
            let mut dw = Array3::zeros(conv.w.raw_dim());
            for j in 0..conv.kernel() {
                let jw = j + WINDOW_PAD_LEFT - conv.pad_left();
                let da_block = da[jw].slice(s![.., col..col + conv.c_out()]);
                // dW_conv = W_emb^T @ dA_block
                let mut dw_j = dw.index_axis_mut(Axis(0), j);
                ndarray::linalg::general_mat_mul(
                    F::one(),
                    &self.emb.w.t(),
                    &da_block,
                    F::one(),
                    &mut dw_j,
                );
                // dW_emb += dA_block @ W_conv^T
                if let Some(demb) = demb.as_mut() {
                    let w_j = conv.w.index_axis(Axis(0), j);
                    ndarray::linalg::general_mat_mul(
                        F::one(),
                        &da_block,
                        &w_j.t(),
                        F::one(),
                        &mut demb.view_mut(),
                    );
                }
            }
            let db = db_all.slice(s![col..col + conv.c_out()]).to_owned();
            grads.push((dw, db));
            col += conv.c_out();
        }
        (grads, demb)
    }

    pub fn forward(&self, input: EncoderInput<'_, F>) -> (Array2<F>, EncoderCache<F>) {
        let (mut cat, enc_input) = match input {
            EncoderInput::Ids(seqs) => {
                (self.parallel_forward_ids(seqs), EncInput::Ids(seqs.to_vec()))
            }
            EncoderInput::Soft(x) => {
                let embedded = self.emb.forward_soft(x);
                let cat = self.parallel.forward(&embedded);
                (cat, EncInput::Soft { x: x.clone(), embedded })
            }
        };
        let batch = cat.dim().0;
        cat.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });

        let mut merged = self.merge.forward(&cat);
        merged.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });

        let feat = merged
            .to_shape((batch, self.cfg.bottleneck()))
            .expect("merge output is contiguous")
            .to_owned();
        (feat, EncoderCache { input: enc_input, cat_out: cat, merge_out: merged, batch })
    }

    /// Backward from a bottleneck gradient. Returns parameter gradients (in
    /// `param_views_mut` order) when `compute_params`, and the gradient
    /// w.r.t. the continuous input when `compute_dx` (soft path only).
    pub fn backward(
        &self,
        cache: &EncoderCache<F>,
        dfeat: &Array2<F>,
        compute_params: bool,
        compute_dx: bool,
    ) -> (Option<Grads<F>>, Option<Array3<F>>) {
        let nf = self.cfg.enc_merge_filters;
        let mut dmerged = dfeat
            .to_shape((cache.batch, SEQ_LEN, nf))
            .expect("dfeat is contiguous")
            .to_owned();
        relu_mask_backward(&mut dmerged, &cache.merge_out);

        let (merge_grads, dcat) =
            self.merge.backward(&cache.cat_out, &dmerged, compute_params, true);
        let mut dcat = dcat.expect("dcat requested");
        relu_mask_backward(&mut dcat, &cache.cat_out);

        let train_emb = compute_params && !self.emb.frozen_one_hot;
        let mut conv_grads: Option<Vec<(Array3<F>, Array1<F>)>> = None;
        let mut demb_w: Option<Array2<F>> = None;
        let mut dx_soft: Option<Array3<F>> = None;

        match &cache.input {
            EncInput::Ids(seqs) => {
                if compute_params {
                    let (grads, demb) = self.parallel_backward_ids(seqs, &dcat, train_emb);
                    conv_grads = Some(grads);
                    demb_w = demb;
                }
            }
            EncInput::Soft { x, embedded } => {
                let need_demb = train_emb || compute_dx;
                let (grads, demb) =
                    self.parallel.backward(embedded, &dcat, compute_params, need_demb);
                conv_grads = grads;
                if let Some(demb) = demb {
                    let (dw, dx) = self.emb.backward_soft(x, &demb, train_emb, compute_dx);
                    demb_w = dw;
                    dx_soft = dx;
                }
            }
        }

        let grads = compute_params.then(|| {
            let mut out: Grads<F> = Vec::new();
            if let Some(dw) = demb_w {
                out.push(dw.into_dyn());
            } else if train_emb {
                unreachable!("embedding gradient requested but not computed");
            }
            for (dw, db) in conv_grads.expect("parallel conv gradients requested") {
                out.push(dw.into_dyn());
                out.push(db.into_dyn());
            }
            let (dw, db) = merge_grads.expect("merge gradients requested");
            out.push(dw.into_dyn());
            out.push(db.into_dyn());
            out
        });

        (grads, dx_soft)
    }

    /// Forward-mode tangent propagation through the soft path, reusing the
    /// activation pattern recorded in `cache`.
    pub fn jvp(&self, cache: &EncoderCache<F>, vx: &Array3<F>) -> Array2<F> {
        let ve = self.emb.forward_soft(vx);
        let mut vcat = self.parallel.forward_linear(&ve);
        relu_mask_backward(&mut vcat, &cache.cat_out);
        let mut vm = self.merge.forward_linear(&vcat);
        relu_mask_backward(&mut vm, &cache.merge_out);
        vm.to_shape((cache.batch, self.cfg.bottleneck())).expect("tangent contiguous").to_owned()
    }

    pub fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::new();
        if !self.emb.frozen_one_hot {
            out.push(self.emb.w.view_mut().into_dyn());
        }
        for conv in &mut self.parallel.convs {
            out.push(conv.w.view_mut().into_dyn());
            out.push(conv.b.view_mut().into_dyn());
        }
        out.push(self.merge.w.view_mut().into_dyn());
        out.push(self.merge.b.view_mut().into_dyn());
        out
    }

    /// Flat copy of all parameters (including a frozen embedding), for
    /// freeze auditing and serialization.
    pub fn param_tensors(&self) -> Vec<(String, ArrayD<F>)> {
        let mut out = vec![("enc.emb.w".to_string(), self.emb.w.clone().into_dyn())];
        for (i, conv) in self.parallel.convs.iter().enumerate() {
            out.push((format!("enc.conv{}.w", PARALLEL_KERNELS[i]), conv.w.clone().into_dyn()));
            out.push((format!("enc.conv{}.b", PARALLEL_KERNELS[i]), conv.b.clone().into_dyn()));
        }
        out.push(("enc.merge.w".to_string(), self.merge.w.clone().into_dyn()));
        out.push(("enc.merge.b".to_string(), self.merge.b.clone().into_dyn()));
        out
    }

    /// Mutable views matching `param_tensors` order (frozen embedding
    /// included), for checkpoint loading.
    pub fn named_param_views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = vec![("enc.emb.w".to_string(), self.emb.w.view_mut().into_dyn())];
        for (i, conv) in self.parallel.convs.iter_mut().enumerate() {
            out.push((format!("enc.conv{}.w", PARALLEL_KERNELS[i]), conv.w.view_mut().into_dyn()));
            out.push((format!("enc.conv{}.b", PARALLEL_KERNELS[i]), conv.b.view_mut().into_dyn()));
        }
        out.push(("enc.merge.w".to_string(), self.merge.w.view_mut().into_dyn()));
        out.push(("enc.merge.b".to_string(), self.merge.b.view_mut().into_dyn()));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<F> {
    pub parallel: ParallelConvs<F>,
    pub merge: Conv1d<F>,
    pub out: Conv1d<F>,
    pub cfg: ArchConfig,
}

pub struct DecoderCache<F> {
    z: Array3<F>,
    cat_out: Array3<F>,
    merge_out: Array3<F>,
    probs: Array3<F>,
    batch: usize,
}

impl<F: Scalar> DecoderCache<F> {
    pub fn probs(&self) -> &Array3<F> {
        &self.probs
    }
}

impl<F: Scalar> Decoder<F> {
    pub fn new(cfg: &ArchConfig, rng: &mut SplitMix64) -> Self {
        let convs = PARALLEL_KERNELS
            .iter()
            .map(|&k| Conv1d::new(rng, k, cfg.enc_merge_filters, cfg.parallel_filters))
            .collect();
        let merge =
            Conv1d::new(rng, DEC_MERGE_KERNEL, 3 * cfg.parallel_filters, cfg.dec_merge_filters);
        let out = Conv1d::new(rng, OUT_KERNEL, cfg.dec_merge_filters, VOCAB_SIZE);
        Self { parallel: ParallelConvs::new(convs), merge, out, cfg: cfg.clone() }
    }

    /// latent (batch, bottleneck) -> row-stochastic (batch, SEQ_LEN, VOCAB_SIZE).
    pub fn forward(&self, latent: &Array2<F>) -> (Array3<F>, DecoderCache<F>) {
        let batch = latent.nrows();
        let z = latent
            .to_shape((batch, SEQ_LEN, self.cfg.enc_merge_filters))
            .expect("latent is contiguous")
            .to_owned();

        let mut cat = self.parallel.forward(&z);
        cat.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });

        let mut merged = self.merge.forward(&cat);
        merged.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });

        let mut logits = self.out.forward(&merged);
        softmax_last_axis(&mut logits);
        let probs = logits;

        (probs.clone(), DecoderCache { z, cat_out: cat, merge_out: merged, probs, batch })
    }

    /// Backward from dL/dprobs to parameter gradients and/or dL/dlatent.
    pub fn backward(
        &self,
        cache: &DecoderCache<F>,
        dprobs: &Array3<F>,
        compute_params: bool,
        compute_dx: bool,
    ) -> (Option<Grads<F>>, Option<Array2<F>>) {
        let dlogits = softmax_backward(dprobs, &cache.probs);
        let (out_grads, dmerged) =
            self.out.backward(&cache.merge_out, &dlogits, compute_params, true);
        let mut dmerged = dmerged.expect("decoder merge gradient");
        relu_mask_backward(&mut dmerged, &cache.merge_out);

        let (merge_grads, dcat) =
            self.merge.backward(&cache.cat_out, &dmerged, compute_params, true);
        let mut dcat = dcat.expect("decoder cat gradient");
        relu_mask_backward(&mut dcat, &cache.cat_out);

        let (conv_grads, dz) = self.parallel.backward(&cache.z, &dcat, compute_params, compute_dx);

        let grads = compute_params.then(|| {
            let mut out: Grads<F> = Vec::new();
            for (dw, db) in conv_grads.expect("parallel conv grads") {
                out.push(dw.into_dyn());
                out.push(db.into_dyn());
            }
            let (dw, db) = merge_grads.expect("merge grads");
            out.push(dw.into_dyn());
            out.push(db.into_dyn());
            let (dw, db) = out_grads.expect("out grads");
            out.push(dw.into_dyn());
            out.push(db.into_dyn());
            out
        });

        let dlatent = compute_dx.then(|| {
            dz.expect("latent gradient")
                .to_shape((cache.batch, self.cfg.bottleneck()))
                .expect("dz contiguous")
                .to_owned()
        });

        (grads, dlatent)
    }

    pub fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::new();
        for conv in &mut self.parallel.convs {
            out.push(conv.w.view_mut().into_dyn());
            out.push(conv.b.view_mut().into_dyn());
        }
        out.push(self.merge.w.view_mut().into_dyn());
        out.push(self.merge.b.view_mut().into_dyn());
        out.push(self.out.w.view_mut().into_dyn());
        out.push(self.out.b.view_mut().into_dyn());
        out
    }

    pub fn param_tensors(&self) -> Vec<(String, ArrayD<F>)> {
        let mut out = Vec::new();
        for (i, conv) in self.parallel.convs.iter().enumerate() {
            out.push((format!("dec.conv{}.w", PARALLEL_KERNELS[i]), conv.w.clone().into_dyn()));
            out.push((format!("dec.conv{}.b", PARALLEL_KERNELS[i]), conv.b.clone().into_dyn()));
        }
        out.push(("dec.merge.w".to_string(), self.merge.w.clone().into_dyn()));
        out.push(("dec.merge.b".to_string(), self.merge.b.clone().into_dyn()));
        out.push(("dec.out.w".to_string(), self.out.w.clone().into_dyn()));
        out.push(("dec.out.b".to_string(), self.out.b.clone().into_dyn()));
        out
    }

    pub fn named_param_views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        for (i, conv) in self.parallel.convs.iter_mut().enumerate() {
            out.push((format!("dec.conv{}.w", PARALLEL_KERNELS[i]), conv.w.view_mut().into_dyn()));
            out.push((format!("dec.conv{}.b", PARALLEL_KERNELS[i]), conv.b.view_mut().into_dyn()));
        }
        out.push(("dec.merge.w".to_string(), self.merge.w.view_mut().into_dyn()));
        out.push(("dec.merge.b".to_string(), self.merge.b.view_mut().into_dyn()));
        out.push(("dec.out.w".to_string(), self.out.w.view_mut().into_dyn()));
        out.push(("dec.out.b".to_string(), self.out.b.view_mut().into_dyn()));
        out
    }
}

/// Paired encoder/decoder with the shape audit run at construction.
#[derive(Debug, Clone)]
pub struct Autoencoder<F> {
    pub encoder: Encoder<F>,
    pub decoder: Decoder<F>,
    pub cfg: ArchConfig,
}

impl<F: Scalar> Autoencoder<F> {
    pub fn new(cfg: &ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let encoder = Encoder::new(cfg, &mut rng);
        let decoder = Decoder::new(cfg, &mut rng);
        let ae = Self { encoder, decoder, cfg: cfg.clone() };
        ae.shape_audit()?;
        Ok(ae)
    }

    /// Fails fast if any layer shape breaks the bottleneck arithmetic.
    pub fn shape_audit(&self) -> Result<()> {
        let expect = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::Shape(format!("{name}: got {got}, want {want}")))
            } else {
                Ok(())
            }
        };
        let cfg = &self.cfg;
        expect("embedding dim", self.encoder.emb.dim(), cfg.embed_dim)?;
        for (conv, &k) in self.encoder.parallel.convs.iter().zip(&PARALLEL_KERNELS) {
            expect("encoder conv kernel", conv.kernel(), k)?;
            expect("encoder conv c_in", conv.c_in(), cfg.embed_dim)?;
            expect("encoder conv c_out", conv.c_out(), cfg.parallel_filters)?;
        }
        expect("encoder merge c_in", self.encoder.merge.c_in(), 3 * cfg.parallel_filters)?;
        expect("encoder merge c_out", self.encoder.merge.c_out(), cfg.enc_merge_filters)?;
        expect("bottleneck", cfg.bottleneck(), SEQ_LEN * cfg.enc_merge_filters)?;
        for (conv, &k) in self.decoder.parallel.convs.iter().zip(&PARALLEL_KERNELS) {
            expect("decoder conv kernel", conv.kernel(), k)?;
            expect("decoder conv c_in", conv.c_in(), cfg.enc_merge_filters)?;
            expect("decoder conv c_out", conv.c_out(), cfg.parallel_filters)?;
        }
        expect("decoder merge c_in", self.decoder.merge.c_in(), 3 * cfg.parallel_filters)?;
        expect("decoder merge c_out", self.decoder.merge.c_out(), cfg.dec_merge_filters)?;
        expect("decoder out c_in", self.decoder.out.c_in(), cfg.dec_merge_filters)?;
        expect("decoder out c_out", self.decoder.out.c_out(), VOCAB_SIZE)?;
        Ok(())
    }

    /// Deterministic inference: one domain to its bottleneck vector.
    pub fn encode_domain(&self, seq: &TokenSeq) -> Result<Array1<F>> {
        let (feat, _) = self.encoder.forward(EncoderInput::Ids(std::slice::from_ref(seq)));
        let v = feat.row(0).to_owned();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("encoder produced a non-finite value".into()));
        }
        Ok(v)
    }

    /// Deterministic inference: bottleneck vector to a row-stochastic
    /// (SEQ_LEN, VOCAB_SIZE) matrix.
    pub fn decode_latent(&self, latent: &Array1<F>) -> Result<Array2<F>> {
        if latent.len() != self.cfg.bottleneck() {
            return Err(Error::Shape(format!(
                "latent length {} does not match bottleneck {}",
                latent.len(),
                self.cfg.bottleneck()
            )));
        }
        if latent.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite latent input".into()));
        }
        let batch = latent.view().insert_axis(Axis(0)).to_owned();
        let (probs, _) = self.decoder.forward(&batch);
        Ok(probs.index_axis(Axis(0), 0).to_owned())
    }

    pub fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = self.encoder.param_views_mut();
        out.extend(self.decoder.param_views_mut());
        out
    }

    pub fn param_tensors(&self) -> Vec<(String, ArrayD<F>)> {
        let mut out = self.encoder.param_tensors();
        out.extend(self.decoder.param_tensors());
        out
    }

    pub fn named_param_views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = self.encoder.named_param_views_mut();
        out.extend(self.decoder.named_param_views_mut());
        out
    }
}

/// Pretraining configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamOpts,
    pub seed: u64,
}

/// Serializable Adam settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamOpts {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamOpts {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999 }
    }
}

impl AdamOpts {
    pub fn to_config(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 64, adam: AdamOpts::default(), seed: 0 }
    }
}

/// Per-epoch loss record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Whether a training run finished or was aborted on a non-finite loss;
/// in the aborted case the returned parameters are the last good ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    Diverged { at_step: usize },
}

/// Result of a pretraining run: the best-test-loss parameters plus the
/// full loss log.
pub struct Pretrained {
    pub autoencoder: Autoencoder<f32>,
    pub log: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub status: TrainStatus,
}

fn one_hot_targets(seqs: &[TokenSeq]) -> Array3<f32> {
    crate::corpus::one_hot_batch(seqs)
}

/// Mean squared error of decoded probabilities against one-hot targets,
/// over every position and channel (PAD included).
pub fn batch_mse(ae: &Autoencoder<f32>, seqs: &[TokenSeq], batch_size: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in seqs.chunks(batch_size.max(1)) {
        let (feat, _) = ae.encoder.forward(EncoderInput::Ids(chunk));
        let (probs, _) = ae.decoder.forward(&feat);
        let targets = one_hot_targets(chunk);
        total += mse(probs.view().into_dyn(), targets.view().into_dyn()) * chunk.len() as f64;
        count += chunk.len();
    }
    total / count.max(1) as f64
}

/// Trains the autoencoder to reconstruct the train split, evaluating the
/// test split each epoch and retaining the best-test-loss parameters.
pub fn pretrain(corpus: &SplitDataset, cfg: &ArchConfig, opts: &PretrainConfig) -> Result<Pretrained> {
    if corpus.train.is_empty() || corpus.test.is_empty() {
        return Err(Error::Param("pretraining needs non-empty train and test splits".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Param("batch_size must be positive".into()));
    }

    let mut ae = Autoencoder::<f32>::new(cfg, crate::rng::stage_seed(opts.seed, "ae-init"))?;
    let mut log = Vec::with_capacity(opts.epochs);
    if opts.epochs == 0 {
        return Ok(Pretrained { autoencoder: ae, log, best_epoch: None, status: TrainStatus::Completed });
    }

    let mut adam = AdamState::<f32>::new(opts.adam.to_config());
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut best: Option<(f64, Autoencoder<f32>, usize)> = None;
    let mut last_good = ae.clone();

    for epoch in 0..opts.epochs {
        let mut shuffle_rng =
            SplitMix64::new(crate::rng::stage_seed(opts.seed, &format!("ae-epoch-{epoch}")));
        shuffle(&mut order, &mut shuffle_rng);

        let mut train_sum = 0.0;
        let mut train_n = 0usize;
        let mut diverged = false;
        for batch_idx in order.chunks(opts.batch_size) {
            let batch: Vec<TokenSeq> = batch_idx.iter().map(|&i| corpus.train[i]).collect();
            let targets = one_hot_targets(&batch);

            let (feat, enc_cache) = ae.encoder.forward(EncoderInput::Ids(&batch));
            let (probs, dec_cache) = ae.decoder.forward(&feat);

            let n_elems = probs.len() as f32;
            let batch_loss = mse(probs.view().into_dyn(), targets.view().into_dyn());
            if !batch_loss.is_finite() {
                diverged = true;
                break;
            }
            train_sum += batch_loss * batch.len() as f64;
            train_n += batch.len();

            let dprobs = (&probs - &targets) * (2.0 / n_elems);
            let (dec_grads, dfeat) = ae.decoder.backward(&dec_cache, &dprobs, true, true);
            let (enc_grads, _) =
                ae.encoder.backward(&enc_cache, &dfeat.expect("latent grad"), true, false);

            let mut grads = enc_grads.expect("encoder grads");
            grads.extend(dec_grads.expect("decoder grads"));
            adam.step(ae.param_views_mut(), &grads);
        }

        let test_mse =
            if diverged { f64::NAN } else { batch_mse(&ae, &corpus.test, opts.batch_size) };
        if !test_mse.is_finite() {
            // Abort with the last good parameters.
            let ae = best.map(|(_, ae, _)| ae).unwrap_or(last_good);
            return Ok(Pretrained {
                autoencoder: ae,
                log,
                best_epoch: None,
                status: TrainStatus::Diverged { at_step: epoch },
            });
        }
        log.push(EpochStats { epoch, train_mse: train_sum / train_n.max(1) as f64, test_mse });
        last_good = ae.clone();

        if best.as_ref().map_or(true, |(b, _, _)| test_mse < *b) {
            best = Some((test_mse, ae.clone(), epoch));
        }
    }

    let (_, best_ae, best_epoch) = best.expect("at least one epoch ran");
    Ok(Pretrained {
        autoencoder: best_ae,
        log,
        best_epoch: Some(best_epoch),
        status: TrainStatus::Completed,
    })
}

/// Reconstruction quality metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconReport {
    pub mse: f64,
    /// Fraction of argmax hits over every position (PAD included).
    pub token_accuracy: f64,
    /// Fraction of sequences whose decoded string equals the original label.
    pub exact_match: f64,
}

pub fn reconstruction_report(
    ae: &Autoencoder<f32>,
    seqs: &[TokenSeq],
    batch_size: usize,
) -> Result<ReconReport> {
    if seqs.is_empty() {
        return Err(Error::Param("reconstruction report needs a non-empty dataset".into()));
    }
    let vocab = crate::corpus::Vocabulary::standard();
    let mut sq_sum = 0.0f64;
    let mut token_hits = 0usize;
    let mut exact = 0usize;

    for chunk in seqs.chunks(batch_size.max(1)) {
        let (feat, _) = ae.encoder.forward(EncoderInput::Ids(chunk));
        let (probs, _) = ae.decoder.forward(&feat);
        let targets = one_hot_targets(chunk);
        sq_sum += mse(probs.view().into_dyn(), targets.view().into_dyn())
            * (chunk.len() * SEQ_LEN * VOCAB_SIZE) as f64;

        for (b, seq) in chunk.iter().enumerate() {
            let rows = probs.index_axis(Axis(0), b);
            let mut argmax_ids = Vec::with_capacity(SEQ_LEN);
            for row in rows.rows() {
                let mut best = 0usize;
                let mut best_val = row[0];
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > best_val {
                        best = i;
                        best_val = v;
                    }
                }
                argmax_ids.push(best as u8);
            }
            token_hits += argmax_ids.iter().zip(seq.ids()).filter(|(a, b)| a == b).count();

            let decoded = crate::corpus::decode(rows, &vocab)?;
            let original: String = seq
                .ids()
                .iter()
                .take_while(|&&id| id != PAD_INDEX)
                .filter_map(|&id| vocab.char_at(id))
                .collect();
            if decoded == original {
                exact += 1;
            }
        }
    }

    let n = seqs.len();
    Ok(ReconReport {
        mse: sq_sum / (n * SEQ_LEN * VOCAB_SIZE) as f64,
        token_accuracy: token_hits as f64 / (n * SEQ_LEN) as f64,
        exact_match: exact as f64 / n as f64,
    })
}
