//! GAN assembly and adversarial training: a generator built from a noise
//! head feeding the frozen pretrained decoder, a critic built from the
//! frozen pretrained encoder feeding a single-neuron head, and the three
//! objectives (original, least-squares, Wasserstein + gradient penalty).
//!
//! Real samples reach the critic as one-hot matrices and fake samples as
//! raw softmax outputs, so generator gradients flow through a fully
//! continuous path; the gradient penalty interpolates in that same
//! continuous input space.

mod loss;

pub use loss::{loss_gan, loss_lsgan, loss_wgangp, LOG_CLAMP};

use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    AdamOpts, Autoencoder, Decoder, DecoderCache, Encoder, EncoderCache, EncoderInput, Grads,
    TrainStatus,
};
use crate::corpus::{one_hot_batch, SplitDataset};
use crate::error::{Error, Result};
use crate::nn::{relu_mask_backward, sigmoid, AdamState, Dense, Scalar};
use crate::rng::{stage_seed, SplitMix64};

/// Which adversarial objective a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanKind {
    Gan,
    Lsgan,
    Wgangp,
}

impl GanKind {
    pub fn name(&self) -> &'static str {
        match self {
            GanKind::Gan => "gan",
            GanKind::Lsgan => "lsgan",
            GanKind::Wgangp => "wgangp",
        }
    }

    /// The critic head is linear for LSGAN/WGANGP and sigmoid for GAN.
    pub fn linear_head(&self) -> bool {
        !matches!(self, GanKind::Gan)
    }

    pub fn all() -> [GanKind; 3] {
        [GanKind::Gan, GanKind::Lsgan, GanKind::Wgangp]
    }
}

impl std::str::FromStr for GanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gan" => Ok(GanKind::Gan),
            "lsgan" => Ok(GanKind::Lsgan),
            "wgangp" => Ok(GanKind::Wgangp),
            other => Err(Error::Param(format!("unknown GAN variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for GanKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A variant plus its objective constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanVariant {
    pub kind: GanKind,
    /// LSGAN labels (a, b, c) = (fake, real, generator target).
    pub lsgan_targets: (f64, f64, f64),
    /// Gradient-penalty weight; meaningful only for WGANGP.
    pub gp_lambda: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
}

impl GanVariant {
    pub fn new(kind: GanKind) -> Self {
        match kind {
            GanKind::Wgangp => {
                Self { kind, lsgan_targets: (0.0, 1.0, 1.0), gp_lambda: 10.0, critic_steps: 5 }
            }
            _ => Self { kind, lsgan_targets: (0.0, 1.0, 1.0), gp_lambda: 0.0, critic_steps: 1 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.critic_steps == 0 {
            return Err(Error::Param("critic_steps must be at least 1".into()));
        }
        match self.kind {
            GanKind::Wgangp if self.gp_lambda <= 0.0 => {
                Err(Error::Param("wgangp requires gp_lambda > 0".into()))
            }
            GanKind::Gan | GanKind::Lsgan if self.gp_lambda != 0.0 => {
                Err(Error::Param("gp_lambda is only meaningful for wgangp".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Latent draws, i.i.d. uniform on [-1, 1], shape (n, noise_dim).
pub fn sample_latent<F: Scalar>(n: usize, noise_dim: usize, seed: u64) -> Result<Array2<F>> {
    if n == 0 || noise_dim == 0 {
        return Err(Error::Param("latent sample needs n >= 1 and noise_dim >= 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let data: Vec<F> =
        (0..n * noise_dim).map(|_| F::from_f64(rng.uniform_sym_f32() as f64)).collect();
    Ok(Array2::from_shape_vec((n, noise_dim), data).expect("shape matches data"))
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Noise head (fully connected, ReLU) feeding the frozen decoder.
#[derive(Debug, Clone)]
pub struct Generator<F> {
    pub head: Dense<F>,
    pub decoder: Decoder<F>,
    pub noise_dim: usize,
    pub kind: GanKind,
    pub steps_trained: u64,
}

pub struct GenFwd<F> {
    z: Array2<F>,
    head_out: Array2<F>,
    dec_cache: DecoderCache<F>,
}

impl<F: Scalar> Generator<F> {
    pub fn new(decoder: Decoder<F>, noise_dim: usize, kind: GanKind, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let head = Dense::new(&mut rng, noise_dim, decoder.cfg.bottleneck());
        Self { head, decoder, noise_dim, kind, steps_trained: 0 }
    }

    /// z (batch, noise_dim) -> softmax domains (batch, SEQ_LEN, VOCAB_SIZE).
    pub fn forward(&self, z: &Array2<F>) -> (Array3<F>, GenFwd<F>) {
        let mut h = self.head.forward(z);
        h.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        let (probs, dec_cache) = self.decoder.forward(&h);
        (probs, GenFwd { z: z.clone(), head_out: h, dec_cache })
    }

    /// Backward to the head parameters (and optionally through to the
    /// decoder parameters when unfrozen).
    pub fn backward(
        &self,
        fwd: &GenFwd<F>,
        dprobs: &Array3<F>,
        unfreeze: bool,
    ) -> (Grads<F>, Option<Grads<F>>) {
        let (dec_grads, dlatent) = self.decoder.backward(&fwd.dec_cache, dprobs, unfreeze, true);
        let mut dh = dlatent.expect("latent gradient");
        relu_mask_backward(&mut dh, &fwd.head_out);
        let (head_grads, _) = self.head.backward(&fwd.z, &dh, true, false);
        let (dw, db) = head_grads.expect("head grads");
        (vec![dw.into_dyn(), db.into_dyn()], dec_grads)
    }

    pub fn param_views_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, F>> {
        vec![self.head.w.view_mut().into_dyn(), self.head.b.view_mut().into_dyn()]
    }
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// Frozen encoder plus a single-neuron head; sigmoid for the original GAN,
/// linear for LSGAN/WGANGP.
#[derive(Debug, Clone)]
pub struct Critic<F> {
    pub encoder: Encoder<F>,
    pub head: Dense<F>,
    pub sigmoid_head: bool,
}

pub struct CriticFwd<F> {
    enc_cache: EncoderCache<F>,
    feat: Array2<F>,
    scores: Array1<F>,
}

impl<F: Scalar> CriticFwd<F> {
    pub fn scores(&self) -> &Array1<F> {
        &self.scores
    }
}

impl<F: Scalar> Critic<F> {
    pub fn new(encoder: Encoder<F>, kind: GanKind, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let head = Dense::new(&mut rng, encoder.cfg.bottleneck(), 1);
        Self { encoder, head, sigmoid_head: !kind.linear_head() }
    }

    pub fn forward(&self, input: EncoderInput<'_, F>) -> CriticFwd<F> {
        let (feat, enc_cache) = self.encoder.forward(input);
        let logits = self.head.forward(&feat);
        let mut scores = logits.index_axis(Axis(1), 0).to_owned();
        if self.sigmoid_head {
            scores.mapv_inplace(sigmoid);
        }
        CriticFwd { enc_cache, feat, scores }
    }

    /// Gradient of `sum_i dscore_i * score_i` w.r.t. the head parameters
    /// (sigmoid chain applied when present); optionally also w.r.t. the
    /// critic input (soft path only).
    pub fn backward(
        &self,
        fwd: &CriticFwd<F>,
        dscore: &Array1<F>,
        compute_head: bool,
        compute_dx: bool,
    ) -> (Option<(Array2<F>, Array1<F>)>, Option<Array3<F>>) {
        let one = F::one();
        let mut dlogit = dscore.clone();
        if self.sigmoid_head {
            Zip::from(&mut dlogit).and(&fwd.scores).for_each(|d, &s| *d = *d * s * (one - s));
        }
        self.backward_logits(fwd, &dlogit, compute_head, compute_dx)
    }

    /// Same as [`Critic::backward`] but with the gradient already expressed
    /// against the pre-activation logit, which stays bounded even when a
    /// sigmoid head saturates.
    pub fn backward_logits(
        &self,
        fwd: &CriticFwd<F>,
        dlogit: &Array1<F>,
        compute_head: bool,
        compute_dx: bool,
    ) -> (Option<(Array2<F>, Array1<F>)>, Option<Array3<F>>) {
        let dlogit2 = dlogit.view().insert_axis(Axis(1)).to_owned();
        let (head_grads, dfeat) =
            self.head.backward(&fwd.feat, &dlogit2, compute_head, compute_dx);
        let dx = dfeat.and_then(|dfeat| {
            let (_, dx) = self.encoder.backward(&fwd.enc_cache, &dfeat, false, true);
            dx
        });
        (head_grads, dx)
    }

    /// Encoder parameter gradients for the experimental unfrozen mode.
    pub fn encoder_grads(&self, fwd: &CriticFwd<F>, dlogit: &Array1<F>) -> Option<Grads<F>> {
        let dlogit2 = dlogit.view().insert_axis(Axis(1)).to_owned();
        let (_, dfeat) = self.head.backward(&fwd.feat, &dlogit2, false, true);
        let (grads, _) = self.encoder.backward(&fwd.enc_cache, &dfeat?, true, false);
        grads
    }

    pub fn param_views_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, F>> {
        vec![self.head.w.view_mut().into_dyn(), self.head.b.view_mut().into_dyn()]
    }
}

// ---------------------------------------------------------------------------
// Gradient penalty
// ---------------------------------------------------------------------------

/// Anything that can score a continuous batch and expose per-sample input
/// gradients. The production critic implements this; tests add reduced and
/// exactly-linear critics.
pub trait InputScorer<F: Scalar> {
    fn batch_scores(&self, x: &Array3<F>) -> Result<Array1<F>>;

    /// Returns (scores, dscore/dx per sample).
    fn input_grads(&self, x: &Array3<F>) -> Result<(Array1<F>, Array3<F>)>;
}

impl<F: Scalar> InputScorer<F> for Critic<F> {
    fn batch_scores(&self, x: &Array3<F>) -> Result<Array1<F>> {
        Ok(self.forward(EncoderInput::Soft(x)).scores.clone())
    }

    fn input_grads(&self, x: &Array3<F>) -> Result<(Array1<F>, Array3<F>)> {
        let fwd = self.forward(EncoderInput::Soft(x));
        let ones = Array1::from_elem(fwd.scores.len(), F::one());
        let (_, dx) = self.backward(&fwd, &ones, false, true);
        let dx = dx.ok_or_else(|| {
            Error::Capability("critic input gradients need the continuous path".into())
        })?;
        Ok((fwd.scores, dx))
    }
}

/// An exactly-linear critic: `D(x) = sum(w * x) + b`. Its input gradient is
/// `w` for every sample, which makes gradient-penalty edge cases exact.
#[derive(Debug, Clone)]
pub struct LinearCritic<F> {
    /// (SEQ_LEN, VOCAB_SIZE)
    pub w: Array2<F>,
    pub b: F,
}

impl<F: Scalar> InputScorer<F> for LinearCritic<F> {
    fn batch_scores(&self, x: &Array3<F>) -> Result<Array1<F>> {
        let scores = x
            .axis_iter(Axis(0))
            .map(|sample| {
                let mut acc = self.b;
                Zip::from(&sample).and(&self.w).for_each(|&xv, &wv| acc = acc + xv * wv);
                acc
            })
            .collect();
        Ok(scores)
    }

    fn input_grads(&self, x: &Array3<F>) -> Result<(Array1<F>, Array3<F>)> {
        let scores = self.batch_scores(x)?;
        let mut grads = Array3::zeros(x.raw_dim());
        for mut sample in grads.axis_iter_mut(Axis(0)) {
            sample.assign(&self.w);
        }
        Ok((scores, grads))
    }
}

/// Per-sample interpolates `eps * real + (1 - eps) * fake` with
/// `eps ~ U(0, 1)` drawn from the given stream.
pub fn interpolate<F: Scalar>(
    real: &Array3<F>,
    fake: &Array3<F>,
    rng: &mut SplitMix64,
) -> Result<Array3<F>> {
    if real.dim() != fake.dim() {
        return Err(Error::Shape(format!(
            "real {:?} and fake {:?} batches differ",
            real.dim(),
            fake.dim()
        )));
    }
    let mut out = Array3::zeros(real.raw_dim());
    for ((mut slot, r), f) in
        out.axis_iter_mut(Axis(0)).zip(real.axis_iter(Axis(0))).zip(fake.axis_iter(Axis(0)))
    {
        let eps = F::from_f64(rng.next_f64());
        let one_minus = F::one() - eps;
        Zip::from(&mut slot).and(&r).and(&f).for_each(|o, &rv, &fv| *o = eps * rv + one_minus * fv);
    }
    Ok(out)
}

fn grad_norms<F: Scalar>(grads: &Array3<F>) -> Vec<f64> {
    grads
        .axis_iter(Axis(0))
        .map(|g| g.iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt())
        .collect()
}

fn penalty_from_norms(norms: &[f64], lambda: f64) -> f64 {
    lambda * norms.iter().map(|&n| (n - 1.0).powi(2)).sum::<f64>() / norms.len() as f64
}

/// The WGANGP regularizer
/// `lambda * E[(||grad_xhat D(xhat)||_2 - 1)^2]` over per-sample uniform
/// interpolates of the given batches.
pub fn gradient_penalty<F: Scalar, C: InputScorer<F>>(
    critic: &C,
    real: &Array3<F>,
    fake: &Array3<F>,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    if real.dim().0 == 0 {
        return Err(Error::Param("gradient penalty needs a non-empty batch".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let interp = interpolate(real, fake, &mut rng)?;
    let (_, grads) = critic.input_grads(&interp)?;
    Ok(penalty_from_norms(&grad_norms(&grads), lambda))
}

/// Gradient penalty plus its gradient w.r.t. the critic head weights,
/// computed via one backward (input gradients) and one tangent pass. The
/// head bias never enters the input gradient, so its penalty gradient is
/// zero. Linear heads only.
fn gp_with_head_grad<F: Scalar>(
    critic: &Critic<F>,
    real: &Array3<F>,
    fake: &Array3<F>,
    lambda: f64,
    rng: &mut SplitMix64,
) -> Result<(f64, Array1<F>)> {
    if critic.sigmoid_head {
        return Err(Error::Capability("gradient penalty expects a linear critic head".into()));
    }
    let interp = interpolate(real, fake, rng)?;
    let fwd = critic.forward(EncoderInput::Soft(&interp));
    let ones = Array1::from_elem(fwd.scores.len(), F::one());
    let (_, grads) = critic.backward(&fwd, &ones, false, true);
    let grads = grads.expect("input grads on soft path");
    let norms = grad_norms(&grads);
    let penalty = penalty_from_norms(&norms, lambda);

    // d penalty / d w = (2 lambda / B) sum_i (n_i - 1) / n_i * J_E(xhat_i) g_i,
    // realized by one batched tangent pass with pre-scaled tangents.
    let batch = norms.len();
    let mut tangents = grads;
    for (mut g, &n) in tangents.axis_iter_mut(Axis(0)).zip(&norms) {
        let coef = if n > 1e-12 { (n - 1.0) / n } else { 0.0 };
        let coef = F::from_f64(coef);
        g.mapv_inplace(|v| v * coef);
    }
    let vfeat = critic.encoder.jvp(&fwd.enc_cache, &tangents);
    let scale = F::from_f64(2.0 * lambda / batch as f64);
    let dw = vfeat.sum_axis(Axis(0)) * scale;
    Ok((penalty, dw))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanTrainConfig {
    /// Generator updates; each is preceded by `critic_steps` critic updates.
    pub steps: usize,
    pub batch_size: usize,
    pub noise_dim: usize,
    pub adam: AdamOpts,
    pub seed: u64,
    /// Emit a checkpoint sample sheet every this many generator steps
    /// (0 = final only).
    pub checkpoint_every: usize,
    /// Acknowledge training from scratch (normally refused: adversarial
    /// training without reconstruction pretraining consistently diverges).
    pub allow_unpretrained: bool,
    /// Also fine-tune the frozen halves (experimental, untested).
    pub unfreeze: bool,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            noise_dim: 100,
            adam: AdamOpts { lr: 1e-4, beta1: 0.5, beta2: 0.999 },
            seed: 0,
            checkpoint_every: 0,
            allow_unpretrained: false,
            unfreeze: false,
        }
    }
}

/// One optimizer update in the training ledger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// Generator step this update belongs to.
    pub step: usize,
    /// "critic" or "generator".
    pub update: String,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub gp: Option<f64>,
    pub wall_ms: f64,
}

/// Fixed-seed qualitative sample decoded at a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSheet {
    pub step: usize,
    pub domains: Vec<String>,
}

pub struct GanOutcome {
    pub generator: Generator<f32>,
    pub critic: Critic<f32>,
    pub log: Vec<StepRecord>,
    pub sheets: Vec<SampleSheet>,
    pub status: TrainStatus,
}

const SHEET_SIZE: usize = 64;

fn decode_sheet(generator: &Generator<f32>, z: &Array2<f32>, step: usize) -> SampleSheet {
    let vocab = crate::corpus::Vocabulary::standard();
    let (probs, _) = generator.forward(z);
    let domains = probs
        .axis_iter(Axis(0))
        .map(|rows| crate::corpus::decode(rows, &vocab).unwrap_or_default())
        .collect();
    SampleSheet { step, domains }
}

/// Adversarial training of the two heads around the frozen pretrained
/// halves. `critic_steps` critic updates alternate with one generator
/// update; parameters stay bit-identical to the checkpoint wherever the
/// trainable mask says frozen.
pub fn train_gan(
    pretrained: &Autoencoder<f32>,
    ae_is_pretrained: bool,
    corpus: &SplitDataset,
    variant: &GanVariant,
    cfg: &GanTrainConfig,
) -> Result<GanOutcome> {
    variant.validate()?;
    if !ae_is_pretrained && !cfg.allow_unpretrained {
        return Err(Error::State(
            "refusing to train a GAN from an unpretrained autoencoder (it consistently \
             diverges); pass allow_unpretrained to override"
                .into(),
        ));
    }
    if corpus.train.is_empty() {
        return Err(Error::Param("GAN training needs a non-empty train split".into()));
    }
    if cfg.batch_size == 0 || cfg.noise_dim == 0 {
        return Err(Error::Param("batch_size and noise_dim must be positive".into()));
    }

    let mut generator = Generator::new(
        pretrained.decoder.clone(),
        cfg.noise_dim,
        variant.kind,
        stage_seed(cfg.seed, "gan-ginit"),
    );
    let mut critic =
        Critic::new(pretrained.encoder.clone(), variant.kind, stage_seed(cfg.seed, "gan-dinit"));

    let mut log = Vec::new();
    let mut sheets = Vec::new();
    let sheet_z = sample_latent::<f32>(SHEET_SIZE, cfg.noise_dim, stage_seed(cfg.seed, "gan-sheet"))?;
    if cfg.steps == 0 {
        return Ok(GanOutcome { generator, critic, log, sheets, status: TrainStatus::Completed });
    }

    let mut adam_g = AdamState::<f32>::new(cfg.adam.to_config());
    let mut adam_d = AdamState::<f32>::new(cfg.adam.to_config());
    let mut adam_dec_unfrozen = cfg.unfreeze.then(|| AdamState::<f32>::new(cfg.adam.to_config()));
    let mut adam_enc_unfrozen = cfg.unfreeze.then(|| AdamState::<f32>::new(cfg.adam.to_config()));

    let mut rng_real = SplitMix64::new(stage_seed(cfg.seed, "gan-real"));
    let mut rng_z = SplitMix64::new(stage_seed(cfg.seed, "gan-z"));
    let mut rng_eps = SplitMix64::new(stage_seed(cfg.seed, "gan-eps"));

    let n_train = corpus.train.len();
    let batch = cfg.batch_size;
    let mut last_good: Option<(Dense<f32>, Dense<f32>, u64)> = None;

    let sample_real = |rng: &mut SplitMix64| -> Array3<f32> {
        let seqs: Vec<_> = (0..batch).map(|_| corpus.train[rng.index(n_train)]).collect();
        one_hot_batch(&seqs)
    };
    let next_z = |rng: &mut SplitMix64| -> Array2<f32> {
        let data: Vec<f32> = (0..batch * cfg.noise_dim).map(|_| rng.uniform_sym_f32()).collect();
        Array2::from_shape_vec((batch, cfg.noise_dim), data).expect("latent shape")
    };

    for step in 0..cfg.steps {
        // Critic phase.
        for _ in 0..variant.critic_steps {
            let t0 = Instant::now();
            let real = sample_real(&mut rng_real);
            let z = next_z(&mut rng_z);
            let (fake, _) = generator.forward(&z);

            let real_fwd = critic.forward(EncoderInput::Soft(&real));
            let fake_fwd = critic.forward(EncoderInput::Soft(&fake));
            let s_real: Vec<f64> = real_fwd.scores.iter().map(|&v| v as f64).collect();
            let s_fake: Vec<f64> = fake_fwd.scores.iter().map(|&v| v as f64).collect();
            let nb = batch as f32;

            // Per-variant loss value plus logit-space gradients (bounded
            // even when a sigmoid head saturates).
            let (d_loss, gp, dlogit_real, dlogit_fake, gp_dw) = match variant.kind {
                GanKind::Gan => {
                    let (d_loss, _) = loss_gan(&s_real, &s_fake)?;
                    let dr = real_fwd.scores.mapv(|s| (s - 1.0) / nb);
                    let df = fake_fwd.scores.mapv(|s| s / nb);
                    (d_loss, None, dr, df, None)
                }
                GanKind::Lsgan => {
                    let (a, b, _) = variant.lsgan_targets;
                    let (d_loss, _) = loss_lsgan(&s_real, &s_fake, variant.lsgan_targets)?;
                    let dr = real_fwd.scores.mapv(|s| (s - b as f32) / nb);
                    let df = fake_fwd.scores.mapv(|s| (s - a as f32) / nb);
                    (d_loss, None, dr, df, None)
                }
                GanKind::Wgangp => {
                    let (gp, gp_dw) =
                        gp_with_head_grad(&critic, &real, &fake, variant.gp_lambda, &mut rng_eps)?;
                    let (d_loss, _) = loss_wgangp(&s_real, &s_fake, gp)?;
                    let dr = Array1::from_elem(batch, -1.0 / nb);
                    let df = Array1::from_elem(batch, 1.0 / nb);
                    (d_loss, Some(gp), dr, df, Some(gp_dw))
                }
            };

            let (hg_real, _) = critic.backward_logits(&real_fwd, &dlogit_real, true, false);
            let (hg_fake, _) = critic.backward_logits(&fake_fwd, &dlogit_fake, true, false);
            let (dw_r, db_r) = hg_real.expect("real head grads");
            let (dw_f, db_f) = hg_fake.expect("fake head grads");
            let mut dw = dw_r + dw_f;
            let db = db_r + db_f;
            if let Some(gp_dw) = gp_dw {
                dw += &gp_dw.insert_axis(Axis(1));
            }

            if !d_loss.is_finite() {
                return finish_diverged(generator, critic, log, sheets, last_good, step);
            }
            adam_d.step(critic.param_views_mut(), &[dw.into_dyn(), db.into_dyn()]);

            if cfg.unfreeze {
                // Experimental: push the non-penalty critic loss into the
                // encoder parameters as well.
                let mut enc_grads = critic.encoder_grads(&real_fwd, &dlogit_real);
                if let (Some(acc), Some(extra)) =
                    (enc_grads.as_mut(), critic.encoder_grads(&fake_fwd, &dlogit_fake))
                {
                    for (a, b) in acc.iter_mut().zip(extra) {
                        *a += &b;
                    }
                }
                if let (Some(adam), Some(grads)) = (adam_enc_unfrozen.as_mut(), enc_grads) {
                    adam.step(critic.encoder.param_views_mut(), &grads);
                }
            }

            log.push(StepRecord {
                step,
                update: "critic".into(),
                d_loss: Some(d_loss),
                g_loss: None,
                gp,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }

        // Generator phase.
        let t0 = Instant::now();
        let z = next_z(&mut rng_z);
        let (fake, gen_fwd) = generator.forward(&z);
        let fake_fwd = critic.forward(EncoderInput::Soft(&fake));
        let s_fake: Vec<f64> = fake_fwd.scores.iter().map(|&v| v as f64).collect();
        let nb = batch as f32;

        let (g_loss, dlogit_fake) = match variant.kind {
            GanKind::Gan => {
                // Non-saturating form: d(-ln sigmoid(o))/do = s - 1.
                let (_, g_loss) = loss_gan(&[0.5], &s_fake)?;
                (g_loss, fake_fwd.scores.mapv(|s| (s - 1.0) / nb))
            }
            GanKind::Lsgan => {
                let (_, _, c) = variant.lsgan_targets;
                let (_, g_loss) = loss_lsgan(&[0.0], &s_fake, variant.lsgan_targets)?;
                (g_loss, fake_fwd.scores.mapv(|s| (s - c as f32) / nb))
            }
            GanKind::Wgangp => {
                let (_, g_loss) = loss_wgangp(&[0.0], &s_fake, 0.0)?;
                (g_loss, Array1::from_elem(batch, -1.0 / nb))
            }
        };

        let (_, dx_fake) = critic.backward_logits(&fake_fwd, &dlogit_fake, false, true);
        let dprobs = dx_fake.expect("fake input gradient");
        let (head_grads, dec_grads) = generator.backward(&gen_fwd, &dprobs, cfg.unfreeze);

        if !g_loss.is_finite() {
            return finish_diverged(generator, critic, log, sheets, last_good, step);
        }
        adam_g.step(generator.param_views_mut(), &head_grads);
        if let (Some(adam), Some(grads)) = (adam_dec_unfrozen.as_mut(), dec_grads) {
            adam.step(generator.decoder.param_views_mut(), &grads);
        }
        generator.steps_trained += 1;

        log.push(StepRecord {
            step,
            update: "generator".into(),
            d_loss: None,
            g_loss: Some(g_loss),
            gp: None,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        last_good = Some((generator.head.clone(), critic.head.clone(), generator.steps_trained));

        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            sheets.push(decode_sheet(&generator, &sheet_z, step + 1));
        }
    }

    sheets.push(decode_sheet(&generator, &sheet_z, cfg.steps));
    Ok(GanOutcome { generator, critic, log, sheets, status: TrainStatus::Completed })
}

fn finish_diverged(
    mut generator: Generator<f32>,
    mut critic: Critic<f32>,
    log: Vec<StepRecord>,
    sheets: Vec<SampleSheet>,
    last_good: Option<(Dense<f32>, Dense<f32>, u64)>,
    step: usize,
) -> Result<GanOutcome> {
    if let Some((g_head, d_head, steps)) = last_good {
        generator.head = g_head;
        critic.head = d_head;
        generator.steps_trained = steps;
    }
    Ok(GanOutcome {
        generator,
        critic,
        log,
        sheets,
        status: TrainStatus::Diverged { at_step: step },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::ArchConfig;
    use crate::corpus::{encode, split, Vocabulary, SEQ_LEN, VOCAB_SIZE};
    use crate::nn::gradcheck;

    fn tiny_pretrained(seed: u64) -> Autoencoder<f32> {
        Autoencoder::<f32>::new(&ArchConfig::tiny(), seed).unwrap()
    }

    fn tiny_corpus() -> SplitDataset {
        let vocab = Vocabulary::standard();
        let labels = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];
        let seqs: Vec<_> = labels.iter().map(|l| encode(l, &vocab).unwrap()).collect();
        split(&seqs, 0.75, 1).unwrap()
    }

    #[test]
    fn latent_support_and_determinism() {
        let a = sample_latent::<f32>(100, 16, 9).unwrap();
        assert!(a.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let b = sample_latent::<f32>(100, 16, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_latent::<f32>(100, 16, 10).unwrap());
    }

    #[test]
    fn latent_mean_obeys_law_of_large_numbers() {
        let z = sample_latent::<f64>(100_000, 10, 77).unwrap();
        let mean = z.sum() / z.len() as f64;
        // 3 sigma for 1e6 draws of a U(-1,1): 3 * (1/sqrt(3)) / 1000.
        assert!(mean.abs() < 3.0 * (1.0 / 3.0f64.sqrt()) / 1000.0, "mean {mean}");
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let mut w = Array2::<f64>::zeros((SEQ_LEN, VOCAB_SIZE));
        let n = (SEQ_LEN * VOCAB_SIZE) as f64;
        w.fill(1.0 / n.sqrt());
        let critic = LinearCritic { w, b: 0.25 };

        let mut rng = SplitMix64::new(3);
        let mut real = Array3::<f64>::zeros((4, SEQ_LEN, VOCAB_SIZE));
        real.mapv_inplace(|_| rng.next_f64());
        let mut fake = real.clone();
        fake.mapv_inplace(|_| rng.next_f64());

        let gp = gradient_penalty(&critic, &real, &fake, 10.0, 5).unwrap();
        assert!(gp.abs() < 1e-9, "penalty {gp}");
    }

    #[test]
    fn constant_critic_pays_full_penalty() {
        let critic =
            LinearCritic { w: Array2::<f64>::zeros((SEQ_LEN, VOCAB_SIZE)), b: 1.0 };
        let real = Array3::<f64>::from_elem((3, SEQ_LEN, VOCAB_SIZE), 0.5);
        let fake = Array3::<f64>::from_elem((3, SEQ_LEN, VOCAB_SIZE), 0.1);
        let lambda = 7.0;
        let gp = gradient_penalty(&critic, &real, &fake, lambda, 5).unwrap();
        assert!((gp - lambda).abs() < 1e-12);
    }

    #[test]
    fn critic_input_grads_match_finite_differences() {
        // Reduced-filter critic in f64 against central differences.
        let ae = Autoencoder::<f64>::new(&ArchConfig::tiny(), 31).unwrap();
        let critic = Critic::new(ae.encoder.clone(), GanKind::Wgangp, 32);

        let mut rng = SplitMix64::new(8);
        let mut x = Array3::<f64>::zeros((3, SEQ_LEN, VOCAB_SIZE));
        x.mapv_inplace(|_| rng.next_f64());

        let (scores, grads) = critic.input_grads(&x).unwrap();
        assert_eq!(scores.len(), 3);

        let h = 1e-5;
        let coords = [
            [0usize, 0, 0],
            [1, 30, 20],
            [2, 59, 38],
            [0, 10, 5],
            [1, 45, 0],
            [2, 7, 36],
        ];
        for idx in coords {
            let mut xp = x.clone();
            xp[idx] += h;
            let up = critic.batch_scores(&xp).unwrap()[idx[0]];
            xp[idx] -= 2.0 * h;
            let down = critic.batch_scores(&xp).unwrap()[idx[0]];
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[idx];
            let err = gradcheck::rel_err(analytic, numeric);
            assert!(err < 1e-4, "{idx:?}: analytic {analytic} vs numeric {numeric} ({err:.2e})");
        }
    }

    #[test]
    fn gp_head_gradient_matches_finite_differences() {
        let ae = Autoencoder::<f64>::new(&ArchConfig::tiny(), 77).unwrap();
        let mut critic = Critic::new(ae.encoder.clone(), GanKind::Wgangp, 78);

        let mut rng = SplitMix64::new(9);
        let mut real = Array3::<f64>::zeros((3, SEQ_LEN, VOCAB_SIZE));
        real.mapv_inplace(|_| rng.next_f64());
        let mut fake = Array3::<f64>::zeros((3, SEQ_LEN, VOCAB_SIZE));
        fake.mapv_inplace(|_| rng.next_f64());
        let lambda = 10.0;

        let (gp, dw) =
            gp_with_head_grad(&critic, &real, &fake, lambda, &mut SplitMix64::new(4)).unwrap();
        assert!(gp > 0.0);

        let h = 1e-6;
        for i in [0usize, 13, 57, 101] {
            let orig = critic.head.w[[i, 0]];
            critic.head.w[[i, 0]] = orig + h;
            let (up, _) =
                gp_with_head_grad(&critic, &real, &fake, lambda, &mut SplitMix64::new(4)).unwrap();
            critic.head.w[[i, 0]] = orig - h;
            let (down, _) =
                gp_with_head_grad(&critic, &real, &fake, lambda, &mut SplitMix64::new(4)).unwrap();
            critic.head.w[[i, 0]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = gradcheck::rel_err(dw[i], numeric);
            assert!(err < 1e-4, "head w[{i}]: {} vs {numeric} ({err:.2e})", dw[i]);
        }
    }

    #[test]
    fn refuses_unpretrained_autoencoder() {
        let ae = tiny_pretrained(1);
        let corpus = tiny_corpus();
        let cfg = GanTrainConfig { steps: 1, batch_size: 2, noise_dim: 8, ..Default::default() };
        let err = train_gan(&ae, false, &corpus, &GanVariant::new(GanKind::Gan), &cfg);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn zero_steps_returns_initialized_generator() {
        let ae = tiny_pretrained(2);
        let corpus = tiny_corpus();
        let cfg = GanTrainConfig { steps: 0, batch_size: 2, noise_dim: 8, ..Default::default() };
        let out = train_gan(&ae, true, &corpus, &GanVariant::new(GanKind::Lsgan), &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.generator.steps_trained, 0);
        assert_eq!(out.status, TrainStatus::Completed);
    }

    #[test]
    fn training_is_deterministic_and_freezes_pretrained_halves() {
        let ae = tiny_pretrained(3);
        let corpus = tiny_corpus();
        for kind in GanKind::all() {
            let variant = GanVariant::new(kind);
            let cfg = GanTrainConfig {
                steps: 3,
                batch_size: 4,
                noise_dim: 8,
                seed: 11,
                ..Default::default()
            };
            let a = train_gan(&ae, true, &corpus, &variant, &cfg).unwrap();
            let b = train_gan(&ae, true, &corpus, &variant, &cfg).unwrap();
            assert_eq!(a.generator.head.w, b.generator.head.w, "{kind} nondeterministic");
            assert_eq!(a.critic.head.w, b.critic.head.w);

            // Frozen halves must be bit-identical to the checkpoint.
            for ((_, p), (_, q)) in
                a.generator.decoder.param_tensors().iter().zip(ae.decoder.param_tensors())
            {
                assert_eq!(p, &q, "{kind} decoder drifted");
            }
            for ((_, p), (_, q)) in
                a.critic.encoder.param_tensors().iter().zip(ae.encoder.param_tensors())
            {
                assert_eq!(p, &q, "{kind} encoder drifted");
            }

            // The step ledger shows critic_steps critic updates per
            // generator update.
            let critic_updates = a.log.iter().filter(|r| r.update == "critic").count();
            let gen_updates = a.log.iter().filter(|r| r.update == "generator").count();
            assert_eq!(gen_updates, 3);
            assert_eq!(critic_updates, 3 * variant.critic_steps);
        }
    }
}
