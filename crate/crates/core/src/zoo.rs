//! The DGA classifier zoo: three binary detector architectures behind one
//! interface, trained on benign vs. malicious labels, evaluated for
//! evasion by generated domains, and adversarially fine-tuned.

use ndarray::{Array1, Array3, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{AdamOpts, ArchConfig, Encoder, EncoderInput, Grads};
use crate::corpus::{encode, TokenSeq, Vocabulary, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::nn::{relu_mask_backward, sigmoid, AdamState, Dense, Embedding, Lstm};
use crate::rng::{shuffle, stage_seed, SplitMix64};
use crate::sampler::DomainBatch;

/// The three stand-in architectures spanning the recurrent / convolutional
/// / shallow design space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Recurrent,
    ParallelConv,
    BaselineShallow,
}

impl ArchKind {
    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::Recurrent => "recurrent",
            ArchKind::ParallelConv => "parallel-conv",
            ArchKind::BaselineShallow => "baseline-shallow",
        }
    }

    pub fn all() -> [ArchKind; 3] {
        [ArchKind::Recurrent, ArchKind::ParallelConv, ArchKind::BaselineShallow]
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" => Ok(ArchKind::Recurrent),
            "parallel-conv" => Ok(ArchKind::ParallelConv),
            "baseline-shallow" => Ok(ArchKind::BaselineShallow),
            other => Err(Error::Param(format!("unknown classifier architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture constants. Inputs are always length-60 sequences over the
/// 39-token vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub kind: ArchKind,
    /// Embedding width (recurrent and baseline-shallow).
    pub embed_dim: usize,
    /// LSTM width (recurrent only).
    pub recurrent_width: usize,
    /// Filter bank for parallel-conv (reuses the encoder topology).
    pub conv: ArchConfig,
    /// Hidden dense width (baseline-shallow only).
    pub dense_width: usize,
}

impl ClassifierArch {
    pub fn standard(kind: ArchKind) -> Self {
        Self {
            kind,
            embed_dim: 32,
            recurrent_width: 128,
            conv: ArchConfig::default(),
            dense_width: 64,
        }
    }
}

/// The trainable network behind an architecture.
#[derive(Debug, Clone)]
pub enum Net {
    Recurrent { emb: Embedding<f32>, lstm: Lstm<f32>, head: Dense<f32> },
    ParallelConv { encoder: Encoder<f32>, head: Dense<f32> },
    BaselineShallow { emb: Embedding<f32>, hidden: Dense<f32>, head: Dense<f32> },
}

/// Interface every architecture implements; additional backbones plug in
/// by providing these three operations over token batches.
pub trait Backbone {
    /// Logits, one per sequence.
    fn logits(&self, seqs: &[TokenSeq]) -> Array1<f32>;

    /// Logits plus parameter gradients of `sum_i dlogit_i * logit_i`.
    fn logits_with_grads(&self, seqs: &[TokenSeq], dlogit: &Array1<f32>)
        -> (Array1<f32>, Grads<f32>);

    fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>>;
}

impl Net {
    pub fn new(arch: &ClassifierArch, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        Ok(match arch.kind {
            ArchKind::Recurrent => {
                let emb = Embedding::new(&mut rng, VOCAB_SIZE, arch.embed_dim);
                let lstm = Lstm::new(&mut rng, arch.embed_dim, arch.recurrent_width);
                let head = Dense::new(&mut rng, arch.recurrent_width, 1);
                Net::Recurrent { emb, lstm, head }
            }
            ArchKind::ParallelConv => {
                arch.conv.validate()?;
                let encoder = Encoder::new(&arch.conv, &mut rng);
                let head = Dense::new(&mut rng, arch.conv.bottleneck(), 1);
                Net::ParallelConv { encoder, head }
            }
            ArchKind::BaselineShallow => {
                let emb = Embedding::new(&mut rng, VOCAB_SIZE, arch.embed_dim);
                let hidden = Dense::new(&mut rng, arch.embed_dim, arch.dense_width);
                let head = Dense::new(&mut rng, arch.dense_width, 1);
                Net::BaselineShallow { emb, hidden, head }
            }
        })
    }

    pub fn param_tensors(&self) -> Vec<(String, ndarray::ArrayD<f32>)> {
        match self {
            Net::Recurrent { emb, lstm, head } => vec![
                ("emb.w".into(), emb.w.clone().into_dyn()),
                ("lstm.wx".into(), lstm.wx.clone().into_dyn()),
                ("lstm.wh".into(), lstm.wh.clone().into_dyn()),
                ("lstm.b".into(), lstm.b.clone().into_dyn()),
                ("head.w".into(), head.w.clone().into_dyn()),
                ("head.b".into(), head.b.clone().into_dyn()),
            ],
            Net::ParallelConv { encoder, head } => {
                let mut out = encoder.param_tensors();
                out.push(("head.w".into(), head.w.clone().into_dyn()));
                out.push(("head.b".into(), head.b.clone().into_dyn()));
                out
            }
            Net::BaselineShallow { emb, hidden, head } => vec![
                ("emb.w".into(), emb.w.clone().into_dyn()),
                ("hidden.w".into(), hidden.w.clone().into_dyn()),
                ("hidden.b".into(), hidden.b.clone().into_dyn()),
                ("head.w".into(), head.w.clone().into_dyn()),
                ("head.b".into(), head.b.clone().into_dyn()),
            ],
        }
    }

    pub fn named_param_views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        match self {
            Net::Recurrent { emb, lstm, head } => vec![
                ("emb.w".into(), emb.w.view_mut().into_dyn()),
                ("lstm.wx".into(), lstm.wx.view_mut().into_dyn()),
                ("lstm.wh".into(), lstm.wh.view_mut().into_dyn()),
                ("lstm.b".into(), lstm.b.view_mut().into_dyn()),
                ("head.w".into(), head.w.view_mut().into_dyn()),
                ("head.b".into(), head.b.view_mut().into_dyn()),
            ],
            Net::ParallelConv { encoder, head } => {
                let mut out = encoder.named_param_views_mut();
                out.push(("head.w".into(), head.w.view_mut().into_dyn()));
                out.push(("head.b".into(), head.b.view_mut().into_dyn()));
                out
            }
            Net::BaselineShallow { emb, hidden, head } => vec![
                ("emb.w".into(), emb.w.view_mut().into_dyn()),
                ("hidden.w".into(), hidden.w.view_mut().into_dyn()),
                ("hidden.b".into(), hidden.b.view_mut().into_dyn()),
                ("head.w".into(), head.w.view_mut().into_dyn()),
                ("head.b".into(), head.b.view_mut().into_dyn()),
            ],
        }
    }
}

impl Backbone for Net {
    fn logits(&self, seqs: &[TokenSeq]) -> Array1<f32> {
        match self {
            Net::Recurrent { emb, lstm, head } => {
                let x = emb.forward_ids(seqs);
                let (h, _) = lstm.forward_at(&x, &last_positions(seqs));
                head.forward(&h).index_axis(Axis(1), 0).to_owned()
            }
            Net::ParallelConv { encoder, head } => {
                let (feat, _) = encoder.forward(EncoderInput::Ids(seqs));
                head.forward(&feat).index_axis(Axis(1), 0).to_owned()
            }
            Net::BaselineShallow { emb, hidden, head } => {
                let x = emb.forward_ids(seqs);
                let pooled = masked_mean_pool(&x, seqs);
                let mut h = hidden.forward(&pooled);
                h.mapv_inplace(|v| v.max(0.0));
                head.forward(&h).index_axis(Axis(1), 0).to_owned()
            }
        }
    }

    fn logits_with_grads(
        &self,
        seqs: &[TokenSeq],
        dlogit: &Array1<f32>,
    ) -> (Array1<f32>, Grads<f32>) {
        let dlogit2 = dlogit.view().insert_axis(Axis(1)).to_owned();
        match self {
            Net::Recurrent { emb, lstm, head } => {
                let positions = last_positions(seqs);
                let x = emb.forward_ids(seqs);
                let (h, cache) = lstm.forward_at(&x, &positions);
                let logits = head.forward(&h).index_axis(Axis(1), 0).to_owned();

                let (head_grads, dh) = head.backward(&h, &dlogit2, true, true);
                let ((dwx, dwh, db), dx) =
                    lstm.backward_at(&cache, &dh.expect("dh"), &positions, true);
                let demb = emb.backward_ids(seqs, &dx.expect("dx"));
                let (hw, hb) = head_grads.expect("head grads");
                (
                    logits,
                    vec![
                        demb.into_dyn(),
                        dwx.into_dyn(),
                        dwh.into_dyn(),
                        db.into_dyn(),
                        hw.into_dyn(),
                        hb.into_dyn(),
                    ],
                )
            }
            Net::ParallelConv { encoder, head } => {
                let (feat, cache) = encoder.forward(EncoderInput::Ids(seqs));
                let logits = head.forward(&feat).index_axis(Axis(1), 0).to_owned();

                let (head_grads, dfeat) = head.backward(&feat, &dlogit2, true, true);
                let (enc_grads, _) = encoder.backward(&cache, &dfeat.expect("dfeat"), true, false);
                let mut grads = enc_grads.expect("encoder grads");
                let (hw, hb) = head_grads.expect("head grads");
                grads.push(hw.into_dyn());
                grads.push(hb.into_dyn());
                (logits, grads)
            }
            Net::BaselineShallow { emb, hidden, head } => {
                let x = emb.forward_ids(seqs);
                let pooled = masked_mean_pool(&x, seqs);
                let mut h = hidden.forward(&pooled);
                h.mapv_inplace(|v| v.max(0.0));
                let logits = head.forward(&h).index_axis(Axis(1), 0).to_owned();

                let (head_grads, dh) = head.backward(&h, &dlogit2, true, true);
                let mut dh = dh.expect("dh");
                relu_mask_backward(&mut dh, &h);
                let (hidden_grads, dpooled) = hidden.backward(&pooled, &dh, true, true);

                // Masked mean pooling spreads each sample's gradient evenly
                // over its non-pad positions.
                let seq_len = crate::corpus::SEQ_LEN;
                let dpooled = dpooled.expect("dpooled");
                let mut dx = Array3::zeros((seqs.len(), seq_len, emb.dim()));
                for ((mut sample, drow), seq) in
                    dx.axis_iter_mut(Axis(0)).zip(dpooled.rows()).zip(seqs)
                {
                    let len = seq.len().max(1);
                    let scale = 1.0 / len as f32;
                    for t in 0..len {
                        sample.row_mut(t).assign(&(&drow * scale));
                    }
                }
                let demb = emb.backward_ids(seqs, &dx);

                let (w1, b1) = hidden_grads.expect("hidden grads");
                let (hw, hb) = head_grads.expect("head grads");
                (
                    logits,
                    vec![demb.into_dyn(), w1.into_dyn(), b1.into_dyn(), hw.into_dyn(), hb.into_dyn()],
                )
            }
        }
    }

    fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        match self {
            Net::Recurrent { emb, lstm, head } => vec![
                emb.w.view_mut().into_dyn(),
                lstm.wx.view_mut().into_dyn(),
                lstm.wh.view_mut().into_dyn(),
                lstm.b.view_mut().into_dyn(),
                head.w.view_mut().into_dyn(),
                head.b.view_mut().into_dyn(),
            ],
            Net::ParallelConv { encoder, head } => {
                let mut out = encoder.param_views_mut();
                out.push(head.w.view_mut().into_dyn());
                out.push(head.b.view_mut().into_dyn());
                out
            }
            Net::BaselineShallow { emb, hidden, head } => vec![
                emb.w.view_mut().into_dyn(),
                hidden.w.view_mut().into_dyn(),
                hidden.b.view_mut().into_dyn(),
                head.w.view_mut().into_dyn(),
                head.b.view_mut().into_dyn(),
            ],
        }
    }
}

/// How a model came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Lineage {
    Fresh,
    FineTunedFrom { checkpoint_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub datasets: String,
    pub seed: u64,
    pub epochs: usize,
    pub lineage: Lineage,
}

/// A trained binary classifier: probability of "DGA".
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    pub net: Net,
    pub threshold: f64,
    pub provenance: TrainingProvenance,
}

/// Hash of a parameter set, used as the lineage checkpoint id.
pub fn params_hash(net: &Net) -> String {
    let mut hasher = Sha256::new();
    for (name, tensor) in net.param_tensors() {
        hasher.update(name.as_bytes());
        for &v in tensor.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClfConfig {
    pub epochs: usize,
    pub split: f64,
    pub batch_size: usize,
    pub adam: AdamOpts,
    pub seed: u64,
}

impl Default for ClfConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            split: 0.7,
            batch_size: 64,
            adam: AdamOpts { lr: 1e-3, beta1: 0.9, beta2: 0.999 },
            seed: 0,
        }
    }
}

pub const DGA_LABEL: f32 = 1.0;
pub const BENIGN_LABEL: f32 = 0.0;

/// Index of each sequence's last non-pad token (0 for all-PAD input).
fn last_positions(seqs: &[TokenSeq]) -> Vec<usize> {
    seqs.iter().map(|s| s.len().saturating_sub(1)).collect()
}

/// Mean over non-pad positions only; an all-PAD sequence pools its first
/// PAD embedding so the result stays finite.
fn masked_mean_pool(x: &ndarray::Array3<f32>, seqs: &[TokenSeq]) -> ndarray::Array2<f32> {
    let (batch, _, dim) = x.dim();
    let mut pooled = ndarray::Array2::zeros((batch, dim));
    for (b, seq) in seqs.iter().enumerate() {
        let len = seq.len().max(1);
        let mut row = pooled.row_mut(b);
        for t in 0..len {
            row += &x.slice(ndarray::s![b, t, ..]);
        }
        row.mapv_inplace(|v| v / len as f32);
    }
    pooled
}

fn encode_labels(labels: &[String], vocab: &Vocabulary) -> Vec<TokenSeq> {
    labels.iter().filter_map(|l| encode(l, vocab).ok()).collect()
}

/// Assembled, shuffled, labeled dataset with a train/test split. Class
/// balance follows the input sizes exactly, so callers control the mix by
/// construction.
struct LabeledSplit {
    train: Vec<(TokenSeq, f32)>,
    test: Vec<(TokenSeq, f32)>,
}

fn build_split(
    benign: &[TokenSeq],
    malicious: &[TokenSeq],
    split: f64,
    seed: u64,
) -> Result<LabeledSplit> {
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::Param("both classes must be non-empty".into()));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Param(format!("split must lie in (0, 1), got {split}")));
    }
    let mut all: Vec<(TokenSeq, f32)> = Vec::with_capacity(benign.len() + malicious.len());
    all.extend(benign.iter().map(|&s| (s, BENIGN_LABEL)));
    all.extend(malicious.iter().map(|&s| (s, DGA_LABEL)));
    let mut rng = SplitMix64::new(stage_seed(seed, "clf-split"));
    shuffle(&mut all, &mut rng);
    let n_train = ((all.len() as f64 * split).round() as usize).clamp(1, all.len() - 1);
    let test = all.split_off(n_train);
    Ok(LabeledSplit { train: all, test })
}

/// Stable binary cross-entropy on logits, plus the logit gradients.
fn bce_with_logits(logits: &Array1<f32>, labels: &[f32]) -> (f64, Array1<f32>) {
    let n = logits.len() as f64;
    let mut loss = 0.0f64;
    let mut dlogit = Array1::zeros(logits.len());
    for (i, (&o, &y)) in logits.iter().zip(labels).enumerate() {
        let o64 = o as f64;
        loss += o64.max(0.0) - o64 * y as f64 + (1.0 + (-o64.abs()).exp()).ln();
        dlogit[i] = (sigmoid(o) - y) / n as f32;
    }
    (loss / n, dlogit)
}

fn accuracy_of(net: &Net, data: &[(TokenSeq, f32)], threshold: f64, batch: usize) -> f64 {
    let mut hits = 0usize;
    for chunk in data.chunks(batch.max(1)) {
        let seqs: Vec<TokenSeq> = chunk.iter().map(|(s, _)| *s).collect();
        let logits = net.logits(&seqs);
        for (logit, (_, label)) in logits.iter().zip(chunk) {
            let verdict = sigmoid(*logit as f64) >= threshold;
            if verdict == (*label == DGA_LABEL) {
                hits += 1;
            }
        }
    }
    hits as f64 / data.len().max(1) as f64
}

fn test_loss_of(net: &Net, data: &[(TokenSeq, f32)], batch: usize) -> f64 {
    let mut total = 0.0;
    for chunk in data.chunks(batch.max(1)) {
        let seqs: Vec<TokenSeq> = chunk.iter().map(|(s, _)| *s).collect();
        let labels: Vec<f32> = chunk.iter().map(|(_, l)| *l).collect();
        let logits = net.logits(&seqs);
        let (loss, _) = bce_with_logits(&logits, &labels);
        total += loss * chunk.len() as f64;
    }
    total / data.len().max(1) as f64
}

fn train_net(
    mut net: Net,
    split: &LabeledSplit,
    cfg: &ClfConfig,
    lineage: Lineage,
    arch: ClassifierArch,
    datasets: String,
) -> Result<(ClassifierModel, Accuracies)> {
    let threshold = 0.5;
    let mut adam = AdamState::<f32>::new(cfg.adam.to_config());
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut best: Option<(f64, Net)> = None;
    let mut trained_epochs = cfg.epochs;

    for epoch in 0..cfg.epochs {
        let mut rng = SplitMix64::new(stage_seed(cfg.seed, &format!("clf-epoch-{epoch}")));
        shuffle(&mut order, &mut rng);

        let mut diverged = false;
        for batch_idx in order.chunks(cfg.batch_size) {
            let seqs: Vec<TokenSeq> = batch_idx.iter().map(|&i| split.train[i].0).collect();
            let labels: Vec<f32> = batch_idx.iter().map(|&i| split.train[i].1).collect();

            let logits = net.logits(&seqs);
            let (loss, dlogit) = bce_with_logits(&logits, &labels);
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            let (_, grads) = net.logits_with_grads(&seqs, &dlogit);
            adam.step(net.param_views_mut(), &grads);
        }
        if diverged {
            trained_epochs = epoch;
            break;
        }

        let test_loss = test_loss_of(&net, &split.test, cfg.batch_size);
        if best.as_ref().map_or(true, |(b, _)| test_loss < *b) {
            best = Some((test_loss, net.clone()));
        }
    }

    // Best-test-loss checkpoint, or the initial net for zero-epoch runs.
    let net = best.map(|(_, n)| n).unwrap_or(net);
    let accs = Accuracies {
        train: accuracy_of(&net, &split.train, threshold, cfg.batch_size),
        test: accuracy_of(&net, &split.test, threshold, cfg.batch_size),
    };
    let model = ClassifierModel {
        arch,
        net,
        threshold,
        provenance: TrainingProvenance { datasets, seed: cfg.seed, epochs: trained_epochs, lineage },
    };
    Ok((model, accs))
}

/// Trains a fresh classifier on benign vs. malicious labels with a
/// shuffled split, keeping the best-test-loss checkpoint.
pub fn train_classifier(
    arch: &ClassifierArch,
    benign: &[String],
    malicious: &[String],
    cfg: &ClfConfig,
) -> Result<(ClassifierModel, Accuracies)> {
    let vocab = Vocabulary::standard();
    let benign_seqs = encode_labels(benign, &vocab);
    let malicious_seqs = encode_labels(malicious, &vocab);
    let split = build_split(&benign_seqs, &malicious_seqs, cfg.split, cfg.seed)?;
    let net = Net::new(arch, stage_seed(cfg.seed, "clf-init"))?;
    train_net(
        net,
        &split,
        cfg,
        Lineage::Fresh,
        arch.clone(),
        format!("benign={} malicious={}", benign_seqs.len(), malicious_seqs.len()),
    )
}

/// Per-domain classification outcome: unencodable inputs become error
/// entries and the batch continues.
#[derive(Debug, Clone)]
pub enum ClassifyOutcome {
    Scored { score: f64, is_dga: bool },
    Failed(String),
}

pub fn classify(model: &ClassifierModel, domains: &[String]) -> Vec<ClassifyOutcome> {
    let vocab = Vocabulary::standard();
    let mut out: Vec<(usize, ClassifyOutcome)> = Vec::with_capacity(domains.len());
    let mut batch: Vec<(usize, TokenSeq)> = Vec::new();
    for (i, domain) in domains.iter().enumerate() {
        match encode(domain, &vocab) {
            Ok(seq) => batch.push((i, seq)),
            Err(e) => out.push((i, ClassifyOutcome::Failed(e.to_string()))),
        }
    }

    const CHUNK: usize = 512;
    for chunk in batch.chunks(CHUNK) {
        let seqs: Vec<TokenSeq> = chunk.iter().map(|(_, s)| *s).collect();
        let logits = model.net.logits(&seqs);
        for ((i, _), logit) in chunk.iter().zip(logits.iter()) {
            let score = sigmoid(*logit as f64);
            out.push((*i, ClassifyOutcome::Scored { score, is_dga: score >= model.threshold }));
        }
    }

    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, o)| o).collect()
}

/// Fraction of the batch the model labels benign. Unencodable domains are
/// excluded from the denominator.
pub fn evasion_rate(model: &ClassifierModel, batch: &DomainBatch) -> Result<f64> {
    if batch.domains.is_empty() {
        return Err(Error::Param("evasion_rate needs a non-empty batch".into()));
    }
    let outcomes = classify(model, &batch.domains);
    let mut scored = 0usize;
    let mut benign = 0usize;
    for o in &outcomes {
        if let ClassifyOutcome::Scored { is_dga, .. } = o {
            scored += 1;
            benign += !is_dga as usize;
        }
    }
    if scored == 0 {
        return Err(Error::Param("no batch domain was encodable".into()));
    }
    Ok(benign as f64 / scored as f64)
}

/// Detection counterpart of [`evasion_rate`]; the two sum to 1 exactly.
pub fn detection_rate(model: &ClassifierModel, batch: &DomainBatch) -> Result<f64> {
    let outcomes = classify(model, &batch.domains);
    let mut scored = 0usize;
    let mut dga = 0usize;
    for o in &outcomes {
        if let ClassifyOutcome::Scored { is_dga, .. } = o {
            scored += 1;
            dga += *is_dga as usize;
        }
    }
    if scored == 0 {
        return Err(Error::Param("no batch domain was encodable".into()));
    }
    Ok(dga as f64 / scored as f64)
}

/// Per-domain detection verdicts keyed by domain string, for the
/// usability synthesis.
pub fn detection_verdicts(
    model: &ClassifierModel,
    domains: &[String],
) -> std::collections::HashMap<String, bool> {
    let outcomes = classify(model, domains);
    domains
        .iter()
        .zip(outcomes)
        .filter_map(|(d, o)| match o {
            ClassifyOutcome::Scored { is_dga, .. } => Some((d.clone(), is_dga)),
            ClassifyOutcome::Failed(_) => None,
        })
        .collect()
}

/// Continues a trained model's optimization on a dataset that mixes the
/// original classes with adversarial generated domains (labeled
/// malicious). The source checkpoint id is recorded for lineage checks.
pub fn finetune(
    model: &ClassifierModel,
    benign: &[String],
    malicious_feed: &[String],
    gan_domains: &[String],
    cfg: &ClfConfig,
) -> Result<(ClassifierModel, Accuracies)> {
    if benign.is_empty() || malicious_feed.is_empty() || gan_domains.is_empty() {
        return Err(Error::Param("fine-tuning needs all three sources non-empty".into()));
    }
    if model.provenance.epochs == 0 {
        return Err(Error::State("fine-tuning requires a previously trained model".into()));
    }
    let vocab = Vocabulary::standard();
    let benign_seqs = encode_labels(benign, &vocab);
    let mut malicious_seqs = encode_labels(malicious_feed, &vocab);
    malicious_seqs.extend(encode_labels(gan_domains, &vocab));

    let split = build_split(&benign_seqs, &malicious_seqs, cfg.split, cfg.seed)?;
    let source_id = params_hash(&model.net);
    train_net(
        model.net.clone(),
        &split,
        cfg,
        Lineage::FineTunedFrom { checkpoint_id: source_id },
        model.arch.clone(),
        format!(
            "benign={} feed={} gan={}",
            benign_seqs.len(),
            malicious_feed.len(),
            gan_domains.len()
        ),
    )
}

/// Verifies a fine-tuned model's recorded parentage against a candidate
/// parent's parameters.
pub fn verify_lineage(child: &ClassifierModel, parent: &ClassifierModel) -> Result<()> {
    match &child.provenance.lineage {
        Lineage::Fresh => Err(Error::State("model records no fine-tuning parent".into())),
        Lineage::FineTunedFrom { checkpoint_id } => {
            let actual = params_hash(&parent.net);
            if *checkpoint_id == actual {
                Ok(())
            } else {
                Err(Error::State(format!(
                    "lineage mismatch: recorded {checkpoint_id}, parent hashes to {actual}"
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classic::{bundled_wordlist, generate_classic, ClassicFamily};

    fn word_labels(n: usize, seed: u64) -> Vec<String> {
        let family = ClassicFamily::WordlistConcat {
            words: bundled_wordlist(),
            min_words: 1,
            max_words: 2,
        };
        generate_classic(&family, seed, n).unwrap()
    }

    fn rand_labels(n: usize, seed: u64) -> Vec<String> {
        let family = ClassicFamily::RandChars { min_len: 8, max_len: 16 };
        generate_classic(&family, seed, n).unwrap()
    }

    fn small_arch(kind: ArchKind) -> ClassifierArch {
        ClassifierArch {
            kind,
            embed_dim: 12,
            recurrent_width: 24,
            conv: ArchConfig::tiny(),
            dense_width: 24,
        }
    }

    fn quick_cfg(seed: u64, epochs: usize) -> ClfConfig {
        ClfConfig {
            epochs,
            batch_size: 32,
            seed,
            adam: AdamOpts { lr: 3e-3, beta1: 0.9, beta2: 0.999 },
            ..Default::default()
        }
    }

    #[test]
    fn all_architectures_learn_the_separable_task() {
        let benign = word_labels(800, 1);
        let malicious = rand_labels(800, 2);
        for kind in ArchKind::all() {
            let (model, accs) =
                train_classifier(&small_arch(kind), &benign, &malicious, &quick_cfg(3, 10))
                    .unwrap();
            // The shrunk architectures clear a modest bar here; the
            // acceptance suite holds the standard ones to 0.99 at scale.
            assert!(accs.test >= 0.90, "{kind} reached only {:.3} test accuracy", accs.test);
            assert_eq!(model.provenance.lineage, Lineage::Fresh);
        }
    }

    #[test]
    fn zero_epoch_training_sits_at_chance() {
        let benign = word_labels(200, 5);
        let malicious = rand_labels(200, 6);
        let (_, accs) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(7, 0),
        )
        .unwrap();
        assert!((accs.test - 0.5).abs() <= 0.15, "untrained accuracy {:.3}", accs.test);
    }

    #[test]
    fn single_class_input_is_rejected() {
        let benign = word_labels(50, 8);
        let err =
            train_classifier(&small_arch(ArchKind::Recurrent), &benign, &[], &quick_cfg(9, 1));
        assert!(matches!(err, Err(Error::Param(_))));
    }

    #[test]
    fn classify_contract() {
        let benign = word_labels(200, 10);
        let malicious = rand_labels(200, 11);
        let (model, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(12, 4),
        )
        .unwrap();

        let domains =
            vec!["garden".to_string(), "xkqvzplwmtr".to_string(), "bad_domain!".to_string()];
        let outcomes = classify(&model, &domains);
        assert_eq!(outcomes.len(), 3);
        match &outcomes[0] {
            ClassifyOutcome::Scored { score, .. } => assert!((0.0..=1.0).contains(score)),
            other => panic!("expected a score, got {other:?}"),
        }
        assert!(matches!(outcomes[2], ClassifyOutcome::Failed(_)));

        // Determinism.
        let again = classify(&model, &domains);
        for (a, b) in outcomes.iter().zip(&again) {
            match (a, b) {
                (
                    ClassifyOutcome::Scored { score: s1, is_dga: v1 },
                    ClassifyOutcome::Scored { score: s2, is_dga: v2 },
                ) => {
                    assert_eq!(s1, s2);
                    assert_eq!(v1, v2);
                }
                (ClassifyOutcome::Failed(_), ClassifyOutcome::Failed(_)) => {}
                _ => panic!("outcome kinds diverged"),
            }
        }
    }

    #[test]
    fn threshold_is_inclusive_on_the_dga_side() {
        let benign = word_labels(60, 13);
        let malicious = rand_labels(60, 14);
        let (mut model, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(15, 1),
        )
        .unwrap();
        // Force logit 0 -> score exactly 0.5 by zeroing the head.
        if let Net::BaselineShallow { head, .. } = &mut model.net {
            head.w.fill(0.0);
            head.b.fill(0.0);
        }
        let outcomes = classify(&model, &["anything".to_string()]);
        match &outcomes[0] {
            ClassifyOutcome::Scored { score, is_dga } => {
                assert_eq!(*score, 0.5);
                assert!(*is_dga, "boundary score must be DGA");
            }
            other => panic!("expected a score, got {other:?}"),
        }
    }

    #[test]
    fn evasion_plus_detection_is_exactly_one() {
        let benign = word_labels(200, 16);
        let malicious = rand_labels(200, 17);
        let (model, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(18, 3),
        )
        .unwrap();
        let batch = DomainBatch::from_labels(word_labels(101, 19), "test", 0);
        let e = evasion_rate(&model, &batch).unwrap();
        let d = detection_rate(&model, &batch).unwrap();
        assert_eq!(e + d, 1.0);

        assert!(evasion_rate(&model, &DomainBatch::from_labels(vec![], "t", 0)).is_err());
    }

    #[test]
    fn always_dga_model_has_zero_evasion() {
        let benign = word_labels(60, 20);
        let malicious = rand_labels(60, 21);
        let (mut model, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(22, 1),
        )
        .unwrap();
        if let Net::BaselineShallow { head, .. } = &mut model.net {
            head.w.fill(0.0);
            head.b.fill(100.0); // sigmoid saturates to 1
        }
        let batch = DomainBatch::from_labels(word_labels(50, 23), "test", 0);
        assert_eq!(evasion_rate(&model, &batch).unwrap(), 0.0);
    }

    #[test]
    fn finetune_records_and_verifies_lineage() {
        let benign = word_labels(300, 24);
        let malicious = rand_labels(300, 25);
        let (model, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(26, 4),
        )
        .unwrap();

        let gan_like = word_labels(150, 27);
        let (tuned, accs) =
            finetune(&model, &benign, &malicious, &gan_like, &quick_cfg(28, 3)).unwrap();
        assert!(accs.test > 0.4);
        match &tuned.provenance.lineage {
            Lineage::FineTunedFrom { checkpoint_id } => {
                assert_eq!(*checkpoint_id, params_hash(&model.net));
            }
            other => panic!("expected fine-tuned lineage, got {other:?}"),
        }
        verify_lineage(&tuned, &model).unwrap();

        // A different parent fails the hash check.
        let (other, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(99, 1),
        )
        .unwrap();
        assert!(verify_lineage(&tuned, &other).is_err());

        // Fine-tuning an untrained model is a state error.
        let untrained = ClassifierModel {
            arch: model.arch.clone(),
            net: Net::new(&model.arch, 1).unwrap(),
            threshold: 0.5,
            provenance: TrainingProvenance {
                datasets: String::new(),
                seed: 0,
                epochs: 0,
                lineage: Lineage::Fresh,
            },
        };
        assert!(matches!(
            finetune(&untrained, &benign, &malicious, &gan_like, &quick_cfg(1, 1)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn finetuning_on_adversarial_class_reduces_its_evasion() {
        let benign = word_labels(400, 30);
        let malicious = rand_labels(400, 31);
        let (model, _) = train_classifier(
            &small_arch(ArchKind::BaselineShallow),
            &benign,
            &malicious,
            &quick_cfg(32, 5),
        )
        .unwrap();

        // Adversarial class: word-like domains the fresh model mislabels
        // as benign at a high rate.
        let adversarial = word_labels(400, 33);
        let held_out: Vec<String> = word_labels(600, 34)
            .into_iter()
            .filter(|d| !adversarial.contains(d))
            .take(200)
            .collect();
        let batch = DomainBatch::from_labels(held_out, "word-like", 34);

        let before = evasion_rate(&model, &batch).unwrap();
        let (tuned, _) =
            finetune(&model, &benign, &malicious, &adversarial, &quick_cfg(35, 5)).unwrap();
        let after = evasion_rate(&tuned, &batch).unwrap();
        assert!(after < before, "fine-tuning did not reduce evasion ({before:.3} -> {after:.3})");
    }

    #[test]
    fn training_is_deterministic() {
        let benign = word_labels(120, 40);
        let malicious = rand_labels(120, 41);
        let arch = small_arch(ArchKind::Recurrent);
        let (a, accs_a) = train_classifier(&arch, &benign, &malicious, &quick_cfg(42, 2)).unwrap();
        let (b, accs_b) = train_classifier(&arch, &benign, &malicious, &quick_cfg(42, 2)).unwrap();
        assert_eq!(accs_a.test, accs_b.test);
        assert_eq!(params_hash(&a.net), params_hash(&b.net));
    }
}
