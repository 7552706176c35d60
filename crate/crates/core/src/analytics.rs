//! Distributional analyses: length histograms, n-gram distributions with a
//! KL divergence, the Wasserstein-1 length distance, and the per-variant
//! usability synthesis.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::DomainBatch;

/// Counts of domains by string length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub counts: BTreeMap<usize, u64>,
    pub total: u64,
}

pub fn length_histogram<S: AsRef<str>>(domains: &[S]) -> Result<LengthHistogram> {
    if domains.is_empty() {
        return Err(Error::Param("length_histogram needs a non-empty input".into()));
    }
    let mut counts = BTreeMap::new();
    for d in domains {
        *counts.entry(d.as_ref().chars().count()).or_insert(0u64) += 1;
    }
    Ok(LengthHistogram { total: counts.values().sum(), counts })
}

impl LengthHistogram {
    pub fn mean(&self) -> f64 {
        let s: u64 = self.counts.iter().map(|(len, c)| *len as u64 * c).sum();
        s as f64 / self.total as f64
    }
}

/// Wasserstein-1 distance between two length histograms on the integer
/// line: the absolute area between their CDFs.
pub fn wasserstein1_length(p: &LengthHistogram, q: &LengthHistogram) -> f64 {
    let max_len = *p
        .counts
        .keys()
        .chain(q.counts.keys())
        .max()
        .expect("histograms are non-empty");
    let mut cp = 0.0f64;
    let mut cq = 0.0f64;
    let mut dist = 0.0f64;
    for len in 0..=max_len {
        cp += *p.counts.get(&len).unwrap_or(&0) as f64 / p.total as f64;
        cq += *q.counts.get(&len).unwrap_or(&0) as f64 / q.total as f64;
        dist += (cp - cq).abs();
    }
    dist
}

/// Normalized n-gram (n in {1, 2}) frequency distribution over all sliding
/// windows of the input domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramDistribution {
    pub n: usize,
    pub probs: BTreeMap<String, f64>,
    pub support: usize,
}

pub fn ngram_distribution<S: AsRef<str>>(domains: &[S], n: usize) -> Result<NgramDistribution> {
    if !(n == 1 || n == 2) {
        return Err(Error::Param(format!("n-gram order must be 1 or 2, got {n}")));
    }
    if domains.is_empty() {
        return Err(Error::Param("ngram_distribution needs a non-empty input".into()));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for d in domains {
        let chars: Vec<char> = d.as_ref().chars().collect();
        if chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect()).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Param("no n-gram windows in input".into()));
    }
    let probs: BTreeMap<String, f64> =
        counts.into_iter().map(|(g, c)| (g, c as f64 / total as f64)).collect();
    Ok(NgramDistribution { n, support: probs.len(), probs })
}

impl NgramDistribution {
    /// Total window count identity: callers can verify
    /// `sum(len_i - n + 1)` against this reconstruction.
    pub fn prob(&self, gram: &str) -> f64 {
        self.probs.get(gram).copied().unwrap_or(0.0)
    }
}

/// `KL(p || q~)` where `q~` is `q` with additive epsilon smoothing,
/// renormalized over the union support. Nonnegative; zero iff the
/// distributions agree on the union support (post-smoothing).
pub fn kl_divergence(
    p: &NgramDistribution,
    q: &NgramDistribution,
    epsilon: f64,
) -> Result<f64> {
    if p.n != q.n {
        return Err(Error::Param(format!("n-gram orders differ: {} vs {}", p.n, q.n)));
    }
    if epsilon <= 0.0 {
        return Err(Error::Param("epsilon must be positive".into()));
    }
    let union: HashSet<&String> = p.probs.keys().chain(q.probs.keys()).collect();
    let z = 1.0 + epsilon * union.len() as f64;
    let mut kl = 0.0f64;
    for gram in union {
        let pv = p.prob(gram);
        if pv == 0.0 {
            continue;
        }
        let qv = (q.prob(gram) + epsilon) / z;
        kl += pv * (pv / qv).ln();
    }
    Ok(kl.max(0.0))
}

/// Divergence metrics of a generated batch against the benign reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceMetrics {
    pub unigram_kl: f64,
    pub bigram_kl: f64,
    pub length_w1: f64,
}

/// The per-variant usability verdict synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsabilityReport {
    pub variant: String,
    pub repeated_rate: f64,
    pub existing_rate: f64,
    pub detection_rate: f64,
    /// Per-domain conjunction: P(not repeated and not existing and not
    /// detected) over the verdict-covered sample.
    pub usable_probability: f64,
    pub covered: usize,
    pub divergence: DivergenceMetrics,
}

/// Benign-corpus reference statistics for divergence scoring.
pub struct BenignReference {
    pub lengths: LengthHistogram,
    pub unigrams: NgramDistribution,
    pub bigrams: NgramDistribution,
}

impl BenignReference {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        Ok(Self {
            lengths: length_histogram(labels)?,
            unigrams: ngram_distribution(labels, 1)?,
            bigrams: ngram_distribution(labels, 2)?,
        })
    }
}

pub const KL_EPSILON: f64 = 1e-9;

/// Combines collision, liveness, and detection verdicts into the usability
/// report. `existing` and `detected` map domain -> verdict; domains missing
/// from either map are outside the covered sample. Repeats are per-domain
/// occurrences beyond the first in the batch.
pub fn usability_report(
    batch: &DomainBatch,
    existing: &HashMap<String, bool>,
    detected: &HashMap<String, bool>,
    benign: &BenignReference,
) -> Result<UsabilityReport> {
    if batch.domains.is_empty() {
        return Err(Error::Param("usability_report needs a non-empty batch".into()));
    }

    let mut covered = 0usize;
    let mut usable = 0usize;
    let mut repeated = 0usize;
    let mut exists_n = 0usize;
    let mut detected_n = 0usize;
    let mut seen: HashSet<&str> = HashSet::with_capacity(batch.domains.len());

    for domain in &batch.domains {
        let is_repeat = !seen.insert(domain.as_str());
        let (Some(&is_existing), Some(&is_detected)) =
            (existing.get(domain), detected.get(domain))
        else {
            continue;
        };
        covered += 1;
        repeated += is_repeat as usize;
        exists_n += is_existing as usize;
        detected_n += is_detected as usize;
        if !is_repeat && !is_existing && !is_detected {
            usable += 1;
        }
    }

    if covered == 0 {
        return Err(Error::Coverage(
            "no batch domain has both a liveness and a detection verdict".into(),
        ));
    }

    let lengths = length_histogram(&batch.domains)?;
    let unigrams = ngram_distribution(&batch.domains, 1)?;
    let bigrams = ngram_distribution(&batch.domains, 2)?;

    Ok(UsabilityReport {
        variant: batch.provenance.variant.clone(),
        repeated_rate: repeated as f64 / covered as f64,
        existing_rate: exists_n as f64 / covered as f64,
        detection_rate: detected_n as f64 / covered as f64,
        usable_probability: usable as f64 / covered as f64,
        covered,
        divergence: DivergenceMetrics {
            unigram_kl: kl_divergence(&unigrams, &benign.unigrams, KL_EPSILON)?,
            bigram_kl: kl_divergence(&bigrams, &benign.bigrams, KL_EPSILON)?,
            length_w1: wasserstein1_length(&lengths, &benign.lengths),
        },
    })
}
