//! Batch generation from a trained generator plus repeated-collision
//! accounting.

use std::collections::HashSet;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::corpus::{decode, Vocabulary, SEQ_LEN};
use crate::error::{Error, Result};
use crate::gan::{sample_latent, Generator};

/// Where a batch came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub variant: String,
    pub checkpoint: String,
    pub seed: u64,
    pub index_range: (u64, u64),
}

/// Counters attached to a generated batch. Empty decodes (all-PAD argmax)
/// are generation failures: reported here, excluded from `domains`, and
/// never counted as collisions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub requested: usize,
    pub empty_decodes: usize,
    pub repeats: usize,
}

/// Generated (or corpus) domains with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainBatch {
    pub domains: Vec<String>,
    pub provenance: Provenance,
    pub stats: BatchStats,
}

impl DomainBatch {
    /// Wraps existing labels (corpus or feed domains) as a batch.
    pub fn from_labels(domains: Vec<String>, source: &str, seed: u64) -> Self {
        let n = domains.len() as u64;
        let mut stats = BatchStats { requested: domains.len(), ..Default::default() };
        stats.repeats = repeats_in(&domains);
        Self {
            domains,
            provenance: Provenance {
                variant: source.to_string(),
                checkpoint: String::new(),
                seed,
                index_range: (0, n),
            },
            stats,
        }
    }
}

fn repeats_in(domains: &[String]) -> usize {
    let mut seen = HashSet::with_capacity(domains.len());
    domains.iter().filter(|d| !seen.insert(d.as_str())).count()
}

const GEN_CHUNK: usize = 512;

/// Draws `n` latents and decodes them through the generator with the
/// argmax rule. Deterministic per seed.
pub fn generate_domains(gen: &Generator<f32>, n: usize, seed: u64) -> Result<DomainBatch> {
    if n == 0 {
        return Err(Error::Param("generate_domains needs n >= 1".into()));
    }
    let vocab = Vocabulary::standard();
    let z = sample_latent::<f32>(n, gen.noise_dim, seed)?;

    let mut domains = Vec::with_capacity(n);
    let mut empty = 0usize;
    for chunk in z.axis_chunks_iter(Axis(0), GEN_CHUNK) {
        let (probs, _) = gen.forward(&chunk.to_owned());
        for rows in probs.axis_iter(Axis(0)) {
            let s = decode(rows, &vocab)?;
            debug_assert!(s.len() <= SEQ_LEN);
            if s.is_empty() {
                empty += 1;
            } else {
                domains.push(s);
            }
        }
    }

    let repeats = repeats_in(&domains);
    Ok(DomainBatch {
        domains,
        provenance: Provenance {
            variant: gen.kind.name().to_string(),
            checkpoint: format!("steps-{}", gen.steps_trained),
            seed,
            index_range: (0, n as u64),
        },
        stats: BatchStats { requested: n, empty_decodes: empty, repeats },
    })
}

/// Fraction of the batch that repeats an earlier entry:
/// `1 - |unique| / |domains|`.
pub fn repeated_collision_rate(batch: &DomainBatch) -> Result<f64> {
    if batch.domains.is_empty() {
        return Err(Error::Param("repeated_collision_rate needs a non-empty batch".into()));
    }
    let unique: HashSet<&str> = batch.domains.iter().map(|s| s.as_str()).collect();
    let n = batch.domains.len();
    Ok((n - unique.len()) as f64 / n as f64)
}
