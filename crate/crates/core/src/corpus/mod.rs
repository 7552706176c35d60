//! Benign-domain corpus handling: ranked-list ingestion, public-suffix
//! stripping, the fixed 39-token alphabet, and the fixed-length-60 codec
//! that every model in this crate consumes.

mod suffix;

pub use suffix::SuffixRules;

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{shuffle, SplitMix64};

/// Fixed encoded length of a domain label, in tokens.
pub const SEQ_LEN: usize = 60;
/// Alphabet size: 26 letters, 10 digits, hyphen, dot, PAD.
pub const VOCAB_SIZE: usize = 39;
/// Index of the PAD token.
pub const PAD_INDEX: u8 = 38;

/// One row of a ranked benign-domain list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedDomain {
    pub rank: u64,
    pub fqdn: String,
}

/// The fixed 39-symbol token alphabet.
///
/// Indices 0-25 are 'a'..'z', 26-35 are '0'..'9', 36 is '-', 37 is '.',
/// and 38 is PAD. The mapping is a bijection; PAD has no character form.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    index_of: HashMap<char, u8>,
    char_of: [Option<char>; VOCAB_SIZE],
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut chars: Vec<char> = Vec::with_capacity(VOCAB_SIZE - 1);
        chars.extend('a'..='z');
        chars.extend('0'..='9');
        chars.push('-');
        chars.push('.');
        debug_assert_eq!(chars.len(), VOCAB_SIZE - 1);

        let mut index_of = HashMap::with_capacity(chars.len());
        let mut char_of = [None; VOCAB_SIZE];
        for (i, c) in chars.iter().enumerate() {
            index_of.insert(*c, i as u8);
            char_of[i] = Some(*c);
        }
        Self { index_of, char_of }
    }

    pub fn index_of(&self, c: char) -> Option<u8> {
        self.index_of.get(&c).copied()
    }

    /// Character for a token index; `None` for PAD or out-of-range ids.
    pub fn char_at(&self, index: u8) -> Option<char> {
        self.char_of.get(index as usize).copied().flatten()
    }

    pub fn is_valid_label(&self, label: &str) -> bool {
        !label.is_empty() && label.chars().all(|c| self.index_of.contains_key(&c))
    }
}

/// A domain label encoded to exactly [`SEQ_LEN`] token ids, left-aligned
/// content followed by PAD fill.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: [u8; SEQ_LEN],
}

impl std::fmt::Debug for TokenSeq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TokenSeq({:?})", &self.ids[..])
    }
}

impl TokenSeq {
    /// Builds a sequence from raw ids, checking the range and the
    /// PAD-suffix invariant (once PAD appears, everything after is PAD).
    pub fn from_ids(ids: [u8; SEQ_LEN]) -> Result<Self> {
        let mut seen_pad = false;
        for &id in &ids {
            if id as usize >= VOCAB_SIZE {
                return Err(Error::Param(format!("token id {id} out of range")));
            }
            if seen_pad && id != PAD_INDEX {
                return Err(Error::Param(
                    "non-PAD token after PAD violates the pad-suffix invariant".into(),
                ));
            }
            seen_pad |= id == PAD_INDEX;
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u8; SEQ_LEN] {
        &self.ids
    }

    /// Number of non-PAD tokens.
    pub fn len(&self) -> usize {
        self.ids.iter().position(|&id| id == PAD_INDEX).unwrap_or(SEQ_LEN)
    }

    pub fn is_empty(&self) -> bool {
        self.ids[0] == PAD_INDEX
    }

    /// One-hot rows, shape (SEQ_LEN, VOCAB_SIZE).
    pub fn one_hot(&self) -> Array2<f32> {
        let mut out = Array2::zeros((SEQ_LEN, VOCAB_SIZE));
        for (pos, &id) in self.ids.iter().enumerate() {
            out[[pos, id as usize]] = 1.0;
        }
        out
    }
}

/// Packs a batch of sequences into a one-hot tensor (batch, SEQ_LEN, VOCAB_SIZE).
pub fn one_hot_batch(seqs: &[TokenSeq]) -> Array3<f32> {
    let mut out = Array3::zeros((seqs.len(), SEQ_LEN, VOCAB_SIZE));
    for (b, seq) in seqs.iter().enumerate() {
        for (pos, &id) in seq.ids.iter().enumerate() {
            out[[b, pos, id as usize]] = 1.0;
        }
    }
    out
}

/// A deterministic shuffled train/test partition.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<TokenSeq>,
    pub test: Vec<TokenSeq>,
    pub seed: u64,
    pub ratio: f64,
}

/// Reads a ranked CSV ("rank,domain" or bare "domain" lines).
///
/// Domains are lowercased; duplicate domains keep their best (lowest) rank;
/// record order follows the file. Lines that parse to an empty domain are
/// skipped.
pub fn load_ranked_csv(path: &Path) -> Result<Vec<RankedDomain>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out: Vec<RankedDomain> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches('\r').trim();
        if trimmed.is_empty() {
            continue;
        }
        let (rank, domain) = match trimmed.split_once(',') {
            Some((rank_field, domain_field)) => match rank_field.trim().parse::<u64>() {
                Ok(rank) if rank > 0 => (rank, domain_field.trim()),
                // Not a rank field: treat the whole line as a domain.
                _ => ((line_no + 1) as u64, trimmed),
            },
            None => ((line_no + 1) as u64, trimmed),
        };
        if domain.is_empty() {
            continue;
        }
        let fqdn = domain.to_ascii_lowercase();
        match seen.get(&fqdn) {
            Some(&idx) => {
                if rank < out[idx].rank {
                    out[idx].rank = rank;
                }
            }
            None => {
                seen.insert(fqdn.clone(), out.len());
                out.push(RankedDomain { rank, fqdn });
            }
        }
    }

    if out.is_empty() {
        return Err(Error::EmptyCorpus(format!("no valid rows in {}", path.display())));
    }
    Ok(out)
}

/// Strips the longest matching public suffix and returns the registrable
/// label immediately left of it.
pub fn strip_suffix(fqdn: &str, rules: &SuffixRules) -> Result<String> {
    rules.strip(fqdn)
}

/// Encodes a label into a fixed-length token sequence.
pub fn encode(label: &str, vocab: &Vocabulary) -> Result<TokenSeq> {
    if label.is_empty() {
        return Err(Error::Param("cannot encode an empty label".into()));
    }
    let n = label.chars().count();
    if n > SEQ_LEN {
        return Err(Error::TooLong { label: label.to_string(), len: n, max: SEQ_LEN });
    }
    let mut ids = [PAD_INDEX; SEQ_LEN];
    for (i, c) in label.chars().enumerate() {
        ids[i] = vocab
            .index_of(c)
            .ok_or_else(|| Error::OutOfVocab { input: label.to_string(), symbol: c })?;
    }
    Ok(TokenSeq { ids })
}

/// Decodes a row-stochastic (SEQ_LEN, VOCAB_SIZE) matrix by per-row argmax.
///
/// Ties break to the lowest index; the first PAD argmax terminates the
/// string, so the result may be empty.
pub fn decode<F: ndarray::NdFloat>(probs: ArrayView2<F>, vocab: &Vocabulary) -> Result<String> {
    if probs.shape() != [SEQ_LEN, VOCAB_SIZE] {
        return Err(Error::Shape(format!(
            "expected ({SEQ_LEN}, {VOCAB_SIZE}) probabilities, got {:?}",
            probs.shape()
        )));
    }
    let mut out = String::new();
    for row in probs.rows() {
        let mut best = 0usize;
        let mut best_val = row[0];
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        if best as u8 == PAD_INDEX {
            break;
        }
        match vocab.char_at(best as u8) {
            Some(c) => out.push(c),
            None => return Err(Error::Shape(format!("argmax index {best} out of range"))),
        }
    }
    Ok(out)
}

/// Shuffles and partitions sequences into train/test by `ratio`.
///
/// Deterministic for a fixed seed. Both sides are kept non-empty by
/// clamping, which matters only for very small inputs.
pub fn split(seqs: &[TokenSeq], ratio: f64, seed: u64) -> Result<SplitDataset> {
    if seqs.len() < 2 {
        return Err(Error::Param(format!("need at least 2 sequences to split, got {}", seqs.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Param(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = SplitMix64::new(seed);
    shuffle(&mut order, &mut rng);

    let n = seqs.len();
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let train = order[..n_train].iter().map(|&i| seqs[i]).collect();
    let test = order[n_train..].iter().map(|&i| seqs[i]).collect();
    Ok(SplitDataset { train, test, seed, ratio })
}

/// Counters accumulated while turning ranked records into a label corpus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub kept: usize,
    pub no_label: usize,
    pub out_of_vocab: usize,
    pub too_long: usize,
    pub duplicate_labels: usize,
}

/// Strips, validates, and dedups ranked records into the canonical label
/// corpus. Rejected records are counted, never silently dropped.
pub fn build_corpus(
    records: &[RankedDomain],
    rules: &SuffixRules,
    vocab: &Vocabulary,
) -> (Vec<String>, IngestStats) {
    let mut stats = IngestStats { records: records.len(), ..Default::default() };
    let mut labels: Vec<String> = Vec::new();
    let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();

    for record in records {
        let label = match rules.strip(&record.fqdn) {
            Ok(label) => label,
            Err(Error::NoLabel(_)) => {
                stats.no_label += 1;
                continue;
            }
            Err(_) => {
                stats.out_of_vocab += 1;
                continue;
            }
        };
        if !vocab.is_valid_label(&label) {
            stats.out_of_vocab += 1;
            continue;
        }
        if label.chars().count() > SEQ_LEN {
            stats.too_long += 1;
            continue;
        }
        if !seen.insert(label.clone()) {
            stats.duplicate_labels += 1;
            continue;
        }
        labels.push(label);
    }
    stats.kept = labels.len();
    (labels, stats)
}

/// Writes labels in the canonical corpus format: one lowercase label per
/// line, LF-terminated.
pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut body = String::with_capacity(labels.len() * 12);
    for label in labels {
        body.push_str(label);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Reads a canonical corpus file.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> =
        text.lines().map(|l| l.trim_end_matches('\r').to_string()).filter(|l| !l.is_empty()).collect();
    if labels.is_empty() {
        return Err(Error::EmptyCorpus(format!("no labels in {}", path.display())));
    }
    Ok(labels)
}

/// Encodes a label list, dropping and counting over-length labels.
pub fn encode_all(labels: &[String], vocab: &Vocabulary) -> Result<(Vec<TokenSeq>, usize)> {
    let mut seqs = Vec::with_capacity(labels.len());
    let mut dropped = 0usize;
    for label in labels {
        match encode(label, vocab) {
            Ok(seq) => seqs.push(seq),
            Err(Error::TooLong { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((seqs, dropped))
}
