//! Synthetic benign-style domain corpus for desk-scale experiments.
//!
//! Mixes dictionary words with the morphological patterns common in real
//! registrable names (compounds, affixes, digits, hyphens) so that desk
//! runs exercise the full pipeline without shipping a third-party ranked
//! list. Deterministic per seed.

use crate::classic::bundled_wordlist;
use crate::rng::SplitMix64;

const PARTICLES: &[&str] = &[
    "ly", "io", "hub", "lab", "labs", "zone", "ware", "base", "box", "kit", "spot", "mart",
    "plus", "ify", "gram", "deck", "desk", "flow", "nest", "port", "shift", "sync", "verse",
    "works", "wave", "point", "link", "line", "mind", "craft",
];

const PREFIXES: &[&str] =
    &["my", "go", "get", "the", "top", "neo", "pro", "eco", "uni", "meta", "ever", "all", "up"];

const TLDS: &[(&str, u64)] = &[
    ("com", 62),
    ("net", 9),
    ("org", 9),
    ("io", 5),
    ("co", 4),
    ("info", 3),
    ("biz", 2),
    ("us", 2),
    ("app", 2),
    ("dev", 2),
];

fn pick<'a>(rng: &mut SplitMix64, items: &'a [&'a str]) -> &'a str {
    items[rng.index(items.len())]
}

fn pick_tld(rng: &mut SplitMix64) -> &'static str {
    let total: u64 = TLDS.iter().map(|(_, w)| w).sum();
    let mut draw = rng.range_u64(0, total - 1);
    for (tld, w) in TLDS {
        if draw < *w {
            return tld;
        }
        draw -= w;
    }
    "com"
}

fn synth_label(rng: &mut SplitMix64, words: &[String]) -> String {
    let word = |rng: &mut SplitMix64| words[rng.index(words.len())].clone();
    match rng.index(100) {
        0..=19 => word(rng),
        20..=49 => format!("{}{}", word(rng), word(rng)),
        50..=54 => format!("{}-{}", word(rng), word(rng)),
        55..=69 => format!("{}{}", word(rng), pick(rng, PARTICLES)),
        70..=79 => format!("{}{}", pick(rng, PREFIXES), word(rng)),
        80..=89 => format!("{}{}", word(rng), rng.range_u64(1, 999)),
        // Clipped compounds: first syllables glued together.
        _ => {
            let a = word(rng);
            let b = word(rng);
            let a_cut = a.len().min(3 + rng.index(3));
            let b_cut = b.len().min(3 + rng.index(3));
            format!("{}{}", &a[..a_cut], &b[..b_cut])
        }
    }
}

/// `count` unique ranked FQDNs (rank 1 = first drawn).
pub fn synthetic_benign_fqdns(count: usize, seed: u64) -> Vec<(u64, String)> {
    let words = bundled_wordlist();
    let mut rng = SplitMix64::new(seed);
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let label = synth_label(&mut rng, &words);
        if label.len() > crate::corpus::SEQ_LEN {
            continue;
        }
        let fqdn = format!("{label}.{}", pick_tld(&mut rng));
        if seen.insert(label) {
            out.push((out.len() as u64 + 1, fqdn));
        }
    }
    out
}

/// Just the labels, for callers that skip suffix handling.
pub fn synthetic_benign_labels(count: usize, seed: u64) -> Vec<String> {
    synthetic_benign_fqdns(count, seed)
        .into_iter()
        .map(|(_, fqdn)| fqdn.split('.').next().expect("label part").to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    #[test]
    fn labels_are_unique_valid_and_deterministic() {
        let a = synthetic_benign_fqdns(2000, 7);
        let b = synthetic_benign_fqdns(2000, 7);
        assert_eq!(a, b);

        let vocab = Vocabulary::standard();
        let mut seen = std::collections::HashSet::new();
        for (rank, fqdn) in &a {
            assert!(*rank >= 1);
            let label = fqdn.split('.').next().unwrap();
            assert!(vocab.is_valid_label(label), "invalid label {label:?}");
            assert!(seen.insert(label.to_string()), "duplicate label {label:?}");
        }

        let lengths: Vec<usize> =
            a.iter().map(|(_, f)| f.split('.').next().unwrap().len()).collect();
        let mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        assert!((4.0..=16.0).contains(&mean), "mean label length {mean}");
    }
}
