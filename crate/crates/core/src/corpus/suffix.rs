//! Public-suffix stripping.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

const BUNDLED_RULES: &str = include_str!("suffix_rules.txt");

/// A set of public suffixes; the longest match wins.
///
/// The rule file format is one suffix per line with `//` comments. A
/// fallback mode exists for offline minimal builds and simply treats the
/// final dot-separated part as the suffix.
#[derive(Debug, Clone)]
pub struct SuffixRules {
    suffixes: HashSet<String>,
    version: String,
    fallback: bool,
}

impl SuffixRules {
    /// The bundled, versioned rule set.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_RULES, "bundled-v1")
    }

    /// Loads rules from a file in the one-suffix-per-line format.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rules = Self::parse(&text, &format!("file:{}", path.display()));
        if rules.suffixes.is_empty() {
            return Err(Error::Config(format!("no suffix rules in {}", path.display())));
        }
        Ok(rules)
    }

    /// Rule-free mode: split at the first dot from the right.
    pub fn fallback() -> Self {
        Self { suffixes: HashSet::new(), version: "fallback".into(), fallback: true }
    }

    fn parse(text: &str, version: &str) -> Self {
        let suffixes = text
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with("//"))
            .map(|l| l.to_ascii_lowercase())
            .collect();
        Self { suffixes, version: version.into(), fallback: false }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.suffixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suffixes.is_empty()
    }

    /// Returns the registrable label left of the longest matching suffix.
    ///
    /// A bare suffix (or a name with no label part) is a [`Error::NoLabel`].
    pub fn strip(&self, fqdn: &str) -> Result<String> {
        let name = fqdn.trim_matches('.');
        if name.is_empty() {
            return Err(Error::NoLabel(fqdn.to_string()));
        }

        if self.fallback {
            return match name.rsplit_once('.') {
                Some((left, _tld)) => {
                    let label = left.rsplit('.').next().unwrap_or(left);
                    if label.is_empty() {
                        Err(Error::NoLabel(fqdn.to_string()))
                    } else {
                        Ok(label.to_string())
                    }
                }
                None => Err(Error::NoLabel(fqdn.to_string())),
            };
        }

        // Longest matching suffix: try dropping labels from the left until
        // the remainder is a known suffix.
        let parts: Vec<&str> = name.split('.').collect();
        for start in 0..parts.len() {
            let candidate = parts[start..].join(".");
            if self.suffixes.contains(&candidate) {
                if start == 0 {
                    return Err(Error::NoLabel(fqdn.to_string()));
                }
                return Ok(parts[start - 1].to_string());
            }
        }

        // No rule matched: fall back to the final part as the suffix.
        if parts.len() >= 2 {
            Ok(parts[parts.len() - 2].to_string())
        } else {
            Err(Error::NoLabel(fqdn.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_simple_tld() {
        let rules = SuffixRules::bundled();
        assert_eq!(rules.strip("google.com").unwrap(), "google");
        assert_eq!(rules.strip("alrei.org").unwrap(), "alrei");
    }

    #[test]
    fn strips_multi_label_suffix() {
        let rules = SuffixRules::bundled();
        assert_eq!(rules.strip("amco.co.in").unwrap(), "amco");
        assert_eq!(rules.strip("bbc.co.uk").unwrap(), "bbc");
        // Subdomains reduce to the registrable label.
        assert_eq!(rules.strip("www.bbc.co.uk").unwrap(), "bbc");
    }

    #[test]
    fn bare_suffix_is_no_label() {
        let rules = SuffixRules::bundled();
        assert!(matches!(rules.strip("com"), Err(Error::NoLabel(_))));
        assert!(matches!(rules.strip("co.uk"), Err(Error::NoLabel(_))));
        assert!(matches!(rules.strip(""), Err(Error::NoLabel(_))));
    }

    #[test]
    fn unknown_tld_falls_back_to_last_part() {
        let rules = SuffixRules::bundled();
        assert_eq!(rules.strip("example.zz").unwrap(), "example");
        assert!(matches!(rules.strip("zz"), Err(Error::NoLabel(_))));
    }

    #[test]
    fn stripping_own_output_is_no_label() {
        // Idempotence in the spec sense: the stripped label has no dot, so a
        // second strip is a no-label error.
        let rules = SuffixRules::bundled();
        let label = rules.strip("google.com").unwrap();
        assert!(matches!(rules.strip(&label), Err(Error::NoLabel(_))));
    }

    #[test]
    fn fallback_mode_splits_at_last_dot() {
        let rules = SuffixRules::fallback();
        assert_eq!(rules.strip("google.com").unwrap(), "google");
        // Fallback cannot know about co.in; it yields the label left of the
        // last dot.
        assert_eq!(rules.strip("amco.co.in").unwrap(), "co");
        assert!(matches!(rules.strip("com"), Err(Error::NoLabel(_))));
    }
}
