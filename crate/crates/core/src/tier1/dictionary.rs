use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tier1Error;

const DEFAULT_DICTIONARY: &str = include_str!("../../data/dictionary.txt");

/// Hand-tuned word lists grouped by category. Stored as data so the lists
/// can be edited without touching code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    pub categories: BTreeMap<String, Vec<String>>,
}

impl Default for FeatureDictionary {
    fn default() -> Self {
        Self::parse(DEFAULT_DICTIONARY).expect("bundled dictionary parses")
    }
}

impl FeatureDictionary {
    /// Parses `category: w1,w2,...` lines; blank lines and `#` comments are
    /// ignored. Words are lowercased and must be single tokens.
    pub fn parse(text: &str) -> Result<Self, Tier1Error> {
        let mut categories = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (cat, words) = line
                .split_once(':')
                .ok_or_else(|| Tier1Error::Dictionary(format!("line {}: expected `category: words`", n + 1)))?;
            let cat = cat.trim().to_lowercase();
            let mut list: Vec<String> = Vec::new();
            for w in words.split(',').map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()) {
                if super::features::tokenize(&w) != [w.clone()] {
                    return Err(Tier1Error::Dictionary(format!("line {}: `{w}` is not a single token", n + 1)));
                }
                if !list.contains(&w) {
                    list.push(w);
                }
            }
            if cat.is_empty() || list.is_empty() {
                return Err(Tier1Error::Dictionary(format!("line {}: empty category or word list", n + 1)));
            }
            categories.insert(cat, list);
        }
        if categories.is_empty() {
            return Err(Tier1Error::Dictionary("no categories".into()));
        }
        Ok(Self { categories })
    }

    pub fn load(path: &Path) -> Result<Self, Tier1Error> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// `(category, word)` pairs in feature order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.categories.iter().flat_map(|(c, ws)| ws.iter().map(move |w| (c.as_str(), w.as_str())))
    }

    pub fn len(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_dictionary_has_the_four_categories() {
        let d = FeatureDictionary::default();
        assert_eq!(d.categories.keys().collect::<Vec<_>>(), ["days", "logical", "ordinal", "quantifiers"]);
        assert_eq!(d.len(), 7 + 4 + 4 + 6);
        assert!(d.entries().all(|(_, w)| w == w.to_lowercase()));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(FeatureDictionary::parse("days monday").is_err());
        assert!(FeatureDictionary::parse("days: two words").is_err());
        let d = FeatureDictionary::parse("X: Foo, foo ,bar").unwrap();
        assert_eq!(d.categories["x"], ["foo", "bar"]);
    }
}
