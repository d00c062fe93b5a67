//! Text normalization, n-gram extraction, and vocabulary construction.
//!
//! Normalization lowercases a post and rewrites it chunk by chunk (chunks are
//! whitespace-separated): emoticons from a fixed ASCII lexicon become
//! `#emopos`/`#emoneg`, URLs become `#url`, @-mentions become `#mention`,
//! hashtags are kept whole (including interior punctuation). Everything else
//! has elongated runs of three or more identical characters compressed to two
//! ("druuuuuuunk" to "druunk") and is then split into maximal alphanumeric
//! runs; punctuation is dropped. The pipeline is idempotent: normalizing a
//! normalized token stream changes nothing.
//!
//! Features are word n-grams with n in {1, 2, 3}, joined by single spaces.
//! A vocabulary keeps the most document-frequent n-grams, ties broken
//! lexicographically, with size proportional to the training document count.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Largest n-gram order extracted.
pub const N_MAX: usize = 3;
/// Default fraction of the training document count kept as vocabulary size.
pub const DEFAULT_KEEP_RATIO: f64 = 0.25;

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

/// Emoticon lexicon, written in post-lowercasing form, with polarity.
const EMOTICONS: [(&str, bool); 44] = [
    (":)", true),
    (":-)", true),
    (":))", true),
    ("(:", true),
    ("(-:", true),
    (":d", true),
    (":-d", true),
    ("=)", true),
    ("=d", true),
    (";)", true),
    (";-)", true),
    (":]", true),
    (":-]", true),
    ("=]", true),
    (":}", true),
    (":p", true),
    (":-p", true),
    (";p", true),
    ("^_^", true),
    ("^-^", true),
    ("<3", true),
    (":*", true),
    (":3", true),
    ("xd", true),
    (":(", false),
    (":-(", false),
    (":((", false),
    ("):", false),
    (")-:", false),
    ("=(", false),
    (";(", false),
    (":[", false),
    (":-[", false),
    ("=[", false),
    (":{", false),
    (":/", false),
    (":-/", false),
    (":\\", false),
    ("=/", false),
    (":|", false),
    ("d:", false),
    (":'(", false),
    ("</3", false),
    (">:(", false),
];

fn emoticon_polarity(chunk: &str) -> Option<bool> {
    EMOTICONS
        .iter()
        .find(|(e, _)| *e == chunk)
        .map(|(_, pos)| *pos)
}

/// Compress every run of three or more identical characters to exactly two.
fn compress_elongation(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev: Option<char> = None;
    let mut run = 0usize;
    for c in s.chars() {
        if prev == Some(c) {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 {
            out.push(c);
        }
    }
    out
}

/// Normalize a raw post into its token sequence.
pub fn normalize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lowered.split_whitespace() {
        if let Some(pos) = emoticon_polarity(chunk) {
            tokens.push(if pos { "#emopos" } else { "#emoneg" }.to_string());
            continue;
        }
        if URL_PREFIXES.iter().any(|p| chunk.starts_with(p)) {
            tokens.push("#url".to_string());
            continue;
        }
        if chunk.starts_with('@') && chunk.len() > 1 {
            tokens.push("#mention".to_string());
            continue;
        }
        if chunk.starts_with('#') && chunk.len() > 1 {
            tokens.push(compress_elongation(chunk));
            continue;
        }
        let squeezed = compress_elongation(chunk);
        if let Some(pos) = emoticon_polarity(&squeezed) {
            tokens.push(if pos { "#emopos" } else { "#emoneg" }.to_string());
            continue;
        }
        // Re-check split words so alphanumeric emoticons ("xd") still tag
        // when punctuation clings to them; keeps normalization idempotent.
        for word in squeezed.split(|c: char| !c.is_alphanumeric()) {
            if word.is_empty() {
                continue;
            }
            tokens.push(match emoticon_polarity(word) {
                Some(true) => "#emopos".to_string(),
                Some(false) => "#emoneg".to_string(),
                None => word.to_string(),
            });
        }
    }
    tokens
}

/// All contiguous n-grams for n in 1..=n_max, joined by single spaces, in
/// order of increasing n. A k-token sequence yields 3k-3 n-grams for k >= 3
/// at the default order.
pub fn extract_ngrams(tokens: &[String], n_max: usize) -> Vec<String> {
    let mut grams = Vec::new();
    for n in 1..=n_max.min(tokens.len().max(1)) {
        if n > tokens.len() {
            break;
        }
        for w in tokens.windows(n) {
            grams.push(w.join(" "));
        }
    }
    grams
}

/// Sparse feature vector: strictly increasing feature indices with values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureVector {
    pairs: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Build from arbitrary (index, value) pairs; indices are sorted and must
    /// be unique.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|(i, _)| *i);
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0), "duplicate feature index");
        FeatureVector { pairs }
    }

    /// Binary vector with value 1 at each given index.
    pub fn from_indices(indices: impl IntoIterator<Item = u32>) -> Self {
        let set: std::collections::BTreeSet<u32> = indices.into_iter().collect();
        FeatureVector {
            pairs: set.into_iter().map(|i| (i, 1.0)).collect(),
        }
    }

    /// Dense slice to sparse vector; zeros are dropped.
    pub fn from_dense(values: &[f64]) -> Self {
        FeatureVector {
            pairs: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn nnz(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.pairs.last().map(|(i, _)| *i)
    }

    pub fn get(&self, index: u32) -> f64 {
        self.pairs
            .binary_search_by_key(&index, |(i, _)| *i)
            .map(|p| self.pairs[p].1)
            .unwrap_or(0.0)
    }

    /// Dot product against a dense weight slice; indices beyond its length
    /// contribute nothing.
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.pairs
            .iter()
            .filter(|(i, _)| (*i as usize) < weights.len())
            .map(|(i, v)| v * weights[*i as usize])
            .sum()
    }
}

/// N-gram vocabulary with dense indices `0..len`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<String>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i as u32))
            .collect();
        Vocabulary { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn index_of(&self, ngram: &str) -> Option<u32> {
        self.index.get(ngram).copied()
    }

    /// Write as a two-column text file, `index TAB n-gram`, sorted by index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, g) in self.entries.iter().enumerate() {
            out.push_str(&format!("{i}\t{g}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::InvalidModel {
                path: path.to_path_buf(),
                msg: format!("line {}: {msg}", lineno + 1),
            };
            let (ix, gram) = line.split_once('\t').ok_or_else(|| bad("expected index TAB n-gram"))?;
            let ix: usize = ix.parse().map_err(|_| bad("bad index"))?;
            if ix != entries.len() {
                return Err(bad(&format!("expected index {}, got {ix}", entries.len())));
            }
            entries.push(gram.to_string());
        }
        Ok(Vocabulary::from_entries(entries))
    }
}

/// Keep the `ceil(keep_ratio * docs.len())` n-grams with the highest document
/// frequency, ties broken by lexicographic order. Indices follow that ranking.
pub fn build_vocab(docs: &[Vec<String>], keep_ratio: f64) -> Result<Vocabulary> {
    if !keep_ratio.is_finite() || keep_ratio <= 0.0 {
        return Err(Error::Config {
            msg: format!("keep_ratio {keep_ratio} must be positive"),
        });
    }
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let distinct: HashSet<&str> = doc.iter().map(|g| g.as_str()).collect();
        for g in distinct {
            *doc_freq.entry(g).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = doc_freq.into_iter().collect();
    ranked.sort_by(|(ga, fa), (gb, fb)| fb.cmp(fa).then(ga.cmp(gb)));
    let keep = ((keep_ratio * docs.len() as f64).ceil() as usize).min(ranked.len());
    Ok(Vocabulary::from_entries(
        ranked[..keep].iter().map(|(g, _)| g.to_string()).collect(),
    ))
}

/// Binary presence vector of vocabulary n-grams in a token sequence.
pub fn vectorize(tokens: &[String], vocab: &Vocabulary) -> FeatureVector {
    let grams = extract_ngrams(tokens, N_MAX);
    FeatureVector::from_indices(grams.iter().filter_map(|g| vocab.index_of(g)))
}
