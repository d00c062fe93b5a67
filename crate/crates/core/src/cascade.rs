//! Keyword prefilter and the three-level hierarchical text classifier.
//!
//! A post first passes a token-level keyword filter. Level 1 decides whether
//! it mentions drinking at all, level 2 whether the author is the one
//! drinking, level 3 whether the drinking is happening at posting time. Each
//! level is a linear SVM over n-grams with its own vocabulary, trained only
//! on posts that survived the previous level, so the labels form a chain:
//! `filtered_out / no_mention / drinking_mention / user_drinking /
//! user_drinking_now`, each deeper label implying all shallower positives.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TweetRecord;
use crate::error::{Error, Result};
use crate::svm::{self, LinearModel, Metrics, TrainConfig};
use crate::textprep::{self, extract_ngrams, normalize, vectorize, FeatureVector, Vocabulary, N_MAX};

/// Cascade output for one post. Deeper labels imply all shallower positives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityLabel {
    FilteredOut,
    NoMention,
    DrinkingMention,
    UserDrinking,
    UserDrinkingNow,
}

impl ActivityLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActivityLabel::FilteredOut => "filtered_out",
            ActivityLabel::NoMention => "no_mention",
            ActivityLabel::DrinkingMention => "drinking_mention",
            ActivityLabel::UserDrinking => "user_drinking",
            ActivityLabel::UserDrinkingNow => "user_drinking_now",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "filtered_out" => ActivityLabel::FilteredOut,
            "no_mention" => ActivityLabel::NoMention,
            "drinking_mention" => ActivityLabel::DrinkingMention,
            "user_drinking" => ActivityLabel::UserDrinking,
            "user_drinking_now" => ActivityLabel::UserDrinkingNow,
            _ => return None,
        })
    }
}

/// Cumulative counts down the cascade; each level includes the deeper ones,
/// so the sequence is monotone non-increasing by construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CascadeCounts {
    pub total: usize,
    pub filter_passers: usize,
    pub drinking_mention: usize,
    pub user_drinking: usize,
    pub user_drinking_now: usize,
}

impl CascadeCounts {
    pub fn tally(labels: impl IntoIterator<Item = ActivityLabel>) -> Self {
        let mut c = CascadeCounts::default();
        for l in labels {
            c.total += 1;
            if l >= ActivityLabel::NoMention {
                c.filter_passers += 1;
            }
            if l >= ActivityLabel::DrinkingMention {
                c.drinking_mention += 1;
            }
            if l >= ActivityLabel::UserDrinking {
                c.user_drinking += 1;
            }
            if l == ActivityLabel::UserDrinkingNow {
                c.user_drinking_now += 1;
            }
        }
        c
    }
}

/// Lowercase keyword list with simple suffix variants generated at load:
/// plural ("drink" to "drinks", "party" to "parties") and progressive
/// ("drink" to "drinking", "rave" to "raving"). Matching is exact-token
/// against normalized text.
#[derive(Clone, Debug)]
pub struct KeywordFilter {
    base: Vec<String>,
    expanded: HashSet<String>,
}

fn suffix_variants(word: &str) -> Vec<String> {
    let mut out = vec![word.to_string()];
    if let Some(stem) = word.strip_suffix('y') {
        out.push(format!("{stem}ies"));
    } else {
        out.push(format!("{word}s"));
    }
    if let Some(stem) = word.strip_suffix('e') {
        out.push(format!("{stem}ing"));
    } else {
        out.push(format!("{word}ing"));
    }
    out
}

impl KeywordFilter {
    pub fn new(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut base: Vec<String> = words
            .into_iter()
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        base.sort();
        base.dedup();
        if base.is_empty() {
            return Err(Error::Config {
                msg: "keyword list is empty".into(),
            });
        }
        let expanded = base.iter().flat_map(|w| suffix_variants(w)).collect();
        Ok(KeywordFilter { base, expanded })
    }

    /// Read a keyword file: one keyword per line, `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                words.push(line.to_string());
            }
        }
        KeywordFilter::new(words)
    }

    /// Write the base keywords (variants are regenerated at load).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in &self.base {
            out.push_str(w);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn base_words(&self) -> &[String] {
        &self.base
    }

    pub fn contains(&self, token: &str) -> bool {
        self.expanded.contains(token)
    }

    pub fn matches_tokens(&self, tokens: &[String]) -> bool {
        tokens.iter().any(|t| self.contains(t))
    }
}

/// True iff any normalized token of the post is in the filter.
pub fn keyword_match(t: &TweetRecord, f: &KeywordFilter) -> bool {
    f.matches_tokens(&normalize(&t.text))
}

/// Which positives feed levels 2 and 3: the previous SVM's predictions
/// (default) or the gold labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpstreamMode {
    Predicted,
    Gold,
}

#[derive(Clone, Debug)]
pub struct CascadeConfig {
    pub train: TrainConfig,
    pub lambda_grid: Vec<f64>,
    pub keep_ratio: f64,
    pub upstream: UpstreamMode,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            train: TrainConfig::default(),
            lambda_grid: svm::default_lambda_grid(),
            keep_ratio: textprep::DEFAULT_KEEP_RATIO,
            upstream: UpstreamMode::Predicted,
        }
    }
}

/// The three trained levels plus the filter they sit behind.
#[derive(Clone, Debug)]
pub struct CascadeModel {
    pub svm1: LinearModel,
    pub svm2: LinearModel,
    pub svm3: LinearModel,
    pub vocab1: Vocabulary,
    pub vocab2: Vocabulary,
    pub vocab3: Vocabulary,
    pub filter: KeywordFilter,
}

impl CascadeModel {
    /// Write the model directory: `svm{1,2,3}.model`, `vocab{1,2,3}.tsv`,
    /// `keywords.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.svm1.save(&dir.join("svm1.model"))?;
        self.svm2.save(&dir.join("svm2.model"))?;
        self.svm3.save(&dir.join("svm3.model"))?;
        self.vocab1.save(&dir.join("vocab1.tsv"))?;
        self.vocab2.save(&dir.join("vocab2.tsv"))?;
        self.vocab3.save(&dir.join("vocab3.tsv"))?;
        self.filter.save(&dir.join("keywords.txt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(CascadeModel {
            svm1: LinearModel::load(&dir.join("svm1.model"))?,
            svm2: LinearModel::load(&dir.join("svm2.model"))?,
            svm3: LinearModel::load(&dir.join("svm3.model"))?,
            vocab1: Vocabulary::load(&dir.join("vocab1.tsv"))?,
            vocab2: Vocabulary::load(&dir.join("vocab2.tsv"))?,
            vocab3: Vocabulary::load(&dir.join("vocab3.tsv"))?,
            filter: KeywordFilter::load(&dir.join("keywords.txt"))?,
        })
    }
}

/// Training summary for one cascade level.
#[derive(Clone, Debug)]
pub struct LevelReport {
    pub level: usize,
    pub train_size: usize,
    pub holdout_size: usize,
    pub vocab_size: usize,
    pub chosen_lambda: f64,
    pub holdout: Metrics,
}

/// A trained cascade with per-level held-out metrics.
#[derive(Clone, Debug)]
pub struct TrainedCascade {
    pub model: CascadeModel,
    pub reports: Vec<LevelReport>,
}

struct LevelOutcome {
    model: LinearModel,
    vocab: Vocabulary,
    report: LevelReport,
}

/// Train one level on its restricted pool with an 80/20 stratified split:
/// the vocabulary and the grid search live entirely in the 80%, the 20%
/// yields the held-out metrics.
fn train_level(
    level: usize,
    pool: &[(&Vec<String>, bool)],
    cfg: &CascadeConfig,
) -> Result<LevelOutcome> {
    let labels: Vec<bool> = pool.iter().map(|(_, y)| *y).collect();
    let n_pos = labels.iter().filter(|y| **y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels {
            context: format!("SVM-{level}"),
        });
    }

    // Fold 0 of a stratified 5-fold split is the 20% holdout.
    let assign = svm::stratified_folds(&labels, 5, cfg.train.seed ^ level as u64)?;
    let train_idx: Vec<usize> = (0..pool.len()).filter(|i| assign[*i] != 0).collect();
    let test_idx: Vec<usize> = (0..pool.len()).filter(|i| assign[*i] == 0).collect();

    let train_docs: Vec<Vec<String>> = train_idx
        .iter()
        .map(|&i| extract_ngrams(pool[i].0, N_MAX))
        .collect();
    let vocab = textprep::build_vocab(&train_docs, cfg.keep_ratio)?;

    let train_x: Vec<FeatureVector> = train_idx.iter().map(|&i| vectorize(pool[i].0, &vocab)).collect();
    let train_y: Vec<bool> = train_idx.iter().map(|&i| pool[i].1).collect();
    let cv = svm::cross_validate(&train_x, &train_y, &cfg.lambda_grid, &cfg.train)?;
    let model = svm::train(&train_x, &train_y, &cv.config)?;

    let test_x: Vec<FeatureVector> = test_idx.iter().map(|&i| vectorize(pool[i].0, &vocab)).collect();
    let test_y: Vec<bool> = test_idx.iter().map(|&i| pool[i].1).collect();
    let holdout = svm::evaluate(&model, &test_x, &test_y);

    Ok(LevelOutcome {
        report: LevelReport {
            level,
            train_size: train_idx.len(),
            holdout_size: test_idx.len(),
            vocab_size: vocab.len(),
            chosen_lambda: cv.config.reg_lambda,
            holdout,
        },
        model,
        vocab,
    })
}

/// Train the full cascade from gold-labeled posts. Level 1 uses every
/// keyword-passing post with a q1 answer; levels 2 and 3 use the previous
/// level's positives (predicted or gold per config) that carry the next
/// answer.
pub fn train_cascade(
    labeled: &[TweetRecord],
    filter: KeywordFilter,
    cfg: &CascadeConfig,
) -> Result<TrainedCascade> {
    let tokens: Vec<Vec<String>> = labeled.iter().map(|t| normalize(&t.text)).collect();
    let passes: Vec<bool> = tokens.iter().map(|t| filter.matches_tokens(t)).collect();

    let pool1: Vec<(usize, bool)> = labeled
        .iter()
        .enumerate()
        .filter(|(i, t)| passes[*i] && t.gold.and_then(|g| g.q1).is_some())
        .map(|(i, t)| (i, t.gold.unwrap().q1.unwrap()))
        .collect();
    let refs1: Vec<(&Vec<String>, bool)> = pool1.iter().map(|(i, y)| (&tokens[*i], *y)).collect();
    let l1 = train_level(1, &refs1, cfg)?;

    let upstream_pass1 = |i: usize, t: &TweetRecord| match cfg.upstream {
        UpstreamMode::Predicted => passes[i] && l1.model.classify(&vectorize(&tokens[i], &l1.vocab)),
        UpstreamMode::Gold => passes[i] && t.gold.and_then(|g| g.q1) == Some(true),
    };
    let pool2: Vec<(usize, bool)> = labeled
        .iter()
        .enumerate()
        .filter(|(i, t)| upstream_pass1(*i, t) && t.gold.and_then(|g| g.q2).is_some())
        .map(|(i, t)| (i, t.gold.unwrap().q2.unwrap()))
        .collect();
    let refs2: Vec<(&Vec<String>, bool)> = pool2.iter().map(|(i, y)| (&tokens[*i], *y)).collect();
    let l2 = train_level(2, &refs2, cfg)?;

    let upstream_pass2 = |i: usize, t: &TweetRecord| match cfg.upstream {
        UpstreamMode::Predicted => {
            upstream_pass1(i, t) && l2.model.classify(&vectorize(&tokens[i], &l2.vocab))
        }
        UpstreamMode::Gold => passes[i] && t.gold.and_then(|g| g.q2) == Some(true),
    };
    let pool3: Vec<(usize, bool)> = labeled
        .iter()
        .enumerate()
        .filter(|(i, t)| upstream_pass2(*i, t) && t.gold.and_then(|g| g.q3).is_some())
        .map(|(i, t)| (i, t.gold.unwrap().q3.unwrap()))
        .collect();
    let refs3: Vec<(&Vec<String>, bool)> = pool3.iter().map(|(i, y)| (&tokens[*i], *y)).collect();
    let l3 = train_level(3, &refs3, cfg)?;

    Ok(TrainedCascade {
        model: CascadeModel {
            svm1: l1.model,
            svm2: l2.model,
            svm3: l3.model,
            vocab1: l1.vocab,
            vocab2: l2.vocab,
            vocab3: l3.vocab,
            filter,
        },
        reports: vec![l1.report, l2.report, l3.report],
    })
}

/// Run one post down the cascade.
pub fn classify_tweet(t: &TweetRecord, m: &CascadeModel) -> ActivityLabel {
    classify_tokens(&normalize(&t.text), m)
}

/// Same as [`classify_tweet`] for already-normalized tokens.
pub fn classify_tokens(tokens: &[String], m: &CascadeModel) -> ActivityLabel {
    if !m.filter.matches_tokens(tokens) {
        return ActivityLabel::FilteredOut;
    }
    if !m.svm1.classify(&vectorize(tokens, &m.vocab1)) {
        return ActivityLabel::NoMention;
    }
    if !m.svm2.classify(&vectorize(tokens, &m.vocab2)) {
        return ActivityLabel::DrinkingMention;
    }
    if !m.svm3.classify(&vectorize(tokens, &m.vocab3)) {
        return ActivityLabel::UserDrinking;
    }
    ActivityLabel::UserDrinkingNow
}
