//! Linear SVM trained by Pegasos-style stochastic subgradient descent.
//!
//! The objective is `lambda/2 * ||w||^2` plus the mean hinge loss. The
//! intercept is learned as an always-on unit feature, so it shares the
//! regularizer and the same step rule. The returned model averages the
//! iterates over all steps, which makes training stable across the whole
//! regularization grid. Class imbalance is handled by weighting each
//! example's loss inversely to its class frequency (both classes then
//! contribute half the total weight).
//!
//! Training is deterministic: example order is driven by a ChaCha stream
//! cipher seeded from the config.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::textprep::FeatureVector;

/// Training settings shared by every classifier in the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Regularization strength.
    pub reg_lambda: f64,
    /// Passes over the training set; each pass draws `n` random examples.
    pub epochs: usize,
    /// RNG seed for example sampling and fold assignment.
    pub seed: u64,
    /// Fold count for cross-validation.
    pub folds: usize,
    /// Weigh each class inversely to its frequency.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reg_lambda: 1e-4,
            epochs: 30,
            seed: 0,
            folds: 5,
            class_weighting: true,
        }
    }
}

/// Seven log-spaced regularization strengths, 1e-5 through 1e1.
pub fn default_lambda_grid() -> Vec<f64> {
    (-5..=1).map(|e| 10f64.powi(e)).collect()
}

/// Trained linear classifier. `decision` is `w . x + bias`; `classify` is
/// positive when the decision reaches `threshold` (ties count as positive).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Raw score of a feature vector. Indices beyond the trained dimension
    /// contribute nothing, so vectors from any source are accepted.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn classify(&self, x: &FeatureVector) -> bool {
        self.decision(x) >= self.threshold
    }

    /// Write the text model format: `bias`, `threshold`, and `dim` header
    /// lines, then one `index TAB weight` line per nonzero weight.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("bias\t{}\n", self.bias));
        out.push_str(&format!("threshold\t{}\n", self.threshold));
        out.push_str(&format!("dim\t{}\n", self.dim()));
        for (i, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                out.push_str(&format!("{i}\t{w}\n"));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::InvalidModel {
            path: path.to_path_buf(),
            msg,
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bias = None;
        let mut threshold = None;
        let mut dim = None;
        let mut weights: Vec<f64> = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("line {}: expected two tab-separated fields", lineno + 1)))?;
            match key {
                "bias" => bias = Some(value.parse().map_err(|_| bad(format!("bad bias {value:?}")))?),
                "threshold" => {
                    threshold = Some(value.parse().map_err(|_| bad(format!("bad threshold {value:?}")))?)
                }
                "dim" => {
                    let d: usize = value.parse().map_err(|_| bad(format!("bad dim {value:?}")))?;
                    weights = vec![0.0; d];
                    dim = Some(d);
                }
                idx => {
                    let d = dim.ok_or_else(|| bad("weight line before dim header".into()))?;
                    let i: usize = idx.parse().map_err(|_| bad(format!("bad weight index {idx:?}")))?;
                    if i >= d {
                        return Err(bad(format!("weight index {i} outside dim {d}")));
                    }
                    weights[i] = value.parse().map_err(|_| bad(format!("bad weight {value:?}")))?;
                }
            }
        }
        Ok(LinearModel {
            weights,
            bias: bias.ok_or_else(|| bad("missing bias header".into()))?,
            threshold: threshold.ok_or_else(|| bad("missing threshold header".into()))?,
        })
    }
}

fn class_weights(n_pos: usize, n_neg: usize, enabled: bool) -> (f64, f64) {
    if !enabled {
        return (1.0, 1.0);
    }
    let n = (n_pos + n_neg) as f64;
    (n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64))
}

/// Train on sparse vectors with boolean labels (true = positive class).
pub fn train(xs: &[FeatureVector], ys: &[bool], cfg: &TrainConfig) -> Result<LinearModel> {
    assert_eq!(xs.len(), ys.len(), "feature/label length mismatch");
    let n = xs.len();
    let n_pos = ys.iter().filter(|y| **y).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels {
            context: format!("{n} examples, {n_pos} positive"),
        });
    }
    if cfg.reg_lambda <= 0.0 || !cfg.reg_lambda.is_finite() {
        return Err(Error::Config {
            msg: format!("reg_lambda {} must be positive", cfg.reg_lambda),
        });
    }
    let (c_pos, c_neg) = class_weights(n_pos, n_neg, cfg.class_weighting);
    let dim = xs.iter().filter_map(|x| x.max_index()).max().map_or(0, |m| m as usize + 1);

    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut w_sum = vec![0.0f64; dim];
    let mut b_sum = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = 0u64;

    for _ in 0..cfg.epochs.max(1) {
        for _ in 0..n {
            t += 1;
            let i = rng.random_range(0..n);
            let eta = 1.0 / (cfg.reg_lambda * t as f64);
            let y = if ys[i] { 1.0 } else { -1.0 };
            let c = if ys[i] { c_pos } else { c_neg };
            let margin = y * (xs[i].dot(&w) + b);
            let scale = 1.0 - 1.0 / t as f64;
            for v in w.iter_mut() {
                *v *= scale;
            }
            b *= scale;
            if margin < 1.0 {
                let step = eta * c * y;
                for (ix, val) in xs[i].iter() {
                    w[ix as usize] += step * val;
                }
                b += step;
            }
            for (acc, v) in w_sum.iter_mut().zip(&w) {
                *acc += v;
            }
            b_sum += b;
        }
    }

    let steps = t as f64;
    Ok(LinearModel {
        weights: w_sum.into_iter().map(|v| v / steps).collect(),
        bias: b_sum / steps,
        threshold: 0.0,
    })
}

/// Regularized objective the trainer minimizes, for a given model.
pub fn hinge_objective(m: &LinearModel, xs: &[FeatureVector], ys: &[bool], cfg: &TrainConfig) -> f64 {
    let n_pos = ys.iter().filter(|y| **y).count();
    let (c_pos, c_neg) = class_weights(n_pos, ys.len() - n_pos, cfg.class_weighting);
    let norm2: f64 = m.weights.iter().map(|w| w * w).sum::<f64>() + m.bias * m.bias;
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let yv = if *y { 1.0 } else { -1.0 };
            let c = if *y { c_pos } else { c_neg };
            c * (1.0 - yv * m.decision(x)).max(0.0)
        })
        .sum();
    0.5 * cfg.reg_lambda * norm2 + loss / xs.len() as f64
}

/// Confusion counts and the derived precision/recall/F of the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl Metrics {
    pub fn from_counts(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        let ratio = |num: u64, den: u64| if den > 0 { num as f64 / den as f64 } else { 0.0 };
        let precision = ratio(true_pos, true_pos + false_pos);
        let recall = ratio(true_pos, true_pos + false_neg);
        Metrics {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
            precision,
            recall,
            f_score: f_score(precision, recall),
        }
    }
}

/// Confusion metrics of a model over a labeled set.
pub fn evaluate(m: &LinearModel, xs: &[FeatureVector], ys: &[bool]) -> Metrics {
    let mut counts = [0u64; 4];
    for (x, y) in xs.iter().zip(ys) {
        let pred = m.classify(x);
        let slot = match (pred, *y) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        counts[slot] += 1;
    }
    Metrics::from_counts(counts[0], counts[1], counts[2], counts[3])
}

/// Assign each example to one of `folds` folds, stratified by class and
/// shuffled by the seed. Every fold receives both classes.
pub fn stratified_folds(ys: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config {
            msg: format!("fold count {folds} must be at least 2"),
        });
    }
    let n_pos = ys.iter().filter(|y| **y).count();
    let n_neg = ys.len() - n_pos;
    if n_pos < folds || n_neg < folds {
        return Err(Error::DegenerateFolds {
            folds,
            pos: n_pos,
            neg: n_neg,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0usize; ys.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..ys.len()).filter(|i| ys[*i] == class).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        for (pos, i) in idx.into_iter().enumerate() {
            assign[i] = pos % folds;
        }
    }
    Ok(assign)
}

/// Outcome of a grid search: the winning config, metrics pooled over the
/// winning folds, and the mean fold F-score per grid point.
#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub config: TrainConfig,
    pub metrics: Metrics,
    pub grid_scores: Vec<(f64, f64)>,
}

/// Stratified k-fold search over a regularization grid. The grid point with
/// the highest mean fold F-score wins; ties go to the smaller lambda.
pub fn cross_validate(
    xs: &[FeatureVector],
    ys: &[bool],
    lambdas: &[f64],
    base: &TrainConfig,
) -> Result<CvOutcome> {
    if lambdas.is_empty() {
        return Err(Error::Config {
            msg: "empty regularization grid".into(),
        });
    }
    let assign = stratified_folds(ys, base.folds, base.seed)?;
    let mut grid: Vec<f64> = lambdas.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let mut grid_scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, Metrics)> = None;
    for &lambda in &grid {
        let cfg = TrainConfig {
            reg_lambda: lambda,
            ..base.clone()
        };
        let mut fold_f = Vec::with_capacity(base.folds);
        let mut pooled = [0u64; 4];
        for fold in 0..base.folds {
            let mut train_x = Vec::new();
            let mut train_y = Vec::new();
            let mut test_x = Vec::new();
            let mut test_y = Vec::new();
            for i in 0..xs.len() {
                if assign[i] == fold {
                    test_x.push(xs[i].clone());
                    test_y.push(ys[i]);
                } else {
                    train_x.push(xs[i].clone());
                    train_y.push(ys[i]);
                }
            }
            let model = train(&train_x, &train_y, &cfg)?;
            let m = evaluate(&model, &test_x, &test_y);
            fold_f.push(m.f_score);
            pooled[0] += m.true_pos;
            pooled[1] += m.false_pos;
            pooled[2] += m.true_neg;
            pooled[3] += m.false_neg;
        }
        let mean_f = fold_f.iter().sum::<f64>() / fold_f.len() as f64;
        grid_scores.push((lambda, mean_f));
        let metrics = Metrics::from_counts(pooled[0], pooled[1], pooled[2], pooled[3]);
        let better = match &best {
            None => true,
            Some((_, best_f, _)) => mean_f > *best_f,
        };
        if better {
            best = Some((lambda, mean_f, metrics));
        }
    }

    let (lambda, _, metrics) = best.expect("non-empty grid");
    Ok(CvOutcome {
        config: TrainConfig {
            reg_lambda: lambda,
            ..base.clone()
        },
        metrics,
        grid_scores,
    })
}
