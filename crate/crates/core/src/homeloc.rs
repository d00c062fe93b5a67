//! Home-location inference: a linear model over mobility features scores
//! every cell a user visited, the best-scoring cell becomes the home
//! prediction unless its score falls below a threshold (then the user is
//! left Unknown). Includes the count-based baselines, accuracy/coverage
//! curves, and the grid-resolution sweep.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Dataset, GridCell};
use crate::error::{Error, Result};
use crate::mobility::{
    self, feat, HourlyTrace, MobilityConfig, BASE_FEATURE_COUNT, EXTENDED_FEATURE_COUNT,
};
use crate::svm::{self, LinearModel, TrainConfig};
use crate::textprep::FeatureVector;

/// Default floor on the Most Check-in baseline's top count.
pub const DEFAULT_MIN_CHECKIN_COUNT: u32 = 3;

/// Linear home scorer plus the feature standardization it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct HomeModel {
    pub linear: LinearModel,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub extended: bool,
    pub normalized_counts: bool,
}

impl HomeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardized(&self, row: &[f64]) -> FeatureVector {
        debug_assert_eq!(row.len(), self.dim());
        FeatureVector::from_dense(
            &row.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(x, (m, s))| (x - m) / s)
                .collect::<Vec<f64>>(),
        )
    }

    /// Raw score of one cell's feature row.
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.linear.decision(&self.standardized(row))
    }

    /// Text format: flags, standardization stats, then the linear model.
    pub fn save(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        writeln!(out, "extended\t{}", self.extended as u8).unwrap();
        writeln!(out, "normalized_counts\t{}", self.normalized_counts as u8).unwrap();
        writeln!(out, "bias\t{}", self.linear.bias).unwrap();
        writeln!(out, "threshold\t{}", self.linear.threshold).unwrap();
        writeln!(out, "dim\t{}", self.dim()).unwrap();
        writeln!(out, "stats").unwrap();
        for i in 0..self.dim() {
            writeln!(out, "{i}\t{}\t{}", self.mean[i], self.std[i]).unwrap();
        }
        writeln!(out, "weights").unwrap();
        for (i, w) in self.linear.weights.iter().enumerate() {
            if *w != 0.0 {
                writeln!(out, "{i}\t{w}").unwrap();
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let invalid = |msg: String| Error::InvalidModel {
            path: path.into(),
            msg,
        };
        let mut lines = text.lines();
        let mut header = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| invalid(format!("missing {name} line")))?;
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| invalid(format!("bad {name} line {line:?}")))?;
            if key != name {
                return Err(invalid(format!("expected {name}, found {key}")));
            }
            Ok(value.to_string())
        };
        let flag = |v: String, name: &str| match v.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(invalid(format!("bad {name} flag {v:?}"))),
        };
        let extended = flag(header("extended")?, "extended")?;
        let normalized_counts = flag(header("normalized_counts")?, "normalized_counts")?;
        let bias: f64 = header("bias")?
            .parse()
            .map_err(|e| invalid(format!("bad bias: {e}")))?;
        let threshold: f64 = header("threshold")?
            .parse()
            .map_err(|e| invalid(format!("bad threshold: {e}")))?;
        let dim: usize = header("dim")?
            .parse()
            .map_err(|e| invalid(format!("bad dim: {e}")))?;
        let expected = if extended { EXTENDED_FEATURE_COUNT } else { BASE_FEATURE_COUNT };
        if dim != expected {
            return Err(invalid(format!("dim {dim} does not match flags (want {expected})")));
        }
        if lines.next() != Some("stats") {
            return Err(invalid("missing stats section".into()));
        }
        let mut mean = vec![0.0f64; dim];
        let mut std = vec![1.0f64; dim];
        for i in 0..dim {
            let line = lines
                .next()
                .ok_or_else(|| invalid(format!("missing stats row {i}")))?;
            let mut cols = line.split('\t');
            let bad = || invalid(format!("bad stats row {line:?}"));
            let ix: usize = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if ix != i {
                return Err(bad());
            }
            mean[i] = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            std[i] = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if cols.next().is_some() || !std[i].is_finite() || std[i] <= 0.0 {
                return Err(bad());
            }
        }
        if lines.next() != Some("weights") {
            return Err(invalid("missing weights section".into()));
        }
        let mut weights = vec![0.0; dim];
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let bad = || invalid(format!("bad weight row {line:?}"));
            let (ix, w) = line.split_once('\t').ok_or_else(bad)?;
            let ix: usize = ix.parse().map_err(|_| bad())?;
            if ix >= dim {
                return Err(bad());
            }
            weights[ix] = w.parse().map_err(|_| bad())?;
        }
        Ok(HomeModel {
            linear: LinearModel {
                weights,
                bias,
                threshold,
            },
            mean,
            std,
            extended,
            normalized_counts,
        })
    }
}

/// Per-column mean and population standard deviation; zero spread maps to 1
/// so constant columns standardize to 0.
pub fn standardize_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = rows.first().map_or(0, |r| r.len());
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Train the home scorer on (feature row, is-home) pairs. Features are
/// standardized with training statistics stored in the model; the
/// regularization strength comes from cross-validation when the grid has
/// more than one value.
pub fn train_home_model(
    rows: &[(Vec<f64>, bool)],
    cfg: &TrainConfig,
    lambda_grid: &[f64],
    mob_cfg: &MobilityConfig,
) -> Result<HomeModel> {
    if rows.is_empty() {
        return Err(Error::DegenerateLabels {
            context: "home model".into(),
        });
    }
    let dim = mob_cfg.feature_count();
    for (r, _) in rows {
        if r.len() != dim {
            return Err(Error::Config {
                msg: format!("feature row has {} values, model expects {dim}", r.len()),
            });
        }
    }
    let feats: Vec<Vec<f64>> = rows.iter().map(|(r, _)| r.clone()).collect();
    let (mean, std) = standardize_stats(&feats);
    let xs: Vec<FeatureVector> = feats
        .iter()
        .map(|r| {
            FeatureVector::from_dense(
                &r.iter()
                    .zip(mean.iter().zip(&std))
                    .map(|(x, (m, s))| (x - m) / s)
                    .collect::<Vec<f64>>(),
            )
        })
        .collect();
    let ys: Vec<bool> = rows.iter().map(|(_, y)| *y).collect();
    let chosen = match lambda_grid {
        [] => {
            return Err(Error::Config {
                msg: "empty regularization grid".into(),
            })
        }
        [single] => TrainConfig {
            reg_lambda: *single,
            ..cfg.clone()
        },
        grid => svm::cross_validate(&xs, &ys, grid, cfg)?.config,
    };
    let linear = svm::train(&xs, &ys, &chosen)?;
    Ok(HomeModel {
        linear,
        mean,
        std,
        extended: mob_cfg.extended,
        normalized_counts: mob_cfg.normalized_counts,
    })
}

/// One user's home call: the best-scoring cell, or None when the best score
/// missed the threshold. `score` is always the best score seen.
#[derive(Clone, Debug, PartialEq)]
pub struct HomePrediction {
    pub user: String,
    pub cell: Option<GridCell>,
    pub score: f64,
}

/// Score every candidate cell and keep the argmax; ties go to the higher
/// check-in share, then the smaller cell id.
pub fn predict_home(
    user: &str,
    features: &BTreeMap<GridCell, Vec<f64>>,
    model: &HomeModel,
    threshold: f64,
) -> HomePrediction {
    let mut best: Option<(f64, f64, GridCell)> = None;
    for (&cell, row) in features {
        let score = model.decision(row);
        let pct = row[feat::CHECKIN_PCT];
        let better = match best {
            None => true,
            Some((bs, bp, _)) => score > bs || (score == bs && pct > bp),
        };
        if better {
            best = Some((score, pct, cell));
        }
    }
    match best {
        Some((score, _, cell)) => HomePrediction {
            user: user.into(),
            cell: (score >= threshold).then_some(cell),
            score,
        },
        None => HomePrediction {
            user: user.into(),
            cell: None,
            score: f64::NEG_INFINITY,
        },
    }
}

/// Ground-truth user for evaluation: extracted features plus the true home.
#[derive(Clone, Debug)]
pub struct LabeledUser {
    pub user: String,
    pub features: BTreeMap<GridCell, Vec<f64>>,
    pub home: GridCell,
}

/// The (features, is-home) training rows of a set of labeled users.
pub fn training_rows(users: &[LabeledUser]) -> Vec<(Vec<f64>, bool)> {
    users
        .iter()
        .flat_map(|u| {
            u.features
                .iter()
                .map(|(&c, row)| (row.clone(), c == u.home))
        })
        .collect()
}

/// Each user's home cell by gold annotation: the majority cell among their
/// home-labeled posts, ties to the smaller cell id. Users without any
/// home-labeled post are absent.
pub fn gold_home_cells(ds: &Dataset) -> BTreeMap<String, GridCell> {
    let mut out = BTreeMap::new();
    for (user, records) in ds.user_slices() {
        let mut counts: BTreeMap<GridCell, u32> = BTreeMap::new();
        for r in records {
            if r.gold.map(|g| g.home == Some(true)).unwrap_or(false) {
                if let Ok(cell) = ds.grid.assign(r.lat, r.lon) {
                    *counts.entry(cell).or_insert(0) += 1;
                }
            }
        }
        if let Some((&cell, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            out.insert(user.to_string(), cell);
        }
    }
    out
}

/// Users with a gold home and at least `min_tweets` posts, with extracted
/// features. Parallel over users.
pub fn labeled_users(
    ds: &Dataset,
    min_tweets: usize,
    cfg: &MobilityConfig,
) -> Result<Vec<LabeledUser>> {
    let homes = gold_home_cells(ds);
    let eligible: Vec<(&str, GridCell)> = ds
        .user_slices()
        .filter(|(_, recs)| recs.len() >= min_tweets)
        .filter_map(|(u, _)| homes.get(u).map(|&h| (u, h)))
        .collect();
    eligible
        .par_iter()
        .map(|&(user, home)| {
            Ok(LabeledUser {
                user: user.to_string(),
                features: mobility::extract_features(ds, user, cfg)?,
                home,
            })
        })
        .collect()
}

/// One operating point of the accuracy/coverage trade-off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub accuracy: f64,
    pub coverage: f64,
}

/// Best score and correctness per user, the sufficient statistics for every
/// curve computation.
fn score_users(model: &HomeModel, users: &[LabeledUser]) -> Vec<(f64, bool)> {
    users
        .iter()
        .map(|u| {
            let p = predict_home(&u.user, &u.features, model, f64::NEG_INFINITY);
            (p.score, p.cell == Some(u.home))
        })
        .collect()
}

fn curve_point(scored: &[(f64, bool)], threshold: f64) -> CurvePoint {
    let covered: Vec<&(f64, bool)> = scored.iter().filter(|(s, _)| *s >= threshold).collect();
    let accuracy = if covered.is_empty() {
        0.0
    } else {
        covered.iter().filter(|(_, ok)| *ok).count() as f64 / covered.len() as f64
    };
    CurvePoint {
        threshold,
        accuracy,
        coverage: covered.len() as f64 / scored.len().max(1) as f64,
    }
}

/// Accuracy over covered users and coverage at each threshold. Accuracy of
/// an empty covered set is reported as 0.
pub fn accuracy_coverage_curve(
    model: &HomeModel,
    users: &[LabeledUser],
    thresholds: &[f64],
) -> Vec<CurvePoint> {
    let scored = score_users(model, users);
    thresholds.iter().map(|&t| curve_point(&scored, t)).collect()
}

/// Most Check-in baseline: the cell holding the most trace check-ins, or
/// Unknown when that count is under `min_count`. Ties to the smaller id.
pub fn baseline_most_checkin(trace: &HourlyTrace, min_count: u32) -> HomePrediction {
    let mut counts: BTreeMap<GridCell, u32> = BTreeMap::new();
    for (_, cell) in trace.observed() {
        *counts.entry(cell).or_insert(0) += 1;
    }
    baseline_from_counts(trace, counts.into_iter().map(|(c, n)| (c, n as f64)), |top, _| {
        top >= min_count as f64
    })
}

/// Last Destination baseline: the most frequent end-of-day cell; Unknown
/// when the top count leads the runner-up by less than `margin`.
pub fn baseline_last_destination(trace: &HourlyTrace, margin: f64) -> HomePrediction {
    let counts = mobility::last_destination_counts(trace);
    baseline_from_counts(trace, counts.into_iter().map(|(c, n)| (c, n as f64)), move |top, second| {
        top - second >= margin
    })
}

/// PageRank baseline: the top-scoring cell of the movement graph; Unknown
/// when its lead over the runner-up is under `margin`.
pub fn baseline_pagerank(
    trace: &HourlyTrace,
    margin: f64,
    cfg: &MobilityConfig,
) -> Result<HomePrediction> {
    let graph = mobility::MovementGraph::from_trace(trace);
    let pr = mobility::weighted_pagerank(&graph, cfg.damping, cfg.tol, cfg.max_iter)?;
    Ok(baseline_from_counts(trace, pr.into_iter(), move |top, second| {
        top - second >= margin
    }))
}

fn baseline_from_counts(
    trace: &HourlyTrace,
    values: impl Iterator<Item = (GridCell, f64)>,
    keep: impl Fn(f64, f64) -> bool,
) -> HomePrediction {
    let mut top: Option<(f64, GridCell)> = None;
    let mut second = 0.0;
    for (cell, v) in values {
        match top {
            // Strict comparison keeps the first (smallest-id) cell on ties;
            // the iterator is already in id order.
            Some((tv, _)) if v > tv => {
                second = tv;
                top = Some((v, cell));
            }
            Some(_) => {
                if v > second {
                    second = v;
                }
            }
            None => top = Some((v, cell)),
        }
    }
    match top {
        Some((v, cell)) => HomePrediction {
            user: trace.user.clone(),
            cell: keep(v, second).then_some(cell),
            score: v,
        },
        None => HomePrediction {
            user: trace.user.clone(),
            cell: None,
            score: f64::NEG_INFINITY,
        },
    }
}

/// One grid size of the resolution sweep. `accuracy` is None when the
/// coverage target could not be met within tolerance.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub cell_size_m: f64,
    pub resolution_m: f64,
    pub threshold: f64,
    pub coverage: f64,
    pub accuracy: Option<f64>,
}

/// Cell size to worst-case localization error of a correct prediction.
pub fn resolution_of(cell_size_m: f64) -> f64 {
    std::f64::consts::SQRT_2 * cell_size_m / 2.0
}

/// Pick the threshold whose realized coverage lands nearest the target,
/// searching outward over the discrete coverage steps of the sorted score
/// axis. Returns (threshold, point) even when outside tolerance.
fn threshold_for_coverage(scored: &[(f64, bool)], target: f64) -> (f64, CurvePoint) {
    let mut scores: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut best: Option<(f64, CurvePoint)> = None;
    for &t in scores.iter().chain(std::iter::once(&f64::INFINITY)) {
        let p = curve_point(scored, t);
        let better = match &best {
            None => true,
            Some((_, bp)) => (p.coverage - target).abs() < (bp.coverage - target).abs(),
        };
        if better {
            best = Some((t, p));
        }
    }
    best.expect("at least the +inf threshold is considered")
}

/// Rebuild the grid at each cell size, re-derive gold homes, retrain, and
/// evaluate accuracy at the fixed coverage target (within `coverage_tol`).
#[allow(clippy::too_many_arguments)]
pub fn resolution_sweep(
    ds: &Dataset,
    sizes: &[f64],
    coverage_target: f64,
    coverage_tol: f64,
    min_tweets: usize,
    cfg: &TrainConfig,
    lambda_grid: &[f64],
    mob_cfg: &MobilityConfig,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let grid = crate::corpus::GridSpec::new(ds.grid.origin_lat, ds.grid.origin_lon, size)?;
        let sized = Dataset::new(ds.records.clone(), grid);
        let users = labeled_users(&sized, min_tweets, mob_cfg)?;
        let model = train_home_model(&training_rows(&users), cfg, lambda_grid, mob_cfg)?;
        let scored = score_users(&model, &users);
        let (threshold, point) = threshold_for_coverage(&scored, coverage_target);
        let reachable = (point.coverage - coverage_target).abs() <= coverage_tol;
        out.push(SweepPoint {
            cell_size_m: size,
            resolution_m: resolution_of(size),
            threshold,
            coverage: point.coverage,
            accuracy: reachable.then_some(point.accuracy),
        });
    }
    Ok(out)
}
