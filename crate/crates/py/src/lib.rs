//! Python bindings over the core crate: text preparation, grid geometry,
//! pagerank, the activity cascade, home scoring, the synthetic world
//! generator, and the full command-line pipeline via `run`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use geoactivity::cascade::{classify_tokens, train_cascade, CascadeConfig, CascadeModel, KeywordFilter};
use geoactivity::corpus::{load_tweets, GridCell, GridSpec};
use geoactivity::homeloc::{self, resolution_of};
use geoactivity::mobility::{weighted_pagerank, MobilityConfig, MovementGraph};
use geoactivity::svm::{self, TrainConfig};
use geoactivity::synth::{generate_world as synth_world, write_world, WorldSpec};
use geoactivity::textprep;

fn pyerr(e: geoactivity::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Lowercase, strip urls/mentions/punctuation, and tokenize.
#[pyfunction]
fn normalize(text: &str) -> Vec<String> {
    textprep::normalize(text)
}

/// Word n-grams up to `n_max` over already normalized tokens.
#[pyfunction]
#[pyo3(signature = (tokens, n_max = 2))]
fn ngrams(tokens: Vec<String>, n_max: usize) -> Vec<String> {
    textprep::extract_ngrams(&tokens, n_max)
}

/// Harmonic mean of precision and recall; zero when both are zero.
#[pyfunction]
fn f_score(precision: f64, recall: f64) -> f64 {
    svm::f_score(precision, recall)
}

/// Great-circle distance in meters between two latitude/longitude points.
#[pyfunction]
fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    geoactivity::analysis::haversine((lat1, lon1), (lat2, lon2))
}

/// Weighted PageRank over directed edges `((ix, iy), (ix, iy), weight)`.
/// Scores sum to 1. `reversed` flips every edge first.
#[pyfunction]
#[pyo3(signature = (edges, damping = 0.85, tol = 1e-9, max_iter = 1000, reversed = false))]
fn pagerank(
    edges: Vec<((i32, i32), (i32, i32), f64)>,
    damping: f64,
    tol: f64,
    max_iter: usize,
    reversed: bool,
) -> PyResult<BTreeMap<(i32, i32), f64>> {
    let mut vertices = Vec::new();
    let mut weights = Vec::new();
    for &((ax, ay), (bx, by), w) in &edges {
        let (a, b) = (GridCell::new(ax, ay), GridCell::new(bx, by));
        vertices.push(a);
        vertices.push(b);
        weights.push((a, b, w));
    }
    let mut graph = MovementGraph::from_weights(vertices, weights).map_err(pyerr)?;
    if reversed {
        graph = graph.reverse();
    }
    let scores = weighted_pagerank(&graph, damping, tol, max_iter).map_err(pyerr)?;
    Ok(scores.into_iter().map(|(c, s)| ((c.ix, c.iy), s)).collect())
}

/// Square grid anchored at an origin corner.
#[pyclass]
struct Grid {
    inner: GridSpec,
}

#[pymethods]
impl Grid {
    #[new]
    fn new(origin_lat: f64, origin_lon: f64, cell_size_m: f64) -> PyResult<Self> {
        Ok(Grid {
            inner: GridSpec::new(origin_lat, origin_lon, cell_size_m).map_err(pyerr)?,
        })
    }

    /// Cell indices of a point.
    fn assign(&self, lat: f64, lon: f64) -> PyResult<(i32, i32)> {
        let c = self.inner.assign(lat, lon).map_err(pyerr)?;
        Ok((c.ix, c.iy))
    }

    /// Latitude/longitude of a cell's center.
    fn cell_center(&self, ix: i32, iy: i32) -> (f64, f64) {
        self.inner.cell_center(GridCell::new(ix, iy))
    }

    /// Worst-case localization error of a correct cell prediction, meters.
    fn resolution_m(&self) -> f64 {
        resolution_of(self.inner.cell_size_m)
    }
}

/// The three-level activity classifier with its keyword prefilter.
#[pyclass]
struct Cascade {
    model: CascadeModel,
    holdout_f: Vec<f64>,
}

#[pymethods]
impl Cascade {
    /// Train on a labeled JSONL corpus with a keyword list file.
    #[staticmethod]
    fn train(labels_jsonl: PathBuf, keywords_txt: PathBuf) -> PyResult<Self> {
        // The cascade only reads text and gold answers, so any grid does.
        let grid = GridSpec::new(0.0, 0.0, 100.0).map_err(pyerr)?;
        let (ds, _) = load_tweets(&labels_jsonl, grid).map_err(pyerr)?;
        let filter = KeywordFilter::load(&keywords_txt).map_err(pyerr)?;
        let trained =
            train_cascade(&ds.records, filter, &CascadeConfig::default()).map_err(pyerr)?;
        Ok(Cascade {
            model: trained.model,
            holdout_f: trained.reports.iter().map(|r| r.holdout.f_score).collect(),
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Cascade {
            model: CascadeModel::load(&dir).map_err(pyerr)?,
            holdout_f: Vec::new(),
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.model.save(&dir).map_err(pyerr)
    }

    /// Held-out F score per level, in training order. Empty after `load`.
    fn holdout_f(&self) -> Vec<f64> {
        self.holdout_f.clone()
    }

    /// Activity label of a text, e.g. "filtered_out" or "user_drinking_now".
    fn label(&self, text: &str) -> String {
        classify_tokens(&textprep::normalize(text), &self.model)
            .as_str()
            .to_string()
    }
}

/// Linear scorer over per-cell mobility feature rows.
#[pyclass]
struct HomePredictor {
    model: homeloc::HomeModel,
}

#[pymethods]
impl HomePredictor {
    /// Train from `(feature_row, is_home)` pairs with a regularization grid.
    #[staticmethod]
    #[pyo3(signature = (rows, lambda_grid = None))]
    fn train(rows: Vec<(Vec<f64>, bool)>, lambda_grid: Option<Vec<f64>>) -> PyResult<Self> {
        let grid = lambda_grid.unwrap_or_else(svm::default_lambda_grid);
        let model =
            homeloc::train_home_model(&rows, &TrainConfig::default(), &grid, &MobilityConfig::default())
                .map_err(pyerr)?;
        Ok(HomePredictor { model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(HomePredictor {
            model: homeloc::HomeModel::load(&path).map_err(pyerr)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(pyerr)
    }

    /// Decision score of one feature row; higher means more home-like.
    fn score(&self, row: Vec<f64>) -> f64 {
        self.model.decision(&row)
    }

    /// Most home-like cell among `(ix, iy) -> feature_row` candidates, or
    /// None when the best score is below `threshold`.
    #[pyo3(signature = (cells, threshold = f64::NEG_INFINITY))]
    fn predict(
        &self,
        cells: BTreeMap<(i32, i32), Vec<f64>>,
        threshold: f64,
    ) -> (Option<(i32, i32)>, f64) {
        let features: BTreeMap<GridCell, Vec<f64>> = cells
            .into_iter()
            .map(|((ix, iy), row)| (GridCell::new(ix, iy), row))
            .collect();
        let p = homeloc::predict_home("", &features, &self.model, threshold);
        (p.cell.map(|c| (c.ix, c.iy)), p.score)
    }
}

/// Generate a synthetic world from spec text (`key value` lines) and write
/// its corpus, outlets, manifest, and keywords under `out_dir`. Returns the
/// number of tweets written.
#[pyfunction]
fn generate_world(spec_text: &str, out_dir: PathBuf) -> PyResult<usize> {
    let spec = WorldSpec::parse_str(spec_text).map_err(pyerr)?;
    let world = synth_world(&spec).map_err(pyerr)?;
    write_world(&world, &out_dir).map_err(pyerr)?;
    Ok(world.records.len())
}

/// Run a pipeline command exactly as the command-line tool would; returns
/// its exit code (0 ok, 1 usage or config, 2 data).
#[pyfunction]
fn run(args: Vec<String>) -> i32 {
    geoactivity::cli::dispatch(args)
}

#[pymodule]
fn geoactivity_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(ngrams, m)?)?;
    m.add_function(wrap_pyfunction!(f_score, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(pagerank, m)?)?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Grid>()?;
    m.add_class::<Cascade>()?;
    m.add_class::<HomePredictor>()?;
    Ok(())
}
