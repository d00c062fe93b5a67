//! Command-line entry point: argument parsing, config-file resolution, and
//! orchestration of the ingest, cascade, mobility, home, and analysis
//! pipelines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{
    self, correlation, distance_histogram, heatmap_geojson, permutation_p, write_heatmap_csv,
    write_histogram_csv, CorrelateOptions, OutletTable, DEFAULT_BIN_EDGES, DEFAULT_MIN_POS,
};
use crate::cascade::{
    classify_tweet, train_cascade, ActivityLabel, CascadeConfig, CascadeCounts, CascadeModel,
    KeywordFilter, UpstreamMode,
};
use crate::corpus::{active_users, load_tweets, GridCell, GridSpec, TweetRecord};
use crate::error::{Error, Result};
use crate::homeloc::{
    accuracy_coverage_curve, gold_home_cells, predict_home, resolution_sweep, train_home_model,
    HomeModel, HomePrediction, LabeledUser,
};
use crate::mobility::{
    extract_all_features, read_features_csv, write_features_csv, MobilityConfig,
    EXTENDED_FEATURE_COUNT,
};
use crate::svm::{self, TrainConfig};
use crate::synth::{generate_world, write_world, WorldSpec};

/// Fully resolved run options. Precedence: CLI flag > config file > default.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub seed: Option<u64>,
    pub threads: usize,
    pub log_level: String,
    pub min_tweets: usize,
    pub min_pos: u32,
    pub threshold: f64,
    pub coverage: f64,
    pub coverage_tol: f64,
    pub upstream: UpstreamMode,
    pub extended: bool,
    pub normalized_counts: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            origin_lat: 40.7,
            origin_lon: -74.0,
            cell_size_m: 100.0,
            seed: None,
            threads: 0,
            log_level: "warn".into(),
            min_tweets: 5,
            min_pos: DEFAULT_MIN_POS,
            threshold: f64::NEG_INFINITY,
            coverage: 0.8,
            coverage_tol: 0.05,
            upstream: UpstreamMode::Predicted,
            extended: false,
            normalized_counts: false,
        }
    }
}

impl RunConfig {
    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(|c: char| c.is_whitespace() || c == '=')
                .map(|(k, v)| (k.trim(), v.trim_start_matches('=').trim()))
                .ok_or_else(|| Error::Config {
                    msg: format!("config line {}: expected 'key value', got {raw:?}", idx + 1),
                })?;
            let bad = |what: &str| Error::Config {
                msg: format!("config line {}: bad {what} value {value:?}", idx + 1),
            };
            macro_rules! set {
                ($field:expr, $ty:ty) => {
                    $field = value.parse::<$ty>().map_err(|_| bad(key))?
                };
            }
            match key {
                "origin_lat" => set!(self.origin_lat, f64),
                "origin_lon" => set!(self.origin_lon, f64),
                "cell_size_m" => set!(self.cell_size_m, f64),
                "seed" => self.seed = Some(value.parse().map_err(|_| bad(key))?),
                "threads" => set!(self.threads, usize),
                "log_level" => self.log_level = value.to_string(),
                "min_tweets" => set!(self.min_tweets, usize),
                "min_pos" => set!(self.min_pos, u32),
                "threshold" => set!(self.threshold, f64),
                "coverage" => set!(self.coverage, f64),
                "coverage_tol" => set!(self.coverage_tol, f64),
                "upstream" => self.upstream = parse_upstream(value)?,
                "extended" => set!(self.extended, bool),
                "normalized_counts" => set!(self.normalized_counts, bool),
                _ => {
                    return Err(Error::Config {
                        msg: format!("config line {}: unknown key {key:?}", idx + 1),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.origin_lat, self.origin_lon, self.cell_size_m)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed(),
            ..TrainConfig::default()
        }
    }

    pub fn mobility(&self) -> MobilityConfig {
        MobilityConfig {
            tie_seed: self.seed(),
            extended: self.extended,
            normalized_counts: self.normalized_counts,
            ..MobilityConfig::default()
        }
    }

    fn render(&self, command: &str, extra: &[(&str, String)]) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("command".into(), command.into()),
            ("origin_lat".into(), self.origin_lat.to_string()),
            ("origin_lon".into(), self.origin_lon.to_string()),
            ("cell_size_m".into(), self.cell_size_m.to_string()),
            ("seed".into(), self.seed().to_string()),
            ("threads".into(), self.threads.to_string()),
            ("log_level".into(), self.log_level.clone()),
            ("min_tweets".into(), self.min_tweets.to_string()),
            ("min_pos".into(), self.min_pos.to_string()),
            ("threshold".into(), self.threshold.to_string()),
            ("coverage".into(), self.coverage.to_string()),
            ("coverage_tol".into(), self.coverage_tol.to_string()),
            ("upstream".into(), upstream_str(self.upstream).into()),
            ("extended".into(), self.extended.to_string()),
            ("normalized_counts".into(), self.normalized_counts.to_string()),
        ];
        pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k} {v}").unwrap();
        }
        out
    }
}

fn parse_upstream(s: &str) -> Result<UpstreamMode> {
    match s {
        "predicted" => Ok(UpstreamMode::Predicted),
        "gold" => Ok(UpstreamMode::Gold),
        _ => Err(Error::Config {
            msg: format!("upstream mode must be 'predicted' or 'gold', got {s:?}"),
        }),
    }
}

fn upstream_str(m: UpstreamMode) -> &'static str {
    match m {
        UpstreamMode::Predicted => "predicted",
        UpstreamMode::Gold => "gold",
    }
}

#[derive(Parser)]
#[command(
    name = "geoactivity",
    version,
    about = "Activity detection and home-location inference for geotagged posts",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Key-value config file applied under CLI flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every stochastic component
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = library default)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// off|error|warn|info|debug|trace
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Args)]
struct GridArgs {
    /// Grid origin as "LAT,LON"
    #[arg(long, value_name = "LAT,LON")]
    grid_origin: Option<String>,
    /// Grid cell edge in meters
    #[arg(long, value_name = "METERS")]
    cell_size: Option<f64>,
}

impl GridArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(origin) = &self.grid_origin {
            let (lat, lon) = origin
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| Error::Config {
                    msg: format!("--grid-origin expects \"LAT,LON\", got {origin:?}"),
                })?;
            cfg.origin_lat = lat;
            cfg.origin_lon = lon;
        }
        if let Some(size) = self.cell_size {
            cfg.cell_size_m = size;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a tweet corpus, reporting corpus statistics
    Ingest {
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Tweets a user needs to count as active
        #[arg(long)]
        min_tweets: Option<usize>,
        /// Write gold home cells as a user,cell CSV
        #[arg(long, value_name = "CSV")]
        homes_out: Option<PathBuf>,
    },
    /// Train the three-level activity cascade from gold-labeled posts
    TrainActivity {
        #[arg(long, value_name = "JSONL")]
        labels: PathBuf,
        #[arg(long, value_name = "FILE")]
        keywords: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Restrict deeper levels by predicted or gold upstream labels
        #[arg(long)]
        upstream: Option<String>,
    },
    /// Label a corpus with a trained cascade
    Classify {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        #[arg(long, value_name = "JSONL")]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Compute per-user, per-cell mobility features
    ExtractFeatures {
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        min_tweets: Option<usize>,
        /// Add the six PageRank margin/rank features
        #[arg(long)]
        extended: bool,
        /// Normalize last-destination counts by observed days
        #[arg(long)]
        normalized_counts: bool,
    },
    /// Train the home-location model from features and gold homes
    TrainHome {
        #[arg(long, value_name = "CSV")]
        features: PathBuf,
        #[arg(long, value_name = "CSV")]
        homes: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Predict home cells for every user in a feature dump
    InferHome {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long = "in", value_name = "CSV")]
        input: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Minimum decision score; below it the user is UNKNOWN
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Accuracy/coverage curve of a home model over labeled users
    HomeCurve {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "CSV")]
        features: PathBuf,
        #[arg(long, value_name = "CSV")]
        homes: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Retrain and evaluate across grid cell sizes at fixed coverage
    HomeSweep {
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Comma-separated cell sizes in meters
        #[arg(long, default_value = "100,250,500,1000")]
        sizes: String,
        #[arg(long)]
        coverage: Option<f64>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        min_tweets: Option<usize>,
    },
    /// Geospatial analyses over a classified corpus
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// Synthetic world generation
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-cell now-drinking proportions as GeoJSON + CSV
    Heatmap {
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        /// Output prefix; writes PREFIX.geojson and PREFIX.csv
        #[arg(long, value_name = "PREFIX")]
        out: PathBuf,
        #[arg(long)]
        min_pos: Option<u32>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Pearson correlation of drinking density with outlet counts
    Correlate {
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        #[arg(long, value_name = "CSV")]
        outlets: PathBuf,
        #[arg(long)]
        min_pos: Option<u32>,
        /// Use only heatmap-included cells instead of all occupied cells
        #[arg(long)]
        heatmap_cells_only: bool,
        /// Correlate raw positive counts instead of proportions
        #[arg(long)]
        raw_positives: bool,
        /// Also estimate the p-value from this many permutations
        #[arg(long, value_name = "N")]
        permutations: Option<usize>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Histogram of now-drinking tweet distances from predicted homes
    Distances {
        #[arg(long = "in", value_name = "JSONL")]
        input: PathBuf,
        /// Home predictions CSV (user,cell,...); UNKNOWN rows are skipped
        #[arg(long, value_name = "CSV")]
        homes: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Comma-separated lower bin edges in meters, starting at 0
        #[arg(long)]
        bins: Option<String>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Generate a synthetic world into a directory
    Generate {
        /// Key-value world spec; defaults apply when omitted
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// Parse arguments (without the program name) and run the selected command.
/// Returns the process exit code: 0 success, 1 usage or config error, 2 data
/// error.
pub fn dispatch<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let argv: Vec<String> = std::iter::once("geoactivity".to_string())
        .chain(args)
        .collect();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.global.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.global.seed {
        cfg.seed = Some(seed);
    }
    if let Some(threads) = cli.global.threads {
        cfg.threads = threads;
    }
    if let Some(level) = &cli.global.log_level {
        cfg.log_level = level.clone();
    }

    let filter: log::LevelFilter = cfg.log_level.parse().map_err(|_| Error::Config {
        msg: format!("unknown log level {:?}", cfg.log_level),
    })?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init();
    if cfg.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }

    match cli.command {
        Command::Ingest {
            input,
            grid,
            min_tweets,
            homes_out,
        } => {
            grid.apply(&mut cfg)?;
            if let Some(m) = min_tweets {
                cfg.min_tweets = m;
            }
            cmd_ingest(&cfg, &input, homes_out.as_deref())
        }
        Command::TrainActivity {
            labels,
            keywords,
            out,
            upstream,
        } => {
            if let Some(u) = upstream {
                cfg.upstream = parse_upstream(&u)?;
            }
            cmd_train_activity(&cfg, &labels, &keywords, &out)
        }
        Command::Classify {
            model,
            input,
            out,
            grid,
        } => {
            grid.apply(&mut cfg)?;
            cmd_classify(&cfg, &model, &input, &out)
        }
        Command::ExtractFeatures {
            input,
            out,
            grid,
            min_tweets,
            extended,
            normalized_counts,
        } => {
            grid.apply(&mut cfg)?;
            if let Some(m) = min_tweets {
                cfg.min_tweets = m;
            }
            cfg.extended |= extended;
            cfg.normalized_counts |= normalized_counts;
            cmd_extract_features(&cfg, &input, &out)
        }
        Command::TrainHome {
            features,
            homes,
            out,
        } => cmd_train_home(&cfg, &features, &homes, &out),
        Command::InferHome {
            model,
            input,
            out,
            threshold,
            grid,
        } => {
            grid.apply(&mut cfg)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cmd_infer_home(&cfg, &model, &input, &out)
        }
        Command::HomeCurve {
            model,
            features,
            homes,
            out,
        } => cmd_home_curve(&cfg, &model, &features, &homes, &out),
        Command::HomeSweep {
            input,
            out,
            sizes,
            coverage,
            grid,
            min_tweets,
        } => {
            grid.apply(&mut cfg)?;
            if let Some(c) = coverage {
                cfg.coverage = c;
            }
            if let Some(m) = min_tweets {
                cfg.min_tweets = m;
            }
            let sizes = parse_float_list(&sizes, "--sizes")?;
            cmd_home_sweep(&cfg, &input, &sizes, &out)
        }
        Command::Analyze { what } => match what {
            AnalyzeCommand::Heatmap {
                input,
                out,
                min_pos,
                grid,
            } => {
                grid.apply(&mut cfg)?;
                if let Some(m) = min_pos {
                    cfg.min_pos = m;
                }
                cmd_heatmap(&cfg, &input, &out)
            }
            AnalyzeCommand::Correlate {
                input,
                outlets,
                min_pos,
                heatmap_cells_only,
                raw_positives,
                permutations,
                grid,
            } => {
                grid.apply(&mut cfg)?;
                if let Some(m) = min_pos {
                    cfg.min_pos = m;
                }
                let opt = CorrelateOptions {
                    heatmap_cells_only,
                    raw_positives,
                };
                cmd_correlate(&cfg, &input, &outlets, opt, permutations)
            }
            AnalyzeCommand::Distances {
                input,
                homes,
                out,
                bins,
                grid,
            } => {
                grid.apply(&mut cfg)?;
                let edges = match bins {
                    Some(s) => parse_float_list(&s, "--bins")?,
                    None => DEFAULT_BIN_EDGES.to_vec(),
                };
                cmd_distances(&cfg, &input, &homes, &edges, &out)
            }
        },
        Command::Synth { what } => match what {
            SynthCommand::Generate { spec, out } => cmd_synth_generate(&cfg, spec.as_deref(), &out),
        },
    }
}

fn parse_float_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| Error::Config {
                msg: format!("{what} expects comma-separated numbers, got {t:?}"),
            })
        })
        .collect()
}

/// Echo the resolved config next to a run's primary output: `<out>.config`
/// for files, `<out>/run.config` for directories.
fn write_sidecar(out: &Path, body: &str) -> Result<()> {
    let path = if out.is_dir() {
        out.join("run.config")
    } else {
        PathBuf::from(format!("{}.config", out.display()))
    };
    log::info!("resolved config:\n{body}");
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn cmd_ingest(cfg: &RunConfig, input: &Path, homes_out: Option<&Path>) -> Result<()> {
    let (ds, report) = load_tweets(input, cfg.grid()?)?;
    for e in report.malformed.iter().take(3) {
        log::warn!("{}:{}: {}", input.display(), e.line, e.msg);
    }
    println!(
        "loaded {} of {} lines ({} malformed)",
        report.loaded,
        report.total_lines,
        report.malformed.len()
    );
    println!(
        "users {} active {} (min {} tweets)",
        ds.user_slices().count(),
        active_users(&ds, cfg.min_tweets).len(),
        cfg.min_tweets
    );
    println!("period {} hours", ds.period.len());
    if let Some(path) = homes_out {
        let homes = gold_home_cells(&ds);
        let mut out = String::from("user,cell\n");
        for (user, cell) in &homes {
            writeln!(out, "{user},{}", cell.id()).unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        println!("gold homes for {} users -> {}", homes.len(), path.display());
        write_sidecar(
            path,
            &cfg.render("ingest", &[("in", input.display().to_string())]),
        )?;
    }
    Ok(())
}

fn cmd_train_activity(cfg: &RunConfig, labels: &Path, keywords: &Path, out: &Path) -> Result<()> {
    let (ds, _) = load_tweets(labels, cfg.grid()?)?;
    let filter = KeywordFilter::load(keywords)?;
    let cascade_cfg = CascadeConfig {
        train: cfg.train(),
        upstream: cfg.upstream,
        ..CascadeConfig::default()
    };
    let trained = train_cascade(&ds.records, filter, &cascade_cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    trained.model.save(out)?;
    for r in &trained.reports {
        println!(
            "SVM-{}: train {} holdout {} vocab {} lambda {} P {:.3} R {:.3} F {:.3}",
            r.level,
            r.train_size,
            r.holdout_size,
            r.vocab_size,
            r.chosen_lambda,
            r.holdout.precision,
            r.holdout.recall,
            r.holdout.f_score
        );
    }
    write_sidecar(
        out,
        &cfg.render(
            "train-activity",
            &[
                ("labels", labels.display().to_string()),
                ("keywords", keywords.display().to_string()),
            ],
        ),
    )
}

fn cmd_classify(cfg: &RunConfig, model: &Path, input: &Path, out: &Path) -> Result<()> {
    let (ds, _) = load_tweets(input, cfg.grid()?)?;
    let model = CascadeModel::load(model)?;
    let labels: Vec<ActivityLabel> = ds
        .records
        .par_iter()
        .map(|r| classify_tweet(r, &model))
        .collect();
    let mut body = String::new();
    for (rec, label) in ds.records.iter().zip(&labels) {
        let mut value = serde_json::to_value(rec).expect("record serializes");
        value
            .as_object_mut()
            .expect("record is an object")
            .insert("label".into(), serde_json::Value::from(label.as_str()));
        writeln!(body, "{value}").unwrap();
    }
    fs::write(out, body).map_err(|e| Error::io(out, e))?;
    let c = CascadeCounts::tally(labels.iter().copied());
    println!("total {}", c.total);
    println!("filter_passers {}", c.filter_passers);
    println!("drinking_mention {}", c.drinking_mention);
    println!("user_drinking {}", c.user_drinking);
    println!("user_drinking_now {}", c.user_drinking_now);
    write_sidecar(
        out,
        &cfg.render("classify", &[("in", input.display().to_string())]),
    )
}

fn cmd_extract_features(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let (ds, _) = load_tweets(input, cfg.grid()?)?;
    let mob = cfg.mobility();
    let features = extract_all_features(&ds, cfg.min_tweets, &mob)?;
    write_features_csv(out, &features, mob.extended)?;
    println!("features for {} users -> {}", features.len(), out.display());
    write_sidecar(
        out,
        &cfg.render("extract-features", &[("in", input.display().to_string())]),
    )
}

/// Join a features dump with a user,cell homes table into labeled users.
fn join_labeled(
    features: BTreeMap<String, BTreeMap<GridCell, Vec<f64>>>,
    homes: &BTreeMap<String, GridCell>,
) -> Result<Vec<LabeledUser>> {
    let users: Vec<LabeledUser> = features
        .into_iter()
        .filter_map(|(user, cells)| {
            homes.get(&user).map(|&home| LabeledUser {
                user,
                features: cells,
                home,
            })
        })
        .collect();
    if users.is_empty() {
        return Err(Error::Config {
            msg: "no users in common between the features and homes files".into(),
        });
    }
    Ok(users)
}

fn cmd_train_home(cfg: &RunConfig, features: &Path, homes: &Path, out: &Path) -> Result<()> {
    let feats = read_features_csv(features)?;
    let dim = feats
        .values()
        .flat_map(|cells| cells.values())
        .map(|v| v.len())
        .next()
        .unwrap_or(0);
    let homes_map = read_homes_csv(homes)?;
    let users = join_labeled(feats, &homes_map)?;
    let rows: Vec<(Vec<f64>, bool)> = crate::homeloc::training_rows(&users);
    let mut mob = cfg.mobility();
    mob.extended = dim == EXTENDED_FEATURE_COUNT;
    let model = train_home_model(&rows, &cfg.train(), &svm::default_lambda_grid(), &mob)?;
    model.save(out)?;
    println!(
        "trained on {} users ({} rows, dim {}) -> {}",
        users.len(),
        rows.len(),
        model.dim(),
        out.display()
    );
    write_sidecar(
        out,
        &cfg.render(
            "train-home",
            &[
                ("features", features.display().to_string()),
                ("homes", homes.display().to_string()),
            ],
        ),
    )
}

fn cmd_infer_home(cfg: &RunConfig, model: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = HomeModel::load(model)?;
    let features = read_features_csv(input)?;
    let grid = cfg.grid()?;
    let mut body = String::from("user,cell,score,lat,lon\n");
    let mut covered = 0usize;
    let total = features.len();
    for (user, cells) in &features {
        let p = predict_home(user, cells, &model, cfg.threshold);
        match p.cell {
            Some(cell) => {
                covered += 1;
                let (lat, lon) = grid.cell_center(cell);
                writeln!(body, "{user},{},{},{lat},{lon}", cell.id(), p.score).unwrap();
            }
            None => writeln!(body, "{user},UNKNOWN,{},,", p.score).unwrap(),
        }
    }
    fs::write(out, body).map_err(|e| Error::io(out, e))?;
    println!("{covered} of {total} users covered -> {}", out.display());
    write_sidecar(
        out,
        &cfg.render("infer-home", &[("in", input.display().to_string())]),
    )
}

fn cmd_home_curve(
    cfg: &RunConfig,
    model: &Path,
    features: &Path,
    homes: &Path,
    out: &Path,
) -> Result<()> {
    let model = HomeModel::load(model)?;
    let homes_map = read_homes_csv(homes)?;
    let users = join_labeled(read_features_csv(features)?, &homes_map)?;
    let mut thresholds: Vec<f64> = users
        .iter()
        .map(|u| predict_home(&u.user, &u.features, &model, f64::NEG_INFINITY).score)
        .collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points = accuracy_coverage_curve(&model, &users, &thresholds);
    let mut body = String::from("threshold,coverage,accuracy\n");
    for p in &points {
        writeln!(body, "{},{},{}", p.threshold, p.coverage, p.accuracy).unwrap();
    }
    fs::write(out, body).map_err(|e| Error::io(out, e))?;
    println!("{} curve points -> {}", points.len(), out.display());
    write_sidecar(
        out,
        &cfg.render(
            "home-curve",
            &[
                ("features", features.display().to_string()),
                ("homes", homes.display().to_string()),
            ],
        ),
    )
}

fn cmd_home_sweep(cfg: &RunConfig, input: &Path, sizes: &[f64], out: &Path) -> Result<()> {
    let (ds, _) = load_tweets(input, cfg.grid()?)?;
    let points = resolution_sweep(
        &ds,
        sizes,
        cfg.coverage,
        cfg.coverage_tol,
        cfg.min_tweets,
        &cfg.train(),
        &svm::default_lambda_grid(),
        &cfg.mobility(),
    )?;
    let mut body = String::from("cell_size_m,resolution_m,threshold,coverage,accuracy\n");
    for p in &points {
        let accuracy = p.accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            body,
            "{},{},{},{},{accuracy}",
            p.cell_size_m, p.resolution_m, p.threshold, p.coverage
        )
        .unwrap();
    }
    fs::write(out, body).map_err(|e| Error::io(out, e))?;
    println!("{} sweep points -> {}", points.len(), out.display());
    write_sidecar(
        out,
        &cfg.render("home-sweep", &[("in", input.display().to_string())]),
    )
}

/// Read a classified corpus: JSON-lines records with an added "label" key.
fn read_labeled(path: &Path) -> Result<Vec<(TweetRecord, ActivityLabel)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let label = value
            .get("label")
            .and_then(|v| v.as_str())
            .and_then(ActivityLabel::parse)
            .ok_or_else(|| bad("missing or unknown \"label\"".into()))?;
        let record: TweetRecord =
            serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        record.validate().map_err(|msg| bad(msg))?;
        out.push((record, label));
    }
    Ok(out)
}

/// Read a homes table: `user,cell` rows, tolerating the infer-home output
/// format (extra columns, UNKNOWN rows skipped) and a header line.
fn read_homes_csv(path: &Path) -> Result<BTreeMap<String, GridCell>> {
    Ok(read_predictions_csv(path)?
        .into_iter()
        .filter_map(|p| p.cell.map(|c| (p.user, c)))
        .collect())
}

fn read_predictions_csv(path: &Path) -> Result<Vec<HomePrediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("user,")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        if cols.len() < 2 {
            return Err(bad("expected at least user,cell".into()));
        }
        let cell = if cols[1] == "UNKNOWN" {
            None
        } else {
            Some(GridCell::parse(cols[1]).ok_or_else(|| bad(format!("bad cell id {:?}", cols[1])))?)
        };
        let score = match cols.get(2) {
            Some(s) if !s.is_empty() => s
                .parse::<f64>()
                .map_err(|e| bad(format!("bad score {s:?}: {e}")))?,
            _ => 0.0,
        };
        out.push(HomePrediction {
            user: cols[0].to_string(),
            cell,
            score,
        });
    }
    Ok(out)
}

fn cmd_heatmap(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let tweets = read_labeled(input)?;
    let grid = cfg.grid()?;
    let heatmap = analysis::build_heatmap(
        tweets.iter().map(|(r, l)| (r, *l)),
        &grid,
        cfg.min_pos,
    )?;
    let geojson_path = PathBuf::from(format!("{}.geojson", out.display()));
    let csv_path = PathBuf::from(format!("{}.csv", out.display()));
    let body = serde_json::to_string_pretty(&heatmap_geojson(&heatmap, &grid))
        .expect("geojson serializes");
    fs::write(&geojson_path, body + "\n").map_err(|e| Error::io(&geojson_path, e))?;
    write_heatmap_csv(&heatmap, &grid, &csv_path)?;
    println!(
        "{} cells included, {} below min_pos {}, {} positives -> {} + {}",
        heatmap.cells.len(),
        heatmap.excluded.len(),
        cfg.min_pos,
        heatmap.positive_total(),
        geojson_path.display(),
        csv_path.display()
    );
    write_sidecar(
        &csv_path,
        &cfg.render("analyze-heatmap", &[("in", input.display().to_string())]),
    )
}

fn cmd_correlate(
    cfg: &RunConfig,
    input: &Path,
    outlets: &Path,
    opt: CorrelateOptions,
    permutations: Option<usize>,
) -> Result<()> {
    let tweets = read_labeled(input)?;
    let grid = cfg.grid()?;
    let heatmap = analysis::build_heatmap(
        tweets.iter().map(|(r, l)| (r, *l)),
        &grid,
        cfg.min_pos,
    )?;
    let table = OutletTable::load_csv(outlets, &grid)?;
    let (xs, ys) = analysis::correlation_series(&heatmap, &table, opt);
    let c = correlation(&xs, &ys)?;
    println!("r {:.6}", c.r);
    println!("p {:.6}", c.p_value);
    println!("n {}", c.n);
    if let Some(perms) = permutations {
        let p = permutation_p(&xs, &ys, perms, cfg.seed())?;
        println!("permutation_p {p:.6} ({perms} permutations)");
    }
    Ok(())
}

fn cmd_distances(
    cfg: &RunConfig,
    input: &Path,
    homes: &Path,
    edges: &[f64],
    out: &Path,
) -> Result<()> {
    let tweets = read_labeled(input)?;
    let predictions = read_predictions_csv(homes)?;
    let grid = cfg.grid()?;
    let hist = distance_histogram(
        tweets.iter().map(|(r, l)| (r, *l)),
        &predictions,
        &grid,
        edges,
    )?;
    write_histogram_csv(&hist, out)?;
    println!("{} tweets binned -> {}", hist.total(), out.display());
    write_sidecar(
        out,
        &cfg.render(
            "analyze-distances",
            &[
                ("in", input.display().to_string()),
                ("homes", homes.display().to_string()),
            ],
        ),
    )
}

fn cmd_synth_generate(cfg: &RunConfig, spec: Option<&Path>, out: &Path) -> Result<()> {
    let mut spec = match spec {
        Some(path) => WorldSpec::load(path)?,
        None => WorldSpec::default(),
    };
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let world = generate_world(&spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_world(&world, out)?;
    println!(
        "{} records for {} users, {} outlets -> {}",
        world.records.len(),
        world.manifest.users.len(),
        world.outlets.len(),
        out.display()
    );
    write_sidecar(out, &cfg.render("synth-generate", &[("seed", spec.seed.to_string())]))
}
