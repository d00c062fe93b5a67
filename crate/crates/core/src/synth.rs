//! Deterministic synthetic-world generator.
//!
//! Agents live on the grid with a home, a workplace, and favorite venues
//! drawn from outlet-rich cells. Every simulated hour each agent may post,
//! choosing a text stratum (neutral chatter, keyword decoy, third-person
//! mention, own past drinking, drinking right now) and a location driven by
//! the hour: nights are spent at home with a configurable probability,
//! workdays at work, evenings at venues. "Right now" posts happen at home or
//! at a venue in a known proportion, which plants a recoverable correlation
//! between venue density and detected activity. The same (spec, seed) pair
//! always produces byte-identical output files.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, GoldLabels, GridCell, GridSpec, TweetRecord};
use crate::error::{Error, Result};

/// Keywords the generated language is built around; written next to the
/// corpus so the whole pipeline can run on generator output alone.
pub const KEYWORDS: [&str; 7] = ["beer", "wine", "vodka", "cocktail", "drunk", "drink", "party"];

const DRINKS: [&str; 4] = ["beer", "wine", "vodka", "cocktail"];

/// Local epoch of simulation hour zero (2020-01-01 00:00 local time).
pub const LOCAL_EPOCH: i64 = 1_577_836_800;

const NEUTRAL_TEXTS: [&str; 6] = [
    "beautiful sunset over the park tonight",
    "traffic on the bridge is brutal this morning",
    "new coffee spot downtown is amazing",
    "finally finished that book on the train",
    "gym session done feeling strong",
    "rainy day staying in with movies",
];

const DECOY_TEXTS: [&str; 6] = [
    "root beer floats with the kids this afternoon",
    "ginger beer bread recipe turned out great",
    "wine gums are my favorite candy honestly",
    "shopping for party supplies for the office",
    "drink more water they keep telling me",
    "that new craft beer soap smells amazing",
];

const MENTION_TEXTS: [&str; 6] = [
    "my brother got drunk at the game again",
    "she ordered {d} for the whole table",
    "they were drinking {d} on the porch all afternoon",
    "everyone at the office party got drunk except me",
    "my roommate keeps talking about {d} nonstop",
    "he spilled {d} all over the couch",
];

const PAST_TEXTS: [&str; 6] = [
    "so hungover from all that {d} last night",
    "i had way too much {d} yesterday",
    "was drunk by nine last night oops",
    "still recovering from the {d} at the party last night",
    "i only meant to have one {d} yesterday",
    "drank {d} with dinner last night and slept great",
];

const NOW_TEXTS: [&str; 6] = [
    "cold {d} in my hand right now",
    "sipping {d} at the bar right now",
    "{d} shots with the crew here tonight",
    "on my third {d} here and counting",
    "drinking {d} here and loving every minute",
    "just cracked a {d} open now cheers",
];

/// Generator parameters; see `Default` for the baseline world.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub users: usize,
    pub days: usize,
    /// World is a square of this many cells per side.
    pub world_cells: i32,
    pub cell_size_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub tz_offset_min: i32,
    pub seed: u64,
    /// Chance a late-night post (local 00:00 to 06:59) comes from home.
    pub night_home_prob: f64,
    /// Per-user workday-at-work probability, drawn uniformly per user.
    pub work_prob_min: f64,
    pub work_prob_max: f64,
    /// Per-user evening-at-venue probability.
    pub bar_affinity_min: f64,
    pub bar_affinity_max: f64,
    /// Per-user hourly posting probability.
    pub rate_min: f64,
    pub rate_max: f64,
    /// Posting-rate multiplier during late-night hours.
    pub night_rate_mult: f64,
    /// Share of "drinking now" posts sent from home rather than a venue.
    pub home_drink_frac: f64,
    /// Number of outlets and the distinct cells they cluster into.
    pub outlets: usize,
    pub venue_cells: usize,
    /// When positive, workplaces land within this distance of home
    /// (meters, Chebyshev over cells). Zero places work anywhere.
    pub work_radius_m: f64,
    /// When positive, favorite venues are drawn from venues within this
    /// distance of home when any exist. Zero ignores distance.
    pub venue_radius_m: f64,
    /// Stratum weights: neutral, decoy, mention, past, now.
    pub strata: [f64; 5],
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            users: 200,
            days: 14,
            world_cells: 30,
            cell_size_m: 100.0,
            origin_lat: 40.7,
            origin_lon: -74.0,
            tz_offset_min: 0,
            seed: 0,
            night_home_prob: 0.9,
            work_prob_min: 0.2,
            work_prob_max: 0.8,
            bar_affinity_min: 0.2,
            bar_affinity_max: 0.7,
            rate_min: 0.3,
            rate_max: 0.7,
            night_rate_mult: 0.5,
            home_drink_frac: 0.3,
            outlets: 40,
            venue_cells: 15,
            work_radius_m: 0.0,
            venue_radius_m: 0.0,
            strata: [0.55, 0.10, 0.12, 0.13, 0.10],
        }
    }
}

impl WorldSpec {
    /// Parse a key-value spec file: one `key value` pair per line, `#`
    /// comments. Unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<WorldSpec> {
        let mut spec = WorldSpec::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(|c: char| c.is_whitespace() || c == '=')
                .map(|(k, v)| (k.trim(), v.trim_start_matches('=').trim()))
                .ok_or_else(|| Error::Config {
                    msg: format!("spec line {}: expected 'key value', got {raw:?}", idx + 1),
                })?;
            let bad = |what: &str| Error::Config {
                msg: format!("spec line {}: bad {what} value {value:?}", idx + 1),
            };
            macro_rules! set {
                ($field:expr, $ty:ty) => {
                    $field = value.parse::<$ty>().map_err(|_| bad(key))?
                };
            }
            match key {
                "users" => set!(spec.users, usize),
                "days" => set!(spec.days, usize),
                "world_cells" => set!(spec.world_cells, i32),
                "cell_size_m" => set!(spec.cell_size_m, f64),
                "origin_lat" => set!(spec.origin_lat, f64),
                "origin_lon" => set!(spec.origin_lon, f64),
                "tz_offset_min" => set!(spec.tz_offset_min, i32),
                "seed" => set!(spec.seed, u64),
                "night_home_prob" => set!(spec.night_home_prob, f64),
                "work_prob_min" => set!(spec.work_prob_min, f64),
                "work_prob_max" => set!(spec.work_prob_max, f64),
                "bar_affinity_min" => set!(spec.bar_affinity_min, f64),
                "bar_affinity_max" => set!(spec.bar_affinity_max, f64),
                "rate_min" => set!(spec.rate_min, f64),
                "rate_max" => set!(spec.rate_max, f64),
                "night_rate_mult" => set!(spec.night_rate_mult, f64),
                "home_drink_frac" => set!(spec.home_drink_frac, f64),
                "outlets" => set!(spec.outlets, usize),
                "venue_cells" => set!(spec.venue_cells, usize),
                "work_radius_m" => set!(spec.work_radius_m, f64),
                "venue_radius_m" => set!(spec.venue_radius_m, f64),
                "strata_neutral" => set!(spec.strata[0], f64),
                "strata_decoy" => set!(spec.strata[1], f64),
                "strata_mention" => set!(spec.strata[2], f64),
                "strata_past" => set!(spec.strata[3], f64),
                "strata_now" => set!(spec.strata[4], f64),
                _ => {
                    return Err(Error::Config {
                        msg: format!("spec line {}: unknown key {key:?}", idx + 1),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<WorldSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        WorldSpec::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config { msg });
        if self.users == 0 || self.days == 0 {
            return cfg("users and days must be positive".into());
        }
        if self.world_cells < 1 {
            return cfg(format!("world_cells {} must be positive", self.world_cells));
        }
        if self.outlets == 0 || self.venue_cells == 0 {
            return cfg("outlets and venue_cells must be positive".into());
        }
        for (name, r) in [
            ("work_radius_m", self.work_radius_m),
            ("venue_radius_m", self.venue_radius_m),
        ] {
            if !r.is_finite() || r < 0.0 {
                return cfg(format!("{name} {r} must be a finite non-negative number"));
            }
        }
        for (name, p) in [
            ("night_home_prob", self.night_home_prob),
            ("work_prob_min", self.work_prob_min),
            ("work_prob_max", self.work_prob_max),
            ("bar_affinity_min", self.bar_affinity_min),
            ("bar_affinity_max", self.bar_affinity_max),
            ("rate_min", self.rate_min),
            ("rate_max", self.rate_max),
            ("night_rate_mult", self.night_rate_mult),
            ("home_drink_frac", self.home_drink_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.rate_max <= 0.0 {
            return cfg("rate_max must be positive".into());
        }
        for (lo, hi, name) in [
            (self.work_prob_min, self.work_prob_max, "work_prob"),
            (self.bar_affinity_min, self.bar_affinity_max, "bar_affinity"),
            (self.rate_min, self.rate_max, "rate"),
        ] {
            if lo > hi {
                return cfg(format!("{name} range is inverted ({lo} > {hi})"));
            }
        }
        if self.strata.iter().any(|w| *w < 0.0 || !w.is_finite()) || self.strata.iter().sum::<f64>() <= 0.0 {
            return cfg("strata weights must be non-negative with positive sum".into());
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.origin_lat, self.origin_lon, self.cell_size_m)
    }
}

/// Per-user ground truth recorded in the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserTruth {
    pub user: String,
    pub home_cell: String,
    pub home_lat: f64,
    pub home_lon: f64,
    pub n_tweets: u64,
}

/// Ground truth and realized statistics for one generated world.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub users: Vec<UserTruth>,
    /// Realized post counts per stratum (neutral/decoy/mention/past/now).
    pub strata: BTreeMap<String, u64>,
    /// Late-night posts and how many of them were sent from home.
    pub night_tweets: u64,
    pub night_home_tweets: u64,
    /// "Drinking now" posts and how many were sent from home.
    pub now_tweets: u64,
    pub now_home_tweets: u64,
    /// Outlet count per cell id.
    pub outlet_cells: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outlet {
    pub lat: f64,
    pub lon: f64,
    pub name: String,
}

/// A generated world held in memory.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub grid: GridSpec,
    pub records: Vec<TweetRecord>,
    pub outlets: Vec<Outlet>,
    pub manifest: Manifest,
}

impl World {
    /// View the corpus as a dataset over the generating grid.
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.records.clone(), self.grid)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Stratum {
    Neutral,
    Decoy,
    Mention,
    Past,
    Now,
}

impl Stratum {
    fn name(self) -> &'static str {
        match self {
            Stratum::Neutral => "neutral",
            Stratum::Decoy => "decoy",
            Stratum::Mention => "mention",
            Stratum::Past => "past",
            Stratum::Now => "now",
        }
    }

    fn gold(self, at_home: bool) -> GoldLabels {
        let (q1, q2, q3) = match self {
            Stratum::Neutral => (None, None, None),
            Stratum::Decoy => (Some(false), None, None),
            Stratum::Mention => (Some(true), Some(false), None),
            Stratum::Past => (Some(true), Some(true), Some(false)),
            Stratum::Now => (Some(true), Some(true), Some(true)),
        };
        GoldLabels {
            q1,
            q2,
            q3,
            home: Some(at_home),
        }
    }

    fn text(self, rng: &mut ChaCha8Rng) -> String {
        let pool: &[&str] = match self {
            Stratum::Neutral => &NEUTRAL_TEXTS,
            Stratum::Decoy => &DECOY_TEXTS,
            Stratum::Mention => &MENTION_TEXTS,
            Stratum::Past => &PAST_TEXTS,
            Stratum::Now => &NOW_TEXTS,
        };
        let template = pool[rng.random_range(0..pool.len())];
        if template.contains("{d}") {
            template.replace("{d}", DRINKS[rng.random_range(0..DRINKS.len())])
        } else {
            template.to_string()
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn weighted_choice(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

struct Agent {
    home: GridCell,
    work: GridCell,
    favorites: Vec<usize>,
    work_prob: f64,
    bar_affinity: f64,
    rate: f64,
}

/// Generate a world. The RNG stream is a single seeded sequence, so the
/// output is a pure function of the spec.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let grid = spec.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.world_cells;
    let random_cell = |rng: &mut ChaCha8Rng| GridCell::new(rng.random_range(0..side), rng.random_range(0..side));

    // Outlets cluster into venue cells; venues get a fixed in-cell point
    // where visits land.
    let mut venue_pool = Vec::new();
    while venue_pool.len() < spec.venue_cells.min((side as usize).pow(2)) {
        let c = random_cell(&mut rng);
        if !venue_pool.contains(&c) {
            venue_pool.push(c);
        }
    }
    let mut outlet_cells: BTreeMap<String, u32> = BTreeMap::new();
    let mut outlets = Vec::with_capacity(spec.outlets);
    let mut venue_weight: BTreeMap<GridCell, u32> = BTreeMap::new();
    for i in 0..spec.outlets {
        let cell = venue_pool[rng.random_range(0..venue_pool.len())];
        let (lat, lon) = grid.point_in_cell(cell, uniform(&mut rng, 0.1, 0.9), uniform(&mut rng, 0.1, 0.9));
        outlets.push(Outlet {
            lat,
            lon,
            name: format!("outlet_{i:03}"),
        });
        *outlet_cells.entry(cell.id()).or_insert(0) += 1;
        *venue_weight.entry(cell).or_insert(0) += 1;
    }
    let venues: Vec<(GridCell, f64, f64)> = venue_weight
        .keys()
        .map(|&c| {
            let (lat, lon) = grid.point_in_cell(c, uniform(&mut rng, 0.1, 0.9), uniform(&mut rng, 0.1, 0.9));
            (c, lat, lon)
        })
        .collect();
    let venue_weights: Vec<f64> = venues.iter().map(|(c, _, _)| venue_weight[c] as f64).collect();

    let cheb = |a: GridCell, b: GridCell| (a.ix - b.ix).abs().max((a.iy - b.iy).abs());
    let near_home = |home: GridCell, radius_m: f64| -> Vec<GridCell> {
        let r = (radius_m / spec.cell_size_m) as i32;
        let mut out = Vec::new();
        for ix in (home.ix - r).max(0)..=(home.ix + r).min(side - 1) {
            for iy in (home.iy - r).max(0)..=(home.iy + r).min(side - 1) {
                let c = GridCell::new(ix, iy);
                if c != home {
                    out.push(c);
                }
            }
        }
        out
    };

    let width = (spec.users.max(2) - 1).ilog10() as usize + 1;
    let mut agents = Vec::with_capacity(spec.users);
    for _ in 0..spec.users {
        let home = random_cell(&mut rng);
        let mut work = loop {
            let c = random_cell(&mut rng);
            if c != home || side == 1 {
                break c;
            }
        };
        // The locality overrides below consume randomness only when their
        // knob is on, so worlds with the knobs off keep their byte streams.
        if spec.work_radius_m > 0.0 {
            let near = near_home(home, spec.work_radius_m);
            if !near.is_empty() {
                work = near[rng.random_range(0..near.len())];
            }
        }
        let mut favorites = vec![weighted_choice(&mut rng, &venue_weights)];
        let second = weighted_choice(&mut rng, &venue_weights);
        if !favorites.contains(&second) {
            favorites.push(second);
        }
        if spec.venue_radius_m > 0.0 {
            let r = (spec.venue_radius_m / spec.cell_size_m) as i32;
            let near: Vec<usize> = (0..venues.len()).filter(|&i| cheb(venues[i].0, home) <= r).collect();
            if !near.is_empty() {
                let w: Vec<f64> = near.iter().map(|&i| venue_weights[i]).collect();
                favorites = vec![near[weighted_choice(&mut rng, &w)]];
                let second = near[weighted_choice(&mut rng, &w)];
                if !favorites.contains(&second) {
                    favorites.push(second);
                }
            }
        }
        agents.push(Agent {
            home,
            work,
            favorites,
            work_prob: uniform(&mut rng, spec.work_prob_min, spec.work_prob_max),
            bar_affinity: uniform(&mut rng, spec.bar_affinity_min, spec.bar_affinity_max),
            rate: uniform(&mut rng, spec.rate_min, spec.rate_max),
        });
    }

    let mut records = Vec::new();
    let mut manifest = Manifest {
        seed: spec.seed,
        users: Vec::with_capacity(spec.users),
        strata: [
            Stratum::Neutral,
            Stratum::Decoy,
            Stratum::Mention,
            Stratum::Past,
            Stratum::Now,
        ]
        .iter()
        .map(|s| (s.name().to_string(), 0))
        .collect(),
        night_tweets: 0,
        night_home_tweets: 0,
        now_tweets: 0,
        now_home_tweets: 0,
        outlet_cells,
    };

    for (ui, agent) in agents.iter().enumerate() {
        let user = format!("u{ui:0width$}");
        let mut n_tweets = 0u64;
        for day in 0..spec.days {
            for hod in 0..24u32 {
                let p = agent.rate * if hod <= 6 { spec.night_rate_mult } else { 1.0 };
                if p <= 0.0 || !rng.random_bool(p.min(1.0)) {
                    continue;
                }
                let mut stratum = match weighted_choice(&mut rng, &spec.strata) {
                    0 => Stratum::Neutral,
                    1 => Stratum::Decoy,
                    2 => Stratum::Mention,
                    3 => Stratum::Past,
                    _ => Stratum::Now,
                };
                // In-the-moment posts happen in waking hours only, which
                // keeps the late-night location rule a pure function of
                // night_home_prob.
                if stratum == Stratum::Now && !(10..=23).contains(&hod) {
                    stratum = Stratum::Past;
                }
                let venue_of = |rng: &mut ChaCha8Rng, agent: &Agent| {
                    agent.favorites[rng.random_range(0..agent.favorites.len())]
                };
                enum Place {
                    Home,
                    Work,
                    Venue(usize),
                }
                let place = if stratum == Stratum::Now {
                    if rng.random_bool(spec.home_drink_frac) {
                        Place::Home
                    } else {
                        Place::Venue(venue_of(&mut rng, agent))
                    }
                } else if hod <= 6 {
                    if rng.random_bool(spec.night_home_prob) {
                        Place::Home
                    } else {
                        Place::Venue(venue_of(&mut rng, agent))
                    }
                } else if (7..=17).contains(&hod) {
                    if rng.random_bool(agent.work_prob) {
                        Place::Work
                    } else {
                        Place::Home
                    }
                } else if rng.random_bool(agent.bar_affinity) {
                    Place::Venue(venue_of(&mut rng, agent))
                } else {
                    Place::Home
                };
                let (lat, lon, at_home) = match place {
                    Place::Home => {
                        let (lat, lon) = grid.cell_center(agent.home);
                        (lat, lon, true)
                    }
                    Place::Work => {
                        let (lat, lon) = grid.cell_center(agent.work);
                        (lat, lon, false)
                    }
                    Place::Venue(v) => (venues[v].1, venues[v].2, false),
                };
                let local_sec = LOCAL_EPOCH
                    + ((day * 24 + hod as usize) * 3600) as i64
                    + rng.random_range(0..3600) as i64;
                let ts = local_sec - spec.tz_offset_min as i64 * 60;
                let text = stratum.text(&mut rng);
                records.push(TweetRecord {
                    user: user.clone(),
                    ts,
                    tz_offset_min: spec.tz_offset_min,
                    lat,
                    lon,
                    text,
                    gold: Some(stratum.gold(at_home)),
                });
                n_tweets += 1;
                *manifest.strata.get_mut(stratum.name()).unwrap() += 1;
                if hod <= 6 {
                    manifest.night_tweets += 1;
                    if at_home {
                        manifest.night_home_tweets += 1;
                    }
                }
                if stratum == Stratum::Now {
                    manifest.now_tweets += 1;
                    if at_home {
                        manifest.now_home_tweets += 1;
                    }
                }
            }
        }
        let (home_lat, home_lon) = grid.cell_center(agent.home);
        manifest.users.push(UserTruth {
            user,
            home_cell: agent.home.id(),
            home_lat,
            home_lon,
            n_tweets,
        });
    }

    Ok(World {
        spec: spec.clone(),
        grid,
        records,
        outlets,
        manifest,
    })
}

/// Write corpus.jsonl, outlets.csv, manifest.json, and keywords.txt.
pub fn write_world(world: &World, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io_err = |e| Error::io(dir, e);

    let mut corpus = String::new();
    for r in &world.records {
        corpus.push_str(&serde_json::to_string(r).expect("record serializes"));
        corpus.push('\n');
    }
    std::fs::write(dir.join("corpus.jsonl"), corpus).map_err(io_err)?;

    let mut outlets = String::from("lat,lon,name\n");
    for o in &world.outlets {
        outlets.push_str(&format!("{},{},{}\n", o.lat, o.lon, o.name));
    }
    std::fs::write(dir.join("outlets.csv"), outlets).map_err(io_err)?;

    let manifest = serde_json::to_string_pretty(&world.manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), manifest).map_err(io_err)?;

    let mut keywords = String::new();
    for k in KEYWORDS {
        keywords.push_str(k);
        keywords.push('\n');
    }
    std::fs::write(dir.join("keywords.txt"), keywords).map_err(io_err)
}

/// Read a manifest back.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.into(),
        line: 0,
        msg: format!("manifest: {e}"),
    })
}
