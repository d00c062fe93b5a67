//! Downstream geospatial analytics: activity heatmaps over the grid,
//! correlation of activity density with outlet counts, and histograms of
//! tweet-to-home distances.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cascade::ActivityLabel;
use crate::corpus::{GridCell, GridSpec, TweetRecord};
use crate::error::{Error, Result};
use crate::homeloc::HomePrediction;

/// Cells with fewer now-positives than this are left out of heatmaps.
pub const DEFAULT_MIN_POS: u32 = 5;

/// Mean Earth radius in meters for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Lower bin edges in meters; the last bin is open-ended.
pub const DEFAULT_BIN_EDGES: [f64; 7] = [0.0, 100.0, 250.0, 500.0, 1000.0, 2000.0, 5000.0];

/// Per-cell tweet tallies with the now-positive proportion.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellHeat {
    pub total: u32,
    pub positive: u32,
    pub heat: f64,
}

/// Heatmap over occupied grid cells. `cells` holds the reportable cells;
/// cells falling under the positive threshold stay in `excluded` so that
/// recounts and whole-support correlations still see every tweet.
#[derive(Clone, Debug, Default)]
pub struct HeatmapGrid {
    pub cells: BTreeMap<GridCell, CellHeat>,
    pub excluded: BTreeMap<GridCell, CellHeat>,
}

impl HeatmapGrid {
    /// Now-positive tweets across included and excluded cells.
    pub fn positive_total(&self) -> u64 {
        self.cells
            .values()
            .chain(self.excluded.values())
            .map(|c| c.positive as u64)
            .sum()
    }

    /// All occupied cells in id order, included or not.
    pub fn all_cells(&self) -> impl Iterator<Item = (&GridCell, &CellHeat)> {
        let mut v: Vec<_> = self.cells.iter().chain(self.excluded.iter()).collect();
        v.sort_by_key(|(c, _)| *c);
        v.into_iter()
    }
}

/// Tally classified tweets per cell and keep cells with at least `min_pos`
/// now-positives; the rest are tracked separately.
pub fn build_heatmap<'a, I>(tweets: I, grid: &GridSpec, min_pos: u32) -> Result<HeatmapGrid>
where
    I: IntoIterator<Item = (&'a TweetRecord, ActivityLabel)>,
{
    let mut tallies: BTreeMap<GridCell, (u32, u32)> = BTreeMap::new();
    for (rec, label) in tweets {
        let cell = grid.assign(rec.lat, rec.lon)?;
        let entry = tallies.entry(cell).or_insert((0, 0));
        entry.0 += 1;
        if label == ActivityLabel::UserDrinkingNow {
            entry.1 += 1;
        }
    }
    let mut out = HeatmapGrid::default();
    for (cell, (total, positive)) in tallies {
        let heat = CellHeat {
            total,
            positive,
            heat: positive as f64 / total as f64,
        };
        if positive < min_pos {
            out.excluded.insert(cell, heat);
        } else {
            out.cells.insert(cell, heat);
        }
    }
    Ok(out)
}

/// Outlet locations bucketed into grid cells.
#[derive(Clone, Debug, Default)]
pub struct OutletTable {
    pub points: Vec<(f64, f64)>,
    counts: BTreeMap<GridCell, u32>,
}

impl OutletTable {
    /// Assign every outlet to its cell; points outside the study area are
    /// rejected.
    pub fn from_points(points: Vec<(f64, f64)>, grid: &GridSpec) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for &(lat, lon) in &points {
            *counts.entry(grid.assign(lat, lon)?).or_insert(0) += 1;
        }
        Ok(OutletTable { points, counts })
    }

    /// Read a `lat,lon[,name]` CSV; a non-numeric first line is treated as a
    /// header.
    pub fn load_csv(path: &Path, grid: &GridSpec) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let lat = fields.next().unwrap_or("").trim().parse::<f64>();
            let lon = fields.next().unwrap_or("").trim().parse::<f64>();
            match (lat, lon) {
                (Ok(lat), Ok(lon)) => points.push((lat, lon)),
                _ if i == 0 => continue,
                _ => {
                    return Err(Error::Malformed {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: "expected lat,lon[,name]".into(),
                    })
                }
            }
        }
        OutletTable::from_points(points, grid)
    }

    pub fn count(&self, cell: GridCell) -> u32 {
        self.counts.get(&cell).copied().unwrap_or(0)
    }

    pub fn cell_counts(&self) -> &BTreeMap<GridCell, u32> {
        &self.counts
    }
}

/// Pearson correlation with its two-sided t-test p-value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Which cells and which activity measure feed the correlation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CorrelateOptions {
    /// Restrict to heatmap-included cells instead of every occupied cell.
    pub heatmap_cells_only: bool,
    /// Correlate raw positive counts instead of the positive proportion.
    pub raw_positives: bool,
}

/// The paired per-cell series behind an outlet correlation: activity
/// density and outlet count, in cell id order.
pub fn correlation_series(
    heatmap: &HeatmapGrid,
    outlets: &OutletTable,
    opt: CorrelateOptions,
) -> (Vec<f64>, Vec<f64>) {
    let support: Vec<(&GridCell, &CellHeat)> = if opt.heatmap_cells_only {
        heatmap.cells.iter().collect()
    } else {
        heatmap.all_cells().collect()
    };
    let xs = support
        .iter()
        .map(|(_, h)| if opt.raw_positives { h.positive as f64 } else { h.heat })
        .collect();
    let ys = support.iter().map(|(c, _)| outlets.count(**c) as f64).collect();
    (xs, ys)
}

/// Correlate per-cell activity density with per-cell outlet counts over the
/// occupied cells of the heatmap.
pub fn correlate_outlets(
    heatmap: &HeatmapGrid,
    outlets: &OutletTable,
    opt: CorrelateOptions,
) -> Result<CorrelationResult> {
    let (xs, ys) = correlation_series(heatmap, outlets, opt);
    correlation(&xs, &ys)
}

/// Pearson r over paired series plus the two-sided p-value from a t-test
/// with n - 2 degrees of freedom.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    let n = xs.len();
    assert_eq!(n, ys.len(), "series lengths differ");
    if n < 3 {
        return Err(Error::UndefinedCorrelation {
            reason: format!("need at least 3 cells, got {n}"),
        });
    }
    let r = pearson(xs, ys)?;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(CorrelationResult { r, p_value, n })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation {
            reason: "a series has zero variance".into(),
        });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Estimate the two-sided p-value by shuffling `ys` and counting permuted
/// correlations at least as extreme as the observed one.
pub fn permutation_p(xs: &[f64], ys: &[f64], perms: usize, seed: u64) -> Result<f64> {
    let observed = pearson(xs, ys)?.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = ys.to_vec();
    let mut extreme = 0usize;
    for _ in 0..perms {
        shuffled.shuffle(&mut rng);
        if let Ok(r) = pearson(xs, &shuffled) {
            if r.abs() >= observed {
                extreme += 1;
            }
        }
    }
    Ok((extreme + 1) as f64 / (perms + 1) as f64)
}

/// Great-circle distance in meters between two (lat, lon) points.
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Counts of distances per bin; bin `i` spans `[edges[i], edges[i+1])` and
/// the final bin is open above.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl DistanceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin the home distance of every now-positive tweet whose author has a
/// known home; distances run to the center of the home cell.
pub fn distance_histogram<'a, I>(
    tweets: I,
    homes: &[HomePrediction],
    grid: &GridSpec,
    edges: &[f64],
) -> Result<DistanceHistogram>
where
    I: IntoIterator<Item = (&'a TweetRecord, ActivityLabel)>,
{
    if edges.is_empty() || edges[0] != 0.0 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config {
            msg: "histogram edges must start at 0 and increase strictly".into(),
        });
    }
    let centers: BTreeMap<&str, (f64, f64)> = homes
        .iter()
        .filter_map(|h| h.cell.map(|c| (h.user.as_str(), grid.cell_center(c))))
        .collect();
    let mut counts = vec![0u64; edges.len()];
    for (rec, label) in tweets {
        if label != ActivityLabel::UserDrinkingNow {
            continue;
        }
        let Some(&center) = centers.get(rec.user.as_str()) else {
            continue;
        };
        let d = haversine((rec.lat, rec.lon), center);
        let bin = edges.partition_point(|&e| e <= d).saturating_sub(1);
        counts[bin] += 1;
    }
    Ok(DistanceHistogram {
        edges: edges.to_vec(),
        counts,
    })
}

/// GeoJSON FeatureCollection of the included cells' polygons with
/// `{total, positive, heat}` properties.
pub fn heatmap_geojson(heatmap: &HeatmapGrid, grid: &GridSpec) -> serde_json::Value {
    let features: Vec<serde_json::Value> = heatmap
        .cells
        .iter()
        .map(|(cell, heat)| {
            let ring: Vec<[f64; 2]> = grid
                .cell_ring(*cell)
                .iter()
                .map(|&(lat, lon)| [lon, lat])
                .collect();
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "cell": cell.id(),
                    "total": heat.total,
                    "positive": heat.positive,
                    "heat": heat.heat,
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_heatmap_geojson(heatmap: &HeatmapGrid, grid: &GridSpec, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(&heatmap_geojson(heatmap, grid))
        .expect("geojson serializes");
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// CSV twin of the GeoJSON output: one included cell per row with its center
/// coordinates and tallies.
pub fn write_heatmap_csv(heatmap: &HeatmapGrid, grid: &GridSpec, path: &Path) -> Result<()> {
    let mut out = String::from("cell,center_lat,center_lon,total,positive,heat\n");
    for (cell, heat) in &heatmap.cells {
        let (lat, lon) = grid.cell_center(*cell);
        out.push_str(&format!(
            "{},{lat},{lon},{},{},{}\n",
            cell.id(),
            heat.total,
            heat.positive,
            heat.heat
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row per bin as `lo_m,hi_m,count`; the open last bin prints `inf`.
pub fn write_histogram_csv(hist: &DistanceHistogram, path: &Path) -> Result<()> {
    let mut out = String::from("lo_m,hi_m,count\n");
    for (i, &count) in hist.counts.iter().enumerate() {
        let hi = match hist.edges.get(i + 1) {
            Some(e) => e.to_string(),
            None => "inf".into(),
        };
        out.push_str(&format!("{},{hi},{count}\n", hist.edges[i]));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
