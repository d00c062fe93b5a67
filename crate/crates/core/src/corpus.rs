//! Corpus loading, validation, and the spatial grid.
//!
//! Input corpora are JSON lines, one post per line:
//!
//! ```json
//! {"user":"u01","ts":1700000000,"tz_offset_min":-300,"lat":40.74,"lon":-73.98,
//!  "text":"...","gold":{"q1":"yes","q2":"no","home":true}}
//! ```
//!
//! `ts` is UTC epoch seconds; `tz_offset_min` the fixed local offset of the
//! posting device. The optional `gold` block carries annotation labels:
//! `q1` (mentions the activity), `q2` (the author is doing it), `q3` (doing it
//! at posting time), each `"yes"`/`"no"`, and `home` (posted from home).
//!
//! The grid is a local equirectangular projection about a fixed origin: one
//! degree of latitude is 110,574 m, one degree of longitude 111,320 m scaled
//! by cos(origin latitude). Cells are axis-aligned squares indexed by signed
//! integer pairs; the cell id is the string `"ix:iy"`.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Meters per degree of latitude.
pub const M_PER_DEG_LAT: f64 = 110_574.0;
/// Meters per degree of longitude at the equator.
pub const M_PER_DEG_LON_EQ: f64 = 111_320.0;
/// Default cell edge in meters.
pub const DEFAULT_CELL_SIZE_M: f64 = 100.0;
/// Default activity floor for [`active_users`].
pub const DEFAULT_MIN_TWEETS: usize = 5;

mod yesno {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(true) => s.serialize_str("yes"),
            Some(false) => s.serialize_str("no"),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        raw.map(|s| match s.as_str() {
            "yes" => Ok(true),
            "no" => Ok(false),
            other => Err(serde::de::Error::custom(format!(
                "expected \"yes\" or \"no\", got {other:?}"
            ))),
        })
        .transpose()
    }
}

/// Annotation labels attached to a post. Absent answers are unknown, not negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldLabels {
    #[serde(default, with = "yesno", skip_serializing_if = "Option::is_none")]
    pub q1: Option<bool>,
    #[serde(default, with = "yesno", skip_serializing_if = "Option::is_none")]
    pub q2: Option<bool>,
    #[serde(default, with = "yesno", skip_serializing_if = "Option::is_none")]
    pub q3: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<bool>,
}

impl GoldLabels {
    /// Answers must be hierarchically consistent: q2 may only be asked when
    /// q1 is yes, q3 only when q2 is yes.
    pub fn consistent(&self) -> bool {
        (self.q2.is_none() || self.q1 == Some(true))
            && (self.q3.is_none() || self.q2 == Some(true))
    }
}

/// One geotagged post.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TweetRecord {
    pub user: String,
    pub ts: i64,
    pub tz_offset_min: i32,
    pub lat: f64,
    pub lon: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldLabels>,
}

impl TweetRecord {
    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} out of range", self.lat));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} out of range", self.lon));
        }
        if self.user.is_empty() {
            return Err("empty user id".into());
        }
        if self.tz_offset_min.abs() > 18 * 60 {
            return Err(format!("tz_offset_min {} out of range", self.tz_offset_min));
        }
        if let Some(g) = &self.gold {
            if !g.consistent() {
                return Err("gold labels violate the q1 >= q2 >= q3 hierarchy".into());
            }
        }
        Ok(())
    }
}

/// A grid cell, identified by signed column (east) and row (north) indices.
///
/// Ordering is lexicographic over the `"ix:iy"` id string so that every
/// deterministic tie-break and map iteration in the crate agrees with the
/// serialized form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridCell {
    pub ix: i32,
    pub iy: i32,
}

impl GridCell {
    pub fn new(ix: i32, iy: i32) -> Self {
        GridCell { ix, iy }
    }

    /// Canonical id string, `"ix:iy"`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.ix, self.iy)
    }

    /// Parse an `"ix:iy"` id.
    pub fn parse(id: &str) -> Option<Self> {
        let (a, b) = id.split_once(':')?;
        Some(GridCell {
            ix: a.parse().ok()?,
            iy: b.parse().ok()?,
        })
    }

    fn id_bytes(&self) -> ([u8; 24], usize) {
        use std::io::Write;
        let mut buf = [0u8; 24];
        let mut cur: &mut [u8] = &mut buf;
        let _ = write!(cur, "{}:{}", self.ix, self.iy);
        let n = 24 - cur.len();
        (buf, n)
    }
}

impl Ord for GridCell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let (a, an) = self.id_bytes();
        let (b, bn) = other.id_bytes();
        a[..an].cmp(&b[..bn])
    }
}

impl PartialOrd for GridCell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for GridCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.ix, self.iy)
    }
}

/// Grid definition: projection origin and cell edge length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
}

impl GridSpec {
    pub fn new(origin_lat: f64, origin_lon: f64, cell_size_m: f64) -> Result<Self> {
        if !origin_lat.is_finite() || !(-90.0..=90.0).contains(&origin_lat) {
            return Err(Error::Config {
                msg: format!("grid origin latitude {origin_lat} out of range"),
            });
        }
        if !origin_lon.is_finite() || !(-180.0..=180.0).contains(&origin_lon) {
            return Err(Error::Config {
                msg: format!("grid origin longitude {origin_lon} out of range"),
            });
        }
        if !cell_size_m.is_finite() || cell_size_m <= 0.0 {
            return Err(Error::Config {
                msg: format!("cell size {cell_size_m} must be positive"),
            });
        }
        Ok(GridSpec {
            origin_lat,
            origin_lon,
            cell_size_m,
        })
    }

    fn m_per_deg_lon(&self) -> f64 {
        M_PER_DEG_LON_EQ * self.origin_lat.to_radians().cos()
    }

    /// Project a point to meters east and north of the origin.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let east = (lon - self.origin_lon) * self.m_per_deg_lon();
        let north = (lat - self.origin_lat) * M_PER_DEG_LAT;
        (east, north)
    }

    /// Map a point to its containing cell.
    pub fn assign(&self, lat: f64, lon: f64) -> Result<GridCell> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon)
        {
            return Err(Error::OutOfArea { lat, lon });
        }
        let (east, north) = self.project(lat, lon);
        let ix = (east / self.cell_size_m).floor();
        let iy = (north / self.cell_size_m).floor();
        if ix < i32::MIN as f64 || ix > i32::MAX as f64 || iy < i32::MIN as f64 || iy > i32::MAX as f64 {
            return Err(Error::OutOfArea { lat, lon });
        }
        Ok(GridCell::new(ix as i32, iy as i32))
    }

    /// Latitude/longitude of a cell's center.
    pub fn cell_center(&self, cell: GridCell) -> (f64, f64) {
        self.point_in_cell(cell, 0.5, 0.5)
    }

    /// Latitude/longitude at fractional offsets (fx east, fy north) within a
    /// cell. Offsets strictly inside (0, 1) stay inside the cell.
    pub fn point_in_cell(&self, cell: GridCell, fx: f64, fy: f64) -> (f64, f64) {
        let east = (cell.ix as f64 + fx) * self.cell_size_m;
        let north = (cell.iy as f64 + fy) * self.cell_size_m;
        (
            self.origin_lat + north / M_PER_DEG_LAT,
            self.origin_lon + east / self.m_per_deg_lon(),
        )
    }

    /// Closed corner ring of a cell, counter-clockwise from the southwest,
    /// as (lat, lon) pairs. The first corner is repeated at the end.
    pub fn cell_ring(&self, cell: GridCell) -> [(f64, f64); 5] {
        let w = cell.ix as f64 * self.cell_size_m;
        let s = cell.iy as f64 * self.cell_size_m;
        let e = w + self.cell_size_m;
        let n = s + self.cell_size_m;
        let to_ll = |east: f64, north: f64| {
            (
                self.origin_lat + north / M_PER_DEG_LAT,
                self.origin_lon + east / self.m_per_deg_lon(),
            )
        };
        [to_ll(w, s), to_ll(e, s), to_ll(e, n), to_ll(w, n), to_ll(w, s)]
    }
}

/// Half-open hour interval `[start, end)` in whole UTC epoch hours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: i64,
    pub end: i64,
}

impl HourRange {
    pub fn len(&self) -> usize {
        (self.end - self.start).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Epoch hour containing an epoch-second timestamp.
pub fn epoch_hour(ts: i64) -> i64 {
    ts.div_euclid(3600)
}

/// A loaded corpus: records sorted by (user, ts), the grid they were
/// validated against, and the hour range covering every record.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<TweetRecord>,
    pub grid: GridSpec,
    pub period: HourRange,
}

impl Dataset {
    /// Build a dataset from records already validated against `grid`.
    /// Records are sorted and the covering period computed here.
    pub fn new(mut records: Vec<TweetRecord>, grid: GridSpec) -> Self {
        records.sort_by(|a, b| a.user.cmp(&b.user).then(a.ts.cmp(&b.ts)));
        let period = match (records.iter().map(|r| r.ts).min(), records.iter().map(|r| r.ts).max()) {
            (Some(lo), Some(hi)) => HourRange {
                start: epoch_hour(lo),
                end: epoch_hour(hi) + 1,
            },
            _ => HourRange { start: 0, end: 0 },
        };
        Dataset {
            records,
            grid,
            period,
        }
    }

    /// Iterate users in id order with their (time-sorted) record slice.
    pub fn user_slices(&self) -> UserSlices<'_> {
        UserSlices {
            records: &self.records,
            pos: 0,
        }
    }

    /// All records of one user (empty if unknown). Binary search over the
    /// (user, ts) sort order.
    pub fn user_records(&self, user: &str) -> &[TweetRecord] {
        let lo = self.records.partition_point(|r| r.user.as_str() < user);
        let hi = self.records.partition_point(|r| r.user.as_str() <= user);
        &self.records[lo..hi]
    }
}

pub struct UserSlices<'a> {
    records: &'a [TweetRecord],
    pos: usize,
}

impl<'a> Iterator for UserSlices<'a> {
    type Item = (&'a str, &'a [TweetRecord]);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.records.len() {
            return None;
        }
        let start = self.pos;
        let user = self.records[start].user.as_str();
        let mut end = start + 1;
        while end < self.records.len() && self.records[end].user == user {
            end += 1;
        }
        self.pos = end;
        Some((user, &self.records[start..end]))
    }
}

/// One rejected input line.
#[derive(Clone, Debug)]
pub struct LineError {
    pub line: usize,
    pub msg: String,
}

/// Load summary: how many lines were seen, kept, and rejected.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub total_lines: usize,
    pub loaded: usize,
    pub malformed: Vec<LineError>,
}

/// Read a JSON-lines corpus. Malformed lines (bad JSON, schema violations,
/// out-of-range coordinates, inconsistent gold labels) are collected with
/// their line numbers; if they exceed 10% of the input the whole load fails.
pub fn load_tweets(path: &Path, grid: GridSpec) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut report = LoadReport::default();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        let parsed: std::result::Result<TweetRecord, String> = serde_json::from_str::<TweetRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| {
                rec.validate()?;
                grid.assign(rec.lat, rec.lon).map_err(|e| e.to_string())?;
                Ok(rec)
            });
        match parsed {
            Ok(rec) => {
                records.push(rec);
                report.loaded += 1;
            }
            Err(msg) => report.malformed.push(LineError { line: lineno, msg }),
        }
    }

    if report.total_lines > 0 && report.malformed.len() * 10 > report.total_lines {
        let first = &report.malformed[0];
        return Err(Error::TooManyMalformed {
            path: path.to_path_buf(),
            bad: report.malformed.len(),
            total: report.total_lines,
            first_line: first.line,
            first_msg: first.msg.clone(),
        });
    }

    Ok((Dataset::new(records, grid), report))
}

/// Users with at least `min_tweets` records.
pub fn active_users(ds: &Dataset, min_tweets: usize) -> BTreeSet<String> {
    ds.user_slices()
        .filter(|(_, recs)| recs.len() >= min_tweets)
        .map(|(u, _)| u.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::io::Write;

    fn grid() -> GridSpec {
        GridSpec::new(40.7, -74.0, 100.0).unwrap()
    }

    fn point_at(g: &GridSpec, east: f64, north: f64) -> (f64, f64) {
        (
            g.origin_lat + north / M_PER_DEG_LAT,
            g.origin_lon + east / (M_PER_DEG_LON_EQ * g.origin_lat.to_radians().cos()),
        )
    }

    #[test]
    fn origin_maps_to_cell_zero() {
        let g = grid();
        assert_eq!(g.assign(g.origin_lat, g.origin_lon).unwrap(), GridCell::new(0, 0));
    }

    #[test]
    fn offset_point_maps_to_expected_cell() {
        let g = grid();
        let (lat, lon) = point_at(&g, 150.0, 50.0);
        assert_eq!(g.assign(lat, lon).unwrap(), GridCell::new(1, 0));
    }

    #[test]
    fn assign_agrees_with_nearest_center_search() {
        // Independent check: the containing cell of a point must also be the
        // cell whose center is nearest in projected meters. Points are drawn
        // over a 2 km x 2 km area centered on the origin, so negative indices
        // are exercised too.
        let g = grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let east: f64 = rng.random_range(-1000.0..1000.0);
            let north: f64 = rng.random_range(-1000.0..1000.0);
            let (lat, lon) = point_at(&g, east, north);
            let got = g.assign(lat, lon).unwrap();

            let (pe, pn) = g.project(lat, lon);
            let mut best = GridCell::new(i32::MIN, i32::MIN);
            let mut best_d = f64::INFINITY;
            for ix in -12..12 {
                for iy in -12..12 {
                    let cx = (ix as f64 + 0.5) * g.cell_size_m;
                    let cy = (iy as f64 + 0.5) * g.cell_size_m;
                    let d = (pe - cx).powi(2) + (pn - cy).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = GridCell::new(ix, iy);
                    }
                }
            }
            assert_eq!(got, best, "disagreement at east={east} north={north}");
        }
    }

    #[test]
    fn cell_center_round_trips() {
        let g = grid();
        for cell in [GridCell::new(0, 0), GridCell::new(3, -2), GridCell::new(-7, 11)] {
            let (lat, lon) = g.cell_center(cell);
            assert_eq!(g.assign(lat, lon).unwrap(), cell);
        }
    }

    #[test]
    fn cell_id_round_trips() {
        for cell in [GridCell::new(0, 0), GridCell::new(-3, 17), GridCell::new(2147, -9)] {
            assert_eq!(GridCell::parse(&cell.id()), Some(cell));
        }
        assert_eq!(GridCell::parse("1:2:3"), None);
        assert_eq!(GridCell::parse("a:2"), None);
    }

    #[test]
    fn cell_order_is_lexicographic_over_ids() {
        let mut cells = vec![
            GridCell::new(10, 0),
            GridCell::new(2, 0),
            GridCell::new(-1, 5),
            GridCell::new(2, -3),
        ];
        cells.sort();
        let ids: Vec<String> = cells.iter().map(|c| c.id()).collect();
        let mut expect: Vec<String> = ids.clone();
        expect.sort();
        assert_eq!(ids, expect);
    }

    #[test]
    fn out_of_range_points_are_rejected() {
        let g = grid();
        assert!(g.assign(91.0, 0.0).is_err());
        assert!(g.assign(40.7, -181.0).is_err());
        assert!(g.assign(f64::NAN, 0.0).is_err());
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    const OK_LINE: &str = r#"{"user":"u1","ts":1700000000,"tz_offset_min":-300,"lat":40.701,"lon":-73.999,"text":"hello"}"#;

    #[test]
    fn loads_well_formed_lines_and_sorts() {
        let f = write_lines(&[
            r#"{"user":"u2","ts":1700000300,"tz_offset_min":0,"lat":40.702,"lon":-73.998,"text":"b"}"#,
            r#"{"user":"u1","ts":1700000400,"tz_offset_min":0,"lat":40.702,"lon":-73.998,"text":"c"}"#,
            r#"{"user":"u1","ts":1700000000,"tz_offset_min":0,"lat":40.701,"lon":-73.999,"text":"a"}"#,
        ]);
        let (ds, rep) = load_tweets(f.path(), grid()).unwrap();
        assert_eq!(rep.loaded, 3);
        assert!(rep.malformed.is_empty());
        let order: Vec<(&str, i64)> = ds.records.iter().map(|r| (r.user.as_str(), r.ts)).collect();
        assert_eq!(order, vec![("u1", 1700000000), ("u1", 1700000400), ("u2", 1700000300)]);
        assert_eq!(ds.period.start, epoch_hour(1700000000));
        assert_eq!(ds.period.end, epoch_hour(1700000400) + 1);
    }

    #[test]
    fn malformed_lines_are_reported_with_numbers() {
        let f = write_lines(&[
            OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE,
            "{not json",
        ]);
        let (ds, rep) = load_tweets(f.path(), grid()).unwrap();
        assert_eq!(ds.records.len(), 9);
        assert_eq!(rep.malformed.len(), 1);
        assert_eq!(rep.malformed[0].line, 10);
    }

    #[test]
    fn too_many_malformed_lines_fail_the_load() {
        let f = write_lines(&[OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, OK_LINE, "{", "{"]);
        match load_tweets(f.path(), grid()) {
            Err(Error::TooManyMalformed { bad, total, .. }) => {
                assert_eq!((bad, total), (2, 10));
            }
            other => panic!("expected TooManyMalformed, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_gold_is_malformed() {
        let f = write_lines(&[
            r#"{"user":"u1","ts":1,"tz_offset_min":0,"lat":40.701,"lon":-73.999,"text":"a","gold":{"q2":"yes"}}"#,
        ]);
        match load_tweets(f.path(), grid()) {
            Err(Error::TooManyMalformed { bad, total, .. }) => assert_eq!((bad, total), (1, 1)),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn gold_yes_no_round_trips() {
        let rec: TweetRecord = serde_json::from_str(
            r#"{"user":"u1","ts":1,"tz_offset_min":0,"lat":40.701,"lon":-73.999,"text":"a",
                "gold":{"q1":"yes","q2":"no","home":false}}"#,
        )
        .unwrap();
        let g = rec.gold.unwrap();
        assert_eq!((g.q1, g.q2, g.q3, g.home), (Some(true), Some(false), None, Some(false)));
        let back = serde_json::to_string(&g).unwrap();
        assert_eq!(back, r#"{"q1":"yes","q2":"no","home":false}"#);
    }

    #[test]
    fn active_users_applies_the_floor() {
        let mut lines = Vec::new();
        let mk = |u: &str, ts: i64| {
            format!(r#"{{"user":"{u}","ts":{ts},"tz_offset_min":0,"lat":40.701,"lon":-73.999,"text":"x"}}"#)
        };
        for i in 0..5 {
            lines.push(mk("busy", i));
        }
        for i in 0..4 {
            lines.push(mk("quiet", i));
        }
        let owned: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let f = write_lines(&owned);
        let (ds, _) = load_tweets(f.path(), grid()).unwrap();
        let act = active_users(&ds, 5);
        assert!(act.contains("busy"));
        assert!(!act.contains("quiet"));
    }
}
