//! Hourly location traces and per-cell mobility features.
//!
//! Each user's posts collapse into an hourly trace: one grid cell per hour
//! (the cell with the most check-ins that hour, ties broken by a seeded
//! hash), `None` for silent hours. From the trace we derive per-cell
//! features: check-in shares and their margins, late-night shares, daily
//! last-destination counts, 24 hourly profiles, and PageRank scores over the
//! weighted movement graph, forward and reversed. All local-time reasoning
//! uses the trace's UTC offset; a "day" runs from local 03:00 to 02:59 so
//! that after-midnight activity counts toward the evening that produced it.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{epoch_hour, Dataset, GridCell, GridSpec, HourRange, TweetRecord};
use crate::error::{Error, Result};

/// Local hours counted as late night: 00:00 through 06:59.
pub const LATE_NIGHT_END_HOUR: u32 = 6;
/// Local hour at which a day window opens.
pub const DAY_START_HOUR: i64 = 3;

pub const BASE_FEATURE_COUNT: usize = 32;
pub const EXTENDED_FEATURE_COUNT: usize = 38;

/// Indices into a feature row.
pub mod feat {
    /// Share of the user's check-ins in this cell, percent.
    pub const CHECKIN_PCT: usize = 0;
    /// Gap up to the next higher-ranked cell's share (0 for the top cell).
    pub const MARGIN_UP: usize = 1;
    /// Gap down to the next lower-ranked cell's share (own share at the bottom).
    pub const MARGIN_DOWN: usize = 2;
    /// Share of the user's late-night check-ins in this cell, percent.
    pub const LATE_NIGHT_PCT: usize = 3;
    /// Days on which this cell was the last destination.
    pub const LAST_DEST: usize = 4;
    /// Same, restricted to days without any late-night check-in.
    pub const LAST_DEST_QUIET: usize = 5;
    /// 24 per-hour shares follow, one per local hour of day.
    pub const HOURLY_BASE: usize = 6;
    /// PageRank over the movement graph.
    pub const PAGERANK: usize = 30;
    /// PageRank over the reversed movement graph.
    pub const REV_PAGERANK: usize = 31;
    /// Extended block: margins and 1-based ranks on the two PageRank scores.
    pub const PR_MARGIN_UP: usize = 32;
    pub const PR_MARGIN_DOWN: usize = 33;
    pub const RPR_MARGIN_UP: usize = 34;
    pub const RPR_MARGIN_DOWN: usize = 35;
    pub const PR_RANK: usize = 36;
    pub const RPR_RANK: usize = 37;
}

#[derive(Clone, Copy, Debug)]
pub struct MobilityConfig {
    /// Seed for the slot-winner tie hash.
    pub tie_seed: u64,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Emit the six extra PageRank margin/rank features.
    pub extended: bool,
    /// Divide the last-destination counts by the number of observed days.
    pub normalized_counts: bool,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            tie_seed: 0,
            damping: 0.85,
            tol: 1e-9,
            max_iter: 1000,
            extended: false,
            normalized_counts: false,
        }
    }
}

impl MobilityConfig {
    pub fn feature_count(&self) -> usize {
        if self.extended {
            EXTENDED_FEATURE_COUNT
        } else {
            BASE_FEATURE_COUNT
        }
    }
}

/// One user's hour-by-hour location over the observation period. Slot `s`
/// covers UTC hour `start_hour + s`; the offset comes from the user's first
/// record and fixes their local clock for the whole trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HourlyTrace {
    pub user: String,
    pub start_hour: i64,
    pub tz_offset_min: i32,
    pub slots: Vec<Option<GridCell>>,
}

impl HourlyTrace {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn local_sec(&self, slot: usize) -> i64 {
        (self.start_hour + slot as i64) * 3600 + self.tz_offset_min as i64 * 60
    }

    /// Local hour of day (0..24) of a slot.
    pub fn local_hour_of_day(&self, slot: usize) -> u32 {
        self.local_sec(slot).div_euclid(3600).rem_euclid(24) as u32
    }

    /// Index of the local day window (03:00 to 02:59) containing a slot.
    pub fn day_index(&self, slot: usize) -> i64 {
        (self.local_sec(slot) - DAY_START_HOUR * 3600).div_euclid(86400)
    }

    pub fn is_late_night(&self, slot: usize) -> bool {
        self.local_hour_of_day(slot) <= LATE_NIGHT_END_HOUR
    }

    /// Non-empty slots as (slot, cell) in time order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, GridCell)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(s, c)| c.map(|c| (s, c)))
    }
}

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for chunk in std::iter::once(&seed.to_le_bytes()[..]).chain(parts.iter().copied()) {
        for &b in chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn slot_winner(
    counts: &BTreeMap<GridCell, u32>,
    tie_seed: u64,
    user: &str,
    hour: i64,
) -> Option<GridCell> {
    let mut best: Option<(u32, u64, GridCell)> = None;
    for (&cell, &n) in counts {
        let id = cell.id();
        let h = fnv1a(tie_seed, &[user.as_bytes(), &hour.to_le_bytes(), id.as_bytes()]);
        let better = match best {
            None => true,
            Some((bn, bh, _)) => n > bn || (n == bn && h < bh),
        };
        if better {
            best = Some((n, h, cell));
        }
    }
    best.map(|(_, _, c)| c)
}

/// Collapse one user's records into an hourly trace over `period`.
pub fn build_hourly_trace(
    records: &[TweetRecord],
    period: HourRange,
    grid: &GridSpec,
    tie_seed: u64,
) -> Result<HourlyTrace> {
    let first = records.first().ok_or(Error::EmptyTrace {
        user: String::new(),
    })?;
    let user = first.user.clone();
    let len = (period.end - period.start).max(0) as usize;
    let mut counts: Vec<BTreeMap<GridCell, u32>> = vec![BTreeMap::new(); len];
    for r in records {
        let h = epoch_hour(r.ts);
        if h < period.start || h >= period.end {
            continue;
        }
        let cell = grid.assign(r.lat, r.lon)?;
        *counts[(h - period.start) as usize].entry(cell).or_insert(0) += 1;
    }
    let slots = counts
        .iter()
        .enumerate()
        .map(|(s, m)| slot_winner(m, tie_seed, &user, period.start + s as i64))
        .collect();
    Ok(HourlyTrace {
        user,
        start_hour: period.start,
        tz_offset_min: first.tz_offset_min,
        slots,
    })
}

/// Check-in share and its margins for one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckinStats {
    pub pct: f64,
    pub margin_up: f64,
    pub margin_down: f64,
}

/// Rank cells by (score desc, id asc) and compute the gaps to the ranked
/// neighbors plus the 1-based rank. The top cell's upward gap is 0; the
/// bottom cell's downward gap is its own score.
fn rank_margins(scores: &BTreeMap<GridCell, f64>) -> BTreeMap<GridCell, (f64, f64, usize)> {
    let mut order: Vec<(GridCell, f64)> = scores.iter().map(|(&c, &s)| (c, s)).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = BTreeMap::new();
    for (i, &(cell, s)) in order.iter().enumerate() {
        let up = if i == 0 { 0.0 } else { order[i - 1].1 - s };
        let down = if i + 1 == order.len() { s } else { s - order[i + 1].1 };
        out.insert(cell, (up, down, i + 1));
    }
    out
}

/// Per-cell check-in share (percent of non-empty slots) with rank margins.
pub fn checkin_stats(trace: &HourlyTrace) -> BTreeMap<GridCell, CheckinStats> {
    let mut counts: BTreeMap<GridCell, u32> = BTreeMap::new();
    for (_, cell) in trace.observed() {
        *counts.entry(cell).or_insert(0) += 1;
    }
    let total: u32 = counts.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let pct: BTreeMap<GridCell, f64> = counts
        .iter()
        .map(|(&c, &n)| (c, 100.0 * n as f64 / total as f64))
        .collect();
    rank_margins(&pct)
        .into_iter()
        .map(|(c, (up, down, _))| {
            (
                c,
                CheckinStats {
                    pct: pct[&c],
                    margin_up: up,
                    margin_down: down,
                },
            )
        })
        .collect()
}

/// Per-cell share of late-night check-ins, percent. All zeros when the user
/// has no late-night activity; keys are all visited cells either way.
pub fn late_night_share(trace: &HourlyTrace) -> BTreeMap<GridCell, f64> {
    let mut late: BTreeMap<GridCell, u32> = BTreeMap::new();
    let mut out: BTreeMap<GridCell, f64> = BTreeMap::new();
    let mut denom = 0u32;
    for (s, cell) in trace.observed() {
        out.entry(cell).or_insert(0.0);
        if trace.is_late_night(s) {
            *late.entry(cell).or_insert(0) += 1;
            denom += 1;
        }
    }
    if denom > 0 {
        for (cell, n) in late {
            out.insert(cell, 100.0 * n as f64 / denom as f64);
        }
    }
    out
}

fn day_windows(trace: &HourlyTrace) -> BTreeMap<i64, Vec<usize>> {
    let mut days: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (s, _) in trace.observed() {
        days.entry(trace.day_index(s)).or_default().push(s);
    }
    days
}

/// Number of day windows with at least one check-in.
pub fn observed_day_count(trace: &HourlyTrace) -> usize {
    day_windows(trace).len()
}

/// How many day windows end (last check-in of the window) in each cell.
/// Keys are all visited cells.
pub fn last_destination_counts(trace: &HourlyTrace) -> BTreeMap<GridCell, u32> {
    last_destinations(trace, false)
}

/// Same as [`last_destination_counts`] but only over day windows without any
/// late-night check-in. With no late-night activity at all the two agree.
pub fn quiet_last_destination_counts(trace: &HourlyTrace) -> BTreeMap<GridCell, u32> {
    last_destinations(trace, true)
}

fn last_destinations(trace: &HourlyTrace, quiet_only: bool) -> BTreeMap<GridCell, u32> {
    let mut out: BTreeMap<GridCell, u32> = trace.observed().map(|(_, c)| (c, 0)).collect();
    for slots in day_windows(trace).values() {
        if quiet_only && slots.iter().any(|&s| trace.is_late_night(s)) {
            continue;
        }
        if let Some(&last) = slots.last() {
            *out.get_mut(&trace.slots[last].unwrap()).unwrap() += 1;
        }
    }
    out
}

/// Per-cell share of check-ins for each local hour of day, percent. Shares
/// at an observed hour sum to 100 across cells; unobserved hours are all
/// zeros. Keys are all visited cells.
pub fn hourly_profiles(trace: &HourlyTrace) -> BTreeMap<GridCell, [f64; 24]> {
    let mut per_hour: Vec<BTreeMap<GridCell, u32>> = vec![BTreeMap::new(); 24];
    let mut out: BTreeMap<GridCell, [f64; 24]> = BTreeMap::new();
    for (s, cell) in trace.observed() {
        out.entry(cell).or_insert([0.0; 24]);
        *per_hour[trace.local_hour_of_day(s) as usize]
            .entry(cell)
            .or_insert(0) += 1;
    }
    for (h, counts) in per_hour.iter().enumerate() {
        let denom: u32 = counts.values().sum();
        if denom == 0 {
            continue;
        }
        for (cell, &n) in counts {
            out.get_mut(cell).unwrap()[h] = 100.0 * n as f64 / denom as f64;
        }
    }
    out
}

/// Directed graph over visited cells. An edge A to B records transitions
/// between consecutive check-ins in distinct cells; its weight is the
/// transition count divided by the total idle hours spent on that edge
/// (at least 1), so frequent quick moves weigh more than rare slow ones.
#[derive(Clone, Debug, PartialEq)]
pub struct MovementGraph {
    pub vertices: Vec<GridCell>,
    pub edges: BTreeMap<(GridCell, GridCell), f64>,
}

impl MovementGraph {
    pub fn from_trace(trace: &HourlyTrace) -> MovementGraph {
        let mut vertices: Vec<GridCell> = trace.observed().map(|(_, c)| c).collect();
        vertices.sort();
        vertices.dedup();
        let mut tally: BTreeMap<(GridCell, GridCell), (u32, u32)> = BTreeMap::new();
        let mut prev: Option<(usize, GridCell)> = None;
        for (s, cell) in trace.observed() {
            if let Some((ps, pc)) = prev {
                if pc != cell {
                    let e = tally.entry((pc, cell)).or_insert((0, 0));
                    e.0 += 1;
                    e.1 += (s - ps - 1) as u32;
                }
            }
            prev = Some((s, cell));
        }
        let edges = tally
            .into_iter()
            .map(|(k, (trans, idle))| (k, trans as f64 / idle.max(1) as f64))
            .collect();
        MovementGraph { vertices, edges }
    }

    /// Build from explicit weights. Rejects self-loops and non-positive weights.
    pub fn from_weights(
        mut vertices: Vec<GridCell>,
        weights: impl IntoIterator<Item = (GridCell, GridCell, f64)>,
    ) -> Result<MovementGraph> {
        vertices.sort();
        vertices.dedup();
        let mut edges = BTreeMap::new();
        for (a, b, w) in weights {
            if a == b {
                return Err(Error::Config {
                    msg: format!("self-loop on cell {}", a.id()),
                });
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Config {
                    msg: format!("bad edge weight {w} on {} -> {}", a.id(), b.id()),
                });
            }
            if !vertices.contains(&a) || !vertices.contains(&b) {
                return Err(Error::Config {
                    msg: format!("edge {} -> {} outside vertex set", a.id(), b.id()),
                });
            }
            edges.insert((a, b), w);
        }
        Ok(MovementGraph { vertices, edges })
    }

    pub fn weight(&self, from: GridCell, to: GridCell) -> f64 {
        self.edges.get(&(from, to)).copied().unwrap_or(0.0)
    }

    /// Flip every edge, keeping its weight.
    pub fn reverse(&self) -> MovementGraph {
        MovementGraph {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|(&(a, b), &w)| ((b, a), w))
                .collect(),
        }
    }
}

/// Weighted PageRank by power iteration. Out-weights are normalized per
/// vertex; vertices without outgoing edges spread their mass uniformly.
/// Converges when the L1 change drops to `tol`; the scores always sum to 1.
pub fn weighted_pagerank(
    g: &MovementGraph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BTreeMap<GridCell, f64>> {
    let n = g.vertices.len();
    if n == 0 {
        return Ok(BTreeMap::new());
    }
    let index: BTreeMap<GridCell, usize> = g
        .vertices
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let mut out_sum = vec![0.0f64; n];
    let mut in_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(a, b), &w) in &g.edges {
        out_sum[index[&a]] += w;
        in_edges[index[&b]].push((index[&a], w));
    }

    let mut x = vec![1.0 / n as f64; n];
    let mut next = vec![0.0f64; n];
    for it in 1..=max_iter {
        let dangling: f64 = (0..n).filter(|&i| out_sum[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) / n as f64 + damping * dangling / n as f64;
        for j in 0..n {
            let flow: f64 = in_edges[j]
                .iter()
                .map(|&(i, w)| x[i] * w / out_sum[i])
                .sum();
            next[j] = base + damping * flow;
        }
        let residual: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual <= tol {
            return Ok(g.vertices.iter().copied().zip(x).collect());
        }
        if it == max_iter {
            return Err(Error::NoConvergence {
                iterations: max_iter,
                residual,
            });
        }
    }
    unreachable!("max_iter is at least 1")
}

/// PageRank on the reversed graph: sinks of movement rank high.
pub fn reversed_pagerank(
    g: &MovementGraph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BTreeMap<GridCell, f64>> {
    weighted_pagerank(&g.reverse(), damping, tol, max_iter)
}

/// Assemble the full feature rows for every visited cell of a trace.
pub fn features_from_trace(
    trace: &HourlyTrace,
    cfg: &MobilityConfig,
) -> Result<BTreeMap<GridCell, Vec<f64>>> {
    let stats = checkin_stats(trace);
    if stats.is_empty() {
        return Err(Error::EmptyTrace {
            user: trace.user.clone(),
        });
    }
    let late = late_night_share(trace);
    let last = last_destination_counts(trace);
    let quiet = quiet_last_destination_counts(trace);
    let hourly = hourly_profiles(trace);
    let graph = MovementGraph::from_trace(trace);
    let pr = weighted_pagerank(&graph, cfg.damping, cfg.tol, cfg.max_iter)?;
    let rpr = reversed_pagerank(&graph, cfg.damping, cfg.tol, cfg.max_iter)?;
    let days = observed_day_count(trace) as f64;

    let pr_margins = if cfg.extended { rank_margins(&pr) } else { BTreeMap::new() };
    let rpr_margins = if cfg.extended { rank_margins(&rpr) } else { BTreeMap::new() };

    let mut out = BTreeMap::new();
    for (&cell, cs) in &stats {
        let mut v = vec![0.0; cfg.feature_count()];
        v[feat::CHECKIN_PCT] = cs.pct;
        v[feat::MARGIN_UP] = cs.margin_up;
        v[feat::MARGIN_DOWN] = cs.margin_down;
        v[feat::LATE_NIGHT_PCT] = late[&cell];
        v[feat::LAST_DEST] = last[&cell] as f64;
        v[feat::LAST_DEST_QUIET] = quiet[&cell] as f64;
        if cfg.normalized_counts {
            v[feat::LAST_DEST] /= days;
            v[feat::LAST_DEST_QUIET] /= days;
        }
        v[feat::HOURLY_BASE..feat::HOURLY_BASE + 24].copy_from_slice(&hourly[&cell]);
        v[feat::PAGERANK] = pr[&cell];
        v[feat::REV_PAGERANK] = rpr[&cell];
        if cfg.extended {
            let (pu, pd, prk) = pr_margins[&cell];
            let (ru, rd, rrk) = rpr_margins[&cell];
            v[feat::PR_MARGIN_UP] = pu;
            v[feat::PR_MARGIN_DOWN] = pd;
            v[feat::RPR_MARGIN_UP] = ru;
            v[feat::RPR_MARGIN_DOWN] = rd;
            v[feat::PR_RANK] = prk as f64;
            v[feat::RPR_RANK] = rrk as f64;
        }
        out.insert(cell, v);
    }
    Ok(out)
}

/// Features for one user of a dataset.
pub fn extract_features(
    ds: &Dataset,
    user: &str,
    cfg: &MobilityConfig,
) -> Result<BTreeMap<GridCell, Vec<f64>>> {
    let records = ds.user_records(user);
    if records.is_empty() {
        return Err(Error::EmptyTrace { user: user.into() });
    }
    let trace = build_hourly_trace(records, ds.period, &ds.grid, cfg.tie_seed)?;
    features_from_trace(&trace, cfg)
}

/// Features for every user with at least `min_tweets` records, in parallel.
pub fn extract_all_features(
    ds: &Dataset,
    min_tweets: usize,
    cfg: &MobilityConfig,
) -> Result<BTreeMap<String, BTreeMap<GridCell, Vec<f64>>>> {
    let slices: Vec<(&str, &[TweetRecord])> = ds
        .user_slices()
        .filter(|(_, recs)| recs.len() >= min_tweets)
        .collect();
    let rows: Result<Vec<_>> = slices
        .par_iter()
        .map(|(user, recs)| {
            let trace = build_hourly_trace(recs, ds.period, &ds.grid, cfg.tie_seed)?;
            Ok((user.to_string(), features_from_trace(&trace, cfg)?))
        })
        .collect();
    Ok(rows?.into_iter().collect())
}

/// Write feature rows as CSV: `user,cell,f1..fN`, values at nine
/// significant digits.
pub fn write_features_csv(
    path: &std::path::Path,
    features: &BTreeMap<String, BTreeMap<GridCell, Vec<f64>>>,
    extended: bool,
) -> Result<()> {
    use std::fmt::Write as _;
    let dim = if extended { EXTENDED_FEATURE_COUNT } else { BASE_FEATURE_COUNT };
    let mut out = String::from("user,cell");
    for i in 1..=dim {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for (user, cells) in features {
        for (cell, v) in cells {
            debug_assert_eq!(v.len(), dim);
            write!(out, "{user},{}", cell.id()).unwrap();
            for x in v {
                write!(out, ",{x:.8e}").unwrap();
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read back a features CSV. The header decides the base or extended width.
pub fn read_features_csv(
    path: &std::path::Path,
) -> Result<BTreeMap<String, BTreeMap<GridCell, Vec<f64>>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Malformed {
        path: path.into(),
        line: 1,
        msg: "empty features file".into(),
    })?;
    let dim = header.split(',').count().saturating_sub(2);
    if dim != BASE_FEATURE_COUNT && dim != EXTENDED_FEATURE_COUNT {
        return Err(Error::Malformed {
            path: path.into(),
            line: 1,
            msg: format!("unexpected feature count {dim}"),
        });
    }
    let mut out: BTreeMap<String, BTreeMap<GridCell, Vec<f64>>> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Malformed {
            path: path.into(),
            line: idx + 1,
            msg,
        };
        if cols.len() != dim + 2 {
            return Err(bad(format!("expected {} columns, got {}", dim + 2, cols.len())));
        }
        let cell = GridCell::parse(cols[1]).ok_or_else(|| bad(format!("bad cell id {:?}", cols[1])))?;
        let mut v = Vec::with_capacity(dim);
        for c in &cols[2..] {
            v.push(
                c.parse::<f64>()
                    .map_err(|e| bad(format!("bad value {c:?}: {e}")))?,
            );
        }
        out.entry(cols[0].to_string()).or_default().insert(cell, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(ix: i32, iy: i32) -> GridCell {
        GridCell::new(ix, iy)
    }

    /// Trace with explicit slots, UTC clock starting at epoch hour 0.
    fn trace_of(slots: Vec<Option<GridCell>>) -> HourlyTrace {
        HourlyTrace {
            user: "u".into(),
            start_hour: 0,
            tz_offset_min: 0,
            slots,
        }
    }

    fn slots_from(pairs: &[(usize, GridCell)], len: usize) -> Vec<Option<GridCell>> {
        let mut v = vec![None; len];
        for &(s, c) in pairs {
            v[s] = Some(c);
        }
        v
    }

    #[test]
    fn local_clock_follows_the_offset() {
        let mut t = trace_of(vec![None; 48]);
        t.tz_offset_min = 330;
        assert_eq!(t.local_hour_of_day(0), 5);
        assert_eq!(t.day_index(0), 0);
        t.tz_offset_min = -300;
        assert_eq!(t.local_hour_of_day(0), 19);
        assert_eq!(t.day_index(0), -1);
        t.tz_offset_min = 0;
        assert_eq!(t.local_hour_of_day(27), 3);
        // 02:00 belongs to the previous day window, 03:00 opens the next.
        assert_eq!(t.day_index(26), t.day_index(23));
        assert_eq!(t.day_index(27), t.day_index(26) + 1);
    }

    fn record(user: &str, ts: i64, lat: f64, lon: f64) -> TweetRecord {
        TweetRecord {
            user: user.into(),
            ts,
            tz_offset_min: 0,
            lat,
            lon,
            text: String::new(),
            gold: None,
        }
    }

    #[test]
    fn trace_places_checkins_in_hour_slots() {
        let grid = GridSpec::new(0.0, 0.0, 100.0).unwrap();
        let period = HourRange { start: 100, end: 124 };
        let recs = vec![record("u", 107 * 3600 + 180, 0.0001, 0.0001)];
        let t = build_hourly_trace(&recs, period, &grid, 0).unwrap();
        assert_eq!(t.len(), 24);
        assert_eq!(t.slots[7], Some(cell(0, 0)));
        assert_eq!(t.slots.iter().filter(|s| s.is_some()).count(), 1);
    }

    #[test]
    fn slot_winner_takes_the_majority_cell() {
        let grid = GridSpec::new(0.0, 0.0, 100.0).unwrap();
        let period = HourRange { start: 0, end: 1 };
        // Three check-ins in (0,0), one in (3,3).
        let mut recs = vec![record("u", 60, 0.0001, 0.0001); 3];
        recs.push(record("u", 120, 0.0032, 0.0032));
        let t = build_hourly_trace(&recs, period, &grid, 0).unwrap();
        assert_eq!(t.slots[0], Some(cell(0, 0)));
    }

    #[test]
    fn slot_ties_break_deterministically() {
        let grid = GridSpec::new(0.0, 0.0, 100.0).unwrap();
        let period = HourRange { start: 0, end: 1 };
        let recs = vec![
            record("u", 60, 0.0001, 0.0001),
            record("u", 120, 0.0001, 0.0001),
            record("u", 180, 0.0032, 0.0032),
            record("u", 240, 0.0032, 0.0032),
        ];
        let a = build_hourly_trace(&recs, period, &grid, 7).unwrap();
        let b = build_hourly_trace(&recs, period, &grid, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.slots[0] == Some(cell(0, 0)) || a.slots[0] == Some(cell(3, 3)));
    }

    #[test]
    fn checkin_stats_for_a_single_cell() {
        let t = trace_of(slots_from(&[(0, cell(1, 1)), (5, cell(1, 1))], 24));
        let s = checkin_stats(&t);
        assert_eq!(s.len(), 1);
        let cs = s[&cell(1, 1)];
        assert_eq!((cs.pct, cs.margin_up, cs.margin_down), (100.0, 0.0, 100.0));
    }

    #[test]
    fn checkin_margins_follow_the_ranking() {
        // 6 in A, 3 in B, 1 in C.
        let (a, b, c) = (cell(0, 0), cell(1, 0), cell(2, 0));
        let mut pairs = Vec::new();
        for s in 0..6 {
            pairs.push((s, a));
        }
        for s in 6..9 {
            pairs.push((s, b));
        }
        pairs.push((9, c));
        let t = trace_of(slots_from(&pairs, 24));
        let s = checkin_stats(&t);
        assert_eq!(s[&a], CheckinStats { pct: 60.0, margin_up: 0.0, margin_down: 30.0 });
        assert_eq!(s[&b], CheckinStats { pct: 30.0, margin_up: 30.0, margin_down: 20.0 });
        assert_eq!(s[&c], CheckinStats { pct: 10.0, margin_up: 20.0, margin_down: 10.0 });
    }

    fn random_trace(rng: &mut ChaCha8Rng, max_cells: i32, len: usize) -> HourlyTrace {
        let slots = (0..len)
            .map(|_| {
                if rng.random_bool(0.4) {
                    Some(cell(rng.random_range(0..max_cells), 0))
                } else {
                    None
                }
            })
            .collect();
        let mut t = trace_of(slots);
        t.start_hour = rng.random_range(-50..50);
        t.tz_offset_min = rng.random_range(-14 * 60..=14 * 60);
        t
    }

    #[test]
    fn checkin_stats_match_a_brute_force_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = random_trace(&mut rng, 5, 72);
            let got = checkin_stats(&t);
            let obs: Vec<GridCell> = t.observed().map(|(_, c)| c).collect();
            if obs.is_empty() {
                assert!(got.is_empty());
                continue;
            }
            let mut ranked: Vec<(GridCell, f64)> = got.keys().map(|&c| {
                let n = obs.iter().filter(|&&x| x == c).count();
                (c, 100.0 * n as f64 / obs.len() as f64)
            }).collect();
            ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
            let total: f64 = ranked.iter().map(|(_, p)| p).sum();
            assert!((total - 100.0).abs() < 1e-9);
            for (i, &(c, p)) in ranked.iter().enumerate() {
                let cs = got[&c];
                assert!((cs.pct - p).abs() < 1e-12);
                let up = if i == 0 { 0.0 } else { ranked[i - 1].1 - p };
                let down = if i + 1 == ranked.len() { p } else { p - ranked[i + 1].1 };
                assert!((cs.margin_up - up).abs() < 1e-12);
                assert!((cs.margin_down - down).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn late_night_share_uses_late_slots_only() {
        let (home, work) = (cell(0, 0), cell(5, 5));
        // 01:00 and 04:00 at home, 13:00 at work, two days.
        let t = trace_of(slots_from(
            &[(1, home), (4, home), (13, work), (25, home), (37, work)],
            48,
        ));
        let l = late_night_share(&t);
        assert_eq!(l[&home], 100.0);
        assert_eq!(l[&work], 0.0);

        let day_only = trace_of(slots_from(&[(13, work), (37, work), (14, home)], 48));
        let l2 = late_night_share(&day_only);
        assert_eq!(l2[&work], 0.0);
        assert_eq!(l2[&home], 0.0);
    }

    #[test]
    fn last_destination_counts_by_day_window() {
        let (home, work) = (cell(0, 0), cell(5, 5));
        // Ten days: work at 13:00, home at 23:00.
        let mut pairs = Vec::new();
        for d in 0..10 {
            pairs.push((24 * d + 13, work));
            pairs.push((24 * d + 23, home));
        }
        let t = trace_of(slots_from(&pairs, 240));
        let counts = last_destination_counts(&t);
        assert_eq!(counts[&home], 10);
        assert_eq!(counts[&work], 0);
    }

    #[test]
    fn after_midnight_checkins_extend_the_previous_day() {
        let (bar, home) = (cell(2, 2), cell(0, 0));
        // 22:00 at the bar, 02:00 at home: one window, last destination home.
        let t = trace_of(slots_from(&[(22, bar), (26, home)], 48));
        let counts = last_destination_counts(&t);
        assert_eq!(counts[&home], 1);
        assert_eq!(counts[&bar], 0);
        assert_eq!(observed_day_count(&t), 1);
    }

    #[test]
    fn quiet_windows_skip_days_with_late_night_activity() {
        let (home, work) = (cell(0, 0), cell(5, 5));
        // Day 0 has an 01:00 check-in (slot 25 is 01:00 of the next calendar
        // day but the same window), day 1 is quiet.
        let t = trace_of(slots_from(
            &[(13, work), (23, home), (25, home), (37, work), (47, home)],
            72,
        ));
        let all = last_destination_counts(&t);
        let quiet = quiet_last_destination_counts(&t);
        assert_eq!(all[&home], 2);
        assert_eq!(quiet[&home], 1);

        // No late-night activity at all: identical maps.
        let t2 = trace_of(slots_from(&[(13, work), (23, home), (37, work)], 48));
        assert_eq!(
            last_destination_counts(&t2),
            quiet_last_destination_counts(&t2)
        );
    }

    #[test]
    fn hourly_profiles_sum_to_100_per_observed_hour() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let t = random_trace(&mut rng, 4, 96);
            let prof = hourly_profiles(&t);
            let mut seen = [false; 24];
            for (s, _) in t.observed() {
                seen[t.local_hour_of_day(s) as usize] = true;
            }
            for h in 0..24 {
                let sum: f64 = prof.values().map(|p| p[h]).sum();
                if seen[h] {
                    assert!((sum - 100.0).abs() < 1e-9, "hour {h} sums to {sum}");
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }

    #[test]
    fn hourly_profile_counts_match_a_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = random_trace(&mut rng, 3, 120);
        let prof = hourly_profiles(&t);
        for (&c, p) in &prof {
            for h in 0..24u32 {
                let at_h: Vec<GridCell> = t
                    .observed()
                    .filter(|&(s, _)| t.local_hour_of_day(s) == h)
                    .map(|(_, c)| c)
                    .collect();
                let expect = if at_h.is_empty() {
                    0.0
                } else {
                    100.0 * at_h.iter().filter(|&&x| x == c).count() as f64 / at_h.len() as f64
                };
                assert!((p[h as usize] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn movement_graph_counts_transitions_and_idle_time() {
        let (a, b) = (cell(0, 0), cell(1, 1));
        // A, gap, B: one transition over one idle hour.
        let g = MovementGraph::from_trace(&trace_of(slots_from(&[(0, a), (2, b)], 4)));
        assert_eq!(g.weight(a, b), 1.0);
        assert_eq!(g.weight(b, a), 0.0);

        // A B A B: two A->B hops, one B->A, no idle time.
        let g2 = MovementGraph::from_trace(&trace_of(slots_from(
            &[(0, a), (1, b), (2, a), (3, b)],
            4,
        )));
        assert_eq!(g2.weight(a, b), 2.0);
        assert_eq!(g2.weight(b, a), 1.0);

        // Staying put creates no edge.
        let g3 = MovementGraph::from_trace(&trace_of(slots_from(&[(0, a), (1, a), (2, a)], 4)));
        assert!(g3.edges.is_empty());
        assert_eq!(g3.vertices, vec![a]);
    }

    #[test]
    fn reversing_twice_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let t = random_trace(&mut rng, 5, 72);
            let g = MovementGraph::from_trace(&t);
            assert_eq!(g.reverse().reverse(), g);
        }
    }

    #[test]
    fn movement_graph_matches_a_scan_of_the_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let t = random_trace(&mut rng, 4, 96);
            let g = MovementGraph::from_trace(&t);
            let obs: Vec<(usize, GridCell)> = t.observed().collect();
            let mut expect: BTreeMap<(GridCell, GridCell), (u32, u32)> = BTreeMap::new();
            for w in obs.windows(2) {
                let ((s, a), (e, b)) = (w[0], w[1]);
                if a != b {
                    let entry = expect.entry((a, b)).or_insert((0, 0));
                    entry.0 += 1;
                    entry.1 += (e - s - 1) as u32;
                }
            }
            assert_eq!(g.edges.len(), expect.len());
            for (k, (trans, idle)) in expect {
                let w = trans as f64 / idle.max(1) as f64;
                assert!((g.edges[&k] - w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pagerank_of_a_single_vertex_is_one() {
        let g = MovementGraph::from_trace(&trace_of(slots_from(&[(0, cell(0, 0))], 4)));
        let pr = weighted_pagerank(&g, 0.85, 1e-9, 1000).unwrap();
        assert_eq!(pr[&cell(0, 0)], 1.0);
    }

    #[test]
    fn pagerank_of_a_symmetric_cycle_is_uniform() {
        let (a, b) = (cell(0, 0), cell(1, 1));
        let g = MovementGraph::from_weights(vec![a, b], [(a, b, 2.0), (b, a, 2.0)]).unwrap();
        let pr = weighted_pagerank(&g, 0.85, 1e-12, 1000).unwrap();
        assert!((pr[&a] - 0.5).abs() < 1e-9);
        assert!((pr[&b] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pagerank_is_invariant_to_uniform_weight_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let t = random_trace(&mut rng, 5, 96);
        let g = MovementGraph::from_trace(&t);
        if g.vertices.is_empty() {
            return;
        }
        let scaled = MovementGraph {
            vertices: g.vertices.clone(),
            edges: g.edges.iter().map(|(&k, &w)| (k, w * 3.7)).collect(),
        };
        let pr = weighted_pagerank(&g, 0.85, 1e-12, 2000).unwrap();
        let pr2 = weighted_pagerank(&scaled, 0.85, 1e-12, 2000).unwrap();
        for (c, v) in &pr {
            assert!((v - pr2[c]).abs() < 1e-12);
        }
    }

    /// Dense reference: same fixed point, materialized transition matrix.
    fn dense_pagerank(g: &MovementGraph, damping: f64) -> BTreeMap<GridCell, f64> {
        let n = g.vertices.len();
        let idx: BTreeMap<GridCell, usize> =
            g.vertices.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut p = vec![vec![0.0f64; n]; n];
        for (&(a, b), &w) in &g.edges {
            p[idx[&a]][idx[&b]] = w;
        }
        for row in p.iter_mut() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
        let mut x = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let dangling: f64 = (0..n)
                .filter(|&i| p[i].iter().all(|&v| v == 0.0))
                .map(|i| x[i])
                .sum();
            let mut next = vec![(1.0 - damping + damping * dangling) / n as f64; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += damping * x[i] * p[i][j];
                }
            }
            let diff: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if diff < 1e-13 {
                break;
            }
        }
        g.vertices.iter().copied().zip(x).collect()
    }

    #[test]
    fn pagerank_matches_the_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = rng.random_range(1..=6);
            let vertices: Vec<GridCell> = (0..n).map(|i| cell(i, 0)).collect();
            let mut weights = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(0.4) {
                        weights.push((cell(i, 0), cell(j, 0), rng.random_range(0.1..5.0)));
                    }
                }
            }
            let g = MovementGraph::from_weights(vertices, weights).unwrap();
            let pr = weighted_pagerank(&g, 0.85, 1e-12, 5000).unwrap();
            let reference = dense_pagerank(&g, 0.85);
            let sum: f64 = pr.values().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for (c, v) in &reference {
                assert!((pr[c] - v).abs() < 1e-8, "cell {} {} vs {}", c.id(), pr[c], v);
            }
        }
    }

    #[test]
    fn single_cell_user_gets_trivial_scores() {
        let t = trace_of(slots_from(&[(0, cell(4, 4)), (30, cell(4, 4))], 48));
        let f = features_from_trace(&t, &MobilityConfig::default()).unwrap();
        let v = &f[&cell(4, 4)];
        assert_eq!(v.len(), BASE_FEATURE_COUNT);
        assert_eq!(v[feat::CHECKIN_PCT], 100.0);
        assert_eq!(v[feat::PAGERANK], 1.0);
        assert_eq!(v[feat::REV_PAGERANK], 1.0);
    }

    #[test]
    fn checkin_shares_sum_to_100() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let t = random_trace(&mut rng, 5, 96);
            if t.observed().next().is_none() {
                continue;
            }
            let f = features_from_trace(&t, &MobilityConfig::default()).unwrap();
            let sum: f64 = f.values().map(|v| v[feat::CHECKIN_PCT]).sum();
            assert!((sum - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn extended_rows_add_pagerank_margins_and_ranks() {
        let (a, b) = (cell(0, 0), cell(1, 1));
        let t = trace_of(slots_from(&[(0, a), (2, b), (4, a), (8, a)], 24));
        let cfg = MobilityConfig { extended: true, ..MobilityConfig::default() };
        let f = features_from_trace(&t, &cfg).unwrap();
        for v in f.values() {
            assert_eq!(v.len(), EXTENDED_FEATURE_COUNT);
        }
        let ranks: Vec<f64> = f.values().map(|v| v[feat::PR_RANK]).collect();
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![1.0, 2.0]);
        // Top-ranked cell has zero upward margin; the other's equals the gap.
        let top = f.values().find(|v| v[feat::PR_RANK] == 1.0).unwrap();
        let low = f.values().find(|v| v[feat::PR_RANK] == 2.0).unwrap();
        assert_eq!(top[feat::PR_MARGIN_UP], 0.0);
        assert!((low[feat::PR_MARGIN_UP] - (top[feat::PAGERANK] - low[feat::PAGERANK])).abs() < 1e-12);
        assert_eq!(low[feat::RPR_MARGIN_DOWN], low[feat::REV_PAGERANK]);
    }

    /// Three-day pattern that starts and ends in the same cell with idle
    /// time on every edge, so tiling it is invisible to everything except
    /// the two last-destination counters.
    fn tileable_base() -> Vec<Option<GridCell>> {
        let (h, w) = (cell(0, 0), cell(9, 9));
        slots_from(
            &[
                (4, h),
                (12, w),
                (20, h),
                (34, h),
                (38, w),
                (45, h),
                (59, w),
                (67, h),
            ],
            72,
        )
    }

    #[test]
    fn doubling_the_period_only_doubles_last_destination_counts() {
        let base = trace_of(tileable_base());
        let mut tiled_slots = tileable_base();
        tiled_slots.extend(tileable_base());
        let tiled = trace_of(tiled_slots);

        let cfg = MobilityConfig::default();
        let f1 = features_from_trace(&base, &cfg).unwrap();
        let f2 = features_from_trace(&tiled, &cfg).unwrap();
        assert_eq!(f1.keys().collect::<Vec<_>>(), f2.keys().collect::<Vec<_>>());
        for (c, v1) in &f1 {
            let v2 = &f2[c];
            for i in 0..BASE_FEATURE_COUNT {
                match i {
                    feat::LAST_DEST | feat::LAST_DEST_QUIET => {
                        assert_eq!(v2[i], 2.0 * v1[i], "cell {} feature {i}", c.id())
                    }
                    _ => assert_eq!(v2[i], v1[i], "cell {} feature {i}", c.id()),
                }
            }
        }

        // Normalized counts remove the length dependence entirely.
        let norm = MobilityConfig { normalized_counts: true, ..cfg };
        let n1 = features_from_trace(&base, &norm).unwrap();
        let n2 = features_from_trace(&tiled, &norm).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn features_csv_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = random_trace(&mut rng, 4, 96);
        let f = features_from_trace(&t, &MobilityConfig::default()).unwrap();
        let mut by_user = BTreeMap::new();
        by_user.insert("u".to_string(), f.clone());
        let tmp = tempfile::NamedTempFile::new().unwrap();
        write_features_csv(tmp.path(), &by_user, false).unwrap();
        let back = read_features_csv(tmp.path()).unwrap();
        assert_eq!(back.len(), 1);
        for (c, v) in &f {
            let w = &back["u"][c];
            for (a, b) in v.iter().zip(w) {
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn extract_all_features_filters_inactive_users() {
        let grid = GridSpec::new(0.0, 0.0, 100.0).unwrap();
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(record("active", (i * 7200) as i64, 0.0001, 0.0001));
        }
        records.push(record("sparse", 3600, 0.0032, 0.0032));
        let ds = Dataset::new(records, grid);
        let all = extract_all_features(&ds, 5, &MobilityConfig::default()).unwrap();
        assert!(all.contains_key("active"));
        assert!(!all.contains_key("sparse"));
        let solo = extract_features(&ds, "active", &MobilityConfig::default()).unwrap();
        assert_eq!(all["active"], solo);
    }
}
