//! Measurements over telemetry: specialization, noise avoidance, trophic
//! structure, path divergence, complexity and efficiency.
//!
//! Everything here is a pure function of ledger entries and genomes, so the
//! runner and the offline analyzer produce identical numbers.

use std::collections::{BTreeMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::genome::{genome_distance, Genome};
use crate::physics::BaselineErrors;
use crate::streams::StreamKind;
use crate::unit::UnitId;
use crate::world::{LedgerEntry, Source, BUCKETS, SIGNAL_BUCKET};

pub const DEFAULT_WINDOW: usize = 500;
pub const NOISE_SHARE: f64 = 0.25;
pub const TROPHIC_DEPTH_CAP: u32 = 8;
pub const PAIR_CAP: usize = 10_000;
pub const EPS_EFF: f64 = 1e-6;
/// Longest series the trend test runs on; longer ones are block-averaged.
pub const TREND_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
struct Slice {
    gain: [f64; BUCKETS],
    volume: [f64; BUCKETS],
    emitters: Vec<(UnitId, f64)>,
}

/// Windowed gains and volumes of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEnergyProfile {
    pub unit_id: UnitId,
    /// Ticks covered, at most the window length.
    pub ticks: usize,
    pub gains: [f64; BUCKETS],
    pub volumes: [f64; BUCKETS],
    /// Gain per emitter (the signal bucket split by source).
    pub emitter_gains: BTreeMap<UnitId, f64>,
}

impl UnitEnergyProfile {
    pub fn total_gain(&self) -> f64 {
        self.gains.iter().sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }
}

/// Ring buffer of recent ledger entries per unit.
#[derive(Debug, Clone, Default)]
pub struct ProfileBook {
    window: usize,
    units: BTreeMap<UnitId, VecDeque<Slice>>,
}

impl ProfileBook {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "profile window must be positive");
        Self { window, units: BTreeMap::new() }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn record(&mut self, e: &LedgerEntry) {
        let mut gain = [0.0; BUCKETS];
        let mut emitters = Vec::new();
        for &(src, share) in &e.sources {
            let g = e.gain * share;
            gain[src.bucket()] += g;
            if let Source::Emitter(id) = src {
                emitters.push((id, g));
            }
        }
        let ring = self.units.entry(e.unit_id).or_default();
        if ring.len() == self.window {
            ring.pop_front();
        }
        ring.push_back(Slice { gain, volume: e.volumes, emitters });
    }

    pub fn remove(&mut self, id: UnitId) {
        self.units.remove(&id);
    }

    /// Drops every unit not in `alive` (sorted ascending).
    pub fn retain(&mut self, alive: &[UnitId]) {
        self.units.retain(|id, _| alive.binary_search(id).is_ok());
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn profile(&self, id: UnitId) -> Option<UnitEnergyProfile> {
        let ring = self.units.get(&id)?;
        let mut p = UnitEnergyProfile {
            unit_id: id,
            ticks: ring.len(),
            gains: [0.0; BUCKETS],
            volumes: [0.0; BUCKETS],
            emitter_gains: BTreeMap::new(),
        };
        for s in ring {
            for b in 0..BUCKETS {
                p.gains[b] += s.gain[b];
                p.volumes[b] += s.volume[b];
            }
            for &(e, g) in &s.emitters {
                *p.emitter_gains.entry(e).or_default() += g;
            }
        }
        Some(p)
    }

    pub fn profiles(&self) -> Vec<UnitEnergyProfile> {
        self.units.keys().filter_map(|&id| self.profile(id)).collect()
    }
}

/// Per-tick population metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickMetrics {
    pub tick: u64,
    pub population: usize,
    pub noise_fraction: f64,
    pub mean_entropy: Option<f64>,
}

/// Feeds a [`ProfileBook`] one tick at a time. The live set at a tick is
/// every unit with a ledger entry that did not die in that tick.
#[derive(Debug, Clone)]
pub struct MetricsTracker {
    book: ProfileBook,
}

impl MetricsTracker {
    pub fn new(window: usize) -> Self {
        Self { book: ProfileBook::new(window) }
    }

    pub fn book(&self) -> &ProfileBook {
        &self.book
    }

    pub fn observe(&mut self, tick: u64, entries: &[LedgerEntry], dead: &[UnitId]) -> TickMetrics {
        for e in entries {
            self.book.record(e);
        }
        let mut alive: Vec<UnitId> =
            entries.iter().map(|e| e.unit_id).filter(|id| !dead.contains(id)).collect();
        alive.sort_unstable();
        self.book.retain(&alive);
        let profiles = self.book.profiles();
        TickMetrics {
            tick,
            population: profiles.len(),
            noise_fraction: noise_fraction(&profiles),
            mean_entropy: mean_entropy(&profiles),
        }
    }
}

/// Early value against the mean over the final tenth of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub early: f64,
    pub late: f64,
    pub decreased: bool,
}

fn tenth(n: usize) -> usize {
    (n / 10).max(1)
}

fn mean(x: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean noise fraction over the first tenth of the ticks against the final
/// tenth.
pub fn noise_trend(series: &[TickMetrics]) -> Option<TrendSummary> {
    if series.is_empty() {
        return None;
    }
    let k = tenth(series.len());
    let early = mean(series[..k].iter().map(|m| m.noise_fraction))?;
    let late = mean(series[series.len() - k..].iter().map(|m| m.noise_fraction))?;
    Some(TrendSummary { early, late, decreased: late < early })
}

/// Baseline entropy (first tick with any gain) against the mean over the
/// final tenth of the ticks.
pub fn entropy_trend(series: &[TickMetrics]) -> Option<TrendSummary> {
    let early = series.iter().find_map(|m| m.mean_entropy)?;
    let k = tenth(series.len());
    let late = mean(series[series.len() - k..].iter().filter_map(|m| m.mean_entropy))?;
    Some(TrendSummary { early, late, decreased: late < early })
}

/// Shannon entropy in bits of the gain distribution over the five buckets.
/// `None` when there was no gain.
pub fn specialization_entropy(gains: &[f64; BUCKETS]) -> Option<f64> {
    let total: f64 = gains.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(
        -gains
            .iter()
            .filter(|&&g| g > 0.0)
            .map(|&g| {
                let p = g / total;
                p * p.log2()
            })
            .sum::<f64>(),
    )
}

/// Mean entropy over the profiles with positive gain.
pub fn mean_entropy(profiles: &[UnitEnergyProfile]) -> Option<f64> {
    let values: Vec<f64> = profiles.iter().filter_map(|p| specialization_entropy(&p.gains)).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Whether a unit counts as processing noise: noise reaches at least a quarter
/// of everything it sensed over the window. Noise volume is only ever
/// positive for units whose mask admits a noise channel.
pub fn processes_noise(p: &UnitEnergyProfile) -> bool {
    let noise = p.volumes[StreamKind::Noise.index()];
    noise > 0.0 && noise >= NOISE_SHARE * p.total_volume()
}

pub fn noise_fraction(profiles: &[UnitEnergyProfile]) -> f64 {
    if profiles.is_empty() {
        return 0.0;
    }
    profiles.iter().filter(|p| processes_noise(p)).count() as f64 / profiles.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrophicAssignment {
    pub levels: BTreeMap<UnitId, u32>,
    /// Units per level, index 0 is level 1.
    pub histogram: Vec<usize>,
    /// `flow[i][j]`: gain flowing from level `i` to level `j`, where level 0
    /// stands for the raw streams.
    pub flow: Vec<Vec<f64>>,
}

fn emitter_majority(p: &UnitEnergyProfile) -> bool {
    let total = p.total_gain();
    total > 0.0 && p.gains[SIGNAL_BUCKET] > 0.5 * total
}

/// Level 1 for units fed mostly by raw streams. A unit fed mostly by emitters
/// sits one level above the highest of its emitters outside its own feeding
/// cycle; members of a cycle share the lowest level found in it. Emitters
/// without a profile count as level 1. Levels are capped at the depth cap.
pub fn assign_trophic_levels(profiles: &[UnitEnergyProfile]) -> TrophicAssignment {
    let mut graph = DiGraph::<UnitId, ()>::new();
    let mut node = BTreeMap::new();
    for p in profiles {
        node.insert(p.unit_id, graph.add_node(p.unit_id));
    }
    let by_id: BTreeMap<UnitId, &UnitEnergyProfile> = profiles.iter().map(|p| (p.unit_id, p)).collect();
    for p in profiles.iter().filter(|p| emitter_majority(p)) {
        for &src in p.emitter_gains.keys() {
            if let Some(&s) = node.get(&src) {
                graph.add_edge(s, node[&p.unit_id], ());
            }
        }
    }
    // Tarjan yields components in reverse topological order.
    let mut sccs = tarjan_scc(&graph);
    sccs.reverse();
    let mut comp_of = BTreeMap::new();
    for (ci, comp) in sccs.iter().enumerate() {
        for &n in comp {
            comp_of.insert(graph[n], ci);
        }
    }
    let mut levels: BTreeMap<UnitId, u32> = BTreeMap::new();
    for (ci, comp) in sccs.iter().enumerate() {
        let mut comp_levels = Vec::with_capacity(comp.len());
        for &n in comp {
            let id = graph[n];
            let p = by_id[&id];
            let level = if emitter_majority(p) {
                let top = p
                    .emitter_gains
                    .keys()
                    .filter(|src| comp_of.get(src) != Some(&ci))
                    .map(|src| levels.get(src).copied().unwrap_or(1))
                    .max();
                top.map_or(1, |l| (l + 1).min(TROPHIC_DEPTH_CAP))
            } else {
                1
            };
            comp_levels.push((id, level));
        }
        let cyclic = comp.len() > 1;
        let shared = comp_levels.iter().map(|&(_, l)| l).min().unwrap_or(1);
        for (id, l) in comp_levels {
            levels.insert(id, if cyclic { shared } else { l });
        }
    }

    let max_level = levels.values().copied().max().unwrap_or(1) as usize;
    let mut histogram = vec![0; max_level];
    for &l in levels.values() {
        histogram[l as usize - 1] += 1;
    }
    let mut flow = vec![vec![0.0; max_level + 1]; max_level + 1];
    for p in profiles {
        let to = levels[&p.unit_id] as usize;
        flow[0][to] += p.gains[..SIGNAL_BUCKET].iter().sum::<f64>();
        for (src, &g) in &p.emitter_gains {
            let from = levels.get(src).copied().unwrap_or(1) as usize;
            flow[from][to] += g;
        }
    }
    TrophicAssignment { levels, histogram, flow }
}

fn pair_indices(n: usize, m: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * m;
    if total <= PAIR_CAP {
        return (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, PAIR_CAP).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| (k / m, k % m)).collect()
}

fn mean_distance(a: &[Genome], b: &[Genome], pairs: &[(usize, usize)], w_scale: f64, node_max: u32) -> f64 {
    let sum: f64 = pairs.iter().map(|&(i, j)| genome_distance(&a[i], &b[j], w_scale, node_max)).sum();
    sum / pairs.len() as f64
}

/// Mean genome distance across two runs and within each run. Pairs run over
/// all ordered pairs (self-pairs included), or a seeded sample of
/// [`PAIR_CAP`] of them. `intra` is the mean of the two within-run values.
pub fn path_divergence(r1: &[Genome], r2: &[Genome], seed: u64, w_scale: f64, node_max: u32) -> (f64, f64) {
    assert!(!r1.is_empty() && !r2.is_empty(), "path divergence needs two non-empty populations");
    let inter = mean_distance(r1, r2, &pair_indices(r1.len(), r2.len(), seed), w_scale, node_max);
    let intra1 = mean_distance(r1, r1, &pair_indices(r1.len(), r1.len(), seed), w_scale, node_max);
    let intra2 = mean_distance(r2, r2, &pair_indices(r2.len(), r2.len(), seed), w_scale, node_max);
    (inter, (intra1 + intra2) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub tick: u64,
    pub mean_nodes: f64,
    pub mean_edges: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySeries {
    pub points: Vec<ComplexityPoint>,
    pub node_slope: f64,
    pub edge_slope: f64,
}

pub fn complexity_point(tick: u64, genomes: &[Genome]) -> ComplexityPoint {
    let n = genomes.len().max(1) as f64;
    ComplexityPoint {
        tick,
        mean_nodes: genomes.iter().map(|g| g.node_count as f64).sum::<f64>() / n,
        mean_edges: genomes.iter().map(|g| g.edge_count() as f64).sum::<f64>() / n,
    }
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn complexity_series(points: Vec<ComplexityPoint>) -> ComplexitySeries {
    assert!(points.len() >= 2, "complexity series needs at least two snapshots");
    let x: Vec<f64> = points.iter().map(|p| p.tick as f64).collect();
    let nodes: Vec<f64> = points.iter().map(|p| p.mean_nodes).collect();
    let edges: Vec<f64> = points.iter().map(|p| p.mean_edges).collect();
    ComplexitySeries { node_slope: ols_slope(&x, &nodes), edge_slope: ols_slope(&x, &edges), points }
}

/// Energy spent per unit of error reduction below the naive baseline, for
/// one tick of ledger entries. Only stream buckets are compared, since the
/// baseline oracle has no notion of signals. `None` if no unit had data.
pub fn efficiency(entries: &[LedgerEntry], baselines: &BaselineErrors) -> Option<f64> {
    let mut cost = 0.0;
    let mut reduction = 0.0;
    let mut any = false;
    for e in entries {
        let mut baseline = 0.0;
        let mut achieved = 0.0;
        let mut scored = false;
        for kind in StreamKind::ALL {
            let err = e.errors[kind.index()];
            if err.is_nan() {
                continue;
            }
            scored = true;
            baseline += baselines.get(kind).unwrap_or(0.0);
            achieved += err;
        }
        if !scored {
            continue;
        }
        any = true;
        cost += e.compute_cost + e.maintenance;
        reduction += (baseline - achieved).max(EPS_EFF);
    }
    any.then(|| cost / reduction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannKendall {
    pub n: usize,
    pub s: f64,
    pub var_s: f64,
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
}

impl MannKendall {
    pub fn decreasing(&self, alpha: f64) -> bool {
        self.z < 0.0 && self.p_value < alpha
    }

    pub fn increasing(&self, alpha: f64) -> bool {
        self.z > 0.0 && self.p_value < alpha
    }
}

/// Mann-Kendall trend test with the tie-corrected variance and continuity
/// correction. `None` for fewer than three points.
pub fn mann_kendall(x: &[f64]) -> Option<MannKendall> {
    let n = x.len();
    if n < 3 {
        return None;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match x[j].partial_cmp(&x[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let var_s = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    let s = s as f64;
    let z = if var_s == 0.0 {
        0.0
    } else if s > 0.0 {
        (s - 1.0) / var_s.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var_s.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
    Some(MannKendall { n, s, var_s, z, p_value })
}

/// Block means reducing `x` to at most `max_points` values.
pub fn block_means(x: &[f64], max_points: usize) -> Vec<f64> {
    if x.len() <= max_points {
        return x.to_vec();
    }
    let block = x.len().div_ceil(max_points);
    x.chunks(block).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}
