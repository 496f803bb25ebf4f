//! The toroidal lattice and the per-tick scheduler.
//!
//! One tick runs nine phases in fixed order: weather, depletion, sensing,
//! evaluation, plasticity, the forward cycle (with emission), death,
//! reproduction and migration. Phases 3 to 6 touch one unit at a time and
//! may run in parallel; the rest are sequential in ascending unit id.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::SimConfig;
use crate::evolution::{try_reproduce, NEIGHBOR_OFFSETS};
use crate::genome::{new_uniform_genome, FounderSpec, Genome, GenomeBounds, GenomeError, NodeLayout};
use crate::neural::{compute_cost, forward_cycle_in_place, CycleSettings, NetState};
use crate::physics::{channel_error, compression_ratio, energy_update, prediction_error, ChannelKind};
use crate::plasticity::hebbian_update_in_place;
use crate::rng::{self, Phase};
use crate::streams::{StreamField, StreamKind, StreamState};
use crate::unit::{Unit, UnitId};

/// Gain and volume buckets: the four stream kinds, then emitted signals.
pub const BUCKETS: usize = 5;
pub const SIGNAL_BUCKET: usize = 4;
pub const BUCKET_NAMES: [&str; BUCKETS] = ["numeric", "text", "noise", "temporal", "signal"];

pub const SNAPSHOT_FORMAT: &str = "mee-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub width: u32,
    pub height: u32,
    pub founder_count: usize,
    /// Hidden nodes of every founder.
    pub founder_nodes: u32,
    /// Perception radius (Chebyshev).
    pub r_s: u32,
    /// Signal attenuation radius (Chebyshev).
    pub r_a: u32,
    /// Founders' migration propensity.
    pub move_prob: f64,
    pub master_seed: u64,
    /// Width of the emission slot.
    pub emission_slots: u32,
    pub sigma_init: f64,
    /// Founders' internal steps per tick.
    pub propagation_steps: u32,
    pub node_min: u32,
    pub node_max: u32,
    pub steps_cap: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            founder_count: 128,
            founder_nodes: 5,
            r_s: 2,
            r_a: 4,
            move_prob: 0.1,
            master_seed: 1,
            emission_slots: 4,
            sigma_init: 0.1,
            propagation_steps: 2,
            node_min: 1,
            node_max: 64,
            steps_cap: 4,
        }
    }
}

impl WorldConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err("world.width and world.height must be positive".into());
        }
        if self.r_s < 1 || self.r_a < 1 {
            return Err("world.r_s and world.r_a must be at least 1".into());
        }
        if self.founder_count > (self.width * self.height) as usize {
            return Err(format!(
                "world.founder_count {} exceeds the {} lattice cells",
                self.founder_count,
                self.width * self.height
            ));
        }
        if self.emission_slots < 1 {
            return Err("world.emission_slots must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.move_prob) {
            return Err(format!("world.move_prob must be in [0, 1], got {}", self.move_prob));
        }
        if !(self.sigma_init >= 0.0 && self.sigma_init.is_finite()) {
            return Err("world.sigma_init must be non-negative".into());
        }
        if self.node_min < 1 || self.node_min > self.node_max {
            return Err("world.node_min must be in [1, node_max]".into());
        }
        if self.propagation_steps < 1 || self.propagation_steps > self.steps_cap {
            return Err("world.propagation_steps must be in [1, steps_cap]".into());
        }
        Ok(())
    }

    pub fn bounds(&self) -> GenomeBounds {
        GenomeBounds { node_min: self.node_min, node_max: self.node_max, steps_cap: self.steps_cap }
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("cell {0} is occupied or outside the lattice")]
    Cell(usize),
    #[error("unit id {0} already exists")]
    DuplicateId(UnitId),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Signal strength at Chebyshev distance `d`: `amplitude / d^2` within `r_a`,
/// nothing beyond it. The emitter's own cell (`d = 0`) receives nothing.
pub fn attenuate(amplitude: f64, d: u32, r_a: u32) -> f64 {
    if d == 0 || d > r_a {
        0.0
    } else {
        amplitude / (d as f64 * d as f64)
    }
}

/// One claimant's share of a cell: `min(offered, v_max) / claimants`, or
/// nothing when the cell is unclaimed.
pub fn allocate_depletion(offered: f64, v_max: f64, claimants: u32) -> f64 {
    if claimants == 0 {
        0.0
    } else {
        offered.min(v_max) / claimants as f64
    }
}

/// Toroidal lattice geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub width: u32,
    pub height: u32,
}

impl Lattice {
    pub fn cells(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn cell(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn coords(&self, cell: usize) -> (u32, u32) {
        (cell as u32 % self.width, cell as u32 / self.width)
    }

    pub fn offset(&self, cell: usize, dy: i32, dx: i32) -> usize {
        let (x, y) = self.coords(cell);
        let nx = (x as i64 + dx as i64).rem_euclid(self.width as i64) as u32;
        let ny = (y as i64 + dy as i64).rem_euclid(self.height as i64) as u32;
        self.cell(nx, ny)
    }

    pub fn chebyshev(&self, a: usize, b: usize) -> u32 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let dx = ax.abs_diff(bx);
        let dy = ay.abs_diff(by);
        dx.min(self.width - dx).max(dy.min(self.height - dy))
    }

    /// Cells within Chebyshev radius `r`, each once, in scan order
    /// (`dy` then `dx`), with their distance.
    pub fn disk(&self, cell: usize, r: u32) -> Vec<(usize, u32)> {
        let r = r as i32;
        let mut out = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        let mut seen = vec![false; self.cells()];
        for dy in -r..=r {
            for dx in -r..=r {
                let c = self.offset(cell, dy, dx);
                if !seen[c] {
                    seen[c] = true;
                    out.push((c, self.chebyshev(cell, c)));
                }
            }
        }
        out
    }
}

/// Emissions of the previous tick, one slot vector per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalField {
    pub slots: usize,
    pub emitter: Vec<Option<UnitId>>,
    pub values: Vec<f64>,
}

impl SignalField {
    pub fn new(cells: usize, slots: usize) -> Self {
        Self { slots, emitter: vec![None; cells], values: vec![0.0; cells * slots] }
    }

    pub fn clear(&mut self) {
        self.emitter.fill(None);
        self.values.fill(0.0);
    }

    pub fn deposit(&mut self, cell: usize, id: UnitId, emission: &[f64]) {
        self.emitter[cell] = Some(id);
        self.values[cell * self.slots..(cell + 1) * self.slots].copy_from_slice(emission);
    }

    pub fn at(&self, cell: usize) -> Option<(UnitId, &[f64])> {
        self.emitter[cell].map(|id| (id, &self.values[cell * self.slots..(cell + 1) * self.slots]))
    }
}

/// Origin of sensed data and therefore of energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Stream(StreamKind),
    Emitter(UnitId),
}

impl Source {
    pub fn bucket(self) -> usize {
        match self {
            Source::Stream(k) => k.index(),
            Source::Emitter(_) => SIGNAL_BUCKET,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if let Some(id) = s.strip_prefix('u') {
            return id.parse().ok().map(Source::Emitter);
        }
        StreamKind::parse(s).map(Source::Stream)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Stream(k) => write!(f, "{k}"),
            Source::Emitter(id) => write!(f, "u{id}"),
        }
    }
}

/// One unit's energy accounting for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tick: u64,
    pub unit_id: UnitId,
    pub energy_before: f64,
    pub energy_after: f64,
    pub gain: f64,
    pub compute_cost: f64,
    pub maintenance: f64,
    /// Data volume acquired this tick.
    pub volume: f64,
    pub v_in: u32,
    pub v_repr: u32,
    pub error: f64,
    /// Error per bucket; NaN where nothing in the bucket was scored.
    pub errors: [f64; BUCKETS],
    pub volumes: [f64; BUCKETS],
    /// Share of the gain per source. Empty when there was no gain.
    pub sources: Vec<(Source, f64)>,
}

impl LedgerEntry {
    pub fn delta(&self) -> f64 {
        (self.gain - self.compute_cost) - self.maintenance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Birth {
        tick: u64,
        unit: UnitId,
        parent: UnitId,
        partner: Option<UnitId>,
        cell: usize,
        genome_hash: String,
        /// Parent energy before and after fission.
        parent_before: f64,
        parent_after: f64,
        child_energy: f64,
    },
    Death {
        tick: u64,
        unit: UnitId,
        cell: usize,
        energy: f64,
        age: u64,
        genome_hash: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TickReport {
    pub tick: u64,
    pub population: usize,
    pub births: usize,
    pub deaths: usize,
    pub total_gain: f64,
    pub total_compute: f64,
    pub total_maintenance: f64,
    /// Population energy after every phase.
    pub total_energy: f64,
    /// Energy held by the units removed this tick (never positive).
    pub death_energy: f64,
    pub mean_energy: f64,
    /// Mean error per bucket over the units that scored it.
    pub mean_errors: [f64; BUCKETS],
    pub corrupt: usize,
    pub weight_resets: usize,
    pub ledger: Vec<LedgerEntry>,
    pub events: Vec<Event>,
}

/// What a unit sensed in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensed {
    pub values: Vec<f64>,
    pub scored: Vec<bool>,
    pub v_in: u32,
    pub volumes: [f64; BUCKETS],
    /// Signal volume per emitter, ascending id.
    pub emitters: Vec<(UnitId, f64)>,
}

struct UnitOutcome {
    entry: LedgerEntry,
    emission: Vec<f64>,
    corrupt: bool,
    resets: usize,
}

/// Read-only view shared by the per-unit phases.
struct SenseCtx<'a> {
    cfg: &'a SimConfig,
    tick: u64,
    streams: &'a StreamField,
    signal: &'a SignalField,
    claimants: &'a [Vec<u32>],
    disk_s: &'a [Vec<(usize, u32)>],
    disk_a: &'a [Vec<(usize, u32)>],
    kinds: &'a [ChannelKind],
}

impl SenseCtx<'_> {
    fn sense(&self, cell: usize, mask: &[bool]) -> Sensed {
        let streams_cfg = &self.cfg.streams;
        let floor = streams_cfg.intensity_floor;
        let v_max = self.cfg.physics.v_max;
        let width = self.kinds.len();
        let mut values = vec![0.0; width];
        let mut scored = vec![false; width];
        let mut volumes = [0.0; BUCKETS];
        let mut v_in = 0u32;

        for kind in StreamKind::ALL {
            let range = streams_cfg.channel_range(kind);
            let admitted = mask[range.clone()].iter().filter(|&&b| b).count();
            if admitted == 0 {
                continue;
            }
            let w = range.len() as f64;
            let map = self.streams.intensity_map(kind);
            let claim = &self.claimants[kind.index()];
            let mut best: Option<(usize, f64)> = None;
            let mut volume = 0.0;
            for &(c, _) in &self.disk_s[cell] {
                let level = map[c];
                if level < floor {
                    continue;
                }
                volume += allocate_depletion(w * level, v_max, claim[c]);
                if best.is_none_or(|(_, b)| level > b) {
                    best = Some((c, level));
                }
            }
            let Some((src, _)) = best else { continue };
            volumes[kind.index()] = volume * admitted as f64 / w;
            self.streams.window_into(kind, src, self.tick, &mut values[range.clone()]);
            for ch in range {
                if mask[ch] {
                    scored[ch] = true;
                    v_in += 1;
                } else {
                    values[ch] = 0.0;
                }
            }
        }

        let first_signal = streams_cfg.total_width();
        let slots = self.signal.slots;
        let mut raw = vec![0.0; slots];
        let mut parts: Vec<(UnitId, Vec<f64>)> = Vec::new();
        let r_a = self.cfg.world.r_a;
        let any_admitted = (0..slots).any(|k| mask[first_signal + k]);
        if any_admitted {
            for &(c, d) in &self.disk_a[cell] {
                let Some((id, em)) = self.signal.at(c) else { continue };
                if d == 0 {
                    continue;
                }
                let contrib: Vec<f64> = (0..slots)
                    .map(|k| if mask[first_signal + k] { attenuate(em[k], d, r_a) } else { 0.0 })
                    .collect();
                if contrib.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (r, v) in raw.iter_mut().zip(&contrib) {
                    *r += v;
                }
                parts.push((id, contrib));
            }
        }
        let mut scale = vec![0.0; slots];
        for k in 0..slots {
            let v = raw[k].min(1.0);
            if v >= floor {
                values[first_signal + k] = v;
                scored[first_signal + k] = true;
                v_in += 1;
                volumes[SIGNAL_BUCKET] += v;
                scale[k] = v / raw[k];
            }
        }
        let mut emitters: Vec<(UnitId, f64)> = parts
            .into_iter()
            .map(|(id, contrib)| (id, contrib.iter().zip(&scale).map(|(c, s)| c * s).sum::<f64>()))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        emitters.sort_by_key(|&(id, _)| id);

        Sensed { values, scored, v_in, volumes, emitters }
    }

    fn process(&self, u: &mut Unit) -> UnitOutcome {
        let p = &self.cfg.physics;
        let sensed = self.sense(u.cell, &u.genome.interface.receptor_mask);
        let error = prediction_error(&sensed.values, &u.state.last_prediction, self.kinds, &sensed.scored);
        let mut errors = [f64::NAN; BUCKETS];
        let first_signal = self.cfg.streams.total_width();
        for ch in 0..self.kinds.len() {
            if !sensed.scored[ch] {
                continue;
            }
            let bucket = if ch >= first_signal {
                SIGNAL_BUCKET
            } else {
                StreamKind::ALL.iter().position(|&k| self.cfg.streams.channel_range(k).contains(&ch)).unwrap()
            };
            let e = channel_error(sensed.values[ch], u.state.last_prediction[ch], self.kinds[ch]);
            errors[bucket] = if errors[bucket].is_nan() { e } else { errors[bucket] + e };
        }

        let volume: f64 = sensed.volumes.iter().sum();
        let c = compression_ratio(sensed.v_in, u.last_v_repr, error);
        let upd = energy_update(u.energy, c, volume, u.last_k, p);
        let sources = if upd.gain > 0.0 && volume > 0.0 {
            let mut s: Vec<(Source, f64)> = StreamKind::ALL
                .iter()
                .filter(|k| sensed.volumes[k.index()] > 0.0)
                .map(|&k| (Source::Stream(k), sensed.volumes[k.index()] / volume))
                .collect();
            s.extend(sensed.emitters.iter().map(|&(id, v)| (Source::Emitter(id), v / volume)));
            s
        } else {
            Vec::new()
        };
        let entry = LedgerEntry {
            tick: self.tick,
            unit_id: u.id,
            energy_before: u.energy,
            energy_after: upd.e_next,
            gain: upd.gain,
            compute_cost: upd.compute_cost,
            maintenance: upd.maintenance,
            volume,
            v_in: sensed.v_in,
            v_repr: u.last_v_repr,
            error,
            errors,
            volumes: sensed.volumes,
            sources,
        };
        u.energy = upd.e_next;

        let resets = hebbian_update_in_place(&mut u.genome, &u.state, upd.surplus, p);
        let settings = CycleSettings { tau: p.tau, epsilon_p: p.epsilon_p };
        match forward_cycle_in_place(&u.genome, &mut u.state, &sensed.values, self.kinds, settings) {
            Ok(out) => {
                u.last_v_repr = out.v_repr;
                u.last_k = out.k_cost;
                UnitOutcome { entry, emission: out.emission, corrupt: false, resets }
            }
            Err(_) => {
                u.last_v_repr = 0;
                u.last_k = compute_cost(&u.genome);
                let emission = vec![0.0; self.signal.slots];
                UnitOutcome { entry, emission, corrupt: true, resets }
            }
        }
    }
}

/// Serializable world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub format: String,
    pub version: u32,
    pub tick: u64,
    pub next_id: UnitId,
    pub state_hash: String,
    pub config: SimConfig,
    pub units: Vec<Unit>,
    pub streams: StreamState,
    pub signal: SignalField,
}

impl WorldSnapshot {
    /// Canonical JSON: sorted keys, round-trip float formatting.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("snapshot serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let snap: Self = serde_json::from_str(text).map_err(|e| WorldError::Snapshot(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(WorldError::Snapshot(format!(
                "unsupported snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        Ok(snap)
    }
}

#[derive(Debug, Clone)]
pub struct World {
    cfg: SimConfig,
    lattice: Lattice,
    tick: u64,
    next_id: UnitId,
    units: Vec<Unit>,
    occupancy: Vec<Option<UnitId>>,
    streams: StreamField,
    signal: SignalField,
    claimants: Vec<Vec<u32>>,
    disk_s: Vec<Vec<(usize, u32)>>,
    disk_a: Vec<Vec<(usize, u32)>>,
    kinds: Vec<ChannelKind>,
    bounds: GenomeBounds,
}

impl World {
    /// A world with weather and streams but no units.
    pub fn empty(cfg: &SimConfig, corpus: Arc<Vec<u8>>) -> Self {
        let w = &cfg.world;
        let streams = StreamField::new(&cfg.streams, corpus, w.width, w.height, w.master_seed);
        Self::assemble(cfg, 0, 0, Vec::new(), streams, None)
    }

    /// The founding population: `founder_count` genomes of identical
    /// architecture on distinct random cells.
    pub fn new(cfg: &SimConfig, corpus: Arc<Vec<u8>>) -> Result<Self, WorldError> {
        let mut world = Self::empty(cfg, corpus);
        let w = &cfg.world;
        let spec = world.founder_spec();
        let mut cells: Vec<usize> = (0..world.lattice.cells()).collect();
        cells.shuffle(&mut rng::keyed(w.master_seed, 0, 0, Phase::Placement));
        for (i, &cell) in cells.iter().take(w.founder_count).enumerate() {
            let mut r = rng::keyed(w.master_seed, 0, i as u64, Phase::Founder);
            let genome = new_uniform_genome(w.founder_nodes, &spec, &world.bounds, &mut r)?;
            world.insert_unit(Unit::new(i as UnitId, cell, cfg.physics.e_start, genome, 0, None))?;
        }
        Ok(world)
    }

    fn assemble(
        cfg: &SimConfig,
        tick: u64,
        next_id: UnitId,
        units: Vec<Unit>,
        streams: StreamField,
        signal: Option<SignalField>,
    ) -> Self {
        let lattice = Lattice { width: cfg.world.width, height: cfg.world.height };
        let cells = lattice.cells();
        let disk_s = (0..cells).map(|c| lattice.disk(c, cfg.world.r_s)).collect();
        let disk_a = (0..cells).map(|c| lattice.disk(c, cfg.world.r_a)).collect();
        let mut kinds = Vec::with_capacity(cfg.sensory_width());
        for kind in StreamKind::ALL {
            kinds.extend(std::iter::repeat_n(kind.channel_kind(), cfg.streams.width(kind)));
        }
        kinds.extend(std::iter::repeat_n(ChannelKind::Continuous, cfg.world.emission_slots as usize));
        let mut occupancy = vec![None; cells];
        for u in &units {
            occupancy[u.cell] = Some(u.id);
        }
        Self {
            cfg: cfg.clone(),
            tick,
            next_id,
            units,
            occupancy,
            streams,
            signal: signal.unwrap_or_else(|| SignalField::new(cells, cfg.world.emission_slots as usize)),
            claimants: vec![vec![0; cells]; 4],
            disk_s,
            disk_a,
            kinds,
            bounds: cfg.world.bounds(),
            lattice,
        }
    }

    pub fn layout(&self) -> NodeLayout {
        NodeLayout { sensory: self.cfg.sensory_width() as u32, emission: self.cfg.world.emission_slots }
    }

    pub fn founder_spec(&self) -> FounderSpec {
        let w = &self.cfg.world;
        FounderSpec {
            layout: self.layout(),
            sigma_init: w.sigma_init,
            propagation_steps: w.propagation_steps,
            move_prob: w.move_prob,
        }
    }

    /// Places a unit. Ids must be unique; later ids are allocated above it.
    pub fn insert_unit(&mut self, unit: Unit) -> Result<(), WorldError> {
        if unit.cell >= self.lattice.cells() || self.occupancy[unit.cell].is_some() {
            return Err(WorldError::Cell(unit.cell));
        }
        if self.unit_index(unit.id).is_some() {
            return Err(WorldError::DuplicateId(unit.id));
        }
        unit.genome.validate(&self.bounds)?;
        assert_eq!(unit.genome.layout, self.layout(), "genome layout does not match the world");
        self.occupancy[unit.cell] = Some(unit.id);
        self.next_id = self.next_id.max(unit.id + 1);
        let at = self.units.partition_point(|u| u.id < unit.id);
        self.units.insert(at, unit);
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn streams(&self) -> &StreamField {
        &self.streams
    }

    pub fn signal(&self) -> &SignalField {
        &self.signal
    }

    pub fn channel_kinds(&self) -> &[ChannelKind] {
        &self.kinds
    }

    pub fn occupant(&self, cell: usize) -> Option<UnitId> {
        self.occupancy[cell]
    }

    pub fn unit_index(&self, id: UnitId) -> Option<usize> {
        self.units.binary_search_by_key(&id, |u| u.id).ok()
    }

    pub fn unit(&self, id: UnitId) -> Option<&Unit> {
        self.unit_index(id).map(|i| &self.units[i])
    }

    pub fn total_energy(&self) -> f64 {
        self.units.iter().map(|u| u.energy).sum()
    }

    fn allocate_claimants(&mut self) {
        let floor = self.cfg.streams.intensity_floor;
        for kind in StreamKind::ALL {
            let counts = &mut self.claimants[kind.index()];
            counts.fill(0);
            let range = self.cfg.streams.channel_range(kind);
            let map = self.streams.intensity_map(kind);
            for u in &self.units {
                if !u.genome.interface.receptor_mask[range.clone()].iter().any(|&b| b) {
                    continue;
                }
                for &(c, _) in &self.disk_s[u.cell] {
                    if map[c] >= floor {
                        counts[c] += 1;
                    }
                }
            }
        }
    }

    fn ctx(&self) -> SenseCtx<'_> {
        SenseCtx {
            cfg: &self.cfg,
            tick: self.tick,
            streams: &self.streams,
            signal: &self.signal,
            claimants: &self.claimants,
            disk_s: &self.disk_s,
            disk_a: &self.disk_a,
            kinds: &self.kinds,
        }
    }

    /// What unit `id` would sense right now, with depletion recomputed for
    /// the current positions. Does not advance the world.
    pub fn probe_sensed(&mut self, id: UnitId) -> Option<Sensed> {
        let i = self.unit_index(id)?;
        self.allocate_claimants();
        let u = &self.units[i];
        Some(self.ctx().sense(u.cell, &u.genome.interface.receptor_mask))
    }

    /// Advances one tick.
    pub fn step(&mut self) -> TickReport {
        self.tick += 1;
        let tick = self.tick;
        let seed = self.cfg.world.master_seed;

        // 1. weather
        self.streams.advance_weather(tick);
        // 2. depletion
        self.allocate_claimants();

        // 3-6. sense, evaluate, learn, cycle
        let outcomes = {
            let ctx = SenseCtx {
                cfg: &self.cfg,
                tick,
                streams: &self.streams,
                signal: &self.signal,
                claimants: &self.claimants,
                disk_s: &self.disk_s,
                disk_a: &self.disk_a,
                kinds: &self.kinds,
            };
            process_all(&mut self.units, &ctx)
        };

        let mut report = TickReport { tick, ..Default::default() };
        let mut err_sum = [0.0; BUCKETS];
        let mut err_n = [0usize; BUCKETS];
        self.signal.clear();
        for (u, out) in self.units.iter().zip(&outcomes) {
            self.signal.deposit(u.cell, u.id, &out.emission);
        }
        for out in outcomes {
            report.total_gain += out.entry.gain;
            report.total_compute += out.entry.compute_cost;
            report.total_maintenance += out.entry.maintenance;
            report.corrupt += out.corrupt as usize;
            report.weight_resets += out.resets;
            for b in 0..BUCKETS {
                if !out.entry.errors[b].is_nan() {
                    err_sum[b] += out.entry.errors[b];
                    err_n[b] += 1;
                }
            }
            report.ledger.push(out.entry);
        }
        for b in 0..BUCKETS {
            report.mean_errors[b] = if err_n[b] > 0 { err_sum[b] / err_n[b] as f64 } else { f64::NAN };
        }

        // 7. death
        let mut dead = Vec::new();
        self.units.retain(|u| {
            if u.energy <= 0.0 {
                dead.push((u.id, u.cell, u.energy, tick - u.born, u.genome.content_hash()));
                false
            } else {
                true
            }
        });
        for (id, cell, energy, age, hash) in dead {
            self.occupancy[cell] = None;
            report.death_energy += energy;
            report.deaths += 1;
            report.events.push(Event::Death { tick, unit: id, cell, energy, age, genome_hash: format!("{hash:016x}") });
        }

        // 8. reproduction
        let p = &self.cfg.physics;
        let existing = self.units.len();
        for i in 0..existing {
            let (id, cell, energy) = (self.units[i].id, self.units[i].cell, self.units[i].energy);
            if !(energy > p.repro_threshold) {
                continue;
            }
            let neighbors: [usize; 8] =
                std::array::from_fn(|k| self.lattice.offset(cell, NEIGHBOR_OFFSETS[k].0, NEIGHBOR_OFFSETS[k].1));
            let empty: [bool; 8] = std::array::from_fn(|k| self.occupancy[neighbors[k]].is_none());
            let partner = neighbors
                .iter()
                .filter_map(|&c| self.occupancy[c])
                .filter(|&pid| pid != id)
                .filter_map(|pid| self.unit_index(pid))
                .filter(|&j| self.units[j].energy > p.repro_threshold)
                .min_by_key(|&j| self.units[j].id);
            let mut r = rng::keyed(seed, tick, id, Phase::Reproduction);
            let birth = try_reproduce(
                energy,
                &self.units[i].genome,
                &empty,
                partner.map(|j| &self.units[j].genome),
                p,
                &self.cfg.rates,
                &self.bounds,
                &mut r,
            );
            let Some(birth) = birth else { continue };
            let child_cell = neighbors[birth.slot];
            let child_id = self.next_id;
            self.next_id += 1;
            self.units[i].energy = birth.parent_energy;
            report.events.push(Event::Birth {
                tick,
                unit: child_id,
                parent: id,
                partner: if birth.sexual { partner.map(|j| self.units[j].id) } else { None },
                cell: child_cell,
                genome_hash: format!("{:016x}", birth.genome.content_hash()),
                parent_before: energy,
                parent_after: birth.parent_energy,
                child_energy: birth.child_energy,
            });
            self.occupancy[child_cell] = Some(child_id);
            self.units.push(Unit::new(child_id, child_cell, birth.child_energy, birth.genome, tick, Some(id)));
            report.births += 1;
        }

        // 9. migration
        for i in 0..self.units.len() {
            let u = &self.units[i];
            let mut r = rng::keyed(seed, tick, u.id, Phase::Migration);
            if !r.random_bool(u.genome.params.move_prob) {
                continue;
            }
            let free: Vec<usize> = NEIGHBOR_OFFSETS
                .iter()
                .map(|&(dy, dx)| self.lattice.offset(u.cell, dy, dx))
                .filter(|&c| self.occupancy[c].is_none())
                .collect();
            if free.is_empty() {
                continue;
            }
            let to = free[r.random_range(0..free.len())];
            let from = u.cell;
            self.occupancy[from] = None;
            self.occupancy[to] = Some(u.id);
            self.units[i].cell = to;
        }

        report.population = self.units.len();
        report.total_energy = self.total_energy();
        report.mean_energy =
            if self.units.is_empty() { 0.0 } else { report.total_energy / self.units.len() as f64 };
        debug_assert!(self.occupancy_consistent());
        report
    }

    /// Occupancy is a bijection between occupied cells and live units.
    pub fn occupancy_consistent(&self) -> bool {
        let occupied = self.occupancy.iter().filter(|o| o.is_some()).count();
        occupied == self.units.len() && self.units.iter().all(|u| self.occupancy[u.cell] == Some(u.id))
    }

    /// SHA-256 of a canonical binary encoding of the full state, truncated.
    pub fn state_hash(&self) -> u64 {
        let mut h = Sha256::new();
        let mut put = |bytes: &[u8]| h.update(bytes);
        put(&self.tick.to_le_bytes());
        put(&self.next_id.to_le_bytes());
        for u in &self.units {
            put(&u.id.to_le_bytes());
            put(&(u.cell as u64).to_le_bytes());
            put(&u.energy.to_bits().to_le_bytes());
            put(&u.born.to_le_bytes());
            put(&u.last_v_repr.to_le_bytes());
            put(&u.last_k.to_bits().to_le_bytes());
            hash_genome(&u.genome, &mut put);
            hash_state(&u.state, &mut put);
        }
        let streams = serde_json::to_vec(self.streams.state()).expect("stream state serializes");
        put(&streams);
        for (cell, e) in self.signal.emitter.iter().enumerate() {
            if let Some(id) = e {
                put(&(cell as u64).to_le_bytes());
                put(&id.to_le_bytes());
            }
        }
        for v in &self.signal.values {
            put(&v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            tick: self.tick,
            next_id: self.next_id,
            state_hash: format!("{:016x}", self.state_hash()),
            config: self.cfg.clone(),
            units: self.units.clone(),
            streams: self.streams.state().clone(),
            signal: self.signal.clone(),
        }
    }

    pub fn from_snapshot(snap: WorldSnapshot, corpus: Arc<Vec<u8>>) -> Result<Self, WorldError> {
        let cfg = snap.config;
        let w = &cfg.world;
        let streams = StreamField::from_state(&cfg.streams, corpus, w.width, w.height, w.master_seed, snap.streams);
        let cells = (w.width * w.height) as usize;
        if snap.signal.emitter.len() != cells || snap.signal.values.len() != cells * snap.signal.slots {
            return Err(WorldError::Snapshot("signal field does not match the lattice".into()));
        }
        let world = Self::assemble(&cfg, snap.tick, snap.next_id, snap.units, streams, Some(snap.signal));
        if !world.occupancy_consistent() {
            return Err(WorldError::Snapshot("two units share a cell".into()));
        }
        let hash = format!("{:016x}", world.state_hash());
        if hash != snap.state_hash {
            return Err(WorldError::Snapshot(format!(
                "state hash mismatch: recorded {} recomputed {hash}",
                snap.state_hash
            )));
        }
        Ok(world)
    }
}

fn hash_genome(g: &Genome, put: &mut impl FnMut(&[u8])) {
    put(&g.node_count.to_le_bytes());
    put(&(g.connections.len() as u64).to_le_bytes());
    for c in &g.connections {
        put(&c.src.to_le_bytes());
        put(&c.dst.to_le_bytes());
        put(&c.weight.to_bits().to_le_bytes());
    }
    put(&g.interface.emission_width.to_le_bytes());
    put(&g.interface.emission_gain.to_bits().to_le_bytes());
    let mask: Vec<u8> = g.interface.receptor_mask.iter().map(|&b| b as u8).collect();
    put(&mask);
    put(&g.params.propagation_steps.to_le_bytes());
    put(&g.params.move_prob.to_bits().to_le_bytes());
}

fn hash_state(s: &NetState, put: &mut impl FnMut(&[u8])) {
    for v in s.activations.iter().chain(&s.last_prediction) {
        put(&v.to_bits().to_le_bytes());
    }
}

#[cfg(feature = "parallel")]
fn process_all(units: &mut [Unit], ctx: &SenseCtx<'_>) -> Vec<UnitOutcome> {
    use rayon::prelude::*;
    if units.len() < 32 {
        return units.iter_mut().map(|u| ctx.process(u)).collect();
    }
    units.par_iter_mut().map(|u| ctx.process(u)).collect()
}

#[cfg(not(feature = "parallel"))]
fn process_all(units: &mut [Unit], ctx: &SenseCtx<'_>) -> Vec<UnitOutcome> {
    units.iter_mut().map(|u| ctx.process(u)).collect()
}
