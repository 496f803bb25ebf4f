//! Blind variation and reproduction.
//!
//! No operator here sees energy, error or stream data: they take a genome,
//! the rates and a random stream, nothing else.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::genome::{Connection, Genome, GenomeBounds, NodeKind};
use crate::physics::PhysicsParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationRates {
    /// Per connection per reproduction.
    pub weight_rate: f64,
    pub weight_sigma: f64,
    /// Per reproduction event.
    pub topo_rate: f64,
    /// Per reproduction event, per operational gene.
    pub param_rate: f64,
    /// Multiplier applied to `param_rate` for boundary genes.
    pub interface_factor: f64,
    pub recomb_prob: f64,
    /// When true, edge deletion may remove the last edge into the readouts.
    pub strict_blind_deletion: bool,
}

impl Default for MutationRates {
    fn default() -> Self {
        Self {
            weight_rate: 0.01,
            weight_sigma: 0.05,
            topo_rate: 0.05,
            param_rate: 0.05,
            interface_factor: 0.01,
            recomb_prob: 0.25,
            strict_blind_deletion: false,
        }
    }
}

impl MutationRates {
    pub fn check(&self) -> Result<(), String> {
        let unit = [
            ("weight_rate", self.weight_rate),
            ("topo_rate", self.topo_rate),
            ("param_rate", self.param_rate),
            ("interface_factor", self.interface_factor),
            ("recomb_prob", self.recomb_prob),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("rates.{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.weight_sigma >= 0.0 && self.weight_sigma.is_finite()) {
            return Err(format!("rates.weight_sigma must be non-negative, got {}", self.weight_sigma));
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("finite non-negative sigma")
}

/// Perturbs each connection with probability `weight_rate` by `N(0, sigma^2)`.
pub fn mutate_weights<R: Rng + ?Sized>(g: &mut Genome, r: &MutationRates, rng: &mut R) -> usize {
    let noise = normal(r.weight_sigma);
    let mut hits = 0;
    for c in &mut g.connections {
        if rng.random_bool(r.weight_rate) {
            c.weight += noise.sample(rng);
            hits += 1;
        }
    }
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyOp {
    Split,
    AddEdge,
    DeleteEdge,
}

fn allowed_pair_count(g: &Genome) -> usize {
    let total = g.total_nodes() as usize;
    let s = g.layout.sensory as usize;
    let r = g.layout.readouts() as usize;
    total * (total - s) - s * r
}

fn readout_inputs(g: &Genome) -> usize {
    g.connections.iter().filter(|c| g.layout.kind(c.dst) == NodeKind::Readout).count()
}

/// Operations that can act on `g` under `bounds`.
pub fn applicable_ops(g: &Genome, bounds: &GenomeBounds) -> Vec<TopologyOp> {
    let mut ops = Vec::with_capacity(3);
    if !g.connections.is_empty() && g.node_count < bounds.node_max {
        ops.push(TopologyOp::Split);
    }
    if g.edge_count() < allowed_pair_count(g) {
        ops.push(TopologyOp::AddEdge);
    }
    if !g.connections.is_empty() {
        ops.push(TopologyOp::DeleteEdge);
    }
    ops
}

/// Replaces edge `idx` (a -> b, weight w) with a -> new (1.0) and new -> b (w).
pub fn split_edge(g: &mut Genome, idx: usize) {
    let old = g.connections.remove(idx);
    let n = g.total_nodes();
    g.node_count += 1;
    g.insert(Connection { src: old.src, dst: n, weight: 1.0 });
    g.insert(Connection { src: n, dst: old.dst, weight: old.weight });
}

fn add_random_edge<R: Rng + ?Sized>(g: &mut Genome, sigma: f64, rng: &mut R) -> bool {
    let total = g.total_nodes();
    let weight = normal(sigma).sample(rng);
    for _ in 0..64 {
        let (src, dst) = (rng.random_range(0..total), rng.random_range(0..total));
        if g.layout.edge_allowed(src, dst) && g.find(src, dst).is_err() {
            return g.insert(Connection { src, dst, weight });
        }
    }
    let free: Vec<(u32, u32)> = (0..total)
        .flat_map(|s| (0..total).map(move |d| (s, d)))
        .filter(|&(s, d)| g.layout.edge_allowed(s, d) && g.find(s, d).is_err())
        .collect();
    match free.as_slice() {
        [] => false,
        keys => {
            let (src, dst) = keys[rng.random_range(0..keys.len())];
            g.insert(Connection { src, dst, weight })
        }
    }
}

/// With probability `topo_rate`, applies one of split / add / delete chosen
/// uniformly among the applicable ones. Returns the operation that changed
/// the genome, if any.
pub fn mutate_topology<R: Rng + ?Sized>(
    g: &mut Genome,
    r: &MutationRates,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> Option<TopologyOp> {
    if !rng.random_bool(r.topo_rate) {
        return None;
    }
    let ops = applicable_ops(g, bounds);
    let op = *ops.get(rng.random_range(0..ops.len().max(1)))?;
    let done = match op {
        TopologyOp::Split => {
            let idx = rng.random_range(0..g.edge_count());
            split_edge(g, idx);
            true
        }
        TopologyOp::AddEdge => add_random_edge(g, r.weight_sigma, rng),
        TopologyOp::DeleteEdge => {
            let idx = rng.random_range(0..g.edge_count());
            let into_readout = g.layout.kind(g.connections[idx].dst) == NodeKind::Readout;
            if !r.strict_blind_deletion && into_readout && readout_inputs(g) == 1 {
                false
            } else {
                g.connections.remove(idx);
                true
            }
        }
    };
    g.debug_check(bounds);
    done.then_some(op)
}

/// Operational genes mutate at `param_rate`; boundary genes at
/// `param_rate * interface_factor`. Returns the number of interface changes.
pub fn mutate_params_and_interface<R: Rng + ?Sized>(
    g: &mut Genome,
    r: &MutationRates,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> usize {
    if rng.random_bool(r.param_rate) {
        let s = g.params.propagation_steps as i64 + if rng.random_bool(0.5) { 1 } else { -1 };
        g.params.propagation_steps = s.clamp(1, bounds.steps_cap as i64) as u32;
    }
    if rng.random_bool(r.param_rate) {
        let m = g.params.move_prob + normal(0.02).sample(rng);
        g.params.move_prob = m.clamp(0.0, 1.0);
    }

    let iface_rate = (r.param_rate * r.interface_factor).clamp(0.0, 1.0);
    let mut changes = 0;
    if rng.random_bool(iface_rate) {
        flip_receptor(&mut g.interface.receptor_mask, rng);
        changes += 1;
    }
    if rng.random_bool(iface_rate) {
        let w = g.interface.emission_width as i64 + if rng.random_bool(0.5) { 1 } else { -1 };
        g.interface.emission_width = w.clamp(1, g.layout.emission.max(1) as i64) as u32;
        changes += 1;
    }
    if rng.random_bool(iface_rate) {
        g.interface.emission_gain *= normal(0.1).sample(rng).exp();
        changes += 1;
    }
    g.debug_check(bounds);
    changes
}

/// Flips one random bit. A flip that would empty the mask is redirected to a
/// random unset bit.
pub fn flip_receptor<R: Rng + ?Sized>(mask: &mut [bool], rng: &mut R) -> usize {
    let i = rng.random_range(0..mask.len());
    let set = mask.iter().filter(|&&b| b).count();
    if mask[i] && set == 1 {
        let unset: Vec<usize> = (0..mask.len()).filter(|&j| !mask[j]).collect();
        if let Some(&j) = unset.get(rng.random_range(0..unset.len().max(1))) {
            mask[j] = true;
            return j;
        }
        return i;
    }
    mask[i] = !mask[i];
    i
}

/// All three operators in order.
pub fn mutate<R: Rng + ?Sized>(g: &mut Genome, r: &MutationRates, bounds: &GenomeBounds, rng: &mut R) {
    mutate_weights(g, r, rng);
    mutate_topology(g, r, bounds, rng);
    mutate_params_and_interface(g, r, bounds, rng);
}

/// Crossover without mutation. Shared edges take a weight from a random
/// parent; disjoint edges are kept with probability 1/2.
pub fn crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> Genome {
    assert_eq!(a.layout, b.layout, "parents must share a boundary layout");
    let (ea, eb) = (&a.connections, &b.connections);
    let mut conns = Vec::with_capacity(ea.len().max(eb.len()));
    let (mut i, mut j) = (0, 0);
    while i < ea.len() || j < eb.len() {
        let order = match (ea.get(i), eb.get(j)) {
            (Some(x), Some(y)) => x.key().cmp(&y.key()),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match order {
            std::cmp::Ordering::Equal => {
                conns.push(if rng.random_bool(0.5) { ea[i] } else { eb[j] });
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                if rng.random_bool(0.5) {
                    conns.push(ea[i]);
                }
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                if rng.random_bool(0.5) {
                    conns.push(eb[j]);
                }
                j += 1;
            }
        }
    }
    let pick = |rng: &mut R| rng.random_bool(0.5);
    let iface = crate::genome::InterfaceGenes {
        emission_width: if pick(rng) { a.interface.emission_width } else { b.interface.emission_width },
        emission_gain: if pick(rng) { a.interface.emission_gain } else { b.interface.emission_gain },
        receptor_mask: if pick(rng) { a.interface.receptor_mask.clone() } else { b.interface.receptor_mask.clone() },
    };
    let params = crate::genome::OperationalGenes {
        propagation_steps: if pick(rng) { a.params.propagation_steps } else { b.params.propagation_steps },
        move_prob: if pick(rng) { a.params.move_prob } else { b.params.move_prob },
    };
    Genome {
        layout: a.layout,
        node_count: a.node_count.max(b.node_count),
        connections: conns,
        interface: iface,
        params,
    }
}

/// Crossover followed by all three mutation operators.
pub fn recombine<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    r: &MutationRates,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> Genome {
    let mut child = crossover(a, b, rng);
    mutate(&mut child, r, bounds, rng);
    child.debug_check(bounds);
    child
}

/// Neighbour offsets `(dy, dx)` in lexicographic order.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 8] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct Birth {
    /// Index into [`NEIGHBOR_OFFSETS`].
    pub slot: usize,
    pub genome: Genome,
    pub parent_energy: f64,
    pub child_energy: f64,
    pub sexual: bool,
}

/// Fission. `empty[k]` says whether neighbour `NEIGHBOR_OFFSETS[k]` is free.
/// The slot is the first free offset after a seeded shuffle; the child is a
/// mutated copy, or a recombination with `partner` if the coin succeeds.
/// Returns `None` (deferred) when the threshold is not exceeded or no
/// neighbour is free.
#[allow(clippy::too_many_arguments)]
pub fn try_reproduce<R: Rng + ?Sized>(
    energy: f64,
    genome: &Genome,
    empty: &[bool; 8],
    partner: Option<&Genome>,
    p: &PhysicsParams,
    r: &MutationRates,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> Option<Birth> {
    if !(energy > p.repro_threshold) {
        return None;
    }
    let mut order: [usize; 8] = std::array::from_fn(|k| k);
    order.shuffle(rng);
    let slot = order.into_iter().find(|&k| empty[k])?;
    let sexual = partner.is_some() && rng.random_bool(r.recomb_prob);
    let genome = match partner {
        Some(b) if sexual => recombine(genome, b, r, bounds, rng),
        _ => {
            let mut child = genome.clone();
            mutate(&mut child, r, bounds, rng);
            child
        }
    };
    let child_energy = energy / 2.0;
    Some(Birth { slot, genome, parent_energy: energy - child_energy, child_energy, sexual })
}
