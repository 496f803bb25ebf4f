//! Micro-worlds and toy harnesses shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::sync::Arc;

use mee_core::genome::{Connection, Genome, InterfaceGenes, NodeLayout, OperationalGenes};
use mee_core::neural::{forward_cycle_in_place, CycleSettings, NetState};
use mee_core::physics::{compression_ratio, energy_update, prediction_error, ChannelKind, PhysicsParams};
use mee_core::plasticity::hebbian_update_in_place;
use mee_core::streams::{Coverage, StreamKind, BUNDLED_CORPUS};
use mee_core::world::{Source, World};
use mee_core::{SimConfig, Unit, UnitId};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus() -> Arc<Vec<u8>> {
    Arc::new(BUNDLED_CORPUS.to_vec())
}

pub fn default_config_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

// ---------------------------------------------------------------------------
// Pass-through doom

/// ceil(100 / (0.0002 * 16 + 1 - 0.025 * 36)) with the shipped alpha, beta,
/// gamma and E0: 9 perceived cells x 4 temporal channels, 8 edges x 2 steps.
pub const DOOM_BOUND: u64 = 969;

/// 3x3 torus, perception radius 1, one constant temporal signal everywhere.
pub fn doom_config() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.world.width = 3;
    cfg.world.height = 3;
    cfg.world.founder_count = 0;
    cfg.world.r_s = 1;
    cfg.world.r_a = 1;
    for kind in StreamKind::ALL {
        cfg.streams.spec_mut(kind).coverage = Coverage::Off;
    }
    cfg.streams.temporal.coverage = Coverage::Uniform;
    cfg.streams.temporal.blob_count = 1;
    cfg.streams.temporal_freq = [0.0, 0.0];
    cfg.streams.temporal_freq_walk = 0.0;
    cfg.streams.temporal_amp = [0.5, 0.5];
    cfg.streams.temporal_amp_walk = 0.0;
    // Frozen weights keep the copy exact.
    cfg.physics.eta = 0.0;
    cfg.physics.lambda_decay = 0.0;
    cfg
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One hidden node per temporal channel copies it to that channel's
/// prediction readout, so v_repr equals v_in and the error is (numerically)
/// zero. The unit starts as if it had already run one cycle.
pub fn doom_world() -> (World, UnitId) {
    let cfg = doom_config();
    let probe_world = {
        let mut w = World::empty(&cfg, corpus());
        w.insert_unit(Unit::new(0, 4, cfg.physics.e_start, pass_through_genome(&cfg, 0.5), 0, None)).unwrap();
        w
    };
    let mut probe_world = probe_world;
    let sensed = probe_world.probe_sensed(0).unwrap();
    let temporal = cfg.streams.channel_range(StreamKind::Temporal);
    let c = sensed.values[temporal.start];
    assert!(temporal.clone().all(|ch| sensed.values[ch] == c), "temporal window should be constant");

    let genome = pass_through_genome(&cfg, c);
    let mut unit = Unit::new(0, 4, cfg.physics.e_start, genome, 0, None);
    let settings = CycleSettings { tau: cfg.physics.tau, epsilon_p: cfg.physics.epsilon_p };
    let kinds = probe_world.channel_kinds().to_vec();
    let out = forward_cycle_in_place(&unit.genome, &mut unit.state, &sensed.values, &kinds, settings).unwrap();
    unit.last_v_repr = out.v_repr;
    unit.last_k = out.k_cost;
    assert_eq!(out.v_repr, sensed.v_in);

    let mut world = World::empty(&cfg, corpus());
    world.insert_unit(unit).unwrap();
    (world, 0)
}

fn pass_through_genome(cfg: &SimConfig, c: f64) -> Genome {
    let layout = NodeLayout { sensory: cfg.sensory_width() as u32, emission: cfg.world.emission_slots };
    let temporal = cfg.streams.channel_range(StreamKind::Temporal);
    let mut mask = vec![false; layout.sensory as usize];
    let mut g = Genome {
        layout,
        node_count: temporal.len() as u32,
        connections: Vec::new(),
        interface: InterfaceGenes { emission_width: layout.emission, emission_gain: 1.0, receptor_mask: Vec::new() },
        params: OperationalGenes { propagation_steps: 2, move_prob: 0.0 },
    };
    for (i, ch) in temporal.enumerate() {
        mask[ch] = true;
        let hidden = layout.first_hidden() + i as u32;
        g.insert(Connection { src: ch as u32, dst: hidden, weight: 1.0 });
        g.insert(Connection { src: hidden, dst: layout.prediction_node(ch as u32), weight: logit(c) / c });
    }
    g.interface.receptor_mask = mask;
    g.validate(&cfg.world.bounds()).unwrap();
    g
}

/// Tick at which the pass-through unit dies, if it does within `max_ticks`.
pub fn doom_death_tick(max_ticks: u64) -> Option<u64> {
    let (mut w, _) = doom_world();
    for _ in 0..max_ticks {
        let r = w.step();
        if r.deaths > 0 {
            return Some(r.tick);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Urn lock-in toy

pub const URN_TICKS: u64 = 2000;
pub const URN_EARLY_TICKS: u64 = 20;
/// Data volume credited to the toy unit every tick.
pub const URN_VOLUME: f64 = 36.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UrnOutcome {
    pub early_leader: usize,
    pub final_leader: usize,
    pub mass: [f64; 2],
}

/// Input node 0, readout node 1, pathways through hidden nodes 2 and 3. Both
/// chains start at 0.5 with +-5% jitter; the stream is a slow sine.
pub fn urn_replicate(seed: u64) -> UrnOutcome {
    let p = PhysicsParams::default();
    let layout = NodeLayout { sensory: 1, emission: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Genome {
        layout,
        node_count: 2,
        connections: Vec::new(),
        interface: InterfaceGenes { emission_width: 0, emission_gain: 1.0, receptor_mask: vec![true] },
        params: OperationalGenes { propagation_steps: 2, move_prob: 0.0 },
    };
    for (src, dst) in [(0, 2), (0, 3), (2, 1), (3, 1)] {
        g.insert(Connection { src, dst, weight: 0.5 * (1.0 + rng.random_range(-0.05..0.05)) });
    }
    let kinds = [ChannelKind::Continuous];
    let settings = CycleSettings { tau: p.tau, epsilon_p: p.epsilon_p };
    let mut state = NetState::zeroed(&g);
    let (mut v_repr, mut k, mut energy) = (0u32, 0.0, p.e_start);
    let mut early = [0.0; 2];
    for t in 1..=URN_TICKS {
        let x = [0.5 + 0.25 * (std::f64::consts::TAU * t as f64 / 50.0).sin()];
        let err = prediction_error(&x, &state.last_prediction, &kinds, &[true]);
        let upd = energy_update(energy, compression_ratio(1, v_repr, err), URN_VOLUME, k, &p);
        energy = upd.e_next;
        if t <= URN_EARLY_TICKS {
            for (i, e) in early.iter_mut().enumerate() {
                *e += upd.surplus * state.activations[2 + i];
            }
        }
        hebbian_update_in_place(&mut g, &state, upd.surplus, &p);
        let out = forward_cycle_in_place(&g, &mut state, &x, &kinds, settings).expect("toy stays finite");
        v_repr = out.v_repr;
        k = out.k_cost;
    }
    let w = |s: u32, d: u32| g.connections[g.find(s, d).unwrap()].weight.abs();
    let mass = [w(0, 2) + w(2, 1), w(0, 3) + w(3, 1)];
    let leader = |v: [f64; 2]| if v[1] > v[0] { 1 } else { 0 };
    UrnOutcome { early_leader: leader(early), final_leader: leader(mass), mass }
}

/// Fraction of replicates whose early leader is still dominant at the end.
pub fn urn_lock_in_rate(replicates: u64) -> f64 {
    let kept = (0..replicates).filter(|&s| {
        let o = urn_replicate(s);
        o.early_leader == o.final_leader
    });
    kept.count() as f64 / replicates as f64
}

// ---------------------------------------------------------------------------
// Hebbian properties

fn small_genome(edges: &[(u32, u32, f64)]) -> Genome {
    let layout = NodeLayout { sensory: 2, emission: 1 };
    let mut g = Genome {
        layout,
        node_count: 3,
        connections: Vec::new(),
        interface: InterfaceGenes { emission_width: 1, emission_gain: 1.0, receptor_mask: vec![true; 2] },
        params: OperationalGenes { propagation_steps: 1, move_prob: 0.0 },
    };
    for &(s, d, w) in edges {
        g.insert(Connection { src: s, dst: d, weight: w });
    }
    g
}

fn edge_strategy() -> impl Strategy<Value = Vec<(u32, u32, f64)>> {
    // Layout: sensory 0-1, readouts 2-4, hidden 5-7.
    let srcs = prop_oneof![Just(0u32), Just(1), Just(5), Just(6), Just(7)];
    let dsts = prop_oneof![Just(5u32), Just(6), Just(7), Just(2), Just(3), Just(4)];
    prop::collection::vec((srcs, dsts, -5.0..5.0f64), 1..12)
}

fn activation_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64], 8)
}

/// With lambda = 0 each weight moves in the direction of the surplus when
/// both ends are active, and stays put otherwise.
pub fn hebbian_sign_law(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(PtConfig { cases, failure_persistence: None, ..PtConfig::default() });
    let strategy = (edge_strategy(), activation_strategy(), -3.0..3.0f64, 1e-4..0.1f64);
    runner
        .run(&strategy, |(edges, acts, surplus, eta)| {
            let g = small_genome(&edges);
            let state = NetState { activations: acts.clone(), last_prediction: vec![0.5; 2] };
            let p = PhysicsParams { eta, lambda_decay: 0.0, ..PhysicsParams::default() };
            let (h, resets) = mee_core::plasticity::hebbian_update(&g, &state, surplus, &p);
            prop_assert_eq!(resets, 0);
            for (before, after) in g.connections.iter().zip(&h.connections) {
                let xy = acts[before.src as usize] * acts[before.dst as usize];
                let dw = after.weight - before.weight;
                if xy == 0.0 || surplus == 0.0 {
                    prop_assert_eq!(dw, 0.0);
                } else if xy * surplus * eta > 1e-12 * before.weight.abs().max(1.0) {
                    // Anything smaller can be lost to rounding.
                    prop_assert_eq!(dw.signum(), surplus.signum(), "dw {} surplus {}", dw, surplus);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// With zero surplus and positive lambda every nonzero weight shrinks.
pub fn hebbian_decay_restores(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(PtConfig { cases, failure_persistence: None, ..PtConfig::default() });
    let strategy = (edge_strategy(), activation_strategy(), 1e-6..1.0f64);
    runner
        .run(&strategy, |(edges, acts, lambda)| {
            let g = small_genome(&edges);
            let state = NetState { activations: acts, last_prediction: vec![0.5; 2] };
            let p = PhysicsParams { lambda_decay: lambda, ..PhysicsParams::default() };
            let (h, _) = mee_core::plasticity::hebbian_update(&g, &state, 0.0, &p);
            for (before, after) in g.connections.iter().zip(&h.connections) {
                if before.weight != 0.0 {
                    prop_assert!(after.weight.abs() < before.weight.abs());
                    prop_assert_eq!(after.weight.signum(), before.weight.signum());
                }
            }
            Ok(())
        })
        .map_err(|e: proptest::test_runner::TestError<_>| e.to_string())
}

/// exp(-BCE) equals the Bernoulli likelihood; returns the worst relative
/// deviation over `cases` random bit vectors.
pub fn bce_likelihood_worst(cases: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=16);
        let bits: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1.0 - 1e-3)).collect();
        let kinds = vec![ChannelKind::Discrete; n];
        let err = prediction_error(&bits, &probs, &kinds, &vec![true; n]);
        let lik: f64 = bits.iter().zip(&probs).map(|(&b, &p)| if b == 1.0 { p } else { 1.0 - p }).product();
        worst = worst.max(((-err).exp() - lik).abs() / lik);
    }
    worst
}

// ---------------------------------------------------------------------------
// Locality and producer invariance

/// A 16x16 world with a handful of founders, nobody moving.
pub fn locality_base() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.world.width = 16;
    cfg.world.height = 16;
    cfg.world.founder_count = 0;
    cfg.world.move_prob = 0.0;
    cfg.world.master_seed = 11;
    cfg
}

pub fn founder(world: &World, id: UnitId, cell: usize, seed: u64) -> Unit {
    let cfg = world.config();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut g = mee_core::genome::new_uniform_genome(5, &world.founder_spec(), &cfg.world.bounds(), &mut r).unwrap();
    g.params.move_prob = 0.0;
    Unit::new(id, cell, cfg.physics.e_start, g, 0, None)
}

/// Sensation of a unit is unchanged when everything farther than
/// max(r_s, r_a) + r_s from it is perturbed: extra units, different genomes,
/// different emissions. Checks the probe before stepping and the ledger of
/// every tick for `ticks` ticks.
pub fn locality_check(ticks: u64) -> Result<(), String> {
    let cfg = locality_base();
    let reach = cfg.world.r_s.max(cfg.world.r_a) + cfg.world.r_s;
    let build = |extra: bool| -> World {
        let mut w = World::empty(&cfg, corpus());
        let l = w.lattice().clone();
        let centre = l.cell(8, 8);
        w.insert_unit(founder(&w, 0, centre, 1)).unwrap();
        w.insert_unit(founder(&w, 1, l.cell(9, 8), 2)).unwrap();
        if extra {
            let mut id = 100;
            for c in 0..l.cells() {
                if l.chebyshev(centre, c) > reach && c % 7 == 0 {
                    w.insert_unit(founder(&w, id, c, 1000 + id)).unwrap();
                    id += 1;
                }
            }
        }
        w
    };
    let mut a = build(false);
    let mut b = build(true);
    if b.units().len() < 10 {
        return Err("perturbation placed too few units".into());
    }
    let sa = a.probe_sensed(0).unwrap();
    let sb = b.probe_sensed(0).unwrap();
    if sa.values != sb.values || sa.volumes != sb.volumes || sa.v_in != sb.v_in {
        return Err("initial sensation differs".into());
    }
    for _ in 0..ticks {
        let ra = a.step();
        let rb = b.step();
        for id in [0, 1] {
            let ea = ra.ledger.iter().find(|e| e.unit_id == id);
            let eb = rb.ledger.iter().find(|e| e.unit_id == id);
            let same = match (ea, eb) {
                (Some(x), Some(y)) => {
                    x.energy_after.to_bits() == y.energy_after.to_bits()
                        && x.volumes == y.volumes
                        && x.sources == y.sources
                        && x.error.to_bits() == y.error.to_bits()
                }
                (None, None) => true,
                _ => false,
            };
            if !same {
                return Err(format!("unit {id} diverged at tick {}", ra.tick));
            }
        }
        if ra.births + rb.births > 0 {
            // Offspring could wander into range; stop while the setup holds.
            break;
        }
    }
    Ok(())
}

fn set_edge(g: &mut Genome, src: u32, dst: u32, weight: f64) {
    match g.find(src, dst) {
        Ok(i) => g.connections[i].weight = weight,
        Err(i) => g.connections.insert(i, Connection { src, dst, weight }),
    }
}

/// A producer's energy trajectory is identical with and without consumers
/// that feed only on emissions. The producer senses streams only, so the
/// consumers' own emissions never reach it.
/// Returns the total gain the consumers drew from the producer.
pub fn producer_invariance_check(ticks: u64) -> Result<f64, String> {
    let cfg = locality_base();
    let producer_cell = 8 * 16 + 8;
    let build = |consumers: bool| -> World {
        let mut w = World::empty(&cfg, corpus());
        let sig = cfg.streams.total_width();
        let mut p = founder(&w, 0, producer_cell, 5);
        p.genome.interface.emission_gain = 4.0;
        p.genome.interface.receptor_mask = (0..cfg.sensory_width()).map(|ch| ch < sig).collect();
        let layout = p.genome.layout;
        let h = layout.first_hidden();
        let emit = layout.emission_node(0)..layout.emission_node(0) + layout.emission;
        p.genome.connections.retain(|c| !emit.contains(&c.dst));
        for ch in 0..sig as u32 {
            set_edge(&mut p.genome, ch, h, 1.0);
        }
        for dst in emit {
            set_edge(&mut p.genome, h, dst, 10.0);
        }
        w.insert_unit(p).unwrap();
        if consumers {
            let l = w.lattice().clone();
            for (i, (dy, dx)) in [(2, 0), (0, 3), (-2, -2), (3, 3)].into_iter().enumerate() {
                let cell = l.offset(producer_cell, dy, dx);
                let mut u = founder(&w, 10 + i as u64, cell, 50 + i as u64);
                let mask: Vec<bool> = (0..cfg.sensory_width()).map(|ch| ch >= sig).collect();
                u.genome.interface.receptor_mask = mask;
                let layout = u.genome.layout;
                let h = layout.first_hidden();
                for ch in sig as u32..layout.sensory {
                    set_edge(&mut u.genome, ch, h, 1.0);
                    set_edge(&mut u.genome, h, layout.prediction_node(ch), 1.0);
                }
                w.insert_unit(u).unwrap();
            }
        }
        w
    };
    let mut alone = build(false);
    let mut fed = build(true);
    let mut drawn = 0.0;
    for _ in 0..ticks {
        let ra = alone.step();
        let rb = fed.step();
        let ea = ra.ledger.iter().find(|e| e.unit_id == 0);
        let eb = rb.ledger.iter().find(|e| e.unit_id == 0);
        match (ea, eb) {
            (Some(x), Some(y)) if x.energy_after.to_bits() == y.energy_after.to_bits() => {}
            (None, None) => break,
            _ => return Err(format!("producer energy diverged at tick {}", ra.tick)),
        }
        for e in rb.ledger.iter().filter(|e| e.unit_id >= 10) {
            for &(src, share) in &e.sources {
                if src == Source::Emitter(0) {
                    drawn += e.gain * share;
                }
            }
        }
        if ra.births + rb.births > 0 {
            break;
        }
    }
    if drawn > 0.0 {
        Ok(drawn)
    } else {
        Err("consumers drew nothing from the producer; the check is vacuous".into())
    }
}
