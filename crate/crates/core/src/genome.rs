//! Heritable specification of a unit: everything mutation and recombination
//! act on.
//!
//! Node indices are laid out as `[sensory | readouts | hidden]`. Sensory nodes
//! form the receiving side of the unit's boundary and readouts the emitting
//! side (one prediction readout per sensory channel, then one emission
//! readout per emission slot). `node_count` counts only hidden nodes, the
//! unit's internal network. Hidden nodes are appended at the end, so growing
//! the network never renumbers existing edges.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Founders start with an internal network in this range.
pub const FOUNDER_NODE_RANGE: std::ops::RangeInclusive<u32> = 5..=50;

#[derive(Debug, Error, PartialEq)]
pub enum GenomeError {
    #[error("node_count {count} outside [{min}, {max}]")]
    NodeCount { count: u32, min: u32, max: u32 },
    #[error("connection {src}->{dst} references a node >= {total}")]
    NodeIndex { src: u32, dst: u32, total: u32 },
    #[error("connection {src}->{dst} is not permitted by the boundary layout")]
    ForbiddenEdge { src: u32, dst: u32 },
    #[error("duplicate or unsorted connection {src}->{dst}")]
    Duplicate { src: u32, dst: u32 },
    #[error("non-finite weight on {src}->{dst}")]
    NonFinite { src: u32, dst: u32 },
    #[error("emission_width {width} outside [1, {slots}]")]
    EmissionWidth { width: u32, slots: u32 },
    #[error("emission_gain must be positive, got {0}")]
    EmissionGain(f64),
    #[error("receptor mask has length {got}, expected {expected}")]
    MaskLength { got: usize, expected: usize },
    #[error("receptor mask has no channel set")]
    EmptyMask,
    #[error("propagation_steps {steps} outside [1, {cap}]")]
    Steps { steps: u32, cap: u32 },
    #[error("move_prob {0} outside [0, 1]")]
    MoveProb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Sensory,
    Readout,
    Hidden,
}

/// Boundary dimensions shared by every unit in a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLayout {
    /// Sensory channels (stream channels followed by signal channels).
    pub sensory: u32,
    /// Width of the fixed emission slot.
    pub emission: u32,
}

impl NodeLayout {
    pub fn readouts(&self) -> u32 {
        self.sensory + self.emission
    }

    pub fn first_hidden(&self) -> u32 {
        self.sensory + self.readouts()
    }

    pub fn prediction_node(&self, channel: u32) -> u32 {
        self.sensory + channel
    }

    pub fn emission_node(&self, slot: u32) -> u32 {
        2 * self.sensory + slot
    }

    pub fn kind(&self, node: u32) -> NodeKind {
        if node < self.sensory {
            NodeKind::Sensory
        } else if node < self.first_hidden() {
            NodeKind::Readout
        } else {
            NodeKind::Hidden
        }
    }

    /// Sensory nodes receive nothing but injected data, and information can
    /// only reach a readout after passing through the internal network.
    pub fn edge_allowed(&self, src: u32, dst: u32) -> bool {
        match (self.kind(src), self.kind(dst)) {
            (_, NodeKind::Sensory) => false,
            (NodeKind::Sensory, NodeKind::Readout) => false,
            _ => true,
        }
    }
}

/// Structural limits applied by every genome-producing operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenomeBounds {
    pub node_min: u32,
    pub node_max: u32,
    pub steps_cap: u32,
}

impl Default for GenomeBounds {
    fn default() -> Self {
        Self { node_min: 1, node_max: 64, steps_cap: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub src: u32,
    pub dst: u32,
    pub weight: f64,
}

impl Connection {
    pub fn key(&self) -> (u32, u32) {
        (self.src, self.dst)
    }
}

/// Boundary-format genes. These mutate far more slowly than internal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceGenes {
    pub emission_width: u32,
    pub emission_gain: f64,
    #[serde(with = "mask_bits")]
    pub receptor_mask: Vec<bool>,
}

impl InterfaceGenes {
    pub fn admits(&self, channel: usize) -> bool {
        self.receptor_mask.get(channel).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalGenes {
    pub propagation_steps: u32,
    pub move_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub layout: NodeLayout,
    pub node_count: u32,
    /// Sorted by `(src, dst)` with no duplicates.
    pub connections: Vec<Connection>,
    pub interface: InterfaceGenes,
    pub params: OperationalGenes,
}

/// Settings for building the founding population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FounderSpec {
    pub layout: NodeLayout,
    pub sigma_init: f64,
    pub propagation_steps: u32,
    pub move_prob: f64,
}

/// Builds a founder: every sensory node feeds every hidden node, every hidden
/// node feeds every readout and itself. Weights are i.i.d. `N(0, sigma_init^2)`.
pub fn new_uniform_genome<R: Rng + ?Sized>(
    node_count: u32,
    spec: &FounderSpec,
    bounds: &GenomeBounds,
    rng: &mut R,
) -> Result<Genome, GenomeError> {
    let lo = (*FOUNDER_NODE_RANGE.start()).max(bounds.node_min);
    let hi = (*FOUNDER_NODE_RANGE.end()).min(bounds.node_max);
    if node_count < lo || node_count > hi {
        return Err(GenomeError::NodeCount { count: node_count, min: lo, max: hi });
    }
    let layout = spec.layout;
    let normal = Normal::new(0.0, spec.sigma_init).expect("sigma_init must be finite and >= 0");
    let first_hidden = layout.first_hidden();
    let hidden = first_hidden..first_hidden + node_count;

    let mut keys = Vec::new();
    for s in 0..layout.sensory {
        for h in hidden.clone() {
            keys.push((s, h));
        }
    }
    for h in hidden.clone() {
        keys.push((h, h));
        for r in layout.sensory..first_hidden {
            keys.push((h, r));
        }
    }
    keys.sort_unstable();
    let connections = keys
        .into_iter()
        .map(|(src, dst)| Connection { src, dst, weight: normal.sample(rng) })
        .collect();

    let genome = Genome {
        layout,
        node_count,
        connections,
        interface: InterfaceGenes {
            emission_width: layout.emission,
            emission_gain: 1.0,
            receptor_mask: vec![true; layout.sensory as usize],
        },
        params: OperationalGenes {
            propagation_steps: spec.propagation_steps,
            move_prob: spec.move_prob,
        },
    };
    genome.validate(bounds)?;
    Ok(genome)
}

impl Genome {
    pub fn total_nodes(&self) -> u32 {
        self.layout.first_hidden() + self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.connections.len()
    }

    pub fn find(&self, src: u32, dst: u32) -> Result<usize, usize> {
        self.connections.binary_search_by_key(&(src, dst), Connection::key)
    }

    /// Inserts keeping the sort order. Returns false if the key exists.
    pub fn insert(&mut self, conn: Connection) -> bool {
        match self.find(conn.src, conn.dst) {
            Ok(_) => false,
            Err(at) => {
                self.connections.insert(at, conn);
                true
            }
        }
    }

    pub fn validate(&self, bounds: &GenomeBounds) -> Result<(), GenomeError> {
        if self.node_count < bounds.node_min || self.node_count > bounds.node_max {
            return Err(GenomeError::NodeCount {
                count: self.node_count,
                min: bounds.node_min,
                max: bounds.node_max,
            });
        }
        let total = self.total_nodes();
        let mut prev: Option<(u32, u32)> = None;
        for c in &self.connections {
            if c.src >= total || c.dst >= total {
                return Err(GenomeError::NodeIndex { src: c.src, dst: c.dst, total });
            }
            if !self.layout.edge_allowed(c.src, c.dst) {
                return Err(GenomeError::ForbiddenEdge { src: c.src, dst: c.dst });
            }
            if prev.is_some_and(|p| p >= c.key()) {
                return Err(GenomeError::Duplicate { src: c.src, dst: c.dst });
            }
            if !c.weight.is_finite() {
                return Err(GenomeError::NonFinite { src: c.src, dst: c.dst });
            }
            prev = Some(c.key());
        }
        let iface = &self.interface;
        if iface.emission_width < 1 || iface.emission_width > self.layout.emission {
            return Err(GenomeError::EmissionWidth {
                width: iface.emission_width,
                slots: self.layout.emission,
            });
        }
        if !(iface.emission_gain > 0.0 && iface.emission_gain.is_finite()) {
            return Err(GenomeError::EmissionGain(iface.emission_gain));
        }
        if iface.receptor_mask.len() != self.layout.sensory as usize {
            return Err(GenomeError::MaskLength {
                got: iface.receptor_mask.len(),
                expected: self.layout.sensory as usize,
            });
        }
        if !iface.receptor_mask.iter().any(|&b| b) {
            return Err(GenomeError::EmptyMask);
        }
        let steps = self.params.propagation_steps;
        if steps < 1 || steps > bounds.steps_cap {
            return Err(GenomeError::Steps { steps, cap: bounds.steps_cap });
        }
        if !(0.0..=1.0).contains(&self.params.move_prob) {
            return Err(GenomeError::MoveProb(self.params.move_prob));
        }
        Ok(())
    }

    /// Debug-build check run after every genome-producing operation.
    pub(crate) fn debug_check(&self, bounds: &GenomeBounds) {
        if cfg!(debug_assertions) {
            if let Err(e) = self.validate(bounds) {
                panic!("genome invariant violated: {e}");
            }
        }
    }

    /// Canonical JSON: sorted keys, shortest round-trip float formatting.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("genome serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Short content hash used in event logs.
    pub fn content_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Structural distance: Jaccard distance of the edge-key sets, plus mean
/// absolute weight difference over shared edges (in units of `w_scale`), plus
/// the hidden-node difference as a fraction of `node_max`.
pub fn genome_distance(a: &Genome, b: &Genome, w_scale: f64, node_max: u32) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (ea, eb) = (&a.connections, &b.connections);
    let mut shared = 0usize;
    let mut weight_diff = 0.0;
    while i < ea.len() && j < eb.len() {
        match ea[i].key().cmp(&eb[j].key()) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                weight_diff += (ea[i].weight - eb[j].weight).abs();
                i += 1;
                j += 1;
            }
        }
    }
    let union = ea.len() + eb.len() - shared;
    let jaccard = if union == 0 { 0.0 } else { 1.0 - shared as f64 / union as f64 };
    let weights = if shared == 0 { 0.0 } else { weight_diff / shared as f64 / w_scale };
    let nodes = a.node_count.abs_diff(b.node_count) as f64 / node_max as f64;
    jaccard + weights + nodes
}

mod mask_bits {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        let bits: String = mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.serialize_str(&bits)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let bits = String::deserialize(d)?;
        bits.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(D::Error::custom(format!("invalid mask bit {other:?}"))),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> FounderSpec {
        FounderSpec {
            layout: NodeLayout { sensory: 6, emission: 2 },
            sigma_init: 0.1,
            propagation_steps: 2,
            move_prob: 0.1,
        }
    }

    fn founder(nodes: u32, seed: u64) -> Genome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        new_uniform_genome(nodes, &spec(), &GenomeBounds::default(), &mut rng).unwrap()
    }

    #[test]
    fn founder_has_scaffold_and_small_weights() {
        let g = founder(5, 1);
        assert_eq!(g.node_count, 5);
        let l = g.layout;
        // sensory->hidden, hidden self loops, hidden->readouts
        assert_eq!(g.edge_count(), (6 * 5 + 5 + 5 * 8) as usize);
        assert!(g.connections.iter().all(|c| c.weight.is_finite() && c.weight.abs() < 1.0));
        assert!(g.interface.receptor_mask.iter().all(|&b| b));
        assert_eq!(g.interface.emission_width, l.emission);
    }

    #[test]
    fn founder_is_pure_in_node_count_and_seed() {
        assert_eq!(founder(7, 42), founder(7, 42));
    }

    #[test]
    fn founders_share_topology_and_interface() {
        let (a, b) = (founder(9, 1), founder(9, 2));
        let keys = |g: &Genome| g.connections.iter().map(Connection::key).collect::<Vec<_>>();
        assert_eq!(keys(&a), keys(&b));
        assert_eq!(a.interface, b.interface);
        assert_ne!(a.connections, b.connections);
    }

    #[test]
    fn founder_node_count_out_of_range_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bounds = GenomeBounds::default();
        assert!(matches!(
            new_uniform_genome(4, &spec(), &bounds, &mut rng),
            Err(GenomeError::NodeCount { .. })
        ));
        assert!(new_uniform_genome(51, &spec(), &bounds, &mut rng).is_err());
    }

    #[test]
    fn layout_forbids_boundary_shortcuts() {
        let l = NodeLayout { sensory: 2, emission: 1 };
        // sensory 0..2, readouts 2..5, hidden 5..
        assert!(!l.edge_allowed(0, 2));
        assert!(!l.edge_allowed(5, 1));
        assert!(l.edge_allowed(0, 5));
        assert!(l.edge_allowed(5, 2));
        assert!(l.edge_allowed(2, 5));
        assert!(l.edge_allowed(5, 5));
    }

    #[test]
    fn distance_examples() {
        let g = founder(5, 3);
        assert_eq!(genome_distance(&g, &g, 1.0, 64), 0.0);

        let mut h = g.clone();
        h.connections[0].weight += 1.0;
        let d = genome_distance(&g, &h, 1.0, 64);
        let expected = 1.0 / g.edge_count() as f64;
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");

        let mut disjoint = g.clone();
        disjoint.connections.retain(|c| c.src < 3);
        let mut other = g.clone();
        other.connections.retain(|c| c.src >= 3);
        let d = genome_distance(&disjoint, &other, 1.0, 64);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn canonical_json_round_trips_byte_identically() {
        let g = founder(6, 9);
        let text = g.to_canonical_json();
        let back = Genome::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_canonical_json(), text);
        // keys sorted
        let keys = ["\"connections\"", "\"interface\"", "\"layout\"", "\"node_count\"", "\"params\""];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn validator_catches_broken_genomes() {
        let bounds = GenomeBounds::default();
        let mut g = founder(5, 1);
        g.connections.push(g.connections[0]);
        assert!(matches!(g.validate(&bounds), Err(GenomeError::Duplicate { .. })));

        let mut g = founder(5, 1);
        g.interface.receptor_mask.iter_mut().for_each(|b| *b = false);
        assert_eq!(g.validate(&bounds), Err(GenomeError::EmptyMask));

        let mut g = founder(5, 1);
        g.insert(Connection { src: 0, dst: 6, weight: 0.0 });
        assert!(matches!(g.validate(&bounds), Err(GenomeError::ForbiddenEdge { .. })));
    }

    fn arb_genome() -> impl Strategy<Value = Genome> {
        (5u32..12, any::<u64>(), proptest::collection::vec(any::<bool>(), 0..64)).prop_map(
            |(nodes, seed, drops)| {
                let mut g = founder(nodes, seed);
                let mut k = 0;
                g.connections.retain(|_| {
                    k += 1;
                    !drops.get(k).copied().unwrap_or(false)
                });
                g
            },
        )
    }

    proptest! {
        #[test]
        fn distance_is_a_symmetric_nonnegative_premetric(a in arb_genome(), b in arb_genome()) {
            let ab = genome_distance(&a, &b, 1.0, 64);
            let ba = genome_distance(&b, &a, 1.0, 64);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert_eq!(genome_distance(&a, &a, 1.0, 64), 0.0);
        }
    }
}
