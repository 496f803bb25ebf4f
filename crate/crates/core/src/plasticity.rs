//! Within-lifetime learning: a three-factor Hebbian rule gated by the
//! unit's energy surplus.

use crate::genome::Genome;
use crate::neural::NetState;
use crate::physics::PhysicsParams;

/// `dw = eta * surplus * x_j * y_i - lambda * w` for one connection `j -> i`.
pub fn weight_delta(w: f64, x_j: f64, y_i: f64, surplus: f64, eta: f64, lambda: f64) -> f64 {
    eta * surplus * x_j * y_i - lambda * w
}

/// Applies the rule to every connection using the cycle's final activations.
/// Weights are clamped to `[-weight_cap, weight_cap]`; a non-finite result
/// resets the weight to 0. Returns how many weights were reset.
pub fn hebbian_update_in_place(
    genome: &mut Genome,
    state: &NetState,
    surplus: f64,
    p: &PhysicsParams,
) -> usize {
    let act = &state.activations;
    let cap = p.weight_cap;
    let mut reset = 0;
    for c in &mut genome.connections {
        let x = act.get(c.src as usize).copied().unwrap_or(0.0);
        let y = act.get(c.dst as usize).copied().unwrap_or(0.0);
        let w = c.weight + weight_delta(c.weight, x, y, surplus, p.eta, p.lambda_decay);
        c.weight = if w.is_finite() {
            w.clamp(-cap, cap)
        } else {
            reset += 1;
            0.0
        };
    }
    reset
}

/// Pure form of [`hebbian_update_in_place`].
pub fn hebbian_update(genome: &Genome, state: &NetState, surplus: f64, p: &PhysicsParams) -> (Genome, usize) {
    let mut g = genome.clone();
    let reset = hebbian_update_in_place(&mut g, state, surplus, p);
    (g, reset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{Connection, GenomeBounds, InterfaceGenes, NodeLayout, OperationalGenes};

    fn pair(w: f64) -> (Genome, NetState) {
        let layout = NodeLayout { sensory: 1, emission: 1 };
        let h = layout.first_hidden();
        let g = Genome {
            layout,
            node_count: 1,
            connections: vec![Connection { src: 0, dst: h, weight: w }],
            interface: InterfaceGenes { emission_width: 1, emission_gain: 1.0, receptor_mask: vec![true] },
            params: OperationalGenes { propagation_steps: 1, move_prob: 0.0 },
        };
        g.validate(&GenomeBounds::default()).unwrap();
        let mut s = NetState::zeroed(&g);
        s.activations[0] = 1.0;
        s.activations[h as usize] = 1.0;
        (g, s)
    }

    fn params(eta: f64, lambda: f64) -> PhysicsParams {
        PhysicsParams { eta, lambda_decay: lambda, ..Default::default() }
    }

    #[test]
    fn examples() {
        let (g, s) = pair(0.3);
        assert_eq!(hebbian_update(&g, &s, 0.0, &params(0.1, 0.0)).0, g);

        let up = hebbian_update(&g, &s, 2.0, &params(0.1, 0.0)).0;
        assert!((up.connections[0].weight - 0.5).abs() < 1e-15);
        let down = hebbian_update(&g, &s, -2.0, &params(0.1, 0.0)).0;
        assert!((down.connections[0].weight - 0.1).abs() < 1e-15);
        assert_eq!(weight_delta(0.3, 1.0, 1.0, 2.0, 0.1, 0.0), 0.2);
        assert_eq!(weight_delta(0.3, 1.0, 1.0, -2.0, 0.1, 0.0), -0.2);
    }

    #[test]
    fn weights_cross_zero_and_clamp() {
        let (g, s) = pair(0.05);
        let g2 = hebbian_update(&g, &s, -1.0, &params(0.1, 0.0)).0;
        assert!(g2.connections[0].weight < 0.0);
        let g3 = hebbian_update(&g, &s, 1e6, &params(0.1, 0.0)).0;
        assert_eq!(g3.connections[0].weight, 10.0);
    }

    #[test]
    fn non_finite_resets_weight() {
        let (g, s) = pair(1.0);
        let (g2, reset) = hebbian_update(&g, &s, f64::INFINITY, &params(0.1, 0.0));
        assert_eq!(reset, 1);
        assert_eq!(g2.connections[0].weight, 0.0);
    }
}
