//! One processing cycle of a unit's recurrent network.
//!
//! Each cycle produces two outputs: a prediction of the next sensory window
//! (kept inside the unit) and an emission written to the environment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{Genome, NodeKind};
use crate::physics::ChannelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetState {
    /// Post-ReLU activations, indexed like the genome's nodes.
    pub activations: Vec<f64>,
    /// Prediction of the current tick's sensory window, made last tick.
    pub last_prediction: Vec<f64>,
}

impl NetState {
    /// Resting state: no activity, mid-range predictions.
    pub fn zeroed(genome: &Genome) -> Self {
        Self {
            activations: vec![0.0; genome.total_nodes() as usize],
            last_prediction: vec![0.5; genome.layout.sensory as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleOutput {
    pub prediction_next: Vec<f64>,
    pub emission: Vec<f64>,
    pub v_repr: u32,
    pub k_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("network activity overflowed")]
pub struct CorruptCycle;

/// Settings of the environment that shape a cycle but are not heritable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSettings {
    pub tau: f64,
    pub epsilon_p: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Count of nonzero-weight connections times internal steps.
pub fn compute_cost(genome: &Genome) -> f64 {
    let active = genome.connections.iter().filter(|c| c.weight != 0.0).count();
    (active as u64 * genome.params.propagation_steps as u64) as f64
}

/// Pure form of [`forward_cycle_in_place`].
pub fn forward_cycle(
    genome: &Genome,
    state: &NetState,
    sensory: &[f64],
    kinds: &[ChannelKind],
    settings: CycleSettings,
) -> Result<(NetState, CycleOutput), CorruptCycle> {
    let mut next = state.clone();
    let out = forward_cycle_in_place(genome, &mut next, sensory, kinds, settings)?;
    Ok((next, out))
}

/// Runs `propagation_steps` synchronous updates
/// `a_dst <- ReLU(sum w * a_src + injected)`, where sensory nodes receive the
/// masked input every step and have no incoming edges. Predictions are the
/// logistic of the prediction readouts' pre-activations, so a silent network
/// predicts mid-range; discrete channels are clamped to `[eps, 1 - eps]`.
///
/// On overflow the state is reset to rest and the cycle reported corrupt.
pub fn forward_cycle_in_place(
    genome: &Genome,
    state: &mut NetState,
    sensory: &[f64],
    kinds: &[ChannelKind],
    settings: CycleSettings,
) -> Result<CycleOutput, CorruptCycle> {
    let layout = genome.layout;
    let s_width = layout.sensory as usize;
    assert_eq!(sensory.len(), s_width, "sensory width mismatch");
    assert_eq!(kinds.len(), s_width, "channel kind width mismatch");

    let total = genome.total_nodes() as usize;
    state.activations.resize(total, 0.0);
    let mask = &genome.interface.receptor_mask;
    let input: Vec<f64> = sensory
        .iter()
        .zip(mask)
        .map(|(&x, &on)| if on { x.max(0.0) } else { 0.0 })
        .collect();

    let mut pre = vec![0.0; total];
    let mut next = vec![0.0; total];
    let steps = genome.params.propagation_steps.max(1);
    let act = &mut state.activations;
    act[..s_width].copy_from_slice(&input);
    for _ in 0..steps {
        pre.fill(0.0);
        pre[..s_width].copy_from_slice(&input);
        for c in &genome.connections {
            pre[c.dst as usize] += c.weight * act[c.src as usize];
        }
        for (n, &z) in next.iter_mut().zip(&pre) {
            *n = z.max(0.0);
        }
        std::mem::swap(act, &mut next);
    }

    if act.iter().chain(&pre).any(|v| !v.is_finite()) {
        *state = NetState::zeroed(genome);
        return Err(CorruptCycle);
    }

    let eps = settings.epsilon_p;
    let prediction_next: Vec<f64> = (0..layout.sensory)
        .map(|ch| {
            let p = logistic(pre[layout.prediction_node(ch) as usize]);
            match kinds[ch as usize] {
                ChannelKind::Discrete => p.clamp(eps, 1.0 - eps),
                ChannelKind::Continuous => p,
            }
        })
        .collect();

    let width = genome.interface.emission_width;
    let gain = genome.interface.emission_gain;
    let emission = (0..layout.emission)
        .map(|k| {
            if k < width {
                (gain * act[layout.emission_node(k) as usize]).min(1.0)
            } else {
                0.0
            }
        })
        .collect();

    let first_hidden = layout.first_hidden() as usize;
    let v_repr = act[first_hidden..].iter().filter(|&&a| a > settings.tau).count() as u32;
    debug_assert!(act[first_hidden..].len() == genome.node_count as usize);
    debug_assert_eq!(layout.kind(first_hidden as u32), NodeKind::Hidden);

    state.last_prediction.clone_from(&prediction_next);
    Ok(CycleOutput { prediction_next, emission, v_repr, k_cost: compute_cost(genome) })
}
