//! Environmental laws: prediction error, compression ratio, the energy
//! update, and the guard that keeps trivial strategies below maintenance cost.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::streams::{StreamKind, StreamsConfig, StreamField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Values normalized to [0, 1]; scored by squared error.
    Continuous,
    /// Raw bits; scored by binary cross-entropy.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    /// Energy gain coefficient.
    pub alpha: f64,
    /// Cost per connection-step.
    pub beta: f64,
    /// Maintenance cost per tick.
    pub gamma: f64,
    /// Activity threshold. Part of the environment, never heritable.
    pub tau: f64,
    /// Hebbian learning rate.
    pub eta: f64,
    pub lambda_decay: f64,
    /// Founder energy budget.
    pub e_start: f64,
    pub repro_threshold: f64,
    /// Per-cell data volume cap per tick.
    pub v_max: f64,
    /// Hard bound on connection weights.
    pub weight_cap: f64,
    /// Discrete predictions are kept within `[epsilon_p, 1 - epsilon_p]`.
    pub epsilon_p: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            alpha: 0.025,
            beta: 0.0002,
            gamma: 1.0,
            tau: 0.05,
            eta: 0.002,
            lambda_decay: 1e-4,
            e_start: 100.0,
            repro_threshold: 200.0,
            v_max: 64.0,
            weight_cap: 10.0,
            epsilon_p: 1e-3,
        }
    }
}

impl PhysicsParams {
    /// Checks the parameter domains (not the guard inequality).
    pub fn check_domains(&self) -> Result<(), String> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("eta", self.eta),
            ("e_start", self.e_start),
            ("v_max", self.v_max),
            ("weight_cap", self.weight_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("physics.{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.lambda_decay >= 0.0 && self.lambda_decay < 1.0) {
            return Err(format!("physics.lambda_decay must be in [0, 1), got {}", self.lambda_decay));
        }
        if !(self.repro_threshold > self.e_start) {
            return Err(format!(
                "physics.repro_threshold ({}) must exceed e_start ({})",
                self.repro_threshold, self.e_start
            ));
        }
        if !(self.epsilon_p > 0.0 && self.epsilon_p < 0.5) {
            return Err(format!("physics.epsilon_p must be in (0, 0.5), got {}", self.epsilon_p));
        }
        Ok(())
    }
}

/// Error contribution of a single channel.
pub fn channel_error(actual: f64, predicted: f64, kind: ChannelKind) -> f64 {
    match kind {
        ChannelKind::Continuous => (actual - predicted).powi(2),
        ChannelKind::Discrete => {
            let b = actual;
            -(b * predicted.ln() + (1.0 - b) * (1.0 - predicted).ln())
        }
    }
}

/// Window prediction error: the sum of per-channel errors over the channels
/// that carried data this tick, so `exp(-error)` is the likelihood of the
/// whole window. Returns 0 when nothing was scored.
///
/// Panics if the slices differ in length.
pub fn prediction_error(
    actual: &[f64],
    predicted: &[f64],
    kinds: &[ChannelKind],
    scored: &[bool],
) -> f64 {
    assert_eq!(actual.len(), predicted.len(), "prediction width mismatch");
    assert_eq!(actual.len(), kinds.len(), "channel kind width mismatch");
    assert_eq!(actual.len(), scored.len(), "scored mask width mismatch");
    actual
        .iter()
        .zip(predicted)
        .zip(kinds)
        .zip(scored)
        .filter(|(_, &s)| s)
        .map(|(((&a, &p), &k), _)| channel_error(a, p, k))
        .sum()
}

/// `(v_in / v_repr) * exp(-error)`, or 0 for a dormant unit or an empty window.
pub fn compression_ratio(v_in: u32, v_repr: u32, error: f64) -> f64 {
    if v_repr == 0 || v_in == 0 {
        return 0.0;
    }
    (v_in as f64 / v_repr as f64) * (-error).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyUpdate {
    pub e_next: f64,
    /// Gain minus computation cost; maintenance deliberately excluded.
    pub surplus: f64,
    pub gain: f64,
    pub compute_cost: f64,
    pub maintenance: f64,
}

impl EnergyUpdate {
    /// The energy delta exactly as applied.
    pub fn delta(&self) -> f64 {
        self.surplus - self.maintenance
    }
}

/// `e + alpha*c*v - beta*k - gamma`.
pub fn energy_update(e: f64, c: f64, v: f64, k: f64, p: &PhysicsParams) -> EnergyUpdate {
    let gain = p.alpha * c * v;
    let compute_cost = p.beta * k;
    let maintenance = p.gamma;
    let surplus = gain - compute_cost;
    EnergyUpdate { e_next: e + (surplus - maintenance), surplus, gain, compute_cost, maintenance }
}

/// Mean naive-predictor error per stream kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineErrors {
    pub per_kind: Vec<(StreamKind, f64)>,
}

impl BaselineErrors {
    pub fn get(&self, kind: StreamKind) -> Option<f64> {
        self.per_kind.iter().find(|(k, _)| *k == kind).map(|&(_, e)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardCheck {
    pub kind: StreamKind,
    pub baseline: f64,
    /// `alpha * v_in * exp(-baseline)`.
    pub trivial_gain: f64,
    /// `gamma - trivial_gain`; must be positive.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub v_in: u32,
    pub gamma: f64,
    pub checks: Vec<GuardCheck>,
}

impl GuardReport {
    pub fn worst_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GuardCheck> {
        self.checks.iter().filter(|c| !(c.margin > 0.0))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

impl fmt::Display for GuardReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.margin > 0.0 { "GUARD-OK  " } else { "GUARD-FAIL" };
            writeln!(
                f,
                "{tag} stream={} alpha*v_in*exp(-baseline)={:.6} gamma={:.6} v_in={} baseline={:.6} margin={:.6}",
                c.kind, c.trivial_gain, self.gamma, self.v_in, c.baseline, c.margin
            )?;
        }
        Ok(())
    }
}

/// Evaluates `alpha * v_in * exp(-baseline) < gamma` for every stream kind.
/// On violation the returned report's `Display` has one `GUARD-FAIL` line per
/// failing inequality.
pub fn validate_params(
    p: &PhysicsParams,
    v_in: u32,
    baselines: &BaselineErrors,
) -> Result<GuardReport, GuardReport> {
    let checks = baselines
        .per_kind
        .iter()
        .map(|&(kind, baseline)| {
            let trivial_gain = p.alpha * v_in as f64 * (-baseline).exp();
            GuardCheck { kind, baseline, trivial_gain, margin: p.gamma - trivial_gain }
        })
        .collect();
    let report = GuardReport { v_in, gamma: p.gamma, checks };
    if report.passed() {
        Ok(report)
    } else {
        Err(report)
    }
}

/// Minimum number of ticks the baseline oracle accepts.
pub const ORACLE_MIN_TICKS: u64 = 1000;

/// Runs two naive predictors against each stream generator at full
/// intensity: previous-value pass-through and constant mid-range. Returns the
/// smaller mean window error per stream kind.
pub fn run_baseline_oracle(
    streams: &StreamsConfig,
    corpus: std::sync::Arc<Vec<u8>>,
    ticks: u64,
    seed: u64,
) -> BaselineErrors {
    assert!(ticks >= ORACLE_MIN_TICKS, "baseline oracle needs at least {ORACLE_MIN_TICKS} ticks");
    let mut per_kind = Vec::new();
    for kind in StreamKind::ALL {
        let mut field = StreamField::isolated(streams, kind, corpus.clone(), seed);
        let width = streams.width(kind);
        let ch_kind = kind.channel_kind();
        let kinds = vec![ch_kind; width];
        let scored = vec![true; width];
        let (mut pass_sum, mut mid_sum) = (0.0, 0.0);
        let mut prev: Option<Vec<f64>> = None;
        let mid = vec![0.5; width];
        let eps = 1e-3;
        for tick in 1..=ticks {
            field.advance_generators(tick);
            let window = field.reference_window(kind, tick);
            mid_sum += prediction_error(&window, &mid, &kinds, &scored);
            let guess = match &prev {
                Some(p) => p
                    .iter()
                    .map(|&v| if ch_kind == ChannelKind::Discrete { v.clamp(eps, 1.0 - eps) } else { v })
                    .collect(),
                None => mid.clone(),
            };
            pass_sum += prediction_error(&window, &guess, &kinds, &scored);
            prev = Some(window);
        }
        let n = ticks as f64;
        per_kind.push((kind, (pass_sum / n).min(mid_sum / n)));
    }
    BaselineErrors { per_kind }
}
