//! Browser front end for the engine: a lattice view, a few counters and a
//! click-to-inspect panel. All simulation work happens in `mee-core`.

use std::sync::Arc;

use mee_core::metrics::{MetricsTracker, TickMetrics};
use mee_core::runner::dead_ids;
use mee_core::streams::{StreamKind, BUNDLED_CORPUS};
use mee_core::{SimConfig, World};
use wasm_bindgen::prelude::*;

/// Colors per gain bucket: numeric, text, noise, temporal, signal.
const BUCKET_RGB: [[u8; 3]; 5] = [[240, 90, 70], [90, 210, 110], [150, 150, 150], [80, 140, 250], [240, 200, 60]];

#[wasm_bindgen]
pub struct Ecology {
    world: World,
    tracker: MetricsTracker,
    last: TickMetrics,
}

#[wasm_bindgen]
impl Ecology {
    /// Default configuration with the given seed.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Ecology, JsError> {
        let mut cfg = SimConfig::default();
        cfg.world.master_seed = seed as u64;
        let world = World::new(&cfg, Arc::new(BUNDLED_CORPUS.to_vec())).map_err(|e| JsError::new(&e.to_string()))?;
        let tracker = MetricsTracker::new(cfg.run.metrics_window);
        let last = TickMetrics { tick: 0, population: world.units().len(), noise_fraction: 0.0, mean_entropy: None };
        Ok(Ecology { world, tracker, last })
    }

    pub fn width(&self) -> u32 {
        self.world.config().world.width
    }

    pub fn height(&self) -> u32 {
        self.world.config().world.height
    }

    /// Advances `n` ticks, stopping early on collapse. Returns the population.
    pub fn step(&mut self, n: u32) -> u32 {
        for _ in 0..n {
            if self.world.units().is_empty() {
                break;
            }
            let r = self.world.step();
            let dead = dead_ids(&r.events);
            self.last = self.tracker.observe(r.tick, &r.ledger, &dead);
        }
        self.world.units().len() as u32
    }

    pub fn tick(&self) -> f64 {
        self.world.tick() as f64
    }

    pub fn population(&self) -> u32 {
        self.world.units().len() as u32
    }

    pub fn noise_fraction(&self) -> f64 {
        self.last.noise_fraction
    }

    /// NaN until some unit has earned anything.
    pub fn mean_entropy(&self) -> f64 {
        self.last.mean_entropy.unwrap_or(f64::NAN)
    }

    /// Row-major RGBA. Streams are drawn faintly underneath; a unit takes the
    /// color of its main food source, brighter with more energy.
    pub fn render_rgba(&self) -> Vec<u8> {
        let cells = self.world.lattice().cells();
        let mut px = vec![0u8; cells * 4];
        let streams = self.world.streams();
        for (c, p) in px.chunks_exact_mut(4).enumerate() {
            let mut rgb = [12.0f64; 3];
            for kind in StreamKind::ALL {
                let level = streams.intensity_map(kind)[c].clamp(0.0, 1.0);
                for (v, &tint) in rgb.iter_mut().zip(&BUCKET_RGB[kind.index()]) {
                    *v += 0.25 * level * tint as f64;
                }
            }
            for (dst, v) in p.iter_mut().zip(rgb) {
                *dst = v.min(255.0) as u8;
            }
            p[3] = 255;
        }
        let e_start = self.world.config().physics.e_start;
        for u in self.world.units() {
            let (bucket, _) = self
                .tracker
                .book()
                .profile(u.id)
                .map(|p| {
                    p.gains
                        .iter()
                        .copied()
                        .enumerate()
                        .fold((usize::MAX, 0.0), |best, (i, g)| if g > best.1 { (i, g) } else { best })
                })
                .unwrap_or((usize::MAX, 0.0));
            let base = BUCKET_RGB.get(bucket).copied().unwrap_or([255, 255, 255]);
            let shade = 0.45 + 0.55 * (u.energy / (2.0 * e_start)).clamp(0.0, 1.0);
            let p = &mut px[u.cell * 4..u.cell * 4 + 4];
            for (dst, &b) in p.iter_mut().zip(&base) {
                *dst = (b as f64 * shade) as u8;
            }
        }
        px
    }

    /// JSON description of the unit at `(x, y)`, or `null`.
    pub fn inspect(&self, x: u32, y: u32) -> String {
        let cell = self.world.lattice().cell(x % self.width(), y % self.height());
        let Some(u) = self.world.occupant(cell).and_then(|id| self.world.unit(id)) else {
            return "null".into();
        };
        let profile = self.tracker.book().profile(u.id);
        let gains = profile.as_ref().map(|p| p.gains.to_vec()).unwrap_or_default();
        let entropy = profile.and_then(|p| mee_core::metrics::specialization_entropy(&p.gains));
        let senses: Vec<usize> = u
            .genome
            .interface
            .receptor_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        serde_json::json!({
            "id": u.id,
            "energy": u.energy,
            "born": u.born,
            "parent": u.parent,
            "hidden_nodes": u.genome.node_count,
            "edges": u.genome.edge_count(),
            "active_nodes": u.last_v_repr,
            "channels_sensed": senses.len(),
            "gains_numeric_text_noise_temporal_signal": gains,
            "entropy_bits": entropy,
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_covers_every_cell() {
        let eco = Ecology::new(1).unwrap();
        let px = eco.render_rgba();
        assert_eq!(px.len(), (eco.width() * eco.height() * 4) as usize);
        assert!(px.chunks_exact(4).all(|p| p[3] == 255));
    }

    #[test]
    fn same_seed_same_picture() {
        let mut a = Ecology::new(4).unwrap();
        let mut b = Ecology::new(4).unwrap();
        a.step(30);
        b.step(30);
        assert_eq!(a.render_rgba(), b.render_rgba());
        assert_eq!(a.tick(), 30.0);
    }

    #[test]
    fn inspect_finds_units() {
        let mut eco = Ecology::new(2).unwrap();
        eco.step(5);
        let u = &eco.world.units()[0];
        let (x, y) = eco.world.lattice().coords(u.cell);
        let v: serde_json::Value = serde_json::from_str(&eco.inspect(x, y)).unwrap();
        assert_eq!(v["id"], u.id);
        let empty = (0..eco.world.lattice().cells()).find(|&c| eco.world.occupant(c).is_none()).unwrap();
        let (x, y) = eco.world.lattice().coords(empty);
        assert_eq!(eco.inspect(x, y), "null");
    }
}
