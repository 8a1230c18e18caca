//! Sample-by-sample closed-loop simulation for interactive sessions, where
//! the controller and reference may change between samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::closed_loop::LoopModel;
use super::solver::Rk4;
use crate::controllers::Saturation;
use crate::error::{Error, Result};
use crate::lti::TransferFunction;

/// Fixed RK4 substep ceiling.
const MAX_SUBSTEP: f64 = 1e-4;
const MAX_SUBSTEPS_PER_SAMPLE: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveSample {
    pub t: f64,
    pub r: f64,
    /// measured output, noise included
    pub y: f64,
    pub u: f64,
}

/// Open-ended simulation stepped one sample at a time with fixed RK4
/// substeps sized from the fastest loop mode.
pub struct LiveSim {
    plant: TransferFunction,
    controller: TransferFunction,
    model: LoopModel,
    x: Vec<f64>,
    k: u64,
    sample_time: f64,
    substeps: usize,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
    rk: Rk4,
}

fn fastest_mode(plant: &TransferFunction, controller: &TransferFunction) -> Result<f64> {
    let mut rho: f64 = 0.0;
    let open = plant.series(controller);
    // saturation switches between the open and closed loop dynamics
    for g in [plant.clone(), controller.clone(), open.unity_feedback()?] {
        for p in g.poles()? {
            rho = rho.max(p.abs());
        }
    }
    Ok(rho)
}

fn substeps_for(plant: &TransferFunction, controller: &TransferFunction, sample_time: f64) -> Result<usize> {
    let rho = fastest_mode(plant, controller)?;
    let h = if rho > 0.0 { MAX_SUBSTEP.min(1.0 / rho) } else { MAX_SUBSTEP };
    let n = (sample_time / h).ceil() as usize;
    if n > MAX_SUBSTEPS_PER_SAMPLE {
        return Err(Error::InvalidArgument(format!(
            "loop mode at {rho:.3e} rad/s is too fast for interactive simulation"
        )));
    }
    Ok(n.max(1))
}

impl LiveSim {
    pub fn new(
        plant: &TransferFunction,
        controller: &TransferFunction,
        reference: f64,
        sat: Saturation,
        sample_time: f64,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(sample_time > 0.0 && sample_time.is_finite()) {
            return Err(Error::param("sample_time", "must be > 0"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be >= 0"));
        }
        let model = LoopModel::new(plant, controller, reference, sat)?;
        let substeps = substeps_for(plant, controller, sample_time)?;
        let noise = if noise_std > 0.0 {
            let n = Normal::new(0.0, noise_std).map_err(|e| Error::param("noise_std", e.to_string()))?;
            Some((n, ChaCha8Rng::seed_from_u64(seed)))
        } else {
            None
        };
        let dim = model.dim();
        let mut sim = LiveSim {
            plant: plant.clone(),
            controller: controller.clone(),
            model,
            x: vec![0.0; dim],
            k: 0,
            sample_time,
            substeps,
            noise,
            rk: Rk4::new(dim),
        };
        sim.draw_noise();
        Ok(sim)
    }

    fn draw_noise(&mut self) {
        if let Some((dist, rng)) = &mut self.noise {
            self.model.set_measurement_offset(dist.sample(rng));
        }
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.sample_time
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    /// Signals at the current instant.
    pub fn current(&self) -> LiveSample {
        let (y, _, u) = self.model.signals(&self.x);
        LiveSample {
            t: self.time(),
            r: self.model.reference(),
            y: y + self.model.measurement_offset(),
            u,
        }
    }

    /// Advance one sample; the new measurement noise is drawn at the end.
    pub fn step(&mut self) -> Result<LiveSample> {
        let t0 = self.time();
        let h = self.sample_time / self.substeps as f64;
        for i in 0..self.substeps {
            self.rk.step(&self.model, t0 + i as f64 * h, &mut self.x, h);
        }
        self.k += 1;
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(self.time()));
        }
        self.draw_noise();
        let s = self.current();
        if !(s.y.is_finite() && s.u.is_finite()) {
            return Err(Error::Diverged(s.t));
        }
        Ok(s)
    }

    pub fn set_reference(&mut self, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(Error::param("reference", format!("must be finite, got {r}")));
        }
        self.model.set_reference(r);
        Ok(())
    }

    /// Swap the controller. Its state carries over when the order is
    /// unchanged and restarts at zero otherwise.
    pub fn set_controller(&mut self, controller: &TransferFunction) -> Result<()> {
        let substeps = substeps_for(&self.plant, controller, self.sample_time)?;
        let old_order = self.model.controller_order();
        self.model
            .replace_controller(self.plant.relative_degree() as usize, controller)?;
        let np = self.model.plant_order();
        if self.model.controller_order() != old_order {
            self.x.truncate(np);
            self.x.resize(self.model.dim(), 0.0);
            self.rk = Rk4::new(self.model.dim());
        }
        self.controller = controller.clone();
        self.substeps = substeps;
        Ok(())
    }

    pub fn controller(&self) -> &TransferFunction {
        &self.controller
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{pid_tf, PidGains};
    use crate::plant::paper_plant;
    use crate::sim::oracle_simulate;

    fn pid() -> TransferFunction {
        pid_tf(&PidGains::paper()).unwrap().tf
    }

    #[test]
    fn tracks_batch_oracle() {
        let plant = paper_plant();
        let mut live = LiveSim::new(&plant, &pid(), 1.0, Saturation::unbounded(), 0.01, 0.0, 0).unwrap();
        let oracle = oracle_simulate(&plant, &pid(), 1.0, &Saturation::unbounded(), 1.0).unwrap();
        let first = live.current();
        assert_eq!(first.y, 0.0);
        for k in 1..oracle.len() {
            let s = live.step().unwrap();
            assert!((s.t - oracle.t[k]).abs() < 1e-12);
            assert!((s.y - oracle.y[k]).abs() < 1e-6, "k={k}: {} vs {}", s.y, oracle.y[k]);
        }
    }

    #[test]
    fn retune_and_reference_change_apply_from_next_sample() {
        let plant = paper_plant();
        let mut live = LiveSim::new(&plant, &pid(), 0.0, Saturation::supply_12v(), 0.01, 0.0, 0).unwrap();
        for _ in 0..10 {
            assert_eq!(live.step().unwrap().y, 0.0);
        }
        live.set_reference(0.01).unwrap();
        assert_eq!(live.current().r, 0.01);
        let lead = TransferFunction::gain(2.0);
        live.set_controller(&lead).unwrap();
        let s = live.step().unwrap();
        assert!(s.y > 0.0);
        assert!(s.u.abs() <= 12.0);
        assert!(live.set_reference(f64::NAN).is_err());
    }

    #[test]
    fn noise_depends_on_seed() {
        let plant = paper_plant();
        let run = |seed| {
            let mut live = LiveSim::new(&plant, &pid(), 0.0, Saturation::supply_12v(), 0.01, 1e-4, seed).unwrap();
            (0..20).map(|_| live.step().unwrap().y).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
