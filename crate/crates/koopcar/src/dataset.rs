//! Training-data collection: excitation maneuvers driven on the plant,
//! sliced into fixed-length sequences with a seeded train/validation split.
//!
//! The excitation mixes steering chirps, random steering steps, and
//! torque profiles tracking targets across the speed range, cycling the
//! targets through every speed decile so coverage holds by construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::koopman::{Sequence, Split, TrajectoryDataset};
use crate::mpc::p_longitudinal;
use crate::plant::{step_dynamics, ControlInput, VehicleParams, VehicleState, STEER_LIMIT};

#[derive(Clone, Copy, Debug)]
pub struct ExcitationSpec {
    pub maneuvers: usize,
    pub maneuver_secs: f64,
    pub mu: f64,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub chirp_freq_min: f64,
    pub chirp_freq_max: f64,
    pub kp_long: f64,
    pub ts: f64,
    /// Prediction steps per sequence; sequences carry seq_len+1 states.
    pub seq_len: usize,
    pub val_fraction: f64,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec {
            maneuvers: 100,
            maneuver_secs: 12.0,
            mu: 0.85,
            speed_min_kmh: 20.0,
            speed_max_kmh: 80.0,
            chirp_freq_min: 0.1,
            chirp_freq_max: 1.0,
            kp_long: 800.0,
            ts: 0.025,
            seq_len: 10,
            val_fraction: 0.2,
        }
    }
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.maneuvers == 0 || self.maneuver_secs <= 0.0 {
            return Err(Error::InvalidParam("need at least one maneuver".into()));
        }
        if !(self.mu > 0.0 && self.mu <= 1.2) {
            return Err(Error::InvalidParam(format!("mu must lie in (0, 1.2], got {}", self.mu)));
        }
        if self.speed_min_kmh >= self.speed_max_kmh || self.speed_min_kmh <= 2.0 {
            return Err(Error::InvalidParam("bad speed range".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidParam("seq_len must be >= 2".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::InvalidParam("val_fraction must lie in (0, 0.5]".into()));
        }
        Ok(())
    }
}

enum SteerPattern {
    Chirp { amp: f64, f0: f64, f1: f64 },
    Steps { levels: Vec<(f64, f64)> },
}

impl SteerPattern {
    fn at(&self, t: f64, total: f64) -> f64 {
        match self {
            SteerPattern::Chirp { amp, f0, f1 } => {
                let f = f0 + (f1 - f0) * t / total;
                amp * (2.0 * std::f64::consts::PI * f * t).sin()
            }
            SteerPattern::Steps { levels } => levels
                .iter()
                .rev()
                .find(|(start, _)| t >= *start)
                .map_or(0.0, |(_, v)| *v),
        }
    }
}

/// Drive excitation maneuvers on the plant and slice the records into a
/// tagged dataset. Maneuvers that leave the sane state envelope are
/// dropped whole (and counted), keeping only clean trajectories.
pub fn collect_dataset(
    params: &VehicleParams,
    spec: &ExcitationSpec,
    seed: u64,
) -> Result<TrajectoryDataset> {
    spec.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (spec.maneuver_secs / spec.ts).round() as usize;
    let kmh = 1.0 / 3.6;
    let mut sequences: Vec<Sequence> = Vec::new();
    let mut dropped = 0usize;

    for m in 0..spec.maneuvers {
        // Cycle the speed target through deciles of the range, jittered.
        let decile = (m % 10) as f64;
        let span = spec.speed_max_kmh - spec.speed_min_kmh;
        let base_target =
            spec.speed_min_kmh + span * (decile + rng.gen_range(0.15..0.85)) / 10.0;
        // Every third maneuver steps the target up and down so the torque
        // channel sees accelerating and braking transients, not just the
        // small hold-speed corrections.
        let speed_steps: Option<Vec<(f64, f64)>> = if m % 3 == 2 {
            let mut steps = Vec::new();
            let mut t = rng.gen_range(1.0..2.0);
            while t < spec.maneuver_secs {
                steps.push((t, rng.gen_range(-1.2..1.2) * span / 10.0));
                t += rng.gen_range(1.5..3.0);
            }
            Some(steps)
        } else {
            None
        };
        // Steering amplitude budget from steady-state lateral acceleration:
        // full lock is only drivable at low speed, so the actuator-bound
        // bins are covered by the low-speed maneuvers while fast ones stay
        // inside the friction budget.
        let v_target = (base_target * kmh).max(1.0);
        let ay_budget = spec.mu * crate::plant::GRAVITY * (params.lf + params.lr);
        let amp_cap = (ay_budget / (v_target * v_target)).min(STEER_LIMIT);
        let pattern = if m % 2 == 0 {
            // Full-budget chirps appear regularly so the steering histogram
            // reaches the actuator bound (via the slow maneuvers).
            let amp = if m % 4 == 0 {
                amp_cap
            } else {
                rng.gen_range(0.05 * amp_cap..amp_cap)
            };
            SteerPattern::Chirp {
                amp,
                f0: rng.gen_range(spec.chirp_freq_min..0.4),
                f1: rng.gen_range(0.4..spec.chirp_freq_max),
            }
        } else {
            let mut levels = vec![(0.0, 0.0)];
            let mut t = rng.gen_range(0.3..1.0);
            while t < spec.maneuver_secs {
                levels.push((t, rng.gen_range(-amp_cap..amp_cap)));
                t += rng.gen_range(0.4..1.0);
            }
            SteerPattern::Steps { levels }
        };

        let mut state = VehicleState::new(base_target * kmh, 0.0, 0.0);
        let mut states = vec![state];
        let mut inputs: Vec<ControlInput> = Vec::with_capacity(steps);
        let mut ok = true;
        for k in 0..steps {
            let t = k as f64 * spec.ts;
            let offset = speed_steps.as_ref().map_or(0.0, |steps| {
                steps
                    .iter()
                    .rev()
                    .find(|(start, _)| t >= *start)
                    .map_or(0.0, |(_, v)| *v)
            });
            let target = ((base_target + offset)
                .clamp(spec.speed_min_kmh * 0.8, spec.speed_max_kmh * 1.05))
                * kmh;
            let torque = p_longitudinal(target, state.vx, spec.kp_long, params.t_max);
            // Driver-like stability guard: ease off the wheel as lateral
            // drift builds, keeping the data inside the handling envelope.
            let guard = ((3.5 - state.vy.abs()) / 1.5).clamp(0.0, 1.0);
            let delta = (pattern.at(t, spec.maneuver_secs) * guard)
                .clamp(-STEER_LIMIT, STEER_LIMIT);
            let input = ControlInput::new(torque, delta);
            match step_dynamics(&state, &input, spec.mu, params, spec.ts) {
                Ok(next) => {
                    state = next;
                    states.push(state);
                    inputs.push(input);
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            dropped += 1;
            continue;
        }
        // Non-overlapping windows of seq_len transitions.
        let p = spec.seq_len;
        let mut start = 0usize;
        while start + p <= inputs.len() {
            sequences.push(Sequence {
                states: states[start..=start + p].to_vec(),
                inputs: inputs[start..start + p].to_vec(),
                split: Split::Train,
            });
            start += p;
        }
    }

    if sequences.is_empty() {
        return Err(Error::EmptyData(format!(
            "no sequences collected ({dropped} maneuvers dropped)"
        )));
    }

    // Seeded validation tagging.
    let mut idx: Vec<usize> = (0..sequences.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((sequences.len() as f64 * spec.val_fraction).ceil() as usize)
        .max(1)
        .min(sequences.len() - 1);
    for &i in idx.iter().take(n_val) {
        sequences[i].split = Split::Validation;
    }

    let dataset = TrajectoryDataset {
        sequences,
        ts: spec.ts,
    };
    dataset.validate()?;
    coverage_check(&dataset, spec)?;
    Ok(dataset)
}

/// Every decile bin of the steering range and of the speed range must be
/// populated.
pub fn coverage_check(dataset: &TrajectoryDataset, spec: &ExcitationSpec) -> Result<()> {
    let mut steer_bins = [0usize; 10];
    let mut speed_bins = [0usize; 10];
    let (v_lo, v_hi) = (spec.speed_min_kmh / 3.6, spec.speed_max_kmh / 3.6);
    for seq in &dataset.sequences {
        for u in &seq.inputs {
            let frac = ((u.delta_f + STEER_LIMIT) / (2.0 * STEER_LIMIT)).clamp(0.0, 1.0 - 1e-12);
            steer_bins[(frac * 10.0) as usize] += 1;
        }
        for x in &seq.states {
            if x.vx >= v_lo && x.vx <= v_hi {
                let frac = ((x.vx - v_lo) / (v_hi - v_lo)).clamp(0.0, 1.0 - 1e-12);
                speed_bins[(frac * 10.0) as usize] += 1;
            }
        }
    }
    if let Some(bin) = steer_bins.iter().position(|&c| c == 0) {
        return Err(Error::EmptyData(format!("steering decile {bin} uncovered")));
    }
    if let Some(bin) = speed_bins.iter().position(|&c| c == 0) {
        return Err(Error::EmptyData(format!("speed decile {bin} uncovered")));
    }
    Ok(())
}
