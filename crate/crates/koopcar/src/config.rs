//! TOML configuration: sections [vehicle], [tire], [training], [eso],
//! [mpc], and [scenario.<name>]. Every field has a built-in default;
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ExcitationSpec;
use crate::error::{Error, Result};
use crate::koopman::TrainingConfig;
use crate::mpc::MpcConfig;
use crate::plant::VehicleParams;
use crate::reference::DlcGeometry;
use crate::runner::{builtin_scenario, Scenario, SpeedProfile};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub vehicle: VehicleSection,
    pub tire: TireSection,
    pub training: TrainingSection,
    pub eso: EsoSection,
    pub mpc: MpcSection,
    pub scenario: BTreeMap<String, ScenarioSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub track_width: f64,
    pub wheel_radius: f64,
    pub t_max: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        let p = VehicleParams::default();
        VehicleSection {
            mass: p.mass,
            yaw_inertia: p.yaw_inertia,
            lf: p.lf,
            lr: p.lr,
            track_width: p.track_width,
            wheel_radius: p.wheel_radius,
            t_max: p.t_max,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TireSection {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl Default for TireSection {
    fn default() -> Self {
        let p = VehicleParams::default();
        TireSection {
            b: p.tire_b,
            c: p.tire_c,
            d: p.tire_d,
            e: p.tire_e,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub p_phi: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub use_momentum: bool,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    // Data-collection excitation.
    pub maneuvers: usize,
    pub maneuver_secs: f64,
    pub collect_mu: f64,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub collect_kp_long: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let e = ExcitationSpec::default();
        TrainingSection {
            p_phi: t.p_phi,
            seq_len: t.seq_len,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            val_fraction: t.val_fraction,
            use_momentum: t.use_momentum,
            hidden_layers: t.hidden_layers,
            hidden_units: t.hidden_units,
            maneuvers: e.maneuvers,
            maneuver_secs: e.maneuver_secs,
            collect_mu: e.mu,
            speed_min_kmh: e.speed_min_kmh,
            speed_max_kmh: e.speed_max_kmh,
            collect_kp_long: e.kp_long,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsoSection {
    pub target_rho: f64,
    /// Explicit gain overrides; when both are set the grid search is skipped.
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
}

impl Default for EsoSection {
    fn default() -> Self {
        EsoSection {
            target_rho: 0.9,
            beta1: None,
            beta2: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub np: usize,
    pub nc: usize,
    pub q: [f64; 3],
    pub r: f64,
    pub p: f64,
    pub vx_bound: f64,
    pub vy_bound: f64,
    pub wr_bound: f64,
    pub delta_max: f64,
    pub sqp_iters: usize,
    pub sqp_tol: f64,
    pub kp_long: f64,
    /// Friction value at which the baseline's cornering stiffness formula
    /// is evaluated. Deliberately an envelope (secant) calibration rather
    /// than the tangent at zero slip: identified single-track models fit
    /// over a realistic slip range land well below the tangent slope.
    pub lmpc_mu: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        let m = MpcConfig::default();
        MpcSection {
            np: m.np,
            nc: m.nc,
            q: m.q_weights,
            r: m.r_weight,
            p: m.p_weight,
            vx_bound: m.x_max[0],
            vy_bound: m.x_max[1],
            wr_bound: m.x_max[2],
            delta_max: m.delta_max,
            sqp_iters: m.sqp_iters,
            sqp_tol: m.sqp_tol,
            kp_long: 800.0,
            lmpc_mu: 0.47,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub mu: f64,
    /// Constant speed target [km/h]; ignored when a profile is given.
    pub speed_kmh: f64,
    /// Piecewise-linear (t [s], v [km/h]) knots.
    pub speed_profile_kmh: Option<Vec<[f64; 2]>>,
    pub mass: Option<f64>,
    pub duration: f64,
    pub noise_std: Option<f64>,
    pub dlc_offset: f64,
    pub dlc_sections: [f64; 5],
    pub dlc_tail: f64,
    pub dlc_spacing: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let g = DlcGeometry::default();
        ScenarioSection {
            mu: 0.85,
            speed_kmh: 35.0,
            speed_profile_kmh: None,
            mass: None,
            duration: 15.0,
            noise_std: None,
            dlc_offset: g.lateral_offset,
            dlc_sections: g.sections,
            dlc_tail: g.tail,
            dlc_spacing: g.spacing,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn vehicle_params(&self) -> Result<VehicleParams> {
        let p = VehicleParams {
            mass: self.vehicle.mass,
            yaw_inertia: self.vehicle.yaw_inertia,
            lf: self.vehicle.lf,
            lr: self.vehicle.lr,
            track_width: self.vehicle.track_width,
            wheel_radius: self.vehicle.wheel_radius,
            t_max: self.vehicle.t_max,
            tire_b: self.tire.b,
            tire_c: self.tire.c,
            tire_d: self.tire.d,
            tire_e: self.tire.e,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            p_phi: self.training.p_phi,
            seq_len: self.training.seq_len,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            seed: self.training.seed,
            val_fraction: self.training.val_fraction,
            use_momentum: self.training.use_momentum,
            hidden_layers: self.training.hidden_layers,
            hidden_units: self.training.hidden_units,
        }
    }

    pub fn excitation_spec(&self) -> ExcitationSpec {
        ExcitationSpec {
            maneuvers: self.training.maneuvers,
            maneuver_secs: self.training.maneuver_secs,
            mu: self.training.collect_mu,
            speed_min_kmh: self.training.speed_min_kmh,
            speed_max_kmh: self.training.speed_max_kmh,
            kp_long: self.training.collect_kp_long,
            seq_len: self.training.seq_len,
            val_fraction: self.training.val_fraction,
            ..Default::default()
        }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            np: self.mpc.np,
            nc: self.mpc.nc,
            q_weights: self.mpc.q,
            r_weight: self.mpc.r,
            p_weight: self.mpc.p,
            x_min: [-self.mpc.vx_bound, -self.mpc.vy_bound, -self.mpc.wr_bound],
            x_max: [self.mpc.vx_bound, self.mpc.vy_bound, self.mpc.wr_bound],
            delta_max: self.mpc.delta_max,
            sqp_iters: self.mpc.sqp_iters,
            sqp_tol: self.mpc.sqp_tol,
            ts: 0.025,
        }
    }

    /// Resolve a scenario: file-defined sections shadow the built-ins.
    pub fn scenario(&self, name: &str) -> Result<Scenario> {
        if let Some(sec) = self.scenario.get(name) {
            let kmh = 1.0 / 3.6;
            let speed = match &sec.speed_profile_kmh {
                Some(knots) => SpeedProfile::Piecewise(
                    knots.iter().map(|[t, v]| (*t, v * kmh)).collect(),
                ),
                None => SpeedProfile::Constant(sec.speed_kmh * kmh),
            };
            let scenario = Scenario {
                name: name.to_string(),
                mu: sec.mu,
                mass_override: sec.mass,
                speed,
                dlc: DlcGeometry {
                    lateral_offset: sec.dlc_offset,
                    sections: sec.dlc_sections,
                    tail: sec.dlc_tail,
                    spacing: sec.dlc_spacing,
                },
                duration: sec.duration,
                ts: 0.025,
                noise_std: sec.noise_std,
            };
            scenario.validate()?;
            return Ok(scenario);
        }
        builtin_scenario(name)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{name}'")))
    }
}
