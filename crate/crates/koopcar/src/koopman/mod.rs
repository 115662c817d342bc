//! Learned lifted-space vehicle model: encoder basis, decoder, lifted
//! system matrices, multi-step prediction, composite loss, training, and
//! the basis-dimension study.
//!
//! The lifted state keeps the raw vehicle state verbatim in its first
//! three entries, so projecting back to the original state is exact by
//! construction. The system matrices are trained in normalized
//! coordinates and stored with the normalization folded in, acting on the
//! raw top block directly (inputs are still normalized through
//! `scaler_u`, whose symmetric fit makes that map purely linear).

mod checkpoint;
mod study;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use study::{one_step_error_study, DimStudyRow, ErrorStats};
pub use train::{train, KoopmanTrainer, TrainHistory};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{MinMaxScaler, Mlp};
use crate::plant::{ControlInput, VehicleState, STEER_LIMIT};

/// z in R^q, q = n + phi, with z[0..n] equal to the raw state.
pub type LiftedState = DVector<f64>;

pub const STATE_DIM: usize = 3;
pub const INPUT_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KoopmanDims {
    /// Original state dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// Learned basis dimension.
    pub phi: usize,
}

impl KoopmanDims {
    pub fn new(phi: usize) -> Self {
        KoopmanDims {
            n: STATE_DIM,
            m: INPUT_DIM,
            phi,
        }
    }

    /// Lifted dimension q = n + phi.
    pub fn q(&self) -> usize {
        self.n + self.phi
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi < 1 {
            return Err(Error::InvalidParam("basis dimension must be >= 1".into()));
        }
        if self.n != STATE_DIM || self.m != INPUT_DIM {
            return Err(Error::InvalidParam(format!(
                "expected state/input dims {STATE_DIM}/{INPUT_DIM}, got {}/{}",
                self.n, self.m
            )));
        }
        Ok(())
    }
}

pub fn state_to_vec(x: &VehicleState) -> DVector<f64> {
    DVector::from_vec(vec![x.vx, x.vy, x.wr])
}

pub fn vec_to_state(v: &DVector<f64>) -> VehicleState {
    VehicleState::new(v[0], v[1], v[2])
}

pub fn input_to_vec(u: &ControlInput) -> DVector<f64> {
    DVector::from_vec(vec![u.torque, u.delta_f])
}

#[derive(Clone, Debug)]
pub struct KoopmanModel {
    pub dims: KoopmanDims,
    /// Basis net, applied to the normalized state: n -> phi.
    pub encoder: Mlp,
    /// Reconstruction net: phi -> n (normalized state out).
    pub decoder: Mlp,
    /// Lifted system matrix, q x q, acting on [x; phi(x_scaled)].
    pub a: DMatrix<f64>,
    /// Lifted input matrix, q x m, acting on the normalized input.
    pub b: DMatrix<f64>,
    pub scaler_x: MinMaxScaler,
    pub scaler_u: MinMaxScaler,
}

impl KoopmanModel {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let q = self.dims.q();
        if self.encoder.input_dim() != self.dims.n || self.encoder.output_dim() != self.dims.phi {
            return Err(Error::ShapeMismatch {
                expected: format!("encoder {} -> {}", self.dims.n, self.dims.phi),
                got: format!(
                    "{} -> {}",
                    self.encoder.input_dim(),
                    self.encoder.output_dim()
                ),
            });
        }
        if self.decoder.input_dim() != self.dims.phi || self.decoder.output_dim() != self.dims.n {
            return Err(Error::ShapeMismatch {
                expected: format!("decoder {} -> {}", self.dims.phi, self.dims.n),
                got: format!(
                    "{} -> {}",
                    self.decoder.input_dim(),
                    self.decoder.output_dim()
                ),
            });
        }
        if self.a.shape() != (q, q) || self.b.shape() != (q, self.dims.m) {
            return Err(Error::ShapeMismatch {
                expected: format!("A {q}x{q}, B {q}x{}", self.dims.m),
                got: format!("A {:?}, B {:?}", self.a.shape(), self.b.shape()),
            });
        }
        if self.a.iter().any(|v| !v.is_finite()) || self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lifted system matrices".into()));
        }
        Ok(())
    }

    /// Lift the raw state: z = [x; phi(scale(x))].
    pub fn lift(&self, x: &VehicleState) -> LiftedState {
        let xv = state_to_vec(x);
        let scaled = self.scaler_x.apply(&xv);
        let (phi, _) = self
            .encoder
            .forward(&scaled)
            .expect("encoder dims checked at construction");
        let mut z = DVector::zeros(self.dims.q());
        z.rows_mut(0, self.dims.n).copy_from(&xv);
        z.rows_mut(self.dims.n, self.dims.phi).copy_from(&phi);
        z
    }

    /// Exact retrieval of the raw state: the first n entries of z.
    pub fn project(&self, z: &LiftedState) -> Result<VehicleState> {
        if z.len() != self.dims.q() {
            return Err(Error::ShapeMismatch {
                expected: format!("lifted state of length {}", self.dims.q()),
                got: format!("{}", z.len()),
            });
        }
        Ok(VehicleState::new(z[0], z[1], z[2]))
    }

    /// One lifted-space step: z' = A z + B u_scaled + w.
    pub fn predict_one(&self, z: &LiftedState, u: &ControlInput, w: &DVector<f64>) -> LiftedState {
        let u_scaled = self.scaler_u.apply(&input_to_vec(u));
        &self.a * z + &self.b * u_scaled + w
    }

    /// Multi-step prediction: lift once, iterate `predict_one` with the
    /// disturbance held constant, project every step.
    pub fn rollout(
        &self,
        x0: &VehicleState,
        inputs: &[ControlInput],
        w: &DVector<f64>,
    ) -> Result<Vec<VehicleState>> {
        if inputs.is_empty() {
            return Err(Error::EmptyData("rollout needs at least one input".into()));
        }
        let mut z = self.lift(x0);
        let mut out = Vec::with_capacity(inputs.len());
        for u in inputs {
            z = self.predict_one(&z, u, w);
            out.push(self.project(&z)?);
        }
        Ok(out)
    }

    /// Composite loss (L, L_pred, L_recon) of one sequence, in normalized
    /// coordinates. The multi-step prediction reuses the lifted state and
    /// never re-lifts intermediate predictions.
    pub fn loss(&self, seq: &Sequence) -> Result<(f64, f64, f64)> {
        seq.check_shape()?;
        let p = seq.inputs.len();
        let mut z = self.lift(&seq.states[0]);
        let zero_w = DVector::zeros(self.dims.q());
        let mut l1 = 0.0;
        for i in 1..=p {
            z = self.predict_one(&z, &seq.inputs[i - 1], &zero_w);
            let pred = self.scaler_x.apply(&state_to_vec(&self.project(&z)?));
            let truth = self.scaler_x.apply(&state_to_vec(&seq.states[i]));
            l1 += (pred - truth).norm_squared();
        }
        let mut l2 = 0.0;
        for x in &seq.states {
            let scaled = self.scaler_x.apply(&state_to_vec(x));
            let (phi, _) = self.encoder.forward(&scaled)?;
            let (recon, _) = self.decoder.forward(&phi)?;
            l2 += (scaled - recon).norm_squared();
        }
        Ok((l1 + l2, l1, l2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One data sequence: p+1 states and the p inputs between them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sequence {
    pub states: Vec<VehicleState>,
    pub inputs: Vec<ControlInput>,
    pub split: Split,
}

impl Sequence {
    fn check_shape(&self) -> Result<()> {
        if self.states.len() < 2 || self.states.len() != self.inputs.len() + 1 {
            return Err(Error::ShapeMismatch {
                expected: "p+1 states and p inputs, p >= 1".into(),
                got: format!("{} states, {} inputs", self.states.len(), self.inputs.len()),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub sequences: Vec<Sequence>,
    /// Sample time of every sequence [s].
    pub ts: f64,
}

impl TrajectoryDataset {
    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::EmptyData("dataset has no sequences".into()));
        }
        let len = self.sequences[0].states.len();
        for (i, seq) in self.sequences.iter().enumerate() {
            seq.check_shape()?;
            if seq.states.len() != len {
                return Err(Error::ShapeMismatch {
                    expected: format!("uniform sequence length {len}"),
                    got: format!("{} in sequence {i}", seq.states.len()),
                });
            }
            for x in &seq.states {
                if !(x.vx.is_finite() && x.vy.is_finite() && x.wr.is_finite()) {
                    return Err(Error::NonFinite(format!("state in sequence {i}")));
                }
            }
            for u in &seq.inputs {
                if !u.torque.is_finite() || u.delta_f.abs() > STEER_LIMIT + 1e-9 {
                    return Err(Error::InvalidParam(format!("input out of bounds in sequence {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn train_sequences(&self) -> impl Iterator<Item = &Sequence> {
        self.sequences.iter().filter(|s| s.split == Split::Train)
    }

    pub fn validation_sequences(&self) -> impl Iterator<Item = &Sequence> {
        self.sequences
            .iter()
            .filter(|s| s.split == Split::Validation)
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("dataset encode: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ds: TrajectoryDataset = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("dataset decode: {e}")))?;
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Basis dimension phi.
    pub p_phi: usize,
    /// Prediction steps per sequence (p); sequences hold p+1 states.
    pub seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Heavy-ball momentum 0.9 when enabled; plain steepest descent otherwise.
    pub use_momentum: bool,
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            p_phi: 5,
            seq_len: 10,
            epochs: 150,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 1,
            val_fraction: 0.2,
            use_momentum: false,
            hidden_layers: 3,
            hidden_units: 128,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 {
            return Err(Error::InvalidParam("seq_len must be >= 2".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::InvalidParam("val_fraction must lie in (0, 0.5]".into()));
        }
        if self.p_phi < 1 || self.epochs < 1 || self.batch_size < 1 || self.hidden_layers < 1 {
            return Err(Error::InvalidParam("p_phi, epochs, batch_size, hidden_layers must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning_rate must be positive".into()));
        }
        Ok(())
    }
}
