//! Discrete extended state observer on the lifted state: estimates the
//! total disturbance online. Gain feasibility is certified through the
//! spectral radius of the assembled error dynamics.
//!
//! Sign convention: corrections are subtracted with positive gains,
//! ẑ⁺ = A ẑ + B u + ŵ − β₁(ẑ − z_meas), ŵ⁺ = ŵ − β₂(ẑ − z_meas),
//! giving the error matrix Θ = [[A − β₁I, I], [−β₂I, I]].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::koopman::{input_to_vec, KoopmanModel, LiftedState};
use crate::plant::ControlInput;

pub const BETA1_MAX: f64 = 2.0;
pub const BETA2_MAX: f64 = 1.0;
pub const GAIN_GRID_STEP: f64 = 0.01;

/// Scalar correction gains applied through identity output maps.
#[derive(Clone, Copy, Debug)]
pub struct EsoGains {
    beta1: f64,
    beta2: f64,
}

impl EsoGains {
    /// Validates that the induced error dynamics are contractive
    /// (spectral radius below one) for this model.
    pub fn new(beta1: f64, beta2: f64, model: &KoopmanModel) -> Result<EsoGains> {
        if !beta1.is_finite() || !beta2.is_finite() {
            return Err(Error::InvalidParam("observer gains must be finite".into()));
        }
        let gains = EsoGains { beta1, beta2 };
        let rho = spectral_radius(&error_matrix(model, &gains))?;
        if rho >= 1.0 {
            return Err(Error::GainsUnstable { rho });
        }
        Ok(gains)
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }
}

/// Estimated lifted state and estimated total disturbance.
#[derive(Clone, Debug)]
pub struct EsoState {
    pub z_hat: DVector<f64>,
    pub w_hat: DVector<f64>,
}

impl EsoState {
    /// Start from the first lifted measurement with zero disturbance.
    pub fn from_measurement(z0: &LiftedState) -> EsoState {
        EsoState {
            z_hat: z0.clone(),
            w_hat: DVector::zeros(z0.len()),
        }
    }
}

/// One observer update from the measured lifted state and applied input.
pub fn eso_step(
    model: &KoopmanModel,
    gains: &EsoGains,
    est: &EsoState,
    z_meas: &LiftedState,
    u: &ControlInput,
) -> EsoState {
    let innovation = &est.z_hat - z_meas;
    let u_scaled = model.scaler_u.apply(&input_to_vec(u));
    EsoState {
        z_hat: &model.a * &est.z_hat + &model.b * u_scaled + &est.w_hat
            - gains.beta1 * &innovation,
        w_hat: &est.w_hat - gains.beta2 * &innovation,
    }
}

/// Error dynamics of (z̃, w̃): [[A − β₁I, I], [−β₂I, I]], 2q x 2q.
pub fn error_matrix(model: &KoopmanModel, gains: &EsoGains) -> DMatrix<f64> {
    let q = model.dims.q();
    let mut theta = DMatrix::zeros(2 * q, 2 * q);
    theta.view_mut((0, 0), (q, q)).copy_from(&model.a);
    for i in 0..q {
        theta[(i, i)] -= gains.beta1;
        theta[(i, q + i)] = 1.0;
        theta[(q + i, i)] = -gains.beta2;
        theta[(q + i, q + i)] = 1.0;
    }
    theta
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix for spectral radius".into()));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), 1e-12, 100_000).ok_or(Error::EigenFailed)?;
    let eigs = schur.complex_eigenvalues();
    Ok(eigs.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Deterministic grid search over β₁ ∈ [0, 2], β₂ ∈ [0, 1] at 0.01
/// resolution: among grid points meeting the target radius, the smallest
/// gains (by β₁+β₂, then β₁) win. Errors with the best radius found when
/// no point qualifies.
pub fn design_gains(model: &KoopmanModel, target_rho: f64) -> Result<(EsoGains, f64)> {
    if !(target_rho > 0.0 && target_rho < 1.0) {
        return Err(Error::InvalidParam(format!(
            "target spectral radius must lie in (0, 1), got {target_rho}"
        )));
    }
    let n1 = (BETA1_MAX / GAIN_GRID_STEP).round() as usize;
    let n2 = (BETA2_MAX / GAIN_GRID_STEP).round() as usize;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut chosen: Option<(f64, f64, f64)> = None;
    for i1 in 0..=n1 {
        let beta1 = i1 as f64 * GAIN_GRID_STEP;
        for i2 in 0..=n2 {
            let beta2 = i2 as f64 * GAIN_GRID_STEP;
            let gains = EsoGains { beta1, beta2 };
            let rho = spectral_radius(&error_matrix(model, &gains))?;
            if rho < best.0 {
                best = (rho, beta1, beta2);
            }
            if rho <= target_rho {
                let better = match &chosen {
                    None => true,
                    Some((_, b1, b2)) => {
                        let (sum_new, sum_old) = (beta1 + beta2, b1 + b2);
                        sum_new < sum_old - 1e-12
                            || ((sum_new - sum_old).abs() <= 1e-12 && beta1 < *b1)
                    }
                };
                if better {
                    chosen = Some((rho, beta1, beta2));
                }
            }
        }
    }
    match chosen {
        Some((rho, beta1, beta2)) => Ok((EsoGains::new(beta1, beta2, model)?, rho)),
        None => Err(Error::GainsInfeasible {
            best_rho: best.0,
            beta1: best.1,
            beta2: best.2,
        }),
    }
}
