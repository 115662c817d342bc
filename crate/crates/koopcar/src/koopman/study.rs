//! Basis-dimension study: trains one model per candidate dimension and
//! reports held-out one-step prediction error statistics per channel.

use nalgebra::DVector;

use crate::error::{Error, Result};

use super::{train, KoopmanModel, TrainingConfig, TrajectoryDataset};

#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorStats {
    pub max: f64,
    pub avg: f64,
    pub rmse: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DimStudyRow {
    pub dim: usize,
    /// Longitudinal velocity error stats [m/s].
    pub ex: ErrorStats,
    /// Lateral velocity error stats [m/s].
    pub ey: ErrorStats,
    /// Yaw rate error stats [rad/s].
    pub er: ErrorStats,
}

fn stats_from(abs_errors: &[f64]) -> ErrorStats {
    let n = abs_errors.len() as f64;
    let max = abs_errors.iter().cloned().fold(0.0, f64::max);
    let avg = abs_errors.iter().sum::<f64>() / n;
    let rmse = (abs_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    ErrorStats { max, avg, rmse }
}

/// Held-out one-step prediction errors of a trained model, per channel.
pub fn one_step_errors(model: &KoopmanModel, dataset: &TrajectoryDataset) -> Result<[Vec<f64>; 3]> {
    let zero_w = DVector::zeros(model.dims.q());
    let mut channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for seq in dataset.validation_sequences() {
        for k in 0..seq.inputs.len() {
            let z = model.lift(&seq.states[k]);
            let pred = model.project(&model.predict_one(&z, &seq.inputs[k], &zero_w))?;
            let truth = &seq.states[k + 1];
            channels[0].push((pred.vx - truth.vx).abs());
            channels[1].push((pred.vy - truth.vy).abs());
            channels[2].push((pred.wr - truth.wr).abs());
        }
    }
    if channels[0].is_empty() {
        return Err(Error::EmptyData(
            "dimension study needs validation sequences".into(),
        ));
    }
    Ok(channels)
}

/// Train one model per requested basis dimension (in parallel) and tabulate
/// held-out one-step error statistics. Rows follow the requested order.
pub fn one_step_error_study(
    dataset: &TrajectoryDataset,
    dims: &[usize],
    cfg: &TrainingConfig,
) -> Result<Vec<DimStudyRow>> {
    if dims.is_empty() {
        return Err(Error::EmptyData("no dimensions requested".into()));
    }
    let results: Vec<Result<DimStudyRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = dims
            .iter()
            .map(|&dim| {
                scope.spawn(move || {
                    let mut dim_cfg = *cfg;
                    dim_cfg.p_phi = dim;
                    let (model, _) = train(dataset, &dim_cfg)?;
                    let chans = one_step_errors(&model, dataset)?;
                    Ok(DimStudyRow {
                        dim,
                        ex: stats_from(&chans[0]),
                        ey: stats_from(&chans[1]),
                        er: stats_from(&chans[2]),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("study thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}
