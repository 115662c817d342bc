use koopcar::config::ConfigFile;
use koopcar::eso::{design_gains, eso_step, EsoState};
use koopcar::koopman::load_checkpoint;
use koopcar::mpc::{p_longitudinal, solve_eso_dkmpc, BicycleParams, MpcConfig};
use koopcar::plant::{step_dynamics, step_pose, ControlInput, Pose, VehicleParams, VehicleState};
use koopcar::reference::gen_dlc_reference;
use nalgebra::DVector;

// 20-step open-loop prediction error (vy, wr channels, RMS over horizon) of
// the compensated lifted model vs the oracle bicycle, along the closed run.
fn main() {
    let cfg_file = ConfigFile::load(std::path::Path::new("/tmp/koop/exp4.toml")).unwrap();
    let scenario = cfg_file.scenario("hi").unwrap();
    let vehicle = VehicleParams::default();
    let (model, _) = load_checkpoint(std::path::Path::new("/tmp/koop/model2.json")).unwrap();
    let (gains, _) = design_gains(&model, 0.9).unwrap();
    let mpc = MpcConfig::default();
    let path = gen_dlc_reference(&scenario.dlc);
    let bike = BicycleParams::from_vehicle(&vehicle, 0.85);
    let ts = scenario.ts;
    let h = 20usize;

    let mut state = VehicleState::new(scenario.speed.at(0.0), 0.0, 0.0);
    let mut pose = Pose::new(0.0, 0.0, 0.0);
    let mut u_prev = ControlInput::new(0.0, 0.0);
    let mut est: Option<EsoState> = None;
    let mut prev_z = None;
    let mut warm: Option<Vec<f64>> = None;
    let mut hint = None;

    // log of (state, input) so we can replay actual inputs for open-loop tests
    let mut log: Vec<(VehicleState, ControlInput)> = Vec::new();

    for k in 0..scenario.steps() {
        let t = k as f64 * ts;
        let near = path.nearest(pose.x, pose.y, hint);
        hint = Some(near.index);
        let vx_ref = scenario.speed.at(t);
        let torque = p_longitudinal(vx_ref, state.vx, 800.0, vehicle.t_max);
        let window = path.window(near.s, vx_ref, ts, mpc.np);
        let z_meas = model.lift(&state);
        let updated = match (est.take(), prev_z.take()) {
            (Some(pe), Some(pz)) => eso_step(&model, &gains, &pe, &pz, &u_prev),
            _ => EsoState::from_measurement(&z_meas),
        };
        let sol = solve_eso_dkmpc(&model, &updated, &pose, &state, &window, torque, &u_prev, &mpc, warm.as_deref()).unwrap();
        warm = Some(sol.delta_seq[1..].iter().cloned().chain([*sol.delta_seq.last().unwrap()]).collect());
        let u = ControlInput::new(torque, sol.delta);
        log.push((state, u));
        // stash w_hat alongside
        est = Some(updated);
        prev_z = Some(z_meas);
        let next = step_dynamics(&state, &u, scenario.mu, &vehicle, ts).unwrap();
        pose = step_pose(&pose, &next, ts);
        state = next;
        u_prev = u;
        if k == 0 { continue; }
    }

    // re-run the loop storing w_hats (simpler: second pass replicating observer on the log)
    let mut west: Vec<DVector<f64>> = Vec::new();
    {
        let mut est = EsoState::from_measurement(&model.lift(&log[0].0));
        west.push(est.w_hat.clone());
        for k in 1..log.len() {
            let z_prev = model.lift(&log[k - 1].0);
            est = eso_step(&model, &gains, &est, &z_prev, &log[k - 1].1);
            west.push(est.w_hat.clone());
        }
    }

    let mut dk_tot = 0.0; let mut bk_tot = 0.0; let mut n = 0.0;
    let mut dk_max = 0.0f64; let mut bk_max = 0.0f64;
    for k in 0..log.len().saturating_sub(h) {
        // truth over horizon under actual inputs
        let mut truth = vec![log[k].0];
        for i in 0..h {
            truth.push(step_dynamics(&truth[i], &log[k + i].1, scenario.mu, &vehicle, ts).unwrap());
        }
        // dk + const w prediction
        let mut z = model.lift(&log[k].0);
        let mut dk_err = 0.0;
        for i in 0..h {
            z = model.predict_one(&z, &log[k + i].1, &west[k]);
            let p = model.project(&z).unwrap();
            dk_err += (p.vy - truth[i + 1].vy).powi(2) + (p.wr - truth[i + 1].wr).powi(2);
        }
        // bicycle prediction, vx frozen
        let vx = log[k].0.vx.max(1.0);
        let (m, iz, lf, lr, cf, cr) = (bike.mass, bike.yaw_inertia, bike.lf, bike.lr, bike.cf, bike.cr);
        let mut vy = log[k].0.vy; let mut wr = log[k].0.wr;
        let mut bk_err = 0.0;
        for i in 0..h {
            let d = log[k + i].1.delta_f;
            let vy1 = vy + ts * (-(cf + cr) / (m * vx) * vy + ((cr * lr - cf * lf) / (m * vx) - vx) * wr + cf / m * d);
            let wr1 = wr + ts * ((cr * lr - cf * lf) / (iz * vx) * vy - (cf * lf * lf + cr * lr * lr) / (iz * vx) * wr + cf * lf / iz * d);
            vy = vy1; wr = wr1;
            bk_err += (vy - truth[i + 1].vy).powi(2) + (wr - truth[i + 1].wr).powi(2);
        }
        let dk_rms = (dk_err / h as f64).sqrt();
        let bk_rms = (bk_err / h as f64).sqrt();
        dk_tot += dk_rms; bk_tot += bk_rms; n += 1.0;
        dk_max = dk_max.max(dk_rms); bk_max = bk_max.max(bk_rms);
    }
    println!("20-step horizon RMS (vy,wr) prediction error along run:");
    println!("  dk + const w: mean {:.5} max {:.5}", dk_tot / n, dk_max);
    println!("  bicycle     : mean {:.5} max {:.5}", bk_tot / n, bk_max);
}
