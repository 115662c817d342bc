use koopcar::config::ConfigFile;
use koopcar::eso::{design_gains, eso_step, EsoState};
use koopcar::koopman::load_checkpoint;
use koopcar::mpc::{p_longitudinal, solve_eso_dkmpc, BicycleParams, MpcConfig};
use koopcar::plant::{step_dynamics, step_pose, ControlInput, Pose, VehicleParams, VehicleState};
use koopcar::reference::gen_dlc_reference;
use nalgebra::DVector;

fn main() {
    let cfg_file = ConfigFile::load(std::path::Path::new("/tmp/koop/exp4.toml")).unwrap();
    let scenario = cfg_file.scenario("hi").unwrap();
    let vehicle = VehicleParams::default();
    let (model, _) = load_checkpoint(std::path::Path::new("/tmp/koop/model2.json")).unwrap();
    let (gains, _) = design_gains(&model, 0.9).unwrap();
    let mpc = MpcConfig::default();
    let path = gen_dlc_reference(&scenario.dlc);
    let bike_true = BicycleParams::from_vehicle(&vehicle, 0.85);
    let ts = scenario.ts;

    let mut state = VehicleState::new(scenario.speed.at(0.0), 0.0, 0.0);
    let mut pose = Pose::new(0.0, 0.0, 0.0);
    let mut u_prev = ControlInput::new(0.0, 0.0);
    let mut est: Option<EsoState> = None;
    let mut prev_z = None;
    let mut warm: Option<Vec<f64>> = None;
    let mut hint = None;

    let mut errs = [0.0f64; 4]; // dk, dk+w, bike-true, count in [3]
    let mut max_errs = [0.0f64; 3];

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

        // one-step predictions of the three models from the current state
        let zero = DVector::zeros(model.dims.q());
        let dk = model.project(&model.predict_one(&z_meas, &u, &zero)).unwrap();
        let dkw = model.project(&model.predict_one(&z_meas, &u, &updated.w_hat)).unwrap();
        let vx = state.vx.max(1.0);
        let (m, iz, lf, lr, cf, cr) = (bike_true.mass, bike_true.yaw_inertia, bike_true.lf, bike_true.lr, bike_true.cf, bike_true.cr);
        let vy1 = state.vy + ts * (-(cf + cr) / (m * vx) * state.vy + ((cr * lr - cf * lf) / (m * vx) - vx) * state.wr + cf / m * u.delta_f);
        let wr1 = state.wr + ts * ((cr * lr - cf * lf) / (iz * vx) * state.vy - (cf * lf * lf + cr * lr * lr) / (iz * vx) * state.wr + cf * lf / iz * u.delta_f);

        let next = step_dynamics(&state, &u, scenario.mu, &vehicle, ts).unwrap();
        let e_dk = ((dk.vy - next.vy).powi(2) + (dk.wr - next.wr).powi(2)).sqrt();
        let e_dkw = ((dkw.vy - next.vy).powi(2) + (dkw.wr - next.wr).powi(2)).sqrt();
        let e_bt = ((vy1 - next.vy).powi(2) + (wr1 - next.wr).powi(2)).sqrt();
        errs[0] += e_dk; errs[1] += e_dkw; errs[2] += e_bt; errs[3] += 1.0;
        max_errs[0] = max_errs[0].max(e_dk); max_errs[1] = max_errs[1].max(e_dkw); max_errs[2] = max_errs[2].max(e_bt);

        est = Some(updated);
        prev_z = Some(z_meas);
        pose = step_pose(&pose, &next, ts);
        state = next;
        u_prev = u;
    }
    let n = errs[3];
    println!("mean one-step (vy,wr) error along high-mu run:");
    println!("  dk      : {:.6}  (max {:.6})", errs[0] / n, max_errs[0]);
    println!("  dk + w  : {:.6}  (max {:.6})", errs[1] / n, max_errs[1]);
    println!("  bike 085: {:.6}  (max {:.6})", errs[2] / n, max_errs[2]);
}
