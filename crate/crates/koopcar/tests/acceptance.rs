//! Acceptance suite: every benchmark claim checked at a pinned tolerance,
//! one pass line per criterion (run with `--nocapture` to see them all).
//!
//! The heavyweight fixtures (plant dataset, trained model, observer
//! gains) are built once and shared. Expect the full suite to take
//! roughly 10-20 minutes on a desktop CPU; run it with
//! `cargo test -p koopcar --test acceptance -- --nocapture`.

use std::sync::LazyLock;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use koopcar::dataset::{collect_dataset, ExcitationSpec};
use koopcar::eso::{design_gains, error_matrix, eso_step, spectral_radius, EsoGains, EsoState};
use koopcar::koopman::{
    input_to_vec, one_step_error_study, save_checkpoint, train, vec_to_state, KoopmanDims,
    KoopmanModel, KoopmanTrainer, Sequence, Split, TrainingConfig, TrajectoryDataset,
};
use koopcar::mpc::MpcConfig;
use koopcar::nn::{Activation, Layer, MinMaxScaler, Mlp};
use koopcar::plant::{ControlInput, VehicleParams, VehicleState};
use koopcar::qp::{qp_solve, QpProblem};
use koopcar::runner::{
    compare, metrics_csv, ControllerKind, ControllerSetup, MetricsReport, RunTrace, TimingMode,
};

const SEED: u64 = 1;

fn training_config() -> TrainingConfig {
    TrainingConfig {
        use_momentum: true,
        ..Default::default()
    }
}

struct Pipeline {
    dataset: TrajectoryDataset,
    model: KoopmanModel,
    gains: EsoGains,
}

static PIPELINE: LazyLock<Pipeline> = LazyLock::new(|| {
    let params = VehicleParams::default();
    let dataset = collect_dataset(&params, &ExcitationSpec::default(), SEED)
        .expect("dataset collection");
    let (model, _) = train(&dataset, &training_config()).expect("model training");
    let (gains, _) = design_gains(&model, 0.9).expect("observer gain design");
    Pipeline {
        dataset,
        model,
        gains,
    }
});

struct BenchmarkRuns {
    highmu: (MetricsReport, Vec<RunTrace>),
    lowmu: (MetricsReport, Vec<RunTrace>),
}

static RUNS: LazyLock<BenchmarkRuns> = LazyLock::new(|| {
    let pipe = &*PIPELINE;
    let vehicle = VehicleParams::default();
    let setups: Vec<ControllerSetup> = [
        ControllerKind::Lmpc,
        ControllerKind::Dkmpc,
        ControllerKind::EsoDkmpc,
    ]
    .iter()
    .map(|&kind| ControllerSetup {
        kind,
        model: Some(&pipe.model),
        gains: Some(&pipe.gains),
        mpc: MpcConfig::default(),
        kp_long: 800.0,
        lmpc_mu: 0.47,
    })
    .collect();
    let highmu = compare(
        &koopcar::runner::builtin_scenario("dlc_highmu").unwrap(),
        &setups,
        &vehicle,
        SEED,
    )
    .expect("high-mu comparison");
    let lowmu = compare(
        &koopcar::runner::builtin_scenario("dlc_lowmu").unwrap(),
        &setups,
        &vehicle,
        SEED,
    )
    .expect("low-mu comparison");
    BenchmarkRuns { highmu, lowmu }
});

/// Model with prescribed lifted matrix and inert basis nets, for observer
/// checks that exercise only the lifted dynamics.
fn model_with_a(a: DMatrix<f64>) -> KoopmanModel {
    let q = a.nrows();
    let phi = q - 3;
    let zero_net = |i: usize, o: usize| Mlp {
        layers: vec![Layer {
            weight: DMatrix::zeros(o, i),
            bias: None,
            activation: Activation::Identity,
        }],
    };
    let unit_scaler = |d: usize| MinMaxScaler {
        min: DVector::from_element(d, -1.0),
        max: DVector::from_element(d, 1.0),
    };
    KoopmanModel {
        dims: KoopmanDims::new(phi),
        encoder: zero_net(3, phi),
        decoder: zero_net(phi, 3),
        a,
        b: DMatrix::zeros(q, 2),
        scaler_x: unit_scaler(3),
        scaler_u: unit_scaler(2),
    }
}

fn random_stable(q: usize, rho_target: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(q, q, |_, _| rng.gen_range(-1.0..1.0));
    let rho = spectral_radius(&raw).unwrap();
    raw * (rho_target / rho)
}

#[test]
fn criterion_01_projection_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // An untrained (randomly initialized) model and a prescribed one both
    // satisfy the identity exactly.
    let trainer = KoopmanTrainer::new(
        KoopmanDims::new(5),
        &[32, 32],
        MinMaxScaler {
            min: DVector::from_vec(vec![-25.0, -3.0, -1.5]),
            max: DVector::from_vec(vec![25.0, 3.0, 1.5]),
        },
        MinMaxScaler {
            min: DVector::from_vec(vec![-3000.0, -0.3]),
            max: DVector::from_vec(vec![3000.0, 0.3]),
        },
        &mut rng,
    );
    let models = [trainer.finalize(), model_with_a(random_stable(8, 0.8, 7))];
    for model in &models {
        for _ in 0..50_000 {
            let x = VehicleState::new(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-2.0..2.0),
            );
            let back = model.project(&model.lift(&x)).unwrap();
            assert_eq!(back.vx, x.vx);
            assert_eq!(back.vy, x.vy);
            assert_eq!(back.wr, x.wr);
        }
    }
    println!("criterion 1: PASS - projection identity exact on 100000 random states");
}

#[test]
fn criterion_02_composite_loss_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let scaler_x = MinMaxScaler {
        min: DVector::from_vec(vec![-2.0, -2.0, -2.0]),
        max: DVector::from_vec(vec![2.0, 2.0, 2.0]),
    };
    let scaler_u = MinMaxScaler {
        min: DVector::from_vec(vec![-1.0, -0.3]),
        max: DVector::from_vec(vec![1.0, 0.3]),
    };
    let mut trainer = KoopmanTrainer::new(
        KoopmanDims::new(3),
        &[16, 16],
        scaler_x,
        scaler_u,
        &mut rng,
    );
    // A couple of short sequences drive every parameter.
    let mut sequences = Vec::new();
    for _ in 0..3 {
        let p = 4;
        let mut states = Vec::with_capacity(p + 1);
        let mut inputs = Vec::with_capacity(p);
        for k in 0..=p {
            states.push(VehicleState::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ));
            if k < p {
                inputs.push(ControlInput::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.25..0.25),
                ));
            }
        }
        sequences.push(Sequence {
            states,
            inputs,
            split: Split::Train,
        });
    }
    let scaled: Vec<_> = sequences.iter().map(|s| trainer.scale_sequence(s)).collect();
    let batch: Vec<_> = scaled.iter().collect();

    let count = trainer.param_count();
    let h = 1e-5;
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for draw in 0..50 {
        // Fresh random parameters each draw.
        for idx in 0..count {
            trainer.set_param(idx, rng.gen_range(-0.4..0.4));
        }
        let (_, grads) = trainer.grads_scaled(&batch).unwrap();
        // Sweep a deterministic stripe of parameters per draw; across 50
        // draws every parameter index is covered several times.
        let mut idx = draw % 7;
        while idx < count {
            let orig = trainer.get_param(idx);
            trainer.set_param(idx, orig + h);
            let (lp, _, _) = trainer.loss_scaled(&batch).unwrap();
            trainer.set_param(idx, orig - h);
            let (lm, _, _) = trainer.loss_scaled(&batch).unwrap();
            trainer.set_param(idx, orig);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = trainer.grad_param(&grads, idx);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "draw {draw} param {idx}: numeric {numeric} vs analytic {analytic}"
            );
            worst = worst.max(rel);
            checked += 1;
            idx += 7;
        }
    }
    println!(
        "criterion 2: PASS - {checked} gradient entries across 50 draws, worst rel err {worst:.2e}"
    );
}

#[test]
fn criterion_03_eso_convergence() {
    let mut worst_rate_margin: f64 = f64::NEG_INFINITY;
    for seed in 0..20 {
        let a = random_stable(8, 0.3 + 0.028 * seed as f64, 300 + seed);
        let model = model_with_a(a.clone());
        let (gains, rho) = design_gains(&model, 0.9).unwrap();
        assert!(rho <= 0.9, "seed {seed}: designed rho {rho}");
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let w_true = DVector::from_fn(8, |_, _| rng.gen_range(-0.5..0.5));
        let mut z = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let mut est = EsoState::from_measurement(&z);
        let u = ControlInput::new(0.0, 0.0);
        let mut norms = Vec::with_capacity(500);
        for _ in 0..500 {
            let next = eso_step(&model, &gains, &est, &z, &u);
            z = &a * &z + &w_true;
            est = next;
            norms.push((&est.w_hat - &w_true).norm());
        }
        assert!(
            norms[499] < 1e-6,
            "seed {seed}: final disturbance error {}",
            norms[499]
        );
        let (k1, k2) = (50, 250);
        if norms[k2] > 1e-13 && norms[k1] > 0.0 {
            let rate = (norms[k2] / norms[k1]).powf(1.0 / (k2 - k1) as f64);
            assert!(
                rate <= rho + 0.05,
                "seed {seed}: empirical rate {rate} vs rho {rho}"
            );
            worst_rate_margin = worst_rate_margin.max(rate - rho);
        }
    }
    println!(
        "criterion 3: PASS - 20 random plants converge below 1e-6 in 500 steps, \
         worst (rate - rho) = {worst_rate_margin:.3}"
    );
}

/// Independent eigenvalue-magnitude oracle: characteristic polynomial via
/// Newton's identities over traces of matrix powers, roots by
/// Durand-Kerner iteration. No Schur decomposition anywhere.
fn spectral_radius_oracle(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    // Power sums p_k = tr(M^k).
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut p = vec![0.0f64; n + 1];
    for k in 1..=n {
        power = &power * m;
        p[k] = power.trace();
    }
    // Elementary symmetric polynomials via Newton's identities.
    let mut e = vec![0.0f64; n + 1];
    e[0] = 1.0;
    for k in 1..=n {
        let mut acc = 0.0;
        for i in 1..=k {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e[k - i] * p[i];
        }
        e[k] = acc / k as f64;
    }
    // Monic polynomial z^n - e1 z^{n-1} + e2 z^{n-2} - ...
    let coeffs: Vec<Complex<f64>> = (0..=n)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            Complex::new(sign * e[k], 0.0)
        })
        .collect();
    let eval = |z: Complex<f64>| {
        let mut v = Complex::new(0.0, 0.0);
        for c in &coeffs {
            v = v * z + c;
        }
        v
    };
    // Durand-Kerner from a non-real geometric start.
    let mut roots: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(0.4, 0.9).powu(i as u32 + 1))
        .collect();
    for _ in 0..200 {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-14 {
            break;
        }
    }
    roots.iter().map(|r| r.norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_04_spectral_radius_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.gen_range(2..=12);
        // Scale keeps eigenvalues O(1) so the polynomial stays conditioned.
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) / (n as f64).sqrt();
        let ours = spectral_radius(&m).unwrap();
        let oracle = spectral_radius_oracle(&m);
        let err = (ours - oracle).abs();
        assert!(
            err < 1e-8,
            "trial {trial} (n={n}): {ours} vs oracle {oracle}"
        );
        worst = worst.max(err);
    }
    println!("criterion 4: PASS - 100 random matrices up to 12x12, worst |diff| {worst:.2e}");
}

/// Active-set enumeration oracle, written against raw LU solves.
fn qp_enumeration_oracle(problem: &QpProblem) -> Option<f64> {
    let n = problem.linear.len();
    let m = problem.ineq_rhs.len();
    let mut best: Option<f64> = None;
    for mask in 0..(1u32 << m) {
        let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = subset.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
        for (s, &row) in subset.iter().enumerate() {
            for c in 0..n {
                kkt[(c, n + s)] = problem.ineq_mat[(row, c)];
                kkt[(n + s, c)] = problem.ineq_mat[(row, c)];
            }
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
        for (s, &row) in subset.iter().enumerate() {
            rhs[n + s] = problem.ineq_rhs[row];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let mults = sol.rows(n, k);
        let feasible = (0..m)
            .all(|i| problem.ineq_mat.row(i).transpose().dot(&x) - problem.ineq_rhs[i] <= 1e-8);
        let dual_ok = mults.iter().all(|&l| l >= -1e-8);
        if feasible && dual_ok {
            let obj = problem.objective(&x);
            if best.map_or(true, |b| obj < b) {
                best = Some(obj);
            }
        }
    }
    best
}

#[test]
fn criterion_05_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.gen_range(2..=10);
        let mc = rng.gen_range(1..=6usize);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let hessian = &m * m.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.3..2.0);
        let linear = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let ineq_mat = DMatrix::from_fn(mc, n, |_, _| rng.gen_range(-1.0..1.0));
        let anchor = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let ineq_rhs = &ineq_mat * &anchor + DVector::from_fn(mc, |_, _| rng.gen_range(0.05..1.5));
        let problem = QpProblem {
            hessian,
            linear,
            ineq_mat,
            ineq_rhs,
            eq_mat: None,
            eq_rhs: None,
        };
        let sol = qp_solve(&problem).unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        let oracle = qp_enumeration_oracle(&problem).expect("oracle candidate");
        let err = (sol.objective - oracle).abs();
        assert!(err < 1e-8, "trial {trial}: {} vs {}", sol.objective, oracle);
        worst = worst.max(err);
    }
    println!("criterion 5: PASS - 200 random convex QPs vs enumeration, worst |diff| {worst:.2e}");
}

#[test]
fn criterion_06_synthetic_lti_recovery() {
    let a0 = DMatrix::from_row_slice(
        3,
        3,
        &[0.92, 0.03, 0.0, -0.02, 0.88, 0.08, 0.01, -0.04, 0.85],
    );
    let b0 = DMatrix::from_row_slice(3, 2, &[0.05, 0.0, 0.0, 0.25, 0.01, 0.12]);
    let gen = |n_seq: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sequences = Vec::with_capacity(n_seq);
        for _ in 0..n_seq {
            let mut x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let mut states = vec![vec_to_state(&x)];
            let mut inputs = Vec::new();
            for _ in 0..8 {
                let u = ControlInput::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.29..0.29));
                x = &a0 * &x + &b0 * input_to_vec(&u);
                states.push(vec_to_state(&x));
                inputs.push(u);
            }
            sequences.push(Sequence {
                states,
                inputs,
                split: Split::Train,
            });
        }
        TrajectoryDataset {
            sequences,
            ts: 0.025,
        }
    };
    let cfg = TrainingConfig {
        p_phi: 2,
        seq_len: 8,
        epochs: 120,
        batch_size: 32,
        learning_rate: 2e-3,
        use_momentum: true,
        hidden_layers: 2,
        hidden_units: 24,
        seed: 7,
        ..Default::default()
    };
    let (model, _) = train(&gen(220, 5), &cfg).unwrap();
    let heldout = gen(40, 9001);
    let zero_w = DVector::zeros(model.dims.q());
    let mut sq = [0.0f64; 3];
    let mut count = 0;
    for seq in &heldout.sequences {
        for k in 0..seq.inputs.len() {
            let z = model.lift(&seq.states[k]);
            let pred = model
                .project(&model.predict_one(&z, &seq.inputs[k], &zero_w))
                .unwrap();
            let truth = &seq.states[k + 1];
            sq[0] += (pred.vx - truth.vx).powi(2);
            sq[1] += (pred.vy - truth.vy).powi(2);
            sq[2] += (pred.wr - truth.wr).powi(2);
            count += 1;
        }
    }
    let rmse: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    for (c, r) in rmse.iter().enumerate() {
        assert!(*r < 1e-2, "channel {c}: held-out one-step RMSE {r}");
    }
    println!(
        "criterion 6: PASS - held-out one-step RMSE per channel {:.2e}/{:.2e}/{:.2e} < 1e-2",
        rmse[0], rmse[1], rmse[2]
    );
}

#[test]
fn criterion_07_dimension_study_trend() {
    let pipe = &*PIPELINE;
    let rows = one_step_error_study(&pipe.dataset, &[2, 3, 10, 15], &training_config()).unwrap();
    let by_dim = |d: usize| rows.iter().find(|r| r.dim == d).unwrap();
    let (d2, d3, d10, d15) = (by_dim(2), by_dim(3), by_dim(10), by_dim(15));
    assert!(
        d10.ex.rmse < d3.ex.rmse,
        "Vx RMSE at dim 10 ({}) must be below dim 3 ({})",
        d10.ex.rmse,
        d3.ex.rmse
    );
    assert!(
        d15.ey.rmse <= d2.ey.rmse,
        "Vy RMSE at dim 15 ({}) must not exceed dim 2 ({})",
        d15.ey.rmse,
        d2.ey.rmse
    );
    println!(
        "criterion 7: PASS - Vx RMSE dim10 {:.4} < dim3 {:.4}; Vy RMSE dim15 {:.4} <= dim2 {:.4}",
        d10.ex.rmse, d3.ex.rmse, d15.ey.rmse, d2.ey.rmse
    );
}

fn rmse_of(report: &MetricsReport, name: &str) -> f64 {
    report
        .rows
        .iter()
        .find(|r| r.controller == name)
        .unwrap()
        .ey_rmse
}

#[test]
fn criterion_08_high_mu_dlc() {
    let runs = &*RUNS;
    let (report, _) = &runs.highmu;
    for row in &report.rows {
        assert!(!row.diverged, "{} diverged on the high-mu course", row.controller);
        assert!(
            row.ey_max < 1.0,
            "{}: max |e_Y| = {} m exceeds 1.0",
            row.controller,
            row.ey_max
        );
    }
    let (lmpc, dkmpc, eso) = (
        rmse_of(report, "lmpc"),
        rmse_of(report, "dkmpc"),
        rmse_of(report, "eso-dkmpc"),
    );
    assert!(
        eso < lmpc && eso < dkmpc,
        "compensated controller must have the smallest RMSE: eso {eso} vs lmpc {lmpc}, dkmpc {dkmpc}"
    );
    println!(
        "criterion 8: PASS - high-mu eY RMSE: eso-dkmpc {eso:.3} < dkmpc {dkmpc:.3}, lmpc {lmpc:.3}; all max < 1.0 m"
    );
}

#[test]
fn criterion_09_low_mu_dlc() {
    let runs = &*RUNS;
    let (report, _) = &runs.lowmu;
    let (lmpc, dkmpc, eso) = (
        rmse_of(report, "lmpc"),
        rmse_of(report, "dkmpc"),
        rmse_of(report, "eso-dkmpc"),
    );
    let eso_diverged = report
        .rows
        .iter()
        .find(|r| r.controller == "eso-dkmpc")
        .unwrap()
        .diverged;
    assert!(!eso_diverged, "compensated controller must survive the low-mu course");
    assert!(eso <= dkmpc, "ordering: eso {eso} <= dkmpc {dkmpc}");
    assert!(dkmpc < lmpc, "ordering: dkmpc {dkmpc} < lmpc {lmpc}");
    assert!(eso < 0.5, "eso-dkmpc low-mu RMSE {eso} must stay below 0.5 m");
    println!(
        "criterion 9: PASS - low-mu eY RMSE ordering {eso:.3} <= {dkmpc:.3} < {lmpc:.3}, eso < 0.5 m"
    );
}

#[test]
fn criterion_10_longitudinal_tracking() {
    let runs = &*RUNS;
    let (_, traces) = &runs.highmu;
    let v_ref = 35.0 / 3.6;
    let mut worst: f64 = 0.0;
    for trace in traces {
        for row in &trace.rows {
            let err = (row.vx - v_ref).abs();
            assert!(
                err < 0.3,
                "{} at t={}: |Vx - Vxr| = {err}",
                trace.controller,
                row.t
            );
            worst = worst.max(err);
        }
    }
    println!("criterion 10: PASS - speed error below 0.3 m/s for every controller (worst {worst:.3})");
}

#[test]
fn criterion_11_timing_sanity() {
    let runs = &*RUNS;
    let (report, _) = &runs.highmu;
    let solve = |name: &str| {
        report
            .rows
            .iter()
            .find(|r| r.controller == name)
            .unwrap()
            .solve_ms_avg
    };
    let eso = solve("eso-dkmpc");
    let lmpc = solve("lmpc");
    assert!(eso < 50.0, "mean compensated solve time {eso} ms exceeds 50 ms");
    assert!(
        lmpc < eso,
        "baseline should be cheaper per solve: lmpc {lmpc} ms vs eso-dkmpc {eso} ms"
    );
    println!("criterion 11: PASS - mean solve times: lmpc {lmpc:.3} ms < eso-dkmpc {eso:.3} ms < 50 ms");
}

#[test]
fn criterion_12_compare_determinism() {
    // Byte-identical CSV artifacts from repeated CLI comparisons with a
    // fixed seed, exercising the shipped binary end to end.
    let pipe = &*PIPELINE;
    let dir = std::env::temp_dir().join("koopcar_acceptance_c12");
    std::fs::create_dir_all(&dir).unwrap();
    let model_path = dir.join("model.json");
    save_checkpoint(&pipe.model, Some(&training_config()), &model_path).unwrap();
    let bin = env!("CARGO_BIN_EXE_koopcar");
    let run_once = |out: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                "compare",
                "--scenario",
                "dlc_lowmu",
                "--controllers",
                "lmpc,dkmpc,eso-dkmpc",
                "--model",
                model_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "1",
            ])
            .output()
            .expect("spawn compare");
        assert!(
            status.status.success(),
            "compare failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    let out_a = dir.join("metrics_a.csv");
    let out_b = dir.join("metrics_b.csv");
    run_once(&out_a);
    run_once(&out_b);
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "repeated compare runs must produce byte-identical CSVs");
    // In-process cross-check through the library path as well.
    let runs = &*RUNS;
    let csv1 = metrics_csv(&runs.lowmu.0, TimingMode::Zeroed);
    let csv2 = metrics_csv(&runs.lowmu.0, TimingMode::Zeroed);
    assert_eq!(csv1, csv2);
    println!("criterion 12: PASS - repeated compare runs byte-identical ({} bytes)", a.len());
}

/// Not a numbered criterion: the training-loss trend named in the module
/// contract (smoothed training loss non-increasing on the plant dataset)
/// rides along here where the trained history is available.
#[test]
fn training_loss_smoothed_trend() {
    let pipe = &*PIPELINE;
    let (_, history) = train(
        &pipe.dataset,
        &TrainingConfig {
            epochs: 30,
            ..training_config()
        },
    )
    .unwrap();
    let smoothed: Vec<f64> = history
        .train_loss
        .windows(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    for pair in smoothed.windows(2) {
        assert!(
            pair[1] <= pair[0] * (1.0 + 1e-9),
            "smoothed training loss rose: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    println!("auxiliary: PASS - smoothed (window 10) training loss non-increasing");
}
