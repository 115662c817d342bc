#!/usr/bin/env python3
"""Smoke test for the koopcar_py extension module.

Builds the cdylib with cargo if needed, imports it, and drives the whole
pipeline in-process: plant stepping, data collection, a tiny training
run, lifted-space prediction, observer gain design, checkpoint
round-trip, and a short closed-loop scenario.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import():
    lib_names = ["libkoopcar_py.so", "libkoopcar_py.dylib", "koopcar_py.dll"]
    release = REPO / "target" / "release"
    lib = next((release / n for n in lib_names if (release / n).exists()), None)
    if lib is None:
        print("building koopcar-py (release)...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "koopcar-py"],
            cwd=REPO,
            check=True,
        )
        lib = next(release / n for n in lib_names if (release / n).exists())
    stage = Path(tempfile.mkdtemp(prefix="koopcar_py_"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy2(lib, stage / f"koopcar_py{suffix}")
    sys.path.insert(0, str(stage))
    import koopcar_py

    return koopcar_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) < tol, f"{a} != {b} (tol {tol})"


def main():
    kc = build_and_import()
    checks = 0

    # Plant: hand-checked acceleration step (T/r_w)/m with r_w = 0.3.
    p = kc.VehicleParams(wheel_radius=0.3)
    nxt = kc.step_dynamics((10.0, 0.0, 0.0), (400.0, 0.0), 0.85, p, 0.025)
    approx(nxt[0], 10.0 + 0.025 * (400.0 / 0.3) / 1848.0, 1e-12)
    approx(nxt[1], 0.0)
    approx(nxt[2], 0.0)
    checks += 1
    print("plant step: ok")

    # Pose update in a rotated frame.
    pose = kc.step_pose((0.0, 0.0, math.pi / 2), (10.0, 0.0, 0.0), 0.025)
    approx(pose[0], 0.0, 1e-12)
    approx(pose[1], 0.25, 1e-12)
    checks += 1
    print("pose step: ok")

    # Tiny data collection + training.
    params = kc.VehicleParams()
    ds = kc.collect(params, maneuvers=12, maneuver_secs=4.0, seed=1)
    assert len(ds) > 50, f"dataset too small: {len(ds)}"
    model = kc.train_model(
        ds,
        p_phi=3,
        epochs=10,
        hidden_layers=1,
        hidden_units=16,
        use_momentum=True,
        seed=1,
    )
    assert model.dims() == (3, 2, 3)
    checks += 1
    print(f"collected {len(ds)} sequences, trained a {model.dims()} model: ok")

    # Projection identity is exact by construction.
    x = (12.3, -0.4, 0.21)
    z = model.lift(x)
    assert len(z) == model.q()
    back = model.project(z)
    assert back == x, f"{back} != {x}"
    checks += 1
    print("lift/project identity: ok")

    # Rollout shape and finiteness.
    states = model.rollout((10.0, 0.0, 0.0), [(100.0, 0.01)] * 5, [0.0] * model.q())
    assert len(states) == 5
    assert all(all(math.isfinite(v) for v in s) for s in states)
    checks += 1
    print("rollout: ok")

    # Checkpoint round-trip reproduces predictions exactly.
    stage = Path(tempfile.mkdtemp(prefix="koopcar_ckpt_"))
    ckpt = stage / "model.json"
    model.save(str(ckpt))
    model2 = kc.Model.load(str(ckpt))
    z2 = model2.lift(x)
    assert z == z2, "checkpoint round-trip changed the lift"
    checks += 1
    print("checkpoint round-trip: ok")

    # Observer gain design yields a contractive error system.
    b1, b2, rho = kc.design_eso_gains(model, 0.9)
    assert 0.0 <= rho <= 0.9, rho
    checks += 1
    print(f"eso gains: beta1={b1:.2f} beta2={b2:.2f} rho={rho:.3f}: ok")

    # Short closed-loop run (baseline controller needs no model).
    metrics = kc.run_scenario("dlc_highmu", "lmpc", seed=1, duration=4.0)
    assert not metrics["diverged"]
    assert metrics["steps"] == 160
    assert metrics["eY_max"] < 1.0
    checks += 1
    print(f"closed loop (lmpc, 4 s): eY_max={metrics['eY_max']:.3f}: ok")

    # And one with the tiny learned model in the loop.
    metrics = kc.run_scenario("dlc_highmu", "eso-dkmpc", model=model, seed=1, duration=3.0)
    assert not metrics["diverged"]
    checks += 1
    print(f"closed loop (eso-dkmpc, 3 s): eY_max={metrics['eY_max']:.3f}: ok")

    print(f"\nsmoke test passed ({checks} checks)")


if __name__ == "__main__":
    main()
