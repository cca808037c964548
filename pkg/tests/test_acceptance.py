"""Acceptance gate.

Runs every top-level acceptance check at its stated tolerance and prints
one PASS/FAIL line per criterion (visible with `pytest -s` or in captured
output).  The ablation fixtures are module-scoped because two full desk-scale
fits dominate the runtime and several criteria share them.
"""
import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

import cycleflow as cf
import cycleflow.autodiff as ad
from cycleflow import field
from cycleflow.mesh import icosphere, mesh_volume, read_obj, write_obj
from cycleflow.metrics import hausdorff, hausdorff_brute, psnr
from cycleflow.training import write_loss_csv
from cycleflow.volume import read_v4d, write_v4d

import conftest
from conftest import RadialPulseField, fd_grad, make_cube_mesh, rel_err


def report(n, ok, detail) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} — {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    return ok


def tiny_sphere_volume(n_frames=5):
    """8^3 pulsing-sphere volume used by the small-scale criteria."""
    pattern = cf.GrowthPattern("periodic", 2.0, amplitude_mm=0.5)
    return cf.make_sphere_series(pattern, 8, 1.0, n_frames, smoothing_mm=1.5)


# ---------------------------------------------------------------------------
# criterion 1: analytic gradient of the full objective vs finite differences


def test_criterion_1_full_objective_gradient():
    start = time.perf_counter()
    volume, _ = tiny_sphere_volume(n_frames=5)
    points = cf.sample_points(volume, 8, "uniform", seed=11)
    sizes = field.default_layer_sizes(hidden_layers=2, hidden_width=8)
    model = field.init_weights(5, sizes, omega=6.0, dtype=np.float64)

    def objective():
        with ad.Tape():
            total, _, _ = cf.total_loss(model, volume, points, cycle_weight=1.0)
        return float(total.value)

    with ad.Tape() as tape:
        total, _, _ = cf.total_loss(model, volume, points, cycle_weight=1.0)
        tape.backward(total)
        grads = [p.grad.copy() for p in model.parameters]

    worst = max(
        rel_err(g, fd_grad(lambda: objective(), p.value, eps=1e-5))
        for p, g in zip(model.parameters, grads)
    )
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 10.0
    assert report(1, ok, f"max rel grad err {worst:.3g} (<1e-4) in {elapsed:.2f}s (<10s)")


# ---------------------------------------------------------------------------
# criterion 2: first-order Euler convergence on an analytic flow


def test_criterion_2_euler_convergence_order():
    start = time.perf_counter()
    model = RadialPulseField(amp=0.25)
    seeds = np.random.default_rng(6).uniform(-0.5, 0.5, (16, 3))
    exact = seeds * model.scale_factor(0.75)
    errors = []
    for steps in (8, 16, 32, 64):
        traj = cf.integrate(model, seeds, 0.0, 0.75, steps)
        errors.append(np.abs(traj.endpoints - exact).max())
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    elapsed = time.perf_counter() - start
    ok = all(1.8 <= r <= 2.2 for r in ratios) and elapsed < 1.0
    detail = "ratios " + ", ".join(f"{r:.3f}" for r in ratios)
    assert report(2, ok, f"{detail} (each in [1.8,2.2]) in {elapsed:.3f}s (<1s)")


# ---------------------------------------------------------------------------
# criteria 3+4 (and 5's trained model): shared desk-scale ablation fixture

DESK = dict(grid=48, spacing=1.0, frames=25, radius=19.0, amplitude=0.75,
            smoothing=4.0)
FIT = dict(epochs=300, points_per_epoch=2000, learning_rate=3e-5, omega=6.0,
           seed=1, sampling="band", hidden_layers=3, hidden_width=128,
           cycle_weight=2.0)


@pytest.fixture(scope="module")
def ablation():
    pattern = cf.GrowthPattern("periodic", DESK["radius"],
                               amplitude_mm=DESK["amplitude"])
    volume, meshes = cf.make_sphere_series(
        pattern, DESK["grid"], DESK["spacing"], DESK["frames"],
        smoothing_mm=DESK["smoothing"])
    start = time.perf_counter()
    model_with, _ = cf.fit(volume, cf.FitConfig(cycle_enabled=True, **FIT))
    model_without, _ = cf.fit(volume, cf.FitConfig(cycle_enabled=False, **FIT))
    eval_with = cf.evaluate_fit(model_with, volume, meshes, with_psnr=False)
    eval_without = cf.evaluate_fit(model_without, volume, meshes,
                                   with_psnr=False)
    elapsed = time.perf_counter() - start
    return dict(volume=volume, meshes=meshes, model_with=model_with,
                model_without=model_without, eval_with=eval_with,
                eval_without=eval_without, elapsed=elapsed)


def test_criterion_3_cycle_ablation(ablation):
    ew, eo = ablation["eval_with"], ablation["eval_without"]
    hsd_w, hsd_o = ew.mean_hsd_mm, eo.mean_hsd_mm
    perr_w, perr_o = ew.periodicity_error_mm, eo.periodicity_error_mm
    ratio = perr_w / perr_o
    elapsed = ablation["elapsed"]
    ok_a = hsd_w < hsd_o
    ok_b = ratio <= 0.5
    ok_t = elapsed < 300.0
    ok = ok_a and ok_b and ok_t
    assert report(
        3, ok,
        f"mean HSD {hsd_w:.3f} vs {hsd_o:.3f} mm (cycle strictly lower: {ok_a}); "
        f"periodicity {perr_w:.3f} vs {perr_o:.3f} mm, ratio {ratio:.3f} (<=0.5); "
        f"{elapsed:.0f}s (<300s)")


def test_criterion_4_volume_curve_tracking(ablation):
    ew = ablation["eval_with"]
    gt = ew.gt_volume_mm3
    pred = ew.volume_mm3
    pearson = float(np.corrcoef(pred, gt)[0, 1])
    peak = int(np.argmax(gt))
    peak_err = abs(pred[peak] - gt[peak]) / gt[peak]
    ok = pearson >= 0.9 and peak_err <= 0.10
    assert report(4, ok, f"volume Pearson {pearson:.4f} (>=0.9), "
                         f"peak rel err {peak_err:.2%} (<=10%)")


# ---------------------------------------------------------------------------
# criterion 5: exact periodicity of the time encoding


def test_criterion_5_time_encoding_periodicity(ablation):
    model = ablation["model_with"]
    rng = np.random.default_rng(123)
    probes = rng.uniform(-1.0, 1.0, (1000, 3))
    # dyadic times: t + 1.0 is exact in binary, making the exact-equality
    # contract well-posed (for non-dyadic t the sum rounds before any
    # function can see it)
    times = rng.integers(0, 1024, 1000) / 1024.0
    worst = 0.0
    for p, t in zip(probes, times):
        a = cf.velocity(model, p[None, :], float(t))
        b = cf.velocity(model, p[None, :], float(t) + 1.0)
        worst = max(worst, float(np.abs(a - b).max()))

    # contrast: a model trained without the encoding is not periodic
    volume, _ = tiny_sphere_volume()
    raw_model, _ = cf.fit(volume, cf.FitConfig(
        epochs=20, points_per_epoch=64, hidden_layers=2, hidden_width=8,
        time_encoding=False, seed=2))
    worst_raw = 0.0
    for p, t in zip(probes[:100], times[:100]):
        a = cf.velocity(raw_model, p[None, :], float(t))
        b = cf.velocity(raw_model, p[None, :], float(t) + 1.0)
        worst_raw = max(worst_raw, float(np.abs(a - b).max()))

    ok = worst == 0.0 and worst_raw > 0.0
    assert report(5, ok, f"encoded max |H(P,t)-H(P,t+T)| = {worst} (exactly 0) "
                         f"over 1000 probes; without encoding: {worst_raw:.3g} (>0)")


# ---------------------------------------------------------------------------
# criterion 6: monotone growth patterns without the cycle penalty


def _monotone_fit(kind, rate):
    pattern = cf.GrowthPattern(kind, 6.0, rate=rate)
    volume, meshes = cf.make_sphere_series(pattern, 32, 1.0, 15,
                                           smoothing_mm=3.0)
    config = cf.FitConfig(cycle_enabled=False, epochs=200,
                          points_per_epoch=2000, seed=1, sampling="uniform",
                          hidden_layers=3, hidden_width=128)
    model, _ = cf.fit(volume, config)
    rep = cf.evaluate_fit(model, volume, meshes, with_psnr=False)
    rho = float(spearmanr(rep.volume_mm3, rep.gt_volume_mm3).statistic)
    return rho


def test_criterion_6_non_periodic_patterns():
    rho_lin = _monotone_fit("linear", 0.3)
    rho_exp = _monotone_fit("exponential", 0.25)
    ok = rho_lin >= 0.95 and rho_exp >= 0.95
    assert report(6, ok, f"volume Spearman linear {rho_lin:.3f}, "
                         f"exponential {rho_exp:.3f} (each >=0.95)")


# ---------------------------------------------------------------------------
# criterion 7: metric oracles


def test_criterion_7_metric_oracles():
    rng = np.random.default_rng(7)
    worst_pair = 0.0
    for i in range(50):
        a = icosphere(rng.uniform(0.5, 2.0), center=rng.uniform(-1, 1, 3),
                      subdivisions=1)
        if i % 2 == 0:
            b = make_cube_mesh(side=rng.uniform(0.5, 3.0),
                               origin=rng.uniform(-2.0, 1.0, 3))
        else:
            b = icosphere(rng.uniform(0.5, 2.0), center=rng.uniform(-1, 1, 3),
                          subdivisions=1)
        worst_pair = max(worst_pair, abs(hausdorff(a, b) - hausdorff_brute(a, b)))
    ok_pairs = worst_pair <= 1e-9

    concentric = hausdorff(icosphere(10.0), icosphere(12.0))
    ok_concentric = abs(concentric - 2.0) <= 0.02

    img = rng.uniform(0.1, 1.0, (9, 9, 9))
    noisy = img + rng.normal(0.0, 0.05, img.shape)
    direct = 10.0 * math.log10(float(img.max()) ** 2
                               / float(np.mean((noisy - img) ** 2)))
    ok_psnr = abs(psnr(noisy, img) - direct) <= 1e-9

    cube_vol = mesh_volume(make_cube_mesh(1.0))
    ok_cube = cube_vol == 1.0
    r = 7.0
    sphere_rel = abs(mesh_volume(icosphere(r)) - 4.0 / 3.0 * math.pi * r ** 3) \
        / (4.0 / 3.0 * math.pi * r ** 3)
    ok_sphere = sphere_rel < 0.02

    ok = ok_pairs and ok_concentric and ok_psnr and ok_cube and ok_sphere
    assert report(
        7, ok,
        f"hausdorff==brute within {worst_pair:.2g} (50 pairs, <=1e-9); "
        f"concentric {concentric:.4f} mm (2.0 +/- 1%); psnr formula exact: {ok_psnr}; "
        f"cube volume {cube_vol} (==1); icosphere volume rel err {sphere_rel:.4f} (<2%)")


# ---------------------------------------------------------------------------
# criterion 8: determinism and container round trips


def test_criterion_8_determinism_and_io(tmp_path):
    volume, meshes = tiny_sphere_volume()
    config = cf.FitConfig(epochs=20, points_per_epoch=64, hidden_layers=2,
                          hidden_width=16, seed=9)
    _, rep1 = cf.fit(volume, config)
    _, rep2 = cf.fit(volume, config)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_loss_csv(rep1, p1)
    write_loss_csv(rep2, p2)
    ok_csv = p1.read_bytes() == p2.read_bytes()

    vpath = tmp_path / "round.v4d"
    write_v4d(volume, vpath)
    back = read_v4d(vpath)
    vpath2 = tmp_path / "round2.v4d"
    write_v4d(back, vpath2)
    ok_v4d = (np.array_equal(back.frames, volume.frames)
              and np.array_equal(back.frame_times, volume.frame_times)
              and vpath.read_bytes() == vpath2.read_bytes())

    mesh = meshes[0]
    opath = tmp_path / "round.obj"
    write_obj(mesh, opath)
    mback = read_obj(opath)
    obj_err = float(np.abs(mback.vertices - mesh.vertices).max())
    ok_obj = obj_err <= 1e-6 and np.array_equal(mback.faces, mesh.faces)

    ok = ok_csv and ok_v4d and ok_obj
    assert report(8, ok, f"loss CSV byte-identical: {ok_csv}; "
                         f"V4D round trip bit-exact: {ok_v4d}; "
                         f"OBJ round trip max err {obj_err:.2g} (<=1e-6)")
