"""Distance metrics, PSNR, periodicity, and whole-fit evaluation."""
import json
import math

import numpy as np
import pytest

import cycleflow.autodiff as ad
from cycleflow.errors import ValidationError
from cycleflow.metrics import (
    EvalReport,
    evaluate_fit,
    hausdorff,
    hausdorff_brute,
    periodicity_error,
    point_surface_distance,
    psnr,
    write_eval_csv,
    write_eval_summary,
)
from cycleflow.mesh import TriangleMesh, icosphere
from cycleflow.volume import DomainNormalizer, Volume4D

from conftest import make_cube_mesh


class ConstantField:
    dtype = np.float64
    period = 1.0

    def __init__(self, v):
        self.v = np.asarray(v, dtype=np.float64)

    def __call__(self, x, t):
        return ad.constant(np.broadcast_to(self.v, x.value.shape).copy())


def flat_volume(n=12, spacing=2.0, n_frames=3, level=0.5):
    frames = np.full((n_frames, n, n, n), level, dtype=np.float32)
    return Volume4D(frames, (spacing,) * 3, (0.0,) * 3,
                    np.linspace(0.0, 1.0, n_frames))


# --------------------------------------------------- point-surface distance

def test_point_triangle_hand_cases():
    tri = TriangleMesh(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [[0, 1, 2]])
    cases = [
        ([0.25, 0.25, 2.0], 2.0),            # foot inside the triangle
        ([2.0, 0.0, 0.0], 1.0),              # beyond a vertex
        ([1.0, 1.0, 0.0], 1.0 / math.sqrt(2.0)),  # beyond the hypotenuse
        ([0.0, 0.0, -3.0], 3.0),             # below a vertex
        ([0.5, 0.25, 0.0], 0.0),             # on the surface
    ]
    pts = np.array([c[0] for c in cases])
    want = np.array([c[1] for c in cases])
    assert np.allclose(point_surface_distance(pts, tri), want, atol=1e-12)


def test_point_cube_distances(cube_mesh):
    # Unit cube [0,1]^3: center is 0.5 from every face, outside points see
    # the nearest face or edge.
    pts = np.array([
        [0.5, 0.5, 0.5],
        [2.0, 0.5, 0.5],
        [1.5, 1.5, 0.5],
    ])
    want = np.array([0.5, 1.0, math.sqrt(0.5)])
    assert np.allclose(point_surface_distance(pts, cube_mesh), want, atol=1e-12)


# ---------------------------------------------------------------- hausdorff

def test_hausdorff_of_identical_meshes_is_zero(cube_mesh):
    assert hausdorff(cube_mesh, cube_mesh) == 0.0
    assert hausdorff_brute(cube_mesh, cube_mesh) == 0.0


def test_hausdorff_of_translated_cube():
    a = make_cube_mesh()
    b = make_cube_mesh(origin=(0.3, 0.0, 0.0))
    assert hausdorff(a, b) == pytest.approx(0.3, abs=1e-12)


def test_hausdorff_is_symmetric_in_arguments():
    a = icosphere(1.0, subdivisions=1)
    b = make_cube_mesh(side=3.0, origin=(-1.5, -1.5, -1.5))
    assert hausdorff(a, b) == hausdorff(b, a)


def test_accelerated_matches_brute_on_random_pairs(rng):
    # The KD-tree route prunes candidate triangles but must reproduce the
    # exhaustive result exactly.
    for _ in range(10):
        a = icosphere(rng.uniform(0.5, 2.0), center=rng.uniform(-1, 1, 3),
                      subdivisions=1)
        b = make_cube_mesh(side=rng.uniform(0.5, 3.0),
                           origin=rng.uniform(-2, 1, 3))
        assert hausdorff(a, b) == pytest.approx(hausdorff_brute(a, b), abs=1e-12)


def test_concentric_spheres_distance():
    inner = icosphere(10.0, subdivisions=3)
    outer = icosphere(12.0, subdivisions=3)
    assert hausdorff(inner, outer) == pytest.approx(2.0, rel=0.01)


def test_hausdorff_rejects_empty_mesh(cube_mesh):
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(ValidationError):
        hausdorff(empty, cube_mesh)
    with pytest.raises(ValidationError):
        hausdorff_brute(cube_mesh, empty)


# --------------------------------------------------------------------- psnr

def test_psnr_matches_formula():
    rng = np.random.default_rng(0)
    b = rng.uniform(0.2, 1.0, (6, 6, 6))
    a = b + 0.125
    want = 10.0 * math.log10(float(b.max()) ** 2 / 0.125 ** 2)
    assert psnr(a, b) == pytest.approx(want, abs=1e-12)


def test_psnr_identical_is_infinite():
    b = np.full((4, 4), 0.75)
    assert psnr(b.copy(), b) == math.inf


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    b = rng.uniform(0.0, 1.0, (8, 8, 8))
    small = psnr(b + rng.normal(0, 0.01, b.shape), b)
    large = psnr(b + rng.normal(0, 0.1, b.shape), b)
    assert large < small


def test_psnr_input_validation():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValidationError, match="peak"):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)))


# -------------------------------------------------------------- periodicity

def test_periodicity_error_zero_for_still_field():
    norm = DomainNormalizer((-8.0,) * 3, (8.0,) * 3)
    err = periodicity_error(ConstantField([0.0, 0.0, 0.0]), norm, steps=4)
    assert err == 0.0


def test_periodicity_error_of_drifting_field_in_world_mm():
    # Constant drift of 0.25 normalized units/cycle * 8 mm half-extent.
    norm = DomainNormalizer((-8.0,) * 3, (8.0,) * 3)
    err = periodicity_error(ConstantField([0.25, 0.0, 0.0]), norm, steps=4)
    assert err == pytest.approx(2.0, abs=1e-12)


def test_periodicity_error_deterministic():
    norm = DomainNormalizer((-8.0,) * 3, (8.0,) * 3)
    model = ConstantField([0.1, -0.05, 0.0])
    a = periodicity_error(model, norm, steps=3, seed=42)
    b = periodicity_error(model, norm, steps=3, seed=42)
    assert a == b


# ------------------------------------------------------------- evaluate_fit

def test_evaluate_fit_tracks_translating_cube():
    # Constant normalized drift 0.125 -> world drift 0.125 * 11 mm = 1.375 mm
    # per unit time on a [0,22] mm domain.  Ground-truth cubes placed at the
    # exact advected positions make every per-frame HSD zero and volumes equal.
    vol = flat_volume(n=12, spacing=2.0, n_frames=3)
    model = ConstantField([0.125, 0.0, 0.0])
    base = make_cube_mesh(side=4.0, origin=(6.0, 9.0, 9.0))
    drift = 0.125 * 11.0
    gt = [
        base,
        make_cube_mesh(side=4.0, origin=(6.0 + 0.5 * drift, 9.0, 9.0)),
        make_cube_mesh(side=4.0, origin=(6.0 + drift, 9.0, 9.0)),
    ]
    rep = evaluate_fit(model, vol, gt, with_psnr=True)
    assert np.allclose(rep.hsd_mm, 0.0, atol=1e-9)
    assert np.allclose(rep.volume_mm3, 64.0, rtol=1e-12)
    assert np.allclose(rep.gt_volume_mm3, 64.0, rtol=1e-12)
    # flat frames: the warp resamples a constant image, so PSNR is +inf
    assert np.all(np.isinf(rep.psnr_db))
    assert rep.periodicity_error_mm == pytest.approx(drift, abs=1e-12)
    assert rep.mean_hsd_mm == pytest.approx(0.0, abs=1e-9)


def test_evaluate_fit_handles_missing_gt_frames():
    vol = flat_volume(n=12, spacing=2.0, n_frames=3)
    base = make_cube_mesh(side=4.0, origin=(6.0, 9.0, 9.0))
    rep = evaluate_fit(ConstantField([0.0, 0.0, 0.0]), vol, [base, None, base],
                       with_psnr=False)
    assert math.isnan(rep.hsd_mm[1])
    assert math.isnan(rep.gt_volume_mm3[1])
    assert np.isfinite(rep.hsd_mm[[0, 2]]).all()
    assert rep.mean_hsd_mm == pytest.approx(0.0, abs=1e-12)
    assert np.isnan(rep.psnr_db).all()


def test_evaluate_fit_validates_mesh_list():
    vol = flat_volume(n_frames=3)
    base = make_cube_mesh(side=4.0, origin=(6.0, 9.0, 9.0))
    with pytest.raises(ValidationError, match="per frame"):
        evaluate_fit(ConstantField([0, 0, 0]), vol, [base, base])
    with pytest.raises(ValidationError, match="frame-0"):
        evaluate_fit(ConstantField([0, 0, 0]), vol, [None, base, base])


def test_eval_report_summaries_with_all_nan():
    rep = EvalReport(np.array([0.0, 1.0]), np.array([math.nan, math.nan]),
                     np.array([math.nan, math.nan]), np.zeros(2), np.zeros(2),
                     0.0)
    assert math.isnan(rep.mean_hsd_mm)
    assert math.isnan(rep.max_hsd_mm)


# -------------------------------------------------------------------- files

def test_eval_csv_and_summary(tmp_path):
    vol = flat_volume(n=12, spacing=2.0, n_frames=3)
    base = make_cube_mesh(side=4.0, origin=(6.0, 9.0, 9.0))
    rep = evaluate_fit(ConstantField([0.125, 0.0, 0.0]), vol,
                       [base, None, None], with_psnr=True)
    csv_path = tmp_path / "eval.csv"
    write_eval_csv(rep, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "frame,t,hsd_mm,psnr_db,volume_mm3,gt_volume_mm3"
    assert len(lines) == 4
    cells = lines[1].split(",")
    assert float(cells[1]) == 0.0
    assert float(cells[4]) == pytest.approx(64.0, rel=1e-12)

    json_path = tmp_path / "eval.json"
    write_eval_summary(rep, json_path)
    data = json.loads(json_path.read_text())
    assert data["frames"] == 3
    assert data["periodicity_error_mm"] == rep.periodicity_error_mm
    # +inf PSNR survives JSON round trip as its repr string
    assert data["mean_psnr_db"] == "inf" or data["mean_psnr_db"] is None
