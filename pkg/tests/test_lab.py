import dataclasses

import numpy as np
import pytest

from qrbsde import lab
from qrbsde.model import build_preset
from qrbsde.regress import BasisSpec

pytestmark = pytest.mark.filterwarnings(
    "ignore:quadrature points left the space grid")

SMALL_MC = lab.MCConfig(n_paths=2000, seed=0, basis=BasisSpec(degree=3))


# ---------------------------------------------------------------------------
# slope fitting

def test_slope_fit_recovers_planted_exponents():
    hs = [0.4, 0.2, 0.1, 0.05]
    assert lab.slope_fit([(h, h) for h in hs]).slope == pytest.approx(1.0, abs=1e-12)
    fit = lab.slope_fit([(h, 3.0 * h ** 0.25) for h in hs])
    assert fit.slope == pytest.approx(0.25, abs=1e-12)
    assert fit.band95 == pytest.approx(0.0, abs=1e-9)


def test_slope_fit_rejects_bad_inputs():
    with pytest.raises(ValueError):
        lab.slope_fit([(0.1, 1.0), (0.2, 2.0)])           # too few points
    with pytest.raises(ValueError):
        lab.slope_fit([(0.1, 1.0), (0.2, 0.0), (0.4, 2.0)])  # zero error
    with pytest.raises(ValueError):
        lab.slope_fit([(0.1, 1.0), (0.1, 1.0), (0.1, 1.0)])  # degenerate h


def test_slope_fit_band_covers_noisy_truth():
    rng = np.random.default_rng(0)
    hs = np.logspace(-3, -1, 12)
    errs = hs ** 0.5 * np.exp(0.05 * rng.normal(size=12))
    fit = lab.slope_fit(list(zip(hs, errs)))
    assert abs(fit.slope - 0.5) <= 2.0 * fit.band95


# ---------------------------------------------------------------------------
# convergence runner

def test_convergence_validates_inputs():
    spec = build_preset("P1-pure-quadratic")
    with pytest.raises(ValueError):
        lab.run_convergence(spec, [8, 16, 32], SMALL_MC)
    with pytest.raises(ValueError):
        lab.run_convergence(spec, [8, 16, 16, 32], SMALL_MC)
    with pytest.raises(ValueError):
        lab.run_convergence(spec, [7, 8, 16, 32], SMALL_MC)   # 7 no divisor
    with pytest.raises(ValueError):
        lab.run_convergence(build_preset("P3-lipschitz"), [8, 16, 32, 64],
                            SMALL_MC, oracle="snell")


def test_convergence_small_run_shapes_and_monotonicity():
    spec = build_preset("P1-pure-quadratic")
    rep = lab.run_convergence(spec, [4, 8, 16, 32], SMALL_MC)
    assert [c["N"] for c in rep.cells] == [4, 8, 16, 32]
    errs = [c["y0_err"] for c in rep.cells]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert rep.slopes["y0_err"].slope > 0.2
    assert rep.slopes["z_err"].slope > 0.2
    assert rep.reference["y0_oracle"] == "snell"
    d = rep.to_dict()
    assert d["kind"] == "grid-refinement" and len(d["cells"]) == 4


def test_convergence_lipschitz_first_order():
    """Classical behaviour for the Lipschitz preset: the noise-free rate sits
    near first order in the mesh."""
    spec = build_preset("P3-lipschitz")
    rep = lab.run_convergence(spec, [4, 8, 16, 32], SMALL_MC, oracle="exact-scheme")
    # coarse grids overshoot first order a little; anything in [0.8, 2] is
    # the classical regime rather than a stalled rate
    assert 0.8 <= rep.slopes["y0_err"].slope <= 2.0


def test_convergence_flags_noise_floor():
    spec = dataclasses.replace(
        build_preset("P1-pure-quadratic"),
        generator=lambda t, x, y, z: np.zeros(np.shape(y)),
        pure_quadratic=False)
    rep = lab.run_convergence(spec, [4, 8, 16, 32], SMALL_MC)
    assert rep.floor_limited


# ---------------------------------------------------------------------------
# reflection sweep

def test_reflection_sweep_p1():
    spec = build_preset("P1-pure-quadratic")
    rep = lab.run_discrete_reflection_sweep(spec, 64, [4, 8, 16, 32, 64])
    gaps = {c["kappa"]: c["gap"] for c in rep.cells}
    assert gaps[64] == 0.0                       # kappa = N is the reference
    assert rep.reference["monotone_nondecreasing"]
    assert rep.slopes["gap"].slope >= 0.25


def test_reflection_sweep_rejects_nondivisor():
    spec = build_preset("P1-pure-quadratic")
    with pytest.raises(ValueError):
        lab.run_discrete_reflection_sweep(spec, 64, [3])


def test_reflection_sweep_exact_scheme_engine():
    spec = build_preset("P3-lipschitz")
    rep = lab.run_discrete_reflection_sweep(spec, 32, [4, 8, 16])
    assert rep.reference["engine"] == "exact-scheme"
    assert all(c["gap"] >= -1e-10 for c in rep.cells)


# ---------------------------------------------------------------------------
# stability runner

def test_stability_drift_shift_scaling():
    spec = build_preset("P2-mixed-quadratic")
    rep = lab.run_stability(spec, "drift-shift", [0.4, 0.2, 0.1], SMALL_MC, N=16)
    cells = rep.rows()
    for key in ("D_Y", "D_Z", "D_K", "dx_proxy"):
        vals = [c[key] for c in cells]
        assert all(b < a for a, b in zip(vals, vals[1:])), (key, vals)
    # first-power bound: the D/||dX|| ratio peaks at the largest eps
    ratios = [c["ratio_Y"] for c in cells]
    assert max(ratios) <= 2.0 * ratios[0]
    assert rep.dw_checksum


def test_stability_zero_perturbation_is_exact_zero():
    spec = build_preset("P2-mixed-quadratic")
    rep = lab.run_stability(spec, "drift-shift", [0.1, 0.0], SMALL_MC, N=8)
    c0 = [c for c in rep.cells if c["eps"] == 0.0][0]
    assert c0["dx_proxy"] == 0.0
    assert c0["D_Y"] == 0.0 and c0["D_Z"] == 0.0 and c0["D_K"] == 0.0


def test_stability_euler_vs_exact():
    spec = build_preset("P2-mixed-quadratic")
    rep = lab.run_stability(spec, "euler-vs-exact", [4, 8, 16, 32], SMALL_MC)
    assert rep.slopes["dx_proxy"].slope >= 0.45
    assert rep.slopes["D_Y"].slope >= 0.45


def test_stability_validates_levels():
    spec = build_preset("P2-mixed-quadratic")
    with pytest.raises(ValueError):
        lab.run_stability(spec, "drift-shift", [0.1, 0.2], SMALL_MC)
    with pytest.raises(ValueError):
        lab.run_stability(spec, "euler-vs-exact", [16, 8], SMALL_MC)
    with pytest.raises(ValueError):
        lab.run_stability(spec, "resampling", [1.0], SMALL_MC)


# ---------------------------------------------------------------------------
# diagnostics

def test_bound_value_closed_forms():
    import math
    assert lab.bmo_bound_value(build_preset("P1-pure-quadratic")) == \
        pytest.approx(math.e ** 2, abs=1e-12)
    spec = build_preset("P2-mixed-quadratic")
    M = math.exp(0.2) * 0.7
    want = math.exp(4 * 1.2 * M) / 1.2 ** 2 * (1 + 2 * 1.2 * 0.2 * (1 + M))
    assert lab.bmo_bound_value(spec) == pytest.approx(want, rel=1e-12)


def test_diagnostics_p1_small():
    spec = build_preset("P1-pure-quadratic")
    rep = lab.run_diagnostics(spec, 16, SMALL_MC)
    assert rep.passed and rep.tail_sum_max <= rep.bound_value
    assert set(rep.moments) == {"sumZ2", "K_T"}
    for d in rep.moments.values():
        assert set(d) == {1, 2, 4}
        assert all(np.isfinite(v) and v >= 0 for v in d.values())


def test_diagnostics_zero_driver_constant_obstacle():
    spec = dataclasses.replace(
        build_preset("P1-pure-quadratic"),
        generator=lambda t, x, y, z: np.zeros(np.shape(y)),
        obstacle=lambda x: np.full(np.shape(x), 0.2),
        pure_quadratic=False)
    rep = lab.run_diagnostics(spec, 8, SMALL_MC)
    # the true Z is zero, so the tail sum is squared regression noise of
    # order N * (M_g / sqrt(P dt))^2 * dt ~ 1e-3 at this budget
    assert rep.tail_sum_max <= 1e-2
    assert rep.moments["K_T"][1] == pytest.approx(0.0, abs=1e-10)


def test_diagnostics_moments_seed_stable():
    spec = build_preset("P1-pure-quadratic")
    mc_a = lab.MCConfig(n_paths=20000, seed=0, basis=BasisSpec(degree=4))
    mc_b = dataclasses.replace(mc_a, seed=1)
    m1 = lab.run_diagnostics(spec, 16, mc_a).moments["sumZ2"][1]
    m2 = lab.run_diagnostics(spec, 16, mc_b).moments["sumZ2"][1]
    assert abs(m1 - m2) <= 0.3 * max(m1, m2)
