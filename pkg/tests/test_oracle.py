import dataclasses
import math

import numpy as np
import pytest
from numpy.polynomial.hermite import hermgauss

from qrbsde.forward import make_grid
from qrbsde.model import build_preset, clip_obstacle
from qrbsde.oracle import (SpaceGrid, brute_force_tiny, build_space_grid,
                           exact_scheme_solve, snell_cole_hopf)

pytestmark = pytest.mark.filterwarnings(
    "ignore:quadrature points left the space grid")


def _p1():
    return build_preset("P1-pure-quadratic")


def _zero_driver(spec):
    return dataclasses.replace(
        spec, generator=lambda t, x, y, z: np.zeros(np.shape(y)),
        pure_quadratic=False)


def test_space_grid_validation():
    with pytest.raises(ValueError):
        SpaceGrid(nodes=np.linspace(0, 1, 10), quad_order=15)
    with pytest.raises(ValueError):
        SpaceGrid(nodes=np.linspace(0, 1, 60), quad_order=3)
    space = build_space_grid(_p1())
    assert space.nodes[0] <= 1.0 - 6 * 0.3 and space.nodes[-1] >= 1.0 + 6 * 0.3


def test_constant_data_fixed_point():
    spec = _zero_driver(_p1())
    spec = dataclasses.replace(spec, obstacle=lambda x: np.full(np.shape(x), 0.3))
    grid, sched = make_grid(8, spec.T)
    sol = exact_scheme_solve(spec, grid, sched, build_space_grid(spec))
    np.testing.assert_allclose(sol.y, 0.3, atol=1e-12)
    np.testing.assert_allclose(sol.z, 0.0, atol=1e-12)


def test_single_step_matches_direct_quadrature():
    # smooth payoff so quadrature + pchip resolve well below the tolerance;
    # the clipped obstacle's kink would dominate the comparison otherwise
    spec = dataclasses.replace(_zero_driver(_p1()),
                               obstacle=lambda x: 0.5 * np.exp(-np.asarray(x, float) ** 2))
    grid, sched = make_grid(1, spec.T)
    sol = exact_scheme_solve(spec, grid, sched, build_space_grid(spec, J=801, quad_order=40))
    h, w = hermgauss(80)
    xT = 1.0 + 0.3 * math.sqrt(2.0) * h
    want = float((0.5 * np.exp(-xT ** 2)) @ w / math.sqrt(math.pi))
    assert sol.y0 == pytest.approx(want, abs=1e-8)


def test_terminal_slice_is_obstacle():
    spec = _p1()
    grid, sched = make_grid(4, spec.T)
    space = build_space_grid(spec)
    for solver in (exact_scheme_solve, snell_cole_hopf):
        sol = solver(spec, grid, sched, space)
        np.testing.assert_allclose(sol.y[-1], clip_obstacle(space.nodes), atol=1e-12)


def test_self_convergence_in_space_resolution():
    spec = _p1()
    grid, sched = make_grid(64, spec.T)
    a = exact_scheme_solve(spec, grid, sched, build_space_grid(spec, J=401, quad_order=15))
    b = exact_scheme_solve(spec, grid, sched, build_space_grid(spec, J=801, quad_order=30))
    # the kink in the clipped obstacle caps the attainable resolution here
    assert abs(a.y0 - b.y0) <= 1e-5


def test_snell_requires_pure_quadratic():
    spec = build_preset("P2-mixed-quadratic")
    grid, sched = make_grid(4, spec.T)
    with pytest.raises(ValueError):
        snell_cole_hopf(spec, grid, sched, build_space_grid(spec))


def test_snell_constant_obstacle():
    spec = dataclasses.replace(_p1(), obstacle=lambda x: np.full(np.shape(x), 0.25))
    grid, sched = make_grid(8, spec.T)
    sol = snell_cole_hopf(spec, grid, sched, build_space_grid(spec))
    np.testing.assert_allclose(sol.y, 0.25, atol=1e-12)


def test_snell_terminal_only_is_exponential_moment():
    # smooth convex payoff: with reflection only at the endpoints the value
    # collapses to log E[exp(g(X_T))], which an 80-point rule pins down;
    # convexity (Jensen) keeps the initial reflection max(g(x0), .) inactive
    g = lambda x: 0.2 * (np.asarray(x, float) - 1.0) ** 2
    spec = dataclasses.replace(_p1(), obstacle=g)
    grid, sched = make_grid(16, spec.T, [1.0])   # reflect at endpoints only
    sol = snell_cole_hopf(spec, grid, sched, build_space_grid(spec, J=801, quad_order=30))
    h, w = hermgauss(80)
    xT = 1.0 + 0.3 * math.sqrt(2.0) * h
    want = math.log(float(np.exp(g(xT)) @ w / math.sqrt(math.pi)))
    assert sol.y0 == pytest.approx(want, abs=1e-6)


def test_snell_monotone_in_schedule_refinement():
    spec = _p1()
    space = build_space_grid(spec)
    prev = None
    for stride in (8, 4, 2, 1):
        grid, sched = make_grid(32, spec.T, ("every", stride))
        y = snell_cole_hopf(spec, grid, sched, space).y
        if prev is not None:
            # pchip is not a monotone operator in its data, so allow
            # interpolation-level slack on top of the exact-recursion ordering
            assert np.all(y >= prev - 1e-7)
        prev = y


def test_oracles_cross_agree_on_p1():
    spec = _p1()
    space = build_space_grid(spec)
    grid, sched = make_grid(64, spec.T)
    a = exact_scheme_solve(spec, grid, sched, space)
    b = snell_cole_hopf(spec, grid, sched, space)
    assert float(np.max(np.abs(a.y - b.y))) <= 1e-3


def test_brute_force_single_step():
    spec = _zero_driver(_p1())
    grid, sched = make_grid(1, spec.T)
    y_tree = brute_force_tiny(spec, grid, sched, quad_order=9)
    sol = exact_scheme_solve(spec, grid, sched,
                             build_space_grid(spec, J=801, quad_order=9))
    assert y_tree == pytest.approx(sol.y0, abs=1e-6)


def test_brute_force_linear_payoff():
    spec = _zero_driver(_p1())
    lin = dataclasses.replace(spec, obstacle=lambda x: np.asarray(x, dtype=float))
    grid, sched = make_grid(2, spec.T, [1.0])
    assert brute_force_tiny(lin, grid, sched) == pytest.approx(1.0, abs=1e-12)


def test_brute_force_cross_oracle_n2():
    spec = _p1()
    grid, sched = make_grid(2, spec.T)
    y_tree = brute_force_tiny(spec, grid, sched, quad_order=9)
    sol = exact_scheme_solve(spec, grid, sched,
                             build_space_grid(spec, J=801, quad_order=9))
    # the tree has no spatial interpolation; the lattice solve pays a small
    # pchip penalty at the obstacle kink
    assert y_tree == pytest.approx(sol.y0, abs=1e-4)


def test_brute_force_size_limits():
    spec = _p1()
    grid, sched = make_grid(5, spec.T)
    with pytest.raises(ValueError):
        brute_force_tiny(spec, grid, sched)


def test_grid_solution_deterministic():
    spec = _p1()
    grid, sched = make_grid(16, spec.T)
    space = build_space_grid(spec)
    a = exact_scheme_solve(spec, grid, sched, space)
    b = exact_scheme_solve(spec, grid, sched, space)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
