from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from collbreak.discretization import (ContractViolation, DensityState, Exponential, Monodisperse,
                                      PowerLaw, Tabulated, breakage_rhs, build_grid,
                                      collision_rates, deposited_moments, escape_number_rate,
                                      exact_daughter_capped_mass, exact_daughter_moments,
                                      grid_from_edges, precompute_operator, project_initial,
                                      read_snapshot, weak_pairing, write_snapshot)
from collbreak.model import ConfigurationError, DaughterSpec, KernelSpec, TruncationWindow

from .conftest import make_operator


def random_state(op, rng, zero_fraction=0.3):
    n = op.grid.cell_count
    vals = rng.lognormal(0.0, 2.0, n) * (rng.random(n) > zero_fraction)
    return DensityState(op.grid, vals, 0.0)


# ---------------------------------------------------------------------------
# grid

def test_grid_is_geometric():
    g = build_grid(1e-3, 1e3, 60)
    assert g.edges[0] == 1e-3 and g.edges[-1] == 1e3
    assert_allclose(g.edges[1:] / g.edges[:-1], 10 ** 0.1, rtol=1e-12)
    assert g.ratio == pytest.approx(10 ** 0.1)


def test_single_cell_grid():
    g = build_grid(1.0, 2.0, 1)
    assert g.cell_count == 1
    assert g.pivots[0] == 1.5
    assert g.mass_weights[0] == pytest.approx(1.5)


@pytest.mark.parametrize("args", [(0.0, 1.0, 4), (2.0, 1.0, 4), (1.0, 2.0, 0), (1.0, 2.0, 2.5),
                                  (1.0, math.inf, 3)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(ConfigurationError):
        build_grid(*args)


def test_grid_from_edges_rejects_unsorted():
    with pytest.raises(ConfigurationError):
        grid_from_edges([1.0, 3.0, 2.0])


@pytest.mark.parametrize("m", [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
def test_cell_power_integral_matches_quadrature(m):
    g = build_grid(1e-2, 1e2, 12)
    ref = [integrate.quad(lambda x: x ** m, a, b, epsrel=1e-13)[0]
           for a, b in zip(g.edges[:-1], g.edges[1:])]
    assert_allclose(g.cell_power_integral(m), ref, rtol=1e-12)


def test_number_times_pivot_is_cell_mass():
    g = build_grid(1e-4, 1e3, 50)
    st = DensityState(g, np.linspace(1, 2, 50))
    assert_allclose(st.numbers * g.pivots, st.masses, rtol=1e-15)


def test_snap_and_locate():
    g = build_grid(1e-2, 10.0, 3 * 64)
    k, edge = g.snap(0.1)
    assert edge == pytest.approx(0.1, rel=1e-12)
    assert g.locate(g.x_max) == g.cell_count - 1
    assert g.locate(g.x_min) == 0
    with pytest.raises(ConfigurationError):
        g.locate(100.0)


def test_state_length_checked():
    with pytest.raises(ContractViolation):
        DensityState(build_grid(1, 2, 3), np.ones(2))


# ---------------------------------------------------------------------------
# projection of initial data

def test_exponential_projection_is_mass_exact():
    g = build_grid(1e-12, 1e3, 256)
    st, loss = project_initial(g, Exponential())
    ref = [integrate.quad(lambda x: x * math.exp(-x), a, b, epsrel=1e-12)[0]
           for a, b in zip(g.edges[:-1], g.edges[1:])]
    big = np.array(ref) > 1e-100
    assert_allclose(st.masses[big], np.array(ref)[big], rtol=1e-9)
    assert st.masses.sum() + loss == pytest.approx(1.0, rel=1e-14)


def test_truncated_exponential_and_exact_moments():
    f = Exponential(lower=0.1, upper=10.0)
    g = build_grid(1e-2, 10.0, 192)
    st, loss = project_initial(g, f)
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert st.masses[: g.snap(0.1)[0]].sum() == 0.0
    ref = integrate.quad(lambda x: x ** 0.5 * math.exp(-x), 0.1, 10.0)[0]
    assert f.moment(0.5) == pytest.approx(ref, rel=1e-12)
    assert Exponential().moment(0.5) == pytest.approx(math.gamma(1.5))


def test_power_law_projection():
    f = PowerLaw(2.0, -1.5, 0.5, 4.0)
    g = build_grid(0.1, 10.0, 20)
    st, loss = project_initial(g, f)
    assert st.masses.sum() + loss == pytest.approx(f.total_mass(), rel=1e-12)
    assert f.moment(1.0) == pytest.approx(f.total_mass())
    with pytest.raises(ConfigurationError):
        PowerLaw(1.0, -3.0, 0.0, 1.0)


def test_tabulated_projection():
    f = Tabulated((1.0, 2.0, 3.0), (0.0, 1.0, 0.0))
    g = build_grid(0.5, 4.0, 7)
    st, _ = project_initial(g, f)
    ref = integrate.quad(lambda x: x * np.interp(x, [1, 2, 3], [0, 1, 0]), 1, 3, points=[2])[0]
    assert st.masses.sum() == pytest.approx(ref, rel=1e-12)


def test_monodisperse_projection():
    g = build_grid(1e-12, 2.0, 256)
    st, loss = project_initial(g, Monodisperse(1.0, 1.0))
    assert loss == 0.0
    assert np.count_nonzero(st.values) == 1
    assert st.masses.sum() == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        project_initial(g, Monodisperse(1.0, 5.0))


# ---------------------------------------------------------------------------
# operator tables

@given(st.floats(min_value=-0.95, max_value=0.0), st.integers(min_value=1, max_value=80),
       st.floats(min_value=1e-8, max_value=1e-1))
def test_gain_tables_reproduce_number_and_mass(nu, cells, x_min):
    op = make_operator(nu=nu, x_min=x_min, x_max=10.0, cells=cells)
    x = op.grid.pivots
    d = DaughterSpec(nu)
    assert np.all(op.gain >= 0.0)
    # every parent keeps its mass: on the grid plus through the escape channel
    assert_allclose(op.gain @ x + op.escape_mass, x, rtol=1e-12)
    assert_allclose(op.gain.sum(axis=1) + op.escape_number, d.beta0 / 2, rtol=1e-12)


def test_fine_grid_number_on_grid_is_exact():
    for nu in (0.0, -0.5, -0.9):
        op = make_operator(nu=nu, x_min=1e-6, x_max=10.0, cells=120)
        assert_allclose(op.gain.sum(axis=1), exact_daughter_moments(op, 0.0), rtol=1e-12)


def test_fragments_never_land_above_parent():
    op = make_operator(cells=30)
    assert np.all(np.triu(op.gain, k=1) == 0.0)


def test_window_truncates_kernel_at_pivots():
    grid = build_grid(1e-2, 1e2, 40)
    op = precompute_operator(grid, KernelSpec(0.0, 0.0), TruncationWindow.symmetric(10.0),
                             DaughterSpec(0.0))
    inside = (grid.pivots > 0.1) & (grid.pivots < 10.0)
    assert np.all(op.kernel[~inside] == 0.0)
    assert np.all(op.kernel[np.ix_(inside, inside)] == 2.0)


def test_window_outside_grid_warns_and_none_does_not():
    grid = build_grid(1e-1, 1e1, 10)
    with pytest.warns(UserWarning):
        precompute_operator(grid, KernelSpec(0, 0), TruncationWindow.symmetric(100.0), DaughterSpec(0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        precompute_operator(grid, KernelSpec(0, 0), None, DaughterSpec(0))


# ---------------------------------------------------------------------------
# right-hand side

@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.sampled_from([(-0.5, 0.5), (0.0, 0.0),
                                                                          (0.75, 0.75)]),
       st.sampled_from([0.0, -0.5]))
def test_mass_conservation_of_rhs(seed, ab, nu):
    op = make_operator(*ab, nu=nu, cells=50)
    state = random_state(op, np.random.default_rng(seed))
    dv, esc = breakage_rhs(op, state)
    turnover = collision_rates(op, state.numbers) @ op.grid.pivots
    assert abs(op.grid.mass_weights @ dv + esc) <= 1e-12 * turnover


def _pairing_phis(op, cap):
    x = op.grid.pivots
    x2_escape = exact_daughter_moments(op, 2.0, lower=0.0) - exact_daughter_moments(op, 2.0)
    capped_escape = exact_daughter_capped_mass(op, cap, lower=0.0) - exact_daughter_capped_mass(op, cap)
    return [(np.ones_like(x), op.escape_number), (x, op.escape_mass), (x ** 2, x2_escape),
            (np.where(x < cap, x, 0.0), np.minimum(capped_escape, op.escape_mass))]


@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.floats(min_value=1e-3, max_value=10.0))
def test_weak_pairing_matches_rhs_pairing(seed, cap):
    op = make_operator(-0.5, 0.5, nu=-0.25, cells=50)
    state = random_state(op, np.random.default_rng(seed))
    c = collision_rates(op, state.numbers)
    dn = breakage_rhs(op, state)[0] * op.grid.widths
    for phi, esc in _pairing_phis(op, cap):
        weak, scale = weak_pairing(op, state, phi, deposited_moments(op, phi) + esc, with_scale=True)
        assert abs(weak - (phi @ dn + c @ esc)) <= 1e-12 * scale


def test_weak_pairing_half_weights_self_collisions():
    grid = build_grid(1.0, 2.0, 1)
    op = precompute_operator(grid, KernelSpec(0, 0), None, DaughterSpec(0))
    state = DensityState(grid, np.array([3.0]))
    # one cell: n^2 K / 2 collisions, each turning one particle into two
    assert weak_pairing(op, state, [1.0], [2.0]) == pytest.approx(0.5 * 2 * 9.0 * 2.0)


def test_weak_pairing_contract():
    op = make_operator(cells=10)
    state = DensityState(op.grid, np.ones(10))
    with pytest.raises(ContractViolation):
        weak_pairing(op, state, np.ones(10), None)
    with pytest.raises(ContractViolation):
        weak_pairing(op, state, np.ones(9), np.ones(9))
    with pytest.raises(ContractViolation):
        breakage_rhs(op, DensityState(build_grid(1, 2, 10), np.ones(10)))


@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_empty_cells_never_decrease(seed):
    op = make_operator(0.25, 0.75, cells=40)
    state = random_state(op, np.random.default_rng(seed), zero_fraction=0.5)
    dv, _ = breakage_rhs(op, state)
    assert np.all(dv[state.values == 0.0] >= 0.0)


@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_number_production_is_nonnegative(seed):
    op = make_operator(-0.5, 0.5, nu=-0.5, cells=40)
    state = random_state(op, np.random.default_rng(seed))
    one = np.ones(op.grid.cell_count)
    assert weak_pairing(op, state, one, op.gain @ one + op.escape_number) >= 0.0
    assert escape_number_rate(op, state) >= 0.0


def test_zero_state_is_an_equilibrium(small_op):
    dv, esc = breakage_rhs(small_op, DensityState(small_op.grid, np.zeros(40)))
    assert np.all(dv == 0.0) and esc == 0.0


def test_snapshot_round_trip(tmp_path, small_op, rng):
    state = random_state(small_op, rng).copy(time=0.125)
    path = tmp_path / "snap.txt"
    write_snapshot(path, state)
    assert path.read_text().startswith("# time=0.125\n# edge_left edge_right pivot value number mass")
    back = read_snapshot(path)
    assert back.time == 0.125
    assert np.array_equal(back.values, state.values)
    assert_allclose(back.grid.edges, state.grid.edges, rtol=0, atol=0)
