"""The eleven acceptance criteria at their stated tolerances.

Each test records PASS/FAIL with a short detail into ``ACCEPTANCE``; the
session summary prints one line per criterion.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from collbreak import config as C
from collbreak import experiments as E
from collbreak.cli import main
from collbreak.diagnostics import moment, predict_M0_envelope, predict_M_lambda_lower
from collbreak.discretization import weak_pairing
from collbreak.model import DaughterSpec, KernelSpec, certify_assumptions
from collbreak.verification import _random_states, pairing_cases

from .conftest import ACCEPTANCE

RUNTIME_BUDGET = 60.0
_RUNS = {}


def run(name, **overrides):
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        cfg = C.load_preset(name)
        for param, value in overrides.items():
            cfg = cfg.with_value(param, value)
        _RUNS[key] = E.run(cfg)
    return _RUNS[key]


def sweep(name):
    cfg = C.load_preset(name)
    return [run(name, **{cfg.sweep.parameter: v}) for v in cfg.sweep.values]


def record(n, passed, detail):
    ACCEPTANCE[n] = (bool(passed), detail)
    assert passed, detail


def test_c01_mass_conservation():
    ex = run("mass-conservation-lambda15")
    res = ex.result
    worst = max(res.diagnostics.mass_residual)
    ok = (res.status == "completed" and math.isclose(ex.times[-1], 5.0)
          and worst <= 1e-3 and ex.wall_time <= RUNTIME_BUDGET)
    record(1, ok, f"status {res.status}, max mass residual {worst:.2e} (<= 1e-3), "
                  f"{ex.wall_time:.2f} s")


def _oracle_error(ex, t_max=0.4):
    errs = []
    for t, m0, mh in zip(ex.times, ex.moments(0.0), ex.moments(0.5)):
        if t <= t_max + 1e-12:
            errs.append(max(abs(m0 * (1 - 2 * t) - 1),
                            abs(mh / (math.gamma(1.5) * (1 - 2 * t) ** (-1 / 3)) - 1)))
    return max(errs)


def test_c02_constant_kernel_oracle():
    e256 = _oracle_error(run("constant-kernel-oracle"))
    e512 = _oracle_error(run("constant-kernel-oracle", **{"grid.cells": 512}))
    ok = e256 <= 0.02 and e512 <= 0.02 and e512 <= 0.5 * e256
    record(2, ok, f"max error on [0, 0.4]: N=256 {e256:.2e}, N=512 {e512:.2e} "
                  f"(ratio {e256 / e512:.2f}, need >= 2)")


def test_c03_sub_envelope_and_T0():
    ex = run("constant-kernel-oracle")
    init = ex.prepared.initial
    rho, m0 = moment(init, 1.0), moment(init, 0.0)
    k, d = ex.config.kernel, ex.config.daughter
    ratios = [v / predict_M0_envelope(t, "sub", rho, d.beta0, k.lam, m0)
              for t, v in zip(ex.times, ex.moments(0.0)) if t <= 0.45 + 1e-12]
    # the blow-up flag fires when M0 crosses factor * M0(0); pick the factor so that
    # the threshold is exactly M0 = 1e3 for the projected data
    hit = run("constant-kernel-oracle", **{"events.m0_blowup_factor": 1e3 / m0})
    t_hit = hit.result.event_times.get("blowup", math.nan)
    ok = max(ratios) <= 1.02 and 0.45 <= t_hit <= 0.55
    record(3, ok, f"max M0/envelope {max(ratios):.4f} (<= 1.02) over {len(ratios)} outputs, "
                  f"M0 = 1e3 at t = {t_hit:.4f} (in [0.45, 0.55])")


def _lower_ratio(ex, rate):
    g = ex.config.daughter.gamma(ex.config.kernel.lam)
    ml = ex.moments(ex.config.kernel.lam)
    out = []
    for t, v in zip(ex.times, ml):
        if t < 1.0 / (rate * (g - 1.0) * ml[0]):
            out.append(v / predict_M_lambda_lower(t, g, ml[0], rate))
    return min(out), len(out)


def test_c04_finite_time_lower_comparison():
    ex = run("finite-time-lambda05")
    assert ex.config.daughter.gamma(0.5) == pytest.approx(4.0 / 3.0)
    worst, n = _lower_ratio(ex, 4.0)
    worst2, n2 = _lower_ratio(ex, 2.0)
    record(4, worst >= 0.95,
           f"published factor 4: min ratio {worst:.4f} over {n} outputs (need >= 0.95); "
           f"factor 2 gives {worst2:.4f} over {n2}")


def test_lower_comparison_with_factor_two_holds():
    worst, n = _lower_ratio(run("finite-time-lambda05"), 2.0)
    assert n >= 10 and worst >= 0.95


def test_c05_tail_monotonicity():
    worst = 0.0
    for name in ("mass-conservation-lambda15", "finite-time-lambda05"):
        ex = run(name)
        tails = ex.result.diagnostics.tail_matrix()
        assert tails.shape[1] == 16
        # probes are log-spaced, then snapped to cell edges
        probes = np.array(ex.result.diagnostics.tail_probe_sizes)
        assert np.allclose(np.diff(np.log(probes)), np.diff(np.log(probes))[0], rtol=0.1)
        inc = np.diff(tails, axis=0) / np.maximum(tails[:-1], 1e-300)
        worst = max(worst, float(np.max(inc)))
    record(5, worst <= 1e-8, f"max relative tail increase {worst:.2e} (<= 1e-8) on 2 runs")


def test_c06_m2_monotonicity():
    m2 = run("mass-conservation-lambda15").moments(2.0)
    worst = float(np.max(m2 / m2[0]))
    record(6, worst <= 1 + 1e-6, f"max M2(t)/M2(0) = {worst:.9f} (<= 1 + 1e-6)")


def test_c07_super_envelope():
    ex = run("mass-conservation-lambda15")
    rho = moment(ex.prepared.initial, 1.0)
    assert rho == pytest.approx(1.0, rel=1e-3)
    ratio = max(v / (math.exp(2 * t) * 2.0) for t, v in zip(ex.times, ex.moments(0.0)))
    record(7, ratio <= 1.02, f"max M0 / (2 e^2t) = {ratio:.4f} (<= 1.02)")


def test_c08_weak_form_identity():
    rng = np.random.default_rng(8)
    prep = E.prepare(C.load_preset("mass-conservation-lambda15"))
    from collbreak.discretization import breakage_rhs, collision_rates

    start = time.perf_counter()
    worst, count = 0.0, 0
    for st in list(_random_states(prep, rng))[:20]:
        c = collision_rates(prep.op, st.numbers)
        dn = breakage_rhs(prep.op, st)[0] * prep.grid.widths
        for _, phi, full, esc in pairing_cases(prep, rng):
            weak, scale = weak_pairing(prep.op, st, phi, full, with_scale=True)
            direct = float(phi @ dn) + float(c @ esc)
            worst = max(worst, abs(weak - direct) / scale)
            count += 1
    elapsed = time.perf_counter() - start
    record(8, count == 80 and worst <= 1e-12 and elapsed < 1.0,
           f"max relative difference {worst:.2e} over {count} pairings, {elapsed:.3f} s")


def test_c09_assumption_certification():
    worst = 0.0
    for nu in (0.0, -0.25, -0.5):
        rep = certify_assumptions(KernelSpec(0.25, 0.25), DaughterSpec(nu), 1.5, 1e-6)
        for _, num, ana in rep.rows():
            worst = max(worst, abs(num / ana - 1.0))
    record(9, worst <= 1e-6, f"max relative mismatch {worst:.2e} for nu in (0, -0.25, -0.5)")


def _shatter_parts():
    sw, ctl = sweep("shattering-sweep"), sweep("shattering-control")
    frac = [E.small_fraction(ex, 1.0) for ex in sw]
    onset = [ex.result.event_times.get("shatter", math.nan) for ex in sw]
    control = [E.small_fraction(ex, 1.0) for ex in ctl]
    table = E.bound_checks(sw[0])["T_shatter_upper"]["table"]
    return frac, onset, control, table


def test_c10_shattering_trend():
    frac, onset, control, table = _shatter_parts()
    vals = [v for _, v in sorted(table)]
    parts = {"fraction increasing": E.trend_verdict(frac) == "increasing",
             "onset decreasing": E.trend_verdict(onset) == "decreasing",
             "control spread <= 1e-3": max(control) - min(control) <= 1e-3,
             "table -> 0 at m = -1": vals[0] == 0.0 and bool(np.all(np.diff(vals) > 0))}
    failed = [k for k, v in parts.items() if not v]
    record(10, not failed,
           f"fractions {', '.join(f'{f:.10g}' for f in frac)}; onsets "
           f"{', '.join(f'{t:.4f}' for t in onset)}; control spread "
           f"{max(control) - min(control):.2e}; failed: {', '.join(failed) or 'none'}")


def test_shattering_sub_parts_that_hold():
    frac, onset, control, table = _shatter_parts()
    assert E.trend_verdict(onset) == "decreasing"
    assert max(control) - min(control) <= 1e-3
    assert [v for _, v in sorted(table)][0] == 0.0
    # the fraction is non-decreasing; it saturates at 1 for the two finer grids
    assert np.all(np.diff(frac) >= -1e-12) and frac[0] > 0.999


def test_c11_determinism_and_ledger(tmp_path):
    codes = [main(["verify", "--quiet", "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = (tmp_path / "a" / "verify.txt").read_bytes() == (tmp_path / "b" / "verify.txt").read_bytes()
    runs = [run("mass-conservation-lambda15"), run("constant-kernel-oracle"),
            run("constant-kernel-oracle", **{"grid.cells": 512}), run("finite-time-lambda05")]
    runs += sweep("shattering-sweep") + sweep("shattering-control")
    drift = max(ex.result.ledger_drift for ex in runs)
    slow = max(ex.wall_time for ex in runs)
    record(11, codes == [0, 0] and same and drift <= 1e-10,
           f"verify exit codes {codes}, identical output {same}, max ledger drift {drift:.2e} "
           f"over {len(runs)} runs, slowest run {slow:.2f} s")
