"""The invariant suite run by ``collbreak verify``.

Each check returns a :class:`Check`; the suite runs them in module order on
the bundled presets and reports the first failure. Everything is seeded, so
two runs print identical reports.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate as _quad

from . import config as C
from . import experiments as E
from .diagnostics import moment, oracle_constant_kernel_moment, predict_M0_envelope
from .discretization import (DensityState, breakage_rhs, collision_rates, deposited_moments,
                             weak_pairing)
from .model import (DaughterSpec, DomainError, KernelSpec, certify_assumptions,
                    daughter_eval, daughter_partial_moment, kernel_eval)

SEED = 20240611
KERNEL_CASES = ((-0.5, 0.5), (0.0, 0.0), (0.25, 0.25), (0.25, 0.75), (0.75, 0.75), (-1.0, 1.0))
NU_CASES = (0.0, -0.25, -0.5, -0.9)
PAIRING_PRESETS = ("mass-conservation-lambda15", "constant-kernel-oracle",
                   "finite-time-lambda05", "shattering-sweep")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


class Suite:
    """Lazily runs and caches the preset experiments used by several checks."""

    def __init__(self, fault: str | None = None):
        self.fault = fault
        self._runs = {}
        self._prepared = {}

    def config(self, name: str) -> C.ExperimentConfig:
        return C.load_preset(name)

    def prepared(self, name: str) -> E.Prepared:
        if name not in self._prepared:
            self._prepared[name] = E.prepare(self.config(name), self.fault)
        return self._prepared[name]

    def run(self, name: str, **overrides) -> E.Experiment:
        key = (name, tuple(sorted(overrides.items())))
        if key not in self._runs:
            cfg = self.config(name)
            for param, value in overrides.items():
                cfg = cfg.with_value(param.replace("__", "."), value)
            prep = self.prepared(name) if not overrides else E.prepare(cfg, self.fault)
            self._runs[key] = E.run(cfg, prepared=prep)
        return self._runs[key]

    def acceptance_runs(self):
        return [self.run(n) for n in ("mass-conservation-lambda15", "constant-kernel-oracle",
                                      "finite-time-lambda05", "shattering-sweep",
                                      "shattering-control")]


# ---------------------------------------------------------------------------
# model

def _sizes(rng, count, decades=8.0):
    return 10.0 ** rng.uniform(-decades / 2, decades / 2, count)


def check_kernel_symmetry(suite):
    rng = np.random.default_rng(SEED)
    x, y = _sizes(rng, 2000), _sizes(rng, 2000)
    bad = sum(int(np.any(kernel_eval(KernelSpec(a, b), x, y) != kernel_eval(KernelSpec(a, b), y, x)))
              for a, b in KERNEL_CASES)
    return bad == 0, f"{bad} asymmetric kernel cases"


def check_kernel_homogeneity(suite):
    rng = np.random.default_rng(SEED + 1)
    x, y = _sizes(rng, 500), _sizes(rng, 500)
    worst = 0.0
    for a, b in KERNEL_CASES:
        k = KernelSpec(a, b)
        base = kernel_eval(k, x, y)
        for c in (0.5, 2.0, 10.0):
            worst = max(worst, float(np.max(np.abs(kernel_eval(k, c * x, c * y) / (c ** k.lam * base) - 1))))
    return worst <= 1e-12, f"max relative error {worst:.3g}"


def check_daughter_mass(suite):
    x = np.logspace(-4, 4, 33)
    worst = max(float(np.max(np.abs(daughter_partial_moment(DaughterSpec(nu), 1.0, x, 0.0, x) / x - 1)))
                for nu in NU_CASES)
    return worst <= 1e-12, f"max relative error {worst:.3g}"


def check_fragment_count(suite):
    x = np.logspace(-4, 4, 33)
    worst = 0.0
    for nu in NU_CASES:
        d = DaughterSpec(nu)
        worst = max(worst, float(np.max(np.abs(
            daughter_partial_moment(d, 0.0, x, 0.0, x) / (d.beta0 / 2) - 1))))
    return worst <= 1e-12, f"max relative error {worst:.3g}"


def check_gamma(suite):
    x = np.logspace(-4, 4, 33)
    worst, gmin = 0.0, np.inf
    for nu in NU_CASES:
        d = DaughterSpec(nu)
        for lam in (0.0, 0.25, 0.5, 0.75, 0.95):
            g = d.gamma(lam)
            gmin = min(gmin, g)
            got = daughter_partial_moment(d, lam, x, 0.0, x)
            worst = max(worst, float(np.max(np.abs(got / (g * x ** lam) - 1))))
    return worst <= 1e-12 and gmin > 1.0, f"max relative error {worst:.3g}, min gamma {gmin:.4g}"


def quadrature_partial_moment(d: DaughterSpec, m, x, a, c):
    """Adaptive quadrature of ``z**m bbar(z, x)`` over ``(a, c)``."""
    s = m + d.nu
    if a == 0.0 and s < 0.0:
        # the z**s singularity at 0 goes into the algebraic weight
        val, _ = _quad.quad(lambda z: max(z, 1e-300) ** (m - s) * daughter_eval(d, max(z, 1e-300), x),
                            0.0, c, weight="alg", wvar=(s, 0.0), epsabs=0.0, epsrel=1e-12, limit=200)
    else:
        val, _ = _quad.quad(lambda z: max(z, 1e-300) ** m * daughter_eval(d, max(z, 1e-300), x),
                            a, c, epsabs=0.0, epsrel=1e-12, limit=200)
    return val


def random_moment_tuples(rng, count=100):
    out = []
    for _ in range(count):
        nu = float(rng.uniform(-0.9, 0.0))
        m = float(rng.uniform(-nu - 1.0 + 0.05, 3.0))
        x = float(10.0 ** rng.uniform(-3, 3))
        u = np.sort(rng.uniform(0.0, 1.0, 2))
        a = 0.0 if rng.random() < 0.25 else float(u[0] * x)
        out.append((nu, m, x, a, float(u[1] * x)))
    return out


def check_closed_form_vs_quadrature(suite):
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    for nu, m, x, a, c in random_moment_tuples(rng):
        d = DaughterSpec(nu)
        exact = float(daughter_partial_moment(d, m, x, a, c))
        worst = max(worst, abs(quadrature_partial_moment(d, m, x, a, c) / exact - 1))
    return worst <= 1e-8, f"max relative error {worst:.3g} over 100 tuples"


def check_certification(suite):
    rows = []
    ok = True
    for nu in (0.0, -0.25, -0.5):
        rep = certify_assumptions(KernelSpec(0.25, 0.25), DaughterSpec(nu), 1.5, 1e-6)
        ok &= rep.all_pass
        err = max(abs(n / a - 1) for _, n, a in rep.rows())
        rows.append(f"nu={nu:g}: {err:.2g}")
    return ok, "max relative error " + ", ".join(rows)


# ---------------------------------------------------------------------------
# discretization

def _random_states(prep: E.Prepared, rng, count=20):
    n = prep.grid.cell_count
    for _ in range(count):
        vals = rng.lognormal(0.0, 2.0, n) * (rng.random(n) < 0.7)
        yield DensityState(prep.grid, vals, 0.0)
    yield prep.initial


def check_conservation(suite):
    rng = np.random.default_rng(SEED + 3)
    worst = 0.0
    for name in PAIRING_PRESETS:
        prep = suite.prepared(name)
        mw, x = prep.grid.mass_weights, prep.grid.pivots
        for st in _random_states(prep, rng):
            dv, esc = breakage_rhs(prep.op, st)
            turnover = float(collision_rates(prep.op, st.numbers) @ x)
            if turnover > 0.0:
                worst = max(worst, abs(float(mw @ dv) + esc) / turnover)
    return worst <= 1e-12, f"max |mass rate + escape| / turnover {worst:.3g}"


def pairing_cases(prep: E.Prepared, rng):
    """``(label, phi at pivots, per-parent phi of all fragments, phi of escapes)``."""
    op = prep.op
    x = prep.grid.pivots
    cap = float(10.0 ** rng.uniform(np.log10(prep.grid.x_min), np.log10(prep.grid.x_max)))
    ind = np.where(x < cap, x, 0.0)
    # x**2 moment of the fragments falling below x_min
    x2_escape = daughter_partial_moment(op.dspec, 2.0, x, 0.0, np.full_like(x, prep.grid.x_min))
    cases = [("1", np.ones_like(x), op.escape_number), ("x", x, op.escape_mass),
             ("x^2", x ** 2, x2_escape), ("x*1(0,A)", ind,
                                          op.escape_mass if cap > prep.grid.x_min else 0 * x)]
    for label, phi, esc in cases:
        yield label, phi, deposited_moments(op, phi) + esc, esc


def check_weak_pairing(suite):
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    for name in PAIRING_PRESETS:
        prep = suite.prepared(name)
        for st in _random_states(prep, rng):
            c = collision_rates(prep.op, st.numbers)
            dn = (breakage_rhs(prep.op, st)[0]) * prep.grid.widths
            for _, phi, full, esc in pairing_cases(prep, rng):
                weak, scale = weak_pairing(prep.op, st, phi, full, with_scale=True)
                direct = float(phi @ dn) + float(c @ esc)
                if scale > 0.0:
                    worst = max(worst, abs(weak - direct) / scale)
    return worst <= 1e-12, f"max relative difference {worst:.3g}"


def check_positivity_structure(suite):
    rng = np.random.default_rng(SEED + 5)
    ok = True
    for name in PAIRING_PRESETS:
        prep = suite.prepared(name)
        op = prep.op
        ok &= bool(np.all(op.gain >= 0.0) and np.all(op.kernel >= 0.0)
                   and np.all(op.escape_number >= 0.0) and np.all(op.escape_mass >= 0.0))
        for st in _random_states(prep, rng, 5):
            dv, _ = breakage_rhs(op, st)
            ok &= bool(np.all(dv[st.values == 0.0] >= 0.0))
    return ok, "gain, kernel and escape tables non-negative; empty cells never decrease"


def check_number_production(suite):
    rng = np.random.default_rng(SEED + 6)
    worst = np.inf
    for name in PAIRING_PRESETS:
        prep = suite.prepared(name)
        one = np.ones(prep.grid.cell_count)
        for st in _random_states(prep, rng, 5):
            worst = min(worst, weak_pairing(prep.op, st, one, prep.op.gain @ one + prep.op.escape_number))
    return worst >= 0.0, f"min number production {worst:.3g}"


def check_grid_refinement(suite):
    coarse = suite.run("constant-kernel-oracle", grid__cells=128)
    fine = suite.run("constant-kernel-oracle")
    r1 = coarse.prepared.grid.ratio - 1.0
    k = int(np.argmin(np.abs(coarse.times - 0.3)))
    j = int(np.argmin(np.abs(fine.times - 0.3)))
    d0 = abs(coarse.moments(0.0)[k] / fine.moments(0.0)[j] - 1)
    d1 = abs(coarse.moments(1.0)[k] / fine.moments(1.0)[j] - 1)
    return max(d0, d1) <= r1, f"|dM0|={d0:.3g}, |dM1|={d1:.3g} against r-1={r1:.3g}"


# ---------------------------------------------------------------------------
# integrator

def check_ledger(suite):
    worst = max(ex.result.ledger_drift for ex in suite.acceptance_runs())
    return worst <= 1e-10, f"max relative drift {worst:.3g}"


def temporal_error(suite, rel_tol):
    """Max ``M_0`` error against the oracle started from the discrete initial number."""
    cfg = suite.config("integrator-order").with_value("control.rel_tol", rel_tol)
    ex = E.run(cfg, prepared=E.prepare(cfg, suite.fault))
    m00 = moment(ex.prepared.initial, 0.0)
    return max(abs(v / oracle_constant_kernel_moment(t, 0.0, 0.0, m00, m00) - 1.0)
               for t, v in zip(ex.times, ex.moments(0.0)))


def check_order(suite):
    tols = suite.config("integrator-order").sweep.values
    errs = [temporal_error(suite, t) for t in tols]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    return (all(r >= 2.0 for r in ratios),
            "errors " + ", ".join(f"{e:.3g}" for e in errs) + " for rel_tol "
            + ", ".join(f"{t:g}" for t in tols))


def check_determinism(suite):
    cfg = suite.config("finite-time-lambda05")
    a, b = (E.run(cfg, prepared=E.prepare(cfg, suite.fault)) for _ in range(2))
    same = (all(np.array_equal(s.values, t.values) for s, t in zip(a.result.snapshots, b.result.snapshots))
            and a.result.escaped_mass == b.result.escaped_mass and a.result.steps == b.result.steps)
    return same, "two identical runs are bitwise equal" if same else "runs differ"


def check_nonnegative(suite):
    worst = min(min(float(s.values.min()) for s in ex.result.snapshots) for ex in suite.acceptance_runs())
    return worst >= 0.0, f"min snapshot value {worst:.3g}"


# ---------------------------------------------------------------------------
# diagnostics

def check_mass_conservation(suite):
    worst = max(suite.run("mass-conservation-lambda15").result.diagnostics.mass_residual)
    return worst <= 1e-3, f"max mass residual {worst:.3g}"


def tail_violation(ex: E.Experiment) -> float:
    tails = ex.result.diagnostics.tail_matrix()
    # running max of earlier tails against the current one
    prior = np.maximum.accumulate(tails, axis=0)[:-1]
    later = tails[1:]
    scale = np.where(prior > 0.0, prior, 1.0)
    return float(np.max((later - prior) / scale)) if len(later) else 0.0


def check_tail_monotonicity(suite):
    worst = max(tail_violation(suite.run(n)) for n in ("mass-conservation-lambda15", "finite-time-lambda05"))
    return worst <= 1e-8, f"max relative tail increase {worst:.3g}"


def check_m2_monotonicity(suite):
    worst = max(float(np.max(ex.moments(2.0) / ex.moments(2.0)[0])) - 1.0 for ex in suite.acceptance_runs())
    return worst <= 1e-6, f"max M2(t)/M2(0) - 1 = {worst:.3g}"


def envelope_ratios(ex: E.Experiment, regime: str, t_max=np.inf):
    init = ex.prepared.initial
    rho, m0 = moment(init, 1.0), moment(init, 0.0)
    k, d = ex.config.kernel, ex.config.daughter
    out = []
    for t, v in zip(ex.times, ex.moments(0.0)):
        if t > t_max:
            continue
        try:
            out.append(v / predict_M0_envelope(t, regime, rho, d.beta0, k.lam, m0))
        except DomainError:
            continue
    return np.array(out)


def check_sub_envelope(suite):
    orc = envelope_ratios(suite.run("constant-kernel-oracle"), "sub", 0.45)
    fin = envelope_ratios(suite.run("finite-time-lambda05"), "sub")
    worst = max(orc.max(), fin.max())
    attained = orc.min()
    return (worst <= 1.02 and attained >= 0.98,
            f"max M0/envelope {worst:.6g}, constant kernel min {attained:.6g}")


def check_super_envelope(suite):
    worst = envelope_ratios(suite.run("mass-conservation-lambda15"), "super").max()
    return worst <= 1.02, f"max M0/envelope {worst:.6g}"


def check_lower_comparison(suite):
    entry = E.bound_checks(suite.run("finite-time-lambda05"))["M_lambda_lower"]
    fixed, pub = entry["rate2"], entry["published"]
    return fixed["passed"], (f"min M_lambda/bound {fixed['min_ratio']:.4g} with rate 2 "
                             f"(published rate 4: {pub['min_ratio']:.4g}, not gated)")


def check_oracle(suite):
    base = E.oracle_max_deviation(suite.run("constant-kernel-oracle"))
    fine = E.oracle_max_deviation(suite.run("constant-kernel-oracle", grid__cells=512))
    worst = max(base.values())
    converging = all(fine[k] < base[k] for k in base if base[k] > 1e-12)
    return (worst <= 0.02 and converging,
            "max deviation " + ", ".join(f"{k} {v:.2g}->{fine[k]:.2g}" for k, v in base.items()))


def check_number_positivity(suite):
    worst = np.inf
    for ex in suite.acceptance_runs():
        total = ex.moments(0.0) + np.array(ex.result.escaped_number_at_snapshots)
        worst = min(worst, float(np.min(np.diff(total))))
    return worst > 0.0, f"min increment of grid + escaped number {worst:.3g}"


# ---------------------------------------------------------------------------
# cli

def check_round_trip(suite):
    ok = True
    for path in sorted(C.PRESET_DIR.glob("*.yaml")):
        cfg = C.load(path)
        ok &= C.from_dict(cfg.to_dict()) == cfg
    return ok, "every preset re-parses from its echo"


def check_manifest_and_exit_codes(suite):
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        codes = {}
        for name in ("finite-time-lambda05", "constant-kernel-oracle"):
            codes[name] = main(["run", str(C.preset_path(name)), "--out", str(tmp / name), "--quiet"])
        bad = tmp / "bad.yaml"
        data = C.load_preset("finite-time-lambda05").to_dict()
        del data["grid"]
        bad.write_text(C.yaml.safe_dump(data))
        with contextlib.redirect_stderr(io.StringIO()):
            codes["missing-grid"] = main(["run", str(bad), "--out", str(tmp / "bad"), "--quiet"])
        mismatched = 0
        for name in ("finite-time-lambda05", "constant-kernel-oracle"):
            summary = json.loads((tmp / name / "summary.json").read_text())
            for rel, digest in summary["files"].items():
                mismatched += hashlib.sha256((tmp / name / rel).read_bytes()).hexdigest() != digest
    ok = (codes == {"finite-time-lambda05": 0, "constant-kernel-oracle": 2, "missing-grid": 1}
          and mismatched == 0)
    return ok, f"exit codes {codes}, {mismatched} manifest mismatches"


CHECKS = (
    ("model.symmetry", check_kernel_symmetry),
    ("model.homogeneity", check_kernel_homogeneity),
    ("model.daughter_mass", check_daughter_mass),
    ("model.fragment_count", check_fragment_count),
    ("model.gamma_equality", check_gamma),
    ("model.closed_form_vs_quadrature", check_closed_form_vs_quadrature),
    ("model.assumption_certification", check_certification),
    ("discretization.conservation", check_conservation),
    ("discretization.weak_pairing_identity", check_weak_pairing),
    ("discretization.positivity_structure", check_positivity_structure),
    ("discretization.number_production_sign", check_number_production),
    ("discretization.grid_refinement", check_grid_refinement),
    ("integrator.mass_ledger", check_ledger),
    ("integrator.order_of_accuracy", check_order),
    ("integrator.determinism", check_determinism),
    ("integrator.non_negativity", check_nonnegative),
    ("diagnostics.mass_conservation", check_mass_conservation),
    ("diagnostics.tail_monotonicity", check_tail_monotonicity),
    ("diagnostics.m2_monotonicity", check_m2_monotonicity),
    ("diagnostics.sub_envelope", check_sub_envelope),
    ("diagnostics.super_envelope", check_super_envelope),
    ("diagnostics.lower_comparison", check_lower_comparison),
    ("diagnostics.oracle_match", check_oracle),
    ("diagnostics.number_production_positivity", check_number_positivity),
    ("cli.config_round_trip", check_round_trip),
    ("cli.manifest_and_exit_codes", check_manifest_and_exit_codes),
)


def run_suite(fault: str | None = None, on_check=None) -> list[Check]:
    """Run every invariant; ``on_check`` is called with each result as it lands."""
    suite = Suite(fault)
    results = []
    for name, fun in CHECKS:
        try:
            passed, detail = fun(suite)
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        check = Check(name, bool(passed), detail)
        results.append(check)
        if on_check is not None:
            on_check(check)
    return results
