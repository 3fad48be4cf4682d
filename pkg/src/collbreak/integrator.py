"""Adaptive explicit time stepping of the sectional system with event detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import MomentSeries, mass_below, moment
from .discretization import DensityState, PrecomputedOperator, collision_rates
from .model import ConfigurationError

logger = logging.getLogger(__name__)

METHOD = "dormand-prince 5(4), steps land on output times"

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                    187 / 2100, 1 / 40])


@dataclass(frozen=True)
class StepControl:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-12
    dt_init: float = 1e-4
    dt_min: float = 1e-14
    safety: float = 0.9
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not self.rel_tol > 0.0:
            raise ConfigurationError("rel_tol must be positive")
        if not (self.abs_tol > 0.0 and self.dt_min > 0.0 and self.dt_init > 0.0):
            raise ConfigurationError("abs_tol, dt_init and dt_min must be positive")
        if not 0.0 < self.safety < 1.0:
            raise ConfigurationError("safety must lie in (0, 1)")


@dataclass(frozen=True)
class EventConfig:
    m0_blowup_factor: float = 1e3
    shatter_fraction: float = 0.1
    shatter_size: float | None = None  # defaults to 100 * x_min
    stop_on_blowup: bool = True


@dataclass
class EventFlags:
    blowup: bool = False
    shatter: bool = False
    shatter_fraction: float = 0.0
    m0_ratio: float = 0.0


def detect_events(state: DensityState, escaped_mass: float, config: EventConfig,
                  m0_initial: float, m1_initial: float) -> EventFlags:
    m0 = moment(state, 0.0)
    eps = config.shatter_size if config.shatter_size is not None else 100.0 * state.grid.x_min
    eps = min(max(eps, state.grid.x_min), state.grid.x_max)
    small = mass_below(state, eps) + escaped_mass
    flags = EventFlags()
    if m0_initial > 0.0:
        flags.m0_ratio = m0 / m0_initial
        flags.blowup = m0 >= config.m0_blowup_factor * m0_initial
    if m1_initial > 0.0:
        flags.shatter_fraction = small / m1_initial
        flags.shatter = small >= config.shatter_fraction * m1_initial
    return flags


@dataclass
class RunResult:
    status: str
    snapshots: list
    escaped_mass: float
    diagnostics: MomentSeries
    escaped_at_snapshots: list = field(default_factory=list)
    escaped_number: float = 0.0
    escaped_number_at_snapshots: list = field(default_factory=list)
    clipped_mass: float = 0.0
    ledger_drift: float = 0.0
    event_times: dict = field(default_factory=dict)
    final: DensityState | None = None
    steps: int = 0
    rejected: int = 0
    method: str = METHOD


def _crossing(t0, v0, t1, v1, level):
    if v1 == v0:
        return t1
    return t0 + (level - v0) * (t1 - t0) / (v1 - v0)


def integrate(op: PrecomputedOperator, initial: DensityState, control: StepControl,
              t_end: float, output_times=None, events: EventConfig | None = None,
              orders=(0.0, 1.0), tail_probes=()) -> RunResult:
    """Advance ``initial`` to ``t_end``.

    Steps are shortened to land on every output time. Accepted steps with a
    negative cell value below ``-abs_tol`` are rejected; smaller negatives are
    clipped to zero and the mass added by clipping is logged so that
    ``grid mass + escaped + clipped`` stays constant.
    """
    if not op.grid.same_as(initial.grid):
        raise ConfigurationError("initial state is not on the operator grid")
    t = float(initial.time)
    if not t_end > t:
        raise ConfigurationError("t_end must exceed the initial time")
    events = events or EventConfig()
    outs = sorted(set(float(s) for s in (output_times if output_times is not None else [t_end])))
    if outs and (outs[0] < t or outs[-1] > t_end):
        raise ConfigurationError("output times must lie in [t0, t_end]")

    grid = initial.grid
    mw = grid.mass_weights
    widths = grid.widths
    series = MomentSeries(orders=tuple(orders), tail_probe_sizes=tuple(tail_probes))
    y = initial.values.astype(float).copy()
    escaped = 0.0
    escaped_num = 0.0
    clipped = 0.0
    m0_init = float(y @ widths)
    m1_init = float(y @ mw)
    ledger0 = m1_init
    drift = 0.0
    snapshots, esc_snap, esc_num_snap = [], [], []
    event_times = {}
    status = "completed"

    def emit(values, time):
        st = DensityState(grid, values.copy(), time)
        snapshots.append(st)
        esc_snap.append(escaped)
        esc_num_snap.append(escaped_num)
        series.record(st, escaped, clipped)

    pending = list(outs)
    while pending and pending[0] <= t:
        emit(y, pending.pop(0))

    def f(v):
        # escaped mass and number rates ride along with the cell values
        c = collision_rates(op, v * widths)
        return (op.gain.T @ c - c) / widths, (float(c @ op.escape_mass),
                                             float(c @ op.escape_number))

    k1, e1 = f(y)
    dt = control.dt_init
    steps = rejected = 0
    flags_prev = detect_events(DensityState(grid, y, t), escaped, events, m0_init, m1_init)
    m0_prev, small_prev = float(y @ widths), flags_prev.shatter_fraction
    stop = False
    while t < t_end and not stop:
        if steps >= control.max_steps:
            status = "max_steps_hit"
            break
        target = pending[0] if pending else t_end
        h = min(dt, target - t)
        landing = h == target - t
        ks, es = [k1], [e1]
        for s in range(1, 7):
            ys = y + h * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
            k, er = f(ys)
            ks.append(k)
            es.append(er)
        y_new = y + h * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
        esc_new = escaped + h * sum(b * er[0] for b, er in zip(_B, es))
        esc_num_new = escaped_num + h * sum(b * er[1] for b, er in zip(_B, es))
        err_vec = h * sum(c * k for c, k in zip(_E, ks) if c != 0.0)
        scale = control.abs_tol + control.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale)) if len(y) else 0.0
        negative = y_new.min() < -control.abs_tol if len(y) else False
        if not np.isfinite(err) or err > 1.0 or negative:
            rejected += 1
            if negative and np.isfinite(err) and err <= 1.0:
                dt = 0.5 * h
            else:
                dt = h * max(0.2, control.safety * (err if np.isfinite(err) else 1e10) ** -0.2)
            if dt < control.dt_min:
                status = "step_floor_hit"
                break
            continue
        # accepted
        neg = y_new < 0.0
        if neg.any():
            clipped += float(y_new[neg] @ mw[neg])
            y_new = np.where(neg, 0.0, y_new)
        t = target if landing else t + h
        y = y_new
        escaped = esc_new
        escaped_num = esc_num_new
        steps += 1
        drift = max(drift, abs(float(y @ mw) + escaped + clipped - ledger0) / ledger0
                    if ledger0 > 0 else 0.0)
        k1, e1 = ks[-1], es[-1]
        if neg.any():
            k1, e1 = f(y)
        grow = 5.0 if err == 0.0 else min(5.0, max(0.2, control.safety * err ** -0.2))
        if not landing or h >= dt:
            dt = h * grow
        st = DensityState(grid, y, t)
        flags = detect_events(st, escaped, events, m0_init, m1_init)
        m0_now = float(y @ widths)
        if flags.shatter and "shatter" not in event_times:
            event_times["shatter"] = _crossing(t - h, small_prev, t, flags.shatter_fraction,
                                               events.shatter_fraction)
        if flags.blowup and "blowup" not in event_times:
            event_times["blowup"] = _crossing(t - h, m0_prev, t, m0_now,
                                              events.m0_blowup_factor * m0_init)
            status = "blowup_detected"
            if events.stop_on_blowup:
                stop = True
        m0_prev, small_prev = m0_now, flags.shatter_fraction
        while pending and pending[0] <= t:
            emit(y, pending.pop(0))

    final = DensityState(grid, y.copy(), t)
    return RunResult(status, snapshots, escaped, series, esc_snap, escaped_num, esc_num_snap,
                     clipped, drift, event_times, final, steps, rejected)
