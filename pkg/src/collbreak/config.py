"""Experiment configuration files (YAML) and their validation."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .discretization import (Exponential, Monodisperse, PowerLaw, SizeGrid, Tabulated,
                             build_grid)
from .integrator import EventConfig, StepControl
from .model import ConfigurationError, DaughterSpec, KernelSpec, TruncationWindow

BOUND_KINDS = ("T0", "T_exist_upper", "M0_envelope_super", "M0_envelope_sub",
               "M_lambda_lower", "T_shatter_upper")
SWEEP_PARAMETERS = ("window.lower", "grid.x_min", "grid.cells", "control.rel_tol")
INITIAL_FAMILIES = ("exponential", "monodisperse", "power_law", "tabulated")


class ConfigError(ConfigurationError):
    """Invalid experiment file; ``str()`` carries ``path:line: message``."""


@dataclass
class GridConfig:
    x_min: float
    x_max: float
    cells: int | None = None
    cells_per_decade: float | None = None

    def cell_count(self) -> int:
        if self.cells is not None:
            return int(self.cells)
        return max(1, int(round(self.cells_per_decade * math.log10(self.x_max / self.x_min))))

    def build(self) -> SizeGrid:
        return build_grid(self.x_min, self.x_max, self.cell_count())


@dataclass
class WindowConfig:
    """Kernel window; ``None`` cutoffs mean "no cutoff on that side"."""

    lower: float | None = None
    upper: float | None = None

    def build(self) -> TruncationWindow | None:
        if self.lower is None and self.upper is None:
            return None
        return TruncationWindow(0.0 if self.lower is None else self.lower,
                                math.inf if self.upper is None else self.upper)


@dataclass
class InitialConfig:
    family: str
    parameters: dict = field(default_factory=dict)

    def build(self):
        p = self.parameters
        if self.family == "exponential":
            return Exponential(float(p.get("amplitude", 1.0)), float(p.get("rate", 1.0)),
                               float(p.get("lower", 0.0)), float(p.get("upper", math.inf)))
        if self.family == "monodisperse":
            return Monodisperse(float(p["mass"]), float(p["location"]))
        if self.family == "power_law":
            return PowerLaw(float(p["amplitude"]), float(p["exponent"]), float(p["lower"]),
                            float(p["upper"]))
        if self.family == "tabulated":
            return Tabulated(tuple(map(float, p["sizes"])), tuple(map(float, p["densities"])))
        raise ConfigurationError(f"unknown initial family {self.family!r}")


@dataclass
class TimeConfig:
    t_end: float
    output_times: list | None = None
    output_count: int | None = None

    def outputs(self) -> list[float]:
        if self.output_times is not None:
            return [float(t) for t in self.output_times]
        count = self.output_count or 11
        return [float(t) for t in np.linspace(0.0, self.t_end, count)]


@dataclass
class DiagnosticsConfig:
    moment_orders: list = field(default_factory=lambda: [0.0, 1.0])
    tail_probes: list | int = 16
    bounds: list = field(default_factory=list)
    oracle: bool = False
    shatter_m_grid: list | None = None
    m0_order: float = 2.0
    p: float = 1.5
    quadrature_tol: float = 1e-6

    def probe_sizes(self, grid: SizeGrid) -> list[float]:
        if isinstance(self.tail_probes, int):
            return [float(x) for x in np.logspace(math.log10(grid.x_min), math.log10(grid.x_max),
                                                  self.tail_probes)]
        return [float(x) for x in self.tail_probes]


@dataclass
class SweepConfig:
    parameter: str
    values: list
    probe_time: float | None = None


@dataclass
class ExperimentConfig:
    name: str
    kernel: KernelSpec
    daughter: DaughterSpec
    window: WindowConfig
    grid: GridConfig
    initial: InitialConfig
    time: TimeConfig
    control: StepControl = field(default_factory=StepControl)
    events: EventConfig = field(default_factory=EventConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    sweep: SweepConfig | None = None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "kernel": {"alpha": self.kernel.alpha, "beta": self.kernel.beta},
            "daughter": {"nu": self.daughter.nu},
            "window": {k: v for k, v in asdict(self.window).items() if v is not None},
            "grid": {k: v for k, v in asdict(self.grid).items() if v is not None},
            "initial": {"family": self.initial.family, **copy.deepcopy(self.initial.parameters)},
            "time": {k: v for k, v in asdict(self.time).items() if v is not None},
            "control": asdict(self.control),
            "events": {k: v for k, v in asdict(self.events).items() if v is not None},
            "diagnostics": {k: v for k, v in asdict(self.diagnostics).items() if v is not None},
        }
        if self.sweep is not None:
            out["sweep"] = {k: v for k, v in asdict(self.sweep).items() if v is not None}
        return out

    def with_value(self, parameter: str, value) -> "ExperimentConfig":
        """Copy with one sweepable parameter replaced."""
        data = self.to_dict()
        data.pop("sweep", None)
        section, key = parameter.split(".")
        data.setdefault(section, {})[key] = value
        if parameter == "grid.cells":
            data["grid"].pop("cells_per_decade", None)
        return from_dict(data)


# ---------------------------------------------------------------------------
# parsing

_SECTIONS = {
    "name": None,
    "kernel": {"alpha", "beta"},
    "daughter": {"nu"},
    "window": {"n", "lower", "upper"},
    "grid": {"x_min", "x_max", "cells", "cells_per_decade"},
    "initial": None,
    "time": {"t_end", "output_times", "output_count"},
    "control": {"rel_tol", "abs_tol", "dt_init", "dt_min", "safety", "max_steps"},
    "events": {"m0_blowup_factor", "shatter_fraction", "shatter_size", "stop_on_blowup"},
    "diagnostics": {"moment_orders", "tail_probes", "bounds", "oracle", "shatter_m_grid",
                    "m0_order", "p", "quadrature_tol"},
    "sweep": {"parameter", "values", "probe_time"},
}
_REQUIRED = ("kernel", "daughter", "grid", "initial", "time")


class _Lines:
    """Maps dotted key paths to 1-based source lines."""

    def __init__(self, text: str | None):
        self.lines = {}
        if text:
            try:
                node = yaml.compose(text)
            except yaml.YAMLError:
                node = None
            if isinstance(node, yaml.MappingNode):
                self._walk(node, "")

    def _walk(self, node, prefix):
        for key, value in node.value:
            path = f"{prefix}{key.value}"
            self.lines[path] = key.start_mark.line + 1
            if isinstance(value, yaml.MappingNode):
                self._walk(value, path + ".")

    def __call__(self, path: str) -> int:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rpartition(".")[0]
        return 1


def _num(value, where, fail, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                fail(where, f"expected a number, got {value!r}")
        else:
            fail(where, f"expected a number, got {value!r}")
    if integer and float(value) != int(value):
        fail(where, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        fail(where, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def from_dict(data: dict, source: str = "<config>", text: str | None = None) -> ExperimentConfig:
    lines = _Lines(text)

    def fail(where, msg):
        raise ConfigError(f"{source}:{lines(where)}: {where}: {msg}")

    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    for key in data:
        if key not in _SECTIONS:
            fail(key, "unknown section")
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"{source}:1: missing required section '{key}'")
    for key, allowed in _SECTIONS.items():
        if allowed is None or key not in data:
            continue
        sec = data[key]
        if not isinstance(sec, dict):
            fail(key, "expected a mapping")
        for sub in sec:
            if sub not in allowed:
                fail(f"{key}.{sub}", "unknown key")

    def sec(name):
        return data.get(name) or {}

    try:
        k = sec("kernel")
        for key in ("alpha", "beta"):
            if key not in k:
                fail(f"kernel.{key}", "missing")
        kernel = KernelSpec(_num(k["alpha"], "kernel.alpha", fail), _num(k["beta"], "kernel.beta", fail))
    except ConfigurationError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail("kernel", str(exc))
    try:
        if "nu" not in sec("daughter"):
            fail("daughter.nu", "missing")
        daughter = DaughterSpec(_num(sec("daughter")["nu"], "daughter.nu", fail))
    except ConfigurationError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail("daughter.nu", str(exc))

    g = sec("grid")
    for key in ("x_min", "x_max"):
        if key not in g:
            fail(f"grid.{key}", "missing")
    if ("cells" in g) == ("cells_per_decade" in g):
        fail("grid", "give exactly one of 'cells' or 'cells_per_decade'")
    grid = GridConfig(_num(g["x_min"], "grid.x_min", fail, positive=True),
                      _num(g["x_max"], "grid.x_max", fail, positive=True),
                      _num(g["cells"], "grid.cells", fail, positive=True, integer=True)
                      if "cells" in g else None,
                      _num(g["cells_per_decade"], "grid.cells_per_decade", fail, positive=True)
                      if "cells_per_decade" in g else None)
    if not grid.x_min < grid.x_max:
        fail("grid.x_max", "must exceed grid.x_min")

    w = sec("window")
    if "n" in w:
        if "lower" in w or "upper" in w:
            fail("window", "give either 'n' or explicit 'lower'/'upper'")
        n = _num(w["n"], "window.n", fail)
        if not n > 1.0:
            fail("window.n", "must exceed 1")
        window = WindowConfig(1.0 / n, n)
    else:
        window = WindowConfig(_num(w["lower"], "window.lower", fail) if "lower" in w else None,
                              _num(w["upper"], "window.upper", fail) if "upper" in w else None)
    try:
        window.build()
    except ConfigurationError as exc:
        fail("window", str(exc))

    ini = dict(sec("initial"))
    family = ini.pop("family", None)
    if family not in INITIAL_FAMILIES:
        fail("initial.family", f"must be one of {', '.join(INITIAL_FAMILIES)}")
    initial = InitialConfig(family, ini)
    try:
        initial.build()
    except (KeyError, TypeError, ValueError) as exc:
        fail("initial", f"bad parameters for {family}: {exc}")

    tm = sec("time")
    if "t_end" not in tm:
        fail("time.t_end", "missing")
    time = TimeConfig(_num(tm["t_end"], "time.t_end", fail, positive=True),
                      [_num(v, "time.output_times", fail) for v in tm["output_times"]]
                      if "output_times" in tm else None,
                      _num(tm["output_count"], "time.output_count", fail, positive=True, integer=True)
                      if "output_count" in tm else None)
    if time.output_times is not None and any(not 0.0 <= s <= time.t_end for s in time.output_times):
        fail("time.output_times", "output times must lie in [0, t_end]")

    try:
        control = StepControl(**{key: (_num(v, f"control.{key}", fail, integer=key == "max_steps"))
                                 for key, v in sec("control").items()})
    except ConfigurationError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail("control", str(exc))
    ev = dict(sec("events"))
    if "stop_on_blowup" in ev and not isinstance(ev["stop_on_blowup"], bool):
        fail("events.stop_on_blowup", "expected true or false")
    events = EventConfig(**{key: (v if key == "stop_on_blowup" or v is None
                                  else _num(v, f"events.{key}", fail, positive=True))
                            for key, v in ev.items()})

    dg = dict(sec("diagnostics"))
    diag = DiagnosticsConfig()
    if "moment_orders" in dg:
        diag.moment_orders = [_num(v, "diagnostics.moment_orders", fail) for v in dg["moment_orders"]]
    if "tail_probes" in dg:
        tp = dg["tail_probes"]
        diag.tail_probes = (_num(tp, "diagnostics.tail_probes", fail, positive=True, integer=True)
                            if not isinstance(tp, list)
                            else [_num(v, "diagnostics.tail_probes", fail, positive=True) for v in tp])
    if "bounds" in dg:
        for b in dg["bounds"]:
            if b not in BOUND_KINDS:
                fail("diagnostics.bounds", f"unknown bound {b!r}; known: {', '.join(BOUND_KINDS)}")
        diag.bounds = list(dg["bounds"])
    if "oracle" in dg:
        if not isinstance(dg["oracle"], bool):
            fail("diagnostics.oracle", "expected true or false")
        diag.oracle = dg["oracle"]
    if "shatter_m_grid" in dg:
        diag.shatter_m_grid = [_num(v, "diagnostics.shatter_m_grid", fail) for v in dg["shatter_m_grid"]]
    for key in ("m0_order", "p", "quadrature_tol"):
        if key in dg:
            setattr(diag, key, _num(dg[key], f"diagnostics.{key}", fail, positive=True))

    # cross-field consistency
    if diag.oracle and not (kernel.alpha == 0.0 and kernel.beta == 0.0):
        fail("diagnostics.oracle", "the constant-kernel oracle needs alpha = beta = 0")
    if "T_shatter_upper" in diag.bounds and not kernel.alpha < 0.0:
        fail("diagnostics.bounds", "T_shatter_upper needs alpha < 0")
    if diag.shatter_m_grid is not None:
        bad = [m for m in diag.shatter_m_grid if not -daughter.nu - 1.0 <= m < 0.0]
        if bad:
            fail("diagnostics.shatter_m_grid", f"orders must lie in [-nu-1, 0), got {bad}")
    if isinstance(diag.tail_probes, list):
        bad = [x for x in diag.tail_probes if not grid.x_min <= x <= grid.x_max]
        if bad:
            fail("diagnostics.tail_probes", f"probes outside the grid: {bad}")

    sweep = None
    if "sweep" in data:
        sw = sec("sweep")
        if sw.get("parameter") not in SWEEP_PARAMETERS:
            fail("sweep.parameter", f"must be one of {', '.join(SWEEP_PARAMETERS)}")
        vals = sw.get("values")
        if not isinstance(vals, list) or len(vals) < 2:
            fail("sweep.values", "need a list of at least two values")
        vals = [_num(v, "sweep.values", fail, positive=True,
                     integer=sw["parameter"] == "grid.cells") for v in vals]
        diffs = np.diff(vals)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            fail("sweep.values", "sweep values must be strictly monotone")
        probe = sw.get("probe_time")
        if probe is not None:
            probe = _num(probe, "sweep.probe_time", fail, positive=True)
            if probe > time.t_end:
                fail("sweep.probe_time", "probe time is after t_end")
        sweep = SweepConfig(sw["parameter"], vals, probe)

    name = data.get("name", Path(source).stem)
    return ExperimentConfig(str(name), kernel, daughter, window, grid, initial, time, control,
                            events, diag, sweep)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:1: cannot read: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else 1
        raise ConfigError(f"{path}:{line}: {exc.problem}") from None
    return from_dict(data if data is not None else {}, str(path), text)


def dump(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


PRESET_DIR = Path(__file__).with_name("presets")


def preset_path(name: str) -> Path:
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        known = ", ".join(sorted(p.stem for p in PRESET_DIR.glob("*.yaml")))
        raise ConfigError(f"unknown preset {name!r}; known: {known}")
    return path


def load_preset(name: str) -> ExperimentConfig:
    return load(preset_path(name))
