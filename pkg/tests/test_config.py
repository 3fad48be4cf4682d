from __future__ import annotations

import textwrap

import pytest
import yaml

from collbreak import config as C

BASE = textwrap.dedent("""\
    name: base
    kernel: {alpha: 0.0, beta: 0.0}
    daughter: {nu: 0.0}
    grid: {x_min: 1.0e-6, x_max: 100.0, cells: 40}
    initial: {family: exponential}
    time: {t_end: 0.3, output_count: 4}
    """)


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


PRESETS = sorted(p.stem for p in C.PRESET_DIR.glob("*.yaml"))


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_round_trip(name):
    cfg = C.load_preset(name)
    assert cfg.name == name
    again = C.from_dict(yaml.safe_load(C.dump(cfg)), name)
    assert again.to_dict() == cfg.to_dict()
    cfg.grid.build()
    cfg.initial.build()


def test_required_presets_present():
    for name in ("mass-conservation-lambda15", "constant-kernel-oracle", "finite-time-lambda05",
                 "shattering-sweep", "shattering-control"):
        assert name in PRESETS


def test_minimal_config_and_defaults(tmp_path):
    cfg = C.load(write(tmp_path, BASE))
    assert cfg.grid.cell_count() == 40
    assert cfg.time.outputs() == pytest.approx([0.0, 0.1, 0.2, 0.3])
    assert cfg.window.build() is None
    assert cfg.sweep is None


def test_cells_per_decade(tmp_path):
    text = BASE.replace("cells: 40", "cells_per_decade: 10")
    cfg = C.load(write(tmp_path, text))
    assert cfg.grid.cell_count() == 80


def test_window_shorthand(tmp_path):
    cfg = C.load(write(tmp_path, BASE + "window: {n: 4.0}\n"))
    assert (cfg.window.lower, cfg.window.upper) == (0.25, 4.0)


@pytest.mark.parametrize("extra,line,fragment", [
    ("bogus: 1\n", 7, "unknown section"),
    ("control: {rel_tol: 1.0e-6, speed: 3}\n", 7, "control.speed: unknown key"),
    ("diagnostics:\n  oracle: true\n  bounds: [T_nope]\n", 9, "unknown bound"),
])
def test_errors_reference_lines(tmp_path, extra, line, fragment):
    p = write(tmp_path, BASE + extra)
    with pytest.raises(C.ConfigError) as err:
        C.load(p)
    msg = str(err.value)
    assert msg.startswith(f"{p}:{line}:")
    assert fragment in msg


def test_missing_section(tmp_path):
    text = "\n".join(l for l in BASE.splitlines() if not l.startswith("grid"))
    with pytest.raises(C.ConfigError, match="missing required section 'grid'"):
        C.load(write(tmp_path, text))


def test_yaml_syntax_error_has_line(tmp_path):
    p = write(tmp_path, BASE + "time: [unclosed\n")
    with pytest.raises(C.ConfigError, match=rf"{p}:\d+:"):
        C.load(p)


@pytest.mark.parametrize("old,new,fragment", [
    ("cells: 40", "cells: 40, cells_per_decade: 4", "exactly one"),
    ("x_max: 100.0", "x_max: 1.0e-7", "must exceed"),
    ("cells: 40", "cells: 0", "grid.cells"),
    ("{nu: 0.0}", "{nu: 0.5}", "daughter.nu"),
    ("family: exponential", "family: gaussian", "initial.family"),
])
def test_field_validation(tmp_path, old, new, fragment):
    with pytest.raises(C.ConfigError, match=fragment):
        C.load(write(tmp_path, BASE.replace(old, new)))


@pytest.mark.parametrize("extra,fragment", [
    ("diagnostics: {oracle: true}\n", None),
    ("diagnostics: {bounds: [T_shatter_upper]}\n", "needs alpha < 0"),
    ("diagnostics: {shatter_m_grid: [-2.0]}\n", "shatter_m_grid"),
    ("diagnostics: {tail_probes: [1000.0]}\n", "outside the grid"),
    ("sweep: {parameter: grid.cells, values: [16, 64, 32]}\n", "strictly monotone"),
    ("sweep: {parameter: grid.cells, values: [16, 32], probe_time: 5.0}\n", "after t_end"),
    ("sweep: {parameter: kernel.alpha, values: [0.1, 0.2]}\n", "sweep.parameter"),
])
def test_cross_field_checks(tmp_path, extra, fragment):
    p = write(tmp_path, BASE + extra)
    if fragment is None:
        assert C.load(p).diagnostics.oracle
        return
    with pytest.raises(C.ConfigError, match=fragment):
        C.load(p)


def test_oracle_rejected_for_nonconstant_kernel(tmp_path):
    text = BASE.replace("{alpha: 0.0, beta: 0.0}", "{alpha: 0.25, beta: 0.25}")
    with pytest.raises(C.ConfigError, match="alpha = beta = 0"):
        C.load(write(tmp_path, text + "diagnostics: {oracle: true}\n"))


def test_with_value_overrides_one_field():
    cfg = C.load_preset("shattering-sweep")
    other = cfg.with_value("grid.x_min", 1e-3)
    assert other.grid.x_min == 1e-3 and cfg.grid.x_min == 1e-2
    assert other.grid.cells_per_decade == cfg.grid.cells_per_decade
    assert C.load_preset("integrator-order").with_value("control.rel_tol", 5e-4).control.rel_tol == 5e-4


def test_unknown_preset():
    with pytest.raises(C.ConfigError, match="unknown preset"):
        C.load_preset("no-such-thing")
