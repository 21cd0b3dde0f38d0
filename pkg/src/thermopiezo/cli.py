"""Command-line front end for simulation and verification runs.

Parses structured TOML config files into a validated :class:`Config`,
builds scenarios out of them, and drives the verification experiments
from :mod:`thermopiezo.theorems`.  All artifacts (CSV tables, SVG line
charts, JSON manifests) are written under a caller-chosen output
directory with deterministic content: identical inputs give identical
bytes.

Config layout
-------------
Six sections, all but ``[material]`` and ``[grid]`` optional::

    [material]      density, capacity, stiffness, couplings
    [bias]          F0, W0, theta0 = {uniform = T} | {affine = {...}}
    [grid]          extents, n, partitions, essential assignments
    [action]        body/boundary data as time signal x spatial profile
    [action_b]      optional second loading (reciprocity studies)
    [integrator]    dt, t_final, save_every
    [verification]  p_values, levels, seed, reciprocity_tol

Time signals come from a closed set (``constant``, ``ramp``, ``sine``,
``gaussian-pulse``), spatial profiles likewise (``uniform``, ``linear``,
``sine``, ``gaussian``).  Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .bias import build_bias_state, check_symmetries, effective_constants
from .errors import (
    InsufficientHorizon,
    ParseError,
    PreconditionFailed,
    ThermoPiezoError,
    ValidationError,
)
from .fields import Grid, IncrementalAction
from .material import MaterialModel, isotropic_stiffness
from .solver import Scenario, run_simulation
from .theorems import (
    energy_balance_residual,
    energy_functionals,
    hamilton_density_checks,
    hamilton_variation_residual,
    reciprocity_residual,
    uniqueness_experiment,
)

CSV_SCHEMA = "thermopiezo-csv v1"
MANIFEST_SCHEMA = "thermopiezo-manifest v1"

SIGNAL_KINDS = ("constant", "ramp", "sine", "gaussian-pulse")
PROFILE_KINDS = ("uniform", "linear", "sine", "gaussian")
SUBCOMMANDS = ("simulate", "constants", "verify-energy",
               "verify-uniqueness", "verify-hamilton", "verify-reciprocity",
               "converge")

_SIDES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

# Leaf markers: "float", "int", "str", "floatlist", "intlist", "strlist",
# "matrix" (list of float lists), "nested" (arbitrarily nested float lists),
# or a dict for an inline sub-table.
_SIGNAL_SCHEMA = {"kind": "str", "value": "float", "t_start": "float",
                  "t_end": "float", "frequency": "float", "phase": "float",
                  "center": "float", "width": "float"}
_PROFILE_SCHEMA = {"kind": "str", "gradient": "floatlist", "offset": "float",
                   "mode": "intlist", "center": "floatlist",
                   "width": "float"}
_VOLUME_ENTRY = {"signal": _SIGNAL_SCHEMA, "profile": _PROFILE_SCHEMA,
                 "direction": "floatlist"}
_BOUNDARY_ENTRY = {"partition": "str", "signal": _SIGNAL_SCHEMA,
                   "profile": _PROFILE_SCHEMA, "direction": "floatlist"}

_ACTION_SCHEMA = {
    "body_force": _VOLUME_ENTRY,
    "heat_source": _VOLUME_ENTRY,
    "charge_density": _VOLUME_ENTRY,
    "essential": {"mech": _VOLUME_ENTRY, "elec": _VOLUME_ENTRY,
                  "therm": _VOLUME_ENTRY},
    "traction": "*boundary",
    "surface_charge": "*boundary",
    "heat_flux": "*boundary",
}

_SCHEMA = {
    "material": {"dim": "int", "rho0": "float", "theta_ref": "float",
                 "stiffness": "float", "iso_lame": {"lam": "float",
                                                    "mu": "float"},
                 "c2": "nested", "conductivity": "float",
                 "conductivity_matrix": "matrix", "a_heat": "float",
                 "piezo": "float", "piezo_full": "nested",
                 "permittivity": "float", "permittivity_matrix": "matrix",
                 "thermal_stress": "float", "thermal_stress_matrix": "matrix",
                 "pyro": "floatlist", "eps0": "float"},
    "bias": {"F0": "matrix", "W0": "floatlist",
             "theta0": {"uniform": "float",
                        "affine": {"center": "float",
                                   "gradient": "floatlist"}}},
    "grid": {"extents": "floatlist", "n": "intlist",
             "partitions": "*strlist",
             "essential": {"mech": "strlist", "elec": "strlist",
                           "therm": "strlist"}},
    "action": _ACTION_SCHEMA,
    "action_b": _ACTION_SCHEMA,
    "integrator": {"dt": "float", "t_final": "float", "save_every": "int"},
    "verification": {"p_values": "floatlist", "levels": "int", "seed": "int",
                     "reciprocity_tol": "float"},
}


def _canon_leaf(value, kind, path):
    """Coerce a parsed TOML leaf to its canonical Python form."""
    def fail(want):
        raise ParseError(f"key '{path}' must be {want}, "
                         f"got {value!r}")

    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return int(value)
    if kind == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if kind in ("floatlist", "intlist", "strlist"):
        if not isinstance(value, list):
            fail("a list")
        inner = {"floatlist": "float", "intlist": "int",
                 "strlist": "str"}[kind]
        return [_canon_leaf(v, inner, f"{path}[{i}]")
                for i, v in enumerate(value)]
    if kind == "matrix":
        if not isinstance(value, list):
            fail("a list of rows")
        return [_canon_leaf(row, "floatlist", f"{path}[{i}]")
                for i, row in enumerate(value)]
    if kind == "nested":
        if isinstance(value, list):
            return [_canon_leaf(v, "nested", f"{path}[{i}]")
                    for i, v in enumerate(value)]
        return _canon_leaf(value, "float", path)
    raise AssertionError(f"unhandled schema kind {kind}")


def _canon_table(data, schema, path):
    """Validate ``data`` against ``schema``, returning the canonical dict."""
    if not isinstance(data, dict):
        raise ParseError(f"key '{path}' must be a table")
    out = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in schema:
            raise ParseError(f"unknown key '{sub}'")
        want = schema[key]
        if isinstance(want, dict):
            out[key] = _canon_table(value, want, sub)
        elif want in ("*boundary", "*strlist"):
            # wildcard table: caller-chosen labels, one schema per entry
            if not isinstance(value, dict):
                raise ParseError(f"key '{sub}' must be a table")
            if want == "*boundary":
                out[key] = {k: _canon_table(v, _BOUNDARY_ENTRY,
                                            f"{sub}.{k}")
                            for k, v in sorted(value.items())}
            else:
                out[key] = {k: _canon_leaf(v, "strlist", f"{sub}.{k}")
                            for k, v in sorted(value.items())}
        else:
            out[key] = _canon_leaf(value, want, sub)
    return out


@dataclasses.dataclass(frozen=True)
class Config:
    """Validated, canonicalized contents of one config file.

    Sections are plain nested dict/list/scalar structures (canonical
    numeric types), so two configs compare equal exactly when their
    canonical emissions match.  ``build_*`` methods construct the
    runtime objects.
    """

    material: dict
    bias: dict
    grid: dict
    action: dict
    action_b: dict | None
    integrator: dict
    verification: dict

    # -- builders ----------------------------------------------------------
    def dim(self) -> int:
        return len(self.grid["n"])

    def build_material(self) -> MaterialModel:
        return _build_material(self.material, self.dim())

    def build_bias(self, material=None):
        material = material or self.build_material()
        return _build_bias(self.bias, material)

    def build_grid(self) -> Grid:
        return _build_grid(self.grid, self.dim())

    def build_action(self, grid=None, second=False) -> IncrementalAction:
        grid = grid or self.build_grid()
        section = self.action_b if second else self.action
        if section is None:
            raise ValidationError("config has no [action_b] section")
        return _build_action(section, self.grid, grid)

    def build_scenario(self, second=False) -> Scenario:
        material = self.build_material()
        bias = self.build_bias(material)
        grid = self.build_grid()
        action = self.build_action(grid, second=second)
        return Scenario(material=material, bias=bias, grid=grid,
                        action=action, dt=self.integrator["dt"],
                        t_final=self.integrator["t_final"],
                        save_every=self.integrator["save_every"])

    def build_scenario_pair(self):
        """Two scenarios sharing every object except the loading."""
        material = self.build_material()
        bias = self.build_bias(material)
        grid = self.build_grid()
        common = dict(material=material, bias=bias, grid=grid,
                      dt=self.integrator["dt"],
                      t_final=self.integrator["t_final"],
                      save_every=self.integrator["save_every"])
        return (Scenario(action=self.build_action(grid), **common),
                Scenario(action=self.build_action(grid, second=True),
                         **common))


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------

def parse_config(path) -> Config:
    """Parse and validate a config file.

    Raises
    ------
    ParseError
        On malformed TOML (with line info) or unknown/ill-typed keys.
    ValidationError
        When a structurally valid file violates an invariant (undefined
        partition, overlapping partitions, non-positive dt, unknown
        signal kind, dimension mismatch).
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}")

    for section in raw:
        if section not in _SCHEMA:
            raise ParseError(f"unknown key '{section}'")
    for required in ("material", "grid"):
        if required not in raw:
            raise ParseError(f"missing required section [{required}]")

    sections = {}
    for name, schema in _SCHEMA.items():
        if name in raw:
            sections[name] = _canon_table(raw[name], schema, name)
    cfg = Config(material=sections["material"],
                 bias=sections.get("bias", {}),
                 grid=sections["grid"],
                 action=sections.get("action", {}),
                 action_b=sections.get("action_b"),
                 integrator={"dt": 0.01, "t_final": 1.0, "save_every": 1,
                             **sections.get("integrator", {})},
                 verification={"p_values": [1.0, 2.0, 4.0], "levels": 3,
                               "seed": 0, "reciprocity_tol": 1e-3,
                               **sections.get("verification", {})})
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: Config) -> None:
    grid = cfg.grid
    if "extents" not in grid or "n" not in grid:
        raise ValidationError("[grid] must define 'extents' and 'n'")
    dim = len(grid["n"])
    if len(grid["extents"]) != dim or dim not in (1, 2):
        raise ValidationError("grid extents and n must both have length "
                              "1 or 2")
    sides = _SIDES[dim]

    partitions = grid.get("partitions", {})
    for label, members in partitions.items():
        for side in members:
            if side not in sides:
                raise ValidationError(
                    f"partition '{label}' names unknown side '{side}'")
    labels = list(partitions)
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            shared = set(partitions[a]) & set(partitions[b])
            if shared:
                raise ValidationError(
                    f"partitions '{a}' and '{b}' overlap on "
                    f"{sorted(shared)}; boundary partitions must be "
                    "disjoint")

    def resolve(names, context):
        out = []
        for name in names:
            if name in partitions:
                out.extend(partitions[name])
            elif name in sides:
                out.append(name)
            else:
                raise ValidationError(
                    f"{context} references undefined partition or side "
                    f"'{name}'")
        return tuple(out)

    essential = {field: resolve(grid.get("essential", {}).get(field, []),
                                f"grid.essential.{field}")
                 for field in ("mech", "elec", "therm")}

    for section_name in ("action", "action_b"):
        section = getattr(cfg, section_name)
        if not section:
            continue
        for key, field in (("traction", "mech"), ("surface_charge", "elec"),
                           ("heat_flux", "therm")):
            for label, entry in section.get(key, {}).items():
                where = resolve([entry.get("partition", label)],
                                f"{section_name}.{key}.{label}")
                clash = set(where) & set(essential[field])
                if clash:
                    raise ValidationError(
                        f"{section_name}.{key}.{label} places natural data "
                        f"on essential sides {sorted(clash)}; essential and "
                        "natural boundary partitions must be disjoint")
                _validate_entry(entry, f"{section_name}.{key}.{label}", dim,
                                vector=(key == "traction"))
        for key in ("body_force", "heat_source", "charge_density"):
            if key in section:
                _validate_entry(section[key], f"{section_name}.{key}", dim,
                                vector=(key == "body_force"))
        for field, entry in section.get("essential", {}).items():
            _validate_entry(entry, f"{section_name}.essential.{field}", dim,
                            vector=(field == "mech"))

    integ = cfg.integrator
    if integ["dt"] <= 0.0 or integ["t_final"] < 0.0:
        raise ValidationError("integrator dt must be > 0 and t_final >= 0")
    if integ["save_every"] < 1:
        raise ValidationError("integrator save_every must be >= 1")
    ver = cfg.verification
    if any(p <= 0.0 for p in ver["p_values"]):
        raise ValidationError("verification p_values must be positive")
    if ver["levels"] < 1:
        raise ValidationError("verification levels must be >= 1")

    # building the runtime objects performs the remaining (material/bias)
    # invariant checks; do it once here so parse_config rejects bad files
    material = cfg.build_material()
    cfg.build_bias(material)


def _validate_entry(entry, path, dim, vector):
    signal = entry.get("signal")
    if signal is None:
        raise ValidationError(f"{path} must define a 'signal'")
    kind = signal.get("kind")
    if kind not in SIGNAL_KINDS:
        raise ValidationError(
            f"{path}.signal.kind must be one of {SIGNAL_KINDS}, "
            f"got {kind!r}")
    profile = entry.get("profile")
    if profile is not None and profile.get("kind") not in PROFILE_KINDS:
        raise ValidationError(
            f"{path}.profile.kind must be one of {PROFILE_KINDS}")
    if vector:
        direction = entry.get("direction")
        if direction is None or len(direction) != dim:
            raise ValidationError(
                f"{path} must define a 'direction' of length {dim}")


# ---------------------------------------------------------------------------
# canonical emission
# ---------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{k} = {_fmt(v)}" for k, v in value.items())
        return "{" + inner + "}"
    raise AssertionError(f"unexpected config value {value!r}")


def _schema_order(section, schema):
    """Iterate section items in schema declaration order."""
    for key in schema:
        if key in section:
            yield key, section[key]


def emit_config(cfg: Config) -> str:
    """Render ``cfg`` in canonical form: re-parsing reproduces it."""
    lines = []
    for name in ("material", "bias", "grid", "action", "action_b",
                 "integrator", "verification"):
        section = getattr(cfg, name)
        if not section:
            continue
        lines.append(f"[{name}]")
        for key, value in _schema_order(section, _SCHEMA[name]):
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# runtime builders
# ---------------------------------------------------------------------------

def _build_material(sec, dim) -> MaterialModel:
    if "dim" in sec and sec["dim"] != dim:
        raise ValidationError(
            f"material.dim = {sec['dim']} does not match the "
            f"{dim}-dimensional grid")
    for key in ("rho0", "theta_ref", "a_heat"):
        if key not in sec:
            raise ValidationError(f"[material] must define '{key}'")
    stiff_keys = [k for k in ("stiffness", "iso_lame", "c2") if k in sec]
    if len(stiff_keys) != 1:
        raise ValidationError("[material] must define exactly one of "
                              "'stiffness', 'iso_lame', 'c2'")
    key = stiff_keys[0]
    if key == "stiffness":
        if dim != 1:
            raise ValidationError("'stiffness' shortcut is 1-D only; use "
                                  "'iso_lame' or 'c2'")
        c2 = np.full((1, 1, 1, 1), sec["stiffness"])
    elif key == "iso_lame":
        c2 = isotropic_stiffness(sec["iso_lame"]["lam"],
                                 sec["iso_lame"]["mu"], dim)
    else:
        c2 = np.asarray(sec["c2"], dtype=float)

    def mat(scalar_key, matrix_key, default=None):
        if matrix_key in sec:
            return np.asarray(sec[matrix_key], dtype=float)
        if scalar_key in sec:
            return sec[scalar_key] * np.eye(dim)
        return default

    kappa = mat("conductivity", "conductivity_matrix")
    if kappa is None:
        raise ValidationError("[material] must define 'conductivity' or "
                              "'conductivity_matrix'")
    kwargs = {}
    if "piezo" in sec or "piezo_full" in sec:
        if "piezo_full" in sec:
            kwargs["e_piezo"] = np.asarray(sec["piezo_full"], dtype=float)
        else:
            if dim != 1:
                raise ValidationError("'piezo' shortcut is 1-D only; use "
                                      "'piezo_full'")
            kwargs["e_piezo"] = np.full((1, 1, 1), sec["piezo"])
    chi = mat("permittivity", "permittivity_matrix")
    if chi is not None:
        kwargs["chi_diel"] = chi
    lam = mat("thermal_stress", "thermal_stress_matrix")
    if lam is not None:
        kwargs["lam_thermo"] = lam
    if "pyro" in sec:
        kwargs["p_pyro"] = np.asarray(sec["pyro"], dtype=float)
    if "eps0" in sec:
        kwargs["eps0"] = sec["eps0"]
    return MaterialModel(rho0=sec["rho0"], theta_ref=sec["theta_ref"],
                         c2=c2, kappa_cond=kappa, a_heat=sec["a_heat"],
                         **kwargs)


def _build_bias(sec, material):
    theta0 = None
    if "theta0" in sec:
        desc = sec["theta0"]
        if set(desc) == {"uniform"}:
            theta0 = desc["uniform"]
        elif set(desc) == {"affine"}:
            theta0 = (desc["affine"]["center"], desc["affine"]["gradient"])
        else:
            raise ValidationError("bias.theta0 must be {uniform = T} or "
                                  "{affine = {center, gradient}}")
    F0 = np.asarray(sec["F0"], dtype=float) if "F0" in sec else None
    W0 = np.asarray(sec["W0"], dtype=float) if "W0" in sec else None
    return build_bias_state(material, F0=F0, W0=W0, theta0=theta0)


def _build_grid(sec, dim) -> Grid:
    partitions = sec.get("partitions", {})

    def resolve(names):
        out = []
        for name in names:
            out.extend(partitions.get(name, [name]))
        return tuple(out)

    essential = sec.get("essential", {})
    return Grid(extents=tuple(sec["extents"]), n=tuple(sec["n"]),
                mech_essential=resolve(essential.get("mech", [])),
                elec_essential=resolve(essential.get("elec", [])),
                therm_essential=resolve(essential.get("therm", [])))


def _make_signal(desc):
    kind = desc["kind"]
    a = desc.get("value", 1.0)
    if kind == "constant":
        return lambda t: a
    if kind == "ramp":
        t0, t1 = desc.get("t_start", 0.0), desc.get("t_end", 1.0)
        if t1 <= t0:
            raise ValidationError("ramp signal needs t_end > t_start")
        return lambda t: a * min(max((t - t0) / (t1 - t0), 0.0), 1.0)
    if kind == "sine":
        om = 2.0 * math.pi * desc.get("frequency", 1.0)
        ph = desc.get("phase", 0.0)
        return lambda t: a * math.sin(om * t + ph)
    t0, w = desc.get("center", 0.0), desc.get("width", 1.0)
    return lambda t: a * math.exp(-0.5 * ((t - t0) / w) ** 2)


def _make_profile(desc, extents):
    if desc is None or desc["kind"] == "uniform":
        return lambda X: np.ones(X.shape[:-1])
    kind = desc["kind"]
    if kind == "linear":
        g = np.asarray(desc.get("gradient", [0.0] * len(extents)))
        off = desc.get("offset", 0.0)
        return lambda X: off + X @ g
    if kind == "sine":
        mode = desc.get("mode", [1] * len(extents))
        ext = np.asarray(extents)
        k = np.pi * np.asarray(mode, dtype=float) / ext

        def prof(X):
            out = np.ones(X.shape[:-1])
            for axis in range(X.shape[-1]):
                out = out * np.sin(k[axis] * X[..., axis])
            return out
        return prof
    c = np.asarray(desc.get("center", [0.0] * len(extents)))
    w = desc.get("width", 1.0)
    return lambda X: np.exp(-0.5 * np.sum(((X - c) / w) ** 2, axis=-1))


def _build_action(sec, grid_sec, grid) -> IncrementalAction:
    extents = grid_sec["extents"]
    partitions = grid_sec.get("partitions", {})

    def scalar_fn(entry):
        sig = _make_signal(entry["signal"])
        prof = _make_profile(entry.get("profile"), extents)
        return lambda X, t: sig(t) * prof(X)

    def vector_fn(entry):
        sig = _make_signal(entry["signal"])
        prof = _make_profile(entry.get("profile"), extents)
        direction = np.asarray(entry["direction"], dtype=float)
        return lambda X, t: (sig(t) * prof(X))[..., None] * direction

    kwargs = {}
    if "body_force" in sec:
        kwargs["f1"] = vector_fn(sec["body_force"])
    if "heat_source" in sec:
        kwargs["gamma1"] = scalar_fn(sec["heat_source"])
    if "charge_density" in sec:
        kwargs["rhoE1"] = scalar_fn(sec["charge_density"])
    essential = sec.get("essential", {})
    if "mech" in essential:
        kwargs["u_essential"] = vector_fn(essential["mech"])
    if "elec" in essential:
        kwargs["phi_essential"] = scalar_fn(essential["elec"])
    if "therm" in essential:
        kwargs["theta_essential"] = scalar_fn(essential["therm"])
    for key, maker in (("traction", vector_fn),
                       ("surface_charge", scalar_fn),
                       ("heat_flux", scalar_fn)):
        table = {}
        for label, entry in sec.get(key, {}).items():
            fn = maker(entry)
            for side in partitions.get(entry.get("partition", label),
                                       [entry.get("partition", label)]):
                table[side] = fn
        if table:
            kwargs[key] = table
    return IncrementalAction(**kwargs)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    """Atomic write: stage to a sibling temp file, then rename over."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, kind: str, header, rows) -> None:
    lines = [f"# {CSV_SCHEMA} {kind}", ",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(float(v)) if isinstance(v, (int, float, np.floating))
            and not isinstance(v, bool) else str(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def _json_default(value):
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {value!r}")


def _write_manifest(out: Path, command: str, cfg_path, results: dict,
                    outputs, passed, seed) -> None:
    body = {"schema": MANIFEST_SCHEMA, "command": command,
            "config": str(cfg_path), "seed": seed,
            "outputs": [str(p) for p in outputs],
            "results": results, "passed": bool(passed)}
    _write_text(out / "manifest.json",
                json.dumps(body, indent=2, sort_keys=True,
                           default=_json_default) + "\n")


def _svg_chart(path: Path, series, title, xlabel, ylabel, logy=False):
    """Write a minimal SVG line chart.

    ``series`` is a list of (label, xs, ys) triples.  Log-scale charts
    drop non-positive y values.
    """
    width, height, margin = 640, 420, 60.0
    xs_all, ys_all = [], []
    clean = []
    for label, xs, ys in series:
        pairs = [(x, y) for x, y in zip(xs, ys)
                 if not logy or y > 0.0]
        clean.append((label, pairs))
        xs_all.extend(x for x, _ in pairs)
        ys_all.extend(math.log10(y) if logy else y for _, y in pairs)
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    x_hi = x_hi if x_hi > x_lo else x_lo + 1.0
    y_hi = y_hi if y_hi > y_lo else y_lo + 1.0

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(y):
        v = math.log10(y) if logy else y
        return height - margin - (v - y_lo) / (y_hi - y_lo) \
            * (height - 2 * margin)

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="24" text-anchor="middle" '
             f'font-size="16">{title}</text>']
    parts.append(f'<line x1="{margin}" y1="{height - margin}" '
                 f'x2="{width - margin}" y2="{height - margin}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
                 f'y2="{height - margin}" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(f'<text x="{px(xv)}" y="{height - margin + 18}" '
                     f'text-anchor="middle" font-size="11">{xv:.4g}</text>')
        label = f"1e{yv:.2f}" if logy else f"{yv:.4g}"
        parts.append(f'<text x="{margin - 6}" '
                     f'y="{height - margin - frac * (height - 2 * margin)}" '
                     f'text-anchor="end" font-size="11">{label}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 12}" '
                 f'text-anchor="middle" font-size="13">{xlabel}</text>')
    parts.append(f'<text x="16" y="{height / 2}" text-anchor="middle" '
                 f'font-size="13" transform="rotate(-90 16 {height / 2})">'
                 f'{ylabel}</text>')
    for i, (label, pairs) in enumerate(clean):
        if not pairs:
            continue
        color = colors[i % len(colors)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pairs)
        parts.append(f'<polyline points="{points}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin + 4}" '
                     f'y="{margin + 16 * i + 12}" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    _write_text(path, "\n".join(parts) + "\n")


def _export_trajectory(out: Path, traj) -> list:
    """One CSV per saved level plus a JSON index manifest."""
    grid = traj.scenario.grid
    d = grid.dim
    coords = grid.points.reshape(-1, d)
    header = [f"x{i}" for i in range(d)] + \
        [f"u{i}" for i in range(d)] + [f"v{i}" for i in range(d)] + \
        ["phi1", "theta1"]
    outputs, entries = [], []
    for k, state in enumerate(traj.states):
        rows = np.column_stack([coords, state.u.reshape(-1, d),
                                state.v.reshape(-1, d),
                                state.phi1.reshape(-1),
                                state.theta1.reshape(-1)])
        name = f"state_{k:05d}.csv"
        _write_csv(out / name, "state", header, rows)
        outputs.append(out / name)
        entries.append({"step": k * traj.scenario.save_every,
                        "time": state.t, "file": name,
                        "gauss_residual": float(traj.gauss_residuals[k])})
    index = {"schema": MANIFEST_SCHEMA, "dt": traj.scenario.dt,
             "entries": entries}
    _write_text(out / "trajectory_index.json",
                json.dumps(index, indent=2, sort_keys=True,
                           default=_json_default) + "\n")
    outputs.append(out / "trajectory_index.json")
    return outputs


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_simulate(cfg, cfg_path, out, args):
    traj = run_simulation(cfg.build_scenario())
    outputs = _export_trajectory(out, traj)
    final = traj.states[-1]
    results = {"steps": len(traj.states) - 1,
               "t_final": final.t,
               "max_gauss_residual": float(np.max(traj.gauss_residuals)),
               "max_abs_u": float(np.max(np.abs(final.u))),
               "max_abs_theta1": float(np.max(np.abs(final.theta1)))}
    print(f"simulate: {results['steps']} steps to t = {final.t:g}")
    print(f"  max |u| = {results['max_abs_u']:.6g}   "
          f"max |theta1| = {results['max_abs_theta1']:.6g}")
    print(f"  worst charge-constraint residual = "
          f"{results['max_gauss_residual']:.3e}")
    _write_manifest(out, "simulate", cfg_path, results, outputs, True,
                    cfg.verification["seed"])
    return 0


def _cmd_constants(cfg, cfg_path, out, args):
    material = cfg.build_material()
    bias = cfg.build_bias(material)
    ec = effective_constants(material, bias)
    rows = []
    for name in ("G", "R", "Lam", "L", "P", "alpha",
                 "kap_u", "kap_E", "kap_1", "kap_2"):
        arr = np.asarray(getattr(ec, name))
        if arr.shape == ():
            rows.append((name, float(arr)))
            continue
        for idx in np.ndindex(arr.shape):
            label = name + "".join(f"[{i}]" for i in idx)
            rows.append((label, arr[idx]))
    _write_csv(out / "constants.csv", "constants", ["name", "value"], rows)
    sym = check_symmetries(ec)
    print(f"effective constants for {material.dim}-D material "
          f"({len(rows)} entries) -> {out / 'constants.csv'}")
    print(f"  pair-exchange symmetry: G defect {sym.g_asymmetry:.3e}, "
          f"L defect {sym.l_asymmetry:.3e} "
          f"[{'PASS' if sym.passed else 'FAIL'}]")
    results = {"entries": len(rows), "g_asymmetry": sym.g_asymmetry,
               "l_asymmetry": sym.l_asymmetry}
    _write_manifest(out, "constants", cfg_path, results,
                    [out / "constants.csv"], sym.passed,
                    cfg.verification["seed"])
    return 0 if sym.passed else 1


def _cmd_verify_energy(cfg, cfg_path, out, args):
    levels = args.levels or cfg.verification["levels"]
    base = cfg.build_scenario()
    norms, dts = [], []
    last = None
    for k in range(levels):
        sc = dataclasses.replace(base, dt=base.dt / 2 ** k)
        last = run_simulation(sc)
        rep = energy_balance_residual(last)
        dts.append(sc.dt)
        norms.append(rep.norm)
    orders = [math.log2(norms[i] / norms[i + 1])
              for i in range(len(norms) - 1)]
    passed = bool(norms == sorted(norms, reverse=True)
                  and (not orders or min(orders) >= 0.9))
    rows = [(dts[i], norms[i], orders[i - 1] if i else float("nan"))
            for i in range(levels)]
    _write_csv(out / "energy_residuals.csv", "refinement",
               ["dt", "residual_norm", "order"], rows)
    rep = energy_balance_residual(last)
    _write_csv(out / "energy_ledger.csv", "ledger",
               ["time", "total", "total_without_coupling", "residual"],
               zip(rep.times, rep.totals, rep.totals_without_coupling,
                   rep.residual))
    _svg_chart(out / "energy_residuals.svg",
               [("balance residual", dts, norms)],
               "Energy balance residual vs time step", "dt",
               "residual norm", logy=True)
    _svg_chart(out / "energy_ledger.svg",
               [("total", rep.times, rep.totals)],
               "Energy ledger on the finest run", "time", "energy")
    print("verify-energy: residual norms per dt level")
    for i in range(levels):
        extra = f"  order {orders[i - 1]:.2f}" if i else ""
        print(f"  dt = {dts[i]:<10g} norm = {norms[i]:.6e}{extra}")
    print(f"  measured order >= 0.9: {'PASS' if passed else 'FAIL'}")
    results = {"dts": dts, "norms": norms, "orders": orders}
    _write_manifest(out, "verify-energy", cfg_path, results,
                    [out / "energy_residuals.csv",
                     out / "energy_ledger.csv",
                     out / "energy_residuals.svg",
                     out / "energy_ledger.svg"], passed,
                    cfg.verification["seed"])
    return 0 if passed else 1


def _cmd_verify_uniqueness(cfg, cfg_path, out, args):
    seed = args.seed if args.seed is not None else cfg.verification["seed"]
    rng = np.random.default_rng(seed)
    base = cfg.build_scenario()
    grid = base.grid
    amp = 0.05
    perturbed = dataclasses.replace(
        base,
        u0=amp * rng.standard_normal(grid.shape + (grid.dim,)),
        theta1_0=amp * rng.standard_normal(grid.shape))
    rep = uniqueness_experiment(base, perturbed)
    _write_csv(out / "difference_energy.csv", "decay",
               ["time", "total", "total_without_coupling"],
               zip(rep.times, rep.totals, rep.totals_without_coupling))
    _svg_chart(out / "difference_energy.svg",
               [("with coupling", rep.times, rep.totals),
                ("without coupling", rep.times,
                 rep.totals_without_coupling)],
               "Difference-energy decay", "time", "difference energy")
    print("verify-uniqueness: perturbed-vs-base difference energy")
    print(f"  initial {rep.totals[0]:.6e}  final {rep.totals[-1]:.6e}  "
          f"ratio {rep.final_over_initial:.4f}")
    print(f"  monotone non-increase: {'PASS' if rep.monotone else 'FAIL'}"
          f" (max step increase {rep.max_step_increase:.3e})")
    if rep.conclusive:
        print(f"  sufficiency inequality holds (lambda_min = "
              f"{rep.lambda_min:g}, capacity = {rep.capacity:g}, "
              f"coupling = {rep.coupling_norm:g})")
    else:
        print("  sufficiency inequality FAILED: experiment is "
              "inconclusive as a uniqueness certificate")
    results = {"monotone": rep.monotone, "conclusive": rep.conclusive,
               "ignaczak_holds": rep.ignaczak_holds,
               "final_over_initial": rep.final_over_initial,
               "max_step_increase": rep.max_step_increase}
    _write_manifest(out, "verify-uniqueness", cfg_path, results,
                    [out / "difference_energy.csv",
                     out / "difference_energy.svg"], rep.monotone, seed)
    return 0 if rep.monotone else 1


def _cmd_verify_hamilton(cfg, cfg_path, out, args):
    seed = args.seed if args.seed is not None else cfg.verification["seed"]
    material = cfg.build_material()
    bias = cfg.build_bias(material)
    ec = effective_constants(material, bias)
    dens = hamilton_density_checks(ec, num_states=50, seed=seed)
    traj = run_simulation(cfg.build_scenario())
    steps = sorted({len(traj.states) // 4, len(traj.states) // 2,
                    3 * len(traj.states) // 4})
    var_reports = [hamilton_variation_residual(traj, step=s, seed=seed)
                   for s in steps]
    worst = max(max(r.el_u_error, r.el_phi_error, r.fd_error,
                    abs(r.theta_variation)) for r in var_reports)
    passed = bool(dens.passed and all(r.passed for r in var_reports)
                  and all(abs(r.theta_variation) <= 1e-10
                          for r in var_reports))
    rows = [(name, err) for name, err in sorted(dens.max_errors.items())]
    rows += [(f"stationarity[step={s}]",
              max(r.el_u_error, r.el_phi_error)) for s, r in
             zip(steps, var_reports)]
    rows += [(f"theta_variation[step={s}]", abs(r.theta_variation))
             for s, r in zip(steps, var_reports)]
    _write_csv(out / "hamilton_checks.csv", "hamilton",
               ["check", "max_error"], rows)
    print(f"verify-hamilton: densities generate the constitutive response "
          f"[{'PASS' if dens.passed else 'FAIL'}]")
    for name, err in sorted(dens.max_errors.items()):
        print(f"  d(density)/d({name}) max error {err:.3e}")
    print(f"  stationarity + vanishing heat variation at steps {steps}: "
          f"worst {worst:.3e} [{'PASS' if passed else 'FAIL'}]")
    results = {"density_errors": dens.max_errors,
               "variation_steps": steps, "worst": worst}
    _write_manifest(out, "verify-hamilton", cfg_path, results,
                    [out / "hamilton_checks.csv"], passed, seed)
    return 0 if passed else 1


def _cmd_verify_reciprocity(cfg, cfg_path, out, args):
    if cfg.action_b is None:
        raise ValidationError("verify-reciprocity needs an [action_b] "
                              "section with the second loading")
    ps = args.p or cfg.verification["p_values"]
    tol = cfg.verification["reciprocity_tol"]
    sa, sb = cfg.build_scenario_pair()
    tr_a, tr_b = run_simulation(sa), run_simulation(sb)
    outputs, relatives = [], []
    print(f"verify-reciprocity: relative residual at tolerance {tol:g}")
    for p in ps:
        rep = reciprocity_residual(tr_a, tr_b, p)
        relatives.append(rep.relative)
        rows = [(k, v) for k, v in rep.terms.items()]
        rows += [("total", rep.total), ("normalization", rep.normalization),
                 ("relative", rep.relative)]
        path = out / f"reciprocity_p{p:g}.csv"
        _write_csv(path, "reciprocity", ["term", "value"], rows)
        outputs.append(path)
        print(f"  p = {p:<6g} relative = {rep.relative:.6e} "
              f"[{'PASS' if rep.relative <= tol else 'FAIL'}]")
    passed = all(r <= tol for r in relatives)
    _svg_chart(out / "reciprocity.svg", [("relative residual", ps,
                                          relatives)],
               "Reciprocity residual vs transform parameter", "p",
               "relative residual", logy=True)
    outputs.append(out / "reciprocity.svg")
    results = {"p_values": list(ps), "relatives": relatives, "tol": tol}
    _write_manifest(out, "verify-reciprocity", cfg_path, results, outputs,
                    passed, cfg.verification["seed"])
    return 0 if passed else 1


def _cmd_converge(cfg, cfg_path, out, args):
    levels = args.levels or cfg.verification["levels"]
    material = cfg.build_material()
    bias = cfg.build_bias(material)
    rows, outputs = [], []
    norms = []
    for k in range(levels):
        n = tuple((m - 1) * 2 ** k + 1 for m in cfg.grid["n"])
        grid = dataclasses.replace(cfg.build_grid(), n=n)
        action = _build_action(cfg.action, cfg.grid, grid)
        sc = Scenario(material=material, bias=bias, grid=grid,
                      action=action, dt=cfg.integrator["dt"] / 2 ** k,
                      t_final=cfg.integrator["t_final"],
                      save_every=cfg.integrator["save_every"])
        traj = run_simulation(sc)
        rep = energy_balance_residual(traj)
        norms.append(rep.norm)
        rows.append((k, "x".join(str(v) for v in n), sc.dt, rep.norm))
        level_dir = out / f"level_{k}"
        outputs.extend(_export_trajectory(level_dir, traj))
    orders = [math.log2(norms[i] / norms[i + 1])
              for i in range(len(norms) - 1)]
    passed = bool(not orders or min(orders) >= 0.9)
    _write_csv(out / "convergence.csv", "refinement",
               ["level", "n", "dt", "residual_norm"], rows)
    outputs.append(out / "convergence.csv")
    _svg_chart(out / "convergence.svg",
               [("balance residual", [r[2] for r in rows], norms)],
               "Joint space-time refinement", "dt", "residual norm",
               logy=True)
    outputs.append(out / "convergence.svg")
    print(f"converge: {levels} joint refinement levels")
    for (k, n, dt, norm) in rows:
        extra = f"  order {orders[k - 1]:.2f}" if k else ""
        print(f"  level {k}: n = {n:<9} dt = {dt:<10g} "
              f"norm = {norm:.6e}{extra}")
    print(f"  measured order >= 0.9: {'PASS' if passed else 'FAIL'}")
    results = {"norms": norms, "orders": orders}
    _write_manifest(out, "converge", cfg_path, results, outputs, passed,
                    cfg.verification["seed"])
    return 0 if passed else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "constants": _cmd_constants,
    "verify-energy": _cmd_verify_energy,
    "verify-uniqueness": _cmd_verify_uniqueness,
    "verify-hamilton": _cmd_verify_hamilton,
    "verify-reciprocity": _cmd_verify_reciprocity,
    "converge": _cmd_converge,
}


def _parse_p_list(text):
    try:
        values = [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid p list {text!r}")
    if not values or any(p <= 0.0 for p in values):
        raise argparse.ArgumentTypeError("p values must be positive")
    return values


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermopiezo",
        description="Simulation and verification runs for incremental "
                    "thermo-electro-elasticity")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub = subs.add_parser(name)
        sub.add_argument("--config", required=True,
                         help="path to the scenario config file")
        sub.add_argument("--out", default="out",
                         help="output directory (default: ./out)")
        sub.add_argument("--levels", type=int, default=None,
                         help="refinement levels (overrides config)")
        sub.add_argument("--p", type=_parse_p_list, default=None,
                         help="comma-separated transform parameters")
        sub.add_argument("--seed", type=int, default=None,
                         help="random seed (overrides config)")
    return parser


def main(argv=None) -> int:
    """Entry point; returns the process exit code (0 pass, 1 fail, 2 bad
    input)."""
    args = build_arg_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.config, out, args)
    except (ParseError, ValidationError, PreconditionFailed,
            InsufficientHorizon) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ThermoPiezoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
