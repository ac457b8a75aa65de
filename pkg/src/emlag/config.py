"""Machine-definition and run-config files (YAML).

Machine file::

    kind: pm_sat_saliency
    params:
      n_p: 3
      J: 0.01
      R_s: 1.0
      lambda: 0.01        # or lam
      mu: 0.002
      ibar: 10.0          # or phibar (magnet flux, Wb)
    saturation:
      kind: rational
      coefficients: [0.01, 100.0]
      rho_max: 50.0
    harmonics:            # im_sat_harmonic only
      - {nu: 5, sigma: 1, L: 0.002}

Run config::

    machine: pm.yaml      # relative to the config file
    drive:
      u_s: {type: sinusoidal, amplitude: 20.0, frequency: 10.0, phase: 0.0}
      tau_L: 0.5
    initial: {theta: 0.0, omega: 0.0, i_s: [0.0, 0.0], i_r: [0.0, 0.0]}
    t_end: 0.1
    dt: 1.0e-5
    backend: auto
    audit_bound: 1.0e-6
    outputs: {trajectory: trajectory.csv, residual: residual.csv, summary: audit.txt}

Complex values are two-element lists ``[re, im]``.  Numbers are read as
64-bit floats; strings such as ``1e-5`` (which YAML 1.1 does not treat as a
number) are accepted where a number is expected.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dynamics import (
    ConstantVoltage,
    DriveInput,
    MachineState,
    PiecewiseVoltage,
    SinusoidalVoltage,
)
from .models import (
    Harmonic,
    ImParams,
    MagneticLagrangianModel,
    ModelError,
    PmParams,
    SaturationCurve,
    KINDS,
)


class ConfigError(ValueError):
    """Invalid machine or run file; the message starts with ``file:line:``."""


class _Map(dict):
    """Mapping that remembers the line of each key (1-based)."""

    line: int = 0
    key_lines: dict


class _Seq(list):
    line: int = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"{key_node.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class _Doc:
    """Error anchoring for one parsed file."""

    def __init__(self, path: Path):
        self.path = path

    def fail(self, line: int, message: str):
        raise ConfigError(f"{self.path}:{line}: {message}")

    def load(self):
        try:
            text = self.path.read_text()
        except OSError as exc:
            raise ConfigError(f"{self.path}: cannot read file: {exc.strerror}") from exc
        try:
            data = yaml.load(text, Loader=_Loader)
        except ConfigError as exc:
            raise ConfigError(f"{self.path}:{exc}") from None
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else 0
            raise ConfigError(f"{self.path}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
        if not isinstance(data, _Map):
            self.fail(1, "top level must be a mapping")
        return data

    def mapping(self, parent: _Map, key: str, required=True) -> _Map | None:
        if key not in parent:
            if required:
                self.fail(parent.line, f"missing required key {key!r}")
            return None
        value = parent[key]
        if not isinstance(value, _Map):
            self.fail(parent.key_lines[key], f"{key}: expected a mapping")
        return value

    def check_keys(self, m: _Map, allowed, where: str):
        for key in m:
            if key not in allowed:
                self.fail(m.key_lines[key], f"unknown key {key!r} in {where}; allowed: {', '.join(allowed)}")

    def number(self, m: _Map, key: str, default=None, positive=False, integer=False):
        if key not in m:
            if default is None:
                self.fail(m.line, f"missing required key {key!r}")
            return default
        line = m.key_lines[key]
        raw = m[key]
        if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
            self.fail(line, f"{key}: expected a number, got {raw!r}")
        try:
            value = float(raw)
        except ValueError:
            self.fail(line, f"{key}: expected a number, got {raw!r}")
        if not math.isfinite(value):
            self.fail(line, f"{key}: must be finite")
        if positive and not value > 0:
            self.fail(line, f"{key}: must be positive, got {value!r}")
        if integer:
            if value != int(value):
                self.fail(line, f"{key}: must be an integer, got {raw!r}")
            return int(value)
        return value

    def complex_value(self, m: _Map, key: str, default=None) -> complex:
        if key not in m:
            if default is None:
                self.fail(m.line, f"missing required key {key!r}")
            return default
        return self.complex_item(m[key], m.key_lines[key], key)

    def complex_item(self, raw, line: int, what: str) -> complex:
        if not isinstance(raw, list) or len(raw) != 2:
            self.fail(line, f"{what}: complex values are written as [re, im]")
        try:
            re_, im_ = (float(v) for v in raw)
        except (TypeError, ValueError):
            self.fail(line, f"{what}: complex values are written as [re, im] numbers")
        if not (math.isfinite(re_) and math.isfinite(im_)):
            self.fail(line, f"{what}: must be finite")
        return complex(re_, im_)


# ---------------------------------------------------------------------------
# machine definitions

PM_KEYS = ("n_p", "J", "R_s", "lambda", "lam", "mu", "ibar", "phibar")
IM_KEYS = ("n_p", "J", "R_s", "R_r", "L_m", "L_fs", "L_fr")
_FIELD_KEY = {"lam": "lambda"}


def _anchor(doc: _Doc, block: _Map, message: str):
    for word in re.findall(r"[A-Za-z_]+", message):
        key = _FIELD_KEY.get(word, word)
        for candidate in (key, word):
            if candidate in block.key_lines:
                doc.fail(block.key_lines[candidate], message)
    doc.fail(block.line, message)


def _curve(doc: _Doc, m: _Map) -> SaturationCurve:
    doc.check_keys(m, ("kind", "coefficients", "rho_max"), "saturation")
    if "kind" not in m:
        doc.fail(m.line, "saturation: missing required key 'kind'")
    coeffs = m.get("coefficients")
    if not isinstance(coeffs, list) or not coeffs:
        doc.fail(m.key_lines.get("coefficients", m.line), "saturation.coefficients: expected a non-empty list")
    try:
        values = tuple(float(c) for c in coeffs)
    except (TypeError, ValueError):
        doc.fail(m.key_lines["coefficients"], "saturation.coefficients: expected numbers")
    rho_max = doc.number(m, "rho_max", default=math.inf)
    try:
        return SaturationCurve(str(m["kind"]), values, rho_max)
    except ModelError as exc:
        _anchor(doc, m, f"saturation: {exc}")


def _harmonics(doc: _Doc, raw, line: int) -> tuple[Harmonic, ...]:
    if not isinstance(raw, list):
        doc.fail(line, "harmonics: expected a list")
    out = []
    for item in raw:
        if not isinstance(item, _Map):
            doc.fail(getattr(raw, "line", line), "harmonics: each entry must be a mapping")
        doc.check_keys(item, ("nu", "sigma", "L"), "harmonic")
        nu = doc.number(item, "nu", integer=True)
        sigma = doc.number(item, "sigma", integer=True)
        L = doc.number(item, "L")
        try:
            out.append(Harmonic(nu, sigma, L))
        except ModelError as exc:
            _anchor(doc, item, str(exc))
    return tuple(out)


def parse_machine(path) -> MagneticLagrangianModel:
    """Load and validate a machine-definition file."""
    doc = _Doc(Path(path))
    data = doc.load()
    doc.check_keys(data, ("kind", "params", "saturation", "harmonics"), "machine file")
    if "kind" not in data:
        doc.fail(data.line, "missing required key 'kind'")
    kind = data["kind"]
    if kind not in KINDS:
        doc.fail(data.key_lines["kind"], f"kind: unknown model kind {kind!r}; expected one of {', '.join(KINDS)}")
    block = doc.mapping(data, "params")
    is_pm = kind.startswith("pm_")
    doc.check_keys(block, PM_KEYS if is_pm else IM_KEYS, "params")
    curve = _curve(doc, doc.mapping(data, "saturation")) if "saturation" in data else None
    harmonics = ()
    if "harmonics" in data:
        if is_pm:
            doc.fail(data.key_lines["harmonics"], "harmonics: only induction machines take space harmonics")
        harmonics = _harmonics(doc, data["harmonics"], data.key_lines["harmonics"])
    try:
        if is_pm:
            if "lambda" in block and "lam" in block:
                doc.fail(block.key_lines["lam"], "give either 'lambda' or 'lam', not both")
            if "ibar" in block and "phibar" in block:
                doc.fail(block.key_lines["phibar"], "give either 'ibar' or 'phibar', not both")
            lam_key = "lam" if "lam" in block else "lambda"
            lam = doc.number(block, lam_key, positive=True)
            kw = dict(
                n_p=doc.number(block, "n_p", integer=True),
                J=doc.number(block, "J"),
                R_s=doc.number(block, "R_s"),
                lam=lam,
                mu=doc.number(block, "mu", default=0.0),
                saturation=curve,
            )
            if "phibar" in block:
                kw["ibar"] = doc.number(block, "phibar") / lam
            else:
                kw["ibar"] = doc.number(block, "ibar")
            params = PmParams(**kw)
        else:
            params = ImParams(
                n_p=doc.number(block, "n_p", integer=True),
                J=doc.number(block, "J"),
                R_s=doc.number(block, "R_s"),
                R_r=doc.number(block, "R_r"),
                L_m=doc.number(block, "L_m"),
                L_fs=doc.number(block, "L_fs"),
                L_fr=doc.number(block, "L_fr"),
                harmonics=harmonics,
                saturation=curve,
            )
    except ModelError as exc:
        _anchor(doc, block, str(exc))
    try:
        return MagneticLagrangianModel(kind, params)
    except ModelError as exc:
        _anchor(doc, data, str(exc))


def _num(x: float) -> str:
    return repr(float(x))


def dump_machine(model: MagneticLagrangianModel) -> str:
    """Machine file text that :func:`parse_machine` reads back to an equal model."""
    p = model.params
    lines = [f"kind: {model.kind}", "params:", f"  n_p: {int(p.n_p)}", f"  J: {_num(p.J)}", f"  R_s: {_num(p.R_s)}"]
    if model.is_pm:
        lines += [f"  lambda: {_num(p.lam)}", f"  mu: {_num(p.mu)}", f"  ibar: {_num(p.ibar)}"]
    else:
        lines += [
            f"  R_r: {_num(p.R_r)}",
            f"  L_m: {_num(p.L_m)}",
            f"  L_fs: {_num(p.L_fs)}",
            f"  L_fr: {_num(p.L_fr)}",
        ]
    curve = p.saturation
    if curve is not None:
        lines += [
            "saturation:",
            f"  kind: {curve.kind}",
            f"  coefficients: [{', '.join(_num(c) for c in curve.coefficients)}]",
        ]
        if math.isfinite(curve.rho_max):
            lines.append(f"  rho_max: {_num(curve.rho_max)}")
    if not model.is_pm and p.harmonics:
        lines.append("harmonics:")
        lines += [f"  - {{nu: {h.nu}, sigma: {h.sigma}, L: {_num(h.L)}}}" for h in p.harmonics]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# run configs


@dataclass(frozen=True)
class RunConfig:
    path: Path
    model: MagneticLagrangianModel
    drive: DriveInput
    initial: MachineState
    t_end: float
    dt: float
    backend: str = "auto"
    audit_bound: float = 1e-6
    outputs: dict = field(default_factory=dict)

    def output(self, name: str, default: str) -> str:
        return self.outputs.get(name, default)


def _voltage(doc: _Doc, m: _Map):
    kind = m.get("type")
    if kind == "constant":
        doc.check_keys(m, ("type", "value"), "u_s")
        return ConstantVoltage(doc.complex_value(m, "value"))
    if kind == "sinusoidal":
        doc.check_keys(m, ("type", "amplitude", "frequency", "phase"), "u_s")
        return SinusoidalVoltage(doc.number(m, "amplitude"), doc.number(m, "frequency"), doc.number(m, "phase", default=0.0))
    if kind == "piecewise":
        doc.check_keys(m, ("type", "times", "values"), "u_s")
        times, values = m.get("times"), m.get("values")
        if not isinstance(times, list) or not isinstance(values, list) or len(times) != len(values) or not times:
            doc.fail(m.line, "u_s: piecewise needs equally long non-empty 'times' and 'values' lists")
        try:
            t = tuple(float(v) for v in times)
        except (TypeError, ValueError):
            doc.fail(m.key_lines["times"], "u_s.times: expected numbers")
        vals = tuple(doc.complex_item(v, m.key_lines["values"], "u_s.values") for v in values)
        try:
            return PiecewiseVoltage(t, vals)
        except ValueError as exc:
            doc.fail(m.key_lines["times"], f"u_s: {exc}")
    doc.fail(m.key_lines.get("type", m.line), f"u_s.type: expected constant, sinusoidal or piecewise, got {kind!r}")


def parse_run_config(path) -> RunConfig:
    """Load a run config and the machine file it references."""
    path = Path(path)
    doc = _Doc(path)
    data = doc.load()
    allowed = ("machine", "drive", "initial", "t_end", "dt", "backend", "audit_bound", "outputs")
    doc.check_keys(data, allowed, "run config")
    if "machine" not in data:
        doc.fail(data.line, "missing required key 'machine'")
    machine_path = path.parent / str(data["machine"])
    if not machine_path.is_file():
        doc.fail(data.key_lines["machine"], f"machine: file {str(data['machine'])!r} not found")
    model = parse_machine(machine_path)

    drive_block = doc.mapping(data, "drive")
    doc.check_keys(drive_block, ("u_s", "tau_L"), "drive")
    u_s = _voltage(doc, doc.mapping(drive_block, "u_s"))
    drive = DriveInput(u_s, doc.number(drive_block, "tau_L", default=0.0))

    init = doc.mapping(data, "initial", required=False)
    if init is None:
        initial = MachineState(0.0, 0.0, 0j, None if model.is_pm else 0j)
    else:
        doc.check_keys(init, ("theta", "omega", "i_s", "i_r"), "initial")
        if model.is_pm and "i_r" in init:
            doc.fail(init.key_lines["i_r"], "initial.i_r: permanent-magnet machines have no rotor current")
        initial = MachineState(
            doc.number(init, "theta", default=0.0),
            doc.number(init, "omega", default=0.0),
            doc.complex_value(init, "i_s", default=0j),
            None if model.is_pm else doc.complex_value(init, "i_r", default=0j),
        )

    dt = doc.number(data, "dt", positive=True)
    t_end = doc.number(data, "t_end")
    if not t_end >= dt:
        doc.fail(data.key_lines["t_end"], f"t_end: must be at least dt = {dt!r}")
    backend = str(data.get("backend", "auto"))
    if backend not in ("auto", "numpy", "jax"):
        doc.fail(data.key_lines["backend"], f"backend: expected auto, numpy or jax, got {backend!r}")
    bound = doc.number(data, "audit_bound", default=1e-6, positive=True)
    outputs = {}
    out_block = doc.mapping(data, "outputs", required=False)
    if out_block is not None:
        doc.check_keys(out_block, ("trajectory", "residual", "summary"), "outputs")
        outputs = {k: str(v) for k, v in out_block.items()}
    return RunConfig(path, model, drive, initial, t_end, dt, backend, bound, outputs)
