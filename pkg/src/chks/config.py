"""Run configuration: INI-style sections of ``key = value`` pairs.

Example::

    [grid]
    nx = 64
    ny = 64
    Lx = 12.8
    Ly = 12.8

    [model]
    chi = 1.0
    lambda = 3.0

    [time]
    dt = 0.01
    T = 10
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .attractor import EnsembleSpec, sample_initial_ball
from .grid import Grid, read_snapshot
from .potential import KINDS, CoeffSpec, InvalidSpecError, PotentialSpec
from .stepper import ModelParams, State


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class GridSection:
    nx: int = 64
    ny: int = 64
    Lx: float = 1.0
    Ly: float = 1.0


@dataclass(frozen=True)
class ModelSection:
    chi: float = 0.0
    lam: float = 0.0
    potential: str = "flory_huggins"
    yosida_eps: float = 1e-6
    smoothing: float = 0.1
    table_r: tuple[float, ...] = ()
    table_beta: tuple[float, ...] = ()
    h_kind: str = "constant"
    h_value: float = 1.0
    h_lo: float = 1.0
    h_hi: float = 1.0
    h_scale: float = 1.0
    k_kind: str = "constant"
    k_value: float = 1.0
    k_lo: float = 1.0
    k_hi: float = 1.0
    k_scale: float = 1.0
    solver_tol: float = 1e-10
    max_newton: int = 50


@dataclass(frozen=True)
class TimeSection:
    dt: float = 1e-3
    T: float = 1.0
    stride: int = 100
    stepper: str = "standard"


@dataclass(frozen=True)
class InitSection:
    mode: str = "sampler"
    phi_file: str = ""
    sigma_file: str = ""
    phi: float = 0.0
    sigma: float = 1.0
    seed: int = 0
    m: float = 0.0
    R: float = 10.0
    sigma_floor: float = 0.05
    margin: float = 0.05
    corr_length: float = 1.0


@dataclass(frozen=True)
class EnsembleSection:
    n_samples: int = 8


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    csv: bool = True
    snapshots: bool = True


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    time: TimeSection = field(default_factory=TimeSection)
    init: InitSection = field(default_factory=InitSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    output: OutputSection = field(default_factory=OutputSection)

    # --- builders ---------------------------------------------------------

    def build_grid(self) -> Grid:
        return Grid(self.grid.nx, self.grid.ny, self.grid.Lx, self.grid.Ly)

    def build_potential(self) -> PotentialSpec:
        m = self.model
        table = (tuple(m.table_r), tuple(m.table_beta)) if m.potential == "custom_tabulated" else None
        return PotentialSpec(m.potential, m.lam, m.yosida_eps, m.smoothing, table)

    def _coeff(self, prefix: str) -> CoeffSpec:
        m = self.model
        kind = getattr(m, f"{prefix}_kind")
        if kind == "constant":
            return CoeffSpec.constant(getattr(m, f"{prefix}_value"))
        return CoeffSpec.saturating(getattr(m, f"{prefix}_lo"), getattr(m, f"{prefix}_hi"), getattr(m, f"{prefix}_scale"))

    def build_params(self) -> ModelParams:
        return ModelParams(
            chi=self.model.chi,
            potential=self.build_potential(),
            h_spec=self._coeff("h"),
            k_spec=self._coeff("k"),
            dt=self.time.dt,
            solver_tol=self.model.solver_tol,
            max_newton=self.model.max_newton,
        )

    def ensemble_spec(self, n_samples: int | None = None) -> EnsembleSpec:
        i = self.init
        return EnsembleSpec(
            n_samples=self.ensemble.n_samples if n_samples is None else n_samples,
            R=i.R,
            m=i.m,
            seed=i.seed,
            T=self.time.T,
            stride=self.time.stride,
            sigma_floor=i.sigma_floor,
            margin=i.margin,
            corr_length=i.corr_length,
        )

    def initial_states(self, n: int = 1, base: Path | None = None) -> list[State]:
        grid = self.build_grid()
        i = self.init
        if i.mode == "sampler":
            return sample_initial_ball(grid, self.ensemble_spec(n), self.build_potential())
        if i.mode == "uniform":
            return [State(grid, grid.constant(i.phi), grid.constant(i.sigma)) for _ in range(n)]
        base = base or Path(".")
        g1, phi, t = read_snapshot(base / i.phi_file)
        g2, sigma, _ = read_snapshot(base / i.sigma_file)
        if g1 != grid or g2 != grid:
            raise ConfigError(["init.phi_file: snapshot grid does not match [grid]"])
        return [State(grid, phi.copy(), sigma.copy(), 0.0) for _ in range(n)]

    def with_seed(self, seed: int) -> "RunConfig":
        from dataclasses import replace

        return replace(self, init=replace(self.init, seed=seed))


_SECTION_CLASSES = {
    "grid": GridSection,
    "model": ModelSection,
    "time": TimeSection,
    "init": InitSection,
    "ensemble": EnsembleSection,
    "output": OutputSection,
}
# config-file key -> dataclass field
_ALIASES = {("model", "lambda"): "lam"}
_REVERSE = {(s, v): k for (s, k), v in _ALIASES.items()}


def _field_types(cls) -> dict[str, Any]:
    hints = {"int": int, "float": float, "str": str, "bool": bool, "tuple[float, ...]": tuple}
    return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


def _convert(raw: str, typ) -> Any:
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is tuple:
        return tuple(float(x) for x in raw.replace(",", " ").split()) if raw else ()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate; every problem is collected before raising ``ConfigError``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None

    errors: list[str] = []
    values: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in _SECTION_CLASSES:
            errors.append(f"[{section}]: unknown section")
            continue
        types = _field_types(_SECTION_CLASSES[section])
        values[section] = {}
        for key, raw in cp.items(section):
            name = _ALIASES.get((section, key), key)
            if name not in types or (section, key) in _REVERSE:
                errors.append(f"{section}.{key}: unknown key")
                continue
            try:
                values[section][name] = _convert(raw, types[name])
            except ValueError as exc:
                errors.append(f"{section}.{key}: type mismatch ({exc})")

    sections = {}
    for name, cls in _SECTION_CLASSES.items():
        try:
            sections[name] = cls(**values.get(name, {}))
        except TypeError as exc:
            errors.append(f"[{name}]: {exc}")
            sections[name] = cls()
    cfg = RunConfig(**sections)
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    errs = []
    gsec, m, t, i = cfg.grid, cfg.model, cfg.time, cfg.init
    if gsec.nx < 4 or gsec.ny < 4:
        errs.append("grid.nx: nx and ny must be >= 4")
    if not (gsec.Lx > 0 and gsec.Ly > 0):
        errs.append("grid.Lx: Lx and Ly must be > 0")
    if not m.chi >= 0:
        errs.append("model.chi: chi must be >= 0")
    if not m.lam >= 0:
        errs.append("model.lambda: lambda must be >= 0")
    if m.potential not in KINDS:
        errs.append(f"model.potential: must be one of {', '.join(KINDS)}")
    else:
        try:
            cfg.build_potential()
        except InvalidSpecError as exc:
            errs.append(f"model.potential: {exc}")
    k_max = None
    for prefix in ("h", "k"):
        kind = getattr(m, f"{prefix}_kind")
        if kind not in ("constant", "saturating"):
            errs.append(f"model.{prefix}_kind: must be constant or saturating")
            continue
        try:
            spec = cfg._coeff(prefix)
        except InvalidSpecError as exc:
            errs.append(f"model.{prefix}_{'value' if kind == 'constant' else 'lo'}: {exc}")
            continue
        if prefix == "k":
            k_max = spec.upper
    if not m.solver_tol > 0:
        errs.append("model.solver_tol: must be > 0")
    if m.max_newton < 1:
        errs.append("model.max_newton: must be >= 1")
    if not t.dt > 0:
        errs.append("time.dt: dt must be > 0")
    elif k_max is not None and not t.dt < 1.0 / (2.0 * k_max):
        errs.append(f"time.dt: dt must satisfy dt < 1/(2 k_max) = {1.0 / (2.0 * k_max):g}")
    if not t.T > 0:
        errs.append("time.T: T must be > 0")
    if t.stride < 1:
        errs.append("time.stride: stride must be >= 1")
    if t.stepper not in ("standard", "entropic"):
        errs.append("time.stepper: must be standard or entropic")
    if i.mode not in ("sampler", "files", "uniform"):
        errs.append("init.mode: must be sampler, files or uniform")
    if not abs(i.m) < 1:
        errs.append("init.m: |m| must be < 1")
    if i.mode == "sampler":
        if not i.R > 0:
            errs.append("init.R: R must be > 0")
        if i.sigma_floor < 0:
            errs.append("init.sigma_floor: must be >= 0")
        if not 0 < i.margin < 1 - min(abs(i.m), 1):
            errs.append("init.margin: must lie in (0, 1 - |m|)")
    if i.mode == "uniform":
        if not abs(i.phi) < 1:
            errs.append("init.phi: |phi| must be < 1")
        if i.sigma < 0:
            errs.append("init.sigma: sigma must be >= 0")
    if i.mode == "files" and not (i.phi_file and i.sigma_file):
        errs.append("init.phi_file: files mode needs phi_file and sigma_file")
    if cfg.ensemble.n_samples < 1:
        errs.append("ensemble.n_samples: must be >= 1")
    return errs


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def serialize(cfg: RunConfig) -> str:
    out = []
    for name in _SECTION_CLASSES:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(sec):
            key = _REVERSE.get((name, f.name), f.name)
            out.append(f"{key} = {_format(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
