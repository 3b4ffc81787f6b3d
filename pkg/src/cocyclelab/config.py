"""JSON experiment configuration: parsing, validation and defaults."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cocycle import CocycleMap
from .errors import ValidationError
from .markov import StochasticMatrix

SWEEP_FAMILIES = ("matrix_blend", "rotation_perturb", "markov_blend")


def _fail(name: str, constraint: str):
    raise ValidationError(f"{name}: {constraint}")


def _int(raw: dict, name: str, default, lo: int, hi: int, prefix: str = "") -> int:
    key = prefix + name
    val = raw.get(name, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or val != int(val):
        _fail(key, f"must be an integer, got {val!r}")
    val = int(val)
    if not lo <= val <= hi:
        _fail(key, f"must lie in [{lo}, {hi}], got {val}")
    return val


def _real(raw: dict, name: str, default, lo: float, hi: float, prefix: str = "",
          open_lo: bool = False) -> float | None:
    key = prefix + name
    val = raw.get(name, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        _fail(key, f"must be a finite number, got {val!r}")
    if val < lo or val > hi or (open_lo and val == lo):
        br = "(" if open_lo else "["
        _fail(key, f"must lie in {br}{lo}, {hi}], got {val}")
    return float(val)


def _matrix_list(raw, name: str, q: int) -> list[list[list[float]]]:
    if not isinstance(raw, list) or len(raw) != q:
        _fail(name, f"must be a list of {q} matrices")
    out = []
    for i, m in enumerate(raw):
        arr = np.asarray(m, dtype=float) if isinstance(m, list) else None
        if arr is None or arr.dtype == object:
            _fail(f"{name}[{i}]", "must be a 2x2 nested list or a flat list of 4 numbers")
        if arr.shape == (4,):
            arr = arr.reshape(2, 2)
        if arr.shape != (2, 2):
            _fail(f"{name}[{i}]", f"expected a 2x2 matrix, got shape {arr.shape}")
        out.append(arr.tolist())
    try:
        CocycleMap(np.array(out))
    except ValidationError as exc:
        _fail(name, str(exc))
    return out


def _stochastic(raw, name: str, q: int) -> list[list[float]]:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        _fail(name, "must be a q x q list of numbers")
    if arr.shape != (q, q):
        _fail(name, f"expected shape ({q}, {q}), got {arr.shape}")
    try:
        StochasticMatrix.from_rows(arr)
    except ValidationError as exc:
        _fail(name, str(exc))
    return arr.tolist()


@dataclass
class SweepConfig:
    family: str
    values: list[float]
    B: list | None = None
    Q: list | None = None


@dataclass
class EnergyConfig:
    delta: float | None = None
    u1_center: float | None = None
    u1_radius: float = 0.6
    l: int | None = None
    iters: int = 20
    perturbation: float = 0.0
    kappa: float = 0.95
    bump_bins: int = 3
    grid: int = 256


@dataclass
class ExperimentConfig:
    q: int
    P: list
    A: list
    grid: int = 1024
    n: int = 100_000
    reps: int = 32
    seed: int = 0
    sweep: SweepConfig | None = None
    energy: EnergyConfig | None = None
    outputs: dict = field(default_factory=dict)

    def cocycle(self) -> CocycleMap:
        return CocycleMap(np.array(self.A))

    def chain(self) -> StochasticMatrix:
        return StochasticMatrix.from_rows(self.P)

    def to_dict(self) -> dict:
        return asdict(self)


def _power_of_two(name: str, val: int):
    if val & (val - 1):
        _fail(name, f"must be a power of two, got {val}")


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        _fail("config", "top level must be a JSON object")
    for key in ("q", "P", "A"):
        if key not in raw:
            _fail(key, "missing required field")
    known = {"q", "P", "A", "grid", "n", "reps", "seed", "sweep", "energy", "outputs"}
    extra = sorted(set(raw) - known)
    if extra:
        _fail(extra[0], "unknown field")
    q = _int(raw, "q", None, 2, 64)
    P = _stochastic(raw["P"], "P", q)
    A = _matrix_list(raw["A"], "A", q)
    grid = _int(raw, "grid", 1024, 8, 2**16)
    _power_of_two("grid", grid)
    cfg = ExperimentConfig(
        q=q, P=P, A=A, grid=grid,
        n=_int(raw, "n", 100_000, 1, 10**8),
        reps=_int(raw, "reps", 32, 1, 10_000),
        seed=_int(raw, "seed", 0, 0, 2**63 - 1),
    )
    if raw.get("sweep") is not None:
        cfg.sweep = _parse_sweep(raw["sweep"], q)
    if raw.get("energy") is not None:
        cfg.energy = _parse_energy(raw["energy"])
    outputs = raw.get("outputs", {})
    if not isinstance(outputs, dict) or not all(isinstance(v, str) for v in outputs.values()):
        _fail("outputs", "must map output names to path strings")
    cfg.outputs = dict(outputs)
    return cfg


def _parse_sweep(raw, q: int) -> SweepConfig:
    if not isinstance(raw, dict):
        _fail("sweep", "must be an object")
    family = raw.get("family")
    if family not in SWEEP_FAMILIES:
        _fail("sweep.family", f"must be one of {list(SWEEP_FAMILIES)}, got {family!r}")
    values = raw.get("values")
    if not isinstance(values, list) or not values:
        _fail("sweep.values", "must be a non-empty list of numbers")
    for k, t in enumerate(values):
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
            _fail(f"sweep.values[{k}]", f"must be a finite number, got {t!r}")
    sw = SweepConfig(family, list(values))
    if family == "matrix_blend":
        if "B" not in raw:
            _fail("sweep.B", "matrix_blend needs target matrices B")
        sw.B = _matrix_list(raw["B"], "sweep.B", q)
        for k, t in enumerate(values):
            if not 0 <= t <= 1:
                _fail(f"sweep.values[{k}]", "blend parameter must lie in [0, 1]")
    elif family == "markov_blend":
        if "Q" not in raw:
            _fail("sweep.Q", "markov_blend needs a target matrix Q")
        sw.Q = _stochastic(raw["Q"], "sweep.Q", q)
        for k, t in enumerate(values):
            if not 0 <= t <= 1:
                _fail(f"sweep.values[{k}]", "blend parameter must lie in [0, 1]")
    return sw


def _parse_energy(raw) -> EnergyConfig:
    if not isinstance(raw, dict):
        _fail("energy", "must be an object")
    p = "energy."
    d = EnergyConfig()
    l = raw.get("l")
    en = EnergyConfig(
        delta=_real(raw, "delta", None, 0.0, 1.0, p, open_lo=True),
        u1_center=_real(raw, "u1_center", None, 0.0, math.pi, p),
        u1_radius=_real(raw, "u1_radius", d.u1_radius, 0.0, math.pi / 4, p, open_lo=True),
        l=None if l is None else _int(raw, "l", None, 1, 16, p),
        iters=_int(raw, "iters", d.iters, 1, 10_000, p),
        perturbation=_real(raw, "perturbation", d.perturbation, -math.pi / 2, math.pi / 2, p),
        kappa=_real(raw, "kappa", d.kappa, 0.0, 1.0, p, open_lo=True),
        bump_bins=_int(raw, "bump_bins", d.bump_bins, 1, 256, p),
        grid=_int(raw, "grid", d.grid, 8, 256, p),
    )
    if en.u1_radius >= math.pi / 4:
        _fail(p + "u1_radius", "must be below pi/4")
    _power_of_two(p + "grid", en.grid)
    return en


def load_config(path) -> ExperimentConfig:
    """Read, validate and default-fill a JSON config file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config: invalid JSON ({exc})") from exc
    return parse_config(raw)
