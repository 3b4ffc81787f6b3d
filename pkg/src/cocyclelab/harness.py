"""Experiment runners behind the command line, and deterministic file output."""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cocycle import (CocycleMap, certify_expanding, check_expanding, delta_moment_scan,
                      delta_moments, invariant_points, rotation)
from .config import ExperimentConfig
from .energy import Arc, EnergyParams, contraction_experiment, near_atom_vector
from .errors import NotExpandingError, ValidationError
from .grid import MeasureVector
from .lyapunov import combined_stderr, lambda_pair
from .markov import StochasticMatrix
from .stationary import maximize_furstenberg, verify_atomic_invariant_set

SWEEP_COLUMNS = ["t", "lambda_plus_mc", "stderr", "lambda_plus_furstenberg", "lambda_minus",
                 "sum_residual", "stationary_residual", "reason"]
ENERGY_COLUMNS = ["iteration", "symbol", "energy", "bound_rhs"]


def format_real(x) -> str:
    return f"{float(x):.17g}"


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format_real(x)
    return str(x)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(x) for x in row) + "\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def json_text(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit(text: str, path) -> None:
    """Write ``text`` atomically: temp file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _estimate(A: CocycleMap, P: StochasticMatrix, n: int, reps: int, seed: int) -> dict:
    pair = lambda_pair(A, P, n=n, reps=reps, seed=seed)
    se = combined_stderr(pair.plus, pair.minus)
    residual = abs(pair.plus.value + pair.minus.value - pair.exact_sum)
    return {
        "lambda_plus": pair.plus.as_dict(),
        "lambda_minus_direct": pair.minus.as_dict(),
        "lambda_minus_from_sum": pair.minus_from_sum.as_dict(),
        "exact_sum": pair.exact_sum,
        "sum_residual": residual,
        "sum_tolerance": 3 * se,
        "sum_check_pass": bool(residual <= max(3 * se, 1e-12)),
        "direct_vs_sum_consistent": pair.consistent,
    }


def run_lyapunov(cfg: ExperimentConfig) -> dict:
    A, P = cfg.cocycle(), cfg.chain()
    report = {"config": cfg.to_dict(), "seed": cfg.seed, "replicate_seeds": [cfg.seed ^ r for r in range(cfg.reps)]}
    report.update(_estimate(A, P, cfg.n, cfg.reps, cfg.seed))
    fb = maximize_furstenberg(A, P, N=cfg.grid)
    report["furstenberg"] = {
        "value": fb.value,
        "residual": fb.residual,
        "winning_init": fb.label,
        "runs": [{"init": r[0], "value": r[1], "residual": r[2], "converged": r[3]} for r in fb.runs],
    }
    return report


def run_stationary(cfg: ExperimentConfig) -> tuple[dict, MeasureVector]:
    A, P = cfg.cocycle(), cfg.chain()
    fb = maximize_furstenberg(A, P, N=cfg.grid)
    atoms = verify_atomic_invariant_set(A, fb.eta)
    report = {
        "config": cfg.to_dict(),
        "furstenberg": fb.value,
        "residual": fb.residual,
        "winning_init": fb.label,
        "runs": [{"init": r[0], "value": r[1], "residual": r[2], "converged": r[3]} for r in fb.runs],
        "atoms": {"set": atoms.atoms, "weight": atoms.weight, "closed": atoms.closed,
                  "weights_equal": atoms.weights_equal, "violations": atoms.violations},
    }
    return report, fb.eta


def run_expanding(cfg: ExperimentConfig, l_max: int = 8) -> dict:
    A, P = cfg.cocycle(), cfg.chain()
    pts = invariant_points(A)
    report = {"config": cfg.to_dict(), "invariant_points": pts, "points": []}
    if pts == "all":
        return report
    for v in pts:
        entry = {"theta": v, "expanding": False}
        res = check_expanding(A, P, v, l_max)
        if res is not None:
            l, c = res
            delta = delta_moment_scan(A, P, v, l, c)
            entry.update(expanding=True, l=l, c=c, delta=delta)
            if delta is not None:
                entry["moments"] = delta_moments(A, P, v, l, delta)
                entry["moment_bounds"] = (1 - 3 * c * delta) * P.p
        report["points"].append(entry)
    return report


def _sweep_system(cfg: ExperimentConfig, t: float) -> tuple[CocycleMap, StochasticMatrix]:
    A = np.array(cfg.A)
    P = np.array(cfg.P)
    fam = cfg.sweep.family
    if fam == "matrix_blend":
        A = (1 - t) * A + t * np.array(cfg.sweep.B)
    elif fam == "rotation_perturb":
        A = rotation(t) @ A
    else:
        P = (1 - t) * P + t * np.array(cfg.sweep.Q)
    return CocycleMap(A), StochasticMatrix.from_rows(P)


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _sweep_row(cfg: ExperimentConfig, idx: int, t: float) -> list:
    try:
        A, P = _sweep_system(cfg, t)
    except ValidationError as exc:
        return [t, None, None, None, None, None, None, f"skipped: {exc}"]
    est = _estimate(A, P, cfg.n, cfg.reps, point_seed(cfg.seed, idx))
    fb = maximize_furstenberg(A, P, N=cfg.grid)
    return [t, est["lambda_plus"]["value"], est["lambda_plus"]["stderr"], fb.value,
            est["lambda_minus_direct"]["value"], est["sum_residual"], fb.residual, ""]


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> list[list]:
    """One row per sweep value, in input order; values echoed verbatim."""
    if cfg.sweep is None:
        raise ValidationError("sweep: block required for the sweep command")
    jobs = list(enumerate(cfg.sweep.values))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda j: _sweep_row(cfg, *j), jobs))
    return [_sweep_row(cfg, i, t) for i, t in jobs]


def sweep_csv(rows: list[list]) -> str:
    return csv_text(SWEEP_COLUMNS, ([repr(r[0]) if isinstance(r[0], float) else r[0]] + r[1:] for r in rows))


def expanding_point(A: CocycleMap, P: StochasticMatrix, l_max: int = 8) -> float:
    pts = invariant_points(A)
    if pts == "all" or not pts:
        raise NotExpandingError("the cocycle has no isolated invariant point to certify")
    failures = []
    for v in pts:
        try:
            certify_expanding(A, P, v, l_max)
            return v
        except NotExpandingError as exc:
            failures.append(str(exc))
    raise NotExpandingError("; ".join(failures))


def run_energy_decay(cfg: ExperimentConfig) -> tuple[list[list], dict]:
    """Contraction trace rows and a summary of the fitted affine bound."""
    if cfg.energy is None:
        raise ValidationError("energy: block required for the energy-decay command")
    en = cfg.energy
    ref, P = cfg.cocycle(), cfg.chain()
    v = en.u1_center if en.u1_center is not None else expanding_point(ref, P)
    l, c = certify_expanding(ref, P, v)
    if en.l is not None:
        l = en.l
    delta = en.delta
    if delta is None:
        delta = delta_moment_scan(ref, P, v, l, c)
        if delta is None:
            raise NotExpandingError(f"no admissible delta for the point {v!r} at l={l}")
    params = EnergyParams(delta, Arc(v, en.u1_radius))
    dyn = CocycleMap(rotation(en.perturbation) @ ref.matrices) if en.perturbation else ref
    eta = near_atom_vector(P.q, en.grid, v, en.kappa, en.bump_bins)
    trace = contraction_experiment(dyn, P, eta, params, l=l, iters=en.iters, reference=ref)
    rows = []
    for n, (E, parts) in enumerate(zip(trace.energies, trace.per_symbol)):
        for i, e in enumerate(parts):
            rows.append([n, i, params.report(e), None])
        rows.append([n, "all", params.report(E), params.report(trace.bound_rhs(n))])
    summary = {
        "config": cfg.to_dict(),
        "point": v, "l": trace.l, "c": trace.c, "delta": trace.delta,
        "rate": trace.rate, "C_emp": trace.C_emp,
        "sup_bound": trace.sup_bound(), "sup_energy": max(trace.energies),
        "bound_holds": trace.holds(), "rounds": len(trace.energies) - 1,
        "truncated": trace.truncated, "reason": trace.reason, "start": trace.start,
        "preimages_inside": trace.preimages_inside,
    }
    return rows, summary


def energy_csv(rows: list[list]) -> str:
    return csv_text(ENERGY_COLUMNS, rows)


def summary_line(summary: dict) -> str:
    return (f"C_emp={format_real(summary['C_emp'])} rate={format_real(summary['rate'])} "
            f"rounds={summary['rounds']} truncated={str(summary['truncated']).lower()}")


__all__ = ["run_lyapunov", "run_stationary", "run_expanding", "run_sweep", "run_energy_decay",
           "emit", "csv_text", "json_text", "sweep_csv", "energy_csv", "point_seed",
           "SWEEP_COLUMNS", "ENERGY_COLUMNS"]
