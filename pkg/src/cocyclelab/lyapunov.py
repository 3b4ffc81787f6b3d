"""Estimators for the extremal Lyapunov exponents."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .cocycle import CocycleMap, unit
from .errors import ValidationError
from .grid import MeasureVector
from .markov import StochasticMatrix, sample_chain

RENORM_EVERY = 32


@dataclass(frozen=True)
class ExponentEstimate:
    value: float
    stderr: float
    n: int
    reps: int
    method: str

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n": self.n,
                "reps": self.reps, "method": self.method}


@dataclass(frozen=True)
class ExponentPair:
    plus: ExponentEstimate
    minus: ExponentEstimate
    minus_from_sum: ExponentEstimate
    exact_sum: float
    consistent: bool


@njit(cache=True)
def _spectral_norm(a, b, c, d):
    fro = a * a + b * b + c * c + d * d
    sg = 1.0 if a * d - b * c >= 0.0 else -1.0
    disc = ((a - sg * d) ** 2 + (b + sg * c) ** 2) * ((a + sg * d) ** 2 + (b - sg * c) ** 2)
    return math.sqrt(0.5 * (fro + math.sqrt(disc)))


@njit(cache=True)
def _log_norms(mats, invs, chain, every):
    """log ||A^n||, log ||(A^n)^{-1}|| along one path.

    The forward product is built by left multiplication, the inverse
    product by right multiplication; both are rescaled by their largest
    entry every ``every`` steps with the scale kept in a log accumulator.
    """
    m00, m01, m10, m11 = 1.0, 0.0, 0.0, 1.0
    w00, w01, w10, w11 = 1.0, 0.0, 0.0, 1.0
    log_m = 0.0
    log_w = 0.0
    n = chain.shape[0]
    for t in range(n):
        s = chain[t]
        a = mats[s]
        n00 = a[0, 0] * m00 + a[0, 1] * m10
        n01 = a[0, 0] * m01 + a[0, 1] * m11
        n10 = a[1, 0] * m00 + a[1, 1] * m10
        n11 = a[1, 0] * m01 + a[1, 1] * m11
        m00, m01, m10, m11 = n00, n01, n10, n11
        b = invs[s]
        k00 = w00 * b[0, 0] + w01 * b[1, 0]
        k01 = w00 * b[0, 1] + w01 * b[1, 1]
        k10 = w10 * b[0, 0] + w11 * b[1, 0]
        k11 = w10 * b[0, 1] + w11 * b[1, 1]
        w00, w01, w10, w11 = k00, k01, k10, k11
        if (t + 1) % every == 0 or t == n - 1:
            sm = max(abs(m00), abs(m01), abs(m10), abs(m11))
            m00 /= sm
            m01 /= sm
            m10 /= sm
            m11 /= sm
            log_m += math.log(sm)
            sw = max(abs(w00), abs(w01), abs(w10), abs(w11))
            w00 /= sw
            w01 /= sw
            w10 /= sw
            w11 /= sw
            log_w += math.log(sw)
    return (log_m + math.log(_spectral_norm(m00, m01, m10, m11)),
            log_w + math.log(_spectral_norm(w00, w01, w10, w11)))


def _replicates(A: CocycleMap, P: StochasticMatrix, n: int, reps: int, seed: int):
    if n < 1 or reps < 1:
        raise ValidationError("n and reps must be >= 1")
    mats = np.ascontiguousarray(A.matrices)
    invs = np.ascontiguousarray(np.linalg.inv(A.matrices))
    plus = np.empty(reps)
    minus = np.empty(reps)
    for r in range(reps):
        chain = sample_chain(P, n, seed=int(seed) ^ r)
        lf, li = _log_norms(mats, invs, chain[:n], RENORM_EVERY)
        if not (np.isfinite(lf) and np.isfinite(li)):
            raise FloatingPointError("product overflowed despite renormalization")
        plus[r] = lf / n
        minus[r] = -li / n
    return plus, minus


def _summarize(values: np.ndarray, n: int, method: str) -> ExponentEstimate:
    reps = values.size
    se = float(np.std(values, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return ExponentEstimate(float(np.mean(values)), se, n, reps, method)


def lambda_plus_monte_carlo(A: CocycleMap, P: StochasticMatrix, n: int = 100_000,
                            reps: int = 32, seed: int = 0) -> ExponentEstimate:
    plus, _ = _replicates(A, P, n, reps, seed)
    return _summarize(plus, n, "monte_carlo")


def lyapunov_sum_exact(A: CocycleMap, P: StochasticMatrix) -> float:
    """lambda_+ + lambda_- = sum_i p_i log|det A(i)|."""
    return float(np.sum(P.p * np.log(np.abs(A.dets()))))


def combined_stderr(*estimates: ExponentEstimate) -> float:
    return float(np.sqrt(sum(e.stderr**2 for e in estimates)))


def lambda_pair(A: CocycleMap, P: StochasticMatrix, n: int = 100_000, reps: int = 32,
                seed: int = 0) -> ExponentPair:
    """Both exponents; lambda_- directly from co-norms and via the determinant sum."""
    plus_v, minus_v = _replicates(A, P, n, reps, seed)
    plus = _summarize(plus_v, n, "monte_carlo")
    minus = _summarize(minus_v, n, "monte_carlo_conorm")
    exact = lyapunov_sum_exact(A, P)
    via_sum = ExponentEstimate(exact - plus.value, plus.stderr, n, reps, "determinant_sum")
    tol = 3 * combined_stderr(minus, via_sum)
    consistent = abs(minus.value - via_sum.value) <= max(tol, 1e-12)
    if not consistent:
        warnings.warn(
            f"direct lambda_- {minus.value:.6g} and determinant-sum lambda_- "
            f"{via_sum.value:.6g} differ by more than {tol:.3g}", RuntimeWarning)
    return ExponentPair(plus, minus, via_sum, exact, consistent)


def log_growth_table(A: CocycleMap, N: int) -> np.ndarray:
    """log ||A(i) u|| at every bin center, shape (q, N)."""
    theta = (np.arange(N) + 0.5) * np.pi / N
    img = A.matrices @ unit(theta)
    return np.log(np.linalg.norm(img, axis=1))


def furstenberg_integral(A: CocycleMap, P: StochasticMatrix, eta: MeasureVector) -> float:
    """sum_i p_i  integral of log ||A(i) v|| d eta_i(v) for unit v at bin centers."""
    eta.require_unit()
    if eta.q != A.q:
        raise ValidationError("measure vector and cocycle disagree on q")
    table = log_growth_table(A, eta.N)
    return float(np.sum(P.p * np.sum(table * eta.masses, axis=1)))
