"""Expected Improvement and candidate proposal with random interleaving."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ExhaustedError, NumericsError
from .surrogate import FitSnapshot, predict

__all__ = ["Proposal", "expected_improvement", "propose"]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Proposal:
    prompt_id: int
    source: str  # "model" or "random"
    ei: float | None = None


def expected_improvement(mu, sigma, v_min: float):
    """EI for minimization: ``E[max(v_min - X, 0)]`` with ``X ~ N(mu, sigma^2)``.

    Vectorized over ``mu``/``sigma``; degenerate ``sigma == 0`` collapses to
    ``max(v_min - mu, 0)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if not (np.isfinite(mu).all() and np.isfinite(sigma).all() and np.isfinite(v_min)):
        raise NumericsError("expected improvement requires finite inputs")
    if np.any(sigma < 0):
        raise NumericsError("sigma must be non-negative")
    improvement = v_min - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(sigma > 0, improvement / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei_pos = improvement * ndtr(t) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * t * t)
    ei = np.where(sigma > 0, ei_pos, np.maximum(improvement, 0.0))
    return ei if ei.ndim else float(ei)


def propose(
    snapshot: FitSnapshot | None,
    candidates,
    v_min: float,
    rng: np.random.Generator,
    rho: float = 0.1,
) -> Proposal:
    """Pick the next prompt: EI argmax, or a uniform draw when interleaving.

    One uniform variate is always consumed for the interleaving decision, so
    proposal streams stay aligned across configurations that differ only in
    ``rho`` or in whether a surrogate is available.  Ties on EI break toward
    the lowest prompt id.
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ExhaustedError("no candidate prompts remain")
    u = rng.random()
    if snapshot is None or u < rho:
        pick = cands[int(rng.integers(len(cands)))]
        return Proposal(prompt_id=pick, source="random")
    mu, sigma = predict(snapshot, cands)
    ei = expected_improvement(mu, sigma, v_min)
    best = int(np.argmax(ei))  # first max wins; cands sorted, so lowest id
    return Proposal(prompt_id=cands[best], source="model", ei=float(ei[best]))
