"""Batched explicit Runge-Kutta integration with embedded error control.

Many trajectories sharing one time axis are advanced together; the step is
controlled by the worst member of the batch in a mixed absolute/relative
max-norm.  The 8(5,3) Dormand-Prince coefficients are taken from SciPy's
public ``DOP853`` class attributes; the stepping loop is ours because SciPy's
solvers cannot share a step across a batch or compensate the time sum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import DOP853

__all__ = ["IntegrationError", "BatchResult", "integrate_batch"]

_A = np.asarray(DOP853.A, dtype=float)
_B = np.asarray(DOP853.B, dtype=float)
_C = np.asarray(DOP853.C, dtype=float)
_E3 = np.asarray(DOP853.E3, dtype=float)
_E5 = np.asarray(DOP853.E5, dtype=float)
_STAGES = int(DOP853.n_stages)
_EXPONENT = 1.0 / 8.0

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class IntegrationError(RuntimeError):
    """Step size collapsed or the step budget ran out."""


@dataclass
class BatchResult:
    t: np.ndarray          # (n_out,)
    y: np.ndarray          # (n_out, N, k)
    n_steps: int
    n_rejected: int
    t_final: float
    y_final: np.ndarray    # (N, k)


def _error_norm(K: np.ndarray, h: float, scale: np.ndarray) -> float:
    e5 = np.einsum("s,snk->nk", _E5, K) / scale
    e3 = np.einsum("s,snk->nk", _E3, K) / scale
    n5 = np.max(np.abs(e5), axis=1)
    n3 = np.max(np.abs(e3), axis=1)
    denom = np.sqrt(n5 * n5 + 0.01 * n3 * n3)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = np.where(denom > 0, abs(h) * n5 * n5 / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.max(err)) if err.size else 0.0


def integrate_batch(rhs: Callable[[float, np.ndarray], np.ndarray], t0: float, t1: float,
                    y0: np.ndarray, *, rtol: float, atol: np.ndarray | float,
                    t_eval: np.ndarray | None = None, first_step: float | None = None,
                    max_steps: int = 200_000, min_step_rel: float = 1e-14,
                    step_cap: Callable[[float], float] | None = None) -> BatchResult:
    """Integrate ``y' = rhs(t, y)`` for a batch ``y`` of shape ``(N, k)``.

    ``t_eval`` points (increasing, inside ``[t0, t1]``) are hit exactly by
    shortening steps; the time sum is Kahan-compensated in between.
    ``atol`` may be a scalar or broadcastable to ``(N, k)``.
    ``step_cap(t)`` optionally limits the step length as a function of time.
    """
    if not t1 > t0:
        raise ValueError("integration must run forward in time")
    y = np.array(y0, dtype=float)
    atol = np.broadcast_to(np.asarray(atol, dtype=float), y.shape)
    stops = [] if t_eval is None else [float(s) for s in np.asarray(t_eval, float)]
    if stops and (stops[0] < t0 or stops[-1] > t1 or np.any(np.diff(stops) <= 0)):
        raise ValueError("t_eval must be increasing and inside the integration span")
    targets = [s for s in stops if s > t0]
    if not targets or targets[-1] < t1:
        targets.append(float(t1))
    out_t, out_y = [], []
    if stops and stops[0] == t0:
        out_t.append(t0)
        out_y.append(y.copy())

    t, comp = float(t0), 0.0
    f = rhs(t, y)
    if first_step is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.max(np.abs(y) / scale)
        d1 = np.max(np.abs(f) / scale)
        # a zero state carries no length scale; fall back to a fraction of the span
        h = 1e-3 * (t1 - t0) if (d0 < 1e-5 or d1 < 1e-5) else min(0.01 * d0 / d1, 1e-3 * (t1 - t0))
    else:
        h = float(first_step)
    K = np.empty((_STAGES + 1,) + y.shape)
    err_prev = 1.0
    n_steps = n_rej = 0
    ti = 0
    while ti < len(targets):
        target = targets[ti]
        if step_cap is not None:
            h = min(h, step_cap(t))
        land = t + h >= target
        h_use = target - t if land else h
        K[0] = f
        for s in range(1, _STAGES):
            dy = np.tensordot(_A[s, :s], K[:s], axes=(0, 0)) * h_use
            K[s] = rhs(t + _C[s] * h_use, y + dy)
        y_new = y + h_use * np.tensordot(_B, K[:_STAGES], axes=(0, 0))
        t_new = target if land else t + h_use
        f_new = rhs(t_new, y_new)
        K[_STAGES] = f_new
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _error_norm(K, h_use, scale)
        if not np.isfinite(err):
            err = np.inf
        if err <= 1.0:
            n_steps += 1
            if land:
                t, comp = target, 0.0
                out_t.append(t)
                out_y.append(y_new.copy())
                ti += 1
            else:
                inc = h_use - comp
                ts = t + inc
                comp = (ts - t) - inc
                t = ts
            y, f = y_new, f_new
            if err == 0.0:
                fac = MAX_FACTOR
            else:
                fac = SAFETY * err ** (-0.7 * _EXPONENT) * err_prev ** (0.4 * _EXPONENT)
                fac = min(MAX_FACTOR, max(MIN_FACTOR, fac))
            err_prev = max(err, 1e-4)
            h = h_use * fac if not land or h_use >= h else max(h, h_use * fac)
        else:
            n_rej += 1
            fac = max(MIN_FACTOR, SAFETY * err ** -_EXPONENT) if np.isfinite(err) else MIN_FACTOR
            h = h_use * fac
        if h < min_step_rel * max(1.0, abs(t)):
            raise IntegrationError(f"step size collapsed to {h:.3e} at t = {t:.6e}")
        if n_steps + n_rej > max_steps:
            raise IntegrationError(f"step budget of {max_steps} exhausted at t = {t:.6e}")
    return BatchResult(t=np.asarray(out_t), y=np.asarray(out_y), n_steps=n_steps,
                       n_rejected=n_rej, t_final=t, y_final=y)
