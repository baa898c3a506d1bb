"""Relativistic Newton equation: kinematics, reference integrator, Picard solver.

The motion is ``p' = F(x)`` with ``p = x' / sqrt(1 - |x'|^2 / c^2)``.  A
trajectory with incoming asymptote ``v t + x`` is written
``x(t) = v t + x + y(t)``; both solvers work with the deflection ``y``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bounds as _bounds
from .integrator import BatchResult, IntegrationError, integrate_batch
from .potential import PotentialModel
from .quadrature import PanelGrid, line_grid, power_tail

__all__ = [
    "g_map",
    "gamma_map",
    "g_increment",
    "dg_apply",
    "energy",
    "Trajectory",
    "integrate_oracle",
    "oracle_batch",
    "FunctionTable",
    "norm_MT",
    "PicardConfig",
    "PicardResult",
    "ConvergenceError",
    "picard_solve",
    "apply_map",
    "IntegrationError",
]


# --- kinematics ------------------------------------------------------------

def g_map(p, c: float) -> np.ndarray:
    """Velocity from momentum, ``p / sqrt(1 + |p|^2 / c^2)``."""
    p = np.asarray(p, dtype=float)
    w = np.sqrt(1.0 + np.sum(p * p, axis=-1, keepdims=True) / (c * c))
    return p / w


def gamma_map(v, c: float) -> np.ndarray:
    """Momentum from velocity; rejects ``|v| >= c``."""
    v = np.asarray(v, dtype=float)
    sq = np.sum(v * v, axis=-1, keepdims=True)
    if np.any(sq >= c * c):
        raise ValueError(f"speed must be below c = {c}")
    return v / np.sqrt(1.0 - sq / (c * c))


def g_increment(P, dP, c: float) -> np.ndarray:
    """``g(P + dP) - g(P)`` without cancellation for small ``dP``."""
    P = np.asarray(P, dtype=float)
    dP = np.asarray(dP, dtype=float)
    c2 = c * c
    w0 = np.sqrt(1.0 + np.sum(P * P, axis=-1, keepdims=True) / c2)
    Q = P + dP
    w1 = np.sqrt(1.0 + np.sum(Q * Q, axis=-1, keepdims=True) / c2)
    num = 2.0 * np.sum(P * dP, axis=-1, keepdims=True) + np.sum(dP * dP, axis=-1, keepdims=True)
    return dP / w1 - P * num / (c2 * w0 * w1 * (w0 + w1))


def dg_apply(P, u, c: float) -> np.ndarray:
    """Jacobian of ``g`` at ``P`` applied to ``u``."""
    c2 = c * c
    w = np.sqrt(1.0 + np.sum(P * P, axis=-1, keepdims=True) / c2)
    return u / w - P * np.sum(P * u, axis=-1, keepdims=True) / (c2 * w ** 3)


def energy(model: PotentialModel, x, p) -> np.ndarray:
    c = model.c
    p = np.asarray(p, dtype=float)
    return c * c * np.sqrt(1.0 + np.sum(p * p, axis=-1) / (c * c)) + model.V(np.asarray(x, float))


# --- reference integrator ----------------------------------------------------

STEP_FRACTION = 0.5

@dataclass
class Trajectory:
    """Sampled solution with the deflection variables kept separately.

    ``m = y - t y'`` is integrated as its own state so that the position
    shift of the outgoing asymptote is free of cancellation.
    """

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    E: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    m: np.ndarray
    q: np.ndarray
    v_minus: np.ndarray
    x_minus: np.ndarray
    start_error: float
    n_steps: int
    status: str = "ok"

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.E - self.E[0])) / abs(self.E[0]))

    def to_csv(self, path, header: Sequence[str] = ()) -> None:
        d = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)] + ["E"])
            for k in range(self.t.size):
                w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]]
                           + [repr(float(v)) for v in self.p[k]] + [repr(float(self.E[k]))])


def _check_asymptote(model: PotentialModel, v, x) -> tuple[np.ndarray, np.ndarray]:
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if v.shape != x.shape or v.shape[1] != model.d:
        raise ValueError(f"velocity and position must both have shape (N, {model.d})")
    s = np.linalg.norm(v, axis=1)
    if np.any(s == 0):
        raise ValueError("incoming velocity must be non-zero")
    if np.any(s >= model.c):
        raise ValueError(f"incoming speed must be below c = {model.c}")
    return v, x


def _length_scale(model: PotentialModel, x: np.ndarray) -> np.ndarray:
    return 1.0 + np.linalg.norm(x, axis=-1) + model.core_radius


def _tail_span(model: PotentialModel, L: np.ndarray, s: np.ndarray, rel: float) -> float:
    """Time beyond which the neglected force tail is below ``rel`` (relative)."""
    if not any(model.beta):
        return float(np.max(10.0 * L / s))
    expo = max(model.alpha - 1.0, 0.05)
    factor = min(rel ** (-1.0 / expo), 1e30)
    return float(np.max(np.sqrt(2.0) * L / s * factor))


def _start_tail(model: PotentialModel, v: np.ndarray, x: np.ndarray, t0: float) -> np.ndarray:
    """Bound on the momentum transfer before ``t0`` along the free line."""
    s = np.linalg.norm(v, axis=1)
    vhat = v / s[:, None]
    par = np.sum(x * vhat, axis=1)
    perp = np.linalg.norm(x - par[:, None] * vhat, axis=1)
    amp = model.beta[1] * np.sqrt(model.d)
    out = np.empty(s.size)
    for i in range(s.size):
        dist = abs(s[i] * t0 + par[i])
        out[i] = power_tail(amp, 1.0 + (perp[i] + model.core_radius) / np.sqrt(2),
                            s[i] / np.sqrt(2), dist / s[i], model.alpha + 1.0)
    return out


def _force_scale(model: PotentialModel, v: np.ndarray, x: np.ndarray, L: np.ndarray) -> np.ndarray:
    s = np.linalg.norm(v, axis=1)
    taus = np.linspace(-4.0, 4.0, 17)
    pts = x[None] + (taus[:, None] * (L / s)[None, :])[..., None] * v[None] / s[None, :, None]
    f = np.max(np.linalg.norm(model.F(pts), axis=-1), axis=0)
    return f * 2.0 * L / s


def oracle_batch(model: PotentialModel, v, x, t_span: tuple[float, float] | None = None, *,
                 tol: float = 1e-10, t_eval=None, start_tol: float = 1e-14,
                 max_steps: int = 200_000, y_start: np.ndarray | None = None) -> tuple[BatchResult, dict]:
    """Integrate a batch of trajectories in deflection variables ``(y, q, m)``.

    ``q = p - gamma(v)`` is the momentum transfer and ``m = y - t y'``.
    The state starts at zero, i.e. on the free incoming line; the neglected
    momentum transfer before ``t0`` is reported as ``start_error``.  A
    non-default ``y_start`` continues an earlier run from ``t_span[0]``.
    """
    v, x = _check_asymptote(model, v, x)
    N, d = v.shape
    c = model.c
    s = np.linalg.norm(v, axis=1)
    L = _length_scale(model, x)
    if t_span is None:
        span = _tail_span(model, L, s, start_tol)
        t_span = (-span, span)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        t0 = min(t0, float(t_eval[0]))
        t1 = max(t1, float(t_eval[-1]))
    gam = gamma_map(v, c)

    def rhs(t, Y):
        yv = Y[:, :d]
        qv = Y[:, d:2 * d]
        force = model.F(v * t + x + yv)
        P = gam + qv
        ydot = g_increment(gam, qv, c)
        mdot = -t * dg_apply(P, force, c)
        return np.concatenate([ydot, force, mdot], axis=1)

    scale_q = _force_scale(model, v, x, L)
    scale_q = np.where(scale_q > 0, scale_q, 1.0)
    scale_y = scale_q * L / s
    atol = 1e-2 * tol * np.concatenate([np.repeat(scale_y[:, None], d, 1),
                                        np.repeat(scale_q[:, None], d, 1),
                                        np.repeat(scale_y[:, None], d, 1)], axis=1)
    Y0 = np.zeros((N, 3 * d)) if y_start is None else np.asarray(y_start, dtype=float)
    # a step must not jump across the interaction region unseen
    L_min, s_min, s_max = float(L.min()), float(s.min()), float(s.max())

    def step_cap(t):
        return STEP_FRACTION * (L_min + s_min * abs(t)) / s_max

    res = integrate_batch(rhs, t0, t1, Y0, rtol=tol, atol=atol, t_eval=t_eval,
                          max_steps=max_steps, step_cap=step_cap)
    info = {"t0": t0, "t1": t1, "start_error": _start_tail(model, v, x, t0),
            "end_error": _start_tail(model, v, x, -t1), "v": v, "x": x, "gamma": gam}
    return res, info


def integrate_oracle(model: PotentialModel, v_minus, x_minus,
                     t_span: tuple[float, float] | None = None, *, tol: float = 1e-10,
                     t_eval=None, start_tol: float = 1e-14) -> Trajectory:
    """Reference trajectory for one incoming asymptote ``v_minus t + x_minus``.

    Without ``t_eval`` the output is sampled at ``n = 401`` times spread
    over the interaction region plus the two end points.
    """
    v, x = _check_asymptote(model, np.reshape(v_minus, (1, -1)), np.reshape(x_minus, (1, -1)))
    if t_eval is None:
        L = float(_length_scale(model, x)[0])
        s = float(np.linalg.norm(v))
        if t_span is None:
            span = _tail_span(model, np.array([L]), np.array([s]), start_tol)
            t_span = (-span, span)
        core = 20.0 * L / s
        lo, hi = max(t_span[0], -core), min(t_span[1], core)
        t_eval = np.unique(np.concatenate([[t_span[0]], np.linspace(lo, hi, 401), [t_span[1]]]))
    res, info = oracle_batch(model, v, x, t_span, tol=tol, t_eval=t_eval, start_tol=start_tol)
    d = model.d
    Y = res.y[:, 0, :]
    t = res.t
    y, q, m = Y[:, :d], Y[:, d:2 * d], Y[:, 2 * d:]
    gam = info["gamma"][0]
    p = gam + q
    xs = v[0] * t[:, None] + x[0] + y
    ydot = g_increment(gam, q, model.c)
    return Trajectory(t=t, x=xs, p=p, E=energy(model, xs, p), y=y, ydot=ydot, m=m, q=q,
                      v_minus=v[0], x_minus=x[0], start_error=float(info["start_error"][0]),
                      n_steps=res.n_steps)


# --- Picard iteration ----------------------------------------------------------

@dataclass
class FunctionTable:
    """Values of ``f``, ``f'`` and ``f - t f'`` on time nodes."""

    t: np.ndarray
    f: np.ndarray
    fdot: np.ndarray
    fm: np.ndarray | None = None

    def moment(self) -> np.ndarray:
        if self.fm is not None:
            return self.fm
        return self.f - self.t[:, None] * self.fdot


def norm_MT(table: FunctionTable) -> float:
    """``max(sup |f'|, sup |f - t f'|)`` over the tabulated nodes."""
    a = np.max(np.linalg.norm(table.fdot, axis=-1)) if table.t.size else 0.0
    b = np.max(np.linalg.norm(table.moment(), axis=-1)) if table.t.size else 0.0
    return float(max(a, b))


@dataclass(frozen=True)
class PicardConfig:
    """Settings for the fixed-point solve.

    ``r`` is the radius of the admissible ball, ``T`` the end of the time
    interval (``inf`` for the whole line), ``tol`` the relative accuracy of
    the returned fixed point.
    """

    r: float = 0.5
    T: float = float("inf")
    tol: float = 1e-12
    max_iter: int = 100
    quadrature: str = "gauss-legendre"
    order: int = 16
    n_core: int = 16
    core_factor: float = 4.0
    check_hypotheses: bool = True
    keep_iterates: bool = False

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ValueError(f"ball radius r = {self.r} must lie in (0, 1]")
        if self.quadrature != "gauss-legendre":
            raise ValueError(f"unsupported quadrature {self.quadrature!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass
class MapValue:
    """One application of the integral map with its by-products."""

    table: FunctionTable
    force: np.ndarray        # F along the current trajectory
    P: np.ndarray            # running momentum transfer from the left end
    Q: np.ndarray            # remaining momentum transfer to the right end
    P_total: np.ndarray
    R: np.ndarray            # int_t^inf tau Dg F dtau
    k: np.ndarray            # outgoing velocity shift
    l: np.ndarray            # outgoing position shift (moment form)
    l_direct: np.ndarray     # the same from the split-integral form


@dataclass
class PicardResult:
    table: FunctionTable
    grid: PanelGrid = field(repr=False)
    value: MapValue = field(repr=False)
    first: MapValue = field(repr=False)
    diff_norms: list[float]
    contraction_rate: float
    converged: bool
    n_iter: int
    lambda_bound: float
    mu_bound: float
    tail_error: float
    iterates: list[FunctionTable] = field(default_factory=list, repr=False)

    @property
    def a_sc(self) -> np.ndarray:
        return self.value.k

    @property
    def b_sc(self) -> np.ndarray:
        return self.value.l


def _time_grid(model: PotentialModel, v, x, cfg: PicardConfig) -> PanelGrid:
    s = float(np.linalg.norm(v))
    L = float(_length_scale(model, np.asarray(x)))
    core = cfg.core_factor * L / s
    n_core = max(cfg.n_core, int(np.ceil(2.0 * core * s / 0.75)))
    return line_grid(core, model.alpha, upper=cfg.T, n_core=n_core, order=cfg.order)


def apply_map(model: PotentialModel, v, x, grid: PanelGrid, f: np.ndarray) -> MapValue:
    """Evaluate the integral map at the tabulated deflection ``f``."""
    c = model.c
    t = grid.nodes
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    gam = gamma_map(v, c)
    force = model.F(v[None, :] * t[:, None] + x[None, :] + f)
    P = grid.cumulative(force)
    Q = grid.cumulative_reverse(force)
    P_total = grid.integrate(force)
    U = g_increment(gam, P, c)
    A = grid.cumulative(U)
    integrand = t[:, None] * dg_apply(gam + P, force, c)
    M = -grid.cumulative(integrand)
    R = grid.cumulative_reverse(integrand)
    l_moment = -grid.integrate(integrand)
    k = g_increment(gam, P_total, c)
    # split form: left of 0 use g(gamma + P) - v, right of 0 use g(gamma + P) - g(gamma + P_total)
    right = g_increment(gam + P_total, -Q, c)
    left_mask = (t <= 0)[:, None]
    l_direct = grid.integrate(np.where(left_mask, U, right))
    return MapValue(table=FunctionTable(t=t, f=A, fdot=U, fm=M), force=force, P=P, Q=Q,
                    P_total=P_total, R=R, k=k, l=l_moment, l_direct=l_direct)


def _diff_norm(a: FunctionTable, b: FunctionTable) -> float:
    return norm_MT(FunctionTable(t=a.t, f=a.f - b.f, fdot=a.fdot - b.fdot, fm=a.moment() - b.moment()))


def picard_solve(model: PotentialModel, v_minus, x_minus, cfg: PicardConfig | None = None) -> PicardResult:
    """Solve the fixed-point form of the scattering problem by Picard iteration.

    Iterates ``f_{k+1} = A(f_k)`` from ``f_0 = 0`` on composite Gauss nodes and
    stops once the a-posteriori error ``lam / (1 - lam) * |f_{k+1} - f_k|``
    is below ``tol * |f_{k+1}|``, where ``lam`` is the larger of the proven
    contraction constant and the observed ratio of successive differences.
    """
    cfg = cfg or PicardConfig()
    v = np.asarray(v_minus, dtype=float).ravel()
    x = np.asarray(x_minus, dtype=float).ravel()
    if v.size != model.d or x.size != model.d:
        raise ValueError(f"asymptote vectors must have length {model.d}")
    s = float(np.linalg.norm(v))
    if s == 0:
        raise ValueError("incoming velocity must be non-zero")
    if s >= model.c:
        raise ValueError(f"incoming speed must be below c = {model.c}")
    X = float(np.linalg.norm(x))
    if abs(v @ x) > 1e-12 * s * (1.0 + X):
        raise ValueError("incoming data must satisfy v . x = 0")

    lam_bound = mu_b = float("nan")
    if cfg.check_hypotheses:
        p = _bounds.inputs_from_model(model, r=cfg.r, s=s, x_norm=X,
                                      T=cfg.T if cfg.T <= 0 else 0.0)
        bs = _bounds.eval_bounds(p)
        if s < bs.z1:
            raise _bounds.HypothesisError("z1", f"speed {s:.6g} is below z1 = {bs.z1:.6g}")
        if cfg.T <= 0:
            lam_bound, mu_b = bs.lambda_T, bs.mu_T
        else:
            lam_bound, mu_b = bs.lam, bs.mu
        if not mu_b < 1:
            raise _bounds.HypothesisError(
                "mu", f"contraction bound mu = {mu_b:.6g} is not below 1 (speed must exceed z = {bs.z:.6g})")

    grid = _time_grid(model, v, x, cfg)
    t = grid.nodes
    zero = np.zeros((t.size, model.d))
    current = FunctionTable(t=t, f=zero, fdot=zero, fm=zero)
    first = apply_map(model, v, x, grid, zero)
    value = first
    history: list[float] = []
    ratios: list[float] = []
    iterates = [current] if cfg.keep_iterates else []
    eps = np.finfo(float).eps
    converged = False
    for it in range(1, cfg.max_iter + 1):
        new = value.table
        if cfg.keep_iterates:
            iterates.append(new)
        diff = _diff_norm(new, current)
        size = norm_MT(new)
        noise = 1e3 * eps * max(size, 1e-300)
        if history and history[-1] > 1e3 * noise:
            ratios.append(diff / history[-1])
        history.append(diff)
        observed = max(ratios) if ratios else 0.0
        lam = max(observed, lam_bound if np.isfinite(lam_bound) else 0.0)
        if not ratios and not np.isfinite(lam_bound):
            lam = 0.5
        if diff == 0.0 or diff <= noise:
            converged = True
        elif lam < 1 and lam / (1.0 - lam) * diff <= cfg.tol * size and it >= 2:
            converged = True
        current = new
        if converged:
            break
        value = apply_map(model, v, x, grid, current.f)
    if not converged:
        raise ConvergenceError(
            f"Picard iteration did not converge in {cfg.max_iter} iterations "
            f"(last difference {history[-1]:.3e})", history)
    tail = power_tail(model.beta[1] * np.sqrt(model.d), 1.0 + X / np.sqrt(2), s / np.sqrt(2),
                      -grid.edges[0], model.alpha + 1.0)
    return PicardResult(table=current, grid=grid, value=value, first=first,
                        diff_norms=history, contraction_rate=max(ratios) if ratios else 0.0,
                        converged=True, n_iter=len(history), lambda_bound=lam_bound,
                        mu_bound=mu_b, tail_error=float(tail), iterates=iterates)
