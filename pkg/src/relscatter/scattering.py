"""Scattering data ``(a_sc, b_sc)`` and checks of the small-angle estimates.

For incoming data ``(v, x)`` the outgoing asymptote is
``(v + a_sc) t + x + b_sc``.  Two independent routes are provided: the
reference ODE integrator and the fixed-point functionals of the Picard
solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bounds as _bounds
from .dynamics import (PicardConfig, PicardResult, _check_asymptote, _length_scale,
                       _tail_span, apply_map, energy, g_increment, gamma_map, oracle_batch,
                       picard_solve)
from .potential import PotentialModel
from .quadrature import line_grid

__all__ = [
    "ScatteringDatum",
    "CaptureError",
    "scattering_via_oracle",
    "scattering_batch",
    "scattering_via_functionals",
    "Margin",
    "Theorem31Report",
    "verify_theorem31",
    "Theorem32Report",
    "verify_theorem32",
    "line_functionals",
]


class CaptureError(RuntimeError):
    """No outgoing free motion was detected within the horizon."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass
class ScatteringDatum:
    v_minus: np.ndarray
    x_minus: np.ndarray
    a_sc: np.ndarray
    b_sc: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def v_plus(self) -> np.ndarray:
        return self.v_minus + self.a_sc

    @property
    def x_plus(self) -> np.ndarray:
        return self.x_minus + self.b_sc

    def speed_change(self) -> float:
        """``| |v+| - |v-| | / |v-|`` evaluated without cancellation."""
        v, a = self.v_minus, self.a_sc
        num = 2.0 * float(v @ a) + float(a @ a)
        s_plus = float(np.linalg.norm(v + a))
        s = float(np.linalg.norm(v))
        return abs(num) / ((s_plus + s) * s)


def _escaping(xv: np.ndarray, xdot: np.ndarray, t: float) -> np.ndarray:
    radial = np.sum(xv * xdot, axis=1) > 0
    far = np.linalg.norm(xv, axis=1) >= 0.5 * np.linalg.norm(xdot, axis=1) * t
    return radial & far


def scattering_via_oracle(model: PotentialModel, v_minus, x_minus, *, tol: float = 1e-10,
                          horizon: float = 1e5, start_tol: float = 1e-14) -> ScatteringDatum:
    """Scattering data from the reference integrator.

    The trajectory is first followed up to ``horizon``; if by then it is not
    moving outwards on a nearly free line a :class:`CaptureError` is raised.
    Otherwise integration continues until the remaining force tail is
    negligible and the asymptote is read off the ``(q, m)`` states.
    """
    v = np.asarray(v_minus, dtype=float).reshape(1, -1)
    x = np.asarray(x_minus, dtype=float).reshape(1, -1)
    v, x = _check_asymptote(model, v, x)
    d, c = model.d, model.c
    s = np.linalg.norm(v, axis=1)
    L = _length_scale(model, x)
    span = _tail_span(model, L, s, start_tol)
    t_check = min(horizon, span)
    res1, info = oracle_batch(model, v, x, (-span, t_check), tol=tol, start_tol=start_tol,
                              t_eval=np.array([-span, 0.0, t_check]))
    gam = info["gamma"]
    Y = res1.y_final
    xdot = v + g_increment(gam, Y[:, d:2 * d], c)
    xpos = v * t_check + x + Y[:, :d]
    if not _escaping(xpos, xdot, t_check)[0]:
        report = {"status": "captured", "horizon": horizon, "t": t_check,
                  "position": xpos[0].tolist(), "velocity": xdot[0].tolist()}
        raise CaptureError(f"no outgoing asymptote detected within horizon {horizon:g}", report)
    energies = [energy(model, v * tt + x + yy[:, :d], gam + yy[:, d:2 * d])[0]
                for tt, yy in zip(res1.t, res1.y)]
    n_steps = res1.n_steps
    if span > t_check:
        res2, _ = oracle_batch(model, v, x, (t_check, span), tol=tol, y_start=Y)
        Y = res2.y_final
        n_steps += res2.n_steps
        energies.append(energy(model, v * span + x + Y[:, :d], gam + Y[:, d:2 * d])[0])
    q, m = Y[0, d:2 * d], Y[0, 2 * d:]
    a_sc = g_increment(gam[0], q, c)
    E = np.asarray(energies)
    diag = {"t0": -span, "t1": span, "start_error": float(info["start_error"][0]),
            "end_error": float(info["end_error"][0]), "n_steps": n_steps,
            "energy_drift": float(np.max(np.abs(E - E[0])) / abs(E[0])), "tol": tol}
    datum = ScatteringDatum(v_minus=v[0], x_minus=x[0], a_sc=a_sc, b_sc=m.copy(),
                            method="oracle", diagnostics=diag)
    diag["speed_change"] = datum.speed_change()
    return datum


def scattering_batch(model: PotentialModel, v, x, *, tol: float = 1e-9,
                     start_tol: float = 1e-12, chunk: int | None = None) -> dict:
    """Scattering data for many lines at once with the reference integrator.

    Returns arrays ``a_sc``, ``b_sc`` of shape ``(N, d)`` plus the relative
    speed change and an escape flag per line.
    """
    v, x = _check_asymptote(model, v, x)
    N, d = v.shape
    chunk = N if chunk is None else chunk
    a_all, b_all, dv_all, esc_all = [], [], [], []
    steps = 0
    for lo in range(0, N, chunk):
        vs, xs = v[lo:lo + chunk], x[lo:lo + chunk]
        res, info = oracle_batch(model, vs, xs, tol=tol, start_tol=start_tol)
        Y = res.y_final
        gam = info["gamma"]
        a = g_increment(gam, Y[:, d:2 * d], model.c)
        a_all.append(a)
        b_all.append(Y[:, 2 * d:])
        num = 2.0 * np.sum(vs * a, axis=1) + np.sum(a * a, axis=1)
        sp = np.linalg.norm(vs + a, axis=1)
        sm = np.linalg.norm(vs, axis=1)
        dv_all.append(np.abs(num) / ((sp + sm) * sm))
        t1 = info["t1"]
        esc_all.append(_escaping(vs * t1 + xs + Y[:, :d], vs + a, t1))
        steps += res.n_steps
    return {"a_sc": np.concatenate(a_all), "b_sc": np.concatenate(b_all),
            "speed_change": np.concatenate(dv_all), "escaped": np.concatenate(esc_all),
            "n_steps": steps}


def scattering_via_functionals(model: PotentialModel, v_minus, x_minus,
                               cfg: PicardConfig | None = None) -> tuple[ScatteringDatum, PicardResult]:
    """Scattering data from the fixed point of the integral map."""
    res = picard_solve(model, v_minus, x_minus, cfg)
    diag = {"n_iter": res.n_iter, "contraction_rate": res.contraction_rate,
            "lambda_bound": res.lambda_bound, "mu_bound": res.mu_bound,
            "split_form_gap": float(np.max(np.abs(res.value.l - res.value.l_direct))),
            "tail_error": res.tail_error}
    datum = ScatteringDatum(v_minus=np.asarray(v_minus, float), x_minus=np.asarray(x_minus, float),
                            a_sc=res.a_sc.copy(), b_sc=res.b_sc.copy(), method="functionals",
                            diagnostics=diag)
    datum.diagnostics["speed_change"] = datum.speed_change()
    return datum, res


# --- line integrals of the potential and force ------------------------------

def line_functionals(model: PotentialModel, theta, x, *, order: int = 16) -> dict:
    """Single-integral forms of the line functionals along ``u theta + x``.

    Returns ``PF = int F``, ``PV = int V``, ``I_minus = int_{u<0} |u| F`` and
    ``I_plus = int_{u>0} u F``; the last two equal the iterated integrals of
    ``F`` over ``tau < 0`` and ``tau > 0`` respectively.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    L = 1.0 + np.linalg.norm(x) + model.core_radius
    grid = line_grid(4.0 * L, model.alpha, n_core=32, order=order, rel_tail=1e-18)
    u = grid.nodes
    pts = u[:, None] * theta[None, :] + x[None, :]
    F = model.F(pts)
    V = model.V(pts)
    w = grid.weights
    neg = u < 0
    return {"PF": w @ F, "PV": float(w @ V),
            "I_minus": (w * np.where(neg, -u, 0.0)) @ F,
            "I_plus": (w * np.where(neg, 0.0, u)) @ F,
            "grid": grid}


# --- estimate checks -----------------------------------------------------------

@dataclass
class Margin:
    bound: float
    observed: float

    @property
    def margin(self) -> float:
        return self.bound - self.observed

    def to_dict(self) -> dict:
        return {"bound": self.bound, "observed": self.observed, "margin": self.margin}


@dataclass
class Theorem31Report:
    margins: dict
    sup_angle: float
    bounds: _bounds.BoundSet = field(repr=False)
    picard: PicardResult = field(repr=False)

    @property
    def ok(self) -> bool:
        return all(m.margin >= 0 for m in self.margins.values()) and self.sup_angle < np.pi / 4

    def to_dict(self) -> dict:
        return {"ok": self.ok, "sup_angle": self.sup_angle,
                "margins": {k: m.to_dict() for k, m in self.margins.items()},
                "bounds": self.bounds.scalars(),
                "picard": {"n_iter": self.picard.n_iter,
                           "contraction_rate": self.picard.contraction_rate}}


def verify_theorem31(model: PotentialModel, v_minus, x_minus, cfg: PicardConfig | None = None) -> Theorem31Report:
    """Compare the deflection of the Picard solution with its proven envelopes.

    Raises :class:`~relscatter.bounds.HypothesisError` (naming the violated
    threshold) unless ``mu < 1`` and ``|v| >= z1``.
    """
    cfg = cfg or PicardConfig()
    if not np.isinf(cfg.T):
        raise ValueError("the scattering estimates need the whole time line (T = inf)")
    v = np.asarray(v_minus, dtype=float)
    x = np.asarray(x_minus, dtype=float)
    s = float(np.linalg.norm(v))
    X = float(np.linalg.norm(x))
    c = model.c
    p = _bounds.inputs_from_model(model, r=cfg.r, s=s, x_norm=X)
    bs = _bounds.eval_bounds(p)
    if s < bs.z1:
        raise _bounds.HypothesisError("z1", f"speed {s:.6g} is below z1 = {bs.z1:.6g}")
    if not bs.mu < 1:
        raise _bounds.HypothesisError("mu", f"mu = {bs.mu:.6g} >= 1 (speed must exceed z = {bs.z:.6g})")
    res = picard_solve(model, v, x, PicardConfig(**{**cfg.__dict__, "check_hypotheses": False}))
    t = res.table.t
    y, ydot = res.table.f, res.table.fdot
    val = res.value
    a_sc, b_sc = val.k, val.l
    neg = t <= 0
    posi = t >= 0
    margins = {}
    margins["ball"] = Margin(cfg.r, max(float(np.max(np.linalg.norm(ydot, axis=1))),
                                        float(np.max(np.linalg.norm(res.table.moment(), axis=1)))))

    def worst(bound_vals, obs):
        k = int(np.argmin(bound_vals - obs))
        return Margin(float(bound_vals[k]), float(obs[k]))

    margins["ydot_incoming"] = worst(bs.zeta_minus(t[neg]), np.linalg.norm(ydot[neg], axis=1))
    margins["y_incoming"] = worst(bs.xi_minus(t[neg]), np.linalg.norm(y[neg], axis=1))
    free = line_functionals(model, v / s, x)
    PF_line = free["PF"] / s            # time integral along v t + x
    gam = gamma_map(v, c)
    a_free = g_increment(gam, PF_line, c)
    eps = np.sqrt(1.0 - s * s / (c * c))
    margins["a_vs_free"] = Margin(bs.eps_a_prime, float(np.linalg.norm(a_sc - a_free)))
    margins["a_rescaled"] = Margin(bs.eps_a, float(np.linalg.norm(a_sc / eps - PF_line)))
    l0 = res.first.l
    margins["b_vs_l0"] = Margin(bs.eps_b, float(np.linalg.norm(b_sc - l0)))
    margins["a_size"] = Margin(2.0 * float(bs.zeta_minus(0.0)), float(np.linalg.norm(a_sc)))
    margins["b_size"] = Margin(2.0 * float(bs.xi_minus(0.0)), float(np.linalg.norm(b_sc)))
    hdot = g_increment(gam + val.P_total, -val.Q, c)
    h = val.R + t[:, None] * hdot
    margins["hdot_outgoing"] = worst(bs.zeta_plus(t[posi]), np.linalg.norm(hdot[posi], axis=1))
    margins["h_outgoing"] = worst(bs.xi_plus(t[posi]), np.linalg.norm(h[posi], axis=1))
    vel = v[None, :] + ydot
    cosang = (vel @ v) / (np.linalg.norm(vel, axis=1) * s)
    sup_angle = float(np.max(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return Theorem31Report(margins=margins, sup_angle=sup_angle, bounds=bs, picard=res)


@dataclass
class Theorem32Report:
    speeds: np.ndarray
    eps: np.ndarray
    discrepancy: np.ndarray      # |l(0)/eps - target|
    ratio: np.ndarray            # discrepancy / eps
    C_hat: float
    z2: float
    w: np.ndarray

    @property
    def stabilised(self) -> bool:
        r = self.ratio
        if r.size < 2:
            return False
        q = r[1:] / r[:-1]
        return bool(np.all((q >= 0.5) & (q <= 2.0)))

    def to_dict(self) -> dict:
        return {"speeds": self.speeds.tolist(), "eps": self.eps.tolist(),
                "discrepancy": self.discrepancy.tolist(), "ratio": self.ratio.tolist(),
                "C_hat": self.C_hat, "z2": self.z2, "stabilised": self.stabilised,
                "w": self.w.tolist()}


def first_position_shift(model: PotentialModel, v, x, *, order: int = 16) -> np.ndarray:
    """``l(0)``: the position shift functional along the free line ``v t + x``."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    s = float(np.linalg.norm(v))
    L = float(_length_scale(model, x))
    core = 4.0 * L / s
    n_core = max(32, int(np.ceil(2.0 * core * s / 0.5)))
    grid = line_grid(core, model.alpha, n_core=n_core, order=order, rel_tail=1e-18)
    return apply_map(model, v, x, grid, np.zeros((grid.size, model.d))).l


def verify_theorem32(model: PotentialModel, theta, x, speeds, *, check: bool = True) -> Theorem32Report:
    """Measure how fast the rescaled position shift approaches its limit.

    For each speed ``s`` computes ``D(s) = |l(0)/eps - PV theta / c^2 +
    I_plus / s^2 - I_minus / s^2|`` with ``eps = sqrt(1 - s^2/c^2)`` and
    reports ``D / eps`` and its supremum over the sample.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(theta) - 1.0) > 1e-12:
        raise ValueError("theta must be a unit vector")
    if abs(theta @ x) > 1e-12 * (1.0 + np.linalg.norm(x)):
        raise ValueError("x must be orthogonal to theta")
    c = model.c
    speeds = np.asarray(speeds, dtype=float)
    if np.any(speeds >= c) or np.any(speeds <= 0):
        raise ValueError("speeds must lie in (0, c)")
    z2 = float("nan")
    if check and model.beta[1] > 0:
        th = _bounds.solve_thresholds(_bounds.inputs_from_model(
            model, r=min(0.5, 0.5 * c), s=float(speeds.max()), x_norm=float(np.linalg.norm(x))))
        z2 = th.z2
        if np.any(speeds < z2):
            raise _bounds.HypothesisError("z2", f"speeds below z2 = {z2:.6g} were requested")
    fun = line_functionals(model, theta, x)
    eps = np.sqrt(1.0 - speeds ** 2 / c ** 2)
    disc = np.empty(speeds.size)
    for i, s in enumerate(speeds):
        l0 = first_position_shift(model, s * theta, x)
        target = fun["PV"] * theta / c ** 2 - fun["I_plus"] / s ** 2 + fun["I_minus"] / s ** 2
        disc[i] = float(np.linalg.norm(l0 / eps[i] - target))
    ratio = disc / eps
    w = fun["I_minus"] - fun["I_plus"] + fun["PV"] * theta
    return Theorem32Report(speeds=speeds, eps=eps, discrepancy=disc, ratio=ratio,
                           C_hat=float(np.max(ratio)), z2=z2, w=w)
