"""Closed-form contraction and asymptotic bounds, and their speed thresholds.

Every scalar is evaluated in ``mpmath`` at 40 significant digits and
returned as a float; thresholds are found by bisection in the same
precision.  The time-dependent envelopes (``zeta``/``xi``) are returned as
numpy callables.

Notation used throughout: ``s = |v|``, ``X = |x|``, ``b = s/sqrt(2) - r``,
``e = s/sqrt(2) + 1 - r``, ``a = 1 + X/sqrt(2)`` and the kinematic factor
``K = (1 + s^2 / (4 (c^2 - s^2))) ** -1/2``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import mpmath as mp
import numpy as np

__all__ = [
    "BoundInputs",
    "BoundSet",
    "Thresholds",
    "HypothesisError",
    "eval_bounds",
    "solve_thresholds",
    "check_theorem11_rhs",
    "mu_value",
    "inputs_from_model",
]

DPS = 40


class HypothesisError(ValueError):
    """A speed or size hypothesis of a bound is violated.

    ``threshold`` names the violated condition (``"z"``, ``"z1"``, ``"z2"``,
    ``"mu"``, ``"r"``...).
    """

    def __init__(self, threshold: str, message: str):
        super().__init__(f"[{threshold}] {message}")
        self.threshold = threshold


@dataclass(frozen=True)
class BoundInputs:
    """Parameters entering the bounds."""

    c: float
    d: int
    alpha: float
    beta0: float
    beta1: float
    beta2: float
    r: float
    s: float
    x_norm: float = 0.0
    T: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if min(self.beta0, self.beta1, self.beta2) < 0:
            raise ValueError("decay constants must be non-negative")
        if not 0 < self.r <= 1:
            raise HypothesisError("r", f"radius r = {self.r} must lie in (0, 1]")
        if not self.r < self.c / np.sqrt(2):
            raise HypothesisError("r", f"radius r = {self.r} must be below c/sqrt(2)")
        if self.x_norm < 0:
            raise ValueError("|x| must be non-negative")

    @property
    def beta_tilde(self) -> float:
        return max(self.beta1, self.beta2)

    def with_speed(self, s: float) -> "BoundInputs":
        return BoundInputs(**{**asdict(self), "s": float(s)})


def inputs_from_model(model, *, r: float, s: float, x_norm: float = 0.0,
                      T: float = 0.0) -> BoundInputs:
    return BoundInputs(c=model.c, d=model.d, alpha=model.alpha, beta0=model.beta[0],
                       beta1=model.beta[1], beta2=model.beta[2], r=r, s=s,
                       x_norm=x_norm, T=T)


class _Ctx:
    """High-precision copies of the inputs plus shared sub-expressions."""

    def __init__(self, p: BoundInputs, s=None):
        self.c = mp.mpf(p.c)
        self.d = mp.mpf(p.d)
        self.al = mp.mpf(p.alpha)
        self.b1 = mp.mpf(p.beta1)
        self.b2 = mp.mpf(p.beta2)
        self.bt = max(self.b1, self.b2)
        self.r = mp.mpf(p.r)
        self.s = mp.mpf(p.s if s is None else s)
        self.X = mp.mpf(p.x_norm)
        self.T = mp.mpf(p.T)
        sq2 = mp.sqrt(2)
        self.sd = self.d * mp.sqrt(self.d)
        self.b = self.s / sq2 - self.r
        self.e = self.s / sq2 + 1 - self.r
        self.a = 1 + self.X / sq2
        self.K = 1 / mp.sqrt(1 + self.s ** 2 / (4 * (self.c ** 2 - self.s ** 2)))


def _mu(k: _Ctx):
    return (k.K * 2 ** (2 * k.al + 6) * (1 + 3 * k.bt / k.c) * k.d * k.sd * k.bt * k.e ** 3
            / (k.r * (k.al - 1) * k.b ** 4 * k.a ** (k.al - 1)))


def _sigma1(k: _Ctx):
    lorentz = k.s / mp.sqrt(1 - k.s ** 2 / k.c ** 2)
    return lorentz - 2 ** (k.al + 4) * k.b1 * mp.sqrt(k.d) / (
        k.al * k.b * (k.X / mp.sqrt(2) + 1) ** k.al)


def _sigma2(k: _Ctx):
    lorentz = k.s / mp.sqrt(1 - k.s ** 2 / k.c ** 2)
    return lorentz - 8 * k.b1 * mp.sqrt(k.d) / (
        k.al * (k.s / mp.sqrt(2)) * k.a ** k.al)


def mu_value(p: BoundInputs, s: float | None = None) -> float:
    with mp.workdps(DPS):
        return float(_mu(_Ctx(p, s)))


@dataclass
class Thresholds:
    """Speed thresholds with bracketing diagnostics.

    ``residuals`` are evaluated at the working-precision root (kept as
    strings in ``exact``); ``residuals_float`` at the rounded double, which
    can be much larger when the defining function is steep near ``c``.
    ``flags`` maps a threshold name to ``"always-contractive"`` (or
    ``"always-satisfied"``) when the defining function has no sign change
    because the relevant constant vanishes; the threshold is then the left
    end of its interval.
    """

    z: float
    z1: float
    z2: float
    flags: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    residuals_float: dict = field(default_factory=dict)
    brackets: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"z": self.z, "z1": self.z1, "z2": self.z2, "flags": dict(self.flags),
                "residuals": dict(self.residuals),
                "residuals_float": dict(self.residuals_float),
                "brackets": {k: list(v) for k, v in self.brackets.items()}}


def _bisect(fun: Callable, lo, hi, rel: float = 1e-30, max_iter: int = 400):
    """Root of an increasing function with ``fun(lo) < 0 < fun(hi)``."""
    flo, fhi = fun(lo), fun(hi)
    if not (flo < 0 < fhi):
        raise ArithmeticError("root is not bracketed")
    for _ in range(max_iter):
        mid = (lo + hi) / 2
        fm = fun(mid)
        if fm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel * abs(hi):
            break
    return lo, hi


def _round_out(v, direction: int) -> float:
    """Nearest double on the given side of ``v`` so float brackets still enclose the root."""
    f = float(v)
    if (direction < 0 and mp.mpf(f) > v) or (direction > 0 and mp.mpf(f) < v):
        f = float(np.nextafter(f, direction * np.inf))
    return f


def _solve(fun, left, right, name, out, eval_at):
    """Bracket on ``(left, right)`` by approaching the open ends, then bisect."""
    c_gap = right - left
    lo = hi = None
    for k in range(1, 400):
        cand = left + c_gap * mp.mpf(2) ** (-k)
        if fun(cand) < 0:
            lo = cand
            break
    for k in range(1, 400):
        cand = right - c_gap * mp.mpf(2) ** (-k)
        if cand >= right:
            break
        if fun(cand) > 0:
            hi = cand
            break
    if lo is None:
        raise ArithmeticError(f"{name}: defining function never negative")
    if hi is None:
        # the root sits closer to the right end than the working precision resolves
        out["flags"][name] = "beyond-resolution"
        out["brackets"][name] = (float(lo), float(right))
        out["residuals"][name] = out["residuals_float"][name] = float("nan")
        out["exact"][name] = f"> {mp.nstr(cand, DPS)}"
        return float(right)
    lo, hi = _bisect(fun, lo, hi)
    root = (lo + hi) / 2
    z = float(root)
    out["brackets"][name] = (_round_out(lo, -1), _round_out(hi, 1))
    out["residuals"][name] = float(abs(eval_at(root)))
    if mp.mpf(z) < right:
        out["residuals_float"][name] = float(abs(eval_at(mp.mpf(z))))
    else:
        out["flags"][name] = "rounds-to-c"
        out["residuals_float"][name] = float("nan")
    out["exact"][name] = mp.nstr(root, DPS)
    return z


def solve_thresholds(p: BoundInputs) -> Thresholds:
    """Roots ``z`` (of ``mu = 1``), ``z1`` and ``z2`` on their intervals.

    Each defining function is increasing in the speed; its root is bracketed
    by a sign change and bisected to far below 1e-12 relative width.
    Residuals are reported at the high-precision root (``residuals``) and
    at its double rounding (``residuals_float``).  A root that cannot be
    separated from ``c`` at the working precision is flagged
    ``"beyond-resolution"`` and returned as ``c``.
    """
    out = {"flags": {}, "residuals": {}, "residuals_float": {}, "brackets": {}, "exact": {}}
    flags, residuals = out["flags"], out["residuals"]
    with mp.workdps(DPS):
        base = _Ctx(p)
        left = mp.sqrt(2) * base.r
        right = base.c

        def g_mu(s):
            return 1 - _mu(_Ctx(p, s))

        def g1(s):
            return _sigma1(_Ctx(p, s))

        def g2(s):
            return _sigma2(_Ctx(p, s))

        if base.bt == 0:
            z = float(left)
            flags["z"] = "always-contractive"
            residuals["z"] = out["residuals_float"]["z"] = 0.0
        else:
            z = _solve(g_mu, left, right, "z", out, g_mu)
        if base.b1 == 0:
            z1 = float(left)
            z2 = 0.0
            flags["z1"] = "always-satisfied"
            flags["z2"] = "always-satisfied"
            for name in ("z1", "z2"):
                residuals[name] = out["residuals_float"][name] = 0.0
        else:
            z1 = _solve(g1, left, right, "z1", out, g1)
            z2 = _solve(g2, mp.mpf(0), right, "z2", out, g2)
    return Thresholds(z=z, z1=z1, z2=z2, **out)


@dataclass
class BoundSet:
    """Scalar bounds at one ``(s, |x|, r, T)`` plus time envelopes."""

    inputs: BoundInputs
    mu: float
    mu_T: float
    rho_T: float
    rho: float
    lambda_T: float
    lam: float
    eps_a_prime: float
    eps_a: float
    eps_b: float
    z: float
    z1: float
    z2: float
    zeta_minus: Callable = field(repr=False)
    xi_minus: Callable = field(repr=False)
    zeta_plus: Callable = field(repr=False)
    xi_plus: Callable = field(repr=False)
    thresholds: Thresholds | None = field(default=None, repr=False)

    @property
    def lambda_(self) -> float:
        return self.lam

    def scalars(self) -> dict:
        return {"mu": self.mu, "mu_T": self.mu_T, "rho_T": self.rho_T, "rho": self.rho,
                "lambda_T": self.lambda_T, "lambda": self.lam,
                "eps_a_prime": self.eps_a_prime, "eps_a": self.eps_a, "eps_b": self.eps_b,
                "z": self.z, "z1": self.z1, "z2": self.z2}

    def to_dict(self) -> dict:
        out = {"inputs": asdict(self.inputs), "bounds": self.scalars()}
        out["envelopes_at_0"] = {"zeta_minus": float(self.zeta_minus(0.0)),
                                 "xi_minus": float(self.xi_minus(0.0)),
                                 "zeta_plus": float(self.zeta_plus(0.0)),
                                 "xi_plus": float(self.xi_plus(0.0))}
        if self.thresholds is not None:
            out["thresholds"] = self.thresholds.to_dict()
        return out


def _envelopes(k: _Ctx):
    al, b, a = float(k.al), float(k.b), float(k.a)
    pz = float(k.K * k.d * k.b1 * 2 ** (k.al + 1) / (k.al * k.b))
    px = float(k.K * k.d * k.b1 * 2 ** (k.al + 1) / ((k.al - 1) * k.al * k.b ** 2))

    def zeta_minus(t):
        t = np.asarray(t, dtype=float)
        if np.any(t > 0):
            raise ValueError("incoming envelope is defined for t <= 0")
        return pz * (a - b * t) ** -al

    def xi_minus(t):
        t = np.asarray(t, dtype=float)
        if np.any(t > 0):
            raise ValueError("incoming envelope is defined for t <= 0")
        return px * (a - b * t) ** (1 - al)

    def zeta_plus(t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("outgoing envelope is defined for t >= 0")
        return pz * (a + b * t) ** -al

    def xi_plus(t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("outgoing envelope is defined for t >= 0")
        return px * (a + b * t) ** (1 - al)

    return zeta_minus, xi_minus, zeta_plus, xi_plus


def eval_bounds(p: BoundInputs, *, thresholds: bool = True) -> BoundSet:
    """Evaluate all bounds at ``p.s``.  Requires ``sqrt(2) r < s < c``."""
    if not p.s < p.c:
        raise HypothesisError("c", f"speed s = {p.s} must be below c = {p.c}")
    if not p.s > np.sqrt(2) * p.r:
        raise HypothesisError("r", f"speed s = {p.s} must exceed sqrt(2) r = {np.sqrt(2) * p.r}")
    with mp.workdps(DPS):
        k = _Ctx(p)
        K, d, sd, al, b1, b2, bt = k.K, k.d, k.sd, k.al, k.b1, k.b2, k.bt
        b, e, a, r, c = k.b, k.e, k.a, k.r, k.c
        if p.T <= 0:
            aT = a - b * k.T
            rho_T = K * 2 ** (al + 1) * d * b1 * e / ((al - 1) * b ** 2 * aT ** (al - 1))
            lam_T = K * 2 ** (al + 2) * sd * b2 * e ** 2 / ((al - 1) * b ** 3 * aT ** (al - 1))
            mu_T = K * 2 ** (al + 2) * sd * bt * e ** 2 / (r * (al - 1) * b ** 3 * aT ** (al - 1))
        else:
            rho_T = lam_T = mu_T = mp.nan
        rho = K * 2 ** (al + 2) * d * b1 * e / ((al - 1) * b ** 2 * a ** (al - 1))
        bb = b2 + 3 * b1 * b2 / c
        lam = K * 2 ** (2 * al + 6) * bb * d * sd * e ** 3 / ((al - 1) * b ** 4 * a ** (al - 1))
        mu = _mu(k)
        eps_ap = sd * b2 * 2 ** (al + 3) * e / (al * b ** 2 * a ** al) * rho * K
        eps_a = d * b2 * 2 ** (al + 3) * e * rho / (al * b ** 2 * a ** al)
        eps_b = (d * sd * bb * 2 ** (2 * al + 6) * e ** 2
                 / (al * (al - 1) * b ** 4 * a ** (al - 1)) * rho * K)
        env = _envelopes(k)
    th = solve_thresholds(p) if thresholds else None
    nan = float("nan")
    return BoundSet(inputs=p, mu=float(mu), mu_T=float(mu_T), rho_T=float(rho_T),
                    rho=float(rho), lambda_T=float(lam_T), lam=float(lam),
                    eps_a_prime=float(eps_ap), eps_a=float(eps_a), eps_b=float(eps_b),
                    z=th.z if th else nan, z1=th.z1 if th else nan, z2=th.z2 if th else nan,
                    zeta_minus=env[0], xi_minus=env[1], zeta_plus=env[2], xi_plus=env[3],
                    thresholds=th)


def check_theorem11_rhs(p: BoundInputs, *, check: bool = True) -> dict:
    """Right-hand sides of the two limit estimates along a line.

    ``rhs_q`` bounds ``|s a_sc / sqrt(1 - s^2/c^2) - X-ray of F|`` and
    ``rhs_b_over_C`` is the speed-dependent factor of the estimate for the
    rescaled position shift; the latter still has to be multiplied by the
    potential-dependent constant ``C``.
    """
    if check:
        th = solve_thresholds(p)
        if not p.s > th.z:
            raise HypothesisError("z", f"speed {p.s} does not exceed z = {th.z}")
        if not p.s >= th.z1:
            raise HypothesisError("z1", f"speed {p.s} is below z1 = {th.z1}")
        if not p.s >= th.z2:
            raise HypothesisError("z2", f"speed {p.s} is below z2 = {th.z2}")
    with mp.workdps(DPS):
        k = _Ctx(p)
        d, al, b1, b2, bt, c, s = k.d, k.al, k.b1, k.b2, k.bt, k.c, k.s
        b, e = k.b, k.e
        ax = 1 + k.X / mp.sqrt(2)
        rhs_q = (k.K * d ** 2 * bt ** 2 * 2 ** (2 * al + 5) * s * e ** 2
                 / (al * (al - 1) * b ** 4 * ax ** (2 * al - 1)))
        bb = b2 + 3 * b1 * b2 / c
        rhs_b = (mp.sqrt(1 - s ** 2 / c ** 2) * d ** 3 * mp.sqrt(d) * bb * b1 * 2 ** (3 * al + 8) * e ** 3
                 / ((1 - mp.mpf(3) / 4 * s ** 2 / c ** 2) * al * (al - 1) ** 2 * b ** 6
                    * ax ** (2 * al - 2)))
    return {"rhs_q": float(rhs_q), "rhs_b_over_C": float(rhs_b)}
