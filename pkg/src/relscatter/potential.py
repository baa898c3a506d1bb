"""Short-range potentials with certified derivative decay.

A model couples a potential ``V`` on R^d with its force ``F = -grad V``,
the Jacobian ``DF``, the speed of light ``c`` and constants ``alpha``,
``beta = (beta0, beta1, beta2)`` such that every partial derivative of
order ``j <= 2`` obeys ``|d^j V(x)| <= beta_j (1 + |x|) ** -(alpha + j)``.

All callables are vectorised over leading axes: ``V`` maps ``(..., d)`` to
``(...)``, ``F`` to ``(..., d)`` and ``DF`` to ``(..., d, d)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import optimize

__all__ = [
    "PotentialModel",
    "DecayReport",
    "isotropic",
    "anisotropic",
    "bumps",
    "free",
    "eval_V",
    "eval_F",
    "eval_DF",
    "fd_gradient",
    "fd_step",
    "certify_decay",
    "from_config",
    "load_config",
    "model_config",
]

Array = np.ndarray


@dataclass(frozen=True)
class PotentialModel:
    """Immutable potential together with its decay class."""

    d: int
    c: float
    alpha: float
    beta: tuple[float, float, float]
    V: Callable[[Array], Array] = field(repr=False)
    F: Callable[[Array], Array] = field(repr=False)
    DF: Callable[[Array], Array] = field(repr=False)
    variant: str = "custom"
    parameters: dict = field(default_factory=dict, compare=False)
    spherical: bool = False
    core_radius: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"speed of light must be positive, got {self.c}")
        if not self.alpha > 1:
            raise ValueError(f"decay exponent alpha must exceed 1, got {self.alpha}")
        if len(self.beta) != 3 or any(not (b >= 0 and np.isfinite(b)) for b in self.beta):
            raise ValueError(f"beta must be three finite non-negative numbers, got {self.beta}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def beta_tilde(self) -> float:
        return max(self.beta[1], self.beta[2])

    def with_constants(self, alpha: float | None = None, beta=None) -> "PotentialModel":
        """Copy with replaced decay constants (no re-derivation)."""
        return replace(self,
                       alpha=self.alpha if alpha is None else float(alpha),
                       beta=self.beta if beta is None else tuple(beta))

    def with_c(self, c: float) -> "PotentialModel":
        return replace(self, c=float(c))


def _as_points(x, d: int) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}, got shape {x.shape}")
    return x


def eval_V(model: PotentialModel, x) -> Array:
    return model.V(_as_points(x, model.d))


def eval_F(model: PotentialModel, x) -> Array:
    return model.F(_as_points(x, model.d))


def eval_DF(model: PotentialModel, x) -> Array:
    return model.DF(_as_points(x, model.d))


def fd_step(x) -> Array:
    """Central-difference step ``eps ** (1/3) * (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    return np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x, axis=-1))


def fd_gradient(func: Callable[[Array], Array], x) -> Array:
    """Central-difference derivative along the last axis of ``x``.

    A scalar field gives shape ``(..., d)``; a vector field ``(..., m)``
    gives the Jacobian ``(..., m, d)``.
    """
    x = np.asarray(x, dtype=float)
    h = fd_step(x)
    cols = []
    for i in range(x.shape[-1]):
        step = np.zeros_like(x)
        step[..., i] = h
        diff = func(x + step) - func(x - step)
        scale = (2.0 * h).reshape(h.shape + (1,) * (diff.ndim - h.ndim))
        cols.append(diff / scale)
    return np.stack(cols, axis=-1)


# --- decay constants -------------------------------------------------------

_RHO = np.concatenate([np.linspace(0.0, 12.0, 4801), np.geomspace(12.0, 1e7, 1200)[1:]])
_COS = np.linspace(0.0, 1.0, 401)


def _sup_1d(profile: Callable[[Array], Array]) -> float:
    vals = profile(_RHO)
    k = int(np.argmax(vals))
    lo, hi = _RHO[max(k - 1, 0)], _RHO[min(k + 1, _RHO.size - 1)]
    best = float(vals[k])
    if hi > lo:
        res = optimize.minimize_scalar(lambda r: -float(profile(np.array([r]))[0]),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-13 * max(1.0, hi)})
        best = max(best, -float(res.fun))
    far = float(profile(np.array([1e12]))[0])
    return max(best, far) * (1.0 + 1e-12)


def _sup_2d(profile: Callable[[Array, Array], Array]) -> float:
    R, C = np.meshgrid(_RHO, _COS, indexing="ij")
    vals = profile(R, C)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best = float(vals[i, j])

    def neg(z):
        r = float(np.clip(z[0], 0.0, None))
        cc = float(np.clip(z[1], 0.0, 1.0))
        return -float(profile(np.array([r]), np.array([cc]))[0])

    res = optimize.minimize(neg, x0=[_RHO[i], _COS[j]], method="Nelder-Mead",
                            options={"xatol": 1e-13, "fatol": 1e-16, "maxiter": 4000})
    best = max(best, -float(res.fun))
    far = float(np.max(profile(np.full(_COS.shape, 1e12), _COS)))
    return max(best, far) * (1.0 + 1e-12)


@lru_cache(maxsize=None)
def _isotropic_unit(beta: float) -> tuple[float, float, float]:
    """Constants for ``(1 + |x|^2) ** -beta`` with decay exponent ``2 beta``."""
    a = 2.0 * beta

    def p0(r):
        return (1 + r * r) ** -beta * (1 + r) ** a

    def p1(r):
        return 2 * beta * r * (1 + r * r) ** (-beta - 1) * (1 + r) ** (a + 1)

    def p2(r):
        u = r * r
        return (2 * beta * np.maximum(1 + u, (2 * beta + 1) * u - 1)
                * (1 + u) ** (-beta - 2) * (1 + r) ** (a + 2))

    return (_sup_1d(p0), _sup_1d(p1), _sup_1d(p2))


@lru_cache(maxsize=None)
def _anisotropic_unit(beta: float, d: int) -> tuple[float, float, float]:
    """Constants for ``x_1 (1 + |x|^2) ** -beta`` with exponent ``2 beta - 1``."""
    a = 2.0 * beta - 1.0
    k = 4 * beta * (beta + 1)

    def p0(r):
        return r * (1 + r * r) ** -beta * (1 + r) ** a

    def p1(r, cth):
        u = r * r
        x1 = r * cth
        w = r * np.sqrt(np.clip(1 - cth * cth, 0, None))
        e1 = np.abs(1 + u - 2 * beta * x1 * x1)
        ei = 2 * beta * np.abs(x1) * w
        return np.maximum(e1, ei) * (1 + u) ** (-beta - 1) * (1 + r) ** (a + 1)

    def p2(r, cth):
        u = r * r
        x1 = np.abs(r * cth)
        w2 = r * r * np.clip(1 - cth * cth, 0, None)
        w = np.sqrt(w2)
        e11 = x1 * np.abs(k * x1 * x1 - 6 * beta * (1 + u))
        e1i = w * np.abs(k * x1 * x1 - 2 * beta * (1 + u))
        eii = x1 * np.abs(k * w2 - 2 * beta * (1 + u))
        if d >= 3:
            eii = np.maximum(eii, x1 * 2 * beta * (1 + u))
            eik = 0.5 * k * x1 * w2
        else:
            eik = np.zeros_like(e11)
        m = np.maximum(np.maximum(e11, e1i), np.maximum(eii, eik))
        return m * (1 + u) ** (-beta - 2) * (1 + r) ** (a + 2)

    return (_sup_1d(p0), _sup_2d(p1), _sup_2d(p2))


# --- builtins --------------------------------------------------------------

def isotropic(A: float = 1.0, beta: float = 2.0, *, d: int = 2, c: float = 1.0) -> PotentialModel:
    """``V(x) = A (1 + |x|^2) ** -beta`` with ``alpha = 2 beta``."""
    A, beta = float(A), float(beta)
    if beta <= 0.5:
        raise ValueError("isotropic potential needs beta > 1/2 so that alpha > 1")

    def V(x):
        return A * (1.0 + np.sum(x * x, axis=-1)) ** -beta

    def F(x):
        u = 1.0 + np.sum(x * x, axis=-1)
        return (2.0 * A * beta * u ** (-beta - 1.0))[..., None] * x

    def DF(x):
        u = 1.0 + np.sum(x * x, axis=-1)
        eye = np.eye(x.shape[-1])
        t1 = (u ** (-beta - 1.0))[..., None, None] * eye
        t2 = (2.0 * (beta + 1.0) * u ** (-beta - 2.0))[..., None, None] * (
            x[..., :, None] * x[..., None, :])
        return 2.0 * A * beta * (t1 - t2)

    unit = _isotropic_unit(beta)
    return PotentialModel(d=d, c=float(c), alpha=2.0 * beta,
                          beta=tuple(abs(A) * b for b in unit), V=V, F=F, DF=DF,
                          variant="isotropic", parameters={"A": A, "beta": beta},
                          spherical=True)


def anisotropic(A: float = 1.0, beta: float = 1.5, *, d: int = 2, c: float = 1.0) -> PotentialModel:
    """``V(x) = A x_1 (1 + |x|^2) ** -beta`` with ``alpha = 2 beta - 1``."""
    A, beta = float(A), float(beta)
    if beta <= 1.0:
        raise ValueError("anisotropic potential needs beta > 1 so that alpha > 1")

    def V(x):
        return A * x[..., 0] * (1.0 + np.sum(x * x, axis=-1)) ** -beta

    def F(x):
        u = 1.0 + np.sum(x * x, axis=-1)
        out = (2.0 * A * beta * x[..., 0] * u ** (-beta - 1.0))[..., None] * x
        out[..., 0] -= A * u ** -beta
        return out

    def DF(x):
        u = 1.0 + np.sum(x * x, axis=-1)
        dd = x.shape[-1]
        e1 = np.zeros(dd)
        e1[0] = 1.0
        x1 = x[..., 0]
        p1 = (2.0 * beta * u ** (-beta - 1.0))[..., None, None]
        p2 = (4.0 * beta * (beta + 1.0) * x1 * u ** (-beta - 2.0))[..., None, None]
        outer_e1x = e1[:, None] * x[..., None, :]
        outer_xe1 = x[..., :, None] * e1[None, :]
        hess = (-p1 * (outer_e1x + outer_xe1 + x1[..., None, None] * np.eye(dd))
                + p2 * (x[..., :, None] * x[..., None, :]))
        return -A * hess

    unit = _anisotropic_unit(beta, int(d))
    return PotentialModel(d=d, c=float(c), alpha=2.0 * beta - 1.0,
                          beta=tuple(abs(A) * b for b in unit), V=V, F=F, DF=DF,
                          variant="anisotropic", parameters={"A": A, "beta": beta})


def bumps(amplitudes, centers, beta: float = 2.0, *, c: float = 1.0) -> PotentialModel:
    """Sum of translated isotropic bumps ``A_k (1 + |x - c_k|^2) ** -beta``.

    Constants use ``1 + |x| <= (1 + |x - c_k|)(1 + |c_k|)``.
    """
    amps = np.atleast_1d(np.asarray(amplitudes, dtype=float))
    cen = np.atleast_2d(np.asarray(centers, dtype=float))
    if cen.shape[0] != amps.size:
        raise ValueError("one center per amplitude is required")
    d = cen.shape[1]
    parts = [isotropic(a, beta, d=d, c=c) for a in amps]

    def V(x):
        return sum(p.V(x - ck) for p, ck in zip(parts, cen))

    def F(x):
        return sum(p.F(x - ck) for p, ck in zip(parts, cen))

    def DF(x):
        return sum(p.DF(x - ck) for p, ck in zip(parts, cen))

    alpha = 2.0 * float(beta)
    unit = _isotropic_unit(float(beta))
    radii = np.linalg.norm(cen, axis=1)
    consts = tuple(float(np.sum(np.abs(amps) * (1 + radii) ** (alpha + j))) * unit[j]
                   for j in range(3))
    return PotentialModel(d=d, c=float(c), alpha=alpha, beta=consts, V=V, F=F, DF=DF,
                          variant="bumps",
                          parameters={"amplitudes": amps.tolist(), "centers": cen.tolist(),
                                      "beta": float(beta)},
                          core_radius=float(radii.max()))


def free(*, d: int = 2, c: float = 1.0, alpha: float = 2.0) -> PotentialModel:
    """The zero potential."""

    def V(x):
        return np.zeros(x.shape[:-1])

    def F(x):
        return np.zeros_like(x, dtype=float)

    def DF(x):
        return np.zeros(x.shape + (x.shape[-1],))

    return PotentialModel(d=d, c=float(c), alpha=float(alpha), beta=(0.0, 0.0, 0.0),
                          V=V, F=F, DF=DF, variant="free", parameters={}, spherical=True)


# --- certification ---------------------------------------------------------

@dataclass
class DecayReport:
    """Worst observed ratio ``|d^j V| (1 + |x|)^(alpha + j) / beta_j`` per order."""

    ratios: tuple[float, float, float]
    worst_points: tuple[list, list, list]
    tol: float
    n_samples: int
    max_radius: float

    @property
    def certified(self) -> bool:
        return all(r <= 1.0 + self.tol for r in self.ratios)

    def failures(self) -> list[str]:
        out = []
        for j, (r, p) in enumerate(zip(self.ratios, self.worst_points)):
            if r > 1.0 + self.tol:
                out.append(f"order {j}: ratio {r:.6g} at x = {p}")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"certified": self.certified, "ratios": list(self.ratios),
                "worst_points": [list(p) for p in self.worst_points],
                "tol": self.tol, "n_samples": self.n_samples,
                "max_radius": self.max_radius, "failures": self.failures()}


def sample_points(d: int, *, n_radii: int = 400, max_radius: float = 1e3,
                  n_directions: int = 64, seed: int = 0) -> Array:
    """Deterministic sample: dense radii times axis, diagonal and random directions."""
    if max_radius < 1e3:
        raise ValueError("certification must reach radius 1e3 at least")
    n_in = n_radii // 2
    radii = np.unique(np.concatenate([np.linspace(0.0, 6.0, n_in),
                                      np.geomspace(6.0, max_radius, n_radii - n_in)]))
    if d == 2:
        ang = 2 * np.pi * np.arange(n_directions) / n_directions
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        eye = np.eye(d)
        dirs = [eye, -eye]
        for i in range(d):
            for k in range(i + 1, d):
                for s in (1.0, -1.0):
                    dirs.append(((eye[i] + s * eye[k]) / np.sqrt(2))[None])
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n_directions, d))
        dirs.append(g / np.linalg.norm(g, axis=1, keepdims=True))
        dirs = np.concatenate(dirs, axis=0)
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)


def certify_decay(model: PotentialModel, *, tol: float = 1e-9, points: Array | None = None,
                  **sample_kw) -> DecayReport:
    """Check the derivative-decay inequalities on a sample of points."""
    x = sample_points(model.d, **sample_kw) if points is None else np.asarray(points, float)
    r = np.linalg.norm(x, axis=-1)
    mags = [np.abs(model.V(x)),
            np.max(np.abs(model.F(x)), axis=-1),
            np.max(np.abs(model.DF(x)).reshape(x.shape[0], -1), axis=-1)]
    ratios, worst = [], []
    for j, m in enumerate(mags):
        scaled = m * (1.0 + r) ** (model.alpha + j)
        b = model.beta[j]
        if b > 0:
            q = scaled / b
        else:
            q = np.where(scaled > 0, np.inf, 0.0)
        k = int(np.argmax(q))
        ratios.append(float(q[k]))
        worst.append([float(v) for v in x[k]])
    return DecayReport(ratios=tuple(ratios), worst_points=tuple(worst), tol=tol,
                       n_samples=int(x.shape[0]), max_radius=float(r.max()))


# --- configuration ---------------------------------------------------------

_VARIANTS = {"isotropic", "anisotropic", "bumps", "free"}


def from_config(cfg: dict) -> PotentialModel:
    """Build a model from ``{variant, parameters, alpha?, beta0..2?, c, d}``.

    Explicit ``alpha``/``beta*`` entries replace the derived constants, which
    is how user-asserted constants are fed to the certifier.
    """
    if not isinstance(cfg, dict):
        raise ValueError("potential config must be an object")
    variant = cfg.get("variant")
    if variant not in _VARIANTS:
        raise ValueError(f"unknown potential variant {variant!r}; expected one of {sorted(_VARIANTS)}")
    params = dict(cfg.get("parameters", {}))
    c = float(cfg.get("c", 1.0))
    d = int(cfg.get("d", 2))
    if variant == "isotropic":
        model = isotropic(params.get("A", 1.0), params.get("beta", 2.0), d=d, c=c)
    elif variant == "anisotropic":
        model = anisotropic(params.get("A", 1.0), params.get("beta", 1.5), d=d, c=c)
    elif variant == "bumps":
        model = bumps(params["amplitudes"], params["centers"], params.get("beta", 2.0), c=c)
        if model.d != d:
            raise ValueError(f"bump centers have dimension {model.d}, config says d = {d}")
    else:
        model = free(d=d, c=c, alpha=float(params.get("alpha", 2.0)))
    beta = list(model.beta)
    for j in range(3):
        if f"beta{j}" in cfg:
            beta[j] = float(cfg[f"beta{j}"])
    return model.with_constants(alpha=cfg.get("alpha"), beta=beta)


def model_config(model: PotentialModel) -> dict:
    """Inverse of :func:`from_config` with the constants spelled out."""
    return {"variant": model.variant, "parameters": dict(model.parameters),
            "alpha": model.alpha, "beta0": model.beta[0], "beta1": model.beta[1],
            "beta2": model.beta[2], "c": model.c, "d": model.d}


def load_config(path) -> PotentialModel:
    with open(Path(path)) as fh:
        return from_config(json.load(fh))


def unit_constants(variant: str, beta: float, d: int = 2) -> tuple[float, float, float]:
    """Decay constants of the unit-amplitude builtin (used by tests)."""
    if variant == "isotropic":
        return _isotropic_unit(float(beta))
    if variant == "anisotropic":
        return _anisotropic_unit(float(beta), int(d))
    raise ValueError(variant)

