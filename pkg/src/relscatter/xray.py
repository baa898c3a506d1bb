"""X-ray transform, high-speed extrapolation and filtered back-projection.

Lines are ``{u theta + x}`` with ``|theta| = 1`` and ``theta . x = 0``.  In
the plane they are indexed by an angle ``phi`` (``theta = (cos phi,
sin phi)``) and a signed offset ``u`` along ``theta_perp = (-sin phi, cos phi)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .potential import PotentialModel
from .quadrature import line_grid, power_tail

__all__ = [
    "LineParam",
    "Sinogram",
    "XrayValue",
    "xray_forward",
    "xray_of_force",
    "w_functional",
    "w_closed_form_anisotropic",
    "Extrapolation",
    "extrapolate_PF",
    "extrapolate_b_target",
    "planar_lines",
    "sinogram_of",
    "fbp_invert",
    "ReconstructionSpec",
    "ReconstructionResult",
    "reconstruct_force",
    "read_sinogram",
]


@dataclass(frozen=True)
class LineParam:
    """An oriented line ``u theta + x``."""

    theta: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if th.shape != x.shape or th.ndim != 1:
            raise ValueError("theta and x must be vectors of equal length")
        if abs(np.linalg.norm(th) - 1.0) > 1e-12:
            raise ValueError("theta must be a unit vector")
        if abs(th @ x) > 1e-12 * (1.0 + np.linalg.norm(x)):
            raise ValueError("x must be orthogonal to theta")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "x", x)


def planar_lines(phi, offsets) -> tuple[np.ndarray, np.ndarray]:
    """Directions and base points for all (angle, offset) pairs, angle-major."""
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(offsets, dtype=float)
    th = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    perp = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
    theta = np.repeat(th, u.size, axis=0)
    x = (perp[:, None, :] * u[None, :, None]).reshape(-1, 2)
    return theta, x


@dataclass
class XrayValue:
    value: np.ndarray
    tail_bound: np.ndarray


def xray_forward(f: Callable[[np.ndarray], np.ndarray], theta, x, *, decay: tuple[float, float],
                 core_radius: float = 0.0, order: int = 16, rel_tail: float = 1e-16,
                 chunk: int = 2048, weight: Callable[[np.ndarray], np.ndarray] | None = None) -> XrayValue:
    """Integrate ``f`` along lines ``u theta + x``.

    ``decay = (B, p)`` asserts ``|f(y)| <= B (1 + |y|) ** -p`` with ``p > 1``;
    it sets the truncation point and the reported tail bound.  ``theta`` and
    ``x`` may hold one line or a batch of shape ``(N, d)``.  An optional
    ``weight(u)`` multiplies the integrand (used for first moments, in which
    case ``p`` should already account for the extra power of ``u``).
    """
    single = np.ndim(x) == 1
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, p = float(decay[0]), float(decay[1])
    if p <= 1:
        raise ValueError("decay exponent must exceed 1 for the line integral to converge")
    grid = line_grid(4.0, p, n_core=32, order=order, rel_tail=rel_tail)
    tau, w = grid.nodes, grid.weights
    U_ref = grid.edges[-1]
    out = []
    tails = []
    for lo in range(0, theta.shape[0], chunk):
        th, xx = theta[lo:lo + chunk], x[lo:lo + chunk]
        L = 1.0 + np.linalg.norm(xx, axis=1) + core_radius
        u = L[:, None] * tau[None, :]
        pts = xx[:, None, :] + u[..., None] * th[:, None, :]
        vals = f(pts)
        if weight is not None:
            wv = weight(u)
            vals = vals * (wv[..., None] if vals.ndim == 3 else wv)
        ww = L[:, None] * w[None, :]
        if vals.ndim == 3:
            out.append(np.einsum("nk,nkm->nm", ww, vals))
        else:
            out.append(np.einsum("nk,nk->n", ww, vals))
        X = np.linalg.norm(xx, axis=1)
        tails.append(np.array([2.0 * power_tail(B, 1.0 + Xi / np.sqrt(2), 1.0 / np.sqrt(2),
                                                Li * U_ref, p) for Xi, Li in zip(X, L)]))
    value = np.concatenate(out)
    tail = np.concatenate(tails)
    if single:
        value, tail = value[0], tail[0]
    return XrayValue(value=value, tail_bound=tail)


def xray_of_force(model: PotentialModel, theta, x, **kw) -> XrayValue:
    """``PF`` for a potential model, with its certified force decay."""
    return xray_forward(model.F, theta, x, decay=(model.beta[1] * np.sqrt(model.d), model.alpha + 1.0),
                        core_radius=model.core_radius, **kw)


def w_functional(model: PotentialModel, theta, x, **kw) -> np.ndarray:
    """``w = int_{u<0} |u| F - int_{u>0} u F + (int V) theta``.

    The two iterated integrals of ``F`` are written as first moments, so
    ``w = -int u F(u theta + x) du + (int V) theta``.
    """
    single = np.ndim(x) == 1
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mom = xray_forward(model.F, theta, x, decay=(model.beta[1] * np.sqrt(2 * model.d),
                                                 model.alpha), core_radius=model.core_radius,
                       weight=lambda u: -u, **kw).value
    pv = xray_forward(model.V, theta, x, decay=(model.beta[0], model.alpha),
                      core_radius=model.core_radius, **kw).value
    out = mom + pv[:, None] * theta
    return out[0] if single else out


def w_closed_form_anisotropic(A: float, beta: float, theta, x) -> np.ndarray:
    """``w . x`` for ``V = A x_1 (1 + |x|^2) ** -beta``.

    Equals ``-A theta_1 |x|^2 (1 + |x|^2) ** (1/2 - beta) sqrt(pi)
    Gamma(beta - 1/2) / Gamma(beta)``, which is ``-A pi theta_1 |x|^2 /
    sqrt(1 + |x|^2)`` at ``beta = 1``.
    """
    from scipy.special import gammaln
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    X2 = np.sum(x * x, axis=-1)
    const = np.sqrt(np.pi) * np.exp(gammaln(beta - 0.5) - gammaln(beta))
    return -A * theta[..., 0] * X2 * (1.0 + X2) ** (0.5 - beta) * const


# --- extrapolation to the speed of light ---------------------------------------

@dataclass
class Extrapolation:
    limit: np.ndarray
    coefficients: np.ndarray      # (degree + 1, ...)
    residual: np.ndarray          # rms misfit per component
    eps: np.ndarray
    samples: np.ndarray
    degree: int


def _fit_eps(eps: np.ndarray, samples: np.ndarray, degree: int | None) -> Extrapolation:
    K = eps.size
    if K < 3:
        raise ValueError("at least three speeds are needed for the extrapolation")
    if degree is None:
        degree = 2 if K >= 5 else 1
    if degree not in (1, 2) or degree >= K:
        raise ValueError(f"unsupported degree {degree} for {K} speeds")
    Vm = np.vander(eps, degree + 1, increasing=True)
    flat = samples.reshape(K, -1)
    coef, *_ = np.linalg.lstsq(Vm, flat, rcond=None)
    resid = flat - Vm @ coef
    rms = np.sqrt(np.mean(resid ** 2, axis=0))
    shape = samples.shape[1:]
    return Extrapolation(limit=coef[0].reshape(shape), coefficients=coef.reshape((degree + 1,) + shape),
                         residual=rms.reshape(shape), eps=eps, samples=samples, degree=degree)


def _speeds(speeds, c: float) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(speeds, dtype=float)
    if np.any(s <= 0) or np.any(s >= c):
        raise ValueError("speeds must lie in (0, c)")
    if np.unique(s).size != s.size:
        raise ValueError("speeds must be distinct")
    return s, np.sqrt(1.0 - (s / c) ** 2)


def extrapolate_PF(speeds, a_sc, c: float, degree: int | None = None) -> Extrapolation:
    """Limit of ``s a_sc / sqrt(1 - s^2/c^2)`` as ``s -> c``.

    The rescaled samples are fitted by a polynomial in ``eps = sqrt(1 -
    s^2/c^2)`` (linear, or quadratic from five speeds on) and the constant
    term is returned.  ``a_sc`` has shape ``(K, ..., d)``.
    """
    s, eps = _speeds(speeds, c)
    a = np.asarray(a_sc, dtype=float)
    q = a * (s / eps).reshape((-1,) + (1,) * (a.ndim - 1))
    return _fit_eps(eps, q, degree)


def extrapolate_b_target(speeds, b_sc, c: float, degree: int | None = None) -> Extrapolation:
    """Limit of ``s^2 b_sc / sqrt(1 - s^2/c^2)`` as ``s -> c`` (the ``w`` functional)."""
    s, eps = _speeds(speeds, c)
    b = np.asarray(b_sc, dtype=float)
    q = b * (s * s / eps).reshape((-1,) + (1,) * (b.ndim - 1))
    return _fit_eps(eps, q, degree)


# --- sinograms and back-projection ---------------------------------------------

@dataclass
class Sinogram:
    """Vector-valued line data on a regular (angle, offset) grid in the plane."""

    phi: np.ndarray               # (n_phi,), in [0, 2 pi)
    offsets: np.ndarray           # (n_off,), uniform in [-R, R]
    values: np.ndarray            # (n_phi, n_off, m)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[..., None]
        if self.values.shape[:2] != (self.phi.size, self.offsets.size):
            raise ValueError("sinogram values do not match the (phi, offset) grid")
        if np.any(self.phi < 0) or np.any(self.phi >= 2 * np.pi):
            raise ValueError("angles must lie in [0, 2 pi)")
        du = np.diff(self.offsets)
        if self.offsets.size < 2 or np.any(np.abs(du - du[0]) > 1e-9 * abs(du[0])):
            raise ValueError("offsets must be uniformly spaced")

    @property
    def R(self) -> float:
        return float(np.max(np.abs(self.offsets)))

    def to_csv(self, path, header: Sequence[str] = ()) -> None:
        m = self.values.shape[2]
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phi", "offset"] + [f"component_{k + 1}" for k in range(m)])
            for i, ph in enumerate(self.phi):
                for j, u in enumerate(self.offsets):
                    w.writerow([repr(float(ph)), repr(float(u))]
                               + [repr(float(v)) for v in self.values[i, j]])


def read_sinogram(path) -> Sinogram:
    with open(path) as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(rows)
    head = next(reader)
    if head[:2] != ["phi", "offset"] or not all(h.startswith("component_") for h in head[2:]):
        raise ValueError("not a sinogram file: unexpected header")
    data = np.array([[float(v) for v in r] for r in reader])
    phi = np.unique(data[:, 0])
    off = np.unique(data[:, 1])
    vals = data[:, 2:].reshape(phi.size, off.size, -1)
    return Sinogram(phi=phi, offsets=off, values=vals)


def sinogram_of(f: Callable[[np.ndarray], np.ndarray], n_angles: int, n_offsets: int, R: float,
                *, decay: tuple[float, float], **kw) -> Sinogram:
    """Exact (quadrature) sinogram of a planar field."""
    phi = 2 * np.pi * np.arange(n_angles) / n_angles
    u = np.linspace(-R, R, n_offsets)
    theta, x = planar_lines(phi, u)
    vals = xray_forward(f, theta, x, decay=decay, **kw).value
    return Sinogram(phi=phi, offsets=u, values=vals.reshape(n_angles, n_offsets, -1))


def _ramp_filter(n: int, du: float, window: str) -> np.ndarray:
    size = max(64, int(2 ** np.ceil(np.log2(2 * n))))
    k = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 1.0 / (4.0 * du * du)
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd] * du) ** 2
    H = np.real(np.fft.fft(h)) * du
    freq = np.fft.fftfreq(size)            # cycles per sample, in [-1/2, 1/2)
    if window == "hann":
        H = H * 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    elif window != "ramp":
        raise ValueError(f"unknown filter window {window!r}")
    return H


def fbp_invert(sino: Sinogram, xs, ys, *, window: str = "hann") -> np.ndarray:
    """Filtered back-projection of each component onto the raster ``xs x ys``.

    Uses the line convention of :func:`planar_lines` (offset along
    ``theta_perp``) and assumes uniformly spaced angles over the full circle.
    Returns an array of shape ``(len(ys), len(xs), m)``.
    """
    n_phi, n_off, m = sino.values.shape
    du = float(sino.offsets[1] - sino.offsets[0])
    H = _ramp_filter(n_off, du, window)
    size = H.size
    padded = np.zeros((n_phi, size, m))
    padded[:, :n_off, :] = sino.values
    filt = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * H[None, :, None], axis=1))[:, :n_off, :]
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float))
    out = np.zeros(X.shape + (m,))
    for i, ph in enumerate(sino.phi):
        proj = -np.sin(ph) * X + np.cos(ph) * Y
        for k in range(m):
            out[..., k] += np.interp(proj, sino.offsets, filt[i, :, k], left=0.0, right=0.0)
    return out * (np.pi / n_phi)


# --- reconstruction pipeline -----------------------------------------------------

@dataclass(frozen=True)
class ReconstructionSpec:
    """Acquisition and raster settings for recovering a planar force."""

    n_angles: int = 180
    n_offsets: int = 201
    R: float = 6.0
    max_speed: float = 0.999
    n_speeds: int = 3
    n_pixels: int = 81
    extent: float = 3.0
    window: str = "hann"
    tol: float = 1e-9

    def speeds(self, c: float) -> np.ndarray:
        """Ladder ``c (1 - (1 - s_max/c) 2^j)`` for ``j = 0 .. n_speeds - 1``."""
        gap = 1.0 - self.max_speed / c
        s = c * (1.0 - gap * 2.0 ** np.arange(self.n_speeds))
        if np.any(s <= 0):
            raise ValueError("speed ladder leaves (0, c); lower n_speeds or raise max_speed")
        return s

    def raster(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.n_pixels)


@dataclass
class ReconstructionResult:
    xs: np.ndarray
    ys: np.ndarray
    force: np.ndarray                     # (ny, nx, 2)
    sinogram: Sinogram
    speeds: np.ndarray
    truth: np.ndarray | None = None
    rel_l2: float | None = None
    info: dict = field(default_factory=dict)

    def rows(self):
        for j, yv in enumerate(self.ys):
            for i, xv in enumerate(self.xs):
                yield (float(xv), float(yv), float(self.force[j, i, 0]), float(self.force[j, i, 1]))

    def to_csv(self, path, header: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "F1", "F2"])
            for r in self.rows():
                w.writerow([repr(v) for v in r])


def reconstruct_force(source: Callable[[np.ndarray, np.ndarray], np.ndarray], spec: ReconstructionSpec,
                      c: float = 1.0, *, truth: Callable[[np.ndarray], np.ndarray] | None = None,
                      degree: int | None = None) -> ReconstructionResult:
    """Recover a planar force field from velocity-valued scattering data.

    ``source(v, x)`` returns ``a_sc`` for a batch of incoming asymptotes.  For
    every line the rescaled data at the speed ladder are extrapolated to
    ``s = c`` (giving the X-ray transform of ``F``) and the resulting
    sinogram is inverted by filtered back-projection.  With ``truth`` the
    relative L2 error over the raster is reported.
    """
    phi = 2 * np.pi * np.arange(spec.n_angles) / spec.n_angles
    u = np.linspace(-spec.R, spec.R, spec.n_offsets)
    theta, x = planar_lines(phi, u)
    speeds = spec.speeds(c)
    data = np.stack([np.asarray(source(s * theta, x), dtype=float) for s in speeds])
    ext = extrapolate_PF(speeds, data, c, degree=degree)
    sino = Sinogram(phi=phi, offsets=u, values=ext.limit.reshape(spec.n_angles, spec.n_offsets, -1))
    grid = spec.raster()
    force = fbp_invert(sino, grid, grid, window=spec.window)
    result = ReconstructionResult(xs=grid, ys=grid, force=force, sinogram=sino, speeds=speeds,
                                  info={"max_fit_residual": float(np.max(ext.residual))})
    if truth is not None:
        X, Y = np.meshgrid(grid, grid)
        ref = truth(np.stack([X, Y], axis=-1))
        result.truth = ref
        result.rel_l2 = float(np.linalg.norm(force - ref) / np.linalg.norm(ref))
    return result
