"""Composite Gauss-Legendre rules on long lines.

Line integrals of decaying fields are split into a dense core around the
point of closest approach and geometrically growing far-field panels.
Each panel carries a spectrally accurate cumulative-integration matrix so
that running integrals can be formed without re-sampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

__all__ = ["PanelGrid", "panel_grid", "line_grid", "power_tail"]


@lru_cache(maxsize=None)
def _reference_rule(m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, weights and running-integral matrix on [-1, 1]."""
    x, w = legendre.leggauss(m)
    vander = legendre.legvander(x, m - 1)
    # integral from -1 to x_j of P_n, via (P_{n+1} - P_{n-1}) / (2n + 1)
    full = legendre.legvander(x, m)
    ints = np.empty((m, m))
    ints[:, 0] = x + 1.0
    for n in range(1, m):
        ints[:, n] = (full[:, n + 1] - full[:, n - 1]) / (2 * n + 1)
    S = ints @ np.linalg.inv(vander)
    return x, w, S


@dataclass(frozen=True)
class PanelGrid:
    """Gauss nodes on consecutive panels ``edges[i] .. edges[i+1]``."""

    edges: np.ndarray
    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def n_panels(self) -> int:
        return self.edges.size - 1

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integral over the whole grid along axis 0."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Running integral from the left end to every node."""
        return self._running(values, reverse=False)

    def cumulative_reverse(self, values: np.ndarray) -> np.ndarray:
        """Running integral from every node to the right end."""
        return self._running(values, reverse=True)

    def _running(self, values: np.ndarray, reverse: bool) -> np.ndarray:
        m = self.order
        _, w_ref, S = _reference_rule(m)
        vals = np.asarray(values, dtype=float)
        tail = vals.shape[1:]
        blocks = vals.reshape((self.n_panels, m) + tail)
        half = 0.5 * np.diff(self.edges)
        scale = half.reshape((-1,) + (1,) * (blocks.ndim - 1))
        if reverse:
            S_use = w_ref[None, :] - S
        else:
            S_use = S
        local = np.einsum("jk,pk...->pj...", S_use, blocks) * scale
        totals = np.einsum("k,pk...->p...", w_ref, blocks) * half.reshape(
            (-1,) + (1,) * len(tail))
        if reverse:
            offs = np.cumsum(totals[::-1], axis=0)[::-1]
            offs = np.concatenate([offs[1:], np.zeros((1,) + tail)], axis=0)
        else:
            offs = np.cumsum(totals, axis=0)
            offs = np.concatenate([np.zeros((1,) + tail), offs[:-1]], axis=0)
        out = local + offs[:, None, ...]
        return out.reshape(vals.shape)


def panel_grid(edges, order: int = 16) -> PanelGrid:
    """Build a grid from explicit panel edges."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("panel edges must be strictly increasing")
    x, w, _ = _reference_rule(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return PanelGrid(edges=edges, order=order, nodes=nodes, weights=weights)


def line_grid(core: float, alpha: float, *, lower: float = -np.inf,
              upper: float = np.inf, n_core: int = 16, order: int = 16,
              rel_tail: float = 1e-17, max_geometric: int = 400) -> PanelGrid:
    """Panels for integrands decaying like ``(1 + |t| / core) ** -(alpha + 1)``.

    The core ``[-core, core]`` is split evenly; outside it panels double in
    length until the neglected tail, relative to the core, falls below
    ``rel_tail`` for integrands with first moment of order ``alpha - 1``.
    Finite ``lower``/``upper`` truncate the grid.
    """
    if core <= 0:
        raise ValueError("core scale must be positive")
    if alpha <= 1:
        raise ValueError("decay exponent must exceed 1")
    n_geo = int(np.ceil(np.log2(1.0 / rel_tail) / (alpha - 1.0)))
    n_geo = min(max(n_geo, 4), max_geometric)
    far = core * 2.0 ** np.arange(1, n_geo + 1)
    inner = np.linspace(-core, core, n_core + 1)
    edges = np.concatenate([-far[::-1], inner, far])
    if np.isfinite(upper):
        if upper <= edges[0]:
            raise ValueError("upper limit lies before the grid")
        keep = edges[edges < upper]
        if upper - keep[-1] < 1e-9 * core and keep.size > 1:
            keep = keep[:-1]
        edges = np.append(keep, upper)
    if np.isfinite(lower):
        keep = edges[edges > lower]
        if keep[0] - lower < 1e-9 * core and keep.size > 1:
            keep = keep[1:]
        edges = np.insert(keep, 0, lower)
    return panel_grid(edges, order)


def power_tail(amplitude: float, offset: float, slope: float, start: float,
               exponent: float) -> float:
    """Bound for ``int_start^inf amplitude * (offset + slope * t) ** -exponent dt``."""
    if exponent <= 1:
        return np.inf
    base = offset + slope * start
    if base <= 0 or slope <= 0:
        return np.inf
    return amplitude * base ** (1.0 - exponent) / (slope * (exponent - 1.0))
