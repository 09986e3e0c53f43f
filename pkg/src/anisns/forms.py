"""Convection operator B(u, v) = P_H(u . grad v) and the trilinear form b.

Products are formed on the padded physical grid of :class:`~anisns.spectral.Grid`,
so the truncated result equals the exact Galerkin projection of u . grad v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    Grid,
    LittlewoodPaleyPartition,
    SpectralField,
    from_physical,
    inner,
    leray,
    to_physical,
    weighted_sq,
)

__all__ = [
    "TrilinearReport",
    "CommutatorReport",
    "nonlinear_term",
    "trilinear",
    "commutator_diagnostic",
    "velocity_and_gradient",
    "convection",
    "linearized_convection",
    "trilinear_ratio",
    "vertical_transport_terms",
]


def velocity_and_gradient(grid: Grid, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Physical velocity (..., 2, N1, N2) and gradient (..., 2, 2, N1, N2), G[i, j] = d_j u_i."""
    stack = np.stack([c, 1j * grid.k1 * c, 1j * grid.k2 * c], axis=-4)
    phys = to_physical(grid, stack)
    return phys[..., 0, :, :, :], np.moveaxis(phys[..., 1:, :, :, :], -4, -3)


def _advect(U: np.ndarray, G: np.ndarray) -> np.ndarray:
    # (U . grad) v with G the gradient of v
    return U[..., None, 0, :, :] * G[..., 0, :, :] + U[..., None, 1, :, :] * G[..., 1, :, :]


def _finish(grid: Grid, f_phys: np.ndarray) -> np.ndarray:
    c = from_physical(grid, f_phys)
    if grid.dealias_fraction < 1.0:
        c = c * grid.dealias_mask
    return leray(grid, c)


def convection(grid: Grid, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """Array form of B(u, v); ``v=None`` means B(u, u)."""
    if v is None:
        U, G = velocity_and_gradient(grid, u)
        return _finish(grid, _advect(U, G))
    U = to_physical(grid, u)
    _, G = velocity_and_gradient(grid, v)
    return _finish(grid, _advect(U, G))


def linearized_convection(grid: Grid, base: np.ndarray, x: np.ndarray) -> np.ndarray:
    """B(x, base) + B(base, x) with one set of transforms per argument."""
    Ub, Gb = velocity_and_gradient(grid, base)
    Ux, Gx = velocity_and_gradient(grid, x)
    return _finish(grid, _advect(Ux, Gb) + _advect(Ub, Gx))


def _same_grid(*fields: SpectralField) -> Grid:
    g = fields[0].grid
    if any(f.grid != g for f in fields[1:]):
        raise ValueError("fields live on different grids")
    return g


def nonlinear_term(u: SpectralField, v: SpectralField) -> SpectralField:
    grid = _same_grid(u, v)
    return SpectralField(grid, convection(grid, u.coeffs, v.coeffs), True)


@dataclass(frozen=True)
class TrilinearReport:
    value: float
    bound_rhs: float
    ratio: float


def trilinear(u: SpectralField, v: SpectralField, w: SpectralField) -> TrilinearReport:
    """b(u, v, w) together with the ||u||_{H^{1,0}} ||v||_{H^{1,1}} ||w||_{L^2} bound (C = 1)."""
    grid = _same_grid(u, v, w)
    value = float(inner(convection(grid, u.coeffs, v.coeffs), w.coeffs))
    rhs = float(
        np.sqrt(weighted_sq(grid, u.coeffs, 1, 0) * weighted_sq(grid, v.coeffs, 1, 1) * weighted_sq(grid, w.coeffs))
    )
    ratio = abs(value) / rhs if rhs > 0 else float("nan")
    return TrilinearReport(value, rhs, ratio)


def trilinear_ratio(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    return trilinear(u, v, w).ratio


def vertical_transport_terms(u: SpectralField) -> dict:
    """Pieces of |<d2 u, d2(u . grad u)>| <= a ||d1 d2 u||^2 + C (1 + ||d1 u||^2) ||d2 u||^2."""
    grid = u.grid
    U, G = velocity_and_gradient(grid, u.coeffs)
    adv = from_physical(grid, _advect(U, G))
    d2u = 1j * grid.k2 * u.coeffs
    lhs = abs(float(inner(d2u, 1j * grid.k2 * adv)))
    return {
        "lhs": lhs,
        "d1d2_sq": float(weighted_sq(grid, 1j * grid.k1 * d2u)),
        "d1_sq": float(weighted_sq(grid, 1j * grid.k1 * u.coeffs)),
        "d2_sq": float(weighted_sq(grid, d2u)),
    }


@dataclass(frozen=True)
class CommutatorReport:
    block: int
    s: float
    s0: float
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs == 0 else float("inf")


def commutator_diagnostic(
    u: SpectralField,
    w: SpectralField,
    k: int,
    s: float,
    s0: float,
    part: LittlewoodPaleyPartition,
) -> CommutatorReport:
    """|<Delta_k(u . grad w), Delta_k w>| against 2^{-2ks} times the four-term bracket (unit constant)."""
    if s0 <= 0.5:
        raise ValueError(f"s0 must exceed 1/2, got {s0}")
    if s < s0:
        raise ValueError(f"need s >= s0, got s={s}, s0={s0}")
    grid = _same_grid(u, w)
    mult = part.multiplier(k)
    adv = convection(grid, u.coeffs, w.coeffs)
    lhs = abs(float(inner(mult * adv, mult * w.coeffs)))

    def n(c, a, b):
        return float(np.sqrt(weighted_sq(grid, c, a, b)))

    d1u = 1j * grid.k1 * u.coeffs
    d1w = 1j * grid.k1 * w.coeffs
    w_s = n(w.coeffs, 0.25, s)
    bracket = (
        n(u.coeffs, 0.25, s0) * n(d1w, 0, s)
        + n(u.coeffs, 0.25, s) * n(d1w, 0, s0)
        + n(d1u, 0, s0) * w_s
        + n(d1u, 0, s) * n(w.coeffs, 0.25, s0)
    )
    rhs = 2.0 ** (-2 * k * s) * w_s * bracket
    return CommutatorReport(k, s, s0, lhs, rhs)
