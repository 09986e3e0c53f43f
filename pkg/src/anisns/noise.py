"""Diffusion coefficients sigma(t, u) with certified growth/Lipschitz constants.

Two families are provided.  Both act on the lowest divergence-free Fourier
modes e_j, which are orthonormal in H:

* additive:   sigma(t, u) psi_j = q_j e_j
* diagonal:   sigma(t, u) psi_j = q_j (1 + c tanh(<u, e_j>)) e_j,  c = coupling

Neither reads d_1 u, so K_2 = K~_2 = L_2 = 0 and the well-posedness thresholds
(K_2 < 2/21, K~_2 < 1/5, L_2 < 1/5) hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid, SpectralField, inner, weighted_sq

__all__ = [
    "NoiseConstants",
    "NoiseModel",
    "WienerPath",
    "NoiseSpecError",
    "make_noise_model",
    "noise_basis",
    "sigma_columns",
    "sigma_apply",
    "sigma_hs_norm",
    "HSNormReport",
]

K2_MAX = 2.0 / 21.0
K2_TILDE_MAX = 1.0 / 5.0
L2_MAX = 1.0 / 5.0


class NoiseSpecError(ValueError):
    pass


def noise_basis(grid: Grid, J: int) -> tuple[np.ndarray, list[tuple[int, int, str]]]:
    """First J unit-norm divergence-free modes sqrt(2) k_perp/|k| {cos, sin}(k.x).

    Wavenumbers are taken from the half plane (k1 > 0, or k1 = 0 < k2) ordered
    by |k|^2, horizontally varying modes first at equal |k|.
    """
    ks = [
        (k1, k2)
        for k1 in range(0, grid.m_h + 1)
        for k2 in range(-grid.m_v, grid.m_v + 1)
        if k1 > 0 or k2 > 0
    ]
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0] == 0, k[0], k[1]))
    if 2 * len(ks) < J:
        raise NoiseSpecError(f"grid supports at most {2 * len(ks)} noise directions, asked for {J}")
    cols = np.zeros((J,) + grid.field_shape, dtype=complex)
    labels = []
    for j in range(J):
        k1, k2 = ks[j // 2]
        nrm = np.hypot(k1, k2)
        a = np.array([-k2 / nrm, k1 / nrm]) / np.sqrt(2.0)
        i, ineg = (grid.m_h + k1, grid.m_v + k2), (grid.m_h - k1, grid.m_v - k2)
        if j % 2 == 0:
            cols[j, :, i[0], i[1]] = a
            cols[j, :, ineg[0], ineg[1]] = a
            labels.append((k1, k2, "cos"))
        else:
            cols[j, :, i[0], i[1]] = -1j * a
            cols[j, :, ineg[0], ineg[1]] = 1j * a
            labels.append((k1, k2, "sin"))
    return cols, labels


@dataclass(frozen=True)
class NoiseConstants:
    """Constants of the growth conditions (A0)-(A2) and Lipschitz condition (A3)."""

    Kp0: float
    Kp1: float
    K0: float
    K1: float
    K2: float
    Kt0: float
    Kt1: float
    Kt2: float
    L1: float
    L2: float

    def admissible(self) -> bool:
        return self.K2 < K2_MAX and self.Kt2 < K2_TILDE_MAX and self.L2 < L2_MAX

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    grid: Grid
    kind: str
    mode_weights: np.ndarray
    coupling: float
    constants: NoiseConstants
    basis: np.ndarray = field(repr=False)
    labels: tuple = field(repr=False, default=())
    tail: float = 0.0

    @property
    def J(self) -> int:
        return len(self.mode_weights)

    def profile(self, u: np.ndarray) -> np.ndarray:
        """Per-column factors q_j s(<u, e_j>), shape (..., J)."""
        q = self.mode_weights
        if self.kind == "additive" or self.coupling == 0.0:
            return np.broadcast_to(q, u.shape[:-3] + (self.J,)).astype(float)
        proj = inner(u[..., None, :, :, :], self.basis)
        return q * (1.0 + self.coupling * np.tanh(proj))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "J": self.J,
            "mode_weights": self.mode_weights.tolist(),
            "coupling": self.coupling,
            "tail": self.tail,
            "constants": self.constants.to_dict(),
        }


def _weights(spec: dict) -> tuple[np.ndarray, float]:
    J = int(spec["J"])
    if J < 1:
        raise NoiseSpecError("J must be positive")
    tol = float(spec.get("tail_tol", 1e-2))
    if "weights" in spec:
        q = np.asarray(spec["weights"], dtype=float)
        if q.shape != (J,) or np.any(q < 0):
            raise NoiseSpecError("explicit weights must be J nonnegative numbers")
        return q, 0.0
    amp = float(spec.get("amplitude", 1.0))
    decay = float(spec.get("decay", 2.0))
    if decay <= 1.0 and amp > 0:
        raise NoiseSpecError(f"weights q_j = amplitude * decay^-j are not square-summable for decay={decay}")
    j = np.arange(1, J + 1)
    q = amp * decay ** (-j.astype(float))
    tail = 0.0 if amp == 0 else amp**2 * decay ** (-2.0 * (J + 1)) / (1.0 - decay**-2.0)
    if tail > tol:
        raise NoiseSpecError(f"discarded tail sum q_j^2 = {tail:.3g} exceeds tail_tol = {tol:.3g}; raise J")
    return q, tail


def make_noise_model(grid: Grid, spec: dict) -> NoiseModel:
    """Build a model from a spec dict.

    Keys: ``kind`` ("additive" | "multiplicative"), ``J``, ``decay`` and
    ``amplitude`` (q_j = amplitude * decay^-j) or explicit ``weights``,
    ``coupling`` in [0, 1], ``tail_tol``.
    """
    kind = spec.get("kind", "additive")
    if kind not in ("additive", "multiplicative"):
        raise NoiseSpecError(f"unknown noise kind {kind!r}")
    coupling = float(spec.get("coupling", 0.0))
    if not 0.0 <= coupling <= 1.0:
        raise NoiseSpecError(f"coupling must lie in [0, 1], got {coupling}")
    if kind == "additive":
        coupling = 0.0
    q, tail = _weights(spec)
    basis, labels = noise_basis(grid, len(q))

    q2 = q**2
    h = weighted_sq(grid, basis)
    hm1 = np.array([np.sum(np.abs(b) ** 2 / (1.0 + grid.ksq)) for b in basis])
    h01 = weighted_sq(grid, basis, 0.0, 1.0)
    # |1 + c tanh| <= 1 + c;  |s(x) - s(y)| <= c |x - y| and Bessel on orthonormal e_j
    amp2 = (1.0 + coupling) ** 2
    constants = NoiseConstants(
        Kp0=float(amp2 * np.sum(q2 * hm1)),
        Kp1=0.0,
        K0=float(amp2 * np.sum(q2 * h)),
        K1=0.0,
        K2=0.0,
        Kt0=float(amp2 * np.sum(q2 * h01)),
        Kt1=0.0,
        Kt2=0.0,
        L1=float(coupling**2 * (q2.max() if q.size else 0.0)),
        L2=0.0,
    )
    assert constants.admissible()
    return NoiseModel(grid, kind, q, coupling, constants, basis, tuple(labels), tail)


def sigma_columns(m: NoiseModel, t: float, u: np.ndarray) -> np.ndarray:
    """All J columns sigma(t, u) psi_j, shape (..., J, 2, K1, K2)."""
    return m.profile(u)[..., :, None, None, None] * m.basis


def _contract(m: NoiseModel, u: np.ndarray, xi: np.ndarray) -> np.ndarray:
    # sum_j xi_j q_j s_j e_j without materializing every column
    w = m.profile(u) * xi
    return np.tensordot(w, m.basis, axes=([-1], [0]))


def sigma_apply(m: NoiseModel, t: float, u: SpectralField, xi) -> SpectralField:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (m.J,):
        raise ValueError(f"xi must have length J={m.J}, got shape {xi.shape}")
    return SpectralField(m.grid, _contract(m, u.coeffs, xi), True)


@dataclass(frozen=True)
class HSNormReport:
    target: str
    value: float
    bound: float

    @property
    def certified(self) -> bool:
        return self.value <= self.bound * (1 + 1e-12) + 1e-15


def sigma_hs_norm(m: NoiseModel, t: float, u: SpectralField, target: str = "H") -> HSNormReport:
    """Squared Hilbert-Schmidt norm into H^-1, H or H^{0,1}, with the matching growth bound."""
    cols = sigma_columns(m, t, u.coeffs)
    g = m.grid
    c = m.constants
    u_h = weighted_sq(g, u.coeffs)
    d1 = 1j * g.k1 * u.coeffs
    if target == "H-1":
        value = float(np.sum(np.abs(cols) ** 2 / (1.0 + g.ksq)))
        bound = c.Kp0 + c.Kp1 * u_h
    elif target == "H":
        value = float(np.sum(weighted_sq(g, cols)))
        bound = c.K0 + c.K1 * u_h + c.K2 * weighted_sq(g, d1)
    elif target == "H01":
        value = float(np.sum(weighted_sq(g, cols, 0.0, 1.0)))
        bound = (
            c.Kt0
            + c.Kt1 * weighted_sq(g, u.coeffs, 0.0, 1.0)
            + c.Kt2 * (weighted_sq(g, d1) + weighted_sq(g, 1j * g.k2 * d1))
        )
    else:
        raise ValueError(f"unknown target space {target!r}; use 'H-1', 'H' or 'H01'")
    return HSNormReport(target, value, float(bound))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Increments of J independent Brownian motions on a uniform grid.

    The increments are a pure function of (seed, dt, J, n_steps).
    """

    seed: int
    dt: float
    J: int
    n_steps: int
    increments: np.ndarray = field(repr=False)

    @classmethod
    def generate(cls, seed: int, dt: float, J: int, n_steps: int) -> WienerPath:
        rng = np.random.Generator(np.random.PCG64(seed))
        inc = rng.standard_normal((n_steps, J)) * np.sqrt(dt)
        return cls(int(seed), float(dt), int(J), int(n_steps), inc)

    def coarsen(self, factor: int) -> WienerPath:
        """Sum blocks of ``factor`` consecutive increments (same Brownian path, step dt*factor)."""
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} steps not divisible by {factor}")
        inc = self.increments.reshape(self.n_steps // factor, factor, self.J).sum(axis=1)
        return WienerPath(self.seed, self.dt * factor, self.J, self.n_steps // factor, inc)

    def scaled(self, factor: float) -> WienerPath:
        return WienerPath(self.seed, self.dt, self.J, self.n_steps, factor * self.increments)
