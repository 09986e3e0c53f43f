"""Truncated Fourier fields on the torus T^2 = [0, 2pi)^2.

Coefficients use the normalization u_hat_k = (2pi)^-2 * int u exp(-i k.x) dx,
so every norm below is a plain weighted sum over retained wavenumbers.

Storage is *centered*: a field on a grid with M1 = n_h/2, M2 = n_v/2 is a
complex array of shape ``(2, 2*M1 + 1, 2*M2 + 1)`` whose entry
``[c, M1 + k1, M2 + k2]`` is component ``c`` of the coefficient at
``k = (k1, k2)``.  The map k -> -k is then a flip of both wavenumber axes.

All array-level helpers accept arbitrary leading batch axes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "SpectralField",
    "LittlewoodPaleyPartition",
    "dyadic_partition",
    "project_leray",
    "derivative",
    "aniso_norm",
    "lp_block",
    "lp_norm",
    "lp_equivalence_constants",
    "random_field",
    "mode_field",
    "to_physical",
    "from_physical",
    "inner",
    "weighted_sq",
    "leray",
    "save_fields",
    "load_fields",
    "field_to_json",
    "field_from_json",
]

FORMAT_VERSION = 1
_MAGIC = b"ANSF"


@dataclass(frozen=True)
class Grid:
    """Rectangular wavenumber lattice |k1| <= n_h/2, |k2| <= n_v/2.

    ``dealias_fraction`` is an extra sharp cutoff applied to the output of the
    quadratic term; products themselves are always evaluated alias-free on a
    padded physical grid, so the default of 1.0 keeps every retained mode.
    """

    n_h: int
    n_v: int
    dealias_fraction: float = 1.0

    def __post_init__(self):
        for name in ("n_h", "n_v"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 4, got {n!r}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError(f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")

    @property
    def m_h(self) -> int:
        return self.n_h // 2

    @property
    def m_v(self) -> int:
        return self.n_v // 2

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.m_h + 1, 2 * self.m_v + 1)

    @property
    def field_shape(self) -> tuple[int, int, int]:
        return (2,) + self.shape

    @cached_property
    def k1(self) -> np.ndarray:
        return np.arange(-self.m_h, self.m_h + 1, dtype=float)[:, None]

    @cached_property
    def k2(self) -> np.ndarray:
        return np.arange(-self.m_v, self.m_v + 1, dtype=float)[None, :]

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1**2 + self.k2**2

    @cached_property
    def physical_shape(self) -> tuple[int, int]:
        # 3M+1 points resolve every product of two retained modes without
        # aliasing back into |k| <= M (the 3/2-rule form of the 2/3 rule).
        def size(m):
            n = 3 * m + 1
            return n + (n % 2)

        return (size(self.m_h), size(self.m_v))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        f = self.dealias_fraction
        keep = (np.abs(self.k1) <= f * self.m_h + 1e-12) & (np.abs(self.k2) <= f * self.m_v + 1e-12)
        return keep.astype(float)

    @cached_property
    def leray_tensor(self) -> np.ndarray:
        """Per-mode projector I - k k^T/|k|^2 (identity at k = 0), shape (2, 2, K1, K2)."""
        ksq = self.ksq.copy()
        ksq[self.m_h, self.m_v] = 1.0
        kk = [np.broadcast_to(self.k1, self.shape), np.broadcast_to(self.k2, self.shape)]
        P = np.empty((2, 2) + self.shape)
        for a in range(2):
            for b in range(2):
                P[a, b] = float(a == b) - kk[a] * kk[b] / ksq
        return P

    def zeros(self) -> np.ndarray:
        return np.zeros(self.field_shape, dtype=complex)

    def to_dict(self) -> dict:
        return {"n_h": self.n_h, "n_v": self.n_v, "dealias_fraction": self.dealias_fraction}


# --------------------------------------------------------------------------
# array-level operators


def to_physical(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Evaluate Hermitian coefficients on the padded physical grid."""
    n1, n2 = grid.physical_shape
    m1, m2 = grid.m_h, grid.m_v
    A = np.zeros(c.shape[:-2] + (n1, n2 // 2 + 1), dtype=complex)
    # centered index m + k  ->  FFT index k mod n; only k2 >= 0 is needed
    A[..., : m1 + 1, : m2 + 1] = c[..., m1:, m2:]
    A[..., n1 - m1 :, : m2 + 1] = c[..., :m1, m2:]
    return np.fft.irfft2(A, s=(n1, n2), norm="forward")


def from_physical(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Coefficients of a real physical-grid array, truncated to the retained lattice."""
    n1 = grid.physical_shape[0]
    m1, m2 = grid.m_h, grid.m_v
    A = np.fft.rfft2(f, norm="forward")
    c = np.empty(f.shape[:-2] + grid.shape, dtype=complex)
    c[..., m1:, m2:] = A[..., : m1 + 1, : m2 + 1]
    c[..., :m1, m2:] = A[..., n1 - m1 :, : m2 + 1]
    c[..., :, :m2] = np.conj(c[..., ::-1, : m2 : -1])
    return c


def leray(grid: Grid, c: np.ndarray) -> np.ndarray:
    P = grid.leray_tensor
    out = np.empty_like(c)
    out[..., 0, :, :] = P[0, 0] * c[..., 0, :, :] + P[0, 1] * c[..., 1, :, :]
    out[..., 1, :, :] = P[1, 0] * c[..., 0, :, :] + P[1, 1] * c[..., 1, :, :]
    return out


def spectral_diff(grid: Grid, c: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
    k = grid.k1 if axis == 1 else grid.k2
    return (1j * k) ** order * c


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Real inner product sum_k a_hat_k . conj(b_hat_k) over the last three axes."""
    return np.real(np.sum(a * np.conj(b), axis=(-3, -2, -1)))


def weighted_sq(grid: Grid, c: np.ndarray, s: float = 0.0, sp: float = 0.0) -> np.ndarray:
    """sum_k (1+k1^2)^s (1+k2^2)^sp |c_k|^2 over the last three axes."""
    w = (1.0 + grid.k1**2) ** s * (1.0 + grid.k2**2) ** sp
    return np.sum(w * (c.real**2 + c.imag**2), axis=(-3, -2, -1))


def divergence_residual(grid: Grid, c: np.ndarray) -> float:
    return float(np.max(np.abs(grid.k1 * c[..., 0, :, :] + grid.k2 * c[..., 1, :, :])))


def symmetrize(c: np.ndarray) -> np.ndarray:
    """Enforce c_k = conj(c_{-k})."""
    return 0.5 * (c + np.conj(c[..., ::-1, ::-1]))


# --------------------------------------------------------------------------
# field type


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid
    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.field_shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.field_shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: Grid) -> SpectralField:
        return cls(grid, grid.zeros(), True)

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> SpectralField:
        """Build from samples on ``grid.physical_shape`` (shape (2, N1, N2))."""
        return cls(grid, from_physical(grid, np.asarray(values, dtype=float)))

    def physical(self) -> np.ndarray:
        return to_physical(self.grid, self.coeffs)

    def coeff(self, k1: int, k2: int) -> np.ndarray:
        return self.coeffs[:, self.grid.m_h + k1, self.grid.m_v + k2]

    def reality_error(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(c - np.conj(c[:, ::-1, ::-1]))))

    def divergence_error(self) -> float:
        return divergence_residual(self.grid, self.coeffs)

    def norm(self) -> float:
        return float(np.sqrt(weighted_sq(self.grid, self.coeffs)))

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.divergence_free and other.divergence_free)

    def __sub__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.divergence_free and other.divergence_free)

    def __mul__(self, a: float) -> SpectralField:
        return SpectralField(self.grid, a * self.coeffs, self.divergence_free)

    __rmul__ = __mul__

    def __neg__(self) -> SpectralField:
        return SpectralField(self.grid, -self.coeffs, self.divergence_free)

    def dot(self, other: SpectralField) -> float:
        self._check(other)
        return float(inner(self.coeffs, other.coeffs))


def project_leray(f: SpectralField) -> SpectralField:
    """Leray projection mode by mode; the k = 0 coefficient is left as is."""
    return SpectralField(f.grid, leray(f.grid, f.coeffs), True)


def derivative(f: SpectralField, axis: int, order: int = 1) -> SpectralField:
    if axis not in (1, 2):
        raise ValueError("axis must be 1 (horizontal) or 2 (vertical)")
    if order < 1:
        raise ValueError("order must be a positive integer")
    return SpectralField(f.grid, spectral_diff(f.grid, f.coeffs, axis, order), f.divergence_free)


def aniso_norm(f: SpectralField, s: float = 0.0, sp: float = 0.0, isotropic: bool = False) -> float:
    """H^{s,s'} norm, or the isotropic H^s norm when ``isotropic`` is set (``sp`` ignored)."""
    if isotropic:
        w = (1.0 + f.grid.ksq) ** s
        return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))
    return float(np.sqrt(weighted_sq(f.grid, f.coeffs, s, sp)))


# --------------------------------------------------------------------------
# Littlewood-Paley blocks in the vertical variable


def _smooth_step(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def chi_profile(z) -> np.ndarray:
    """C-infinity cutoff: 1 on [0, 3/4], 0 on [4/3, inf)."""
    z = np.abs(np.asarray(z, dtype=float))
    return 1.0 - _smooth_step((z - 0.75) / (4.0 / 3.0 - 0.75))


def theta_profile(z) -> np.ndarray:
    """Annulus profile chi(z/2) - chi(z), supported in [3/4, 8/3]."""
    z = np.asarray(z, dtype=float)
    return chi_profile(z / 2.0) - chi_profile(z)


@dataclass(frozen=True, eq=False)
class LittlewoodPaleyPartition:
    """Dyadic partition of unity sampled on |k2| = 0..M2.

    ``theta[j]`` holds theta(2^-j |k2|) for j = 0..j_max.
    """

    grid: Grid
    chi: np.ndarray
    theta: np.ndarray
    j_max: int

    def block_weights(self, j: int) -> np.ndarray:
        if j < -1 or j > self.j_max:
            raise IndexError(f"block index {j} outside [-1, {self.j_max}]")
        return self.chi if j == -1 else self.theta[j]

    def multiplier(self, j: int) -> np.ndarray:
        """Block multiplier broadcast over the (K1, K2) lattice."""
        w = self.block_weights(j)
        k2 = np.abs(np.arange(-self.grid.m_v, self.grid.m_v + 1))
        return w[k2][None, :]

    def total(self) -> np.ndarray:
        return self.chi + self.theta.sum(axis=0)


def dyadic_partition(grid: Grid) -> LittlewoodPaleyPartition:
    m = grid.m_v
    z = np.arange(m + 1, dtype=float)
    j_max = 0
    while 0.75 * 2 ** (j_max + 1) < m:
        j_max += 1
    theta = np.stack([theta_profile(z / 2.0**j) for j in range(j_max + 1)])
    return LittlewoodPaleyPartition(grid, chi_profile(z), theta, j_max)


def lp_block(f: SpectralField, j: int, part: LittlewoodPaleyPartition) -> SpectralField:
    if part.grid.m_v != f.grid.m_v:
        raise ValueError("partition built for a different vertical resolution")
    return SpectralField(f.grid, part.multiplier(j) * f.coeffs, f.divergence_free)


def lp_norm(f: SpectralField, s: float, sp: float, part: LittlewoodPaleyPartition) -> float:
    """(sum_j 2^{2 j s'} ||Delta_j f||^2_{L^2_v(H^s_h)})^{1/2}."""
    total = 0.0
    for j in range(-1, part.j_max + 1):
        block = part.multiplier(j) * f.coeffs
        total += 2.0 ** (2 * j * sp) * weighted_sq(f.grid, block, s, 0.0)
    return float(np.sqrt(total))


def lp_equivalence_constants(part: LittlewoodPaleyPartition, sp: float) -> tuple[float, float]:
    """Exact (c, C) with c <= lp_norm/aniso_norm <= C on this grid, for any s."""
    z = np.arange(part.grid.m_v + 1, dtype=float)
    w = 2.0 ** (-2 * sp) * part.chi**2
    for j in range(part.j_max + 1):
        w = w + 2.0 ** (2 * j * sp) * part.theta[j] ** 2
    ratio = np.sqrt(w / (1.0 + z**2) ** sp)
    return float(ratio.min()), float(ratio.max())


# --------------------------------------------------------------------------
# constructors


def mode_field(grid: Grid, k: tuple[int, int], amplitude: complex = 1.0, vector=None) -> SpectralField:
    """Real field ``a * amplitude * exp(i k.x) + c.c.``; ``vector`` defaults to k-perp/|k|."""
    k1, k2 = k
    if vector is None:
        nrm = np.hypot(k1, k2)
        vector = (-k2 / nrm, k1 / nrm)
    c = grid.zeros()
    v = np.asarray(vector, dtype=float)
    c[:, grid.m_h + k1, grid.m_v + k2] += amplitude * v
    c[:, grid.m_h - k1, grid.m_v - k2] += np.conj(amplitude) * v
    return SpectralField(grid, c, bool(abs(k1 * v[0] + k2 * v[1]) < 1e-14))


def random_field(
    grid: Grid,
    rng: np.random.Generator,
    slope: float = 2.0,
    k_max: float | None = None,
    amplitude: float = 1.0,
    divergence_free: bool = True,
) -> SpectralField:
    """Random real field with |u_hat_k| ~ |k|^-slope, scaled to ||u||_H = amplitude."""
    shape = grid.field_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    ksq = grid.ksq.copy()
    ksq[grid.m_h, grid.m_v] = 1.0
    c = c * ksq ** (-slope / 2)
    c[:, grid.m_h, grid.m_v] = 0.0
    if k_max is not None:
        c = c * (ksq <= k_max**2)
    c = symmetrize(c)
    if divergence_free:
        c = leray(grid, c)
    nrm = np.sqrt(weighted_sq(grid, c))
    if nrm > 0:
        c = c * (amplitude / nrm)
    return SpectralField(grid, c, divergence_free)


# --------------------------------------------------------------------------
# serialization


def save_fields(path, grid: Grid, coeffs: np.ndarray) -> None:
    """Binary record: magic, version, n_h, n_v, count, then little-endian
    complex128 coefficients in row-major (snapshot, component, k1, k2) order."""
    c = np.asarray(coeffs, dtype="<c16").reshape((-1,) + grid.field_shape)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, grid.n_h, grid.n_v, c.shape[0]))
        fh.write(np.ascontiguousarray(c).tobytes())


def load_fields(path, dealias_fraction: float = 1.0) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a field file")
        version, n_h, n_v, count = struct.unpack("<IIII", fh.read(16))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        grid = Grid(n_h, n_v, dealias_fraction)
        data = np.frombuffer(fh.read(), dtype="<c16")
    expected = count * int(np.prod(grid.field_shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} coefficients, found {data.size}")
    return grid, data.reshape((count,) + grid.field_shape).astype(complex)


def field_to_json(f: SpectralField) -> str:
    flat = f.coeffs.reshape(-1)
    inter = np.empty(2 * flat.size)
    inter[0::2], inter[1::2] = flat.real, flat.imag
    return json.dumps({"version": FORMAT_VERSION, "n_h": f.grid.n_h, "n_v": f.grid.n_v, "coeffs": inter.tolist()})


def field_from_json(text: str, dealias_fraction: float = 1.0) -> SpectralField:
    d = json.loads(text)
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported field format version {d.get('version')!r}")
    grid = Grid(d["n_h"], d["n_v"], dealias_fraction)
    inter = np.asarray(d["coeffs"], dtype=float)
    c = (inter[0::2] + 1j * inter[1::2]).reshape(grid.field_shape)
    return SpectralField(grid, c)
