"""Time integrators for the anisotropic stochastic Navier-Stokes family.

Every scheme shares one splitting: the diagonal linear part d_1^2 (plus an
optional eps2 * d_2^2) is applied through its exact exponential, convection is
explicit Euler and noise is Euler-Maruyama,

    x_{n+1} = E(dt) [ x_n - dt * N_n(x_n) + dt * F_n + G_n dW_n ].

Linearized and perturbation equations are built from the same pieces so that
their discrete solutions are the exact linearizations of the primal scheme.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .forms import _advect, _finish, convection, linearized_convection, velocity_and_gradient
from .noise import NoiseModel, WienerPath
from .spectral import (
    Grid,
    SpectralField,
    divergence_residual,
    from_physical,
    inner,
    leray,
    save_fields,
    weighted_sq,
)

__all__ = [
    "IntegratorConfig",
    "DeviationScale",
    "TrajectoryRecord",
    "DynamicsError",
    "BlowUpError",
    "integrate_deterministic",
    "integrate_primal",
    "integrate_clt_limit",
    "integrate_scaled",
    "integrate_skeleton",
    "integrate_controlled",
    "energy_report",
    "moment_report",
    "weighted_report",
    "SkeletonOperator",
    "NORM_WEIGHTS",
]

# squared norms recorded at every step: name -> (s, s') in (1+k1^2)^s (1+k2^2)^s'
NORM_WEIGHTS = {
    "H": (0.0, 0.0),
    "H10": (1.0, 0.0),
    "H01": (0.0, 1.0),
    "H11": (1.0, 1.0),
    "H02": (0.0, 2.0),
    "H12": (1.0, 2.0),
}


class DynamicsError(RuntimeError):
    pass


class BlowUpError(DynamicsError):
    def __init__(self, step: int, time: float, norm: float):
        super().__init__(f"solution left the admissible range at step {step} (t={time:.4g}): ||x||_H = {norm:.3g}")
        self.step, self.time, self.norm = step, time, norm


@dataclass(frozen=True)
class IntegratorConfig:
    """Uniform time grid and solver knobs.

    ``convection=False`` drops the quadratic term; it exists for testing
    against linear closed-form solutions.
    """

    dt: float = 1e-3
    T: float = 0.5
    record_every: int = 1
    blowup: float = 1e8
    convection: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def refined(self, factor: int) -> IntegratorConfig:
        return IntegratorConfig(self.dt / factor, self.T, self.record_every * factor, self.blowup, self.convection)

    def digest(self, grid: Grid) -> str:
        blob = json.dumps({"grid": grid.to_dict(), "integrator": asdict(self)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class DeviationScale:
    """Pair (eps, lambda(eps)) with lambda >= 1 and sqrt(eps) * lambda < 1."""

    eps: float
    lam: float

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.lam < 1.0:
            raise ValueError(f"lambda(eps) must be >= 1, got {self.lam}")
        if math.sqrt(self.eps) * self.lam >= 1.0:
            raise ValueError("sqrt(eps) * lambda(eps) must be < 1")

    @classmethod
    def from_exponent(cls, eps: float, a: float = 0.25) -> DeviationScale:
        """lambda(eps) = eps^-a; a in (0, 1/2) gives lambda -> inf and sqrt(eps) lambda -> 0."""
        if not 0.0 < a < 0.5:
            raise ValueError(f"scale exponent must lie in (0, 1/2), got {a}")
        return cls(eps, eps ** (-a))

    @property
    def sqrt_eps_lam(self) -> float:
        return math.sqrt(self.eps) * self.lam


@dataclass(eq=False)
class TrajectoryRecord:
    """Per-step squared norms plus thinned field snapshots.

    ``norms[name][n]`` is the squared norm of the state at ``times[n]``; the
    snapshot array holds the states at ``times[snapshot_steps]``.
    """

    grid: Grid
    dt: float
    times: np.ndarray
    norms: dict
    snapshot_steps: np.ndarray
    snapshots: np.ndarray | None
    seed: int | None = None
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def final(self) -> np.ndarray:
        if self.snapshots is None or self.snapshot_steps[-1] != self.n_steps:
            raise DynamicsError("terminal state was not recorded")
        return self.snapshots[-1]

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.snapshots[i], True)

    def full(self) -> np.ndarray:
        """All per-step states; requires record_every == 1."""
        if self.snapshots is None or len(self.snapshot_steps) != len(self.times):
            raise DynamicsError("trajectory was not recorded at every step")
        return self.snapshots

    def sup(self, name: str = "H") -> float:
        return float(np.max(self.norms[name]))

    def integral(self, name: str = "H10") -> float:
        # left-endpoint rule, consistent with the explicit scheme
        return float(self.dt * np.sum(self.norms[name][:-1]))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "dt": self.dt,
            "times": self.times.tolist(),
            "norms": {k: v.tolist() for k, v in self.norms.items()},
            "seed": self.seed,
            "config_hash": self.config_hash,
            "meta": self.meta,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    def write_csv(self, path) -> None:
        names = list(self.norms)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for n, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(self.norms[k][n])) for k in names])

    def write_snapshots(self, path) -> None:
        if self.snapshots is None:
            raise DynamicsError("no snapshots recorded")
        save_fields(path, self.grid, self.snapshots)


def _norms_of(grid: Grid, x: np.ndarray) -> dict:
    return {k: weighted_sq(grid, x, *w) for k, w in NORM_WEIGHTS.items()}


def record_from_states(grid: Grid, dt: float, states: np.ndarray, record_every: int = 1, **kw) -> TrajectoryRecord:
    """Build a record from a full (n_steps + 1, 2, K1, K2) state array."""
    n = states.shape[0] - 1
    steps = np.arange(0, n + 1, record_every)
    if steps[-1] != n:
        steps = np.append(steps, n)
    return TrajectoryRecord(
        grid, dt, dt * np.arange(n + 1), _norms_of(grid, states), steps, states[steps].copy(), **kw
    )


def _decay(grid: Grid, dt: float, eps2: float = 0.0) -> np.ndarray:
    return np.exp(-(grid.k1**2 + eps2 * grid.k2**2) * dt)


def _march(grid, x0, cfg: IntegratorConfig, increment, decay=None, keep_all=False, seed=None, meta=None):
    """Run x_{n+1} = decay * (x_n + increment(n, x_n)), recording norms and snapshots."""
    dt, n_steps = cfg.dt, cfg.n_steps
    decay = _decay(grid, dt) if decay is None else decay
    every = 1 if keep_all else cfg.record_every
    steps = list(range(0, n_steps + 1, every))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    snaps = np.empty((len(steps),) + grid.field_shape, dtype=complex)
    norms = {k: np.empty(n_steps + 1) for k in NORM_WEIGHTS}
    limit = cfg.blowup**2
    x = np.array(x0, dtype=complex)
    si = 0
    for n in range(n_steps + 1):
        for k, w in NORM_WEIGHTS.items():
            norms[k][n] = weighted_sq(grid, x, *w)
        h = norms["H"][n]
        if not math.isfinite(h) or h > limit:
            raise BlowUpError(n, n * dt, math.sqrt(h) if math.isfinite(h) else h)
        if si < len(steps) and steps[si] == n:
            snaps[si] = x
            si += 1
        if n < n_steps:
            x = decay * (x + increment(n, x))
    return TrajectoryRecord(
        grid,
        dt,
        dt * np.arange(n_steps + 1),
        norms,
        np.asarray(steps),
        snaps,
        seed=seed,
        config_hash=cfg.digest(grid),
        meta=meta or {},
    )


def _check_div_free(u0: SpectralField):
    scale = max(u0.norm(), 1e-300)
    if divergence_residual(u0.grid, u0.coeffs) > 1e-10 * scale * max(u0.grid.m_h, u0.grid.m_v):
        raise ValueError("initial field is not divergence-free")


def _check_path(path: WienerPath, noise: NoiseModel, cfg: IntegratorConfig):
    if path.n_steps != cfg.n_steps or not math.isclose(path.dt, cfg.dt, rel_tol=1e-12):
        raise DynamicsError(
            f"Wiener path has {path.n_steps} steps of {path.dt:g}, config needs {cfg.n_steps} of {cfg.dt:g}"
        )
    if path.J != noise.J:
        raise DynamicsError(f"Wiener path has J={path.J}, noise model J={noise.J}")


def _check_base(u0_traj: TrajectoryRecord, cfg: IntegratorConfig) -> np.ndarray:
    if u0_traj.n_steps != cfg.n_steps or not math.isclose(u0_traj.dt, cfg.dt, rel_tol=1e-12):
        raise DynamicsError("deterministic trajectory does not match the integrator time grid")
    return u0_traj.full()


def integrate_deterministic(u0: SpectralField, cfg: IntegratorConfig, keep_all: bool = False) -> TrajectoryRecord:
    """du = d_1^2 u dt - B(u) dt."""
    _check_div_free(u0)
    grid, dt = u0.grid, cfg.dt

    def incr(n, x):
        if not cfg.convection:
            return np.zeros_like(x)
        return -dt * convection(grid, x)

    return _march(grid, u0.coeffs, cfg, incr, keep_all=keep_all, meta={"equation": "deterministic"})


def integrate_primal(
    u0: SpectralField,
    eps: float,
    noise: NoiseModel,
    path: WienerPath,
    cfg: IntegratorConfig,
    keep_all: bool = False,
) -> TrajectoryRecord:
    """du = d_1^2 u dt - B(u) dt + sqrt(eps) sigma(t, u) dW; eps = 0 is the deterministic run."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    _check_div_free(u0)
    _check_path(path, noise, cfg)
    grid, dt = u0.grid, cfg.dt
    se = math.sqrt(eps)
    dW = path.increments

    def incr(n, x):
        d = -dt * convection(grid, x) if cfg.convection else np.zeros_like(x)
        if eps == 0.0:
            return d
        w = noise.profile(x) * (se * dW[n])
        return d + np.tensordot(w, noise.basis, axes=([-1], [0]))

    meta = {"equation": "primal", "eps": eps}
    return _march(grid, u0.coeffs, cfg, incr, keep_all=keep_all, seed=path.seed, meta=meta)


def _perturbation(
    u0_traj: TrajectoryRecord,
    noise: NoiseModel,
    cfg: IntegratorConfig,
    *,
    coupling: float,
    noise_factor: float,
    path: WienerPath | None,
    control: np.ndarray | None,
    keep_all: bool,
    meta: dict,
):
    """x_{n+1} = E[x - dt(L_n x + f B(x, x)) + dt sigma(u0 + f x) v_n + g sigma(u0 + f x) dW_n]."""
    grid, dt = u0_traj.grid, cfg.dt
    base = _check_base(u0_traj, cfg)
    if path is not None:
        _check_path(path, noise, cfg)
    t = u0_traj.times

    def incr(n, x):
        b = base[n]
        d = np.zeros_like(x)
        if cfg.convection:
            if coupling:
                d = -dt * (linearized_convection(grid, b, x) + coupling * convection(grid, x))
            else:
                d = -dt * linearized_convection(grid, b, x)
        w = np.zeros(noise.J)
        if control is not None:
            w = w + dt * control[n]
        if path is not None and noise_factor:
            w = w + noise_factor * path.increments[n]
        if np.any(w):
            prof = noise.profile(b + coupling * x if coupling else b)
            d = d + np.tensordot(prof * w, noise.basis, axes=([-1], [0]))
        return d

    return _march(
        grid, grid.zeros(), cfg, incr, keep_all=keep_all, seed=None if path is None else path.seed, meta=meta
    )


def integrate_clt_limit(
    u0_traj: TrajectoryRecord,
    noise: NoiseModel,
    path: WienerPath,
    cfg: IntegratorConfig,
    keep_all: bool = False,
) -> TrajectoryRecord:
    """dV = d_1^2 V dt - B(V, u0) dt - B(u0, V) dt + sigma(t, u0) dW, V(0) = 0."""
    return _perturbation(
        u0_traj,
        noise,
        cfg,
        coupling=0.0,
        noise_factor=1.0,
        path=path,
        control=None,
        keep_all=keep_all,
        meta={"equation": "clt-limit"},
    )


def integrate_scaled(
    u0: SpectralField,
    eps: float,
    scale: DeviationScale | None,
    noise: NoiseModel,
    path: WienerPath,
    cfg: IntegratorConfig,
    *,
    u0_traj: TrajectoryRecord | None = None,
    mode: str = "difference",
    keep_all: bool = False,
) -> TrajectoryRecord:
    """(u^eps - u0) / sqrt(eps) when ``scale`` is None, else (u^eps - u0) / (sqrt(eps) lambda).

    ``mode="difference"`` divides the coupled primal/deterministic pair driven
    by ``path``; ``mode="direct"`` integrates the perturbation equation itself.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if scale is not None and not math.isclose(scale.eps, eps):
        raise DynamicsError(f"deviation scale built for eps={scale.eps}, asked for eps={eps}")
    factor = math.sqrt(eps) if scale is None else scale.sqrt_eps_lam
    if u0_traj is None:
        u0_traj = integrate_deterministic(u0, cfg, keep_all=True)
    meta = {"equation": "scaled", "eps": eps, "factor": factor, "mode": mode}
    if mode == "difference":
        ue = integrate_primal(u0, eps, noise, path, cfg, keep_all=True)
        states = (ue.full() - _check_base(u0_traj, cfg)) / factor
        every = 1 if keep_all else cfg.record_every
        return record_from_states(
            u0.grid, cfg.dt, states, every, seed=path.seed, config_hash=cfg.digest(u0.grid), meta=meta
        )
    if mode == "direct":
        return _perturbation(
            u0_traj,
            noise,
            cfg,
            coupling=factor,
            noise_factor=math.sqrt(eps) / factor,
            path=path,
            control=None,
            keep_all=keep_all,
            meta=meta,
        )
    raise ValueError(f"unknown mode {mode!r}")


def integrate_controlled(
    v: np.ndarray,
    scale: DeviationScale,
    u0_traj: TrajectoryRecord,
    noise: NoiseModel,
    path: WienerPath | None,
    cfg: IntegratorConfig,
    *,
    noise_factor: float | None = None,
    coupling: float | None = None,
    keep_all: bool = False,
) -> TrajectoryRecord:
    """Controlled perturbation X^eps driven by ``v`` and lambda^-1 dW.

    ``noise_factor`` and ``coupling`` override lambda^-1 and sqrt(eps) lambda;
    they exist to probe the parameter limits toward the skeleton equation.
    """
    v = _control_values(v, noise, cfg)
    g = 1.0 / scale.lam if noise_factor is None else noise_factor
    f = scale.sqrt_eps_lam if coupling is None else coupling
    return _perturbation(
        u0_traj,
        noise,
        cfg,
        coupling=f,
        noise_factor=g,
        path=path,
        control=v,
        keep_all=keep_all,
        meta={"equation": "controlled", "eps": scale.eps, "lam": scale.lam},
    )


def _control_values(phi, noise: NoiseModel, cfg: IntegratorConfig) -> np.ndarray:
    values = getattr(phi, "values", phi)
    values = np.asarray(values, dtype=float)
    if values.shape != (cfg.n_steps, noise.J):
        raise DynamicsError(f"control has shape {values.shape}, expected {(cfg.n_steps, noise.J)}")
    return values


class SkeletonOperator:
    """Linear map phi -> X^phi of the skeleton scheme, with its exact discrete adjoint.

    Forward: X_{n+1} = E [X_n - dt L_n X_n + dt S_n phi_n], X_0 = 0, where
    L_n X = B(X, u0_n) + B(u0_n, X) and S_n phi = sigma(t_n, u0_n) phi.
    """

    def __init__(self, u0_traj: TrajectoryRecord, noise: NoiseModel, cfg: IntegratorConfig, eps2: float = 0.0):
        if eps2 < 0:
            raise ValueError("regularization eps2 must be nonnegative")
        self.grid = u0_traj.grid
        self.noise = noise
        self.cfg = cfg
        self.eps2 = eps2
        self.dt = cfg.dt
        self.n_steps = cfg.n_steps
        base = _check_base(u0_traj, cfg)[: self.n_steps]
        self.decay = _decay(self.grid, self.dt, eps2)
        self.U, self.G = velocity_and_gradient(self.grid, base)
        self.profile = noise.profile(base)  # (n_steps, J)
        self.basis = noise.basis
        self.u0_traj = u0_traj

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_steps, self.noise.J)

    def _L(self, n: int, x: np.ndarray) -> np.ndarray:
        Ux, Gx = velocity_and_gradient(self.grid, x)
        return _finish(self.grid, _advect(Ux, self.G[n]) + _advect(self.U[n], Gx))

    def _LT(self, n: int, y: np.ndarray) -> np.ndarray:
        grid = self.grid
        y = leray(grid, y * grid.dealias_mask if grid.dealias_fraction < 1.0 else y)
        Uy, Gy = velocity_and_gradient(grid, y)
        G = self.G[n]
        # (grad u0)^T y - (u0 . grad) y
        gt = np.stack([G[0, 0] * Uy[0] + G[1, 0] * Uy[1], G[0, 1] * Uy[0] + G[1, 1] * Uy[1]])
        return leray(grid, from_physical(grid, gt - _advect(self.U[n], Gy)))

    def forward(self, phi: np.ndarray) -> np.ndarray:
        """All states X_0..X_N, shape (N + 1, 2, K1, K2)."""
        phi = np.asarray(phi, dtype=float)
        dt = self.dt
        X = np.zeros((self.n_steps + 1,) + self.grid.field_shape, dtype=complex)
        forcing = np.tensordot(self.profile * phi, self.basis, axes=([-1], [0]))
        for n in range(self.n_steps):
            x = X[n]
            d = dt * forcing[n]
            if self.cfg.convection and n > 0:
                d = d - dt * self._L(n, x)
            X[n + 1] = self.decay * (x + d)
        return X

    def adjoint(self, R: np.ndarray) -> np.ndarray:
        """Gradient with respect to phi of sum_n <R_n, X_n> (R_n = dJ/dX_n)."""
        dt = self.dt
        lam = np.array(R[self.n_steps], dtype=complex)
        grad = np.zeros(self.shape)
        for n in range(self.n_steps - 1, -1, -1):
            el = self.decay * lam  # E^T lambda_{n+1}
            grad[n] = dt * self.profile[n] * inner(self.basis, el)
            lam = R[n] + el
            if self.cfg.convection and n > 0:
                lam = lam - dt * self._LT(n, el)
        return grad

    def record(self, X: np.ndarray, meta=None) -> TrajectoryRecord:
        return record_from_states(
            self.grid,
            self.dt,
            X,
            self.cfg.record_every,
            config_hash=self.cfg.digest(self.grid),
            meta=meta or {"equation": "skeleton", "eps2": self.eps2},
        )


def integrate_skeleton(
    phi,
    u0_traj: TrajectoryRecord,
    noise: NoiseModel,
    cfg: IntegratorConfig,
    eps2: float = 0.0,
    keep_all: bool = False,
) -> TrajectoryRecord:
    """dX = d_1^2 X dt + eps2 d_2^2 X dt - B(X, u0) dt - B(u0, X) dt + sigma(t, u0) phi dt, X(0) = 0."""
    values = _control_values(phi, noise, cfg)
    op = SkeletonOperator(u0_traj, noise, cfg, eps2)
    X = op.forward(values)
    if not np.all(np.isfinite(X)) or np.max(weighted_sq(op.grid, X)) > cfg.blowup**2:
        bad = int(np.argmax(~np.isfinite(weighted_sq(op.grid, X)) | (weighted_sq(op.grid, X) > cfg.blowup**2)))
        raise BlowUpError(bad, bad * cfg.dt, float(np.sqrt(weighted_sq(op.grid, X[bad]))))
    every = 1 if keep_all else cfg.record_every
    return record_from_states(
        op.grid, cfg.dt, X, every, config_hash=cfg.digest(op.grid), meta={"equation": "skeleton", "eps2": eps2}
    )


def energy_report(traj: TrajectoryRecord) -> dict:
    """Discrete energy balance of a deterministic run plus the H^{0,2}-level bounds.

    The balance residual at step n is
    (||u_{n+1}||^2 - ||u_n||^2)/dt + 2 ||d_1 u_n||^2, which is O(dt) because
    <B(u), u> = 0.
    """
    if traj.snapshots is None:
        raise DynamicsError("energy report needs recorded snapshots")
    H = traj.norms["H"]
    d1 = traj.norms["H10"] - H
    resid = np.diff(H) / traj.dt + 2.0 * d1[:-1]
    div = max(divergence_residual(traj.grid, s) for s in traj.snapshots)
    return {
        "balance_residual_max": float(np.max(np.abs(resid))) if resid.size else 0.0,
        "balance_residual": resid,
        "sup_H01": traj.sup("H01"),
        "int_H11": traj.integral("H11"),
        "sup_H02": traj.sup("H02"),
        "int_H12": traj.integral("H12"),
        "H_nonincreasing": bool(np.all(np.diff(H) <= 1e-12 * max(H[0], 1e-300))),
        "divergence_max": div,
    }


def moment_report(traj: TrajectoryRecord) -> dict:
    """Pathwise quantities whose expectations are bounded by the moment estimates."""
    H = traj.norms["H"]
    H10 = traj.norms["H10"]
    dt = traj.dt
    return {
        "sup_H": float(H.max()),
        "sup_H_sq": float((H**2).max()),
        "int_H10": float(dt * np.sum(H10[:-1])),
        "int_H_H10": float(dt * np.sum((H * H10)[:-1])),
        "int_H_plus_1_H10": float(dt * np.sum(((H + 1.0) * H10)[:-1])),
    }


def weighted_report(traj: TrajectoryRecord, k: float) -> dict:
    """sup_t e^{-k g(t)} ||X||^2_{H^{0,1}} + int e^{-k g} ||X||^2_{H^{1,1}}, g(t) = int_0^t ||d_1 X||^2."""
    d1 = traj.norms["H10"] - traj.norms["H"]
    g = np.concatenate([[0.0], np.cumsum(traj.dt * d1[:-1])])
    w = np.exp(-k * g)
    sup_part = float(np.max(w * traj.norms["H01"]))
    int_part = float(traj.dt * np.sum((w * traj.norms["H11"])[:-1]))
    return {"k": k, "sup_weighted_H01": sup_part, "int_weighted_H11": int_part, "total": sup_part + int_part}
