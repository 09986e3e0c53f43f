"""Moderate-deviation rate function via the linear skeleton map.

I(g) = inf { 1/2 int_0^T |phi(t)|^2_{l^2} dt : X^phi = g }, +inf when g is not
reachable.  Controls are piecewise constant per time step in each of the J
noise directions, so a control is an array of shape (n_steps, J).

Since phi -> X^phi is linear, the constrained problem is attacked with a
quadratic-penalty cascade

    J_p(phi) = 1/2 misfit(X^phi - g) + p * cost(phi),   p -> p / 10,

each stage minimized by conjugate-gradient directions with a backtracking
Armijo line search, and gradients from the discrete adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SkeletonOperator, TrajectoryRecord
from .spectral import SpectralField, divergence_residual, inner, weighted_sq

__all__ = [
    "ControlPath",
    "RateResult",
    "LevelSetReport",
    "RateOptions",
    "control_cost",
    "rate_gradient",
    "rate_function",
    "level_set_probe",
    "tail_rate_infimum",
    "sample_controls",
]


@dataclass(frozen=True, eq=False)
class ControlPath:
    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("control values must have shape (n_steps, J)")
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return self.values.shape[0] * self.dt

    def l2_sq(self) -> float:
        return float(self.dt * np.sum(self.values**2))

    def in_level_set(self, N: float) -> bool:
        return self.l2_sq() <= N * (1 + 1e-12)

    def __mul__(self, c: float) -> ControlPath:
        return ControlPath(c * self.values, self.dt)

    __rmul__ = __mul__


def control_cost(phi: ControlPath) -> float:
    """1/2 sum_n |phi_n|^2 dt."""
    return 0.5 * phi.l2_sq()


def _values(phi) -> np.ndarray:
    return phi.values if isinstance(phi, ControlPath) else np.asarray(phi, dtype=float)


class _Misfit:
    """Data term of the penalized objective for one target and metric."""

    def __init__(self, op: SkeletonOperator, target, objective: str):
        grid = op.grid
        if objective not in ("path", "terminal"):
            raise ValueError(f"objective must be 'path' or 'terminal', got {objective!r}")
        if isinstance(target, TrajectoryRecord):
            target = target.full() if objective == "path" else target.final
        elif isinstance(target, SpectralField):
            target = target.coeffs
        g = np.asarray(target, dtype=complex)
        want = (op.n_steps + 1,) + grid.field_shape if objective == "path" else grid.field_shape
        if g.shape != want:
            raise ValueError(f"target has shape {g.shape}, the {objective} objective needs {want}")
        scale = math.sqrt(float(np.max(weighted_sq(grid, g)))) if g.size else 0.0
        if divergence_residual(grid, g) > 1e-9 * max(scale, 1e-300) * max(grid.m_h, grid.m_v):
            raise ValueError("target is not divergence-free")
        self.op, self.objective, self.target = op, objective, g
        self.weights = np.full(op.n_steps + 1, op.dt)

    def diff(self, X: np.ndarray) -> np.ndarray:
        return X - self.target if self.objective == "path" else X[-1] - self.target

    def value(self, X: np.ndarray) -> float:
        return 0.5 * self._sq(self.diff(X))

    def residual(self, X: np.ndarray) -> float:
        return math.sqrt(self._sq(self.diff(X)))

    def _sq(self, D: np.ndarray) -> float:
        if self.objective == "path":
            return float(np.sum(self.weights * weighted_sq(self.op.grid, D)))
        return float(weighted_sq(self.op.grid, D))

    def quad(self, AD: np.ndarray) -> float:
        """|A d|^2 in the objective metric, AD being the forward states of d."""
        D = AD if self.objective == "path" else AD[-1]
        return self._sq(D)

    def cross(self, X: np.ndarray, AD: np.ndarray) -> float:
        if self.objective == "path":
            return float(np.sum(self.weights * inner(X - self.target, AD)))
        return float(inner(X[-1] - self.target, AD[-1]))

    def state_gradient(self, X: np.ndarray) -> np.ndarray:
        R = np.zeros_like(X)
        if self.objective == "path":
            R[:] = self.weights[:, None, None, None] * (X - self.target)
        else:
            R[-1] = X[-1] - self.target
        return R


def rate_gradient(
    phi,
    target,
    objective: str = "path",
    *,
    operator: SkeletonOperator,
    penalty: float = 0.0,
) -> np.ndarray:
    """Gradient of 1/2 ||X^phi - target||^2 + penalty * cost(phi) with respect to phi."""
    mis = _Misfit(operator, target, objective)
    v = _values(phi)
    X = operator.forward(v)
    return operator.adjoint(mis.state_gradient(X)) + penalty * operator.dt * v


@dataclass
class RateOptions:
    penalty0: float = 1.0
    penalty_factor: float = 10.0
    min_penalty: float = 1e-16
    tolerance: float = 1e-6
    max_iters: int = 20000
    stage_iters: int | None = None
    stage_gtol: float = 1e-10
    stall_stages: int = 6
    armijo: float = 1e-4
    precondition: bool = True


@dataclass(eq=False)
class RateResult:
    value: float
    minimizer: ControlPath
    target_residual: float
    iterations: int
    feasible: bool
    objective: str
    stages: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "value": self.value if math.isfinite(self.value) else "inf",
            "feasible": self.feasible,
            "objective": self.objective,
            "target_residual": self.target_residual,
            "iterations": self.iterations,
            "dt": self.minimizer.dt,
            "minimizer": self.minimizer.values.tolist(),
            "stages": self.stages,
        }


def _jacobi_diagonal(op: SkeletonOperator, mis: _Misfit) -> np.ndarray:
    """Diagonal of A^T W A for the skeleton map with convection dropped.

    Column (n, j) then excites only e_j, which decays by a fixed factor per
    step, so its squared image norm is a short geometric sum.
    """
    N, dt = op.n_steps, op.dt
    w2 = np.abs(op.basis) ** 2
    rho = np.sum(w2 * op.decay, axis=(1, 2, 3)) / np.sum(w2, axis=(1, 2, 3))  # (J,)
    lags = np.arange(1, N + 1)[:, None]
    pw = rho[None, :] ** (2 * lags)  # (N, J): decay^(2 lag)
    if mis.objective == "path":
        # sum over m = n+1..N of dt * rho^(2(m-n)), indexed by N - n
        tail = dt * np.cumsum(pw, axis=0)
    else:
        tail = pw
    gain = tail[N - 1 - np.arange(N)]
    return dt**2 * op.profile**2 * gain


def rate_function(target, objective: str = "path", opts: RateOptions | None = None, *, operator: SkeletonOperator):
    """Estimate I(target) by penalized minimization; returns a :class:`RateResult`.

    The reported value is the cost of a control whose skeleton trajectory is
    within ``opts.tolerance`` of the target, so it bounds I from above up to
    that residual.  When the residual cannot be driven below tolerance the
    value is ``inf``.
    """
    opts = opts or RateOptions()
    op = operator
    mis = _Misfit(op, target, objective)
    dt = op.dt
    n_dim = op.n_steps * op.noise.J
    stage_iters = opts.stage_iters or max(50, 4 * n_dim)

    phi = np.zeros(op.shape)
    X = np.zeros((op.n_steps + 1,) + op.grid.field_shape, dtype=complex)
    history: list[float] = []
    stages: list[dict] = []
    total = 0
    p = opts.penalty0
    prev_res = None
    stalled = 0

    diag = _jacobi_diagonal(op, mis) if opts.precondition else None

    def objective_value(X, phi, p):
        return mis.value(X) + p * 0.5 * dt * float(np.sum(phi**2))

    while True:
        # Jacobi scaling: the noise weights spread the column norms over decades
        M = np.ones(op.shape) if diag is None else diag + p * dt
        J = objective_value(X, phi, p)
        G = op.adjoint(mis.state_gradient(X)) + p * dt * phi
        Z = G / M
        g0 = math.sqrt(float(np.sum(G**2)))
        d = -Z
        it = 0
        while g0 > 0 and it < stage_iters and total < opts.max_iters:
            gd = float(np.sum(G * d))
            if gd >= 0:
                d, gd = -Z, -float(np.sum(G * Z))
            AD = op.forward(d)
            curv = mis.quad(AD) + p * dt * float(np.sum(d**2))
            if curv <= 0:
                break
            a = -gd / curv
            # backtracking: the objective is exactly quadratic along the line
            while True:
                J_new = J + a * gd + 0.5 * a * a * curv
                if J_new <= J + opts.armijo * a * gd or a < 1e-30:
                    break
                a *= 0.5
            phi = phi + a * d
            X = X + a * AD
            it += 1
            total += 1
            if it % 50 == 0:
                X = op.forward(phi)
                J_new = objective_value(X, phi, p)
            J = min(J, J_new)
            history.append(J)
            G_new = op.adjoint(mis.state_gradient(X)) + p * dt * phi
            gn = math.sqrt(float(np.sum(G_new**2)))
            if gn <= opts.stage_gtol * g0:
                G = G_new
                break
            Z_new = G_new / M
            beta = max(0.0, float(np.sum(Z_new * (G_new - G))) / float(np.sum(Z * G)))
            d = -Z_new + beta * d
            G, Z = G_new, Z_new
        X = op.forward(phi)
        res = mis.residual(X)
        stages.append({"penalty": p, "iterations": it, "residual": res, "cost": 0.5 * dt * float(np.sum(phi**2))})
        if res <= opts.tolerance:
            feasible = True
            break
        if prev_res is not None and res > 0.99 * prev_res:
            stalled += 1
        else:
            stalled = 0
        prev_res = res
        if p <= opts.min_penalty or stalled >= opts.stall_stages or total >= opts.max_iters:
            feasible = False
            break
        p /= opts.penalty_factor

    minimizer = ControlPath(phi, dt)
    value = control_cost(minimizer) if feasible else math.inf
    return RateResult(value, minimizer, res, total, feasible, objective, stages, history)


def sample_controls(
    N: float, samples: int, seed: int, shape: tuple[int, int], dt: float, kind: str = "white"
) -> list[ControlPath]:
    """Controls in S_N = {int |phi|^2 <= N}: even indices on the boundary, odd ones inside.

    ``kind="white"`` draws i.i.d. Gaussian entries per step; ``kind="constant"``
    holds one random direction over the whole horizon, which steers the
    skeleton far more effectively for the same cost.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    if kind not in ("white", "constant"):
        raise ValueError(f"unknown control kind {kind!r}")
    if N == 0:
        return [ControlPath(np.zeros(shape), dt)]
    rng = np.random.default_rng(seed)
    out = []
    for i in range(samples):
        if kind == "white":
            v = rng.standard_normal(shape)
        else:
            v = np.broadcast_to(rng.standard_normal(shape[1]), shape).copy()
        v *= math.sqrt(N / (dt * float(np.sum(v**2))))
        if i % 2:
            v *= math.sqrt(rng.uniform())
        out.append(ControlPath(v, dt))
    return out


@dataclass(eq=False)
class LevelSetReport:
    N: float
    n_samples: int
    diameter_sup_H: float
    diameter_L2_H10: float
    max_bound: float
    bounds: np.ndarray
    max_cost: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["bounds"] = self.bounds.tolist()
        return d


def level_set_probe(N: float, samples: int, seed: int, *, operator: SkeletonOperator) -> LevelSetReport:
    """Map controls from S_N through the skeleton and measure the image K_N.

    Reports the diameter of the sampled image in sup_t ||.||_H and in
    (int ||.||^2_{H^{1,0}})^{1/2}, and the a priori quantity
    sup_t ||X||^2_{H^{0,1}} + int ||X||^2_{H^{1,1}} per sample.
    """
    op = operator
    controls = sample_controls(N, samples, seed, op.shape, op.dt)
    grid, dt = op.grid, op.dt
    states = np.stack([op.forward(c.values) for c in controls])
    bounds = np.array(
        [
            float(np.max(weighted_sq(grid, X, 0, 1))) + dt * float(np.sum(weighted_sq(grid, X[:-1], 1, 1)))
            for X in states
        ]
    )
    dsup = dl2 = 0.0
    for i in range(len(states)):
        D = states[i + 1 :] - states[i]
        if D.size == 0:
            continue
        dsup = max(dsup, float(np.sqrt(np.max(weighted_sq(grid, D)))))
        dl2 = max(dl2, float(np.sqrt(np.max(dt * np.sum(weighted_sq(grid, D[:, :-1], 1, 0), axis=1)))))
    return LevelSetReport(
        N, len(controls), dsup, dl2, float(bounds.max()), bounds, max(control_cost(c) for c in controls)
    )


def tail_rate_infimum(
    delta: float,
    *,
    operator: SkeletonOperator,
    steps=None,
    iters: int = 200,
    rtol: float = 1e-10,
    seed: int = 0,
) -> dict:
    """inf { I(g) : sup_t ||g(t)||_H >= delta } restricted to the given time steps.

    By linearity this equals delta^2 / (2 max_t ||A_t||^2) with A_t : phi -> X^phi(t);
    each operator norm comes from power iteration on A_t^T A_t.  Restricting
    the sup to a subset of times can only raise the value.
    """
    op = operator
    n = op.n_steps
    if steps is None:
        steps = range(1, n + 1) if n <= 50 else np.unique(np.linspace(1, n, 16).round().astype(int))
    rng = np.random.default_rng(seed)
    norms = {}
    for s in steps:
        psi = rng.standard_normal(op.shape)
        psi /= np.linalg.norm(psi)
        sig2 = 0.0
        for _ in range(iters):
            X = op.forward(psi / math.sqrt(op.dt))
            R = np.zeros_like(X)
            R[s] = X[s]
            w = op.adjoint(R) / math.sqrt(op.dt)
            new = float(np.linalg.norm(w))
            if new == 0:
                break
            psi = w / new
            if abs(new - sig2) <= rtol * new:
                sig2 = new
                break
            sig2 = new
        norms[int(s)] = math.sqrt(sig2)
    best = max(norms.values()) if norms else 0.0
    value = math.inf if best == 0 else delta**2 / (2 * best**2)
    return {"delta": delta, "value": value, "operator_norms": norms}
