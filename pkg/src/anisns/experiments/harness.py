"""Monte Carlo drivers for the CLT rate, CLT limit, tail probes and moment battery.

Every sample i draws its Wiener path from a seed derived from
(master seed, i) alone, and the same path drives all eps levels.  Results are
reduced in sample-index order, so reports do not depend on the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..dynamics import (
    DeviationScale,
    DynamicsError,
    IntegratorConfig,
    SkeletonOperator,
    TrajectoryRecord,
    energy_report,
    integrate_clt_limit,
    integrate_controlled,
    integrate_deterministic,
    integrate_primal,
    moment_report,
    weighted_report,
)
from ..forms import convection
from ..noise import NoiseModel, WienerPath, sigma_columns, sigma_hs_norm
from ..ratefn import ControlPath, control_cost, sample_controls, tail_rate_infimum
from ..spectral import (
    Grid,
    SpectralField,
    divergence_residual,
    dyadic_partition,
    inner,
    leray,
    random_field,
    to_physical,
    weighted_sq,
)
from .config import ExperimentConfig
from .report import ExperimentReport, fit_slope, summarize

__all__ = [
    "sample_seed",
    "Context",
    "identity_checks",
    "run_clt_rate",
    "run_clt_limit",
    "run_mdp_tail",
    "run_invariant_suite",
    "run_simulate",
]

_FAILURES = (DynamicsError, FloatingPointError, OverflowError)


def sample_seed(master: int, i: int) -> int:
    """Seed of sample i; depends only on (master, i)."""
    ss = np.random.SeedSequence(master, spawn_key=(i,))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(eq=False)
class Context:
    cfg: ExperimentConfig
    grid: Grid
    icfg: IntegratorConfig
    noise: NoiseModel
    u0: SpectralField
    u0_traj: TrajectoryRecord
    seeds: list

    @classmethod
    def build(cls, cfg: ExperimentConfig) -> Context:
        grid = cfg.grid()
        icfg = cfg.integrator()
        noise = cfg.noise(grid)
        u0 = cfg.initial(grid)
        u0_traj = integrate_deterministic(u0, icfg, keep_all=True)
        seeds = [sample_seed(cfg.seed, i) for i in range(cfg.samples)]
        return cls(cfg, grid, icfg, noise, u0, u0_traj, seeds)

    def path(self, i: int) -> WienerPath:
        return WienerPath.generate(self.seeds[i], self.icfg.dt, self.noise.J, self.icfg.n_steps)

    def report(self, kind: str) -> ExperimentReport:
        return ExperimentReport(kind, self.cfg.to_dict(), self.cfg.digest(), self.cfg.seed, list(self.seeds))


def _fan_out(fn, n: int, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _diff_stats(grid: Grid, D: np.ndarray, dt: float) -> dict:
    h = weighted_sq(grid, D)
    h10 = weighted_sq(grid, D[:-1], 1, 0)
    out = {"sup_H": float(h.max()), "int_H10": float(dt * h10.sum())}
    if not all(math.isfinite(v) for v in out.values()):
        raise FloatingPointError("non-finite difference statistic")
    return out


def _coupled_sample(ctx: Context, i: int, limit: bool) -> dict:
    """Statistics of u^eps - u0 (and V^eps - V0 when ``limit``) for every eps, one shared path."""
    path = ctx.path(i)
    base = ctx.u0_traj.full()
    dt = ctx.icfg.dt
    out = {"levels": [], "errors": []}
    V0 = None
    if limit:
        try:
            V0 = integrate_clt_limit(ctx.u0_traj, ctx.noise, path, ctx.icfg, keep_all=True).full()
        except _FAILURES as exc:
            out["errors"].append({"sample": i, "eps": None, "error": str(exc)})
            out["levels"] = [None] * len(ctx.cfg.eps_ladder)
            return out
    for eps in ctx.cfg.eps_ladder:
        try:
            ue = integrate_primal(ctx.u0, eps, ctx.noise, path, ctx.icfg, keep_all=True)
            D = ue.full() - base
            st = _diff_stats(ctx.grid, D, dt)
            if limit:
                lim = _diff_stats(ctx.grid, D / math.sqrt(eps) - V0, dt)
                st["lim_sup_H"] = lim["sup_H"]
                st["lim_int_H10"] = lim["int_H10"]
            out["levels"].append(st)
        except _FAILURES as exc:
            out["levels"].append(None)
            out["errors"].append({"sample": i, "eps": eps, "error": str(exc)})
    return out


def _collect(ctx: Context, results: list, keys: list) -> tuple[list, dict, list]:
    """Per-level summaries and (M_ok, L) sample matrices over samples with no failure."""
    eps = ctx.cfg.eps_ladder
    levels = []
    diagnostics = []
    for r in results:
        diagnostics.extend(r["errors"])
    complete = [r for r in results if all(s is not None for s in r["levels"])]
    mats = {k: np.array([[s[k] for s in r["levels"]] for r in complete]).reshape(len(complete), len(eps)) for k in keys}
    for j, e in enumerate(eps):
        vals = [r["levels"][j] for r in results]
        row = {"eps": e, "failed": sum(v is None for v in vals)}
        row["flagged"] = row["failed"] > 0
        for k in keys:
            s = summarize([v[k] for v in vals if v is not None])
            row[f"{k}_mean"], row[f"{k}_se"] = s["mean"], s["se"]
            row["n"] = s["n"]
        levels.append(row)
    return levels, mats, diagnostics


def run_clt_rate(cfg: ExperimentConfig, threads: int = 1, ctx: Context | None = None) -> ExperimentReport:
    """E sup_t |u^eps - u0|^2_H (and its H^{1,0} companion) over the eps ladder, with log-log slope."""
    t0 = time.perf_counter()
    ctx = ctx or Context.build(cfg)
    results = _fan_out(lambda i: _coupled_sample(ctx, i, False), cfg.samples, threads)
    keys = ["sup_H", "int_H10"]
    levels, mats, diag = _collect(ctx, results, keys)
    rep = ctx.report("clt-rate")
    rep.levels, rep.diagnostics = levels, diag
    eps = cfg.eps_ladder
    if len(eps) >= 2:
        rep.fits["sup_H"] = fit_slope(eps, mats["sup_H"], seed=cfg.seed)
        rep.fits["combined"] = fit_slope(eps, mats["sup_H"] + mats["int_H10"], seed=cfg.seed)
        s = rep.fits["sup_H"]["slope"]
        rep.checks["slope_in_0.8_1.2"] = {"value": s, "pass": s is not None and 0.8 <= s <= 1.2}
    rep.runtime = time.perf_counter() - t0
    return rep


def run_clt_limit(cfg: ExperimentConfig, threads: int = 1, ctx: Context | None = None) -> ExperimentReport:
    """E sup_t |V^eps - V0|^2_H with V0 driven by the same path; fitted order in sqrt(eps)."""
    t0 = time.perf_counter()
    ctx = ctx or Context.build(cfg)
    results = _fan_out(lambda i: _coupled_sample(ctx, i, True), cfg.samples, threads)
    keys = ["lim_sup_H", "lim_int_H10"]
    levels, mats, diag = _collect(ctx, results, keys)
    rep = ctx.report("clt-limit")
    rep.levels, rep.diagnostics = levels, diag
    eps = cfg.eps_ladder
    means = [row["lim_sup_H_mean"] for row in levels]
    if len(eps) >= 2:
        fit = fit_slope(np.sqrt(eps), mats["lim_sup_H"], seed=cfg.seed)
        rep.fits["lim_sup_H_vs_sqrt_eps"] = fit
        rep.fits["combined_vs_sqrt_eps"] = fit_slope(
            np.sqrt(eps), mats["lim_sup_H"] + mats["lim_int_H10"], seed=cfg.seed
        )
        order = fit["slope"]
        rep.checks["monotone_decrease"] = {"pass": bool(all(b < a for a, b in zip(means, means[1:])))}
        rep.checks["final_below_first_over_10"] = {"pass": bool(means[-1] < means[0] / 10)}
        rep.checks["order_at_least_0.4"] = {"value": order, "pass": order is not None and order >= 0.4}
    rep.runtime = time.perf_counter() - t0
    return rep


def run_mdp_tail(
    cfg: ExperimentConfig,
    deltas=None,
    threads: int = 1,
    *,
    set_kind: str = "sup-H",
    rate_bound: bool = False,
    rate_steps: int = 8,
    ctx: Context | None = None,
) -> ExperimentReport:
    """Empirical P(sup_t |u^eps - u0|_H >= delta sqrt(eps) lambda) and -lambda^-2 log P.

    Exploratory: naive Monte Carlo cannot resolve rare events, so cells with
    zero hits carry +inf.  Each cell is checked against the Chebyshev bound
    E sup |u^eps - u0|^2 / (delta sqrt(eps) lambda)^2 within 3 standard errors.
    """
    if set_kind != "sup-H":
        raise ValueError(f"unsupported set descriptor {set_kind!r}; only 'sup-H' is available")
    deltas = cfg.deltas if deltas is None else [float(d) for d in deltas]
    if any(d < 0 for d in deltas) or any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("delta ladder must be nonnegative and strictly increasing")
    t0 = time.perf_counter()
    ctx = ctx or Context.build(cfg)
    results = _fan_out(lambda i: _coupled_sample(ctx, i, False), cfg.samples, threads)
    rep = ctx.report("mdp-tail")
    a = cfg.scale_exponent

    infimum = None
    if rate_bound:
        op = SkeletonOperator(ctx.u0_traj, ctx.noise, ctx.icfg)
        n = ctx.icfg.n_steps
        steps = np.unique(np.linspace(1, n, min(rate_steps, n)).round().astype(int))
        infimum = tail_rate_infimum(1.0, operator=op, steps=steps, iters=50, rtol=1e-8, seed=cfg.seed)
        rep.extra["operator_norms"] = infimum["operator_norms"]

    mono_ok = True
    cheb_ok = True
    for j, eps in enumerate(cfg.eps_ladder):
        scale = DeviationScale.from_exponent(eps, a)
        sq = np.array([r["levels"][j]["sup_H"] for r in results if r["levels"][j] is not None])
        M = sq.size
        m2 = summarize(sq)
        s = np.sqrt(sq)
        prev = -math.inf
        for d in deltas:
            thr = d * scale.sqrt_eps_lam
            hits = int(np.sum(s >= thr))
            p = hits / M if M else math.nan
            if hits == 0:
                stat = math.inf
            else:
                stat = max(0.0, -math.log(p) / scale.lam**2)
            se_p = math.sqrt(p * (1 - p) / M) if M else math.nan
            if thr > 0:
                bound = m2["mean"] / thr**2
                tol = 3 * math.sqrt(se_p**2 + (m2["se"] / thr**2) ** 2)
                ok = p <= bound + tol
            else:
                bound, ok = math.inf, True
            cheb_ok &= bool(ok)
            mono_ok &= stat >= prev
            prev = stat
            row = {
                "eps": eps,
                "lambda": scale.lam,
                "delta": d,
                "threshold": thr,
                "hits": hits,
                "n": M,
                "probability": p,
                "probability_se": se_p,
                "statistic": stat,
                "zero_hits": hits == 0,
                "chebyshev_bound": bound,
                "chebyshev_ok": bool(ok),
            }
            if infimum is not None:
                row["rate_lower_bound"] = d * d * infimum["value"]
            rep.levels.append(row)
    for r in results:
        rep.diagnostics.extend(r["errors"])
    rep.checks["tail_monotone"] = {"pass": bool(mono_ok)}
    rep.checks["chebyshev_within_3se"] = {"pass": bool(cheb_ok)}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- identities ---------------------------------------------------------------


def _rel(num: float, den: float) -> float:
    return num / den if den > 0 else num


def identity_checks(
    grid: Grid,
    noise: NoiseModel,
    u0_traj: TrajectoryRecord,
    icfg: IntegratorConfig,
    instances: int = 100,
    seed: int = 0,
    tol: float = 1e-10,
    skeleton_steps: int = 20,
) -> dict:
    """Worst relative defect of each algebraic identity over random instances."""
    rng = np.random.default_rng(seed)
    part = dyadic_partition(grid)
    worst: dict[str, float] = {}

    def note(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    n_sk = min(skeleton_steps, icfg.n_steps)
    short_cfg = IntegratorConfig(icfg.dt, n_sk * icfg.dt, 1, icfg.blowup, icfg.convection)
    short_traj = TrajectoryRecord(
        grid,
        icfg.dt,
        u0_traj.times[: n_sk + 1],
        {k: v[: n_sk + 1] for k, v in u0_traj.norms.items()},
        np.arange(n_sk + 1),
        u0_traj.full()[: n_sk + 1],
    )
    op = SkeletonOperator(short_traj, noise, short_cfg)

    for _ in range(instances):
        u, v, w = (random_field(grid, rng, slope=1.0) for _ in range(3))
        raw = random_field(grid, rng, slope=1.0, divergence_free=False).coeffs
        P = leray(grid, raw)
        note("projection_idempotent", _rel(np.sqrt(weighted_sq(grid, leray(grid, P) - P)), np.sqrt(weighted_sq(grid, P))))
        note("projection_orthogonal", _rel(abs(inner(P, raw - P)), weighted_sq(grid, raw)))

        Buv, Buw = convection(grid, u.coeffs, v.coeffs), convection(grid, u.coeffs, w.coeffs)
        nv, nw = np.sqrt(weighted_sq(grid, v.coeffs)), np.sqrt(weighted_sq(grid, w.coeffs))
        nBv, nBw = np.sqrt(weighted_sq(grid, Buv)), np.sqrt(weighted_sq(grid, Buw))
        note("b_uvv_zero", _rel(abs(inner(Buv, v.coeffs)), nBv * nv))
        note(
            "b_antisymmetric",
            _rel(abs(inner(Buv, w.coeffs) + inner(Buw, v.coeffs)), nBv * nw + nBw * nv),
        )
        note("convection_divergence_free", _rel(divergence_residual(grid, Buv), nBv * max(grid.m_h, grid.m_v)))

        recon = sum(part.multiplier(j) * raw for j in range(-1, part.j_max + 1))
        note("lp_reconstruction", _rel(np.sqrt(weighted_sq(grid, recon - raw)), np.sqrt(weighted_sq(grid, raw))))
        phys = to_physical(grid, u.coeffs)
        energy = weighted_sq(grid, u.coeffs)
        note("parseval", _rel(abs(2 * float(np.mean(phys**2)) - energy), energy))

        f1, f2 = rng.standard_normal(op.shape), rng.standard_normal(op.shape)
        al, be = rng.standard_normal(2)
        X12 = op.forward(al * f1 + be * f2)
        lin = al * op.forward(f1) + be * op.forward(f2)
        note("skeleton_linear", _rel(np.sqrt(np.max(weighted_sq(grid, X12 - lin))), np.sqrt(np.max(weighted_sq(grid, X12)))))

        c = float(rng.uniform(-3, 3))
        phi = ControlPath(f1, icfg.dt)
        note("cost_scaling", _rel(abs(control_cost(phi * c) - c * c * control_cost(phi)), c * c * control_cost(phi)))

    checks = {k: {"value": v, "tol": tol, "pass": v <= tol} for k, v in worst.items()}

    # growth and Lipschitz certificates of sigma
    cert_ok = True
    lip = 0.0
    for _ in range(max(1, instances // 10)):
        u = random_field(grid, rng, amplitude=float(rng.uniform(0.1, 5)))
        v = random_field(grid, rng, amplitude=float(rng.uniform(0.1, 5)))
        for target in ("H-1", "H", "H01"):
            cert_ok &= sigma_hs_norm(noise, 0.0, u, target).certified
        dcol = sigma_columns(noise, 0.0, u.coeffs) - sigma_columns(noise, 0.0, v.coeffs)
        du = weighted_sq(grid, u.coeffs - v.coeffs)
        lhs = float(np.sum(weighted_sq(grid, dcol)))
        lip = max(lip, _rel(lhs, noise.constants.L1 * du) if noise.constants.L1 > 0 else lhs)
    checks["noise_growth_certified"] = {"pass": bool(cert_ok)}
    lip_ok = lip <= 1 + 1e-12 if noise.constants.L1 > 0 else lip <= 1e-24
    checks["noise_lipschitz_certified"] = {"value": lip, "pass": bool(lip_ok)}
    return checks


def _energy_checks(ctx: Context) -> dict:
    """Balance residual and its first-order behaviour under halving dt on a short window."""
    er = energy_report(ctx.u0_traj)
    n = min(40, ctx.icfg.n_steps)
    dt = ctx.icfg.dt
    r1 = energy_report(integrate_deterministic(ctx.u0, IntegratorConfig(dt, n * dt), keep_all=True))
    r2 = energy_report(integrate_deterministic(ctx.u0, IntegratorConfig(dt / 2, n * dt), keep_all=True))
    ratio = _rel(r1["balance_residual_max"], r2["balance_residual_max"])
    scale = max(ctx.u0_traj.norms["H"][0], 1e-300)
    finite = all(math.isfinite(er[k]) for k in ("sup_H01", "int_H11", "sup_H02", "int_H12"))
    return {
        "energy_balance_first_order": {
            "value": ratio,
            "residual_max": er["balance_residual_max"],
            "pass": bool(er["balance_residual_max"] == 0 or ratio >= 1.6),
        },
        "deterministic_bounds_finite": {
            "sup_H01": er["sup_H01"],
            "int_H11": er["int_H11"],
            "sup_H02": er["sup_H02"],
            "int_H12": er["int_H12"],
            "pass": bool(finite),
        },
        "divergence_free_preserved": {
            "value": er["divergence_max"],
            "pass": bool(er["divergence_max"] <= 1e-10 * math.sqrt(scale) * max(ctx.grid.m_h, ctx.grid.m_v)),
        },
    }


def _moment_sample(ctx: Context, i: int, N: float, k: float) -> dict:
    path = ctx.path(i)
    base = ctx.u0_traj.full()
    a = ctx.cfg.scale_exponent
    v = sample_controls(N, 1, ctx.seeds[i], (ctx.icfg.n_steps, ctx.noise.J), ctx.icfg.dt, kind="constant")[0]
    out = {"levels": [], "errors": []}
    for eps in ctx.cfg.eps_ladder:
        try:
            ue = integrate_primal(ctx.u0, eps, ctx.noise, path, ctx.icfg, keep_all=True)
            m = moment_report(ue)
            V = (ue.full() - base) / math.sqrt(eps)
            hV = weighted_sq(ctx.grid, V)
            h10V = weighted_sq(ctx.grid, V[:-1], 1, 0)
            dt = ctx.icfg.dt
            scale = DeviationScale.from_exponent(eps, a)
            X = integrate_controlled(v, scale, ctx.u0_traj, ctx.noise, path, ctx.icfg)
            mx = moment_report(X)
            wx = weighted_report(X, k)
            st = {
                "primal_sup_H_plus_int_H10": m["sup_H"] + m["int_H10"],
                "primal_sup_H_sq": m["sup_H_sq"],
                "primal_int_H_plus_1_H10": m["int_H_plus_1_H10"],
                "V_int_H_H10": float(dt * np.sum(hV[:-1] * h10V)),
                "V_sup_H_plus_int_H10": float(hV.max() + dt * h10V.sum()),
                "X_sup_H_sq": mx["sup_H_sq"],
                "X_int_H_plus_1_H10": mx["int_H_plus_1_H10"],
                "X_weighted": wx["total"],
            }
            if not all(math.isfinite(x) for x in st.values()):
                raise FloatingPointError("non-finite moment statistic")
            out["levels"].append(st)
        except _FAILURES as exc:
            out["levels"].append(None)
            out["errors"].append({"sample": i, "eps": eps, "error": str(exc)})
    return out


MOMENT_KEYS = [
    "primal_sup_H_plus_int_H10",
    "primal_sup_H_sq",
    "primal_int_H_plus_1_H10",
    "V_int_H_H10",
    "V_sup_H_plus_int_H10",
    "X_sup_H_sq",
    "X_int_H_plus_1_H10",
    "X_weighted",
]


def run_invariant_suite(
    cfg: ExperimentConfig,
    threads: int = 1,
    *,
    instances: int = 20,
    ctx: Context | None = None,
) -> ExperimentReport:
    """Identity battery, energy checks and moment boundedness across the eps ladder."""
    t0 = time.perf_counter()
    ctx = ctx or Context.build(cfg)
    rep = ctx.report("invariants")
    rep.checks.update(identity_checks(ctx.grid, ctx.noise, ctx.u0_traj, ctx.icfg, instances, seed=cfg.seed))
    rep.checks.update(_energy_checks(ctx))

    N = float(cfg.data["rate"]["N"])
    k = float(cfg.data["rate"]["k_weight"])
    results = _fan_out(lambda i: _moment_sample(ctx, i, N, k), cfg.samples, threads)
    levels, _, diag = _collect(ctx, results, MOMENT_KEYS)
    rep.levels, rep.diagnostics = levels, diag
    for key in MOMENT_KEYS:
        means = np.array([row[f"{key}_mean"] for row in levels])
        finite = bool(np.all(np.isfinite(means)))
        ratio = float(means.max() / means.min()) if finite and means.min() > 0 else math.inf
        if finite and means.max() == 0:
            ratio = 1.0
        rep.checks[f"moment_{key}"] = {"ratio": ratio, "pass": finite and ratio < 10}
    rep.extra["k_weight"] = k
    rep.extra["N"] = N
    rep.runtime = time.perf_counter() - t0
    return rep


def run_simulate(cfg: ExperimentConfig, eps: float | None = None, sample: int = 0) -> tuple[ExperimentReport, dict]:
    """One deterministic run and one stochastic run on sample ``sample``'s path."""
    t0 = time.perf_counter()
    ctx = Context.build(cfg)
    eps = cfg.eps_ladder[0] if eps is None else eps
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    det = integrate_deterministic(ctx.u0, ctx.icfg)
    sto = integrate_primal(ctx.u0, eps, ctx.noise, ctx.path(sample), ctx.icfg)
    rep = ctx.report("simulate")
    for name, tr in (("deterministic", det), ("primal", sto)):
        rep.levels.append(
            {
                "run": name,
                "eps": 0.0 if name == "deterministic" else eps,
                "sup_H": tr.sup("H"),
                "int_H10": tr.integral("H10"),
                "final_H": float(tr.norms["H"][-1]),
                "sup_H02": tr.sup("H02"),
            }
        )
    er = energy_report(ctx.u0_traj)
    rep.extra["energy"] = {k: v for k, v in er.items() if k != "balance_residual"}
    rep.extra["noise"] = ctx.noise.to_dict()
    rep.runtime = time.perf_counter() - t0
    return rep, {"deterministic": det, "primal": sto}
