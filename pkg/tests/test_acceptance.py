"""Acceptance criteria, one test each.

Every test records a one-line verdict that is printed in the terminal summary
(see ``conftest.py``), whether it passes or fails.
"""

import filecmp
import json
import math
import time

import numpy as np
import pytest

from anisns.cli import cli_main
from anisns.dynamics import IntegratorConfig, SkeletonOperator, integrate_deterministic
from anisns.experiments import (
    ExperimentConfig,
    identity_checks,
    run_clt_limit,
    run_clt_rate,
    run_invariant_suite,
    run_mdp_tail,
)
from anisns.experiments.harness import Context
from anisns.forms import nonlinear_term, trilinear
from anisns.noise import make_noise_model
from anisns.ratefn import ControlPath, control_cost, rate_function, rate_gradient
from anisns.spectral import Grid, mode_field, random_field, weighted_sq
from oracles import deterministic_errors, fitted_order, stochastic_errors
from test_forms import dense_convection

VERDICTS = []

pytestmark = pytest.mark.acceptance


def verdict(name, ok, detail):
    VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def test_identity_suite():
    t0 = time.perf_counter()
    ctx = Context.build(ExperimentConfig())
    checks = identity_checks(ctx.grid, ctx.noise, ctx.u0_traj, ctx.icfg, instances=100, seed=2024)
    elapsed = time.perf_counter() - t0
    bad = [k for k, c in checks.items() if not c["pass"]]
    worst = max(c.get("value", 0.0) for k, c in checks.items() if "tol" in c)
    verdict(
        "identity suite",
        not bad and elapsed < 10,
        f"{len(checks)} identities x 100 instances on 16x16, worst rel defect {worst:.2e}, {elapsed:.1f}s, failed={bad}",
    )


def test_exact_solutions():
    t0 = time.perf_counter()
    g = Grid(16, 16)
    dt = 1e-3
    cfg = IntegratorConfig(dt=dt, T=1.0)
    shear = mode_field(g, (0, 1), -0.5j, vector=(1.0, 0.0))
    tr = integrate_deterministic(shear, cfg, keep_all=True)
    shear_err = float(np.max(np.abs(tr.full() - shear.coeffs)))
    decay = mode_field(g, (1, 0), -0.5j, vector=(0.0, 1.0))
    tr = integrate_deterministic(decay, cfg, keep_all=True)
    exact = np.exp(-tr.times)[:, None, None, None] * decay.coeffs
    # max over time of the sup-norm error of the velocity amplitude
    decay_err = float(np.max(np.sqrt(weighted_sq(g, tr.full() - exact) / weighted_sq(g, decay.coeffs))))
    elapsed = time.perf_counter() - t0
    ok = shear_err <= 1e-12 and decay_err <= 5 * dt and elapsed < 5
    verdict(
        "exact solutions",
        ok,
        f"shear drift {shear_err:.1e} (<=1e-12), decaying-mode error {decay_err:.1e} (<= {5 * dt:g}), {elapsed:.1f}s",
    )


def test_oracle_equivalence():
    t0 = time.perf_counter()
    g = Grid(4, 4)
    rng = np.random.default_rng(77)
    conv_err = tri_err = 0.0
    for _ in range(20):
        u, v, w = (random_field(g, rng, slope=0.0) for _ in range(3))
        ref = dense_convection(g, u.coeffs, v.coeffs)
        conv_err = max(conv_err, float(np.max(np.abs(nonlinear_term(u, v).coeffs - ref))))
        tri_ref = float(np.real(np.sum(ref * np.conj(w.coeffs))))
        tri_err = max(tri_err, abs(trilinear(u, v, w).value - tri_ref))

    g16 = Grid(16, 16)
    u0 = random_field(g16, np.random.default_rng(4), k_max=4)
    det = deterministic_errors(u0, T=0.1, dt=4e-3, levels=4)
    det_order = fitted_order(det)

    g8 = Grid(8, 8)
    v0 = random_field(g8, np.random.default_rng(5), k_max=3)
    noise = make_noise_model(g8, {"kind": "multiplicative", "J": 6, "coupling": 0.5})
    sto = stochastic_errors(v0, 0.5, noise, T=0.1, dt=4e-3, seeds=range(16), levels=5, ref_factor=128)
    sto_order = fitted_order(sto)
    elapsed = time.perf_counter() - t0
    ok = conv_err <= 1e-12 and tri_err <= 1e-12 and 0.9 <= det_order <= 1.1 and sto_order >= 0.5 and elapsed < 60
    verdict(
        "oracle equivalence",
        ok,
        f"4x4 convolution {conv_err:.1e}, trilinear {tri_err:.1e}; deterministic order {det_order:.3f}, "
        f"stochastic pathwise order {sto_order:.3f} (multiplicative noise, frozen increments); {elapsed:.1f}s",
    )


@pytest.fixture(scope="module")
def default_cfg():
    return ExperimentConfig()


def test_clt_rate(default_cfg):
    rep = run_clt_rate(default_cfg)
    fit = rep.fits["sup_H"]
    s = fit["slope"]
    ok = s is not None and 0.8 <= s <= 1.2 and rep.runtime < 600
    means = ", ".join(f"{row['sup_H_mean']:.3e}" for row in rep.levels)
    verdict(
        "CLT rate",
        ok,
        f"slope {s:.4f} CI95 [{fit['ci95'][0]:.3f}, {fit['ci95'][1]:.3f}] in [0.8, 1.2]; "
        f"E sup|u^eps-u0|^2 = {means}; M={default_cfg.samples}, {rep.runtime:.0f}s",
    )


def test_clt_limit(default_cfg):
    rep = run_clt_limit(default_cfg)
    means = [row["lim_sup_H_mean"] for row in rep.levels]
    order = rep.fits["lim_sup_H_vs_sqrt_eps"]["slope"]
    mono = all(b < a for a, b in zip(means, means[1:]))
    ok = mono and order is not None and order >= 0.4 and rep.runtime < 600
    verdict(
        "CLT limit",
        ok,
        f"E sup|V^eps-V0|^2 = {', '.join(f'{m:.3e}' for m in means)}; monotone={mono}, "
        f"order in sqrt(eps) {order:.3f} (>= 0.4); {rep.runtime:.0f}s",
    )


def test_rate_function():
    t0 = time.perf_counter()
    cfg = ExperimentConfig().replace(integrator={"dt": 0.01, "T": 0.2})
    grid, icfg = cfg.grid(), cfg.integrator()
    noise = cfg.noise(grid)
    base = integrate_deterministic(cfg.initial(grid), icfg, keep_all=True)
    op = SkeletonOperator(base, noise, icfg)

    zero = rate_function(np.zeros((op.n_steps + 1,) + grid.field_shape), operator=op)
    zero_ok = zero.value == 0.0 and not np.any(zero.minimizer.values)

    rng = np.random.default_rng(99)
    worst_gap = -math.inf
    worst_res = 0.0
    for _ in range(10):
        phi = rng.standard_normal(op.shape)
        res = rate_function(op.forward(phi), operator=op)
        worst_gap = max(worst_gap, res.value - control_cost(ControlPath(phi, op.dt)))
        worst_res = max(worst_res, res.target_residual)

    target = op.forward(rng.standard_normal(op.shape))
    h = 1e-5
    worst_fd = 0.0
    for _ in range(20):
        phi, d = rng.standard_normal(op.shape), rng.standard_normal(op.shape)

        def J(p):
            X = op.forward(p)
            return 0.5 * op.dt * float(np.sum(weighted_sq(grid, X - target)))

        fd = (J(phi + h * d) - J(phi - h * d)) / (2 * h)
        ad = float(np.sum(rate_gradient(phi, target, operator=op) * d))
        worst_fd = max(worst_fd, abs(ad - fd) / abs(fd))
    elapsed = time.perf_counter() - t0
    ok = zero_ok and worst_gap <= 1e-3 and worst_res <= 1e-6 and worst_fd <= 1e-4 and elapsed < 300
    verdict(
        "rate function",
        ok,
        f"I(0)=0 exactly: {zero_ok}; 10 forward targets: max(value - cost(phi*)) {worst_gap:.2e} (<=1e-3), "
        f"max residual {worst_res:.1e} (<=1e-6); adjoint vs FD max rel {worst_fd:.1e} (<=1e-4); {elapsed:.0f}s",
    )


def test_mdp_probes(default_cfg):
    rep = run_mdp_tail(default_cfg)
    zero_cells = sum(c["zero_hits"] for c in rep.levels)
    inf_ok = all((c["statistic"] == math.inf) == c["zero_hits"] for c in rep.levels)
    json.loads(rep.to_json())
    ok = rep.checks["tail_monotone"]["pass"] and rep.checks["chebyshev_within_3se"]["pass"] and inf_ok
    ok = ok and rep.runtime < 300
    verdict(
        "MDP probes",
        ok,
        f"tail monotone={rep.checks['tail_monotone']['pass']}, Chebyshev within 3 SE="
        f"{rep.checks['chebyshev_within_3se']['pass']}, {zero_cells}/{len(rep.levels)} zero-hit cells reported as inf; "
        f"{rep.runtime:.0f}s",
    )


def test_moment_battery(default_cfg):
    rep = run_invariant_suite(default_cfg, instances=20)
    moments = {k: c for k, c in rep.checks.items() if k.startswith("moment_")}
    bad = [k for k, c in rep.checks.items() if not c["pass"]]
    worst = max(c["ratio"] for c in moments.values())
    ok = not bad and rep.runtime < 600
    verdict(
        "moment battery",
        ok,
        f"{len(moments)} monitored quantities finite, worst max/min ratio across ladder {worst:.3f} (<10); "
        f"{len(rep.checks) - len(moments)} other invariants pass; failed={bad}; {rep.runtime:.0f}s",
    )


def test_reproducibility(tmp_path):
    cfg = {
        "integrator": {"dt": 0.005, "T": 0.1},
        "mc": {"samples": 6, "seed": 314},
    }
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    same = {}
    for cmd in ("clt-rate", "clt-limit", "mdp-tail", "invariants"):
        outs = []
        for threads in (1, 3, 1):
            out = tmp_path / f"{cmd}-{threads}-{len(outs)}"
            assert cli_main([cmd, "--config", str(p), "--threads", str(threads), "--out", str(out)]) == 0
            outs.append(out / "report.json")
        same[cmd] = all(filecmp.cmp(outs[0], o, shallow=False) for o in outs[1:])
    verdict("reproducibility", all(same.values()), f"byte-identical report.json across threads 1/3/1: {same}")
