import json
import math

import numpy as np
import pytest

from anisns.cli import OUT_ENV, cli_main
from anisns.dynamics import IntegratorConfig, SkeletonOperator, integrate_deterministic
from anisns.experiments import (
    ConfigError,
    ExperimentConfig,
    fit_slope,
    run_clt_limit,
    run_clt_rate,
    run_invariant_suite,
    run_mdp_tail,
    sample_seed,
    sanitize,
    summarize,
)
from anisns.spectral import save_fields

SMALL = {
    "grid": {"n_h": 8, "n_v": 8},
    "integrator": {"dt": 0.01, "T": 0.1},
    "noise": {"J": 4},
    "mc": {"samples": 4, "seed": 11},
}


@pytest.fixture
def small():
    return ExperimentConfig.from_dict(SMALL)


def test_defaults_valid():
    cfg = ExperimentConfig()
    assert cfg.eps_ladder == [1e-1, 1e-2, 1e-3, 1e-4]
    assert cfg.samples == 64 and cfg.scale_exponent == 0.25
    assert cfg.grid().n_h == 16 and cfg.integrator().n_steps == 500
    assert cfg.noise().J == 8


def test_config_roundtrip(tmp_path, small):
    p = tmp_path / "c.json"
    small.dump(p)
    back = ExperimentConfig.load(p)
    assert back.to_dict() == small.to_dict()
    assert back.digest() == small.digest()
    back.dump(tmp_path / "d.json")
    assert (tmp_path / "d.json").read_text() == p.read_text()


@pytest.mark.parametrize(
    "patch",
    [
        {"ladder": {"eps": [1e-3, 1e-2]}},
        {"ladder": {"eps": [1e-2, 1e-2]}},
        {"ladder": {"eps": [1.5, 0.1]}},
        {"mc": {"samples": 1}},
        {"ladder": {"scale_exponent": 0.5}},
        {"ladder": {"scale_exponent": 0.0}},
        {"grid": {"n_h": 7}},
        {"integrator": {"dt": 0.03, "T": 0.1}},
        {"bogus": {}},
        {"noise": {"kind": "pink"}},
    ],
)
def test_config_rejects(patch):
    d = json.loads(json.dumps(SMALL))
    for k, v in patch.items():
        d.setdefault(k, {}).update(v)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{grid: ")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)


def test_sample_seeds_order_independent():
    a = [sample_seed(5, i) for i in range(10)]
    assert [sample_seed(5, i) for i in reversed(range(10))] == a[::-1]
    assert len(set(a)) == 10
    assert sample_seed(6, 0) != a[0]


def test_summarize_and_fit():
    s = summarize([1.0, 3.0, math.nan, None])
    assert s == {"mean": 2.0, "se": pytest.approx(1.0), "n": 2}
    x = np.array([1e-1, 1e-2, 1e-3])
    rng = np.random.default_rng(0)
    samples = x[None, :] * rng.uniform(0.5, 1.5, (50, 1))
    fit = fit_slope(x, samples)
    assert fit["slope"] == pytest.approx(1.0)
    assert fit["ci95"][0] <= 1.0 <= fit["ci95"][1]
    assert fit_slope(x, np.zeros((5, 3)))["degenerate"]


def test_sanitize():
    out = sanitize({"a": np.float64(math.inf), "b": [np.int64(3), math.nan], "c": np.array([1.0])})
    assert out == {"a": "inf", "b": [3, "nan"], "c": [1.0]}


def test_clt_rate_small(small):
    rep = run_clt_rate(small)
    assert len(rep.levels) == 4
    assert rep.fits["sup_H"]["slope"] == pytest.approx(1.0, abs=0.2)
    assert all(row["failed"] == 0 for row in rep.levels)
    assert rep.sample_seeds == [sample_seed(11, i) for i in range(4)]


def test_clt_rate_zero_noise_degenerate(small):
    cfg = small.replace(noise={"amplitude": 0.0})
    rep = run_clt_rate(cfg)
    assert rep.fits["sup_H"]["degenerate"]
    assert all(row["sup_H_mean"] == 0 for row in rep.levels)
    assert not rep.checks["slope_in_0.8_1.2"]["pass"]
    lim = run_clt_limit(cfg)
    assert all(row["lim_sup_H_mean"] == 0 for row in lim.levels)


def test_clt_limit_small(small):
    rep = run_clt_limit(small)
    means = [row["lim_sup_H_mean"] for row in rep.levels]
    assert all(b < a for a, b in zip(means, means[1:]))
    assert rep.checks["order_at_least_0.4"]["pass"]


def test_determinism_and_threads(small):
    a = run_clt_limit(small, threads=1).to_json()
    b = run_clt_limit(small, threads=3).to_json()
    c = run_clt_limit(small, threads=1).to_json()
    assert a == b == c


def test_standard_error_shrinks():
    # SE ~ M^-1/2: quadrupling M halves it; averaged over master seeds to tame the
    # heavy tail of sup-norm statistics
    base = json.loads(json.dumps(SMALL))
    base["ladder"] = {"eps": [0.1]}
    se = {16: [], 64: []}
    for seed in range(8):
        for m in se:
            base["mc"] = {"samples": m, "seed": seed}
            se[m].append(run_clt_rate(ExperimentConfig.from_dict(base)).levels[0]["sup_H_se"])
    ratio = np.mean(se[16]) / np.mean(se[64])
    assert 1.5 <= ratio <= 2.7


def test_mdp_tail_small(small):
    rep = run_mdp_tail(small, deltas=[0.0, 0.01, 0.1, 10.0], rate_bound=True)
    cells = rep.levels
    assert len(cells) == 16
    for c in cells:
        if c["delta"] == 0.0:
            assert c["probability"] == 1.0 and c["statistic"] == 0.0
        if c["delta"] == 10.0:
            assert c["zero_hits"] and c["statistic"] == math.inf
    assert rep.checks["tail_monotone"]["pass"] and rep.checks["chebyshev_within_3se"]["pass"]
    assert '"inf"' in rep.to_json()
    with pytest.raises(ValueError):
        run_mdp_tail(small, deltas=[0.2, 0.1])
    with pytest.raises(ValueError):
        run_mdp_tail(small, set_kind="ball")


def test_invariant_suite_small(small):
    rep = run_invariant_suite(small, instances=5)
    failed = [k for k, c in rep.checks.items() if not c["pass"]]
    assert not failed, failed


def test_report_files(tmp_path, small):
    rep = run_clt_rate(small)
    paths = rep.write(tmp_path)
    data = json.loads(open(paths["report"]).read())
    assert data["kind"] == "clt-rate" and "runtime" not in data
    assert json.loads(open(paths["timing"]).read())["runtime_seconds"] >= 0
    rows = open(paths["summary"]).read().splitlines()
    assert rows[0].startswith("eps") and len(rows) == 5


# -- CLI ----------------------------------------------------------------------


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_cli_invariants(tmp_path, cfg_file, capsys):
    out = tmp_path / "inv"
    code = cli_main(["invariants", "--config", str(cfg_file), "--out", str(out), "--instances", "3"])
    assert code == 0
    assert (out / "report.json").exists() and (out / "summary.csv").exists()
    assert "PASS" in capsys.readouterr().out


def test_cli_rejects_increasing_ladder(tmp_path, capsys):
    d = json.loads(json.dumps(SMALL))
    d["ladder"] = {"eps": [1e-4, 1e-3]}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert cli_main(["clt-rate", "--config", str(p), "--out", str(tmp_path / "x")]) != 0
    assert "strictly decreasing" in capsys.readouterr().err


def test_cli_errors(tmp_path, capsys):
    assert cli_main(["clt-rate", "--config", str(tmp_path / "missing.json")]) != 0
    assert cli_main(["nonsense"]) != 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": {"n_h": "x"}}')
    assert cli_main(["simulate", "--config", str(bad)]) != 0
    assert "config error" in capsys.readouterr().err


def test_cli_env_output_dir(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    assert cli_main(["simulate", "--config", str(cfg_file)]) == 0
    assert (tmp_path / "envout" / "simulate" / "report.json").exists()
    assert (tmp_path / "envout" / "simulate" / "deterministic.csv").exists()


def test_cli_seed_and_samples_override(tmp_path, cfg_file):
    out = tmp_path / "o"
    assert cli_main(["clt-rate", "--config", str(cfg_file), "--seed", "3", "--samples", "2", "--out", str(out)]) == 0
    data = json.loads((out / "report.json").read_text())
    assert data["master_seed"] == 3 and len(data["sample_seeds"]) == 2


def test_cli_rate_min_with_target(tmp_path, cfg_file):
    cfg = ExperimentConfig.load(cfg_file)
    grid, icfg = cfg.grid(), cfg.integrator()
    base = integrate_deterministic(cfg.initial(grid), icfg, keep_all=True)
    op = SkeletonOperator(base, cfg.noise(grid), icfg)
    phi = np.random.default_rng(0).standard_normal(op.shape)
    target = tmp_path / "t.bin"
    save_fields(target, grid, op.forward(phi))
    out = tmp_path / "rm"
    assert cli_main(["rate-min", "--config", str(cfg_file), "--target", str(target), "--out", str(out)]) == 0
    res = json.loads((out / "rate_result.json").read_text())
    assert res["feasible"] and res["target_residual"] <= 1e-6
    assert np.asarray(res["minimizer"]).shape == op.shape
    # terminal target from a single field
    save_fields(target, grid, op.forward(phi)[-1])
    assert cli_main(["rate-min", "--config", str(cfg_file), "--target", str(target), "--out", str(out)]) == 0
    assert json.loads((out / "rate_result.json").read_text())["objective"] == "terminal"
    assert cli_main(["rate-min", "--config", str(cfg_file), "--target", str(tmp_path / "no.bin")]) != 0
