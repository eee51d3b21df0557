"""Acceptance gate: eleven numbered checks with stated tolerances and budgets.

Each check is independent except 9/10, which share one interval-collection
run.  The terminal summary prints one verdict line per check (conftest).
"""

import contextlib
import time

import numpy as np
import pytest

from periodic_harris import cli, control, ergodics, hoermander, sde, spikes
from periodic_harris import model as M


@contextlib.contextmanager
def budget(seconds):
    t0 = time.perf_counter()
    yield
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"ran {elapsed:.1f}s, budget {seconds:.0f}s"


def test_criterion_01_rest_potential_window():
    with budget(1.0):
        v0 = M.rest_potential(0.0)
    assert 0.0412 <= v0 <= 0.0512


def test_criterion_02_membrane_current_corner_values():
    with budget(1.0):
        low = M.current_F(-12.0, 0.0, 0.0, 0.0)
        high = M.current_F(120.0, 0.0, 0.0, 0.0)
    assert abs(low - (-6.78)) <= 1e-12
    assert abs(high - 32.82) <= 1e-12


def test_criterion_03_toy_bracket_rank():
    with budget(5.0):
        full = hoermander.full_weak_hoermander_check(M.toy_model(1.0))
        assert full.established and full.minimal_N == 1
        assert len(full.grid) == 64
        assert all(rank == 2 for _, rank, _ in full.details[1])
        s_bad = 1.0 / 6.0  # 1 - (2/3) c sin^2(2 pi s) vanishes there for c = 2
        degen = hoermander.full_weak_hoermander_check(M.toy_model(2.0),
                                                      extra_times=(s_bad,))
        assert s_bad in degen.grid
        assert s_bad in degen.failing_times(1)


def test_criterion_04_toy_moments_match_closed_form():
    with budget(30.0):
        paths, dt = 10_000, 0.005
        xi0, psi0 = 2.0, 0.5
        times = (0.5, 1.0, 2.0)
        rng = np.random.default_rng(0)
        noise = rng.standard_normal((paths, round(times[-1] / dt), 1)) * np.sqrt(dt)
        x0 = np.tile([xi0, psi0], (paths, 1))
        states, _, _ = sde.integrate(M.toy_model(1.0), x0, 0.0, dt, noise)
        for t in times:
            sample = states[:, round(t / dt), 0]
            mean_cf, var_cf = sde.toy_closed_form(1.0, xi0, t)
            se_mean = sample.std(ddof=1) / np.sqrt(paths)
            assert abs(sample.mean() - mean_cf) < 3.0 * se_mean
            var_mc = sample.var(ddof=1)
            se_var = var_mc * np.sqrt(2.0 / (paths - 1))
            assert abs(var_mc - var_cf) < 3.0 * se_var


def test_criterion_05_hh_bracket_rank_stable_across_tolerances():
    with budget(300.0):
        for spec in (M.cir_hh(), M.ou_hh()):
            verdicts = []
            for tol in (1e-6, 1e-8, 1e-10):
                rep = hoermander.full_weak_hoermander_check(spec, tol=tol)
                assert rep.established and rep.minimal_N <= 6
                assert len(rep.grid) == 64
                assert all(rank == 5 for _, rank, _ in rep.details[rep.minimal_N])
                verdicts.append((rep.established, rep.minimal_N))
            assert verdicts[0] == verdicts[1] == verdicts[2]


def test_criterion_06_control_reachability_from_random_starts():
    with budget(120.0):
        rng = np.random.default_rng(11)
        for kind in ("cir", "ou"):
            spec = M.cir_hh() if kind == "cir" else M.ou_hh()
            synth = (control.synthesize_cir_control if kind == "cir"
                     else control.synthesize_ou_control)
            xi_lo, xi_hi = (0.2, 20.0) if kind == "cir" else (-5.0, 5.0)
            for _ in range(10):
                x0 = np.array([rng.uniform(-60.0, 150.0),
                               *rng.uniform(0.0, 1.0, 3),
                               rng.uniform(xi_lo, xi_hi)])
                run = control.integrate_control(spec, x0, synth(x0), dt=0.01)
                assert run.capped == (), f"capped phases from {x0}"
                assert run.terminal_distance < 1e-2
                if kind == "cir":
                    for seg in run.segments.values():
                        assert seg.states[:, 4].min() > 0.0
                    v = run.segments["charge"].states[:, 0]
                    assert v.min() > -12.0 and v.max() < 120.0


def test_criterion_07_one_period_drift_fit_contracts():
    with budget(600.0):
        for spec in (M.cir_hh(), M.ou_hh()):
            d = ergodics.drift_report(spec, replicas=400, seed=0).to_json_dict()
            assert len(d["points"]) == 20 and d["replicas"] == 400
            fit = d["fit"]
            assert fit["lambda"] + 3.0 * fit["lambda_se"] < 1.0
            assert fit["violations"] == []


def test_criterion_08_spiking_and_quiescent_regimes():
    with budget(10.0):
        cfg = sde.SimConfig(dt=0.01, horizon=200.0, seed=0)
        rest = M.x_star(M.deterministic_hh(0.0))
        driven = sde.simulate_path(M.deterministic_hh(10.0), rest, 0.0, cfg)
        assert len(spikes.detect_spikes(driven)) >= 5
        x0 = rest.copy()
        x0[0] += 0.009  # within 0.01 of the rest state
        quiet = sde.simulate_path(M.deterministic_hh(0.0), x0, 0.0, cfg)
        assert len(spikes.detect_spikes(quiet)) == 0
        assert np.linalg.norm(quiet.states[-1] - rest) < 1e-4


@pytest.fixture(scope="module")
def ou_default_isi():
    spec = M.ou_hh()
    t0 = time.perf_counter()
    report = spikes.gc_report(spec, M.x_star(spec), total_spikes=1000,
                              block=250, dt=0.01, seed=7)
    return report, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_09_isi_distribution_self_consistency(ou_default_isi):
    report, elapsed = ou_default_isi
    assert elapsed < 1200.0, f"collection ran {elapsed:.0f}s, budget 1200s"
    isis = np.asarray(report.isis)
    assert not report.partial and len(isis) >= 1000, (
        f"collected {len(isis)} intervals before the step budget ran out; "
        "the split-half comparison needs 500 + 500")
    half = len(isis) // 2
    lo = spikes.EmpiricalCDF(tuple(isis[:half]))
    hi = spikes.EmpiricalCDF(tuple(isis[half:]))
    assert spikes.ks_distance(lo, hi) < 0.1
    _, against_pool = spikes.block_ks_table(tuple(isis[:1000]), 250)
    assert len(against_pool) == 4
    # median over the late pair of blocks must not exceed the early pair
    assert np.median(against_pool[2:]) <= np.median(against_pool[:2])


@pytest.mark.slow
def test_criterion_10_spike_counts_grow_with_spike_free_windows(ou_default_isi):
    report, _ = ou_default_isi
    counts = dict(report.checkpoints)
    doubled = [(t, 2.0 * t) for t in counts if 2.0 * t in counts]
    assert doubled, "no doubling pairs among the recorded checkpoints"
    assert all(counts[t2] > counts[t1] for t1, t2 in doubled), (
        "spike count did not grow between recorded horizons")
    assert report.spike_free_windows >= 1


def test_criterion_11_reruns_are_byte_identical(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("""
[model]
kind = "cir"
a = 1.0

[sim]
dt = 0.01
horizon = 20.0
seed = 5
replicas = 2

[control]
starts = [[50.0, 0.5, 0.5, 0.5, 4.0]]
""")
    root = tmp_path / "runs"

    def run_once(command):
        before = set(root.iterdir()) if root.is_dir() else set()
        assert cli.main([command, "--config", str(cfg),
                         "--set", f'out="{root}"']) == 0
        (fresh,) = set(root.iterdir()) - before
        return fresh

    for command in ("simulate", "control"):
        first, second = run_once(command), run_once(command)
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in second.iterdir())
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes()
