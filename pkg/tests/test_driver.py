import io
import json
import math

import numpy as np
import pytest

from arisac.driver import (CONVERGED, INFEASIBLE, MAX_ITER, BcdOptions, check_feasibility,
                           passive_scenario, run_bcd, run_passive_baseline, run_radar_only,
                           run_variant)
from arisac.model import echo_model
from arisac.precoder import ConfigurationError, precoder_constants, solve_w_step
from arisac.scenario import Scenario, dbm_to_watt, synthesize_channels

SMALL = dict(n_antennas=4, m_elements=4, k_users=1)


def _small(seed=0, **kw):
    sc = Scenario(**{**SMALL, "seed": seed, **kw})
    return sc, synthesize_channels(sc)


def _monotone(result):
    g = result.trace.g_values()
    return bool(np.all(np.diff(g) >= -1e-6 * np.maximum(1.0, np.abs(g[:-1]))))


def test_single_outer_iteration():
    sc, ch = _small()
    res = run_bcd(sc, ch, BcdOptions(max_outer=1))
    assert len(res.trace) == 1
    assert res.status == MAX_ITER
    assert res.feasibility().ok


def test_sensing_only_scenario():
    sc, ch = _small(k_users=0, sinr_targets=())
    res = run_bcd(sc, ch, BcdOptions(max_outer=5))
    assert res.status in (CONVERGED, MAX_ITER)
    assert _monotone(res)
    assert res.feasibility().ok
    assert res.feasibility().sinr_ratio.size == 0


def test_desk_run_monotone_and_feasible():
    sc = Scenario(n_antennas=8, m_elements=6, k_users=2, p_bs=dbm_to_watt(27.0), seed=1)
    ch = synthesize_channels(sc)
    res = run_bcd(sc, ch)
    assert res.status in (CONVERGED, MAX_ITER)
    assert _monotone(res)
    assert res.feasibility().ok
    assert res.crb_theta == pytest.approx(res.trace.records[-1].crb_rad2, rel=1e-12)
    assert np.max(np.abs(res.phi)) <= sc.a_max + 1e-8


def test_passive_baseline_is_unit_modulus():
    sc, ch = _small(seed=2)
    res = run_passive_baseline(sc, ch, BcdOptions(max_outer=4))
    assert res.status in (CONVERGED, MAX_ITER)
    assert np.max(np.abs(np.abs(res.phi) - 1.0)) <= 1e-6
    assert res.scenario.p_bs == pytest.approx(sc.p_bs + sc.p_ris)
    assert res.feasibility().ok
    assert _monotone(res)


def test_passive_settings_reduce_active_precoder_step():
    sc, ch = _small(seed=3)
    ps = passive_scenario(sc)
    phi = np.exp(1j * np.linspace(0, 3, ch.m))
    em = echo_model(ch, phi, ps)
    c = precoder_constants(ch, phi, ps)
    # no amplification noise and no RIS budget: the RIS row is vacuous
    assert np.allclose(c.e_mat, 0.0) or not math.isfinite(c.p_ris)
    with_ris = solve_w_step(em, c)
    without = solve_w_step(em, c, families=("bs", "sinr"))
    assert with_ris.lifted.t_w == pytest.approx(without.lifted.t_w, rel=1e-5)


def test_radar_only_ignores_users():
    sc, ch = _small(seed=4, sinr_targets=(1e6,))
    res = run_radar_only(sc, ch, BcdOptions(max_outer=3))
    assert res.status != INFEASIBLE
    assert res.scenario.k_users == 0
    assert _monotone(res)


def test_deterministic():
    sc, ch = _small(seed=5)
    opts = BcdOptions(max_outer=3)
    a, b = run_bcd(sc, ch, opts), run_bcd(sc, ch, opts)
    assert np.array_equal(a.w, b.w) and np.array_equal(a.phi, b.phi)
    assert list(a.trace.g_values()) == list(b.trace.g_values())


def test_unreachable_sinr_reports_infeasible():
    sc, ch = _small(seed=6, sinr_targets=(1e12,))
    res = run_bcd(sc, ch, BcdOptions(max_outer=2))
    assert res.status == INFEASIBLE
    assert res.w is None and math.isinf(res.crb_theta)
    assert "w_status" in res.diagnostics
    assert "sinr" in res.diagnostics["binding"]


def test_budget_below_static_draw():
    sc, ch = _small(p_ris=1e-30)
    with pytest.raises(ConfigurationError):
        run_bcd(sc, ch)


def test_unknown_variant():
    sc, ch = _small()
    with pytest.raises(ValueError):
        run_variant("nope", sc, ch)


def test_trace_log_records():
    sc, ch = _small(seed=7)
    res = run_bcd(sc, ch, BcdOptions(max_outer=2))
    fh = io.StringIO()
    res.trace.write_jsonl(fh, seed=7)
    lines = [json.loads(x) for x in fh.getvalue().splitlines()]
    assert len(lines) == len(res.trace)
    for key in ("iteration", "g", "crb_rad2", "crb_db", "min_sinr_margin_db", "bs_power_w",
                "ris_power_w", "inner_iterations", "wall_s", "seed"):
        assert key in lines[0]


def test_feasibility_check_flags_violations():
    sc, ch = _small(seed=8)
    res = run_bcd(sc, ch, BcdOptions(max_outer=1))
    assert check_feasibility(ch, res.w, res.phi, sc).ok
    assert not check_feasibility(ch, 10 * res.w, res.phi, sc).ok
    assert not check_feasibility(ch, res.w, res.phi * (sc.a_max + 1) / np.abs(res.phi), sc).ok
