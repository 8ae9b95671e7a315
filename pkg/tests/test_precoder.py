import math

import numpy as np
import pytest

from arisac import conic
from arisac.crb import g_from_cov, g_trace
from arisac.initializer import build_init_problem, initial_phi, rcg_solve
from arisac.model import echo_model, ris_power, sinr_all
from arisac.precoder import (ConfigurationError, LiftedDesign, RankRecoveryError,
                             PrecoderSubproblemConstants, build_w_sdr, lifted_sinr,
                             precoder_constants, psd_sqrt_factor, recover_w, solve_w_step)
from arisac.scenario import Scenario, synthesize_channels


def _desk(seed=0, **kw):
    base = dict(n_antennas=4, m_elements=4, k_users=2, seed=seed)
    base.update(kw)
    sc = Scenario(**base)
    ch = synthesize_channels(sc)
    phi = initial_phi(rcg_solve(build_init_problem(ch)).psi, sc.a_max)
    return sc, ch, phi


def test_e_matrix_is_psd_and_matches_ris_power():
    sc, ch, phi = _desk()
    c = precoder_constants(ch, phi, sc)
    assert np.linalg.eigvalsh(c.e_mat)[0] >= -1e-12 * np.abs(c.e_mat).max()
    rng = np.random.default_rng(1)
    w = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    lhs = np.trace(w.conj().T @ c.e_mat @ w).real + c.c_r
    assert lhs == pytest.approx(ris_power(ch, w, phi, sc), rel=1e-10)


def test_desk_sdr_residuals_and_recovery():
    sc, ch, phi = _desk()
    em = echo_model(ch, phi, sc)
    c = precoder_constants(ch, phi, sc)
    step = solve_w_step(em, c)
    assert step.status == conic.OPTIMAL
    assert step.solution.max_residual <= 1e-6
    w, lifted = step.w, step.lifted
    assert np.all(sinr_all(ch, w, phi, sc) >= sc.gamma * (1 - 1e-6))
    assert np.allclose(sinr_all(ch, w, phi, sc), lifted_sinr(c, lifted), rtol=1e-6)
    assert np.sum(np.abs(w) ** 2) == pytest.approx(np.trace(lifted.r_w).real, rel=1e-6)
    assert np.sum(np.abs(w) ** 2) <= sc.p_bs * (1 + 1e-6)
    assert ris_power(ch, w, phi, sc) <= sc.p_ris * (1 + 1e-6)
    assert g_trace(em, w) == pytest.approx(g_from_cov(em, lifted.r_w), rel=1e-8)
    # t equals the objective on the lifted covariance
    assert lifted.t_w == pytest.approx(g_from_cov(em, lifted.r_w), rel=1e-5)


def test_vanishing_sinr_targets_match_program_without_sinr_rows():
    sc, ch, phi = _desk(seed=2)
    em = echo_model(ch, phi, sc)
    c = precoder_constants(ch, phi, sc, gamma=np.full(2, 1e-9))
    with_rows = solve_w_step(em, c)
    without = solve_w_step(em, c, families=("bs", "ris"))
    assert with_rows.lifted.t_w == pytest.approx(without.lifted.t_w, rel=1e-5)


def test_zero_reflection_gives_zero_objective():
    sc, ch, _ = _desk()
    phi = np.zeros(ch.m, dtype=complex)
    em = echo_model(ch, phi, sc)
    step = solve_w_step(em, precoder_constants(ch, phi, sc))
    assert step.status == conic.OPTIMAL
    assert abs(step.lifted.t_w) <= 1e-6 * sc.p_bs


def test_ris_budget_below_static_draw_is_configuration_error():
    sc, ch, phi = _desk()
    em = echo_model(ch, phi, sc)
    c = precoder_constants(ch, phi, sc.replace(p_ris=1e-30))
    with pytest.raises(ConfigurationError):
        build_w_sdr(em, c)


def test_rank_one_aligned_covariance():
    h = np.array([1.0 + 1j, 0.5, -0.3j])
    r = np.outer(h.conj(), h) / np.vdot(h, h).real
    c = PrecoderSubproblemConstants(np.eye(3), 0.0, np.array([1.0]), h[None, :], np.array([1.0]),
                                    1.0, math.inf)
    w = recover_w(LiftedDesign(r, [r], 1.0), c)
    assert np.allclose(w[:, 0], h.conj() / np.linalg.norm(h))
    # sqrt of a roundoff-level residual covariance
    assert np.allclose(w[:, 1:], 0.0, atol=1e-7)


def test_clipping_policy():
    vals = np.array([1.0, 0.5, -1e-10])
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))
    mat = (q * vals) @ q.T
    f = psd_sqrt_factor(mat, ref_norm=1.0)
    assert np.allclose(f @ f.conj().T, (q * np.clip(vals, 0, None)) @ q.T, atol=1e-12)
    bad = (q * np.array([1.0, 0.5, -1e-6])) @ q.T
    with pytest.raises(RankRecoveryError):
        psd_sqrt_factor(bad, ref_norm=1.0)


def test_recovery_reproduces_covariance():
    sc, ch, phi = _desk(seed=3)
    em = echo_model(ch, phi, sc)
    c = precoder_constants(ch, phi, sc)
    step = solve_w_step(em, c)
    w = step.w
    assert np.linalg.norm(w @ w.conj().T - step.lifted.r_w) <= 1e-7 * np.linalg.norm(step.lifted.r_w)
    e_w = np.trace(w.conj().T @ c.e_mat @ w).real
    assert e_w == pytest.approx(np.trace(c.e_mat @ step.lifted.r_w).real, rel=1e-6)


def test_dropping_families_relaxes():
    sc, ch, phi = _desk()
    em = echo_model(ch, phi, sc)
    c = precoder_constants(ch, phi, sc, gamma=np.full(2, 1e9))
    # clarabel may stop without a certificate on this program
    assert solve_w_step(em, c).status in (conic.INFEASIBLE, conic.NUMERICAL_FAILURE)
    assert solve_w_step(em, c, families=("bs", "ris")).status == conic.OPTIMAL
