"""Precoder step: semidefinite relaxation over (R_w, W_k) for a fixed
reflection vector, followed by rank-one recovery of the user beams and a
square-root factorization of the remaining radar covariance.

The program is posed in units of the BS budget (R_hat = R_w / P_BS) and
with every constraint row normalized, so the solver sees O(1) data even
though channel gains span many orders of magnitude.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .model import EchoModel, compound_channels, static_ris_power
from .scenario import ChannelSet, Scenario

log = logging.getLogger(__name__)

CLIP_REL = 1e-8


class ConfigurationError(ValueError):
    """The configuration makes the subproblem infeasible by construction."""


class RankRecoveryError(RuntimeError):
    """R_w - sum_k w_k w_k^H has a clearly negative eigenvalue."""


@dataclass(frozen=True)
class PrecoderSubproblemConstants:
    e_mat: np.ndarray        # (N, N) RIS power per unit transmit covariance
    c_r: float               # precoder-independent RIS power
    c_s: np.ndarray          # (K,) noise seen by each user
    h_compound: np.ndarray   # (K, N)
    gamma: np.ndarray        # (K,)
    p_bs: float
    p_ris: float


def precoder_constants(ch: ChannelSet, phi: np.ndarray, sc: Scenario,
                       gamma: np.ndarray | None = None) -> PrecoderSubproblemConstants:
    pg = phi[:, None] * ch.g                       # Phi G
    ph = phi * ch.h_rt                             # Phi h_rt
    echo_row = (ch.h_rt * phi) @ ch.g              # h_rt^T Phi G
    e_mat = pg.conj().T @ pg + sc.rcs_var * np.sum(np.abs(ph) ** 2) * np.outer(
        echo_row.conj(), echo_row)
    e_mat = 0.5 * (e_mat + e_mat.conj().T)
    c_s = np.sum(np.abs(ch.h_r * phi) ** 2, axis=1) * sc.noise_ris + sc.noise_user
    if gamma is None:
        gamma = sc.gamma[:ch.k]
    return PrecoderSubproblemConstants(
        e_mat=e_mat, c_r=static_ris_power(ch, phi, sc), c_s=c_s,
        h_compound=compound_channels(ch, phi), gamma=np.asarray(gamma, dtype=float),
        p_bs=sc.p_bs, p_ris=sc.p_ris)


def _lmax(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (a + a.conj().T))[-1])


def build_w_sdr(em: EchoModel, consts: PrecoderSubproblemConstants,
                sc: Scenario | None = None, families: tuple[str, ...] = ("bs", "ris", "sinr"),
                ) -> conic.ConicProgram:
    """SDR of the precoder step: maximize t subject to the 2x2 Schur
    condition [[a - t, b], [b^*, c]] >= 0 (as a rotated cone), the BS and
    RIS budgets, the lifted SINR rows and R_w - sum W_k >= 0.

    ``families`` selects which constraint families are present; dropping
    one is used for infeasibility diagnostics.
    """
    n = em.q.shape[0]
    k_users = consts.h_compound.shape[0]
    p_bs = consts.p_bs
    ris_budget = consts.p_ris - consts.c_r
    if "ris" in families and math.isfinite(consts.p_ris) and not ris_budget > 0.0:
        raise ConfigurationError(
            f"RIS budget {consts.p_ris:.4g} W does not cover the static draw c_r = "
            f"{consts.c_r:.4g} W of the current reflection vector")

    rinv_qd = np.linalg.solve(em.r_n, em.q_dot)
    rinv_q = np.linalg.solve(em.r_n, em.q)
    a_mat = em.q_dot.conj().T @ rinv_qd
    b_mat = em.q_dot.conj().T @ rinv_q
    c_mat = em.q.conj().T @ rinv_q
    la, lc = _lmax(a_mat), _lmax(c_mat)
    s_a = p_bs * la if la > 0.0 else 1.0
    s_c = p_bs * lc if lc > 0.0 else 1.0
    s_b = math.sqrt(s_a * s_c)

    p = conic.ConicProgram()
    r_hat = p.hermitian("R", n)
    w_hat = [p.hermitian(f"W{k}", n) for k in range(k_users)]
    t_hat = p.real("t")

    a_e = (p_bs / s_a) * conic.trace_product(a_mat, r_hat)
    b_e = (p_bs / s_b) * conic.trace_product(b_mat, r_hat)
    c_e = (p_bs / s_c) * conic.trace_product(c_mat, r_hat)
    p.add_rsoc((a_e - t_hat.expr).real, c_e.real, b_e, label="schur")

    if "bs" in families:
        p.add_nonneg(1.0 - conic.trace_product(np.eye(n), r_hat).real, label="bs-power")
    if "ris" in families and math.isfinite(consts.p_ris):
        row = (p_bs / ris_budget) * conic.trace_product(consts.e_mat, r_hat).real
        p.add_nonneg(1.0 - row, label="ris-power")
    if "sinr" in families:
        for k in range(k_users):
            h = consts.h_compound[k]
            hh = np.outer(h.conj(), h)
            nrm = float(np.vdot(h, h).real)
            frac = consts.gamma[k] / (1.0 + consts.gamma[k])
            row = (conic.trace_product(hh, w_hat[k])
                   - frac * conic.trace_product(hh, r_hat)
                   - frac * consts.c_s[k] / p_bs) / nrm
            p.add_nonneg(row.real, label=f"sinr{k}")
    for k, wk in enumerate(w_hat):
        p.add_psd(wk, label=f"W{k}-psd")
    rest = r_hat.expr
    for wk in w_hat:
        rest = rest - wk.expr
    p.add_psd(rest, n, label="radar-psd")
    p.maximize(t_hat.expr)
    p.meta.update(power_scale=p_bs, t_scale=s_a)
    return p


@dataclass(frozen=True)
class LiftedDesign:
    r_w: np.ndarray
    w_k: list
    t_w: float


def lifted_values(sol: conic.ConicSolution) -> LiftedDesign:
    scale = sol.meta["power_scale"]
    r = scale * sol["R"]
    r = 0.5 * (r + r.conj().T)
    w_k = []
    k = 0
    while f"W{k}" in sol.values:
        wk = scale * sol[f"W{k}"]
        w_k.append(0.5 * (wk + wk.conj().T))
        k += 1
    return LiftedDesign(r, w_k, float(sol.meta["t_scale"] * sol["t"][0]))


def lifted_sinr(consts: PrecoderSubproblemConstants, lifted: LiftedDesign) -> np.ndarray:
    out = []
    for k, wk in enumerate(lifted.w_k):
        hc = consts.h_compound[k].conj()
        sig = np.vdot(hc, wk @ hc).real      # h^T W_k h^*
        tot = np.vdot(hc, lifted.r_w @ hc).real
        out.append(sig / (tot - sig + consts.c_s[k]))
    return np.array(out)


def psd_sqrt_factor(mat: np.ndarray, clip_rel: float = CLIP_REL,
                    ref_norm: float | None = None) -> np.ndarray:
    """F with F F^H = mat, clipping tiny negative eigenvalues."""
    mat = 0.5 * (mat + mat.conj().T)
    vals, vecs = np.linalg.eigh(mat)
    if ref_norm is None:
        ref_norm = float(np.max(np.abs(vals), initial=0.0))
    floor = -clip_rel * ref_norm
    if vals.size and vals[0] < floor:
        raise RankRecoveryError(
            f"eigenvalue {vals[0]:.3e} below clipping floor {floor:.3e}")
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def recover_w(sol: conic.ConicSolution | LiftedDesign,
              consts: PrecoderSubproblemConstants) -> np.ndarray:
    """User beams w_k = W_k h_k^* / sqrt(h_k^T W_k h_k^*) and radar block
    W_r with W_r W_r^H = R_w - sum_k w_k w_k^H, so that W W^H = R_w."""
    lifted = sol if isinstance(sol, LiftedDesign) else lifted_values(sol)
    r_w = lifted.r_w
    n = r_w.shape[0]
    cols = []
    rest = r_w.copy()
    for k, wk in enumerate(lifted.w_k):
        h = consts.h_compound[k]
        v = wk @ h.conj()
        energy = float(np.vdot(h.conj(), v).real)
        if energy > 0.0:
            col = v / math.sqrt(energy)
        else:
            col = np.zeros(n, dtype=complex)
        vals = np.linalg.eigvalsh(wk)
        if n > 1 and vals[-1] > 0 and vals[-2] > 1e-6 * vals[-1]:
            log.debug("user %d lifted beam has rank > 1 (eig ratio %.2e)", k, vals[-2] / vals[-1])
        cols.append(col)
        rest = rest - np.outer(col, col.conj())
    ref = float(np.linalg.norm(r_w, 2))
    w_r = psd_sqrt_factor(rest, ref_norm=ref)
    if cols:
        return np.hstack([np.array(cols).T, w_r])
    return w_r


@dataclass
class WStepResult:
    status: str
    w: np.ndarray | None
    lifted: LiftedDesign | None
    solution: conic.ConicSolution


def solve_w_step(em: EchoModel, consts: PrecoderSubproblemConstants, backend=None,
                 tol: float = conic.DEFAULT_TOL,
                 families: tuple[str, ...] = ("bs", "ris", "sinr")) -> WStepResult:
    prog = build_w_sdr(em, consts, families=families)
    sol = conic.solve(prog, backend, tol)
    if sol.status != conic.OPTIMAL:
        return WStepResult(sol.status, None, None, sol)
    lifted = lifted_values(sol)
    return WStepResult(sol.status, recover_w(lifted, consts), lifted, sol)
