"""Unit-modulus phase initialization by Riemannian conjugate gradient.

Maximizes the total cascaded channel power toward the target and users
over the torus |psi_m| = 1, i.e. minimizes

    f(psi) = -psi^H M psi - Re{psi^H m}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelSet


@dataclass(frozen=True)
class InitProblem:
    m_mat: np.ndarray   # (M, M) Hermitian PSD
    m_vec: np.ndarray   # (M,)


def build_init_problem(ch: ChannelSet) -> InitProblem:
    gg = ch.g.conj() @ ch.g.T                    # G^* G^T
    m_mat = np.conj(ch.h_rt)[:, None] * gg * ch.h_rt[None, :]
    m_vec = np.zeros(ch.m, dtype=complex)
    for k in range(ch.k):
        hr = ch.h_r[k]
        m_mat = m_mat + np.conj(hr)[:, None] * gg * hr[None, :]
        m_vec = m_vec + 2.0 * np.conj(hr) * (ch.g.conj() @ ch.h_d[k])
    return InitProblem(0.5 * (m_mat + m_mat.conj().T), m_vec)


def init_objective(p: InitProblem, psi: np.ndarray) -> float:
    return float(-np.vdot(psi, p.m_mat @ psi).real - np.real(np.vdot(psi, p.m_vec)))


def channel_power(ch: ChannelSet, psi: np.ndarray) -> float:
    """Target cascaded power plus the users' compound-channel powers."""
    total = np.sum(np.abs((ch.h_rt * psi) @ ch.g) ** 2)
    for k in range(ch.k):
        total += np.sum(np.abs(ch.h_d[k] + (ch.h_r[k] * psi) @ ch.g) ** 2)
    return float(total)


@dataclass
class RcgResult:
    psi: np.ndarray
    objective: float
    iterations: int
    grad_norm: float        # of the normalized problem
    history: list = field(default_factory=list)


def _project(psi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Tangent-space projection on the torus at ``psi``."""
    return g - np.real(g * psi.conj()) * psi


def _retract(x: np.ndarray) -> np.ndarray:
    return x / np.abs(x)


def rcg_solve(p: InitProblem, max_iter: int = 2000, tol: float = 1e-8,
              psi0: np.ndarray | None = None) -> RcgResult:
    """Polak-Ribiere+ conjugate gradient on the unit-modulus torus with
    Armijo backtracking (halving from a unit step).

    The problem is internally divided by ``2 lambda_max(M) + ||m||`` so the
    gradient test ``||grad|| <= tol (1 + |f|)`` is scale free; ``objective``
    and ``grad_norm`` are reported in the original units.
    """
    m = p.m_vec.size
    psi = np.ones(m, dtype=complex) if psi0 is None else _retract(np.asarray(psi0, dtype=complex))
    # normalize so a unit step is a sensible first trial
    scale = 2.0 * float(np.linalg.eigvalsh(p.m_mat)[-1]) + float(np.linalg.norm(p.m_vec))
    scale = scale if scale > 0.0 else 1.0
    mm, mv = p.m_mat / scale, p.m_vec / scale

    def f(x):
        return float(-np.vdot(x, mm @ x).real - np.real(np.vdot(x, mv)))

    def rgrad(x):
        return _project(x, -2.0 * (mm @ x) - mv)

    fx = f(psi)
    g = rgrad(psi)
    d = -g
    history = [fx * scale]
    it = 0
    gnorm = float(np.linalg.norm(g))
    for it in range(1, max_iter + 1):
        if gnorm <= tol * (1.0 + abs(fx)):
            it -= 1
            break
        slope = float(np.real(np.vdot(g, d)))
        if slope >= 0.0:                 # not a descent direction: restart
            d = -g
            slope = -gnorm ** 2
        step = 1.0
        while True:
            cand = _retract(psi + step * d)
            fc = f(cand)
            if fc <= fx + 1e-4 * step * slope or step < 1e-16:
                break
            step *= 0.5
        if fc > fx:                      # no decrease possible along d
            if np.array_equal(d, -g):
                break
            d = -g
            continue
        g_new = rgrad(cand)
        # transport old quantities by projection onto the new tangent space
        g_old_t = _project(cand, g)
        d_t = _project(cand, d)
        beta = max(0.0, float(np.real(np.vdot(g_new, g_new - g_old_t))) / max(gnorm ** 2, 1e-300))
        d = -g_new + beta * d_t
        rel = abs(fx - fc) / max(abs(fx), 1e-300)
        psi, fx, g = cand, fc, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(fx * scale)
        if rel < tol * tol:             # stagnation guard
            break
    return RcgResult(psi=psi, objective=fx * scale, iterations=it, grad_norm=gnorm,
                     history=history)


def initial_phi(psi: np.ndarray, a_max: float) -> np.ndarray:
    return a_max * np.asarray(psi, dtype=complex)
