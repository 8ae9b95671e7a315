"""Fisher information, the DoA CRB and the descent objective g."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EchoModel


class DegenerateGeometryError(ValueError):
    """The target parameter is unobservable for the given design."""


@dataclass(frozen=True)
class Fim:
    m_tt: float
    m_ta: np.ndarray   # (2,)
    m_aa: np.ndarray   # (2, 2), a multiple of I_2
    alpha_sq: float

    def matrix(self) -> np.ndarray:
        out = np.empty((3, 3))
        out[0, 0] = self.m_tt
        out[0, 1:] = self.m_ta
        out[1:, 0] = self.m_ta
        out[1:, 1:] = self.m_aa
        return out


@dataclass(frozen=True)
class TraceTerms:
    """The three traces that make up g:
    t1 = Tr{Qd R Qd^H Rn^-1}, t2 = Tr{Q R Qd^H Rn^-1}, t3 = Tr{Q R Q^H Rn^-1}."""

    t1: float
    t2: complex
    t3: float


def trace_terms(em: EchoModel, cov: np.ndarray) -> TraceTerms:
    rinv_qd = np.linalg.solve(em.r_n, em.q_dot)
    rinv_q = np.linalg.solve(em.r_n, em.q)
    qd_h = em.q_dot.conj().T
    t1 = np.trace(cov @ qd_h @ rinv_qd).real
    t2 = np.trace(cov @ qd_h @ rinv_q)
    t3 = np.trace(cov @ em.q.conj().T @ rinv_q).real
    return TraceTerms(float(t1), complex(t2), float(t3))


def g_from_cov(em: EchoModel, cov: np.ndarray) -> float:
    """g evaluated on a transmit covariance ``cov = W W^H``."""
    tt = trace_terms(em, cov)
    if tt.t3 <= 0.0:
        if abs(tt.t2) > 0.0:
            raise DegenerateGeometryError("zero echo energy with a nonzero cross term")
        return tt.t1
    return tt.t1 - abs(tt.t2) ** 2 / tt.t3


def g_trace(em: EchoModel, w: np.ndarray) -> float:
    return g_from_cov(em, w @ w.conj().T)


def fim(em: EchoModel, w: np.ndarray, n_samples: int, alpha_sq: float,
        alpha: complex | None = None) -> Fim:
    """Blocks of the 3x3 FIM for xi = [theta, Re(alpha), Im(alpha)].

    ``alpha`` defaults to the real root of ``alpha_sq``; only its phase
    enters the cross block, never the CRB.
    """
    if alpha is None:
        alpha = math.sqrt(alpha_sq)
    tt = trace_terms(em, w @ w.conj().T)
    two_l = 2.0 * n_samples
    m_tt = two_l * abs(alpha) ** 2 * tt.t1
    m_ta = two_l * np.real(np.conj(alpha) * tt.t2 * np.array([1.0, 1j]))
    m_aa = two_l * tt.t3 * np.eye(2)
    return Fim(float(m_tt), m_ta, m_aa, float(abs(alpha) ** 2))


def crb_theta(f: Fim) -> float:
    """[M^-1]_{11} through the Schur complement of the alpha block."""
    c = f.m_aa[0, 0]
    if c > 0.0:
        schur = f.m_tt - float(f.m_ta @ f.m_ta) / c
    elif np.any(f.m_ta != 0.0):
        raise DegenerateGeometryError("singular alpha block with nonzero coupling")
    else:
        schur = f.m_tt
    if not schur > 0.0:
        raise DegenerateGeometryError(f"non-positive Schur complement {schur:g}")
    return 1.0 / schur


def crb_from_g(g: float, n_samples: int, alpha_sq: float) -> float:
    if not g > 0.0:
        raise DegenerateGeometryError(f"non-positive objective g = {g:g}")
    return 1.0 / (2.0 * n_samples * alpha_sq * g)


def g_phi_explicit(coeffs, phi: np.ndarray) -> float:
    """Closed-form g as a quartic/fractional function of ``phi`` built from
    R1, R2, L and |c0|^2 of a ``PhiCoefficients``."""
    ell = coeffs.ell
    lphi = ell * phi
    a1 = np.vdot(phi, coeffs.r1 @ phi).real
    a2 = np.vdot(phi, coeffs.r2 @ phi).real
    if not (a1 > 0.0 and a2 > 0.0):
        raise DegenerateGeometryError("phi^H R1 phi and phi^H R2 phi must be positive")
    b1 = np.vdot(lphi, coeffs.r1 @ phi)
    b2 = np.vdot(lphi, coeffs.r2 @ phi)
    d1 = np.vdot(lphi, coeffs.r1 @ lphi).real
    d2 = np.vdot(lphi, coeffs.r2 @ lphi).real
    return float(coeffs.c0_sq * (a1 * d2 + a2 * d1
                                 - a2 * abs(b1) ** 2 / a1
                                 - a1 * abs(b2) ** 2 / a2))
