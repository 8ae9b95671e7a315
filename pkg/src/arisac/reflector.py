"""Reflection-vector step: the explicit quartic/fractional objective in
phi, its auxiliary ratio variables, the MM surrogates, the convex QCQP
built from them and the noise-covariance (Psi) refresh.

Notation. ``v = vec(phi phi^H) = conj(phi) kron phi`` (column-major vec).
Matrices acting on ``v`` are Kronecker products ``P kron Q``; they are
applied as ``vec(Q V P^T)`` and only materialized densely when
``M <= kron_cap``. With ``R1``, ``R2`` and ``L = diag(0..M-1)``:

    xi_i   = vec(R_i)
    Xi_i   = L R_j^T kron L R_j        (j != i)
    F_i    = L R_j^T L kron R_i
    y_i    = (xi_i^H v) (v^H Xi_i v)
    ratio objective = t1 + t2 - v^H F v = -g / |c0|^2 at the exact t_i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import conic
from .model import EchoModel, noise_covariance
from .precoder import ConfigurationError
from .scenario import ChannelSet, Scenario

log = logging.getLogger(__name__)

DENSE_EIG_MAX = 1024      # largest real dimension handled with a dense eigensolver
T_IMAG_TOL = 1e-8


class PhiStepError(RuntimeError):
    """Coefficient assembly produced an inconsistent value."""


def _vec(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, order="F")


def _unvec(v: np.ndarray, m: int) -> np.ndarray:
    return v.reshape(m, m, order="F")


def _lift(phi: np.ndarray) -> np.ndarray:
    return np.kron(phi.conj(), phi)


def _herm(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.conj().T)


def _lmax_herm(x: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(_herm(x))[-1])


# ---------------------------------------------------------------------------
# coefficients of the explicit objective


@dataclass
class PhiCoefficients:
    r1: np.ndarray
    r2: np.ndarray
    ell: np.ndarray           # diagonal of L
    c0_sq: float
    psi: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    bigxi1: np.ndarray | None  # dense only when M <= kron_cap
    bigxi2: np.ndarray | None
    f1: np.ndarray | None
    f2: np.ndarray | None
    f: np.ndarray | None

    @property
    def m(self) -> int:
        return self.r1.shape[0]

    def r(self, i: int) -> np.ndarray:
        return self.r1 if i == 1 else self.r2

    def xi(self, i: int) -> np.ndarray:
        return self.xi1 if i == 1 else self.xi2

    def other(self, i: int) -> np.ndarray:
        """R_j with j != i."""
        return self.r2 if i == 1 else self.r1

    def xi_apply(self, i: int, v: np.ndarray) -> np.ndarray:
        """Xi_i v = vec(L R_j V R_j L)."""
        big = self.bigxi1 if i == 1 else self.bigxi2
        if big is not None:
            return big @ v
        rj, ell = self.other(i), self.ell
        vm = _unvec(v, self.m)
        return _vec(ell[:, None] * (rj @ vm @ rj) * ell[None, :])

    def xi_h_apply(self, i: int, v: np.ndarray) -> np.ndarray:
        """Xi_i^H v = vec(R_j L V L R_j)."""
        big = self.bigxi1 if i == 1 else self.bigxi2
        if big is not None:
            return big.conj().T @ v
        rj, ell = self.other(i), self.ell
        vm = _unvec(v, self.m)
        return _vec(rj @ (ell[:, None] * vm * ell[None, :]) @ rj)

    def f_apply(self, v: np.ndarray) -> np.ndarray:
        """F v = sum_i vec(R_i V L R_j L)."""
        if self.f is not None:
            return self.f @ v
        vm = _unvec(v, self.m)
        lr2l = self.ell[:, None] * self.r2 * self.ell[None, :]
        lr1l = self.ell[:, None] * self.r1 * self.ell[None, :]
        return _vec(self.r1 @ vm @ lr2l + self.r2 @ vm @ lr1l)


def compute_phi_coefficients(em: EchoModel, w: np.ndarray, psi: np.ndarray,
                             ch: ChannelSet, sc: Scenario | None = None,
                             kron_cap: int = 16) -> PhiCoefficients:
    b = ch.g.T * em.a_diag                     # G^T A, (N, M)
    cov = w @ w.conj().T
    r1 = _herm(b.conj().T @ cov.conj() @ b)
    try:
        r2 = _herm(b.conj().T @ np.linalg.solve(psi, b))
    except np.linalg.LinAlgError as exc:
        raise PhiStepError("Psi is singular") from exc
    ell = em.l_diag.astype(float)
    m = r1.shape[0]
    dense = m <= kron_cap
    big = {}
    if dense:
        lm = np.diag(ell)
        big["bigxi1"] = np.kron(lm @ r2.T, lm @ r2)
        big["bigxi2"] = np.kron(lm @ r1.T, lm @ r1)
        big["f1"] = np.kron(lm @ r2.T @ lm, r1)
        big["f2"] = np.kron(lm @ r1.T @ lm, r2)
        big["f"] = big["f1"] + big["f2"]
    else:
        big = dict(bigxi1=None, bigxi2=None, f1=None, f2=None, f=None)
    return PhiCoefficients(r1=r1, r2=r2, ell=ell, c0_sq=float(abs(em.c0) ** 2), psi=psi,
                           xi1=_vec(r1.conj().T), xi2=_vec(r2.conj().T), **big)


def y_value(coeffs: PhiCoefficients, i: int, v: np.ndarray) -> complex:
    return complex(np.vdot(coeffs.xi(i), v) * np.vdot(v, coeffs.xi_apply(i, v)))


def update_t(coeffs: PhiCoefficients, phi: np.ndarray) -> tuple[float, float]:
    """Exact minimizers of the auxiliary ratio variables."""
    v = _lift(phi)
    out = []
    for i in (1, 2):
        den = np.vdot(phi, coeffs.other(i) @ phi)
        if not den.real > 0.0:
            raise PhiStepError(f"phi^H R_j phi = {den.real:g} is not positive")
        t = y_value(coeffs, i, v) / den
        if abs(t.imag) > T_IMAG_TOL * max(abs(t), 1e-300):
            raise PhiStepError(f"t_{i} has imaginary residue {t.imag:g}")
        out.append(float(t.real))
    return out[0], out[1]


def ratio_objective(coeffs: PhiCoefficients, phi: np.ndarray) -> float:
    """t1 + t2 - v^H F v evaluated at the exact t_i (equals -g / |c0|^2)."""
    t1, t2 = update_t(coeffs, phi)
    v = _lift(phi)
    return t1 + t2 - float(np.vdot(v, coeffs.f_apply(v)).real)


def neg_vfv(coeffs: PhiCoefficients, phi: np.ndarray) -> float:
    v = _lift(phi)
    return -float(np.vdot(v, coeffs.f_apply(v)).real)


def frac_constraint(coeffs: PhiCoefficients, i: int, t: float, phi: np.ndarray) -> float:
    """y_i(phi) - t phi^H R_j phi (feasible when <= 0)."""
    v = _lift(phi)
    return float(y_value(coeffs, i, v).real - t * np.vdot(phi, coeffs.other(i) @ phi).real)


# ---------------------------------------------------------------------------
# SINR and RIS-power constants in phi


@dataclass
class SinrPhiConstants:
    c_mat: np.ndarray     # (K, M, M)
    d_vec: np.ndarray     # (K, M)
    c_phi: np.ndarray     # (K,)
    a_ki: np.ndarray      # (K, K+N)
    b_ki: np.ndarray      # (K, K+N, M)
    j_mat: np.ndarray     # (M, M)
    k_ris_mat: np.ndarray  # (M, M)
    gamma: np.ndarray     # (K,)


def sinr_phi_constants(ch: ChannelSet, w: np.ndarray, sc: Scenario,
                       gamma: np.ndarray | None = None) -> SinrPhiConstants:
    k_users, m = ch.k, ch.m
    if gamma is None:
        gamma = sc.gamma[:k_users]
    gamma = np.asarray(gamma, dtype=float)
    gw = ch.g @ w                                  # (M, K+N), column i = G w_i
    a_ki = ch.h_d @ w                              # (K, K+N)
    b_ki = gw.T[None, :, :] * ch.h_r[:, None, :]   # (K, K+N, M)
    c_mat = np.empty((k_users, m, m), dtype=complex)
    d_vec = np.empty((k_users, m), dtype=complex)
    c_phi = np.empty(k_users)
    for k in range(k_users):
        bk = b_ki[k]
        c_mat[k] = _herm(bk.conj().T @ bk + sc.noise_ris * np.diag(np.abs(ch.h_r[k]) ** 2))
        boost = 1.0 + 1.0 / gamma[k]
        d_vec[k] = 2.0 * (a_ki[k][:, None] * bk.conj()).sum(axis=0) - 2.0 * boost * a_ki[k, k] * bk[k].conj()
        c_phi[k] = np.sum(np.abs(a_ki[k]) ** 2) - boost * abs(a_ki[k, k]) ** 2 + sc.noise_user
    dh = ch.h_rt[:, None] * gw                     # diag(h_rt) G W
    j_mat = _herm(sc.rcs_var * ch.alpha_rt ** 2 * (dh.conj() @ dh.T))
    k_ris = np.diag(np.sum(np.abs(gw) ** 2, axis=1) + 2.0 * sc.noise_ris).astype(complex)
    return SinrPhiConstants(c_mat, d_vec, c_phi, a_ki, b_ki, j_mat, k_ris, gamma)


def sinr_constraint_value(sconsts: SinrPhiConstants, k: int, phi: np.ndarray) -> float:
    """phi^H C_k phi + Re{d_k^H phi} + c_phi,k - (1 + 1/gamma) |b_kk^T phi|^2 (<= 0 iff SINR >= gamma)."""
    boost = 1.0 + 1.0 / sconsts.gamma[k]
    bkk = sconsts.b_ki[k, k]
    return float(np.vdot(phi, sconsts.c_mat[k] @ phi).real
                 + np.real(np.vdot(sconsts.d_vec[k], phi))
                 + sconsts.c_phi[k]
                 - boost * abs(bkk @ phi) ** 2)


def static_bound_c3(ch: ChannelSet, sc: Scenario, a_max: float | None = None) -> float:
    a = sc.a_max if a_max is None else a_max
    return sc.rcs_var * sc.noise_ris * ch.alpha_rt ** 4 * ch.m ** 2 * a ** 4


def max_feasible_amplitude(ch: ChannelSet, sc: Scenario) -> float:
    """Largest a_max whose static bound c3 stays below P_RIS."""
    denom = sc.rcs_var * sc.noise_ris * ch.alpha_rt ** 4 * ch.m ** 2
    return float((sc.p_ris / denom) ** 0.25) if denom > 0 else math.inf


# ---------------------------------------------------------------------------
# surrogates


@dataclass
class YStage:
    """Quadratic-in-v bound y(v) <= y_s + Re{grad^H (v - v_s)} + (lam/2)||v - v_s||^2
    rewritten as (lam/2)||v||^2 + Re{v^H ell} + x with ell = vec(Omega)."""

    y_s: float
    grad: np.ndarray
    lam_anchor: float     # largest eigenvalue of the symmetrized Hessian at v_s
    lam: float            # value actually used (safety factor, refresh, clip >= 0)
    ell: np.ndarray
    x: float
    omega: np.ndarray
    v_s: np.ndarray
    refreshes: int = 0

    def bound(self, v: np.ndarray) -> float:
        d = v - self.v_s
        return float(self.y_s + np.real(np.vdot(self.grad, d)) + 0.5 * self.lam * np.vdot(d, d).real)


@dataclass
class SurrogatePack:
    anchor: np.ndarray
    a_max: float
    lambda1_tilde: float
    f_tilde: np.ndarray
    c2: float
    lambda_y: np.ndarray          # (2,)
    ell_tilde: np.ndarray         # (2, M)
    varrho: np.ndarray            # (2, M)
    kappa: np.ndarray             # (2,)
    varrho_tilde: np.ndarray      # (2, M)
    kappa_tilde: np.ndarray       # (2,)
    lambda_y_tilde: np.ndarray    # (2,)
    x_tilde: np.ndarray           # (2,)
    d_tilde: np.ndarray           # (K, M)
    c_phi_tilde: np.ndarray       # (K,)
    t: tuple
    stages: list = field(default_factory=list)

    # evaluation helpers -------------------------------------------------
    def objective(self, phi: np.ndarray) -> float:
        return float(0.5 * self.lambda1_tilde * np.vdot(phi, phi).real
                     + np.real(np.vdot(phi, self.f_tilde)) + self.c2)

    def sinr(self, sconsts: SinrPhiConstants, k: int, phi: np.ndarray) -> float:
        return float(np.vdot(phi, sconsts.c_mat[k] @ phi).real
                     + np.real(np.vdot(self.d_tilde[k], phi)) + self.c_phi_tilde[k])

    def y_chain(self, i: int, phi: np.ndarray) -> float:
        """Final quadratic upper bound of y_i(phi)."""
        j = i - 1
        return float(0.5 * self.lambda_y_tilde[j] * np.vdot(phi, phi).real
                     + np.real(np.vdot(phi, self.ell_tilde[j])) + self.x_tilde[j])

    def neg_r(self, i: int, phi: np.ndarray) -> float:
        """Linear upper bound of -phi^H R_j phi."""
        j = i - 1
        return float(np.real(np.vdot(phi, self.varrho[j])) + self.kappa[j])

    def frac(self, i: int, phi: np.ndarray) -> float:
        """Convex upper bound of y_i - t_i phi^H R_j phi."""
        j = i - 1
        return float(0.5 * self.lambda_y_tilde[j] * np.vdot(phi, phi).real
                     + np.real(np.vdot(phi, self.varrho_tilde[j])) + self.kappa_tilde[j])


def _quadratic_majorizer(mat: np.ndarray, phi_s: np.ndarray):
    """Re{phi^H X phi} <= (lam/2)||phi||^2 + Re{phi^H vec} + const, tight at phi_s."""
    h = mat + mat.conj().T
    lam = max(_lmax_herm(h), 0.0)
    vec = h @ phi_s - lam * phi_s
    const = -float(np.real(np.vdot(phi_s, mat @ phi_s))) + 0.5 * lam * float(np.vdot(phi_s, phi_s).real)
    return lam, vec, const


def _embed(x: np.ndarray) -> np.ndarray:
    return np.block([[x.real, -x.imag], [x.imag, x.real]])


def _hessian_lmax(coeffs: PhiCoefficients, i: int, v_s: np.ndarray, a_s: float,
                  s_v: np.ndarray) -> float:
    """Largest eigenvalue of the (symmetrized) Hessian of y_i in real coordinates:
    H = xi s^T + s xi^T + a S with S = embed(Xi + Xi^H), s = S v_bar."""
    m2 = v_s.size
    xi_bar = np.concatenate([coeffs.xi(i).real, coeffs.xi(i).imag])
    s_bar = np.concatenate([s_v.real, s_v.imag])
    big = coeffs.bigxi1 if i == 1 else coeffs.bigxi2
    if big is not None and 2 * m2 <= DENSE_EIG_MAX:
        s_mat = _embed(big + big.conj().T)
        h = np.outer(xi_bar, s_bar) + np.outer(s_bar, xi_bar) + a_s * s_mat
        return float(np.linalg.eigvalsh(0.5 * (h + h.T))[-1])

    def matvec(x):
        x = np.ravel(x)
        xc = x[:m2] + 1j * x[m2:]
        sx = coeffs.xi_apply(i, xc) + coeffs.xi_h_apply(i, xc)
        out = xi_bar * (s_bar @ x) + s_bar * (xi_bar @ x) + a_s * np.concatenate([sx.real, sx.imag])
        return out

    op = spla.LinearOperator((2 * m2, 2 * m2), matvec=matvec, dtype=float)
    try:
        vals = spla.eigsh(op, k=1, which="LA", tol=1e-9, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise PhiStepError("eigensolver did not converge") from exc
    return float(vals[0])


def _domination_samples(phi_s: np.ndarray, a_max: float, n: int,
                        rng: np.random.Generator) -> list[np.ndarray]:
    m = phi_s.size
    out = []
    third = max(n // 3, 1)
    for _ in range(third):      # uniform in the amplitude disk
        r = a_max * np.sqrt(rng.uniform(0.0, 1.0, m))
        out.append(r * np.exp(1j * rng.uniform(0.0, 2 * np.pi, m)))
    for _ in range(third):      # full amplitude, random phases
        out.append(a_max * np.exp(1j * rng.uniform(0.0, 2 * np.pi, m)))
    for _ in range(n - 2 * third):  # near the anchor
        step = 0.1 * a_max * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
        p = phi_s + step * rng.uniform(0.0, 1.0)
        mag = np.abs(p)
        p = np.where(mag > a_max, p / np.maximum(mag, 1e-300) * a_max, p)
        out.append(p)
    return out


def build_y_stage(coeffs: PhiCoefficients, i: int, phi_s: np.ndarray, a_max: float,
                  lambda_safety: float = 1.0, check_points: list | None = None,
                  max_refresh: int = 60) -> YStage:
    """Second-order bound of y_i around v_s with the curvature taken at the
    anchor, multiplied by ``lambda_safety`` and enlarged (doubling) until it
    dominates y_i at every point of ``check_points``."""
    v_s = _lift(phi_s)
    a_s = float(np.vdot(coeffs.xi(i), v_s).real)
    xv = coeffs.xi_apply(i, v_s)
    b_s = float(np.vdot(v_s, xv).real)
    s_v = xv + coeffs.xi_h_apply(i, v_s)          # (Xi + Xi^H) v_s
    y_s = a_s * b_s
    grad = coeffs.xi(i) * b_s + a_s * s_v
    lam_anchor = _hessian_lmax(coeffs, i, v_s, a_s, s_v)
    lam = max(lambda_safety * lam_anchor, 0.0)

    refreshes = 0
    if check_points:
        lifts = [_lift(p) for p in check_points]
        ys = np.array([y_value(coeffs, i, v).real for v in lifts])
        lin = np.array([y_s + np.real(np.vdot(grad, v - v_s)) for v in lifts])
        dist2 = np.array([np.vdot(v - v_s, v - v_s).real for v in lifts])
        slack = 1e-10 * (np.abs(ys) + abs(y_s))
        while True:
            viol = ys - (lin + 0.5 * lam * dist2) - slack
            if not np.any(viol > 0.0) or refreshes >= max_refresh:
                break
            ok = dist2 > 0
            needed = float(np.max(2.0 * (ys - lin)[ok] / dist2[ok])) if np.any(ok) else 0.0
            lam = max(2.0 * lam, needed)
            refreshes += 1
        if refreshes:
            log.debug("y_%d curvature refreshed %d times: %.3e -> %.3e", i, refreshes, lam_anchor, lam)

    ell = grad - lam * v_s
    x = y_s - float(np.real(np.vdot(grad, v_s))) + 0.5 * lam * float(np.vdot(v_s, v_s).real)
    return YStage(y_s=y_s, grad=grad, lam_anchor=lam_anchor, lam=lam, ell=ell, x=x,
                  omega=_unvec(ell, phi_s.size), v_s=v_s, refreshes=refreshes)


def build_surrogates(coeffs: PhiCoefficients, sconsts: SinrPhiConstants, t1: float, t2: float,
                     phi_s: np.ndarray, a_max: float, lambda_safety: float = 1.0,
                     domination_samples: int = 0, rng: np.random.Generator | None = None,
                     extra_points: list | None = None) -> SurrogatePack:
    """All convex majorizers at the anchor ``phi_s``."""
    m = phi_s.size
    if np.max(np.abs(phi_s), initial=0.0) > a_max * (1 + 1e-8):
        raise PhiStepError("anchor violates the amplitude cap")
    v_s = _lift(phi_s)
    fv = coeffs.f_apply(v_s)
    f_mat = _unvec(-2.0 * fv, m)
    lam1, f_tilde, c_quad = _quadratic_majorizer(f_mat, phi_s)
    c2 = c_quad + float(np.vdot(v_s, fv).real)

    points = []
    if domination_samples > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        points = _domination_samples(phi_s, a_max, domination_samples, rng)
    if extra_points:
        points = points + list(extra_points)

    ts = (t1, t2)
    stages, lam_y, ell_t, lam_yt, x_t = [], [], [], [], []
    varrho, kappa, varrho_t, kappa_t = [], [], [], []
    for i in (1, 2):
        st = build_y_stage(coeffs, i, phi_s, a_max, lambda_safety, points)
        stages.append(st)
        lam_tilde, ell_tilde, c_om = _quadratic_majorizer(st.omega, phi_s)
        xt = c_om + 0.5 * st.lam * m ** 2 * a_max ** 4 + st.x
        rj = coeffs.other(i)
        rho = -2.0 * rj.conj().T @ phi_s
        kap = float(np.vdot(phi_s, rj @ phi_s).real)
        lam_y.append(st.lam)
        ell_t.append(ell_tilde)
        lam_yt.append(lam_tilde)
        x_t.append(xt)
        varrho.append(rho)
        kappa.append(kap)
        varrho_t.append(ell_tilde + ts[i - 1] * rho)
        kappa_t.append(xt + ts[i - 1] * kap)

    k_users = sconsts.c_mat.shape[0]
    d_t = np.empty((k_users, m), dtype=complex)
    c_t = np.empty(k_users)
    for k in range(k_users):
        boost = 1.0 + 1.0 / sconsts.gamma[k]
        bkk = sconsts.b_ki[k, k]
        proj = bkk @ phi_s                               # b^T phi_s
        d_t[k] = sconsts.d_vec[k] - 2.0 * boost * bkk.conj() * proj
        c_t[k] = sconsts.c_phi[k] + boost * abs(proj) ** 2

    return SurrogatePack(
        anchor=phi_s.copy(), a_max=a_max, lambda1_tilde=lam1, f_tilde=f_tilde, c2=c2,
        lambda_y=np.array(lam_y), ell_tilde=np.array(ell_t), varrho=np.array(varrho),
        kappa=np.array(kappa), varrho_tilde=np.array(varrho_t), kappa_tilde=np.array(kappa_t),
        lambda_y_tilde=np.array(lam_yt), x_tilde=np.array(x_t), d_tilde=d_t, c_phi_tilde=c_t,
        t=ts, stages=stages)


# ---------------------------------------------------------------------------
# convex QCQP


def _herm_sqrt(x: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_herm(x))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def _row_scale(*parts) -> float:
    s = max(float(np.max(np.abs(np.atleast_1d(p)), initial=0.0)) for p in parts)
    return s if s > 0.0 else 1.0


def build_phi_qcqp(pack: SurrogatePack, sconsts: SinrPhiConstants, sc: Scenario,
                   t1: float | None = None, t2: float | None = None,
                   ch: ChannelSet | None = None, p_ris: float | None = None,
                   ris_constraint: bool = True) -> conic.ConicProgram:
    """Convex QCQP posed in the displacement ``d = (phi - phi_s) / a_max``
    from the anchor; every row is rescaled to O(1).

    Writing each quadratic row as value + gradient + curvature at the anchor
    avoids cancelling the large constants of the surrogates, which otherwise
    swamps the thin feasible region near a full-amplitude anchor.
    ``t1``/``t2`` are already folded into ``pack``; they are accepted for
    symmetry with the math and checked for consistency.
    """
    for given, stored in ((t1, pack.t[0]), (t2, pack.t[1])):
        if given is not None and not math.isclose(given, stored, rel_tol=1e-12, abs_tol=0.0):
            raise PhiStepError("t values differ from those folded into the surrogates")
    a = pack.a_max
    anchor = pack.anchor
    m = anchor.size
    budget = sc.p_ris if p_ris is None else p_ris
    p = conic.ConicProgram()
    dv = p.complex("delta", m)
    de = dv.expr
    pe = de + anchor / a                  # phi / a_max
    r = p.real("r")                       # r >= ||d||^2
    p.add_rsoc(r.expr, conic.Affine.constant(1.0), de, label="norm")

    def re_inner(vec):                    # Re{(phi - phi_s)^H vec}
        return (a * vec.conj()[None, :] @ de).real

    grad = pack.lambda1_tilde * anchor + pack.f_tilde
    obj_scale = _row_scale(0.5 * pack.lambda1_tilde * a * a, a * grad)
    p.minimize((0.5 * pack.lambda1_tilde * a * a * r.expr + re_inner(grad)) / obj_scale)

    for mm in range(m):
        p.add_soc(conic.Affine.constant(1.0), pe[mm], label=f"amp{mm}")

    if ris_constraint and math.isfinite(budget):
        if ch is None:
            raise PhiStepError("channels are needed for the RIS power row")
        c3 = static_bound_c3(ch, sc, a)
        if not budget > c3:
            raise ConfigurationError(
                f"static RIS draw bound c3 = {c3:.4g} W exceeds P_RIS = {budget:.4g} W; "
                f"largest feasible a_max is {max_feasible_amplitude(ch, sc):.4g}")
        k_tilde = sconsts.k_ris_mat + m * a * a * sconsts.j_mat
        root = _herm_sqrt(k_tilde) * (a / math.sqrt(budget - c3))
        p.add_soc(conic.Affine.constant(1.0), root @ pe, label="ris-power")

    for k in range(sconsts.c_mat.shape[0]):
        c_k = sconsts.c_mat[k]
        val = pack.sinr(sconsts, k, anchor)
        lin = 2.0 * (c_k @ anchor) + pack.d_tilde[k]
        root = _herm_sqrt(c_k) * a
        s = _row_scale(np.linalg.norm(root) ** 2, a * lin, val)
        u = (-re_inner(lin) - val) / s
        p.add_rsoc(u, conic.Affine.constant(1.0), (root / math.sqrt(s)) @ de, label=f"sinr{k}")

    for j in range(2):
        q = 0.5 * pack.lambda_y_tilde[j] * a * a
        val = pack.frac(j + 1, anchor)
        lin = pack.lambda_y_tilde[j] * anchor + pack.varrho_tilde[j]
        s = _row_scale(q, a * lin, val)
        row = (q * r.expr + re_inner(lin) + val) / s
        p.add_nonneg(-row, label=f"frac{j + 1}")
    p.meta.update(a_max=a, anchor=anchor)
    return p


def phi_from_solution(sol: conic.ConicSolution) -> np.ndarray:
    phi = sol.meta["anchor"] + sol["delta"] * sol.meta["a_max"]
    mag = np.abs(phi)
    cap = sol.meta["a_max"]
    # remove solver overshoot of the amplitude cap
    return np.where(mag > cap, phi / np.maximum(mag, 1e-300) * cap, phi)


def update_psi(phi: np.ndarray, ch: ChannelSet, sc: Scenario) -> np.ndarray:
    return noise_covariance(ch, phi, sc)


# ---------------------------------------------------------------------------
# inner loop


@dataclass
class InnerRecord:
    iteration: int
    objective_before: float    # ratio objective at the anchor, Psi frozen
    objective_after: float     # ratio objective at the new point, same Psi
    objective_refreshed: float  # ratio objective at the new point after the Psi refresh
    g_true: float
    max_residual: float
    lambda1_tilde: float
    lambda_y: tuple
    status: str


@dataclass
class PhiStepResult:
    phi: np.ndarray
    g_true: float
    iterations: int
    records: list
    status: str


def _true_g(ch: ChannelSet, w: np.ndarray, phi: np.ndarray, sc: Scenario) -> float:
    from .crb import g_trace
    from .model import echo_model
    return g_trace(echo_model(ch, phi, sc), w)


def optimize_phi(ch: ChannelSet, w: np.ndarray, phi0: np.ndarray, sc: Scenario, *,
                 a_max: float | None = None, ris_constraint: bool = True,
                 max_inner: int = 50, inner_tol: float = 1e-4, lambda_safety: float = 1.0,
                 kron_cap: int = 16, domination_samples: int = 48, backend=None,
                 solver_tol: float = conic.DEFAULT_TOL, seed: int = 0,
                 max_dom_refresh: int = 3) -> PhiStepResult:
    """Alternate (t1, t2) -> surrogate QCQP -> Psi refresh from ``phi0``.

    A QCQP step is kept only when the ratio objective with Psi frozen does
    not increase. The returned vector is the visited point with the largest
    true g.
    """
    from .model import echo_model
    a = sc.a_max if a_max is None else a_max
    sk = sinr_phi_constants(ch, w, sc)
    em = echo_model(ch, phi0, sc)           # steering/derivative parts do not depend on phi
    phi_s = np.asarray(phi0, dtype=complex).copy()
    coeffs = compute_phi_coefficients(em, w, update_psi(phi_s, ch, sc), ch, sc, kron_cap)
    obj = ratio_objective(coeffs, phi_s)
    best_phi, best_g = phi_s.copy(), _true_g(ch, w, phi_s, sc)
    records = []
    retried = False
    status = "max-iter"
    attempt = 0
    it = 0
    while it < max_inner:
        attempt += 1
        rng = np.random.default_rng((seed, attempt))
        t1, t2 = update_t(coeffs, phi_s)
        extra = []
        sol, pack = None, None
        for _ in range(max_dom_refresh + 1):
            pack = build_surrogates(coeffs, sk, t1, t2, phi_s, a, lambda_safety,
                                    domination_samples, rng, extra)
            prog = build_phi_qcqp(pack, sk, sc, ch=ch, ris_constraint=ris_constraint)
            sol = conic.solve(prog, backend, solver_tol)
            if sol.status != conic.OPTIMAL:
                break
            cand = phi_from_solution(sol)
            v = _lift(cand)
            if all(y_value(coeffs, i, v).real <= pack.stages[i - 1].bound(v)
                   + 1e-10 * abs(pack.stages[i - 1].bound(v)) for i in (1, 2)):
                break
            extra.append(cand)        # the bound failed at the new point: enlarge curvature
        if sol.status != conic.OPTIMAL:
            records.append(InnerRecord(it, obj, float("nan"), float("nan"), float("nan"),
                                       float("nan"), pack.lambda1_tilde, tuple(pack.lambda_y),
                                       sol.status))
            log.debug("phi QCQP %s at inner iteration %d", sol.status, it)
            if retried:
                status = "infeasible"
                break
            retried = True
            continue
        it += 1
        cand = phi_from_solution(sol)
        obj_after = ratio_objective(coeffs, cand)
        if obj_after > obj + 1e-9 * max(abs(obj), 1e-300):
            records.append(InnerRecord(it, obj, obj_after, float("nan"), float("nan"),
                                       sol.max_residual, pack.lambda1_tilde,
                                       tuple(pack.lambda_y), "rejected"))
            status = "stalled"
            break
        coeffs = compute_phi_coefficients(em, w, update_psi(cand, ch, sc), ch, sc, kron_cap)
        obj_new = ratio_objective(coeffs, cand)
        g_new = _true_g(ch, w, cand, sc)
        records.append(InnerRecord(it, obj, obj_after, obj_new, g_new, sol.max_residual,
                                   pack.lambda1_tilde, tuple(pack.lambda_y), "accepted"))
        if g_new > best_g:
            best_phi, best_g = cand.copy(), g_new
        rel = abs(obj_new - obj) / max(abs(obj), 1e-300)
        phi_s, obj = cand, obj_new
        if rel < inner_tol:
            status = "converged"
            break
    return PhiStepResult(phi=best_phi, g_true=best_g, iterations=it, records=records,
                         status=status)
