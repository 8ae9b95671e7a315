"""Independent reference computations used by the test suites and by
``arisac selftest``. Each oracle re-derives a quantity from its defining
expression rather than from the optimized closed forms it checks."""

from __future__ import annotations

import numpy as np

from .scenario import ChannelSet, Scenario, steering


def q_direct(ch: ChannelSet, phi: np.ndarray, theta: float | None = None) -> np.ndarray:
    """G^T Phi h_rt h_rt^T Phi G assembled with explicit diagonal matrices."""
    if theta is None:
        theta = ch.theta
    h_rt = ch.alpha_rt * steering(ch.m, theta)
    big_phi = np.diag(phi)
    left = ch.g.T @ big_phi @ h_rt[:, None]
    right = h_rt[None, :] @ big_phi @ ch.g
    return left @ right


def q_dot_fd(ch: ChannelSet, phi: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite difference of Q over the target angle."""
    return (q_direct(ch, phi, ch.theta + h) - q_direct(ch, phi, ch.theta - h)) / (2.0 * h)


def q_dot_product_rule(ch: ChannelSet, phi: np.ndarray) -> np.ndarray:
    """dQ/dtheta by the product rule on the explicit outer product, with
    the steering derivative taken entry by entry."""
    idx = np.arange(ch.m)
    h_rt = ch.alpha_rt * steering(ch.m, ch.theta)
    dh = -1j * np.pi * idx * np.cos(ch.theta) * h_rt
    big_phi = np.diag(phi)
    left = ch.g.T @ big_phi
    right = big_phi @ ch.g
    return left @ (np.outer(dh, h_rt) + np.outer(h_rt, dh)) @ right


def sinr_bruteforce(k: int, ch: ChannelSet, w: np.ndarray, phi: np.ndarray,
                    sc: Scenario) -> float:
    """SINR of user ``k`` built term by term with scalar loops."""
    n, m = ch.n, ch.m
    h = np.zeros(n, dtype=complex)
    for col in range(n):
        acc = ch.h_d[k, col]
        for e in range(m):
            acc += ch.h_r[k, e] * phi[e] * ch.g[e, col]
        h[col] = acc
    signal = 0.0
    interference = 0.0
    for i in range(w.shape[1]):
        val = 0j
        for col in range(n):
            val += h[col] * w[col, i]
        if i == k:
            signal = abs(val) ** 2
        else:
            interference += abs(val) ** 2
    ris_noise = sum(abs(ch.h_r[k, e] * phi[e]) ** 2 for e in range(m)) * sc.noise_ris
    return signal / (interference + ris_noise + sc.noise_user)


def ris_power_quadratic(j_mat: np.ndarray, k_ris_mat: np.ndarray, phi: np.ndarray,
                        ch: ChannelSet, sc: Scenario) -> float:
    """RIS power from the quadratic/quartic decomposition in phi."""
    pp = np.vdot(phi, phi).real
    return float(np.vdot(phi, j_mat @ phi).real * pp
                 + sc.rcs_var * sc.noise_ris * ch.alpha_rt ** 4 * pp ** 2
                 + np.vdot(phi, k_ris_mat @ phi).real)


def fim_vectorized(ch: ChannelSet, w: np.ndarray, phi: np.ndarray, sc: Scenario,
                   alpha: complex, n_samples: int, rng: np.random.Generator,
                   q: np.ndarray | None = None, q_dot: np.ndarray | None = None,
                   ) -> np.ndarray:
    """3x3 FIM from the general Gaussian formula applied to the stacked
    echo vec(alpha Q W S) with white-noise covariance I_L kron Rn.

    ``S`` is a random block with orthogonal rows scaled so that
    S S^H = L I. Q and dQ/dtheta default to the explicit product and its
    product-rule derivative, independent of the closed forms.
    """
    n_streams = w.shape[1]
    if n_samples < n_streams:
        raise ValueError("need n_samples >= K + N for S S^H = L I")
    z = rng.standard_normal((n_samples, n_samples)) + 1j * rng.standard_normal((n_samples, n_samples))
    u, _ = np.linalg.qr(z)
    s = np.sqrt(n_samples) * u[:n_streams, :]
    if q is None:
        q = q_direct(ch, phi)
    if q_dot is None:
        q_dot = q_dot_product_rule(ch, phi)
    b = ch.g.T * phi
    r_tilde = sc.noise_ris * (b @ b.conj().T) + sc.noise_bs * np.eye(ch.n)
    r_big = np.kron(np.eye(n_samples), r_tilde)

    def vec(x):
        return x.reshape(-1, order="F")

    d = [alpha * vec(q_dot @ w @ s), vec(q @ w @ s), 1j * vec(q @ w @ s)]
    sol = [np.linalg.solve(r_big, di) for di in d]
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = 2.0 * np.real(np.vdot(d[i], sol[j]))
    return out
