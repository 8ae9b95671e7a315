"""Deterministic signal-model quantities.

A precoder ``w`` is an ``(N, K + N)`` complex array whose first ``K``
columns serve the users and whose last ``N`` columns carry the radar
streams. A reflection vector ``phi`` is a length-``M`` complex array.
Transmit symbols are taken with identity covariance, so only ``w @ w^H``
enters the sensing metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ChannelSet, Scenario


@dataclass(frozen=True)
class EchoModel:
    q: np.ndarray       # (N, N) G^T Phi h_rt h_rt^T Phi G
    q_dot: np.ndarray   # (N, N) derivative of q w.r.t. theta
    r_n: np.ndarray     # (N, N) echo noise covariance
    l_diag: np.ndarray  # (M,)   0 .. M-1
    a_diag: np.ndarray  # (M,)   steering vector a_M(theta)
    c0: complex         # -j pi cos(theta) alpha_rt^2


def compound_channels(ch: ChannelSet, phi: np.ndarray) -> np.ndarray:
    """Rows ``h_k^T = h_d,k^T + h_r,k^T Phi G``; shape ``(K, N)``."""
    return ch.h_d + (ch.h_r * phi) @ ch.g


def sinr(k: int, ch: ChannelSet, w: np.ndarray, phi: np.ndarray, sc: Scenario) -> float:
    """Linear SINR of user ``k`` (0-based)."""
    h = compound_channels(ch, phi)[k]
    gains = np.abs(h @ w) ** 2
    ris_noise = np.sum(np.abs(ch.h_r[k] * phi) ** 2) * sc.noise_ris
    return float(gains[k] / (gains.sum() - gains[k] + ris_noise + sc.noise_user))


def sinr_all(ch: ChannelSet, w: np.ndarray, phi: np.ndarray, sc: Scenario) -> np.ndarray:
    return np.array([sinr(k, ch, w, phi, sc) for k in range(ch.k)])


def ris_power(ch: ChannelSet, w: np.ndarray, phi: np.ndarray, sc: Scenario) -> float:
    """Power drawn by the active RIS: amplified incident signal, amplified
    echo, amplified echo of the RIS noise, and the two RIS noise passes."""
    phi_g_w = phi[:, None] * (ch.g @ w)
    phi_h = phi * ch.h_rt
    echo = np.outer(phi_h, (ch.h_rt * phi) @ ch.g @ w)
    echo_noise = np.outer(phi_h, ch.h_rt * phi)
    return float(np.sum(np.abs(phi_g_w) ** 2)
                 + sc.rcs_var * np.sum(np.abs(echo) ** 2)
                 + sc.rcs_var * sc.noise_ris * np.sum(np.abs(echo_noise) ** 2)
                 + 2.0 * sc.noise_ris * np.sum(np.abs(phi) ** 2))


def static_ris_power(ch: ChannelSet, phi: np.ndarray, sc: Scenario) -> float:
    """The part of the RIS power that does not depend on the precoder."""
    nrm2 = np.sum(np.abs(phi * ch.h_rt) ** 2)
    return float(sc.rcs_var * sc.noise_ris * nrm2 ** 2
                 + 2.0 * sc.noise_ris * np.sum(np.abs(phi) ** 2))


def noise_covariance(ch: ChannelSet, phi: np.ndarray, sc: Scenario) -> np.ndarray:
    """sigma_z^2 G^T Phi Phi^H G^* + sigma_r^2 I."""
    b = ch.g.T * phi
    r = sc.noise_ris * (b @ b.conj().T) + sc.noise_bs * np.eye(ch.n)
    return 0.5 * (r + r.conj().T)


def echo_model(ch: ChannelSet, phi: np.ndarray, sc: Scenario) -> EchoModel:
    m = ch.m
    a = np.exp(-1j * np.pi * np.arange(m) * np.sin(ch.theta))
    ell = np.arange(m, dtype=float)
    ga = ch.g.T * a                      # G^T A
    q_vec = ga @ phi
    q_dot_vec = ga @ (ell * phi)
    c0 = -1j * np.pi * np.cos(ch.theta) * ch.alpha_rt ** 2
    q = ch.alpha_rt ** 2 * np.outer(q_vec, q_vec)
    q_dot = c0 * (np.outer(q_dot_vec, q_vec) + np.outer(q_vec, q_dot_vec))
    return EchoModel(q=q, q_dot=q_dot, r_n=noise_covariance(ch, phi, sc),
                     l_diag=ell, a_diag=a, c0=complex(c0))
