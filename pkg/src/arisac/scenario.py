"""Experiment configuration, geometry and channel synthesis.

All quantities are linear SI units (watts, meters, radians). dB/dBm only
appear at the configuration and CSV boundaries.

RNG streams: every random block draws from its own ``SeedSequence`` child
keyed by ``(block, index)`` so that changing the number of users never
perturbs the draw of ``G`` or of the other users:

    (0, 0)  NLoS part of the BS-RIS channel G
    (1, k)  angular position of user k on the user circle
    (2, k)  BS -> user k channel h_d,k
    (3, k)  RIS -> user k channel h_r,k
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

BLOCK_G = 0
BLOCK_USER_ANGLE = 1
BLOCK_H_DIRECT = 2
BLOCK_H_RIS = 3


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watt_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w) + 30.0


def db_to_lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class Geometry:
    """2-D positions in meters. Both arrays lie along the x-axis; the BS
    broadside points to +y and the RIS broadside to -y."""

    bs: tuple[float, float] = (0.0, 0.0)
    ris: tuple[float, float] = (0.0, 50.0)
    target: tuple[float, float] = (3.0, 47.0)
    user_center: tuple[float, float] = (-10.0, 40.0)
    user_radius: float = 5.0

    def target_angle(self) -> float:
        """DoA of the target seen from the RIS (pi/4 for the default layout)."""
        dx = self.target[0] - self.ris[0]
        dy = self.ris[1] - self.target[1]
        return math.atan2(dx, dy)

    def bs_departure_angle(self) -> float:
        dx = self.ris[0] - self.bs[0]
        dy = self.ris[1] - self.bs[1]
        return math.atan2(dx, dy)

    def ris_arrival_angle(self) -> float:
        dx = self.bs[0] - self.ris[0]
        dy = self.ris[1] - self.bs[1]
        return math.atan2(dx, dy)


@dataclass(frozen=True)
class Scenario:
    n_antennas: int = 16
    m_elements: int = 8
    k_users: int = 2
    n_samples: int = 1024
    p_bs: float = dbm_to_watt(23.0)
    p_ris: float = dbm_to_watt(10.0)
    a_max: float = 8.0
    sinr_targets: tuple[float, ...] = (db_to_lin(16.0),)
    noise_user: float = dbm_to_watt(-80.0)
    noise_ris: float = dbm_to_watt(-80.0)
    noise_bs: float = dbm_to_watt(-80.0)
    rcs_var: float = 1.0
    geometry: Geometry = field(default_factory=Geometry)
    # BS-RIS, BS-user, RIS-user, RIS-target
    pathloss_exponents: tuple[float, float, float, float] = (2.2, 3.5, 2.3, 2.2)
    pathloss_ref: float = db_to_lin(-30.0)
    ref_distance: float = 1.0
    rician_k: float = db_to_lin(3.0)
    seed: int = 0

    def __post_init__(self):
        targets = tuple(float(g) for g in np.atleast_1d(self.sinr_targets))
        if len(targets) == 1 and self.k_users != 1:
            targets = targets * self.k_users
        object.__setattr__(self, "sinr_targets", targets)

    @property
    def gamma(self) -> np.ndarray:
        return np.asarray(self.sinr_targets, dtype=float)

    def replace(self, **changes) -> "Scenario":
        """``dataclasses.replace`` that re-broadcasts a common SINR target
        when the number of users changes."""
        if "k_users" in changes and "sinr_targets" not in changes:
            old = self.sinr_targets
            common = old[0] if old and len(set(old)) == 1 else None
            if common is None:
                if len(old) != changes["k_users"]:
                    raise ValueError("per-user SINR targets must be given when K changes")
            else:
                changes["sinr_targets"] = (common,)
        return dataclasses.replace(self, **changes)

    def violations(self) -> list[str]:
        """Every violated invariant, not just the first."""
        errs = []
        for name in ("n_antennas", "m_elements", "n_samples"):
            if int(getattr(self, name)) < 1:
                errs.append(f"{name} must be a positive integer")
        if self.k_users < 0:
            errs.append("k_users must be non-negative")
        if self.a_max < 1.0:
            errs.append("a_max >= 1 required (active RIS amplitude cap)")
        for name in ("p_bs", "p_ris", "noise_user", "noise_ris", "noise_bs",
                     "rcs_var", "pathloss_ref", "ref_distance", "rician_k"):
            val = getattr(self, name)
            if not val > 0:
                errs.append(f"{name} must be strictly positive (got {val})")
        if len(self.sinr_targets) != self.k_users:
            errs.append(f"expected {self.k_users} SINR targets, got {len(self.sinr_targets)}")
        if any(not g > 0 for g in self.sinr_targets):
            errs.append("SINR targets must be strictly positive")
        if len(self.pathloss_exponents) != 4:
            errs.append("pathloss_exponents needs four values")
        geo = self.geometry
        if not geo.user_radius > 0:
            errs.append("user_radius must be strictly positive")
        if _dist(geo.bs, geo.ris) <= 0 or _dist(geo.ris, geo.target) <= 0:
            errs.append("BS, RIS and target positions must be distinct")
        return errs

    def validate(self) -> "Scenario":
        errs = self.violations()
        if errs:
            raise ValueError("; ".join(errs))
        return self


@dataclass(frozen=True)
class ChannelSet:
    g: np.ndarray        # (M, N)  BS -> RIS
    h_d: np.ndarray      # (K, N)  BS -> users
    h_r: np.ndarray      # (K, M)  RIS -> users
    h_rt: np.ndarray     # (M,)    RIS -> target, alpha_rt * a_M(theta)
    theta: float
    alpha_rt: float

    @property
    def n(self) -> int:
        return self.g.shape[1]

    @property
    def m(self) -> int:
        return self.g.shape[0]

    @property
    def k(self) -> int:
        return self.h_d.shape[0]

    def without_users(self) -> "ChannelSet":
        return dataclasses.replace(
            self, h_d=self.h_d[:0], h_r=self.h_r[:0])

    def with_theta(self, theta: float) -> "ChannelSet":
        """Same channels with the target moved to DoA ``theta``."""
        return dataclasses.replace(
            self, theta=theta, h_rt=self.alpha_rt * steering(self.m, theta))


def _dist(p, q) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def path_loss(d: float, exponent: float, ref: float = db_to_lin(-30.0),
              d0: float = 1.0) -> float:
    """Power gain C0 * (d0 / d) ** exponent."""
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    return ref * (d0 / d) ** exponent


def steering(m: int, theta: float) -> np.ndarray:
    if m < 1:
        raise ValueError("steering vector needs m >= 1")
    return np.exp(-1j * np.pi * np.arange(m) * np.sin(theta))


def _stream(seed: int, block: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block, index)))


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def user_positions(sc: Scenario) -> np.ndarray:
    geo = sc.geometry
    pos = np.empty((sc.k_users, 2))
    for k in range(sc.k_users):
        ang = _stream(sc.seed, BLOCK_USER_ANGLE, k).uniform(0.0, 2.0 * np.pi)
        pos[k] = (geo.user_center[0] + geo.user_radius * np.cos(ang),
                  geo.user_center[1] + geo.user_radius * np.sin(ang))
    return pos


def synthesize_channels(sc: Scenario) -> ChannelSet:
    n, m, k = sc.n_antennas, sc.m_elements, sc.k_users
    geo = sc.geometry
    e_br, e_bu, e_ru, e_rt = sc.pathloss_exponents

    def pl(d, e):
        return path_loss(d, e, sc.pathloss_ref, sc.ref_distance)

    los = np.outer(steering(m, geo.ris_arrival_angle()),
                   steering(n, geo.bs_departure_angle()))
    nlos = _cn(_stream(sc.seed, BLOCK_G, 0), (m, n))
    kf = sc.rician_k
    g = math.sqrt(pl(_dist(geo.bs, geo.ris), e_br)) * (
        math.sqrt(kf / (kf + 1.0)) * los + math.sqrt(1.0 / (kf + 1.0)) * nlos)

    users = user_positions(sc)
    h_d = np.empty((k, n), dtype=complex)
    h_r = np.empty((k, m), dtype=complex)
    for i, u in enumerate(users):
        h_d[i] = math.sqrt(pl(_dist(geo.bs, u), e_bu)) * _cn(_stream(sc.seed, BLOCK_H_DIRECT, i), n)
        h_r[i] = math.sqrt(pl(_dist(geo.ris, u), e_ru)) * _cn(_stream(sc.seed, BLOCK_H_RIS, i), m)

    theta = geo.target_angle()
    alpha_rt = math.sqrt(pl(_dist(geo.ris, geo.target), e_rt))
    return ChannelSet(g=g, h_d=h_d, h_r=h_r, h_rt=alpha_rt * steering(m, theta),
                      theta=theta, alpha_rt=alpha_rt)


def random_channels(rng: np.random.Generator, n: int, m: int, k: int,
                    theta: float | None = None, alpha_rt: float = 1.0) -> ChannelSet:
    """Unit-scale i.i.d. channels; used by the oracle suites and tests."""
    if theta is None:
        theta = rng.uniform(-1.2, 1.2)
    return ChannelSet(g=_cn(rng, (m, n)), h_d=_cn(rng, (k, n)), h_r=_cn(rng, (k, m)),
                      h_rt=alpha_rt * steering(m, theta), theta=theta, alpha_rt=alpha_rt)
