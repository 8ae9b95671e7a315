"""Alternating design of the precoder and the reflection vector.

Each outer iteration solves the precoder SDR for the current reflection
vector and then runs the MM inner loop over the reflection vector with the
precoder fixed. Three system variants share the loop: active-RIS ISAC,
passive-RIS ISAC and active-RIS radar-only.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .crb import crb_from_g, g_trace
from .initializer import build_init_problem, initial_phi, rcg_solve
from .model import echo_model, ris_power, sinr_all, static_ris_power
from .precoder import ConfigurationError, RankRecoveryError, precoder_constants, solve_w_step
from .reflector import max_feasible_amplitude, optimize_phi, static_bound_c3
from .scenario import ChannelSet, Scenario, lin_to_db

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"

VARIANTS = ("aris-isac", "pris-isac", "aris-radar-only")

FEAS_REL = 1e-6
AMP_SLACK = 1e-8


@dataclass
class BcdOptions:
    max_outer: int = 30
    tol: float = 1e-3
    max_inner: int = 50
    inner_tol: float = 1e-4
    solver_tol: float = conic.DEFAULT_TOL
    lambda_safety: float = 1.0
    kron_cap: int = 16
    domination_samples: int = 48
    backend: str | None = None
    init_max_iter: int = 2000
    init_tol: float = 1e-8
    sinr_backoff: float = 1e-5     # SDR aims at gamma (1 + backoff)


@dataclass
class IterationRecord:
    iteration: int
    g: float
    crb_rad2: float
    crb_db: float
    min_sinr_margin_db: float
    bs_power_w: float
    ris_power_w: float
    inner_iterations: int
    wall_s: float
    w_accepted: bool
    phi_accepted: bool
    inner_status: str

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class BcdTrace:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def g_values(self) -> np.ndarray:
        return np.array([r.g for r in self.records])

    def write_jsonl(self, fh, **tags) -> None:
        for rec in self.records:
            fh.write(json.dumps({**tags, **rec.as_dict()}) + "\n")


@dataclass
class DesignResult:
    w: np.ndarray | None
    phi: np.ndarray
    crb_theta: float
    g: float
    trace: BcdTrace
    status: str
    variant: str = "aris-isac"
    diagnostics: dict = field(default_factory=dict)
    scenario: Scenario | None = None     # effective settings of the variant
    channels: ChannelSet | None = None

    def feasibility(self) -> "Feasibility":
        return check_feasibility(self.channels, self.w, self.phi, self.scenario,
                                 unit_modulus=self.variant == "pris-isac")

    @property
    def crb_db(self) -> float:
        return lin_to_db(self.crb_theta) if self.crb_theta > 0 else math.nan


# ---------------------------------------------------------------------------
# feasibility


@dataclass(frozen=True)
class Feasibility:
    sinr_ratio: np.ndarray      # SINR_k / gamma_k
    bs_power: float
    ris_power: float
    max_amplitude: float
    ok: bool

    def min_margin_db(self) -> float:
        if self.sinr_ratio.size == 0:
            return math.nan
        return lin_to_db(float(np.min(self.sinr_ratio)))


def check_feasibility(ch: ChannelSet, w: np.ndarray, phi: np.ndarray, sc: Scenario,
                      unit_modulus: bool = False, rel: float = FEAS_REL) -> Feasibility:
    """True constraints of the design problem with relative slack ``rel``."""
    ratio = sinr_all(ch, w, phi, sc) / sc.gamma[:ch.k] if ch.k else np.zeros(0)
    bs = float(np.sum(np.abs(w) ** 2))
    ris = ris_power(ch, w, phi, sc) if math.isfinite(sc.p_ris) else 0.0
    amp = float(np.max(np.abs(phi)))
    ok = bool(np.all(ratio >= 1.0 - rel)) and bs <= sc.p_bs * (1.0 + rel)
    ok = ok and (not math.isfinite(sc.p_ris) or ris <= sc.p_ris * (1.0 + rel))
    if unit_modulus:
        ok = ok and float(np.max(np.abs(np.abs(phi) - 1.0))) <= rel
    else:
        ok = ok and amp <= sc.a_max + AMP_SLACK
    return Feasibility(ratio, bs, ris, amp, ok)


def _scale_for_static_draw(ch: ChannelSet, phi: np.ndarray, sc: Scenario,
                           share: float = 0.5) -> np.ndarray:
    """Uniformly shrink ``phi`` until its precoder-independent RIS draw uses
    at most ``share`` of the budget, leaving room for the amplified signal."""
    if not math.isfinite(sc.p_ris):
        return phi
    cap = share * sc.p_ris
    if static_ris_power(ch, phi, sc) <= cap:
        return phi
    # c_r(s phi) = a s^4 + b s^2
    a = sc.rcs_var * sc.noise_ris * np.sum(np.abs(phi * ch.h_rt) ** 2) ** 2
    b = 2.0 * sc.noise_ris * np.sum(np.abs(phi) ** 2)
    if a > 0:
        s2 = (-b + math.sqrt(b * b + 4.0 * a * cap)) / (2.0 * a)
    else:
        s2 = cap / b
    log.info("initial reflection vector scaled by %.4g to respect the RIS budget", math.sqrt(s2))
    return phi * math.sqrt(s2)


def infeasibility_diagnostics(ch: ChannelSet, phi: np.ndarray, sc: Scenario,
                              opts: BcdOptions) -> dict:
    """Relax each constraint family of the first precoder SDR in turn and
    report which relaxations restore feasibility."""
    em = echo_model(ch, phi, sc)
    consts = precoder_constants(ch, phi, sc)
    full = ("bs", "ris", "sinr")
    out = {}
    for drop in full:
        fams = tuple(f for f in full if f != drop)
        try:
            res = solve_w_step(em, consts, opts.backend, opts.solver_tol, families=fams)
            out[f"without-{drop}"] = res.status
        except (ConfigurationError, RankRecoveryError) as exc:
            out[f"without-{drop}"] = f"error: {exc}"
    out["binding"] = [d for d in full if out[f"without-{d}"] == conic.OPTIMAL]
    return out


# ---------------------------------------------------------------------------
# outer loop


def _record(it, ch, w, phi, sc, g, inner, t0, w_ok, phi_ok, inner_status, unit_modulus):
    feas = check_feasibility(ch, w, phi, sc, unit_modulus)
    crb = crb_from_g(g, sc.n_samples, sc.rcs_var) if g > 0 else math.inf
    return IterationRecord(
        iteration=it, g=float(g), crb_rad2=float(crb),
        crb_db=lin_to_db(crb) if math.isfinite(crb) else math.inf,
        min_sinr_margin_db=feas.min_margin_db(), bs_power_w=feas.bs_power,
        ris_power_w=feas.ris_power, inner_iterations=inner,
        wall_s=time.perf_counter() - t0, w_accepted=w_ok, phi_accepted=phi_ok,
        inner_status=inner_status)


def _bcd(sc: Scenario, ch: ChannelSet, opts: BcdOptions, variant: str,
         unit_modulus: bool = False, phi0: np.ndarray | None = None) -> DesignResult:
    if math.isfinite(sc.p_ris) and not unit_modulus:
        c3 = static_bound_c3(ch, sc)
        if not sc.p_ris > c3:
            raise ConfigurationError(
                f"static RIS draw bound c3 = {c3:.4g} W exceeds P_RIS = {sc.p_ris:.4g} W; "
                f"largest feasible a_max is {max_feasible_amplitude(ch, sc):.4g}")
    if phi0 is None:
        psi = rcg_solve(build_init_problem(ch), opts.init_max_iter, opts.init_tol).psi
        phi0 = initial_phi(psi, sc.a_max)
    phi = np.asarray(phi0, dtype=complex)
    if not unit_modulus:
        phi = _scale_for_static_draw(ch, phi, sc)

    trace = BcdTrace()
    w = None
    g = -math.inf
    status = MAX_ITER
    diagnostics = {}
    t0 = time.perf_counter()
    for it in range(1, opts.max_outer + 1):
        # precoder step
        em = echo_model(ch, phi, sc)
        consts = precoder_constants(ch, phi, sc, sc.gamma[:ch.k] * (1.0 + opts.sinr_backoff))
        w_ok = False
        try:
            step = solve_w_step(em, consts, opts.backend, opts.solver_tol)
            cand = step.w if step.status == conic.OPTIMAL else None
        except RankRecoveryError as exc:
            log.warning("rank recovery failed at outer iteration %d: %s", it, exc)
            step, cand = None, None
        if cand is not None and check_feasibility(ch, cand, phi, sc, unit_modulus).ok:
            g_cand = g_trace(em, cand)
            if w is None or g_cand >= g_trace(em, w):
                w, w_ok = cand, True
        if w is None:
            diagnostics = {"w_status": step.status if step else "rank-recovery-failure"}
            # interior-point solvers may stop without a certificate on
            # infeasible programs, so relax families for any failure
            if step is not None:
                diagnostics.update(infeasibility_diagnostics(ch, phi, sc, opts))
            log.warning("precoder step infeasible at the first iteration: %s", diagnostics)
            return DesignResult(None, phi, math.inf, -math.inf, trace, INFEASIBLE, variant,
                                diagnostics, sc, ch)
        g_w = g_trace(em, w)

        # reflection step
        res = optimize_phi(ch, w, phi, sc, max_inner=opts.max_inner, inner_tol=opts.inner_tol,
                           lambda_safety=opts.lambda_safety, kron_cap=opts.kron_cap,
                           domination_samples=opts.domination_samples, backend=opts.backend,
                           solver_tol=opts.solver_tol, seed=it)
        cand_phi = res.phi
        if unit_modulus:
            mag = np.abs(cand_phi)
            cand_phi = np.where(mag > 0, cand_phi / np.where(mag > 0, mag, 1.0), phi)
        phi_ok = False
        if check_feasibility(ch, w, cand_phi, sc, unit_modulus).ok:
            g_phi = g_trace(echo_model(ch, cand_phi, sc), w)
            if g_phi >= g_w:
                phi, g_new, phi_ok = cand_phi, g_phi, True
        if not phi_ok:
            g_new = g_w
        rec = _record(it, ch, w, phi, sc, g_new, res.iterations, t0, w_ok, phi_ok,
                      res.status, unit_modulus)
        trace.records.append(rec)
        log.debug("outer %d: g=%.6e crb=%.3f dB inner=%d (%s)", it, g_new, rec.crb_db,
                  res.iterations, res.status)
        prev, g = g, g_new
        if math.isfinite(prev) and abs(g - prev) <= opts.tol * abs(prev):
            status = CONVERGED
            break
    crb = crb_from_g(g, sc.n_samples, sc.rcs_var) if g > 0 else math.inf
    return DesignResult(w, phi, float(crb), float(g), trace, status, variant, diagnostics,
                        sc, ch)


def run_bcd(sc: Scenario, ch: ChannelSet, opts: BcdOptions | None = None,
            phi0: np.ndarray | None = None) -> DesignResult:
    """Active-RIS ISAC design."""
    return _bcd(sc, ch, opts or BcdOptions(), "aris-isac", phi0=phi0)


def passive_scenario(sc: Scenario) -> Scenario:
    """Unit-amplitude RIS without amplification noise or RIS budget; the BS
    receives the RIS budget on top of its own."""
    return dataclasses.replace(sc, a_max=1.0, noise_ris=0.0, p_bs=sc.p_bs + sc.p_ris,
                               p_ris=math.inf)


def run_passive_baseline(sc: Scenario, ch: ChannelSet,
                         opts: BcdOptions | None = None) -> DesignResult:
    return _bcd(passive_scenario(sc), ch, opts or BcdOptions(), "pris-isac", unit_modulus=True)


def run_radar_only(sc: Scenario, ch: ChannelSet, opts: BcdOptions | None = None) -> DesignResult:
    """Active-RIS design with no communication users."""
    return _bcd(sc.replace(k_users=0), ch.without_users(), opts or BcdOptions(),
                "aris-radar-only")


def run_variant(variant: str, sc: Scenario, ch: ChannelSet,
                opts: BcdOptions | None = None) -> DesignResult:
    runners = {"aris-isac": run_bcd, "pris-isac": run_passive_baseline,
               "aris-radar-only": run_radar_only}
    if variant not in runners:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return runners[variant](sc, ch, opts)
