"""Numerical cross-checks between independent routes to the same quantity.

Each ``check_*`` function draws its own random instances from a fixed
seed and returns a :class:`CheckResult` with the worst observed error.
``arisac selftest`` runs them at reduced counts; the acceptance tests run
them at full size.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .crb import crb_theta, fim, g_phi_explicit, g_trace
from .initializer import build_init_problem, init_objective, rcg_solve
from .model import echo_model, sinr_all
from .precoder import lifted_sinr, precoder_constants, solve_w_step
from .reflector import (build_surrogates, compute_phi_coefficients, frac_constraint, neg_vfv,
                        sinr_constraint_value, sinr_phi_constants, update_psi, update_t,
                        y_value, _lift)
from .scenario import Scenario, random_channels, synthesize_channels


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    limit: float
    instances: int
    seconds: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: worst {self.worst:.3e} (limit {self.limit:.0e}) over "
                f"{self.instances} instances in {self.seconds:.2f}s {self.detail}").rstrip()


def random_instance(rng: np.random.Generator, n: int | None = None, m: int | None = None,
                    k: int | None = None, a_max: float = 4.0):
    """Unit-scale channels, a random precoder and a reflection vector inside
    the amplitude disk, with noise powers drawn over two decades."""
    n = n or int(rng.integers(2, 7))
    m = m or int(rng.integers(2, 7))
    k = int(rng.integers(1, 3)) if k is None else k
    sc = Scenario(n_antennas=n, m_elements=m, k_users=k, a_max=a_max,
                  noise_user=10 ** rng.uniform(-2, 0), noise_ris=10 ** rng.uniform(-2, 0),
                  noise_bs=10 ** rng.uniform(-2, 0), rcs_var=1.0, p_ris=1e6,
                  sinr_targets=(1.0,))
    ch = random_channels(rng, n, m, k)
    w = (rng.standard_normal((n, k + n)) + 1j * rng.standard_normal((n, k + n))) / np.sqrt(2 * n)
    phi = a_max * np.sqrt(rng.uniform(0.2, 1.0, m)) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    return sc, ch, w, phi


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def check_explicit_form(instances: int = 100, seed: int = 1) -> CheckResult:
    """g from the trace form vs the explicit quartic/fractional form in phi."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        sc, ch, w, phi = random_instance(rng)
        em = echo_model(ch, phi, sc)
        coeffs = compute_phi_coefficients(em, w, update_psi(phi, ch, sc), ch, sc)
        worst = max(worst, _rel(g_phi_explicit(coeffs, phi), g_trace(em, w)))
    return CheckResult("explicit-form equivalence", worst < 1e-8, worst, 1e-8, instances,
                       time.perf_counter() - t0)


def check_fim(instances: int = 50, seed: int = 2) -> tuple[CheckResult, CheckResult]:
    """Closed-form FIM blocks vs the stacked Gaussian FIM, and the closed-form
    dQ/dtheta vs a central difference of the explicit Q."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_fim, worst_fd = 0.0, 0.0
    for _ in range(instances):
        sc, ch, w, phi = random_instance(rng)
        alpha = complex(rng.standard_normal(), rng.standard_normal())
        n_samples = w.shape[1] + int(rng.integers(0, 4))
        em = echo_model(ch, phi, sc)
        f = fim(em, w, n_samples, abs(alpha) ** 2, alpha).matrix()
        ref = oracles.fim_vectorized(ch, w, phi, sc, alpha, n_samples, rng)
        worst_fim = max(worst_fim, float(np.linalg.norm(f - ref) / np.linalg.norm(ref)))
        fd = oracles.q_dot_fd(ch, phi)
        worst_fd = max(worst_fd, float(np.linalg.norm(em.q_dot - fd) / np.linalg.norm(fd)))
    dt = time.perf_counter() - t0
    return (CheckResult("FIM vs stacked Gaussian FIM", worst_fim < 1e-8, worst_fim, 1e-8,
                        instances, dt),
            CheckResult("dQ/dtheta vs finite difference", worst_fd < 1e-5, worst_fd, 1e-5,
                        instances, dt))


def check_crb_consistency(instances: int = 50, seed: int = 3) -> CheckResult:
    """CRB from the 3x3 FIM Schur complement times 2 L |alpha|^2 g equals 1."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        sc, ch, w, phi = random_instance(rng)
        alpha_sq = 10 ** rng.uniform(-1, 1)
        n_samples = int(rng.integers(1, 2048))
        em = echo_model(ch, phi, sc)
        crb = crb_theta(fim(em, w, n_samples, alpha_sq))
        worst = max(worst, abs(crb * 2.0 * n_samples * alpha_sq * g_trace(em, w) - 1.0))
    return CheckResult("CRB consistency", worst < 1e-9, worst, 1e-9, instances,
                       time.perf_counter() - t0)


def surrogate_errors(anchors: int = 10, points: int = 100, seed: int = 4,
                     domination_samples: int = 48) -> dict:
    """Worst tangency gap and worst domination violation of each surrogate.

    Tangency of the y_i bounds is measured on the second-order stage at any
    anchor and on the full chain at full-amplitude anchors, where the
    norm bound used by the chain is tight. The combined fractional row is
    checked for domination only: its true value at the anchor is zero by the
    choice of t, so a tangency gap there measures cancellation, not the
    bound. Errors are relative to 1 + |bounded term|.
    """
    rng = np.random.default_rng(seed)
    keys = ("objective", "sinr", "y", "neg_r", "frac")
    tan = dict.fromkeys(keys[:4], 0.0)
    dom = dict.fromkeys(keys, -np.inf)
    for idx in range(anchors):
        sc, ch, w, _ = random_instance(rng, k=2)
        a = sc.a_max
        m = ch.m
        full = idx % 2 == 0
        amp = a * np.ones(m) if full else a * np.sqrt(rng.uniform(0.2, 1.0, m))
        phi_s = amp * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
        em = echo_model(ch, phi_s, sc)
        coeffs = compute_phi_coefficients(em, w, update_psi(phi_s, ch, sc), ch, sc)
        sk = sinr_phi_constants(ch, w, sc, gamma=10 ** rng.uniform(-1, 1, ch.k))
        t1, t2 = update_t(coeffs, phi_s)
        pack = build_surrogates(coeffs, sk, t1, t2, phi_s, a, 1.0, domination_samples,
                                np.random.default_rng((seed, idx)))
        ts = (t1, t2)

        def terms(phi):
            v = _lift(phi)
            out = {"objective": (neg_vfv(coeffs, phi), pack.objective(phi))}
            out["sinr"] = [(sinr_constraint_value(sk, k, phi), pack.sinr(sk, k, phi))
                           for k in range(ch.k)]
            out["y"] = [(y_value(coeffs, i, v).real, pack.y_chain(i, phi)) for i in (1, 2)]
            out["y_stage"] = [(y_value(coeffs, i, v).real, pack.stages[i - 1].bound(v))
                              for i in (1, 2)]
            out["neg_r"] = [(-np.vdot(phi, coeffs.other(i) @ phi).real, pack.neg_r(i, phi))
                            for i in (1, 2)]
            out["frac"] = [(frac_constraint(coeffs, i, ts[i - 1], phi), pack.frac(i, phi))
                           for i in (1, 2)]
            return out

        def pairs(d, key):
            val = d[key]
            return val if isinstance(val, list) else [val]

        at = terms(phi_s)
        for key in tan:
            src = "y_stage" if key == "y" and not full else key
            for true, sur in pairs(at, src):
                tan[key] = max(tan[key], abs(sur - true) / (1.0 + abs(true)))
        test_rng = np.random.default_rng((seed, idx, 7))
        for _ in range(points):
            r = a * np.sqrt(test_rng.uniform(0.0, 1.0, m))
            phi = r * np.exp(1j * test_rng.uniform(0, 2 * np.pi, m))
            here = terms(phi)
            for key in keys:
                for true, sur in pairs(here, key):
                    dom[key] = max(dom[key], (true - sur) / (1.0 + abs(true)))
    return {"tangency": tan, "domination": dom}


def check_surrogates(anchors: int = 10, points: int = 100, seed: int = 4) -> CheckResult:
    t0 = time.perf_counter()
    err = surrogate_errors(anchors, points, seed)
    worst_t = max(err["tangency"].values())
    worst_d = max(err["domination"].values())
    worst = max(worst_t, worst_d)
    detail = ("tangency " + ", ".join(f"{k}={v:.1e}" for k, v in err["tangency"].items())
              + "; domination " + ", ".join(f"{k}={v:.1e}" for k, v in err["domination"].items()))
    return CheckResult("MM surrogate soundness", worst <= 1e-8, worst, 1e-8, anchors,
                       time.perf_counter() - t0, detail)


def desk_scenario(seed: int, **changes) -> Scenario:
    base = dict(n_antennas=8, m_elements=6, k_users=2, seed=seed)
    base.update(changes)
    return Scenario(**base)


def check_recovery(instances: int = 10, seed0: int = 0) -> CheckResult:
    """Rank-one recovery keeps the lifted SINRs, powers and g."""
    from .initializer import initial_phi
    t0 = time.perf_counter()
    worst_rel, worst_g = 0.0, 0.0
    for s in range(seed0, seed0 + instances):
        sc = desk_scenario(s)
        ch = synthesize_channels(sc)
        phi = initial_phi(rcg_solve(build_init_problem(ch)).psi, sc.a_max)
        em = echo_model(ch, phi, sc)
        consts = precoder_constants(ch, phi, sc)
        step = solve_w_step(em, consts)
        lifted, w = step.lifted, step.w
        rel = [np.max(np.abs(sinr_all(ch, w, phi, sc) / lifted_sinr(consts, lifted) - 1.0)),
               _rel(float(np.sum(np.abs(w) ** 2)), float(np.trace(lifted.r_w).real)),
               _rel(float(np.real(np.trace(w.conj().T @ consts.e_mat @ w))),
                    float(np.real(np.trace(consts.e_mat @ lifted.r_w))))]
        worst_rel = max(worst_rel, *rel)
        worst_g = max(worst_g, _rel(g_trace(em, w), g_from_lifted(em, lifted.r_w)))
    passed = worst_rel < 1e-6 and worst_g < 1e-8
    return CheckResult("SDR recovery", passed, max(worst_rel, worst_g), 1e-6, instances,
                       time.perf_counter() - t0,
                       f"sinr/power {worst_rel:.1e} (limit 1e-6), g {worst_g:.1e} (limit 1e-8)")


def g_from_lifted(em, r_w: np.ndarray) -> float:
    from .crb import g_from_cov
    return g_from_cov(em, r_w)


def check_rcg(instances: int = 10, samples: int = 1000, seed: int = 5) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_mod, worst_step, beaten = 0.0, 0.0, 0
    for _ in range(instances):
        ch = random_channels(rng, int(rng.integers(2, 9)), 6, int(rng.integers(0, 3)))
        p = build_init_problem(ch)
        res = rcg_solve(p)
        worst_mod = max(worst_mod, float(np.max(np.abs(np.abs(res.psi) - 1.0))))
        hist = np.array(res.history)
        worst_step = max(worst_step, float(np.max(np.diff(hist), initial=0.0)))
        rand = np.exp(1j * rng.uniform(0, 2 * np.pi, (samples, ch.m)))
        best = min(init_objective(p, x) for x in rand)
        beaten += int(best < res.objective)
    passed = worst_mod <= 1e-12 and worst_step <= 1e-10 and beaten == 0
    return CheckResult("RCG initializer", passed, worst_mod, 1e-12, instances,
                       time.perf_counter() - t0,
                       f"max ascent step {worst_step:.1e}, instances beaten by sampling {beaten}")


def run_selftest(emit=print, scale: float = 0.2) -> bool:
    """Reduced-size run of every oracle check."""
    def n(x):
        return max(2, int(round(x * scale)))

    results = [check_explicit_form(n(100)), *check_fim(n(50)), check_crb_consistency(n(50)),
               check_surrogates(n(10), n(100)), check_recovery(n(10)), check_rcg(n(10))]
    for r in results:
        emit(r.line())
    return all(r.passed for r in results)


__all__ = ["CheckResult", "check_crb_consistency", "check_explicit_form", "check_fim",
           "check_rcg", "check_recovery", "check_surrogates", "run_selftest"]
