"""INI configuration files for scenarios, solver options and sweeps.

Quantities may carry a unit suffix: ``dBm``, ``W`` and ``mW`` for powers,
``dB`` for ratios. A bare number is taken in linear units (watts for
powers). Example::

    [scenario]
    n_antennas = 8
    p_bs = 23 dBm
    gamma = 16 dB
    ris = 0, 50

    [solver]
    max_outer = 30

    [sweep]
    param = p_bs
    values = 20, 23, 26
    seeds = 0, 1, 2
    variants = aris-isac, pris-isac
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field

from .driver import VARIANTS, BcdOptions
from .scenario import (Geometry, Scenario, db_to_lin, dbm_to_watt, path_loss,
                       synthesize_channels)

SWEEP_PARAMS = ("p_bs", "gamma", "m_elements", "n_antennas", "k_users", "ris_x_position")

_POWER_KEYS = ("p_bs", "p_ris", "noise_user", "noise_ris", "noise_bs")
_RATIO_KEYS = ("rcs_var", "rician_k", "pathloss_ref")
_INT_KEYS = ("n_antennas", "m_elements", "k_users", "n_samples", "seed")
_FLOAT_KEYS = ("a_max", "ref_distance")
_POINT_KEYS = ("bs", "ris", "target", "user_center")


class ConfigError(ValueError):
    """Every problem found in a configuration file, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


def parse_power(text: str) -> float:
    """Watts from ``'23 dBm'``, ``'200 mW'``, ``'0.2 W'`` or ``'0.2'``."""
    s = text.strip()
    low = s.lower()
    if low.endswith("dbm"):
        return dbm_to_watt(float(s[:-3]))
    if low.endswith("mw"):
        return float(s[:-2]) * 1e-3
    if low.endswith("w"):
        return float(s[:-1])
    if low in ("inf", "infinity"):
        return math.inf
    return float(s)


def parse_ratio(text: str) -> float:
    """Linear ratio from ``'16 dB'`` or ``'39.8'``."""
    s = text.strip()
    if s.lower().endswith("db"):
        return db_to_lin(float(s[:-2]))
    return float(s)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _point(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("expected 'x, y'")
    return (vals[0], vals[1])


def _read(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    return cp


def scenario_from_section(sec, problems: list[str], where: str = "scenario") -> Scenario:
    kw: dict = {}
    geo: dict = {}
    for key, raw in sec.items():
        ctx = f"[{where}] {key} = {raw!r}"
        try:
            if key in _POWER_KEYS:
                kw[key] = parse_power(raw)
            elif key in _RATIO_KEYS:
                kw[key] = parse_ratio(raw)
            elif key in _INT_KEYS:
                kw[key] = int(raw)
            elif key in _FLOAT_KEYS:
                kw[key] = float(raw)
            elif key in ("gamma", "sinr_targets"):
                kw["sinr_targets"] = tuple(parse_ratio(x) for x in raw.split(",") if x.strip())
            elif key == "pathloss_exponents":
                kw[key] = tuple(_floats(raw))
            elif key in _POINT_KEYS:
                geo[key] = _point(raw)
            elif key == "ris_x_position":
                geo["ris"] = (float(raw), Geometry().ris[1])
            elif key == "user_radius":
                geo[key] = float(raw)
            else:
                problems.append(f"{ctx}: unknown key")
        except ValueError as exc:
            problems.append(f"{ctx}: {exc}")
    if geo:
        kw["geometry"] = Geometry(**geo)
    try:
        return Scenario(**kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"[{where}]: {exc}")
        return Scenario()


def options_from_section(sec, problems: list[str]) -> BcdOptions:
    kw = {}
    types = {f.name: f.type for f in dataclasses.fields(BcdOptions)}
    for key, raw in sec.items():
        ctx = f"[solver] {key} = {raw!r}"
        if key not in types:
            problems.append(f"{ctx}: unknown key")
            continue
        try:
            if key == "backend":
                kw[key] = raw.strip() or None
            elif "int" in str(types[key]):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        except ValueError as exc:
            problems.append(f"{ctx}: {exc}")
    return BcdOptions(**kw)


def static_draw_warnings(sc: Scenario) -> list[str]:
    """Warn when the RIS budget cannot cover the precoder-independent draw
    c_r of a full-amplitude reflection vector (echoed noise plus the two
    amplification-noise passes)."""
    geo = sc.geometry
    d = math.hypot(geo.ris[0] - geo.target[0], geo.ris[1] - geo.target[1])
    alpha_sq = path_loss(d, sc.pathloss_exponents[3], sc.pathloss_ref, sc.ref_distance)
    m, a = sc.m_elements, sc.a_max
    c_r = (sc.rcs_var * sc.noise_ris * (alpha_sq * m * a * a) ** 2
           + 2.0 * sc.noise_ris * m * a * a)
    if math.isfinite(sc.p_ris) and not sc.p_ris > c_r:
        return [f"warning: p_ris = {sc.p_ris:.4g} W does not exceed the static RIS draw "
                f"c_r = {c_r:.4g} W at a_max = {a:g}; the initial reflection vector "
                f"will be scaled down"]
    return []


@dataclass
class RunConfig:
    scenario: Scenario
    options: BcdOptions
    warnings: list = field(default_factory=list)


def load_config(path: str | None) -> RunConfig:
    """Scenario and solver options with defaults applied. Raises
    ConfigError listing every problem."""
    problems: list[str] = []
    if path is None:
        sc, opts = Scenario(), BcdOptions()
    else:
        cp = _read(path)
        for name in cp.sections():
            if name not in ("scenario", "solver", "sweep"):
                problems.append(f"{path}: unknown section [{name}]")
        sc = scenario_from_section(cp["scenario"] if cp.has_section("scenario") else {},
                                   problems)
        opts = options_from_section(cp["solver"] if cp.has_section("solver") else {},
                                    problems)
    problems.extend(sc.violations())
    if problems:
        raise ConfigError(problems)
    return RunConfig(sc, opts, static_draw_warnings(sc))


def validate_config(path: str | None) -> Scenario:
    return load_config(path).scenario


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    seeds: tuple
    variants: tuple = ("aris-isac",)
    out: str = "out"

    def problems(self) -> list[str]:
        errs = []
        if self.param not in SWEEP_PARAMS:
            errs.append(f"sweep param {self.param!r} not one of {', '.join(SWEEP_PARAMS)}")
        if not self.values:
            errs.append("sweep needs at least one value")
        if not self.seeds:
            errs.append("sweep needs at least one seed")
        for v in self.variants:
            if v not in VARIANTS:
                errs.append(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")
        if not self.variants:
            errs.append("sweep needs at least one variant")
        return errs


def parse_sweep_value(param: str, text: str) -> float | int:
    """Sweep values: p_bs in dBm and gamma in dB unless a suffix says otherwise."""
    s = str(text).strip()
    if param == "p_bs":
        return parse_power(s) if s[-1:].isalpha() else dbm_to_watt(float(s))
    if param == "gamma":
        return parse_ratio(s) if s[-1:].isalpha() else db_to_lin(float(s))
    if param in ("m_elements", "n_antennas", "k_users"):
        return int(s)
    return float(s)


def apply_sweep_value(sc: Scenario, param: str, value) -> Scenario:
    if param == "p_bs":
        return sc.replace(p_bs=float(value))
    if param == "gamma":
        return sc.replace(sinr_targets=(float(value),))
    if param in ("m_elements", "n_antennas", "k_users"):
        return sc.replace(**{param: int(value)})
    if param == "ris_x_position":
        geo = dataclasses.replace(sc.geometry, ris=(float(value), sc.geometry.ris[1]))
        return sc.replace(geometry=geo)
    raise ValueError(f"unknown sweep parameter {param!r}")


def parse_seeds(text: str) -> tuple[int, ...]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def parse_variants(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def load_sweep(path: str, out: str = "out") -> tuple[SweepSpec, list[str], RunConfig]:
    """Sweep spec plus the raw value strings as written in the file."""
    cp = _read(path)
    problems: list[str] = []
    if not cp.has_section("sweep"):
        raise ConfigError([f"{path}: missing [sweep] section"])
    sec = cp["sweep"]
    param = sec.get("param", "").strip()
    raw_values = [x.strip() for x in sec.get("values", "").split(",") if x.strip()]
    values = []
    for raw in raw_values:
        try:
            values.append(parse_sweep_value(param, raw))
        except (ValueError, IndexError) as exc:
            problems.append(f"[sweep] values: {raw!r}: {exc}")
    try:
        seeds = parse_seeds(sec.get("seeds", "0"))
    except ValueError as exc:
        problems.append(f"[sweep] seeds: {exc}")
        seeds = ()
    spec = SweepSpec(param, tuple(values), seeds,
                     parse_variants(sec.get("variants", "aris-isac")), out)
    for key in sec:
        if key not in ("param", "values", "seeds", "variants"):
            problems.append(f"[sweep] {key}: unknown key")
    problems.extend(spec.problems())
    try:
        base = load_config(path)
    except ConfigError as exc:
        problems.extend(exc.problems)
        base = None
    if problems:
        raise ConfigError(problems)
    return spec, raw_values, base
