"""Run configuration: a TOML file with one flat section per concern.

Unknown sections or keys, wrong types and violated constant relations are
reported with the offending ``section.key`` (and the line number when the
TOML itself does not parse).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .lattice import ProblemParams, bracket
from .outputs import config_hash
from .p_solver import ScaleSchedule

MODES = ("solve", "scan", "separation", "diophantine", "coupling", "audit")


@dataclass(frozen=True)
class SolveSection:
    p0: float = 1.5
    p_m: tuple = ()
    damping: float = 1.0
    tol: float = 1e-12
    max_outer: int = 50
    N_audit: int = 16
    gevrey_c: float = 0.04
    certificate_N: int = 4
    far_cluster_limit: int = 50


@dataclass(frozen=True)
class ScanSection:
    eps_grid: tuple = (1e-3, 5e-4, 1e-4)
    samples: int = 64
    p0_min: float = 1.0
    p0_max: float = 2.0
    random: bool = False


@dataclass(frozen=True)
class SeparationSection:
    d: int = 2
    N: int = 256
    lam: float | None = None
    B: float | None = None  # singular threshold; default 2 N^alpha
    chain_B: float = 2.0
    chain_B_prime: int = 2
    lambda_samples: int = 20
    lambda_min: float = 1.2
    lambda_max: float = 2.0
    chain_exponent: float | None = None
    search_budget: int = 1_000_000
    gdc_degree: int = 4
    gdc_coeff_bound: int = 20
    gdc_gamma: float = 1e-3
    gdc_tau: float = 4.0


@dataclass(frozen=True)
class DiophantineSection:
    rho_gamma: float = 0.01
    n_max: int = 10_000
    b_tilde: int = 1
    degree: int = 2
    gamma: float = 1e-2
    tau: float = 1.0
    coeff_bound: int = 10
    gammas: tuple = (1e-2, 1e-3, 1e-4)
    samples: int = 100_000
    interval: tuple = (1.0, 2.0)
    lambda_degree: int = 4
    lambda_coeff_bound: int = 20
    lambda_gamma: float = 1e-3
    lambda_tau: float = 4.0
    sublevel_eps: tuple = (1e-2, 1e-3, 1e-4)
    sublevel_powers: tuple = (1, 2, 3, 4)


@dataclass(frozen=True)
class CouplingSection:
    lemma: str = "both"
    instances: int = 100
    c1_K: int = 2
    c1_B: float = 1.01
    c1_c: float = 0.05
    c1_C_prime: float = 2.6
    c1_C: float = 3.0
    c1_side: int = 1000
    c1_d: int = 1
    c2_M: float = 400.0
    c2_eps1: float = 0.09
    c2_eps2: float = 0.05
    c2_eps3: float = 0.02
    c2_eps: float = 0.01
    c2_rho: float = 1.0
    c2_c: float = 0.3
    c2_C: float = 1.0
    c2_clusters: int = 2
    c2_dims: tuple = (1, 2)


@dataclass(frozen=True)
class Tolerances:
    residual_sup: float = 1e-10
    contraction_power: float = 1.5
    slack: float = 0.9
    inverse_agreement: float = 1e-12
    neumann_gamma: float = 0.01
    slope_margin: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemParams
    schedule: ScaleSchedule
    mode: str = "solve"
    seed: int = 0
    out: str = "out"
    workers: int = 1
    solve: SolveSection = SolveSection()
    scan: ScanSection = ScanSection()
    separation: SeparationSection = SeparationSection()
    diophantine: DiophantineSection = DiophantineSection()
    coupling: CouplingSection = CouplingSection()
    tolerances: Tolerances = Tolerances()
    warnings: tuple = ()
    source_hash: str = ""

    def with_mode(self, mode: str) -> "RunConfig":
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        return dataclasses.replace(self, mode=mode)


_SECTIONS = {
    "solve": SolveSection,
    "scan": ScanSection,
    "separation": SeparationSection,
    "diophantine": DiophantineSection,
    "coupling": CouplingSection,
    "tolerances": Tolerances,
}

_PROBLEM_KEYS = {"d": int, "m0": list, "rho": float, "alpha": float, "eps": float}
_SCHEDULE_KEYS = {f.name: f.type for f in dataclasses.fields(ScaleSchedule)}
_RUN_KEYS = {"seed": int, "out": str, "workers": int}


def _coerce(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool) or default is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}", field=where)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array, got {value!r}", field=where)
        return tuple(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}", field=where)
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}", field=where)
        return float(value) if not isinstance(value, int) or isinstance(default, float) else value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}", field=where)
        return value
    return value


def _build(section: str, cls, data: dict):
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown key (known: {sorted(names)})", field=f"{section}.{key}")
        kwargs[key] = _coerce(section, key, value, getattr(defaults, key))
    return cls(**kwargs)


def _schedule(data: dict):
    defaults = ScaleSchedule()
    kw = {}
    override = False
    for key, value in data.items():
        if key == "allow_override":
            if not isinstance(value, bool):
                raise ConfigError("schedule.allow_override: expected a boolean", field="schedule.allow_override")
            override = value
            continue
        if key == "enforce" or key not in _SCHEDULE_KEYS:
            raise ConfigError(f"schedule.{key}: unknown key", field=f"schedule.{key}")
        kw[key] = _coerce("schedule", key, value, getattr(defaults, key) if key != "n_cap" else 0)
    try:
        sched = ScaleSchedule(enforce=False, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schedule: {exc}", field="schedule") from None
    problems = sched.violations()
    if problems and not override:
        raise ConfigError("schedule: " + "; ".join(problems) + " (set allow_override = true to run anyway)",
                          field="schedule")
    return sched, tuple(f"override: {p}" for p in problems)


def _problem(data: dict) -> ProblemParams:
    for key in data:
        if key not in _PROBLEM_KEYS:
            raise ConfigError(f"problem.{key}: unknown key", field=f"problem.{key}")
    missing = [k for k in _PROBLEM_KEYS if k not in data]
    if missing:
        raise ConfigError(f"problem: missing keys {missing}", field=f"problem.{missing[0]}")
    m0 = data["m0"]
    if not isinstance(m0, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in m0):
        raise ConfigError("problem.m0: expected an array of integers", field="problem.m0")
    vals = {}
    for key in ("rho", "alpha", "eps"):
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"problem.{key}: expected a number, got {v!r}", field=f"problem.{key}")
        vals[key] = float(v)
    if vals["rho"] <= 0:
        raise ConfigError("problem.rho: must be > 0", field="problem.rho")
    for key in ("alpha", "eps"):
        if vals[key] < 0:
            raise ConfigError(f"problem.{key}: must be >= 0", field=f"problem.{key}")
    d = data["d"]
    if isinstance(d, bool) or not isinstance(d, int):
        raise ConfigError("problem.d: expected an integer", field="problem.d")
    try:
        return ProblemParams(d, tuple(m0), vals["rho"], vals["alpha"], vals["eps"])
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}", field="problem") from None


def parse_config(text: str, mode: str | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}", field="<syntax>") from None
    known = {"problem", "schedule", "run"} | set(_SECTIONS)
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown section (known: {sorted(known)})", field=key)
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a [section]", field=key)
    if "problem" not in raw:
        raise ConfigError("problem: section is required", field="problem")
    problem = _problem(raw["problem"])
    schedule, warns = _schedule(raw.get("schedule", {}))
    run = raw.get("run", {})
    for key in run:
        if key not in _RUN_KEYS:
            raise ConfigError(f"run.{key}: unknown key", field=f"run.{key}")
    kwargs = {name: _build(name, cls, raw.get(name, {})) for name, cls in _SECTIONS.items()}
    if schedule.M < 100 * bracket(problem.m0):
        warns += (f"desk scale: M = {schedule.M} < 100 <m0> = {100 * bracket(problem.m0):.4g}",)
    cfg = RunConfig(
        problem=problem,
        schedule=schedule,
        mode=mode or "solve",
        seed=_coerce("run", "seed", run.get("seed", 0), 0),
        out=_coerce("run", "out", run.get("out", "out"), "out"),
        workers=_coerce("run", "workers", run.get("workers", 1), 1),
        warnings=warns,
        source_hash=config_hash(text),
        **kwargs,
    )
    _validate(cfg)
    if mode is not None:
        cfg = cfg.with_mode(mode)
    return cfg


def _validate(cfg: RunConfig) -> None:
    sv = cfg.solve
    if not 1.0 <= sv.p0 <= 2.0:
        raise ConfigError("solve.p0: must lie in [1, 2]", field="solve.p0")
    if sv.N_audit < 1:
        raise ConfigError("solve.N_audit: must be >= 1", field="solve.N_audit")
    if not 0 < sv.gevrey_c < 1:
        raise ConfigError("solve.gevrey_c: must lie in (0, 1)", field="solve.gevrey_c")
    sc = cfg.scan
    if sc.samples < 1:
        raise ConfigError("scan.samples: must be >= 1", field="scan.samples")
    if not all(isinstance(e, (int, float)) and e >= 0 for e in sc.eps_grid):
        raise ConfigError("scan.eps_grid: entries must be numbers >= 0", field="scan.eps_grid")
    if not 1.0 <= sc.p0_min <= sc.p0_max <= 2.0:
        raise ConfigError("scan.p0_min/p0_max: need 1 <= p0_min <= p0_max <= 2", field="scan.p0_min")
    dio = cfg.diophantine
    if dio.degree > 10 * cfg.problem.d or dio.lambda_degree > 10 * cfg.problem.d:
        raise ConfigError("diophantine.degree: must be <= 10 d", field="diophantine.degree")
    if cfg.coupling.lemma not in ("C1", "C2", "both"):
        raise ConfigError("coupling.lemma: expected 'C1', 'C2' or 'both'", field="coupling.lemma")
    if cfg.workers < 1:
        raise ConfigError("run.workers: must be >= 1", field="run.workers")
    sep = cfg.separation
    if sep.N < 1 or sep.chain_B_prime < 1:
        raise ConfigError("separation.N / chain_B_prime: must be >= 1", field="separation.N")


def load_config(path, mode: str | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", field="<file>") from None
    return parse_config(text, mode)


def _line_of(text: str, field_name: str):
    """Best-effort line number of ``section.key`` in the TOML text."""
    if not field_name or field_name.startswith("<"):
        return None
    section, _, key = field_name.partition(".")
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if not key and current == section:
                return no
        elif current == section and key and s.split("=")[0].strip() == key:
            return no
    return None


def describe_error(exc: ConfigError, text: str | None) -> str:
    msg = str(exc)
    fld = exc.info.get("field")
    if text is not None and fld:
        line = _line_of(text, fld)
        if line is not None:
            return f"config error (line {line}, {fld}): {msg}"
    return f"config error ({fld}): {msg}" if fld else f"config error: {msg}"
