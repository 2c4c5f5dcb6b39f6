"""Experiment configuration: a small line-oriented ``key = value`` format.

Grammar::

    file     := line*
    line     := blank | comment | section | pair
    comment  := ('#' | ';') text
    section  := '[' name ']'
    pair     := key '=' value [comment]
    value    := item (',' item)*
    item     := number | fraction | bool | word

Numbers accept fractions such as ``1/400``.  Booleans are ``true``/``false``
(also ``yes``/``no``, ``on``/``off``).  Pairs before the first section header
belong to ``[run]``.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .game_core import TaskDynamics, solve_equilibrium
from .meanfield import DisturbanceKind, DisturbanceModel
from .protocols import LearningRule, RuleKind
from .rate_controller import ControllerConfig

MODES = ("meanfield", "finite", "sweep", "passivity-report", "selftest")

_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")
_PAIR = re.compile(r"^([A-Za-z_][\w.-]*)\s*=\s*(.*)$")
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}

CONFIG_DIR = Path(__file__).parent / "configs"


def parse_text(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    """Split config text into ``{section: {key: (raw value, line number)}}``."""
    sections, errors = _parse(text)
    if errors:
        raise ConfigError(errors)
    return sections


def _parse(text: str):
    sections: dict[str, dict[str, tuple[str, int]]] = {"run": {}}
    current = "run"
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = re.split(r"\s[#;]", raw, maxsplit=1)[0].strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            sections.setdefault(current, {})
            continue
        m = _PAIR.match(line)
        if not m:
            errors.append(f"line {lineno}: expected 'key = value' or '[section]', got {raw.strip()!r}")
            continue
        key, value = m.group(1).lower(), m.group(2).strip()
        if key in sections[current]:
            errors.append(f"line {lineno}: duplicate key '{current}.{key}'")
            continue
        if not value:
            errors.append(f"line {lineno}: empty value for '{current}.{key}'")
            continue
        sections[current][key] = (value, lineno)
    return sections, errors


def _number(s: str) -> float:
    s = s.strip()
    try:
        return float(Fraction(s)) if "/" in s else float(s)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {s!r}") from None


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_number(v) for v in s.split(","))


def _int(s: str) -> int:
    v = _number(s)
    if v != int(v):
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(_int(v) for v in s.split(","))


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s: str) -> str:
    return s.strip()


def _vector_or_keyword(s: str):
    return s.strip().lower() if s.strip().lower() == "equilibrium" else _floats(s)


# section -> key -> (converter, required)
SCHEMA = {
    "run": {
        "mode": (_str, True), "label": (_str, False), "seed": (_int, False), "t": (_number, False),
        "h": (_number, False), "output_every": (_number, False), "debug_checks": (_bool, False),
        "plots": (_bool, False), "out": (_str, False),
    },
    "dynamics": {
        "n": (_int, True), "r": (_floats, True), "alpha": (_floats, True), "beta": (_floats, True),
        "w": (_floats, True), "q_max": (_number, True),
    },
    "rule": {"kind": (_str, False), "varrho": (_number, True)},
    "population": {
        "n_agents": (_int, False), "p_edge": (_number, False), "leader_fraction": (_number, False),
        "self_inclusive": (_bool, False), "comm_period": (_number, False),
    },
    "initial": {"q0": (_vector_or_keyword, True), "x0": (_vector_or_keyword, True), "q_hat0": (_floats, False)},
    "rate": {"lambda": (_floats, False)},
    "controller": {
        "enabled": (_bool, False), "gamma": (_number, False), "tau": (_number, False),
        "epsilon": (_number, False), "lambda0": (_number, False), "trigger_source": (_str, False),
    },
    "disturbance": {"kind": (_str, False), "amplitude": (_number, False), "omega": (_number, False),
                    "decay_time": (_number, False)},
    "sweep": {
        "parameter": (_str, False), "values": (_floats, False), "seeds": (_ints, False),
        "engine": (_str, False), "horizon_scale": (_number, False), "workers": (_int, False),
    },
    "passivity": {"samples": (_int, False)},
}

SWEEP_PARAMETERS = ("lambda", "gamma", "tau", "epsilon", "varrho", "leader_fraction", "p_edge")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "lambda"
    values: tuple[float, ...] = ()
    seeds: tuple[int, ...] = ()
    engine: str = "meanfield"
    horizon_scale: float | None = None
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    dyn: TaskDynamics
    rule: LearningRule
    label: str = "run"
    seed: int = 0
    T: float = 1000.0
    h: float = 0.01
    output_every: float = 0.5
    n_agents: int = 3000
    p_edge: float = 0.1
    leader_fraction: float = 0.1
    self_inclusive: bool = False
    comm_period: float = 1.0
    q0: object = (100.0, 200.0, 300.0)
    x0: object = (1 / 3, 1 / 3, 1 / 3)
    q_hat0: tuple = ()
    lambdas: tuple[float, ...] = (1.0,)
    controller: ControllerConfig | None = None
    trigger_source: str = "oracle"
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    passivity_samples: int = 1000
    debug_checks: bool = False
    plots: bool = True
    out: str | None = None
    source_text: str = field(default="", compare=False)
    source_path: str | None = field(default=None, compare=False)

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        """``(q0, x0)`` with the ``equilibrium`` keyword resolved."""
        q0, x0 = self.q0, self.x0
        if q0 == "equilibrium" or x0 == "equilibrium":
            eq = solve_equilibrium(self.dyn)
            if q0 == "equilibrium":
                q0 = eq.q
            if x0 == "equilibrium":
                x0 = eq.x_star
        return np.asarray(q0, dtype=float), np.asarray(x0, dtype=float)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _convert(sections, errors):
    values: dict[str, dict] = {}
    for sec, pairs in sections.items():
        if sec not in SCHEMA:
            first = min((ln for _, ln in pairs.values()), default=0)
            errors.append(f"line {first}: unknown section [{sec}]")
            continue
        schema = SCHEMA[sec]
        out = values.setdefault(sec, {})
        for key, (raw, lineno) in pairs.items():
            if key not in schema:
                errors.append(f"line {lineno}: unknown key '{sec}.{key}'")
                continue
            try:
                out[key] = schema[key][0](raw)
            except ValueError as exc:
                errors.append(f"line {lineno}: {sec}.{key}: {exc}")
    for sec, schema in SCHEMA.items():
        for key, (_, required) in schema.items():
            if required and key not in values.get(sec, {}):
                if sec in ("dynamics", "rule", "initial") and values.get("run", {}).get("mode") == "selftest":
                    continue
                errors.append(f"missing required key '{sec}.{key}'")
    return values


def _check_vector(name, vec, n, errors, positive=False, nonneg=False):
    if vec is None or isinstance(vec, str):
        return
    if len(vec) not in (1, n):
        errors.append(f"{name}: expected 1 or {n} values, got {len(vec)}")
    if positive and any(v <= 0 for v in vec):
        errors.append(f"{name}: values must be positive")
    if nonneg and any(v < 0 for v in vec):
        errors.append(f"{name}: values must be nonnegative")


def max_switch_mass(varrho: float, p) -> float:
    """Largest total switch probability ``varrho * sum_i [p_i - p_j]_+`` over ``j``."""
    p = np.asarray(p, dtype=float)
    return float(varrho * np.maximum(p[None, :] - p[:, None], 0.0).sum(axis=1).max())


def validate(values: dict, errors: list) -> dict:
    """Cross-field checks; appends to ``errors`` and returns resolved settings."""
    run = values.get("run", {})
    mode = run.get("mode")
    if mode is not None and mode not in MODES:
        errors.append(f"run.mode: must be one of {', '.join(MODES)}, got {mode!r}")
    dynv = values.get("dynamics", {})
    n = dynv.get("n", 3)
    if n < 2:
        errors.append("dynamics.n: need at least 2 tasks")
    for key in ("r", "alpha", "beta", "w"):
        _check_vector(f"dynamics.{key}", dynv.get(key), n, errors, positive=True)
    if "q_max" in dynv and dynv["q_max"] <= 0:
        errors.append("dynamics.q_max: must be positive")

    rule = values.get("rule", {})
    if rule.get("kind", "smith").lower() != "smith":
        errors.append(f"rule.kind: only 'smith' is supported, got {rule.get('kind')!r}")
    varrho = rule.get("varrho")
    if varrho is not None and varrho <= 0:
        errors.append("rule.varrho: must be positive")

    init = values.get("initial", {})
    q0, x0 = init.get("q0"), init.get("x0")
    _check_vector("initial.q0", q0, n, errors, nonneg=True)
    _check_vector("initial.x0", x0, n, errors, nonneg=True)
    _check_vector("initial.q_hat0", init.get("q_hat0"), n, errors, nonneg=True)
    if isinstance(x0, tuple) and len(x0) == n and abs(sum(x0) - 1.0) > 1e-9:
        errors.append(f"initial.x0: must sum to 1, sums to {sum(x0)!r}")
    q_max = dynv.get("q_max")
    if isinstance(q0, tuple) and q_max is not None and any(v > q_max for v in q0):
        errors.append("initial.q0: exceeds dynamics.q_max")
    if varrho is not None and varrho > 0:
        for name, vec in (("initial.q0", q0), ("initial.q_hat0", init.get("q_hat0"))):
            if isinstance(vec, tuple) and len(vec) == n:
                mass = max_switch_mass(varrho, vec)
                if mass > 1.0 + 1e-12:
                    errors.append(
                        f"rule.varrho: switch probabilities at {name} sum to {mass:.4g} > 1; "
                        f"need varrho * sum_i [p_i - p_j]_+ <= 1 (sub-stochasticity)")

    for key in ("t", "h", "output_every"):
        if key in run and run[key] <= 0 and not (key == "t" and run[key] == 0):
            errors.append(f"run.{key}: must be positive")

    pop = values.get("population", {})
    if "n_agents" in pop and pop["n_agents"] < 1:
        errors.append("population.n_agents: must be >= 1")
    if "p_edge" in pop and not 0 < pop["p_edge"] <= 1:
        errors.append("population.p_edge: must lie in (0, 1]")
    if "leader_fraction" in pop and not 0 < pop["leader_fraction"] <= 1:
        errors.append("population.leader_fraction: must lie in (0, 1]")

    lam = values.get("rate", {}).get("lambda")
    if lam is not None and any(v <= 0 for v in lam):
        errors.append("rate.lambda: rates must be positive")

    ctrl = values.get("controller", {})
    enabled = ctrl.get("enabled", bool(ctrl))
    if enabled:
        for key in ("gamma", "tau"):
            if key not in ctrl:
                errors.append(f"missing required key 'controller.{key}'")
        if "gamma" in ctrl and not 0 < ctrl["gamma"] < 1:
            errors.append("controller.gamma: must lie strictly inside (0, 1)")
        for key in ("tau", "epsilon", "lambda0"):
            if key in ctrl and ctrl[key] <= 0:
                errors.append(f"controller.{key}: must be positive")
        if ctrl.get("trigger_source", "oracle") not in ("oracle", "leader"):
            errors.append("controller.trigger_source: must be 'oracle' or 'leader'")
        engine = values.get("sweep", {}).get("engine", "meanfield") if mode == "sweep" else mode
        if engine == "meanfield":
            errors.append("controller: the rate controller runs only with the finite engine")

    dist = values.get("disturbance", {})
    if "kind" in dist and dist["kind"] not in {k.value for k in DisturbanceKind} - {"table"}:
        errors.append(f"disturbance.kind: unsupported kind {dist['kind']!r}")
    if dist.get("amplitude", 0.0) < 0:
        errors.append("disturbance.amplitude: must be nonnegative")

    sweep = values.get("sweep", {})
    if mode == "sweep":
        if not sweep.get("values"):
            errors.append("sweep.values: grid must be nonempty")
        if not sweep.get("seeds"):
            errors.append("sweep.seeds: seed list must be nonempty")
        if sweep.get("parameter", "lambda") not in SWEEP_PARAMETERS:
            errors.append(f"sweep.parameter: must be one of {', '.join(SWEEP_PARAMETERS)}")
        if sweep.get("engine", "meanfield") not in ("meanfield", "finite"):
            errors.append("sweep.engine: must be 'meanfield' or 'finite'")
    if values.get("passivity", {}).get("samples", 1) < 1:
        errors.append("passivity.samples: must be >= 1")
    return values


def build(values: dict, text: str, path: str | None) -> ExperimentConfig:
    run = values.get("run", {})
    dynv = values.get("dynamics", {})
    mode = run.get("mode", "meanfield")
    if dynv:
        dyn = TaskDynamics(n=dynv["n"], R=dynv["r"] if len(dynv["r"]) > 1 else dynv["r"][0],
                           alpha=dynv["alpha"] if len(dynv["alpha"]) > 1 else dynv["alpha"][0],
                           beta=dynv["beta"] if len(dynv["beta"]) > 1 else dynv["beta"][0],
                           w=dynv["w"] if len(dynv["w"]) > 1 else dynv["w"][0], q_max=dynv["q_max"])
    else:
        from .game_core import reference_dynamics
        dyn = reference_dynamics()
    n = dyn.n
    rulev = values.get("rule", {})
    rule = LearningRule(RuleKind.SMITH, rulev.get("varrho", 1 / 400))

    def vec(v, default):
        if v is None:
            return default
        if isinstance(v, str):
            return v
        return tuple(v) * n if len(v) == 1 else tuple(v)

    init = values.get("initial", {})
    ctrl = values.get("controller", {})
    controller = None
    if ctrl.get("enabled", bool(ctrl)):
        controller = ControllerConfig(ctrl["gamma"], ctrl["tau"], ctrl.get("epsilon", 0.01), ctrl.get("lambda0", 1.0))
    dist = values.get("disturbance", {})
    disturbance = DisturbanceModel(
        DisturbanceKind(dist.get("kind", "none")), dist.get("amplitude", 0.0),
        dist.get("omega", 0.5), dist.get("decay_time", 50.0))
    sw = values.get("sweep", {})
    sweep = SweepSpec(sw.get("parameter", "lambda"), tuple(sw.get("values", ())), tuple(sw.get("seeds", ())),
                      sw.get("engine", "meanfield"), sw.get("horizon_scale"), sw.get("workers", 1))
    pop = values.get("population", {})
    return ExperimentConfig(
        mode=mode, dyn=dyn, rule=rule, label=run.get("label", Path(path).stem if path else "run"),
        seed=run.get("seed", 0), T=run.get("t", 1000.0), h=run.get("h", 0.01),
        output_every=run.get("output_every", 0.5),
        n_agents=pop.get("n_agents", 3000), p_edge=pop.get("p_edge", 0.1),
        leader_fraction=pop.get("leader_fraction", 0.1), self_inclusive=pop.get("self_inclusive", False),
        comm_period=pop.get("comm_period", 1.0),
        q0=vec(init.get("q0"), (100.0, 200.0, 300.0)), x0=vec(init.get("x0"), (1.0 / n,) * n),
        q_hat0=vec(init.get("q_hat0"), (0.0,) * n),
        lambdas=tuple(values.get("rate", {}).get("lambda", (1.0,))),
        controller=controller, trigger_source=ctrl.get("trigger_source", "oracle"),
        disturbance=disturbance, sweep=sweep,
        passivity_samples=values.get("passivity", {}).get("samples", 1000),
        debug_checks=run.get("debug_checks", False), plots=run.get("plots", True), out=run.get("out"),
        source_text=text, source_path=path,
    )


def loads(text: str, path: str | None = None) -> ExperimentConfig:
    """Parse and validate config text, reporting every problem at once."""
    sections, errors = _parse(text)
    values = _convert(sections, errors)
    validate(values, errors)
    if errors:
        raise ConfigError(errors)
    try:
        return build(values, text, path)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc


def resolve_path(path) -> Path:
    """Existing path as given, else a shipped config of that name."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (CONFIG_DIR / p.name, CONFIG_DIR / f"{p.name}.cfg"):
        if candidate.exists():
            return candidate
    raise ConfigError([f"config file not found: {path}"])


def load_config(path) -> ExperimentConfig:
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {p}: {exc}"]) from exc
    return loads(text, str(p))


def _render(values) -> str:
    if isinstance(values, str):
        return values
    if isinstance(values, bool):
        return "true" if values else "false"
    if isinstance(values, (int, float, np.integer, np.floating)):
        return repr(values.item() if hasattr(values, "item") else values)
    return ", ".join(_render(v) for v in np.asarray(values).tolist())


def dumps(cfg: ExperimentConfig) -> str:
    """Config text that loads back to ``cfg`` exactly (floats keep full precision)."""
    d = cfg.dyn
    sections = {
        "run": {"mode": cfg.mode, "label": cfg.label, "seed": cfg.seed, "T": float(cfg.T), "h": float(cfg.h),
                "output_every": float(cfg.output_every), "debug_checks": cfg.debug_checks, "plots": cfg.plots},
        "dynamics": {"n": d.n, "R": d.R, "alpha": d.alpha, "beta": d.beta, "w": d.w, "q_max": d.q_max},
        "rule": {"kind": cfg.rule.kind.value, "varrho": cfg.rule.varrho},
        "population": {"n_agents": cfg.n_agents, "p_edge": float(cfg.p_edge),
                       "leader_fraction": float(cfg.leader_fraction), "self_inclusive": cfg.self_inclusive,
                       "comm_period": float(cfg.comm_period)},
        "initial": {"q0": cfg.q0, "x0": cfg.x0, "q_hat0": cfg.q_hat0},
        "rate": {"lambda": cfg.lambdas},
    }
    if cfg.controller is not None:
        c = cfg.controller
        sections["controller"] = {"enabled": True, "gamma": c.gamma, "tau": c.tau, "epsilon": c.epsilon,
                                  "lambda0": c.lambda0, "trigger_source": cfg.trigger_source}
    dist = cfg.disturbance
    if dist.kind is DisturbanceKind.TABLE:
        raise ValueError("recorded disturbances cannot be written to a config file")
    sections["disturbance"] = {"kind": dist.kind.value, "amplitude": dist.amplitude, "omega": dist.omega,
                               "decay_time": dist.decay_time}
    sw = cfg.sweep
    if sw.values or sw.seeds:
        sections["sweep"] = {"parameter": sw.parameter, "values": sw.values, "seeds": sw.seeds,
                             "engine": sw.engine, "workers": sw.workers}
        if sw.horizon_scale:
            sections["sweep"]["horizon_scale"] = sw.horizon_scale
        for key in ("values", "seeds"):
            if not sections["sweep"][key]:
                del sections["sweep"][key]
    sections["passivity"] = {"samples": cfg.passivity_samples}
    lines = []
    for name, pairs in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_render(v)}" for k, v in pairs.items())
        lines.append("")
    return "\n".join(lines)
