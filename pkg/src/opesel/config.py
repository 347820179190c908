"""INI experiment configuration.

A config file has ``[section]`` headers and ``key = value`` lines. Lists are
comma separated. Every section except ``[evaluation]`` has defaults, so a
minimal file only needs to name the evaluation policies (or ``ops = true``).

Errors name the section, the key and, when available, the line number.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from .baseline import HeuristicConfig
from .errors import ConfigError
from .pasif import PasifConfig

METHODS = ("pasif", "heuristic")

KNOWN_KEYS: dict[str, tuple[str, ...]] = {
    "environment": ("seed", "dim", "n_actions"),
    "behavior": ("betas", "weights", "n"),
    "evaluation": ("betas", "ops", "train_n", "temperatures"),
    "method": ("methods",),
    "pasif": (
        "k", "learning_rate", "reg_grid", "max_steps", "seeds", "rate_band", "hidden",
        "full_gradient", "strict_alg1", "reuse_reg", "n_folds", "max_resplits", "delta",
    ),
    "heuristic": ("mode", "fixed_index", "seeds", "n_folds"),
    "oracle": ("n_mc", "n_reps", "seed"),
    "run": ("n_sims", "base_seed", "workers"),
    "output": ("dir", "prefix"),
}


@dataclass(frozen=True)
class EnvironmentBlock:
    seed: int = 0
    dim: int = 10
    n_actions: int = 10


@dataclass(frozen=True)
class BehaviorBlock:
    betas: tuple[float, ...] = (-2.0, 2.0)
    weights: tuple[float, ...] | None = None
    n: int = 2000


@dataclass(frozen=True)
class EvaluationBlock:
    betas: tuple[float, ...] = ()
    ops: bool = False
    train_n: int = 2000
    temperatures: tuple[float, ...] = (1.0, 2.0, 10.0, 20.0, 100.0)


@dataclass(frozen=True)
class OracleBlock:
    n_mc: int = 100_000
    n_reps: int = 50
    seed: int = 0


@dataclass(frozen=True)
class RunBlock:
    n_sims: int = 20
    base_seed: int = 0
    workers: int | None = None


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "results"
    prefix: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentBlock = EnvironmentBlock()
    behavior: BehaviorBlock = BehaviorBlock()
    evaluation: EvaluationBlock = EvaluationBlock()
    methods: tuple[str, ...] = METHODS
    pasif: PasifConfig = PasifConfig()
    heuristic: HeuristicConfig = HeuristicConfig()
    oracle: OracleBlock = OracleBlock()
    run: RunBlock = RunBlock()
    output: OutputBlock = OutputBlock()
    source: str = field(default="<defaults>", compare=False)

    def as_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            if f.name == "source":
                continue
            value = getattr(self, f.name)
            out[f.name] = asdict(value) if hasattr(value, "__dataclass_fields__") else value
        return out


# ---------------------------------------------------------------- value parsers


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError("must be nonnegative")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError("must be at least 1")
    return value


def _float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("must be a number")
    return value


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _list(item: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(item(p) for p in parts)
    return parse


def _seed_list(text: str) -> tuple[int, ...]:
    """Comma list of nonnegative ints, or ``a..b`` for the inclusive range."""
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ValueError("empty seed range")
        return tuple(range(lo, hi + 1))
    seeds = _list(_nonneg_int)(text)
    if not seeds:
        raise ValueError("need at least one seed")
    return seeds


PARSERS: dict[tuple[str, str], Callable[[str], Any]] = {
    ("environment", "seed"): _nonneg_int,
    ("environment", "dim"): _pos_int,
    ("environment", "n_actions"): _pos_int,
    ("behavior", "betas"): _list(_float),
    ("behavior", "weights"): _list(_float),
    ("behavior", "n"): _pos_int,
    ("evaluation", "betas"): _list(_float),
    ("evaluation", "ops"): _bool,
    ("evaluation", "train_n"): _pos_int,
    ("evaluation", "temperatures"): _list(_float),
    ("method", "methods"): _list(str),
    ("pasif", "k"): _float,
    ("pasif", "learning_rate"): _float,
    ("pasif", "reg_grid"): _list(_float),
    ("pasif", "max_steps"): _pos_int,
    ("pasif", "seeds"): _seed_list,
    ("pasif", "rate_band"): _list(_float),
    ("pasif", "hidden"): _pos_int,
    ("pasif", "full_gradient"): _bool,
    ("pasif", "strict_alg1"): _bool,
    ("pasif", "reuse_reg"): _bool,
    ("pasif", "n_folds"): _pos_int,
    ("pasif", "max_resplits"): _nonneg_int,
    ("pasif", "delta"): _float,
    ("heuristic", "mode"): str.strip,
    ("heuristic", "fixed_index"): _nonneg_int,
    ("heuristic", "seeds"): _seed_list,
    ("heuristic", "n_folds"): _pos_int,
    ("oracle", "n_mc"): _pos_int,
    ("oracle", "n_reps"): _pos_int,
    ("oracle", "seed"): _nonneg_int,
    ("run", "n_sims"): _pos_int,
    ("run", "base_seed"): _nonneg_int,
    ("run", "workers"): _pos_int,
    ("output", "dir"): str.strip,
    ("output", "prefix"): str.strip,
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` line, keyed by (section, key)."""
    where: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", stripped)
        if m and section is not None:
            where[(section, m.group(1).strip().lower())] = lineno
    return where


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"{source}:{lineno}" if lineno else source
        raise ConfigError(f"{where}: {exc.message if hasattr(exc, 'message') else exc}") from exc
    lines = _key_lines(text)

    def fail(section: str, key: str | None, msg: str) -> ConfigError:
        loc = source
        if key is not None and (section, key) in lines:
            loc = f"{source}:{lines[(section, key)]}"
        label = f"[{section}]" + (f" {key}" if key else "")
        return ConfigError(f"{loc}: {label}: {msg}")

    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in KNOWN_KEYS:
            raise fail(section, None, f"unknown section; expected one of {sorted(KNOWN_KEYS)}")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in KNOWN_KEYS[section]:
                raise fail(section, key, f"unknown key; expected one of {list(KNOWN_KEYS[section])}")
            try:
                values[section][key] = PARSERS[(section, key)](raw)
            except ValueError as exc:
                raise fail(section, key, f"invalid value {raw.strip()!r}: {exc}") from exc

    def build(section: str, cls, rename: dict[str, str] | None = None):
        kwargs = {(rename or {}).get(k, k): v for k, v in values.get(section, {}).items()}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise fail(section, None, str(exc)) from exc

    env = build("environment", EnvironmentBlock)
    behavior = build("behavior", BehaviorBlock)
    if behavior.weights is not None:
        if len(behavior.weights) != len(behavior.betas):
            raise fail("behavior", "weights", "need one weight per behavior beta")
        if any(w < 0 for w in behavior.weights) or not math.isclose(sum(behavior.weights), 1.0):
            raise fail("behavior", "weights", "weights must be nonnegative and sum to 1")
    if not behavior.betas:
        raise fail("behavior", "betas", "need at least one behavior policy")
    if "evaluation" not in values:
        raise fail("evaluation", None, "section is required")
    evaluation = build("evaluation", EvaluationBlock)
    if not evaluation.ops and not evaluation.betas:
        raise fail("evaluation", "betas", "list evaluation betas or set ops = true")
    methods = values.get("method", {}).get("methods", METHODS)
    for m in methods:
        if m not in METHODS:
            raise fail("method", "methods", f"unknown method {m!r}; expected a subset of {METHODS}")
    if not methods:
        raise fail("method", "methods", "need at least one method")
    if "heuristic" in methods and len(behavior.betas) < 2:
        raise fail("method", "methods", "the heuristic needs at least two behavior policies")
    pasif_vals = dict(values.get("pasif", {}))
    for key in ("rate_band",):
        if key in pasif_vals and len(pasif_vals[key]) != 2:
            raise fail("pasif", key, "expected two numbers")
    pasif = build_from(PasifConfig, pasif_vals, lambda msg: fail("pasif", None, msg))
    heuristic = build_from(HeuristicConfig, values.get("heuristic", {}),
                           lambda msg: fail("heuristic", None, msg))
    return ExperimentConfig(
        environment=env,
        behavior=behavior,
        evaluation=evaluation,
        methods=tuple(methods),
        pasif=pasif,
        heuristic=heuristic,
        oracle=build("oracle", OracleBlock),
        run=build("run", RunBlock),
        output=build("output", OutputBlock),
        source=source,
    )


def build_from(cls, kwargs: dict, fail: Callable[[str], ConfigError]):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise fail(str(exc)) from exc


def load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, source=str(path))
