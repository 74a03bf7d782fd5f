"""Experiment configuration: strict INI-style ``key = value`` files (or JSON).

Keys live in four sections::

    [experiment]   experiment, master_seed, output_dir
    [field]        gamma, mass, eps, flavor, half_width, cell
    [mc]           n_bridges, n_steps, replicates, n_fields, t_low, t_high,
                   n_t_points, refinements, workers, quenched
    [fit]          lambdas, alphas, dxs, radii, eps_list, times

Lists are comma separated; ``auto`` selects the experiment default for
``t_high`` and ``cell``.  Keys may also appear before the first section
header.  Unknown keys and sections are rejected with a suggestion.
"""
from __future__ import annotations

import configparser
import dataclasses
import difflib
import json
import math
from dataclasses import dataclass

EXPERIMENTS = (
    "field_check",
    "boundary_specdim",
    "critical_boundary",
    "bulk_specdim",
    "transform_table",
    "ball_mass",
    "coupling_check",
    "identity_checks",
)
FLAVORS = ("boundary", "critical_boundary")
SEED_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violated constraint."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int = 0
    output_dir: str = "results"
    gamma: float = 1.0
    mass: float = 1.0
    eps: float = 0.3
    flavor: str = "boundary"
    half_width: float = 38.4
    cell: float | None = None
    n_bridges: int = 2000
    n_steps: int = 32
    replicates: int = 100
    n_fields: int = 40
    t_low: float = 1e-4
    t_high: float | None = None
    n_t_points: int = 40
    refinements: int = 2
    workers: int = 1
    quenched: bool = False
    lambdas: tuple = (0.5, 1.0, 2.0, 4.0, 8.0)
    alphas: tuple = (1.0,)
    dxs: tuple = (0.0,)
    radii: tuple = (0.03125, 0.0535, 0.0915, 0.1565, 0.2679, 0.5)
    eps_list: tuple = (2.0 ** -5, 2.0 ** -6, 2.0 ** -7, 2.0 ** -8)
    times: tuple = (1e-3, 1e-2, 1e-1, 1.0)


SECTIONS = {
    "experiment": ("experiment", "master_seed", "output_dir"),
    "field": ("gamma", "mass", "eps", "flavor", "half_width", "cell"),
    "mc": ("n_bridges", "n_steps", "replicates", "n_fields", "t_low", "t_high", "n_t_points", "refinements",
           "workers", "quenched"),
    "fit": ("lambdas", "alphas", "dxs", "radii", "eps_list", "times"),
}
SECTION_OF = {k: s for s, keys in SECTIONS.items() for k in keys}
INT_KEYS = {"master_seed", "n_bridges", "n_steps", "replicates", "n_fields", "n_t_points", "refinements", "workers"}
FLOAT_KEYS = {"gamma", "mass", "eps", "half_width", "t_low"}
OPTIONAL_FLOAT_KEYS = {"cell", "t_high"}
LIST_KEYS = {"lambdas", "alphas", "dxs", "radii", "eps_list", "times"}
BOOL_KEYS = {"quenched"}
STR_KEYS = {"experiment", "output_dir", "flavor"}

# per-experiment defaults layered over the dataclass defaults
EXPERIMENT_DEFAULTS = {
    "field_check": {"eps": 0.05, "half_width": 2.0, "replicates": 200},
    "boundary_specdim": {"eps": 2.0 ** -8, "half_width": 8.0, "replicates": 4},
    "critical_boundary": {"gamma": 2.0 * math.sqrt(2.0), "flavor": "critical_boundary", "eps": 2.0 ** -8,
                          "half_width": 2.5, "replicates": 100},
    "bulk_specdim": {"alphas": (1.0,)},
    "transform_table": {"alphas": (0.5, 1.0, 2.0), "lambdas": (0.5, 1.0, 2.0, 4.0), "dxs": (0.0, 1.0),
                        "gamma": 0.0, "n_bridges": 1000, "n_fields": 20},
    "ball_mass": {"eps": 0.015625, "half_width": 2.0, "replicates": 50},
    "coupling_check": {"n_steps": 4096, "replicates": 10000, "dxs": (1.0,), "t_high": 8.0},
    "identity_checks": {"replicates": 100000, "n_bridges": 10000},
}


def _suggest(word, options) -> str:
    m = difflib.get_close_matches(word, list(options), n=1, cutoff=0.5)
    return f" (did you mean {m[0]!r}?)" if m else ""


def _convert(key, raw, problems):
    text = raw.strip() if isinstance(raw, str) else raw
    try:
        if key in INT_KEYS:
            if isinstance(text, bool) or (isinstance(text, float) and not float(text).is_integer()):
                raise ValueError
            return int(text)
        if key in FLOAT_KEYS:
            if isinstance(text, bool):
                raise ValueError
            return float(text)
        if key in OPTIONAL_FLOAT_KEYS:
            if text is None or (isinstance(text, str) and text.lower() == "auto"):
                return None
            return float(text)
        if key in BOOL_KEYS:
            if isinstance(text, bool):
                return text
            low = str(text).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if key in LIST_KEYS:
            if isinstance(text, (list, tuple)):
                return tuple(float(v) for v in text)
            if isinstance(text, (int, float)):
                return (float(text),)
            return tuple(float(v) for v in str(text).split(",") if v.strip())
        return str(text)
    except (TypeError, ValueError):
        kind = ("integer" if key in INT_KEYS else "real" if key in FLOAT_KEYS | OPTIONAL_FLOAT_KEYS else
                "boolean" if key in BOOL_KEYS else "list of reals")
        problems.append(f"{key}: expected {kind}, got {raw!r}")
        return None


def _collect_ini(text, problems) -> dict:
    cp = configparser.ConfigParser(interpolation=None, strict=True, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}".replace("[__top__]\n", "")]) from exc
    out = {}
    for section in cp.sections():
        if section != "__top__" and section not in SECTIONS:
            problems.append(f"unknown section [{section}]{_suggest(section, SECTIONS)}")
            continue
        for key, value in cp.items(section):
            if key not in SECTION_OF:
                problems.append(f"unknown key {key!r}{_suggest(key, SECTION_OF)}")
                continue
            if section != "__top__" and SECTION_OF[key] != section:
                problems.append(f"key {key!r} belongs in [{SECTION_OF[key]}], not [{section}]")
                continue
            if key in out:
                problems.append(f"duplicate key {key!r}")
            out[key] = value
    return out


def _collect_json(text, problems) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["JSON config must be an object"])
    out = {}
    for k, v in data.items():
        if isinstance(v, dict) and k in SECTIONS:
            items = v.items()
        elif isinstance(v, dict):
            problems.append(f"unknown section {k!r}{_suggest(k, SECTIONS)}")
            continue
        else:
            items = [(k, v)]
        for key, value in items:
            if key not in SECTION_OF:
                problems.append(f"unknown key {key!r}{_suggest(key, SECTION_OF)}")
                continue
            out[key] = value
    return out


def validate(cfg: ExperimentConfig) -> list:
    """All violated constraints of a config (empty when valid)."""
    p = []
    e = cfg.experiment
    if e not in EXPERIMENTS:
        p.append(f"experiment: unknown {e!r}{_suggest(str(e), EXPERIMENTS)}; choose from {', '.join(EXPERIMENTS)}")
    if not 0 <= cfg.master_seed <= SEED_MAX:
        p.append("master_seed: must be an unsigned 64-bit integer")
    if e in ("bulk_specdim", "transform_table", "ball_mass", "identity_checks") and not 0 <= cfg.gamma < 2:
        p.append(f"gamma={cfg.gamma}: γ ∈ [0,2) required for {e}")
    if e == "boundary_specdim":
        if cfg.flavor not in FLAVORS:
            p.append(f"flavor: must be one of {FLAVORS}")
        elif cfg.flavor == "boundary" and not 0 <= cfg.gamma < 2 * math.sqrt(2):
            p.append(f"gamma={cfg.gamma}: γ ∈ [0,2√2) required for boundary chaos")
    if cfg.mass <= 0:
        p.append("mass: must be positive")
    if cfg.eps <= 0:
        p.append("eps: must be positive")
    if e in ("critical_boundary", "boundary_specdim") and cfg.flavor == "critical_boundary" and cfg.eps >= math.exp(-1):
        p.append("eps: critical boundary needs eps < e^-1")
    if cfg.half_width <= 0:
        p.append("half_width: must be positive")
    if cfg.cell is not None and not 0 < cfg.cell <= cfg.eps:
        p.append("cell: must lie in (0, eps]")
    for k in ("n_bridges", "n_steps", "replicates", "n_t_points", "n_fields", "refinements", "workers"):
        lo = 2 if k in ("n_bridges", "n_steps", "replicates") else 4 if k == "n_t_points" else 1
        if getattr(cfg, k) < lo:
            p.append(f"{k}: must be >= {lo}")
    if cfg.t_low <= 0:
        p.append("t_low: must be positive")
    if cfg.t_high is not None and cfg.t_high <= cfg.t_low:
        p.append("t_high: must exceed t_low")
    if any(v <= 0 for v in cfg.lambdas):
        p.append("lambdas: must be positive")
    if any(v < 0 for v in cfg.alphas) or not cfg.alphas:
        p.append("alphas: need at least one value, all >= 0")
    if any(v < 0 for v in cfg.dxs):
        p.append("dxs: must be nonnegative")
    if e == "bulk_specdim":
        if len(cfg.lambdas) < 4 or (cfg.lambdas and min(cfg.lambdas) > 0 and max(cfg.lambdas) / min(cfg.lambdas) < 16):
            p.append("lambdas: need at least 4 values spanning a factor 16")
        if any(a <= 0 for a in cfg.alphas):
            p.append("alphas: spectral dimension fit needs alpha > 0")
    if e in ("bulk_specdim", "transform_table", "identity_checks") and cfg.n_bridges >= 2:
        batches = max(2, min(20 if cfg.quenched or e == "identity_checks" else cfg.n_fields, cfg.n_bridges // 2))
        if cfg.n_bridges % batches:
            p.append(f"n_bridges: must be a multiple of the batch count {batches}")
    if e == "ball_mass":
        r = sorted(cfg.radii)
        if len(r) < 4 or r[0] <= 0 or r[-1] >= 1 or r[-1] / r[0] < 10:
            p.append("radii: need at least 4 radii in (0, 1) spanning a decade")
    if e == "critical_boundary":
        if len(cfg.eps_list) < 2 or any(not 0 < v < math.exp(-1) for v in cfg.eps_list):
            p.append("eps_list: need at least 2 cutoffs in (0, e^-1)")
    if e == "boundary_specdim":
        t = sorted(cfg.times)
        if len(t) < 4 or t[0] <= 0 or t[-1] / t[0] < 100:
            p.append("times: need at least 4 positive times spanning two decades")
    return p


def build_config(values: dict) -> ExperimentConfig:
    """Apply experiment defaults to ``values`` (already converted) and validate."""
    if "experiment" not in values:
        raise ConfigError(["experiment: missing (choose from " + ", ".join(EXPERIMENTS) + ")"])
    merged = dict(EXPERIMENT_DEFAULTS.get(values["experiment"], {}))
    merged.update(values)
    cfg = ExperimentConfig(**merged)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse INI-style or JSON text into a validated :class:`ExperimentConfig`."""
    problems = []
    raw = _collect_json(text, problems) if text.lstrip().startswith("{") else _collect_ini(text, problems)
    values = {}
    for k, v in raw.items():
        c = _convert(k, v, problems)
        if c is not None or k in OPTIONAL_FLOAT_KEYS:
            values[k] = c
    if overrides:
        values.update(overrides)
    if problems:
        # report constraint violations of the readable keys as well
        try:
            build_config(values)
        except ConfigError as exc:
            problems.extend(exc.problems)
        except TypeError:
            pass
        raise ConfigError(problems)
    return build_config(values)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    cfg = dataclasses.replace(cfg, **{k: v for k, v in changes.items() if v is not None})
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _render_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def render_config(cfg: ExperimentConfig) -> str:
    """INI text listing every key; ``parse_config(render_config(c)) == c``."""
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_render_value(getattr(cfg, k))}" for k in keys)
        lines.append("")
    return "\n".join(lines)


def config_dict(cfg: ExperimentConfig) -> dict:
    return {s: {k: getattr(cfg, k) for k in keys} for s, keys in SECTIONS.items()}
