"""Run configuration: a single versioned TOML document, flat sections
mirroring the module names, every numeric threshold exposed."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model_clients import MODES, ClientConfig
from .scene_graph import GraphConfig

CONFIG_VERSION = 1

DECODERS = ("deterministic", "chat")
KNOWLEDGE_MODES = ("graph", "captions")


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    prompts: Path | None = None
    manifest: Path | None = None
    human_scores: Path | None = None
    gold_findings: Path | None = None
    fixtures_dir: Path | None = None
    output_dir: Path = Path("out")


@dataclass
class QaConfig:
    decoder: str = "deterministic"
    knowledge: str = "graph"
    fuzzy_threshold: float = 0.85


@dataclass
class RunSection:
    workers: int = 4
    seed: int = 0
    open_vocab: Path | None = None  # defaults to the bundled list


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    clients: ClientConfig = field(default_factory=ClientConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    qa: QaConfig = field(default_factory=QaConfig)
    run: RunSection = field(default_factory=RunSection)


_PATH_FIELDS = {
    ("paths", "prompts"), ("paths", "manifest"), ("paths", "human_scores"),
    ("paths", "gold_findings"), ("paths", "fixtures_dir"), ("paths", "output_dir"),
    ("clients", "fixtures_dir"), ("run", "open_vocab"),
}

_SECTIONS = {
    "paths": PathsConfig,
    "clients": ClientConfig,
    "graph": GraphConfig,
    "qa": QaConfig,
    "run": RunSection,
}


def _fill_section(name: str, cls, raw: dict, base_dir: Path):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in raw.items():
        if (name, key) in _PATH_FIELDS and value is not None:
            p = Path(value)
            value = p if p.is_absolute() else (base_dir / p)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}]: {e}") from None


def load_config(path: Path | str) -> RunConfig:
    """Parse and validate a config file; relative paths resolve against it."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    version = doc.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version!r}")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    base = path.resolve().parent
    cfg = RunConfig()
    for name, cls in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            setattr(cfg, name, _fill_section(name, cls, doc[name], base))
    # graph mode shares the fixtures directory via the clients section
    if cfg.clients.fixtures_dir is None and cfg.paths.fixtures_dir is not None:
        cfg.clients.fixtures_dir = cfg.paths.fixtures_dir
    validate_config(cfg)
    return cfg


def _check_frac(name: str, value: float, lo: float = 0.0, hi: float = 1.0):
    if not (lo <= value <= hi):
        raise ConfigError(f"{name} = {value} outside [{lo}, {hi}]")


def validate_config(cfg: RunConfig):
    if cfg.clients.mode not in MODES:
        raise ConfigError(f"clients.mode must be one of {MODES}, got {cfg.clients.mode!r}")
    if cfg.clients.mode in ("replay", "record") and cfg.clients.fixtures_dir is None:
        raise ConfigError(f"{cfg.clients.mode} mode requires a fixtures directory")
    if cfg.qa.decoder not in DECODERS:
        raise ConfigError(f"qa.decoder must be one of {DECODERS}")
    if cfg.qa.knowledge not in KNOWLEDGE_MODES:
        raise ConfigError(f"qa.knowledge must be one of {KNOWLEDGE_MODES}")
    if cfg.qa.decoder == "chat" and cfg.clients.mode == "live" and cfg.clients.url_for("chat") is None:
        raise ConfigError("chat decoder in live mode needs a chat endpoint")
    _check_frac("graph.confidence_min", cfg.graph.confidence_min)
    _check_frac("graph.dup_threshold", cfg.graph.dup_threshold)
    _check_frac("graph.max_pair_frac", cfg.graph.max_pair_frac, 0.0, 2.0)
    _check_frac("graph.near_frac", cfg.graph.near_frac)
    _check_frac("graph.contact_frac", cfg.graph.contact_frac)
    _check_frac("graph.overlap_frac", cfg.graph.overlap_frac)
    _check_frac("qa.fuzzy_threshold", cfg.qa.fuzzy_threshold)
    if cfg.run.workers < 1:
        raise ConfigError("run.workers must be >= 1")
    if cfg.clients.max_retries < 1:
        raise ConfigError("clients.max_retries must be >= 1")


def _fmt(value) -> str:
    if value is None:
        return '""  # unset'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return f'"{value}"'


def render_config(cfg: RunConfig) -> str:
    """Effective configuration as TOML-shaped text (for `config show`)."""
    lines = [f"config_version = {CONFIG_VERSION}"]
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        lines.append("")
        lines.append(f"[{name}]")
        for f in fields(cls):
            lines.append(f"{f.name} = {_fmt(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"
