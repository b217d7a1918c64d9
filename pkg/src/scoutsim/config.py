"""Flat INI-style configuration for corpus, environment, and training.

Three sections — [corpus], [env], [train] — each mapping directly onto one
settings dataclass. Unknown sections or keys fail with the nearest valid
name; values are validated by the dataclasses themselves. Presets bundle
training overrides: "paper" keeps the reference hyperparameters, "toy"
swaps in clip bounds and learning rates sized for the small nets here.
"""

from __future__ import annotations

import configparser
import difflib
import os
from dataclasses import asdict, dataclass, fields, replace

from .env import EnvConfig
from .errors import ConfigError
from .training import TrainConfig

PRESETS = {
    "paper": {},
    "toy": {
        "eps_low": 0.1,
        "eps_high": 0.2,
        "actor_lr": 1e-3,
        "critic_lr": 3e-3,
        "hidden": 32,
        "batch_episodes": 8,
    },
}


@dataclass(frozen=True)
class CorpusSettings:
    """Arguments for synthetic corpus generation (seed supplied separately)."""

    n_papers: int = 2000
    n_queries: int = 60
    dim: int = 8
    avg_refs: float = 6.0
    n_clusters: int = 16
    truth_threshold: float = 0.90
    paper_spread: float = 0.45
    query_spread: float = 0.20
    ref_power: float = 8.0


@dataclass(frozen=True)
class AppConfig:
    corpus: CorpusSettings
    env: EnvConfig
    train: TrainConfig


_SECTIONS = {
    "corpus": CorpusSettings,
    "env": EnvConfig,
    "train": TrainConfig,
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(section: str, key: str, text: str, default) -> object:
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _unknown_key(section: str, key: str, valid) -> ConfigError:
    nearest = difflib.get_close_matches(key, valid, n=1, cutoff=0.4)
    hint = f"; did you mean {nearest[0]!r}?" if nearest else ""
    return ConfigError(
        f"unknown key {key!r} in section [{section}]{hint} "
        f"(valid keys: {', '.join(sorted(valid))})"
    )


def load_config(
    path: str | None = None,
    preset: str | None = None,
    overrides: dict[str, dict] | None = None,
) -> AppConfig:
    """Resolve defaults <- preset <- config file <- explicit overrides."""
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r} (valid: {', '.join(sorted(PRESETS))})"
            )
        values["train"].update(PRESETS[preset])

    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                nearest = difflib.get_close_matches(section, _SECTIONS, n=1, cutoff=0.4)
                hint = f"; did you mean [{nearest[0]}]?" if nearest else ""
                raise ConfigError(f"unknown section [{section}]{hint}")
            defaults = {f.name: f.default for f in fields(_SECTIONS[section])}
            for key, text in parser.items(section):
                if key not in defaults:
                    raise _unknown_key(section, key, defaults)
                values[section][key] = _convert(section, key, text, defaults[key])

    for section, section_overrides in (overrides or {}).items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown override section {section!r}")
        defaults = {f.name: f.default for f in fields(_SECTIONS[section])}
        for key, value in section_overrides.items():
            if key not in defaults:
                raise _unknown_key(section, key, defaults)
            values[section][key] = value

    try:
        return AppConfig(
            corpus=CorpusSettings(**values["corpus"]),
            env=EnvConfig(**values["env"]),
            train=TrainConfig(**values["train"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_snapshot(config: AppConfig) -> dict:
    """JSON-ready dump of every resolved setting."""
    return {
        "corpus": asdict(config.corpus),
        "env": asdict(config.env),
        "train": asdict(config.train),
    }


def with_algorithm(config: AppConfig, algorithm: str) -> AppConfig:
    return replace(config, train=replace(config.train, algorithm=algorithm))
