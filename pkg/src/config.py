"""
Plain key-value training config files

    # vanilla.cfg
    max_epochs = 15
    batch_size = 32
    learning_rate = 1e-3
    seed = 7

A ``[train]`` header is optional. ``seed`` sets seed_init, seed_shuffle and
seed_dropout at once; the specific seed keys win over it.
"""

import configparser
from dataclasses import fields, replace
from pathlib import Path

from .errors import BadConfigError, MissingFileError
from .logging_config import setup_logging
from .training_engine import TrainConfig

logger = setup_logging('config')

SECTION = 'train'
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_CASTS = {'int': int, 'float': float, int: int, float: float}


def _cast(key, raw):
    cast = _CASTS[_FIELD_TYPES[key]]
    try:
        if cast is int:
            return int(raw, 0)
        return float(raw)
    except ValueError:
        raise BadConfigError(f"{key}: cannot read {raw!r} as {cast.__name__}") from None


def parse_config_text(text, source='<string>'):
    """Key/value pairs of a config file, validated against TrainConfig's fields."""
    stripped = text.lstrip()
    if not stripped.startswith('['):
        text = f'[{SECTION}]\n' + text
    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise BadConfigError(f"{source}: {exc}") from None

    unknown_sections = [name for name in parser.sections() if name != SECTION]
    if unknown_sections:
        raise BadConfigError(f"{source}: unknown section(s) {', '.join(unknown_sections)}")

    values = {}
    seed = None
    for key, raw in parser.items(SECTION) if parser.has_section(SECTION) else []:
        if key == 'seed':
            seed = _cast('seed_init', raw)
        elif key in _FIELD_TYPES:
            values[key] = _cast(key, raw)
        else:
            raise BadConfigError(f"{source}: unknown key '{key}'")
    return values, seed


def apply_overrides(config, seed=None, **overrides):
    """
    New TrainConfig with ``seed`` (all three seeds) and then any non-None
    field overrides applied
    """
    if seed is not None:
        config = replace(config, seed_init=seed, seed_shuffle=seed, seed_dropout=seed)
    changes = {key: value for key, value in overrides.items() if value is not None}
    unknown = set(changes) - set(_FIELD_TYPES)
    if unknown:
        raise BadConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    return replace(config, **changes) if changes else config


def load_train_config(path=None, base=None):
    """
    TrainConfig from defaults overlaid with a config file

    Args:
        path: Config file, or None for defaults only
        base: Starting config (TrainConfig() if None)

    Raises:
        MissingFileError: path does not exist
        BadConfigError: unknown key, unparseable value or invalid result
    """
    config = base if base is not None else TrainConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"config file not found: {path}")
    values, seed = parse_config_text(path.read_text(encoding='utf-8'), source=str(path))
    config = apply_overrides(config, seed=seed, **values)
    logger.debug(f"Loaded config {path}: {values}")
    return config
