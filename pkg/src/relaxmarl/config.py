"""Flat INI-style experiment configuration.

Keys live in sections (``[train]`` then ``batch_size = 64``) or are written
dotted (``train.batch_size = 64``). A bare ``task = NAME`` is shorthand for
``task.name``. Every error names the offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable

from .envs import EnvConfigError, canonical_name
from .estimators import KINDS, EstimatorConfig, make_estimator
from .maddpg import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.lower() in ("", "none", "default") else float(text)


def _list(conv: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(text: str) -> list:
        items = [t.strip() for t in text.split(",") if t.strip()]
        return [conv(t) for t in items]
    parse.__name__ = f"list of {conv.__name__}"
    return parse


def _positive(x) -> bool:
    return x is None or x > 0


def _at_least(n):
    return lambda x: x >= n


def _unit(x) -> bool:
    return 0 < x <= 1


def _all(pred):
    return lambda xs: len(xs) > 0 and all(pred(x) for x in xs)


# section -> key -> (parser, default, check, constraint text)
_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_TRAIN_DEFAULTS = TrainConfig()
SCHEMA: dict[str, dict[str, tuple]] = {
    "task": {
        "name": (str, "lbf-6x6-2p-1f", None, ""),
        "seeds": (_list(int), [0, 1, 2], lambda s: len(s) > 0 and len(set(s)) == len(s),
                  "a non-empty list of distinct integers"),
    },
    "estimator": {
        "kind": (str, "STGS1", lambda k: k in KINDS, f"one of {', '.join(KINDS)}"),
        "tau": (_optional_float, None, _positive, "> 0"),
        "K": (int, 10, _at_least(1), ">= 1"),
        "kappa": (float, 1.0, _positive, "> 0"),
        "tau_start": (float, 2.0, _positive, "> 0"),
        "tau_end": (float, 0.3, _positive, "> 0"),
    },
    "train": {
        name: ({"int": int, "float": float, "str": str}[_TRAIN_TYPES[name]],
               getattr(_TRAIN_DEFAULTS, name), None, "")
        for name in _TRAIN_TYPES
    },
    "output": {
        "dir": (str, "runs", None, ""),
        "checkpoints": (_bool, True, None, ""),
    },
    "estats": {
        "estimators": (_list(str), ["STGS1", "STGST", "TAGS", "GRMC1", "GRMC10", "GRMC50", "GST"],
                       lambda xs: len(xs) > 0, "non-empty"),
        "zeta": (_list(float), [0.5, 1.0, -0.3], lambda xs: len(xs) >= 2, "at least two logits"),
        "f": (_list(float), [1.0, 0.0, -1.0], lambda xs: len(xs) >= 2, "at least two values"),
        "n_samples": (int, 100_000, _at_least(1000), ">= 1000"),
        "seed": (int, 0, None, ""),
    },
    "bench": {
        "dims": (_list(int), [2, 10, 100, 1000], _all(_at_least(2)), "non-empty, each >= 2"),
        "n_reps": (int, 10_000, _at_least(100), ">= 100"),
        "n_instances": (int, 5, _at_least(2), ">= 2"),
        "seed": (int, 0, None, ""),
    },
}
_POSITIVE_TRAIN = ("lr_actor", "lr_critic")


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]
    command: str = "train"
    sources: dict[str, str] = field(default_factory=dict)

    @property
    def task(self) -> str:
        return self.values["task"]["name"]

    @property
    def seeds(self) -> list[int]:
        return list(self.values["task"]["seeds"])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output"]["dir"])

    def estimator(self) -> EstimatorConfig:
        e = self.values["estimator"]
        return make_estimator(e["kind"], tau=e["tau"], K=e["K"], kappa=e["kappa"],
                              tau_start=e["tau_start"], tau_end=e["tau_end"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.values["train"])

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.values[name])

    def resolved_lines(self, sections: Iterable[str] | None = None) -> list[str]:
        """``section.key = value`` lines that parse back to this config."""
        out = []
        for sec in sections or SCHEMA:
            for key, val in self.values[sec].items():
                out.append(f"{sec}.{key} = {_format(val)}")
        return out

    def header(self, sections: Iterable[str] | None = None) -> str:
        return "".join(f"# {line}\n" for line in self.resolved_lines(sections))


def _format(val) -> str:
    if isinstance(val, list):
        return ",".join(_format(v) for v in val)
    if isinstance(val, bool):
        return "true" if val else "false"
    if val is None:
        return "none"
    return repr(val) if isinstance(val, float) else str(val)


def _assign(values, sources, section: str, key: str, raw: str, where: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        known = ", ".join(SCHEMA[section])
        raise ConfigError(f"{where}: unknown key {section}.{key} (known: {known})")
    conv, _, check, constraint = SCHEMA[section][key]
    try:
        val = conv(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: {section}.{key} expects {getattr(conv, '__name__', 'value')}, "
                          f"got {raw.strip()!r}") from None
    if check is not None and not check(val):
        raise ConfigError(f"{where}: {section}.{key} = {raw.strip()} violates constraint {constraint}")
    if section == "train" and key in _POSITIVE_TRAIN and not val > 0:
        raise ConfigError(f"{where}: {section}.{key} must be > 0")
    values[section][key] = val
    sources[f"{section}.{key}"] = where


def _split_key(key: str, section: str | None, where: str) -> tuple[str, str]:
    if "." in key:
        sec, _, name = key.partition(".")
        return sec, name
    if section is not None:
        return section, key
    if key == "task":
        return "task", "name"
    raise ConfigError(f"{where}: key {key!r} must sit in a section or be written section.key")


def parse_text(text: str, source: str = "<config>", overrides: Iterable[str] = (),
               command: str = "train") -> ExperimentConfig:
    values = {sec: {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in keys.items()}
              for sec, keys in SCHEMA.items()}
    sources: dict[str, str] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        where = f"{source}:{lineno}"
        body = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {body!r}")
            section = body[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, _, raw = body.partition("=")
        sec, name = _split_key(key.strip(), section, where)
        _assign(values, sources, sec, name, raw, where)
    for k, item in enumerate(overrides, 1):
        where = f"--set #{k}"
        if "=" not in item:
            raise ConfigError(f"{where}: expected key=value, got {item!r}")
        key, _, raw = item.partition("=")
        sec, name = _split_key(key.strip(), None, where)
        _assign(values, sources, sec, name, raw, where)

    try:
        values["task"]["name"] = canonical_name(values["task"]["name"])
    except EnvConfigError as exc:
        raise ConfigError(f"{sources.get('task.name', source)}: {exc}") from None
    cfg = ExperimentConfig(values, command, sources)
    try:
        cfg.estimator()
    except ValueError as exc:
        raise ConfigError(f"{source}: estimator: {exc}") from None
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"{source}: train: {exc}") from None
    return cfg


def parse_config(path: str | Path | None, overrides: Iterable[str] = (),
                 command: str = "train") -> ExperimentConfig:
    """Read ``path`` (or start from defaults when None) and apply ``overrides``."""
    if path is None:
        return parse_text("", "<defaults>", overrides, command)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    return parse_text(text, str(p), overrides, command)
