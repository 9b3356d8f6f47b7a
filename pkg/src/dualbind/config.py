"""Plain-text run configuration: ``key = value`` lines grouped by ``[section]``."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

CONFIG_VERSION = 1


@dataclass
class RunConfig:
    """Settings per section; values are kept as the strings written in the file."""

    sections: dict = field(default_factory=dict)  # section -> {key: value}
    config_version: int = CONFIG_VERSION

    def section(self, name):
        return dict(self.sections.get(name, {}))


def parse_config(text: str, source="<config>") -> RunConfig:
    sections, current = {}, None
    version = CONFIG_VERSION
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ConfigurationError(f"{source}:{lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if current is None:
            if key != "config_version":
                raise ConfigurationError(f"{source}:{lineno}: key {key!r} outside any [section]")
            try:
                version = int(value)
            except ValueError as exc:
                raise ConfigurationError(f"{source}:{lineno}: config_version must be an integer") from exc
            if version != CONFIG_VERSION:
                raise ConfigurationError(f"{source}: unsupported config_version {version}")
            continue
        if key in sections[current]:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = value
    return RunConfig(sections, version)


def format_config(cfg: RunConfig) -> str:
    lines = [f"config_version = {cfg.config_version}"]
    for name, values in cfg.sections.items():
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in values.items())
    return "\n".join(lines) + "\n"


def read_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def write_config(path, cfg: RunConfig):
    Path(path).write_text(format_config(cfg))


def check_keys(values: dict, allowed, where):
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
