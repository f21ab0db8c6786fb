"""System configuration shared by both parties (INI files via configparser)."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..primitives.lwe import LweParams
from ..source import SourceConfig
from ..sync import SyncParams
from ..timetag import NS

PROTOCOL_VERSION = 1
MODES = ("hybrid", "baseline")


@dataclass(frozen=True)
class SystemConfig:
    mode: str = "hybrid"
    seed: int = 0
    source: SourceConfig = field(default_factory=SourceConfig)
    sync: SyncParams = field(default_factory=SyncParams)
    lwe: LweParams = field(default_factory=LweParams)
    n_raw: int = 8000
    window: int = 1 * NS
    qber_limit: float = 0.1
    max_iterations: int = 100
    n_aes_bits: int = 256
    min_sessions: int = 1
    max_sessions: int = 64
    # IS identifier forced by the sender; empty means uniform random choice
    choice: str = ""
    recv_timeout: float = 300.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.n_raw <= 0 or self.window <= 0:
            raise ConfigError("n_raw and window must be positive")
        if self.n_aes_bits != 256:
            raise ConfigError("only AES-256 is supported (n_aes_bits = 256)")
        if not 1 <= self.min_sessions <= self.max_sessions:
            raise ConfigError("need 1 <= min_sessions <= max_sessions")

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def negotiated(self) -> dict:
        """Parameters both parties must agree on (sent in the CONFIG frame)."""
        data = asdict(self)
        for local in ("choice", "recv_timeout"):
            data.pop(local)
        return data

    @property
    def digest(self) -> str:
        text = json.dumps(self.negotiated(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    # -- INI -------------------------------------------------------------

    _SECTIONS = {"source": SourceConfig, "sync": SyncParams, "lwe": LweParams}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["protocol"] = {
            f.name: str(getattr(self, f.name)) for f in fields(self) if f.name not in self._SECTIONS
        }
        for name in self._SECTIONS:
            cp[name] = {k: str(v) for k, v in asdict(getattr(self, name)).items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp[section].items()]
            lines.append("")
        return "\n".join(lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def from_ini(cls, text: str, base: "SystemConfig | None" = None) -> "SystemConfig":
        base = base or cls()
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        changes = {}
        for section in cp.sections():
            if section == "protocol":
                target, obj = cls, base
            elif section in cls._SECTIONS:
                target, obj = cls._SECTIONS[section], getattr(base, section)
            else:
                raise ConfigError(f"unknown config section [{section}]")
            known = {f.name: f for f in fields(target)}
            updates = {}
            for key, raw in cp[section].items():
                if key not in known or key in cls._SECTIONS:
                    raise ConfigError(f"unknown key '{key}' in [{section}]")
                updates[key] = _coerce(raw, getattr(obj, key), key)
            if section == "protocol":
                changes.update(updates)
            else:
                try:
                    changes[section] = replace(obj, **updates)
                except TypeError as exc:
                    raise ConfigError(str(exc)) from exc
        return replace(base, **changes)

    @classmethod
    def load(cls, path: str | Path, base: "SystemConfig | None" = None) -> "SystemConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text, base)


def _coerce(raw: str, current, key: str):
    try:
        if current is None:
            return None if raw in ("", "None") else int(raw)
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value '{raw}' for {key}") from exc
