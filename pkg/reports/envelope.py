"""Envelope carried by every JSON report."""
import hashlib
import json
import math
import subprocess
from typing import Any, Dict, Optional

from .config import VERSION


def canonical_json(data: Any) -> str:
    """Serializes ``data`` the same way for hashing on every run."""
    return json.dumps(sanitize(data), sort_keys=True, separators=(',', ':'))


def sanitize(data: Any) -> Any:
    """Replaces non-finite floats with None, recursively; numpy scalars become Python numbers."""
    if isinstance(data, dict):
        return {str(k): sanitize(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [sanitize(v) for v in data]
    if hasattr(data, "item") and not isinstance(data, (str, bytes)):
        data = data.item()
    if isinstance(data, float) and not math.isfinite(data):
        return None
    return data


def describe_version() -> str:
    """``git describe`` of the working tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, check=True)
        described = out.stdout.strip()
        return f"{VERSION}+{described}" if described else VERSION
    except (OSError, subprocess.SubprocessError):
        return VERSION


class ReportEnvelope:
    def __init__(self, command: str, config_hash: str, seed: int, payload: Dict[str, Any],
                 wall_time: float = 0.0, version: Optional[str] = None) -> None:
        self.command: str = command
        self.config_hash: str = config_hash
        self.seed: int = seed
        self.version: str = version or describe_version()
        self.wall_time: float = wall_time  # seconds; excluded from the payload hash
        self.payload: Dict[str, Any] = sanitize(payload)
        self.payload_hash: str = self.calculate_hash()

    def calculate_hash(self) -> str:
        """SHA-256 over the command, config hash, seed and canonical payload."""
        content = self.command + self.config_hash + str(self.seed) + canonical_json(self.payload)
        return hashlib.sha256(content.encode('utf-8')).hexdigest()

    def __str__(self) -> str:
        return (f"Report {self.command}:\n"
                f"  Version: {self.version}\n"
                f"  Config Hash: {self.config_hash}\n"
                f"  Seed: {self.seed}\n"
                f"  Wall Time: {self.wall_time:.3f}s\n"
                f"  Payload Hash: {self.payload_hash}\n")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'version': self.version,
            'wall_time': self.wall_time,
            'payload_hash': self.payload_hash,
            'payload': self.payload,
        }

    @classmethod
    def from_dict(cls, report_dict: Dict[str, Any]) -> 'ReportEnvelope':
        envelope = cls(
            command=report_dict['command'],
            config_hash=report_dict['config_hash'],
            seed=report_dict['seed'],
            payload=report_dict['payload'],
            wall_time=report_dict.get('wall_time', 0.0),
            version=report_dict['version'],
        )
        envelope.payload_hash = report_dict.get('payload_hash', envelope.payload_hash)
        return envelope

    def is_intact(self) -> bool:
        return self.payload_hash == self.calculate_hash()
