"""Runtime configuration and environment contract.

A launched rank reconstructs its configuration from environment variables:

    PGAS_RANK          rank id of this process
    PGAS_NRANKS        total rank count
    PGAS_COORD         host:port of the bootstrap coordinator (rank 0)
    PGAS_SEGMENT_SIZE  per-rank segment size, suffixes K/M/G accepted
    PGAS_CHUNK_SIZE    RMA chunk size (optional)
    PGAS_VERBOSE       emit statistics at finalize when set to 1

In-process test worlds build RuntimeConfig directly instead.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .errors import ConfigInvalid

DEFAULT_SEGMENT_SIZE = 64 * 1024 * 1024
DEFAULT_CHUNK_SIZE = 1024 * 1024
DEFAULT_AM_PAYLOAD_MAX = 64 * 1024
DEFAULT_BOOTSTRAP_TIMEOUT = 30.0

_SUFFIXES = {"K": 1024, "M": 1024**2, "G": 1024**3}


def parse_size(text: str | int) -> int:
    """Parse a byte count with optional K/M/G suffix ("64M" -> 67108864)."""
    if isinstance(text, int):
        return text
    s = str(text).strip().upper()
    if not s:
        raise ConfigInvalid("empty size value")
    mult = 1
    if s[-1] in _SUFFIXES:
        mult = _SUFFIXES[s[-1]]
        s = s[:-1]
    try:
        value = int(s)
    except ValueError:
        raise ConfigInvalid(f"unparseable size {text!r}") from None
    return value * mult


def parse_endpoint(text: str) -> tuple[str, int]:
    """Parse "host:port"."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigInvalid(f"endpoint {text!r} is not host:port")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigInvalid(f"endpoint {text!r} has a non-numeric port") from None


@dataclass
class RuntimeConfig:
    """Everything a rank needs to join a job."""

    nranks: int
    my_rank: int
    coordinator: tuple[str, int] | None = None
    transport: str = "socket"  # "socket" (ranks are processes) or "inproc"
    segment_size: int = DEFAULT_SEGMENT_SIZE
    chunk_size: int = DEFAULT_CHUNK_SIZE
    am_payload_max: int = DEFAULT_AM_PAYLOAD_MAX
    auto_progress: bool = True
    bootstrap_timeout: float = DEFAULT_BOOTSTRAP_TIMEOUT
    verbose: bool = False
    strict_finalize: bool = False
    env: dict = field(default_factory=dict, repr=False)

    def validate(self) -> "RuntimeConfig":
        if self.nranks < 1:
            raise ConfigInvalid(f"nranks must be >= 1, got {self.nranks}")
        if not 0 <= self.my_rank < self.nranks:
            raise ConfigInvalid(
                f"rank {self.my_rank} outside [0, {self.nranks})")
        if self.transport not in ("socket", "inproc"):
            raise ConfigInvalid(f"unknown transport {self.transport!r}")
        if self.transport == "socket" and self.nranks > 1 and not self.coordinator:
            raise ConfigInvalid("socket transport needs a coordinator address")
        for name in ("segment_size", "chunk_size", "am_payload_max"):
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        return self

    @classmethod
    def from_env(cls, environ=None) -> "RuntimeConfig":
        """Build the configuration a launcher provided via the environment."""
        env = os.environ if environ is None else environ
        try:
            my_rank = int(env["PGAS_RANK"])
            nranks = int(env["PGAS_NRANKS"])
        except KeyError as exc:
            raise ConfigInvalid(f"missing environment variable {exc.args[0]}") from None
        except ValueError as exc:
            raise ConfigInvalid(f"bad rank environment value: {exc}") from None
        coord = None
        if "PGAS_COORD" in env:
            coord = parse_endpoint(env["PGAS_COORD"])
        elif nranks > 1:
            raise ConfigInvalid("missing environment variable PGAS_COORD")
        cfg = cls(
            nranks=nranks,
            my_rank=my_rank,
            coordinator=coord,
            segment_size=parse_size(env.get("PGAS_SEGMENT_SIZE", DEFAULT_SEGMENT_SIZE)),
            chunk_size=parse_size(env.get("PGAS_CHUNK_SIZE", DEFAULT_CHUNK_SIZE)),
            verbose=env.get("PGAS_VERBOSE", "0") not in ("0", "", "false"),
        )
        return cfg.validate()
