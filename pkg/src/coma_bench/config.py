"""Run configuration for the command line front end.

Flags override environment variables, which override the built-in defaults.

Environment Variables:
    COMA_HOST (str): AS address (default: 127.0.0.1)
    COMA_PORT (int): AS port (default: 7465)
    COMA_REGISTRY (str): Registry file (default: registry.json)
    COMA_SAT_TIMEOUT (float): Seconds per SAT attack instance (default: 600)
"""
import os
from dataclasses import dataclass, field
from typing import List, Optional

from . import costmodel
from ._utils import is_power_of_two
from .exceptions import ConfigError
from .switchnet import NetworkKind

MODES = ("dcc", "lcc")
MIN_WIDTH = 4
MAX_WIDTH = 64
ATTACK_KINDS = tuple(kind.value for kind in NetworkKind) + ("affine",)
BUS_FREE_COMMANDS = ("attack", "health")


@dataclass
class RunConfig:
    """Validated parameters of one CLI command.

    Attributes:
        profile: Cost profile name
        n: CSN width
        u: TRN update period (profile default when None)
        mode: Data channel, "dcc" or "lcc"
        kind: CSN topology, "blk" or "nonblk"
        seed: Master seed; fixed seeds give byte-identical reports
        out: Report path (stdout when None)
        transcript: Transcript path
        host: AS address
        port: AS port
        registry: Registry file
        sat_timeout: Seconds per SAT attack instance
        sizes: Attack or sweep sizes
        kinds: Attack kinds ("blk", "nonblk" or "affine")
        message_bytes: Bytes sent after activation
        command: CLI subcommand; attack and health never move data over the bus
    """
    profile: str = "coma2"
    n: int = 64
    u: Optional[int] = None
    mode: str = "dcc"
    kind: str = NetworkKind.LOG_NM.value
    seed: Optional[int] = None
    out: Optional[str] = None
    transcript: Optional[str] = None
    host: str = field(default_factory=lambda: os.getenv("COMA_HOST", "127.0.0.1"))
    port: int = field(default_factory=lambda: int(os.getenv("COMA_PORT", "7465")))
    registry: str = field(default_factory=lambda: os.getenv("COMA_REGISTRY", "registry.json"))
    sat_timeout: float = field(default_factory=lambda: float(os.getenv("COMA_SAT_TIMEOUT", "600")))
    sizes: List[int] = field(default_factory=list)
    kinds: List[str] = field(default_factory=list)
    message_bytes: int = 0
    command: Optional[str] = None

    def validate(self) -> "RunConfig":
        """Check every field against the preconditions of the modules it feeds.

        Raises:
            ConfigError: On the first invalid field
        """
        params = costmodel.get_profile(self.profile)
        for width in [self.n] + list(self.sizes):
            if not is_power_of_two(width) or not MIN_WIDTH <= width <= MAX_WIDTH:
                raise ConfigError(f"Width {width} must be a power of two in [{MIN_WIDTH}, {MAX_WIDTH}]")
        if self.command not in BUS_FREE_COMMANDS and self.n % params.bw:
            raise ConfigError(f"Bus width {params.bw} does not divide n={self.n}")
        if self.u is not None and not 1 <= self.u < self.n:
            raise ConfigError(f"TRN update period U={self.u} must satisfy 1 <= U < n={self.n}")
        for kind in self.kinds:
            if kind not in ATTACK_KINDS:
                raise ConfigError(f"Unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}")
        if self.message_bytes < 0:
            raise ConfigError("Message size must not be negative")
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode {self.mode!r}; expected one of {MODES}")
        try:
            NetworkKind(self.kind)
        except ValueError:
            raise ConfigError(f"Unknown network kind {self.kind!r}; expected blk or nonblk") from None
        if not 0 <= self.port < 65536:
            raise ConfigError(f"Port {self.port} is out of range")
        if self.sat_timeout <= 0:
            raise ConfigError("SAT timeout must be positive")
        return self
