"""
Exception hierarchy for the simulator
"""
from typing import Dict, Tuple


class PipeGNNError(Exception):
    """Base class for all simulator errors"""


class ConfigError(PipeGNNError):
    """Invalid or inconsistent run configuration"""


class DatasetFormatError(PipeGNNError):
    """Dataset directory is missing files or has inconsistent payloads"""


class ShapeError(PipeGNNError, ValueError):
    """Matrix dimensions do not line up"""


class CommError(PipeGNNError):
    """Fabric misuse: unexpected message, open epoch, broken conservation"""


class ChannelClosed(CommError):
    """Receive on a channel whose sender has finished"""


class DeadlockError(PipeGNNError):
    """Every live worker is blocked on a receive that can never complete"""

    def __init__(self, blocked: Dict[int, Tuple[int, str]], detail: str = ""):
        self.blocked = dict(blocked)
        listing = ", ".join(f"worker {w} <- ({src}, {tag})" for w, (src, tag) in sorted(self.blocked.items()))
        message = f"deadlock: blocked workers [{listing}]"
        if detail:
            message = f"{message}; {detail}"
        super().__init__(message)


class NumericError(PipeGNNError):
    """Non-finite value produced during training"""


class VersionError(PipeGNNError):
    """Stale-embedding read or write broke the snapshot versioning rule"""
