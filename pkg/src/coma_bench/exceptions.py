"""COMA bench exception classes.

This module provides the exception hierarchy raised by the switching network,
the ciphers, the random number generators, the PUF, the activation protocol
and the remote activation service.

Every class carries an ``exit_code`` class attribute that the command line
front end maps to the process exit status:

- 0: success
- 2: configuration errors
- 3: protocol and authentication failures
- 4: network failures
- 5: attack timeouts

Example:
    ```python
    from coma_bench import protocol
    from coma_bench.exceptions import AuthFailure, UnlockFailure

    try:
        protocol.activate(trusted, untrusted)
    except AuthFailure as e:
        print(f"Frame rejected: {e.message}")
    except UnlockFailure as e:
        print(f"Circuit stayed locked: {e.message}")
    ```
"""


class ComaError(Exception):
    """Base class for COMA bench exceptions.

    All custom exceptions in this module inherit from this class, allowing for
    catch-all error handling of bench-specific errors.

    Attributes:
        message: Human-readable error description
        exit_code: Process exit status the CLI reports for this error
    """
    exit_code: int = 1

    def __init__(self, message: str, *args, **kw_args) -> None:
        """Initialize base error.

        Args:
            message: Error description
            *args: Additional positional arguments for Exception class
            **kw_args: Additional attributes to add to the exception
        """
        self.message: str = message
        self.__dict__.update(kw_args)
        super().__init__(message, *args)


######################
# Configuration:
class ConfigError(ComaError):
    """Raised when a parameter violates a module precondition."""
    exit_code = 2


class TopologyError(ConfigError):
    """Raised when a switching network cannot be built for the requested size."""


class TrnLengthError(ConfigError):
    """Raised when a TRN does not carry exactly the bits its topology consumes.

    Attributes:
        expected: Number of configuration bits the topology needs
        actual: Number of bits supplied
    """
    def __init__(self, expected: int, actual: int, *args, **kw_args) -> None:
        message = f"TRN length mismatch: topology needs {expected} bits, got {actual}"
        super().__init__(message, *args, expected=expected, actual=actual, **kw_args)


######################
# Protocol:
class ProtocolError(ComaError):
    """Base class for failures of the activation and communication protocols."""
    exit_code = 3


class AuthFailure(ProtocolError):
    """Raised when an authenticated frame, tag or PUF proof does not verify."""


class UnlockFailure(ProtocolError):
    """Raised when the obfuscated circuit fails its functional self-check."""


class EpochMismatch(ProtocolError):
    """Raised when a frame was produced under a TRN epoch the receiver does not hold.

    Attributes:
        expected: Epoch held by the receiver
        received: Epoch carried by the frame
    """
    def __init__(self, expected: int, received: int, *args, **kw_args) -> None:
        message = f"TRN epoch mismatch: receiver holds {expected}, frame carries {received}"
        super().__init__(message, *args, expected=expected, received=received, **kw_args)


class Desynchronization(ProtocolError):
    """Raised when the LCC block counters of the two endpoints disagree."""


class NonceReuse(ProtocolError):
    """Raised when a public message number would be used twice under one key."""


class UnknownDevice(ProtocolError):
    """Raised when a device id is not present in the registry."""


class FrameError(ProtocolError):
    """Raised when bytes on the wire do not decode to a valid frame."""


class ReadoutDisabled(ProtocolError):
    """Raised when the one-time PUF readout is attempted a second time."""


class ReadoutDecryptError(ProtocolError):
    """Raised when a PUF readout ciphertext fails its embedded checksum."""


class KeyInstability(ProtocolError):
    """Raised when a PUF key bit has no majority among its votes.

    Attributes:
        bit_index: Position of the unstable key bit
    """


class HealthAlarm(ProtocolError):
    """Raised when a continuous entropy health test fails.

    Attributes:
        kind: "RCT" (repetition count) or "APT" (adaptive proportion)
        count: Counter value that breached the cutoff
        cutoff: The cutoff that was breached
    """
    def __init__(self, kind: str, count: int, cutoff: int, *args, **kw_args) -> None:
        message = f"Entropy health alarm {kind}: count {count} reached cutoff {cutoff}"
        super().__init__(message, *args, kind=kind, count=count, cutoff=cutoff, **kw_args)


class ReseedError(ProtocolError):
    """Raised when a PRNG is seeded a second time within one activation."""


class UnseededError(ProtocolError):
    """Raised when output is requested from a PRNG that was never seeded."""


######################
# Network:
class NetworkError(ComaError):
    """Raised when the transport fails (refused, reset, closed mid-stream, timed out)."""
    exit_code = 4


######################
# Attacks:
class AttackTimeout(ComaError):
    """Raised when a SAT attack exceeds its time limit.

    Attributes:
        iterations: Distinguishing inputs found before the timeout
        elapsed: Seconds spent
    """
    exit_code = 5

    def __init__(self, iterations: int, elapsed: float, *args, **kw_args) -> None:
        message = f"SAT attack timed out after {iterations} iterations ({elapsed:.2f}s)"
        super().__init__(message, *args, iterations=iterations, elapsed=elapsed, **kw_args)
