"""COMA activation and communication bench.

This package models a trusted/untrusted chip pair that activates a locked
circuit with a dynamic activation license and then exchanges data through a
lightweight switching-network cipher. It also carries the attacks and the
cost model used to size the cipher.

Example:
    Activate a chip pair and send a message:

    ```python
    from coma_bench import protocol

    trusted, untrusted, _ = protocol.build_system(n=64, profile="coma2", seed=1)
    result = protocol.activate(trusted, untrusted)
    frames = protocol.dcc_send(trusted, b"payload")
    assert protocol.dcc_recv(untrusted, frames) == b"payload"
    ```

Modules:
    - switchnet: CSN/RCSN switching networks and their netlists
    - cipher: ACORN-128 and AES-GCM behind one AEAD interface
    - rng: Entropy source model, health tests and PRNGs
    - puf: Arbiter PUF, key derivation, enrollment and pseudo-PUF screening
    - circuit: Locked circuit with a volatile key register
    - protocol: Activation, DCC and LCC state machines
    - remote: Authentication server and device client over TCP
    - attacks: SAT and affine key recovery
    - costmodel: Latency and energy models
    - cli: Command line front end
"""
from .exceptions import ComaError, ConfigError, ProtocolError, AuthFailure, UnlockFailure, NetworkError, \
    AttackTimeout, HealthAlarm
from .protocol import build_system, activate, dcc_send, dcc_recv, lcc_init, lcc_send, lcc_recv
__version__ = "0.1.0"

__all__ = ["ComaError", "ConfigError", "ProtocolError", "AuthFailure", "UnlockFailure", "NetworkError",
           "AttackTimeout", "HealthAlarm", "build_system", "activate", "dcc_send", "dcc_recv", "lcc_init",
           "lcc_send", "lcc_recv"]
