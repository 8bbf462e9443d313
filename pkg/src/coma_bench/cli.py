"""Command line front end.

Every subcommand builds a ``RunConfig``, validates it before touching the
filesystem or the network, then writes a JSON report (or a CSV table) to
``--out`` or stdout. Failures are reported as a JSON object on stderr and
mapped to the exit code of the error class:

    0 ok, 2 configuration, 3 protocol or authentication, 4 network, 5 timeout

Environment Variables:
    COMA_HOST (str): AS address for ``serve`` and ``device`` (default: 127.0.0.1)
    COMA_PORT (int): AS port (default: 7465)
    COMA_REGISTRY (str): Registry file (default: registry.json)
    COMA_SAT_TIMEOUT (float): Seconds per SAT attack instance (default: 600)

Example:
    ```
    python -m coma_bench --seed 1 activate --n 64 --message-bytes 1024 --mode lcc
    python -m coma_bench --seed 1 activate --tamper frame:3          # exit 3, AuthFailure
    python -m coma_bench attack --sizes 4,8,16 --kinds blk,nonblk --out sat.csv
    python -m coma_bench attack --kind affine --n 4 --blocks 5
    python -m coma_bench cost --summary
    python -m coma_bench health --inject stuck1
    python -m coma_bench --seed 7 enroll --device-id dev-1 --device-out dev-1.json
    python -m coma_bench serve &
    python -m coma_bench device --device dev-1.json
    ```
"""
import argparse
import asyncio
import io
import json
import sys
from dataclasses import asdict
from logging import getLogger, INFO
from typing import Any, Dict, List, Optional, TextIO, Tuple

import numpy as np

from . import attacks, costmodel, protocol, remote
from ._logging import _log_event, configure_logging
from .config import MODES, RunConfig
from .exceptions import ComaError, ConfigError
from .puf import GENUINE, ArbiterPuf, CipherPseudoPuf, puf_health_check
from .rng import EntropySource, Fault, check_source
from .switchnet import NetworkKind

logger = getLogger(__name__)

KINDS = tuple(kind.value for kind in NetworkKind)
PUF_KINDS = ("genuine", "pseudo")


######################
# Helpers:
def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _frame_index(text: str) -> int:
    """Parse ``frame:K``."""
    prefix, _, index = text.partition(":")
    if prefix != "frame" or not index.isdigit():
        raise argparse.ArgumentTypeError(f"expected frame:K, got {text!r}")
    return int(index)


def _derive(seed: Optional[int], k: int) -> Optional[int]:
    return None if seed is None else seed * 1000 + k


def _emit_json(report: Dict[str, Any], out: Optional[str]) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(write, rows: List[Dict[str, Any]], out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as handle:
            write(rows, handle)
    else:
        buffer = io.StringIO()
        write(rows, buffer)
        sys.stdout.write(buffer.getvalue())


def _error_json(error: ComaError) -> Dict[str, Any]:
    return {"type": type(error).__name__, "message": error.message, "exit_code": error.exit_code}


######################
# activate:
def _exchange(trusted: protocol.TrustedChip, untrusted: protocol.UntrustedChip, mode: str, size: int,
              seed: Optional[int], channel: protocol.Channel) -> Dict[str, Any]:
    """Send ``size`` bytes after activation and check what arrives."""
    message = np.random.default_rng(_derive(seed, 5)).bytes(size)
    params = trusted.params
    start = trusted.cycles
    if mode == "dcc":
        expected = costmodel.dcc_message_cycles(params, size, trusted.blocks_in_epoch)
        received = protocol.dcc_recv(untrusted, protocol.dcc_send(trusted, message, channel))
    else:
        expected = costmodel.t_comm_lcc(params, size)
        protocol.lcc_init(trusted, untrusted, channel)
        received = protocol.lcc_recv(untrusted, protocol.lcc_send(trusted, message, channel))
    return {"mode": mode, "bytes": size, "delivered": received == message,
            "cycles": trusted.cycles - start, "expected_cycles": expected}


def cmd_activate(config: RunConfig, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    """One activation, optionally followed by a data transfer or a DAL replay."""
    replayed = None
    if args.replay:
        try:
            with open(args.replay, encoding="utf-8") as handle:
                replayed = protocol.ActivationArtifacts.from_json(json.load(handle)["artifacts"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"Cannot read replay source {args.replay}: {e}") from None

    trusted, untrusted, _ = protocol.build_system(n=config.n, profile=config.profile, u=config.u,
                                                  seed=config.seed, kind=config.kind)
    channel = protocol.Channel()
    for index in args.tamper:
        channel.tamper(index)
    for index in args.drop:
        channel.drop(index)

    params = trusted.params
    report: Dict[str, Any] = {
        "command": "activate", "profile": params.name, "n": params.n, "u": params.u, "kind": config.kind,
        "mode": config.mode, "seed": config.seed, "success": False, "cycles": None,
        "expected_cycles": costmodel.activation_cycles(params, trusted.segments * params.n),
        "epoch": None, "artifacts": None, "message": None, "replay": None, "error": None,
    }
    code = 0
    try:
        result = protocol.activate(trusted, untrusted, channel)
        report.update(success=result.success, cycles=result.cycles_spent, epoch=trusted.epoch,
                      artifacts=result.artifacts.to_json())
        if replayed is not None:
            report["replay"] = {"epoch": replayed.epoch, "segments": len(replayed.dal), "unlocked": False}
            protocol.replay_dal(trusted, untrusted, replayed.dal, channel)
            report["replay"]["unlocked"] = True
        elif config.message_bytes:
            report["message"] = _exchange(trusted, untrusted, config.mode, config.message_bytes, config.seed,
                                          channel)
    except ComaError as e:
        report["success"] = False
        report["error"] = _error_json(e)
        code = e.exit_code
    finally:
        if config.transcript:
            channel.dump(config.transcript)
    return code, report


######################
# attack:
def cmd_attack(config: RunConfig, args: argparse.Namespace) -> List[Dict[str, Any]]:
    """SAT table rows, or affine recovery rows when the kind is ``affine``."""
    kinds = config.kinds or list(KINDS)
    if "affine" in kinds:
        sizes = config.sizes or [config.n]
        rows = [attacks.affine_trial(n, args.blocks if args.blocks is not None else n + 1, args.shift,
                                     _derive(config.seed, i))
                for i, n in enumerate(sizes)]
        kinds = [kind for kind in kinds if kind != "affine"]
        if not kinds:
            return rows
    else:
        rows = []
    return rows + attacks.sweep(config.sizes or [config.n], kinds, config.sat_timeout, config.seed)


######################
# cost:
def cmd_cost(config: RunConfig, args: argparse.Namespace) -> Tuple[List[Dict[str, Any]], Dict[str, Any]]:
    profiles = dict(costmodel.PROFILES)
    if args.profiles_file:
        profiles.update(costmodel.load_profiles(args.profiles_file))
    names = args.profiles or list(profiles)
    unknown = [name for name in names if name not in profiles]
    if unknown:
        raise ConfigError(f"Unknown cost profiles {unknown}; known: {sorted(profiles)}")
    chosen = [profiles[name].with_overrides(n=config.n, u=config.u) for name in names]
    rows = costmodel.sweep(chosen, costmodel.log_sizes(args.min_bytes, args.max_bytes))
    first, second = profiles["coma1"].with_overrides(n=config.n), profiles["coma2"].with_overrides(n=config.n)
    summary = {
        "crossover": costmodel.published_crossover_note(first, second),
        "profiles": {
            params.name: {
                "c_byte_lcc": str(costmodel.c_byte_lcc(params)),
                "c_prng": costmodel.c_prng(params),
                "lcc_init_cycles": costmodel.lcc_init_cycles(params),
                "stall_cycles": costmodel.stall_cycles(params),
                "activation_cycles": costmodel.activation_cycles(params, 256),
            } for params in chosen
        },
    }
    return rows, summary


######################
# health:
def cmd_health(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    """Continuous TRNG health tests and the pseudo-PUF screening."""
    source = EntropySource(fault=args.inject, fault_p=args.bias, seed=_derive(config.seed, 3))
    trng = check_source(source, args.bits, args.min_entropy)
    if args.puf == "genuine":
        oracle = ArbiterPuf(noise=args.noise, seed=_derive(config.seed, 2))
    else:
        key = None if config.seed is None else np.random.default_rng(_derive(config.seed, 6)).bytes(16)
        oracle = CipherPseudoPuf(key)
    puf = puf_health_check(oracle, pairs=args.pairs, seed=_derive(config.seed, 7))
    report = {"command": "health", "seed": config.seed, "inject": args.inject, "trng": asdict(trng),
              "puf": asdict(puf), "passed": trng.passed and puf.verdict == GENUINE}
    _log_event(logger, INFO, "health_report", trng_passed=trng.passed, alarm=trng.alarm, puf=puf.verdict)
    return report


######################
# enroll / serve / device:
def cmd_enroll(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    registry = remote.DeviceRegistry.load(config.registry)
    seed = config.seed if config.seed is not None else int(np.random.default_rng().integers(1 << 31))
    profile = remote.enroll_device(registry, args.device_id, seed, n=config.n, kind=config.kind,
                                   profile=config.profile, noise=args.noise)
    registry.save()
    profile.save(args.device_out or f"{args.device_id}.json")
    return {"command": "enroll", "device_id": args.device_id, "registry": config.registry,
            "device_profile": args.device_out or f"{args.device_id}.json", "devices": len(registry)}


def cmd_serve(config: RunConfig, args: argparse.Namespace) -> int:
    registry = remote.DeviceRegistry.load(config.registry)
    try:
        asyncio.run(remote.as_serve(registry, config.host, config.port, source_seed=config.seed))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_device(config: RunConfig, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    try:
        device = remote.DeviceProfile.load(args.device)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"Cannot read device profile {args.device}: {e}") from None
    report: Dict[str, Any] = {"command": "device", "device_id": device.device_id, "mode": config.mode,
                              "success": False, "cycles": None, "error": None}
    try:
        result = remote.device_run(device.build_untrusted(), config.host, config.port, config.mode,
                                   async_mode=False)
    except ComaError as e:
        report["error"] = _error_json(e)
        return e.exit_code, report
    report.update(success=result.success, cycles=result.cycles_spent)
    return 0, report


######################
# Parser:
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coma_bench", description="COMA activation and data-channel bench")
    parser.add_argument("--log-level", default="WARNING", help="Logging level (default: WARNING)")
    parser.add_argument("--log-json", action="store_true", help="Log JSON lines to stderr")
    parser.add_argument("--seed", type=int, default=None, help="Master seed; fixed seeds give identical reports")
    parser.add_argument("--profile", default="coma2", help="Cost profile: coma1 or coma2 (default: coma2)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("activate", help="Activate a simulated chip pair and optionally send data")
    p.add_argument("--n", type=int, default=64, help="CSN width")
    p.add_argument("--u", type=int, default=None, help="Blocks per TRN (profile default)")
    p.add_argument("--kind", choices=KINDS, default=NetworkKind.LOG_NM.value)
    p.add_argument("--mode", choices=MODES, default="dcc")
    p.add_argument("--message-bytes", type=int, default=0, help="Bytes to send after activation")
    p.add_argument("--tamper", type=_frame_index, action="append", default=[], metavar="frame:K",
                   help="Flip one bit of frame K (0 is the TRN, 1.. the DPOKs)")
    p.add_argument("--drop", type=_frame_index, action="append", default=[], metavar="frame:K")
    p.add_argument("--replay", default=None, help="Activation report whose DAL is replayed under a fresh TRN")
    p.add_argument("--transcript", default=None, help="JSON-lines frame transcript")
    p.add_argument("--out", default=None)

    p = sub.add_parser("attack", help="SAT attack sweep or affine key recovery")
    p.add_argument("--sizes", type=_int_list, default=[])
    p.add_argument("--kinds", "--kind", dest="kinds", type=lambda s: s.split(","), default=[])
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--blocks", type=int, default=None, help="Observed blocks for the affine attack (default n+1)")
    p.add_argument("--shift", action="store_true", help="Rotate the TRN by one bit per block")
    p.add_argument("--timeout", type=float, default=None, help="Seconds per SAT instance")
    p.add_argument("--out", default=None)

    p = sub.add_parser("cost", help="Latency and energy sweep")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--u", type=int, default=None)
    p.add_argument("--profiles", type=lambda s: s.split(","), default=None)
    p.add_argument("--profiles-file", default=None, help="JSON file with extra profiles")
    p.add_argument("--min-bytes", type=int, default=16)
    p.add_argument("--max-bytes", type=int, default=64 * 1024)
    p.add_argument("--summary", action="store_true", help="Print the crossover and per-byte summary instead")
    p.add_argument("--out", default=None)

    p = sub.add_parser("health", help="TRNG health tests and pseudo-PUF screening")
    p.add_argument("--inject", choices=Fault.ALL, default=Fault.NONE)
    p.add_argument("--bias", type=float, default=0.9, help="Probability of a 1 under bias injection")
    p.add_argument("--bits", type=int, default=1_000_000)
    p.add_argument("--min-entropy", type=float, default=1.0)
    p.add_argument("--puf", choices=PUF_KINDS, default="genuine")
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", default=None)

    p = sub.add_parser("enroll", help="Enroll a device: registry entry plus device profile")
    p.add_argument("--device-id", required=True)
    p.add_argument("--registry", default=None)
    p.add_argument("--device-out", default=None)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--kind", choices=KINDS, default=NetworkKind.LOG_NM.value)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve", help="Run the authentication server")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--registry", default=None)

    p = sub.add_parser("device", help="Activate a device against a running server")
    p.add_argument("--device", required=True, help="Device profile written by enroll")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--mode", choices=MODES, default="dcc")
    p.add_argument("--out", default=None)
    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """RunConfig from parsed flags; unset flags keep the environment defaults."""
    overrides = {name: getattr(args, name) for name in ("n", "u", "mode", "kind", "out", "transcript", "host",
                                                        "port", "registry")
                 if getattr(args, name, None) is not None}
    if getattr(args, "timeout", None) is not None:
        overrides["sat_timeout"] = args.timeout
    for name in ("sizes", "kinds", "message_bytes"):
        if getattr(args, name, None):
            overrides[name] = getattr(args, name)
    return RunConfig(profile=args.profile, seed=args.seed, command=args.command, **overrides).validate()


def run(args: argparse.Namespace, stderr: Optional[TextIO] = None) -> int:
    """Dispatch one parsed command line; return the exit code."""
    stderr = stderr or sys.stderr
    try:
        config = config_from_args(args)
        if args.command == "activate":
            code, report = cmd_activate(config, args)
            _emit_json(report, config.out)
            if report["error"]:
                stderr.write(json.dumps({"error": report["error"]}) + "\n")
            return code
        if args.command == "attack":
            _emit_csv(attacks.write_csv, cmd_attack(config, args), config.out)
        elif args.command == "cost":
            rows, summary = cmd_cost(config, args)
            if args.summary:
                _emit_json(summary, config.out)
            else:
                _emit_csv(costmodel.write_csv, rows, config.out)
        elif args.command == "health":
            _emit_json(cmd_health(config, args), config.out)
        elif args.command == "enroll":
            _emit_json(cmd_enroll(config, args), config.out)
        elif args.command == "serve":
            return cmd_serve(config, args)
        elif args.command == "device":
            code, report = cmd_device(config, args)
            _emit_json(report, config.out)
            if report["error"]:
                stderr.write(json.dumps({"error": report["error"]}) + "\n")
            return code
    except ComaError as e:
        stderr.write(json.dumps({"error": _error_json(e)}) + "\n")
        return e.exit_code
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
