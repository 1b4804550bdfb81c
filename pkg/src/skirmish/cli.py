"""Operator entry points: serve, bot, replay verify/dump, bench.

Output is line-oriented text. Exit codes are part of the contract:
serve/replay use 0 ok, 1 detected failure, 2 usage; bot exits 0 win,
1 loss, 2 draw, 3 connection failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import threading
import time
from typing import Optional, Sequence

from . import replay as replay_mod
from . import wire
from .client import POLICIES, ClientError, connect, play_match
from .engine import ConfigError, GameConfig, load_game_config
from .model import roster_map, validate_frame
from .server import (MODE_ATTACHED, MODE_CONTROLLED, OPPONENT_ATTACK_CLOSEST,
                     OPPONENT_CLIENT, OPPONENT_IDLE, GameServer, ServerConfig,
                     ServerError)

log = logging.getLogger("skirmish.cli")

_OPPONENTS = {
    "idle": OPPONENT_IDLE,
    "attack_closest": OPPONENT_ATTACK_CLOSEST,
    "client": OPPONENT_CLIENT,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skirmish",
        description="deterministic micro-RTS environment over a lockstep "
                    "wire protocol")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="host matches")
    p_serve.add_argument("--mode", choices=[MODE_CONTROLLED, MODE_ATTACHED],
                         required=True)
    group = p_serve.add_mutually_exclusive_group(required=True)
    group.add_argument("--listen", metavar="HOST:PORT")
    group.add_argument("--pipe", metavar="PATH")
    p_serve.add_argument("--config", metavar="FILE", required=True)
    p_serve.add_argument("--opponent", choices=sorted(_OPPONENTS),
                         default="idle")

    p_bot = sub.add_parser("bot", help="play one match with a scripted policy")
    group = p_bot.add_mutually_exclusive_group(required=True)
    group.add_argument("--connect", metavar="HOST:PORT")
    group.add_argument("--pipe", metavar="PATH")
    p_bot.add_argument("--policy", choices=sorted(POLICIES),
                       default="attack_closest")
    p_bot.add_argument("--record", metavar="OUT.tcr")
    p_bot.add_argument("--keyframe-interval", type=int,
                       default=replay_mod.DEFAULT_KEYFRAME_INTERVAL)
    p_bot.add_argument("--name", default="skirmish-bot")

    p_replay = sub.add_parser("replay", help="verify or dump a replay file")
    p_replay.add_argument("action", choices=["verify", "dump"])
    p_replay.add_argument("path")

    p_bench = sub.add_parser("bench", help="measure lockstep throughput")
    p_bench.add_argument("--frames", type=int, default=10000)
    p_bench.add_argument("--units", type=int, default=5,
                         help="units per side")
    p_bench.add_argument("--seed", type=int, default=1)
    return parser


# ---------------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    try:
        game = load_game_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    endpoint = args.listen if args.listen else args.pipe
    config = ServerConfig(mode=args.mode, endpoint=endpoint, game=game,
                          opponent=_OPPONENTS[args.opponent])
    try:
        server = GameServer(config)
        server.start()
    except ServerError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    if server.bound_address is not None:
        host, port = server.bound_address
        print(f"listening {host}:{port}", flush=True)
    else:
        print(f"listening pipe {endpoint}", flush=True)
    try:
        if args.mode == MODE_ATTACHED:
            server.wait()
        else:
            threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_bot(args: argparse.Namespace) -> int:
    endpoint = args.connect if args.connect else args.pipe
    policy = POLICIES[args.policy]
    try:
        client = connect(endpoint, name=args.name)
    except ClientError as exc:
        print(f"connection failure: {exc}", file=sys.stderr)
        return 3
    writer: Optional[replay_mod.ReplayWriter] = None
    try:
        if args.record:
            writer = replay_mod.ReplayWriter(args.record, client.state.setup,
                                             args.keyframe_interval)
        on_frame = writer.add_frame if writer is not None else None
        result = play_match(client, policy, on_frame=on_frame)
        if writer is not None:
            assert client.state.final_frame is not None
            writer.finish(wire.End(result, client.state.final_frame))
            writer = None
        label = {wire.RESULT_WIN: "win", wire.RESULT_LOSS: "loss",
                 wire.RESULT_DRAW: "draw"}[result]
        print(f"result {label} final_frame {client.state.final_frame}")
        return {wire.RESULT_WIN: 0, wire.RESULT_LOSS: 1,
                wire.RESULT_DRAW: 2}[result]
    except ClientError as exc:
        print(f"match failed: {exc}", file=sys.stderr)
        return 3
    finally:
        if writer is not None:
            writer.abort()
        client.close()


def verify_replay(path: str, out=sys.stderr) -> bool:
    """Re-validate every reconstructed frame; True when the file is sound."""
    try:
        reader = replay_mod.ReplayReader(path)
    except (OSError, replay_mod.ReplayError) as exc:
        print(f"unreadable: {exc}", file=out)
        return False
    setup = reader.setup
    types = roster_map(setup.roster)
    ok = True
    prev: Optional[int] = None
    try:
        for frame in reader.frames():
            violations = validate_frame(frame, setup.map_w, setup.map_h, types)
            for v in violations:
                print(f"frame {frame.frame_number}: {v}", file=out)
                ok = False
            if prev is not None and frame.frame_number - prev != setup.frame_skip:
                print(f"frame {frame.frame_number}: expected step of "
                      f"{setup.frame_skip} after {prev}", file=out)
                ok = False
            prev = frame.frame_number
    except replay_mod.ReplayError as exc:
        print(f"corrupt: {exc}", file=out)
        return False
    finally:
        reader.close()
    if reader.end is None:
        print("missing END trailer", file=out)
        return False
    return ok


def cmd_replay(args: argparse.Namespace) -> int:
    if args.action == "verify":
        return 0 if verify_replay(args.path) else 1
    try:
        reader = replay_mod.ReplayReader(args.path)
        with reader:
            for frame in reader.frames():
                total_hp = sum(u.hp for u in frame.all_units())
                print(f"frame {frame.frame_number} "
                      f"myself {len(frame.units_myself)} "
                      f"enemy {len(frame.units_enemy)} "
                      f"total_hp {total_hp}")
    except (OSError, replay_mod.ReplayError) as exc:
        print(f"corrupt: {exc}", file=sys.stderr)
        return 1
    return 0


def run_bench(frames: int, units: int, seed: int) -> dict:
    """Lockstep throughput over loopback TCP, full encode/decode included.

    The exchange is strict ping-pong, so both endpoints are pinned to one
    core for the measurement; cross-core wakeups only add latency here.
    """
    old_affinity = None
    if hasattr(os, "sched_setaffinity"):
        try:
            old_affinity = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {min(old_affinity)})
        except OSError:
            old_affinity = None
    try:
        return _run_bench_match(frames, units, seed)
    finally:
        if old_affinity is not None:
            os.sched_setaffinity(0, old_affinity)


def _run_bench_match(frames: int, units: int, seed: int) -> dict:
    game = GameConfig(seed=seed, fog=False, frame_skip=1, max_frames=frames,
                      random_mirror=(units, 0))
    config = ServerConfig(mode=MODE_CONTROLLED, endpoint=("127.0.0.1", 0),
                          game=game, opponent=OPPONENT_IDLE)
    server = GameServer(config)
    server.start()
    n = 0
    state_bytes = 0
    try:
        client = connect(server.bound_address)
        rfile, sock = client._rfile, client._sock
        no_commands = wire.Commands(())
        decode = wire.decode_message
        read = wire.read_framed
        t0 = time.perf_counter()
        while True:
            payload = read(rfile)
            msg = decode(payload)
            if not isinstance(msg, wire.State):
                break  # END
            state_bytes += len(payload)
            n += 1
            sock.sendall(wire.write_framed(wire.encode_message(no_commands)))
        elapsed = time.perf_counter() - t0
        client.close()
    finally:
        server.stop()
    return {
        "frames": n,
        "elapsed": elapsed,
        "frames_per_sec": n / elapsed,
        "bytes_per_frame": state_bytes / n,
    }


def cmd_bench(args: argparse.Namespace) -> int:
    report = run_bench(args.frames, args.units, args.seed)
    print(f"frames {report['frames']} "
          f"elapsed {report['elapsed']:.3f}s "
          f"frames_per_sec {report['frames_per_sec']:.0f} "
          f"bytes_per_frame {report['bytes_per_frame']:g}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    args = _build_parser().parse_args(argv)
    handlers = {
        "serve": cmd_serve,
        "bot": cmd_bot,
        "replay": cmd_replay,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except BrokenPipeError:
        # downstream pager/head closed the pipe; exit quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
