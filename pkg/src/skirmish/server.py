"""Match server: hosts the lockstep loop behind the wire protocol.

Two modalities:

* controlled — every match gets a fresh connection; the session ends with
  the match. Any number of independent server instances can run side by
  side, and one instance hosts concurrent matches when clients overlap.
* attached — one persistent session on a single connection (TCP or a named
  local pipe); after END the client sends RESTART for the next match, or
  QUIT to shut the server down. Concurrent extra connections are refused.

The world never advances while any client's commands are outstanding; per
session the number of states sent minus commands received is always 0 or 1.
"""
from __future__ import annotations

import logging
import os
import socket
import threading
from dataclasses import dataclass
from typing import Optional

from . import wire
from .client import attack_closest_policy, idle_policy, parse_endpoint
from .engine import GameConfig, MatchResult, World, apply_commands, init_world, step
from .model import build_player_frame, player_state_ints

log = logging.getLogger("skirmish.server")

HANDSHAKE_TIMEOUT = 10.0

MODE_CONTROLLED = "controlled"
MODE_ATTACHED = "attached"

OPPONENT_IDLE = "builtin_idle"
OPPONENT_ATTACK_CLOSEST = "builtin_attack_closest"
OPPONENT_CLIENT = "client"

_BUILTIN_POLICIES = {
    OPPONENT_IDLE: idle_policy,
    OPPONENT_ATTACK_CLOSEST: attack_closest_policy,
}


class ServerError(Exception):
    pass


class SessionGone(Exception):
    """The client disconnected or broke protocol; the match is aborted."""


@dataclass
class ServerConfig:
    mode: str
    endpoint: object  # "host:port", (host, port), or a pipe path
    game: GameConfig
    opponent: str = OPPONENT_IDLE
    handshake_timeout: float = HANDSHAKE_TIMEOUT

    def validate(self) -> None:
        if self.mode not in (MODE_CONTROLLED, MODE_ATTACHED):
            raise ServerError(f"unknown mode {self.mode!r}")
        if self.opponent not in (OPPONENT_IDLE, OPPONENT_ATTACK_CLOSEST,
                                 OPPONENT_CLIENT):
            raise ServerError(f"unknown opponent {self.opponent!r}")
        if self.mode == MODE_ATTACHED and self.opponent == OPPONENT_CLIENT:
            raise ServerError("attached mode serves a single session; "
                              "use a builtin opponent")
        self.game.validate()


class Session:
    """One connected client within a match loop."""

    def __init__(self, sock: socket.socket, player_id: int):
        self.sock = sock
        self.rfile = sock.makefile("rb")
        self.player_id = player_id
        self.version = wire.PROTOCOL_VERSION
        self.states_sent = 0
        self.commands_received = 0

    def send_payload(self, payload: bytes) -> None:
        try:
            self.sock.sendall(wire.write_framed(payload))
        except OSError as exc:
            raise SessionGone(f"player {self.player_id} send failed: {exc}")

    def send(self, msg: wire.Message) -> None:
        self.send_payload(wire.encode_message(msg))

    def recv(self) -> wire.Message:
        try:
            payload = wire.read_framed(self.rfile)
        except wire.FramingError as exc:
            raise SessionGone(f"player {self.player_id} framing error: {exc}")
        except OSError as exc:
            raise SessionGone(f"player {self.player_id} recv failed: {exc}")
        if payload is None:
            raise SessionGone(f"player {self.player_id} disconnected")
        try:
            return wire.decode_message(payload)
        except wire.CodecError as exc:
            try:
                self.send(wire.ErrorMsg(wire.ERR_MALFORMED, str(exc)))
            except SessionGone:
                pass
            raise SessionGone(f"player {self.player_id} sent garbage: {exc}")

    def close(self) -> None:
        try:
            self.rfile.close()
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


def make_setup(game: GameConfig, player_id: int, seed: int) -> wire.Setup:
    return wire.Setup(player_id=player_id, map_w=game.map_w, map_h=game.map_h,
                      fog=game.fog, frame_skip=game.frame_skip, seed=seed,
                      roster=tuple(game.roster))


def handshake(sock: socket.socket, player_id: int, setup: wire.Setup,
              timeout: float = HANDSHAKE_TIMEOUT) -> Session:
    """Read HELLO, answer SETUP; on failure send ERROR and close."""
    sock.settimeout(timeout)
    session = Session(sock, player_id)
    try:
        try:
            payload = wire.read_framed(session.rfile)
        except (wire.FramingError, OSError) as exc:
            raise SessionGone(f"handshake read failed: {exc}")
        if payload is None:
            raise SessionGone("client closed during handshake")
        try:
            hello = wire.decode_message(payload)
        except wire.CodecError as exc:
            session.send(wire.ErrorMsg(wire.ERR_MALFORMED, str(exc)))
            raise SessionGone(f"malformed hello: {exc}")
        if not isinstance(hello, wire.Hello):
            session.send(wire.ErrorMsg(wire.ERR_MALFORMED,
                                       "first message must be HELLO"))
            raise SessionGone("first message was not HELLO")
        if hello.proto_version != wire.PROTOCOL_VERSION:
            session.send(wire.ErrorMsg(
                wire.ERR_VERSION,
                f"protocol version {hello.proto_version} unsupported; "
                f"server speaks {wire.PROTOCOL_VERSION}"))
            raise SessionGone(f"version mismatch: {hello.proto_version}")
        session.send(setup)
    except SessionGone:
        session.close()
        raise
    sock.settimeout(None)
    return session


def run_match(sessions: list[Session], world: World,
              opponent: str = OPPONENT_IDLE,
              frame_skip: int = 1,
              mode: str = MODE_CONTROLLED) -> MatchResult:
    """Drive one match to its end over connected sessions.

    Sends a per-perspective STATE to every session, waits for exactly one
    COMMANDS from each (the world never advances while any are missing),
    applies them, then steps the simulation. Raises SessionGone if a client
    vanishes; the survivor, if any, is told it won.
    """
    fog = world.fog
    builtin = _BUILTIN_POLICIES.get(opponent) if len(sessions) == 1 else None
    try:
        while world.result is None:
            for sess in sessions:
                mine, theirs = player_state_ints(world, sess.player_id, fog)
                sess.send_payload(wire.encode_state_from_ints(
                    world.tick, mine, theirs))
                sess.states_sent += 1
                assert sess.states_sent - sess.commands_received == 1
            per_player: dict[int, tuple[wire.Command, ...]] = {}
            for sess in sessions:
                msg = sess.recv()
                if isinstance(msg, wire.Commands):
                    sess.commands_received += 1
                    per_player[sess.player_id] = msg.commands
                elif isinstance(msg, wire.Quit):
                    raise SessionGone(f"player {sess.player_id} quit mid-match")
                elif isinstance(msg, wire.Restart):
                    sess.send(wire.ErrorMsg(
                        wire.ERR_ILLEGAL_IN_MODE,
                        "restart not supported in controlled mode"
                        if mode == MODE_CONTROLLED
                        else "restart only legal after END"))
                    raise SessionGone(f"player {sess.player_id} sent restart "
                                      "mid-match")
                else:
                    sess.send(wire.ErrorMsg(wire.ERR_MALFORMED,
                                            "expected COMMANDS"))
                    raise SessionGone(f"player {sess.player_id} broke lockstep")
            if builtin is not None:
                if builtin is idle_policy:
                    per_player[1] = ()
                else:
                    opp_frame = build_player_frame(world, 1, fog)
                    per_player[1] = tuple(builtin(opp_frame, world.roster))
            for player in (0, 1):
                apply_commands(world, player, per_player.get(player, ()))
            step(world, frame_skip)
    except SessionGone:
        # Award the match to whoever is still connected.
        for sess in sessions:
            try:
                sess.send(wire.End(wire.RESULT_WIN, world.tick))
            except SessionGone:
                pass
        raise
    result = world.result
    for sess in sessions:
        if result.winner is None:
            code = wire.RESULT_DRAW
        elif result.winner == sess.player_id:
            code = wire.RESULT_WIN
        else:
            code = wire.RESULT_LOSS
        sess.send(wire.End(code, world.final_tick))
    return result


def _describe(result: MatchResult) -> str:
    return "draw" if result.winner is None else f"player {result.winner} wins"


class GameServer:
    """Owns a listening endpoint and hosts match loops until stopped."""

    def __init__(self, config: ServerConfig):
        config.validate()
        self.config = config
        self._listener: Optional[socket.socket] = None
        self._unix_path: Optional[str] = None
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()
        self._quit_requested = threading.Event()
        self._match_index = 0
        self._match_lock = threading.Lock()
        self.bound_address: Optional[tuple[str, int]] = None

    # -- lifecycle ---------------------------------------------------------

    def _bind(self) -> None:
        kind, addr = parse_endpoint(self.config.endpoint)
        if kind == "tcp":
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                listener.bind(addr)
            except OSError as exc:
                listener.close()
                raise ServerError(f"cannot listen on {addr}: {exc}") from exc
            self.bound_address = listener.getsockname()
        else:
            if os.path.exists(addr):
                os.unlink(addr)
            listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            try:
                listener.bind(addr)
            except OSError as exc:
                listener.close()
                raise ServerError(f"cannot listen on pipe {addr}: {exc}") from exc
            self._unix_path = addr
        listener.listen(8)
        self._listener = listener

    def start(self) -> None:
        self._bind()
        accept = (self._accept_controlled if self.config.mode == MODE_CONTROLLED
                  else self._accept_attached)
        t = threading.Thread(target=accept, name="skirmish-accept", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        if self._unix_path and os.path.exists(self._unix_path):
            try:
                os.unlink(self._unix_path)
            except OSError:
                pass

    def wait(self, timeout: Optional[float] = None) -> None:
        """Block until the server shuts down (attached mode exits on QUIT)."""
        self._quit_requested.wait(timeout)

    def __enter__(self) -> "GameServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def _next_seed(self) -> int:
        with self._match_lock:
            seed = (self.config.game.seed + self._match_index) & ((1 << 64) - 1)
            self._match_index += 1
        return seed

    def _accept(self) -> Optional[socket.socket]:
        assert self._listener is not None
        try:
            sock, _ = self._listener.accept()
        except OSError:
            return None
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass  # pipes have no TCP options
        return sock

    # -- controlled mode ---------------------------------------------------

    def _accept_controlled(self) -> None:
        if self.config.opponent == OPPONENT_CLIENT:
            self._accept_controlled_pairs()
            return
        while not self._stopping.is_set():
            sock = self._accept()
            if sock is None:
                return
            t = threading.Thread(target=self._controlled_solo_match,
                                 args=(sock,), daemon=True)
            t.start()
            self._threads.append(t)

    def _accept_controlled_pairs(self) -> None:
        # Clients expect SETUP right after HELLO, so each connection is
        # handshaken as it arrives, before its opponent shows up.
        while not self._stopping.is_set():
            first = self._accept()
            if first is None:
                return
            seed = self._next_seed()
            game = self.config.game
            try:
                s0 = handshake(first, 0, make_setup(game, 0, seed),
                               self.config.handshake_timeout)
            except SessionGone as exc:
                log.info("player 0 handshake failed: %s", exc)
                continue
            second = self._accept()
            if second is None:
                s0.close()
                return
            try:
                s1 = handshake(second, 1, make_setup(game, 1, seed),
                               self.config.handshake_timeout)
            except SessionGone as exc:
                log.info("player 1 handshake failed: %s", exc)
                s0.close()
                continue
            t = threading.Thread(target=self._run_controlled_match,
                                 args=([s0, s1], seed), daemon=True)
            t.start()
            self._threads.append(t)

    def _controlled_solo_match(self, sock: socket.socket) -> None:
        game = self.config.game
        seed = self._next_seed()
        try:
            session = handshake(sock, 0, make_setup(game, 0, seed),
                                self.config.handshake_timeout)
        except SessionGone as exc:
            log.info("handshake failed: %s", exc)
            return
        self._run_controlled_match([session], seed)

    def _run_controlled_match(self, sessions: list[Session], seed: int) -> None:
        game = self.config.game
        world = init_world(_per_match_config(game, seed))
        try:
            result = run_match(sessions, world, self.config.opponent,
                               game.frame_skip, MODE_CONTROLLED)
            log.info("match controlled: %s at tick %d",
                     _describe(result), world.final_tick)
        except SessionGone as exc:
            log.info("match aborted, counted as loss for leaver: %s", exc)
        finally:
            for sess in sessions:
                sess.close()

    # -- attached mode -----------------------------------------------------

    def _accept_attached(self) -> None:
        active: Optional[threading.Thread] = None
        while not self._stopping.is_set():
            sock = self._accept()
            if sock is None:
                return
            if active is not None and active.is_alive():
                sock.close()  # one persistent session only
                continue
            active = threading.Thread(target=self._attached_session,
                                      args=(sock,), daemon=True)
            active.start()
            self._threads.append(active)

    def _attached_session(self, sock: socket.socket) -> None:
        game = self.config.game
        seed = self._next_seed()
        try:
            session = handshake(sock, 0, make_setup(game, 0, seed),
                                self.config.handshake_timeout)
        except SessionGone as exc:
            log.info("handshake failed: %s", exc)
            return
        try:
            while not self._stopping.is_set():
                world = init_world(_per_match_config(game, seed))
                try:
                    result = run_match([session], world, self.config.opponent,
                                       game.frame_skip, MODE_ATTACHED)
                    log.info("match attached: %s at tick %d",
                             _describe(result), world.final_tick)
                except SessionGone as exc:
                    log.info("attached session lost: %s", exc)
                    return
                # between matches: RESTART continues, QUIT shuts down
                try:
                    msg = session.recv()
                except SessionGone as exc:
                    log.info("attached session closed: %s", exc)
                    return
                if isinstance(msg, wire.Quit):
                    log.info("client quit; shutting down")
                    self._quit_requested.set()
                    self.stop()
                    return
                if not isinstance(msg, wire.Restart):
                    session.send(wire.ErrorMsg(
                        wire.ERR_MALFORMED,
                        "expected RESTART or QUIT after END"))
                    return
                seed = self._next_seed()
                session.send(make_setup(game, 0, seed))
        finally:
            session.close()


def _per_match_config(game: GameConfig, seed: int) -> GameConfig:
    cfg = GameConfig(map_w=game.map_w, map_h=game.map_h, seed=seed,
                     fog=game.fog, frame_skip=game.frame_skip,
                     max_frames=game.max_frames, roster=game.roster,
                     spawns=game.spawns, random_mirror=game.random_mirror)
    return cfg


def serve_controlled(config: ServerConfig) -> GameServer:
    """Start a controlled-mode server; returns the running instance."""
    if config.mode != MODE_CONTROLLED:
        raise ServerError("serve_controlled requires mode=controlled")
    server = GameServer(config)
    server.start()
    return server


def serve_attached(config: ServerConfig) -> GameServer:
    """Start an attached-mode server; returns the running instance."""
    if config.mode != MODE_ATTACHED:
        raise ServerError("serve_attached requires mode=attached")
    server = GameServer(config)
    server.start()
    return server
