"""Agent-facing client: connect, receive state, send commands.

The loop contract is strictly alternating: every received STATE must be
answered with exactly one COMMANDS message before the next receive. The
handle enforces this locally, so a client program cannot commit a protocol
violation. A handle has a single owner and must not be shared across
threads; separate handles to separate servers are independent.
"""
from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from . import wire
from .model import Frame, UnitState, UnitTypeSpec, roster_map, squared_distance

DEFAULT_CLIENT_NAME = "skirmish-client"


class ClientError(Exception):
    pass


class UsageError(ClientError):
    """Local misuse of the handle (alternation or lifecycle violation)."""


class ServerFault(ClientError):
    """The server sent ERROR or something the protocol does not allow."""


Endpoint = Union[str, tuple[str, int]]


def parse_endpoint(endpoint: Endpoint) -> tuple[str, Union[str, tuple[str, int]]]:
    """Classify an endpoint: 'host:port' means TCP, anything else a pipe path."""
    if isinstance(endpoint, tuple):
        return "tcp", endpoint
    if endpoint.startswith(("/", "./")) or ":" not in endpoint:
        return "unix", endpoint
    host, _, port = endpoint.rpartition(":")
    return "tcp", (host, int(port))


def dial(endpoint: Endpoint, timeout: Optional[float] = None) -> socket.socket:
    kind, addr = parse_endpoint(endpoint)
    if kind == "tcp":
        sock = socket.create_connection(addr, timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    else:
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        if timeout is not None:
            sock.settimeout(timeout)
        sock.connect(addr)
    return sock


@dataclass
class ClientState:
    setup: wire.Setup
    latest_frame: Optional[Frame] = None
    game_ended: bool = False
    last_result: Optional[int] = None  # wire result code once ended
    final_frame: Optional[int] = None


class GameClient:
    """One connected agent session. Create via `connect`."""

    def __init__(self, sock: socket.socket, rfile, setup: wire.Setup,
                 capture_transcript: bool = False):
        self._sock = sock
        self._rfile = rfile
        self._awaiting_commands = False
        self._closed = False
        self.state = ClientState(setup=setup)
        self.transcript: Optional[list[tuple[str, bytes]]] = (
            [] if capture_transcript else None)

    # -- lifecycle ---------------------------------------------------------

    @property
    def player_id(self) -> int:
        return self.state.setup.player_id

    @property
    def frame_skip(self) -> int:
        return self.state.setup.frame_skip

    @property
    def roster(self) -> tuple[UnitTypeSpec, ...]:
        return self.state.setup.roster

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._rfile.close()
            finally:
                self._sock.close()

    def __enter__(self) -> "GameClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- protocol ----------------------------------------------------------

    def _send(self, msg: wire.Message) -> None:
        payload = wire.encode_message(msg)
        if self.transcript is not None:
            self.transcript.append(("send", payload))
        try:
            self._sock.sendall(wire.write_framed(payload))
        except OSError as exc:
            raise ClientError(f"connection lost while sending: {exc}") from exc

    def _recv(self) -> wire.Message:
        try:
            payload = wire.read_framed(self._rfile)
        except wire.FramingError as exc:
            raise ServerFault(f"bad framing from server: {exc}") from exc
        except OSError as exc:
            raise ClientError(f"connection lost while receiving: {exc}") from exc
        if payload is None:
            raise ClientError("server closed the connection")
        if self.transcript is not None:
            self.transcript.append(("recv", payload))
        try:
            return wire.decode_message(payload)
        except wire.CodecError as exc:
            raise ServerFault(f"undecodable message from server: {exc}") from exc

    def receive(self, timeout: Optional[float] = None) -> ClientState:
        """Block for the next STATE or END and fold it into the state.

        Blocks indefinitely by default; pass `timeout` (seconds) to raise
        TimeoutError instead of waiting forever.
        """
        if self._closed:
            raise UsageError("receive on a closed client")
        if self._awaiting_commands:
            raise UsageError("receive called twice without send_commands")
        if self.state.game_ended:
            raise UsageError("receive after END; restart or close first")
        if timeout is None:
            msg = self._recv()
        else:
            self._sock.settimeout(timeout)
            try:
                msg = self._recv()
            except ClientError as exc:
                if isinstance(exc.__cause__, socket.timeout):
                    raise TimeoutError("receive timed out") from None
                raise
            finally:
                self._sock.settimeout(None)
        if isinstance(msg, wire.State):
            self.state.latest_frame = msg.frame
            self._awaiting_commands = True
        elif isinstance(msg, wire.End):
            self.state.game_ended = True
            self.state.last_result = msg.result
            self.state.final_frame = msg.final_frame
        elif isinstance(msg, wire.ErrorMsg):
            raise ServerFault(f"server error {msg.code}: {msg.text}")
        else:
            raise ServerFault(f"unexpected message {type(msg).__name__}")
        return self.state

    def send_commands(self, cmds: Sequence[wire.Command]) -> None:
        """Answer the pending STATE with one COMMANDS message (may be empty)."""
        if self._closed:
            raise UsageError("send_commands on a closed client")
        if self.state.game_ended:
            raise UsageError("send_commands after END")
        if not self._awaiting_commands:
            raise UsageError("send_commands without a pending state")
        if len(cmds) > wire.MAX_COMMANDS:
            raise UsageError(f"{len(cmds)} commands exceeds cap of "
                             f"{wire.MAX_COMMANDS}")
        self._send(wire.Commands(tuple(cmds)))
        self._awaiting_commands = False

    def restart(self) -> None:
        """Ask an attached-mode server for the next match; refreshes SETUP."""
        if not self.state.game_ended:
            raise UsageError("restart before END")
        self._send(wire.Restart())
        msg = self._recv()
        if isinstance(msg, wire.ErrorMsg):
            raise ServerFault(f"server error {msg.code}: {msg.text}")
        if not isinstance(msg, wire.Setup):
            raise ServerFault(f"expected SETUP after restart, got "
                              f"{type(msg).__name__}")
        self.state = ClientState(setup=msg)
        self._awaiting_commands = False

    def quit(self) -> None:
        try:
            self._send(wire.Quit())
        finally:
            self.close()


def connect(endpoint: Endpoint, name: str = DEFAULT_CLIENT_NAME,
            requested_role: int = 0, timeout: Optional[float] = None,
            capture_transcript: bool = False) -> GameClient:
    """Open a session: dial, send HELLO, wait for SETUP."""
    try:
        sock = dial(endpoint, timeout=timeout)
    except OSError as exc:
        raise ClientError(f"cannot connect to {endpoint!r}: {exc}") from exc
    rfile = sock.makefile("rb")
    try:
        hello = wire.Hello(wire.PROTOCOL_VERSION, name, requested_role)
        hello_payload = wire.encode_message(hello)
        sock.sendall(wire.write_framed(hello_payload))
        payload = wire.read_framed(rfile)
        if payload is None:
            raise ClientError("server closed the connection during handshake")
        msg = wire.decode_message(payload)
    except (wire.CodecError, OSError) as exc:
        sock.close()
        raise ClientError(f"handshake failed: {exc}") from exc
    if isinstance(msg, wire.ErrorMsg):
        sock.close()
        raise ServerFault(f"server rejected handshake, error {msg.code}: "
                          f"{msg.text}")
    if not isinstance(msg, wire.Setup):
        sock.close()
        raise ServerFault(f"expected SETUP, got {type(msg).__name__}")
    sock.settimeout(None)  # the dial timeout must not cap lockstep waits
    client = GameClient(sock, rfile, msg, capture_transcript=capture_transcript)
    if client.transcript is not None:
        client.transcript.append(("send", hello_payload))
        client.transcript.append(("recv", payload))
    return client


# ---------------------------------------------------------------------------
# rule helpers

def _types(roster) -> dict[int, UnitTypeSpec]:
    return roster if isinstance(roster, dict) else roster_map(roster)


def can_hit(attacker: UnitState, target: UnitState, roster) -> bool:
    """True when the attacker has a weapon matching the target's air/ground
    class with nonzero damage."""
    if _types(roster)[target.type].flyer:
        return attacker.awattack > 0
    return attacker.gwattack > 0


def in_range(attacker: UnitState, target: UnitState, roster) -> bool:
    if not can_hit(attacker, target, roster):
        return False
    if _types(roster)[target.type].flyer:
        weapon_range = attacker.awrange
    else:
        weapon_range = attacker.gwrange
    return squared_distance(attacker.position, target.position) \
        <= weapon_range * weapon_range


def closest_enemy(frame: Frame, unit_id: int) -> Optional[int]:
    """Nearest visible enemy by squared distance; ties go to the lower id."""
    me = frame.units_myself.get(unit_id)
    if me is None:
        raise ClientError(f"unit {unit_id} is not in units_myself")
    best: Optional[int] = None
    best_d = -1
    for uid in sorted(frame.units_enemy):
        d = squared_distance(me.position, frame.units_enemy[uid].position)
        if best is None or d < best_d:
            best, best_d = uid, d
    return best


# ---------------------------------------------------------------------------
# reference policies

def idle_policy(frame: Frame, roster) -> list[wire.Command]:
    return []


def attack_closest_policy(frame: Frame, roster) -> list[wire.Command]:
    """Every own unit attacks its closest visible enemy, recomputed each
    frame."""
    cmds: list[wire.Command] = []
    for uid in sorted(frame.units_myself):
        target = closest_enemy(frame, uid)
        if target is not None:
            cmds.append(wire.Attack(uid, target))
    return cmds


POLICIES = {
    "idle": idle_policy,
    "attack_closest": attack_closest_policy,
}


def play_match(client: GameClient, policy=attack_closest_policy,
               on_frame=None) -> int:
    """Drive one match to END with a policy; returns the wire result code."""
    state = client.state
    while not state.game_ended:
        state = client.receive()
        if state.game_ended:
            break
        frame = state.latest_frame
        assert frame is not None
        if on_frame is not None:
            on_frame(frame)
        client.send_commands(policy(frame, client.roster))
    assert state.last_result is not None
    return state.last_result
