"""Binary wire protocol: message types, bit-exact encode/decode, framing.

Layout rules (version 1):
  * every frame on a stream is a 4-byte little-endian unsigned length
    followed by that many payload bytes, capped at 16 MiB;
  * a payload is one tag byte plus the message body;
  * all multi-byte integers are little-endian; strings are u16 byte length
    plus UTF-8 bytes;
  * units inside a STATE are serialized sorted ascending by id, which makes
    the encoding canonical: encoding a decoded payload reproduces it.

Everything here is a pure function over byte strings, safe to share across
threads. `read_framed` consumes a sequential byte source and must not be
called concurrently on the same source.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional, Union

from .model import Frame, Position, UnitState, UnitTypeSpec, Weapon

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
MAX_COMMANDS = 1024

TAG_HELLO = 0x01
TAG_SETUP = 0x02
TAG_STATE = 0x03
TAG_COMMANDS = 0x04
TAG_END = 0x05
TAG_RESTART = 0x06
TAG_QUIT = 0x07
TAG_ERROR = 0x08

RESULT_LOSS = 0
RESULT_WIN = 1
RESULT_DRAW = 2

# Canonical serialization order of the 20 per-unit fields (after the id).
UNIT_FIELDS = (
    "type", "x", "y", "hp", "shield", "energy", "armor", "size",
    "gwtype", "awtype", "gwcd", "awcd", "gwattack", "awattack",
    "gwrange", "awrange", "idle", "target", "target_x", "target_y",
)
UNIT_FIELD_COUNT = 20
UNIT_RECORD_SIZE = 4 + 4 * UNIT_FIELD_COUNT


class CodecError(Exception):
    """Malformed payload; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class EncodeError(CodecError):
    pass


class FramingError(CodecError):
    pass


@dataclass(frozen=True, slots=True)
class Stop:
    unit_id: int


@dataclass(frozen=True, slots=True)
class Move:
    unit_id: int
    x: int
    y: int


@dataclass(frozen=True, slots=True)
class Attack:
    unit_id: int
    target_id: int


Command = Union[Stop, Move, Attack]


@dataclass(frozen=True, slots=True)
class Hello:
    proto_version: int
    client_name: str
    requested_role: int


@dataclass(frozen=True, slots=True)
class Setup:
    player_id: int
    map_w: int
    map_h: int
    fog: bool
    frame_skip: int
    seed: int
    roster: tuple[UnitTypeSpec, ...]


@dataclass(frozen=True, slots=True)
class State:
    frame: Frame


@dataclass(frozen=True, slots=True)
class Commands:
    commands: tuple[Command, ...]


@dataclass(frozen=True, slots=True)
class End:
    result: int
    final_frame: int


@dataclass(frozen=True, slots=True)
class Restart:
    pass


@dataclass(frozen=True, slots=True)
class Quit:
    pass


@dataclass(frozen=True, slots=True)
class ErrorMsg:
    code: int
    text: str


Message = Union[Hello, Setup, State, Commands, End, Restart, Quit, ErrorMsg]

ERR_VERSION = 1
ERR_MALFORMED = 2
ERR_ILLEGAL_IN_MODE = 3
ERR_INTERNAL = 4


# ---------------------------------------------------------------------------
# framing

def write_framed(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FramingError(f"payload of {len(payload)} bytes exceeds 16 MiB cap")
    return len(payload).to_bytes(4, "little") + payload


def read_framed(stream: BinaryIO) -> Optional[bytes]:
    """Read one framed payload; None on clean end-of-stream.

    Raises FramingError if the stream ends mid-message or the declared
    length exceeds the cap (the connection must be dropped in that case).
    """
    header = stream.read(4)
    if header == b"":
        return None
    if len(header) < 4:
        raise FramingError("stream truncated inside length header")
    n = int.from_bytes(header, "little")
    if n > MAX_PAYLOAD:
        raise FramingError(f"declared length {n} exceeds 16 MiB cap")
    payload = stream.read(n) if n else b""
    if len(payload) < n:
        raise FramingError(f"stream truncated: expected {n} payload bytes, "
                           f"got {len(payload)}")
    return payload


# ---------------------------------------------------------------------------
# encode

_STATE_HEAD = struct.Struct("<BI")
_CMD = struct.Struct("<BIii")
_SETUP_HEAD = struct.Struct("<BBIIBBQB")
_TYPE_STATS = struct.Struct("<6i")
_END = struct.Struct("<BBI")
_unit_structs: dict[int, struct.Struct] = {}


def _unit_struct(n: int) -> struct.Struct:
    s = _unit_structs.get(n)
    if s is None:
        s = struct.Struct("<" + "I20i" * n)
        _unit_structs[n] = s
    return s


def _encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise EncodeError("string longer than 65535 bytes")
    return len(raw).to_bytes(2, "little") + raw


def _unit_ints(u: UnitState) -> tuple:
    return (u.id, u.type, u.position.x, u.position.y, u.hp, u.shield,
            u.energy, u.armor, u.size, u.gwtype, u.awtype, u.gwcd, u.awcd,
            u.gwattack, u.awattack, u.gwrange, u.awrange,
            1 if u.idle else 0, u.target, u.targetpos.x, u.targetpos.y)


def _encode_group(units: dict[int, UnitState]) -> bytes:
    n = len(units)
    if n > 0xFFFF:
        raise EncodeError("more than 65535 units in one group")
    flat: list[int] = []
    for uid in sorted(units):
        flat.extend(_unit_ints(units[uid]))
    try:
        body = _unit_struct(n).pack(*flat) if n else b""
    except struct.error as exc:
        raise EncodeError(f"unit field out of 32-bit range: {exc}") from None
    return n.to_bytes(2, "little") + body


def encode_state_body(frame: Frame) -> bytes:
    """STATE payload without re-checking invariants; used on the hot path."""
    return (_STATE_HEAD.pack(TAG_STATE, frame.frame_number)
            + _encode_group(frame.units_myself)
            + _encode_group(frame.units_enemy))


def encode_state_from_ints(frame_number: int, mine: list[int],
                           theirs: list[int]) -> bytes:
    """STATE payload from pre-flattened unit ints (21 per unit, id first).

    Byte-identical to encoding the equivalent Frame; exists so the match
    loop can skip building observation objects it would immediately
    serialize.
    """
    n_my = len(mine) // 21
    n_en = len(theirs) // 21
    return b"".join((
        _STATE_HEAD.pack(TAG_STATE, frame_number),
        n_my.to_bytes(2, "little"),
        _unit_struct(n_my).pack(*mine) if n_my else b"",
        n_en.to_bytes(2, "little"),
        _unit_struct(n_en).pack(*theirs) if n_en else b"",
    ))


def encode_message(msg: Message) -> bytes:
    """Encode one message into its canonical payload (unframed)."""
    if isinstance(msg, State):
        frame = msg.frame
        if frame.units_myself.keys() & frame.units_enemy.keys():
            raise EncodeError("unit id present in both frame groups")
        return encode_state_body(frame)

    if isinstance(msg, Commands):
        cmds = msg.commands
        if len(cmds) > MAX_COMMANDS:
            raise EncodeError(f"{len(cmds)} commands exceeds cap of {MAX_COMMANDS}")
        parts = [bytes((TAG_COMMANDS,)), len(cmds).to_bytes(2, "little")]
        try:
            for c in cmds:
                if isinstance(c, Stop):
                    parts.append(_CMD.pack(0, c.unit_id, 0, 0))
                elif isinstance(c, Move):
                    parts.append(_CMD.pack(1, c.unit_id, c.x, c.y))
                elif isinstance(c, Attack):
                    parts.append(_CMD.pack(2, c.unit_id, c.target_id, 0))
                else:
                    raise EncodeError(f"unknown command {c!r}")
        except struct.error as exc:
            raise EncodeError(f"command field out of range: {exc}") from None
        return b"".join(parts)

    if isinstance(msg, Hello):
        if msg.proto_version != PROTOCOL_VERSION:
            raise EncodeError(f"protocol version must be {PROTOCOL_VERSION}")
        return (bytes((TAG_HELLO,))
                + msg.proto_version.to_bytes(2, "little")
                + _encode_string(msg.client_name)
                + bytes((msg.requested_role,)))

    if isinstance(msg, Setup):
        try:
            head = _SETUP_HEAD.pack(TAG_SETUP, msg.player_id, msg.map_w,
                                    msg.map_h, 1 if msg.fog else 0,
                                    msg.frame_skip, msg.seed, len(msg.roster))
        except struct.error as exc:
            raise EncodeError(f"setup field out of range: {exc}") from None
        parts = [head]
        for t in msg.roster:
            parts.append(bytes((t.type_id,)))
            parts.append(_encode_string(t.name))
            parts.append(_TYPE_STATS.pack(t.max_hp, t.max_shield, t.max_energy,
                                          t.armor, t.speed_fp, t.sight_range))
            parts.append(bytes((1 if t.flyer else 0,)))
            parts.append(_TYPE_STATS.pack(t.ground.damage, t.ground.range,
                                          t.ground.cooldown, t.air.damage,
                                          t.air.range, t.air.cooldown))
        return b"".join(parts)

    if isinstance(msg, End):
        try:
            return _END.pack(TAG_END, msg.result, msg.final_frame)
        except struct.error as exc:
            raise EncodeError(f"end field out of range: {exc}") from None

    if isinstance(msg, Restart):
        return bytes((TAG_RESTART,))

    if isinstance(msg, Quit):
        return bytes((TAG_QUIT,))

    if isinstance(msg, ErrorMsg):
        return (bytes((TAG_ERROR,))
                + msg.code.to_bytes(2, "little")
                + _encode_string(msg.text))

    raise EncodeError(f"not a message: {msg!r}")


# ---------------------------------------------------------------------------
# decode

class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def need(self, n: int, what: str) -> int:
        if self.pos + n > len(self.buf):
            raise CodecError(f"payload too short for {what}", self.pos)
        p = self.pos
        self.pos += n
        return p

    def u8(self, what: str) -> int:
        p = self.need(1, what)
        return self.buf[p]

    def u16(self, what: str) -> int:
        p = self.need(2, what)
        return int.from_bytes(self.buf[p:p + 2], "little")

    def u32(self, what: str) -> int:
        p = self.need(4, what)
        return int.from_bytes(self.buf[p:p + 4], "little")

    def u64(self, what: str) -> int:
        p = self.need(8, what)
        return int.from_bytes(self.buf[p:p + 8], "little")

    def i32(self, what: str) -> int:
        p = self.need(4, what)
        return int.from_bytes(self.buf[p:p + 4], "little", signed=True)

    def string(self, what: str) -> str:
        n = self.u16(f"{what} length")
        p = self.need(n, what)
        try:
            return self.buf[p:p + n].decode("utf-8")
        except UnicodeDecodeError:
            raise CodecError(f"{what} is not valid UTF-8", p) from None

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise CodecError(
                f"{len(self.buf) - self.pos} trailing bytes", self.pos)


_tuple_new = tuple.__new__


def _decode_group(r: _Reader, enemy: bool,
                  group_name: str) -> dict[int, UnitState]:
    n = r.u16(f"{group_name} count")
    start = r.need(n * UNIT_RECORD_SIZE, f"{n} unit records")
    if n == 0:
        return {}
    vals = _unit_struct(n).unpack_from(r.buf, start)
    units: dict[int, UnitState] = {}
    prev_id = -1
    # strictly ascending ids also rule out duplicates inside the group;
    # tuple.__new__ skips argument parsing - this loop dominates decode time
    for i in range(n):
        o = i * 21
        uid = vals[o]
        idle = vals[o + 17]
        if uid <= prev_id or idle < 0 or idle > 1:
            offset = start + i * UNIT_RECORD_SIZE
            if uid <= prev_id:
                raise CodecError(f"unit ids not ascending at id {uid}", offset)
            raise CodecError(f"unit {uid}: idle flag must be 0 or 1", offset)
        prev_id = uid
        units[uid] = _tuple_new(UnitState, (
            uid, vals[o + 1],
            _tuple_new(Position, (vals[o + 2], vals[o + 3])),
            vals[o + 4], vals[o + 5], vals[o + 6], vals[o + 7], vals[o + 8],
            vals[o + 9], vals[o + 10], vals[o + 11], vals[o + 12],
            vals[o + 13], vals[o + 14], vals[o + 15], vals[o + 16],
            idle == 1, vals[o + 18],
            _tuple_new(Position, (vals[o + 19], vals[o + 20])), enemy))
    return units


def decode_message(payload: bytes) -> Message:
    """Decode one payload; exact inverse of encode_message on its image."""
    if not payload:
        raise CodecError("empty payload", 0)
    r = _Reader(payload)
    tag = r.u8("tag")

    if tag == TAG_STATE:
        frame_number = r.u32("frame_number")
        mine = _decode_group(r, False, "units_myself")
        theirs = _decode_group(r, True, "units_enemy")
        r.done()
        if mine and theirs:
            overlap = mine.keys() & theirs.keys()
            if overlap:
                dup = min(overlap)
                # locate the enemy-group record for the offset
                offset = (9 + len(mine) * UNIT_RECORD_SIZE + 2
                          + sorted(theirs).index(dup) * UNIT_RECORD_SIZE)
                raise CodecError(f"duplicate unit id {dup}", offset)
        return State(Frame(frame_number, mine, theirs))

    if tag == TAG_COMMANDS:
        n = r.u16("command count")
        if n > MAX_COMMANDS:
            raise CodecError(f"command count {n} exceeds cap of {MAX_COMMANDS}", 1)
        cmds: list[Command] = []
        for _ in range(n):
            at = r.pos
            kind = r.u8("command kind")
            p = r.need(12, "command body")
            unit_id = int.from_bytes(r.buf[p:p + 4], "little")
            a = int.from_bytes(r.buf[p + 4:p + 8], "little", signed=True)
            b = int.from_bytes(r.buf[p + 8:p + 12], "little", signed=True)
            if kind == 0:
                cmds.append(Stop(unit_id))
            elif kind == 1:
                cmds.append(Move(unit_id, a, b))
            elif kind == 2:
                cmds.append(Attack(unit_id, a))
            else:
                raise CodecError(f"unknown command kind {kind}", at)
        r.done()
        return Commands(tuple(cmds))

    if tag == TAG_HELLO:
        version = r.u16("proto_version")
        name = r.string("client_name")
        role = r.u8("requested_role")
        r.done()
        return Hello(version, name, role)

    if tag == TAG_SETUP:
        player_id = r.u8("player_id")
        map_w = r.u32("map_w")
        map_h = r.u32("map_h")
        fog = r.u8("fog")
        frame_skip = r.u8("frame_skip")
        seed = r.u64("seed")
        type_count = r.u8("type_count")
        roster: list[UnitTypeSpec] = []
        for _ in range(type_count):
            at = r.pos
            tid = r.u8("type_id")
            name = r.string("type name")
            p = r.need(24, "type stats")
            max_hp, max_shield, max_energy, armor, speed_fp, sight = \
                _TYPE_STATS.unpack_from(r.buf, p)
            flyer = r.u8("flyer flag")
            p = r.need(24, "weapon stats")
            gdmg, grange, gcd, admg, arange, acd = \
                _TYPE_STATS.unpack_from(r.buf, p)
            try:
                roster.append(UnitTypeSpec(
                    tid, name, max_hp, max_shield, max_energy, armor,
                    speed_fp, sight, bool(flyer),
                    Weapon(gdmg, grange, gcd), Weapon(admg, arange, acd)))
            except ValueError as exc:
                raise CodecError(f"invalid roster entry: {exc}", at) from None
        r.done()
        return Setup(player_id, map_w, map_h, bool(fog), frame_skip, seed,
                     tuple(roster))

    if tag == TAG_END:
        result = r.u8("result")
        final_frame = r.u32("final_frame")
        r.done()
        if result not in (RESULT_LOSS, RESULT_WIN, RESULT_DRAW):
            raise CodecError(f"unknown end result {result}", 1)
        return End(result, final_frame)

    if tag == TAG_RESTART:
        r.done()
        return Restart()

    if tag == TAG_QUIT:
        r.done()
        return Quit()

    if tag == TAG_ERROR:
        code = r.u16("error code")
        text = r.string("error text")
        r.done()
        return ErrorMsg(code, text)

    raise CodecError(f"unknown tag 0x{tag:02x}", 0)
