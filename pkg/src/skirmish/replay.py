"""Replay files: record, delta-compress, and re-read observed frame streams.

File layout (extension .tcr):
  magic "TCR1" | framed SETUP payload | framed records... | framed END payload

Each record is either a full STATE payload (tag 0x03) or a frame delta
(tag 0x09) against the immediately preceding frame. Reconstructed frames
re-encode byte-identically to the originals, so replays are bit-exact.
A writer owns its file exclusively; finished files are immutable and can
be read concurrently.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional

from .model import Frame, Position, UnitState
from . import wire

MAGIC = b"TCR1"
TAG_DELTA = 0x09
ALL_FIELDS = (1 << wire.UNIT_FIELD_COUNT) - 1
DEFAULT_KEYFRAME_INTERVAL = 32


class ReplayError(Exception):
    """Unreadable or corrupt replay; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True, slots=True)
class UnitPatch:
    unit_id: int
    mask: int
    values: tuple[int, ...]  # the masked fields, canonical order


@dataclass(frozen=True, slots=True)
class FrameDelta:
    base_frame: int
    new_frame: int
    removed_myself: tuple[int, ...]
    removed_enemy: tuple[int, ...]
    changed_myself: tuple[UnitPatch, ...]
    changed_enemy: tuple[UnitPatch, ...]


def _unit_values(u: UnitState) -> tuple[int, ...]:
    return (u.type, u.position.x, u.position.y, u.hp, u.shield, u.energy,
            u.armor, u.size, u.gwtype, u.awtype, u.gwcd, u.awcd,
            u.gwattack, u.awattack, u.gwrange, u.awrange,
            1 if u.idle else 0, u.target, u.targetpos.x, u.targetpos.y)


def _unit_from_values(uid: int, vals: tuple[int, ...], enemy: bool) -> UnitState:
    (utype, x, y, hp, shield, energy, armor, size, gwtype, awtype, gwcd,
     awcd, gwattack, awattack, gwrange, awrange, idle, target, tx, ty) = vals
    return UnitState(
        id=uid, type=utype, position=Position(x, y), hp=hp, shield=shield,
        energy=energy, armor=armor, size=size, gwtype=gwtype, awtype=awtype,
        gwcd=gwcd, awcd=awcd, gwattack=gwattack, awattack=awattack,
        gwrange=gwrange, awrange=awrange, idle=bool(idle), target=target,
        targetpos=Position(tx, ty), enemy=enemy,
    )


def _diff_group(prev: dict[int, UnitState], nxt: dict[int, UnitState]
                ) -> tuple[tuple[int, ...], tuple[UnitPatch, ...]]:
    removed = tuple(uid for uid in sorted(prev) if uid not in nxt)
    patches: list[UnitPatch] = []
    for uid in sorted(nxt):
        new_vals = _unit_values(nxt[uid])
        old = prev.get(uid)
        if old is None:
            patches.append(UnitPatch(uid, ALL_FIELDS, new_vals))
            continue
        old_vals = _unit_values(old)
        mask = 0
        changed: list[int] = []
        for i in range(wire.UNIT_FIELD_COUNT):
            if new_vals[i] != old_vals[i]:
                mask |= 1 << i
                changed.append(new_vals[i])
        if mask:
            patches.append(UnitPatch(uid, mask, tuple(changed)))
    return removed, tuple(patches)


def delta_encode(prev: Frame, nxt: Frame) -> FrameDelta:
    """Minimal per-unit field diff between two consecutive frames."""
    if prev.frame_number >= nxt.frame_number:
        raise ValueError("delta base must precede the new frame")
    rm_my, ch_my = _diff_group(prev.units_myself, nxt.units_myself)
    rm_en, ch_en = _diff_group(prev.units_enemy, nxt.units_enemy)
    return FrameDelta(prev.frame_number, nxt.frame_number,
                      rm_my, rm_en, ch_my, ch_en)


def _apply_group(prev: dict[int, UnitState], removed: tuple[int, ...],
                 patches: tuple[UnitPatch, ...], enemy: bool
                 ) -> dict[int, UnitState]:
    out = dict(prev)
    for uid in removed:
        if uid not in out:
            raise ReplayError(f"delta removes unknown unit {uid}")
        del out[uid]
    for p in patches:
        if p.mask == ALL_FIELDS:
            out[p.unit_id] = _unit_from_values(p.unit_id, p.values, enemy)
            continue
        base = out.get(p.unit_id)
        if base is None:
            raise ReplayError(
                f"delta patches unknown unit {p.unit_id} with partial mask")
        vals = list(_unit_values(base))
        vi = 0
        for i in range(wire.UNIT_FIELD_COUNT):
            if p.mask & (1 << i):
                vals[i] = p.values[vi]
                vi += 1
        out[p.unit_id] = _unit_from_values(p.unit_id, tuple(vals), enemy)
    return out


def delta_apply(prev: Frame, d: FrameDelta) -> Frame:
    """Exact inverse of delta_encode against the same base frame."""
    if d.base_frame != prev.frame_number:
        raise ReplayError(
            f"delta base {d.base_frame} does not match frame {prev.frame_number}")
    mine = _apply_group(prev.units_myself, d.removed_myself, d.changed_myself,
                        enemy=False)
    theirs = _apply_group(prev.units_enemy, d.removed_enemy, d.changed_enemy,
                          enemy=True)
    return Frame(d.new_frame, mine, theirs)


# ---------------------------------------------------------------------------
# delta record payload (tag 0x09)

def encode_delta(d: FrameDelta) -> bytes:
    parts = [struct.pack("<BII", TAG_DELTA, d.base_frame, d.new_frame)]
    for removed in (d.removed_myself, d.removed_enemy):
        parts.append(len(removed).to_bytes(2, "little"))
        for uid in removed:
            parts.append(uid.to_bytes(4, "little"))
    for patches in (d.changed_myself, d.changed_enemy):
        parts.append(len(patches).to_bytes(2, "little"))
        for p in patches:
            parts.append(struct.pack("<II", p.unit_id, p.mask))
            parts.append(struct.pack(f"<{len(p.values)}i", *p.values))
    return b"".join(parts)


def decode_delta(payload: bytes) -> FrameDelta:
    r = wire._Reader(payload)
    tag = r.u8("tag")
    if tag != TAG_DELTA:
        raise wire.CodecError(f"expected delta tag, got 0x{tag:02x}", 0)
    base = r.u32("base frame")
    new = r.u32("new frame")
    removed: list[tuple[int, ...]] = []
    for group in ("myself", "enemy"):
        n = r.u16(f"removed {group} count")
        removed.append(tuple(r.u32("removed id") for _ in range(n)))
    changed: list[tuple[UnitPatch, ...]] = []
    for group in ("myself", "enemy"):
        n = r.u16(f"changed {group} count")
        patches = []
        for _ in range(n):
            uid = r.u32("patch unit id")
            mask = r.u32("patch mask")
            if mask == 0 or mask > ALL_FIELDS:
                raise wire.CodecError(f"bad field mask 0x{mask:x}", r.pos - 4)
            count = bin(mask).count("1")
            p = r.need(4 * count, "patch values")
            vals = struct.unpack_from(f"<{count}i", r.buf, p)
            patches.append(UnitPatch(uid, mask, vals))
        changed.append(tuple(patches))
    r.done()
    return FrameDelta(base, new, removed[0], removed[1],
                      changed[0], changed[1])


# ---------------------------------------------------------------------------
# files

class ReplayWriter:
    """Streams one match's observed frames to disk.

    Every `keyframe_interval`-th frame is stored whole; the rest become
    deltas against the previous frame. Records are flushed as written, so
    a crash leaves a cleanly truncated, partially readable file.
    """

    def __init__(self, path: str, setup: wire.Setup,
                 keyframe_interval: int = DEFAULT_KEYFRAME_INTERVAL):
        if keyframe_interval < 1:
            raise ValueError("keyframe_interval must be >= 1")
        self.path = path
        self._f: Optional[IO[bytes]] = open(path, "wb")
        self._interval = keyframe_interval
        self._index = 0
        self._prev: Optional[Frame] = None
        self._write(MAGIC + wire.write_framed(wire.encode_message(setup)))

    def _write(self, blob: bytes) -> None:
        assert self._f is not None
        try:
            self._f.write(blob)
            self._f.flush()
        except OSError as exc:
            raise ReplayError(f"write failed, leaving a partial replay at "
                              f"{self.path}: {exc}") from exc

    def add_frame(self, frame: Frame) -> None:
        if self._f is None:
            raise ValueError("replay writer already finished")
        if self._index % self._interval == 0 or self._prev is None:
            payload = wire.encode_message(wire.State(frame))
        else:
            payload = encode_delta(delta_encode(self._prev, frame))
        self._write(wire.write_framed(payload))
        self._prev = frame
        self._index += 1

    def finish(self, end: wire.End) -> None:
        if self._f is None:
            return
        self._write(wire.write_framed(wire.encode_message(end)))
        self._f.close()
        self._f = None

    def abort(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None


def record(messages: Iterable[wire.Message], path: str,
           keyframe_interval: int = DEFAULT_KEYFRAME_INTERVAL) -> None:
    """Write a complete transcript (SETUP, STATEs..., END) to a replay file."""
    writer: Optional[ReplayWriter] = None
    end: Optional[wire.End] = None
    for msg in messages:
        if isinstance(msg, wire.Setup):
            if writer is not None:
                raise ValueError("duplicate SETUP in transcript")
            writer = ReplayWriter(path, msg, keyframe_interval)
        elif isinstance(msg, wire.State):
            if writer is None:
                raise ValueError("transcript must start with SETUP")
            writer.add_frame(msg.frame)
        elif isinstance(msg, wire.End):
            end = msg
            break
        else:
            raise ValueError(f"unexpected message in transcript: {msg!r}")
    if writer is None or end is None:
        raise ValueError("transcript missing SETUP or END")
    writer.finish(end)


class ReplayReader:
    """Sequential reader; frames are reconstructed delta by delta.

    `end` is populated once iteration reaches the trailer. Corruption
    raises ReplayError carrying the byte offset; frames yielded before the
    bad record remain valid.
    """

    def __init__(self, path: str):
        self._f = open(path, "rb")
        self.end: Optional[wire.End] = None
        self.path = path
        magic = self._f.read(4)
        if magic != MAGIC:
            self._f.close()
            raise ReplayError(f"bad magic {magic!r}", 0)
        offset = self._f.tell()
        try:
            payload = wire.read_framed(self._f)
        except wire.FramingError as exc:
            self._f.close()
            raise ReplayError(str(exc), offset) from None
        if payload is None:
            self._f.close()
            raise ReplayError("missing setup record", offset)
        try:
            setup = wire.decode_message(payload)
        except wire.CodecError as exc:
            self._f.close()
            raise ReplayError(f"bad setup record: {exc}", offset) from None
        if not isinstance(setup, wire.Setup):
            self._f.close()
            raise ReplayError("first record is not a SETUP", offset)
        self.setup = setup

    def frames(self) -> Iterator[Frame]:
        prev: Optional[Frame] = None
        first = True
        while True:
            offset = self._f.tell()
            try:
                payload = wire.read_framed(self._f)
            except wire.FramingError as exc:
                raise ReplayError(str(exc), offset) from None
            if payload is None:
                raise ReplayError("replay ends without END trailer", offset)
            tag = payload[0] if payload else 0
            if tag == wire.TAG_STATE:
                try:
                    msg = wire.decode_message(payload)
                except wire.CodecError as exc:
                    raise ReplayError(f"bad state record: {exc}", offset) from None
                prev = msg.frame  # type: ignore[union-attr]
                first = False
                yield prev
            elif tag == TAG_DELTA:
                if first or prev is None:
                    raise ReplayError("first record must be a full state", offset)
                try:
                    d = decode_delta(payload)
                    prev = delta_apply(prev, d)
                except (wire.CodecError, ReplayError) as exc:
                    raise ReplayError(f"bad delta record: {exc}", offset) from None
                yield prev
            elif tag == wire.TAG_END:
                try:
                    msg = wire.decode_message(payload)
                except wire.CodecError as exc:
                    raise ReplayError(f"bad end record: {exc}", offset) from None
                self.end = msg  # type: ignore[assignment]
                trailing = self._f.read(1)
                if trailing:
                    raise ReplayError("data after END trailer", self._f.tell() - 1)
                return
            else:
                raise ReplayError(f"unknown record tag 0x{tag:02x}", offset)

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "ReplayReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def load(path: str) -> tuple[wire.Setup, list[Frame], wire.End]:
    """Read a whole replay strictly; raises ReplayError on any corruption."""
    with ReplayReader(path) as reader:
        frames = list(reader.frames())
        assert reader.end is not None
        return reader.setup, frames, reader.end
