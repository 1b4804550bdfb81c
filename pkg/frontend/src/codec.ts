/** Bit-exact binary codec for the lockstep protocol, version 1.
 *
 * Little-endian throughout; strings are u16 byte length + UTF-8; state
 * units are serialized sorted ascending by id, making encoding canonical.
 */
import {
  Command,
  Frame,
  Message,
  UnitState,
  UnitTypeSpec,
  sortedIds,
} from "./model.js";

export const PROTOCOL_VERSION = 1;
export const MAX_PAYLOAD = 16 * 1024 * 1024;
export const MAX_COMMANDS = 1024;

export const TAG_HELLO = 0x01;
export const TAG_SETUP = 0x02;
export const TAG_STATE = 0x03;
export const TAG_COMMANDS = 0x04;
export const TAG_END = 0x05;
export const TAG_RESTART = 0x06;
export const TAG_QUIT = 0x07;
export const TAG_ERROR = 0x08;

const UNIT_RECORD_SIZE = 4 + 4 * 20;

export class CodecError extends Error {
  readonly offset?: number;

  constructor(message: string, offset?: number) {
    super(offset === undefined ? message : `${message} (at offset ${offset})`);
    this.name = "CodecError";
    this.offset = offset;
  }
}

export class FramingError extends CodecError {
  constructor(message: string) {
    super(message);
    this.name = "FramingError";
  }
}

// ---------------------------------------------------------------------------
// framing

export function writeFramed(payload: Buffer): Buffer {
  if (payload.length > MAX_PAYLOAD) {
    throw new FramingError(`payload of ${payload.length} bytes exceeds 16 MiB cap`);
  }
  const header = Buffer.allocUnsafe(4);
  header.writeUInt32LE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

/** Incremental frame splitter for a byte stream. */
export class FrameSplitter {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): void {
    this.buffer = this.buffer.length === 0 ? chunk : Buffer.concat([this.buffer, chunk]);
  }

  /** Pop the next complete payload, or null if more bytes are needed. */
  next(): Buffer | null {
    if (this.buffer.length < 4) return null;
    const n = this.buffer.readUInt32LE(0);
    if (n > MAX_PAYLOAD) {
      throw new FramingError(`declared length ${n} exceeds 16 MiB cap`);
    }
    if (this.buffer.length < 4 + n) return null;
    const payload = this.buffer.subarray(4, 4 + n);
    this.buffer = this.buffer.subarray(4 + n);
    return payload;
  }

  get pending(): number {
    return this.buffer.length;
  }
}

// ---------------------------------------------------------------------------
// encode

class Writer {
  private parts: Buffer[] = [];

  u8(v: number): void {
    this.parts.push(Buffer.from([v & 0xff]));
  }

  u16(v: number): void {
    const b = Buffer.allocUnsafe(2);
    b.writeUInt16LE(v, 0);
    this.parts.push(b);
  }

  u32(v: number): void {
    const b = Buffer.allocUnsafe(4);
    b.writeUInt32LE(v >>> 0, 0);
    this.parts.push(b);
  }

  i32(v: number): void {
    if (!Number.isInteger(v) || v < -2147483648 || v > 2147483647) {
      throw new CodecError(`value ${v} outside 32-bit range`);
    }
    const b = Buffer.allocUnsafe(4);
    b.writeInt32LE(v, 0);
    this.parts.push(b);
  }

  u64(v: bigint): void {
    const b = Buffer.allocUnsafe(8);
    b.writeBigUInt64LE(v, 0);
    this.parts.push(b);
  }

  string(s: string): void {
    const raw = Buffer.from(s, "utf-8");
    if (raw.length > 0xffff) throw new CodecError("string longer than 65535 bytes");
    this.u16(raw.length);
    this.parts.push(raw);
  }

  raw(b: Buffer): void {
    this.parts.push(b);
  }

  finish(): Buffer {
    return Buffer.concat(this.parts);
  }
}

function writeUnit(w: Writer, u: UnitState): void {
  w.u32(u.id);
  w.i32(u.type);
  w.i32(u.x);
  w.i32(u.y);
  w.i32(u.hp);
  w.i32(u.shield);
  w.i32(u.energy);
  w.i32(u.armor);
  w.i32(u.size);
  w.i32(u.gwtype);
  w.i32(u.awtype);
  w.i32(u.gwcd);
  w.i32(u.awcd);
  w.i32(u.gwattack);
  w.i32(u.awattack);
  w.i32(u.gwrange);
  w.i32(u.awrange);
  w.i32(u.idle ? 1 : 0);
  w.i32(u.target);
  w.i32(u.targetX);
  w.i32(u.targetY);
}

function writeGroup(w: Writer, group: Map<number, UnitState>): void {
  const ids = sortedIds(group);
  w.u16(ids.length);
  for (const id of ids) writeUnit(w, group.get(id)!);
}

function writeTypeSpec(w: Writer, t: UnitTypeSpec): void {
  w.u8(t.typeId);
  w.string(t.name);
  w.i32(t.maxHp);
  w.i32(t.maxShield);
  w.i32(t.maxEnergy);
  w.i32(t.armor);
  w.i32(t.speedFp);
  w.i32(t.sightRange);
  w.u8(t.flyer ? 1 : 0);
  w.i32(t.ground.damage);
  w.i32(t.ground.range);
  w.i32(t.ground.cooldown);
  w.i32(t.air.damage);
  w.i32(t.air.range);
  w.i32(t.air.cooldown);
}

export function encodeMessage(msg: Message): Buffer {
  const w = new Writer();
  switch (msg.kind) {
    case "state": {
      for (const id of msg.frame.unitsMyself.keys()) {
        if (msg.frame.unitsEnemy.has(id)) {
          throw new CodecError(`unit id ${id} present in both frame groups`);
        }
      }
      w.u8(TAG_STATE);
      w.u32(msg.frame.frameNumber);
      writeGroup(w, msg.frame.unitsMyself);
      writeGroup(w, msg.frame.unitsEnemy);
      break;
    }
    case "commands": {
      if (msg.commands.length > MAX_COMMANDS) {
        throw new CodecError(`${msg.commands.length} commands exceeds cap of ${MAX_COMMANDS}`);
      }
      w.u8(TAG_COMMANDS);
      w.u16(msg.commands.length);
      for (const c of msg.commands) {
        if (c.kind === "stop") {
          w.u8(0);
          w.u32(c.unitId);
          w.i32(0);
          w.i32(0);
        } else if (c.kind === "move") {
          w.u8(1);
          w.u32(c.unitId);
          w.i32(c.x);
          w.i32(c.y);
        } else {
          w.u8(2);
          w.u32(c.unitId);
          w.i32(c.targetId);
          w.i32(0);
        }
      }
      break;
    }
    case "hello": {
      if (msg.protoVersion !== PROTOCOL_VERSION) {
        throw new CodecError(`protocol version must be ${PROTOCOL_VERSION}`);
      }
      w.u8(TAG_HELLO);
      w.u16(msg.protoVersion);
      w.string(msg.clientName);
      w.u8(msg.requestedRole);
      break;
    }
    case "setup": {
      w.u8(TAG_SETUP);
      w.u8(msg.playerId);
      w.u32(msg.mapW);
      w.u32(msg.mapH);
      w.u8(msg.fog ? 1 : 0);
      w.u8(msg.frameSkip);
      w.u64(msg.seed);
      w.u8(msg.roster.length);
      for (const t of msg.roster) writeTypeSpec(w, t);
      break;
    }
    case "end":
      w.u8(TAG_END);
      w.u8(msg.result);
      w.u32(msg.finalFrame);
      break;
    case "restart":
      w.u8(TAG_RESTART);
      break;
    case "quit":
      w.u8(TAG_QUIT);
      break;
    case "error":
      w.u8(TAG_ERROR);
      w.u16(msg.code);
      w.string(msg.text);
      break;
  }
  return w.finish();
}

// ---------------------------------------------------------------------------
// decode

class Reader {
  pos = 0;

  constructor(private readonly buf: Buffer) {}

  private need(n: number, what: string): number {
    if (this.pos + n > this.buf.length) {
      throw new CodecError(`payload too short for ${what}`, this.pos);
    }
    const p = this.pos;
    this.pos += n;
    return p;
  }

  u8(what: string): number {
    return this.buf.readUInt8(this.need(1, what));
  }

  u16(what: string): number {
    return this.buf.readUInt16LE(this.need(2, what));
  }

  u32(what: string): number {
    return this.buf.readUInt32LE(this.need(4, what));
  }

  i32(what: string): number {
    return this.buf.readInt32LE(this.need(4, what));
  }

  u64(what: string): bigint {
    return this.buf.readBigUInt64LE(this.need(8, what));
  }

  string(what: string): string {
    const n = this.u16(`${what} length`);
    const p = this.need(n, what);
    return this.buf.subarray(p, p + n).toString("utf-8");
  }

  done(): void {
    if (this.pos !== this.buf.length) {
      throw new CodecError(`${this.buf.length - this.pos} trailing bytes`, this.pos);
    }
  }
}

function readGroup(
  r: Reader,
  enemy: boolean,
  seen: Set<number>,
  groupName: string,
): Map<number, UnitState> {
  const n = r.u16(`${groupName} count`);
  const units = new Map<number, UnitState>();
  let prevId = -1;
  for (let i = 0; i < n; i++) {
    const offset = (r as unknown as { pos: number }).pos;
    const id = r.u32("unit id");
    if (seen.has(id)) throw new CodecError(`duplicate unit id ${id}`, offset);
    if (id <= prevId) throw new CodecError(`unit ids not ascending at id ${id}`, offset);
    const type = r.i32("type");
    const x = r.i32("x");
    const y = r.i32("y");
    const hp = r.i32("hp");
    const shield = r.i32("shield");
    const energy = r.i32("energy");
    const armor = r.i32("armor");
    const size = r.i32("size");
    const gwtype = r.i32("gwtype");
    const awtype = r.i32("awtype");
    const gwcd = r.i32("gwcd");
    const awcd = r.i32("awcd");
    const gwattack = r.i32("gwattack");
    const awattack = r.i32("awattack");
    const gwrange = r.i32("gwrange");
    const awrange = r.i32("awrange");
    const idle = r.i32("idle");
    if (idle !== 0 && idle !== 1) {
      throw new CodecError(`unit ${id}: idle flag must be 0 or 1`, offset);
    }
    const target = r.i32("target");
    const targetX = r.i32("target_x");
    const targetY = r.i32("target_y");
    seen.add(id);
    prevId = id;
    units.set(id, {
      id, type, x, y, hp, shield, energy, armor, size, gwtype, awtype,
      gwcd, awcd, gwattack, awattack, gwrange, awrange,
      idle: idle === 1, target, targetX, targetY, enemy,
    });
  }
  return units;
}

export function decodeMessage(payload: Buffer): Message {
  if (payload.length === 0) throw new CodecError("empty payload", 0);
  const r = new Reader(payload);
  const tag = r.u8("tag");
  switch (tag) {
    case TAG_STATE: {
      const frameNumber = r.u32("frame_number");
      const seen = new Set<number>();
      const unitsMyself = readGroup(r, false, seen, "units_myself");
      const unitsEnemy = readGroup(r, true, seen, "units_enemy");
      r.done();
      const frame: Frame = { frameNumber, unitsMyself, unitsEnemy };
      return { kind: "state", frame };
    }
    case TAG_COMMANDS: {
      const n = r.u16("command count");
      if (n > MAX_COMMANDS) {
        throw new CodecError(`command count ${n} exceeds cap of ${MAX_COMMANDS}`, 1);
      }
      const commands: Command[] = [];
      for (let i = 0; i < n; i++) {
        const at = (r as unknown as { pos: number }).pos;
        const kind = r.u8("command kind");
        const unitId = r.u32("unit id");
        const a = r.i32("command a");
        const b = r.i32("command b");
        if (kind === 0) commands.push({ kind: "stop", unitId });
        else if (kind === 1) commands.push({ kind: "move", unitId, x: a, y: b });
        else if (kind === 2) commands.push({ kind: "attack", unitId, targetId: a });
        else throw new CodecError(`unknown command kind ${kind}`, at);
      }
      r.done();
      return { kind: "commands", commands };
    }
    case TAG_HELLO: {
      const protoVersion = r.u16("proto_version");
      const clientName = r.string("client_name");
      const requestedRole = r.u8("requested_role");
      r.done();
      return { kind: "hello", protoVersion, clientName, requestedRole };
    }
    case TAG_SETUP: {
      const playerId = r.u8("player_id");
      const mapW = r.u32("map_w");
      const mapH = r.u32("map_h");
      const fog = r.u8("fog") !== 0;
      const frameSkip = r.u8("frame_skip");
      const seed = r.u64("seed");
      const typeCount = r.u8("type_count");
      const roster: UnitTypeSpec[] = [];
      for (let i = 0; i < typeCount; i++) {
        const typeId = r.u8("type_id");
        const name = r.string("type name");
        const maxHp = r.i32("max_hp");
        const maxShield = r.i32("max_shield");
        const maxEnergy = r.i32("max_energy");
        const armor = r.i32("armor");
        const speedFp = r.i32("speed_fp");
        const sightRange = r.i32("sight");
        const flyer = r.u8("flyer") !== 0;
        const ground = {
          damage: r.i32("gdmg"),
          range: r.i32("grange"),
          cooldown: r.i32("gcd"),
        };
        const air = {
          damage: r.i32("admg"),
          range: r.i32("arange"),
          cooldown: r.i32("acd"),
        };
        roster.push({
          typeId, name, maxHp, maxShield, maxEnergy, armor, speedFp,
          sightRange, flyer, ground, air,
        });
      }
      r.done();
      return { kind: "setup", playerId, mapW, mapH, fog, frameSkip, seed, roster };
    }
    case TAG_END: {
      const result = r.u8("result");
      const finalFrame = r.u32("final_frame");
      r.done();
      if (result > 2) throw new CodecError(`unknown end result ${result}`, 1);
      return { kind: "end", result, finalFrame };
    }
    case TAG_RESTART:
      r.done();
      return { kind: "restart" };
    case TAG_QUIT:
      r.done();
      return { kind: "quit" };
    case TAG_ERROR: {
      const code = r.u16("error code");
      const text = r.string("error text");
      r.done();
      return { kind: "error", code, text };
    }
    default:
      throw new CodecError(`unknown tag 0x${tag.toString(16).padStart(2, "0")}`, 0);
  }
}
