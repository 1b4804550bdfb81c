"""Deterministic combat engine: spawning, movement, attacks, end detection.

All arithmetic is integer-only. Positions are fixed point 24.8 (1/256 px);
the pixel position reported to observers is the fixed-point value shifted
right by 8. Identical (config, seed, command transcript) therefore yields a
bit-identical world on every platform.

A World is confined to one match loop; distinct worlds can be stepped on
distinct threads with no shared state.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from . import wire
from .model import (DEFAULT_ROSTER, UnitTypeSpec, load_roster,
                    observation_consts, roster_map, visible_enemies)

MASK64 = (1 << 64) - 1
RNG_MUL = 6364136223846793005
RNG_ADD = 1442695040888963407

# RNG state is a bare unsigned 64-bit integer.
RngState = int


def rng_next(s: RngState) -> tuple[RngState, int]:
    """Advance the linear congruential state; the new state is the output."""
    s = (s * RNG_MUL + RNG_ADD) & MASK64
    return s, s


class ConfigError(Exception):
    pass


class EngineError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class MoveTo:
    x: int
    y: int
    kind = "move"


@dataclass(frozen=True, slots=True)
class AttackUnit:
    target_id: int
    kind = "attack"


class SimUnit:
    """Mutable authoritative record for one live unit."""

    __slots__ = ("id", "type", "owner", "x_fp", "y_fp", "hp", "shield",
                 "energy", "gwcd", "awcd", "order")

    def __init__(self, uid: int, type_id: int, owner: int, x: int, y: int,
                 spec: UnitTypeSpec):
        self.id = uid
        self.type = type_id
        self.owner = owner
        self.x_fp = x * 256 + 128
        self.y_fp = y * 256 + 128
        self.hp = spec.max_hp
        self.shield = spec.max_shield
        self.energy = spec.max_energy
        self.gwcd = 0
        self.awcd = 0
        self.order: Optional[MoveTo | AttackUnit] = None

    @property
    def x(self) -> int:
        return self.x_fp >> 8

    @property
    def y(self) -> int:
        return self.y_fp >> 8


@dataclass(frozen=True, slots=True)
class MatchResult:
    winner: Optional[int]  # None means draw

    @property
    def is_draw(self) -> bool:
        return self.winner is None


@dataclass(frozen=True, slots=True)
class DamageEvent:
    tick: int
    attacker_id: int
    target_id: int
    shield_loss: int
    hp_loss: int
    dist_sq: int
    weapon_range: int


@dataclass(frozen=True, slots=True)
class DeathEvent:
    tick: int
    unit_id: int
    owner: int


@dataclass
class GameConfig:
    map_w: int = 512
    map_h: int = 512
    seed: int = 0
    fog: bool = False
    frame_skip: int = 1
    max_frames: int = 5000
    roster: Sequence[UnitTypeSpec] = DEFAULT_ROSTER
    # exactly one of these describes the scenario
    spawns: Optional[list[tuple[int, int, int, int]]] = None  # (type, owner, x, y)
    random_mirror: Optional[tuple[int, int]] = None  # (count, type)

    def validate(self) -> None:
        if self.map_w <= 0 or self.map_h <= 0:
            raise ConfigError("map dimensions must be positive")
        if not 1 <= self.frame_skip <= 255:
            raise ConfigError("frame_skip must be in 1..255")
        if self.max_frames < 1:
            raise ConfigError("max_frames must be at least 1")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must fit in 64 bits")
        if (self.spawns is None) == (self.random_mirror is None):
            raise ConfigError("scenario needs either spawn lines or random_mirror")


def parse_game_config(text: str, base_dir: str = ".") -> GameConfig:
    """Parse the game config text format (map/seed/fog/frame_skip/max_frames/
    roster/spawn/random_mirror lines; `#` comments)."""
    cfg = GameConfig()
    spawns: list[tuple[int, int, int, int]] = []
    mirror: Optional[tuple[int, int]] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "map" and len(args) == 2:
                cfg.map_w, cfg.map_h = int(args[0]), int(args[1])
            elif key == "seed" and len(args) == 1:
                cfg.seed = int(args[0])
            elif key == "fog" and len(args) == 1 and args[0] in ("0", "1"):
                cfg.fog = args[0] == "1"
            elif key == "frame_skip" and len(args) == 1:
                cfg.frame_skip = int(args[0])
            elif key == "max_frames" and len(args) == 1:
                cfg.max_frames = int(args[0])
            elif key == "roster" and len(args) == 1:
                cfg.roster = load_roster(os.path.join(base_dir, args[0]))
            elif key == "spawn" and len(args) == 4:
                spawns.append(tuple(int(a) for a in args))  # type: ignore[arg-type]
            elif key == "random_mirror" and len(args) == 2:
                mirror = (int(args[0]), int(args[1]))
            else:
                raise ConfigError(f"config line {lineno}: bad directive {line!r}")
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: {exc}") from None
    if spawns and mirror:
        raise ConfigError("config mixes spawn lines with random_mirror")
    cfg.spawns = spawns or None
    cfg.random_mirror = mirror
    cfg.validate()
    return cfg


def load_game_config(path: str) -> GameConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_game_config(f.read(), base_dir=os.path.dirname(path) or ".")


class World:
    """Authoritative match state; exclusive to one match loop."""

    __slots__ = ("tick", "map_w", "map_h", "units", "rng", "roster",
                 "roster_map", "obs_consts", "max_frames", "fog", "result",
                 "final_tick")

    def __init__(self, config: GameConfig):
        self.tick = 0
        self.map_w = config.map_w
        self.map_h = config.map_h
        self.units: dict[int, SimUnit] = {}
        self.rng: RngState = config.seed
        self.roster = tuple(config.roster)
        self.roster_map = roster_map(self.roster)
        self.obs_consts = observation_consts(self.roster_map)
        self.max_frames = config.max_frames
        self.fog = config.fog
        self.result: Optional[MatchResult] = None
        self.final_tick = 0

    def alive(self, player: int) -> bool:
        return any(u.owner == player for u in self.units.values())


def init_world(config: GameConfig) -> World:
    """Build the tick-0 world for a scenario; placement is deterministic."""
    config.validate()
    world = World(config)
    types = world.roster_map

    def spawn(type_id: int, owner: int, x: int, y: int) -> None:
        spec = types.get(type_id)
        if spec is None:
            raise ConfigError(f"spawn references unknown type {type_id}")
        if owner not in (0, 1):
            raise ConfigError(f"spawn owner must be 0 or 1, got {owner}")
        if not (0 <= x < world.map_w and 0 <= y < world.map_h):
            raise ConfigError(f"spawn at ({x},{y}) out of bounds")
        uid = len(world.units)
        world.units[uid] = SimUnit(uid, type_id, owner, x, y, spec)

    if config.spawns is not None:
        for (type_id, owner, x, y) in config.spawns:
            spawn(type_id, owner, x, y)
    else:
        n, type_id = config.random_mirror  # type: ignore[misc]
        lo_x, hi_x = world.map_w // 8, 3 * world.map_w // 8
        lo_y, hi_y = world.map_h // 4, 3 * world.map_h // 4
        if hi_x <= lo_x or hi_y <= lo_y:
            raise ConfigError("map too small for random_mirror placement")
        placed: list[tuple[int, int]] = []
        s = world.rng
        for _ in range(n):
            s, rx = rng_next(s)
            s, ry = rng_next(s)
            placed.append((lo_x + rx % (hi_x - lo_x), lo_y + ry % (hi_y - lo_y)))
        world.rng = s
        for (x, y) in placed:
            spawn(type_id, 0, x, y)
        for (x, y) in placed:
            spawn(type_id, 1, world.map_w - 1 - x, world.map_h - 1 - y)
    return world


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // b
    return q if a >= 0 else -q


def move_toward(pos_fp: tuple[int, int], target: tuple[int, int],
                speed_fp: int, map_w: int, map_h: int) -> tuple[int, int]:
    """One tick of movement toward a pixel target's center.

    Arrives exactly when the remaining distance is within one step;
    otherwise advances speed_fp along the straight line, rounding each axis
    toward zero. The result is clamped inside the map.
    """
    x_fp, y_fp = pos_fp
    tx_fp = target[0] * 256 + 128
    ty_fp = target[1] * 256 + 128
    dx = tx_fp - x_fp
    dy = ty_fp - y_fp
    d2 = dx * dx + dy * dy
    if d2 <= speed_fp * speed_fp:
        nx, ny = tx_fp, ty_fp
    else:
        dist = math.isqrt(d2)
        nx = x_fp + _trunc_div(dx * speed_fp, dist)
        ny = y_fp + _trunc_div(dy * speed_fp, dist)
    nx = min(max(nx, 0), map_w * 256 - 1)
    ny = min(max(ny, 0), map_h * 256 - 1)
    return nx, ny


def resolve_attack(attacker: SimUnit, target: SimUnit,
                   types: dict[int, UnitTypeSpec]) -> tuple[int, int]:
    """Damage split of one weapon hit: shields absorb the raw damage first,
    armor reduces what is left, and any leftover always costs at least 1 hp.
    Resets the attacker's cooldown for the weapon used."""
    spec = types[attacker.type]
    if types[target.type].flyer:
        weapon = spec.air
        attacker.awcd = weapon.cooldown
    else:
        weapon = spec.ground
        attacker.gwcd = weapon.cooldown
    raw = weapon.damage
    to_shield = min(target.shield, raw)
    leftover = raw - to_shield
    to_hp = 0 if leftover == 0 else max(1, leftover - types[target.type].armor)
    return to_shield, to_hp


def apply_commands(world: World, player: int,
                   cmds: Iterable[wire.Command]) -> list[Optional[str]]:
    """Set unit orders from one player's commands, in order.

    Returns one entry per command: None when accepted, else the rejection
    reason. Rejections are data, not errors; later commands to the same
    unit override earlier ones. Attack targets must be currently visible
    to the player under the active fog setting.
    """
    if world.result is not None:
        raise EngineError("match already decided")
    fog = world.fog
    visible: Optional[set[int]] = None
    verdicts: list[Optional[str]] = []
    for cmd in cmds:
        u = world.units.get(cmd.unit_id)
        if u is None:
            verdicts.append("unknown or dead unit")
            continue
        if u.owner != player:
            verdicts.append("not owner")
            continue
        if isinstance(cmd, wire.Stop):
            u.order = None
        elif isinstance(cmd, wire.Move):
            if not (0 <= cmd.x < world.map_w and 0 <= cmd.y < world.map_h):
                verdicts.append("move target out of bounds")
                continue
            u.order = MoveTo(cmd.x, cmd.y)
        elif isinstance(cmd, wire.Attack):
            t = world.units.get(cmd.target_id)
            ok = t is not None and t.owner == player
            if not ok and t is not None:
                if not fog:
                    ok = True
                else:
                    if visible is None:
                        visible = visible_enemies(world.units.values(), player,
                                                  world.roster_map, True)
                    ok = cmd.target_id in visible
            if not ok:
                verdicts.append("target not visible")
                continue
            u.order = AttackUnit(cmd.target_id)
        else:
            verdicts.append("unknown command")
            continue
        verdicts.append(None)
    return verdicts


def step(world: World, ticks: int) -> tuple[World, list]:
    """Advance the world `ticks` ticks (stopping early once decided).

    Per tick: cooldowns decrement; move orders advance (arrival clears the
    order); attack orders chase when out of range or fire when the matching
    weapon is ready; queued damage lands simultaneously so mutual kills are
    possible; deaths are removed; the end condition is evaluated last.
    """
    if world.result is not None:
        raise EngineError("step called on a decided world")
    if ticks < 1:
        raise EngineError("ticks must be >= 1")
    events: list = []
    units = world.units
    types = world.roster_map
    map_w, map_h = world.map_w, world.map_h

    for _ in range(ticks):
        new_tick = world.tick + 1
        ordered = sorted(units)

        # (1) cooldowns tick down
        for u in units.values():
            if u.gwcd > 0:
                u.gwcd -= 1
            if u.awcd > 0:
                u.awcd -= 1

        # (2) movement orders, ascending id
        for uid in ordered:
            u = units[uid]
            order = u.order
            if order is None or order.kind != "move":
                continue
            speed = types[u.type].speed_fp
            u.x_fp, u.y_fp = move_toward((u.x_fp, u.y_fp),
                                         (order.x, order.y), speed,
                                         map_w, map_h)
            if (u.x_fp, u.y_fp) == (order.x * 256 + 128, order.y * 256 + 128):
                u.order = None

        # (3) attack orders, ascending id: chase or fire
        queue: list[tuple[int, int, int, int, int, int]] = []
        for uid in ordered:
            u = units[uid]
            order = u.order
            if order is None or order.kind != "attack":
                continue
            t = units.get(order.target_id)
            if t is None:
                u.order = None
                continue
            spec = types[u.type]
            weapon = spec.air if types[t.type].flyer else spec.ground
            dx = u.x - t.x
            dy = u.y - t.y
            d2 = dx * dx + dy * dy
            if weapon.damage == 0 or d2 > weapon.range * weapon.range:
                u.x_fp, u.y_fp = move_toward((u.x_fp, u.y_fp), (t.x, t.y),
                                             spec.speed_fp, map_w, map_h)
            else:
                cd = u.awcd if types[t.type].flyer else u.gwcd
                if cd == 0:
                    to_shield, to_hp = resolve_attack(u, t, types)
                    queue.append((uid, t.id, to_shield, to_hp, d2,
                                  weapon.range))

        # (4) damage lands together; deaths and stale orders resolve after
        for (att, tid, to_shield, to_hp, d2, rng) in queue:
            t = units[tid]
            eff_s = min(t.shield, to_shield)
            t.shield -= eff_s
            eff_h = min(t.hp, to_hp)
            t.hp -= eff_h
            events.append(DamageEvent(new_tick, att, tid, eff_s, eff_h,
                                      d2, rng))
        dead = [uid for uid in ordered if units[uid].hp <= 0]
        for uid in dead:
            events.append(DeathEvent(new_tick, uid, units[uid].owner))
            del units[uid]
        if dead:
            for u in units.values():
                order = u.order
                if (order is not None and order.kind == "attack"
                        and order.target_id not in units):
                    u.order = None

        # (5) advance the clock
        world.tick = new_tick

        # (6) end conditions
        p0 = p1 = False
        for u in units.values():
            if u.owner == 0:
                p0 = True
            else:
                p1 = True
        if not p0 and not p1:
            world.result = MatchResult(None)
        elif not p1:
            world.result = MatchResult(0)
        elif not p0:
            world.result = MatchResult(1)
        elif world.tick >= world.max_frames:
            world.result = MatchResult(None)
        if world.result is not None:
            world.final_tick = world.tick
            break
    return world, events


def check_end(world: World) -> Optional[tuple[MatchResult, int]]:
    """Evaluate the end condition without mutating the world."""
    if world.result is not None:
        return world.result, world.final_tick
    p0 = world.alive(0)
    p1 = world.alive(1)
    if not p0 and not p1:
        return MatchResult(None), world.tick
    if not p1:
        return MatchResult(0), world.tick
    if not p0:
        return MatchResult(1), world.tick
    if world.tick >= world.max_frames:
        return MatchResult(None), world.tick
    return None
