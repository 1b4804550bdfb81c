"""Observation data model: unit snapshots, per-player frames, visibility.

Everything here is integer-valued and immutable once constructed; the
operations are pure functions, so they are safe to call from any thread.
Distances are compared as squared integers throughout (no floats).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple


class Position(NamedTuple):
    x: int
    y: int


def squared_distance(a: Position, b: Position) -> int:
    dx = a.x - b.x
    dy = a.y - b.y
    return dx * dx + dy * dy


@dataclass(frozen=True, slots=True)
class Weapon:
    damage: int
    range: int
    cooldown: int


NO_WEAPON = Weapon(0, 0, 0)


@dataclass(frozen=True, slots=True)
class UnitTypeSpec:
    """One roster entry: the static stats shared by all units of a type.

    `speed_fp` is in 1/256-pixel units per tick (fixed point 24.8).
    """

    type_id: int
    name: str
    max_hp: int
    max_shield: int
    max_energy: int
    armor: int
    speed_fp: int
    sight_range: int
    flyer: bool
    ground: Weapon
    air: Weapon

    def __post_init__(self) -> None:
        for w, label in ((self.ground, "ground"), (self.air, "air")):
            if w.damage == 0 and (w.range != 0 or w.cooldown != 0):
                raise ValueError(
                    f"type {self.type_id}: {label} weapon with zero damage "
                    f"must have zero range and cooldown"
                )
        if self.speed_fp < 0:
            raise ValueError(f"type {self.type_id}: negative speed")
        if self.sight_range <= 0:
            raise ValueError(f"type {self.type_id}: sight range must be positive")
        if not 0 <= self.type_id <= 255:
            raise ValueError(f"type id {self.type_id} outside 0..255")


# Units carry a size class copied from the roster; the roster format does
# not parameterize it, so every type gets size class 1.
UNIT_SIZE = 1

DEFAULT_ROSTER: tuple[UnitTypeSpec, ...] = (
    UnitTypeSpec(0, "trooper", 40, 0, 0, 0, 256, 256, False,
                 Weapon(6, 128, 15), Weapon(6, 128, 15)),
    UnitTypeSpec(1, "blade", 80, 20, 0, 1, 320, 224, False,
                 Weapon(8, 16, 14), NO_WEAPON),
    UnitTypeSpec(2, "hawk", 60, 0, 0, 0, 384, 288, True,
                 Weapon(7, 160, 20), Weapon(7, 160, 20)),
)


def roster_map(roster: Iterable[UnitTypeSpec]) -> dict[int, UnitTypeSpec]:
    out: dict[int, UnitTypeSpec] = {}
    for spec in roster:
        if spec.type_id in out:
            raise ValueError(f"duplicate type id {spec.type_id} in roster")
        out[spec.type_id] = spec
    return out


def parse_roster(text: str) -> list[UnitTypeSpec]:
    """Parse the roster text format.

    One line per type:
    type <id> <name> <max_hp> <max_shield> <max_energy> <armor> <speed_fp>
         <sight> <flyer:0|1> <gdmg> <grange> <gcd> <admg> <arange> <acd>
    `#` starts a comment line.
    """
    roster: list[UnitTypeSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "type" or len(parts) != 16:
            raise ValueError(f"roster line {lineno}: expected 'type' and 15 fields")
        try:
            nums = [int(p) for p in parts[1:2] + parts[3:]]
        except ValueError as exc:
            raise ValueError(f"roster line {lineno}: {exc}") from None
        (tid, max_hp, max_shield, max_energy, armor, speed_fp, sight,
         flyer, gdmg, grange, gcd, admg, arange, acd) = nums
        roster.append(UnitTypeSpec(
            tid, parts[2], max_hp, max_shield, max_energy, armor,
            speed_fp, sight, bool(flyer),
            Weapon(gdmg, grange, gcd), Weapon(admg, arange, acd),
        ))
    if not roster:
        raise ValueError("roster is empty")
    roster_map(roster)  # reject duplicate ids
    return roster


def load_roster(path: str) -> list[UnitTypeSpec]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_roster(f.read())


class UnitState(NamedTuple):
    """One unit's observable record, as reported to a player each tick."""

    id: int
    type: int
    position: Position
    hp: int
    shield: int
    energy: int
    armor: int
    size: int
    gwtype: int
    awtype: int
    gwcd: int
    awcd: int
    gwattack: int
    awattack: int
    gwrange: int
    awrange: int
    idle: bool
    target: int
    targetpos: Position
    enemy: bool


@dataclass(slots=True)
class Frame:
    """Per-player observation: tick counter plus own and visible enemy units."""

    frame_number: int
    units_myself: dict[int, UnitState] = field(default_factory=dict)
    units_enemy: dict[int, UnitState] = field(default_factory=dict)

    def all_units(self) -> Iterable[UnitState]:
        yield from self.units_myself.values()
        yield from self.units_enemy.values()


def validate_frame(frame: Frame, map_w: int, map_h: int,
                   roster: Iterable[UnitTypeSpec]) -> list[str]:
    """Check every frame invariant; return one message per violation.

    An unknown type id is reported as a violation, not raised. A frame that
    came out of `build_player_frame` must produce zero violations.
    """
    types = roster if isinstance(roster, dict) else roster_map(roster)
    violations: list[str] = []
    if frame.frame_number < 0:
        violations.append("frame: negative frame_number")

    overlap = frame.units_myself.keys() & frame.units_enemy.keys()
    for uid in sorted(overlap):
        violations.append(f"unit {uid}: present in both groups")

    for group, expect_enemy in ((frame.units_myself, False),
                                (frame.units_enemy, True)):
        for uid, u in group.items():
            if uid != u.id:
                violations.append(f"unit {u.id}: keyed as {uid}")
            if u.enemy != expect_enemy:
                violations.append(f"unit {u.id}: enemy flag does not match group")
            spec = types.get(u.type)
            if spec is None:
                violations.append(f"unit {u.id}: unknown type {u.type}")
                continue
            if not 0 <= u.position.x < map_w:
                violations.append(f"unit {u.id}: x out of bounds")
            if not 0 <= u.position.y < map_h:
                violations.append(f"unit {u.id}: y out of bounds")
            if not 0 <= u.hp <= spec.max_hp:
                violations.append(f"unit {u.id}: hp outside 0..{spec.max_hp}")
            if not 0 <= u.shield <= spec.max_shield:
                violations.append(f"unit {u.id}: shield outside 0..{spec.max_shield}")
            if not 0 <= u.energy <= spec.max_energy:
                violations.append(f"unit {u.id}: energy outside 0..{spec.max_energy}")
            if not 0 <= u.gwcd <= spec.ground.cooldown:
                violations.append(f"unit {u.id}: gwcd outside 0..{spec.ground.cooldown}")
            if not 0 <= u.awcd <= spec.air.cooldown:
                violations.append(f"unit {u.id}: awcd outside 0..{spec.air.cooldown}")
            if (u.gwtype == 0) != (u.gwattack == 0) or (u.gwtype == 0) != (u.gwrange == 0):
                violations.append(f"unit {u.id}: inconsistent ground weapon fields")
            if (u.awtype == 0) != (u.awattack == 0) or (u.awtype == 0) != (u.awrange == 0):
                violations.append(f"unit {u.id}: inconsistent air weapon fields")
            if u.armor < 0:
                violations.append(f"unit {u.id}: negative armor")
            if u.target < -1:
                violations.append(f"unit {u.id}: target below -1")
    return violations


def visible_enemies(world_units, observer: int, roster, fog: bool) -> set[int]:
    """Ids of units opposing `observer` that it can currently see.

    With fog disabled every opposing unit is visible. With fog enabled a
    unit is visible iff it sits within the sight range of at least one
    observer-owned unit (squared-distance comparison). `world_units` is any
    iterable of live sim units carrying owner/type/x/y.
    """
    types = roster if isinstance(roster, dict) else roster_map(roster)
    units = list(world_units)
    if not fog:
        return {u.id for u in units if u.owner != observer}
    own = [(u.x, u.y, types[u.type].sight_range) for u in units
           if u.owner == observer]
    seen: set[int] = set()
    for u in units:
        if u.owner == observer:
            continue
        for (ox, oy, sight) in own:
            dx = u.x - ox
            dy = u.y - oy
            if dx * dx + dy * dy <= sight * sight:
                seen.add(u.id)
                break
    return seen


def _obs_consts(spec: UnitTypeSpec) -> tuple:
    """Per-type constants in observation order (armor and weapon stats)."""
    gw, aw = spec.ground, spec.air
    return (spec.armor, 1 if gw.damage > 0 else 0, 1 if aw.damage > 0 else 0,
            gw.damage, aw.damage, gw.range, aw.range)


def _snapshot_unit(u, consts: tuple, enemy: bool) -> UnitState:
    order = u.order
    target = -1
    tx = ty = 0
    if order is not None:
        if order.kind == "attack":
            target = order.target_id
        else:
            tx, ty = order.x, order.y
    armor, gwtype, awtype, gwattack, awattack, gwrange, awrange = consts
    return UnitState(
        u.id, u.type, Position(u.x_fp >> 8, u.y_fp >> 8),
        u.hp, u.shield, u.energy, armor, UNIT_SIZE, gwtype, awtype,
        u.gwcd, u.awcd, gwattack, awattack, gwrange, awrange,
        order is None, target, Position(tx, ty), enemy,
    )


def unit_state_from_sim(u, spec: UnitTypeSpec, enemy: bool) -> UnitState:
    """Snapshot one live sim unit into its observable record."""
    return _snapshot_unit(u, _obs_consts(spec), enemy)


def observation_consts(types: dict[int, UnitTypeSpec]) -> dict[int, tuple]:
    """Precompute per-type observation constants for a whole roster."""
    return {tid: _obs_consts(spec) for tid, spec in types.items()}


def build_player_frame(world, player: int, fog: bool) -> Frame:
    """Build the observation `player` receives for the world's current tick."""
    if player not in (0, 1):
        raise ValueError(f"unknown player id {player}")
    types = world.roster_map
    consts = getattr(world, "obs_consts", None)
    if consts is None:
        consts = observation_consts(types)
    mine: dict[int, UnitState] = {}
    theirs: dict[int, UnitState] = {}
    units = world.units
    visible = visible_enemies(units.values(), player, types, True) if fog \
        else None
    for uid in sorted(units):
        u = units[uid]
        if u.owner == player:
            mine[uid] = _snapshot_unit(u, consts[u.type], False)
        elif visible is None or uid in visible:
            theirs[uid] = _snapshot_unit(u, consts[u.type], True)
    return Frame(world.tick, mine, theirs)


def player_state_ints(world, player: int, fog: bool) -> tuple[list[int], list[int]]:
    """Flatten the player's observation to wire-order ints, skipping the
    UnitState objects; feeds the codec's fast state encoder."""
    types = world.roster_map
    consts = getattr(world, "obs_consts", None)
    if consts is None:
        consts = observation_consts(types)
    units = world.units
    visible = visible_enemies(units.values(), player, types, True) if fog \
        else None
    mine: list[int] = []
    theirs: list[int] = []
    for uid in sorted(units):
        u = units[uid]
        enemy = u.owner != player
        if enemy and visible is not None and uid not in visible:
            continue
        order = u.order
        if order is None:
            idle, target, tx, ty = 1, -1, 0, 0
        elif order.kind == "attack":
            idle, target, tx, ty = 0, order.target_id, 0, 0
        else:
            idle, target, tx, ty = 0, -1, order.x, order.y
        armor, gwtype, awtype, gwattack, awattack, gwrange, awrange = \
            consts[u.type]
        (theirs if enemy else mine).extend((
            uid, u.type, u.x_fp >> 8, u.y_fp >> 8, u.hp, u.shield, u.energy,
            armor, UNIT_SIZE, gwtype, awtype, u.gwcd, u.awcd, gwattack,
            awattack, gwrange, awrange, idle, target, tx, ty))
    return mine, theirs
