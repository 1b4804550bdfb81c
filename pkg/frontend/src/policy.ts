/** Rule helpers and the reference attack-closest policy. */
import { Command, Frame, UnitState, UnitTypeSpec, sortedIds } from "./model.js";

export function squaredDistance(
  ax: number,
  ay: number,
  bx: number,
  by: number,
): number {
  const dx = ax - bx;
  const dy = ay - by;
  return dx * dx + dy * dy;
}

function typeById(roster: UnitTypeSpec[], typeId: number): UnitTypeSpec {
  const spec = roster.find((t) => t.typeId === typeId);
  if (spec === undefined) throw new Error(`unknown type id ${typeId}`);
  return spec;
}

export function canHit(
  attacker: UnitState,
  target: UnitState,
  roster: UnitTypeSpec[],
): boolean {
  return typeById(roster, target.type).flyer
    ? attacker.awattack > 0
    : attacker.gwattack > 0;
}

export function inRange(
  attacker: UnitState,
  target: UnitState,
  roster: UnitTypeSpec[],
): boolean {
  if (!canHit(attacker, target, roster)) return false;
  const range = typeById(roster, target.type).flyer
    ? attacker.awrange
    : attacker.gwrange;
  return (
    squaredDistance(attacker.x, attacker.y, target.x, target.y) <= range * range
  );
}

/** Nearest visible enemy by squared distance; ties go to the lower id. */
export function closestEnemy(frame: Frame, unitId: number): number | null {
  const me = frame.unitsMyself.get(unitId);
  if (me === undefined) throw new Error(`unit ${unitId} is not in units_myself`);
  let best: number | null = null;
  let bestD = -1;
  for (const id of sortedIds(frame.unitsEnemy)) {
    const e = frame.unitsEnemy.get(id)!;
    const d = squaredDistance(me.x, me.y, e.x, e.y);
    if (best === null || d < bestD) {
      best = id;
      bestD = d;
    }
  }
  return best;
}

/** Every own unit attacks its closest visible enemy, recomputed per frame. */
export function attackClosestCommands(frame: Frame): Command[] {
  const commands: Command[] = [];
  for (const id of sortedIds(frame.unitsMyself)) {
    const target = closestEnemy(frame, id);
    if (target !== null) commands.push({ kind: "attack", unitId: id, targetId: target });
  }
  return commands;
}

export function idleCommands(_frame: Frame): Command[] {
  return [];
}
