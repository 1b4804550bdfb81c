/** Dense numeric view of a frame for feature pipelines. */
import { Frame, UnitState, sortedIds } from "./model.js";

/** Column order: id plus the 20 canonical wire fields. */
export const FRAME_COLUMNS = [
  "id", "type", "x", "y", "hp", "shield", "energy", "armor", "size",
  "gwtype", "awtype", "gwcd", "awcd", "gwattack", "awattack",
  "gwrange", "awrange", "idle", "target", "target_x", "target_y",
] as const;

function row(u: UnitState): number[] {
  return [
    u.id, u.type, u.x, u.y, u.hp, u.shield, u.energy, u.armor, u.size,
    u.gwtype, u.awtype, u.gwcd, u.awcd, u.gwattack, u.awattack,
    u.gwrange, u.awrange, u.idle ? 1 : 0, u.target, u.targetX, u.targetY,
  ];
}

/** One row per unit: own units in ascending id order, then enemies. */
export function framesToArrays(frame: Frame): number[][] {
  const rows: number[][] = [];
  for (const id of sortedIds(frame.unitsMyself)) {
    rows.push(row(frame.unitsMyself.get(id)!));
  }
  for (const id of sortedIds(frame.unitsEnemy)) {
    rows.push(row(frame.unitsEnemy.get(id)!));
  }
  return rows;
}
