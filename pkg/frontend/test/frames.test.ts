import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { decodeMessage } from "../src/codec.js";
import { FRAME_COLUMNS, framesToArrays } from "../src/frames.js";
import { Frame } from "../src/model.js";
import {
  attackClosestCommands,
  canHit,
  closestEnemy,
  inRange,
  squaredDistance,
} from "../src/policy.js";

const GOLDEN = join(dirname(fileURLToPath(import.meta.url)), "..", "..", "tests", "golden");

function loadFrame(name: string): Frame {
  const msg = decodeMessage(readFileSync(join(GOLDEN, name)));
  if (msg.kind !== "state") throw new Error("fixture is not a state");
  return msg.frame;
}

describe("framesToArrays", () => {
  it("produces no rows for an empty frame", () => {
    expect(framesToArrays(loadFrame("state_empty.bin"))).toEqual([]);
  });

  it("produces one 21-column row per unit", () => {
    const frame = loadFrame("state_one_unit.bin");
    const rows = framesToArrays(frame);
    expect(rows.length).toBe(1);
    expect(rows[0].length).toBe(FRAME_COLUMNS.length);
    expect(rows[0].length).toBe(21);
    const u = frame.unitsMyself.get(7)!;
    expect(rows[0]).toEqual([
      7, u.type, u.x, u.y, u.hp, u.shield, u.energy, u.armor, u.size,
      u.gwtype, u.awtype, u.gwcd, u.awcd, u.gwattack, u.awattack,
      u.gwrange, u.awrange, u.idle ? 1 : 0, u.target, u.targetX, u.targetY,
    ]);
  });

  it("orders own units before enemies, each ascending by id", () => {
    const frame = loadFrame("state_two_groups.bin");
    const rows = framesToArrays(frame);
    expect(rows.map((r) => r[0])).toEqual([1, 4, 9]);
    expect(rows.length).toBe(frame.unitsMyself.size + frame.unitsEnemy.size);
  });

  it("always yields one row per unit on the random fixtures", () => {
    for (const name of ["state_random_0.bin", "state_random_1.bin", "state_random_2.bin"]) {
      const frame = loadFrame(name);
      const rows = framesToArrays(frame);
      expect(rows.length).toBe(frame.unitsMyself.size + frame.unitsEnemy.size);
      const myIds = rows.slice(0, frame.unitsMyself.size).map((r) => r[0]);
      expect(myIds).toEqual([...myIds].sort((a, b) => a - b));
      for (const row of rows) expect(row.length).toBe(21);
    }
  });
});

describe("rule helpers", () => {
  const frame = loadFrame("state_two_groups.bin");
  const roster = [
    {
      typeId: 0, name: "trooper", maxHp: 40, maxShield: 0, maxEnergy: 0,
      armor: 0, speedFp: 256, sightRange: 256, flyer: false,
      ground: { damage: 6, range: 128, cooldown: 15 },
      air: { damage: 6, range: 128, cooldown: 15 },
    },
    {
      typeId: 1, name: "blade", maxHp: 80, maxShield: 20, maxEnergy: 0,
      armor: 1, speedFp: 320, sightRange: 224, flyer: false,
      ground: { damage: 8, range: 16, cooldown: 14 },
      air: { damage: 0, range: 0, cooldown: 0 },
    },
    {
      typeId: 2, name: "hawk", maxHp: 60, maxShield: 0, maxEnergy: 0,
      armor: 0, speedFp: 384, sightRange: 288, flyer: true,
      ground: { damage: 7, range: 160, cooldown: 20 },
      air: { damage: 7, range: 160, cooldown: 20 },
    },
  ];

  it("computes integer squared distance", () => {
    expect(squaredDistance(0, 0, 3, 4)).toBe(25);
  });

  it("matches weapons to the target's air/ground class", () => {
    const trooper = frame.unitsMyself.get(1)!; // type 0
    const blade = frame.unitsMyself.get(4)!; // type 1, no air weapon
    const hawk = frame.unitsEnemy.get(9)!; // type 2, flyer
    expect(canHit(trooper, hawk, roster)).toBe(true);
    expect(canHit(blade, hawk, roster)).toBe(false);
    expect(inRange(blade, hawk, roster)).toBe(false);
  });

  it("breaks closest-enemy ties toward the lower id", () => {
    const mk = (id: number, x: number, enemy: boolean) => ({
      id, type: 0, x, y: 0, hp: 40, shield: 0, energy: 0, armor: 0, size: 1,
      gwtype: 1, awtype: 1, gwcd: 0, awcd: 0, gwattack: 6, awattack: 6,
      gwrange: 128, awrange: 128, idle: true, target: -1,
      targetX: 0, targetY: 0, enemy,
    });
    const tie: Frame = {
      frameNumber: 0,
      unitsMyself: new Map([[0, mk(0, 100, false)]]),
      unitsEnemy: new Map([
        [5, mk(5, 90, true)],
        [3, mk(3, 110, true)],
      ]),
    };
    expect(closestEnemy(tie, 0)).toBe(3);
    expect(attackClosestCommands(tie)).toEqual([
      { kind: "attack", unitId: 0, targetId: 3 },
    ]);
  });
});
