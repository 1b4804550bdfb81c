/** Observation data model mirrored natively; no code shared with the server. */

export interface Weapon {
  damage: number;
  range: number;
  cooldown: number;
}

export interface UnitTypeSpec {
  typeId: number;
  name: string;
  maxHp: number;
  maxShield: number;
  maxEnergy: number;
  armor: number;
  speedFp: number;
  sightRange: number;
  flyer: boolean;
  ground: Weapon;
  air: Weapon;
}

export interface UnitState {
  id: number;
  type: number;
  x: number;
  y: number;
  hp: number;
  shield: number;
  energy: number;
  armor: number;
  size: number;
  gwtype: number;
  awtype: number;
  gwcd: number;
  awcd: number;
  gwattack: number;
  awattack: number;
  gwrange: number;
  awrange: number;
  idle: boolean;
  target: number;
  targetX: number;
  targetY: number;
  enemy: boolean;
}

export interface Frame {
  frameNumber: number;
  unitsMyself: Map<number, UnitState>;
  unitsEnemy: Map<number, UnitState>;
}

export type Command =
  | { kind: "stop"; unitId: number }
  | { kind: "move"; unitId: number; x: number; y: number }
  | { kind: "attack"; unitId: number; targetId: number };

export type Message =
  | { kind: "hello"; protoVersion: number; clientName: string; requestedRole: number }
  | {
      kind: "setup";
      playerId: number;
      mapW: number;
      mapH: number;
      fog: boolean;
      frameSkip: number;
      seed: bigint;
      roster: UnitTypeSpec[];
    }
  | { kind: "state"; frame: Frame }
  | { kind: "commands"; commands: Command[] }
  | { kind: "end"; result: number; finalFrame: number }
  | { kind: "restart" }
  | { kind: "quit" }
  | { kind: "error"; code: number; text: string };

export const RESULT_LOSS = 0;
export const RESULT_WIN = 1;
export const RESULT_DRAW = 2;

export function sortedIds(group: Map<number, UnitState>): number[] {
  return [...group.keys()].sort((a, b) => a - b);
}
