"""The golden fixtures pin the wire format across implementations: decode
must produce the manifest's values, re-encode must reproduce the bytes."""
import json
from pathlib import Path

import pytest

from skirmish import wire
from skirmish.model import Frame, Position, UnitState, UnitTypeSpec, Weapon

GOLDEN = Path(__file__).parent / "golden"


def unit_from_json(d: dict, enemy: bool) -> UnitState:
    return UnitState(
        id=d["id"], type=d["type"], position=Position(d["x"], d["y"]),
        hp=d["hp"], shield=d["shield"], energy=d["energy"], armor=d["armor"],
        size=d["size"], gwtype=d["gwtype"], awtype=d["awtype"],
        gwcd=d["gwcd"], awcd=d["awcd"], gwattack=d["gwattack"],
        awattack=d["awattack"], gwrange=d["gwrange"], awrange=d["awrange"],
        idle=d["idle"], target=d["target"],
        targetpos=Position(d["target_x"], d["target_y"]), enemy=enemy)


def type_from_json(d: dict) -> UnitTypeSpec:
    return UnitTypeSpec(
        d["type_id"], d["name"], d["max_hp"], d["max_shield"],
        d["max_energy"], d["armor"], d["speed_fp"], d["sight_range"],
        d["flyer"],
        Weapon(d["ground"]["damage"], d["ground"]["range"],
               d["ground"]["cooldown"]),
        Weapon(d["air"]["damage"], d["air"]["range"], d["air"]["cooldown"]))


def message_from_json(d: dict) -> wire.Message:
    kind = d["kind"]
    if kind == "hello":
        return wire.Hello(d["proto_version"], d["client_name"],
                          d["requested_role"])
    if kind == "setup":
        return wire.Setup(d["player_id"], d["map_w"], d["map_h"], d["fog"],
                          d["frame_skip"], int(d["seed"]),
                          tuple(type_from_json(t) for t in d["roster"]))
    if kind == "state":
        f = d["frame"]
        return wire.State(Frame(
            f["frame_number"],
            {u["id"]: unit_from_json(u, False) for u in f["units_myself"]},
            {u["id"]: unit_from_json(u, True) for u in f["units_enemy"]}))
    if kind == "commands":
        cmds = []
        for c in d["commands"]:
            if c["kind"] == "stop":
                cmds.append(wire.Stop(c["unit_id"]))
            elif c["kind"] == "move":
                cmds.append(wire.Move(c["unit_id"], c["x"], c["y"]))
            else:
                cmds.append(wire.Attack(c["unit_id"], c["target_id"]))
        return wire.Commands(tuple(cmds))
    if kind == "end":
        return wire.End(d["result"], d["final_frame"])
    if kind == "restart":
        return wire.Restart()
    if kind == "quit":
        return wire.Quit()
    if kind == "error":
        return wire.ErrorMsg(d["code"], d["text"])
    raise ValueError(kind)


def load_manifest():
    with open(GOLDEN / "manifest.json", encoding="utf-8") as f:
        return json.load(f)


@pytest.mark.parametrize("entry", load_manifest(),
                         ids=lambda e: e["name"])
def test_golden_fixture(entry):
    blob = (GOLDEN / entry["bin"]).read_bytes()
    expected = message_from_json(entry["message"])
    assert wire.decode_message(blob) == expected, "decode mismatch"
    assert wire.encode_message(expected) == blob, "re-encode mismatch"


def test_manifest_covers_every_tag():
    kinds = {e["message"]["kind"] for e in load_manifest()}
    assert kinds == {"hello", "setup", "state", "commands", "end",
                     "restart", "quit", "error"}
