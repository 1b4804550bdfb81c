"""Engine tests: rng, placement, movement, combat arithmetic, tick rules,
and bit-exact equivalence against the naive reference engine."""
import random

import pytest

from skirmish import wire
from skirmish.engine import (AttackUnit, ConfigError, DamageEvent, DeathEvent,
                             EngineError, GameConfig, MatchResult, MoveTo,
                             apply_commands, check_end, init_world,
                             move_toward, parse_game_config, resolve_attack,
                             rng_next, step)
from skirmish.model import DEFAULT_ROSTER, build_player_frame

import naive_engine as nv


# ---------------------------------------------------------------------------
# rng


def test_rng_from_zero():
    assert rng_next(0) == (1442695040888963407, 1442695040888963407)


def test_rng_from_one():
    state, value = rng_next(1)
    assert value == 7806831264735756412


def test_rng_is_pure():
    a = rng_next(rng_next(12345)[0])
    b = rng_next(rng_next(12345)[0])
    assert a == b


def test_rng_wraps_to_64_bits():
    state, _ = rng_next((1 << 64) - 1)
    assert 0 <= state < (1 << 64)


# ---------------------------------------------------------------------------
# init_world


def test_explicit_spawns():
    cfg = GameConfig(spawns=[(0, 0, 100, 100), (0, 1, 400, 300)])
    world = init_world(cfg)
    assert world.tick == 0
    assert sorted(world.units) == [0, 1]
    assert (world.units[0].x, world.units[0].y) == (100, 100)
    assert (world.units[1].x, world.units[1].y) == (400, 300)
    assert world.units[0].owner == 0 and world.units[1].owner == 1
    for u in world.units.values():
        assert u.hp == DEFAULT_ROSTER[0].max_hp
        assert u.gwcd == 0 and u.awcd == 0
        assert u.order is None


def test_random_mirror_deterministic():
    cfg = GameConfig(seed=42, random_mirror=(5, 0))
    a, b = init_world(cfg), init_world(cfg)
    assert [(u.x_fp, u.y_fp, u.owner) for u in a.units.values()] == \
        [(u.x_fp, u.y_fp, u.owner) for u in b.units.values()]
    assert a.rng == b.rng


def test_random_mirror_seed0_position():
    # first draw: x = 64 + (1442695040888963407 mod 128) = 143
    cfg = GameConfig(seed=0, random_mirror=(1, 0))
    world = init_world(cfg)
    assert world.units[0].x == 143
    assert world.units[1].x == 511 - 143
    assert world.units[1].y == 511 - world.units[0].y
    assert world.units[0].owner == 0 and world.units[1].owner == 1


def test_random_mirror_bounds():
    for seed in range(20):
        world = init_world(GameConfig(seed=seed, random_mirror=(8, 2)))
        for u in world.units.values():
            if u.owner == 0:
                assert 64 <= u.x < 192
                assert 128 <= u.y < 384
            assert 0 <= u.x < 512 and 0 <= u.y < 512


def test_spawn_validation():
    with pytest.raises(ConfigError):
        init_world(GameConfig(spawns=[(9, 0, 10, 10)]))
    with pytest.raises(ConfigError):
        init_world(GameConfig(spawns=[(0, 0, 512, 10)]))
    with pytest.raises(ConfigError):
        init_world(GameConfig(spawns=[(0, 2, 10, 10)]))
    with pytest.raises(ConfigError):
        init_world(GameConfig())  # no scenario at all


# ---------------------------------------------------------------------------
# move_toward


def test_move_axis_aligned_pixel():
    # one pixel of progress along x per tick at speed 256
    assert move_toward((0, 128), (10, 0), 256, 512, 512) == (256, 128)


def test_move_exact_arrival_345():
    # pos (128,128) to pixel (3,4): delta (768,1024), |delta| = 1280 = speed
    assert move_toward((128, 128), (3, 4), 1280, 512, 512) == (896, 1152)


def test_move_zero_speed():
    assert move_toward((1000, 2000), (100, 100), 0, 512, 512) == (1000, 2000)


def test_move_clamps_to_map():
    # aiming at the far corner cannot leave the map
    x, y = move_toward((128, 128), (511, 511), 10**6, 512, 512)
    assert 0 <= x <= 512 * 256 - 1
    assert 0 <= y <= 512 * 256 - 1


def test_move_truncates_toward_zero():
    # moving in -x: magnitude must truncate, not floor
    nx, ny = move_toward((2688, 128), (0, 0), 256, 512, 512)
    fwd = move_toward((0, 128), (10, 0), 256, 512, 512)
    assert 2688 - nx == fwd[0] - 0  # symmetric progress both directions


# ---------------------------------------------------------------------------
# resolve_attack


def make_duel(attacker_type=0, target_type=0, distance=100):
    cfg = GameConfig(spawns=[(attacker_type, 0, 100, 100),
                             (target_type, 1, 100 + distance, 100)])
    return init_world(cfg)


def test_resolve_attack_plain():
    world = make_duel()
    types = world.roster_map
    att, tgt = world.units[0], world.units[1]
    tgt.shield, tgt.hp = 0, 40
    tgt_armor = 1
    # emulate armor 1 with blade target stats
    world2 = make_duel(target_type=1)
    att2, tgt2 = world2.units[0], world2.units[1]
    tgt2.shield = 0
    assert resolve_attack(att2, tgt2, world2.roster_map) == (0, 5)
    assert att2.gwcd == 15


def test_resolve_attack_shield_absorbs_then_armor():
    world = make_duel(target_type=1)  # blade: shield 20, armor 1
    att, tgt = world.units[0], world.units[1]
    tgt.shield = 4
    assert resolve_attack(att, tgt, world.roster_map) == (4, 1)


def test_resolve_attack_minimum_one():
    # raw 3 vs armor 5 still chips 1 hp
    roster = list(DEFAULT_ROSTER)
    from skirmish.model import UnitTypeSpec, Weapon
    roster.append(UnitTypeSpec(3, "pebble", 40, 0, 0, 5, 256, 256, False,
                               Weapon(3, 128, 15), Weapon(0, 0, 0)))
    cfg = GameConfig(roster=roster, spawns=[(3, 0, 100, 100), (3, 1, 150, 100)])
    world = init_world(cfg)
    att, tgt = world.units[0], world.units[1]
    assert resolve_attack(att, tgt, world.roster_map) == (0, 1)


def test_resolve_attack_air_weapon_and_cooldown():
    world = make_duel(attacker_type=2, target_type=2, distance=50)
    att, tgt = world.units[0], world.units[1]
    assert resolve_attack(att, tgt, world.roster_map) == (0, 7)
    assert att.awcd == 20 and att.gwcd == 0  # air weapon used on a flyer


# ---------------------------------------------------------------------------
# apply_commands


def test_stop_on_idle_unit_accepted():
    world = make_duel()
    verdicts = apply_commands(world, 0, [wire.Stop(0)])
    assert verdicts == [None]
    assert world.units[0].order is None


def test_attack_with_opponents_unit_rejected():
    world = make_duel()
    verdicts = apply_commands(world, 0, [wire.Attack(1, 0)])
    assert verdicts == ["not owner"]


def test_move_out_of_bounds_rejected():
    world = make_duel()
    verdicts = apply_commands(world, 0, [wire.Move(0, 512, 0)])
    assert verdicts == ["move target out of bounds"]
    assert world.units[0].order is None


def test_unknown_unit_rejected():
    world = make_duel()
    assert apply_commands(world, 0, [wire.Stop(77)]) == ["unknown or dead unit"]


def test_attack_invisible_target_rejected_under_fog():
    cfg = GameConfig(fog=True, map_w=2048, map_h=2048,
                     spawns=[(0, 0, 0, 0), (0, 1, 2000, 2000)])
    world = init_world(cfg)
    assert apply_commands(world, 0, [wire.Attack(0, 1)]) == \
        ["target not visible"]
    # same world without fog accepts
    cfg2 = GameConfig(fog=False, map_w=2048, map_h=2048,
                      spawns=[(0, 0, 0, 0), (0, 1, 2000, 2000)])
    world2 = init_world(cfg2)
    assert apply_commands(world2, 0, [wire.Attack(0, 1)]) == [None]
    assert world2.units[0].order == AttackUnit(1)


def test_later_commands_override():
    world = make_duel()
    verdicts = apply_commands(world, 0, [wire.Move(0, 5, 5), wire.Stop(0)])
    assert verdicts == [None, None]
    assert world.units[0].order is None


# ---------------------------------------------------------------------------
# step


def test_two_troopers_first_volley():
    world = make_duel(distance=100)  # 100 <= 128, already in range
    apply_commands(world, 0, [wire.Attack(0, 1)])
    apply_commands(world, 1, [wire.Attack(1, 0)])
    _, events = step(world, 1)
    assert world.units[0].hp == 34 and world.units[1].hp == 34
    assert world.units[0].gwcd == 15 and world.units[1].gwcd == 15
    damage = [e for e in events if isinstance(e, DamageEvent)]
    assert len(damage) == 2
    assert all(e.hp_loss == 6 and e.shield_loss == 0 for e in damage)


def test_two_troopers_after_fifteen_ticks():
    world = make_duel(distance=100)
    apply_commands(world, 0, [wire.Attack(0, 1)])
    apply_commands(world, 1, [wire.Attack(1, 0)])
    step(world, 15)
    # exactly one volley so far; cooldowns have ticked 14 times since
    assert world.units[0].hp == 34 and world.units[1].hp == 34
    assert world.units[0].gwcd == 1 and world.units[1].gwcd == 1


def test_mutual_kill_is_draw():
    world = make_duel(distance=100)
    apply_commands(world, 0, [wire.Attack(0, 1)])
    apply_commands(world, 1, [wire.Attack(1, 0)])
    _, events = step(world, 5000)
    assert world.result == MatchResult(None)
    # 7 volleys of 6 kill a 40 hp trooper; volleys at ticks 1,16,...,91
    assert world.final_tick == 91
    deaths = [e for e in events if isinstance(e, DeathEvent)]
    assert {d.unit_id for d in deaths} == {0, 1}
    assert world.units == {}


def test_move_to_own_position_idles_immediately():
    world = make_duel()
    u = world.units[0]
    before = (u.x_fp, u.y_fp)
    apply_commands(world, 0, [wire.Move(0, u.x, u.y)])
    step(world, 1)
    assert u.order is None
    assert (u.x_fp, u.y_fp) == before


def test_last_kill_sets_result_immediately():
    world = make_duel(distance=100)
    world.units[1].hp = 1
    apply_commands(world, 0, [wire.Attack(0, 1)])
    step(world, 10)
    assert world.result == MatchResult(0)
    assert world.final_tick == 1
    assert world.tick == 1  # processing stopped at the kill


def test_step_on_decided_world_raises():
    world = make_duel(distance=100)
    world.units[1].hp = 1
    apply_commands(world, 0, [wire.Attack(0, 1)])
    step(world, 10)
    with pytest.raises(EngineError):
        step(world, 1)


def test_timeout_draw():
    world = make_duel()
    world.max_frames = 10
    step(world, 100)
    assert world.result == MatchResult(None)
    assert world.tick == 10


def test_chase_out_of_range_target():
    world = make_duel(distance=400)
    apply_commands(world, 0, [wire.Attack(0, 1)])
    step(world, 1)
    u = world.units[0]
    assert u.x == 101  # moved one pixel toward (500, 100)
    assert u.order == AttackUnit(1)
    # runs into range at distance 128, then fires
    step(world, 400 - 128 - 1)
    assert world.units[1].hp == 40
    step(world, 1)
    assert world.units[1].hp == 34


def test_weaponless_attacker_chases_forever():
    # blade (no air weapon) ordered onto a hawk: chases, never fires
    cfg = GameConfig(spawns=[(1, 0, 100, 100), (2, 1, 300, 100)])
    world = init_world(cfg)
    apply_commands(world, 0, [wire.Attack(0, 1)])
    step(world, 300)
    assert world.units[1].hp == DEFAULT_ROSTER[2].max_hp
    assert world.units[0].order == AttackUnit(1)


def test_dead_target_clears_order_same_tick():
    world = init_world(GameConfig(spawns=[(0, 0, 100, 100), (0, 0, 110, 100),
                                          (0, 1, 180, 100), (1, 1, 400, 400)]))
    world.units[2].hp = 1
    apply_commands(world, 0, [wire.Attack(0, 2), wire.Attack(1, 2)])
    step(world, 1)
    assert 2 not in world.units
    assert world.units[0].order is None
    assert world.units[1].order is None
    frame = build_player_frame(world, 0, False)
    assert frame.units_myself[0].idle and frame.units_myself[0].target == -1


def test_check_end_pure():
    world = make_duel()
    assert check_end(world) is None
    for u in [u for u in world.units.values() if u.owner == 1]:
        del world.units[u.id]
    res = check_end(world)
    assert res == (MatchResult(0), world.tick)
    assert world.result is None  # not mutated


def test_check_end_timeout():
    world = make_duel()
    world.tick = world.max_frames
    assert check_end(world) == (MatchResult(None), world.tick)


# ---------------------------------------------------------------------------
# invariants over random scenarios


def random_scenario(rnd: random.Random):
    n = rnd.randint(1, 4)
    spawns = []
    for i in range(n):
        spawns.append((rnd.choice([0, 1, 2]), rnd.randint(0, 1),
                       rnd.randint(0, 255), rnd.randint(0, 255)))
    return GameConfig(map_w=256, map_h=256, seed=rnd.getrandbits(64),
                      max_frames=rnd.randint(5, 60), spawns=spawns,
                      fog=rnd.random() < 0.5)


def random_commands(rnd: random.Random, world, player):
    ids = sorted(world.units)
    if not ids:
        return []
    cmds = []
    for _ in range(rnd.randint(0, 3)):
        uid = rnd.choice(ids + [99])
        kind = rnd.randint(0, 2)
        if kind == 0:
            cmds.append(wire.Stop(uid))
        elif kind == 1:
            cmds.append(wire.Move(uid, rnd.randint(0, 300), rnd.randint(0, 300)))
        else:
            cmds.append(wire.Attack(uid, rnd.choice(ids + [77])))
    return cmds


def test_hp_plus_shield_never_increases():
    rnd = random.Random(5150)
    for _ in range(40):
        cfg = random_scenario(rnd)
        world = init_world(cfg)
        prev = {uid: u.hp + u.shield for uid, u in world.units.items()}
        while world.result is None:
            for player in (0, 1):
                apply_commands(world, player,
                               random_commands(rnd, world, player))
            _, events = step(world, 1)
            for uid, u in world.units.items():
                assert u.hp + u.shield <= prev[uid]
            # total damage dealt equals total hp+shield lost
            lost = sum(prev[uid] - (world.units[uid].hp + world.units[uid].shield
                                    if uid in world.units else 0)
                       for uid in prev)
            dealt = sum(e.shield_loss + e.hp_loss for e in events
                        if isinstance(e, DamageEvent))
            assert dealt == lost
            prev = {uid: u.hp + u.shield for uid, u in world.units.items()}


def test_damage_events_respect_range_and_cooldown():
    rnd = random.Random(909)
    for _ in range(40):
        world = init_world(random_scenario(rnd))
        while world.result is None:
            cooldown_at_start = {
                uid: (u.gwcd, u.awcd) for uid, u in world.units.items()}
            for player in (0, 1):
                apply_commands(world, player,
                               random_commands(rnd, world, player))
            _, events = step(world, 1)
            for e in events:
                if not isinstance(e, DamageEvent):
                    continue
                assert e.dist_sq <= e.weapon_range ** 2
                gw, aw = cooldown_at_start[e.attacker_id]
                # the weapon that fired had at most 1 tick of cooldown left
                assert min(gw, aw) <= 1


def test_idle_units_have_no_target():
    rnd = random.Random(31337)
    for _ in range(20):
        world = init_world(random_scenario(rnd))
        while world.result is None:
            for player in (0, 1):
                apply_commands(world, player,
                               random_commands(rnd, world, player))
            step(world, 1)
            snapshot_world = world if world.result is None else world
            for player in (0, 1):
                frame = build_player_frame(snapshot_world, player, False)
                for u in frame.all_units():
                    if u.idle:
                        assert u.target == -1
                        assert u.targetpos == type(u.targetpos)(0, 0)


# ---------------------------------------------------------------------------
# naive oracle equivalence


def to_naive_roster(roster):
    return {
        t.type_id: {
            "max_hp": t.max_hp, "max_shield": t.max_shield,
            "max_energy": t.max_energy, "armor": t.armor,
            "speed_fp": t.speed_fp, "sight": t.sight_range, "flyer": t.flyer,
            "gdmg": t.ground.damage, "grange": t.ground.range,
            "gcd": t.ground.cooldown, "admg": t.air.damage,
            "arange": t.air.range, "acd": t.air.cooldown,
        } for t in roster
    }


def engine_snapshot(world):
    def order_tuple(o):
        if o is None:
            return ("none",)
        if isinstance(o, MoveTo):
            return ("move", o.x, o.y)
        return ("attack", o.target_id)
    us = tuple(
        (u.id, u.type, u.owner, u.x_fp, u.y_fp, u.hp, u.shield, u.energy,
         u.gwcd, u.awcd, order_tuple(u.order))
        for uid, u in sorted(world.units.items()))
    if world.result is None:
        res = None
    elif world.result.winner is None:
        res = "draw"
    else:
        res = world.result.winner
    return (world.tick, world.rng, res, us)


def to_naive_cmds(cmds):
    out = []
    for c in cmds:
        if isinstance(c, wire.Stop):
            out.append(("stop", c.unit_id))
        elif isinstance(c, wire.Move):
            out.append(("move", c.unit_id, c.x, c.y))
        else:
            out.append(("attack", c.unit_id, c.target_id))
    return out


@pytest.mark.parametrize("base_seed", [0, 1, 2])
def test_engine_matches_naive_oracle(base_seed):
    rnd = random.Random(base_seed)
    for trial in range(40):
        cfg = random_scenario(rnd)
        fog = cfg.fog
        nvr = to_naive_roster(cfg.roster)
        world = init_world(cfg)
        if cfg.spawns is not None:
            nworld = nv.nv_init(cfg.map_w, cfg.map_h, cfg.seed, cfg.max_frames,
                                nvr, spawns=cfg.spawns)
        else:
            nworld = nv.nv_init(cfg.map_w, cfg.map_h, cfg.seed, cfg.max_frames,
                                nvr, mirror=cfg.random_mirror)
        assert engine_snapshot(world) == nv.nv_snapshot(nworld)
        cmd_rnd = random.Random(rnd.getrandbits(32))
        for tick in range(50):
            if world.result is not None:
                break
            for player in (0, 1):
                cmds = random_commands(cmd_rnd, world, player)
                verdicts = apply_commands(world, player, cmds)
                nverdicts = nv.nv_apply(nworld, player, to_naive_cmds(cmds),
                                        fog)
                assert verdicts == nverdicts
            step(world, 1)
            nv.nv_step(nworld, 1)
            assert engine_snapshot(world) == nv.nv_snapshot(nworld), \
                f"divergence at trial {trial} tick {tick}"


# ---------------------------------------------------------------------------
# config parsing


def test_parse_game_config(tmp_path):
    roster_file = tmp_path / "units.roster"
    roster_file.write_text(
        "# one type\ntype 0 trooper 40 0 0 0 256 256 0 6 128 15 6 128 15\n")
    text = """
# scenario
map 256 300
seed 7
fog 1
frame_skip 2
max_frames 99
roster units.roster
spawn 0 0 10 10
spawn 0 1 200 200
"""
    cfg = parse_game_config(text, base_dir=str(tmp_path))
    assert (cfg.map_w, cfg.map_h) == (256, 300)
    assert cfg.seed == 7 and cfg.fog and cfg.frame_skip == 2
    assert cfg.max_frames == 99
    assert len(cfg.roster) == 1
    assert cfg.spawns == [(0, 0, 10, 10), (0, 1, 200, 200)]


def test_parse_game_config_random_mirror():
    cfg = parse_game_config("random_mirror 5 0\nseed 42\n")
    assert cfg.random_mirror == (5, 0)
    assert cfg.spawns is None


def test_parse_game_config_rejects_mixed_scenario():
    with pytest.raises(ConfigError):
        parse_game_config("spawn 0 0 1 1\nrandom_mirror 5 0\n")


def test_parse_game_config_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_game_config("warp 9\n")
