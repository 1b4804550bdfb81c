"""Deterministic micro-RTS combat environment.

A lockstep client/server protocol around an integer-only combat simulator,
an agent-facing client library, and a bit-exact replay store.
"""

from .model import (DEFAULT_ROSTER, Frame, Position, UnitState, UnitTypeSpec,
                    Weapon, build_player_frame, squared_distance,
                    validate_frame, visible_enemies)
from .wire import (Attack, Command, Commands, End, ErrorMsg, Hello, Message,
                   Move, Quit, Restart, Setup, State, Stop, decode_message,
                   encode_message, read_framed, write_framed)
from .engine import (GameConfig, MatchResult, World, apply_commands,
                     check_end, init_world, move_toward, resolve_attack,
                     rng_next, step)
from .client import (GameClient, attack_closest_policy, can_hit,
                     closest_enemy, connect, idle_policy, in_range,
                     play_match)
from .server import GameServer, ServerConfig, serve_attached, serve_controlled
from .replay import (FrameDelta, ReplayReader, ReplayWriter, delta_apply,
                     delta_encode, load, record)

__version__ = "0.1.0"
