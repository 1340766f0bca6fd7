"""Synthetic league generator with a known value surface.

Players are parameterized archetypes (action mix, success rates, zone
movement). Play evolves on a coarse 12x8 pitch grid carrying a scoring
potential Phi per cell; each action's on-ball value is Phi(end) - Phi(start)
on success and -fail_penalty * Phi(start) on failure, so residual value has a
closed analytic structure the tests can reason about.

All values live on a 1/1024 grid (integer arithmetic in the hot path), which
keeps corpora byte-identical across runs and makes residual-value suffix sums
exact in double precision. The per-step dynamics are shared between match
generation and the Monte-Carlo residual-value oracle.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .codec import (
    AWAY,
    HOME,
    Annotation,
    Episode,
    MalformedInputError,
    RawEvent,
    RawMatch,
    SPADL_ACTION_TYPES,
    Vocabulary,
    segment_episodes,
)

ZONE_COLS = 12
ZONE_ROWS = 8
ZONE_WIDTH_CM = 875  # 105 m / 12
ZONE_HEIGHT_CM = 850  # 68 m / 8

PHI_GRID = 1024  # value units per 1.0 of on-ball value

SHOT_TYPES = frozenset({"shot", "shot_penalty", "shot_freekick"})

ROLE_CLASSES = ("attacker", "midfielder", "defender", "keeper")

ZONE_BANDS = ("defense", "middle", "attack")


def zone_of(x: float, y: float) -> tuple[int, int]:
    """Grid cell of a pitch coordinate."""
    zx = min(max(int(x * 100) // ZONE_WIDTH_CM, 0), ZONE_COLS - 1)
    zy = min(max(int(y * 100) // ZONE_HEIGHT_CM, 0), ZONE_ROWS - 1)
    return zx, zy


def band_of(side: str, zx: int) -> str:
    """Pitch third relative to the acting team's attacking direction."""
    col = zx if side == HOME else ZONE_COLS - 1 - zx
    if col < 4:
        return "defense"
    if col < 8:
        return "middle"
    return "attack"


def _other(side: str) -> str:
    return AWAY if side == HOME else HOME


@dataclass(frozen=True)
class Archetype:
    """Generating parameters of one synthetic player type.

    ``action_dist`` maps each zone band to a categorical distribution over
    action types; ``zone_transition`` maps an action type to a categorical
    over (dx, dy) grid offsets in the attacking direction.
    """

    name: str
    role_class: str
    action_dist: Mapping[str, Mapping[str, float]]
    success_rate: Mapping[str, float]
    zone_transition: Mapping[str, tuple[tuple[int, int, float], ...]]

    def __post_init__(self):
        if self.role_class not in ROLE_CLASSES:
            raise ValueError(f"unknown role class {self.role_class!r}")
        for band in ZONE_BANDS:
            if band not in self.action_dist:
                raise ValueError(f"archetype {self.name!r} missing band {band!r}")
            total = math.fsum(self.action_dist[band].values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"action_dist[{band!r}] of {self.name!r} sums to {total}, not 1")
            for atype in self.action_dist[band]:
                if atype not in self.success_rate:
                    raise ValueError(f"{self.name!r} has no success rate for {atype!r}")
        for atype, rate in self.success_rate.items():
            if not (0.0 <= rate <= 1.0):
                raise ValueError(f"success rate for {atype!r} out of [0,1]: {rate}")
        for atype, kernel in self.zone_transition.items():
            total = math.fsum(p for _, _, p in kernel)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"zone_transition[{atype!r}] of {self.name!r} sums to {total}, not 1")

    def expected_action_dist(self) -> dict[str, float]:
        """Action-type distribution averaged uniformly over zone bands."""
        acc: dict[str, float] = {}
        for band in ZONE_BANDS:
            for atype, p in self.action_dist[band].items():
                acc[atype] = acc.get(atype, 0.0) + p / len(ZONE_BANDS)
        return acc


@dataclass(frozen=True)
class ValueSurface:
    """Scoring potential per grid cell, in units of 1/1024.

    ``grid[zx][zy]`` is oriented for the home team (attacking toward high x);
    the away perspective mirrors the columns. ``goal_units`` is the virtual
    potential of a scored goal.
    """

    grid: tuple[tuple[int, ...], ...]
    goal_units: int = 512

    def __post_init__(self):
        if len(self.grid) != ZONE_COLS or any(len(col) != ZONE_ROWS for col in self.grid):
            raise ValueError(f"value surface must be {ZONE_COLS}x{ZONE_ROWS}")

    def phi_units(self, side: str, zx: int, zy: int) -> int:
        col = zx if side == HOME else ZONE_COLS - 1 - zx
        return self.grid[col][zy]

    def phi(self, side: str, zx: int, zy: int) -> float:
        return self.phi_units(side, zx, zy) / PHI_GRID


def flat_surface(units: int = 0, goal_units: int = 0) -> ValueSurface:
    return ValueSurface(
        grid=tuple(tuple(units for _ in range(ZONE_ROWS)) for _ in range(ZONE_COLS)),
        goal_units=goal_units,
    )


def default_surface() -> ValueSurface:
    """Monotone ramp toward the opponent goal, flat across pitch width."""
    ramp = (8, 12, 18, 26, 36, 50, 70, 100, 145, 205, 285, 400)
    return ValueSurface(grid=tuple(tuple(v for _ in range(ZONE_ROWS)) for v in ramp))


@dataclass(frozen=True)
class SyntheticLeague:
    """Player universe, squads, and shared match dynamics parameters."""

    players: Mapping[str, Archetype]
    teams: Mapping[str, tuple[str, ...]]
    value_surface: ValueSurface
    rng_seed: int
    fail_penalty: float = 0.2
    match_event_range: tuple[int, int] = (2200, 2600)
    episode_end_denominator: int = 30  # 0 disables stochastic episode ends
    max_episode_events: int = 36
    fail_dead_ball_prob: float = 0.40
    shot_miss_dead_ball_prob: float = 0.8

    def __post_init__(self):
        for team, squad in self.teams.items():
            for pid in squad:
                if pid not in self.players:
                    raise ValueError(f"team {team!r} lists unknown player {pid!r}")

    @property
    def player_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.players))

    def role_of(self, player_id: str) -> str:
        return self.players[player_id].role_class

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(players=self.player_ids, action_types=SPADL_ACTION_TYPES)

    def penalty_units(self, side: str, zx: int, zy: int) -> int:
        raw = self.fail_penalty * self.value_surface.phi_units(side, zx, zy)
        return int(math.floor(raw + 0.5))


def _uniform_bands(dist: Mapping[str, float]) -> dict[str, dict[str, float]]:
    return {band: dict(dist) for band in ZONE_BANDS}


_STAY = ((0, 0, 1.0),)


def _default_archetypes() -> dict[str, Archetype]:
    dribbler = Archetype(
        name="dribbler-forward",
        role_class="attacker",
        action_dist=_uniform_bands(
            {"dribble": 0.58, "take_on": 0.12, "pass": 0.16, "shot": 0.06, "cross": 0.04, "bad_touch": 0.04}
        ),
        success_rate={
            "dribble": 0.92, "take_on": 0.84, "pass": 0.86, "shot": 0.10, "cross": 0.55, "bad_touch": 0.05,
        },
        zone_transition={
            "dribble": ((1, 0, 0.5), (1, 1, 0.15), (1, -1, 0.15), (2, 0, 0.2)),
            "take_on": ((2, 0, 0.5), (1, 0, 0.3), (2, 1, 0.1), (2, -1, 0.1)),
            "pass": ((1, 0, 0.4), (0, 1, 0.2), (0, -1, 0.2), (1, 1, 0.1), (1, -1, 0.1)),
            "cross": ((1, 1, 0.25), (1, -1, 0.25), (2, 1, 0.25), (2, -1, 0.25)),
            "bad_touch": _STAY,
        },
    )
    target = Archetype(
        name="target-forward",
        role_class="attacker",
        action_dist=_uniform_bands(
            {"dribble": 0.40, "pass": 0.28, "shot": 0.14, "take_on": 0.05, "cross": 0.05, "bad_touch": 0.08}
        ),
        success_rate={
            "dribble": 0.85, "pass": 0.80, "shot": 0.10, "take_on": 0.75, "cross": 0.50, "bad_touch": 0.05,
        },
        zone_transition={
            "dribble": ((1, 0, 0.6), (0, 1, 0.2), (0, -1, 0.2)),
            "take_on": ((1, 0, 0.7), (2, 0, 0.3)),
            "pass": ((1, 0, 0.4), (0, 1, 0.3), (0, -1, 0.3)),
            "cross": ((1, 1, 0.5), (1, -1, 0.5)),
            "bad_touch": _STAY,
        },
    )
    creative = Archetype(
        name="creative-midfielder",
        role_class="midfielder",
        action_dist=_uniform_bands(
            {"pass": 0.52, "dribble": 0.26, "cross": 0.08, "take_on": 0.06, "shot": 0.04, "bad_touch": 0.04}
        ),
        success_rate={
            "pass": 0.88, "dribble": 0.88, "cross": 0.60, "take_on": 0.70, "shot": 0.06, "bad_touch": 0.05,
        },
        zone_transition={
            "pass": ((1, 0, 0.45), (1, 1, 0.15), (1, -1, 0.15), (0, 1, 0.1), (0, -1, 0.1), (2, 0, 0.05)),
            "dribble": ((1, 0, 0.5), (0, 1, 0.25), (0, -1, 0.25)),
            "cross": ((2, 1, 0.25), (2, -1, 0.25), (1, 1, 0.25), (1, -1, 0.25)),
            "take_on": ((1, 0, 0.8), (2, 0, 0.2)),
            "bad_touch": _STAY,
        },
    )
    holding = Archetype(
        name="holding-midfielder",
        role_class="midfielder",
        action_dist=_uniform_bands(
            {"pass": 0.60, "interception": 0.12, "tackle": 0.10, "dribble": 0.12, "clearance": 0.04, "foul": 0.02}
        ),
        success_rate={
            "pass": 0.92, "interception": 0.75, "tackle": 0.70, "dribble": 0.85, "clearance": 0.60, "foul": 0.0,
        },
        zone_transition={
            "pass": ((0, 1, 0.3), (0, -1, 0.3), (1, 0, 0.25), (-1, 0, 0.15)),
            "dribble": ((0, 1, 0.35), (0, -1, 0.35), (1, 0, 0.3)),
            "interception": _STAY,
            "tackle": _STAY,
            "clearance": ((2, 0, 0.5), (3, 0, 0.5)),
            "foul": _STAY,
        },
    )
    stopper = Archetype(
        name="passer-defender",
        role_class="defender",
        action_dist=_uniform_bands(
            {"pass": 0.64, "clearance": 0.12, "tackle": 0.10, "interception": 0.08, "dribble": 0.06}
        ),
        success_rate={
            "pass": 0.80, "clearance": 0.50, "tackle": 0.70, "interception": 0.75, "dribble": 0.78,
        },
        zone_transition={
            "pass": ((-1, 0, 0.4), (0, 1, 0.25), (0, -1, 0.25), (1, 0, 0.1)),
            "clearance": ((2, 0, 0.3), (3, 0, 0.3), (2, 1, 0.2), (2, -1, 0.2)),
            "tackle": _STAY,
            "interception": _STAY,
            "dribble": ((0, 1, 0.4), (0, -1, 0.4), (-1, 0, 0.2)),
        },
    )
    keeper = Archetype(
        name="sweeper-keeper",
        role_class="keeper",
        action_dist=_uniform_bands(
            {"pass": 0.55, "keeper_pick_up": 0.12, "keeper_save": 0.10, "clearance": 0.15,
             "keeper_punch": 0.04, "keeper_claim": 0.04}
        ),
        success_rate={
            "pass": 0.82, "keeper_pick_up": 0.95, "keeper_save": 0.70, "clearance": 0.60,
            "keeper_punch": 0.60, "keeper_claim": 0.85,
        },
        zone_transition={
            "pass": ((1, 0, 0.3), (2, 0, 0.3), (0, 1, 0.2), (0, -1, 0.2)),
            "keeper_pick_up": _STAY,
            "keeper_save": _STAY,
            "clearance": ((3, 0, 0.5), (2, 0, 0.5)),
            "keeper_punch": ((1, 0, 1.0),),
            "keeper_claim": _STAY,
        },
    )
    return {a.name: a for a in (dribbler, target, creative, holding, stopper, keeper)}


# Squad template: archetype name -> number of squad slots / starting slots.
SQUAD_TEMPLATE = (
    ("sweeper-keeper", 1, 1),
    ("passer-defender", 4, 4),
    ("holding-midfielder", 2, 2),
    ("creative-midfielder", 2, 2),
    ("dribbler-forward", 3, 1),
    ("target-forward", 2, 1),
)


def default_league(seed: int = 7) -> SyntheticLeague:
    """4 teams x 14 players over 6 archetypes, with the default ramp surface."""
    archetypes = _default_archetypes()
    players: dict[str, Archetype] = {}
    teams: dict[str, tuple[str, ...]] = {}
    counter = 1
    for t in range(1, 5):
        squad = []
        for arch_name, squad_slots, _ in SQUAD_TEMPLATE:
            for _ in range(squad_slots):
                pid = f"P{counter:03d}"
                players[pid] = archetypes[arch_name]
                squad.append(pid)
                counter += 1
        teams[f"T{t}"] = tuple(squad)
    return SyntheticLeague(
        players=players,
        teams=teams,
        value_surface=default_surface(),
        rng_seed=seed,
    )


def select_lineup(league: SyntheticLeague, team: str, rng: random.Random) -> tuple[str, ...]:
    """Pick a starting XI from a squad, rotating the over-provisioned slots."""
    squad = league.teams[team]
    by_arch: dict[str, list[str]] = {}
    for pid in squad:
        by_arch.setdefault(league.players[pid].name, []).append(pid)
    lineup: list[str] = []
    for arch_name, _, starting in SQUAD_TEMPLATE:
        pool = by_arch.get(arch_name, [])
        if len(pool) < starting:
            raise MalformedInputError(f"team {team!r} lacks {arch_name!r} players")
        lineup.extend(rng.sample(pool, starting) if len(pool) > starting else pool)
    return tuple(lineup)


# ---------------------------------------------------------------------------
# Shared per-event dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _StepOutcome:
    action_type: str
    success: bool
    x_cm: int
    y_cm: int
    obv_units: int
    next_side: str
    next_zone: tuple[int, int]
    is_goal: bool
    dead_ball: bool


def _weighted_choice(rng: random.Random, items: Sequence, weights: Sequence[float]):
    return rng.choices(items, weights=weights, k=1)[0]


def _sample_event(
    league: SyntheticLeague, rng: random.Random, actor: str, side: str, zone: tuple[int, int]
) -> _StepOutcome:
    arch = league.players[actor]
    surface = league.value_surface
    zx, zy = zone
    dist = arch.action_dist[band_of(side, zx)]
    items = list(dist.items())
    atype = _weighted_choice(rng, [a for a, _ in items], [p for _, p in items])
    success = rng.random() < arch.success_rate[atype]
    x_cm = zx * ZONE_WIDTH_CM + rng.randrange(ZONE_WIDTH_CM)
    y_cm = zy * ZONE_HEIGHT_CM + rng.randrange(ZONE_HEIGHT_CM)

    phi_here = surface.phi_units(side, zx, zy)
    if atype in SHOT_TYPES:
        if success:
            return _StepOutcome(atype, True, x_cm, y_cm, surface.goal_units - phi_here,
                                _other(side), zone, True, True)
        dead = rng.random() < league.shot_miss_dead_ball_prob
        return _StepOutcome(atype, False, x_cm, y_cm, -league.penalty_units(side, zx, zy),
                            _other(side), zone, False, dead)
    if success:
        kernel = arch.zone_transition.get(atype, _STAY)
        dx, dy, _ = _weighted_choice(rng, kernel, [p for _, _, p in kernel])
        step = dx if side == HOME else -dx
        nzx = min(max(zx + step, 0), ZONE_COLS - 1)
        nzy = min(max(zy + dy, 0), ZONE_ROWS - 1)
        gain = surface.phi_units(side, nzx, nzy) - phi_here
        return _StepOutcome(atype, True, x_cm, y_cm, gain, side, (nzx, nzy), False, False)
    dead = rng.random() < league.fail_dead_ball_prob
    return _StepOutcome(atype, False, x_cm, y_cm, -league.penalty_units(side, zx, zy),
                        _other(side), zone, False, dead)


# Probability the same player acts again after a successful action of each
# type (carries retain the ball; passes hand it off).
RETENTION_PCT = {
    "dribble": 75, "take_on": 75, "keeper_pick_up": 60, "interception": 45, "tackle": 45,
    "pass": 5, "cross": 5, "throw_in": 5, "freekick_short": 5, "corner_short": 5,
}
DEFAULT_RETENTION_PCT = 25


def _next_actor(
    league: SyntheticLeague,
    rng: random.Random,
    prev: _StepOutcome | None,
    prev_actor: str | None,
    lineup: Sequence[str],
    side: str,
    zone: tuple[int, int],
) -> str:
    if (
        prev is not None
        and prev_actor is not None
        and prev.success
        and prev.next_side == side
        and prev_actor in lineup
    ):
        pct = RETENTION_PCT.get(prev.action_type, DEFAULT_RETENTION_PCT)
        if rng.randrange(100) < pct:
            return prev_actor
    return _pick_actor(league, rng, lineup, side, zone)


# How often each role is on the ball, by pitch third (attacking-direction bands).
INVOLVEMENT_WEIGHTS = {
    "defense": {"keeper": 6, "defender": 8, "midfielder": 5, "attacker": 2},
    "middle": {"keeper": 1, "defender": 4, "midfielder": 8, "attacker": 5},
    "attack": {"keeper": 1, "defender": 2, "midfielder": 5, "attacker": 10},
}


def _pick_actor(
    league: SyntheticLeague, rng: random.Random, lineup: Sequence[str], side: str, zone: tuple[int, int]
) -> str:
    table = INVOLVEMENT_WEIGHTS[band_of(side, zone[0])]
    weights = [table[league.players[pid].role_class] for pid in lineup]
    return _weighted_choice(rng, list(lineup), weights)


def _episode_should_end(league: SyntheticLeague, rng: random.Random, n_events: int) -> bool:
    if n_events >= league.max_episode_events:
        return True
    if league.episode_end_denominator <= 0:
        return False
    return rng.randrange(league.episode_end_denominator) == 0


def _restart_zone(rng: random.Random, kind: str, side: str) -> tuple[int, int]:
    if kind in ("kickoff", "goal_restart", "period_start"):
        return (5 if side == HOME else 6, rng.randrange(3, 5))
    return (rng.randrange(2, 10), rng.randrange(ZONE_ROWS))


# ---------------------------------------------------------------------------
# Match generation
# ---------------------------------------------------------------------------


@dataclass
class MatchBookkeeping:
    """Generator-side ground truth recorded while producing a match."""

    match_id: str
    restart_count: int = 0
    goal_count: int = 0
    event_count: int = 0
    per_player_counts: dict[str, Counter] = field(default_factory=dict)
    # per episode: one (rule, phi_start_units, phi_end_units) triple per action
    obv_provenance: list[list[tuple[str, int, int]]] = field(default_factory=list)

    def record_action(self, pid: str, action_type: str) -> None:
        self.per_player_counts.setdefault(pid, Counter())[action_type] += 1
        self.event_count += 1

    def action_distribution(self, pid: str) -> dict[str, float]:
        counts = self.per_player_counts.get(pid)
        if not counts:
            return {}
        total = sum(counts.values())
        return {atype: n / total for atype, n in sorted(counts.items())}


def generate_match(
    league: SyntheticLeague,
    home_ids: Sequence[str],
    away_ids: Sequence[str],
    seed: int,
) -> tuple[list[Episode], MatchBookkeeping]:
    """Simulate one match and return its segmented episodes plus bookkeeping."""
    if len(home_ids) != 11 or len(away_ids) != 11:
        raise MalformedInputError("lineups must have 11 players per side")
    all_ids = list(home_ids) + list(away_ids)
    if len(set(all_ids)) != 22:
        raise MalformedInputError("duplicate player ids across lineups")
    for pid in all_ids:
        if pid not in league.players:
            raise MalformedInputError(f"player {pid!r} not in league")

    rng = random.Random(seed)
    match_id = f"M{seed:08d}"
    book = MatchBookkeeping(match_id=match_id)

    target_events = rng.randint(*league.match_event_range)
    events: list[RawEvent] = []
    annotations: list[Annotation] = []

    clock = 0.0
    side = HOME if rng.randrange(2) == 0 else AWAY
    zone = _restart_zone(rng, "kickoff", side)
    halftime_done = False
    provenance: list[tuple[str, int, int]] = []

    n_in_episode = 0
    prev_out: _StepOutcome | None = None
    prev_actor: str | None = None
    while len(events) < target_events:
        lineup = home_ids if side == HOME else away_ids
        actor = _next_actor(league, rng, prev_out, prev_actor, lineup, side, zone)
        clock += rng.randrange(1, 5)
        out = _sample_event(league, rng, actor, side, zone)
        events.append(
            RawEvent(
                second=clock,
                actor_id=actor,
                team_side=side,
                action_type=out.action_type,
                x=out.x_cm / 100.0,
                y=out.y_cm / 100.0,
                success=out.success,
                obv=out.obv_units / PHI_GRID,
            )
        )
        book.record_action(actor, out.action_type)
        if out.is_goal:
            rule = "goal"
        elif out.success:
            rule = "success_delta"
        else:
            rule = "failure_penalty"
        phi_start = league.value_surface.phi_units(side, zone[0], zone[1])
        phi_end = league.value_surface.phi_units(side, out.next_zone[0], out.next_zone[1])
        provenance.append((rule, phi_start, phi_end))
        n_in_episode += 1

        scoring_side = side
        prev_out = out
        prev_actor = actor
        side = out.next_side
        zone = out.next_zone

        if out.is_goal or out.dead_ball or _episode_should_end(league, rng, n_in_episode):
            book.obv_provenance.append(provenance)
            provenance = []
            n_in_episode = 0
            prev_out = None
            prev_actor = None
            if len(events) >= target_events:
                if out.is_goal:
                    # final-whistle goal: count it without opening a new episode
                    annotations.append(Annotation(second=clock + 0.5, kind="goal", payload=scoring_side))
                    book.goal_count += 1
                break
            boundary_second = clock + 0.5
            if out.is_goal:
                annotations.append(Annotation(second=boundary_second, kind="goal", payload=scoring_side))
                book.goal_count += 1
                side = _other(scoring_side)
                zone = _restart_zone(rng, "goal_restart", side)
            elif not halftime_done and clock >= 45 * 60:
                annotations.append(Annotation(second=boundary_second, kind="restart", payload="period_start"))
                halftime_done = True
                side = AWAY
                zone = _restart_zone(rng, "period_start", side)
            else:
                annotations.append(Annotation(second=boundary_second, kind="restart", payload="set_piece"))
                side = HOME if rng.randrange(2) == 0 else AWAY
                zone = _restart_zone(rng, "set_piece", side)
            book.restart_count += 1
            clock += rng.randrange(2, 6)

    if provenance:
        book.obv_provenance.append(provenance)

    match = RawMatch(
        match_id=match_id,
        home_players=tuple(home_ids),
        away_players=tuple(away_ids),
        events=tuple(events),
        annotations=tuple(annotations),
    )
    episodes = segment_episodes(match)
    return episodes, book


@dataclass
class CorpusBookkeeping:
    match_count: int = 0
    episode_count: int = 0
    restart_count: int = 0
    goal_count: int = 0
    event_count: int = 0
    per_player_counts: dict[str, Counter] = field(default_factory=dict)

    def merge_match(self, episodes: Sequence[Episode], book: MatchBookkeeping) -> None:
        self.match_count += 1
        self.episode_count += len(episodes)
        self.restart_count += book.restart_count
        self.goal_count += book.goal_count
        self.event_count += book.event_count
        for pid, counts in book.per_player_counts.items():
            self.per_player_counts.setdefault(pid, Counter()).update(counts)

    def action_distribution(self, pid: str) -> dict[str, float]:
        counts = self.per_player_counts.get(pid)
        if not counts:
            return {}
        total = sum(counts.values())
        return {atype: n / total for atype, n in sorted(counts.items())}


def generate_corpus(
    league: SyntheticLeague,
    n_matches: int,
    seed: int,
) -> tuple[list[Episode], CorpusBookkeeping]:
    """Generate a schedule of matches with rotating lineups."""
    episodes: list[Episode] = []
    book = CorpusBookkeeping()
    team_names = sorted(league.teams)
    for m in range(n_matches):
        rng = random.Random(seed * 1_000_003 + m)
        home_team, away_team = rng.sample(team_names, 2)
        home_ids = select_lineup(league, home_team, rng)
        away_ids = select_lineup(league, away_team, rng)
        match_eps, match_book = generate_match(
            league, home_ids, away_ids, seed=seed * 1_000_003 + m
        )
        episodes.extend(match_eps)
        book.merge_match(match_eps, match_book)
    return episodes, book


def league_metadata(league: SyntheticLeague, book: CorpusBookkeeping | None = None) -> dict:
    """Sidecar ground truth written next to generated corpora."""
    players = {}
    for team, squad in sorted(league.teams.items()):
        for pid in squad:
            arch = league.players[pid]
            players[pid] = {"team": team, "archetype": arch.name, "role_class": arch.role_class}
    archetypes = {}
    for arch in {a.name: a for a in league.players.values()}.values():
        archetypes[arch.name] = {
            "role_class": arch.role_class,
            "action_dist": {band: dict(sorted(d.items())) for band, d in arch.action_dist.items()},
            "success_rate": dict(sorted(arch.success_rate.items())),
            "expected_action_dist": dict(sorted(arch.expected_action_dist().items())),
        }
    meta = {
        "seed": league.rng_seed,
        "fail_penalty": league.fail_penalty,
        "players": players,
        "archetypes": archetypes,
    }
    if book is not None:
        meta["bookkeeping"] = {
            "match_count": book.match_count,
            "episode_count": book.episode_count,
            "restart_count": book.restart_count,
            "goal_count": book.goal_count,
            "event_count": book.event_count,
        }
    return meta


# ---------------------------------------------------------------------------
# Monte-Carlo residual-value oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimState:
    """Mid-episode generator state a rollout can continue from."""

    home_ids: tuple[str, ...]
    away_ids: tuple[str, ...]
    possession: str
    zone: tuple[int, int]


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    stderr: float
    n_rollouts: int

    def interval95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr)


def oracle_residual_value(
    league: SyntheticLeague,
    state: SimState,
    player_id: str,
    horizon: int = 40,
    n_rollouts: int = 1000,
    seed: int = 0,
) -> OracleEstimate:
    """Monte-Carlo estimate of expected suffix on-ball value.

    Rolls the generator forward from ``state`` with ``player_id`` forced as
    the first actor; subsequent actors follow the normal selection rule.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    if player_id not in league.players:
        raise ValueError(f"unknown player {player_id!r}")
    rng = random.Random(seed)
    total_units = 0
    total_sq = 0.0
    for _ in range(n_rollouts):
        units = 0
        side = state.possession
        zone = state.zone
        prev_out = None
        prev_actor = None
        for step in range(horizon):
            if step == 0:
                actor = player_id
            else:
                lineup = state.home_ids if side == HOME else state.away_ids
                actor = _next_actor(league, rng, prev_out, prev_actor, lineup, side, zone)
            out = _sample_event(league, rng, actor, side, zone)
            prev_out = out
            prev_actor = actor
            units += out.obv_units
            side = out.next_side
            zone = out.next_zone
            if out.is_goal or out.dead_ball or _episode_should_end(league, rng, step + 1):
                break
        value = units / PHI_GRID
        total_units += units
        total_sq += value * value
    mean = (total_units / PHI_GRID) / n_rollouts
    if n_rollouts == 1:
        stderr = 0.0
    else:
        var = (total_sq - n_rollouts * mean * mean) / (n_rollouts - 1)
        stderr = math.sqrt(max(var, 0.0) / n_rollouts)
    return OracleEstimate(mean=mean, stderr=stderr, n_rollouts=n_rollouts)
