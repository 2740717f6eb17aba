"""Home World: a four-room text game with stochastic descriptions and quests.

Room transitions are deterministic; only the observation text is random (each
room has several description variants and each quest several phrasings, some
with negated distractor clauses). An episode starts in a uniformly random
(room, quest) pair and ends on quest completion or after `episode_cap` steps.

Rewards: -0.01 per step, +1.0 on top for the completing command, so the best
achievable average over the square layout's 16 starts is 0.98.
"""

from __future__ import annotations

import json
import string
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple

import numpy as np

COMPLETION_REWARD = 1.0
STEP_PENALTY = -0.01
DEFAULT_EPISODE_CAP = 20
GO_ACTION = "go"

BUNDLED_GAMES = ("game1", "game2", "game3", "game4", "game5")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class GameSpecError(ValueError):
    """Raised when a game-spec document violates the schema or its invariants."""


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return [w for w in text.lower().translate(_PUNCT_TABLE).split() if w]


class Vocabulary:
    """Word <-> id map, ids assigned in first-seen order."""

    def __init__(self):
        self.words: list[str] = []
        self._index: dict[str, int] = {}

    def add(self, word: str) -> int:
        idx = self._index.get(word)
        if idx is None:
            idx = len(self.words)
            self._index[word] = idx
            self.words.append(word)
        return idx

    def add_text(self, text: str) -> None:
        for w in tokenize(text):
            self.add(w)

    def encode(self, text: str) -> list[int]:
        return [self._index[w] for w in tokenize(text)]

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __getitem__(self, word: str) -> int:
        return self._index[word]

    def __len__(self) -> int:
        return len(self.words)


class Command(NamedTuple):
    action: str
    object: str


@dataclass(frozen=True)
class QuestSpec:
    quest_id: str
    text_variants: tuple[str, ...]
    target_room: str
    target_action: str
    target_object: str


@dataclass
class GameSpec:
    game_id: str
    rooms: list[str]
    exits: dict[tuple[str, str], str]  # (room, direction) -> room
    objects: dict[str, str]  # room -> object word
    descriptions: dict[str, list[str]]
    quests: list[QuestSpec]
    action_words: list[str]
    object_words: list[str]  # includes direction words usable with "go"
    vocab: Vocabulary = field(repr=False, default_factory=Vocabulary)

    def quest_by_id(self, quest_id: str) -> QuestSpec:
        for q in self.quests:
            if q.quest_id == quest_id:
                return q
        raise KeyError(quest_id)


@dataclass
class EnvState:
    current_room: str
    active_quest: str
    steps_taken: int
    rng: np.random.Generator


@dataclass(frozen=True)
class Observation:
    text: str
    game_id: str


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    quest_completed: bool


_SCHEMA_KEYS = {
    "game_id", "rooms", "exits", "objects", "descriptions", "quests",
    "actions", "objects_vocab",
}


def parse_game_spec(text: str | dict) -> GameSpec:
    """Parse and validate a game-spec JSON document.

    Raises GameSpecError naming the offending field for schema violations,
    dangling exits, rooms without objects, or empty description lists.
    """
    doc = json.loads(text) if isinstance(text, str) else text
    if not isinstance(doc, dict):
        raise GameSpecError("document: expected a JSON object")
    unknown = set(doc) - _SCHEMA_KEYS
    if unknown:
        raise GameSpecError(f"document: unknown keys {sorted(unknown)}")
    missing = _SCHEMA_KEYS - set(doc)
    if missing:
        raise GameSpecError(f"document: missing keys {sorted(missing)}")

    game_id = doc["game_id"]
    if not isinstance(game_id, str) or not game_id:
        raise GameSpecError("game_id: expected a non-empty string")
    rooms = doc["rooms"]
    if not isinstance(rooms, list) or not rooms or len(set(rooms)) != len(rooms):
        raise GameSpecError("rooms: expected a non-empty list of distinct names")

    exits: dict[tuple[str, str], str] = {}
    for i, entry in enumerate(doc["exits"]):
        path = f"exits[{i}]"
        if not isinstance(entry, dict) or set(entry) != {"from", "direction", "to"}:
            raise GameSpecError(f"{path}: expected {{from, direction, to}}")
        src, direction, dst = entry["from"], entry["direction"], entry["to"]
        if src not in rooms:
            raise GameSpecError(f"{path}.from: unknown room {src!r}")
        if dst not in rooms:
            raise GameSpecError(f"{path}.to: exit leads to unknown room {dst!r}")
        if (src, direction) in exits:
            raise GameSpecError(f"{path}: duplicate exit ({src}, {direction})")
        exits[(src, direction)] = dst
    for (src, direction), dst in exits.items():
        if not any(back == src for (r, _), back in exits.items() if r == dst):
            raise GameSpecError(
                f"exits: ({src}, {direction}) -> {dst} has no exit returning from {dst!r}"
            )

    objects = doc["objects"]
    for room in rooms:
        if room not in objects:
            raise GameSpecError(f"objects.{room}: room has no object")
    extra_obj = set(objects) - set(rooms)
    if extra_obj:
        raise GameSpecError(f"objects: unknown rooms {sorted(extra_obj)}")

    descriptions = doc["descriptions"]
    for room in rooms:
        variants = descriptions.get(room)
        if not isinstance(variants, list) or not variants:
            raise GameSpecError(f"descriptions.{room}: expected a non-empty list of variants")
    extra_desc = set(descriptions) - set(rooms)
    if extra_desc:
        raise GameSpecError(f"descriptions: unknown rooms {sorted(extra_desc)}")

    actions = doc["actions"]
    object_words = doc["objects_vocab"]
    if not isinstance(actions, list) or not actions:
        raise GameSpecError("actions: expected a non-empty list")
    if not isinstance(object_words, list) or not object_words:
        raise GameSpecError("objects_vocab: expected a non-empty list")
    for room, obj in objects.items():
        if obj not in object_words:
            raise GameSpecError(f"objects.{room}: object {obj!r} not in objects_vocab")

    quests: list[QuestSpec] = []
    for i, entry in enumerate(doc["quests"]):
        path = f"quests[{i}]"
        if not isinstance(entry, dict) or set(entry) != {"id", "texts", "room", "action", "object"}:
            raise GameSpecError(f"{path}: expected {{id, texts, room, action, object}}")
        if entry["room"] not in rooms:
            raise GameSpecError(f"{path}.room: unknown room {entry['room']!r}")
        if entry["action"] not in actions:
            raise GameSpecError(f"{path}.action: {entry['action']!r} not in actions")
        if entry["object"] not in object_words:
            raise GameSpecError(f"{path}.object: {entry['object']!r} not in objects_vocab")
        texts = entry["texts"]
        if not isinstance(texts, list) or not texts:
            raise GameSpecError(f"{path}.texts: expected a non-empty list")
        quests.append(QuestSpec(entry["id"], tuple(texts), entry["room"], entry["action"], entry["object"]))
    if not quests:
        raise GameSpecError("quests: expected at least one quest")

    spec = GameSpec(
        game_id=game_id,
        rooms=list(rooms),
        exits=exits,
        objects=dict(objects),
        descriptions={r: list(descriptions[r]) for r in rooms},
        quests=quests,
        action_words=list(actions),
        object_words=list(object_words),
    )
    # vocabulary in first-seen document order: descriptions, quests, actions, objects
    for room in spec.rooms:
        for variant in spec.descriptions[room]:
            spec.vocab.add_text(variant)
    for quest in spec.quests:
        for text in quest.text_variants:
            spec.vocab.add_text(text)
    for word in spec.action_words:
        spec.vocab.add(word)
    for word in spec.object_words:
        spec.vocab.add(word)
    return spec


def load_bundled_game(name: str) -> GameSpec:
    """Load one of the packaged game documents (game1 .. game5)."""
    data = resources.files("tgpd").joinpath(f"assets/{name}.json").read_text("utf-8")
    return parse_game_spec(data)


def _draw_observation(state: EnvState, spec: GameSpec) -> Observation:
    variants = spec.descriptions[state.current_room]
    desc = variants[int(state.rng.integers(len(variants)))]
    quest = spec.quest_by_id(state.active_quest)
    quest_text = quest.text_variants[int(state.rng.integers(len(quest.text_variants)))]
    return Observation(text=f"{desc} {quest_text}", game_id=spec.game_id)


def reset(
    spec: GameSpec,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    start: tuple[str, str] | None = None,
) -> tuple[EnvState, Observation]:
    """Start an episode in a uniformly random (room, quest) pair.

    Pass exactly one of `seed` or `rng`; `start=(room, quest_id)` forces the
    start state (used by evaluation sweeps).
    """
    if (seed is None) == (rng is None):
        raise ValueError("pass exactly one of seed or rng")
    if rng is None:
        rng = np.random.default_rng(seed)
    if start is None:
        room = spec.rooms[int(rng.integers(len(spec.rooms)))]
        quest_id = spec.quests[int(rng.integers(len(spec.quests)))].quest_id
    else:
        room, quest_id = start
        spec.quest_by_id(quest_id)
    state = EnvState(current_room=room, active_quest=quest_id, steps_taken=0, rng=rng)
    return state, _draw_observation(state, spec)


def step(
    state: EnvState,
    spec: GameSpec,
    cmd: Command,
    episode_cap: int = DEFAULT_EPISODE_CAP,
) -> tuple[EnvState, StepResult]:
    """Apply one command. Mutates and returns `state`.

    The quest's (action, object) issued in its target room completes the
    episode; "go <direction>" moves through a valid exit; anything else leaves
    the room unchanged. Every command costs the step penalty.
    """
    if state.steps_taken >= episode_cap:
        raise ValueError("episode already ended: step cap reached")
    if cmd.action not in spec.action_words:
        raise ValueError(f"unknown action word {cmd.action!r}")
    if cmd.object not in spec.object_words:
        raise ValueError(f"unknown object word {cmd.object!r}")

    quest = spec.quest_by_id(state.active_quest)
    completed = (
        state.current_room == quest.target_room
        and cmd.action == quest.target_action
        and cmd.object == quest.target_object
    )
    if not completed and cmd.action == GO_ACTION:
        dest = spec.exits.get((state.current_room, cmd.object))
        if dest is not None:
            state.current_room = dest

    state.steps_taken += 1
    reward = STEP_PENALTY + (COMPLETION_REWARD if completed else 0.0)
    done = completed or state.steps_taken >= episode_cap
    return state, StepResult(
        observation=_draw_observation(state, spec),
        reward=reward,
        done=done,
        quest_completed=completed,
    )


def command_space(spec: GameSpec) -> list[Command]:
    """All (action, object) pairs in a stable order."""
    return [Command(a, o) for a in spec.action_words for o in spec.object_words]


def shortest_distances(spec: GameSpec, target: str) -> dict[str, int]:
    """BFS hop counts from every room to `target` over the exit graph."""
    dist = {target: 0}
    frontier = deque([target])
    while frontier:
        room = frontier.popleft()
        for (src, _), dst in spec.exits.items():
            if dst == room and src not in dist:
                dist[src] = dist[room] + 1
                frontier.append(src)
    return dist


def optimal_average_return(spec: GameSpec) -> float:
    """Mean over all (room, quest) starts of the best achievable episode return.

    The optimum takes the BFS-shortest walk to the quest room plus the single
    completing command; serves as the ceiling for any policy.
    """
    returns = []
    for quest in spec.quests:
        dist = shortest_distances(spec, quest.target_room)
        for room in spec.rooms:
            if room not in dist:
                raise ValueError(
                    f"quest {quest.quest_id!r}: target room {quest.target_room!r} "
                    f"unreachable from {room!r}"
                )
            steps = dist[room] + 1
            returns.append(COMPLETION_REWARD + steps * STEP_PENALTY)
    return float(np.mean(returns))
