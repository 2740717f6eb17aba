"""Shared fixtures for the test suite.

The heavy trained artifacts (teachers, students, baseline, transfer agents)
are session-scoped and shared across acceptance criteria. Training is
deterministic given the fixed seeds, so setting TGPD_TEST_CACHE=<dir> lets
repeated development runs reuse identical artifacts; CI and fresh checkouts
train from scratch.
"""

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import pytest

from tgpd import agent, checkpoint, distill, env
from tgpd.agent import HyperParams, LogRow, TrainResult

TEACHER_BUDGET = 30_000
TEACHER_SEEDS = {"game1": 11, "game2": 12, "game3": 13, "game4": 14, "game5": 15}
STORE_SAMPLES = 10_000
STUDENT_EPOCHS = 8
MULTITASK_BUDGET = 30_000
TRANSFER_BUDGET = 24_000
TRANSFER_SEED = 33


def _cache_root():
    root = os.environ.get("TGPD_TEST_CACHE")
    return Path(root) if root else None


def _cached_result(key: str, train):
    """Run `train` (returning TrainResult) with optional on-disk memoization."""
    root = _cache_root()
    if root is None:
        return train()
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    ckpt = root / f"{digest}.ckpt"
    log_path = root / f"{digest}.log.json"
    if ckpt.exists() and log_path.exists():
        net = checkpoint.load_net(ckpt)
        log = [LogRow(**row) for row in json.loads(log_path.read_text())]
        return TrainResult(net, log)
    result = train()
    root.mkdir(parents=True, exist_ok=True)
    checkpoint.save_net(ckpt, result.net)
    log_path.write_text(json.dumps([asdict(r) for r in result.log]))
    return result


def _key(kind, **kw):
    hp = kw.pop("hp", None)
    parts = [kind] + [f"{k}={kw[k]}" for k in sorted(kw)]
    if hp is not None:
        parts.append(json.dumps(asdict(hp), sort_keys=True))
    return "|".join(str(p) for p in parts)


@pytest.fixture(scope="session")
def specs():
    return {name: env.load_bundled_game(name) for name in env.BUNDLED_GAMES}


@pytest.fixture(scope="session")
def default_hp():
    return HyperParams()


@pytest.fixture(scope="session")
def teachers(specs, default_hp):
    """Five converged single-game experts (criterion 3 and upstream of 4-8)."""
    out = {}
    for name, spec in specs.items():
        seed = TEACHER_SEEDS[name]
        out[name] = _cached_result(
            _key("teacher", game=name, seed=seed, budget=TEACHER_BUDGET, hp=default_hp),
            lambda spec=spec, seed=seed: agent.train_teacher(
                spec, default_hp, seed, TEACHER_BUDGET))
    return out


def _build_store(games, teachers, specs, union, seed0=400):
    per_game = {}
    for i, name in enumerate(games):
        per_game[name] = distill.generate_teacher_data(
            teachers[name].net, specs[name], STORE_SAMPLES, seed=seed0 + i)
    return distill.TeacherStore.from_generated(
        per_game, [specs[g] for g in games], union)


@pytest.fixture(scope="session")
def student_124_pair(specs, teachers, default_hp):
    """D1=50 and D1=100 students for games 1,2,4 from identical stores/seeds."""
    games = ["game1", "game2", "game4"]
    game_specs = [specs[g] for g in games]
    out = {}
    for d1 in (50, 100):
        hp = default_hp.override(d1=d1)

        def train(hp=hp):
            student, union = distill.build_student(game_specs, hp, seed=55)
            store = _build_store(games, teachers, specs, union)
            return distill.train_student(
                store, student, game_specs, hp, seed=66, epochs=STUDENT_EPOCHS)

        out[d1] = _cached_result(
            _key("student124", d1=d1, seed=66, epochs=STUDENT_EPOCHS, hp=hp), train)
    return out


@pytest.fixture(scope="session")
def student_123(specs, teachers, default_hp):
    """Teacher-sized student over games 1,2,3 (embedding transfer + baseline gap)."""
    games = ["game1", "game2", "game3"]
    game_specs = [specs[g] for g in games]

    def train():
        student, union = distill.build_student(game_specs, default_hp, seed=57)
        store = _build_store(games, teachers, specs, union, seed0=450)
        return distill.train_student(store, student, game_specs, default_hp,
                                     seed=68, epochs=STUDENT_EPOCHS)

    return _cached_result(
        _key("student123", seed=68, epochs=STUDENT_EPOCHS, hp=default_hp), train)


@pytest.fixture(scope="session")
def multitask_123(specs, default_hp):
    games = [specs[g] for g in ("game1", "game2", "game3")]
    return _cached_result(
        _key("multitask123", seed=21, budget=MULTITASK_BUDGET, hp=default_hp),
        lambda: distill.train_multitask_lstm_dqn(games, default_hp, 21, MULTITASK_BUDGET))


@pytest.fixture(scope="session")
def transfer_agents(specs, teachers, student_123, default_hp):
    """Agents A1..A6 trained on game 5 with transferred, frozen embeddings."""
    from tgpd import analysis

    target_spec = specs["game5"]
    sources = {
        "A1": [("game1", teachers["game1"].net)],
        "A2": [("game2", teachers["game2"].net)],
        "A3": [("game3", teachers["game3"].net)],
        "A4": [("student", student_123.net)],
        "A5": [],
        "A6": [(f"game{i}", teachers[f"game{i}"].net) for i in (1, 2, 3)],
    }
    results = {}
    for label, nets in sources.items():
        def train(label=label, nets=nets):
            net = agent.build_teacher_net(target_spec, default_hp, TRANSFER_SEED)
            mode = {"A5": "random", "A6": "union_random"}.get(label, "single")
            plan = analysis.TransferPlan(
                mode=mode,
                sources=[(lbl, n.vocab_words, n.embedding.values) for lbl, n in nets],
                freeze=True, seed=TRANSFER_SEED)
            analysis.transfer_initialize(plan, net)
            return agent.train_q_loop([target_spec], net, default_hp,
                                      TRANSFER_SEED, TRANSFER_BUDGET)
        results[label] = _cached_result(
            _key("transfer", label=label, seed=TRANSFER_SEED,
                 budget=TRANSFER_BUDGET, hp=default_hp),
            train)
    return results
