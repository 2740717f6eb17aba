"""Deterministic experiment runner.

Every subcommand resolves its configuration (defaults < --config file <
explicit flags), runs seeded, and writes its outputs plus a manifest.json
snapshot sufficient to re-launch an identical run: re-running with the same
config and seed reproduces CSV logs bitwise.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from . import __version__, analysis, checkpoint, distill
from . import agent as agent_mod
from . import env as env_mod
from .agent import HyperParams, LogRow

HP_FLAGS = {
    "gamma": float, "epsilon_start": float, "epsilon_end": float,
    "anneal_steps": int, "tau": float, "lr": float, "clip_norm": float,
    "target_sync": float, "batch_size": int, "d_emb": int, "hidden": int,
    "d1": int, "episode_cap": int, "replay_capacity": int, "warmup": int,
    "eval_interval": int, "eval_episodes": int, "eval_epsilon": float,
}


class ConfigError(ValueError):
    pass


COMMAND_DEFAULTS = {
    "train-teacher": {"budget": 30000},
    "gen-data": {"samples": 10000, "epsilon_gen": 0.05},
    "distill": {"epochs": 10, "block_minibatches": 25},
    "train-multitask": {"budget": 30000},
    "eval": {"episodes": 100},
    "heatmap": {"states": 100},
    "export-embeddings": {},
    "transfer": {"budget": 30000, "no_freeze": False},
}

REQUIRED_KEYS = {
    "train-teacher": ("game",),
    "gen-data": ("game", "teacher"),
    "distill": ("games", "stores"),
    "train-multitask": ("games",),
    "eval": ("game", "ckpt"),
    "heatmap": ("games", "ckpt"),
    "export-embeddings": ("games", "ckpt"),
    "transfer": ("target", "mode"),
}


def load_game(ref: str) -> env_mod.GameSpec:
    """A game reference is a JSON document path or a bundled name (game1..game5)."""
    path = Path(ref)
    if path.exists():
        try:
            return env_mod.parse_game_spec(path.read_text("utf-8"))
        except (env_mod.GameSpecError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid game document {ref}: {exc}") from exc
    if ref in env_mod.BUNDLED_GAMES:
        return env_mod.load_bundled_game(ref)
    raise ConfigError(f"game {ref!r} is neither a file nor a bundled game name")


def write_log_csv(path: Path, rows: list[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "game_id", "avg_reward", "quest_completion", "epsilon", "loss"])
        for r in rows:
            writer.writerow([
                r.step, r.game_id, f"{r.avg_reward:.6f}", f"{r.quest_completion:.6f}",
                f"{r.epsilon:.6f}", f"{r.loss:.6f}",
            ])


def write_manifest(out_dir: Path, command: str, config: dict, started: float,
                   outputs: dict, metrics: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "tgpd_version": __version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "outputs": outputs,
        "final_metrics": metrics,
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(out_dir / "manifest.json")


def resolve_hp(config: dict) -> HyperParams:
    overrides = {k: v for k, v in config.items() if k in HP_FLAGS and v is not None}
    try:
        return HyperParams(**overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_out(config: dict, command: str) -> Path:
    out = config.get("out")
    if not out:
        root = os.environ.get("TGPD_OUT")
        if not root:
            raise ConfigError("--out is required (or set TGPD_OUT as the output root)")
        out = str(Path(root) / command)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config["out"] = str(out_dir)
    return out_dir


def _merge_config(args: argparse.Namespace) -> dict:
    """defaults < config file (or manifest) < explicitly passed flags."""
    command = args.command
    known = {k for k in vars(args) if k not in ("func", "config")}
    config = {key: None for key in known}
    config["command"] = command
    config["seed"] = 0
    config.update(COMMAND_DEFAULTS.get(command, {}))
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if "config" in loaded and "command" in loaded:  # a manifest
            loaded = loaded["config"]
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if loaded.get("command", command) != command:
            raise ConfigError(
                f"config is for {loaded['command']!r}, not {command!r}")
        config.update(loaded)
    for key, value in vars(args).items():
        if key in ("func", "config"):
            continue
        if value is not None:
            config[key] = value
    return config


def _eval_metrics(net, specs, hp, seed) -> dict:
    metrics = {}
    for i, spec in enumerate(specs):
        avg_reward, completion = agent_mod.evaluate(
            net, spec, hp.eval_episodes, seed + 7919 * i,
            epsilon=hp.eval_epsilon, episode_cap=hp.episode_cap, game_id=spec.game_id)
        metrics[spec.game_id] = {
            "avg_reward": round(avg_reward, 6), "quest_completion": round(completion, 6)}
    return metrics


def cmd_train_teacher(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "train-teacher")
    spec = load_game(config["game"])
    hp = resolve_hp(config)
    result = agent_mod.train_teacher(spec, hp, config["seed"], config["budget"])
    ckpt = out_dir / f"teacher_{spec.game_id}.ckpt"
    checkpoint.save_net(ckpt, result.net)
    log_path = out_dir / "train_log.csv"
    write_log_csv(log_path, result.log)
    metrics = _eval_metrics(result.net, [spec], hp, config["seed"])
    write_manifest(out_dir, "train-teacher", config, started,
                   {"checkpoint": str(ckpt), "log": str(log_path)}, metrics)
    print(f"teacher {spec.game_id}: {metrics[spec.game_id]}")
    return 0


def cmd_gen_data(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "gen-data")
    spec = load_game(config["game"])
    net = checkpoint.load_net_into_game(config["teacher"], spec.game_id)
    samples = distill.generate_teacher_data(
        net, spec, config["samples"], config["epsilon_gen"], config["seed"])
    store_path = out_dir / f"{spec.game_id}.store"
    distill.save_store(store_path, samples, spec.game_id,
                       len(spec.action_words), len(spec.object_words))
    write_manifest(out_dir, "gen-data", config, started,
                   {"store": str(store_path)}, {"samples": len(samples)})
    print(f"stored {len(samples)} samples for {spec.game_id} at {store_path}")
    return 0


def _load_store_for(stores: list[str], spec: env_mod.GameSpec) -> list[distill.DistillSample]:
    for store_path in stores:
        game_id, n_actions, n_objects, samples = distill.load_store(store_path)
        if game_id == spec.game_id:
            if (n_actions, n_objects) != (len(spec.action_words), len(spec.object_words)):
                raise ConfigError(
                    f"store {store_path} head sizes {(n_actions, n_objects)} do not match "
                    f"game {spec.game_id}")
            return samples
    raise ConfigError(f"no store provided for game {spec.game_id}")


def cmd_distill(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "distill")
    specs = [load_game(g) for g in config["games"].split(",")]
    store_paths = config["stores"].split(",")
    hp = resolve_hp(config)
    student, union = distill.build_student(specs, hp, config["seed"])
    store = distill.TeacherStore.from_generated(
        {spec.game_id: _load_store_for(store_paths, spec) for spec in specs}, specs, union)
    result = distill.train_student(store, student, specs, hp, config["seed"],
                                   config["epochs"], config["block_minibatches"])
    ckpt = out_dir / "student.ckpt"
    checkpoint.save_net(ckpt, result.net)
    log_path = out_dir / "train_log.csv"
    write_log_csv(log_path, result.log)
    metrics = _eval_metrics(result.net, specs, hp, config["seed"])
    write_manifest(out_dir, "distill", config, started,
                   {"checkpoint": str(ckpt), "log": str(log_path)}, metrics)
    print(f"student on {config['games']}: {metrics}")
    return 0


def cmd_train_multitask(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "train-multitask")
    specs = [load_game(g) for g in config["games"].split(",")]
    hp = resolve_hp(config)
    result = distill.train_multitask_lstm_dqn(specs, hp, config["seed"], config["budget"])
    ckpt = out_dir / "multitask.ckpt"
    checkpoint.save_net(ckpt, result.net)
    log_path = out_dir / "train_log.csv"
    write_log_csv(log_path, result.log)
    metrics = _eval_metrics(result.net, specs, hp, config["seed"])
    write_manifest(out_dir, "train-multitask", config, started,
                   {"checkpoint": str(ckpt), "log": str(log_path)}, metrics)
    print(f"multitask on {config['games']}: {metrics}")
    return 0


def cmd_eval(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "eval")
    spec = load_game(config["game"])
    net = checkpoint.load_net_into_game(config["ckpt"], spec.game_id)
    hp = resolve_hp(config)
    avg_reward, completion = agent_mod.evaluate(
        net, spec, config["episodes"], config["seed"],
        epsilon=hp.eval_epsilon, episode_cap=hp.episode_cap, game_id=spec.game_id)
    metrics = {"avg_reward": round(avg_reward, 6), "quest_completion": round(completion, 6)}
    write_manifest(out_dir, "eval", config, started, {}, {spec.game_id: metrics})
    print(f"{spec.game_id}: avg_reward={avg_reward:.4f} quest_completion={completion:.4f}")
    return 0


def cmd_heatmap(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "heatmap")
    specs = [load_game(g) for g in config["games"].split(",")]
    net = checkpoint.load_net(config["ckpt"])
    pairs = [analysis.LayerPair(u, d) for u, d in analysis.LAYER_PAIRS]
    maps: dict[str, dict[str, analysis.HeatMap]] = {}
    outputs: dict[str, str] = {}
    for spec in specs:
        if spec.game_id not in net.heads:
            raise ConfigError(f"checkpoint has no controller head for {spec.game_id}")
        states = analysis.sample_states(net, spec, config["states"], seed=config["seed"])
        maps[spec.game_id] = {}
        for pair in pairs:
            raw = analysis.mean_jacobian(net, spec.game_id, states, pair)
            hm = analysis.to_heatmap(raw)
            maps[spec.game_id][pair.downstream] = hm
            stem = f"{spec.game_id}_{pair.downstream}_vs_{pair.upstream}"
            analysis.write_heatmap_pgm(hm, out_dir / f"{stem}.pgm")
            analysis.write_heatmap_csv(hm, out_dir / f"{stem}.csv")
            outputs[stem] = str(out_dir / f"{stem}.pgm")
    metrics: dict = {}
    if len(specs) == 2:
        a, b = specs[0].game_id, specs[1].game_id
        for pair in pairs:
            diff = analysis.heatmap_mean_abs_diff(
                maps[a][pair.downstream], maps[b][pair.downstream])
            metrics[f"diff_{pair.downstream}_vs_{pair.upstream}"] = round(diff, 4)
    write_manifest(out_dir, "heatmap", config, started, outputs, metrics)
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_export_embeddings(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "export-embeddings")
    specs = [load_game(g) for g in config["games"].split(",")]
    net = checkpoint.load_net(config["ckpt"])
    out_path = out_dir / "embeddings.csv"
    rows = analysis.export_word_embeddings(net, specs, out_path)
    write_manifest(out_dir, "export-embeddings", config, started,
                   {"embeddings": str(out_path)}, {"rows": rows})
    print(f"wrote {rows} embedding rows to {out_path}")
    return 0


def cmd_transfer(config: dict) -> int:
    started = time.time()
    out_dir = _resolve_out(config, "transfer")
    spec = load_game(config["target"])
    hp = resolve_hp(config)
    mode_label = config["mode"].upper()
    if mode_label not in {"A1", "A2", "A3", "A4", "A5", "A6"}:
        raise ConfigError(f"transfer mode must be A1..A6, got {config['mode']!r}")

    sources = []
    if mode_label != "A5":
        if not config.get("source"):
            raise ConfigError(f"mode {mode_label} requires --source checkpoint(s)")
        for src in config["source"].split(","):
            src_net = checkpoint.load_net(src)
            sources.append((src, src_net.vocab_words, src_net.embedding.values))
    if mode_label == "A5":
        mode = "random"
    elif mode_label == "A6":
        mode = "union_random"
        if len(sources) < 2:
            raise ConfigError("mode A6 requires at least two --source checkpoints")
    else:
        mode = "single"
        if len(sources) != 1:
            raise ConfigError(f"mode {mode_label} requires exactly one --source checkpoint")

    net = agent_mod.build_teacher_net(spec, hp, config["seed"])
    plan = analysis.TransferPlan(mode=mode, sources=sources,
                                 freeze=not config["no_freeze"], seed=config["seed"])
    report = analysis.transfer_initialize(plan, net)
    result = agent_mod.train_q_loop([spec], net, hp, config["seed"], config["budget"])
    ckpt = out_dir / f"agent_{mode_label}.ckpt"
    checkpoint.save_net(ckpt, result.net)
    log_path = out_dir / "train_log.csv"
    write_log_csv(log_path, result.log)
    report_path = out_dir / "transfer_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    metrics = _eval_metrics(result.net, [spec], hp, config["seed"])
    write_manifest(out_dir, "transfer", config, started,
                   {"checkpoint": str(ckpt), "log": str(log_path),
                    "report": str(report_path)}, metrics)
    print(f"agent {mode_label} on {spec.game_id}: {metrics[spec.game_id]} "
          f"(copied {report['frozen_row_count']} rows)")
    return 0


def _add_hp_flags(parser: argparse.ArgumentParser) -> None:
    for name, typ in HP_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgpd",
        description="Multi-task policy distillation experiments for text-based games")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file or a previous run's manifest.json")
        _add_hp_flags(p)

    p = sub.add_parser("train-teacher", help="train a single-game expert")
    p.add_argument("--game", type=str, default=None)
    p.add_argument("--budget", type=int, default=None,
                   help="environment steps of training (default 30000)")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("gen-data", help="record teacher Q-vectors into a store")
    p.add_argument("--game", type=str, default=None)
    p.add_argument("--teacher", type=str, default=None, help="teacher checkpoint")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--epsilon-gen", dest="epsilon_gen", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("distill", help="train a student from teacher stores")
    p.add_argument("--games", type=str, default=None, help="comma-separated game refs")
    p.add_argument("--stores", type=str, default=None, help="comma-separated store files")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--block-minibatches", dest="block_minibatches", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train-multitask", help="multi-task LSTM-DQN baseline")
    p.add_argument("--games", type=str, default=None)
    p.add_argument("--budget", type=int, default=None,
                   help="environment steps of training (default 30000)")
    common(p)
    p.set_defaults(func=cmd_train_multitask)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a game")
    p.add_argument("--game", type=str, default=None)
    p.add_argument("--ckpt", type=str, default=None)
    p.add_argument("--episodes", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="mean-jacobian heat maps per layer pair")
    p.add_argument("--games", type=str, default=None,
                   help="games to compare (two for the diff table)")
    p.add_argument("--ckpt", type=str, default=None)
    p.add_argument("--states", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("export-embeddings", help="word vectors through one LSTM step")
    p.add_argument("--games", type=str, default=None)
    p.add_argument("--ckpt", type=str, default=None)
    common(p)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("transfer", help="train on a new game with transferred embeddings")
    p.add_argument("--target", type=str, default=None)
    p.add_argument("--mode", type=str, default=None, help="A1..A6")
    p.add_argument("--source", type=str, default=None,
                   help="source checkpoint(s), comma-separated for A6")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--no-freeze", dest="no_freeze", action="store_true", default=None,
                   help="leave transferred rows trainable")
    common(p)
    p.set_defaults(func=cmd_transfer)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        config = _merge_config(args)
        for key in REQUIRED_KEYS.get(config.get("command", ""), ()):
            if config.get(key) is None:
                raise ConfigError(f"--{key} is required (via flag or config file)")
        return args.func(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
