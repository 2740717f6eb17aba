#!/usr/bin/env python3
"""End-to-end distillation walkthrough on two games with reduced budgets.

Trains two teachers, records their Q-vectors into per-game stores, distills a
shared-trunk student with one controller head per game, and compares
per-game evaluations. Expect ~10 minutes; raise the budgets to reproduce
full teacher-level play.
"""

import argparse

from tgpd import agent, distill, env


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--games", default="game1,game4")
    parser.add_argument("--teacher-budget", type=int, default=30000)
    parser.add_argument("--samples", type=int, default=5000)
    parser.add_argument("--epochs", type=int, default=8)
    parser.add_argument("--d1", type=int, default=50)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    specs = [env.load_bundled_game(g) for g in args.games.split(",")]
    hp = agent.HyperParams()

    per_game = {}
    teachers = {}
    for i, spec in enumerate(specs):
        print(f"[1/{len(specs)}] training teacher for {spec.game_id} ...")
        teacher = agent.train_teacher(spec, hp, seed=args.seed + i,
                                      budget_steps=args.teacher_budget).net
        metrics = agent.evaluate(teacher, spec, 64, seed=77 + i, game_id=spec.game_id)
        print(f"    teacher eval: reward {metrics[0]:+.3f}, completion {metrics[1]:.0%}")
        teachers[spec.game_id] = teacher
        per_game[spec.game_id] = distill.generate_teacher_data(
            teacher, spec, args.samples, seed=200 + i)
        print(f"    stored {len(per_game[spec.game_id])} samples")

    student_hp = hp.override(d1=args.d1)
    student, union = distill.build_student(specs, student_hp, seed=args.seed + 50)
    store = distill.TeacherStore.from_generated(per_game, specs, union)
    print(f"[2] distilling student (d1={args.d1}, union vocab {len(union)}) ...")
    result = distill.train_student(store, student, specs, student_hp,
                                   seed=args.seed + 60, epochs=args.epochs)
    for row in result.log:
        print(f"    minibatch {row.step:5d} {row.game_id}: reward {row.avg_reward:+.3f} "
              f"completion {row.quest_completion:.2f}")

    print("[3] final per-game comparison (100 episodes each)")
    for i, spec in enumerate(specs):
        t = agent.evaluate(teachers[spec.game_id], spec, 100, seed=500 + i,
                           game_id=spec.game_id)
        s = agent.evaluate(result.net, spec, 100, seed=600 + i, game_id=spec.game_id)
        print(f"    {spec.game_id}: teacher {t[1]:.0%}/{t[0]:+.3f}   "
              f"student {s[1]:.0%}/{s[0]:+.3f}")


if __name__ == "__main__":
    main()
