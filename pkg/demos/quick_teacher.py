#!/usr/bin/env python3
"""Train a small single-game expert and watch the learning curve.

Uses a reduced budget so it finishes in a couple of minutes; pass --budget
30000 for a fully converged expert (quest completion ~1.0).
"""

import argparse

from tgpd import agent, env


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--game", default="game1")
    parser.add_argument("--budget", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    spec = env.load_bundled_game(args.game)
    hp = agent.HyperParams()
    print(f"training on {spec.game_id} for {args.budget} env steps "
          f"(lr={hp.lr}, hidden={hp.hidden}, gamma={hp.gamma})")
    result = agent.train_teacher(spec, hp, seed=args.seed, budget_steps=args.budget)
    print(f"\n{'step':>7s} {'epsilon':>8s} {'loss':>9s} {'avg_reward':>11s} {'completion':>11s}")
    for row in result.log:
        print(f"{row.step:7d} {row.epsilon:8.3f} {row.loss:9.4f} "
              f"{row.avg_reward:+11.3f} {row.quest_completion:11.2f}")

    avg_reward, completion = agent.evaluate(result.net, spec, 100, seed=1,
                                            game_id=spec.game_id)
    print(f"\n100-episode evaluation: avg reward {avg_reward:+.3f}, completion {completion:.0%}")
    print(f"theoretical ceiling: {env.optimal_average_return(spec):.4f}")


if __name__ == "__main__":
    main()
