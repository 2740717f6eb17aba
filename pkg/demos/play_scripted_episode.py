#!/usr/bin/env python3
"""Walk through one Home World episode with the BFS-optimal scripted policy.

Prints the stochastic observation text, the chosen command, and the reward at
every step, then the episode return against the game's theoretical ceiling.
"""

import argparse

from tgpd import agent, env


def scripted(spec):
    def select(state, obs):
        quest = spec.quest_by_id(state.active_quest)
        if state.current_room == quest.target_room:
            return env.Command(quest.target_action, quest.target_object)
        dist = env.shortest_distances(spec, quest.target_room)
        for (room, direction), dest in spec.exits.items():
            if room == state.current_room and dist[dest] == dist[room] - 1:
                return env.Command("go", direction)
        raise RuntimeError("quest room unreachable")
    return select


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--game", default="game1")
    parser.add_argument("--seed", type=int, default=4)
    args = parser.parse_args()

    spec = env.load_bundled_game(args.game)
    policy = scripted(spec)
    state, obs = env.reset(spec, seed=args.seed)
    print(f"=== {spec.game_id}: start in {state.current_room!r}, quest {state.active_quest!r} ===")
    total = 0.0
    done = False
    while not done:
        print(f"\n> {obs.text}")
        cmd = policy(state, obs)
        state, result = env.step(state, spec, cmd)
        total += result.reward
        print(f"  command: {cmd.action} {cmd.object}   reward: {result.reward:+.2f}")
        obs, done = result.observation, result.done
    print(f"\nepisode return {total:+.2f} "
          f"(ceiling averaged over all starts: {env.optimal_average_return(spec):.4f})")

    sweep = agent.sweep_all_starts(policy, spec)
    print(f"all-start sweep of this policy: avg reward {sweep[0]:.4f}, completion {sweep[1]:.0%}")


if __name__ == "__main__":
    main()
