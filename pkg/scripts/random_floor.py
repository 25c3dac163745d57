"""Print the random-action fitness floor for every preset of both tasks."""
import argparse

from hebbneck.envs import TASKS, make_variation, random_policy_floor, variation_names


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    for task in TASKS:
        for vid, name in enumerate(variation_names(task), start=1):
            floor = random_policy_floor(make_variation(task, vid), args.episodes, args.seed)
            print(f"{task:13s} {vid} {name:18s} {floor:9.3f}")


if __name__ == "__main__":
    main()
