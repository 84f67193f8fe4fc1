"""Where the small-temperature bound stays away from R.

On trees with very few rewarded leaves the root's best uniform-policy value
can be tiny, and then exp(max Q / rho) is not yet large at rho = 1e-3.
Prints the bound for a few temperatures on the worst such trees.
"""

from rover.exact import theorem2_bound, uniform_q
from rover.tree import RandomTreeParams, build_random_tree


def tree(seed):
    return build_random_tree(
        RandomTreeParams(
            max_depth=1 + seed % 5,
            branching=(1, 5),
            reward_leaf_fraction=0.02,
            early_stop=0.15,
            seed=seed,
        )
    )


def main():
    rows = []
    for seed in range(500):
        mdp = tree(seed)
        q = uniform_q(mdp, exact=True)
        rows.append((theorem2_bound(mdp, q, 1e-3).bound, seed, mdp, q))
    rows.sort(key=lambda r: r[0])
    print(f"{'seed':>5}{'root max Q':>12}" + "".join(f"{f'rho={r:g}':>12}" for r in (1e-2, 1e-3, 1e-4, 1e-5)))
    for _, seed, mdp, q in rows[:8]:
        bounds = [theorem2_bound(mdp, q, r).bound for r in (1e-2, 1e-3, 1e-4, 1e-5)]
        root_max = float(max(q.state_values(mdp.root)))
        print(f"{seed:>5}{root_max:>12.5f}" + "".join(f"{b:>12.6f}" for b in bounds))


if __name__ == "__main__":
    main()
