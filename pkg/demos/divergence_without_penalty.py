"""Single Gaussian observation, no penalty: the exp-moment estimate grows with the search box."""

import numpy as np

from qlc.montecarlo import SimConfig, widening_divergence_check


def main() -> None:
    base = dict(design=np.ones((1, 1)), box_lower=[-2.0], box_upper=[2.0], mu=1.0, theta_star=[0.0],
                grid_points=401, reps=10_000, master_seed=11)
    plain = widening_divergence_check(SimConfig(**base, rho_grid=[1.0], variant="none"), [2.0, 4.0, 8.0], 1.0)
    penalized = widening_divergence_check(
        SimConfig(**base, rho_grid=[0.5], variant="ranking",
                  penalty={"kind": "quadratic", "eps": 1.0, "delta1": 1.0}),
        [2.0, 4.0, 8.0], 0.5)
    for name, out in (("no penalty", plain), ("quadratic penalty", penalized)):
        est = ", ".join(f"W={r['width']:g}: {r['estimate']:.3f}" for r in out["rows"])
        print(f"{name:>18}: {est}  diverging={out['diverging']}")


if __name__ == "__main__":
    main()
