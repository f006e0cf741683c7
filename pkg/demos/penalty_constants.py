"""Entropy numbers, penalty normalizers and the resulting bound constants."""

import numpy as np

from qlc.penalties import PenaltySpec, bound_Q_quadratic, bound_Q_ranking, entropy_and_volume, pstar


def main() -> None:
    for p in (1, 2, 3):
        omega, q = entropy_and_volume(p)
        print(f"p={p}: unit-ball volume {omega:.4f}, entropy number {q:.6f}")
    for kind, kw in (("quadratic", {"delta1": 1.0}), ("logarithmic", {"delta2": 1.0})):
        spec = PenaltySpec(kind, np.eye(1), rho=0.5, **kw)
        print(f"{kind:>11} weight: Pstar = {pstar(spec):.6f},"
              f" log Q = {bound_Q_ranking(0.5, 1.0, 1, pstar(spec)):.4f}")
    a = np.sqrt(0.5)
    for a1 in (a, 0.25):
        s = 1 - a1**2 / a**2
        print(f"a1={a1:.3f}: s={s:.3f}, log Q(0.5, s) = {bound_Q_quadratic(0.5, s, a, a1, 1):.4f}")


if __name__ == "__main__":
    main()
