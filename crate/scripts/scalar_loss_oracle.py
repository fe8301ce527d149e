#!/usr/bin/env python3
"""Independent scalar-arithmetic oracle for the preference losses.

Recomputes the 1-D worked examples asserted by the Rust unit tests and the
acceptance suite, using stdlib math only. The printed values are frozen into
`selfcheck::scalar_surrogate_check` and `tests/acceptance.rs`.
"""
import math


def softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid_family(beta, tw, pw, rw, tl, pl, rl):
    """-log sigmoid(-beta * bracket) in the 1-D surrogate."""
    bracket = ((tw - pw) ** 2 - (tw - rw) ** 2) - ((tl - pl) ** 2 - (tl - rl) ** 2)
    return softplus(beta * bracket)


def dspo(beta, anchor, pw, rw, pl, rl, reward_tw, reward_tl):
    r_w = (reward_tw - pw) ** 2 - (reward_tw - rw) ** 2
    r_l = (reward_tl - pl) ** 2 - (reward_tl - rl) ** 2
    gate = 1.0 - sigmoid(r_w - r_l)
    residual = (pw - anchor) - beta * gate * (pw - rw)
    return residual ** 2


def main():
    print("diffusion_dpo  =", repr(sigmoid_family(2.0, 0.3, 0.1, 0.5, -0.2, 0.0, -0.1)))
    print("ddspo          =", repr(sigmoid_family(1.0, 0.0, 0.1, 0.2, 1.0, 0.5, 0.4)))
    # practical DDSPO: the winning target *is* the winning reference value,
    # so tw == rw and the winning reference term vanishes.
    print("practical_ddspo=", repr(sigmoid_family(1.0, 0.2, 0.4, 0.2, -0.3, -0.1, 0.1)))
    print("dspo           =", repr(dspo(1.0, 0.0, 0.2, 0.1, 0.5, 0.3, 0.0, 0.0)))
    print("dspo_cpp       =", repr(dspo(1.0, 0.0, 0.1, 0.2, 0.5, 0.4, 0.0, 1.0)))


if __name__ == "__main__":
    main()
