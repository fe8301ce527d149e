#!/usr/bin/env python3
"""Independent forward pass of the tiny score-net test fixture.

Recomputes eps(x_t, t, c) for the hand-set weights used in the Rust unit
test `net::tests::forward_matches_independent_script`, using nothing but
stdlib math. Layout: input = [x (2) | sin/cos time features of t/T with
geometrically spaced frequencies 1..1000 | class embedding row], SiLU hidden
layers, linear 2-unit output.
"""
import math


def sigmoid(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def silu(v):
    return v * sigmoid(v)


def time_embedding(t, num_steps, dim):
    tau = t / num_steps
    half = dim // 2
    out = []
    for i in range(half):
        exponent = i / (half - 1) if half > 1 else 0.0
        omega = 1000.0 ** exponent
        out += [math.sin(omega * tau), math.cos(omega * tau)]
    return out


def matvec(w, x, rows, cols):
    return [sum(w[r * cols + j] * x[j] for j in range(cols)) for r in range(rows)]


def main():
    # Fixture: hidden_width=2, hidden_layers=1, K=1, time_embed_dim=2,
    # class_embed_dim=2; x_t=(1,1), t=50 of T=100, c=0.
    w1 = [0.1, -0.2, 0.3, 0.05, -0.1, 0.2,
          -0.15, 0.25, 0.1, -0.3, 0.2, 0.05]
    b1 = [0.01, -0.02]
    w2 = [0.5, -0.4, 0.3, 0.2]
    b2 = [0.005, -0.005]
    class_embed = [0.7, -0.6]

    x = [1.0, 1.0] + time_embedding(50, 100, 2) + class_embed
    h = [silu(v + b) for v, b in zip(matvec(w1, x, 2, 6), b1)]
    out = [v + b for v, b in zip(matvec(w2, h, 2, 2), b2)]
    print(f"input = {x!r}")
    print(f"hidden = {h!r}")
    print(f"eps = ({out[0]!r}, {out[1]!r})")


if __name__ == "__main__":
    main()
