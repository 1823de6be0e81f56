"""Fast sanity checks run by ``polarqkd self-test``."""
from __future__ import annotations

import math

from .noise import LinkNoise, error_prob_exact, error_prob_quadrature, error_prob_series, error_prob_single_exact
from .protocols import ChannelModel, qber, run_bb84, run_three_stage, run_two_stage
from .rng import RandomStream


def _within(value, target, sigma, k=3.0):
    return abs(value - target) <= k * sigma


def run_checks(seed: int = 0, rounds: int = 200_000) -> list[tuple[str, bool, str]]:
    out = []
    p1 = error_prob_single_exact(0.1)
    q1 = error_prob_quadrature(0.1, 1)
    out.append(("closed form vs quadrature", abs(p1 - q1) <= 1e-9, f"{p1:.10g} vs {q1:.10g}"))
    dev = max(abs(error_prob_series(x, 1) - error_prob_single_exact(x)) for x in (0.01 * k for k in range(1, 11)))
    out.append(("series within 1e-6", dev <= 1e-6, f"max deviation {dev:.3g}"))
    for n, lo, hi in ((2, 1.98, 2.0), (3, 2.95, 3.0)):
        ratios = [error_prob_exact(x, n) / error_prob_exact(x, 1) for x in (0.02, 0.05, 0.1)]
        ok = all(lo <= r <= hi for r in ratios)
        out.append((f"{n}-link scaling", ok, ", ".join(f"{r:.4f}" for r in ratios)))

    rng = RandomStream(seed)
    clean = ChannelModel(LinkNoise(0.0))
    a, b, _ = run_two_stage(50_000, clean, rng.child(0))
    c, d, _ = run_three_stage(50_000, clean, rng.child(1))
    out.append(("noiseless multi-stage keys", a == b and c == d, "bit-exact"))

    noisy = ChannelModel(LinkNoise(0.1))
    for i, (name, fn, n) in enumerate((("bb84", run_bb84, 1), ("two-stage", run_two_stage, 2), ("three-stage", run_three_stage, 3))):
        k1, k2, _ = fn(rounds, noisy, rng=rng.child(10 + i))
        p = error_prob_exact(0.1, n)
        q = qber(k1, k2)
        sigma = math.sqrt(p * (1 - p) / len(k1))
        out.append((f"{name} qber", _within(q, p, sigma), f"{q:.6g} vs {p:.6g} (sigma {sigma:.2g})"))
    return out
