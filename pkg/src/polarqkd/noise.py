"""Uniform per-link angular error and the resulting bit-flip probabilities.

Each traversal of a link adds an independent rotation error drawn uniformly
from [-x, x]. A photon that accumulated total error ``e`` is read wrongly with
probability ``sin(e)**2``; averaging over the error density gives the flip
probability for one, two, three or more traversals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .rng import RandomStream

__all__ = [
    "ErrorProbabilityResult",
    "LinkNoise",
    "analyze",
    "error_prob_exact",
    "error_prob_quadrature",
    "error_prob_series",
    "error_prob_single_exact",
    "mean_cos2",
    "pdf_sum_links",
    "pdf_sum_uniform",
    "sample_link_error",
]

MAX_HALF_WIDTH = 0.5
DEFAULT_HALF_WIDTH = 0.1


@dataclass(frozen=True)
class LinkNoise:
    half_width_x: float = DEFAULT_HALF_WIDTH

    def __post_init__(self):
        if not 0.0 <= self.half_width_x <= MAX_HALF_WIDTH:
            raise ValueError(f"half_width_x must lie in [0, {MAX_HALF_WIDTH}], got {self.half_width_x}")

    def sample(self, rng: RandomStream, size=None):
        return sample_link_error(self, rng, size)


def sample_link_error(noise: LinkNoise, rng: RandomStream, size=None):
    x = noise.half_width_x
    if x == 0.0:
        return 0.0 if size is None else np.zeros(size)
    return rng.uniform(-x, x, size)


# Irwin-Hall densities on [0, n] for small n, as piecewise polynomials.
def _ih1(s):
    return np.where((s >= 0) & (s <= 1), 1.0, 0.0)


def _ih2(s):
    return np.where(s < 1, s, 2 - s)


def _ih3(s):
    return np.select(
        [s < 1, s < 2],
        [s * s / 2, (-2 * s * s + 6 * s - 3) / 2],
        (3 - s) ** 2 / 2,
    )


def _ih4(s):
    return np.select(
        [s < 1, s < 2, s < 3],
        [
            s**3 / 6,
            (-3 * s**3 + 12 * s**2 - 12 * s + 4) / 6,
            (3 * s**3 - 24 * s**2 + 60 * s - 44) / 6,
        ],
        (4 - s) ** 3 / 6,
    )


def _ih_general(n, s):
    total = np.zeros_like(s)
    for k in range(n + 1):
        total += (-1) ** k * math.comb(n, k) * np.where(s > k, (s - k), 0.0) ** (n - 1)
    return total / math.factorial(n - 1)


_IH_CLOSED = {1: _ih1, 2: _ih2, 3: _ih3, 4: _ih4}


def pdf_sum_links(n: int, x: float, phi):
    """Density of the sum of ``n`` independent uniforms on [-x, x] at ``phi``."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    if x <= 0:
        raise ValueError(f"x must be positive, got {x}")
    phi = np.asarray(phi, dtype=float)
    s = (phi + n * x) / (2 * x)
    inside = (s >= 0) & (s <= n)
    s_in = np.clip(s, 0.0, float(n))
    dens = _IH_CLOSED[n](s_in) if n in _IH_CLOSED else _ih_general(n, s_in)
    out = np.where(inside, dens / (2 * x), 0.0)
    return float(out) if out.ndim == 0 else out


def pdf_sum_uniform(widths: Sequence[float], phi):
    """Density of a sum of independent uniforms on [-w_i, w_i], mixed widths.

    Inclusion-exclusion over the box corners; reduces to :func:`pdf_sum_links`
    when all widths agree.
    """
    widths = [float(w) for w in widths]
    if not widths or min(widths) <= 0:
        raise ValueError("widths must be a non-empty sequence of positive reals")
    n = len(widths)
    phi = np.asarray(phi, dtype=float)
    shifted = phi + sum(widths)
    total = np.zeros_like(shifted)
    for k in range(n + 1):
        for subset in combinations(widths, k):
            t = shifted - 2 * sum(subset)
            total += (-1) ** k * np.where(t > 0, t, 0.0) ** (n - 1)
    norm = math.factorial(n - 1) * math.prod(2 * w for w in widths)
    out = total / norm
    if n == 1:
        out = np.where(np.abs(phi) <= widths[0], 1 / (2 * widths[0]), 0.0)
    out = np.where(np.abs(phi) <= sum(widths), np.maximum(out, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def error_prob_single_exact(x: float) -> float:
    """Flip probability for one link: 1/2 - sin(2x)/(4x)."""
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 0.0
    return 0.5 - math.sin(2 * x) / (4 * x)


def error_prob_series(x: float, n: int = 1) -> float:
    """Small-x approximation: x^2/3 - x^4/15 for one link, n x^2/3 beyond."""
    if not 0.0 <= x <= MAX_HALF_WIDTH:
        raise ValueError(f"x must lie in [0, {MAX_HALF_WIDTH}], got {x}")
    if n < 1:
        raise ValueError("n must be a positive integer")
    if n == 1:
        return x**2 / 3 - x**4 / 15
    return n * x**2 / 3


def mean_cos2(x: float) -> float:
    """E[cos(2e)] for e uniform on [-x, x]."""
    if x == 0:
        return 1.0
    # 1 - sin(2x)/(2x) suffers cancellation near 0; sinc keeps full precision
    return float(np.sinc(2 * x / math.pi))


def _widths(x, n: int | None) -> list[float]:
    if np.ndim(x) == 0:
        n = 1 if n is None else n
        if n < 1:
            raise ValueError("n must be a positive integer")
        return [float(x)] * n
    widths = [float(w) for w in x]
    if n is not None and n != len(widths):
        raise ValueError(f"got {len(widths)} widths for n={n}")
    if not widths:
        raise ValueError("widths must be non-empty")
    return widths


def error_prob_exact(x, n: int | None = None) -> float:
    """Flip probability after ``n`` independent links: (1 - prod_i sinc_i)/2.

    ``x`` may be a single half-width shared by all links or one per link
    (then ``n`` may be omitted).
    """
    widths = _widths(x, n)
    if min(widths) < 0:
        raise ValueError("half-widths must be nonnegative")
    if max(widths) == 0:
        return 0.0
    prod = math.prod(mean_cos2(w) for w in widths)
    # (1 - prod)/2 computed as -expm1(log prod)/2 to keep relative precision
    return -math.expm1(math.log(prod)) / 2


def error_prob_quadrature(x, n: int | None = None, steps: int = 10_000) -> float:
    """Composite Simpson integral of density * sin^2 over the error support."""
    if steps < 100 or steps % 2:
        raise ValueError(f"steps must be an even integer >= 100, got {steps}")
    widths = _widths(x, n)
    if min(widths) <= 0:
        raise ValueError("half-widths must be positive")
    half = sum(widths)
    grid = np.linspace(-half, half, steps + 1)
    if len(set(widths)) == 1:
        dens = pdf_sum_links(len(widths), widths[0], grid)
    else:
        dens = pdf_sum_uniform(widths, grid)
    return float(simpson(dens * np.sin(grid) ** 2, x=grid))


@dataclass(frozen=True)
class ErrorProbabilityResult:
    x: float
    n_links: int
    exact: float
    series: float
    quadrature: float
    quadrature_steps: int

    @property
    def series_deviation(self) -> float:
        return self.series - self.exact

    @property
    def quadrature_deviation(self) -> float:
        return self.quadrature - self.exact


def analyze(x: float, n_links: int = 1, steps: int = 10_000) -> ErrorProbabilityResult:
    """Exact, series and quadrature flip probabilities side by side."""
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x}")
    if x == 0:
        return ErrorProbabilityResult(0.0, n_links, 0.0, 0.0, 0.0, steps)
    return ErrorProbabilityResult(
        x=x,
        n_links=n_links,
        exact=error_prob_exact(x, n_links),
        series=error_prob_series(x, n_links),
        quadrature=error_prob_quadrature(x, n_links, steps),
        quadrature_steps=steps,
    )
