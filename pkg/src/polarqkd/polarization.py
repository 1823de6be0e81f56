"""Linear polarization states, rotations, polarizer measurements, pulse taps."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .rng import RandomStream

__all__ = [
    "ANGLE_TOL",
    "Basis",
    "PolarizationState",
    "Pulse",
    "angular_distance",
    "canonical",
    "encode_bit",
    "encode_bits",
    "measure",
    "measure_angles",
    "rotate",
    "split_pulse",
]

HALF_TURN = math.pi
ANGLE_TOL = 1e-9


def canonical(angle):
    """Reduce an orientation (scalar or array) into [0, pi)."""
    out = np.mod(angle, HALF_TURN)
    # np.mod can round up to exactly pi for tiny negative inputs
    if np.ndim(out) == 0:
        return 0.0 if out >= HALF_TURN else float(out)
    out[out >= HALF_TURN] = 0.0
    return out


def angular_distance(a, b):
    """Distance between two orientations modulo pi, in [0, pi/2]."""
    d = np.mod(np.asarray(a) - np.asarray(b), HALF_TURN)
    return np.minimum(d, HALF_TURN - d)


class Basis(enum.IntEnum):
    """Polarizer setting. Values double as array codes."""

    RECTILINEAR = 0
    DIAGONAL = 1

    def angle(self, bit: int) -> float:
        return float(_BIT_ANGLES[int(self), int(bit)])

    @property
    def one_angle(self) -> float:
        return float(_BIT_ANGLES[int(self), 1])


# rows: basis code; columns: bit value
_BIT_ANGLES = np.array(
    [
        [math.pi / 2, 0.0],  # rectilinear: 0 vertical, 1 horizontal
        [math.pi / 4, 3 * math.pi / 4],  # diagonal: 0 at +45, 1 at -45
    ]
)


@dataclass(frozen=True)
class PolarizationState:
    orientation: float

    def __post_init__(self):
        object.__setattr__(self, "orientation", canonical(float(self.orientation)))

    def isclose(self, other: "PolarizationState", tol: float = ANGLE_TOL) -> bool:
        return bool(angular_distance(self.orientation, other.orientation) <= tol)


@dataclass(frozen=True)
class Pulse:
    """A polarization state carried by ``photon_count`` identical photons."""

    state: PolarizationState
    photon_count: int = 1

    def __post_init__(self):
        if self.photon_count < 0:
            raise ValueError("photon_count must be nonnegative")

    @property
    def is_vacuum(self) -> bool:
        return self.photon_count == 0


def encode_bit(bit: int, basis: Basis) -> PolarizationState:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return PolarizationState(Basis(basis).angle(bit))


def encode_bits(bits: np.ndarray, bases: np.ndarray | int) -> np.ndarray:
    """Vectorized :func:`encode_bit` on integer arrays (basis codes 0/1)."""
    return _BIT_ANGLES[np.asarray(bases, dtype=np.intp), np.asarray(bits, dtype=np.intp)]


def rotate(state: PolarizationState, delta: float) -> PolarizationState:
    return PolarizationState(state.orientation + delta)


def measure_angles(orientations, bases, draws):
    """Polarizer measurement on arrays of orientations.

    The outcome is the basis state nearest the photon, flipped to the
    orthogonal state when ``draw < sin^2(deviation)``. This realizes the
    cos^2/sin^2 projection law while making every flip traceable to its draw.

    Returns ``(bits, flipped)`` as uint8 and bool arrays.
    """
    bases = np.asarray(bases, dtype=np.intp)
    one_angle = _BIT_ANGLES[bases, 1]
    d1 = angular_distance(orientations, one_angle)
    nearest = (d1 <= math.pi / 4).astype(np.uint8)
    deviation = np.where(nearest == 1, d1, math.pi / 2 - d1)
    flipped = np.asarray(draws) < np.sin(deviation) ** 2
    bits = np.where(flipped, 1 - nearest, nearest).astype(np.uint8)
    return bits, flipped


def measure(pulse: Pulse, basis: Basis, rng: RandomStream):
    """Project ``pulse`` onto ``basis``.

    Returns ``(bit, collapsed_pulse)``, or ``None`` for a vacuum pulse.
    """
    if pulse.is_vacuum:
        return None
    basis = Basis(basis)
    bits, _ = measure_angles(np.array([pulse.state.orientation]), np.array([int(basis)]), np.array([rng.random()]))
    bit = int(bits[0])
    return bit, Pulse(PolarizationState(basis.angle(bit)), pulse.photon_count)


def split_pulse(pulse: Pulse, tap_fraction: float, rng: RandomStream) -> tuple[Pulse, Pulse]:
    """Divert each photon independently with probability ``tap_fraction``."""
    if not 0.0 <= tap_fraction <= 1.0:
        raise ValueError(f"tap_fraction must lie in [0, 1], got {tap_fraction}")
    diverted = int(rng.binomial(pulse.photon_count, tap_fraction))
    return (
        Pulse(pulse.state, pulse.photon_count - diverted),
        Pulse(pulse.state, diverted),
    )
