"""Eavesdropper strategies and the receiver-side intensity monitor.

Two attacks are modeled. Intercept-resend measures each pulse in a random
basis and re-prepares the outcome. Siphoning diverts photons from a pulse
without touching its polarization; in photon-number-splitting (PNS) mode only
the surplus photon of a multi-photon pulse is taken, so the single-photon
part of the stream passes untouched.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .polarization import Basis, Pulse, PolarizationState, encode_bits, measure_angles, split_pulse
from .rng import RandomStream

__all__ = [
    "EVE_KINDS",
    "EveStrategy",
    "IntensityMonitor",
    "TapResult",
    "apply_siphon",
    "intercept_resend",
    "monitor",
    "tap",
    "window_alarms",
]

EVE_KINDS = ("none", "intercept_resend", "siphon")
EVE_BASIS_CHOICES = ("random", "sender")


@dataclass(frozen=True)
class EveStrategy:
    """What Eve does on each traversal.

    ``stages_tapped=None`` taps every traversal. ``eve_basis="sender"`` is a
    control that lets intercept-resend use the sender's basis.
    """

    kind: str = "none"
    tap_fraction: float = 0.2
    stages_tapped: tuple[int, ...] | None = None
    pns_mode: bool = False
    eve_basis: str = "random"

    def __post_init__(self):
        if self.kind not in EVE_KINDS:
            raise ValueError(f"unknown eve kind {self.kind!r}; expected one of {EVE_KINDS}")
        if not 0.0 <= self.tap_fraction <= 1.0:
            raise ValueError(f"tap_fraction must lie in [0, 1], got {self.tap_fraction}")
        if self.eve_basis not in EVE_BASIS_CHOICES:
            raise ValueError(f"eve_basis must be one of {EVE_BASIS_CHOICES}")
        if self.stages_tapped is not None:
            stages = tuple(sorted(set(int(s) for s in self.stages_tapped)))
            if self.kind == "siphon" and not stages:
                raise ValueError("siphon needs at least one tapped traversal")
            object.__setattr__(self, "stages_tapped", stages)

    def taps(self, traversal_index: int) -> bool:
        if self.kind == "none":
            return False
        return self.stages_tapped is None or traversal_index in self.stages_tapped


def intercept_resend(pulse: Pulse, rng: RandomStream, basis: Basis | None = None):
    """Measure ``pulse`` in a random (or given) basis and resend the outcome.

    Returns ``(forwarded, eve_bit, eve_basis)``; a vacuum pulse passes
    through with ``eve_bit`` and ``eve_basis`` set to ``None``.
    """
    if pulse.is_vacuum:
        return pulse, None, None
    eve_basis = Basis(int(rng.integers(0, 2))) if basis is None else Basis(basis)
    bits, _ = measure_angles(np.array([pulse.state.orientation]), np.array([int(eve_basis)]), np.array([rng.random()]))
    bit = int(bits[0])
    return Pulse(PolarizationState(eve_basis.angle(bit)), pulse.photon_count), bit, eve_basis


def apply_siphon(pulse: Pulse, strategy: EveStrategy, traversal_index: int, rng: RandomStream):
    """Divert photons from ``pulse`` if ``strategy`` taps this traversal.

    Returns ``(forwarded, stolen)``; photon counts always add up.
    """
    vacuum = Pulse(pulse.state, 0)
    if strategy.kind != "siphon" or not strategy.taps(traversal_index):
        return pulse, vacuum
    if strategy.pns_mode:
        take = 1 if pulse.photon_count >= 2 else 0
        return Pulse(pulse.state, pulse.photon_count - take), Pulse(pulse.state, take)
    return split_pulse(pulse, strategy.tap_fraction, rng)


class TapResult(NamedTuple):
    orientations: np.ndarray
    counts: np.ndarray
    stolen: np.ndarray
    eve_bases: np.ndarray | None
    eve_bits: np.ndarray | None


def tap(
    strategy: EveStrategy | None,
    orientations: np.ndarray,
    counts: np.ndarray,
    traversal_index: int,
    rng: RandomStream,
    sender_bases: np.ndarray | None = None,
) -> TapResult:
    """Array form of the per-pulse attacks for one traversal."""
    zeros = np.zeros_like(counts)
    if strategy is None or not strategy.taps(traversal_index):
        return TapResult(orientations, counts, zeros, None, None)
    if strategy.kind == "siphon":
        if strategy.pns_mode:
            stolen = (counts >= 2).astype(counts.dtype)
        else:
            stolen = rng.binomial(counts, strategy.tap_fraction).astype(counts.dtype)
        return TapResult(orientations, counts - stolen, stolen, None, None)

    m = len(orientations)
    bases = rng.integers(0, 2, size=m).astype(np.int8)
    draws = rng.random(m)
    if strategy.eve_basis == "sender":
        if sender_bases is None:
            raise ValueError("eve_basis='sender' needs the sender's bases")
        bases = np.asarray(sender_bases, dtype=np.int8)
    bits, _ = measure_angles(orientations, bases, draws)
    present = counts > 0
    forwarded = np.where(present, encode_bits(bits, bases), orientations)
    eve_bases = np.where(present, bases, -1).astype(np.int8)
    eve_bits = np.where(present, bits, -1).astype(np.int8)
    return TapResult(forwarded, counts, zeros, eve_bases, eve_bits)


@dataclass(frozen=True)
class IntensityMonitor:
    """Alarm when the received mean photon count sags below a fraction of nominal."""

    expected_mean_count: float
    alarm_threshold: float = 0.9

    def __post_init__(self):
        if self.expected_mean_count <= 0:
            raise ValueError("expected_mean_count must be positive")
        if not 0.0 < self.alarm_threshold <= 1.0:
            raise ValueError(f"alarm_threshold must lie in (0, 1], got {self.alarm_threshold}")

    def alarm(self, observed_counts: Sequence[int]) -> bool:
        return monitor(observed_counts, self)


def monitor(observed_counts: Sequence[int], monitor: IntensityMonitor) -> bool:
    counts = np.asarray(observed_counts)
    if counts.size == 0:
        raise ValueError("observation window is empty")
    return bool(counts.mean() < monitor.alarm_threshold * monitor.expected_mean_count)


def window_alarms(observed_counts: Sequence[int], window: int, mon: IntensityMonitor) -> np.ndarray:
    """Alarm flag for each complete window of ``window`` consecutive pulses."""
    counts = np.asarray(observed_counts)
    full = len(counts) // window
    if full == 0:
        raise ValueError("fewer observations than one window")
    means = counts[: full * window].reshape(full, window).mean(axis=1)
    return means < mon.alarm_threshold * mon.expected_mean_count
