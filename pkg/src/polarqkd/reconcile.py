"""Key reconciliation by block parities with binary search, and key digests.

Both parties hold position-aligned keys. Each pass shuffles the keys with a
shared permutation, cuts them into blocks, and compares block parities. A
block whose parities disagree is bisected (left half first, ceil(len/2))
until a single position is left; that position is deleted from both keys.
Every disclosed parity costs one further deleted bit, taken from the tail of
the compared block, so the parity itself reveals nothing about what is kept.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .protocols import KeyBits
from .rng import RandomStream

__all__ = [
    "KeyDigest",
    "ReconciliationConfig",
    "ReconciliationReport",
    "choose_block_length",
    "digest",
    "inverse_permute",
    "permute",
    "reconcile",
    "verify_keys",
]

BLOCK_CONSTANT = 0.73


def permute(key: KeyBits, seed: int) -> KeyBits:
    """Seeded shuffle; equal seeds keep two keys position-aligned."""
    order = RandomStream(seed).permutation(len(key))
    return KeyBits(key.bits[order], key.role)


def inverse_permute(key: KeyBits, seed: int) -> KeyBits:
    order = RandomStream(seed).permutation(len(key))
    out = np.empty_like(key.bits)
    out[order] = key.bits
    return KeyBits(out, key.role)


def choose_block_length(qber_estimate: float) -> int:
    """Block length at which a block most likely holds at most one error."""
    if not 0.0 < qber_estimate < 0.5:
        raise ValueError(f"qber estimate must lie in (0, 0.5), got {qber_estimate}")
    return max(2, round(BLOCK_CONSTANT / qber_estimate))


@dataclass(frozen=True)
class ReconciliationConfig:
    """``block_length="auto"`` derives the first block length from ``qber_estimate``.

    Block length is multiplied by ``block_growth`` after each pass; the
    default keeps it constant, since with doubling the blocks soon span the
    whole key and error pairs can no longer be separated. ``shuffle=False``
    skips the permutation, which only makes sense for tracing by hand.
    """

    block_length: int | Literal["auto"] = "auto"
    passes: int = 4
    permutation_seed: int = 0
    qber_estimate: float | None = None
    block_growth: int = 1
    shuffle: bool = True

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be positive")
        if self.block_growth < 1:
            raise ValueError("block_growth must be a positive integer")
        if self.block_length == "auto":
            if self.qber_estimate is None or self.qber_estimate <= 0:
                raise ValueError("auto block length needs a positive qber_estimate")
        elif int(self.block_length) < 1:
            raise ValueError("block_length must be positive")

    def initial_block_length(self) -> int:
        if self.block_length == "auto":
            return choose_block_length(self.qber_estimate)
        return int(self.block_length)


@dataclass
class ReconciliationReport:
    parities_compared: int = 0
    bits_deleted: int = 0
    errors_corrected: int = 0
    initial_length: int = 0
    final_length: int = 0
    hash_match: bool = False
    # simulation-side diagnostic: true mismatch count before each pass and at the end
    mismatch_history: list[int] = field(default_factory=list)

    def to_text(self) -> str:
        """``key: value`` lines, stable order."""
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, list):
                v = ",".join(str(i) for i in v)
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def _parity(bits: np.ndarray, positions) -> int:
    return int(bits[positions].sum() & 1)


def _bisect(a: np.ndarray, b: np.ndarray, block: list[int]) -> tuple[int, list[list[int]]]:
    """Locate one erroneous position in an odd-parity-mismatch block."""
    compared = []
    sub = block
    while len(sub) > 1:
        half = (len(sub) + 1) // 2
        left = sub[:half]
        compared.append(left)
        sub = left if _parity(a, left) != _parity(b, left) else sub[half:]
    return sub[0], compared


def _toll_position(candidates, keep: np.ndarray) -> int | None:
    for pos in reversed(candidates):
        if keep[pos]:
            return pos
    return None


def _run_pass(a: np.ndarray, b: np.ndarray, block_len: int, report: ReconciliationReport):
    n = len(a)
    keep = np.ones(n, dtype=bool)
    everything = range(n)
    for start in range(0, n, block_len):
        block = [i for i in range(start, min(start + block_len, n)) if keep[i]]
        if not block:
            continue
        # worst case: one parity per bisection level plus the block's own, and the error
        if keep.sum() < len(block).bit_length() + 2:
            return a[keep], b[keep], False
        compared = [block]
        err = None
        if _parity(a, block) != _parity(b, block):
            err, sub_blocks = _bisect(a, b, block)
            compared += sub_blocks
        report.parities_compared += len(compared)
        # deletions happen after the search so bisection sees the whole block
        if err is not None:
            keep[err] = False
            report.errors_corrected += 1
            report.bits_deleted += 1
        for sub in compared:
            pos = _toll_position(sub, keep)
            if pos is None:
                pos = _toll_position(block, keep)
            if pos is None:
                pos = _toll_position(everything, keep)
            keep[pos] = False
            report.bits_deleted += 1
    return a[keep], b[keep], True


def reconcile(alice: KeyBits, bob: KeyBits, config: ReconciliationConfig):
    """Run the parity passes; returns ``(alice', bob', report)``."""
    if len(alice) != len(bob):
        raise ValueError(f"key lengths differ: {len(alice)} != {len(bob)}")
    block_len = config.initial_block_length()
    if len(alice) < block_len:
        raise ValueError(f"key of {len(alice)} bits is shorter than block length {block_len}")
    a = alice.bits.copy()
    b = bob.bits.copy()
    report = ReconciliationReport(initial_length=len(a))
    passes_rng = RandomStream(config.permutation_seed)
    for p in range(config.passes):
        report.mismatch_history.append(int(np.count_nonzero(a != b)))
        if config.shuffle:
            order = passes_rng.child(p).permutation(len(a))
            a, b = a[order], b[order]
        a, b, complete = _run_pass(a, b, block_len, report)
        if not complete:
            # key too short to pay for another parity
            break
        block_len *= config.block_growth
    report.mismatch_history.append(int(np.count_nonzero(a != b)))
    report.final_length = len(a)
    out_a, out_b = KeyBits(a, "reconciled"), KeyBits(b, "reconciled")
    report.hash_match = verify_keys(out_a, out_b)
    return out_a, out_b, report


@dataclass(frozen=True)
class KeyDigest:
    algorithm: str
    value: bytes

    def hex(self) -> str:
        return self.value.hex()


def digest(key: KeyBits, algorithm: str = "sha256") -> KeyDigest:
    """Hash of the bit length (8 bytes, big-endian) followed by the packed bits."""
    h = hashlib.new(algorithm)
    h.update(len(key).to_bytes(8, "big"))
    h.update(np.packbits(key.bits).tobytes())
    return KeyDigest(algorithm, h.digest())


def verify_keys(a: KeyBits, b: KeyBits, algorithm: str = "sha256") -> bool:
    return digest(a, algorithm) == digest(b, algorithm)
