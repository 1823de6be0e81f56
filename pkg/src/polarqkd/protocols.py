"""BB84, two-stage and three-stage key exchange over a noisy polarization channel.

Rounds are simulated in fixed chunks of :data:`~polarqkd.rng.CHUNK_SIZE`;
chunk ``c`` draws protocol randomness from ``rng.child(c).child(0)`` and
adversary randomness from ``rng.child(c).child(1)``. Chunks may run on any
number of threads and are reassembled in order, so a transcript depends only
on the seed and the configuration.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, TextIO

import numpy as np

from .adversary import EveStrategy, tap
from .noise import LinkNoise
from .polarization import Basis, encode_bits, measure_angles
from .rng import RandomStream, chunk_bounds, ordered_map

__all__ = [
    "ChannelModel",
    "KeyBits",
    "PROTOCOLS",
    "RoundRecord",
    "TRANSCRIPT_FIELDS",
    "Transcript",
    "qber",
    "read_transcript",
    "run_bb84",
    "run_protocol",
    "run_three_stage",
    "run_two_stage",
]

PROTOCOLS = ("bb84", "two-stage", "three-stage")
KEY_ROLES = ("raw", "sifted", "reconciled")

_PROTO, _EVE = 0, 1


@dataclass(frozen=True, eq=False)
class KeyBits:
    bits: np.ndarray
    role: str = "raw"

    def __post_init__(self):
        arr = np.array(self.bits, dtype=np.uint8).reshape(-1)
        if arr.size and arr.max() > 1:
            raise ValueError("key bits must be 0 or 1")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)
        if self.role not in KEY_ROLES:
            raise ValueError(f"role must be one of {KEY_ROLES}")

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeyBits):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"KeyBits(len={len(self)}, role={self.role!r})"

    def to_hex(self) -> str:
        """Bits packed MSB-first, zero-padded to a byte boundary."""
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, length: int, role: str = "raw") -> "KeyBits":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        return cls(np.unpackbits(raw)[:length], role)

    def with_role(self, role: str) -> "KeyBits":
        return KeyBits(self.bits, role)


def qber(a: KeyBits, b: KeyBits) -> float:
    """Fraction of positions where the two keys differ."""
    if len(a) != len(b):
        raise ValueError(f"key lengths differ: {len(a)} != {len(b)}")
    if len(a) == 0:
        raise ValueError("qber of empty keys is undefined")
    return float(np.count_nonzero(a.bits != b.bits)) / len(a)


@dataclass(frozen=True)
class ChannelModel:
    """Link noise per traversal plus an optional eavesdropper.

    ``noise`` is either one :class:`LinkNoise` used on every traversal or a
    sequence with one entry per traversal. With ``discard_lost`` rounds whose
    pulse arrives empty are left out of the keys; otherwise the receiver
    records a coin-flip guess. ``final_equipment_error`` adds an error draw to
    Bob's last local rotation in the three-stage protocol.
    """

    noise: LinkNoise | Sequence[LinkNoise] = field(default_factory=lambda: LinkNoise(0.0))
    eve: EveStrategy | None = None
    discard_lost: bool = True
    final_equipment_error: bool = False

    def widths(self, traversals: int) -> list[float]:
        if isinstance(self.noise, LinkNoise):
            return [self.noise.half_width_x] * traversals
        noise = list(self.noise)
        if len(noise) < traversals:
            raise ValueError(f"channel defines {len(noise)} link widths, protocol needs {traversals}")
        return [n.half_width_x for n in noise[:traversals]]


@dataclass(frozen=True)
class RoundRecord:
    """One round; fields that do not apply to the protocol are ``None``."""

    index: int
    protocol: str
    alice_theta: float | None
    bob_phi: float | None
    bob_choice: float | None
    data_bit: int | None
    alice_basis: Basis | None
    bob_basis: Basis | None
    link_errors: tuple[float, ...]
    draw: float
    measured_bit: int | None
    detected: bool
    sent_count: int
    received_count: int
    stolen_count: int
    eve_basis: Basis | None
    eve_bit: int | None

    @property
    def total_error(self) -> float:
        return float(sum(self.link_errors))


TRANSCRIPT_FIELDS = (
    "index",
    "protocol",
    "alice_theta",
    "bob_phi",
    "bob_choice",
    "data_bit",
    "alice_basis",
    "bob_basis",
    "link_errors",
    "draw",
    "measured_bit",
    "detected",
    "sent_count",
    "received_count",
    "stolen_count",
    "eve_basis",
    "eve_bit",
)
TRANSCRIPT_MAGIC = "# polarqkd transcript v1"
_MISSING = "-"

# columns each protocol populates, beyond the common ones
_PROTOCOL_COLUMNS = {
    "bb84": ("data_bit", "alice_basis", "bob_basis"),
    "two-stage": ("alice_theta", "bob_choice"),
    "three-stage": ("alice_theta", "bob_phi", "data_bit"),
}


@dataclass
class Transcript:
    """Column store of a protocol run; rows are materialized on demand."""

    protocol: str
    columns: dict[str, np.ndarray]
    key_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.columns["draw"])

    def __getitem__(self, i: int) -> RoundRecord:
        c = self.columns
        i = range(len(self))[i]
        own = _PROTOCOL_COLUMNS[self.protocol]

        def opt(name, conv):
            if name not in own:
                return None
            return conv(c[name][i])

        def opt_signed(name, conv):
            v = c.get(name)
            if v is None or v[i] < 0:
                return None
            return conv(v[i])

        detected = bool(c["detected"][i])
        return RoundRecord(
            index=i,
            protocol=self.protocol,
            alice_theta=opt("alice_theta", float),
            bob_phi=opt("bob_phi", float),
            bob_choice=opt("bob_choice", float),
            data_bit=opt("data_bit", int),
            alice_basis=opt("alice_basis", Basis),
            bob_basis=opt("bob_basis", Basis),
            link_errors=tuple(float(e) for e in c["link_errors"][i]),
            draw=float(c["draw"][i]),
            measured_bit=int(c["measured_bit"][i]) if detected else None,
            detected=detected,
            sent_count=int(c["sent_count"][i]),
            received_count=int(c["received_count"][i]),
            stolen_count=int(c["stolen_count"][i]),
            eve_basis=opt_signed("eve_basis", Basis),
            eve_bit=opt_signed("eve_bit", int),
        )

    def __iter__(self) -> Iterator[RoundRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def summary(self) -> dict:
        c = self.columns
        rounds = len(self)
        compared = int(self.key_mask.sum())
        mism = int(np.count_nonzero(self.sender_key_bits() != self.receiver_key_bits()))
        return {
            "protocol": self.protocol,
            "rounds": rounds,
            "detections": int(c["detected"].sum()),
            "compared": compared,
            "sift_rate": compared / rounds,
            "errors": mism,
            "qber": mism / compared if compared else float("nan"),
            "mean_sent_count": float(c["sent_count"].mean()),
            "mean_received_count": float(c["received_count"].mean()),
            "mean_stolen_count": float(c["stolen_count"].mean()),
        }

    def sender_key_bits(self) -> np.ndarray:
        c = self.columns
        if self.protocol == "two-stage":
            # the key is chosen by Bob; Alice decodes it
            return (c["bob_choice"][self.key_mask] > 0).astype(np.uint8)
        return c["data_bit"][self.key_mask].astype(np.uint8)

    def receiver_key_bits(self) -> np.ndarray:
        return self.columns["key_bit"][self.key_mask].astype(np.uint8)

    def write(self, fh: TextIO) -> None:
        """Write one tab-separated line per round, fields in :data:`TRANSCRIPT_FIELDS` order."""
        fh.write(f"{TRANSCRIPT_MAGIC} protocol={self.protocol} rounds={len(self)}\n")
        fh.write("\t".join(TRANSCRIPT_FIELDS) + "\n")
        c = self.columns
        own = set(_PROTOCOL_COLUMNS[self.protocol])
        n = len(self)

        def fcol(name):
            if name not in own:
                return [_MISSING] * n
            return [f"{v:.17g}" for v in c[name].tolist()]

        def icol(name, signed=False):
            if name not in own and not signed:
                return [_MISSING] * n
            vals = c[name].tolist() if name in c else [-1] * n
            return [_MISSING if v < 0 else str(v) for v in vals]

        errs = [",".join(f"{e:.17g}" for e in row) for row in c["link_errors"].tolist()]
        detected = c["detected"].tolist()
        measured = [str(m) if d else _MISSING for m, d in zip(c["measured_bit"].tolist(), detected)]
        cols = [
            [str(i) for i in range(n)],
            [self.protocol] * n,
            fcol("alice_theta"),
            fcol("bob_phi"),
            fcol("bob_choice"),
            icol("data_bit"),
            icol("alice_basis"),
            icol("bob_basis"),
            errs,
            [f"{v:.17g}" for v in c["draw"].tolist()],
            measured,
            ["1" if d else "0" for d in detected],
            [str(v) for v in c["sent_count"].tolist()],
            [str(v) for v in c["received_count"].tolist()],
            [str(v) for v in c["stolen_count"].tolist()],
            icol("eve_basis", signed=True),
            icol("eve_bit", signed=True),
        ]
        fh.writelines("\t".join(row) + "\n" for row in zip(*cols))

    def dumps(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()


def read_transcript(fh: TextIO) -> list[dict]:
    """Parse a transcript written by :meth:`Transcript.write` into row dicts."""
    first = fh.readline()
    if not first.startswith(TRANSCRIPT_MAGIC):
        raise ValueError("not a polarqkd transcript")
    reader = csv.DictReader(fh, delimiter="\t")
    if tuple(reader.fieldnames or ()) != TRANSCRIPT_FIELDS:
        raise ValueError("unexpected transcript field order")
    rows = []
    for raw in reader:
        row: dict = {}
        for k, v in raw.items():
            if v == _MISSING:
                row[k] = None
            elif k == "protocol":
                row[k] = v
            elif k == "link_errors":
                row[k] = tuple(float(e) for e in v.split(",")) if v else ()
            elif k in ("alice_theta", "bob_phi", "bob_choice", "draw"):
                row[k] = float(v)
            else:
                row[k] = int(v)
        row["detected"] = bool(row["detected"])
        rows.append(row)
    return rows


def _source_counts(rng: RandomStream, m: int, mean_photons: float | None) -> np.ndarray:
    if mean_photons is None:
        return np.ones(m, dtype=np.int64)
    if mean_photons < 0:
        raise ValueError("mean photon number must be nonnegative")
    return rng.poisson(mean_photons, m).astype(np.int64)


class _Link:
    """Runs successive traversals for one chunk, recording errors and theft."""

    def __init__(self, channel: ChannelModel, widths: list[float], eps: np.ndarray, eve_rng: RandomStream):
        self.channel = channel
        self.widths = widths
        self.eps = eps
        self.eve_rng = eve_rng
        self.stolen = None
        self.eve_bases = None
        self.eve_bits = None

    def traverse(self, k: int, orient, counts, sender_bases=None):
        res = tap(self.channel.eve, orient, counts, k, self.eve_rng, sender_bases)
        self.stolen = res.stolen if self.stolen is None else self.stolen + res.stolen
        if res.eve_bases is not None and self.eve_bases is None:
            self.eve_bases, self.eve_bits = res.eve_bases, res.eve_bits
        return res.orientations + self.eps[:, k], res.counts


def _draw_errors(rng: RandomStream, m: int, widths: list[float]) -> np.ndarray:
    u = rng.random((m, len(widths)))
    # + 0.0 turns the -0.0 of zero-width links into 0.0
    return (2.0 * u - 1.0) * np.asarray(widths) + 0.0


def _finish(cols: dict, orient, counts, m, draws, link: _Link, channel: ChannelModel, bases):
    bits, _ = measure_angles(orient, bases, draws)
    detected = counts > 0
    if not channel.discard_lost:
        bits = np.where(detected, bits, (draws < 0.5).astype(np.uint8))
    cols.update(
        link_errors=link.eps,
        draw=draws,
        measured_bit=bits.astype(np.int8),
        detected=detected,
        received_count=counts,
        stolen_count=link.stolen if link.stolen is not None else np.zeros(m, dtype=np.int64),
        eve_basis=link.eve_bases if link.eve_bases is not None else np.full(m, -1, np.int8),
        eve_bit=link.eve_bits if link.eve_bits is not None else np.full(m, -1, np.int8),
    )
    cols["key_bit"] = cols["measured_bit"]
    return cols


def _bb84_chunk(args):
    rng, m, channel, mean_photons = args
    proto, eve_rng = rng.child(_PROTO), rng.child(_EVE)
    alice_bits = proto.bits(m)
    alice_basis = proto.integers(0, 2, m).astype(np.int8)
    bob_basis = proto.integers(0, 2, m).astype(np.int8)
    counts = _source_counts(proto, m, mean_photons)
    widths = channel.widths(1)
    link = _Link(channel, widths, _draw_errors(proto, m, widths), eve_rng)
    draws = proto.random(m)
    cols = dict(data_bit=alice_bits, alice_basis=alice_basis, bob_basis=bob_basis, sent_count=counts)
    orient, received = link.traverse(0, encode_bits(alice_bits, alice_basis), counts, alice_basis)
    return _finish(cols, orient, received, m, draws, link, channel, bob_basis)


def _two_stage_chunk(args):
    rng, m, channel, mean_photons, forced = args
    proto, eve_rng = rng.child(_PROTO), rng.child(_EVE)
    bob_bits = proto.bits(m)
    if forced is not None:
        bob_bits = forced
    theta = proto.random(m) * math.pi
    counts = _source_counts(proto, m, mean_photons)
    widths = channel.widths(2)
    link = _Link(channel, widths, _draw_errors(proto, m, widths), eve_rng)
    draws = proto.random(m)
    choice = bob_bits * (math.pi / 2)
    cols = dict(alice_theta=theta, bob_choice=choice, sent_count=counts)
    orient = np.full(m, encode_bits(0, Basis.RECTILINEAR)) + theta
    orient, c = link.traverse(0, orient, counts)
    orient, c = link.traverse(1, orient + choice, c)
    orient = orient - theta
    return _finish(cols, orient, c, m, draws, link, channel, np.zeros(m, np.int8))


def _three_stage_chunk(args):
    rng, m, channel, mean_photons, forced = args
    proto, eve_rng = rng.child(_PROTO), rng.child(_EVE)
    data = proto.bits(m)
    if forced is not None:
        data = forced
    theta = proto.random(m) * math.pi
    phi = proto.random(m) * math.pi
    counts = _source_counts(proto, m, mean_photons)
    widths = channel.widths(3)
    if channel.final_equipment_error:
        widths = widths + [widths[-1]]
    link = _Link(channel, widths, _draw_errors(proto, m, widths), eve_rng)
    draws = proto.random(m)
    cols = dict(alice_theta=theta, bob_phi=phi, data_bit=data, sent_count=counts)
    orient = encode_bits(data, Basis.RECTILINEAR) + theta
    orient, c = link.traverse(0, orient, counts)
    orient, c = link.traverse(1, orient + phi, c)
    orient, c = link.traverse(2, orient - theta, c)
    orient = orient - phi
    if channel.final_equipment_error:
        orient = orient + link.eps[:, 3]
    return _finish(cols, orient, c, m, draws, link, channel, np.zeros(m, np.int8))


def _assemble(protocol: str, parts: list[dict]) -> dict[str, np.ndarray]:
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _check_rounds(n: int) -> None:
    if int(n) < 1:
        raise ValueError(f"need at least one round, got {n}")


def _forced_slices(forced, total):
    if forced is None:
        return lambda s, e: None
    arr = np.asarray(forced, dtype=np.uint8).reshape(-1)
    if len(arr) != total:
        raise ValueError(f"expected {total} forced bits, got {len(arr)}")
    return lambda s, e: arr[s:e]


def run_bb84(
    rounds: int,
    channel: ChannelModel,
    source_mean_photons: float | None = None,
    rng: RandomStream | None = None,
) -> tuple[KeyBits, KeyBits, Transcript]:
    """Prepare-and-measure BB84 followed by basis sifting.

    ``source_mean_photons=None`` emits exactly one photon per round; a number
    switches to a Poisson source with that mean.
    """
    _check_rounds(rounds)
    rng = rng or RandomStream()
    jobs = [(rng.child(c), e - s, channel, source_mean_photons) for c, s, e in chunk_bounds(rounds)]
    cols = _assemble("bb84", ordered_map(_bb84_chunk, jobs))
    mask = cols["detected"] & (cols["alice_basis"] == cols["bob_basis"])
    t = Transcript("bb84", cols, mask)
    return KeyBits(t.sender_key_bits(), "sifted"), KeyBits(t.receiver_key_bits(), "sifted"), t


def _stage_keys(t: Transcript, channel: ChannelModel):
    t.key_mask = t.columns["detected"].copy() if channel.discard_lost else np.ones(len(t), bool)
    return KeyBits(t.sender_key_bits(), "raw"), KeyBits(t.receiver_key_bits(), "raw")


def run_two_stage(
    bits: int,
    channel: ChannelModel,
    rng: RandomStream | None = None,
    *,
    source_mean_photons: float | None = None,
    bob_bits: Sequence[int] | None = None,
) -> tuple[KeyBits, KeyBits, Transcript]:
    """Bob chooses the key; Alice recovers it after undoing her rotation.

    Returns ``(alice_key, bob_key, transcript)``: Alice's decoded bits and
    Bob's chosen bits. ``bob_bits`` overrides Bob's random choices.
    """
    _check_rounds(bits)
    rng = rng or RandomStream()
    forced = _forced_slices(bob_bits, bits)
    jobs = [(rng.child(c), e - s, channel, source_mean_photons, forced(s, e)) for c, s, e in chunk_bounds(bits)]
    cols = _assemble("two-stage", ordered_map(_two_stage_chunk, jobs))
    t = Transcript("two-stage", cols, np.zeros(bits, bool))
    bob_key, alice_key = _stage_keys(t, channel)
    return alice_key, bob_key, t


def run_three_stage(
    bits: int,
    channel: ChannelModel,
    rng: RandomStream | None = None,
    *,
    source_mean_photons: float | None = None,
    data_bits: Sequence[int] | None = None,
) -> tuple[KeyBits, KeyBits, Transcript]:
    """Alice's bits travel under her and Bob's stacked secret rotations."""
    _check_rounds(bits)
    rng = rng or RandomStream()
    forced = _forced_slices(data_bits, bits)
    jobs = [(rng.child(c), e - s, channel, source_mean_photons, forced(s, e)) for c, s, e in chunk_bounds(bits)]
    cols = _assemble("three-stage", ordered_map(_three_stage_chunk, jobs))
    t = Transcript("three-stage", cols, np.zeros(bits, bool))
    sent, received = _stage_keys(t, channel)
    return sent, received, t


def run_protocol(protocol: str, rounds: int, channel: ChannelModel, rng: RandomStream, source_mean_photons=None):
    """Dispatch by protocol name; returns ``(sender_key, receiver_key, transcript)``.

    For the two-stage protocol the key originates with Bob, so the
    "sender" key is Bob's choice and the receiver is Alice.
    """
    if protocol == "bb84":
        return run_bb84(rounds, channel, source_mean_photons, rng)
    if protocol == "two-stage":
        alice, bob, t = run_two_stage(rounds, channel, rng, source_mean_photons=source_mean_photons)
        return bob, alice, t
    if protocol == "three-stage":
        return run_three_stage(rounds, channel, rng, source_mean_photons=source_mean_photons)
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
