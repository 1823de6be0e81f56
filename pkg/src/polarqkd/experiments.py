"""Experiment drivers behind the command line: curves, runs, reconciliation demos."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .adversary import EveStrategy, IntensityMonitor, window_alarms
from .noise import LinkNoise, error_prob_exact, error_prob_series
from .polarization import Basis, encode_bits, measure_angles
from .protocols import PROTOCOLS, ChannelModel, KeyBits, qber, run_protocol
from .reconcile import ReconciliationConfig, choose_block_length, reconcile
from .rng import CHUNK_SIZE, RandomStream, chunk_bounds, ordered_map

__all__ = [
    "CSV_COLUMNS",
    "CurvePoint",
    "FIGURE_LINKS",
    "RunConfig",
    "figure_curve",
    "format_csv",
    "monte_carlo_flip_rate",
    "reconcile_demo",
    "simulate",
]

SCHEMA_VERSION = 1
FIGURE_LINKS = {4: 1, 6: 2}
CSV_COLUMNS = ("x", "analytic_exact", "analytic_series", "monte_carlo", "trials", "std_error")
TRAVERSALS = {"bb84": 1, "two-stage": 2, "three-stage": 3}


def fmt(v: float) -> str:
    return f"{v:.10g}"


@dataclass(frozen=True)
class CurvePoint:
    x: float
    analytic_exact: float
    analytic_series: float
    monte_carlo: float
    trials: int
    std_error: float

    @property
    def passes(self) -> bool:
        return abs(self.monte_carlo - self.analytic_exact) <= 3 * self.std_error

    def row(self) -> list[str]:
        return [fmt(self.x), fmt(self.analytic_exact), fmt(self.analytic_series),
                fmt(self.monte_carlo), str(self.trials), fmt(self.std_error)]


def monte_carlo_flip_rate(x: float, links: int, trials: int, rng: RandomStream) -> float:
    """Fraction of vertical photons read as horizontal after ``links`` noisy hops."""
    flips = 0
    for c, s, e in chunk_bounds(trials):
        sub = rng.child(c)
        m = e - s
        total = ((2.0 * sub.random((m, links)) - 1.0) * x).sum(axis=1)
        bits, _ = measure_angles(encode_bits(np.zeros(m, np.uint8), Basis.RECTILINEAR) + total,
                                 np.zeros(m, np.int8), sub.random(m))
        flips += int(np.count_nonzero(bits != 0))
    return flips / trials


def figure_curve(figure: int, x_min: float, x_max: float, steps: int, trials: int, seed: int) -> list[CurvePoint]:
    """Flip probability against link half-width: one link (4) or two (6)."""
    if figure not in FIGURE_LINKS:
        raise ValueError(f"figure must be one of {sorted(FIGURE_LINKS)}")
    if not 0 < x_min < x_max <= 0.5:
        raise ValueError("need 0 < x_min < x_max <= 0.5")
    if steps < 2 or trials < 1:
        raise ValueError("need steps >= 2 and trials >= 1")
    links = FIGURE_LINKS[figure]
    base = RandomStream(seed).child(figure)

    def point(item):
        i, x = item
        p = error_prob_exact(x, links)
        mc = monte_carlo_flip_rate(x, links, trials, base.child(i))
        return CurvePoint(x, p, error_prob_series(x, links), mc, trials, math.sqrt(p * (1 - p) / trials))

    grid = np.linspace(x_min, x_max, steps)
    return ordered_map(point, list(enumerate(float(v) for v in grid)))


def format_csv(points: list[CurvePoint]) -> str:
    lines = [",".join(CSV_COLUMNS)] + [",".join(p.row()) for p in points]
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[CurvePoint]:
    lines = text.strip().splitlines()
    if tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    out = []
    for line in lines[1:]:
        x, ex, se, mc, tr, sd = line.split(",")
        out.append(CurvePoint(float(x), float(ex), float(se), float(mc), int(tr), float(sd)))
    return out


@dataclass
class RunConfig:
    """Flat, JSON-backed description of one simulation run."""

    schema_version: int = SCHEMA_VERSION
    protocol: str = "bb84"
    x: float | list[float] = 0.1
    rounds: int = 100_000
    trials: int = 1
    seed: int = 0
    source: str = "single-photon"
    mean_photons: float = 0.1
    eve_kind: str = "none"
    eve_tap_fraction: float = 0.2
    eve_stages: list[int] | None = None
    eve_pns_mode: bool = False
    eve_basis: str = "random"
    monitor_threshold: float = 0.9
    monitor_window: int = 10_000
    discard_lost: bool = True
    final_equipment_error: bool = False
    reconcile: bool = False
    recon_block_length: int | str = "auto"
    recon_passes: int = 4
    recon_block_growth: int = 1
    transcript_path: str = "transcript.tsv"
    report_path: str = "report.json"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        if self.rounds < 1 or self.trials < 1:
            raise ValueError("rounds and trials must be positive")
        if self.source not in ("single-photon", "poisson"):
            raise ValueError("source must be 'single-photon' or 'poisson'")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.channel()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @property
    def source_mean(self) -> float | None:
        return None if self.source == "single-photon" else self.mean_photons

    @property
    def traversals(self) -> int:
        return TRAVERSALS[self.protocol]

    def channel(self) -> ChannelModel:
        if isinstance(self.x, (list, tuple)):
            noise = [LinkNoise(float(w)) for w in self.x]
        else:
            noise = LinkNoise(float(self.x))
        eve = None
        if self.eve_kind != "none":
            stages = None if self.eve_stages is None else tuple(self.eve_stages)
            eve = EveStrategy(self.eve_kind, self.eve_tap_fraction, stages, self.eve_pns_mode, self.eve_basis)
        return ChannelModel(noise, eve, self.discard_lost, self.final_equipment_error)

    def expected_qber(self) -> float:
        """Noise-only flip probability for the configured number of hops."""
        widths = self.channel().widths(self.traversals)
        if self.protocol == "three-stage" and self.final_equipment_error:
            widths = widths + [widths[-1]]
        return error_prob_exact(widths)


def _intensity_stats(cfg: RunConfig, transcript) -> dict:
    expected = 1.0 if cfg.source_mean is None else cfg.source_mean
    received = transcript.columns["received_count"]
    stats = {
        "expected_mean_count": expected,
        "observed_mean_count": float(received.mean()),
        "relative_intensity": float(received.mean()) / expected if expected > 0 else float("nan"),
        "window": cfg.monitor_window,
        "threshold": cfg.monitor_threshold,
    }
    if expected > 0 and len(received) >= cfg.monitor_window:
        alarms = window_alarms(received, cfg.monitor_window, IntensityMonitor(expected, cfg.monitor_threshold))
        stats.update(windows=int(alarms.size), alarms=int(alarms.sum()))
    return stats


def simulate(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Run ``cfg.trials`` independent protocol runs; write transcripts and a report."""
    channel = cfg.channel()
    master = RandomStream(cfg.seed)
    p = cfg.expected_qber()
    runs = []
    for trial in range(cfg.trials):
        trial_rng = master.child(trial)
        sender, receiver, transcript = run_protocol(cfg.protocol, cfg.rounds, channel, trial_rng.child(0), cfg.source_mean)
        summary = transcript.summary
        n = summary["compared"]
        sigma = math.sqrt(p * (1 - p) / n) if n else float("nan")
        run = {
            "trial": trial,
            "summary": summary,
            "expected_noise_qber": p,
            "qber_sigma": sigma,
            "noise_check_pass": bool(n and abs(summary["qber"] - p) <= 3 * sigma) if cfg.eve_kind == "none" else None,
            "intensity": _intensity_stats(cfg, transcript),
        }
        if cfg.reconcile and n:
            run["reconciliation"] = _reconcile_keys(sender, receiver, cfg, trial_rng.child(1))
        if out_dir is not None:
            path = Path(out_dir) / _trial_name(cfg.transcript_path, trial, cfg.trials)
            with open(path, "w", newline="\n") as fh:
                transcript.write(fh)
        runs.append(run)
    report = {"config": cfg.to_dict(), "runs": runs}
    if out_dir is not None:
        (Path(out_dir) / cfg.report_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _trial_name(name: str, trial: int, trials: int) -> str:
    if trials == 1:
        return name
    p = Path(name)
    return f"{p.stem}_{trial}{p.suffix}"


def _reconcile_keys(sender: KeyBits, receiver: KeyBits, cfg: RunConfig, rng: RandomStream) -> dict:
    measured = qber(sender, receiver)
    block = cfg.recon_block_length
    if block == "auto":
        block = choose_block_length(measured) if 0 < measured < 0.5 else len(sender)
    block = min(int(block), len(sender))
    rc = ReconciliationConfig(block, cfg.recon_passes, int(rng.integers(0, 2**63)), block_growth=cfg.recon_block_growth)
    _, _, report = reconcile(sender, receiver, rc)
    return asdict(report)


def synthetic_keys(qber_rate: float, key_bits: int, rng: RandomStream) -> tuple[KeyBits, KeyBits]:
    """Random key and a copy with independent bit flips at ``qber_rate``."""
    a = rng.bits(key_bits)
    flips = (rng.random(key_bits) < qber_rate).astype(np.uint8)
    return KeyBits(a, "sifted"), KeyBits(a ^ flips, "sifted")


@dataclass
class DemoResult:
    reports: list = field(default_factory=list)

    @property
    def matches(self) -> int:
        return sum(r.hash_match for r in self.reports)


def reconcile_demo(qber_rate: float, key_bits: int, seed: int, runs: int = 1, passes: int = 4,
                   block_length: int | str = "auto", block_growth: int = 1) -> DemoResult:
    """Reconcile synthetic key pairs; one independent seed per run."""
    if not 0 <= qber_rate < 0.5:
        raise ValueError(f"qber must lie in [0, 0.5), got {qber_rate}")
    if key_bits < 2 or runs < 1:
        raise ValueError("need key_bits >= 2 and runs >= 1")
    if block_length == "auto":
        # a clean channel gives no estimate to size blocks from; one block then
        block = choose_block_length(qber_rate) if qber_rate > 0 else key_bits
    else:
        block = int(block_length)
    master = RandomStream(seed)
    result = DemoResult()
    for r in range(runs):
        rng = master.child(r)
        a, b = synthetic_keys(qber_rate, key_bits, rng.child(0))
        cfg = ReconciliationConfig(block, passes, int(rng.child(1).integers(0, 2**63)), block_growth=block_growth)
        result.reports.append(reconcile(a, b, cfg)[2])
    return result
