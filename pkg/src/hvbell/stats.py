"""Correlation tables, CHSH estimates, efficiency audits and no-signaling checks.

Everything is computed from :class:`TrialCounts`, a 2x3x2x3 integer table of
(Alice primed, Alice outcome, Bob primed, Bob outcome). It is a sufficient
statistic for every estimator here, merges by addition, and makes all
results independent of record order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .chessboard import PAIR_NAMES, PAIR_SIGNS, PAIRS
from .core import (
    ALL_LABELS,
    CollectionMode,
    SettingLabel,
    Station,
    TrialBatch,
    as_batch,
)

BAND = 5.0  # acceptance band, in standard errors


class EstimationError(ValueError):
    """Raised when a conditional mean is requested for an empty setting pair or label."""


@dataclass(frozen=True)
class Single:
    """Half a trial: only one station reported."""

    trial_id: int
    label: SettingLabel
    outcome: int


class TrialCounts:
    """Mergeable sufficient statistic over trial records."""

    SHAPE = (2, 3, 2, 3)

    def __init__(self):
        self.table = np.zeros(self.SHAPE, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.table.sum())

    def update(self, records) -> "TrialCounts":
        batch = as_batch(records)
        if len(batch) == 0:
            return self
        for out in (batch.a_out, batch.b_out):
            if np.any((out < -1) | (out > 1)):
                raise ValueError("outcome outside {-1, 0, +1}")
        idx = (
            (batch.a_primed.astype(np.int64) * 3 + (batch.a_out.astype(np.int64) + 1)) * 2
            + batch.b_primed.astype(np.int64)
        ) * 3 + (batch.b_out.astype(np.int64) + 1)
        self.table += np.bincount(idx, minlength=36).reshape(self.SHAPE)
        return self

    def merge(self, other: "TrialCounts") -> "TrialCounts":
        out = TrialCounts()
        out.table = self.table + other.table
        return out

    @classmethod
    def of(cls, records) -> "TrialCounts":
        return cls().update(records)

    def has_zero_outcomes(self) -> bool:
        return bool(self.table[:, 1].sum() or self.table[:, :, :, 1].sum())

    def pair_moments(self, pair) -> tuple[int, int, int]:
        """(count, sum of products, sum of squared products) for one setting pair."""
        a_lab, b_lab = pair
        sub = self.table[int(a_lab.primed), :, int(b_lab.primed), :]
        prod = np.outer([-1, 0, 1], [-1, 0, 1])
        return int(sub.sum()), int((sub * prod).sum()), int((sub * prod * prod).sum())

    def label_moments(self, label: SettingLabel) -> tuple[int, int, int]:
        if label.station is Station.ALICE:
            sub = self.table[int(label.primed)].sum(axis=(1, 2))
        else:
            sub = self.table[:, :, int(label.primed), :].sum(axis=(0, 1))
        vals = np.array([-1, 0, 1])
        return int(sub.sum()), int((sub * vals).sum()), int((sub * vals * vals).sum())


def mean_se(n: int, s: int, s2: int) -> tuple[float, float]:
    """Mean and standard error (sample SD / sqrt(n)) from count, sum and sum of squares.

    For n < 2 the SD is unknown; the bound 1 (values lie in [-1, 1]) is used.
    """
    mean = s / n
    if n < 2:
        return mean, 1.0 / math.sqrt(n)
    var = max(s2 - n * mean * mean, 0.0) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class PairStat:
    n: int
    corr: float
    se: float


@dataclass(frozen=True)
class CorrelationTable:
    pairs: dict  # pair name -> PairStat, in AB, AB', A'B, A'B' order

    def __getitem__(self, name: str) -> PairStat:
        return self.pairs[name]

    def rows(self):
        for name in PAIR_NAMES:
            st = self.pairs[name]
            yield name, st.n, st.corr, st.se


@dataclass(frozen=True)
class ChshResult:
    bell: float
    se: float
    table: CorrelationTable
    mode: CollectionMode
    n_trials: int = 0

    def as_dict(self) -> dict:
        return {
            "pairs": [
                {"pair": name, "n": n, "corr": corr, "se": se} for name, n, corr, se in self.table.rows()
            ],
            "bell": self.bell,
            "se": self.se,
            "mode": self.mode.value,
        }

    def within(self, target: float, band: float = BAND) -> bool:
        return abs(self.bell - target) <= band * self.se


def estimate(records, mode: CollectionMode = CollectionMode.SWITCH) -> ChshResult:
    """CHSH estimate from trial records (or a :class:`TrialCounts`).

    SWITCH and EXTENDED: conditional mean product per setting pair; every pair
    must occur. ZERO: unconditional means over all trials, the non-clicking
    drawer contributing 0. The Bell SE is the quadrature sum of the pair SEs.
    """
    counts = records if isinstance(records, TrialCounts) else TrialCounts.of(records)
    mode = CollectionMode(mode)
    total = counts.n
    if mode is not CollectionMode.ZERO and counts.has_zero_outcomes():
        raise ValueError(f"outcome 0 is only meaningful in {CollectionMode.ZERO.value} mode")
    stats = {}
    for pair, name in zip(PAIRS, PAIR_NAMES):
        n, s, s2 = counts.pair_moments(pair)
        if mode is CollectionMode.ZERO:
            if total == 0:
                raise EstimationError("no trials")
            corr, se = mean_se(total, s, s2)
            stats[name] = PairStat(total, corr, se)
        else:
            if n == 0:
                raise EstimationError(f"setting pair {name} has no trials")
            corr, se = mean_se(n, s, s2)
            stats[name] = PairStat(n, corr, se)
    bell = sum(sign * stats[name].corr for sign, name in zip(PAIR_SIGNS, PAIR_NAMES))
    se = math.sqrt(sum(stats[name].se ** 2 for name in PAIR_NAMES))
    return ChshResult(bell, se, CorrelationTable(stats), mode, total)


@dataclass(frozen=True)
class LabelMean:
    label: str
    n: int
    mean: float
    se: float


def one_arm_averages(records) -> dict:
    """Conditional mean outcome for each of A, A', B, B'."""
    counts = records if isinstance(records, TrialCounts) else TrialCounts.of(records)
    out = {}
    for lab in ALL_LABELS:
        n, s, s2 = counts.label_moments(lab)
        if n == 0:
            raise EstimationError(f"label {lab} never measured")
        mean, se = mean_se(n, s, s2)
        out[str(lab)] = LabelMean(str(lab), n, mean, se)
    return out


@dataclass(frozen=True)
class EfficiencyReport:
    trials: int
    coincidences: int
    singles_alice: int
    singles_bob: int

    @property
    def fraction(self) -> Optional[float]:
        return self.coincidences / self.trials if self.trials else None

    def describe(self) -> str:
        if not self.trials:
            return "no trials"
        return (
            f"coincidence fraction {self.fraction:.6f} "
            f"({self.coincidences}/{self.trials}), singles A={self.singles_alice} B={self.singles_bob}"
        )


def efficiency_audit(events: Iterable, singles: Iterable[Single] = ()) -> EfficiencyReport:
    """Coincidence fraction over trials; ``events`` may mix records and :class:`Single`."""
    if isinstance(events, TrialBatch):
        coincidences, extra = len(events), []
    elif isinstance(events, TrialCounts):
        coincidences, extra = events.n, []
    else:
        coincidences, extra = 0, []
        for ev in events:
            if isinstance(ev, Single):
                extra.append(ev)
            else:
                coincidences += 1
    extra.extend(singles)
    sa = sum(1 for s in extra if s.label.station is Station.ALICE)
    sb = len(extra) - sa
    return EfficiencyReport(coincidences + len(extra), coincidences, sa, sb)


@dataclass(frozen=True)
class SignalingRow:
    station: str
    category: str  # e.g. "A'=-1"
    freq_given: tuple  # (given partner unprimed, given partner primed)
    diff: float
    se: float

    @property
    def ok(self) -> bool:
        return abs(self.diff) <= BAND * self.se


@dataclass(frozen=True)
class NoSignalingReport:
    rows: tuple

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    def station_passed(self, station: str) -> bool:
        return all(r.ok for r in self.rows if r.station == station)

    @property
    def max_z(self) -> float:
        z = 0.0
        for r in self.rows:
            if r.se > 0:
                z = max(z, abs(r.diff) / r.se)
            elif r.diff != 0:
                return math.inf
        return z


def no_signaling_check(records) -> NoSignalingReport:
    """Compare each station's (label, outcome) marginal across the partner's two labels."""
    counts = records if isinstance(records, TrialCounts) else TrialCounts.of(records)
    t = counts.table
    for pair, name in zip(PAIRS, PAIR_NAMES):
        if counts.pair_moments(pair)[0] == 0:
            raise EstimationError(f"setting pair {name} has no trials")
    rows = []
    # Alice's (primed, outcome) marginal given Bob primed = 0 / 1, and vice versa.
    alice = t.sum(axis=3).transpose(2, 0, 1)  # [b_primed, a_primed, a_out]
    bob = t.sum(axis=1)  # [a_primed, b_primed, b_out]
    for station, joint, names in (("A", alice, ("A", "A'")), ("B", bob, ("B", "B'"))):
        n0 = int(joint[0].sum())
        n1 = int(joint[1].sum())
        for primed in (0, 1):
            for k, out in enumerate((-1, 0, 1)):
                c0, c1 = int(joint[0, primed, k]), int(joint[1, primed, k])
                if out == 0 and c0 == 0 and c1 == 0:
                    continue
                f0, f1 = c0 / n0, c1 / n1
                se = math.sqrt(f0 * (1 - f0) / n0 + f1 * (1 - f1) / n1)
                rows.append(
                    SignalingRow(station, f"{names[primed]}={out:+d}", (f0, f1), f1 - f0, se)
                )
    return NoSignalingReport(tuple(rows))
