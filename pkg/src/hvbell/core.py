"""Shared value types for hidden-variable experiments and their trial data."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, TextIO

import numpy as np


class Station(str, enum.Enum):
    ALICE = "A"
    BOB = "B"


class CollectionMode(str, enum.Enum):
    SWITCH = "switch"
    EXTENDED = "extended"
    ZERO = "zero"


@dataclass(frozen=True)
class SettingLabel:
    station: Station
    primed: bool = False

    def __str__(self) -> str:
        return self.station.value + ("'" if self.primed else "")

    @classmethod
    def parse(cls, text: str) -> "SettingLabel":
        try:
            return _LABELS[text]
        except KeyError:
            raise ValueError(f"unknown setting label {text!r}") from None

    def flipped(self) -> "SettingLabel":
        return SettingLabel(self.station, not self.primed)


A = SettingLabel(Station.ALICE, False)
A_PRIME = SettingLabel(Station.ALICE, True)
B = SettingLabel(Station.BOB, False)
B_PRIME = SettingLabel(Station.BOB, True)
_LABELS = {str(lab): lab for lab in (A, A_PRIME, B, B_PRIME)}
ALL_LABELS = (A, A_PRIME, B, B_PRIME)

SWITCH_OUTCOMES = frozenset((-1, 1))
ZERO_OUTCOMES = frozenset((-1, 0, 1))


@dataclass(frozen=True)
class HiddenVariable:
    """Fall point ``(a, b)`` of the pair on the ``[0, 4] x [0, 4]`` floor."""

    a: float
    b: float

    def __post_init__(self):
        for name, x in (("a", self.a), ("b", self.b)):
            if not 0.0 <= x <= 4.0:
                raise ValueError(f"coordinate {name}={x} outside [0, 4]")

    @property
    def cell(self) -> tuple[int, int]:
        return cell_index(self.a), cell_index(self.b)


def cell_index(x: float) -> int:
    """Unit-cell index of a coordinate, with cells ``[0,1], (1,2], (2,3], (3,4]``."""
    if not 0.0 <= x <= 4.0:
        raise ValueError(f"coordinate {x} outside [0, 4]")
    if x <= 1.0:
        return 0
    return math.ceil(x) - 1


@dataclass(frozen=True)
class SwitchPolicy:
    p_a: float
    p_b: float

    def __post_init__(self):
        for name, p in (("p_a", self.p_a), ("p_b", self.p_b)):
            if not 0 <= p <= 1:
                raise ValueError(f"{name}={p} is not a probability")


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    alice_label: SettingLabel
    alice_outcome: int
    bob_label: SettingLabel
    bob_outcome: int
    lam: Optional[HiddenVariable] = None

    def __post_init__(self):
        if self.trial_id < 0:
            raise ValueError("trial_id must be non-negative")
        if self.alice_label.station is not Station.ALICE:
            raise ValueError(f"alice_label {self.alice_label} belongs to Bob")
        if self.bob_label.station is not Station.BOB:
            raise ValueError(f"bob_label {self.bob_label} belongs to Alice")
        for out in (self.alice_outcome, self.bob_outcome):
            if out not in ZERO_OUTCOMES:
                raise ValueError(f"outcome {out} not in {{-1, 0, +1}}")

    def to_json(self, with_lambda: bool = False) -> str:
        return format_record(
            self.trial_id,
            str(self.alice_label),
            self.alice_outcome,
            str(self.bob_label),
            self.bob_outcome,
            (self.lam.a, self.lam.b) if with_lambda and self.lam is not None else None,
        )

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        obj = json.loads(line)
        lam = obj.get("lambda")
        return cls(
            trial_id=int(obj["trial"]),
            alice_label=SettingLabel.parse(obj["a_label"]),
            alice_outcome=int(obj["a_out"]),
            bob_label=SettingLabel.parse(obj["b_label"]),
            bob_outcome=int(obj["b_out"]),
            lam=HiddenVariable(*lam) if lam is not None else None,
        )


def new_trial_record(trial_id, a_label, a_out, b_label, b_out) -> TrialRecord:
    return TrialRecord(trial_id, a_label, a_out, b_label, b_out)


def format_record(trial, a_label, a_out, b_label, b_out, lam=None) -> str:
    # Hand-rolled to keep byte-stable output and speed on 10^6 lines; parses as JSON.
    line = (
        f'{{"trial": {trial}, "a_label": "{a_label}", "a_out": {a_out}, '
        f'"b_label": "{b_label}", "b_out": {b_out}'
    )
    if lam is not None:
        line += f', "lambda": [{float(lam[0])!r}, {float(lam[1])!r}]'
    return line + "}"


@dataclass
class TrialBatch:
    """Columnar block of trial records.

    ``a_primed``/``b_primed`` are boolean arrays, outcomes are int8 arrays.
    Simulations produce these directly so that 10^6 trials never materialize
    as Python objects; iterating yields ordinary :class:`TrialRecord` values.
    """

    trial: np.ndarray
    a_primed: np.ndarray
    a_out: np.ndarray
    b_primed: np.ndarray
    b_out: np.ndarray
    lam: Optional[np.ndarray] = None  # shape (n, 2)

    def __len__(self) -> int:
        return len(self.trial)

    def __iter__(self) -> Iterator[TrialRecord]:
        for k in range(len(self)):
            yield self.record(k)

    def record(self, k: int) -> TrialRecord:
        lam = None
        if self.lam is not None:
            lam = HiddenVariable(float(self.lam[k, 0]), float(self.lam[k, 1]))
        return TrialRecord(
            int(self.trial[k]),
            A_PRIME if self.a_primed[k] else A,
            int(self.a_out[k]),
            B_PRIME if self.b_primed[k] else B,
            int(self.b_out[k]),
            lam,
        )

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "TrialBatch":
        recs = list(records)
        lam = None
        if recs and all(r.lam is not None for r in recs):
            lam = np.array([(r.lam.a, r.lam.b) for r in recs], dtype=float)
        return cls(
            trial=np.array([r.trial_id for r in recs], dtype=np.int64),
            a_primed=np.array([r.alice_label.primed for r in recs], dtype=bool),
            a_out=np.array([r.alice_outcome for r in recs], dtype=np.int8),
            b_primed=np.array([r.bob_label.primed for r in recs], dtype=bool),
            b_out=np.array([r.bob_outcome for r in recs], dtype=np.int8),
            lam=lam,
        )

    def write(self, fh: TextIO, with_lambda: bool = False) -> None:
        labels_a = ("A", "A'")
        labels_b = ("B", "B'")
        lam = self.lam.tolist() if with_lambda and self.lam is not None else None
        cols = zip(
            self.trial.tolist(),
            self.a_primed.tolist(),
            self.a_out.tolist(),
            self.b_primed.tolist(),
            self.b_out.tolist(),
        )
        lines = []
        for k, (t, ap, ao, bp, bo) in enumerate(cols):
            lines.append(
                format_record(
                    t, labels_a[ap], ao, labels_b[bp], bo,
                    None if lam is None else lam[k],
                )
            )
            if len(lines) >= 65536:
                fh.write("\n".join(lines) + "\n")
                lines.clear()
        if lines:
            fh.write("\n".join(lines) + "\n")


def as_batch(records) -> TrialBatch:
    if isinstance(records, TrialBatch):
        return records
    return TrialBatch.from_records(records)


def write_records(records, fh: TextIO, with_lambda: bool = False) -> None:
    as_batch(records).write(fh, with_lambda=with_lambda)


def read_records(fh: TextIO) -> list[TrialRecord]:
    return [TrialRecord.from_json(line) for line in fh if line.strip()]
