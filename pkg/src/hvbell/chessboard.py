"""Billiard-ball chessboard experiment.

A pair falls through one of eight unit-square holes in the ``[0, 4]^2`` floor
at ``(a, b)``. Alice's ball ends in drawer A' when ``a <= 2`` and in A
otherwise; the box inside the drawer gives -1 on ``[0,1] u (2,3]`` and +1 on
``(1,2] u (3,4]``. Bob is the mirror image on ``b``. Either station may
exchange its two drawers (with probability ``p_a`` / ``p_b``) without changing
the box, i.e. the sign is kept and only the label moves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Iterator

import numpy as np

from .core import (
    A,
    A_PRIME,
    B,
    B_PRIME,
    CollectionMode,
    HiddenVariable,
    SettingLabel,
    Station,
    SwitchPolicy,
    TrialBatch,
    TrialRecord,
    cell_index,
)
from .rng import LambdaStreams, Seeds, stream

PAIRS = ((A, B), (A, B_PRIME), (A_PRIME, B), (A_PRIME, B_PRIME))
PAIR_NAMES = ("AB", "AB'", "A'B", "A'B'")
PAIR_SIGNS = (1, 1, 1, -1)

QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))  # (a > 2, b > 2)
QUADRANT_SIGN = {(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): -1}


class PatternError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid hole pattern: " + "; ".join(self.violations))


class ConditioningError(ValueError):
    """A setting pair has zero probability, so its conditional mean is undefined."""


def sign(i: int) -> int:
    """Box sign of unit cell ``i`` along either axis."""
    return 1 if i % 2 == 1 else -1


@dataclass(frozen=True)
class HolePattern:
    cells: frozenset = field(default_factory=frozenset)

    def __init__(self, cells: Iterable[tuple[int, int]]):
        object.__setattr__(self, "cells", frozenset((int(i), int(j)) for i, j in cells))

    def sorted_cells(self) -> list[tuple[int, int]]:
        return sorted(self.cells)

    def to_text(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.sorted_cells())


@dataclass
class PatternReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def canonical_pattern() -> HolePattern:
    return HolePattern([(0, 0), (1, 1), (0, 2), (1, 3), (2, 0), (3, 1), (2, 3), (3, 2)])


def validate_pattern(p: HolePattern) -> PatternReport:
    bad = []
    off_board = [c for c in p.cells if not (0 <= c[0] <= 3 and 0 <= c[1] <= 3)]
    if off_board:
        bad.append(f"cells off the 4x4 board: {sorted(off_board)}")
    if len(p.cells) != 8:
        bad.append(f"pattern has {len(p.cells)} cells, need 8")
    for q in QUADRANTS:
        cells = sorted(c for c in p.cells if (c[0] >= 2, c[1] >= 2) == q)
        where = f"quadrant a{'>' if q[0] else '<'}2,b{'>' if q[1] else '<'}2"
        if len(cells) != 2:
            bad.append(f"{where} has {len(cells)} cells, need 2")
            continue
        products = {sign(i) * sign(j) for i, j in cells}
        if len(products) != 1:
            bad.append(f"{where}: product sign not constant over its cells")
        elif products.pop() != QUADRANT_SIGN[q]:
            bad.append(f"{where}: product sign must be {QUADRANT_SIGN[q]:+d}")
        if {sign(i) for i, _ in cells} != {-1, 1}:
            bad.append(f"{where}: Alice signs do not cancel")
        if {sign(j) for _, j in cells} != {-1, 1}:
            bad.append(f"{where}: Bob signs do not cancel")
    return PatternReport(bad)


def require_valid(p: HolePattern) -> None:
    report = validate_pattern(p)
    if not report.ok:
        raise PatternError(report.violations)


def load_pattern(path) -> HolePattern:
    """Read a pattern file of ``i j`` lines; ``#`` starts a comment. Validated."""
    cells = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise PatternError([f"line {lineno}: expected 'i j', got {line!r}"])
            try:
                cells.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise PatternError([f"line {lineno}: non-integer cell {line!r}"]) from None
    if len(set(cells)) != len(cells):
        raise PatternError(["duplicate cells"])
    pattern = HolePattern(cells)
    require_valid(pattern)
    return pattern


def all_patterns() -> Iterator[HolePattern]:
    """Every 8-cell subset of the board (12870 of them), valid or not."""
    board = [(i, j) for i in range(4) for j in range(4)]
    for cells in itertools.combinations(board, 8):
        yield HolePattern(cells)


def random_valid_pattern(rng: np.random.Generator, max_tries: int = 1_000_000) -> HolePattern:
    """Uniformly random valid pattern, by rejection.

    Candidates take 2 random cells from each quadrant (every valid pattern
    has that shape), so acceptance is uniform over valid patterns.
    """
    for _ in range(max_tries):
        cells = []
        for qa, qb in QUADRANTS:
            block = [(2 * qa + di, 2 * qb + dj) for di in (0, 1) for dj in (0, 1)]
            cells.extend(block[k] for k in rng.choice(4, size=2, replace=False))
        p = HolePattern(cells)
        if validate_pattern(p).ok:
            return p
    raise RuntimeError("no valid pattern found")


# --- the outcome map -------------------------------------------------------


def _check_coord(x: float) -> None:
    if not 0.0 <= x <= 4.0:
        raise ValueError(f"coordinate {x} outside [0, 4]")


def base_label_alice(a: float) -> SettingLabel:
    _check_coord(a)
    return A_PRIME if a <= 2.0 else A


def base_label_bob(b: float) -> SettingLabel:
    _check_coord(b)
    return B_PRIME if b <= 2.0 else B


def outcome_alice(a: float) -> int:
    return sign(cell_index(a))


def outcome_bob(b: float) -> int:
    return sign(cell_index(b))


def apply_switch(label: SettingLabel, swapped: bool) -> SettingLabel:
    return label.flipped() if swapped else label


def station_result(station: Station, coord: float, swapped: bool) -> tuple[SettingLabel, int]:
    """What one station records for its own coordinate: (label, outcome)."""
    if station is Station.ALICE:
        return apply_switch(base_label_alice(coord), swapped), outcome_alice(coord)
    return apply_switch(base_label_bob(coord), swapped), outcome_bob(coord)


def run_trial(trial_id: int, lam: HiddenVariable, alice_swap: bool, bob_swap: bool) -> TrialRecord:
    a_label, a_out = station_result(Station.ALICE, lam.a, alice_swap)
    b_label, b_out = station_result(Station.BOB, lam.b, bob_swap)
    return TrialRecord(trial_id, a_label, a_out, b_label, b_out, lam)


# --- sampling ----------------------------------------------------------------


def _cells_from_uniform(cells: np.ndarray, u_cell, u_a, u_b) -> np.ndarray:
    idx = np.minimum((u_cell * len(cells)).astype(np.int64), len(cells) - 1)
    chosen = cells[idx]
    # 1 - u lies in (0, 1], so each coordinate lands in (i, i+1] and its
    # cell_index is i; cell 0 reaches 0 only through its closed end, never drawn.
    lam = np.empty((len(idx), 2))
    lam[:, 0] = chosen[:, 0] + (1.0 - u_a)
    lam[:, 1] = chosen[:, 1] + (1.0 - u_b)
    return lam


def sample_lambdas(streams: LambdaStreams, p: HolePattern, n: int) -> np.ndarray:
    """``n`` hidden variables as an ``(n, 2)`` array, uniform over the holes."""
    cells = np.array(p.sorted_cells(), dtype=np.int64)
    return _cells_from_uniform(cells, streams.cell.random(n), streams.a.random(n), streams.b.random(n))


def sample_lambda(streams: LambdaStreams, p: HolePattern) -> HiddenVariable:
    require_valid(p)
    a, b = sample_lambdas(streams, p, 1)[0]
    return HiddenVariable(float(a), float(b))


def coords_to_results(coords: np.ndarray, swaps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized station map: (primed flags, outcomes) for one axis."""
    primed = (coords <= 2.0) ^ swaps
    cell = np.where(coords <= 1.0, 0, np.ceil(coords).astype(np.int64) - 1)
    out = np.where(cell % 2 == 1, 1, -1).astype(np.int8)
    return primed, out


def simulate_chunks(
    pattern: HolePattern,
    policy: SwitchPolicy,
    n_trials: int,
    seeds: Seeds,
    mode: CollectionMode = CollectionMode.SWITCH,
    chunk: int = 1 << 18,
    keep_lambda: bool = False,
) -> Iterator[TrialBatch]:
    """Stream the simulation in blocks; concatenation is independent of ``chunk``.

    The hidden variable, Alice's switch draw and Bob's switch draw come from
    three separately seeded streams, one double per trial each.

    In ``EXTENDED`` mode the stray balls are redirected into the drawer the
    station selected: the label is the selected setting (primed with
    probability ``p``) and the outcome is the box sign over the whole floor.
    ``SWITCH`` and ``ZERO`` produce the same records; they differ only in how
    the estimator reads them.
    """
    require_valid(pattern)
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    lam_streams = LambdaStreams(seeds.source)
    alice_rng = stream(seeds.alice)
    bob_rng = stream(seeds.bob)
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        lam = sample_lambdas(lam_streams, pattern, n)
        a_swap = alice_rng.random(n) < policy.p_a
        b_swap = bob_rng.random(n) < policy.p_b
        a_primed, a_out = coords_to_results(lam[:, 0], a_swap)
        b_primed, b_out = coords_to_results(lam[:, 1], b_swap)
        if mode is CollectionMode.EXTENDED:
            a_primed, b_primed = a_swap, b_swap
        yield TrialBatch(
            trial=np.arange(done, done + n, dtype=np.int64),
            a_primed=a_primed,
            a_out=a_out,
            b_primed=b_primed,
            b_out=b_out,
            lam=lam if keep_lambda else None,
        )
        done += n


def simulate(
    pattern: HolePattern,
    policy: SwitchPolicy,
    n_trials: int,
    seeds: Seeds,
    mode: CollectionMode = CollectionMode.SWITCH,
    keep_lambda: bool = False,
) -> TrialBatch:
    blocks = list(simulate_chunks(pattern, policy, n_trials, seeds, mode, keep_lambda=keep_lambda))
    if len(blocks) == 1:
        return blocks[0]
    lam = np.concatenate([b.lam for b in blocks]) if keep_lambda else None
    return TrialBatch(
        trial=np.concatenate([b.trial for b in blocks]),
        a_primed=np.concatenate([b.a_primed for b in blocks]),
        a_out=np.concatenate([b.a_out for b in blocks]),
        b_primed=np.concatenate([b.b_primed for b in blocks]),
        b_out=np.concatenate([b.b_out for b in blocks]),
        lam=lam,
    )


# --- exact enumeration -----------------------------------------------------------


def as_fraction(p) -> Fraction:
    """Exact value of a probability; floats go through their shortest repr, so 0.1 is 1/10."""
    if isinstance(p, Fraction):
        return p
    if isinstance(p, (int, Rational)):
        return Fraction(p)
    if isinstance(p, str):
        return Fraction(p)
    return Fraction(repr(float(p)))


@dataclass(frozen=True)
class ExactResult:
    """Exact correlations for the four setting pairs, in the order AB, AB', A'B, A'B'."""

    correlations: tuple
    bell: Fraction
    mode: CollectionMode
    pair_probabilities: tuple = ()
    one_arm: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(zip(PAIR_NAMES, self.correlations))


def _bell(corrs) -> Fraction:
    return sum((s * c for s, c in zip(PAIR_SIGNS, corrs)), Fraction(0))


def _switch_weights(p_a: Fraction, p_b: Fraction):
    for sa in (False, True):
        for sb in (False, True):
            w = (p_a if sa else 1 - p_a) * (p_b if sb else 1 - p_b)
            yield sa, sb, w


def enumerate_switch(cells: Iterable[tuple[int, int]], p_a, p_b) -> ExactResult:
    """Conditional correlations by enumerating cells x swap combinations. No validation."""
    cells = sorted(set(cells))
    p_a, p_b = as_fraction(p_a), as_fraction(p_b)
    mass = Fraction(1, len(cells))
    weight = {pair: Fraction(0) for pair in PAIRS}
    moment = {pair: Fraction(0) for pair in PAIRS}
    label_w = {lab: Fraction(0) for lab in (A, A_PRIME, B, B_PRIME)}
    label_m = dict.fromkeys(label_w, Fraction(0))
    for i, j in cells:
        base_a = A_PRIME if i < 2 else A
        base_b = B_PRIME if j < 2 else B
        for sa, sb, w in _switch_weights(p_a, p_b):
            pair = (apply_switch(base_a, sa), apply_switch(base_b, sb))
            w = w * mass
            weight[pair] += w
            moment[pair] += w * sign(i) * sign(j)
            label_w[pair[0]] += w
            label_m[pair[0]] += w * sign(i)
            label_w[pair[1]] += w
            label_m[pair[1]] += w * sign(j)
    corrs = []
    for pair, name in zip(PAIRS, PAIR_NAMES):
        if weight[pair] == 0:
            raise ConditioningError(f"setting pair {name} has probability 0")
        corrs.append(moment[pair] / weight[pair])
    one_arm = {
        str(lab): (label_m[lab] / label_w[lab] if label_w[lab] else None) for lab in label_w
    }
    return ExactResult(
        tuple(corrs),
        _bell(corrs),
        CollectionMode.SWITCH,
        tuple(weight[p] for p in PAIRS),
        one_arm,
    )


def enumerate_extended(cells: Iterable[tuple[int, int]]) -> ExactResult:
    """Every variable extended to the whole support by its box sign. No validation."""
    cells = sorted(set(cells))
    mass = Fraction(1, len(cells))
    c = sum((mass * sign(i) * sign(j) for i, j in cells), Fraction(0))
    corrs = (c, c, c, c)
    return ExactResult(corrs, _bell(corrs), CollectionMode.EXTENDED)


def enumerate_zero(cells: Iterable[tuple[int, int]], p_a, p_b) -> ExactResult:
    """Unconditional means with 0 for the drawer that did not click. No validation."""
    cells = sorted(set(cells))
    p_a, p_b = as_fraction(p_a), as_fraction(p_b)
    mass = Fraction(1, len(cells))
    moment = {pair: Fraction(0) for pair in PAIRS}
    weight = dict.fromkeys(moment, Fraction(0))
    for i, j in cells:
        base_a = A_PRIME if i < 2 else A
        base_b = B_PRIME if j < 2 else B
        for sa, sb, w in _switch_weights(p_a, p_b):
            pair = (apply_switch(base_a, sa), apply_switch(base_b, sb))
            moment[pair] += w * mass * sign(i) * sign(j)
            weight[pair] += w * mass
    corrs = tuple(moment[p] for p in PAIRS)
    return ExactResult(corrs, _bell(corrs), CollectionMode.ZERO, tuple(weight[p] for p in PAIRS))


def chsh_exact(pattern: HolePattern, p_a, p_b) -> ExactResult:
    require_valid(pattern)
    return enumerate_switch(pattern.cells, p_a, p_b)


def chsh_extended_domain(pattern: HolePattern) -> ExactResult:
    require_valid(pattern)
    return enumerate_extended(pattern.cells)


def chsh_zero_extended(pattern: HolePattern, p_a, p_b) -> ExactResult:
    require_valid(pattern)
    return enumerate_zero(pattern.cells, p_a, p_b)


def chsh_for_mode(pattern: HolePattern, p_a, p_b, mode: CollectionMode) -> ExactResult:
    if mode is CollectionMode.SWITCH:
        return chsh_exact(pattern, p_a, p_b)
    if mode is CollectionMode.EXTENDED:
        return chsh_extended_domain(pattern)
    return chsh_zero_extended(pattern, p_a, p_b)


def predicted_correlations(p_a, p_b) -> tuple:
    """Closed-form conditional correlations for any valid pattern."""
    p_a, p_b = as_fraction(p_a), as_fraction(p_b)
    return (
        1 - 2 * (1 - p_a) * (1 - p_b),
        1 - 2 * (1 - p_a) * p_b,
        1 - 2 * p_a * (1 - p_b),
        1 - 2 * p_a * p_b,
    )
