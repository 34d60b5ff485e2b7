import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvbell import chessboard as cb
from hvbell.core import A, A_PRIME, B, B_PRIME, CollectionMode, SwitchPolicy, TrialBatch, new_trial_record
from hvbell.rng import Seeds
from hvbell.stats import (
    EstimationError,
    Single,
    TrialCounts,
    efficiency_audit,
    estimate,
    mean_se,
    no_signaling_check,
    one_arm_averages,
)

LABEL_PAIRS = [(A, B), (A, B_PRIME), (A_PRIME, B), (A_PRIME, B_PRIME)]


def fixed_records():
    # two trials per pair with known products
    recs = []
    table = {
        (A, B): [(1, 1), (1, 1)],  # +1
        (A, B_PRIME): [(1, -1), (1, 1)],  # 0
        (A_PRIME, B): [(-1, -1), (-1, -1)],  # +1
        (A_PRIME, B_PRIME): [(1, -1), (-1, 1)],  # -1
    }
    k = 0
    for (la, lb), outs in table.items():
        for oa, ob in outs:
            recs.append(new_trial_record(k, la, oa, lb, ob))
            k += 1
    return recs


record_strategy = st.tuples(
    st.sampled_from(LABEL_PAIRS), st.sampled_from([-1, 1]), st.sampled_from([-1, 1])
)


def build(rows):
    return [new_trial_record(k, la, oa, lb, ob) for k, ((la, lb), oa, ob) in enumerate(rows)]


class TestEstimate:
    def test_hand_computed(self):
        res = estimate(fixed_records())
        corr = {name: c for name, _, c, _ in res.table.rows()}
        assert corr == {"AB": 1.0, "AB'": 0.0, "A'B": 1.0, "A'B'": -1.0}
        assert res.bell == 3.0
        assert res.n_trials == 8
        # SE: zero-variance pairs contribute 0, the AB' pair has SD sqrt(2) over sqrt(2)
        assert res.se == pytest.approx(1.0)

    def test_missing_pair_is_an_error(self):
        recs = [r for r in fixed_records() if (r.alice_label, r.bob_label) != (A, B)]
        with pytest.raises(EstimationError, match="AB"):
            estimate(recs)

    def test_zero_outcome_only_in_zero_mode(self):
        recs = fixed_records() + [new_trial_record(8, A, 0, B, 1)]
        with pytest.raises(ValueError):
            estimate(recs)
        assert estimate(recs, CollectionMode.ZERO).n_trials == 9

    def test_zero_mode_hand_computed(self):
        # four trials, one per pair; each pair's unconditional mean is product/4
        recs = [
            new_trial_record(0, A, 1, B, 1),
            new_trial_record(1, A, 1, B_PRIME, 1),
            new_trial_record(2, A_PRIME, 1, B, 1),
            new_trial_record(3, A_PRIME, 1, B_PRIME, -1),
        ]
        res = estimate(recs, CollectionMode.ZERO)
        assert res.bell == pytest.approx(1.0)
        assert all(st_.n == 4 for st_ in res.table.pairs.values())

    def test_accepts_counts_and_batch(self):
        recs = fixed_records()
        a = estimate(recs)
        assert estimate(TrialCounts.of(recs)) == a
        assert estimate(TrialBatch.from_records(recs)) == a

    @settings(max_examples=60)
    @given(st.lists(record_strategy, min_size=8, max_size=60), st.randoms(use_true_random=False))
    def test_order_invariant(self, rows, rnd):
        rows = rows + [(p, 1, 1) for p in LABEL_PAIRS]
        shuffled = list(rows)
        rnd.shuffle(shuffled)
        a, b = estimate(build(rows)), estimate(build(shuffled))
        assert a.bell == pytest.approx(b.bell, abs=1e-12)
        assert a.se == pytest.approx(b.se, abs=1e-12)

    @settings(max_examples=60)
    @given(st.lists(record_strategy, min_size=1, max_size=60), st.lists(record_strategy, max_size=60))
    def test_merge_is_addition(self, xs, ys):
        merged = TrialCounts.of(build(xs)).merge(TrialCounts.of(build(ys)))
        assert np.array_equal(merged.table, TrialCounts.of(build(xs + ys)).table)
        assert merged.n == len(xs) + len(ys)

    @settings(max_examples=60)
    @given(st.lists(record_strategy, min_size=4, max_size=80))
    def test_bell_bounded_by_four(self, rows):
        rows = rows + [(p, 1, 1) for p in LABEL_PAIRS]
        res = estimate(build(rows))
        assert abs(res.bell) <= 4 + 1e-12
        assert res.se >= 0

    def test_mean_se(self):
        assert mean_se(1, 1, 1) == (1.0, 1.0)
        m, se = mean_se(4, 0, 4)
        assert m == 0 and se == pytest.approx(math.sqrt(4 / 3 / 4))

    def test_within(self, pattern, seeds):
        res = estimate(cb.simulate(pattern, SwitchPolicy(0.9, 0.9), 100_000, seeds))
        assert res.within(3.24)
        assert not res.within(2.0)
        d = res.as_dict()
        assert [p["pair"] for p in d["pairs"]] == ["AB", "AB'", "A'B", "A'B'"]
        assert d["mode"] == "switch"


class TestOneArm:
    def test_hand_computed(self):
        avg = one_arm_averages(fixed_records())
        assert avg["A"].mean == 1.0 and avg["A"].n == 4
        assert avg["A'"].mean == -0.5
        assert avg["B"].mean == 0.0
        assert avg["B'"].mean == 0.0

    def test_missing_label(self):
        with pytest.raises(EstimationError):
            one_arm_averages([new_trial_record(0, A, 1, B, 1)])

    def test_simulation_one_arm_near_zero(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(0.9, 0.9), 400_000, seeds)
        for lab, m in one_arm_averages(batch).items():
            assert abs(m.mean) <= 5 * m.se, lab


class TestEfficiency:
    def test_empty(self):
        rep = efficiency_audit([])
        assert rep.fraction is None
        assert rep.describe() == "no trials"

    def test_all_coincidences(self):
        rep = efficiency_audit(fixed_records())
        assert rep.fraction == 1.0
        assert rep.singles_alice == rep.singles_bob == 0

    def test_dropped_result_becomes_single(self):
        recs = fixed_records()
        dropped = recs.pop(3)
        rep = efficiency_audit(recs, [Single(dropped.trial_id, dropped.alice_label, dropped.alice_outcome)])
        assert rep.trials == 8 and rep.coincidences == 7
        assert rep.fraction == pytest.approx(7 / 8)
        assert (rep.singles_alice, rep.singles_bob) == (1, 0)
        assert "7/8" in rep.describe()

    def test_mixed_iterable(self):
        events = fixed_records()[:2] + [Single(9, B_PRIME, 1)]
        rep = efficiency_audit(events)
        assert (rep.trials, rep.coincidences, rep.singles_bob) == (3, 2, 1)


class TestNoSignaling:
    def test_simulation_passes(self, pattern):
        for k, (pa, pb) in enumerate([(0.5, 0.5), (0.9, 0.9), (0.2, 0.7)]):
            batch = cb.simulate(pattern, SwitchPolicy(pa, pb), 200_000, Seeds.derive(3, k))
            rep = no_signaling_check(batch)
            assert rep.passed, rep.max_z
            assert len(rep.rows) == 8

    def test_signaling_fixture_fails(self):
        # Alice's outcome copies Bob's label: her marginal depends on his choice
        rng = np.random.default_rng(0)
        n = 4000
        recs = []
        for k in range(n):
            la = A_PRIME if rng.random() < 0.5 else A
            lb = B_PRIME if rng.random() < 0.5 else B
            recs.append(new_trial_record(k, la, 1 if lb.primed else -1, lb, int(rng.choice([-1, 1]))))
        rep = no_signaling_check(recs)
        assert not rep.passed
        assert not rep.station_passed("A")
        assert rep.station_passed("B")
        assert rep.max_z > 5

    def test_requires_all_pairs(self):
        with pytest.raises(EstimationError):
            no_signaling_check([new_trial_record(0, A, 1, B, 1)])
