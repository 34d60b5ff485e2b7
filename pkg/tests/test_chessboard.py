import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_switch

from hvbell import chessboard as cb
from hvbell.core import A, A_PRIME, B, B_PRIME, CollectionMode, HiddenVariable, SwitchPolicy
from hvbell.rng import LambdaStreams, Seeds
from hvbell.stats import estimate

CHI2_99_DF7 = 18.475306906582357  # scipy.stats.chi2.ppf(0.99, 7)
GRID = [Fraction(k, 10) for k in range(11)]
PARITY = cb.HolePattern((i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0)


class TestPattern:
    def test_canonical_cells(self, pattern):
        assert pattern.sorted_cells() == sorted(
            [(0, 0), (1, 1), (0, 2), (1, 3), (2, 0), (3, 1), (2, 3), (3, 2)]
        )
        assert len(pattern.cells) == 8
        for q in cb.QUADRANTS:
            assert sum(1 for c in pattern.cells if (c[0] >= 2, c[1] >= 2) == q) == 2

    def test_canonical_is_valid(self, pattern):
        assert cb.validate_pattern(pattern).ok

    def test_parity_chessboard_rejected(self):
        report = cb.validate_pattern(PARITY)
        assert not report.ok
        assert any("product sign must be -1" in v for v in report.violations)
        # all four quadrants have product sign +1, so the switch procedure gives 2, not 4 p_a p_b
        assert cb.enumerate_switch(PARITY.cells, 1, 1).bell == 2
        _, bell, _ = brute_force_switch(PARITY.cells, 1, 1)
        assert bell == 2

    def test_seven_cells_rejected(self, pattern):
        seven = cb.HolePattern(pattern.sorted_cells()[:7])
        report = cb.validate_pattern(seven)
        assert any("7 cells" in v for v in report.violations)

    def test_invalid_pattern_raises_in_operations(self):
        with pytest.raises(cb.PatternError):
            cb.chsh_exact(PARITY, 1, 1)
        with pytest.raises(cb.PatternError):
            cb.chsh_extended_domain(PARITY)
        with pytest.raises(cb.PatternError):
            cb.sample_lambda(LambdaStreams(0), PARITY)
        with pytest.raises(cb.PatternError):
            cb.simulate(PARITY, SwitchPolicy(1, 1), 10, Seeds.from_master(0))

    def test_only_one_valid_pattern_exists(self, pattern):
        valid = [p for p in cb.all_patterns() if cb.validate_pattern(p).ok]
        assert valid == [pattern]

    def test_random_valid_pattern(self, pattern):
        rng = np.random.default_rng(5)
        assert cb.random_valid_pattern(rng) == pattern

    def test_pattern_file(self, tmp_path, pattern):
        f = tmp_path / "p.txt"
        f.write_text("# holes\n" + pattern.to_text())
        assert cb.load_pattern(f) == pattern
        f.write_text("0 0\n1 1\n")
        with pytest.raises(cb.PatternError):
            cb.load_pattern(f)
        f.write_text("0 x\n")
        with pytest.raises(cb.PatternError):
            cb.load_pattern(f)


class TestOutcomeMap:
    @pytest.mark.parametrize(
        "a,label,out",
        [(0.5, A_PRIME, -1), (3.5, A, 1), (2.0, A_PRIME, 1), (0.0, A_PRIME, -1), (1.0, A_PRIME, -1),
         (1.5, A_PRIME, 1), (2.5, A, -1), (3.0, A, -1), (4.0, A, 1)],
    )
    def test_alice(self, a, label, out):
        assert cb.base_label_alice(a) == label
        assert cb.outcome_alice(a) == out

    @pytest.mark.parametrize("b,label,out", [(0.5, B_PRIME, -1), (3.5, B, 1), (2.0, B_PRIME, 1), (2.5, B, -1)])
    def test_bob(self, b, label, out):
        assert cb.base_label_bob(b) == label
        assert cb.outcome_bob(b) == out

    @pytest.mark.parametrize("x", [-0.01, 4.01, math.inf])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            cb.base_label_alice(x)
        with pytest.raises(ValueError):
            cb.outcome_bob(x)

    def test_apply_switch(self):
        assert cb.apply_switch(A, True) == A_PRIME
        assert cb.apply_switch(A_PRIME, False) == A_PRIME
        assert cb.apply_switch(B_PRIME, True) == B

    @pytest.mark.parametrize(
        "lam,sa,sb,expected",
        [
            ((0.5, 0.5), False, False, (A_PRIME, -1, B_PRIME, -1)),
            ((0.5, 0.5), True, True, (A, -1, B, -1)),
            ((3.5, 2.5), False, False, (A, 1, B, -1)),
        ],
    )
    def test_run_trial(self, lam, sa, sb, expected):
        rec = cb.run_trial(0, HiddenVariable(*lam), sa, sb)
        assert (rec.alice_label, rec.alice_outcome, rec.bob_label, rec.bob_outcome) == expected

    @given(st.floats(0, 4), st.floats(0, 4), st.booleans(), st.booleans())
    def test_switch_never_changes_outcome(self, a, b, sa, sb):
        plain = cb.run_trial(0, HiddenVariable(a, b), False, False)
        moved = cb.run_trial(0, HiddenVariable(a, b), sa, sb)
        assert (plain.alice_outcome, plain.bob_outcome) == (moved.alice_outcome, moved.bob_outcome)
        assert moved.alice_label.primed == plain.alice_label.primed ^ sa

    @given(st.floats(0, 4), st.booleans())
    def test_vectorized_map_matches_scalar(self, x, swap):
        primed, out = cb.coords_to_results(np.array([x]), np.array([swap]))
        label = cb.apply_switch(cb.base_label_alice(x), swap)
        assert bool(primed[0]) == label.primed
        assert int(out[0]) == cb.outcome_alice(x)


class TestSampling:
    def test_cells_in_pattern(self, pattern):
        streams = LambdaStreams(1)
        for _ in range(200):
            assert cb.sample_lambda(streams, pattern).cell in pattern.cells

    def test_uniform_over_cells(self, pattern):
        n = 10**6
        lam = cb.sample_lambdas(LambdaStreams(11), pattern, n)
        cells = [(cb.cell_index(a), cb.cell_index(b)) for a, b in lam[:2000]]
        assert set(cells) <= pattern.cells
        idx = np.minimum(np.ceil(lam) - 1, 3).clip(0).astype(int)
        keys = idx[:, 0] * 4 + idx[:, 1]
        counts = np.array([np.sum(keys == i * 4 + j) for i, j in pattern.sorted_cells()])
        assert counts.sum() == n
        chi2 = float(((counts - n / 8) ** 2 / (n / 8)).sum())
        assert chi2 < CHI2_99_DF7

    def test_uniform_within_cells(self, pattern):
        n = 10**6
        lam = cb.sample_lambdas(LambdaStreams(12), pattern, n)
        idx = (np.ceil(lam) - 1).clip(0).astype(int)
        for i, j in pattern.sorted_cells():
            sel = (idx[:, 0] == i) & (idx[:, 1] == j)
            for axis, centre in ((0, i + 0.5), (1, j + 0.5)):
                x = lam[sel, axis]
                se = x.std(ddof=1) / math.sqrt(len(x))
                assert abs(x.mean() - centre) <= 5 * se

    def test_chunking_does_not_change_stream(self, pattern, seeds):
        a = cb.simulate(pattern, SwitchPolicy(0.3, 0.6), 5000, seeds, keep_lambda=True)
        chunks = list(cb.simulate_chunks(pattern, SwitchPolicy(0.3, 0.6), 5000, seeds, chunk=777, keep_lambda=True))
        assert np.array_equal(a.lam, np.concatenate([c.lam for c in chunks]))
        assert np.array_equal(a.a_primed, np.concatenate([c.a_primed for c in chunks]))


class TestSimulate:
    def test_policy_one_flips_every_label(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(1, 1), 2000, seeds, keep_lambda=True)
        base_a = batch.lam[:, 0] <= 2.0
        base_b = batch.lam[:, 1] <= 2.0
        assert np.all(batch.a_primed == ~base_a)
        assert np.all(batch.b_primed == ~base_b)

    def test_policy_zero_keeps_base_labels(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(0, 0), 2000, seeds, keep_lambda=True)
        assert np.all(batch.a_primed == (batch.lam[:, 0] <= 2.0))
        assert np.all(batch.b_primed == (batch.lam[:, 1] <= 2.0))

    def test_records_agree_with_scalar_map(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(0.4, 0.7), 300, seeds, keep_lambda=True)
        for rec in batch:
            # recover the swap decision from the label and check the scalar map agrees
            sa = rec.alice_label.primed != (rec.lam.a <= 2.0)
            sb = rec.bob_label.primed != (rec.lam.b <= 2.0)
            again = cb.run_trial(rec.trial_id, rec.lam, sa, sb)
            assert again == rec

    def test_label_pairs_quarter_each(self, pattern, seeds):
        n = 10**6
        batch = cb.simulate(pattern, SwitchPolicy(0.5, 0.5), n, seeds)
        keys = batch.a_primed.astype(int) * 2 + batch.b_primed.astype(int)
        se = math.sqrt(0.25 * 0.75 / n)
        for k in range(4):
            assert abs(np.mean(keys == k) - 0.25) <= 5 * se

    def test_complementarity_one_label_per_station(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(0.5, 0.5), 1000, seeds)
        assert len(batch.a_primed) == len(batch.b_primed) == len(batch) == 1000
        assert list(batch.trial) == list(range(1000))

    def test_determinism(self, pattern, seeds, tmp_path):
        out = []
        for k in range(2):
            b = cb.simulate(pattern, SwitchPolicy(0.9, 0.9), 10_000, seeds, keep_lambda=True)
            path = tmp_path / f"{k}.jsonl"
            with open(path, "w") as fh:
                b.write(fh, with_lambda=True)
            out.append(path.read_bytes())
        assert out[0] == out[1]

    def test_rejects_zero_trials(self, pattern, seeds):
        with pytest.raises(ValueError):
            cb.simulate(pattern, SwitchPolicy(1, 1), 0, seeds)


class TestExact:
    def test_perfect_correlations(self, pattern):
        res = cb.chsh_exact(pattern, 1, 1)
        assert res.correlations == (1, 1, 1, -1)
        assert res.bell == 4

    def test_no_switching(self, pattern):
        assert cb.chsh_exact(pattern, 0, 0).bell == 0

    def test_point_values(self, pattern):
        assert cb.chsh_exact(pattern, 0.9, 0.9).bell == Fraction(324, 100)
        assert cb.chsh_exact(pattern, 0.5, 1).bell == 2

    @pytest.mark.parametrize("pa", GRID[::2])
    @pytest.mark.parametrize("pb", GRID[::2])
    def test_against_brute_force(self, pattern, pa, pb):
        corr, bell, arms = brute_force_switch(pattern.cells, pa, pb)
        res = cb.chsh_exact(pattern, pa, pb)
        assert res.as_dict() == corr
        assert res.bell == bell
        assert res.one_arm == arms

    @pytest.mark.parametrize("pa", GRID)
    def test_closed_form_correlations(self, pattern, pa):
        for pb in GRID:
            res = cb.chsh_exact(pattern, pa, pb)
            assert res.correlations == cb.predicted_correlations(pa, pb)
            assert res.bell == 4 * pa * pb
            assert res.pair_probabilities == (Fraction(1, 4),) * 4

    def test_one_arm_averages_vanish(self, pattern):
        for pa in GRID:
            for pb in GRID:
                assert set(cb.chsh_exact(pattern, pa, pb).one_arm.values()) == {0}

    def test_float_inputs_read_as_decimals(self, pattern):
        assert cb.chsh_exact(pattern, 0.1, 0.3).bell == Fraction(12, 100)

    def test_zero_probability_pair_is_an_error(self):
        # only drawer A' cells: pairs involving A are impossible without switching
        cells = [(0, 0), (1, 1), (0, 2), (1, 3)]
        with pytest.raises(cb.ConditioningError):
            cb.enumerate_switch(cells, 0, 0)


class TestOtherProcedures:
    def test_extended_canonical(self, pattern):
        res = cb.chsh_extended_domain(pattern)
        assert res.correlations == (Fraction(1, 2),) * 4
        assert res.bell == 1

    def test_extended_all_positive_quadrants(self):
        assert cb.enumerate_extended(PARITY.cells).bell == 2

    def test_extended_bounded_for_every_subset(self):
        worst = max(abs(cb.enumerate_extended(p.cells).bell) for p in cb.all_patterns())
        assert worst == 2

    @pytest.mark.parametrize("pa,pb,bell", [(1, 1, 1), (0, 0, 0), (Fraction(9, 10), Fraction(9, 10), Fraction(81, 100))])
    def test_zero_extended_values(self, pattern, pa, pb, bell):
        assert cb.chsh_zero_extended(pattern, pa, pb).bell == bell

    def test_zero_extended_is_quarter_of_conditional(self, pattern):
        for pa in GRID:
            for pb in GRID:
                z = cb.chsh_zero_extended(pattern, pa, pb)
                s = cb.chsh_exact(pattern, pa, pb)
                assert z.correlations == tuple(c / 4 for c in s.correlations)
                assert z.bell == pa * pb
                assert abs(z.bell) <= 2

    @settings(max_examples=50, deadline=None)
    @given(st.fractions(0, 1), st.fractions(0, 1))
    def test_bell_identity_property(self, pa, pb):
        p = cb.canonical_pattern()
        assert cb.chsh_exact(p, pa, pb).bell == 4 * pa * pb
        assert cb.chsh_zero_extended(p, pa, pb).bell == pa * pb


class TestMonteCarloAgreement:
    @pytest.mark.parametrize("pa", [0, 0.3, 0.5, 0.8, 1])
    @pytest.mark.parametrize("pb", [0, 0.4, 1])
    def test_estimate_matches_exact(self, pattern, pa, pb):
        seeds = Seeds.derive(77, int(pa * 10), int(pb * 10))
        batch = cb.simulate(pattern, SwitchPolicy(pa, pb), 200_000, seeds)
        est = estimate(batch)
        exact = cb.chsh_exact(pattern, pa, pb)
        assert abs(est.bell - float(exact.bell)) <= 5 * est.se or est.se == 0 and est.bell == float(exact.bell)
        for name, c in exact.as_dict().items():
            st_ = est.table[name]
            assert abs(st_.corr - float(c)) <= 5 * st_.se + 1e-12

    def test_extended_simulation_matches_exact(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(0.5, 0.5), 400_000, seeds, CollectionMode.EXTENDED)
        est = estimate(batch, CollectionMode.EXTENDED)
        assert abs(est.bell - 1.0) <= 5 * est.se
        assert abs(est.bell) <= 2 + 5 * est.se

    def test_zero_mode_estimate_matches_exact(self, pattern, seeds):
        batch = cb.simulate(pattern, SwitchPolicy(0.9, 0.9), 400_000, seeds)
        est = estimate(batch, CollectionMode.ZERO)
        assert abs(est.bell - 0.81) <= 5 * est.se
