import math

import numpy as np
import pytest

from oracles import waitk_schedule_ref
from simtpol import (
    MatrixPolicy,
    SimulationLimits,
    SimulationResult,
    SyntheticOracleModel,
    WaitkPolicy,
    divergence_matrix,
    full_sentence_nll,
    replay_path_nll,
    simulate,
    threshold_path,
)
from simtpol.corpus import CONTENT_BASE_ID, COPY_ID, EOS_ID, SWAP_ID
from simtpol.simulator import (
    SimulationLogRow,
    check_schedule,
    load_simulation_log,
    save_simulation_log,
)
from stubs import AlwaysEosModel, ConstantPolicy, NeverEosModel, ScriptedModel, StubPolicy


def pick(pairs, mode_id, count=1):
    chosen = [p for p in pairs if p.source[0] == mode_id]
    assert len(chosen) >= count
    return chosen[:count]


class TestWaitkRuns:
    def test_path_follows_schedule(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = int(rng.integers(1, 12))
            t_len = int(rng.integers(1, 2 * n + 2))
            k = int(rng.integers(1, n + 4))
            script = tuple(int(x) for x in rng.integers(4, 12, size=t_len - 1))
            source = tuple(int(x) for x in rng.integers(4, 12, size=n))
            result = simulate(
                ScriptedModel(script, 12),
                WaitkPolicy(k),
                source,
                SimulationLimits(threshold=0.9),
            )
            expected = waitk_schedule_ref(k, n, t_len)
            # the terminator is only believed once the whole source is read,
            # so the final consume count is always n
            expected[-1] = n
            assert list(result.path) == expected
            assert result.hypothesis == script + (EOS_ID,)
            assert not result.truncated

    def test_wait2_reproduces_copy_reference(self, small_task):
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        for pair in pick(pairs, COPY_ID, count=3):
            result = simulate(
                oracle,
                WaitkPolicy(2),
                pair.source,
                SimulationLimits(threshold=0.5),
                pair_id=pair.id,
            )
            assert result.hypothesis == pair.target
            assert result.path == tuple(
                waitk_schedule_ref(2, pair.n_source, pair.n_target)
            )
            assert result.pair_id == pair.id

    def test_wait3_reproduces_swap_reference(self, small_task):
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        for pair in pick(pairs, SWAP_ID, count=3):
            result = simulate(
                oracle, WaitkPolicy(3), pair.source, SimulationLimits(threshold=0.5)
            )
            assert result.hypothesis == pair.target


class TestThresholdRuns:
    def test_permissive_threshold_stays_on_first_token(self, small_task):
        """A threshold above every score writes immediately and never advances
        the cursor, so the source is consumed only when the model insists on
        the terminator."""
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        for pair in pick(pairs, COPY_ID, count=2):
            n = pair.n_source
            result = simulate(
                oracle,
                ConstantPolicy(0.0),
                pair.source,
                SimulationLimits(threshold=0.5),
                pair_id=pair.id,
            )
            assert result.path == (1,) * (n - 1) + (n,)
            assert len(result.hypothesis) == pair.n_target
            assert result.hypothesis[-1] == EOS_ID
            assert all(tok != EOS_ID for tok in result.hypothesis[:-1])
            assert not result.truncated

    def test_matches_offline_walk_except_terminator(self, small_task):
        """Against the oracle's own score grid the live loop and the offline
        walk take identical decisions; only the terminator row differs, where
        the live protocol keeps reading until the model may stop."""
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        for pair in pick(pairs, COPY_ID, count=2) + pick(pairs, SWAP_ID, count=2):
            matrix = divergence_matrix(oracle, pair, "cosine")
            for lam, r_max in ((0.05, None), (0.3, None), (0.2, 2), (0.9, 3)):
                walk = threshold_path(matrix, lam, r_max)
                result = simulate(
                    oracle,
                    MatrixPolicy(matrix),
                    pair.source,
                    SimulationLimits(threshold=lam, r_max=r_max),
                    pair_id=pair.id,
                )
                assert len(result.path) == len(walk) == pair.n_target
                assert list(result.path[:-1]) == walk[:-1]
                assert result.path[-1] == pair.n_source

    def test_read_cap_one_alternates(self):
        result = simulate(
            ScriptedModel((7, 8, 9), 12),
            ConstantPolicy(math.inf),
            (4, 5, 6, 7),
            SimulationLimits(threshold=0.5, r_max=1),
        )
        assert result.path == (1, 2, 3, 4)
        assert result.hypothesis == (7, 8, 9, EOS_ID)

    def test_decision_trace(self):
        policy = StubPolicy([0.5, 0.5, 0.1])
        result = simulate(
            ScriptedModel((7, 8), 12),
            policy,
            (4, 5, 6),
            SimulationLimits(threshold=0.2),
        )
        assert policy.calls == [(1, 0), (2, 0), (3, 0), (3, 1), (3, 2)]
        assert result.path == (3, 3, 3)
        assert result.hypothesis == (7, 8, EOS_ID)
        assert result.confidences == (0.1, 0.1, 0.1)

    def test_exhausted_source_forces_writes(self):
        result = simulate(
            ScriptedModel((7,), 12),
            StubPolicy([5.0]),
            (4, 5, 6),
            SimulationLimits(threshold=0.2),
        )
        assert result.path == (3, 3)
        assert result.hypothesis == (7, EOS_ID)


class TestTermination:
    def test_immediate_eos(self):
        result = simulate(
            AlwaysEosModel(12), ConstantPolicy(0.0), (4, 5, 6), SimulationLimits(threshold=0.5)
        )
        assert result.hypothesis == (EOS_ID,)
        assert result.path == (3,)
        assert not result.truncated

    def test_runaway_generation_is_cut(self):
        result = simulate(
            NeverEosModel(7, 12),
            ConstantPolicy(0.0),
            (4, 5),
            SimulationLimits(threshold=0.5, max_target_len=4),
        )
        assert result.truncated
        assert result.hypothesis == (7, 7, 7, 7)

    def test_default_cap_is_generous(self):
        result = simulate(
            NeverEosModel(7, 12), ConstantPolicy(0.0), (4, 5), SimulationLimits(threshold=0.5)
        )
        assert result.truncated
        assert len(result.hypothesis) == 2 * 2 + 5

    def test_fuzz_paths_are_valid_schedules(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 11))
            script_len = int(rng.integers(0, 2 * n + 8))
            script = tuple(int(x) for x in rng.integers(4, 12, size=script_len))
            source = tuple(int(x) for x in rng.integers(4, 12, size=n))
            r_max = None if rng.integers(0, 2) == 0 else int(rng.integers(1, 4))
            policy = StubPolicy(rng.uniform(0.0, 1.5, size=40))
            result = simulate(
                ScriptedModel(script, 12),
                policy,
                source,
                SimulationLimits(threshold=0.4, r_max=r_max),
            )
            check_schedule(result.path, n)
            assert len(result.hypothesis) == len(result.path) == len(result.confidences)
            if result.truncated:
                assert len(result.hypothesis) == 2 * n + 5
            else:
                assert result.hypothesis == script + (EOS_ID,)
                assert result.path[-1] == n

    def test_repeat_runs_identical(self, small_model, small_task):
        pairs, _, _ = small_task
        pair = pairs[0]
        matrix = divergence_matrix(small_model, pair, "cosine")
        limits = SimulationLimits(threshold=0.3, r_max=4)
        a = simulate(small_model, MatrixPolicy(matrix), pair.source, limits, pair_id=pair.id)
        b = simulate(small_model, MatrixPolicy(matrix), pair.source, limits, pair_id=pair.id)
        assert a == b


class TestValidation:
    def test_empty_source_rejected(self):
        with pytest.raises(ValueError):
            simulate(AlwaysEosModel(12), ConstantPolicy(0.0), (), SimulationLimits(threshold=0.5))

    def test_negative_confidence_rejected(self):
        with pytest.raises(ValueError, match="confidence"):
            simulate(
                ScriptedModel((7,), 12),
                StubPolicy([-0.5]),
                (4, 5),
                SimulationLimits(threshold=0.5),
            )

    def test_nan_confidence_rejected(self):
        with pytest.raises(ValueError, match="confidence"):
            simulate(
                ScriptedModel((7,), 12),
                StubPolicy([float("nan")]),
                (4, 5),
                SimulationLimits(threshold=0.5),
            )

    def test_limits_validated(self):
        with pytest.raises(ValueError):
            SimulationLimits(threshold=0.0)
        with pytest.raises(ValueError):
            SimulationLimits(threshold=0.5, r_max=0)
        with pytest.raises(ValueError):
            SimulationLimits(threshold=0.5, max_target_len=0)

    def test_result_fields_must_align(self):
        with pytest.raises(ValueError):
            SimulationResult(0, (5,), (1, 2), (0.1,), False)

    def test_schedule_checks(self):
        with pytest.raises(ValueError):
            check_schedule([], 3)
        with pytest.raises(ValueError):
            check_schedule([2, 1], 3)
        with pytest.raises(ValueError):
            check_schedule([1, 4], 3)
        with pytest.raises(ValueError):
            check_schedule([0, 1], 3)
        check_schedule([1, 1, 3], 3)


class TestReplay:
    def test_schedule_length_must_match_target(self, small_task):
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        pair = pairs[0]
        with pytest.raises(ValueError, match="length"):
            replay_path_nll(oracle, pair, [pair.n_source] * (pair.n_target - 1))

    def test_full_visibility_matches_batched_scorer(self, small_model, small_task):
        pairs, _, _ = small_task
        for pair in pairs[:3]:
            replayed = replay_path_nll(
                small_model, pair, [pair.n_source] * pair.n_target
            )
            assert replayed == pytest.approx(full_sentence_nll(small_model, pair), abs=1e-9)

    def test_sufficient_schedule_is_lossless(self, small_task):
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        for pair in pick(pairs, COPY_ID, count=2):
            path = waitk_schedule_ref(2, pair.n_source, pair.n_target)
            assert replay_path_nll(oracle, pair, path) == 0.0
        for pair in pick(pairs, SWAP_ID, count=2):
            path = waitk_schedule_ref(3, pair.n_source, pair.n_target)
            assert replay_path_nll(oracle, pair, path) == 0.0

    def test_starved_positions_cost_log_vocab(self, small_task):
        pairs, _, vocab = small_task
        oracle = SyntheticOracleModel(vocab)
        v_content = len(vocab) - CONTENT_BASE_ID
        for pair in pick(pairs, COPY_ID, count=2):
            # wait-1 sees j=t tokens while position t copies source slot t+1,
            # so every content position is scored from the uniform fallback
            n_c = pair.n_source - 1
            path = waitk_schedule_ref(1, pair.n_source, pair.n_target)
            expected = n_c * math.log(v_content) / pair.n_target
            assert replay_path_nll(oracle, pair, path) == pytest.approx(expected, abs=1e-12)
        for pair in pick(pairs, SWAP_ID, count=2):
            # under the swap rule only odd positions reach past the prefix
            n_c = pair.n_source - 1
            path = waitk_schedule_ref(1, pair.n_source, pair.n_target)
            expected = ((n_c + 1) // 2) * math.log(v_content) / pair.n_target
            assert replay_path_nll(oracle, pair, path) == pytest.approx(expected, abs=1e-12)


class TestLogRoundtrip:
    def test_rows_survive(self, tmp_path):
        rows = [
            SimulationLogRow(3, 0.1, None, 1.5, (1, 2, 2), "w01 w02 </s>"),
            SimulationLogRow(9, 0.07, 4, -0.25, (), ""),
        ]
        path = tmp_path / "log.tsv"
        save_simulation_log(rows, path)
        assert load_simulation_log(path) == rows

    def test_malformed_line_reported(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("1\t0.5\tnone\n", encoding="utf-8")
        with pytest.raises(ValueError, match="log.tsv:1"):
            load_simulation_log(path)
