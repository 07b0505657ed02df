import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myoloop.nnet import build_shallow
from myoloop.taskbench import (
    ExperimentPlan,
    OracleDecoder,
    PursuitController,
    TargetSpec,
    TRIAL_TICKS,
    hold_duration,
    in_window_flags,
    longest_run,
    plan_orders,
    pursuit_settle_tick,
    run_experiment,
    run_trial,
    sample_target,
)


def brute_force_longest_run(flags):
    best = 0
    for start in range(len(flags)):
        length = 0
        for flag in flags[start:]:
            if not flag:
                break
            length += 1
        best = max(best, length)
    return best


def spec_for(dof=2, magnitude=0.5):
    target = np.zeros(6)
    target[dof] = magnitude
    return TargetSpec((dof,), target)


def trajectory_from_flags(flags, spec):
    traj = np.tile(spec.target, (len(flags), 1))
    traj[~flags, spec.selected_dofs[0]] += 0.5  # push out of the window
    return traj


class TestHoldDuration:
    def test_perfect_hold_is_seven_seconds(self):
        spec = spec_for()
        traj = np.tile(spec.target, (TRIAL_TICKS, 1))
        assert hold_duration(traj, spec) == 7.0

    def test_never_in_window_is_zero(self):
        spec = spec_for()
        traj = np.zeros((TRIAL_TICKS, 6))
        assert hold_duration(traj, spec) == 0.0

    def test_two_runs_take_the_longer(self):
        spec = spec_for()
        flags = np.zeros(TRIAL_TICKS, dtype=bool)
        flags[30:90] = True   # 60 ticks
        flags[120:210] = True  # 90 ticks
        traj = trajectory_from_flags(flags, spec)
        assert hold_duration(traj, spec) == pytest.approx(3.0)

    @given(st.lists(st.booleans(), min_size=210, max_size=210))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force_runs(self, flag_list):
        flags = np.array(flag_list)
        spec = spec_for()
        traj = trajectory_from_flags(flags, spec)
        assert hold_duration(traj, spec) == brute_force_longest_run(flags) / 30.0

    def test_monotone_in_window_fraction(self):
        rng = np.random.default_rng(0)
        base = np.zeros(6)
        base[1] = 0.5
        traj = base + rng.normal(0, 0.15, (TRIAL_TICKS, 6))
        previous = -1.0
        for fraction in (0.05, 0.10, 0.20, 0.40):
            spec = TargetSpec((1,), base, window_fraction=fraction)
            value = hold_duration(traj, spec)
            assert value >= previous
            previous = value

    def test_unselected_dof_excursion_breaks_hold(self):
        spec = spec_for(dof=0, magnitude=0.5)
        traj = np.tile(spec.target, (TRIAL_TICKS, 1))
        traj[100:110, 3] = 0.5  # cross-talk on an unselected DOF
        flags = in_window_flags(traj, spec)
        assert not flags[100:110].any()
        assert hold_duration(traj, spec) == pytest.approx(100 / 30)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError, match="210"):
            hold_duration(np.zeros((100, 6)), spec_for())


class TestTargetSpec:
    def test_selected_magnitude_range_enforced(self):
        target = np.zeros(6)
        target[0] = 0.1
        with pytest.raises(ValueError, match="magnitude"):
            TargetSpec((0,), target)

    def test_unselected_must_rest(self):
        target = np.zeros(6)
        target[0], target[1] = 0.5, 0.2
        with pytest.raises(ValueError, match="unselected"):
            TargetSpec((0,), target)

    def test_window_half_width(self):
        assert spec_for().half_width == pytest.approx(0.2)

    def test_sample_target_valid(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            spec = sample_target(rng)
            assert len(spec.selected_dofs) == 1


class TestRunTrial:
    def test_oracle_decoder_matches_pursuit_closed_form(self, participant, placement):
        spec = spec_for(dof=1, magnitude=0.8)
        result = run_trial(
            OracleDecoder(),
            participant,
            placement,
            spec,
            seed=5,
            intent_noise=0.0,
            reaction_delay_ticks=0,
        )
        settle = pursuit_settle_tick(spec, delay_ticks=0, rate=0.15)
        assert result.hold_duration_s == pytest.approx((TRIAL_TICKS - settle) / 30.0)

    def test_zero_decoder_never_holds(self, participant, placement):
        decoder = build_shallow(seed=0)
        for p, _ in decoder.net.params_and_grads():
            p[...] = 0
        result = run_trial(decoder, participant, placement, spec_for(magnitude=0.5), seed=1)
        assert result.hold_duration_s == 0.0

    def test_deterministic_per_seed(self, participant, placement, quick_decoder):
        spec = spec_for(dof=0, magnitude=0.6)
        a = run_trial(quick_decoder, participant, placement, spec, seed=11)
        b = run_trial(quick_decoder, participant, placement, spec, seed=11)
        assert a.hold_duration_s == b.hold_duration_s
        assert np.array_equal(a.decoded, b.decoded)
        assert np.array_equal(a.intended, b.intended)

    def test_different_seed_changes_noise(self, participant, placement, quick_decoder):
        spec = spec_for(dof=0, magnitude=0.6)
        a = run_trial(quick_decoder, participant, placement, spec, seed=11)
        b = run_trial(quick_decoder, participant, placement, spec, seed=12)
        assert not np.array_equal(a.decoded, b.decoded)

    def test_external_intent_replay(self, participant, placement, quick_decoder):
        spec = spec_for(dof=0, magnitude=0.6)
        a = run_trial(quick_decoder, participant, placement, spec, seed=11)
        b = run_trial(
            quick_decoder,
            participant,
            placement,
            spec,
            seed=11,
            intent_source="external",
            intents=a.intended,
        )
        assert np.array_equal(a.decoded, b.decoded)

    def test_trained_decoder_tracks_target(self, participant, placement, quick_decoder):
        # same-placement decode should hold for a nontrivial stretch
        spec = spec_for(dof=2, magnitude=0.5)
        result = run_trial(quick_decoder, participant, placement, spec, seed=5)
        assert result.hold_duration_s > 0.2

    def test_external_without_intents_rejected(self, participant, placement, quick_decoder):
        with pytest.raises(ValueError, match="intent"):
            run_trial(
                quick_decoder,
                participant,
                placement,
                spec_for(),
                intent_source="external",
            )


class TestPursuitController:
    def test_reaction_delay_holds_rest(self):
        spec = spec_for(dof=0, magnitude=0.8)
        controller = PursuitController(spec, np.random.default_rng(0), delay_ticks=5, noise=0.0)
        decoded = np.zeros((210, 6))
        intents = [controller.step(t, decoded) for t in range(8)]
        assert np.all(np.array(intents[:5]) == 0)
        assert intents[5][0] > 0

    def test_self_model_converges_geometrically(self):
        spec = spec_for(dof=2, magnitude=-0.7)
        controller = PursuitController(spec, np.random.default_rng(0), delay_ticks=0, noise=0.0)
        decoded = np.zeros((210, 6))
        value = None
        for t in range(120):
            value = controller.step(t, decoded)
        np.testing.assert_allclose(value, spec.target, atol=1e-3)

    def test_feedback_corrects_decoder_bias(self):
        # decoded reads 0.5x the intent: feedback pursuit still reaches target
        spec = spec_for(dof=1, magnitude=0.4)
        controller = PursuitController(spec, np.random.default_rng(0), delay_ticks=2, noise=0.0)
        decoded = np.zeros((300, 6))
        for t in range(299):
            intent = controller.step(t, decoded)
            decoded[t] = 0.5 * intent
        np.testing.assert_allclose(decoded[290], spec.target, atol=0.02)


class TestExperimentPlan:
    def test_counterbalancing_two_conditions_ten_blocks(self):
        plan = ExperimentPlan(["a", "b"], blocks=10, seed=0)
        orders = plan_orders(plan)
        assert len(orders) == 10
        first_counts = {0: 0, 1: 0}
        for order in orders:
            assert sorted(order) == [0, 1]
            first_counts[order[0]] += 1
        assert first_counts == {0: 5, 1: 5}

    def test_latin_square_three_conditions(self):
        plan = ExperimentPlan(["a", "b", "c"], blocks=9, seed=3)
        orders = plan_orders(plan)
        position_counts = np.zeros((3, 3), dtype=int)
        for order in orders:
            assert sorted(order) == [0, 1, 2]
            for slot, cond in enumerate(order):
                position_counts[cond, slot] += 1
        assert np.all(position_counts == 3)

    def test_single_condition_rejected(self):
        with pytest.raises(ValueError, match="two conditions"):
            ExperimentPlan(["only"], blocks=4)

    def test_null_experiment_not_significant(self, participant, placement, quick_decoder):
        # identical decoders as both conditions: differences are pure noise
        plan = ExperimentPlan(["a", "b"], blocks=10, seed=21)
        rng_targets = {}

        def runner(condition, block_idx, slot_idx, seed):
            if block_idx not in rng_targets:
                block_rng = np.random.default_rng(np.random.SeedSequence([21, block_idx]))
                rng_targets[block_idx] = sample_target(block_rng)
            return run_trial(
                quick_decoder,
                participant,
                placement,
                rng_targets[block_idx],
                seed=seed,
                condition=condition,
            )

        report = run_experiment(plan, runner)
        assert report["pairwise"][0]["p_two_sided"] > 0.05
        assert len(report["samples"]["a"]) == 10
        assert len(report["trials"]) == 20


class TestLongestRun:
    @given(st.lists(st.booleans(), min_size=0, max_size=50))
    def test_against_brute_force(self, flags):
        assert longest_run(np.array(flags, dtype=bool)) == brute_force_longest_run(
            np.array(flags, dtype=bool)
        )
