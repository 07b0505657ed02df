import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myoloop import sigproc, synthem
from myoloop.synthem import (
    EmgStream,
    ParticipantConfig,
    activation,
    calibration_gain,
    don_sleeve,
    folded_normal_mean,
    gain_matrix,
    generate_trajectory,
    make_participant,
    nominal_electrode_positions,
    participant_from_json,
    participant_to_json,
    placement_from_json,
    placement_to_json,
    synthesize_emg,
    trajectory_segments,
)


def participant_equal(a, b):
    return (
        np.array_equal(a.source_z, b.source_z)
        and np.array_equal(a.source_theta, b.source_theta)
        and np.array_equal(a.source_scale, b.source_scale)
        and np.array_equal(a.source_strength, b.source_strength)
        and np.array_equal(a.rest_noise_floor, b.rest_noise_floor)
        and a.target_snr == b.target_snr
        and a.activation_latency_ms == b.activation_latency_ms
        and a.seed == b.seed
    )


class TestMakeParticipant:
    def test_deterministic(self):
        assert participant_equal(make_participant(seed=5), make_participant(seed=5))

    def test_seed_changes_layout(self):
        a, b = make_participant(seed=1), make_participant(seed=2)
        assert not np.array_equal(a.source_z, b.source_z)

    def test_default_construction_contract(self):
        p = make_participant(seed=0)
        assert p.source_z.shape == (12,)
        assert np.all(p.source_strength > 0)
        assert np.all(p.rest_noise_floor > 0)

    def test_flexors_and_extensors_on_opposite_halves(self):
        p = make_participant(seed=3)
        assert np.all(np.sin(p.source_theta[0::2]) > 0)
        assert np.all(np.sin(p.source_theta[1::2]) < 0)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError, match="target_snr"):
            make_participant(ParticipantConfig(target_snr=0.0))
        with pytest.raises(ValueError, match="forearm_radius_mm"):
            make_participant(ParticipantConfig(forearm_radius_mm=-1.0))


class TestDonSleeve:
    def test_zero_shift_is_nominal_grid(self):
        p = make_participant(seed=0)
        placement = don_sleeve(p, shift_mean_mm=0.0, seed=1)
        z, theta = nominal_electrode_positions(p.sleeve_length_mm)
        np.testing.assert_array_equal(placement.electrode_z, z)
        np.testing.assert_array_equal(placement.electrode_theta, theta)
        assert placement.session_shift == (0.0, 0.0)

    def test_same_seed_identical(self):
        p = make_participant(seed=0)
        a, b = don_sleeve(p, seed=9), don_sleeve(p, seed=9)
        np.testing.assert_array_equal(a.electrode_z, b.electrode_z)
        np.testing.assert_array_equal(a.posture_gain, b.posture_gain)

    def test_monte_carlo_shift_mean(self):
        p = make_participant(seed=0)
        mags = []
        for seed in range(1000):
            pl = don_sleeve(p, shift_mean_mm=7.32, seed=seed)
            mags.append(math.hypot(*pl.session_shift))
        assert np.mean(mags) == pytest.approx(7.32, rel=0.05)

    def test_small_target_mean_uses_rescaled_half_normal(self):
        p = make_participant(seed=0)
        mags = [
            math.hypot(*don_sleeve(p, shift_mean_mm=1.0, seed=s).session_shift)
            for s in range(1000)
        ]
        assert np.mean(mags) == pytest.approx(1.0, rel=0.05)

    def test_folded_normal_mean_identity(self):
        # against direct Monte-Carlo of |N(loc, sigma)|
        rng = np.random.default_rng(0)
        draws = np.abs(rng.normal(5.0, 3.0, 200_000))
        assert folded_normal_mean(5.0, 3.0) == pytest.approx(float(draws.mean()), rel=1e-2)


class TestActivation:
    def test_rest_is_all_zero(self):
        assert np.all(activation(np.zeros(6)) == 0)

    def test_positive_first_dof(self):
        k = np.zeros(6)
        k[0] = 1.0
        act = activation(k)
        expected = np.zeros(12)
        expected[0] = 1.0
        np.testing.assert_array_equal(act, expected)

    def test_negative_wrist_maps_to_extensor_slot(self):
        k = np.zeros(6)
        k[4] = -0.5
        act = activation(k)
        assert act[9] == 0.5  # wrist extensor
        assert act[8] == 0.0  # wrist flexor
        assert act.sum() == 0.5

    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
    def test_flexor_extensor_never_coactive(self, k):
        act = activation(np.array(k))
        assert np.all(act[0::2] * act[1::2] == 0)


class TestGainMatrix:
    def test_shape_and_positivity(self):
        p = make_participant(seed=0)
        G = gain_matrix(p, don_sleeve(p, seed=0))
        assert G.shape == (32, 12)
        assert np.all(G > 0)

    def test_shift_sensitivity(self):
        # placements >= 10 mm apart must change at least one entry by >= 1%
        p = make_participant(seed=0)
        nominal = don_sleeve(p, shift_mean_mm=0.0, seed=0)
        for seed in range(20):
            shifted = don_sleeve(p, shift_mean_mm=12.0, seed=seed)
            if math.hypot(*shifted.session_shift) < 10.0:
                continue
            rel = np.abs(gain_matrix(p, shifted) / gain_matrix(p, nominal) - 1.0)
            assert rel.max() >= 0.01

    def test_monotone_drive(self):
        # envelope never decreases when |k_d| grows, other DOFs fixed
        p = make_participant(seed=1)
        stream = EmgStream(p, don_sleeve(p, seed=2), seed=0)
        k_small, k_big = np.zeros(6), np.zeros(6)
        k_small[2], k_big[2] = 0.3, 0.9
        assert np.all(stream.envelope_row(k_big) >= stream.envelope_row(k_small))


class TestSynthesizeEmg:
    def test_rest_mav_matches_gaussian_identity(self):
        # E|b*N| = b*sqrt(2/pi), per channel, over >= 10 s
        p = make_participant(seed=4)
        placement = don_sleeve(p, seed=0)
        block = synthesize_emg(p, placement, np.zeros((360, 6)), seed=7)
        frames = sigproc.mav_stream(block)
        settled = sigproc.frames_to_matrix(frames[12:])
        expected = p.rest_noise_floor * math.sqrt(2 / math.pi)
        np.testing.assert_allclose(settled.mean(axis=0), expected, rtol=0.05)

    def test_full_hold_snr_near_target(self):
        # sustained single-DOF holds vs rest on a 14-target participant
        p = make_participant(seed=0)
        placement = don_sleeve(p, seed=100)
        for dof in (0, 4):
            traj = np.zeros((600, 6))
            traj[300:, dof] = 1.0
            block = synthesize_emg(p, placement, traj, seed=dof)
            frames = sigproc.mav_stream(block)
            mat = sigproc.frames_to_matrix(frames)
            labels = np.zeros(len(frames), dtype=bool)
            labels[300:] = True
            keep = np.ones(len(frames), dtype=bool)
            keep[300:312] = False  # settling guard: latency + MAV window
            snr = mat[labels & keep].mean() / mat[~labels & keep].mean()
            assert 11.0 <= snr <= 17.0

    def test_bit_identical_given_seed(self):
        p = make_participant(seed=2)
        placement = don_sleeve(p, seed=3)
        traj = generate_trajectory(1)
        a = synthesize_emg(p, placement, traj, seed=11)
        b = synthesize_emg(p, placement, traj, seed=11)
        assert np.array_equal(a.samples, b.samples)

    def test_streaming_equals_batch(self):
        p = make_participant(seed=2)
        placement = don_sleeve(p, seed=3)
        traj = generate_trajectory(0, hold_s=0.5)
        batch = synthesize_emg(p, placement, traj, seed=5)
        stream = EmgStream(p, placement, seed=5)
        chunks = [stream.push_tick(k) for k in traj]
        assert np.array_equal(batch.samples, np.concatenate(chunks))

    def test_latency_delays_envelope(self):
        config = ParticipantConfig(activation_latency_ms=100.0)
        p = make_participant(config, seed=0)
        placement = don_sleeve(p, shift_mean_mm=0.0, seed=0)
        traj = np.zeros((30, 6))
        traj[0:, 0] = 1.0  # step at t=0
        stream = EmgStream(p, placement, seed=0)
        first = stream.push_tick(traj[0])
        # first tick covers samples 0..32, all before the 100-sample delay
        rest_env = p.rest_noise_floor
        assert np.all(np.abs(first).max(axis=0) < rest_env * 8)

    def test_empty_sequence_rejected(self):
        p = make_participant(seed=0)
        with pytest.raises(ValueError, match="empty"):
            synthesize_emg(p, don_sleeve(p, seed=0), np.zeros((0, 6)))

    def test_zero_latency_aligns_envelope_with_intent(self):
        config = ParticipantConfig(activation_latency_ms=0.0)
        p = make_participant(config, seed=1)
        placement = don_sleeve(p, shift_mean_mm=0.0, seed=0)
        stream = EmgStream(p, placement, seed=0)
        k = np.zeros(6)
        k[0] = 1.0
        samples = stream.push_tick(k)
        env = stream.envelope_row(k)
        # sample std over the tick should reflect the active envelope immediately
        strongest = int(np.argmax(env))
        assert np.abs(samples[:, strongest]).mean() > 3 * p.rest_noise_floor[strongest]


class TestGenerateTrajectory:
    def test_starts_at_rest(self):
        for movement in range(6):
            assert np.all(generate_trajectory(movement)[0] == 0)

    def test_peak_reaches_plus_one_on_selected_dof_only(self):
        traj = generate_trajectory(3, hold_s=1.0)
        peak = np.argmax(traj[:, 3])
        assert traj[peak, 3] == 1.0
        assert np.all(traj[peak, [0, 1, 2, 4, 5]] == 0)

    def test_reaches_minus_one(self):
        traj = generate_trajectory(2)
        assert traj[:, 2].min() == -1.0

    @given(
        st.integers(0, 5),
        st.floats(0.5, 2.0),
        st.floats(0.0, 3.0),
    )
    @settings(max_examples=30)
    def test_tick_count_matches_segment_bookkeeping(self, movement, speed, hold):
        traj = generate_trajectory(movement, speed, hold)
        expected = sum(
            int(round(d * 30)) for d, _, _ in trajectory_segments(speed, hold)
        )
        assert traj.shape == (expected, 6)

    def test_invalid_movement_rejected(self):
        with pytest.raises(ValueError, match="movement_id"):
            generate_trajectory(6)

    def test_values_stay_in_range(self):
        traj = generate_trajectory(5, speed_scale=1.7, hold_s=0.3)
        assert np.all(np.abs(traj) <= 1.0)


class TestSerialization:
    def test_participant_round_trip(self):
        p = make_participant(seed=42)
        assert participant_equal(p, participant_from_json(participant_to_json(p)))

    def test_placement_round_trip(self):
        p = make_participant(seed=0)
        pl = don_sleeve(p, seed=17)
        back = placement_from_json(placement_to_json(pl))
        np.testing.assert_array_equal(pl.electrode_z, back.electrode_z)
        np.testing.assert_array_equal(pl.electrode_theta, back.electrode_theta)
        np.testing.assert_array_equal(pl.posture_gain, back.posture_gain)
        assert pl.session_shift == back.session_shift

    def test_round_trip_preserves_synthesis_bit_exactly(self):
        p = make_participant(seed=8)
        pl = don_sleeve(p, seed=9)
        p2 = participant_from_json(participant_to_json(p))
        pl2 = placement_from_json(placement_to_json(pl))
        traj = generate_trajectory(4, hold_s=0.2)
        a = synthesize_emg(p, pl, traj, seed=1)
        b = synthesize_emg(p2, pl2, traj, seed=1)
        assert np.array_equal(a.samples, b.samples)

    def test_wrong_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            participant_from_json(json.dumps({"kind": "placement"}))


class TestCalibration:
    def test_gain_positive_and_scales_with_target(self):
        p14 = make_participant(ParticipantConfig(target_snr=14.0), seed=0)
        p7 = make_participant(ParticipantConfig(target_snr=7.0), seed=0)
        pl = don_sleeve(p14, seed=0)
        assert calibration_gain(p14, pl) > calibration_gain(p7, pl) > 0
