"""Synthetic generator: floorplan, trajectory, RSSI physics, accelerometer."""

import math

import numpy as np
import pytest

from dcmn import data, simulate
from dcmn.errors import ConfigError


class TestFloorplan:
    def test_default_shape(self):
        fp = simulate.default_floorplan()
        assert len(fp.rooms) == 6
        assert len(fp.ap_positions) == 10

    def test_hallway_is_a_hub(self):
        fp = simulate.default_floorplan()
        for room in ("kitchen", "living room", "dining room"):
            assert fp.are_adjacent("hallway", room)

    def test_connected(self):
        # construction would raise otherwise; spot-check reachability
        fp = simulate.default_floorplan()
        assert set(fp.neighbors("hallway")) == set(fp.rooms.names) - {"hallway"}

    def test_disconnected_rejected(self):
        fp = simulate.default_floorplan()
        with pytest.raises(ConfigError):
            simulate.Floorplan(
                rooms=fp.rooms,
                adjacency=frozenset([frozenset({"kitchen", "hallway"})]),
                room_centers=fp.room_centers,
                ap_positions=fp.ap_positions,
            )

    def test_json_round_trip(self):
        fp = simulate.default_floorplan()
        again = simulate.Floorplan.from_json_dict(fp.to_json_dict())
        assert again.rooms.names == fp.rooms.names
        assert again.adjacency == fp.adjacency
        assert again.ap_positions == fp.ap_positions


class TestTrajectory:
    def test_infinite_speed_transitions_take_one_second(self):
        fp = simulate.default_floorplan()
        profile = simulate.healthy_profile()
        profile.transition_walk_speed_mps = 1e9
        profile.mean_dwell_s = {r: 3.0 for r in fp.rooms.names}
        traj = simulate.simulate_trajectory(fp, profile, 600, seed=0)
        moving_runs = []
        run = 0
        for m in traj.moving:
            if m:
                run += 1
            elif run:
                moving_runs.append(run)
                run = 0
        assert moving_runs and max(moving_runs) == 1

    def test_huge_dwell_single_room(self):
        fp = simulate.default_floorplan()
        profile = simulate.healthy_profile()
        profile.mean_dwell_s = {r: 1e9 for r in fp.rooms.names}
        traj = simulate.simulate_trajectory(fp, profile, 500, seed=1)
        assert len(set(traj.room_ids.tolist())) == 1

    def test_deterministic_under_seed(self):
        fp = simulate.default_floorplan()
        profile = simulate.parkinsonian_profile()
        a = simulate.simulate_trajectory(fp, profile, 800, seed=7)
        b = simulate.simulate_trajectory(fp, profile, 800, seed=7)
        np.testing.assert_array_equal(a.room_ids, b.room_ids)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_no_nonadjacent_transitions(self):
        fp = simulate.default_floorplan()
        profile = simulate.healthy_profile()
        traj = simulate.simulate_trajectory(fp, profile, 3600, seed=3)
        names = fp.rooms.names
        for prev, here in zip(traj.room_ids[:-1], traj.room_ids[1:]):
            if prev != here:
                assert fp.are_adjacent(names[prev], names[here])

    def test_duration_respected(self):
        fp = simulate.default_floorplan()
        traj = simulate.simulate_trajectory(fp, simulate.healthy_profile(), 123, seed=4)
        assert len(traj.room_ids) == 123
        assert traj.positions.shape == (123, 2)


class TestRssi:
    def _still_trajectory(self, position, n=5):
        return simulate.Trajectory(
            room_ids=np.zeros(n, dtype=int),
            positions=np.tile(np.asarray(position, dtype=float), (n, 1)),
            moving=np.zeros(n, dtype=bool),
        )

    def test_at_one_meter_equals_tx_power(self):
        fp = simulate.default_floorplan()
        ap = np.array(fp.ap_positions[0])
        traj = self._still_trajectory(ap + np.array([1.0, 0.0]))
        rssi = simulate.synthesize_rssi(traj, fp, shadowing_sigma_db=0.0, dropout_prob=0.0,
                                        tx_power_db=-40.0, seed=0)
        np.testing.assert_allclose(rssi[:, 0], -40.0, atol=1e-12)

    def test_ten_meters_exponent_two(self):
        fp = simulate.default_floorplan()
        ap = np.array(fp.ap_positions[0])
        traj = self._still_trajectory(ap + np.array([10.0, 0.0]))
        rssi = simulate.synthesize_rssi(traj, fp, shadowing_sigma_db=0.0, dropout_prob=0.0,
                                        tx_power_db=-40.0, path_loss_exponent=2.0, seed=0)
        np.testing.assert_allclose(rssi[:, 0], -60.0, atol=1e-12)

    def test_full_dropout_all_missing(self):
        fp = simulate.default_floorplan()
        traj = self._still_trajectory(fp.room_centers["kitchen"])
        rssi = simulate.synthesize_rssi(traj, fp, dropout_prob=1.0, seed=0)
        assert np.isnan(rssi).all()

    def test_closer_ap_is_stronger(self):
        fp = simulate.default_floorplan()
        traj = self._still_trajectory(fp.room_centers["kitchen"])
        rssi = simulate.synthesize_rssi(traj, fp, shadowing_sigma_db=0.0, dropout_prob=0.0, seed=0)
        dists = [np.linalg.norm(np.array(fp.room_centers["kitchen"]) - np.array(ap))
                 for ap in fp.ap_positions]
        order = np.argsort(dists)
        row = rssi[0, :10]
        for nearer, farther in zip(order[:-1], order[1:]):
            if dists[nearer] < dists[farther]:
                assert row[nearer] > row[farther]

    def test_distance_floor_at_ap(self):
        fp = simulate.default_floorplan()
        traj = self._still_trajectory(fp.ap_positions[0])
        rssi = simulate.synthesize_rssi(traj, fp, shadowing_sigma_db=0.0, dropout_prob=0.0,
                                        tx_power_db=-40.0, path_loss_exponent=2.0, seed=0)
        np.testing.assert_allclose(rssi[:, 0], -40.0 - 20.0 * math.log10(0.1), atol=1e-12)

    def test_clamped_at_floor(self):
        fp = simulate.default_floorplan()
        traj = self._still_trajectory(fp.room_centers["kitchen"])
        rssi = simulate.synthesize_rssi(traj, fp, shadowing_sigma_db=0.0, dropout_prob=0.0,
                                        tx_power_db=-200.0, seed=0)
        np.testing.assert_allclose(rssi, data.RSSI_FLOOR_DB)


class TestAccel:
    def _room_trajectory(self, fp, room, n=50):
        rid = fp.rooms.id_of(room)
        return simulate.Trajectory(
            room_ids=np.full(n, rid, dtype=int),
            positions=np.tile(np.asarray(fp.room_centers[room]), (n, 1)),
            moving=np.zeros(n, dtype=bool),
        )

    def test_noiseless_equals_signature_energy(self):
        fp = simulate.default_floorplan()
        profile = simulate.healthy_profile()
        profile.accel_noise_g = 0.0
        traj = self._room_trajectory(fp, "kitchen")
        accel = simulate.synthesize_accel(traj, fp, profile, seed=0)
        expected = simulate.signature_energy(profile, "kitchen")
        np.testing.assert_allclose(accel, np.tile(expected, (50, 1)), atol=1e-12)

    def test_rooms_linearly_separable_when_noiseless(self):
        fp = simulate.default_floorplan()
        profile = simulate.healthy_profile()
        profile.accel_noise_g = 0.0
        rows, labels = [], []
        for room in ("kitchen", "living room"):
            traj = self._room_trajectory(fp, room, n=200)
            rows.append(simulate.synthesize_accel(traj, fp, profile, seed=1))
            labels.append(np.full(200, fp.rooms.id_of(room)))
        X = np.concatenate(rows)
        y = np.concatenate(labels)
        # trivial nearest-centroid classifier
        centroids = {lab: X[y == lab].mean(axis=0) for lab in set(y.tolist())}
        pred = np.array([
            min(centroids, key=lambda lab: np.linalg.norm(x - centroids[lab])) for x in X
        ])
        assert (pred == y).mean() > 0.99

    def test_tremor_increases_variance(self):
        fp = simulate.default_floorplan()
        base = simulate.healthy_profile()
        traj = self._room_trajectory(fp, "living room", n=2000)
        quiet = simulate.synthesize_accel(traj, fp, base, seed=5)
        shaky_profile = simulate.parkinsonian_profile()
        shaky_profile.tremor_amplitude_g = 0.5
        shaky_profile.mean_dwell_s = base.mean_dwell_s
        shaky_profile.transition_walk_speed_mps = base.transition_walk_speed_mps
        shaky = simulate.synthesize_accel(traj, fp, shaky_profile, seed=5)
        assert shaky.var(axis=0).sum() > quiet.var(axis=0).sum()

    def test_gait_burst_during_walks(self):
        fp = simulate.default_floorplan()
        profile = simulate.healthy_profile()
        profile.accel_noise_g = 0.0
        traj = simulate.Trajectory(
            room_ids=np.zeros(4, dtype=int),
            positions=np.zeros((4, 2)),
            moving=np.array([False, True, True, False]),
        )
        accel = simulate.synthesize_accel(traj, fp, profile, seed=0)
        assert (accel[1] > accel[0]).all()


class TestDataset:
    def test_frame_count_and_loadability(self, tmp_path):
        cfg = simulate.default_sim_config(n_hc=1, n_pd=1, days=1, seconds_per_day=3600, seed=0)
        out = tmp_path / "sim.csv"
        simulate.make_dataset(cfg, out)
        recs = data.load_recordings(out)
        assert sum(len(r.frames) for r in recs) == 7200
        assert {r.subject_id for r in recs} == {"HC01", "PD01"}
        assert all(f.room is not None for r in recs for f in r.frames)

    def test_byte_identical_under_seed(self, tmp_path):
        cfg = simulate.default_sim_config(n_hc=1, n_pd=0, days=1, seconds_per_day=600, seed=3)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        simulate.make_dataset(cfg, a)
        simulate.make_dataset(cfg, b)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        simulate.make_dataset(
            simulate.default_sim_config(n_hc=1, n_pd=0, days=1, seconds_per_day=600, seed=0), a
        )
        simulate.make_dataset(
            simulate.default_sim_config(n_hc=1, n_pd=0, days=1, seconds_per_day=600, seed=1), b
        )
        assert a.read_bytes() != b.read_bytes()

    def test_output_satisfies_schema_invariants(self, tmp_path):
        cfg = simulate.default_sim_config(n_hc=1, n_pd=1, days=1, seconds_per_day=900, seed=2)
        out = tmp_path / "sim.csv"
        simulate.make_dataset(cfg, out)
        for rec in data.load_recordings(out):
            frames = data.impute(data.resample_1hz(rec.frames))
            assert all((f.rssi >= data.RSSI_FLOOR_DB).all() for f in frames)
            ts = [f.timestamp for f in rec.frames]
            assert ts == sorted(ts)

    def test_higher_mobility_profile_transitions_more(self):
        fp = simulate.default_floorplan()
        fast = simulate.healthy_profile()
        slow = simulate.parkinsonian_profile()
        fast_traj = simulate.simulate_trajectory(fp, fast, 7200, seed=11)
        slow_traj = simulate.simulate_trajectory(fp, slow, 7200, seed=11)
        changes = lambda t: int((t.room_ids[1:] != t.room_ids[:-1]).sum())
        assert changes(fast_traj) > changes(slow_traj)

    def test_config_json_round_trip(self):
        cfg = simulate.default_sim_config(n_hc=2, n_pd=1, days=2, seconds_per_day=100, seed=9)
        again = simulate.sim_config_from_json(simulate.sim_config_to_json(cfg))
        assert sorted(again.profiles) == sorted(cfg.profiles)
        assert again.days == 2 and again.seconds_per_day == 100 and again.seed == 9
        assert again.floorplan.adjacency == cfg.floorplan.adjacency

    def test_bad_config_field_paths(self):
        with pytest.raises(ConfigError, match="subjects"):
            simulate.sim_config_from_json({"days": 1})
        with pytest.raises(ConfigError, match=r"subjects\[0\].preset"):
            simulate.sim_config_from_json({"subjects": [{"id": "X", "preset": "zzz"}]})
