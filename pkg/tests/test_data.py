"""Recording schema, preprocessing pipeline, and windowing."""

import math

import numpy as np
import pytest

from dcmn import data
from dcmn.errors import ParseError, VocabularyError


def frame(ts, rssi_value=-60.0, accel_value=0.1, room="kitchen", subject="HC01", day=0,
          rssi=None, accel=None):
    return data.SensorFrame(
        timestamp=ts,
        rssi=np.full(data.N_RSSI, rssi_value) if rssi is None else np.asarray(rssi, dtype=float),
        accel=np.full(data.N_ACCEL, accel_value) if accel is None else np.asarray(accel, dtype=float),
        room=room,
        subject_id=subject,
        day_index=day,
    )


def write_csv(path, rows):
    header = ",".join(data.CSV_COLUMNS)
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


def csv_row(subject="HC01", day=0, ts=100.0, rssi=None, accel=None, room="kitchen"):
    rssi = ["-60.0"] * data.N_RSSI if rssi is None else rssi
    accel = ["0.1"] * data.N_ACCEL if accel is None else accel
    return ",".join([subject, str(day), repr(float(ts))] + rssi + accel + [room])


class TestVocabulary:
    def test_default_rooms(self):
        vocab = data.RoomVocabulary.default()
        assert vocab.names == data.DEFAULT_ROOMS
        assert len(vocab) == 6
        assert vocab.id_of("hallway") == 3
        assert vocab.name_of(0) == "kitchen"

    def test_unknown_room(self):
        with pytest.raises(VocabularyError):
            data.RoomVocabulary.default().id_of("garage")

    def test_dense_ids(self):
        vocab = data.RoomVocabulary.default()
        assert [vocab.id_of(n) for n in vocab.names] == list(range(len(vocab)))


class TestLoadRecordings:
    def test_three_rows_in_order(self, tmp_path):
        p = tmp_path / "rec.csv"
        write_csv(p, [csv_row(ts=102.0), csv_row(ts=100.0), csv_row(ts=101.0)])
        recs = data.load_recordings(p)
        assert len(recs) == 1
        assert [f.timestamp for f in recs[0].frames] == [100.0, 101.0, 102.0]

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "rec.csv"
        bad = csv_row().rsplit(",", 3)[0]  # drop three cells
        write_csv(p, [csv_row(), bad])
        with pytest.raises(ParseError) as exc:
            data.load_recordings(p)
        assert exc.value.line_number == 3

    def test_two_subjects_two_streams(self, tmp_path):
        p = tmp_path / "rec.csv"
        write_csv(
            p,
            [
                csv_row(subject="PD01", ts=10.0),
                csv_row(subject="HC01", ts=11.0),
                csv_row(subject="PD01", ts=11.0),
            ],
        )
        recs = data.load_recordings(p)
        assert [(r.subject_id, len(r.frames)) for r in recs] == [("HC01", 1), ("PD01", 2)]

    def test_unknown_room_raises(self, tmp_path):
        p = tmp_path / "rec.csv"
        write_csv(p, [csv_row(room="garage")])
        with pytest.raises(VocabularyError):
            data.load_recordings(p)

    def test_missing_cells_become_nan(self, tmp_path):
        p = tmp_path / "rec.csv"
        rssi = ["-60.0"] * data.N_RSSI
        rssi[2] = ""
        write_csv(p, [csv_row(rssi=rssi, room="")])
        recs = data.load_recordings(p)
        f = recs[0].frames[0]
        assert math.isnan(f.rssi[2])
        assert f.room is None

    def test_bad_header(self, tmp_path):
        p = tmp_path / "rec.csv"
        p.write_text("a,b,c\n")
        with pytest.raises(ParseError):
            data.load_recordings(p)

    def test_round_trip(self, tmp_path):
        src = tmp_path / "src.csv"
        rssi = [repr(-60.0 - i) for i in range(data.N_RSSI)]
        rssi[5] = ""
        write_csv(
            src,
            [
                csv_row(subject="PD02", day=1, ts=50.0, rssi=rssi, room="porch"),
                csv_row(subject="PD02", day=1, ts=51.0, room=""),
            ],
        )
        recs = data.load_recordings(src)
        dst = tmp_path / "dst.csv"
        data.write_recordings(dst, recs)
        assert dst.read_text() == src.read_text()


class TestResample:
    def test_constant_mean(self):
        raw = [frame(100.0 + i / 20) for i in range(20)]
        out = data.resample_1hz(raw)
        assert len(out) == 1
        np.testing.assert_allclose(out[0].rssi, -60.0)
        assert out[0].timestamp == 100.0

    def test_two_reading_mean(self):
        raw = [frame(100.1, rssi_value=1.0), frame(100.9, rssi_value=3.0)]
        out = data.resample_1hz(raw)
        np.testing.assert_allclose(out[0].rssi, 2.0)

    def test_gap_second_marked_missing(self):
        raw = [frame(100.0), frame(102.0)]
        out = data.resample_1hz(raw)
        assert [f.missing for f in out] == [False, True, False]
        assert out[1].room is None
        assert np.isnan(out[1].rssi).all()

    def test_empty_stream(self):
        assert data.resample_1hz([]) == []

    def test_majority_label_ties_to_earlier(self):
        raw = [frame(100.0, room="kitchen"), frame(100.5, room="hallway")]
        assert data.resample_1hz(raw)[0].room == "kitchen"
        raw = [frame(100.0, room="hallway"), frame(100.4, room="kitchen"),
               frame(100.8, room="kitchen")]
        assert data.resample_1hz(raw)[0].room == "kitchen"

    def test_max_aggregator(self):
        raw = [frame(100.1, rssi_value=1.0), frame(100.9, rssi_value=3.0)]
        out = data.resample_1hz(raw, aggregator="max")
        np.testing.assert_allclose(out[0].rssi, 3.0)


class TestImpute:
    def test_single_missing_ap(self):
        rssi = np.full(data.N_RSSI, -60.0)
        rssi[2] = np.nan
        f = frame(100.0, rssi=rssi)
        out = data.impute([f])[0]
        assert out.rssi[2] == data.RSSI_FLOOR_DB
        assert out.rssi[0] == -60.0

    def test_no_missing_unchanged(self):
        f = frame(100.0)
        out = data.impute([f])[0]
        np.testing.assert_array_equal(out.rssi, f.rssi)
        np.testing.assert_array_equal(out.accel, f.accel)

    def test_fully_missing_frame(self):
        f = data.SensorFrame(
            timestamp=1.0,
            rssi=np.full(data.N_RSSI, np.nan),
            accel=np.full(data.N_ACCEL, np.nan),
            missing=True,
        )
        out = data.impute([f])[0]
        np.testing.assert_allclose(out.rssi, data.RSSI_FLOOR_DB)
        np.testing.assert_allclose(out.accel, 0.0)
        assert out.missing  # still breaks windows


class TestNormalization:
    def test_midpoint_maps_to_half(self):
        lo = frame(0.0, rssi_value=-120.0, accel_value=0.0)
        hi = frame(1.0, rssi_value=-30.0, accel_value=1.0)
        stats = data.fit_norm([lo, hi])
        mid = frame(2.0, rssi_value=-75.0, accel_value=0.5)
        out = data.apply_norm([mid], stats)[0]
        np.testing.assert_allclose(out.rssi, 0.5)
        np.testing.assert_allclose(out.accel, 0.5)

    def test_clamping(self):
        lo = frame(0.0, rssi_value=-100.0)
        hi = frame(1.0, rssi_value=-30.0)
        stats = data.fit_norm([lo, hi])
        below = frame(2.0, rssi_value=-110.0)
        out = data.apply_norm([below], stats)[0]
        np.testing.assert_allclose(out.rssi, 0.0)

    def test_constant_feature_maps_to_zero(self):
        frames = [frame(0.0), frame(1.0)]
        stats = data.fit_norm(frames)
        out = data.apply_norm(frames, stats)
        np.testing.assert_allclose(out[0].rssi, 0.0)

    def test_training_split_hits_exact_bounds(self):
        rng = np.random.default_rng(5)
        frames = [
            frame(float(i), rssi=rng.uniform(-100, -30, data.N_RSSI),
                  accel=rng.uniform(0, 2, data.N_ACCEL))
            for i in range(50)
        ]
        stats = data.fit_norm(frames)
        out = data.apply_norm(frames, stats)
        m = np.stack([np.concatenate([f.rssi, f.accel]) for f in out])
        np.testing.assert_array_equal(m.min(axis=0), 0.0)
        np.testing.assert_array_equal(m.max(axis=0), 1.0)

    def test_json_round_trip(self):
        stats = data.NormStats(mins=np.arange(26.0), maxs=np.arange(26.0) + 1)
        again = data.NormStats.from_json(stats.to_json())
        np.testing.assert_array_equal(stats.mins, again.mins)
        assert again.feature_names == data.FEATURE_NAMES


class TestWindow:
    def test_single_full_window_shapes(self):
        frames = [frame(100.0 + i) for i in range(10)]
        samples = data.window(frames, data.RoomVocabulary.default(), T=10, stride=10)
        assert len(samples) == 1
        assert samples[0].rssi.shape == (10, 20)
        assert samples[0].accel.shape == (10, 6)
        assert samples[0].labels.shape == (10,)

    def test_stride_one_count(self):
        frames = [frame(100.0 + i) for i in range(19)]
        samples = data.window(frames, data.RoomVocabulary.default(), T=10, stride=1)
        assert len(samples) == 10

    def test_gap_breaks_windows(self):
        frames = [frame(100.0 + i) for i in range(5)]
        gap = data.SensorFrame(
            timestamp=105.0,
            rssi=np.full(data.N_RSSI, np.nan),
            accel=np.full(data.N_ACCEL, np.nan),
            missing=True,
        )
        frames = frames + [gap] + [frame(106.0 + i) for i in range(5)]
        samples = data.window(frames, data.RoomVocabulary.default(), T=10, stride=1)
        assert samples == []

    def test_short_stream_no_samples(self):
        frames = [frame(100.0 + i) for i in range(9)]
        assert data.window(frames, data.RoomVocabulary.default(), T=10) == []

    def test_timestamp_jump_breaks_windows(self):
        frames = [frame(100.0 + i) for i in range(5)] + [frame(200.0 + i) for i in range(5)]
        assert data.window(frames, data.RoomVocabulary.default(), T=10) == []
        assert len(data.window(frames, data.RoomVocabulary.default(), T=5)) == 2

    def test_unlabeled_frame_breaks_windows(self):
        frames = [frame(100.0 + i) for i in range(10)]
        frames[4].room = None
        assert data.window(frames, data.RoomVocabulary.default(), T=10) == []

    def test_partition_when_divisible(self):
        frames = [frame(100.0 + i) for i in range(30)]
        samples = data.window(frames, data.RoomVocabulary.default(), T=10, stride=10)
        assert len(samples) == 3
        total = sum(s.labels.size for s in samples)
        assert total == len(frames)

    def test_labels_valid_ids(self):
        vocab = data.RoomVocabulary.default()
        frames = [frame(100.0 + i, room=vocab.names[i % 6]) for i in range(20)]
        for s in data.window(frames, vocab, T=10, stride=5):
            assert s.labels.shape == (10,)
            assert (s.labels >= 0).all() and (s.labels < len(vocab)).all()


class TestSubjectGroup:
    def test_prefixes(self):
        assert data.subject_group("PD03") == "PD"
        assert data.subject_group("hc11") == "HC"
        assert data.subject_group("X1") == "other"
