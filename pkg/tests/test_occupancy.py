from datetime import datetime

import numpy as np
import pytest

from fleetcharge.core import FleetChargeError, TimeGrid
from fleetcharge.occupancy import (
    AlwaysFreePredictor,
    ChargingSessionRecord,
    HistoricalProfilePredictor,
    NoisyOraclePredictor,
    PredictionError,
    SessionBoundarySequence,
    arrival_window,
    generate_exogenous_sessions,
    ingest_sessions,
    intervals_from_series,
    occupancy_series,
    occupied_at,
    perfect_oracle,
    predictor_accuracy,
    read_sessions_csv,
    sequence_from_series,
    sessions_for_date,
    write_sessions_csv,
)

from util import sequence_from_minutes


def row(cid, start, end, energy=None):
    return {"charger_id": cid, "start": start, "end": end, "energy_kwh": energy}


class TestIngest:
    def test_disjoint_sorted(self):
        records, report = ingest_sessions([
            row("c1", "2018-05-14T12:00", "2018-05-14T12:30"),
            row("c1", "2018-05-14T09:00", "2018-05-14T09:45"),
        ])
        assert [r.start.hour for r in records] == [9, 12]
        assert report.accepted == 2 and report.merged == 0 and report.rejected == []

    def test_overlap_merged(self):
        records, report = ingest_sessions([
            row("c1", "2018-05-14T10:00", "2018-05-14T11:00"),
            row("c1", "2018-05-14T10:30", "2018-05-14T11:30"),
        ])
        assert len(records) == 1
        assert records[0].start == datetime(2018, 5, 14, 10, 0)
        assert records[0].end == datetime(2018, 5, 14, 11, 30)
        assert report.merged == 1

    def test_abutting_not_merged(self):
        records, _ = ingest_sessions([
            row("c1", "2018-05-14T10:00", "2018-05-14T11:00"),
            row("c1", "2018-05-14T11:00", "2018-05-14T11:30"),
        ])
        assert len(records) == 2

    def test_rejects_bad_rows(self):
        records, report = ingest_sessions([
            row("c1", "2018-05-14T12:00", "2018-05-14T11:00"),
            row("c1", "not a time", "2018-05-14T11:00"),
            row("", "2018-05-14T10:00", "2018-05-14T11:00"),
        ])
        assert records == []
        assert len(report.rejected) == 3
        reasons = [reason for _, reason in report.rejected]
        assert any("end not after start" in r for r in reasons)

    def test_ingest_rebuild_reingest_idempotent(self):
        records, _ = ingest_sessions([
            row("c1", "2018-05-14T10:00", "2018-05-14T11:00"),
            row("c1", "2018-05-14T10:30", "2018-05-14T11:30"),
            row("c1", "2018-05-14T14:00", "2018-05-14T14:20"),
        ])
        day = records[0].start.date()
        intervals = sessions_for_date(records, day)["c1"]
        series = occupancy_series(intervals, 0.0, 1440)
        rebuilt = intervals_from_series(series, 0.0)
        rows2 = [{"charger_id": "c1",
                  "start": f"2018-05-14T{int(s // 60):02d}:{int(s % 60):02d}",
                  "end": f"2018-05-14T{int(e // 60):02d}:{int(e % 60):02d}"}
                 for s, e in rebuilt]
        records2, _ = ingest_sessions(rows2)
        intervals2 = sessions_for_date(records2, day)["c1"]
        assert np.array_equal(occupancy_series(intervals2, 0.0, 1440), series)

    def test_csv_round_trip(self, tmp_path):
        records, _ = ingest_sessions([
            row("c2", "2018-05-14T08:00", "2018-05-14T08:40", 12.5),
            row("c1", "2018-05-14T10:00", "2018-05-14T11:00"),
        ])
        path = tmp_path / "sessions.csv"
        write_sessions_csv(records, path)
        loaded, report = read_sessions_csv(path)
        assert loaded == records and report.rejected == []


class TestPredictors:
    def test_always_free(self):
        pred = AlwaysFreePredictor([0, 1])
        seq = pred.predict(0, now=600.0, horizon=60.0)
        assert seq.boundaries == (600.0, 660.0)
        assert seq.slot_occupied == (False,)

    def test_unknown_charger(self):
        with pytest.raises(PredictionError):
            AlwaysFreePredictor([0]).predict(5, 0.0, 60.0)

    def test_perfect_oracle_transcription(self):
        now = 300.0
        oracle = perfect_oracle({0: [(now + 10, now + 25)]}, [0])
        seq = oracle.predict(0, now, 60.0)
        assert seq.boundaries == (now, now + 10, now + 25, now + 60)
        assert seq.slot_occupied == (False, True, False)

    def test_profile_threshold_boundary(self):
        # occupied 10:30-11:00 on two of three observed weekdays: probability
        # 2/3 > 0.5 exactly on [630, 660)
        records, _ = ingest_sessions([
            row("c1", "2018-05-14T10:30", "2018-05-14T11:00"),
            row("c1", "2018-05-15T10:30", "2018-05-15T11:00"),
            row("c1", "2018-05-16T09:00", "2018-05-16T09:10"),
        ])
        pred = HistoricalProfilePredictor(records, ["c1"], day_type="weekday")
        assert pred.probability("c1", 630) == pytest.approx(2 / 3)
        seq = pred.predict("c1", now=600.0, horizon=60.0)
        assert seq.boundaries == (600.0, 630.0, 660.0)
        assert seq.slot_occupied == (False, True)

    def test_noisy_oracle_deterministic_and_order_independent(self):
        truth = {0: [(100.0, 130.0)], 1: [(50.0, 80.0)]}
        a = NoisyOraclePredictor(truth, [0, 1], flip_probability=0.3, seed=5)
        b = NoisyOraclePredictor(truth, [0, 1], flip_probability=0.3, seed=5)
        qa = [a.predict(0, 90.0, 60.0), a.predict(1, 40.0, 60.0)]
        qb = [b.predict(1, 40.0, 60.0), b.predict(0, 90.0, 60.0)]
        assert qa[0] == qb[1] and qa[1] == qb[0]

    def test_noisy_oracle_accuracy_near_target(self):
        minutes = 20000
        truth = {0: [(float(s), float(s + 30)) for s in range(0, minutes, 120)]}
        pred = NoisyOraclePredictor(truth, [0], flip_probability=0.18, seed=1,
                                    max_minute=minutes)
        predicted = np.concatenate([
            _series_of(pred.predict(0, float(t), 100.0))
            for t in range(0, minutes, 100)])
        actual = occupancy_series(truth[0], 0.0, minutes)
        acc = predictor_accuracy(predicted, actual)
        assert abs(acc - 0.82) < 0.02


def _series_of(seq: SessionBoundarySequence) -> np.ndarray:
    start = seq.horizon_start
    n = int(round(seq.horizon_end - start))
    out = np.zeros(n, dtype=bool)
    for r, occ in enumerate(seq.slot_occupied):
        lo = int(round(seq.boundaries[r] - start))
        hi = int(round(seq.boundaries[r + 1] - start))
        out[lo:hi] = occ
    return out


class TestArrivalWindow:
    def test_free_charger(self):
        seq = SessionBoundarySequence(0, (0.0, 60.0), (False,))
        for t in (0.0, 17.3, 59.9):
            w = arrival_window(seq, t)
            assert (w.a, w.b, w.occupied_on_arrival) == (60.0, 60.0, False)

    def test_occupied_slot_interior(self):
        seq = SessionBoundarySequence(0, (0.0, 40.0, 55.0, 60.0), (False, True, False))
        w = arrival_window(seq, 45.0)
        assert (w.a, w.b, w.occupied_on_arrival) == (40.0, 55.0, True)
        assert w.b - 45.0 == pytest.approx(10.0)

    def test_boundary_belongs_to_later_slot(self):
        seq = SessionBoundarySequence(0, (0.0, 40.0, 55.0, 60.0), (False, True, False))
        assert arrival_window(seq, 40.0).occupied_on_arrival is True
        assert arrival_window(seq, 55.0).occupied_on_arrival is False

    def test_clamp_beyond_horizon(self):
        seq = SessionBoundarySequence(0, (0.0, 40.0, 60.0), (False, True))
        w = arrival_window(seq, 75.0)
        assert (w.a, w.b, w.occupied_on_arrival) == (60.0, 60.0, False)
        w = arrival_window(seq, 60.0)
        assert (w.a, w.b, w.occupied_on_arrival) == (60.0, 60.0, False)

    def test_too_short_sequence_rejected(self):
        with pytest.raises(FleetChargeError):
            SessionBoundarySequence(0, (5.0,), ())

    def test_piecewise_constant_within_slot(self):
        seq = SessionBoundarySequence(0, (0.0, 20.0, 35.0, 60.0), (True, False, True))
        first = arrival_window(seq, 0.0)
        for t in np.linspace(0.0, 19.99, 23):
            assert arrival_window(seq, float(t)) == first

    def test_perfect_oracle_wait_equals_residual(self):
        # each predicted wait must equal the session time actually remaining
        intervals = [(100.0, 130.0), (200.0, 259.0), (400.0, 401.0), (520.0, 575.0)]
        oracle = perfect_oracle({0: intervals}, [0])
        for t in range(0, 700):
            seq = oracle.predict(0, float(t), 60.0)
            w = arrival_window(seq, float(t))
            implied = max(0.0, w.b - t) if w.occupied_on_arrival else 0.0
            residual = next((e - t for s, e in intervals if s <= t < e), 0.0)
            assert implied == pytest.approx(residual), f"minute {t}"


class TestAccuracy:
    def test_identical(self):
        s = np.array([True, False, True])
        assert predictor_accuracy(s, s) == 1.0

    def test_complementary(self):
        s = np.array([True, False, True])
        assert predictor_accuracy(s, ~s) == 0.0

    def test_hand_count(self):
        actual = np.zeros(60, dtype=bool)
        predicted = actual.copy()
        predicted[:11] = True
        assert predictor_accuracy(predicted, actual) == pytest.approx(49 / 60)

    def test_length_mismatch(self):
        with pytest.raises(FleetChargeError):
            predictor_accuracy([True], [True, False])


class TestExogenous:
    def test_deterministic_and_well_formed(self):
        grid = TimeGrid()
        a = generate_exogenous_sessions(3, list(range(9)), grid)
        b = generate_exogenous_sessions(3, list(range(9)), grid)
        assert a == b
        for sessions in a.values():
            last_end = grid.day_start
            for s, e in sessions:
                assert grid.day_start <= s < e <= grid.day_end
                assert s >= last_end
                last_end = e

    def test_series_round_trip(self):
        grid = TimeGrid()
        sessions = generate_exogenous_sessions(11, [0], grid)[0]
        series = occupancy_series(sessions, grid.day_start, int(grid.day_end - grid.day_start))
        assert intervals_from_series(series, grid.day_start) == sessions
