import math

import numpy as np
import pytest

from fleetcharge.core import (
    ConfigError,
    OutOfRangeError,
    PriceSchedule,
    ScenarioConfig,
    TimeGrid,
    VehicleSpec,
    epoch_of,
    parse_clock,
    travel,
)


class TestTimeGrid:
    def test_default_epoch_count(self):
        grid = TimeGrid()
        assert grid.day_start == 390 and grid.day_end == 1320
        assert grid.epoch_count == 31

    def test_epoch_of_boundary(self):
        grid = TimeGrid()
        assert epoch_of(parse_clock("06:30"), grid) == 1

    def test_epoch_of_interior(self):
        grid = TimeGrid()
        assert epoch_of(parse_clock("06:59"), grid) == 1
        assert epoch_of(parse_clock("07:00"), grid) == 2

    def test_day_end_exclusive(self):
        grid = TimeGrid()
        with pytest.raises(OutOfRangeError):
            epoch_of(parse_clock("22:00"), grid)
        with pytest.raises(OutOfRangeError):
            epoch_of(parse_clock("06:00"), grid)

    def test_epoch_interval_convention(self):
        grid = TimeGrid()
        for h in range(1, grid.epoch_count + 1):
            assert epoch_of(grid.epoch_start(h), grid) == h

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            TimeGrid(day_start=600, day_end=500)
        with pytest.raises(ConfigError):
            TimeGrid(epoch_minutes=0)


class TestTravel:
    def test_identity(self):
        assert travel((2.0, 3.0), (2.0, 3.0), 65.0) == (0.0, 0.0)

    def test_345_triangle(self):
        dist, minutes = travel((0.0, 0.0), (3.0, 4.0), 60.0)
        assert dist == pytest.approx(5.0)
        assert minutes == pytest.approx(5.0)

    def test_table_speed(self):
        dist, minutes = travel((0.0, 0.0), (0.0, 13.0), 65.0)
        assert dist == pytest.approx(13.0)
        assert minutes == pytest.approx(12.0)

    def test_symmetry_and_zero_iff_equal(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = tuple(rng.uniform(0, 20, 2))
            b = tuple(rng.uniform(0, 20, 2))
            d_ab, t_ab = travel(a, b, 65.0)
            d_ba, t_ba = travel(b, a, 65.0)
            assert d_ab == pytest.approx(d_ba)
            assert t_ab == pytest.approx(t_ba)
            assert (d_ab == 0) == (a == b)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            a, b, c = (tuple(rng.uniform(0, 20, 2)) for _ in range(3))
            assert travel(a, c, 65.0)[0] <= travel(a, b, 65.0)[0] + travel(b, c, 65.0)[0] + 1e-12


class TestSpecs:
    def test_vehicle_defaults_match_table(self):
        v = VehicleSpec()
        assert v.battery_kwh == 62.0
        assert v.e_min == pytest.approx(0.2 * 62)
        assert v.e_max == pytest.approx(0.8 * 62)
        assert v.consumption_kwh_per_km == 0.204
        assert v.seats == 4 and v.speed_kmh == 65.0

    def test_vehicle_bounds_enforced(self):
        with pytest.raises(ConfigError):
            VehicleSpec(e_min=50.0, e_max=40.0)
        with pytest.raises(ConfigError):
            VehicleSpec(e_init=5.0)

    def test_price_schedule(self):
        p = PriceSchedule.flat(0.25, 31)
        assert len(p.per_epoch) == 31 and p.fixed_cost == 0.3
        assert p.price(1) == 0.25
        with pytest.raises(ConfigError):
            PriceSchedule(per_epoch=(-0.1,))


class TestScenarioConfig:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert cfg.fleet_size == 40
        assert cfg.customer_count == 800
        assert len(cfg.chargers) == 9
        assert len({c.location for c in cfg.chargers}) == 6
        assert cfg.grid.epoch_count == 31
        assert cfg.theta1 == 0.025 and cfg.theta2 == 0.5
        assert cfg.big_m == cfg.u_max
        assert cfg.big_m1 == 62.0
        assert cfg.big_m2 == 930.0

    def test_round_trip(self, tmp_path):
        cfg = ScenarioConfig(seed=42, policy="NP", customer_count=10)
        path = tmp_path / "scenario.json"
        cfg.to_file(path)
        loaded = ScenarioConfig.from_file(path)
        assert loaded.to_dict() == cfg.to_dict()

    def test_rejects_bad_policy(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(policy="nope")

    def test_price_length_must_match_grid(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(prices=PriceSchedule.flat(0.25, 5))
