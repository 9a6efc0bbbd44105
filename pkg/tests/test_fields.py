import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trustfield.errors import ConfigError, DataError, FormatError, RangeError
from trustfield.fields import (GridSpec, ScalarField, TrustTracePoint, TrustTraces, bin_index,
                               compute_density_field, compute_flow_field,
                               compute_speed_field, compute_trust_field, export_field_csv,
                               export_heatmap, heatmap_pixels, read_field_csv, read_heatmap,
                               sample_counts)
from trustfield.trajdata import SynthConfig, TrajectoryDataset, generate_synthetic, make_trace


def dwell(vid=1, pos=20.0, t0=0.0, t1=10.0, speed=0.0, period=0.1):
    n = int(round((t1 - t0) / period))
    times = np.round(t0 + np.arange(n) * period, 9)
    return make_trace(vid, times, np.full(n, pos), np.full(n, speed))


def test_grid_counts():
    g = GridSpec(2080.0, 900.0)
    assert (g.n_x, g.n_t) == (26, 60)
    assert GridSpec(100.0, 10.0, 40.0, 3.0).shape == (3, 4)
    assert GridSpec(0.0, 0.0).shape == (1, 1)
    with pytest.raises(ConfigError):
        GridSpec(10.0, 10.0, 0.0, 1.0)


def test_bin_index_examples():
    g = GridSpec(200.0, 100.0, 40.0, 10.0)
    assert bin_index(100.0, 5.0, g) == (2, 0)
    assert bin_index(200.0, 100.0, g) == (g.n_x - 1, g.n_t - 1)
    assert bin_index(0.0, 0.0, g) == (0, 0)
    for bad in ((-0.1, 1.0), (200.1, 1.0), (1.0, 100.5), (math.nan, 1.0)):
        with pytest.raises(RangeError):
            bin_index(*bad, g)


@settings(max_examples=200, deadline=None)
@given(L=st.floats(1, 5000), T=st.floats(1, 2000), dx=st.floats(0.5, 500), dt=st.floats(0.5, 100),
       u=st.floats(0, 1), v=st.floats(0, 1))
def test_bin_index_total(L, T, dx, dt, u, v):
    g = GridSpec(L, T, dx, dt)
    i, j = bin_index(u * L, v * T, g)
    assert 0 <= i < g.n_x and 0 <= j < g.n_t


def test_density_single_dwell():
    ds = TrajectoryDataset({1: dwell()}, 40.0, 10.0)
    f = compute_density_field(ds, GridSpec(40.0, 10.0, 40.0, 10.0))
    assert f.values[0, 0] == pytest.approx(10 / (40 * 10))
    assert f.values[0, 0] == pytest.approx(0.025)


def test_density_empty_and_linear():
    g = GridSpec(400.0, 60.0, 40.0, 10.0)
    empty = compute_density_field(TrajectoryDataset({}, 400.0, 60.0), g)
    assert not empty.present.any()
    ds = generate_synthetic(SynthConfig(n_vehicles=5, duration_s=60, corridor_length_ft=400,
                                        seed=1))
    twin = {vid + 100: make_trace(vid + 100, tr.times, tr.positions, tr.speeds)
            for vid, tr in ds.traces.items()}
    doubled = TrajectoryDataset({**ds.traces, **twin}, 400.0, 60.0)
    a, b = compute_density_field(ds, g), compute_density_field(doubled, g)
    assert np.array_equal(a.present, b.present)
    assert np.allclose(b.values, 2 * a.values, rtol=0, atol=1e-15)


def test_speed_examples():
    g = GridSpec(100.0, 10.0, 100.0, 10.0)
    one = TrajectoryDataset({1: dwell(speed=50.0)}, 100.0, 10.0)
    assert compute_speed_field(one, g).values[0, 0] == 50.0
    two = TrajectoryDataset({1: dwell(1, speed=40.0), 2: dwell(2, speed=60.0)}, 100.0, 10.0)
    assert compute_speed_field(two, g).values[0, 0] == pytest.approx(50.0)
    still = TrajectoryDataset({1: dwell(speed=0.0)}, 100.0, 10.0)
    f = compute_speed_field(still, g)
    assert f.present[0, 0] and f.values[0, 0] == 0.0


def test_flow_examples():
    g = GridSpec(80.0, 20.0, 40.0, 10.0)
    d = ScalarField(g, np.array([[0.025, 0.0], [0.1, 0.2]]), np.array([[True, False], [True, True]]),
                    "density")
    v = ScalarField(g, np.array([[50.0, 3.0], [0.0, 2.0]]), np.ones((2, 2), bool), "speed")
    f = compute_flow_field(d, v)
    assert f.values[0, 0] == pytest.approx(1.25)
    assert not f.present[0, 1]
    assert f.values[1, 0] == 0.0 and f.present[1, 0]
    with pytest.raises(FormatError):
        compute_flow_field(d, ScalarField(GridSpec(80.0, 30.0, 40.0, 10.0), np.zeros((2, 3)),
                                          np.ones((2, 3), bool), "speed"))
    with pytest.raises(ConfigError):
        compute_flow_field(v, d)


def test_trust_field_means():
    g = GridSpec(100.0, 10.0, 100.0, 10.0)
    pts = [TrustTracePoint(1, 1.0, 5.0, 0.2), TrustTracePoint(2, 2.0, 5.0, 0.8)]
    assert compute_trust_field(pts, g).values[0, 0] == pytest.approx(0.5)
    single = compute_trust_field([TrustTracePoint(1, 1.0, 5.0, 0.3141592653589793)], g)
    assert single.values[0, 0] == 0.3141592653589793


def test_trust_field_constant_is_exact():
    g = GridSpec(2080.0, 900.0)
    rng = np.random.default_rng(0)
    n = 5000
    tr = TrustTraces(rng.integers(1, 50, n), rng.uniform(0, 900, n), rng.uniform(0, 2080, n),
                     np.full(n, 0.7))
    f = compute_trust_field(tr, g)
    assert np.all(f.values[f.present] == 0.7)


def test_trust_field_per_vehicle_switch():
    g = GridSpec(100.0, 10.0, 100.0, 10.0)
    pts = [TrustTracePoint(1, t, 5.0, 0.0) for t in (1.0, 2.0, 3.0)] + \
          [TrustTracePoint(2, 4.0, 5.0, 1.0)]
    assert compute_trust_field(pts, g).values[0, 0] == pytest.approx(0.25)
    assert compute_trust_field(pts, g, per_vehicle=True).values[0, 0] == pytest.approx(0.5)


def test_trust_field_rejects_bad_values():
    with pytest.raises(ValueError):
        compute_trust_field(TrustTraces(np.array([1]), np.array([0.0]), np.array([0.0]),
                                        np.array([1.5])), GridSpec(1.0, 1.0))


def test_partition_and_flow_identity():
    ds = generate_synthetic(SynthConfig(n_vehicles=40, duration_s=300, seed=8))
    g = GridSpec.for_dataset(ds)
    assert sample_counts(ds, g).sum() == ds.n_samples
    d, v = compute_density_field(ds, g), compute_speed_field(ds, g)
    f = compute_flow_field(d, v)
    assert np.array_equal(f.values[f.present], d.values[f.present] * v.values[f.present])


def test_refinement_consistency():
    ds = generate_synthetic(SynthConfig(n_vehicles=40, duration_s=300, seed=8))
    coarse = compute_density_field(ds, GridSpec(2080.0, 300.0, 80.0, 15.0))
    fine = compute_density_field(ds, GridSpec(2080.0, 300.0, 40.0, 7.5))
    blocks = fine.values.reshape(coarse.grid.n_x, 2, coarse.grid.n_t, 2).mean(axis=(1, 3))
    assert np.max(np.abs(blocks - coarse.values)) <= 1e-9


# -- export


def small_field():
    g = GridSpec(80.0, 20.0, 40.0, 10.0)
    return ScalarField(g, np.array([[0.1, 0.0], [1 / 3, 0.9]]),
                       np.array([[True, False], [True, True]]), "trust")


def test_csv_layout_and_round_trip(tmp_path):
    f = small_field()
    p = export_field_csv(f, tmp_path / "trust_field.csv")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("#")
    for key in ("quantity=trust", "dx_ft=40.0", "dt_s=10.0", "L_ft=80.0", "T_s=20.0"):
        assert key in lines[0]
    assert len(lines) == 3
    assert sum(c == "nan" for line in lines[1:] for c in line.split(",")) == 1
    back = read_field_csv(p)
    assert back.grid == f.grid and back.quantity == "trust"
    assert np.array_equal(back.present, f.present)
    assert np.max(np.abs(back.values - f.values)[f.present]) <= 1e-9


def test_csv_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("0.1,0.2\n")
    with pytest.raises(FormatError):
        read_field_csv(p)
    with pytest.raises(DataError):
        export_field_csv(small_field(), tmp_path / "missing" / "x.csv")


def test_heatmap_constant_and_two_valued(tmp_path):
    g = GridSpec(80.0, 30.0, 40.0, 10.0)
    const = ScalarField(g, np.full((2, 3), 0.4), np.ones((2, 3), bool), "density")
    pix = read_heatmap(export_heatmap(const, tmp_path / "c.pgm"))
    assert pix.shape == (2, 3) and np.all(pix == 128)
    two = ScalarField(g, np.array([[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]), np.ones((2, 3), bool),
                      "trust")
    for binary in (False, True):
        pix = read_heatmap(export_heatmap(two, tmp_path / f"t{binary}.pgm", binary=binary))
        assert set(np.unique(pix)) == {0, 255}
        # position increases upward: the last position bin is the top row
        assert list(pix[0]) == [255, 255, 0] and list(pix[1]) == [0, 255, 0]


def test_heatmap_absent_and_empty():
    f = small_field()
    assert heatmap_pixels(f)[1, 1] == 0
    empty = ScalarField(f.grid, np.zeros((2, 2)), np.zeros((2, 2), bool), "trust")
    with pytest.raises(DataError):
        heatmap_pixels(empty)
