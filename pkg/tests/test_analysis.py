"""Tests for entropy traces, control metrics, entropy maps and map comparisons"""

import numpy as np
import pytest

from core.analysis import (EntropyMap, asymptotic_delta_s, control_metrics, delta_s_trace,
                           endpoint_sensitivity, entropy_map, hemisphere_grid, map_compare,
                           map_statistics, monotonicity_metric, panel, resonance_peak_ratio)
from core.bloch import eigenstate
from core.frames import CascadeGridConfig, build_cascade
from core.integrator import IntegratorConfig, evolve
from core.schedules import ConstantSchedule, LandauZenerSchedule, LZParams, delta_s_lz
from utils.common_imports import CascadeError, ConfigurationError, DomainError, GridMismatchError
from utils.export import read_csv, read_json


def _trace(schedule, span, n_max=1, points=4001, p0=None):
    cascade = build_cascade(schedule, span, n_max, CascadeGridConfig(points=points))
    start = eigenstate(schedule.field(span[0])).as_array() if p0 is None else p0
    traj = evolve(start, schedule, span, IntegratorConfig(output_times=cascade.grid))
    return traj, cascade


# ---------------------------------------------------------------------------
# Traces and scalar metrics
# ---------------------------------------------------------------------------

def test_monotonicity_metric():
    assert monotonicity_metric(np.array([0.0, 0.1, 0.3, 0.3])) == 0.0
    assert monotonicity_metric(np.array([1.0, 0.5, 0.0])) == 1.0
    assert monotonicity_metric(np.zeros(5)) == 0.0
    assert monotonicity_metric(np.array([0.0, 1.0, 0.5])) == pytest.approx(1.0 / 3.0)
    with pytest.raises(DomainError):
        monotonicity_metric(np.array([1.0]))


def test_static_schedule_produces_no_entropy():
    schedule = ConstantSchedule([0.0, 0.0, 2.0])
    traj, cascade = _trace(schedule, (0.0, 5.0), n_max=2, points=501)
    for frame in (0, 1, 2):
        trace = delta_s_trace(traj, cascade, frame)
        assert np.all(np.abs(trace.delta_s) < 1e-12)


def test_trace_starts_at_zero_and_matches_frame(tmp_path):
    traj, cascade = _trace(LandauZenerSchedule(0.89), (-10.0, 10.0), n_max=2)
    trace = delta_s_trace(traj, cascade, 2)
    assert trace.delta_s[0] == 0.0
    assert trace.frame == 2
    assert trace.times.shape == cascade.grid.shape

    path = trace.to_csv(str(tmp_path / "entropy_trace.csv"), {'epsilon': 0.89})
    metadata, header, table = read_csv(path)
    assert header == ['t', 'delta_s', 'frame']
    assert metadata['frame'] == '2'
    assert np.all(table[:, 2] == 2)


def test_asymptotic_and_peak_ratio_on_synthetic_trace():
    traj, cascade = _trace(ConstantSchedule([0.0, 0.0, 1.0]), (0.0, 1.0), points=101)
    trace = delta_s_trace(traj, cascade, 0)
    trace.delta_s = np.where(trace.times < 0.5, 2.0 * trace.times, 0.25)
    assert asymptotic_delta_s(trace) == pytest.approx(0.25)
    assert resonance_peak_ratio(trace) == pytest.approx(0.98 / 0.25)
    with pytest.raises(DomainError):
        asymptotic_delta_s(trace, fraction=0.0)


def test_control_metrics_for_static_eigenstate():
    traj, cascade = _trace(ConstantSchedule([0.3, 0.0, 1.0]), (0.0, 2.0), points=201)
    metrics = control_metrics(traj, cascade, 0)
    assert metrics.target_sign == -1
    assert np.allclose(metrics.fidelity, 1.0, atol=1e-12)
    assert np.allclose(metrics.purity, 1.0, atol=1e-12)
    assert np.allclose(metrics.dissipated_entropy, 0.0, atol=1e-12)
    summary = metrics.summary()
    assert summary['final_fidelity'] == pytest.approx(1.0)


def test_control_metrics_track_nonadiabatic_losses():
    traj, cascade = _trace(LandauZenerSchedule(0.89), (-10.0, 10.0))
    metrics = control_metrics(traj, cascade, 0, target_sign=-1)
    assert metrics.fidelity[0] == pytest.approx(1.0)
    assert metrics.summary()['min_fidelity'] < 1.0
    assert np.all(metrics.dissipated_entropy >= 0.0)


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

def test_hemisphere_grid_is_equal_area():
    cells = hemisphere_grid(2048)
    assert cells.shape == (2048, 3)
    assert np.allclose(np.linalg.norm(cells, axis=1), 1.0)
    assert np.all(cells[:, 2] > 0)
    assert np.argmax(cells[:, 2]) == 0
    assert np.mean(cells[:, 2]) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        hemisphere_grid(0)


def test_entropy_map_argument_checks():
    params = LZParams(0.89, -5.0, 5.0)
    with pytest.raises(DomainError):
        entropy_map(params, resolution=8)
    with pytest.raises(ConfigurationError):
        entropy_map(params, resolution=16, strategy='monte_carlo')


def test_entropy_map_strategies_agree():
    params = LZParams(0.89, -10.0, 10.0)
    shared = entropy_map(params, resolution=64)
    per_cell = entropy_map(params, resolution=64, strategy='per_cell', workers=4)
    assert shared.resolution == 64
    assert not shared.flags.any() and not per_cell.flags.any()
    assert np.allclose(shared.values, per_cell.values, atol=1e-8)


def test_entropy_map_is_deterministic(tmp_path):
    params = LZParams(0.89, -10.0, 10.0)
    first = entropy_map(params, resolution=32)
    second = entropy_map(params, resolution=32)
    assert np.array_equal(first.values, second.values)

    a = first.to_csv(str(tmp_path / "a.csv"))
    b = second.to_csv(str(tmp_path / "b.csv"))
    with open(a, 'rb') as fa, open(b, 'rb') as fb:
        assert fa.read() == fb.read()


def test_entropy_map_in_superadiabatic_frame():
    params = LZParams(0.89, -10.0, 10.0)
    emap = entropy_map(params, resolution=32, frame=1, grid_cfg=CascadeGridConfig(points=2001))
    assert emap.frame == 1
    assert np.all(np.isfinite(emap.values))


def test_entropy_map_rejects_mismatched_cascade():
    params = LZParams(0.89, -10.0, 10.0)
    cascade = build_cascade(LandauZenerSchedule(0.89), (-5.0, 5.0), 1, CascadeGridConfig(points=501))
    with pytest.raises(CascadeError):
        entropy_map(params, resolution=16, frame=1, cascade=cascade)


def test_entropy_map_sidecar(tmp_path):
    emap = entropy_map(LZParams(0.89, -10.0, 10.0), resolution=16)
    csv_path, json_path = emap.write(str(tmp_path / "entropy_map.csv"), str(tmp_path / "map_meta.json"))
    _, header, table = read_csv(csv_path)
    assert header == ['cell_index', 'cx', 'cy', 'cz', 'delta_s', 'flag']
    assert table[:, 0].tolist() == list(range(16))
    meta = read_json(json_path)
    assert meta['resolution'] == 16
    assert 'generated_at' in meta
    assert meta['summary']['north_pole_index'] == 0


def _synthetic_map(values, flags=None):
    n = len(values)
    return EntropyMap(hemisphere_grid(n), np.asarray(values, dtype=float),
                      np.zeros(n, dtype=bool) if flags is None else np.asarray(flags),
                      LZParams(0.34))


def test_map_compare_identical_and_flipped():
    values = np.linspace(-1.0, 1.0, 16)
    same = map_compare(_synthetic_map(values), _synthetic_map(values))
    assert same.pearson_r == 1.0
    assert same.sign_flip_fraction == 0.0
    assert same.max_abs_diff == 0.0

    flipped = map_compare(_synthetic_map(values), _synthetic_map(-values))
    assert flipped.pearson_r == pytest.approx(-1.0)
    assert flipped.sign_flip_fraction == 1.0


def test_map_compare_skips_flagged_cells():
    values = np.linspace(-1.0, 1.0, 16)
    flags = np.zeros(16, dtype=bool)
    flags[3] = True
    other = values.copy()
    other[3] = 100.0
    result = map_compare(_synthetic_map(values), _synthetic_map(other, flags))
    assert result.compared_cells == 15
    assert result.max_abs_diff == 0.0


def test_map_compare_requires_same_grid():
    with pytest.raises(GridMismatchError):
        map_compare(_synthetic_map(np.zeros(16)), _synthetic_map(np.zeros(32)))


def test_map_statistics():
    values = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0] * 2)
    stats = map_statistics(_synthetic_map(values))
    assert stats['hot_fraction'] == pytest.approx(10 / 16)
    assert stats['cold_fraction'] == pytest.approx(4 / 16)
    assert stats['north_pole_delta_s'] == -2.0
    assert stats['max'] == 5.0


def test_panel_layout():
    maps = panel(LZParams(0.89, -10.0, 10.0), epsilon_shift=0.01, time_shift=0.1, resolution=16)
    assert sorted(maps) == [(r, c) for r in range(3) for c in range(3)]
    assert maps[(0, 1)].params.epsilon == pytest.approx(0.89 * 0.99)
    assert maps[(2, 1)].params.epsilon == pytest.approx(0.89 * 1.01)
    assert maps[(1, 0)].params.t_i == pytest.approx(-10.1)
    assert maps[(1, 2)].params.t_i == pytest.approx(-9.9)
    assert maps[(1, 1)].params == LZParams(0.89, -10.0, 10.0)


def test_endpoint_sensitivity_rejects_negative_shift():
    with pytest.raises(DomainError):
        endpoint_sensitivity(LZParams(0.89, -10.0, 10.0), -0.1, resolution=16)


def test_endpoint_sensitivity_record():
    record = endpoint_sensitivity(LZParams(0.89, -10.0, 10.0), 0.0, resolution=16)
    assert record.t_i_shift.pearson_r == 1.0
    assert record.t_f_shift.sign_flip_fraction == 0.0
    assert set(record.to_dict()) == {'params', 'delta', 't_i_shift', 't_f_shift'}


# ---------------------------------------------------------------------------
# Full-sweep physics
# ---------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("epsilon", [0.34, 0.89, 5.0])
def test_asymptotic_entropy_matches_landau_zener(epsilon):
    traj, cascade = _trace(LandauZenerSchedule(epsilon), (-100.0, 100.0), points=20001)
    assert traj.norm_drift <= 1e-8
    reference = delta_s_lz(epsilon)
    trace = delta_s_trace(traj, cascade, 0)
    assert abs(asymptotic_delta_s(trace) - reference) <= max(0.1 * reference, 5e-4)


@pytest.mark.slow
@pytest.mark.parametrize("epsilon", [0.34, 0.89, 5.0])
def test_eigenstate_start_never_ends_below_zero(epsilon):
    traj, cascade = _trace(LandauZenerSchedule(epsilon), (-100.0, 100.0), n_max=4, points=20001)
    for frame in range(5):
        assert delta_s_trace(traj, cascade, frame).final >= -1e-6


@pytest.mark.slow
def test_resonance_peak_in_adiabatic_regime():
    traj, cascade = _trace(LandauZenerSchedule(0.34), (-100.0, 100.0), points=20001)
    trace = delta_s_trace(traj, cascade, 0)
    assert resonance_peak_ratio(trace) >= 2.0


@pytest.mark.slow
def test_optimal_frame_gives_most_monotonic_entropy():
    traj, cascade = _trace(LandauZenerSchedule(0.89), (-100.0, 100.0), n_max=4, points=20001)
    metric = {n: monotonicity_metric(delta_s_trace(traj, cascade, n)) for n in (0, 1, 2, 4)}
    assert metric[2] < metric[1]
    assert metric[2] < metric[4]
    assert metric[2] < metric[0]


@pytest.mark.slow
def test_adiabatic_map_has_hot_and_cold_regions():
    emap = entropy_map(LZParams(0.34), resolution=2048)
    stats = map_statistics(emap)
    assert stats['valid_cells'] == 2048
    assert stats['hot_fraction'] >= 0.1
    assert stats['cold_fraction'] >= 0.1


@pytest.mark.slow
def test_diabatic_map_pole_is_hot():
    emap = entropy_map(LZParams(5.0), resolution=2048)
    values = emap.values[emap.valid]
    assert emap.values[emap.north_pole_index] > np.percentile(values, 75)


@pytest.mark.slow
def test_start_time_matters_more_than_end_time():
    record = endpoint_sensitivity(LZParams(0.34), 0.1, resolution=2048)
    assert record.t_i_shift.sign_flip_fraction > 10 * record.t_f_shift.sign_flip_fraction
    assert record.t_f_shift.pearson_r > 0.999
