"""End-to-end tests for the qubitthermo command line"""

import os

import numpy as np
import pytest

from cli_main import build_parser, run
from config.settings import RunConfig
from utils.export import read_csv, read_json, write_csv

RECIPE_DIR = os.path.join(os.path.dirname(__file__), '..', 'config', 'recipes')

SMALL_RUN = """
[run]
scenario = sweep

[schedule]
epsilon = 0.89
t_start = {t_start}
t_end = 10.0

[integrator]
output_points = 201

[cascade]
n_max = 2
grid_points = 2001
frames = 0, 1, 2

[map]
resolution = 16
panel = {panel}
"""


def _config(tmp_path, name="run.ini", t_start=-10.0, panel=False):
    path = tmp_path / name
    path.write_text(SMALL_RUN.format(t_start=t_start, panel=str(panel).lower()), encoding='utf-8')
    return str(path)


def _run(tmp_path, *argv, out="out", **config_kwargs):
    directory = tmp_path / out
    code = run(list(argv) + ['--config', _config(tmp_path, **config_kwargs), '--out', str(directory)])
    return code, directory


# ---------------------------------------------------------------------------
# Parsing and usage errors
# ---------------------------------------------------------------------------

def test_parser_reads_frame_lists():
    args = build_parser().parse_args(['frames', '--frames', '0,1,4', '--epsilon', '0.89'])
    assert args.scenario == 'frames'
    assert args.frames == [0, 1, 4]
    assert args.epsilon == 0.89


@pytest.mark.parametrize("argv", [['--frames', 'a,b'], ['--bogus'], ['plot']])
def test_malformed_flags_exit_with_usage_code(argv):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(argv)
    assert info.value.code == 2


def test_missing_config_prints_usage_and_returns_usage_code(tmp_path, capsys):
    assert run(['--config', str(tmp_path / "missing.ini")]) == 2
    err = capsys.readouterr().err
    assert "qubitthermo: error: Configuration file not found" in err
    assert 0 <= err.find("usage: qubitthermo") < err.index("qubitthermo: error:")


def test_invalid_value_returns_usage_code(tmp_path):
    code, _ = _run(tmp_path, '--epsilon', '-1')
    assert code == 2


def test_table_shorter_than_span_is_a_numerical_failure(tmp_path, capsys):
    table = write_csv(str(tmp_path / "drive.csv"), ['t', 'hx', 'hy', 'hz'],
                      ((t, 2.0, 0.0, 2.0 * t) for t in np.linspace(-1.0, 1.0, 21)))
    config = tmp_path / "tabulated.ini"
    config.write_text(f"[schedule]\nkind = tabulated\ntable = {os.path.basename(table)}\n"
                      "t_start = -10\nt_end = 10\n", encoding='utf-8')
    assert run(['--config', str(config), '--out', str(tmp_path / "out")]) == 1
    assert "usage:" not in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def test_sweep_scenario(tmp_path):
    code, out = _run(tmp_path)
    assert code == 0
    assert sorted(os.listdir(out)) == ['entropy_trace.csv', 'summary.json', 'trajectory.csv']

    summary = read_json(str(out / "summary.json"))
    assert summary['scenario'] == 'sweep'
    assert summary['outputs'] == ['entropy_trace.csv', 'trajectory.csv']
    assert summary['config']['schedule']['epsilon'] == 0.89
    assert 0.0 <= summary['monotonicity'] <= 1.0
    assert summary['norm_drift'] <= 1e-8
    assert summary['p_lz'] == pytest.approx(np.exp(-np.pi / 0.89))
    assert 0.0 <= summary['transition_probability'] <= 1.0
    assert 'final_fidelity' in summary['control']

    metadata, header, table = read_csv(str(out / "trajectory.csv"))
    assert header == ['t', 'Px', 'Py', 'Pz', '|P|']
    assert table.shape == (201, 5)
    assert metadata['scenario'] == 'sweep'

    _, header, trace = read_csv(str(out / "entropy_trace.csv"))
    assert header == ['t', 'delta_s', 'frame']
    assert trace.shape[0] == 2001
    assert trace[0, 1] == 0.0


def test_sweep_outputs_are_deterministic(tmp_path):
    _, first = _run(tmp_path, out="first")
    _, second = _run(tmp_path, out="second")
    for name in ('trajectory.csv', 'entropy_trace.csv'):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_frames_scenario_on_static_field(tmp_path):
    out = tmp_path / "static"
    recipe = os.path.join(RECIPE_DIR, "frames_static.ini")
    assert run(['--config', recipe, '--out', str(out)]) == 0

    for n in (0, 1, 2):
        _, _, table = read_csv(str(out / f"entropy_trace_frame{n}.csv"))
        assert np.all(np.abs(table[:, 1]) < 1e-12)
    assert (out / "cascade_frame2.csv").exists()

    summary = read_json(str(out / "summary.json"))
    assert set(summary['frames']) == {'0', '1', '2'}
    assert summary['q']['n_built'] == 2
    assert summary['q']['frames'][0]['q_min'] == "inf"
    assert summary['most_monotone_frame'] == 0


def test_qfactor_scenario(tmp_path):
    code, out = _run(tmp_path, 'qfactor')
    assert code == 0
    _, header, table = read_csv(str(out / "qfactor.csv"))
    assert header == ['t', 'q1', 'q2']
    assert table.shape == (2001, 3)
    summary = read_json(str(out / "summary.json"))
    assert summary['q']['n_star'] in (1, 2)
    assert summary['cascade']['grid_points'] == 2001


def test_map_scenario(tmp_path):
    code, out = _run(tmp_path, 'map')
    assert code == 0
    _, header, table = read_csv(str(out / "entropy_map.csv"))
    assert header[0] == 'cell_index'
    assert table.shape == (16, 6)
    meta = read_json(str(out / "map_meta.json"))
    assert meta['resolution'] == 16
    assert 'north_pole_delta_s' in meta['summary']


def test_map_panel_scenario(tmp_path):
    code, out = _run(tmp_path, 'map', panel=True)
    assert code == 0
    maps = sorted(name for name in os.listdir(out) if name.startswith('entropy_map_'))
    assert len(maps) == 9
    assert 'entropy_map_r1c1.csv' in maps
    summary = read_json(str(out / "summary.json"))
    assert summary['panel']['r0c0']['params']['t_i'] == pytest.approx(-10.1)


def test_map_compare_scenario(tmp_path):
    other = _config(tmp_path, name="shifted.ini", t_start=-9.9)
    code, out = _run(tmp_path, 'map', '--compare', other)
    assert code == 0
    comparison = read_json(str(out / "map_compare.json"))
    assert comparison['other']['t_i'] == pytest.approx(-9.9)
    assert comparison['comparison']['compared_cells'] == 16
    assert -1.0 <= comparison['comparison']['pearson_r'] <= 1.0


def test_sensitivity_scenario(tmp_path):
    code, out = _run(tmp_path, 'sensitivity')
    assert code == 0
    record = read_json(str(out / "sensitivity.json"))
    assert record['delta'] == pytest.approx(0.1)
    assert record['params']['t_f'] == 10.0
    assert 0.0 <= record['t_i_shift']['sign_flip_fraction'] <= 1.0


def test_dump_config_reproduces_run(tmp_path):
    dump = tmp_path / "resolved.ini"
    code, out = _run(tmp_path, '--epsilon', '0.5', '--dump-config', str(dump))
    assert code == 0
    resolved = RunConfig.load_from_file(str(dump))
    assert resolved.schedule.epsilon == 0.5
    assert resolved.output.directory == str(out)
    assert run(['--config', str(dump)]) == 0
