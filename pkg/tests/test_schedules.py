"""Tests for drive schedules and the Landau-Zener closed forms"""

import math

import numpy as np
import pytest

from config.settings import LZSettings
from core.schedules import (SCHEDULE_REGISTRY, ConstantSchedule, LandauZenerSchedule, LZParams,
                            TabulatedSchedule, TimeReversedSchedule, build_schedule,
                            check_derivative, delta_s_lz, energy_levels, lz_field, p_lz,
                            register_schedule)
from utils.common_imports import ConfigurationError, DomainError, LN2
from utils.export import write_csv


def test_lz_field_and_levels():
    params = LZParams(0.5)
    assert tuple(lz_field(3.0, params)) == (2.0, 0.0, 3.0)
    assert energy_levels(0.0, params) == (2.0, -2.0)
    upper, lower = energy_levels(4.0, params)
    assert upper == pytest.approx(2.0 * math.sqrt(5.0))
    assert lower == -upper


def test_p_lz_values():
    assert p_lz(0.34) == pytest.approx(math.exp(-math.pi / 0.34))
    assert p_lz(1e6) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(DomainError):
        p_lz(0.0)


def test_delta_s_lz_anchor():
    assert 8e-4 <= delta_s_lz(0.34) <= 1.2e-3


def test_delta_s_lz_diabatic_branch():
    # p_LZ > 1/2 beyond epsilon = pi / ln 2
    value = delta_s_lz(5.0)
    assert 0.6 < value < LN2
    assert delta_s_lz(math.pi / LN2) == pytest.approx(LN2)


def test_lz_params_validation():
    with pytest.raises(DomainError):
        LZParams(-1.0)
    with pytest.raises(DomainError):
        LZParams(0.3, 5.0, 5.0)
    shifted = LZParams(0.34).shifted(epsilon_factor=1.01, t_i_shift=0.1)
    assert shifted.epsilon == pytest.approx(0.3434)
    assert shifted.span == pytest.approx((-99.9, 100.0))
    assert shifted.duration == pytest.approx(199.9)


def test_landau_zener_schedule_shapes():
    schedule = LandauZenerSchedule(0.89)
    assert schedule.field(1.0).shape == (3,)
    assert schedule.field(np.linspace(-1, 1, 7)).shape == (7, 3)
    assert schedule.field(-2.0) == pytest.approx([2.0, 0.0, -3.56])
    assert schedule.derivative(10.0) == pytest.approx([0.0, 0.0, 1.78])
    assert schedule.has_derivative
    assert not schedule.is_static()


def test_landau_zener_rejects_bad_epsilon():
    with pytest.raises(DomainError):
        LandauZenerSchedule(0.0)


def test_check_derivative_on_analytic_schedules():
    assert check_derivative(LandauZenerSchedule(0.34), (-100.0, 100.0)) < 1e-6
    assert check_derivative(ConstantSchedule([0.0, 0.0, 2.0]), (-1.0, 1.0)) == 0.0


def test_constant_schedule():
    schedule = ConstantSchedule([1.0, -2.0, 0.5])
    assert schedule.is_static()
    assert schedule.field(np.array([0.0, 5.0])) == pytest.approx(np.array([[1.0, -2.0, 0.5]] * 2))
    assert np.all(schedule.derivative(np.linspace(0, 1, 4)) == 0.0)


def test_tabulated_schedule_reproduces_linear_sweep():
    times = np.linspace(-5.0, 5.0, 21)
    fields = LandauZenerSchedule(0.5).field(times)
    schedule = TabulatedSchedule(times, fields)
    query = np.array([-4.3, 0.0, 2.71])
    assert schedule.field(query) == pytest.approx(LandauZenerSchedule(0.5).field(query))
    assert schedule.derivative(1.3) == pytest.approx([0.0, 0.0, 1.0])
    assert check_derivative(schedule, schedule.span) < 1e-6


def test_tabulated_schedule_span_and_validation():
    times = np.linspace(0.0, 1.0, 5)
    schedule = TabulatedSchedule(times, np.ones((5, 3)))
    schedule.check_span((0.0, 1.0))
    with pytest.raises(DomainError):
        schedule.check_span((-0.5, 1.0))
    with pytest.raises(DomainError):
        TabulatedSchedule(times[:3], np.ones((3, 3)))
    with pytest.raises(DomainError):
        TabulatedSchedule(times[::-1], np.ones((5, 3)))


def test_tabulated_schedule_from_csv(tmp_path):
    times = np.linspace(-1.0, 1.0, 9)
    path = write_csv(str(tmp_path / "drive.csv"), ['t', 'hx', 'hy', 'hz'],
                     ((t, 2.0, 0.0, 2.0 * t) for t in times))
    schedule = TabulatedSchedule.from_csv(path)
    assert schedule.span == (-1.0, 1.0)
    assert schedule.field(0.25) == pytest.approx([2.0, 0.0, 0.5])


def test_tabulated_schedule_from_csv_rejects_wrong_columns(tmp_path):
    path = write_csv(str(tmp_path / "drive.csv"), ['t', 'a', 'b', 'c'], [(0, 1, 2, 3)] * 4)
    with pytest.raises(ConfigurationError):
        TabulatedSchedule.from_csv(path)


def test_time_reversed_schedule():
    base = LandauZenerSchedule(0.7)
    reversed_ = TimeReversedSchedule(base)
    s = np.array([-3.0, 0.5])
    assert reversed_.field(s) == pytest.approx(-base.field(-s))
    assert reversed_.derivative(2.0) == pytest.approx(base.derivative(-2.0))
    assert check_derivative(reversed_, (-10.0, 10.0)) < 1e-6


def test_build_schedule_from_settings():
    schedule = build_schedule(LZSettings(epsilon=0.89))
    assert isinstance(schedule, LandauZenerSchedule)
    assert schedule.params()['epsilon'] == 0.89

    static = build_schedule(LZSettings(kind='constant', static_field=[0.0, 0.0, 3.0]))
    assert static.is_static()


def test_build_schedule_unknown_kind():
    with pytest.raises(ConfigurationError):
        build_schedule(LZSettings(kind='sinusoidal'))


def test_register_schedule(monkeypatch):
    monkeypatch.setitem(SCHEDULE_REGISTRY, 'flat', lambda s: ConstantSchedule([0.0, 0.0, 1.0]))
    assert LZSettings(kind='flat').validate() == []
    assert build_schedule(LZSettings(kind='flat')).is_static()
    register_schedule('flat', lambda s: ConstantSchedule([0.0, 1.0, 0.0]))
    assert build_schedule(LZSettings(kind='flat')).field(0.0) == pytest.approx([0.0, 1.0, 0.0])
