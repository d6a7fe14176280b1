"""
Tests del programa de tomografía en reposo y de los estimadores
"""

import numpy as np
import pytest

from idle_tomography import (DriveSpec, IdleTomography, MissingScheduleError, PAIR_SOURCE, ScheduleError,
                             analytic_summary, estimate_drive, estimate_weight2, fit_slope,
                             generate_experiments, group_by_drive, summarize_counts)
from noise_simulator import (CountRecord, QubitRates, batch_params, effective_pair_rate, effective_rates,
                             generate_fleet_model)
from run_config import DriftConfig, IdtConfig, NoiseConfig, SAMPLING, derive_seed
from topology import pattern_topology


REFERENCE_RATES = QubitRates(h=(0.01, -0.005, 0.015), s=(0.004, 0.006, 0.008), a=(0.005, -0.004, 0.006))


def truth_of(params, estimate):
    """Valor verdadero de la celda estimada"""
    drive = DriveSpec.from_key(estimate.drive)
    if estimate.source == PAIR_SOURCE:
        return effective_pair_rate(params, drive, estimate.target)
    kind, axis = estimate.source.split("_")
    rates = effective_rates(params, drive, estimate.target[0])
    return {"hamiltonian": rates.h, "stochastic": rates.s, "affine": rates.a}[kind]["xyz".index(axis)]


# Programa de experimentos

def test_l5_schedule_size(l5_device):
    specs = generate_experiments(l5_device, IdtConfig())
    assert len(specs) == 11 * 12 * 4
    assert len({spec.circuit_id for spec in specs}) == len(specs)
    assert all(spec.spectators for spec in specs)


def test_single_qubit_pattern_only_runs_controls():
    specs = generate_experiments(pattern_topology("P1"), IdtConfig())
    assert len(specs) == 2 * 12 * 4
    assert {spec.drive.key for spec in specs} == {"control_single", "control_pair"}


def test_settings_per_drive_and_length(l5_device):
    specs = [s for s in generate_experiments(l5_device, IdtConfig()) if s.drive.key == "pair:1-2"]
    settings = {(spec.setting[0], spec.setting[1]) for spec in specs if spec.idle_length == 4}
    assert len(settings) == 12
    assert ("-x", "x") in settings and ("+y", "z") in settings
    assert specs[0].spectators == (0, 3, 4)
    assert specs[0].couplings == ((3, 4),)


def test_empty_idle_lengths_rejected(l5_device):
    with pytest.raises(ScheduleError):
        generate_experiments(l5_device, IdtConfig(idle_lengths=()))


# Ajuste lineal

def test_fit_slope_recovers_exact_line():
    fit = fit_slope([(s, 3.0 + 0.5 * s, 1.0) for s in (1, 2, 4, 8)])
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(3.0, abs=1e-12)


def test_fit_slope_standard_error_uses_weights():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    weights = np.array([4.0, 1.0, 2.0, 0.5])
    fit = fit_slope([(x, -0.1 * x, w) for x, w in zip(xs, weights)])
    mean = np.sum(weights * xs) / np.sum(weights)
    expected = np.sqrt(1.0 / np.sum(weights * (xs - mean) ** 2))
    assert fit.slope_std_err == pytest.approx(expected, rel=1e-9)


def test_fit_slope_requires_two_lengths():
    with pytest.raises(ScheduleError):
        fit_slope([(4, 0.1, 1.0), (4, 0.2, 1.0)])


# Estimadores con momentos exactos

def test_noiseless_device_estimates_zero(uniform_params, l5_device):
    params = uniform_params(l5_device)
    summaries = [analytic_summary(params, spec) for spec in generate_experiments(l5_device, IdtConfig())]
    estimates = IdleTomography(IdtConfig(analytic=True)).estimate_suite(summaries)
    assert len(estimates) == 404
    assert max(abs(e.value) for e in estimates) < 1e-10


def test_pair_ratio_isolates_joint_events(uniform_params, l5_device):
    params = uniform_params(l5_device, REFERENCE_RATES, pair_lambda=0.002)
    for spec in generate_experiments(l5_device, IdtConfig()):
        if spec.drive.key != "single:0" or spec.setting[:2] != ("+z", "z"):
            continue
        summary = analytic_summary(params, spec)
        c = (1 - 2 * 0.002) ** spec.idle_length
        ratio = summary.means[2] * summary.means[3] / summary.pair_products[(2, 3)]
        assert ratio == pytest.approx(c ** 2, rel=1e-12)


@pytest.mark.parametrize("drive_key", ["single:0", "pair:1-2", "control_single", "control_pair"])
def test_analytic_recovery_of_every_rate(uniform_params, l5_device, drive_key):
    params = uniform_params(l5_device, REFERENCE_RATES, pair_lambda=0.002)
    specs = [s for s in generate_experiments(l5_device, IdtConfig()) if s.drive.key == drive_key]
    estimates = estimate_drive([analytic_summary(params, spec) for spec in specs])

    assert estimates
    for estimate in estimates:
        truth = truth_of(params, estimate)
        assert estimate.value == pytest.approx(truth, rel=0.02, abs=1e-5), estimate.cell


def test_fleet_rates_recovered_without_shot_noise(fleet):
    device = fleet.device("d6")
    model = generate_fleet_model(fleet, NoiseConfig(), 7)[6]
    params = batch_params(model, 0, DriftConfig(), 7)
    tomography = IdleTomography(IdtConfig(analytic=True))
    _, summaries = tomography.measure(params, tomography.experiments(device), lambda i: i)
    estimates = tomography.estimate_suite(summaries)

    errors = np.array([abs(e.value - truth_of(params, e)) for e in estimates])
    assert np.median(errors) < 2e-4
    assert errors.max() < 2e-3


def test_fleet_relative_error_without_shot_noise(fleet):
    models = generate_fleet_model(fleet, NoiseConfig(), 7)
    tomography = IdleTomography(IdtConfig(analytic=True))
    checked = 0
    for device, model in zip(fleet.devices, models):
        params = batch_params(model, 0, DriftConfig(), 7)
        _, summaries = tomography.measure(params, tomography.experiments(device), lambda i: i)
        for estimate in tomography.estimate_suite(summaries):
            truth = truth_of(params, estimate)
            if abs(truth) >= 1e-3:
                assert abs(estimate.value - truth) <= 0.10 * abs(truth), (device.device_id, estimate.cell)
                checked += 1
    assert checked > 1000


@pytest.mark.slow
def test_recovery_over_seeded_trials(fleet):
    models = generate_fleet_model(fleet, NoiseConfig(), 7)
    tomography = IdleTomography(IdtConfig())
    errors = {"hamiltonian": [], "stochastic": [], "affine": [], PAIR_SOURCE: []}
    for trial in range(100):
        index = trial % len(fleet.devices)
        params = batch_params(models[index], trial, DriftConfig(), 7)
        _, summaries = tomography.measure(params, tomography.experiments(fleet.devices[index]),
                                          lambda i: derive_seed(99, SAMPLING, trial, i))
        for estimate in tomography.estimate_suite(summaries):
            kind = estimate.source.split("_")[0] if estimate.source != PAIR_SOURCE else PAIR_SOURCE
            errors[kind].append(abs(estimate.value - truth_of(params, estimate)))

    for kind in ("hamiltonian", "stochastic", "affine"):
        assert np.median(errors[kind]) <= 2e-3, kind
    assert np.median(errors[PAIR_SOURCE]) <= 1.5e-3


def test_shot_noise_errors_stay_small(fleet):
    device = fleet.device("d0")
    model = generate_fleet_model(fleet, NoiseConfig(), 7)[0]
    tomography = IdleTomography(IdtConfig())
    weight1, pairs = [], []
    for trial in range(5):
        params = batch_params(model, trial, DriftConfig(), 7)
        specs = [s for s in tomography.experiments(device) if s.drive.key == "control_single"]
        _, summaries = tomography.measure(params, specs, lambda i: derive_seed(99, SAMPLING, trial, i))
        for estimate in estimate_drive(summaries):
            error = abs(estimate.value - truth_of(params, estimate))
            (pairs if estimate.source == PAIR_SOURCE else weight1).append(error)

    assert np.median(weight1) <= 2e-3
    assert np.median(pairs) <= 1.5e-3


# Programas incompletos

def test_missing_cell_is_reported(uniform_params, l5_device):
    params = uniform_params(l5_device, REFERENCE_RATES)
    specs = [s for s in generate_experiments(l5_device, IdtConfig()) if s.drive.key == "single:4"]
    summaries = [analytic_summary(params, spec) for spec in specs if spec.setting != ("+y", "x", 2)]
    with pytest.raises(MissingScheduleError):
        estimate_drive(summaries)


def test_single_length_cannot_be_fitted(uniform_params, l5_device):
    params = uniform_params(l5_device, REFERENCE_RATES)
    specs = generate_experiments(l5_device, IdtConfig(idle_lengths=(4,)))
    summaries = [analytic_summary(params, s) for s in specs if s.drive.key == "single:0"]
    with pytest.raises(ScheduleError):
        estimate_drive(summaries)


def test_non_adjacent_pair_rejected(uniform_params, l5_device):
    params = uniform_params(l5_device)
    summaries = [analytic_summary(params, s) for s in generate_experiments(l5_device, IdtConfig())
                 if s.drive.key == "single:0"]
    with pytest.raises(ScheduleError):
        estimate_weight2(summaries, (1, 3))


def test_mixed_drives_rejected(uniform_params, l5_device):
    params = uniform_params(l5_device)
    summaries = [analytic_summary(params, s) for s in generate_experiments(l5_device, IdtConfig())]
    with pytest.raises(ScheduleError):
        estimate_weight2(summaries, (3, 4))


def test_count_summary_matches_bitstrings(uniform_params, l5_device):
    spec = generate_experiments(l5_device, IdtConfig())[0]
    record = CountRecord(spec.circuit_id, spec, 4, {"0000": 2, "1100": 1, "0011": 1})
    summary = summarize_counts(record)
    assert summary.means == {1: 0.5, 2: 0.5, 3: 0.5, 4: 0.5}
    assert summary.pair_products[(2, 3)] == pytest.approx(0.0)
    assert summary.pair_products[(1, 2)] == pytest.approx(1.0)
    assert set(group_by_drive([summary])) == {"single:0"}


# Casos de referencia por canal

def _estimates_for(params, device, drive_key):
    specs = [s for s in generate_experiments(device, IdtConfig()) if s.drive.key == drive_key]
    return estimate_drive([analytic_summary(params, spec) for spec in specs])


def _by_cell(estimates):
    return {(e.target, e.source): e.value for e in estimates}


def test_fit_slope_of_constant_series_is_zero():
    fit = fit_slope([(s, 0.37, 1.0) for s in (1, 2, 4, 8)])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_pure_z_rotation_is_recovered(uniform_params, l5_device):
    params = uniform_params(l5_device, QubitRates(h=(0.0, 0.0, 0.01)))
    for estimate in _estimates_for(params, l5_device, "single:0"):
        if estimate.source == "hamiltonian_z":
            assert 0.0095 <= estimate.value <= 0.0105


def test_stochastic_rates_are_recovered(uniform_params, l5_device):
    params = uniform_params(l5_device, QubitRates(s=(0.004, 0.002, 0.001)))
    expected = {"stochastic_x": 0.004, "stochastic_y": 0.002, "stochastic_z": 0.001}
    for estimate in _estimates_for(params, l5_device, "control_single"):
        if estimate.source in expected:
            assert estimate.value == pytest.approx(expected[estimate.source], abs=5e-4)


def test_pair_rate_without_own_noise(uniform_params, l5_device):
    params = uniform_params(l5_device, pair_lambda=0.004)
    pairs = [e for e in _estimates_for(params, l5_device, "single:0") if e.source == PAIR_SOURCE]
    assert [e.target for e in pairs] == [(1, 2), (2, 3), (3, 4)]
    assert all(0.0036 <= e.value <= 0.0044 for e in pairs)


def test_hamiltonian_sign_flip(uniform_params, l5_device):
    rates = QubitRates(h=(0.01, -0.005, 0.015), s=(0.004, 0.006, 0.008))
    flipped = QubitRates(h=(-0.01, 0.005, -0.015), s=rates.s)
    first = _by_cell(_estimates_for(uniform_params(l5_device, rates, pair_lambda=0.002), l5_device, "single:0"))
    second = _by_cell(_estimates_for(uniform_params(l5_device, flipped, pair_lambda=0.002), l5_device, "single:0"))

    for cell, value in first.items():
        if cell[1].startswith("hamiltonian"):
            assert second[cell] == pytest.approx(-value, rel=0.05, abs=1e-6)
        elif cell[1].startswith("stochastic") or cell[1] == PAIR_SOURCE:
            assert second[cell] == pytest.approx(value, rel=1e-6, abs=1e-9)


def test_control_group_matches_drive_without_crosstalk(uniform_params, l5_device):
    params = uniform_params(l5_device, REFERENCE_RATES, pair_lambda=0.002)
    driven = _by_cell(_estimates_for(params, l5_device, "single:0"))
    control = _by_cell(_estimates_for(params, l5_device, "control_single"))
    for cell, value in driven.items():
        assert control[cell] == pytest.approx(value, abs=1e-10)
