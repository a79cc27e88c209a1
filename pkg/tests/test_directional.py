"""Directional checks on trained desk-scale models (slow: shares the cached models in ``trained``)."""

import numpy as np
import pytest

import trained
from advforecast.attacks import NOISE, SEMI_TARGETED, AttackSpec
from advforecast.harness.evaluation import evaluate_dataset
from advforecast.scenarios import catalog_bands

pytestmark = pytest.mark.slow


def mean_score(model, scenario, spec, key):
    return float(np.mean([getattr(r, key) for r in evaluate_dataset(model, scenario.test, spec, 0)]))


def test_noise_is_a_weak_attack_on_maps():
    sc = trained.scenario("maps", 0)
    spec = AttackSpec(NOISE, repetitions=100, input_bounds=sc.input_bounds, name="noise")
    assert mean_score(trained.map_model(0), sc, spec, "prs") >= 0.8


def test_low_band_deforms_maps_more_than_series():
    band = catalog_bands(8)["low"]
    spec = AttackSpec(SEMI_TARGETED, band=band, name="semi:low")
    drs_series = mean_score(trained.series_model(0), trained.scenario("series", 0), spec, "drs")
    drs_maps = mean_score(trained.map_model(0), trained.scenario("maps", 0), spec, "drs")
    assert drs_maps < drs_series
