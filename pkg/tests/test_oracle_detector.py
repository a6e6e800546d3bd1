"""
Tests of the rule-based normality checks
"""
import numpy as np
import pytest
from scipy import ndimage

from thermovqa.answer_parser import Verdict
from thermovqa.oracle_detector import (
    OracleError, OracleParams, check_smoothness, check_temperature, classify,
    evaluate_manifest, neighborhood_median
)
from thermovqa.synth import SceneClass
from thermovqa.thermal_core import ColormapSpec, TemperatureField
from thermovqa.utils import ConfigurationError

# (temperature ok, smooth) per class
CONDITION_PATTERN = {
    'normal': (True, True),
    'overheating': (False, True),
    'reflection': (False, False),
    'spatial_tape': (True, False),
}


def uniform_field(value: float = 40., shape=(40, 40)) -> TemperatureField:
    return TemperatureField(np.full(shape, value))


def test_uniform_field_is_normal():
    report = classify(uniform_field())
    assert report.verdict is Verdict.NORMAL
    assert report.temp_ok and report.smooth_ok
    assert report.spot_area == 0
    assert report.max_temp == 40.


def test_hot_field():
    report = classify(uniform_field(50.))
    assert report.verdict is Verdict.ANOMALY
    assert not report.temp_ok
    assert report.smooth_ok


def test_hot_patch_is_a_spot():
    temp_field = uniform_field()
    temp_field.values[15:25, 15:25] = 48.
    report = classify(temp_field)
    assert report.temp_ok
    assert not report.smooth_ok
    assert report.spot_area == 100
    assert report.verdict is Verdict.ANOMALY


def test_small_cold_patch_is_ignored():
    temp_field = uniform_field()
    temp_field.values[10:13, 10:13] = 30.
    smooth, spots = check_smoothness(temp_field)
    assert smooth
    assert not spots.any()


def test_gradient_is_smooth():
    values = np.tile(np.linspace(35., 45., 100), (60, 1))
    smooth, _ = check_smoothness(TemperatureField(values))
    assert smooth


def test_neighborhood_median_ignores_background():
    values = np.full((20, 20), 40.)
    mask = np.ones((20, 20), dtype=bool)
    mask[:, :5] = False
    values[:, :5] = 0.
    median = neighborhood_median(TemperatureField(values, mask), 3)
    assert np.isnan(median[:, :5]).all()
    assert np.allclose(median[:, 5:], 40.)


def test_neighborhood_median_even_count():
    values = np.array([[1., 2., 3., 10.]])
    median = neighborhood_median(TemperatureField(values), 1)
    assert np.allclose(median, [[1.5, 2., 3., 6.5]])


@pytest.mark.parametrize('chunk_size', [1, 7, 4096])
def test_neighborhood_median_matches_window_median(chunk_size):
    rng = np.random.default_rng(3)
    values = rng.uniform(30., 45., size=(23, 31))
    mask = rng.random((23, 31)) > 0.3
    radius = 2
    median = neighborhood_median(TemperatureField(values, mask), radius,
                                 chunk_size=chunk_size)
    grid = np.where(mask, values, np.nan)
    for y, x in zip(*np.nonzero(mask)):
        window = grid[max(y - radius, 0):y + radius + 1,
                      max(x - radius, 0):x + radius + 1]
        assert median[y, x] == pytest.approx(np.nanmedian(window))
    assert np.isnan(median[~mask]).all()


def test_empty_foreground():
    temp_field = TemperatureField(np.full((5, 5), 40.),
                                  np.zeros((5, 5), dtype=bool))
    with pytest.raises(OracleError):
        check_temperature(temp_field)


def test_foreground_smaller_than_blob():
    with pytest.raises(OracleError):
        check_smoothness(uniform_field(shape=(5, 5)))


def test_threshold_is_exclusive():
    ok, max_temp = check_temperature(uniform_field(49.99))
    assert ok and max_temp == pytest.approx(49.99)
    ok, _ = check_temperature(uniform_field(50.))
    assert not ok


@pytest.mark.parametrize('name', ['temp_threshold', 'spot_deviation',
                                  'neighborhood_radius', 'min_blob_area'])
def test_parameters_have_to_be_positive(name):
    with pytest.raises(ConfigurationError):
        OracleParams(**{name: 0})


def test_deviation_wider_than_colormap():
    cmap = ColormapSpec.from_names(t_min=25., t_max=28.)
    with pytest.raises(ConfigurationError):
        OracleParams(spot_deviation=4.).validate_for(cmap)


def test_synthetic_dataset_agreement(default_manifest):
    evaluation = evaluate_manifest(default_manifest)
    scenes = evaluation.scenes
    assert len(scenes) == 60
    assert evaluation.agreement == 100.
    for _, scene in scenes.iterrows():
        pattern = (bool(scene['temp_ok']), bool(scene['smooth_ok']))
        assert pattern == CONDITION_PATTERN[scene['class']], scene['image_id']
    assert evaluation.confusion.loc['normal', 'normal'] == 27
    assert evaluation.confusion.loc['normal', 'anomaly'] == 0
    assert evaluation.confusion['anomaly'].sum() == 33


def test_raising_threshold_keeps_normal_verdicts(default_scenes):
    thresholds = [40., 45., 50., 55., 60.]
    for scene in default_scenes[::4]:
        verdicts = [classify(scene.field, OracleParams(temp_threshold=t))
                    .verdict for t in thresholds]
        first_normal = verdicts.index(Verdict.NORMAL) \
            if Verdict.NORMAL in verdicts else len(verdicts)
        assert all(v is Verdict.NORMAL for v in verdicts[first_normal:])


def rotated(temp_field: TemperatureField, k: int) -> TemperatureField:
    return TemperatureField(np.rot90(temp_field.values, k),
                            np.rot90(temp_field.foreground_mask, k))


def test_verdict_is_rotation_invariant(default_scenes):
    for scene in default_scenes[::3]:
        report = classify(scene.field)
        for k in (1, 2, 3):
            turned = classify(rotated(scene.field, k))
            assert turned.verdict is report.verdict
            assert turned.spot_area == report.spot_area


@pytest.mark.parametrize('angle', [15., 37.])
def test_normal_scenes_stay_normal_when_tilted(default_scenes, angle):
    normal = [s for s in default_scenes if s.label is SceneClass.NORMAL]
    for scene in normal[::3]:
        mask = scene.field.foreground_mask
        values = ndimage.rotate(np.where(mask, scene.field.values, 0.),
                                angle, order=0)
        tilted = ndimage.rotate(mask.astype(np.uint8), angle, order=0) > 0
        report = classify(TemperatureField(values, tilted))
        assert report.verdict is Verdict.NORMAL
