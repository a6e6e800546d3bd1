"""
Tests of the colormap encoding and decoding of temperature fields
"""
import numpy as np
import pytest

from thermovqa.thermal_core import (
    ColormapError, ColormapSpec, TemperatureField, TemperatureRangeError,
    ThermalImage, decode, default_colormap, encode
)
from thermovqa.utils import ThermoVQAError

DEFAULT_ANCHORS = (
    (0, 0, 0),
    (0, 0, 255),
    (0, 255, 255),
    (255, 255, 0),
    (255, 165, 0),
    (255, 0, 0),
    (255, 255, 255),
)


def test_default_anchor_colors():
    cmap = default_colormap()
    assert cmap.anchor_colors == DEFAULT_ANCHORS
    assert cmap.t_min == 25. and cmap.t_max == 60.
    assert np.allclose(cmap.anchor_temperatures,
                       [25., 30.83333, 36.66667, 42.5, 48.33333, 54.16667,
                        60.], atol=1e-4)


def test_round_trip_error_below_tolerance():
    cmap = default_colormap()
    temperatures = np.linspace(25., 60., 701)
    image = encode(TemperatureField(temperatures[np.newaxis, :]), cmap)
    decoded, residual = decode(image, cmap)
    assert decoded.foreground_mask.all()
    assert np.abs(decoded.values[0] - temperatures).max() < 0.2
    assert residual.max() < 1.


def test_decoded_temperature_follows_input_order():
    cmap = default_colormap()
    temperatures = np.linspace(25., 60., 3501)
    image = encode(TemperatureField(temperatures[np.newaxis, :]), cmap)
    decoded, _ = decode(image, cmap)
    assert (np.diff(decoded.values[0]) >= 0.).all()


def test_anchor_temperatures_hit_anchor_colors():
    cmap = default_colormap()
    image = encode(TemperatureField(cmap.anchor_temperatures[np.newaxis, :]),
                   cmap)
    assert [tuple(int(c) for c in p) for p in image.pixels[0]] == \
        list(DEFAULT_ANCHORS)


def test_out_of_range_temperature():
    values = np.full((4, 5), 40.)
    values[2, 3] = 61.
    with pytest.raises(TemperatureRangeError) as error:
        encode(TemperatureField(values), default_colormap())
    assert (error.value.x, error.value.y) == (3, 2)


def test_background_is_not_foreground():
    values = np.full((10, 10), 40.)
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:8, 3:7] = True
    cmap = default_colormap()
    image = encode(TemperatureField(values, mask), cmap)
    assert tuple(image.pixels[0, 0]) == (128, 128, 128)
    decoded, _ = decode(image, cmap)
    assert np.array_equal(decoded.foreground_mask, mask)
    assert np.allclose(decoded.foreground_values, 40., atol=0.2)


def test_background_ignores_out_of_range_values():
    values = np.full((3, 3), 100.)
    mask = np.zeros((3, 3), dtype=bool)
    mask[1, 1] = True
    values[1, 1] = 30.
    image = encode(TemperatureField(values, mask), default_colormap(),
                   background=(10, 20, 30))
    assert tuple(image.pixels[0, 0]) == (10, 20, 30)


@pytest.mark.parametrize('names, t_min, t_max', [
    (('black', 'white'), 25., 60.),
    (('black', 'blue', 'cyan', 'yellow', 'orange', 'red', 'white'), 60., 25.),
    (('black', 'blue', 'cyan', 'yellow', 'orange', 'red', 'white'), 40., 40.),
])
def test_invalid_colormap(names, t_min, t_max):
    with pytest.raises(ColormapError):
        ColormapSpec.from_names(names, t_min, t_max)


def test_custom_range_round_trip():
    cmap = ColormapSpec.from_names(t_min=0., t_max=100.)
    temperatures = np.linspace(0., 100., 201)
    image = encode(TemperatureField(temperatures[np.newaxis, :]), cmap)
    decoded, _ = decode(image, cmap)
    assert np.abs(decoded.values[0] - temperatures).max() < 0.5


def test_png_bytes_keep_pixels():
    rng = np.random.default_rng(0)
    image = ThermalImage(rng.integers(0, 256, size=(12, 9, 3)))
    restored = ThermalImage.from_png_bytes(image.to_png_bytes())
    assert np.array_equal(restored.pixels, image.pixels)


def test_field_csv(tmp_path):
    values = np.linspace(30., 45., 48).reshape(6, 8)
    mask = values > 33.
    path = tmp_path / 'field.csv'
    TemperatureField(values, mask).save_csv(path)
    loaded = TemperatureField.load_csv(path)
    assert np.array_equal(loaded.foreground_mask, mask)
    assert np.allclose(loaded.foreground_values, values[mask], atol=1e-4)
    assert path.read_text().startswith('# width=8 height=6 t_min=25 t_max=60')


def test_invalid_shapes():
    with pytest.raises(ThermoVQAError):
        TemperatureField(np.zeros(5))
    with pytest.raises(ThermoVQAError):
        ThermalImage(np.zeros((4, 4)))
