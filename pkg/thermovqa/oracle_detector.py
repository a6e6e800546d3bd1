"""
Rule-based check of the two conditions of a normal battery thermal image:
maximum temperature below a threshold and a smooth distribution without
hot or cold spots.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union
import logging

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from thermovqa.answer_parser import Verdict
from thermovqa.thermal_core import (
    TemperatureField, ThermalImage, ColormapSpec, decode, default_colormap
)
from thermovqa.utils import ThermoVQAError, ConfigurationError

LOGGER = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
# foreground pixels whose windows are sorted at once
MEDIAN_CHUNK = 4096


class OracleError(ThermoVQAError):
    def __init__(self, reason: str):
        super().__init__()
        self.reason = reason

    def __str__(self):
        return f"Oracle cannot evaluate the field: {self.reason}"


@dataclass(frozen=True)
class OracleParams:
    """
    Thresholds of the rule-based detector.

    Attributes
    ----------
    temp_threshold : float
        Maximum foreground temperature (C) of a normal battery, exclusive
    spot_deviation : float
        Deviation (C) from the neighborhood median that marks a spot pixel
    neighborhood_radius : int
        Half-size of the square neighborhood window
    min_blob_area : int
        Smallest connected group of marked pixels counted as a spot
    """
    temp_threshold: float = 50.
    spot_deviation: float = 4.
    neighborhood_radius: int = 9
    min_blob_area: int = 25

    def __post_init__(self):
        for name in ('temp_threshold', 'spot_deviation',
                     'neighborhood_radius', 'min_blob_area'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(
                    'oracle parameters',
                    f"{name} has to be positive, got {getattr(self, name)}")

    def validate_for(self, cmap: ColormapSpec) -> 'OracleParams':
        if not self.spot_deviation < cmap.t_max - cmap.t_min:
            raise ConfigurationError(
                'oracle parameters',
                f"spot_deviation {self.spot_deviation} has to be lower than "
                f"the colormap span {cmap.t_max - cmap.t_min}")
        return self


@dataclass
class OracleReport:
    verdict: Verdict
    max_temp: float
    temp_ok: bool
    smooth_ok: bool
    spot_mask: np.ndarray = field(repr=False)

    @property
    def spot_area(self) -> int:
        return int(self.spot_mask.sum())


def check_temperature(
        temp_field: TemperatureField,
        params: OracleParams = OracleParams()) -> Tuple[bool, float]:
    """
    Checks that the hottest foreground pixel is below the threshold.

    Parameters
    ----------
    temp_field : TemperatureField
        Field to check
    params : OracleParams
        Detector thresholds

    Returns
    -------
    bool
        True if the maximum is below `temp_threshold`
    float
        Maximum foreground temperature

    Raises
    ------
    OracleError
        If the field has no foreground pixels
    """
    values = temp_field.foreground_values
    if values.size == 0:
        raise OracleError("no foreground pixels")
    max_temp = float(values.max())
    return max_temp < params.temp_threshold, max_temp


def neighborhood_median(temp_field: TemperatureField, radius: int,
                        chunk_size: int = MEDIAN_CHUNK) -> np.ndarray:
    """
    Median of the foreground pixels in the (2 * radius + 1) square window
    around every foreground pixel; NaN on the background.

    Windows are copied and sorted `chunk_size` pixels at a time.
    """
    mask = temp_field.foreground_mask
    grid = np.where(mask, temp_field.values, np.nan)
    padded = np.pad(grid, radius, mode='constant', constant_values=np.nan)
    size = 2 * radius + 1
    view = sliding_window_view(padded, (size, size))
    ys, xs = np.nonzero(mask)
    median = np.empty(len(ys))
    for start in range(0, len(ys), chunk_size):
        stop = start + chunk_size
        windows = view[ys[start:stop], xs[start:stop]]
        windows = np.sort(windows.reshape(len(windows), -1), axis=1)
        counts = np.count_nonzero(~np.isnan(windows), axis=1)
        rows = np.arange(len(windows))
        # NaN sorts last, so the valid values occupy the first `counts` columns
        median[start:stop] = (windows[rows, (counts - 1) // 2] +
                              windows[rows, counts // 2]) / 2
    result = np.full(grid.shape, np.nan)
    result[ys, xs] = median
    return result


def check_smoothness(
        temp_field: TemperatureField,
        params: OracleParams = OracleParams()) -> Tuple[bool, np.ndarray]:
    """
    Looks for hot and cold spots.

    A pixel is marked when its temperature differs from the median of its
    foreground neighborhood by more than `spot_deviation`. Marked pixels
    are grouped into 8-connected blobs; blobs of at least `min_blob_area`
    pixels are spots.

    Parameters
    ----------
    temp_field : TemperatureField
        Field to check
    params : OracleParams
        Detector thresholds

    Returns
    -------
    bool
        True if the field has no spots
    np.ndarray
        Boolean mask of spot pixels

    Raises
    ------
    OracleError
        If the foreground is not larger than `min_blob_area`
    """
    mask = temp_field.foreground_mask
    area = int(mask.sum())
    if area <= params.min_blob_area:
        raise OracleError(
            f"foreground of {area} px is not larger than the minimum blob "
            f"area {params.min_blob_area}")
    median = neighborhood_median(temp_field, params.neighborhood_radius)
    deviation = np.where(mask, temp_field.values - median, 0.)
    marked = np.abs(deviation) > params.spot_deviation
    labels, count = ndimage.label(marked, structure=EIGHT_CONNECTED)
    if count == 0:
        return True, np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    spots = np.nonzero(sizes >= params.min_blob_area)[0]
    spot_mask = np.isin(labels, spots)
    LOGGER.debug(f"{count} marked blobs, {len(spots)} of them spots")
    return len(spots) == 0, spot_mask


def classify(
        temp_field: TemperatureField,
        params: OracleParams = OracleParams()) -> OracleReport:
    """
    Runs both checks; the verdict is Normal only when both pass.
    """
    temp_ok, max_temp = check_temperature(temp_field, params)
    smooth_ok, spot_mask = check_smoothness(temp_field, params)
    verdict = Verdict.NORMAL if temp_ok and smooth_ok else Verdict.ANOMALY
    return OracleReport(verdict, max_temp, temp_ok, smooth_ok, spot_mask)


def classify_image(
        image: ThermalImage,
        cmap: Optional[ColormapSpec] = None,
        params: OracleParams = OracleParams()) -> OracleReport:
    """
    Decodes the image with the colormap and classifies the decoded field.
    """
    cmap = cmap or default_colormap()
    decoded, _ = decode(image, cmap)
    return classify(decoded, params)


@dataclass
class OracleEvaluation:
    """
    Oracle verdicts over a manifest.

    `scenes` holds one row per image (image_id, class, label, verdict,
    max_temp, temp_ok, smooth_ok, spot_area, agrees); `confusion` counts
    verdicts per ground-truth class.
    """
    scenes: pd.DataFrame
    confusion: pd.DataFrame

    @property
    def agreement(self) -> float:
        if len(self.scenes) == 0:
            return float('nan')
        return 100. * float(self.scenes['agrees'].mean())


def evaluate_manifest(
        manifest_path: Union[str, Path],
        cmap: Optional[ColormapSpec] = None,
        params: OracleParams = OracleParams()) -> OracleEvaluation:
    """
    Classifies every image of a manifest and compares with its label.

    Parameters
    ----------
    manifest_path : Union[str, Path]
        Dataset manifest
    cmap : Optional[ColormapSpec]
        Colormap of the images
    params : OracleParams
        Detector thresholds

    Returns
    -------
    OracleEvaluation
        Per-scene reports and the confusion matrix
    """
    from thermovqa.synth import read_manifest

    cmap = cmap or default_colormap()
    params.validate_for(cmap)
    rows: List[dict] = []
    for entry in read_manifest(manifest_path):
        image = ThermalImage.load_png(entry.image_path)
        report = classify_image(image, cmap, params)
        label = 'anomaly' if entry.is_anomaly else 'normal'
        rows.append({
            'image_id': entry.image_id,
            'class': entry.scene_class.value,
            'label': label,
            'verdict': report.verdict.value,
            'max_temp': report.max_temp,
            'temp_ok': report.temp_ok,
            'smooth_ok': report.smooth_ok,
            'spot_area': report.spot_area,
            'agrees': report.verdict.value == label,
        })
        LOGGER.debug(f"{entry.image_id}: {report}")
    scenes = pd.DataFrame(rows, columns=[
        'image_id', 'class', 'label', 'verdict', 'max_temp', 'temp_ok',
        'smooth_ok', 'spot_area', 'agrees'])
    confusion = pd.crosstab(scenes['class'], scenes['verdict']).reindex(
        columns=[Verdict.NORMAL.value, Verdict.ANOMALY.value], fill_value=0)
    return OracleEvaluation(scenes, confusion)
