"""
Seeded generators of labeled synthetic battery thermal scenes.

Four classes are produced: normal batteries (smooth, below the
temperature threshold), overheating (smooth, globally hot), reflection
(hot spots on top of a warm base) and spatial tape (cold patches).
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
from scipy import ndimage

from thermovqa.thermal_core import (
    TemperatureField, ThermalImage, ColormapSpec, encode, default_colormap
)
from thermovqa.preprocess import OrientedRect
from thermovqa.utils import ThermoVQAError, read_jsonl, write_jsonl

LOGGER = logging.getLogger(__name__)

DEFAULT_WIDTH = 192
DEFAULT_HEIGHT = 144
# Scene counts of the battery test split: normal, overheating, reflection,
# spatial tape
DEFAULT_COUNTS = (27, 13, 12, 8)
# Upper bound of any normal-like foreground temperature
NORMAL_MAX = 48.
# Keeps generated temperatures strictly inside the default colormap range
FIELD_FLOOR = 25.5
FIELD_CEIL = 59.5
TAPE_EDGE_SIGMA = 1.


class SceneError(ThermoVQAError):
    def __init__(self, spec: 'SceneSpec', reason: str):
        super().__init__()
        self.spec = spec
        self.reason = reason

    def __str__(self):
        return (f"Cannot generate {self.spec.class_label.value} scene "
                f"(seed={self.spec.seed}): {self.reason}")


class SceneClass(str, Enum):
    NORMAL = 'normal'
    OVERHEATING = 'overheating'
    REFLECTION = 'reflection'
    SPATIAL_TAPE = 'spatial_tape'

    @property
    def is_anomaly(self) -> bool:
        return self is not SceneClass.NORMAL


SCENE_CLASSES = (
    SceneClass.NORMAL,
    SceneClass.OVERHEATING,
    SceneClass.REFLECTION,
    SceneClass.SPATIAL_TAPE,
)


@dataclass(frozen=True)
class Background:
    """
    Rendering policy of pixels outside the battery.

    `solid` fills the frame with `color`, or with the colormap color of
    `temperature` when it is given. `noisy` adds uniform per-channel noise
    of `amplitude` around `color`.
    """
    kind: str = 'noisy'
    color: Tuple[int, int, int] = (125, 125, 125)
    amplitude: int = 15
    temperature: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ('solid', 'noisy'):
            raise ThermoVQAError(f"Unknown background kind {self.kind!r}")

    def render(
            self,
            shape: Tuple[int, int],
            rng: np.random.Generator,
            cmap: ColormapSpec) -> np.ndarray:
        if self.temperature is not None:
            base = cmap.colors_at(np.array([self.temperature]))[0]
        else:
            base = np.asarray(self.color, dtype=np.float64)
        raster = np.broadcast_to(base, shape + (3,)).astype(np.float64)
        if self.kind == 'noisy' and self.amplitude > 0:
            raster = raster + rng.integers(
                -self.amplitude, self.amplitude + 1, size=shape + (3,))
        return np.clip(np.rint(raster), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class SceneSpec:
    """
    Full description of a synthetic scene; the scene is a pure function
    of it.

    `base_temperature` and `gradient_amplitude` override the randomly
    drawn base level and gradient span when set.
    """
    class_label: SceneClass
    seed: int
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    battery_rect: Optional[OrientedRect] = None
    background: Background = field(default_factory=Background)
    base_temperature: Optional[float] = None
    gradient_amplitude: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'class_label', SceneClass(self.class_label))
        if self.battery_rect is None:
            object.__setattr__(
                self, 'battery_rect',
                random_battery_rect(self.seed, self.width, self.height))
        if not self.battery_rect.fits_in((self.height, self.width)):
            raise SceneError(self, f"{self.battery_rect} leaves the frame")


@dataclass
class LabeledScene:
    spec: SceneSpec
    field: TemperatureField
    image: ThermalImage

    @property
    def label(self) -> SceneClass:
        return self.spec.class_label


@dataclass
class ManifestEntry:
    image_id: str
    image_path: Path
    scene_class: SceneClass
    seed: Optional[int] = None
    extra: Dict = field(default_factory=dict)

    @property
    def is_anomaly(self) -> bool:
        return self.scene_class.is_anomaly

    def to_json(self, relative_path: Path) -> dict:
        record = dict(self.extra)
        record.update({
            'image_id': self.image_id,
            'path': str(relative_path),
            'label': 'anomaly' if self.is_anomaly else 'normal',
            'class': self.scene_class.value,
            'seed': self.seed,
        })
        return record


def random_battery_rect(seed: int, width: int, height: int) -> OrientedRect:
    """
    Draws a battery rectangle rotated by 10-30 degrees (either direction),
    scaled to the frame.
    """
    rng = np.random.default_rng([seed, 0])
    angle = float(rng.uniform(10., 30.)) * (1 if rng.random() < .5 else -1)
    bw = float(rng.uniform(0.52, 0.62)) * width
    bh = float(rng.uniform(0.39, 0.48)) * height
    cx = (width - 1) / 2 + float(rng.uniform(-0.02, 0.02)) * width
    cy = (height - 1) / 2 + float(rng.uniform(-0.02, 0.02)) * height
    return OrientedRect((cx, cy), bw, bh, angle)


def _field_rng(spec: SceneSpec) -> np.random.Generator:
    return np.random.default_rng([spec.seed, 1])


def _smooth_base(
        spec: SceneSpec,
        rng: np.random.Generator,
        base_range: Tuple[float, float],
        amplitude_range: Tuple[float, float]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Low-frequency linear gradient over the battery.

    Returns
    -------
    np.ndarray
        Temperatures (background set to NaN)
    np.ndarray
        Foreground mask
    np.ndarray
        Local width-axis coordinate of each pixel
    np.ndarray
        Local height-axis coordinate of each pixel
    """
    shape = (spec.height, spec.width)
    rect = spec.battery_rect
    lu, lv = rect.local_coordinates(shape)
    mask = (np.abs(lu) <= rect.width / 2) & (np.abs(lv) <= rect.height / 2)

    base = spec.base_temperature
    if base is None:
        base = float(rng.uniform(*base_range))
    amplitude = spec.gradient_amplitude
    if amplitude is None:
        amplitude = float(rng.uniform(*amplitude_range))
    alpha, beta = rng.uniform(-1., 1., size=2)
    norm = abs(alpha) + abs(beta) or 1.
    # g lies in [-0.5, 0.5], so the foreground spans at most `amplitude`
    g = 0.5 * (alpha * lu / (rect.width / 2) +
               beta * lv / (rect.height / 2)) / norm
    values = np.where(mask, base + amplitude * g, np.nan)
    return values, mask, lu, lv


def _finish(spec: SceneSpec, values: np.ndarray, mask: np.ndarray,
            rng: np.random.Generator,
            cmap: Optional[ColormapSpec]) -> LabeledScene:
    cmap = cmap or default_colormap()
    values = np.where(mask, np.clip(values, FIELD_FLOOR, FIELD_CEIL), np.nan)
    temp_field = TemperatureField(values, mask)
    background = spec.background.render(
        (spec.height, spec.width), rng, cmap)
    image = encode(temp_field, cmap, background)
    return LabeledScene(spec, temp_field, image)


def _check_class(spec: SceneSpec, expected: SceneClass):
    if spec.class_label is not expected:
        raise SceneError(
            spec, f"generator for {expected.value} called with "
            f"{spec.class_label.value} spec")


def generate_normal(spec: SceneSpec,
                    cmap: Optional[ColormapSpec] = None) -> LabeledScene:
    """
    Smooth gradient, base in [30, 45] C, span at most 3 C, maximum at most
    48 C.
    """
    _check_class(spec, SceneClass.NORMAL)
    rng = _field_rng(spec)
    values, mask, _, _ = _smooth_base(spec, rng, (30., 45.), (0.5, 3.))
    if np.nanmax(values) > NORMAL_MAX:
        raise SceneError(spec, f"maximum {np.nanmax(values):.2f} C exceeds "
                         f"{NORMAL_MAX} C")
    return _finish(spec, values, mask, rng, cmap)


def generate_overheating(spec: SceneSpec,
                         cmap: Optional[ColormapSpec] = None) -> LabeledScene:
    """
    Same smoothness as a normal battery, shifted so that the maximum lies
    in (50, 60] C and the minimum is at least 46 C.
    """
    _check_class(spec, SceneClass.OVERHEATING)
    rng = _field_rng(spec)
    if spec.base_temperature is None:
        amplitude = spec.gradient_amplitude
        if amplitude is None:
            amplitude = float(rng.uniform(1., 2.5))
        peak = float(rng.uniform(52.5, 58.))
        spec_for_base = replace(spec, base_temperature=peak - amplitude / 2,
                                gradient_amplitude=amplitude)
    else:
        spec_for_base = spec
    values, mask, _, _ = _smooth_base(spec_for_base, rng, (0., 0.), (1., 2.5))
    top, bottom = np.nanmax(values), np.nanmin(values)
    if not (50. < top <= 60. and bottom >= 46.):
        raise SceneError(spec, f"temperatures [{bottom:.2f}, {top:.2f}] C do "
                         f"not describe an overheating battery")
    return _finish(spec, values, mask, rng, cmap)


def _place_centers(
        rng: np.random.Generator,
        count: int,
        half_extent: Tuple[float, float],
        margins: Sequence[float],
        min_distance,
        attempts: int = 200) -> List[Tuple[float, float]]:
    """
    Rejection-samples up to `count` centers (local coordinates) that keep
    their margin to the battery border and `min_distance(i, j)` between
    each other.
    """
    centers: List[Tuple[float, float]] = []
    for i in range(count):
        mu = half_extent[0] - margins[i]
        mv = half_extent[1] - margins[i]
        if mu <= 0 or mv <= 0:
            continue
        for _ in range(attempts):
            cu, cv = float(rng.uniform(-mu, mu)), float(rng.uniform(-mv, mv))
            if all(math.hypot(cu - pu, cv - pv) >= min_distance(i, j)
                   for j, (pu, pv) in enumerate(centers)):
                centers.append((cu, cv))
                break
    return centers


def generate_reflection(spec: SceneSpec,
                        cmap: Optional[ColormapSpec] = None) -> LabeledScene:
    """
    Normal-style base with 1-4 Gaussian hot spots (+8 to +20 C, sigma
    3-10% of the battery width). The first spot is compact and its peak
    exceeds 52.5 C.
    """
    _check_class(spec, SceneClass.REFLECTION)
    rng = _field_rng(spec)
    values, mask, lu, lv = _smooth_base(spec, rng, (38., 44.), (0.5, 3.))
    rect = spec.battery_rect
    count = int(rng.integers(1, 5))
    sigmas = [float(rng.uniform(0.03, 0.05)) * rect.width] + \
        [float(rng.uniform(0.03, 0.10)) * rect.width
         for _ in range(count - 1)]
    margins = [3 * s + 2 for s in sigmas]
    centers = _place_centers(
        rng, count, (rect.width / 2, rect.height / 2), margins,
        lambda i, j: 3 * (sigmas[i] + sigmas[j]))
    if not centers:
        raise SceneError(spec, "battery too small for a hot spot")

    hot = np.zeros_like(lu)
    for i, (cu, cv) in enumerate(centers):
        dist2 = (lu - cu) ** 2 + (lv - cv) ** 2
        local = float(values[np.unravel_index(
            np.nanargmin(np.where(mask, dist2, np.inf)), dist2.shape)])
        if i == 0:
            low, high = max(12., 52.5 - local), min(20., 58.5 - local)
        else:
            low, high = 8., max(8., min(20., 59. - local))
        amplitude = float(rng.uniform(low, high))
        hot += amplitude * np.exp(-dist2 / (2 * sigmas[i] ** 2))
    return _finish(spec, values + hot, mask, rng, cmap)


def generate_spatial_tape(spec: SceneSpec,
                          cmap: Optional[ColormapSpec] = None
                          ) -> LabeledScene:
    """
    Normal-style base (maximum below 48 C) with 1-3 rectangular or
    elliptical cold patches 5-10 C below their surroundings.

    Patch edges are softened with a 1 px Gaussian, like tape conducting
    heat from the casing.
    """
    _check_class(spec, SceneClass.SPATIAL_TAPE)
    rng = _field_rng(spec)
    values, mask, lu, lv = _smooth_base(spec, rng, (37., 44.), (0.5, 3.))
    if np.nanmax(values) > NORMAL_MAX:
        raise SceneError(spec, f"maximum {np.nanmax(values):.2f} C exceeds "
                         f"{NORMAL_MAX} C")
    rect = spec.battery_rect
    count = int(rng.integers(1, 4))
    sizes = [(float(rng.uniform(9., 12.)), float(rng.uniform(9., 12.)))
             for _ in range(count)]
    margins = [15.] * count
    centers = _place_centers(
        rng, count, (rect.width / 2, rect.height / 2), margins,
        lambda i, j: 25.)
    if not centers:
        raise SceneError(spec, "battery too small for a tape patch")

    cold = np.zeros_like(lu)
    for (cu, cv), (pw, ph) in zip(centers, sizes):
        du, dv = lu - cu, lv - cv
        if rng.random() < .5:
            patch = (np.abs(du) <= pw / 2) & (np.abs(dv) <= ph / 2)
        else:
            patch = (du / (pw / 2)) ** 2 + (dv / (ph / 2)) ** 2 <= 1.
        soft = ndimage.gaussian_filter(patch.astype(np.float64),
                                       TAPE_EDGE_SIGMA)
        cold = np.maximum(cold, soft * float(rng.uniform(5., 10.)))
    return _finish(spec, values - cold, mask, rng, cmap)


_GENERATORS = {
    SceneClass.NORMAL: generate_normal,
    SceneClass.OVERHEATING: generate_overheating,
    SceneClass.REFLECTION: generate_reflection,
    SceneClass.SPATIAL_TAPE: generate_spatial_tape,
}


def generate_scene(spec: SceneSpec,
                   cmap: Optional[ColormapSpec] = None) -> LabeledScene:
    """
    Runs the generator of the scene's class.
    """
    return _GENERATORS[spec.class_label](spec, cmap)


def scene_seed(master_seed: int, class_index: int, index: int) -> int:
    """
    Derives the 64-bit seed of one scene from the master seed.
    """
    state = np.random.SeedSequence(
        [master_seed, class_index, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def generate_dataset(
        master_seed: int,
        counts: Sequence[int] = DEFAULT_COUNTS,
        background: Optional[Background] = None,
        cmap: Optional[ColormapSpec] = None,
        width: int = DEFAULT_WIDTH,
        height: int = DEFAULT_HEIGHT) -> List[LabeledScene]:
    """
    Generates a labeled dataset.

    Parameters
    ----------
    master_seed : int
        Seed from which every scene seed is derived
    counts : Sequence[int]
        Number of normal, overheating, reflection and spatial tape scenes
    background : Optional[Background]
        Background policy, noisy by default
    cmap : Optional[ColormapSpec]
        Colormap used for rendering
    width : int
        Frame width
    height : int
        Frame height

    Returns
    -------
    List[LabeledScene]
        Scenes ordered by class, then by index
    """
    if len(counts) != len(SCENE_CLASSES) or any(c < 0 for c in counts):
        raise ThermoVQAError(
            f"counts need {len(SCENE_CLASSES)} non-negative values, "
            f"got {list(counts)}")
    background = background or Background()
    scenes = []
    for class_index, (scene_class, count) in enumerate(
            zip(SCENE_CLASSES, counts)):
        for index in range(count):
            spec = SceneSpec(
                class_label=scene_class,
                seed=scene_seed(master_seed, class_index, index),
                width=width,
                height=height,
                background=background,
            )
            scenes.append(generate_scene(spec, cmap))
    LOGGER.debug(f"Generated {len(scenes)} scenes from seed {master_seed}")
    return scenes


def scene_id(scene_class: SceneClass, index: int) -> str:
    return f"{scene_class.value}_{index:03d}"


def write_dataset(
        scenes: Sequence[LabeledScene],
        out_dir: Path,
        save_fields: bool = False,
        cmap: Optional[ColormapSpec] = None) -> Path:
    """
    Writes scenes as PNG images plus `manifest.jsonl`.

    Parameters
    ----------
    scenes : Sequence[LabeledScene]
        Scenes to write
    out_dir : Path
        Output directory
    save_fields : bool
        True if ground-truth temperature fields should be written as CSV
    cmap : Optional[ColormapSpec]
        Colormap written into the field headers

    Returns
    -------
    Path
        Path of the manifest
    """
    out_dir = Path(out_dir)
    counters: Dict[SceneClass, int] = {}
    records = []
    for scene in scenes:
        index = counters.get(scene.label, 0)
        counters[scene.label] = index + 1
        image_id = scene_id(scene.label, index)
        relative = Path('images') / f"{image_id}.png"
        scene.image.save_png(out_dir / relative)
        entry = ManifestEntry(image_id, out_dir / relative, scene.label,
                              scene.spec.seed)
        record = entry.to_json(relative)
        if save_fields:
            field_path = Path('fields') / f"{image_id}.csv"
            (out_dir / field_path).parent.mkdir(parents=True, exist_ok=True)
            scene.field.save_csv(out_dir / field_path, cmap)
            record['field'] = str(field_path)
        records.append(record)
    manifest = out_dir / 'manifest.jsonl'
    write_manifest(manifest, records)
    LOGGER.info(f"Wrote {len(records)} scenes to {out_dir}")
    return manifest


def write_manifest(path: Path, records: Sequence[dict]):
    write_jsonl(path, records)


def read_manifest(path: Union[str, Path]) -> List[ManifestEntry]:
    """
    Reads a manifest, resolving image paths against its directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ThermoVQAError(f"Manifest {path} does not exist")
    entries = []
    for record in read_jsonl(path):
        record = dict(record)
        image_id = record.pop('image_id')
        image_path = path.parent / record.pop('path')
        scene_class = SceneClass(record.pop('class'))
        record.pop('label', None)
        seed = record.pop('seed', None)
        entries.append(ManifestEntry(
            image_id, image_path, scene_class, seed, record))
    return entries
