"""
Temperature fields, RGB thermal images and the colormap mapping between them
"""

from dataclasses import dataclass, field
from functools import lru_cache
from io import BytesIO
from pathlib import Path
from typing import Optional, Tuple, Sequence, Union
import logging

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from thermovqa.utils import ThermoVQAError, RGB, to_rgb8, format_number

LOGGER = logging.getLogger(__name__)

DEFAULT_ANCHOR_NAMES = (
    "black", "blue", "cyan", "yellow", "orange", "red", "white"
)
DEFAULT_T_MIN = 25.
DEFAULT_T_MAX = 60.
NUM_ANCHORS = 7
# Number of points sampled along the colormap curve for decoding
CURVE_SAMPLES = 4096
# Residual (RGB units) below which a pixel counts as decodable foreground
DECODE_THRESHOLD = 60.
DEFAULT_BACKGROUND = (128, 128, 128)


class ColormapError(ThermoVQAError):
    def __init__(self, reason: str):
        super().__init__()
        self.reason = reason

    def __str__(self):
        return f"Invalid colormap: {self.reason}"


class TemperatureRangeError(ThermoVQAError):
    def __init__(self, x: int, y: int, value: float,
                 t_min: float, t_max: float):
        super().__init__()
        self.x = x
        self.y = y
        self.value = value
        self.t_min = t_min
        self.t_max = t_max

    def __str__(self):
        return (f"Temperature {self.value:.3f} at pixel (x={self.x}, "
                f"y={self.y}) is outside [{self.t_min}, {self.t_max}]")


@dataclass(frozen=True)
class ColormapSpec:
    """
    Piecewise-linear colormap with 7 anchors placed uniformly over
    [t_min, t_max].
    """
    anchor_colors: Tuple[RGB, ...]
    anchor_names: Tuple[str, ...] = DEFAULT_ANCHOR_NAMES
    t_min: float = DEFAULT_T_MIN
    t_max: float = DEFAULT_T_MAX

    def __post_init__(self):
        if len(self.anchor_colors) != NUM_ANCHORS or \
                len(self.anchor_names) != NUM_ANCHORS:
            raise ColormapError(
                f"exactly {NUM_ANCHORS} anchors are required, got "
                f"{len(self.anchor_colors)} colors and "
                f"{len(self.anchor_names)} names")
        if not self.t_min < self.t_max:
            raise ColormapError(
                f"t_min ({self.t_min}) has to be lower than "
                f"t_max ({self.t_max})")

    @classmethod
    def from_names(
            cls,
            names: Sequence[str] = DEFAULT_ANCHOR_NAMES,
            t_min: float = DEFAULT_T_MIN,
            t_max: float = DEFAULT_T_MAX) -> 'ColormapSpec':
        """
        Builds a colormap resolving anchor names to RGB values.

        Parameters
        ----------
        names : Sequence[str]
            Names of the anchor colors, from the coldest to the hottest
        t_min : float
            Temperature of the first anchor
        t_max : float
            Temperature of the last anchor

        Returns
        -------
        ColormapSpec
            Colormap with resolved anchor colors
        """
        return cls(
            anchor_colors=tuple(to_rgb8(name) for name in names),
            anchor_names=tuple(names),
            t_min=float(t_min),
            t_max=float(t_max),
        )

    @property
    def anchor_temperatures(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, NUM_ANCHORS)

    def colors_at(self, temperatures: np.ndarray) -> np.ndarray:
        """
        Evaluates the colormap curve (float RGB) at given temperatures.
        """
        anchors = np.asarray(self.anchor_colors, dtype=np.float64)
        temps = self.anchor_temperatures
        return np.stack(
            [np.interp(temperatures, temps, anchors[:, c])
             for c in range(3)],
            axis=-1)


def default_colormap() -> ColormapSpec:
    return ColormapSpec.from_names()


@dataclass
class TemperatureField:
    """
    Grid of Celsius values over a battery scene.

    `values` has shape (height, width); `foreground_mask` marks battery
    pixels. Values of background pixels carry no meaning.
    """
    values: np.ndarray
    foreground_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ThermoVQAError(
                f"Temperature field needs a non-empty 2D grid, got shape "
                f"{self.values.shape}")
        if self.foreground_mask is None:
            self.foreground_mask = np.ones(self.values.shape, dtype=bool)
        self.foreground_mask = np.asarray(self.foreground_mask, dtype=bool)
        if self.foreground_mask.shape != self.values.shape:
            raise ThermoVQAError(
                f"Mask shape {self.foreground_mask.shape} does not match "
                f"values shape {self.values.shape}")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def foreground_values(self) -> np.ndarray:
        return self.values[self.foreground_mask]

    def save_csv(self, path: Path, cmap: Optional[ColormapSpec] = None):
        """
        Writes the field as a CSV grid with a one-line header.

        Background pixels are written as `nan`.
        """
        cmap = cmap or default_colormap()
        grid = np.where(self.foreground_mask, self.values, np.nan)
        header = (f"width={self.width} height={self.height} "
                  f"t_min={format_number(cmap.t_min)} "
                  f"t_max={format_number(cmap.t_max)}")
        np.savetxt(path, grid, fmt='%.4f', delimiter=',', header=header)

    @classmethod
    def load_csv(cls, path: Path) -> 'TemperatureField':
        with open(path, 'r') as fh:
            header = fh.readline().lstrip('#').split()
        meta = dict(item.split('=') for item in header)
        grid = np.loadtxt(path, delimiter=',', ndmin=2)
        expected = (int(meta['height']), int(meta['width']))
        if grid.shape != expected:
            raise ThermoVQAError(
                f"{path}: header announces {expected}, grid is {grid.shape}")
        mask = ~np.isnan(grid)
        return cls(np.nan_to_num(grid, nan=0.), mask)


@dataclass
class ThermalImage:
    """
    8-bit RGB raster, shape (height, width, 3).
    """
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ThermoVQAError(
                f"Thermal image needs (height, width, 3) pixels, got "
                f"{self.pixels.shape}")
        self.pixels = self.pixels.astype(np.uint8)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_png_bytes(self) -> bytes:
        buffer = BytesIO()
        Image.fromarray(self.pixels).save(buffer, format='PNG')
        return buffer.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> 'ThermalImage':
        with Image.open(BytesIO(data)) as img:
            return cls(np.array(img.convert('RGB')))

    def save_png(self, path: Path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.pixels).save(path, format='PNG')

    @classmethod
    def load_png(cls, path: Path) -> 'ThermalImage':
        with Image.open(path) as img:
            return cls(np.array(img.convert('RGB')))


def encode(
        field: TemperatureField,
        cmap: ColormapSpec,
        background: Optional[Union[np.ndarray, Tuple[int, int, int]]] = None
) -> ThermalImage:
    """
    Renders a temperature field with the colormap.

    Parameters
    ----------
    field : TemperatureField
        Field to render
    cmap : ColormapSpec
        Colormap used for foreground pixels
    background : np.ndarray | Tuple[int, int, int] | None
        Either a (height, width, 3) raster used for background pixels
        or a solid RGB color. Defaults to solid gray.

    Returns
    -------
    ThermalImage
        Image of the same dimensions as the field

    Raises
    ------
    TemperatureRangeError
        If any foreground temperature is outside [t_min, t_max]
    """
    values = field.values
    mask = field.foreground_mask
    out_of_range = mask & ((values < cmap.t_min) | (values > cmap.t_max) |
                           np.isnan(values))
    if out_of_range.any():
        y, x = np.argwhere(out_of_range)[0]
        raise TemperatureRangeError(
            int(x), int(y), float(values[y, x]), cmap.t_min, cmap.t_max)

    if background is None:
        background = DEFAULT_BACKGROUND
    background = np.asarray(background, dtype=np.uint8)
    pixels = np.empty(values.shape + (3,), dtype=np.uint8)
    pixels[...] = background
    colors = cmap.colors_at(values[mask])
    pixels[mask] = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    return ThermalImage(pixels)


@lru_cache(maxsize=8)
def _curve_index(cmap: ColormapSpec) -> Tuple[np.ndarray, cKDTree]:
    temperatures = np.linspace(cmap.t_min, cmap.t_max, CURVE_SAMPLES)
    return temperatures, cKDTree(cmap.colors_at(temperatures))


def decode(
        image: ThermalImage,
        cmap: ColormapSpec,
        threshold: float = DECODE_THRESHOLD
) -> Tuple[TemperatureField, np.ndarray]:
    """
    Inverts the colormap for every pixel of the image.

    Each pixel gets the temperature of the nearest (Euclidean in RGB)
    point of the densely sampled colormap curve.

    Parameters
    ----------
    image : ThermalImage
        Image to decode
    cmap : ColormapSpec
        Colormap the image was rendered with
    threshold : float
        Residual below which a pixel is marked as foreground

    Returns
    -------
    TemperatureField
        Decoded temperatures, mask of decodable pixels
    np.ndarray
        Residual distance (RGB units) of every pixel, shape (height, width)
    """
    temperatures, tree = _curve_index(cmap)
    flat = image.pixels.reshape(-1, 3).astype(np.float64)
    residual, index = tree.query(flat)
    shape = image.pixels.shape[:2]
    residual = residual.reshape(shape)
    decoded = TemperatureField(
        temperatures[index].reshape(shape),
        residual < threshold,
    )
    return decoded, residual
