"""
Background removal of thermal images by cropping and rotating the battery
region into an axis-aligned image
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, List, Optional
import logging
import math

import cv2
import numpy as np
from scipy import ndimage

from thermovqa.thermal_core import (
    ThermalImage, ColormapSpec, decode, DECODE_THRESHOLD
)
from thermovqa.utils import ThermoVQAError

LOGGER = logging.getLogger(__name__)

DEFAULT_INSET = 0.05
MIN_FOREGROUND_FRACTION = 0.01
# Allowed overshoot (pixels) of sampled positions past the frame border
FRAME_TOLERANCE = 0.5


class DetectionError(ThermoVQAError):
    def __init__(self, reason: str):
        super().__init__()
        self.reason = reason

    def __str__(self):
        return f"Battery region not found: {self.reason}"


class CropError(ThermoVQAError):
    def __init__(self, rect: 'OrientedRect', reason: str):
        super().__init__()
        self.rect = rect
        self.reason = reason

    def __str__(self):
        return f"Cannot crop {self.rect}: {self.reason}"


def _normalize_angle(angle: float) -> float:
    """
    Maps an angle in degrees to (-90, 90].
    """
    angle = math.fmod(angle, 180.)
    if angle <= -90.:
        angle += 180.
    elif angle > 90.:
        angle -= 180.
    return angle


@dataclass(frozen=True)
class OrientedRect:
    """
    Rectangle rotated by `angle` degrees around its center.

    The width axis points along (cos(angle), sin(angle)) in pixel
    coordinates (x to the right, y down).
    """
    center: Tuple[float, float]
    width: float
    height: float
    angle: float = 0.

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise CropError(self, "width and height have to be positive")
        object.__setattr__(self, 'angle', _normalize_angle(self.angle))

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        theta = math.radians(self.angle)
        u = np.array([math.cos(theta), math.sin(theta)])
        v = np.array([-math.sin(theta), math.cos(theta)])
        return u, v

    def corners(self) -> np.ndarray:
        """
        Returns the 4 corners as a (4, 2) array of (x, y).
        """
        u, v = self.axes
        c = np.asarray(self.center, dtype=np.float64)
        hw, hh = self.width / 2, self.height / 2
        return np.array([
            c - hw * u - hh * v,
            c + hw * u - hh * v,
            c + hw * u + hh * v,
            c - hw * u + hh * v,
        ])

    def local_coordinates(
            self, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Computes rectangle-aligned coordinates of every pixel center.

        Parameters
        ----------
        shape : Tuple[int, int]
            (height, width) of the frame

        Returns
        -------
        np.ndarray
            Coordinate along the width axis, 0 at the center
        np.ndarray
            Coordinate along the height axis, 0 at the center
        """
        ys, xs = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
        dx, dy = xs - self.center[0], ys - self.center[1]
        u, v = self.axes
        return dx * u[0] + dy * u[1], dx * v[0] + dy * v[1]

    def mask(self, shape: Tuple[int, int]) -> np.ndarray:
        lu, lv = self.local_coordinates(shape)
        return (np.abs(lu) <= self.width / 2) & \
            (np.abs(lv) <= self.height / 2)

    def fits_in(self, shape: Tuple[int, int], margin: float = 0.) -> bool:
        corners = self.corners()
        return bool(
            (corners[:, 0] >= margin).all() and
            (corners[:, 0] <= shape[1] - 1 - margin).all() and
            (corners[:, 1] >= margin).all() and
            (corners[:, 1] <= shape[0] - 1 - margin).all())


def _rect_from_box_points(points: np.ndarray) -> OrientedRect:
    """
    Builds an OrientedRect from 4 ordered box corners, choosing the
    orientation with the angle closest to 0.
    """
    edge_a = points[1] - points[0]
    edge_b = points[2] - points[1]
    center = points.mean(axis=0)
    len_a = float(np.hypot(*edge_a))
    len_b = float(np.hypot(*edge_b))
    angle = _normalize_angle(math.degrees(math.atan2(edge_a[1], edge_a[0])))
    width, height = len_a, len_b
    if angle > 45.:
        angle -= 90.
        width, height = height, width
    elif angle <= -45.:
        angle += 90.
        width, height = height, width
    return OrientedRect((float(center[0]), float(center[1])),
                        width, height, angle)


def detect_battery_region(
        image: ThermalImage,
        cmap: ColormapSpec,
        threshold: float = DECODE_THRESHOLD) -> OrientedRect:
    """
    Finds the minimum-area oriented rectangle around the battery.

    The battery is the largest 8-connected component of decodable pixels.
    The rectangle covers full pixels, i.e. it extends half a pixel past
    the outermost pixel centers.

    Parameters
    ----------
    image : ThermalImage
        Image to analyze
    cmap : ColormapSpec
        Colormap the image was rendered with
    threshold : float
        Decode residual below which a pixel is foreground

    Returns
    -------
    OrientedRect
        Battery region

    Raises
    ------
    DetectionError
        If less than 1% of pixels are decodable
    """
    decoded, _ = decode(image, cmap, threshold)
    mask = decoded.foreground_mask
    fraction = mask.mean()
    if fraction < MIN_FOREGROUND_FRACTION:
        raise DetectionError(
            f"only {100 * fraction:.2f}% of pixels are decodable")
    labels, count = ndimage.label(mask, structure=np.ones((3, 3)))
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    largest = int(np.argmax(areas))
    ys, xs = np.nonzero(labels == largest)
    points = np.stack([xs, ys], axis=1).astype(np.float32)
    box = cv2.boxPoints(cv2.minAreaRect(points)).astype(np.float64)
    rect = _rect_from_box_points(box)
    rect = OrientedRect(rect.center, rect.width + 1., rect.height + 1.,
                        rect.angle)
    LOGGER.debug(
        f"Battery region: {count} components, largest {areas[largest]} px, "
        f"{rect}")
    return rect


def crop_rotate(
        image: ThermalImage,
        rect: OrientedRect,
        inset_fraction: float = DEFAULT_INSET) -> ThermalImage:
    """
    Resamples the rectangle interior into an axis-aligned image.

    Uses bilinear interpolation on RGB values.

    Parameters
    ----------
    image : ThermalImage
        Source image
    rect : OrientedRect
        Region to extract
    inset_fraction : float
        Fraction of the width and height removed on every side

    Returns
    -------
    ThermalImage
        Cropped image of size round(width * (1 - 2 * inset)) x
        round(height * (1 - 2 * inset))

    Raises
    ------
    CropError
        If the shrunk rectangle is empty or leaves the frame
    """
    if not 0. <= inset_fraction < 0.5:
        raise CropError(rect, f"inset {inset_fraction} not in [0, 0.5)")
    out_w = int(round(rect.width * (1 - 2 * inset_fraction)))
    out_h = int(round(rect.height * (1 - 2 * inset_fraction)))
    if out_w < 1 or out_h < 1:
        raise CropError(rect, f"degenerate output size {out_w}x{out_h}")

    theta = math.radians(rect.angle)
    cos, sin = math.cos(theta), math.sin(theta)
    cx, cy = rect.center
    ox, oy = (out_w - 1) / 2, (out_h - 1) / 2
    # Maps output pixel (i, j) to source (x, y)
    matrix = np.array([
        [cos, -sin, cx - cos * ox + sin * oy],
        [sin, cos, cy - sin * ox - cos * oy],
    ])
    sampled = np.array(
        [[0, 0, 1], [out_w - 1, 0, 1], [0, out_h - 1, 1],
         [out_w - 1, out_h - 1, 1]], dtype=np.float64) @ matrix.T
    if (sampled[:, 0] < -FRAME_TOLERANCE).any() or \
            (sampled[:, 0] > image.width - 1 + FRAME_TOLERANCE).any() or \
            (sampled[:, 1] < -FRAME_TOLERANCE).any() or \
            (sampled[:, 1] > image.height - 1 + FRAME_TOLERANCE).any():
        raise CropError(rect, "region leaves the frame")

    pixels = cv2.warpAffine(
        np.ascontiguousarray(image.pixels),
        matrix,
        (out_w, out_h),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_REPLICATE,
    )
    return ThermalImage(pixels)


def preprocess_image(
        image: ThermalImage,
        cmap: ColormapSpec,
        inset_fraction: float = DEFAULT_INSET
) -> Tuple[ThermalImage, OrientedRect]:
    """
    Detects the battery and crops it out of the image.
    """
    rect = detect_battery_region(image, cmap)
    return crop_rotate(image, rect, inset_fraction), rect


def preprocess_dataset(
        manifest_path: Path,
        out_dir: Path,
        cmap: ColormapSpec,
        inset_fraction: float = DEFAULT_INSET) -> Path:
    """
    Crops every image of a manifest dataset into another directory.

    Images where the battery cannot be detected are copied unchanged and
    flagged with `"preprocessed": false` in the new manifest.

    Parameters
    ----------
    manifest_path : Path
        Manifest of the source dataset
    out_dir : Path
        Output directory, receives the images and `manifest.jsonl`
    cmap : ColormapSpec
        Colormap of the images
    inset_fraction : float
        Inset passed to crop_rotate

    Returns
    -------
    Path
        Path of the new manifest
    """
    from thermovqa.synth import read_manifest, write_manifest

    out_dir = Path(out_dir)
    entries = read_manifest(manifest_path)
    new_entries: List[dict] = []
    for entry in entries:
        image = ThermalImage.load_png(entry.image_path)
        rect: Optional[OrientedRect] = None
        try:
            cropped, rect = preprocess_image(image, cmap, inset_fraction)
        except (DetectionError, CropError) as error:
            LOGGER.warning(f"{entry.image_id}: {error}, keeping original")
            cropped = image
        relative = Path('images') / f"{entry.image_id}.png"
        cropped.save_png(out_dir / relative)
        record = entry.to_json(relative)
        # ground-truth fields are aligned with the uncropped frame
        record.pop('field', None)
        record['preprocessed'] = rect is not None
        if rect is not None:
            record['crop'] = {
                'center': list(rect.center),
                'width': rect.width,
                'height': rect.height,
                'angle': rect.angle,
            }
        new_entries.append(record)
    manifest = out_dir / 'manifest.jsonl'
    write_manifest(manifest, new_entries)
    LOGGER.info(f"Preprocessed {len(new_entries)} images into {out_dir}")
    return manifest
