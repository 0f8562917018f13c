"""Renders received-power frames as grayscale radio images and feature vectors."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import PowerFrame

RAW_FLATTEN = "raw-flatten"
RESIZED = "resized"


@dataclass(frozen=True)
class RadioImage:
    """Grayscale rendering of one power frame; pixel values in 0..255."""

    pixels: np.ndarray
    position_index: int
    averaging_factor: int = 1

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("image pixels must be a 2-D array")
        if px.min(initial=0) < 0 or px.max(initial=0) > 255:
            raise ValueError("pixel values must lie in [0, 255]")
        px = px.astype(np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    provenance: str = RAW_FLATTEN

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("feature vector must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class Dataset:
    """Flat sample table: one feature vector per (position, sample) pair."""

    features: np.ndarray
    position_index: np.ndarray
    labels: np.ndarray
    sample_index: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.position_index = np.asarray(self.position_index, dtype=int)
        self.labels = np.asarray(self.labels)
        self.sample_index = np.asarray(self.sample_index, dtype=int)
        n = self.features.shape[0]
        if not (len(self.position_index) == len(self.labels) == len(self.sample_index) == n):
            raise ValueError("dataset columns disagree on sample count")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_positions(self) -> int:
        return len(np.unique(self.position_index))

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[mask],
            position_index=self.position_index[mask],
            labels=self.labels[mask],
            sample_index=self.sample_index[mask],
        )


def average_frames(frames: Sequence[PowerFrame]) -> PowerFrame:
    """Elementwise mean of frames from one position; noise variance shrinks by S."""
    if len(frames) == 0:
        raise ValueError("need at least one frame to average")
    first = frames[0]
    for f in frames[1:]:
        if f.position_index != first.position_index:
            raise ValueError("frames come from different positions")
        if f.noise_var != first.noise_var:
            raise ValueError("frames were drawn with different noise variances")
    stacked = np.stack([f.w for f in frames])
    return PowerFrame(
        position_index=first.position_index,
        sample_index=first.sample_index,
        w=stacked.mean(axis=0),
        noise_var=first.noise_var,
    )


def to_image(frame: PowerFrame, rows: int, cols: int, averaging_factor: int = 1) -> RadioImage:
    """Min-max scale one frame into 0..255 with ceil rounding.

    The minimum power maps to 0 and the maximum to 255; a flat frame maps to
    all zeros. Clamping happens after the ceil so the maximum lands exactly
    on 255 despite float fuzz.
    """
    w = np.asarray(frame.w, dtype=float)
    if w.size != rows * cols:
        raise ValueError(f"frame has {w.size} antennas, expected {rows * cols}")
    if w.size < 2:
        raise ValueError("images need at least two antennas")
    w = w.reshape(rows, cols)
    w_min, w_max = w.min(), w.max()
    if w_max == w_min:
        pixels = np.zeros((rows, cols), dtype=np.uint8)
    else:
        scaled = np.ceil((w - w_min) * 255.0 / (w_max - w_min))
        pixels = np.clip(scaled, 0, 255).astype(np.uint8)
    return RadioImage(
        pixels=pixels,
        position_index=frame.position_index,
        averaging_factor=averaging_factor,
    )


def _bilinear_resize(arr: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Separable bilinear resize sampling the corner-aligned grid.

    Sampling positions are linspace(0, n-1, out), so resizing to the source
    size is the identity and upsampling is permitted.
    """

    def axis_resize(a: np.ndarray, out_n: int) -> np.ndarray:
        n = a.shape[0]
        if out_n == n:
            return a
        pos = np.linspace(0.0, n - 1.0, out_n)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        frac = (pos - lo)[:, None] if a.ndim > 1 else pos - lo
        return a[lo] * (1.0 - frac) + a[hi] * frac

    work = axis_resize(arr.astype(float), out_rows)
    return axis_resize(work.T, out_cols).T


def to_features(
    img: RadioImage,
    mode: str = RESIZED,
    size: tuple[int, int] = (32, 32),
) -> FeatureVector:
    """Flatten an image into a [0, 1] feature vector, optionally resized."""
    pixels = img.pixels.astype(float) / 255.0
    if mode == RAW_FLATTEN:
        return FeatureVector(values=pixels.reshape(-1), provenance=RAW_FLATTEN)
    if mode == RESIZED:
        resized = _bilinear_resize(pixels, size[0], size[1])
        return FeatureVector(values=resized.reshape(-1), provenance=RESIZED)
    raise ValueError(f"unknown feature mode {mode!r}")


def export_pgm(img: RadioImage, path: str) -> None:
    """Binary PGM (P5), maxval 255, row-major."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.tobytes())


def import_pgm(path: str, position_index: int = 0, averaging_factor: int = 1) -> RadioImage:
    with open(path, "rb") as fh:
        data = fh.read()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not match:
        raise ValueError(f"{path} is not a binary PGM file")
    width, height, maxval = (int(match.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise ValueError("only maxval 255 PGM files are supported")
    raw = data[match.end():]
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height).reshape(height, width)
    return RadioImage(
        pixels=pixels.copy(),
        position_index=position_index,
        averaging_factor=averaging_factor,
    )


# ---------------------------------------------------------------------------
# dataset manifest


def write_manifest(dataset: Dataset, path: str, image_paths: Sequence[str] | None = None) -> None:
    """Manifest CSV: sample id, position id, label, image path or inline features."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "position_id", "label", "image_path", "features"])
        for i in range(dataset.num_samples):
            img_path = image_paths[i] if image_paths is not None else ""
            inline = ""
            if image_paths is None:
                inline = ";".join(repr(float(v)) for v in dataset.features[i])
            writer.writerow(
                [i, int(dataset.position_index[i]), str(dataset.labels[i]), img_path, inline]
            )


def read_manifest(path: str) -> Dataset:
    """Rebuild a dataset from a manifest, reading PGM files when referenced."""
    features, positions, labels, samples = [], [], [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            samples.append(int(row["sample_id"]))
            positions.append(int(row["position_id"]))
            labels.append(row["label"])
            if row["image_path"]:
                img = import_pgm(row["image_path"], position_index=int(row["position_id"]))
                features.append(to_features(img, mode=RAW_FLATTEN).values)
            else:
                features.append(np.array([float(v) for v in row["features"].split(";")]))
    return Dataset(
        features=np.asarray(features),
        position_index=np.asarray(positions),
        labels=np.asarray(labels),
        sample_index=np.asarray(samples),
    )
