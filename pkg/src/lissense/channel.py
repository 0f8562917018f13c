"""Deterministic multipath simulator for a wall-mounted antenna surface.

The propagation model is free space with line-of-sight plus single-bounce
specular reflections off axis-aligned rectangular panels, computed with the
image method. Per-path field amplitude is sqrt(30 * P_t) * gamma / d (V/m)
and the per-antenna complex channel absorbs the aperture conversion
sqrt(lambda^2 / (4 * pi * Z0)) so that |h_i|^2 is received power in watts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import yaml

SPEED_OF_LIGHT = 299_792_458.0
FREE_SPACE_IMPEDANCE = 120.0 * math.pi

_AXES = {"x": 0, "y": 1, "z": 2}

CORRECT = "correct"
ANOMALOUS = "anomalous"


@dataclass(frozen=True)
class Reflector:
    """Axis-aligned rectangular panel with a scalar reflection coefficient.

    ``axis`` names the panel normal; ``size`` holds the panel extents along
    the two in-plane axes in ascending axis order (e.g. for axis "y" the
    extents are along x then z).
    """

    axis: str
    center: tuple[float, float, float]
    size: tuple[float, float]
    gamma: float = 0.7

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValueError(f"reflector axis must be one of x/y/z, got {self.axis!r}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"reflection coefficient must be in [0, 1], got {self.gamma}")
        if min(self.size) <= 0:
            raise ValueError("reflector extents must be positive")

    @property
    def normal_axis(self) -> int:
        return _AXES[self.axis]

    @property
    def plane_axes(self) -> tuple[int, int]:
        a = self.normal_axis
        return tuple(i for i in range(3) if i != a)  # type: ignore[return-value]

    @property
    def offset(self) -> float:
        return self.center[self.normal_axis]

    def corners_low_high(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array(self.center, dtype=float)
        hi = lo.copy()
        for half, ax in zip(self.size, self.plane_axes):
            lo[ax] -= half / 2.0
            hi[ax] += half / 2.0
        return lo, hi


@dataclass(frozen=True)
class LisSpec:
    """Placement of the sensing surface on a wall.

    ``axis`` is the wall normal. Element (0, 0) sits at ``anchor``; columns
    advance along the first in-plane axis and rows along the second, both
    with uniform pitch ``spacing``.
    """

    anchor: tuple[float, float, float]
    rows: int
    cols: int
    spacing: float
    axis: str = "y"

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValueError(f"LIS axis must be one of x/y/z, got {self.axis!r}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("LIS must have at least one row and one column")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def num_elements(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Scene:
    """Immutable propagation world: room, surface, panels, carrier, power."""

    room: tuple[float, float, float]
    lis: LisSpec
    carrier_hz: float
    tx_power_w: float
    max_paths: int = 10
    reflectors: tuple[Reflector, ...] = ()

    def __post_init__(self):
        if min(self.room) <= 0:
            raise ValueError("room extents must be positive")
        if self.carrier_hz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.tx_power_w <= 0:
            raise ValueError("transmit power must be positive")
        if self.max_paths < 1:
            raise ValueError("path budget must be at least 1")
        object.__setattr__(self, "reflectors", tuple(self.reflectors))
        for r in self.reflectors:
            lo, hi = r.corners_low_high()
            if np.any(lo < -1e-9) or np.any(hi > np.asarray(self.room) + 1e-9):
                raise ValueError(f"reflector {r} extends outside the room")
        grid = build_lis_grid(self)
        if np.any(grid < -1e-9) or np.any(grid > np.asarray(self.room) + 1e-9):
            raise ValueError("LIS grid extends outside the room")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def contains(self, point: Sequence[float]) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= 0) and np.all(p <= np.asarray(self.room)))


@dataclass(frozen=True)
class Trajectory:
    """Ordered robot positions with a correct/anomalous label per point."""

    points: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("trajectory needs an (n, 3) array with n >= 1")
        if len(self.labels) != pts.shape[0]:
            raise ValueError("one label per point required")
        for lab in self.labels:
            if lab not in (CORRECT, ANOMALOUS):
                raise ValueError(f"unknown label {lab!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def correct_indices(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels) == CORRECT)

    @property
    def anomalous_indices(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels) == ANOMALOUS)

    def validate_inside(self, scene: Scene) -> None:
        room = np.asarray(scene.room)
        if np.any(self.points < -1e-9) or np.any(self.points > room + 1e-9):
            raise ValueError("trajectory leaves the room")


@dataclass(frozen=True)
class ChannelSnapshot:
    """Per-antenna complex channel for one transmitter position (noise free)."""

    position_index: int
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def g(self) -> np.ndarray:
        """Per-antenna channel power |h_i|^2 in watts."""
        return np.abs(self.h) ** 2

    @property
    def num_elements(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class PowerFrame:
    """One noisy received-power sample w_i = |h_i + n_i|^2 per antenna."""

    position_index: int
    sample_index: int
    w: np.ndarray
    noise_var: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w < 0):
            raise ValueError("received powers cannot be negative")
        if self.noise_var <= 0:
            raise ValueError("noise variance must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


class Path(NamedTuple):
    length: float
    amplitude: float
    phase: float


def build_lis_grid(scene: Scene) -> np.ndarray:
    """Antenna element positions, shape (rows*cols, 3), row-major."""
    lis = scene.lis
    col_ax, row_ax = [i for i in range(3) if i != _AXES[lis.axis]]
    grid = np.tile(np.asarray(lis.anchor, dtype=float), (lis.num_elements, 1))
    rr, cc = np.divmod(np.arange(lis.num_elements), lis.cols)
    grid[:, col_ax] += cc * lis.spacing
    grid[:, row_ax] += rr * lis.spacing
    return grid


def _mirror_point(point: np.ndarray, axis: int, offset: float) -> np.ndarray:
    out = point.copy()
    out[axis] = 2.0 * offset - out[axis]
    return out


def _path_table(scene: Scene, tx: np.ndarray, rx: np.ndarray):
    """Candidate path lengths/amplitudes from tx to each rx row.

    Returns (lengths, amplitudes, valid), each (n_candidates, n_rx). The
    first candidate is line of sight, then one per reflector. A reflected
    path is valid only when tx and rx sit strictly on the same side of the
    panel plane and the specular point falls on the finite panel; anything
    else is silently dropped.
    """
    n_rx = rx.shape[0]
    field_scale = math.sqrt(30.0 * scene.tx_power_w)
    n_cand = 1 + len(scene.reflectors)
    lengths = np.zeros((n_cand, n_rx))
    amps = np.zeros((n_cand, n_rx))
    valid = np.zeros((n_cand, n_rx), dtype=bool)

    d_los = np.linalg.norm(rx - tx, axis=1)
    ok = d_los > 0
    lengths[0] = d_los
    amps[0, ok] = field_scale / d_los[ok]
    valid[0] = ok

    for k, panel in enumerate(scene.reflectors, start=1):
        ax = panel.normal_axis
        side_tx = tx[ax] - panel.offset
        side_rx = rx[:, ax] - panel.offset
        same_side = (side_tx * side_rx) > 0
        if side_tx == 0 or not np.any(same_side):
            continue
        image = _mirror_point(tx, ax, panel.offset)
        delta = rx - image
        denom = delta[:, ax]
        usable = same_side & (denom != 0)
        t = np.zeros(n_rx)
        t[usable] = (panel.offset - image[ax]) / denom[usable]
        spec = image[None, :] + t[:, None] * delta
        on_panel = usable.copy()
        for half, pax in zip(panel.size, panel.plane_axes):
            on_panel &= np.abs(spec[:, pax] - panel.center[pax]) <= half / 2.0 + 1e-12
        d_ref = np.linalg.norm(delta, axis=1)
        on_panel &= d_ref > 0
        lengths[k] = d_ref
        amps[k, on_panel] = field_scale * panel.gamma / d_ref[on_panel]
        valid[k] = on_panel

    return lengths, amps, valid


def trace_paths(scene: Scene, tx: Sequence[float], rx: Sequence[float]) -> list[Path]:
    """Propagation paths from tx to rx, strongest first, capped at max_paths."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if np.array_equal(tx, rx):
        raise ValueError("tx and rx coincide")
    lengths, amps, valid = _path_table(scene, tx, rx[None, :])
    lam = scene.wavelength
    paths = [
        Path(length=float(d), amplitude=float(a), phase=float(-2.0 * math.pi * d / lam))
        for d, a, v in zip(lengths[:, 0], amps[:, 0], valid[:, 0])
        if v
    ]
    paths.sort(key=lambda p: p.amplitude, reverse=True)
    return paths[: scene.max_paths]


def channel_at(scene: Scene, tx: Sequence[float], position_index: int = 0) -> ChannelSnapshot:
    """Noise-free complex channel h for one transmitter position."""
    tx = np.asarray(tx, dtype=float)
    if not scene.contains(tx):
        raise ValueError(f"transmitter {tx} is outside the room")
    rx = build_lis_grid(scene)
    lengths, amps, valid = _path_table(scene, tx, rx)
    if lengths.shape[0] > scene.max_paths:
        # keep the max_paths strongest candidates per antenna
        order = np.argsort(np.where(valid, amps, -1.0), axis=0)[::-1][: scene.max_paths]
        lengths = np.take_along_axis(lengths, order, axis=0)
        amps = np.take_along_axis(amps, order, axis=0)
        valid = np.take_along_axis(valid, order, axis=0)
    lam = scene.wavelength
    phases = -2.0 * math.pi * lengths / lam
    fields = np.where(valid, amps, 0.0) * np.exp(1j * phases)
    conversion = math.sqrt(lam**2 / (4.0 * math.pi * FREE_SPACE_IMPEDANCE))
    h = conversion * fields.sum(axis=0)
    return ChannelSnapshot(position_index=position_index, h=h)


def sample_power(
    snapshot: ChannelSnapshot,
    noise_var: float,
    seed: int | np.random.Generator,
    sample_index: int = 0,
) -> PowerFrame:
    """Draw one received-power frame; identical integer seed, identical frame."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = snapshot.num_elements
    noise = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) * math.sqrt(noise_var / 2.0)
    w = np.abs(snapshot.h + noise) ** 2
    return PowerFrame(
        position_index=snapshot.position_index,
        sample_index=sample_index,
        w=w,
        noise_var=noise_var,
    )


def average_snr(snapshots: Sequence[ChannelSnapshot], noise_var: float) -> float:
    """Route-averaged SNR in dB: mean per-antenna channel power over noise power."""
    if len(snapshots) == 0:
        raise ValueError("need at least one snapshot")
    total = sum(float(np.sum(s.g)) for s in snapshots)
    count = sum(s.num_elements for s in snapshots)
    return 10.0 * math.log10(total / (count * noise_var))


def sigma_for_snr(snapshots: Sequence[ChannelSnapshot], target_db: float) -> float:
    """Noise variance that makes average_snr hit target_db exactly."""
    if len(snapshots) == 0:
        raise ValueError("need at least one snapshot")
    total = sum(float(np.sum(s.g)) for s in snapshots)
    count = sum(s.num_elements for s in snapshots)
    return total / (count * 10.0 ** (target_db / 10.0))


# ---------------------------------------------------------------------------
# file formats


def scene_to_dict(scene: Scene) -> dict:
    return {
        "room": list(scene.room),
        "carrier_hz": scene.carrier_hz,
        "tx_power_w": scene.tx_power_w,
        "max_paths": scene.max_paths,
        "lis": {
            "axis": scene.lis.axis,
            "anchor": list(scene.lis.anchor),
            "rows": scene.lis.rows,
            "cols": scene.lis.cols,
            "spacing": scene.lis.spacing,
        },
        "reflectors": [
            {
                "axis": r.axis,
                "center": list(r.center),
                "size": list(r.size),
                "gamma": r.gamma,
            }
            for r in scene.reflectors
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    lis = data["lis"]
    return Scene(
        room=tuple(float(v) for v in data["room"]),
        lis=LisSpec(
            anchor=tuple(float(v) for v in lis["anchor"]),
            rows=int(lis["rows"]),
            cols=int(lis["cols"]),
            spacing=float(lis["spacing"]),
            axis=str(lis.get("axis", "y")),
        ),
        carrier_hz=float(data["carrier_hz"]),
        tx_power_w=float(data["tx_power_w"]),
        max_paths=int(data.get("max_paths", 10)),
        reflectors=tuple(
            Reflector(
                axis=str(r["axis"]),
                center=tuple(float(v) for v in r["center"]),
                size=tuple(float(v) for v in r["size"]),
                gamma=float(r.get("gamma", 0.7)),
            )
            for r in data.get("reflectors", [])
        ),
    )


def load_scene(path: str) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(yaml.safe_load(fh))


def save_scene(scene: Scene, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scene_to_dict(scene), fh, sort_keys=False)


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "points": [
            {"p": [float(v) for v in p], "label": lab}
            for p, lab in zip(traj.points, traj.labels)
        ]
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    records = data["points"]
    pts = np.array([rec["p"] for rec in records], dtype=float)
    labels = tuple(str(rec["label"]) for rec in records)
    return Trajectory(points=pts, labels=labels)


def load_trajectory(path: str) -> Trajectory:
    with open(path, "r", encoding="utf-8") as fh:
        return trajectory_from_dict(yaml.safe_load(fh))


def save_trajectory(traj: Trajectory, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(trajectory_to_dict(traj), fh, sort_keys=False)


def export_snapshot_csv(snapshot: ChannelSnapshot, path: str) -> None:
    """Write one row per antenna: index, Re h, Im h."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["antenna_index", "re_h", "im_h"])
        for i, value in enumerate(snapshot.h):
            writer.writerow([i, repr(float(value.real)), repr(float(value.imag))])


def import_snapshot_csv(path: str, position_index: int = 0) -> ChannelSnapshot:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        values = [complex(float(re), float(im)) for _, re, im in reader]
    return ChannelSnapshot(position_index=position_index, h=np.asarray(values))
