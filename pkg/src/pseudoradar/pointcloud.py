"""Point cloud frame types and frame / corpus I/O.

Frames store coordinates, intensity, and optional planar velocity as
read-only float64 arrays and are immutable after construction; pipeline
stages always return new frames. Three on-disk formats are supported:

* CSV with header ``x,y,z,intensity`` or ``x,y,z,intensity,vx,vy``
  (UTF-8, ``.`` decimal separator, values written with full 17-digit
  round-trip precision).
* Packed little-endian float32 x5 per point (x, y, z, intensity, ring;
  the ring index is discarded), the layout used by nuScenes LiDAR dumps.
* Compact native binary: 8-byte magic ``L2RPCF01``, a little-endian u64
  point count, then float64 x6 per point (x, y, z, intensity, vx, vy).

A corpus is a directory of frame files plus a ``manifest.json`` listing
``{"frame_id", "timestamp", "path"}`` per frame.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ParseError, SchemaError

COMPACT_MAGIC = b"L2RPCF01"
_NUSCENES_RECORD = 20  # five little-endian float32 per point


@dataclass(frozen=True)
class LidarPoint:
    x: float
    y: float
    z: float
    intensity: float


@dataclass(frozen=True)
class RadarPoint:
    x: float
    y: float
    z: float
    intensity: float
    vx: float
    vy: float


@dataclass(frozen=True)
class PointCloudFrame:
    """One timestamped sweep. ``velocity`` is (N, 2) planar (vx, vy) or None;
    absent velocity means zero, which is how plain LiDAR frames arrive."""

    frame_id: str
    timestamp: float
    xyz: np.ndarray
    intensity: np.ndarray
    velocity: np.ndarray | None = None

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (N, 3), got {xyz.shape}")
        inten = np.ascontiguousarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(inten) != len(xyz):
            raise ValueError(f"{len(inten)} intensities for {len(xyz)} points")
        if not np.isfinite(xyz).all() or not np.isfinite(inten).all():
            raise ValueError(f"frame {self.frame_id!r} contains non-finite values")
        if (inten < 0).any():
            raise ValueError(f"frame {self.frame_id!r} has negative intensity")
        vel = self.velocity
        if vel is not None:
            vel = np.ascontiguousarray(vel, dtype=np.float64)
            if vel.size == 0:
                vel = vel.reshape(0, 2)
            if vel.shape != (len(xyz), 2):
                raise ValueError(f"velocity must be (N, 2), got {vel.shape}")
            if not np.isfinite(vel).all():
                raise ValueError(f"frame {self.frame_id!r} has non-finite velocity")
            vel.setflags(write=False)
        xyz.setflags(write=False)
        inten.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "velocity", vel)

    @property
    def n_points(self) -> int:
        return len(self.xyz)

    def velocity_or_zero(self) -> np.ndarray:
        if self.velocity is not None:
            return self.velocity
        return np.zeros((self.n_points, 2))

    @property
    def points(self) -> tuple:
        """Point objects in storage order: RadarPoint when velocity is present."""
        if self.velocity is None:
            return tuple(
                LidarPoint(float(x), float(y), float(z), float(i))
                for (x, y, z), i in zip(self.xyz, self.intensity)
            )
        return tuple(
            RadarPoint(float(x), float(y), float(z), float(i), float(vx), float(vy))
            for (x, y, z), i, (vx, vy) in zip(self.xyz, self.intensity, self.velocity)
        )

    @classmethod
    def from_points(cls, frame_id: str, timestamp: float,
                    points: Iterable[LidarPoint | RadarPoint]) -> "PointCloudFrame":
        pts = list(points)
        xyz = np.array([[p.x, p.y, p.z] for p in pts], dtype=np.float64)
        inten = np.array([p.intensity for p in pts], dtype=np.float64)
        has_vel = any(isinstance(p, RadarPoint) for p in pts)
        vel = None
        if has_vel:
            vel = np.array(
                [[getattr(p, "vx", 0.0), getattr(p, "vy", 0.0)] for p in pts],
                dtype=np.float64,
            )
        return cls(frame_id, timestamp, xyz, inten, vel)

    def select(self, indices: np.ndarray) -> "PointCloudFrame":
        idx = np.asarray(indices, dtype=np.intp)
        vel = None if self.velocity is None else self.velocity[idx]
        return PointCloudFrame(self.frame_id, self.timestamp,
                               self.xyz[idx], self.intensity[idx], vel)


@dataclass(frozen=True)
class FrameStats:
    count: int
    centroid: tuple[float, float, float] | None
    mean_distance_to_origin: float | None
    intensity_range: tuple[float, float] | None


def frame_stats(frame: PointCloudFrame) -> FrameStats:
    if frame.n_points == 0:
        return FrameStats(0, None, None, None)
    c = frame.xyz.mean(axis=0)
    dist = np.sqrt((frame.xyz**2).sum(axis=1)).mean()
    return FrameStats(
        frame.n_points,
        (float(c[0]), float(c[1]), float(c[2])),
        float(dist),
        (float(frame.intensity.min()), float(frame.intensity.max())),
    )


# ---------------------------------------------------------------------------
# CSV


def write_frame_csv(frame: PointCloudFrame, path: str | Path) -> None:
    with_vel = frame.velocity is not None
    lines = ["x,y,z,intensity,vx,vy" if with_vel else "x,y,z,intensity"]
    vel = frame.velocity_or_zero()
    for i in range(frame.n_points):
        x, y, z = frame.xyz[i]
        cols = [repr(float(x)), repr(float(y)), repr(float(z)),
                repr(float(frame.intensity[i]))]
        if with_vel:
            cols += [repr(float(vel[i, 0])), repr(float(vel[i, 1]))]
        lines.append(",".join(cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_frame_csv(path: str | Path, frame_id: str | None = None,
                   timestamp: float = 0.0) -> PointCloudFrame:
    path = Path(path)
    if frame_id is None:
        frame_id = path.stem
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text: {exc}") from exc
    header = lines[0].strip() if lines else ""
    if header == "x,y,z,intensity":
        with_vel = False
    elif header == "x,y,z,intensity,vx,vy":
        with_vel = True
    elif header == "":
        raise SchemaError(f"{path}: empty file, expected a CSV header")
    else:
        raise SchemaError(f"{path}: unexpected header {header!r}")
    width = 6 if with_vel else 4
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.strip()
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != width:
            raise ParseError(f"{path}: expected {width} columns, got {len(cols)}",
                             line=lineno)
        try:
            rows.append([float(c) for c in cols])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from exc
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), width)
    vel = data[:, 4:6] if with_vel else None
    try:
        return PointCloudFrame(frame_id, timestamp, data[:, 0:3], data[:, 3], vel)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# nuScenes-style binary


def read_frame_nuscenes_bin(path: str | Path, frame_id: str | None = None,
                            timestamp: float = 0.0) -> PointCloudFrame:
    path = Path(path)
    if frame_id is None:
        frame_id = path.stem
    blob = path.read_bytes()
    if len(blob) % _NUSCENES_RECORD != 0:
        raise FormatError(
            f"{path}: size {len(blob)} is not a multiple of {_NUSCENES_RECORD} bytes"
        )
    raw = np.frombuffer(blob, dtype="<f4").reshape(-1, 5).astype(np.float64)
    return PointCloudFrame(frame_id, timestamp, raw[:, 0:3], raw[:, 3], None)


# ---------------------------------------------------------------------------
# compact native binary


def write_frame_bin(frame: PointCloudFrame, path: str | Path) -> None:
    vel = frame.velocity_or_zero()
    table = np.column_stack([frame.xyz, frame.intensity, vel]).astype("<f8")
    payload = COMPACT_MAGIC + struct.pack("<Q", frame.n_points) + table.tobytes(order="C")
    atomic_write_bytes(path, payload)


def read_frame_bin(path: str | Path, frame_id: str | None = None,
                   timestamp: float = 0.0) -> PointCloudFrame:
    path = Path(path)
    if frame_id is None:
        frame_id = path.stem
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != COMPACT_MAGIC:
        raise FormatError(f"{path}: bad or missing magic header")
    (count,) = struct.unpack("<Q", blob[8:16])
    expected = 16 + count * 48
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {count} points, "
                          f"got {len(blob)}")
    table = np.frombuffer(blob, dtype="<f8", offset=16).reshape(count, 6)
    return PointCloudFrame(frame_id, timestamp, table[:, 0:3], table[:, 3], table[:, 4:6])


# ---------------------------------------------------------------------------
# corpora


def write_corpus(dirpath: str | Path, frames: Sequence[PointCloudFrame],
                 fmt: str = "csv", extra: dict | None = None) -> dict:
    """Write frames plus a manifest; returns the manifest dict."""
    if fmt not in ("csv", "bin"):
        raise ValueError(f"unknown corpus format {fmt!r}")
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    entries = []
    for frame in frames:
        name = f"{frame.frame_id}.{fmt}"
        if fmt == "csv":
            write_frame_csv(frame, dirpath / name)
        else:
            write_frame_bin(frame, dirpath / name)
        entries.append({"frame_id": frame.frame_id,
                        "timestamp": frame.timestamp, "path": name})
    manifest = {"format": fmt, "frames": entries}
    if extra:
        manifest.update(extra)
    atomic_write_text(dirpath / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_corpus(dirpath: str | Path) -> list[PointCloudFrame]:
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{dirpath}: no manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc
    if "frames" not in manifest or "format" not in manifest:
        raise SchemaError(f"{manifest_path}: manifest needs 'format' and 'frames'")
    reader = read_frame_csv if manifest["format"] == "csv" else read_frame_bin
    frames = []
    for entry in manifest["frames"]:
        try:
            fid, ts, rel = entry["frame_id"], entry["timestamp"], entry["path"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{manifest_path}: bad frame entry {entry!r}") from exc
        frames.append(reader(dirpath / rel, frame_id=fid, timestamp=float(ts)))
    return frames


def load_manifest(dirpath: str | Path) -> dict:
    manifest_path = Path(dirpath) / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{dirpath}: no manifest.json")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# atomic writes (temp file in the target directory, then rename)


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
