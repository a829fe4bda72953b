"""Lane-frame trajectory containers, NGSIM-style ingestion, and dataset files.

Coordinate convention: x_long runs along the road, x_lat across it, and the
lane index increases to the driver's left. Lane k spans
[k*lane_width, (k+1)*lane_width), so floor(x_lat / lane_width) is the lane
assignment of every stored state and k*lane_width is dividing line k.
All trajectories are sampled at 10 Hz.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger("vbin.datamodel")

FRAME_RATE_HZ = 10

LK, LCL, LCR = 0, 1, 2
LABEL_NAMES = {LK: "LK", LCL: "LCL", LCR: "LCR"}

# dims echoed in the dataset file header
FEATURE_DIM = 6
CONNECTION_DIM = 6
NUM_NEIGHBOR_SLOTS = 8
OBS_WINDOW = 20
PRED_WINDOW = 40


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class FormatError(ValueError):
    """A file does not match the expected format or version."""


class IntegrityError(FormatError):
    """A file is truncated or its payload is corrupted."""


@dataclass(frozen=True)
class RoadGeometry:
    """Straight road with parallel constant-width lanes."""

    lane_count: int
    lane_width: float = 3.7

    def __post_init__(self):
        if self.lane_count < 2:
            raise ValidationError(f"lane_count must be >= 2, got {self.lane_count}")
        if not self.lane_width > 0:
            raise ValidationError(f"lane_width must be > 0, got {self.lane_width}")

    def lane_center(self, lane_id: int) -> float:
        return (lane_id + 0.5) * self.lane_width

    def lane_of(self, x_lat: float) -> int:
        return int(math.floor(x_lat / self.lane_width))

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width


@dataclass
class VehicleState:
    """One vehicle at one 10 Hz tick, in the lane frame."""

    vehicle_id: int
    frame: int
    lane_id: int
    x_long: float
    x_lat: float
    v_long: float
    v_lat: float
    theta: float


@dataclass
class Track:
    """Frame-contiguous trajectory of a single vehicle.

    Arrays are indexed by frame offset from ``start_frame``; ``lane_id`` is
    derived from ``x_lat`` so the lane-assignment invariant holds by
    construction.
    """

    vehicle_id: int
    start_frame: int
    x_long: np.ndarray
    x_lat: np.ndarray
    v_long: np.ndarray
    v_lat: np.ndarray
    theta: np.ndarray
    lane_id: np.ndarray = field(default=None)  # filled by Scene

    def __len__(self) -> int:
        return len(self.x_long)

    @property
    def end_frame(self) -> int:
        """Last frame (inclusive)."""
        return self.start_frame + len(self) - 1

    def has_frame(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def index_of(self, frame: int) -> int:
        if not self.has_frame(frame):
            raise KeyError(f"vehicle {self.vehicle_id} has no frame {frame}")
        return frame - self.start_frame

    def state(self, frame: int) -> VehicleState:
        i = self.index_of(frame)
        return VehicleState(self.vehicle_id, frame, int(self.lane_id[i]),
                            float(self.x_long[i]), float(self.x_lat[i]),
                            float(self.v_long[i]), float(self.v_lat[i]),
                            float(self.theta[i]))


class Scene:
    """Immutable collection of vehicle tracks on one road.

    Validates on construction: unique vehicle ids, finite values, headings
    below pi/2 in magnitude, and lateral positions inside the road (so every
    derived lane id is within the road definition).
    """

    def __init__(self, road: RoadGeometry, tracks: list[Track], ident: int = 0,
                 frame_rate_hz: int = FRAME_RATE_HZ):
        self.road = road
        self.ident = ident
        self.frame_rate_hz = frame_rate_hz
        self.tracks: dict[int, Track] = {}
        for tr in tracks:
            if tr.vehicle_id in self.tracks:
                raise ValidationError(f"duplicate vehicle id {tr.vehicle_id}")
            n = len(tr)
            for name in ("x_long", "x_lat", "v_long", "v_lat", "theta"):
                arr = getattr(tr, name)
                if len(arr) != n:
                    raise ValidationError(f"vehicle {tr.vehicle_id}: {name} "
                                          f"length {len(arr)} != {n}")
                if not np.all(np.isfinite(arr)):
                    raise ValidationError(f"vehicle {tr.vehicle_id}: non-finite {name}")
            if tr.start_frame < 0:
                raise ValidationError(f"vehicle {tr.vehicle_id}: negative start frame")
            if np.any(np.abs(tr.theta) >= math.pi / 2):
                raise ValidationError(f"vehicle {tr.vehicle_id}: |theta| >= pi/2")
            if n and (tr.x_lat.min() < 0 or tr.x_lat.max() >= road.width):
                raise ValidationError(f"vehicle {tr.vehicle_id}: lateral position "
                                      "outside road")
            tr.lane_id = np.floor(tr.x_lat / road.lane_width).astype(np.int64)
            self.tracks[tr.vehicle_id] = tr

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted(self.tracks)

    def track(self, vehicle_id: int) -> Track:
        return self.tracks[vehicle_id]

    def frame_range(self) -> tuple[int, int]:
        """(min, max) frame over all tracks; (0, -1) when empty."""
        if not self.tracks:
            return 0, -1
        return (min(t.start_frame for t in self.tracks.values()),
                max(t.end_frame for t in self.tracks.values()))

    def states_at(self, frame: int) -> list[VehicleState]:
        return [t.state(frame) for t in self.tracks.values() if t.has_frame(frame)]


@dataclass
class LabeledSample:
    """One prediction instance, fully assembled for the network.

    ``event_frame``/``event_direction`` identify the event the sample belongs
    to: a dividing-line crossing at that frame (direction LCL/LCR), or an LK
    segment starting there (direction 0). ``ttlc`` is the time until the
    event's crossing; +inf for LK segments, and it stays finite above 4 s for
    the early lane-change window where the label is still LK.
    """

    scene_id: int
    vehicle_id: int
    frame: int
    label: int
    ttlc: float
    event_frame: int
    event_direction: int
    target_seq: np.ndarray       # (20, 6)
    neighbor_seqs: np.ndarray    # (8, 20, 6)
    connections: np.ndarray      # (8, 6)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledSample):
            return NotImplemented
        return (self.scene_id == other.scene_id
                and self.vehicle_id == other.vehicle_id
                and self.frame == other.frame
                and self.label == other.label
                and (self.ttlc == other.ttlc
                     or (math.isinf(self.ttlc) and math.isinf(other.ttlc)))
                and self.event_frame == other.event_frame
                and self.event_direction == other.event_direction
                and np.array_equal(self.target_seq, other.target_seq)
                and np.array_equal(self.neighbor_seqs, other.neighbor_seqs)
                and np.array_equal(self.connections, other.connections))

    def event_key(self) -> tuple[int, int, int, int]:
        return (self.scene_id, self.vehicle_id, self.event_frame,
                self.event_direction)


# ---------------------------------------------------------------------------
# dataset file format: magic "VBIN", little-endian, length-prefixed records

_DATASET_MAGIC = b"VBIN"
_DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHHHHHHQ")
_RECORD_FIXED = struct.Struct("<qqqqBBd")
_SEQ_FLOATS = OBS_WINDOW * FEATURE_DIM
_RECORD_FLOATS = (_SEQ_FLOATS * (1 + NUM_NEIGHBOR_SLOTS)
                  + NUM_NEIGHBOR_SLOTS * CONNECTION_DIM)


def save_dataset(samples: list[LabeledSample], path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_DATASET_MAGIC, _DATASET_VERSION, FEATURE_DIM,
                              CONNECTION_DIM, NUM_NEIGHBOR_SLOTS, OBS_WINDOW,
                              PRED_WINDOW, len(samples)))
        for s in samples:
            ttlc_inf = 1 if math.isinf(s.ttlc) else 0
            body = _RECORD_FIXED.pack(s.scene_id, s.vehicle_id, s.frame,
                                      s.event_frame, s.label, (ttlc_inf << 4)
                                      | s.event_direction,
                                      0.0 if ttlc_inf else s.ttlc)
            body += np.ascontiguousarray(s.target_seq, dtype="<f8").tobytes()
            body += np.ascontiguousarray(s.neighbor_seqs, dtype="<f8").tobytes()
            body += np.ascontiguousarray(s.connections, dtype="<f8").tobytes()
            fh.write(struct.pack("<I", len(body)))
            fh.write(body)


def load_dataset(path) -> list[LabeledSample]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise IntegrityError(f"{path}: truncated header")
        (magic, version, fdim, cdim, nslots, obs, pred,
         n_records) = _HEADER.unpack(head)
        if magic != _DATASET_MAGIC:
            raise FormatError(f"{path}: not a dataset file (bad magic)")
        if version != _DATASET_VERSION:
            raise FormatError(f"{path}: dataset version {version}, "
                              f"expected {_DATASET_VERSION}")
        if (fdim, cdim, nslots, obs, pred) != (FEATURE_DIM, CONNECTION_DIM,
                                               NUM_NEIGHBOR_SLOTS, OBS_WINDOW,
                                               PRED_WINDOW):
            raise FormatError(f"{path}: unexpected dimensions in header")
        expected_len = _RECORD_FIXED.size + 8 * _RECORD_FLOATS
        samples = []
        for _ in range(n_records):
            raw_len = fh.read(4)
            if len(raw_len) < 4:
                raise IntegrityError(f"{path}: truncated record prefix")
            (rec_len,) = struct.unpack("<I", raw_len)
            if rec_len != expected_len:
                raise IntegrityError(f"{path}: record length {rec_len}, "
                                     f"expected {expected_len}")
            body = fh.read(rec_len)
            if len(body) < rec_len:
                raise IntegrityError(f"{path}: truncated record body")
            (scene_id, vehicle_id, frame, event_frame, label, packed,
             ttlc) = _RECORD_FIXED.unpack_from(body)
            if packed >> 4:
                ttlc = math.inf
            floats = np.frombuffer(body, dtype="<f8",
                                   offset=_RECORD_FIXED.size)
            pos = 0
            target = floats[pos:pos + _SEQ_FLOATS].reshape(OBS_WINDOW,
                                                           FEATURE_DIM).copy()
            pos += _SEQ_FLOATS
            nbr = floats[pos:pos + _SEQ_FLOATS * NUM_NEIGHBOR_SLOTS].reshape(
                NUM_NEIGHBOR_SLOTS, OBS_WINDOW, FEATURE_DIM).copy()
            pos += _SEQ_FLOATS * NUM_NEIGHBOR_SLOTS
            conn = floats[pos:pos + NUM_NEIGHBOR_SLOTS * CONNECTION_DIM].reshape(
                NUM_NEIGHBOR_SLOTS, CONNECTION_DIM).copy()
            samples.append(LabeledSample(scene_id, vehicle_id, frame, label,
                                         ttlc, event_frame, packed & 0xF,
                                         target, nbr, conn))
        return samples


# ---------------------------------------------------------------------------
# scene file format: magic "VBSC"

_SCENE_MAGIC = b"VBSC"
_SCENE_VERSION = 1


def save_scenes(scenes: list[Scene], path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", _SCENE_MAGIC, _SCENE_VERSION, len(scenes)))
        for sc in scenes:
            fh.write(struct.pack("<qIdII", sc.ident, sc.road.lane_count,
                                 sc.road.lane_width, sc.frame_rate_hz,
                                 len(sc.tracks)))
            for vid in sc.vehicle_ids:
                tr = sc.tracks[vid]
                fh.write(struct.pack("<qqQ", tr.vehicle_id, tr.start_frame,
                                     len(tr)))
                for arr in (tr.x_long, tr.x_lat, tr.v_long, tr.v_lat, tr.theta):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_scenes(path) -> list[Scene]:
    with open(path, "rb") as fh:
        head = fh.read(10)
        if len(head) < 10:
            raise IntegrityError(f"{path}: truncated header")
        magic, version, n_scenes = struct.unpack("<4sHI", head)
        if magic != _SCENE_MAGIC:
            raise FormatError(f"{path}: not a scene file (bad magic)")
        if version != _SCENE_VERSION:
            raise FormatError(f"{path}: scene version {version}, "
                              f"expected {_SCENE_VERSION}")
        scenes = []
        for _ in range(n_scenes):
            raw = fh.read(struct.calcsize("<qIdII"))
            if len(raw) < struct.calcsize("<qIdII"):
                raise IntegrityError(f"{path}: truncated scene header")
            ident, lanes, width, rate, n_tracks = struct.unpack("<qIdII", raw)
            tracks = []
            for _ in range(n_tracks):
                thead = fh.read(24)
                if len(thead) < 24:
                    raise IntegrityError(f"{path}: truncated track header")
                vid, start, n = struct.unpack("<qqQ", thead)
                cols = []
                for _ in range(5):
                    buf = fh.read(8 * n)
                    if len(buf) < 8 * n:
                        raise IntegrityError(f"{path}: truncated track data")
                    cols.append(np.frombuffer(buf, dtype="<f8").copy())
                tracks.append(Track(vid, start, *cols))
            scenes.append(Scene(RoadGeometry(lanes, width), tracks,
                                ident=ident, frame_rate_hz=rate))
        return scenes


# ---------------------------------------------------------------------------
# NGSIM-style ingestion

NGSIM_COLUMN_KEYS = ("vehicle_id", "frame", "lateral", "longitudinal",
                     "speed", "lane")


@dataclass
class IngestConfig:
    """Knobs for reading delimited trajectory exports.

    ``lane_id_base`` is subtracted from the file's lane column (NGSIM lanes
    are 1-based). ``unit_scale`` converts positions and speeds to meters
    (0.3048 for feet). The file's lane column is used for range validation
    only; stored lane ids are derived from the lateral position.
    """

    delimiter: str = ","
    lane_width: float = 3.7
    lane_count: int | None = None
    lane_id_base: int = 1
    unit_scale: float = 1.0
    smoothing_window: int = 5
    swap_axes: bool = False     # set if the file's X is longitudinal


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with a window that shrinks at the edges."""
    n = len(x)
    if n == 0 or window <= 1:
        return x.astype(np.float64, copy=True)
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(x, dtype=np.float64)))
    idx = np.arange(n)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(n, idx + half + 1)
    return (csum[hi] - csum[lo]) / (hi - lo)


def _derive_lateral_motion(x_lat: np.ndarray, v_long: np.ndarray,
                           window: int) -> tuple[np.ndarray, np.ndarray]:
    """Backward-difference lateral velocity (first frame copied) + heading."""
    if len(x_lat) < 2:
        v_lat = np.zeros_like(x_lat)
    else:
        d = np.diff(x_lat) * FRAME_RATE_HZ
        v_lat = np.concatenate((d[:1], d))
    v_lat = moving_average(v_lat, window)
    theta = np.arctan2(v_lat, np.maximum(v_long, 0.1))
    return v_lat, theta


def ingest_ngsim(path, column_map: dict, config: IngestConfig | None = None) -> Scene:
    """Read a delimited trajectory file into a lane-frame Scene.

    ``column_map`` maps the keys in ``NGSIM_COLUMN_KEYS`` to header names
    (str) or 0-based column indices (int). Vehicles with frame gaps are split
    into separate tracks (fresh ids, with a warning). Raises FormatError for
    missing columns and ValidationError for out-of-range lane ids.
    """
    cfg = config or IngestConfig()
    missing = [k for k in NGSIM_COLUMN_KEYS if k not in column_map]
    if missing:
        raise FormatError(f"{path}: column map missing {missing}")

    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]

    by_name = any(isinstance(column_map[k], str) for k in NGSIM_COLUMN_KEYS)
    col_idx: dict[str, int] = {}
    rows_start = 0
    if by_name:
        if not lines:
            raise FormatError(f"{path}: empty file but named columns requested")
        header = [h.strip() for h in lines[0].split(cfg.delimiter)]
        for key in NGSIM_COLUMN_KEYS:
            name = column_map[key]
            if name not in header:
                raise FormatError(f"{path}: column {name!r} (for {key}) "
                                  "not in header")
            col_idx[key] = header.index(name)
        rows_start = 1
    else:
        col_idx = {k: int(column_map[k]) for k in NGSIM_COLUMN_KEYS}

    raw: dict[int, list[tuple]] = {}
    for ln in lines[rows_start:]:
        parts = [p.strip() for p in ln.split(cfg.delimiter)]
        try:
            vid = int(float(parts[col_idx["vehicle_id"]]))
            frame = int(float(parts[col_idx["frame"]]))
            lat = float(parts[col_idx["lateral"]]) * cfg.unit_scale
            lon = float(parts[col_idx["longitudinal"]]) * cfg.unit_scale
            speed = float(parts[col_idx["speed"]]) * cfg.unit_scale
            lane = int(float(parts[col_idx["lane"]]))
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: unparseable row {ln!r}: {exc}") from exc
        if cfg.swap_axes:
            lat, lon = lon, lat
        raw.setdefault(vid, []).append((frame, lat, lon, speed, lane))

    if not raw:
        return Scene(RoadGeometry(cfg.lane_count or 2, cfg.lane_width), [])

    # range-validate the file's lane column
    all_lanes = [r[4] - cfg.lane_id_base for rows in raw.values() for r in rows]
    lane_count = cfg.lane_count
    if lane_count is None:
        lane_count = max(max(all_lanes) + 1, 2)
    bad = [l + cfg.lane_id_base for l in all_lanes if not 0 <= l < lane_count]
    if bad:
        raise ValidationError(f"{path}: unknown lane id {bad[0]} "
                              f"(road has {lane_count} lanes)")

    tracks: list[Track] = []
    next_split_id = max(raw) + 1
    for vid in sorted(raw):
        rows = sorted(raw[vid])
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        if np.any(np.diff(frames) <= 0):
            raise ValidationError(f"{path}: vehicle {vid} repeats a frame")
        # split on gaps into contiguous segments
        cuts = np.flatnonzero(np.diff(frames) > 1) + 1
        segments = np.split(np.arange(len(rows)), cuts)
        if len(segments) > 1:
            log.warning("vehicle %d has %d frame gaps; splitting into %d tracks",
                        vid, len(segments) - 1, len(segments))
        for seg_no, seg in enumerate(segments):
            seg_rows = [rows[i] for i in seg]
            tid = vid if seg_no == 0 else next_split_id
            if seg_no > 0:
                next_split_id += 1
            x_lat = np.array([r[1] for r in seg_rows])
            x_long = np.array([r[2] for r in seg_rows])
            v_long = np.array([r[3] for r in seg_rows])
            v_lat, theta = _derive_lateral_motion(x_lat, v_long,
                                                  cfg.smoothing_window)
            tracks.append(Track(tid, int(seg_rows[0][0]), x_long, x_lat,
                                v_long, v_lat, theta))

    road = RoadGeometry(lane_count, cfg.lane_width)
    return Scene(road, tracks)
