"""Sample assembly: maneuver features, neighbor slots, connections, labels.

A maneuver feature sequence covers the 2 s observation window (20 frames)
with columns (x_lat, x_long, d_lat_clc, v_long, v_lat, theta); the last
frame's x_lat/x_long are subtracted from those two columns so absolute
translation is removed. A lane change is labeled when the vehicle crosses a
dividing line inside the 4 s prediction window (40 frames, inclusive), and
sliding-window samples are emitted from 8 s before each crossing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datamodel import (CONNECTION_DIM, FEATURE_DIM, LCL, LCR, LK,
                        NUM_NEIGHBOR_SLOTS, OBS_WINDOW, PRED_WINDOW,
                        LabeledSample, Scene, Track, ValidationError)

EVENT_WINDOW = 2 * PRED_WINDOW          # sliding samples start 8 s out
VIRTUAL_DISTANCE = 100.0                # virtual neighbor offset, meters

# slot layout: [0] front / [1] rear in the target's lane; [2] closest
# longitudinally in the left lane with [3] its front and [4] its rear
# neighbor; [5]-[7] mirror that on the right. "Left" is lane_id + 1.
SLOT_LANE_OFFSET = (0, 0, 1, 1, 1, -1, -1, -1)
# virtual placement direction per slot; the "closest" slots 2 and 5 have no
# inherent direction and are placed ahead
SLOT_DIRECTION = (1, -1, 1, 1, -1, 1, 1, -1)


@dataclass(frozen=True)
class NeighborSlot:
    """One resolved neighbor slot: a real vehicle id or a virtual fill."""

    vehicle_id: int | None

    @property
    def is_virtual(self) -> bool:
        return self.vehicle_id is None


def extract_maneuver_features(scene: Scene, vehicle_id: int, frame: int) -> np.ndarray:
    """The (20, 6) observation-window feature matrix ending at ``frame``.

    Raises ValidationError when the vehicle lacks the full 20-frame history.
    """
    tr = scene.track(vehicle_id)
    start = frame - (OBS_WINDOW - 1)
    if not (tr.has_frame(start) and tr.has_frame(frame)):
        raise ValidationError(f"vehicle {vehicle_id}: frames {start}..{frame} "
                              "not fully observed")
    i0 = tr.index_of(start)
    i1 = tr.index_of(frame) + 1
    width = scene.road.lane_width
    centers = (tr.lane_id[i0:i1] + 0.5) * width
    out = np.empty((OBS_WINDOW, FEATURE_DIM))
    out[:, 0] = tr.x_lat[i0:i1] - tr.x_lat[i1 - 1]
    out[:, 1] = tr.x_long[i0:i1] - tr.x_long[i1 - 1]
    out[:, 2] = (tr.x_lat[i0:i1] - centers) / width
    out[:, 3] = tr.v_long[i0:i1]
    out[:, 4] = tr.v_lat[i0:i1]
    out[:, 5] = tr.theta[i0:i1]
    return out


def virtual_sequence(v_long: float) -> np.ndarray:
    """Feature sequence of a virtual vehicle: lane-centered, constant speed."""
    out = np.zeros((OBS_WINDOW, FEATURE_DIM))
    out[:, 1] = (np.arange(OBS_WINDOW) - (OBS_WINDOW - 1)) * v_long * 0.1
    out[:, 3] = v_long
    return out


def _observable(scene: Scene, tr: Track, frame: int) -> bool:
    return tr.has_frame(frame) and tr.has_frame(frame - (OBS_WINDOW - 1))


def select_neighbors(scene: Scene, target_id: int, frame: int) -> list[NeighborSlot]:
    """Resolve the 8 neighbor slots around ``target_id`` at ``frame``.

    "Closest" minimizes |dx_long| (a tie goes to the smaller vehicle id;
    dx_long = 0 counts as closest). The front/rear companions of a closest
    vehicle are the nearest vehicles longitudinally beyond it. Vehicles
    without a full observation history are not eligible; empty slots are
    virtual fills.
    """
    target = scene.track(target_id)
    ti = target.index_of(frame)
    t_lane = int(target.lane_id[ti])
    t_x = target.x_long[ti]

    by_lane: dict[int, list[tuple[float, int]]] = {}
    for vid, tr in scene.tracks.items():
        if vid == target_id or not _observable(scene, tr, frame):
            continue
        i = tr.index_of(frame)
        by_lane.setdefault(int(tr.lane_id[i]), []).append(
            (tr.x_long[i] - t_x, vid))

    def front_rear(lane: int) -> tuple[int | None, int | None]:
        entries = by_lane.get(lane, [])
        ahead = [(dx, vid) for dx, vid in entries if dx >= 0]
        behind = [(dx, vid) for dx, vid in entries if dx < 0]
        front = min(ahead, key=lambda e: (e[0], e[1]))[1] if ahead else None
        rear = max(behind, key=lambda e: (e[0], -e[1]))[1] if behind else None
        return front, rear

    def closest_trio(lane: int) -> tuple[int | None, int | None, int | None]:
        entries = by_lane.get(lane, [])
        if not entries:
            return None, None, None
        closest_dx, closest_id = min(entries, key=lambda e: (abs(e[0]), e[1]))
        ahead = [(dx, vid) for dx, vid in entries if dx > closest_dx]
        behind = [(dx, vid) for dx, vid in entries if dx < closest_dx]
        front = min(ahead, key=lambda e: (e[0], e[1]))[1] if ahead else None
        rear = max(behind, key=lambda e: (e[0], -e[1]))[1] if behind else None
        return closest_id, front, rear

    slots: list[int | None] = [None] * NUM_NEIGHBOR_SLOTS
    slots[0], slots[1] = front_rear(t_lane)
    slots[2], slots[3], slots[4] = closest_trio(t_lane + 1)
    slots[5], slots[6], slots[7] = closest_trio(t_lane - 1)

    real = [v for v in slots if v is not None]
    assert len(real) == len(set(real)), "a vehicle resolved to two slots"
    return [NeighborSlot(v) for v in slots]


def connection_feature(scene: Scene, target_id: int, slot_index: int,
                       slot: NeighborSlot, frame: int) -> np.ndarray:
    """Six relative-dynamics values for one target/neighbor pair.

    (dx_long, dx_lat, target v_long, target v_lat, neighbor v_long,
    neighbor v_lat), neighbor minus target for the offsets. A virtual slot
    sits at +-100 m with the slot lane's center offset, moving at the
    target's longitudinal speed.
    """
    target = scene.track(target_id)
    ti = target.index_of(frame)
    tv_long, tv_lat = target.v_long[ti], target.v_lat[ti]
    if slot.is_virtual:
        dx_long = SLOT_DIRECTION[slot_index] * VIRTUAL_DISTANCE
        dx_lat = SLOT_LANE_OFFSET[slot_index] * scene.road.lane_width
        return np.array([dx_long, dx_lat, tv_long, tv_lat, tv_long, 0.0])
    nbr = scene.track(slot.vehicle_id)
    ni = nbr.index_of(frame)
    return np.array([nbr.x_long[ni] - target.x_long[ti],
                     nbr.x_lat[ni] - target.x_lat[ti],
                     tv_long, tv_lat, nbr.v_long[ni], nbr.v_lat[ni]])


def neighbor_sequence(scene: Scene, target_id: int, slot: NeighborSlot,
                      frame: int) -> np.ndarray:
    if slot.is_virtual:
        target = scene.track(target_id)
        return virtual_sequence(float(target.v_long[target.index_of(frame)]))
    return extract_maneuver_features(scene, slot.vehicle_id, frame)


def _crossing_frames(tr: Track) -> list[int]:
    """Frames where the lane assignment changes (divider traversals)."""
    diffs = np.flatnonzero(np.diff(tr.lane_id) != 0) + 1
    return [int(tr.start_frame + i) for i in diffs]


def label_sample(scene: Scene, vehicle_id: int, frame: int) -> tuple[int, float]:
    """(label, ttlc) by the crossing-in-window rule.

    The first frame in (frame, frame+40] whose lane differs from the lane at
    ``frame`` decides the label: LCL/LCR by crossing direction and
    ttlc = (crossing - frame)/10; otherwise LK with infinite ttlc. The
    prediction window must exist in full.
    """
    tr = scene.track(vehicle_id)
    if not tr.has_frame(frame + PRED_WINDOW):
        raise ValidationError(f"vehicle {vehicle_id}: prediction window after "
                              f"frame {frame} incomplete")
    i = tr.index_of(frame)
    lanes = tr.lane_id[i:i + PRED_WINDOW + 1]
    changed = np.flatnonzero(lanes != lanes[0])
    if changed.size == 0:
        return LK, math.inf
    c = int(changed[0])
    label = LCL if lanes[c] > lanes[0] else LCR
    return label, c / 10.0


def _assemble(scene: Scene, vehicle_id: int, frame: int, label: int,
              ttlc: float, event_frame: int, event_direction: int) -> LabeledSample:
    slots = select_neighbors(scene, vehicle_id, frame)
    nbr_seqs = np.empty((NUM_NEIGHBOR_SLOTS, OBS_WINDOW, FEATURE_DIM))
    conns = np.empty((NUM_NEIGHBOR_SLOTS, CONNECTION_DIM))
    for j, slot in enumerate(slots):
        nbr_seqs[j] = neighbor_sequence(scene, vehicle_id, slot, frame)
        conns[j] = connection_feature(scene, vehicle_id, j, slot, frame)
    return LabeledSample(scene.ident, vehicle_id, frame, label, ttlc,
                         event_frame, event_direction,
                         extract_maneuver_features(scene, vehicle_id, frame),
                         nbr_seqs, conns)


def build_samples(scene: Scene, lk_ratio: float = 1.0) -> list[LabeledSample]:
    """All prediction instances of a scene.

    Every lane-change event yields sliding-window samples at the 80 decision
    frames before the crossing (where both windows fit); their label flips
    LK -> LC exactly when ttlc <= 4 s. Non-crossing stretches are carved
    into 80-frame LK segments; round(lk_ratio * n_lc_events) of them are
    kept (evenly spaced over the candidates; one per vehicle if the scene
    has no lane change at all).
    """
    samples, lk_segments, n_lc_events = _build_core(scene)

    if n_lc_events > 0:
        n_keep = int(round(lk_ratio * n_lc_events))
    else:
        per_vehicle = {}
        for vid, start in lk_segments:
            per_vehicle.setdefault(vid, (vid, start))
        lk_segments = sorted(per_vehicle.values())
        n_keep = len(lk_segments)
    if n_keep >= len(lk_segments):
        chosen = lk_segments
    elif n_keep <= 0:
        chosen = []
    else:
        idx = np.unique(np.round(np.linspace(0, len(lk_segments) - 1,
                                             n_keep)).astype(int))
        chosen = [lk_segments[i] for i in idx]

    for vid, start in chosen:
        for t in range(start, start + EVENT_WINDOW):
            samples.append(_assemble(scene, vid, t, LK, math.inf, start, 0))

    samples.sort(key=lambda s: (s.vehicle_id, s.frame, s.event_direction))
    return samples


def _segment_starts(run: list[int]) -> list[int]:
    """Non-overlapping 80-frame segment starts inside a run of frames."""
    starts = []
    pos = 0
    while pos + EVENT_WINDOW <= len(run):
        starts.append(run[pos])
        pos += EVENT_WINDOW
    return starts


def _build_core(scene: Scene) -> tuple[list[LabeledSample],
                                       list[tuple[int, int]], int]:
    """Lane-change-event samples plus the LK segment candidates."""
    samples: list[LabeledSample] = []
    lk_segments: list[tuple[int, int]] = []
    n_lc_events = 0
    for vid in scene.vehicle_ids:
        tr = scene.track(vid)
        lo = tr.start_frame + (OBS_WINDOW - 1)
        hi = tr.end_frame - PRED_WINDOW
        if hi < lo:
            continue
        crossings = _crossing_frames(tr)
        events_seen = set()
        lk_run: list[int] = []
        for t in range(lo, hi + 1):
            c = next((c for c in crossings if t < c <= t + EVENT_WINDOW), None)
            if c is None:
                lk_run.append(t)
                continue
            if lk_run:
                lk_segments.extend((vid, s) for s in _segment_starts(lk_run))
                lk_run = []
            i = tr.index_of(c)
            direction = LCL if tr.lane_id[i] > tr.lane_id[i - 1] else LCR
            label, _ = label_sample(scene, vid, t)
            samples.append(_assemble(scene, vid, t, label, (c - t) / 10.0,
                                     c, direction))
            events_seen.add(c)
        if lk_run:
            lk_segments.extend((vid, s) for s in _segment_starts(lk_run))
        n_lc_events += len(events_seen)
    return samples, lk_segments, n_lc_events
