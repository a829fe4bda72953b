"""Shared builders for synthetic scenes used across the test suite."""

import numpy as np
import pytest

from vbin import datamodel as dm


def lateral_ramp(n, cross_frame, lane_from, lane_to, width=3.7, half=16):
    """Lateral profile crossing the divider exactly between cross_frame-1
    and cross_frame (linear ramp of 2*half frames around the crossing)."""
    c_from = (lane_from + 0.5) * width
    c_to = (lane_to + 0.5) * width
    f = np.arange(n, dtype=np.float64)
    frac = np.clip((f - (cross_frame - half) + 0.5) / (2.0 * half), 0.0, 1.0)
    return c_from + (c_to - c_from) * frac


def make_track(vid, n, lane=0, speed=20.0, width=3.7, start=0, x0=0.0,
               lateral=None):
    x_long = x0 + speed * 0.1 * np.arange(n)
    x_lat = (np.full(n, (lane + 0.5) * width) if lateral is None
             else np.asarray(lateral, dtype=np.float64))
    if n >= 2:
        d = np.diff(x_lat) * 10.0
        v_lat = np.concatenate((d[:1], d))
    else:
        v_lat = np.zeros(n)
    v_long = np.full(n, float(speed))
    theta = np.arctan2(v_lat, np.maximum(v_long, 0.1))
    return dm.Track(vid, start, x_long, x_lat, v_long, v_lat, theta)


def make_scene(tracks, lanes=3, width=3.7, ident=0):
    return dm.Scene(dm.RoadGeometry(lanes, width), tracks, ident=ident)


@pytest.fixture
def lane_change_scene():
    """One vehicle crossing lane 0 -> 1 at frame 100, 160 frames long."""
    tr = make_track(1, 160, lateral=lateral_ramp(160, 100, 0, 1))
    return make_scene([tr])
