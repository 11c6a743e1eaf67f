"""Shared mesh fixtures and random admissible free streams for the tests."""

import math

import numpy as np

from conical import physics as ph
from conical.mesh import (aircraft_body, build_cell_frames, circular_body, elliptic_body,
                          generate_cone_mesh)

BODIES = {
    "circle5": circular_body(math.radians(5)),
    "circle10": circular_body(math.radians(10)),
    "circle15": circular_body(math.radians(15)),
    "ellipse": elliptic_body(0.3, 4.0),
    "ellipse_rotated": elliptic_body(0.3, 4.0, math.radians(35)),
    "aircraft": aircraft_body(0.12),
}
RESOLUTIONS = ((16, 10), (24, 14))

_CACHE = {}


def mesh_fixture(body: str, resolution):
    key = (body, tuple(resolution))
    if key not in _CACHE:
        W, H = resolution
        mesh = generate_cone_mesh(BODIES[body], W, H, outer_phi=math.radians(60))
        _CACHE[key] = (mesh, build_cell_frames(mesh))
    return _CACHE[key]


def all_fixtures():
    return [(b, r) for b in BODIES for r in RESOLUTIONS]


def random_freestream(rng, mhd: bool) -> ph.FreeStream:
    mach = rng.uniform(1.3, 5.0)
    aoa = math.radians(rng.uniform(0.0, 25.0))
    roll = math.radians(rng.uniform(-30.0, 30.0))
    b = np.zeros(3)
    if mhd:
        d = rng.normal(size=3)
        bound = math.sqrt(1.0 - 1.0 / mach ** 2)
        b = rng.uniform(0.1, 0.9) * bound * d / np.linalg.norm(d)
    fs = ph.FreeStream(mach, aoa, roll, b)
    ph.require_freestream(fs)
    return fs
