"""Steady conical Euler and ideal-MHD flow on the unit sphere.

The discretization is built on a discrete covariant derivative: stencils act
on Cartesian images of tensor fields and the result is mapped back to each
cell's local basis, so uniform Cartesian fields are preserved exactly.

Set ``CONICAL_THREADS`` to cap the threads used by the BLAS, OpenMP and MKL
backends.  It only takes effect if numpy has not been imported yet.
"""

import os as _os

_threads = _os.environ.get("CONICAL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .mesh import (QuadMesh, CellFrames, build_cell_frames, generate_cone_mesh,
                   circular_body, elliptic_body, aircraft_body, load_mesh, save_mesh)
from .physics import GasModel, FreeStream
from .discretization import ConicalDiscretization

__all__ = [
    "QuadMesh", "CellFrames", "build_cell_frames", "generate_cone_mesh",
    "circular_body", "elliptic_body", "aircraft_body", "load_mesh", "save_mesh",
    "GasModel", "FreeStream", "ConicalDiscretization",
]
