"""Vector advection around a ring with the curved-mesh central scheme.

Each cell stores the vector in its own polar basis.  Neighbour values are
parallel transported before fluxes are combined, so the Cartesian components
simply move around the ring.  The L1 error after a quarter turn shrinks a bit
faster than first order; minmod clips the Gaussian peaks.

    python demos/ring_advection.py
"""

import math

import numpy as np

from conical import central_scheme as cs


def l1_error(n, turns=0.25):
    scheme, u0, _ = cs.gaussian_ring_problem(n)
    u = cs.run(scheme, u0, turns * n)
    cart = np.einsum("nij,nj->ni", scheme.J, u)
    theta = 2 * np.pi * (np.arange(n) + 0.5) / n - 2 * np.pi * turns
    exact = np.stack([np.exp(-((theta - np.pi) / 0.4) ** 2),
                      0.5 * np.exp(-((theta - 0.8 * np.pi) / 0.4) ** 2)], axis=1)
    return np.sum(np.abs(cart - exact)) * 2 * np.pi / n


prev = None
for n in (64, 128, 256, 512):
    e = l1_error(n)
    rate = "" if prev is None else f"  order {math.log2(prev / e):.2f}"
    print(f"{n:4d} cells  L1 error {e:.3e}{rate}")
    prev = e
