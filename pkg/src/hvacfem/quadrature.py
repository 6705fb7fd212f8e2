"""Triangle quadrature.

A single degree-5 exact rule (7 points) is used everywhere so that every
assembled bilinear form of this package (up to P2*P2*grad(P2) convection
terms, which are degree 5) is integrated exactly.
"""

import numpy as np

_SQRT15 = np.sqrt(15.0)

# Radon 7-point rule, barycentric coordinates; weights sum to 1.
_A = (6.0 + _SQRT15) / 21.0
_B = (6.0 - _SQRT15) / 21.0
_WA = (155.0 + _SQRT15) / 1200.0
_WB = (155.0 - _SQRT15) / 1200.0

TRI_POINTS = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [_A, _A, 1.0 - 2.0 * _A],
        [_A, 1.0 - 2.0 * _A, _A],
        [1.0 - 2.0 * _A, _A, _A],
        [_B, _B, 1.0 - 2.0 * _B],
        [_B, 1.0 - 2.0 * _B, _B],
        [1.0 - 2.0 * _B, _B, _B],
    ]
)
TRI_WEIGHTS = np.array([9.0 / 40.0, _WA, _WA, _WA, _WB, _WB, _WB])

NQ = TRI_POINTS.shape[0]


def physical_points(coords):
    """Map the reference rule onto triangles.

    coords: (nt, 3, 2) vertex coordinates.
    Returns (nt, nq, 2) quadrature point coordinates.
    """
    return np.einsum("qi,tix->tqx", TRI_POINTS, coords)
