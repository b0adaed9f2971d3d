"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are symmetric Dunavant rules with positive weights; weights
sum to 1/2 (the reference triangle area). Edge rules are Gauss-Legendre on
[0, 1] with weights summing to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DEGREE = 6


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, w), (b, a, w), (a, b, w)]


def _orbit6(a, b, w):
    c = 1.0 - a - b
    return [(a, b, w), (b, a, w), (b, c, w), (c, b, w), (c, a, w), (a, c, w)]


_TRIANGLE = {
    1: [(1 / 3, 1 / 3, 1.0)],
    2: _orbit3(1 / 6, 1 / 3),
    4: _orbit3(0.445948490915965, 0.223381589678011)
    + _orbit3(0.091576213509771, 0.109951743655322),
    5: [(1 / 3, 1 / 3, 0.225)]
    + _orbit3(0.470142064105115, 0.132394152788506)
    + _orbit3(0.101286507323456, 0.125939180544827),
    6: _orbit3(0.249286745170910, 0.116786275726379)
    + _orbit3(0.063089014491502, 0.050844906370207)
    + _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374),
}
# no positive 3rd-order rule smaller than the 4th-order one
_TRIANGLE[0] = _TRIANGLE[1]
_TRIANGLE[3] = _TRIANGLE[4]


@lru_cache(maxsize=None)
def quadrature_rule(domain: str, degree: int) -> QuadratureRule:
    """Rule exact for polynomials up to ``degree`` on the reference ``domain``.

    ``domain`` is ``"triangle"`` (vertices (0,0), (1,0), (0,1)) or ``"edge"``
    (the interval [0, 1]).
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")
    if domain == "triangle":
        table = np.array(_TRIANGLE[degree], dtype=float)
        pts = table[:, :2].copy()
        w = table[:, 2] / table[:, 2].sum() * 0.5
        return QuadratureRule(pts, w, degree)
    if domain == "edge":
        npts = degree // 2 + 1
        x, w = np.polynomial.legendre.leggauss(npts)
        return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, degree)
    raise ValueError(f"unknown quadrature domain {domain!r}")


TRIANGLE_DEFAULT = 4
EDGE_DEFAULT = 4
