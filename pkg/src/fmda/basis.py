"""Regression bases: polynomial (Vandermonde) and clamped B-spline designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from fmda.errors import ValidationError


@dataclass(frozen=True)
class BasisSpec:
    """Function basis for per-regime regression.

    ``kind='polynomial'`` uses ``degree``; ``kind='bspline'`` uses ``order``
    (degree + 1) and ``knots``, the number of interior knots.
    """

    kind: str = "polynomial"
    degree: int = 0
    order: int = 4
    knots: int = 0

    def __post_init__(self):
        if self.kind not in ("polynomial", "bspline"):
            raise ValidationError(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 0:
            raise ValidationError("polynomial degree must be >= 0")
        if self.kind == "bspline" and (self.order < 1 or self.knots < 0):
            raise ValidationError("bspline needs order >= 1 and knots >= 0")

    @property
    def dim(self) -> int:
        if self.kind == "polynomial":
            return self.degree + 1
        return self.order + self.knots

    @classmethod
    def polynomial(cls, degree: int) -> "BasisSpec":
        return cls(kind="polynomial", degree=degree)

    @classmethod
    def bspline(cls, order: int, knots: int) -> "BasisSpec":
        return cls(kind="bspline", order=order, knots=knots)

    def to_dict(self) -> dict:
        if self.kind == "polynomial":
            return {"kind": "polynomial", "degree": self.degree}
        return {"kind": "bspline", "order": self.order, "knots": self.knots}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        if d["kind"] == "polynomial":
            return cls.polynomial(int(d["degree"]))
        return cls.bspline(int(d["order"]), int(d["knots"]))


def _times(grid) -> np.ndarray:
    return np.asarray(getattr(grid, "times", grid), dtype=float)


def bspline_knot_vector(t_start: float, t_end: float, order: int, knots: int) -> np.ndarray:
    interior = np.linspace(t_start, t_end, knots + 2)[1:-1]
    return np.concatenate([np.full(order, t_start), interior, np.full(order, t_end)])


def build_design(spec: BasisSpec, grid) -> np.ndarray:
    """Design matrix ``T`` (m x d): row ``j`` is the basis evaluated at ``t_j``."""
    t = _times(grid)
    m = t.size
    if spec.dim > m:
        raise ValidationError(f"basis dimension {spec.dim} exceeds number of points {m}")
    if spec.kind == "polynomial":
        return np.column_stack([t**c for c in range(spec.degree + 1)])
    knots = bspline_knot_vector(t[0], t[-1], spec.order, spec.knots)
    T = BSpline.design_matrix(t, knots, spec.order - 1).toarray()
    # design_matrix leaves the right endpoint of a clamped basis empty for some degrees
    if not np.isclose(T[-1].sum(), 1.0):
        T[-1] = 0.0
        T[-1, -1] = 1.0
    return T


def logistic_covariates(grid) -> np.ndarray:
    """``m x 2`` covariates ``(1, t_j)`` for the logistic regime process."""
    t = _times(grid)
    return np.column_stack([np.ones_like(t), t])
