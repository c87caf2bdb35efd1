"""Axis-aligned boxes, constraint regions and the growing-box region search.

A region is a set of half-space constraints ``u.(x - center) <= a`` clipped to a
bounding box. With directions restricted to (scaled) ``+e_j`` and ``-e_j`` it is
an interval box, which is what the rest of the package works with.

Direction vectors encode face speed: the face for ``u = e_j / s`` sits at
``center_j + a * s`` when its constraint value is ``a``, so as ``a`` grows
uniformly that face moves ``s`` times as fast as a unit-speed face.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    empty: bool = False

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"lo/hi shapes differ: {lo.shape} vs {hi.shape}")
        empty = bool(self.empty or np.any(lo > hi))
        if empty:
            # Canonical empty box: collapse every interval so lo <= hi still holds.
            mid = np.where(lo > hi, (lo + hi) / 2, lo)
            lo = hi = mid
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "empty", empty)

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    @classmethod
    def bounding(cls, X) -> "Box":
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))

    def contains(self, x) -> bool | np.ndarray:
        return contains(self, x)

    def volume(self, axes: Sequence[int] | None = None) -> float:
        return volume(self, axes)

    def nondegenerate_axes(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.hi > self.lo))

    def to_dict(self, names: Sequence[str] | None = None) -> list[dict]:
        names = names or [f"x{j}" for j in range(self.d)]
        return [{"feature": str(nm), "lo": float(a), "hi": float(b)}
                for nm, a, b in zip(names, self.lo, self.hi)]


def _same_dim(a: Box, b: Box) -> None:
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")


def contains(box: Box, x) -> bool | np.ndarray:
    """Closed-interval membership for one point or each row of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != box.d:
        raise ValueError(f"dimension mismatch: point has {x.shape[-1]}, box has {box.d}")
    if box.empty:
        return False if x.ndim == 1 else np.zeros(x.shape[0], dtype=bool)
    inside = np.all((x >= box.lo) & (x <= box.hi), axis=-1)
    return bool(inside) if x.ndim == 1 else inside


def volume(box: Box, axes: Sequence[int] | None = None) -> float:
    """Product of side lengths over ``axes``.

    By default the axes are the box's own non-degenerate dimensions, so a
    constant column (the intercept) does not zero out the volume. Pass ``axes``
    explicitly when comparing boxes, otherwise a box that is flat along one of
    the compared axes would silently drop that axis.
    """
    if box.empty:
        return 0.0
    if axes is None:
        axes = box.nondegenerate_axes()
    return float(np.prod(box.sides[list(axes)])) if len(axes) else 0.0


def intersect(a: Box, b: Box) -> Box:
    _same_dim(a, b)
    if a.empty or b.empty:
        return Box(a.lo, a.lo, empty=True)
    return Box(np.maximum(a.lo, b.lo), np.minimum(a.hi, b.hi))


def box_contains_box(outer: Box, inner: Box, tol: float = 0.0) -> bool:
    _same_dim(outer, inner)
    if inner.empty:
        return True
    return bool(np.all(inner.lo >= outer.lo - tol) and np.all(inner.hi <= outer.hi + tol))


@dataclass(frozen=True)
class Direction:
    vector: np.ndarray
    label: str = ""

    def __post_init__(self):
        u = np.array(self.vector, dtype=float).reshape(-1)
        if not np.any(u != 0):
            raise ValueError("direction vector must be nonzero")
        u.setflags(write=False)
        object.__setattr__(self, "vector", u)

    def axis(self) -> tuple[int, float] | None:
        """``(j, u_j)`` if the vector is a scaled basis vector, else None."""
        nz = np.flatnonzero(self.vector)
        return (int(nz[0]), float(self.vector[nz[0]])) if nz.size == 1 else None


def axis_directions(d: int, speed_plus=None, speed_minus=None,
                    axes: Iterable[int] | None = None) -> list[Direction]:
    """``+e_j, -e_j`` for each axis in order, with face speeds ``s`` encoded as ``e_j / s``."""
    axes = range(d) if axes is None else axes
    sp = np.ones(d) if speed_plus is None else np.broadcast_to(np.asarray(speed_plus, dtype=float), (d,))
    sm = sp if speed_minus is None else np.broadcast_to(np.asarray(speed_minus, dtype=float), (d,))
    out = []
    for j in axes:
        if not (sp[j] > 0 and sm[j] > 0):
            raise ValueError(f"speeds on axis {j} must be positive")
        e = np.zeros(d)
        e[j] = 1.0 / sp[j]
        out.append(Direction(e, f"+x{j}"))
        e = np.zeros(d)
        e[j] = -1.0 / sm[j]
        out.append(Direction(e, f"-x{j}"))
    return out


SPEED_PRESETS = ("uniform", "bbox")


def preset_directions(bbox: Box, preset: str = "uniform") -> list[Direction]:
    """Directions over the non-degenerate axes of ``bbox``.

    ``uniform``: every face grows at the same rate. ``bbox``: each face grows at
    a rate proportional to the bounding-box side along its axis.
    Flat axes (such as an intercept column) get no direction; they stay pinned
    to the bounding box.
    """
    axes = bbox.nondegenerate_axes()
    if preset == "uniform":
        speeds = np.ones(bbox.d)
    elif preset == "bbox":
        speeds = np.where(bbox.sides > 0, bbox.sides, 1.0)
    else:
        raise ValueError(f"unknown speed preset {preset!r}; expected one of {SPEED_PRESETS}")
    return axis_directions(bbox.d, speeds, speeds, axes)


def directed_inf_norm(x, U: Sequence[Direction]) -> tuple[float, int]:
    """``max_{u in U} u.x`` and the position in ``U`` of the first maximizer."""
    if len(U) == 0:
        raise ValueError("direction set is empty")
    proj = np.array([u.vector for u in U]) @ np.asarray(x, dtype=float)
    i = int(np.argmax(proj))
    return float(proj[i]), i


@dataclass(frozen=True)
class Constraint:
    direction: Direction
    value: float
    # Index (into the rejected list) of the point that stopped this face.
    support: int = -1


@dataclass(frozen=True)
class Region:
    center: np.ndarray
    constraints: tuple[Constraint, ...]
    bounding_box: Box
    unconstrained: tuple[Direction, ...] = field(default=())

    @property
    def d(self) -> int:
        return self.center.shape[0]

    def contains(self, x) -> bool | np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = contains(self.bounding_box, x)
        if self.constraints:
            U = np.array([c.direction.vector for c in self.constraints])
            a = np.array([c.value for c in self.constraints])
            inside = inside & np.all((x - self.center) @ U.T <= a, axis=-1)
        return bool(inside) if x.ndim == 1 else inside

    def box(self) -> Box:
        return box_of(self)

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        return {
            "center": [float(c) for c in self.center],
            "constraints": [{"direction": c.direction.label, "value": float(c.value)}
                            for c in self.constraints],
            "box": self.box().to_dict(names),
        }


def box_of(region: Region) -> Box:
    lo = region.bounding_box.lo.copy()
    hi = region.bounding_box.hi.copy()
    for c in region.constraints:
        ax = c.direction.axis()
        if ax is None:
            raise ValueError(f"direction {c.direction.label!r} is not axis-aligned")
        j, s = ax
        face = region.center[j] + c.value / s
        if s > 0:
            hi[j] = min(hi[j], face)
        else:
            lo[j] = max(lo[j], face)
    return Box(lo, hi)


def grow_box(center, rejected, U: Sequence[Direction], delta: float = 0.0,
             bounding_box: Box | None = None) -> Region:
    """Grow a polytope from ``center`` until each face is stopped by a rejected point.

    At every step the surviving rejected point with the smallest directed
    infinity norm (over the still-growing faces) fixes the face it touches at
    ``a* - delta``; points on or beyond that face can no longer constrain the
    others and are dropped. Ties go to the earlier point, then to the earlier
    direction in ``U``. Faces never stopped are left to the bounding box.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    if delta < 0:
        raise ValueError("shrinkage must be nonnegative")
    P = np.asarray(rejected, dtype=float).reshape(-1, center.shape[0]) - center
    if bounding_box is None:
        raise ValueError("a bounding box is required")
    U = list(U)
    Umat = np.array([u.vector for u in U]).reshape(len(U), center.shape[0])
    proj = P @ Umat.T
    alive = np.ones(P.shape[0], dtype=bool)
    active = np.ones(len(U), dtype=bool)
    constraints = []
    while alive.any() and active.any():
        pts = np.flatnonzero(alive)
        cols = np.flatnonzero(active)
        sub = proj[np.ix_(pts, cols)]
        norms = sub.max(axis=1)
        i = int(np.argmin(norms))
        a_star = float(norms[i])
        u_star = int(cols[np.argmax(sub[i])])
        constraints.append(Constraint(U[u_star], a_star - delta, int(pts[i])))
        active[u_star] = False
        alive &= proj[:, u_star] < a_star - delta
    return Region(center, tuple(constraints), bounding_box,
                  tuple(U[j] for j in np.flatnonzero(active)))
