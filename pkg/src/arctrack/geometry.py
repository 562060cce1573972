"""Rotated rectangle geometry built on a diagonal-plus-arc parametrization.

A rotated box is stored either as four corners (:class:`CornerBB`) or as two
diagonal endpoints plus an arc fraction ``beta`` (:class:`FiveBB`). The five
parameter form places the rectangle on the circle whose diameter is the
diagonal ``p1 -> p2``; ``pi * beta`` is the central angle swept from ``p1`` to
the next corner clockwise, so ``beta = 0.5`` describes a square.

Conventions used throughout the package:

* image coordinates: x grows right, y grows down;
* "clockwise" means clockwise as drawn on screen, which under the y-down
  convention is produced by the standard positive rotation matrix and
  corresponds to a positive shoelace sum;
* ``beta`` lives in the open interval (0, 1); the values 0 and 1 would give a
  zero-area box and are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateBox, NotARectangle

# Coincident-endpoint threshold for diagonals.
MIN_DIAGONAL = 1e-12

# Rectangle validation tolerance, relative to the diagonal length for boxes
# larger than one unit so that big pixel coordinates do not trip the check.
RECT_TOL = 1e-6


@dataclass(frozen=True)
class Point2:
    """A point (or free vector) in the plane."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)

    def scaled(self, s: float) -> "Point2":
        return Point2(self.x * s, self.y * s)

    def dot(self, other: "Point2") -> float:
        return self.x * other.x + self.y * other.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


def midpoint(a: Point2, b: Point2) -> Point2:
    return Point2((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)


def rotate(p: Point2, theta: float, about: Point2 | None = None) -> Point2:
    """Rotate ``p`` by ``theta`` radians (clockwise on screen, y down)."""
    c, s = math.cos(theta), math.sin(theta)
    ox, oy = (about.x, about.y) if about is not None else (0.0, 0.0)
    dx, dy = p.x - ox, p.y - oy
    return Point2(ox + dx * c - dy * s, oy + dx * s + dy * c)


@dataclass(frozen=True)
class FiveBB:
    """Rotated box as diagonal endpoints plus normalized arc.

    ``p1`` and ``p2`` are opposite corners; ``beta`` in (0, 1) fixes where the
    remaining two corners sit on the circumscribed circle.
    """

    p1: Point2
    p2: Point2
    beta: float

    def __post_init__(self):
        if not math.isfinite(self.beta):
            raise DegenerateBox(f"non-finite beta {self.beta}")
        if not (0.0 < self.beta < 1.0):
            raise DegenerateBox(f"beta {self.beta} outside the open interval (0, 1)")
        if self.p1.distance_to(self.p2) < MIN_DIAGONAL:
            raise DegenerateBox("diagonal endpoints coincide")

    def as_vector(self) -> tuple[float, float, float, float, float]:
        return (self.p1.x, self.p1.y, self.p2.x, self.p2.y, self.beta)

    @staticmethod
    def from_vector(v) -> "FiveBB":
        x1, y1, x2, y2, beta = (float(t) for t in v)
        return FiveBB(Point2(x1, y1), Point2(x2, y2), beta)


@dataclass(frozen=True)
class CornerBB:
    """Rotated box as four corners, stored in on-screen clockwise order.

    Construction normalizes orientation (reversing counterclockwise input
    while keeping the first corner first) and validates that the corners form
    a genuine rectangle: the diagonals must bisect each other and have equal
    length within ``RECT_TOL`` relative to the diagonal size.
    """

    corners: tuple[Point2, Point2, Point2, Point2]

    def __post_init__(self):
        pts = tuple(self.corners)
        if len(pts) != 4:
            raise NotARectangle(f"expected 4 corners, got {len(pts)}")
        c0, c1, c2, c3 = pts
        d1 = c0.distance_to(c2)
        d2 = c1.distance_to(c3)
        scale = max(1.0, 0.5 * (d1 + d2))
        tol = RECT_TOL * scale
        if abs(d1 - d2) > tol:
            raise NotARectangle(f"diagonal lengths differ: {d1} vs {d2}")
        if midpoint(c0, c2).distance_to(midpoint(c1, c3)) > tol:
            raise NotARectangle("diagonals do not bisect each other")
        area2 = _shoelace2(pts)
        if abs(area2) <= (MIN_DIAGONAL * scale) ** 2 + MIN_DIAGONAL:
            raise DegenerateBox("corners span zero area")
        if area2 < 0.0:
            object.__setattr__(self, "corners", (c0, c3, c2, c1))
        else:
            object.__setattr__(self, "corners", pts)

    def area(self) -> float:
        return 0.5 * abs(_shoelace2(self.corners))

    def center(self) -> Point2:
        xs = sum(p.x for p in self.corners) / 4.0
        ys = sum(p.y for p in self.corners) / 4.0
        return Point2(xs, ys)

    def as_flat(self) -> tuple[float, ...]:
        out: list[float] = []
        for p in self.corners:
            out.extend((p.x, p.y))
        return tuple(out)


@dataclass(frozen=True)
class AABB:
    """Axis-aligned box given by center and positive side lengths."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise DegenerateBox("non-finite axis-aligned box")
        if self.w <= 0.0 or self.h <= 0.0:
            raise DegenerateBox(f"non-positive extent {self.w} x {self.h}")

    @staticmethod
    def from_ltwh(left: float, top: float, w: float, h: float) -> "AABB":
        return AABB(left + w / 2.0, top + h / 2.0, w, h)


@dataclass(frozen=True)
class Circle:
    """Circle with non-negative radius."""

    center: Point2
    radius: float

    def __post_init__(self):
        if not math.isfinite(self.radius) or self.radius < 0.0:
            raise DegenerateBox(f"invalid radius {self.radius}")


def _shoelace2(pts) -> float:
    """Twice the signed polygon area. Positive means on-screen clockwise."""
    total = 0.0
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        total += a.x * b.y - b.x * a.y
    return total


def five_to_corners(box: FiveBB) -> CornerBB:
    """Expand the diagonal-arc form into four corners.

    The corner following ``p1`` clockwise is ``c + R(pi*beta) (p1 - c)`` with
    ``c`` the diagonal midpoint; the output cycle ``p1, q, p2, q'`` is
    clockwise on screen.
    """
    c = midpoint(box.p1, box.p2)
    q = rotate(box.p1, math.pi * box.beta, about=c)
    q_opp = Point2(2.0 * c.x - q.x, 2.0 * c.y - q.y)
    return CornerBB((box.p1, q, box.p2, q_opp))


def corners_to_five(box: CornerBB) -> FiveBB:
    """Collapse four corners into the canonical diagonal-arc form.

    The canonical ``p1`` is the corner with minimal y (minimal x on ties);
    ``beta`` is the central angle from ``p1`` to the next clockwise corner
    divided by pi.
    """
    pts = box.corners
    i0 = min(range(4), key=lambda i: (pts[i].y, pts[i].x))
    p1 = pts[i0]
    q = pts[(i0 + 1) % 4]
    p2 = pts[(i0 + 2) % 4]
    c = midpoint(p1, p2)
    u = p1 - c
    v = q - c
    nu, nv = u.norm(), v.norm()
    if nu < MIN_DIAGONAL or nv < MIN_DIAGONAL:
        raise DegenerateBox("corner coincides with the box center")
    cos_ang = max(-1.0, min(1.0, u.dot(v) / (nu * nv)))
    beta = math.acos(cos_ang) / math.pi
    return FiveBB(p1, p2, beta)


def circumscribed_circle(box: FiveBB) -> Circle:
    """Circle through all four corners: diagonal midpoint and half-diagonal."""
    return Circle(midpoint(box.p1, box.p2), 0.5 * box.p1.distance_to(box.p2))


def orientation_vector(box: FiveBB) -> Point2:
    """Diagonal direction ``p2 - p1`` used by the angle term of the loss."""
    return box.p2 - box.p1


def circle_intersection_area(a: Circle, b: Circle) -> float:
    """Area of the lens shared by two circles.

    Case analysis: zero when the circles are separated, the smaller disk when
    one contains the other, otherwise the two circular segments cut off by
    the shared chord.
    """
    d = a.center.distance_to(b.center)
    ra, rb = a.radius, b.radius
    if d >= ra + rb:
        return 0.0
    if d <= abs(ra - rb):
        return math.pi * min(ra, rb) ** 2
    ra2, rb2 = ra * ra, rb * rb
    cos_a = (d * d + ra2 - rb2) / (2.0 * d * ra)
    cos_b = (d * d + rb2 - ra2) / (2.0 * d * rb)
    alpha = math.acos(max(-1.0, min(1.0, cos_a)))
    gamma = math.acos(max(-1.0, min(1.0, cos_b)))
    p = (d + ra + rb) * (d + ra - rb) * (d - ra + rb) * (ra + rb - d)
    return ra2 * alpha + rb2 * gamma - 0.5 * math.sqrt(max(0.0, p))


def circle_iou(a: Circle, b: Circle) -> float:
    """Intersection over union of two disks.

    The union is written as ``S - I`` with ``S`` the summed disk areas, which
    makes the value differentiable in the same variables as the areas.
    """
    if a.radius <= 0.0 and b.radius <= 0.0:
        raise DegenerateBox("both circles have zero radius")
    inter = circle_intersection_area(a, b)
    s = math.pi * (a.radius ** 2 + b.radius ** 2)
    return inter / (s - inter)


def _clip_polygon(subject: list[tuple[float, float]], clip: list[tuple[float, float]]):
    """Sutherland-Hodgman clip of one convex polygon by another.

    Both polygons must be in positive-shoelace (on-screen clockwise) order.
    """
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            break
        cx1, cy1 = clip[i]
        cx2, cy2 = clip[(i + 1) % n]
        ex, ey = cx2 - cx1, cy2 - cy1

        def inside(p):
            return ex * (p[1] - cy1) - ey * (p[0] - cx1) >= 0.0

        def intersect(p, q):
            dx, dy = q[0] - p[0], q[1] - p[1]
            denom = ex * dy - ey * dx
            t = (ey * (p[0] - cx1) - ex * (p[1] - cy1)) / denom
            return (p[0] + t * dx, p[1] + t * dy)

        current = output
        output = []
        for j in range(len(current)):
            p, q = current[j], current[(j + 1) % len(current)]
            p_in, q_in = inside(p), inside(q)
            if p_in:
                output.append(p)
                if not q_in:
                    output.append(intersect(p, q))
            elif q_in:
                output.append(intersect(p, q))
    return output


def _poly_area(pts) -> float:
    total = 0.0
    n = len(pts)
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        total += ax * by - bx * ay
    return 0.5 * abs(total)


def polygon_intersection_area(a: CornerBB, b: CornerBB) -> float:
    """Exact overlap area of two rotated rectangles via convex clipping."""
    pa = [p.as_tuple() for p in a.corners]
    pb = [p.as_tuple() for p in b.corners]
    clipped = _clip_polygon(pa, pb)
    if len(clipped) < 3:
        return 0.0
    return _poly_area(clipped)


def polygon_iou(a: CornerBB, b: CornerBB) -> float:
    """Intersection over union of two rotated rectangles, in [0, 1]."""
    area_a = a.area()
    area_b = b.area()
    if area_a <= 0.0 and area_b <= 0.0:
        raise DegenerateBox("both boxes have zero area")
    inter = polygon_intersection_area(a, b)
    union = area_a + area_b - inter
    if union <= 0.0:
        raise DegenerateBox("zero union area")
    return min(1.0, max(0.0, inter / union))


def aabb_to_corners(box: AABB) -> CornerBB:
    """Axis-aligned box to corners, clockwise from the top-left."""
    hw, hh = box.w / 2.0, box.h / 2.0
    return CornerBB(
        (
            Point2(box.cx - hw, box.cy - hh),
            Point2(box.cx + hw, box.cy - hh),
            Point2(box.cx + hw, box.cy + hh),
            Point2(box.cx - hw, box.cy + hh),
        )
    )
