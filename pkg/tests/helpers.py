"""Shared test oracles and generators, independent of the library internals."""

from __future__ import annotations

import numpy as np

from arctrack.geometry import Circle, CornerBB, FiveBB, Point2


def random_five(rng: np.random.Generator, scale: float = 10.0) -> FiveBB:
    """A random non-degenerate five-parameter box."""
    while True:
        x1, y1, x2, y2 = rng.uniform(-scale, scale, size=4)
        if (x1 - x2) ** 2 + (y1 - y2) ** 2 > 0.25:
            break
    beta = rng.uniform(0.05, 0.95)
    return FiveBB(Point2(x1, y1), Point2(x2, y2), beta)


def point_set_deviation(a: CornerBB, b: CornerBB) -> float:
    """Symmetric max-min distance between two corner sets."""
    pa = [p.as_tuple() for p in a.corners]
    pb = [p.as_tuple() for p in b.corners]

    def one_way(src, dst):
        worst = 0.0
        for x, y in src:
            best = min((x - u) ** 2 + (y - v) ** 2 for u, v in dst)
            worst = max(worst, best)
        return worst ** 0.5

    return max(one_way(pa, pb), one_way(pb, pa))


def mc_circle_intersection(a: Circle, b: Circle, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of the overlap area of two disks.

    Samples uniformly over the bounding rectangle of both circles and counts
    hits inside both disks.
    """
    xmin = min(a.center.x - a.radius, b.center.x - b.radius)
    xmax = max(a.center.x + a.radius, b.center.x + b.radius)
    ymin = min(a.center.y - a.radius, b.center.y - b.radius)
    ymax = max(a.center.y + a.radius, b.center.y + b.radius)
    xs = rng.uniform(xmin, xmax, n_samples)
    ys = rng.uniform(ymin, ymax, n_samples)
    in_a = (xs - a.center.x) ** 2 + (ys - a.center.y) ** 2 <= a.radius ** 2
    in_b = (xs - b.center.x) ** 2 + (ys - b.center.y) ** 2 <= b.radius ** 2
    frac = np.count_nonzero(in_a & in_b) / n_samples
    return frac * (xmax - xmin) * (ymax - ymin)


def random_overlapping_circles(rng: np.random.Generator) -> tuple[Circle, Circle]:
    """Circle pairs whose lens fills enough of the sampling rectangle.

    A relative-error comparison against Monte-Carlo needs the overlap to be a
    non-vanishing fraction of the sampled area, so thin-sliver pairs are
    rejected. Containment cases stay in the mix.
    """
    from arctrack.geometry import circle_intersection_area

    while True:
        ra, rb = rng.uniform(0.6, 1.5, size=2)
        d = rng.uniform(0.0, 0.6) * (ra + rb)
        ang = rng.uniform(0.0, 2 * np.pi)
        a = Circle(Point2(0.0, 0.0), ra)
        b = Circle(Point2(d * np.cos(ang), d * np.sin(ang)), rb)
        rect = (2 * max(ra, rb) + d) ** 2
        if circle_intersection_area(a, b) >= 0.15 * rect:
            return a, b
