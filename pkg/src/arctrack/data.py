"""Sequence I/O, synthetic data generation, cropping, and augmentation.

Frames hold float RGB in [0, 1]. On disk a sequence is a directory of raw
P6 PPM frames (``00000001.ppm``, ...) next to a ``groundtruth.txt`` whose
lines carry either eight corner coordinates or ``left,top,width,height``.
Continuous image coordinates put pixel (row i, column j) on the square
[j, j+1] x [i, i+1], center (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    ConfigError,
    DegenerateBox,
    EmptySequence,
    NotARectangle,
    ParseError,
)
from .geometry import (
    AABB,
    CornerBB,
    FiveBB,
    Point2,
    aabb_to_corners,
    midpoint,
    polygon_intersection_area,
    rotate,
)

# Relative tolerance for accepting an eight-value line as a rectangle.
PARSE_RECT_TOL = 1e-3

# The augmentation rotation angles, degrees, screen-clockwise positive.
ROTATION_ANGLES = (-60, -50, -40, -30, -20, -10, 10, 20, 30, 40, 50, 60)


@dataclass(frozen=True)
class Frame:
    """One RGB image. Pixel data is clamped to [0, 1] and frozen."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ConfigError(f"frame must be (h, w, 3), got {arr.shape}")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class Sequence:
    """Frames plus one ground-truth box per frame.

    ``frames`` may be None for annotation-only use (replay evaluation needs
    no pixels); when present its length must match the ground truth.
    """

    sequence_id: str
    groundtruth: list[CornerBB]
    frames: list[Frame] | None = None

    def __post_init__(self):
        if self.frames is not None and len(self.frames) != len(self.groundtruth):
            raise EmptySequence(
                f"{self.sequence_id!r}: {len(self.frames)} frames vs "
                f"{len(self.groundtruth)} annotations"
            )

    def __len__(self) -> int:
        return len(self.groundtruth)


@dataclass(frozen=True)
class CoordTransform:
    """Invertible axis-aligned affine map between coordinate frames.

    ``apply`` maps local coordinates to parent coordinates as
    ``(ox + sx * x, oy + sy * y)``.
    """

    sx: float = 1.0
    sy: float = 1.0
    ox: float = 0.0
    oy: float = 0.0

    def apply(self, p: Point2) -> Point2:
        return Point2(self.ox + self.sx * p.x, self.oy + self.sy * p.y)

    def invert(self) -> "CoordTransform":
        return CoordTransform(1.0 / self.sx, 1.0 / self.sy, -self.ox / self.sx, -self.oy / self.sy)

    def apply_box(self, box: CornerBB) -> CornerBB:
        return CornerBB(tuple(self.apply(p) for p in box.corners))


# ---------------------------------------------------------------------------
# PPM persistence


def write_ppm(frame: Frame, path: Path | str) -> None:
    """Write a frame as binary P6 with 8-bit channels."""
    arr = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def read_ppm(path: Path | str) -> Frame:
    raw = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ParseError(f"{path}: not a binary P6 file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ParseError(f"{path}: unsupported max value {maxval}")
    data = raw[m.end():]
    if len(data) < w * h * 3:
        raise ParseError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return Frame(arr.astype(np.float32) / 255.0)


# ---------------------------------------------------------------------------
# Annotation and prediction text formats


def _snap_to_rectangle(pts: list[Point2]) -> CornerBB:
    """Fit the nearest exact rectangle to an almost-rectangular quad.

    Keeps the corner cycle, recenters both diagonals on the common midpoint
    and equalizes their lengths.
    """
    c = midpoint(midpoint(pts[0], pts[2]), midpoint(pts[1], pts[3]))
    u = pts[0] - c
    w = pts[1] - c
    nu, nw = u.norm(), w.norm()
    if nu == 0.0 or nw == 0.0:
        raise DegenerateBox("corner coincides with center")
    half = 0.5 * (nu + nw)
    u = u.scaled(half / nu)
    w = w.scaled(half / nw)
    return CornerBB((c + u, c + w, Point2(c.x - u.x, c.y - u.y), Point2(c.x - w.x, c.y - w.y)))


def parse_vot_groundtruth(text: str) -> list[CornerBB]:
    """Parse annotation lines into corner boxes.

    Eight-value lines are corner quads, validated as rectangles within
    ``PARSE_RECT_TOL`` of the diagonal and snapped exactly; four-value lines
    are ``left,top,width,height``. Blank lines are ignored. Errors carry the
    1-based line number.
    """
    boxes: list[CornerBB] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split(",")
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"bad number in {stripped!r}", line=line_no) from exc
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite coordinate", line=line_no)
        if len(values) == 4:
            left, top, w, h = values
            if w <= 0 or h <= 0:
                raise ParseError(f"non-positive extent {w} x {h}", line=line_no)
            boxes.append(aabb_to_corners(AABB.from_ltwh(left, top, w, h)))
        elif len(values) == 8:
            pts = [Point2(values[i], values[i + 1]) for i in range(0, 8, 2)]
            d1 = pts[0].distance_to(pts[2])
            d2 = pts[1].distance_to(pts[3])
            diag = 0.5 * (d1 + d2)
            if diag <= 0:
                raise ParseError("degenerate corner quad", line=line_no)
            gap = midpoint(pts[0], pts[2]).distance_to(midpoint(pts[1], pts[3]))
            if abs(d1 - d2) > PARSE_RECT_TOL * diag or gap > PARSE_RECT_TOL * diag:
                raise NotARectangle(
                    f"line {line_no}: corners deviate from a rectangle beyond "
                    f"{PARSE_RECT_TOL} of the diagonal"
                )
            try:
                boxes.append(_snap_to_rectangle(pts))
            except DegenerateBox as exc:
                raise ParseError(str(exc), line=line_no) from exc
        else:
            raise ParseError(f"expected 4 or 8 values, got {len(values)}", line=line_no)
    return boxes


def serialize_groundtruth(boxes: list[CornerBB]) -> str:
    lines = []
    for box in boxes:
        lines.append(",".join(f"{v:.6f}" for v in box.as_flat()))
    return "\n".join(lines) + "\n"


def serialize_predictions(boxes: list[FiveBB]) -> str:
    """One ``x1,y1,x2,y2,beta`` line per frame, six decimals, LF endings."""
    lines = []
    for box in boxes:
        lines.append(",".join(f"{v:.6f}" for v in box.as_vector()))
    return "\n".join(lines) + "\n"


def parse_predictions(text: str) -> list[FiveBB]:
    boxes = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split(",")
        if len(parts) != 5:
            raise ParseError(f"expected 5 values, got {len(parts)}", line=line_no)
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"bad number in {stripped!r}", line=line_no) from exc
        try:
            boxes.append(FiveBB.from_vector(values))
        except DegenerateBox as exc:
            raise ParseError(str(exc), line=line_no) from exc
    return boxes


# ---------------------------------------------------------------------------
# Synthetic sequences


@dataclass(frozen=True)
class SynthConfig:
    """Rotating-rectangle-over-noise generator settings.

    Velocities are per frame: ``speed`` in pixels along a random direction,
    ``omega`` in degrees of screen-clockwise rotation. Ranges are inclusive
    and sampled once per sequence.
    """

    width: int = 64
    height: int = 64
    n_frames: int = 40
    size_range: tuple[float, float] = (14.0, 22.0)
    aspect_range: tuple[float, float] = (1.2, 2.0)
    speed_range: tuple[float, float] = (0.1, 0.4)
    omega_range: tuple[float, float] = (0.1, 0.5)
    noise_cells: int = 8

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError("frame side must be at least 8 pixels")
        if self.n_frames < 1:
            raise ConfigError("need at least one frame")
        for name in ("size_range", "aspect_range", "speed_range", "omega_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"bad {name} ({lo}, {hi})")


def _box_corners(center: Point2, w: float, h: float, angle_rad: float) -> CornerBB:
    """Stable corner labeling: top-left first before rotation, clockwise."""
    offsets = (
        Point2(-w / 2, -h / 2),
        Point2(w / 2, -h / 2),
        Point2(w / 2, h / 2),
        Point2(-w / 2, h / 2),
    )
    pts = tuple(rotate(o, angle_rad) + center for o in offsets)
    return CornerBB(pts)


def _render_frame(background: np.ndarray, box: CornerBB, color: np.ndarray, shade_dir: Point2) -> Frame:
    """Paint the filled box over the background with a directional shade."""
    h, w, _ = background.shape
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5
    py = ys + 0.5
    inside = np.ones((h, w), dtype=bool)
    corners = box.corners
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        ex, ey = b.x - a.x, b.y - a.y
        inside &= ex * (py - a.y) - ey * (px - a.x) >= 0.0
    c = box.center()
    shade = 0.5 + 0.5 * np.tanh(((px - c.x) * shade_dir.x + (py - c.y) * shade_dir.y) / 8.0)
    out = background.copy()
    for ch in range(3):
        layer = color[ch] * (0.7 + 0.3 * shade)
        out[..., ch] = np.where(inside, layer, out[..., ch])
    return Frame(out)


def synth_sequence(cfg: SynthConfig, seed: int, sequence_id: str | None = None) -> Sequence:
    """Generate a textured background with one moving, rotating rectangle.

    Raises ConfigError when the sampled motion would take the object fully
    outside the frame on some frame. Same seed, same bytes.
    """
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.1, 0.9, size=(cfg.noise_cells, cfg.noise_cells, 3)).astype(np.float32)
    reps = (
        math.ceil(cfg.height / cfg.noise_cells),
        math.ceil(cfg.width / cfg.noise_cells),
    )
    background = np.kron(coarse, np.ones((reps[0], reps[1], 1), dtype=np.float32))
    background = background[: cfg.height, : cfg.width]
    background += rng.normal(0.0, 0.02, size=background.shape).astype(np.float32)
    background = np.clip(background, 0.0, 1.0)

    long_side = rng.uniform(*cfg.size_range)
    aspect = rng.uniform(*cfg.aspect_range)
    bw, bh = long_side, long_side / aspect
    speed = rng.uniform(*cfg.speed_range)
    heading = rng.uniform(0.0, 2 * math.pi)
    vel = Point2(speed * math.cos(heading), speed * math.sin(heading))
    omega = math.radians(rng.uniform(*cfg.omega_range)) * (1 if rng.uniform() < 0.5 else -1)
    angle0 = rng.uniform(0.0, 2 * math.pi)
    center0 = Point2(
        cfg.width / 2 + rng.uniform(-cfg.width / 12, cfg.width / 12),
        cfg.height / 2 + rng.uniform(-cfg.height / 12, cfg.height / 12),
    )
    color = rng.uniform(0.2, 1.0, size=3)
    shade_dir = Point2(math.cos(angle0), math.sin(angle0))

    frame_rect = aabb_to_corners(
        AABB(cfg.width / 2, cfg.height / 2, float(cfg.width), float(cfg.height))
    )
    frames: list[Frame] = []
    gts: list[CornerBB] = []
    for t in range(cfg.n_frames):
        center = Point2(center0.x + vel.x * t, center0.y + vel.y * t)
        box = _box_corners(center, bw, bh, angle0 + omega * t)
        if polygon_intersection_area(box, frame_rect) <= 0.0:
            raise ConfigError(f"object leaves the frame entirely at frame {t}")
        frames.append(_render_frame(background, box, color, shade_dir))
        gts.append(box)
    return Sequence(sequence_id or f"synth{seed:04d}", gts, frames)


# ---------------------------------------------------------------------------
# Directory layout


def save_sequence(seq: Sequence, root: Path | str) -> Path:
    """Persist ``seq`` as ``root/<id>/`` with PPM frames and groundtruth.txt."""
    if seq.frames is None:
        raise EmptySequence(f"{seq.sequence_id!r} has no pixel data to save")
    out = Path(root) / seq.sequence_id
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        write_ppm(frame, out / f"{i:08d}.ppm")
    (out / "groundtruth.txt").write_text(serialize_groundtruth(seq.groundtruth))
    return out


def load_sequence(path: Path | str, with_frames: bool = True) -> Sequence:
    path = Path(path)
    gt_file = path / "groundtruth.txt"
    if not gt_file.exists():
        raise ParseError(f"{gt_file} does not exist")
    boxes = parse_vot_groundtruth(gt_file.read_text())
    frames = None
    if with_frames:
        ppms = sorted(path.glob("*.ppm"))
        if len(ppms) != len(boxes):
            raise EmptySequence(
                f"{path.name!r}: {len(ppms)} frames vs {len(boxes)} annotations"
            )
        frames = [read_ppm(p) for p in ppms]
    return Sequence(path.name, boxes, frames)


def load_dataset(root: Path | str, with_frames: bool = True) -> list[Sequence]:
    root = Path(root)
    dirs = sorted(d for d in root.iterdir() if d.is_dir() and (d / "groundtruth.txt").exists())
    if not dirs:
        raise EmptySequence(f"no sequences under {root}")
    return [load_sequence(d, with_frames=with_frames) for d in dirs]


# ---------------------------------------------------------------------------
# Cropping and resizing


def crop_around_box(frame: Frame, box: CornerBB, factor: float = 1.5) -> tuple[Frame, CoordTransform]:
    """Square crop centered on the box, side ``factor`` times the diagonal.

    Pixels outside the frame are zero. The returned transform maps crop
    coordinates back to frame coordinates exactly (integer translation).
    """
    if factor <= 0:
        raise ConfigError(f"crop factor must be positive, got {factor}")
    diag = box.corners[0].distance_to(box.corners[2])
    side = max(1, math.ceil(factor * diag))
    c = box.center()
    x0 = int(round(c.x - side / 2.0))
    y0 = int(round(c.y - side / 2.0))
    out = np.zeros((side, side, 3), dtype=np.float32)
    sx0, sy0 = max(0, x0), max(0, y0)
    sx1, sy1 = min(frame.width, x0 + side), min(frame.height, y0 + side)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = frame.pixels[sy0:sy1, sx0:sx1]
    return Frame(out), CoordTransform(ox=float(x0), oy=float(y0))


def resize_frame(frame: Frame, out_w: int, out_h: int) -> Frame:
    """Bilinear resample; output pixel centers map linearly into the input."""
    if out_w < 1 or out_h < 1:
        raise ConfigError("resize target must be at least 1x1")
    src = frame.pixels
    h, w = frame.height, frame.width
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    return Frame(top * (1 - fy) + bot * fy)


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentSpec:
    """Concrete augmentation choices. Absent pieces mean "leave alone".

    ``rotation_angle`` must come from ROTATION_ANGLES. ``contrast_shift`` is
    applied as a factor ``1 + shift`` around mid gray.
    """

    flip_h: bool = False
    flip_v: bool = False
    rotation_angle: float | None = None
    brightness_shift: float = 0.0
    contrast_shift: float = 0.0
    color_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    blur_sigma: float = 0.0

    def __post_init__(self):
        if self.rotation_angle is not None and self.rotation_angle not in ROTATION_ANGLES:
            raise ConfigError(
                f"rotation angle {self.rotation_angle} not in {ROTATION_ANGLES}"
            )
        if self.blur_sigma < 0:
            raise ConfigError("blur sigma must be non-negative")
        if 1.0 + self.contrast_shift <= 0.0:
            raise ConfigError("contrast factor must stay positive")


@dataclass(frozen=True)
class AugmentResult:
    frame: Frame
    box: CornerBB
    box_clipped: bool


def sample_augment_spec(rng: np.random.Generator) -> AugmentSpec:
    """Draw a random spec with the stock magnitude ranges."""
    angle = float(rng.choice(ROTATION_ANGLES)) if rng.uniform() < 0.5 else None
    return AugmentSpec(
        flip_h=bool(rng.uniform() < 0.5),
        flip_v=bool(rng.uniform() < 0.5),
        rotation_angle=angle,
        brightness_shift=float(rng.uniform(-0.2, 0.2)),
        contrast_shift=float(rng.uniform(-0.2, 0.25)),
        color_shift=tuple(float(v) for v in rng.uniform(-0.1, 0.1, size=3)),
        blur_sigma=float(rng.uniform(0.4, 1.2)) if rng.uniform() < 0.3 else 0.0,
    )


def _rotate_pixels(pixels: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rotate around the frame center, bilinear sampling, zero padding."""
    h, w, _ = pixels.shape
    cy, cx = h / 2.0, w / 2.0
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5 - cx
    py = ys + 0.5 - cy
    cos_t, sin_t = math.cos(-angle_rad), math.sin(-angle_rad)
    sx = px * cos_t - py * sin_t + cx - 0.5
    sy = px * sin_t + py * cos_t + cy - 0.5
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    def sample(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros_like(pixels)
        vals[valid] = pixels[yy[valid], xx[valid]]
        return vals

    out = (
        sample(y0, x0) * (1 - fx) * (1 - fy)
        + sample(y0, x0 + 1) * fx * (1 - fy)
        + sample(y0 + 1, x0) * (1 - fx) * fy
        + sample(y0 + 1, x0 + 1) * fx * fy
    )
    return out


def augment(frame: Frame, box: CornerBB, spec: AugmentSpec) -> AugmentResult:
    """Apply one augmentation spec to a frame and its box, deterministically.

    Geometric order: horizontal flip, vertical flip, rotation about the frame
    center. ``box_clipped`` reports corners leaving the frame after the
    geometric stage; the box itself is returned unclipped so callers can drop
    the sample.
    """
    pixels = frame.pixels
    w, h = frame.width, frame.height
    pts = list(box.corners)

    if spec.flip_h:
        pixels = pixels[:, ::-1]
        pts = [Point2(w - p.x, p.y) for p in pts]
    if spec.flip_v:
        pixels = pixels[::-1]
        pts = [Point2(p.x, h - p.y) for p in pts]
    if spec.rotation_angle is not None:
        theta = math.radians(spec.rotation_angle)
        pixels = _rotate_pixels(np.ascontiguousarray(pixels), theta)
        center = Point2(w / 2.0, h / 2.0)
        pts = [rotate(p, theta, about=center) for p in pts]

    if spec.brightness_shift != 0.0:
        pixels = pixels + spec.brightness_shift
    if spec.contrast_shift != 0.0:
        pixels = (pixels - 0.5) * (1.0 + spec.contrast_shift) + 0.5
    if spec.color_shift != (0.0, 0.0, 0.0):
        pixels = pixels + np.asarray(spec.color_shift, dtype=np.float32)
    if spec.blur_sigma > 0.0:
        pixels = gaussian_filter(
            np.asarray(pixels, dtype=np.float32), sigma=(spec.blur_sigma, spec.blur_sigma, 0.0)
        )

    new_box = CornerBB(tuple(pts))
    clipped = any(not (0.0 <= p.x <= w and 0.0 <= p.y <= h) for p in pts)
    return AugmentResult(Frame(np.ascontiguousarray(pixels)), new_box, clipped)
