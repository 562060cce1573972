"""Encoder-decoder tracker over frame features and box history.

One step works on a square crop around the last predicted box. A fixed
patch-averaging stage reduces the resampled crop to one vector per frame; a
trainable affine lifts those vectors to model width. The encoder runs
multi-head self-attention over the last ``n_history + 1`` frame features.
The decoder first self-attends over the ``n_history`` previous boxes
(five-vectors, crop-normalized), then runs a second attention block whose
queries and keys come from the encoder output while the values come from
the first decoder block. A two-layer head maps the current frame's row to
five numbers, squashed into the crop and back to frame coordinates.

There is no gradient through time: history buffers hold plain numbers, so
each step's tape covers exactly one forward pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff, nn
from .autodiff import Tape, backward
from .data import Frame, Sequence, crop_around_box, resize_frame
from .errors import (
    ConfigError,
    DatasetMismatch,
    EmptySequence,
    NotInitialized,
    ShapeError,
)
from .geometry import CornerBB, FiveBB, Point2, corners_to_five, five_to_corners
from .loss import (
    LossWeights,
    SmoothL1Config,
    circular_loss,
    circular_loss_grad,
    smooth_l1_deriv,
    smooth_l1_vector,
)
from .nn import (
    AdamState,
    AttentionConfig,
    FeedForwardParams,
    MultiHeadParams,
    adam_step,
    annealed_lr,
    init_uniform,
    multi_head_attention,
    sinusoidal_positions,
)

BETA_FLOOR = 0.01
BETA_SPAN = 0.98

NORM_SITES = ("enc_att", "enc_ff", "dec_att1", "dec_att2", "dec_ff")

# Reference scale from the original system: n_history=7, heads=4,
# d_model=1024, full-image CNN features. The desk defaults below keep the
# same wiring at a size a laptop core can train and finite-difference check.


@dataclass(frozen=True)
class TrackerConfig:
    d_model: int = 32
    heads: int = 2
    n_history: int = 3
    input_size: int = 64
    patch_grid: int = 8
    crop_factor: float = 1.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    head_squash: bool = True
    use_positional: bool = True
    norm_layers: tuple[str, ...] = NORM_SITES

    def __post_init__(self):
        if self.n_history < 1:
            raise ConfigError(f"n_history must be at least 1, got {self.n_history}")
        if self.input_size < self.patch_grid or self.input_size % self.patch_grid != 0:
            raise ConfigError(
                f"patch grid {self.patch_grid} must tile input size {self.input_size}"
            )
        if self.crop_factor <= 0:
            raise ConfigError(f"crop factor must be positive, got {self.crop_factor}")
        unknown = set(self.norm_layers) - set(NORM_SITES)
        if unknown:
            raise ConfigError(f"unknown norm layers: {sorted(unknown)}")
        object.__setattr__(self, "norm_layers", tuple(self.norm_layers))
        self.attention  # validates d_model/heads

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, heads=self.heads)

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_grid * self.patch_grid

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "heads": self.heads,
            "n_history": self.n_history,
            "input_size": self.input_size,
            "patch_grid": self.patch_grid,
            "crop_factor": self.crop_factor,
            "lambda1": self.loss_weights.lambda1,
            "lambda2": self.loss_weights.lambda2,
            "head_squash": self.head_squash,
            "use_positional": self.use_positional,
            "norm_layers": list(self.norm_layers),
        }

    @staticmethod
    def from_dict(raw: dict) -> "TrackerConfig":
        data = dict(raw)
        weights = LossWeights(
            lambda1=float(data.pop("lambda1", LossWeights().lambda1)),
            lambda2=float(data.pop("lambda2", LossWeights().lambda2)),
        )
        if "norm_layers" in data:
            data["norm_layers"] = tuple(data["norm_layers"])
        known = {
            "d_model", "heads", "n_history", "input_size", "patch_grid",
            "crop_factor", "head_squash", "use_positional", "norm_layers",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown tracker config keys: {sorted(unknown)}")
        return TrackerConfig(loss_weights=weights, **data)


def init_params(cfg: TrackerConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter dict; weights uniform by fan-in, biases and layer
    norms at identity."""
    d = cfg.d_model
    dk, dv = cfg.attention.head_k, cfg.attention.head_v
    hidden = 2 * d
    params: dict[str, np.ndarray] = {
        "feat_w": init_uniform(rng, (cfg.patch_dim, d)),
        "feat_b": np.zeros(d),
    }

    def attention_block(prefix: str, d_q: int, d_kv: int):
        for i in range(cfg.heads):
            params[f"{prefix}_wq{i}"] = init_uniform(rng, (d_q, dk))
            params[f"{prefix}_wk{i}"] = init_uniform(rng, (d_kv, dk))
            params[f"{prefix}_wv{i}"] = init_uniform(rng, (d_kv, dv))
        params[f"{prefix}_wo"] = init_uniform(rng, (cfg.heads * dv, d))

    def ff_block(prefix: str):
        params[f"{prefix}_w1"] = init_uniform(rng, (d, hidden))
        params[f"{prefix}_b1"] = np.zeros(hidden)
        params[f"{prefix}_w2"] = init_uniform(rng, (hidden, d))
        params[f"{prefix}_b2"] = np.zeros(d)

    def norm_block(prefix: str):
        if prefix in cfg.norm_layers:
            params[f"{prefix}_ln_g"] = np.ones(d)
            params[f"{prefix}_ln_b"] = np.zeros(d)

    attention_block("enc_att", d, d)
    norm_block("enc_att")
    ff_block("enc_ff")
    norm_block("enc_ff")
    attention_block("dec_att1", 5, 5)
    norm_block("dec_att1")
    attention_block("dec_att2", d, d)
    norm_block("dec_att2")
    ff_block("dec_ff")
    norm_block("dec_ff")
    params["head_w1"] = init_uniform(rng, (d, d))
    params["head_b1"] = np.zeros(d)
    params["head_w2"] = init_uniform(rng, (d, 5))
    # bias the squashed endpoints toward mid-crop so the initial box has
    # real extent; a collapsed box sits on the overlap loss plateau where
    # the area gradient vanishes with the box size
    params["head_b2"] = np.array([-0.8, -0.8, 0.8, 0.8, 0.0])
    return params


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def _patch_means(pixels: np.ndarray, grid: int) -> np.ndarray:
    """Average non-overlapping patches; (S, S, 3) -> (3 * grid * grid,).

    The vector is standardized (zero mean, unit variance over its entries)
    so the trainable projection sees contrast rather than absolute color.
    """
    side = pixels.shape[0]
    if pixels.shape[0] != pixels.shape[1] or side % grid != 0:
        raise ShapeError(f"cannot tile {pixels.shape} with a {grid}x{grid} grid")
    p = side // grid
    coarse = pixels.reshape(grid, p, grid, p, 3).mean(axis=(1, 3))
    v = coarse.astype(np.float64).ravel()
    return (v - v.mean()) / (v.std() + 1e-6)


class TrackerSession:
    """Mutable tracking state: parameters plus the two history buffers.

    Buffers hold plain numbers (raw patch vectors and frame-space
    five-vectors); the trainable part of each step runs on a fresh tape.
    """

    def __init__(self, cfg: TrackerConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self._feats: list[np.ndarray] = []
        self._boxes: list[FiveBB] = []

    @property
    def initialized(self) -> bool:
        return bool(self._boxes)

    @property
    def box_history(self) -> tuple[FiveBB, ...]:
        return tuple(self._boxes)

    def initialize(self, frame: Frame, gt: CornerBB) -> None:
        """Fill both buffers by replicating the first frame and its box."""
        five = corners_to_five(gt)
        crop, _ = crop_around_box(frame, gt, self.cfg.crop_factor)
        resized = resize_frame(crop, self.cfg.input_size, self.cfg.input_size)
        patches = _patch_means(resized.pixels, self.cfg.patch_grid)
        self._feats = [patches.copy() for _ in range(self.cfg.n_history + 1)]
        self._boxes = [five] * self.cfg.n_history

    def reinitialize(self, frame: Frame, gt: CornerBB) -> None:
        self.initialize(frame, gt)

    def step(self, frame: Frame) -> FiveBB:
        """Predict the box on the next frame and push it into the history."""
        _, _, five = self._forward(frame)
        self._push_box(five)
        return five

    def _push_box(self, box: FiveBB) -> None:
        self._boxes.append(box)
        self._boxes.pop(0)

    def _forward(self, frame: Frame):
        """One tape-recorded pass; pushes the frame feature but not the box.

        Returns (tape, output node, FiveBB). The output node holds the
        frame-space five-vector with shape (1, 5), so seeding ``backward``
        with a loss gradient in those coordinates yields parameter
        gradients directly.
        """
        if not self.initialized:
            raise NotInitialized("call initialize() with a ground-truth box first")
        cfg = self.cfg
        n = cfg.n_history

        crop, tf = crop_around_box(frame, five_to_corners(self._boxes[-1]), cfg.crop_factor)
        side = float(crop.width)
        resized = resize_frame(crop, cfg.input_size, cfg.input_size)
        self._feats.append(_patch_means(resized.pixels, cfg.patch_grid))
        self._feats.pop(0)
        feats = np.stack(self._feats)

        history = np.empty((n, 5))
        for row, b in enumerate(self._boxes):
            x1, y1, x2, y2, beta = b.as_vector()
            history[row] = (
                (x1 - tf.ox) / side,
                (y1 - tf.oy) / side,
                (x2 - tf.ox) / side,
                (y2 - tf.oy) / side,
                beta,
            )

        tape = Tape()
        lv = {name: tape.leaf(arr, name) for name, arr in self.params.items()}
        att = cfg.attention

        def heads_of(prefix: str) -> MultiHeadParams:
            return MultiHeadParams(
                w_q=[lv[f"{prefix}_wq{i}"] for i in range(cfg.heads)],
                w_k=[lv[f"{prefix}_wk{i}"] for i in range(cfg.heads)],
                w_v=[lv[f"{prefix}_wv{i}"] for i in range(cfg.heads)],
                w_o=lv[f"{prefix}_wo"],
            )

        def ff_of(prefix: str) -> FeedForwardParams:
            return FeedForwardParams(
                w1=lv[f"{prefix}_w1"], b1=lv[f"{prefix}_b1"],
                w2=lv[f"{prefix}_w2"], b2=lv[f"{prefix}_b2"],
            )

        def normed(prefix: str, node):
            if prefix in cfg.norm_layers:
                return autodiff.layer_norm_rows(node, lv[f"{prefix}_ln_g"], lv[f"{prefix}_ln_b"])
            return node

        x = autodiff.add(autodiff.matmul(tape.constant(feats), lv["feat_w"]), lv["feat_b"])
        if cfg.use_positional:
            x = autodiff.add(x, tape.constant(sinusoidal_positions(n + 1, cfg.d_model)))
        x = normed("enc_att", multi_head_attention(att, heads_of("enc_att"), x, x, x))
        enc = normed("enc_ff", nn.feed_forward(x, ff_of("enc_ff")))

        dec = tape.constant(history)
        if cfg.use_positional:
            dec = autodiff.add(dec, tape.constant(sinusoidal_positions(n, 5)))
        d1 = normed("dec_att1", multi_head_attention(att, heads_of("dec_att1"), dec, dec, dec))
        enc_k = autodiff.take_rows(enc, 0, n)
        d2 = normed("dec_att2", multi_head_attention(att, heads_of("dec_att2"), enc, enc_k, d1))
        d3 = normed("dec_ff", nn.feed_forward(d2, ff_of("dec_ff")))

        last = autodiff.take_rows(d3, n, n + 1)
        hid = autodiff.relu(autodiff.add(autodiff.matmul(last, lv["head_w1"]), lv["head_b1"]))
        raw = autodiff.add(autodiff.matmul(hid, lv["head_w2"]), lv["head_b2"])
        squashed = autodiff.sigmoid(raw) if cfg.head_squash else raw
        out = autodiff.add(
            autodiff.mul(squashed, tape.constant([[side, side, side, side, BETA_SPAN]])),
            tape.constant([[tf.ox, tf.oy, tf.ox, tf.oy, BETA_FLOOR]]),
        )
        tape.mark_output(out)

        x1, y1, x2, y2, beta = out.data[0]
        if not cfg.head_squash:
            beta = min(max(beta, BETA_FLOOR), BETA_FLOOR + BETA_SPAN)
        five = FiveBB(Point2(x1, y1), Point2(x2, y2), beta)
        return tape, out, five


class ProtocolTracker:
    """Adapts a session to the reset-protocol tracker interface."""

    def __init__(self, cfg: TrackerConfig, params: dict[str, np.ndarray]):
        self.session = TrackerSession(cfg, params)

    def initialize(self, index: int, frame, gt: CornerBB) -> None:
        self.session.initialize(frame, gt)

    def predict(self, index: int, frame) -> CornerBB:
        return five_to_corners(self.session.step(frame))


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop settings.

    ``push_noise`` jitters the box pushed into the history after each scored
    step (uniform, half-width in pixels on the endpoints, scaled down 50x on
    the arc fraction). Zero keeps the plain self-conditioned/teacher-forced
    rollout; a pixel or two teaches the head to trust image evidence over
    the history prior, which is what stops slow drift at evaluation time.
    """

    epochs: int = 10
    base_lr: float = 1e-3
    decay: float = 0.94
    batch_frames: int = 20
    teacher_forcing: bool = False
    push_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.base_lr < 0 or self.decay <= 0:
            raise ConfigError("learning rate must be non-negative, decay positive")
        if self.batch_frames < 2:
            raise ConfigError(f"batches need at least 2 frames, got {self.batch_frames}")
        if self.push_noise < 0:
            raise ConfigError(f"push noise must be non-negative, got {self.push_noise}")


@dataclass(frozen=True)
class TrainRow:
    step: int
    epoch: int
    area: float
    angle: float
    arc: float
    total: float
    lr: float


@dataclass
class TrainHistory:
    rows: list[TrainRow] = field(default_factory=list)
    seed: int | None = None

    def totals(self) -> list[float]:
        return [r.total for r in self.rows]

    def to_csv(self) -> str:
        lines = ["step,area,angle,arc,total,lr"]
        for r in self.rows:
            lines.append(
                f"{r.step},{r.area:.9f},{r.angle:.9f},{r.arc:.9f},{r.total:.9f},{r.lr:.9g}"
            )
        return "\n".join(lines) + "\n"


def _zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _jitter_box(box: FiveBB, width: float, rng: np.random.Generator) -> FiveBB:
    dx1, dy1, dx2, dy2 = rng.uniform(-width, width, size=4)
    dbeta = rng.uniform(-width, width) * 0.02
    beta = min(max(box.beta + dbeta, BETA_FLOOR), BETA_FLOOR + BETA_SPAN)
    return FiveBB(
        Point2(box.p1.x + dx1, box.p1.y + dy1),
        Point2(box.p2.x + dx2, box.p2.y + dy2),
        beta,
    )


def train(
    params: dict[str, np.ndarray],
    dataset: list[Sequence],
    cfg: TrackerConfig,
    tcfg: TrainConfig = TrainConfig(),
) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Batches of consecutive frames: init on the first, score the rest.

    Every scored step accumulates the circular-loss gradient through the
    full tape; one Adam update runs per batch on the mean gradient. The
    session consumes its own predictions unless teacher forcing is on.
    Parameters update in place and are also returned.
    """
    if not dataset:
        raise EmptySequence("training needs at least one sequence")
    for seq in dataset:
        if seq.frames is None:
            raise DatasetMismatch(f"sequence {seq.sequence_id!r} has no pixel data")
    state = AdamState.for_params(params)
    history = TrainHistory(seed=tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    step_idx = 0
    for epoch in range(tcfg.epochs):
        lr = annealed_lr(tcfg.base_lr, tcfg.decay, epoch)
        for seq in dataset:
            session = TrackerSession(cfg, params)
            for start in range(0, len(seq), tcfg.batch_frames):
                stop = min(start + tcfg.batch_frames, len(seq))
                if stop - start < tcfg.batch_frames:
                    warnings.warn(
                        f"{seq.sequence_id!r}: final batch truncated to {stop - start} frames"
                    )
                if stop - start < 2:
                    continue
                session.initialize(seq.frames[start], seq.groundtruth[start])
                acc = _zero_grads(params)
                scored = 0
                for t in range(start + 1, stop):
                    tape, _, pred = session._forward(seq.frames[t])
                    gt_five = corners_to_five(seq.groundtruth[t])
                    breakdown = circular_loss(pred, gt_five, cfg.loss_weights)
                    grad5 = circular_loss_grad(pred, gt_five, cfg.loss_weights)
                    grads = backward(tape, np.array([grad5.as_vector()]))
                    for name in acc:
                        acc[name] += grads[name]
                    scored += 1
                    history.rows.append(TrainRow(
                        step=step_idx, epoch=epoch, area=breakdown.area,
                        angle=breakdown.angle, arc=breakdown.arc,
                        total=breakdown.total, lr=lr,
                    ))
                    step_idx += 1
                    push = gt_five if tcfg.teacher_forcing else pred
                    if tcfg.push_noise > 0.0:
                        push = _jitter_box(push, tcfg.push_noise, rng)
                    session._push_box(push)
                if scored:
                    adam_step(params, {k: v / scored for k, v in acc.items()}, state, lr)
    return params, history


def pretrain_reinit(
    params: dict[str, np.ndarray],
    dataset: list[tuple[Frame, CornerBB]],
    cfg: TrackerConfig,
    epochs: int = 15,
    base_lr: float = 1e-3,
    decay: float = 0.94,
    l1: SmoothL1Config = SmoothL1Config(),
) -> list[float]:
    """Teach the model to reproduce the box it was just initialized with.

    Each sample re-initializes a session from (frame, gt), runs one step on
    the same frame, and takes one Adam update on the Smooth-L1 distance
    between the predicted and ground-truth five-vectors. Returns the
    per-update losses; parameters update in place.
    """
    if not dataset:
        raise EmptySequence("pretraining needs at least one (frame, box) sample")
    state = AdamState.for_params(params)
    losses: list[float] = []
    for epoch in range(epochs):
        lr = annealed_lr(base_lr, decay, epoch)
        for frame, gt in dataset:
            session = TrackerSession(cfg, params)
            session.initialize(frame, gt)
            tape, out, _ = session._forward(frame)
            target = np.asarray(corners_to_five(gt).as_vector())
            pred = out.data[0]
            losses.append(smooth_l1_vector(pred, target, l1))
            seed = np.array([[smooth_l1_deriv(p - g, l1) for p, g in zip(pred, target)]])
            grads = backward(tape, seed)
            adam_step(params, grads, state, lr)
    return losses


def reinit_loss(
    params: dict[str, np.ndarray],
    dataset: list[tuple[Frame, CornerBB]],
    cfg: TrackerConfig,
    l1: SmoothL1Config = SmoothL1Config(),
) -> float:
    """Mean first-step-after-reinit Smooth-L1 over a dataset, no updates."""
    if not dataset:
        raise EmptySequence("need at least one (frame, box) sample")
    total = 0.0
    for frame, gt in dataset:
        session = TrackerSession(cfg, params)
        session.initialize(frame, gt)
        _, out, _ = session._forward(frame)
        total += smooth_l1_vector(out.data[0], corners_to_five(gt).as_vector(), l1)
    return total / len(dataset)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def gradient_check(
    params: dict[str, np.ndarray],
    cfg: TrackerConfig,
    init_frame: Frame,
    init_gt: CornerBB,
    frame: Frame,
    gt: CornerBB,
    fd_step: float = 1e-4,
    tol: float = 1e-3,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Analytic loss gradient of one tracking step against central
    differences, swept over every entry of every parameter.

    The relative error uses ``|a - f| / max(|a|, |f|, floor)`` so that
    parameters the loss genuinely ignores compare as zero against FD noise
    instead of dividing by it.
    """
    gt_five = corners_to_five(gt)

    def loss_at(p: dict[str, np.ndarray]) -> float:
        session = TrackerSession(cfg, p)
        session.initialize(init_frame, init_gt)
        _, _, pred = session._forward(frame)
        return circular_loss(pred, gt_five, cfg.loss_weights).total

    session = TrackerSession(cfg, params)
    session.initialize(init_frame, init_gt)
    tape, _, pred = session._forward(frame)
    grad5 = circular_loss_grad(pred, gt_five, cfg.loss_weights)
    analytic = backward(tape, np.array([grad5.as_vector()]))

    worst = 0.0
    worst_name = ""
    n_checked = 0
    probe = clone_params(params)
    for name, arr in params.items():
        flat = probe[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + fd_step
            hi = loss_at(probe)
            flat[i] = keep - fd_step
            lo = loss_at(probe)
            flat[i] = keep
            fd = (hi - lo) / (2.0 * fd_step)
            a = analytic[name].ravel()[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), floor)
            n_checked += 1
            if rel > worst:
                worst, worst_name = rel, name
    return GradCheckReport(max_rel_err=worst, worst_param=worst_name, n_checked=n_checked, tol=tol)
