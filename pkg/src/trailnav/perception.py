"""Soft trail perception: two three-way heads over trail-relative state.

One head estimates view orientation (is the vehicle aimed left of,
along, or right of the trail direction) and the other lateral offset
(is it displaced left of, on, or right of the centerline).  Both emit
a probability triple rather than a hard class.

Two interchangeable sources produce these estimates:

* an oracle that scores the true trail-relative state against per-class
  anchor values with a Gaussian kernel and softmaxes the scores, and
* a small trainable two-head network run on feature embeddings of the
  same state, trained in stages against the oracle's labels.

Sign convention, fixed once here and relied on by the controller: a
positive heading error means the vehicle faces left of the trail, so
the *left* category wins near the positive orientation anchor; a
positive lateral offset means displaced left, so the left category
wins near the positive offset anchor.  Categories therefore read as
"where am I / where am I aimed", and the correct steering response to
a winning left category is a clockwise turn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .labels import Category, SoftLabel3
from .loss import LossConfig, batch_loss_and_grad, softmax
from .trail import RelativeState

__all__ = [
    "TrailEstimate",
    "OracleParams",
    "oracle_predict",
    "value_to_category",
    "SyntheticDataset",
    "make_synthetic_dataset",
    "split_dataset",
    "export_dataset_csv",
    "load_dataset_csv",
    "embed_state",
    "embedding_matrix",
    "FreezeMask",
    "TwoHeadModel",
    "init_model",
    "model_forward",
    "model_predict",
    "OptimizerConfig",
    "Head",
    "train_stage",
    "TrainingDivergedError",
    "accuracy",
    "mean_winning_probability",
    "save_model",
    "load_model",
    "vo_only",
]

EMBED_DIM = 16

# Fixed seed for the synthetic feature embedding.  The map must be the
# same across datasets and stages so that a trunk trained on one task
# transfers to another.
_EMBED_SEED = 20260401


@dataclass(frozen=True)
class TrailEstimate:
    """One perception output: both heads plus the capture timestamp."""

    vo: SoftLabel3          # view orientation head
    lo: SoftLabel3          # lateral offset head
    timestamp: float = 0.0


def vo_only(est: TrailEstimate) -> TrailEstimate:
    """Degrade an estimate to orientation-only by flattening the offset head.

    Models the three-class perception variant that cannot see lateral
    displacement; a uniform offset head contributes nothing to steering.
    """
    return TrailEstimate(est.vo, SoftLabel3.uniform(), est.timestamp)


def _check_anchors(name: str, anchors) -> tuple:
    a = tuple(float(v) for v in anchors)
    if len(a) != 3 or not (a[0] < a[1] < a[2]):
        raise ValueError(f"{name} must be 3 strictly increasing values, got {anchors}")
    return a


@dataclass(frozen=True)
class OracleParams:
    """Anchor values and kernel widths for the scoring oracle.

    Anchors are stored in increasing numeric order; the largest anchor
    belongs to the LEFT category per the sign convention above.
    ``label_noise`` is the standard deviation of Gaussian noise added to
    the pre-softmax scores.
    """

    vo_anchors: tuple = (-math.pi / 6.0, 0.0, math.pi / 6.0)
    lo_anchors: tuple = (-0.5, 0.0, 0.5)
    sigma_vo: float = math.pi / 12.0
    sigma_lo: float = 0.25
    label_noise: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "vo_anchors", _check_anchors("vo_anchors", self.vo_anchors))
        object.__setattr__(self, "lo_anchors", _check_anchors("lo_anchors", self.lo_anchors))
        if not (self.sigma_vo > 0.0 and self.sigma_lo > 0.0):
            raise ValueError("kernel widths must be positive")
        if self.label_noise < 0.0:
            raise ValueError(f"label_noise must be >= 0, got {self.label_noise}")


# Anchor positions (increasing order) map onto categories as
# (smallest, middle, largest) -> (RIGHT, CENTER, LEFT).
_ANCHOR_ORDER = (Category.RIGHT, Category.CENTER, Category.LEFT)


def _head_probs(value: float, anchors: tuple, sigma: float, noise: float,
                rng: np.random.Generator | None) -> SoftLabel3:
    scores = -((value - np.asarray(anchors)) ** 2) / (2.0 * sigma * sigma)
    if noise > 0.0:
        if rng is None:
            raise ValueError("label_noise > 0 requires an rng")
        scores = scores + rng.normal(0.0, noise, 3)
    w = softmax(scores)
    probs = np.empty(3)
    for k, cat in enumerate(_ANCHOR_ORDER):
        probs[int(cat)] = w[k]
    return SoftLabel3.from_array(probs)


def oracle_predict(rel: RelativeState, params: OracleParams,
                   rng: np.random.Generator | None = None,
                   timestamp: float = 0.0) -> TrailEstimate:
    """Score the true trail-relative state into soft labels.

    Each head scores its value (heading error or lateral offset)
    against the three anchors with a Gaussian kernel of the configured
    width and softmaxes the scores.  Mirroring the state (negating both
    values) exactly swaps the left and right probabilities.
    """
    vo = _head_probs(rel.heading_error, params.vo_anchors, params.sigma_vo,
                     params.label_noise, rng)
    lo = _head_probs(rel.lateral_offset, params.lo_anchors, params.sigma_lo,
                     params.label_noise, rng)
    return TrailEstimate(vo, lo, timestamp)


def value_to_category(value: float, anchors) -> Category:
    """Hard label: the category whose anchor is nearest to the value."""
    a = np.asarray(anchors, dtype=float)
    return _ANCHOR_ORDER[int(np.argmin(np.abs(value - a)))]


# ---------------------------------------------------------------------------
# Synthetic datasets


def embedding_matrix() -> np.ndarray:
    """The fixed random linear map from (offset, heading error) to features."""
    rng = np.random.default_rng(_EMBED_SEED)
    return rng.standard_normal((EMBED_DIM, 2))


_EMBED = embedding_matrix()


def embed_state(lateral_offset: float, heading_error: float,
                noise_std: float = 0.0,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Embed a state pair into the 16-dim feature space (plus optional noise)."""
    f = _EMBED @ np.array([lateral_offset, heading_error])
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        f = f + rng.normal(0.0, noise_std, EMBED_DIM)
    return f


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Feature rows plus hard labels for both heads."""

    features: np.ndarray    # (n, 16)
    vo_labels: np.ndarray   # (n,) ints
    lo_labels: np.ndarray   # (n,) ints

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[1] != EMBED_DIM:
            raise ValueError(f"features must be (n, {EMBED_DIM})")
        n = len(self.features)
        if len(self.vo_labels) != n or len(self.lo_labels) != n:
            raise ValueError("label arrays must match the feature count")

    def __len__(self) -> int:
        return len(self.features)


DATASET_KINDS = ("orientation_only", "offset_only", "joint")


def _sample_in_cell(cat: Category, anchors: tuple, rng: np.random.Generator) -> float:
    # Uniform within the category's decision cell: anchor +/- half gap.
    idx = _ANCHOR_ORDER.index(cat)
    half = 0.5 * (anchors[1] - anchors[0])
    return rng.uniform(anchors[idx] - half, anchors[idx] + half)


def make_synthetic_dataset(kind: str, n: int, rng: np.random.Generator,
                           params: OracleParams | None = None,
                           noise_std: float = 0.1) -> SyntheticDataset:
    """Build a balanced labeled dataset of embedded state pairs.

    ``orientation_only`` varies heading error with the offset pinned to
    zero, ``offset_only`` the reverse, ``joint`` varies both.  Classes
    are assigned round-robin so counts are balanced to within one, and
    values are drawn uniformly inside each class's decision cell.
    Features are the fixed linear embedding of (offset, heading error)
    plus Gaussian noise of ``noise_std``.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; known: {', '.join(DATASET_KINDS)}")
    if n < 1:
        raise ValueError("n must be positive")
    p = params or OracleParams()

    offsets = np.zeros(n)
    headings = np.zeros(n)
    for i in range(n):
        cat = _ANCHOR_ORDER[i % 3]
        if kind in ("orientation_only", "joint"):
            headings[i] = _sample_in_cell(cat, p.vo_anchors, rng)
        if kind == "offset_only":
            offsets[i] = _sample_in_cell(cat, p.lo_anchors, rng)
        elif kind == "joint":
            offsets[i] = _sample_in_cell(_ANCHOR_ORDER[(i // 3) % 3], p.lo_anchors, rng)

    vo_labels = np.array([int(value_to_category(v, p.vo_anchors)) for v in headings])
    lo_labels = np.array([int(value_to_category(v, p.lo_anchors)) for v in offsets])
    features = (np.column_stack([offsets, headings]) @ _EMBED.T
                + rng.normal(0.0, noise_std, (n, EMBED_DIM)))

    order = rng.permutation(n)
    return SyntheticDataset(features[order], vo_labels[order], lo_labels[order])


def split_dataset(ds: SyntheticDataset, holdout_frac: float,
                  rng: np.random.Generator) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Shuffle and split into (train, holdout)."""
    if not (0.0 < holdout_frac < 1.0):
        raise ValueError("holdout_frac must lie in (0, 1)")
    order = rng.permutation(len(ds))
    n_hold = max(1, int(round(holdout_frac * len(ds))))
    hold, tr = order[:n_hold], order[n_hold:]
    return (
        SyntheticDataset(ds.features[tr], ds.vo_labels[tr], ds.lo_labels[tr]),
        SyntheticDataset(ds.features[hold], ds.vo_labels[hold], ds.lo_labels[hold]),
    )


def export_dataset_csv(ds: SyntheticDataset, path) -> None:
    header = ",".join([f"feature_{i}" for i in range(EMBED_DIM)] + ["vo_label", "lo_label"])
    lines = [header]
    for i in range(len(ds)):
        cells = [f"{v:.17g}" for v in ds.features[i]]
        cells += [str(int(ds.vo_labels[i])), str(int(ds.lo_labels[i]))]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset_csv(path) -> SyntheticDataset:
    text = Path(path).read_text().splitlines()
    expected = [f"feature_{i}" for i in range(EMBED_DIM)] + ["vo_label", "lo_label"]
    if not text or text[0].split(",") != expected:
        raise ValueError(f"{path}: unexpected dataset header")
    rows = [line.split(",") for line in text[1:] if line]
    features = np.array([[float(c) for c in r[:EMBED_DIM]] for r in rows])
    vo = np.array([int(r[EMBED_DIM]) for r in rows])
    lo = np.array([int(r[EMBED_DIM + 1]) for r in rows])
    return SyntheticDataset(features, vo, lo)


# ---------------------------------------------------------------------------
# Two-head model


@dataclass(frozen=True)
class FreezeMask:
    """Which parameter blocks training must leave bit-identical."""

    trunk: bool = False
    vo_head: bool = False
    lo_head: bool = False


@dataclass(frozen=True, eq=False)
class TwoHeadModel:
    """Shared trunk (16 -> hidden, shifted-relu) with two linear heads.

    The activation is max(x, -1): relu with the hinge shifted down one
    unit so most units stay in their linear regime near init.  Models
    are immutable values; training returns a new model.
    """

    trunk_weight: np.ndarray   # (16, hidden)
    trunk_bias: np.ndarray     # (hidden,)
    vo_weight: np.ndarray      # (hidden, 3)
    vo_bias: np.ndarray        # (3,)
    lo_weight: np.ndarray      # (hidden, 3)
    lo_bias: np.ndarray        # (3,)
    frozen: FreezeMask = field(default_factory=FreezeMask)

    def __post_init__(self) -> None:
        h = self.trunk_weight.shape[1]
        if self.trunk_weight.shape != (EMBED_DIM, h):
            raise ValueError("trunk_weight must be (16, hidden)")
        for name, arr, shape in [
            ("trunk_bias", self.trunk_bias, (h,)),
            ("vo_weight", self.vo_weight, (h, 3)),
            ("vo_bias", self.vo_bias, (3,)),
            ("lo_weight", self.lo_weight, (h, 3)),
            ("lo_bias", self.lo_bias, (3,)),
        ]:
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")

    @property
    def hidden(self) -> int:
        return self.trunk_weight.shape[1]

    def with_frozen(self, trunk: bool = False, vo_head: bool = False,
                    lo_head: bool = False) -> "TwoHeadModel":
        return replace(self, frozen=FreezeMask(trunk, vo_head, lo_head))


def init_model(rng: np.random.Generator, hidden: int = 32) -> TwoHeadModel:
    """Random init: scaled-Gaussian weights, zero biases."""
    return TwoHeadModel(
        trunk_weight=rng.normal(0.0, math.sqrt(2.0 / EMBED_DIM), (EMBED_DIM, hidden)),
        trunk_bias=np.zeros(hidden),
        vo_weight=rng.normal(0.0, math.sqrt(1.0 / hidden), (hidden, 3)),
        vo_bias=np.zeros(3),
        lo_weight=rng.normal(0.0, math.sqrt(1.0 / hidden), (hidden, 3)),
        lo_bias=np.zeros(3),
    )


def _srelu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, -1.0)


def model_forward(model: TwoHeadModel, features: np.ndarray):
    """Logits of both heads for a batch of feature rows: ((n,3), (n,3))."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    h = _srelu(X @ model.trunk_weight + model.trunk_bias)
    return h @ model.vo_weight + model.vo_bias, h @ model.lo_weight + model.lo_bias


def model_predict(model: TwoHeadModel, features: np.ndarray,
                  timestamp: float = 0.0) -> TrailEstimate:
    """Run one feature row through the model and soften both heads."""
    zv, zl = model_forward(model, features)
    return TrailEstimate(
        SoftLabel3.from_array(softmax(zv[0])),
        SoftLabel3.from_array(softmax(zl[0])),
        timestamp,
    )


class Head:
    VO = "vo"
    LO = "lo"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1.0
    epochs: int = 300

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0 or self.epochs < 1:
            raise ValueError("learning_rate must be > 0 and epochs >= 1")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite.

    Carries the last finite model and the loss history up to the
    failure so callers can inspect what happened.
    """

    def __init__(self, model: TwoHeadModel, history: list):
        super().__init__("training loss became non-finite")
        self.model = model
        self.history = history


def _head_arrays(model: TwoHeadModel, head: str):
    if head == Head.VO:
        return model.vo_weight, model.vo_bias
    if head == Head.LO:
        return model.lo_weight, model.lo_bias
    raise ValueError(f"unknown head {head!r}")


def _labels_for(ds: SyntheticDataset, head: str) -> np.ndarray:
    return ds.vo_labels if head == Head.VO else ds.lo_labels


def _stage_loss(model: TwoHeadModel, ds: SyntheticDataset, head: str,
                loss_cfg: LossConfig) -> float:
    zv, zl = model_forward(model, ds.features)
    z = zv if head == Head.VO else zl
    value, _ = batch_loss_and_grad(z, _labels_for(ds, head), loss_cfg)
    return value


def _stage_gradients(model: TwoHeadModel, ds: SyntheticDataset, head: str,
                     loss_cfg: LossConfig):
    X = ds.features
    pre = X @ model.trunk_weight + model.trunk_bias
    h = _srelu(pre)
    W, b = _head_arrays(model, head)
    loss, dz = batch_loss_and_grad(h @ W + b, _labels_for(ds, head), loss_cfg)
    grads = {
        f"{head}_weight": h.T @ dz,
        f"{head}_bias": dz.sum(axis=0),
    }
    if not model.frozen.trunk:
        dh = (dz @ W.T) * (pre > -1.0)
        grads["trunk_weight"] = X.T @ dh
        grads["trunk_bias"] = dh.sum(axis=0)
    return loss, grads


def _apply_update(model: TwoHeadModel, grads: dict, lr: float) -> TwoHeadModel:
    updates = {}
    frozen = {
        "trunk_weight": model.frozen.trunk, "trunk_bias": model.frozen.trunk,
        "vo_weight": model.frozen.vo_head, "vo_bias": model.frozen.vo_head,
        "lo_weight": model.frozen.lo_head, "lo_bias": model.frozen.lo_head,
    }
    for name, g in grads.items():
        if not frozen[name]:
            updates[name] = getattr(model, name) - lr * g
    return replace(model, **updates)


def train_stage(model: TwoHeadModel, ds: SyntheticDataset, head: str,
                loss_cfg: LossConfig, opt: OptimizerConfig):
    """Full-batch gradient descent on one head's loss.

    The freeze mask on the model is respected exactly: frozen blocks of
    the returned model are bit-identical to the input's.  Each epoch's
    update is accepted only if it does not increase the loss; otherwise
    the step is retried with a halved learning rate, which makes the
    recorded history non-increasing.  Returns (trained model, history)
    where history[0] is the initial loss.
    """
    if (head == Head.VO and model.frozen.vo_head) or (head == Head.LO and model.frozen.lo_head):
        raise ValueError(f"cannot train head {head!r}: it is frozen")
    lr = opt.learning_rate
    current = model
    loss = _stage_loss(current, ds, head, loss_cfg)
    if not math.isfinite(loss):
        raise TrainingDivergedError(current, [loss])
    history = [loss]
    for _ in range(opt.epochs):
        _, grads = _stage_gradients(current, ds, head, loss_cfg)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDivergedError(current, history)
        while True:
            candidate = _apply_update(current, grads, lr)
            new_loss = _stage_loss(candidate, ds, head, loss_cfg)
            if math.isfinite(new_loss) and new_loss <= history[-1]:
                current = candidate
                break
            lr *= 0.5
            if lr < 1e-12:
                new_loss = history[-1]  # no usable step; stop moving
                break
        history.append(new_loss)
    return current, history


def accuracy(model: TwoHeadModel, ds: SyntheticDataset, head: str) -> float:
    zv, zl = model_forward(model, ds.features)
    z = zv if head == Head.VO else zl
    return float(np.mean(np.argmax(z, axis=1) == _labels_for(ds, head)))


def mean_winning_probability(model: TwoHeadModel, ds: SyntheticDataset, head: str) -> float:
    """Average probability the head assigns to its own argmax class."""
    zv, zl = model_forward(model, ds.features)
    z = zv if head == Head.VO else zl
    return float(np.mean(np.max(softmax(z), axis=1)))


# ---------------------------------------------------------------------------
# Model serialization: versioned plain-text tensor list

_MODEL_HEADER = "# twohead-model v1"
_TENSOR_NAMES = ("trunk_weight", "trunk_bias", "vo_weight", "vo_bias",
                 "lo_weight", "lo_bias")


def save_model(model: TwoHeadModel, path) -> None:
    """Write the model as a text tensor list; %.17g round-trips float64."""
    lines = [_MODEL_HEADER]
    flags = [n for n, f in (("trunk", model.frozen.trunk),
                            ("vo_head", model.frozen.vo_head),
                            ("lo_head", model.frozen.lo_head)) if f]
    lines.append("frozen " + " ".join(flags) if flags else "frozen")
    for name in _TENSOR_NAMES:
        arr = np.atleast_2d(getattr(model, name))
        lines.append(f"tensor {name} {' '.join(str(d) for d in getattr(model, name).shape)}")
        for row in arr:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> TwoHeadModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MODEL_HEADER:
        raise ValueError(f"{path}: not a twohead-model v1 file")
    if len(lines) < 2 or not lines[1].startswith("frozen"):
        raise ValueError(f"{path}: missing frozen line")
    flags = set(lines[1].split()[1:])
    unknown = flags - {"trunk", "vo_head", "lo_head"}
    if unknown:
        raise ValueError(f"{path}: unknown frozen blocks {sorted(unknown)}")

    tensors = {}
    i = 2
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] != "tensor":
            raise ValueError(f"{path}: expected tensor header at line {i + 1}")
        name, shape = parts[1], tuple(int(d) for d in parts[2:])
        n_rows = shape[0] if len(shape) == 2 else 1
        rows = [[float(v) for v in lines[i + 1 + r].split()] for r in range(n_rows)]
        arr = np.array(rows)
        tensors[name] = arr.reshape(shape)
        i += 1 + n_rows
    missing = set(_TENSOR_NAMES) - set(tensors)
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    return TwoHeadModel(
        **{n: tensors[n] for n in _TENSOR_NAMES},
        frozen=FreezeMask("trunk" in flags, "vo_head" in flags, "lo_head" in flags),
    )
