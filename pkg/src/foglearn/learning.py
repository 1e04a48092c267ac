"""Local training machinery: datasets (synthetic and IDX files), slotwise
datapoint arrivals, single-step gradient updates, weighted aggregation of
device models, and evaluation."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (N, d) float64 with integer labels in [0, classes)."""

    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one per feature row")
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.classes
        ):
            raise ValueError("labels outside [0, classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])


def split_dataset(
    ds: Dataset, train_size: int, test_size: int, seed: int
) -> tuple[Dataset, Dataset]:
    """Disjoint random train/test split of the stated sizes."""
    if train_size + test_size > len(ds):
        raise ValueError(
            f"split {train_size}+{test_size} exceeds dataset size {len(ds)}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    return ds.subset(order[:train_size]), ds.subset(order[train_size : train_size + test_size])


def gaussian_blobs(
    dim: int, classes: int, size: int, seed: int, spread: float = 1.0
) -> Dataset:
    """Class-conditional Gaussians: one random center per class, unit-ish
    covariance scaled by ``spread``.  Labels drawn uniformly."""
    if dim < 1 or size < 1:
        raise ValueError("dim and size must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 2.0, size=(classes, dim))
    labels = rng.integers(0, classes, size=size)
    features = centers[labels] + rng.normal(0.0, spread, size=(size, dim))
    return Dataset(features=features, labels=labels.astype(np.int64), classes=classes)


# ---------------------------------------------------------------------------
# IDX binary tensor files (the MNIST container format)
#
# byte layout:  [0x00, 0x00, dtype, ndim] then ndim big-endian uint32 sizes,
# then the elements in row-major order.  Only dtype 0x08 (uint8) is needed.


def read_idx(path: str) -> np.ndarray:
    """Read an IDX tensor file into a uint8 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    zero1, zero2, dtype, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0:
        raise ValueError(f"{path}: bad IDX magic {raw[:4]!r}")
    if dtype != 0x08:
        raise ValueError(f"{path}: unsupported IDX element type 0x{dtype:02x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated IDX dimension table")
    shape = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(shape)) if ndim else 1
    body = raw[header_end:]
    if len(body) != count:
        raise ValueError(
            f"{path}: payload holds {len(body)} bytes, header promises {count}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(shape)


def write_idx(path: str, arr: np.ndarray) -> None:
    """Write a uint8 tensor as an IDX file."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, 0x08, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx_dataset(images_path: str, labels_path: str, classes: int = 10) -> Dataset:
    """Pair an IDX image tensor with an IDX label vector; pixels scale to
    [0, 1] and images flatten to rows."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim < 2:
        raise ValueError(f"{images_path}: image tensor must be at least 2-D")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: label tensor must be 1-D")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features=flat, labels=labels.astype(np.int64), classes=classes)


# ---------------------------------------------------------------------------
# models: multinomial regression and a one-hidden-layer network


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class SoftmaxArch:
    """Linear scores per class with bias, trained under cross-entropy."""

    dim: int
    classes: int

    @property
    def param_count(self) -> int:
        return (self.dim + 1) * self.classes

    def init_params(self, seed: int) -> np.ndarray:
        return np.zeros(self.param_count)

    def _unpack(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mat = w[: self.dim * self.classes].reshape(self.dim, self.classes)
        bias = w[self.dim * self.classes :]
        return mat, bias

    def logits(self, w: np.ndarray, features: np.ndarray) -> np.ndarray:
        mat, bias = self._unpack(w)
        return features @ mat + bias

    def loss(self, w: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        logp = _log_softmax(self.logits(w, features))
        return float(-logp[np.arange(len(labels)), labels].mean())

    def loss_and_grad(
        self, w: np.ndarray, features: np.ndarray, labels: np.ndarray
    ) -> tuple[float, np.ndarray]:
        m = len(labels)
        logp = _log_softmax(self.logits(w, features))
        loss = float(-logp[np.arange(m), labels].mean())
        probs = np.exp(logp)
        probs[np.arange(m), labels] -= 1.0
        probs /= m
        grad_mat = features.T @ probs
        grad_bias = probs.sum(axis=0)
        return loss, np.concatenate([grad_mat.ravel(), grad_bias])


@dataclass(frozen=True)
class MlpArch:
    """One tanh hidden layer, cross-entropy output.  Weights initialize
    uniformly in +/- 1/sqrt(fan-in); biases start at zero."""

    dim: int
    hidden: int
    classes: int

    @property
    def param_count(self) -> int:
        return (self.dim + 1) * self.hidden + (self.hidden + 1) * self.classes

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        w1 = rng.uniform(-1, 1, size=(self.dim, self.hidden)) / np.sqrt(self.dim)
        w2 = rng.uniform(-1, 1, size=(self.hidden, self.classes)) / np.sqrt(self.hidden)
        return np.concatenate(
            [w1.ravel(), np.zeros(self.hidden), w2.ravel(), np.zeros(self.classes)]
        )

    def _unpack(self, w: np.ndarray):
        d, h, c = self.dim, self.hidden, self.classes
        pos = 0
        w1 = w[pos : pos + d * h].reshape(d, h); pos += d * h
        b1 = w[pos : pos + h]; pos += h
        w2 = w[pos : pos + h * c].reshape(h, c); pos += h * c
        b2 = w[pos : pos + c]
        return w1, b1, w2, b2

    def logits(self, w: np.ndarray, features: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(w)
        return np.tanh(features @ w1 + b1) @ w2 + b2

    def loss(self, w: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
        logp = _log_softmax(self.logits(w, features))
        return float(-logp[np.arange(len(labels)), labels].mean())

    def loss_and_grad(
        self, w: np.ndarray, features: np.ndarray, labels: np.ndarray
    ) -> tuple[float, np.ndarray]:
        w1, b1, w2, b2 = self._unpack(w)
        m = len(labels)
        hidden = np.tanh(features @ w1 + b1)
        logp = _log_softmax(hidden @ w2 + b2)
        loss = float(-logp[np.arange(m), labels].mean())
        delta = np.exp(logp)
        delta[np.arange(m), labels] -= 1.0
        delta /= m
        grad_w2 = hidden.T @ delta
        grad_b2 = delta.sum(axis=0)
        back = (delta @ w2.T) * (1.0 - hidden * hidden)
        grad_w1 = features.T @ back
        grad_b1 = back.sum(axis=0)
        return loss, np.concatenate(
            [grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2]
        )


Arch = SoftmaxArch | MlpArch


@dataclass(frozen=True)
class ModelState:
    """A parameter vector, the architecture interpreting it, and the step
    size its updates use."""

    w: np.ndarray
    arch: Arch
    step_size: float = 0.01

    def __post_init__(self) -> None:
        if self.w.shape != (self.arch.param_count,):
            raise ValueError(
                f"parameter vector has {self.w.shape}, arch needs "
                f"({self.arch.param_count},)"
            )
        if not 0 < self.step_size:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")


def init_model(arch: Arch, step_size: float = 0.01, seed: int = 0) -> ModelState:
    return ModelState(w=arch.init_params(seed), arch=arch, step_size=step_size)


def local_update(
    model: ModelState, features: np.ndarray, labels: np.ndarray
) -> ModelState:
    """One full-batch gradient step on the given datapoints.  An empty
    batch returns the model unchanged."""
    if len(labels) == 0:
        return model
    with np.errstate(invalid="ignore", over="ignore"):
        _, grad = model.arch.loss_and_grad(model.w, features, labels)
    if not np.isfinite(grad).all():
        raise ArithmeticError(
            f"non-finite gradient (|w| = {np.linalg.norm(model.w):.4g}, "
            f"batch = {len(labels)})"
        )
    return replace(model, w=model.w - model.step_size * grad)


def aggregate(
    contributions: list[tuple[float, np.ndarray]],
    fallback: np.ndarray | None = None,
) -> np.ndarray:
    """Average parameter vectors weighted by processed datapoint counts.

    With every weight zero there is nothing to average: the fallback (the
    standing global model) is returned and the event logged, or a
    ValueError raised when no fallback exists.
    """
    if not contributions:
        raise ValueError("aggregate needs at least one contribution")
    total = float(sum(h for h, _ in contributions))
    if total <= 0:
        if fallback is None:
            raise ValueError("all aggregation weights are zero and no fallback given")
        logger.warning("aggregation window saw no processed data; keeping the "
                       "previous global model")
        return fallback.copy()
    out = np.zeros_like(contributions[0][1])
    for h, w in contributions:
        if h < 0:
            raise ValueError(f"negative aggregation weight {h}")
        out += (h / total) * w
    return out


def evaluate(model: ModelState, ds: Dataset) -> tuple[float, float]:
    """(mean cross-entropy, top-1 accuracy) on a dataset."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logp = _log_softmax(model.arch.logits(model.w, ds.features))
    loss = float(-logp[np.arange(len(ds)), ds.labels].mean())
    acc = float((logp.argmax(axis=1) == ds.labels).mean())
    return loss, acc


# ---------------------------------------------------------------------------
# slotwise arrivals


def generate_arrivals(
    pool_size: int,
    n: int,
    horizon: int,
    seed: int,
    mean: float | None = None,
    working: np.ndarray | None = None,
) -> tuple[np.ndarray, list[list[np.ndarray]]]:
    """Assign training datapoints to device-slots.

    Counts are Poisson with mean pool_size/(n*horizon) unless overridden;
    indices are drawn without replacement from a single shuffled pool in
    slot-major, device-minor order, so no datapoint arrives twice.  The
    optional ``working`` mask (horizon, n) zeroes arrivals at device-slots
    that are not collecting; the count draw itself is mask-independent so
    masked and unmasked runs stay comparable seed for seed.  An exhausted
    pool truncates later arrivals (logged).
    """
    if pool_size < 0 or n < 1 or horizon < 1:
        raise ValueError("need pool_size >= 0, n >= 1, horizon >= 1")
    lam = pool_size / (n * horizon) if mean is None else mean
    if lam < 0:
        raise ValueError(f"arrival mean must be >= 0, got {lam}")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(lam, size=(horizon, n))
    if working is not None:
        if working.shape != (horizon, n):
            raise ValueError("working mask must have shape (horizon, n)")
        counts = np.where(working, counts, 0)
    pool = rng.permutation(pool_size)
    cursor = 0
    truncated = False
    slots: list[list[np.ndarray]] = []
    for t in range(horizon):
        row = []
        for i in range(n):
            want = int(counts[t, i])
            take = min(want, pool_size - cursor)
            if take < want:
                truncated = True
                counts[t, i] = take
            row.append(pool[cursor : cursor + take].copy())
            cursor += take
        slots.append(row)
    if truncated:
        logger.info(
            "arrival pool of %d exhausted before slot %d; later arrivals truncated",
            pool_size,
            horizon,
        )
    return counts, slots


def largest_remainder_split(count: int, fractions: np.ndarray) -> np.ndarray:
    """Integer split of ``count`` items proportional to ``fractions``,
    summing exactly to count.  Floors first, then hands out the remainder
    by largest fractional part; ties go to the earlier slot, so callers
    order slots by precedence."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    fractions = np.asarray(fractions, dtype=float)
    if (fractions < -1e-9).any():
        raise ValueError("fractions must be >= 0")
    total = fractions.sum()
    if total <= 0:
        out = np.zeros(len(fractions), dtype=int)
        out[0] = count
        return out
    exact = count * fractions / total
    out = np.floor(exact).astype(int)
    rest = count - int(out.sum())
    if rest > 0:
        order = np.argsort(-(exact - out), kind="stable")
        out[order[:rest]] += 1
    return out
