"""Feature encoder: a small tanh MLP with unit-norm outputs, plus Adam.

The encoder maps raw world vectors to L2-normalized feature vectors.  A
forward pass can optionally record onto an autodiff Tape; the recorded and
plain paths execute the same numpy operations in the same order, so their
outputs agree bit for bit.

Checkpoints use a flat binary layout (header, widths, tensors) so that a
retrained model with identical inputs produces an identical file.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointFormatError,
    DimensionMismatchError,
    InvalidConfigError,
    NonFiniteGradientError,
    ShapeMismatchError,
)
from .numerics import normalize_rows

_CKPT_MAGIC = b"CCCK"
_CKPT_VERSION = 1


@dataclass
class EncoderParams:
    """Weights and biases of the MLP, layer by layer."""

    weights: list  # weights[i] has shape (widths[i], widths[i+1])
    biases: list   # biases[i] has shape (widths[i+1],)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidConfigError("weights and biases must be non-empty and paired")
        previous_out = None
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise InvalidConfigError(f"layer {i} tensors have shapes {w.shape}, {b.shape}")
            if previous_out is not None and w.shape[0] != previous_out:
                raise InvalidConfigError(f"layer {i} input width {w.shape[0]} != {previous_out}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidConfigError(f"layer {i} has non-finite entries")
            if not np.any(w):
                raise InvalidConfigError(f"layer {i} weight matrix is all zeros")
            previous_out = w.shape[1]
            self.weights[i] = w
            self.biases[i] = b

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_layers(self):
        return len(self.weights)

    def tensors(self):
        """Flat [W0, b0, W1, b1, ...] view; the arrays are shared, not copied."""
        flat = []
        for w, b in zip(self.weights, self.biases):
            flat.append(w)
            flat.append(b)
        return flat

    def copy(self):
        return EncoderParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_encoder(widths, rng):
    """Fan-in-scaled init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.

    Zero biases keep the initial map odd, so fresh encoders add no common
    offset to every feature row; cosine geometry of the inputs carries
    through the untrained network instead of being inflated by a shared
    bias direction.
    """
    if len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise InvalidConfigError(f"widths must be >= 2 positive entries, got {widths}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights=weights, biases=biases)


def encode_batch(params, inputs, tape=None):
    """Encode a (batch, dim) array into unit-norm feature rows.

    Without a tape this returns a plain array.  With a tape it returns the
    output Node; the parameter leaves are registered on the tape in layer
    order (W0, b0, W1, b1, ...) and are available as tape.leaves.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d batch, got shape {x.shape}")
    if x.shape[1] != params.widths[0]:
        raise DimensionMismatchError(
            f"input dim {x.shape[1]} != encoder input width {params.widths[0]}"
        )
    last = params.num_layers - 1
    if tape is None:
        out = x
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            out = out @ w + b
            if i != last:
                out = np.tanh(out)
        return normalize_rows(out)
    node = tape.constant(x)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        node = tape.add(tape.matmul(node, tape.leaf(w)), tape.leaf(b))
        if i != last:
            node = tape.tanh(node)
    return tape.row_normalize(node)


def encode(params, vector):
    """Encode a single raw vector into a unit-norm feature vector."""
    return encode_batch(params, np.asarray(vector, dtype=np.float64)[None, :])[0]


# -- optimizer ---------------------------------------------------------------


@dataclass
class LrSchedule:
    """Linear warmup to base_lr over warmup_epochs, then flat."""

    base_lr: float
    warmup_epochs: int

    def __post_init__(self):
        if self.base_lr <= 0.0 or not np.isfinite(self.base_lr):
            raise InvalidConfigError(f"base_lr must be positive, got {self.base_lr}")
        if int(self.warmup_epochs) < 1:
            raise InvalidConfigError("warmup_epochs must be >= 1")


def warmup_lr(schedule, epoch):
    """Learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise InvalidConfigError(f"epoch must be >= 1, got {epoch}")
    if epoch <= schedule.warmup_epochs:
        return schedule.base_lr * epoch / schedule.warmup_epochs
    return schedule.base_lr


@dataclass
class OptimizerState:
    """Adam moments for a flat list of parameter tensors."""

    first_moment: list
    second_moment: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def init_optimizer(params, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    if weight_decay < 0.0:
        raise InvalidConfigError("weight_decay must be >= 0")
    tensors = params.tensors()
    return OptimizerState(
        first_moment=[np.zeros_like(t) for t in tensors],
        second_moment=[np.zeros_like(t) for t in tensors],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def adam_step(state, params, gradients, lr):
    """One Adam update, in place, over params.tensors().

    Weight decay enters as an additive gradient term decay * theta and is
    applied to biases as well as weights.  Raises NonFiniteGradientError on
    NaN or infinite gradients and ShapeMismatchError when a gradient does
    not match its tensor.
    """
    tensors = params.tensors()
    if len(gradients) != len(tensors):
        raise ShapeMismatchError(
            f"{len(gradients)} gradients for {len(tensors)} tensors"
        )
    for index, (tensor, grad) in enumerate(zip(tensors, gradients)):
        if grad.shape != tensor.shape:
            raise ShapeMismatchError(
                f"tensor {index}: grad shape {grad.shape} != {tensor.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"tensor {index} has a non-finite gradient")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for tensor, grad, m, v in zip(
        tensors, gradients, state.first_moment, state.second_moment
    ):
        g = grad + state.weight_decay * tensor
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        tensor -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, params, optimizer=None):
    """Write params (and optionally Adam state) as deterministic flat bytes."""
    widths = params.widths
    has_optimizer = optimizer is not None
    with open(path, "wb") as handle:
        handle.write(struct.pack("<4sHBI", _CKPT_MAGIC, _CKPT_VERSION,
                                 1 if has_optimizer else 0, len(widths)))
        handle.write(struct.pack(f"<{len(widths)}q", *widths))
        for tensor in params.tensors():
            handle.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        if has_optimizer:
            handle.write(struct.pack(
                "<qdddd",
                optimizer.step, optimizer.beta1, optimizer.beta2,
                optimizer.eps, optimizer.weight_decay,
            ))
            for moment in optimizer.first_moment + optimizer.second_moment:
                handle.write(np.ascontiguousarray(moment, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, optimizer_or_None)."""
    with open(path, "rb") as handle:
        blob = handle.read()
    head = struct.Struct("<4sHBI")
    if len(blob) < head.size:
        raise CheckpointFormatError("file too short for a checkpoint header")
    magic, version, has_optimizer, num_widths = head.unpack_from(blob, 0)
    if magic != _CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != _CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    offset = head.size
    try:
        widths = list(struct.unpack_from(f"<{num_widths}q", blob, offset))
    except struct.error as exc:
        raise CheckpointFormatError("truncated widths block") from exc
    offset += 8 * num_widths

    def take_array(shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointFormatError("truncated tensor block")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64, copy=True)
        offset = end
        return arr.reshape(shape)

    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(take_array((fan_in, fan_out)))
        biases.append(take_array((fan_out,)))
    params = EncoderParams(weights=weights, biases=biases)

    optimizer = None
    if has_optimizer:
        tail = struct.Struct("<qdddd")
        if offset + tail.size > len(blob):
            raise CheckpointFormatError("truncated optimizer header")
        step, beta1, beta2, eps, weight_decay = tail.unpack_from(blob, offset)
        offset += tail.size
        shapes = [t.shape for t in params.tensors()]
        first = [take_array(s) for s in shapes]
        second = [take_array(s) for s in shapes]
        optimizer = OptimizerState(
            first_moment=first,
            second_moment=second,
            step=step,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
        )
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes")
    return params, optimizer
