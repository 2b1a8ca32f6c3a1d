"""Small 1-D CNN with explicit forward and backward passes.

Architecture over the flattened 133-value feature vector:
conv(k=3, 100 filters) -> ReLU -> maxpool(k=3, s=2) -> conv(k=3, 100)
-> ReLU -> maxpool(k=3, s=2) -> dense(1000) -> ReLU -> dropout
-> affine logits(2) -> softmax. All arithmetic is float64; gradients
are exact and checked against finite differences in the test suite.

The model file format (magic ``RCFD-NET``) stores every parameter array
as little-endian float64 plus the feature normalization statistics the
training pipeline attaches.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

INPUT_LEN = 133
N_CLASSES = 2
CONV_KERNEL = 3
POOL_KERNEL = 3
POOL_STRIDE = 2

MODEL_MAGIC = b"RCFD-NET"
MODEL_VERSION = 1

_LAYER_TAGS = {
    1: "conv1_w",
    2: "conv1_b",
    3: "conv2_w",
    4: "conv2_b",
    5: "dense_w",
    6: "dense_b",
    7: "logits_w",
    8: "logits_b",
    9: "norm_mean",
    10: "norm_std",
}
_PARAM_NAMES = tuple(_LAYER_TAGS[t] for t in range(1, 9))


class ModelFileError(Exception):
    """Base error for unreadable model files."""


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedModelError(ModelFileError):
    pass


class InvalidModelError(Exception):
    """Model is structurally fine but unusable for the requested task."""


class TrainingDivergedError(Exception):
    """Non-finite loss or gradients encountered during training."""


def _pool_out_len(n: int) -> int:
    return (n - POOL_KERNEL) // POOL_STRIDE + 1


@dataclass
class Network:
    """Parameter set plus architecture metadata.

    conv2_w is indexed (filter, tap, input channel); dense_w and logits_w
    are (out, in). norm_mean/norm_std are attached by the training
    pipeline and consumed at inference.
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray
    logits_w: np.ndarray
    logits_b: np.ndarray
    dropout_rate: float = 0.5
    rng_seed: int = 0
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def input_len(self) -> int:
        # reconstruct from dense fan-in: flat = pool2 * f2
        f2 = self.conv2_w.shape[0]
        pool2 = self.dense_w.shape[1] // f2
        conv2 = (pool2 - 1) * POOL_STRIDE + POOL_KERNEL
        pool1 = conv2 + CONV_KERNEL - 1
        conv1 = (pool1 - 1) * POOL_STRIDE + POOL_KERNEL
        return conv1 + CONV_KERNEL - 1

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def n_params(self) -> int:
        return sum(a.size for a in self.param_arrays().values())


@dataclass
class Gradients:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray
    logits_w: np.ndarray
    logits_b: np.ndarray

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}


@dataclass
class Activations:
    """Everything the backward pass needs, for a batch of inputs.

    Arrays carry a leading batch axis; ``forward`` on a single vector
    produces a batch of one. ``probs[i]`` sums to 1.
    """

    input: np.ndarray  # (B, L)
    conv1_pre: np.ndarray  # (B, L-2, F1)
    conv1_out: np.ndarray
    pool1_out: np.ndarray  # (B, P1, F1)
    pool1_argmax: np.ndarray  # indices into the conv1 axis
    conv2_pre: np.ndarray  # (B, C2, F2)
    conv2_out: np.ndarray
    pool2_out: np.ndarray  # (B, P2, F2)
    pool2_argmax: np.ndarray
    dense_pre: np.ndarray  # (B, H)
    dense_out: np.ndarray
    dropout_mask: np.ndarray | None  # (B, H) or None at inference
    dense_dropped: np.ndarray
    logits: np.ndarray  # (B, 2)
    probs: np.ndarray  # (B, 2)


def init_network(
    seed: int,
    conv1_filters: int = 100,
    conv2_filters: int = 100,
    dense_units: int = 1000,
    input_len: int = INPUT_LEN,
    dropout_rate: float = 0.5,
) -> Network:
    """Fresh network: uniform weights scaled by 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    conv1_len = input_len - CONV_KERNEL + 1
    pool1_len = _pool_out_len(conv1_len)
    conv2_len = pool1_len - CONV_KERNEL + 1
    pool2_len = _pool_out_len(conv2_len)
    flat = pool2_len * conv2_filters

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return Network(
        conv1_w=uniform((conv1_filters, CONV_KERNEL), CONV_KERNEL),
        conv1_b=np.zeros(conv1_filters),
        conv2_w=uniform((conv2_filters, CONV_KERNEL, conv1_filters), CONV_KERNEL * conv1_filters),
        conv2_b=np.zeros(conv2_filters),
        dense_w=uniform((dense_units, flat), flat),
        dense_b=np.zeros(dense_units),
        logits_w=uniform((N_CLASSES, dense_units), dense_units),
        logits_b=np.zeros(N_CLASSES),
        dropout_rate=dropout_rate,
        rng_seed=seed,
    )


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid 1-D convolution, stride 1: (B, N, Cin) x (F, 3, Cin) -> (B, N-2, F).

    Computed as three shifted matmuls so no window tensor is built.
    """
    out_len = x.shape[1] - CONV_KERNEL + 1
    out = np.empty((x.shape[0], out_len, w.shape[0]))
    out[:] = b
    for t in range(CONV_KERNEL):
        out += x[:, t : t + out_len, :] @ w[:, t, :].T
    return out


def _maxpool(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max pool kernel 3 stride 2 along axis 1; returns (out, argmax indices).

    First window position attaining the maximum wins ties, matching
    np.argmax. Works on strided views to avoid materializing windows.
    """
    out_len = _pool_out_len(x.shape[1])
    stop = POOL_STRIDE * (out_len - 1) + 1
    x0 = x[:, 0:stop:POOL_STRIDE, :]
    x1 = x[:, 1 : stop + 1 : POOL_STRIDE, :]
    x2 = x[:, 2 : stop + 2 : POOL_STRIDE, :]
    a01 = x1 > x0
    m01 = np.where(a01, x1, x0)
    take2 = x2 > m01
    out = np.where(take2, x2, m01)
    offset = np.where(take2, 2, a01.astype(np.int64))
    src = POOL_STRIDE * np.arange(out_len)[None, :, None] + offset
    return out, src


def _maxpool_backward(dout: np.ndarray, src: np.ndarray, in_len: int) -> np.ndarray:
    """Scatter pooled gradients back to their argmax positions.

    Within one window offset the target indices are collision-free, so
    the scatter decomposes into three strided accumulations.
    """
    b, out_len, c = dout.shape
    dx = np.zeros((b, in_len, c))
    offset = src - POOL_STRIDE * np.arange(out_len)[None, :, None]
    for a in range(POOL_KERNEL):
        contrib = dout * (offset == a)
        dx[:, a : a + POOL_STRIDE * out_len : POOL_STRIDE, :] += contrib
    return dx


def forward(
    net: Network,
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Activations:
    """Run the network on one feature vector or a batch of them.

    Dropout fires only when ``training`` is true, using inverted scaling
    so inference needs no correction; an rng must then be supplied.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    expected = net.input_len()
    if x.ndim != 2 or x.shape[1] != expected:
        raise ValueError(f"expected input of length {expected}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    if training and rng is None:
        raise ValueError("training-mode forward requires an rng for dropout")

    b = x.shape[0]
    conv1_pre = _conv1d(x[:, :, None], net.conv1_w[:, :, None], net.conv1_b)
    conv1_out = np.maximum(conv1_pre, 0.0)
    pool1_out, pool1_src = _maxpool(conv1_out)

    conv2_pre = _conv1d(pool1_out, net.conv2_w, net.conv2_b)
    conv2_out = np.maximum(conv2_pre, 0.0)
    pool2_out, pool2_src = _maxpool(conv2_out)

    flat = pool2_out.reshape(b, -1)
    dense_pre = flat @ net.dense_w.T + net.dense_b
    dense_out = np.maximum(dense_pre, 0.0)

    if training and net.dropout_rate > 0.0:
        keep = 1.0 - net.dropout_rate
        mask = (rng.random(dense_out.shape) < keep).astype(np.float64)
        dense_dropped = dense_out * mask / keep
    else:
        mask = None
        dense_dropped = dense_out

    logits = dense_dropped @ net.logits_w.T + net.logits_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)

    return Activations(
        input=x,
        conv1_pre=conv1_pre,
        conv1_out=conv1_out,
        pool1_out=pool1_out,
        pool1_argmax=pool1_src,
        conv2_pre=conv2_pre,
        conv2_out=conv2_out,
        pool2_out=pool2_out,
        pool2_argmax=pool2_src,
        dense_pre=dense_pre,
        dense_out=dense_out,
        dropout_mask=mask,
        dense_dropped=dense_dropped,
        logits=logits,
        probs=probs,
    )


def loss(probs: np.ndarray, label: int) -> float:
    """Cross-entropy of one prediction, probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return float(-np.log(max(probs[label], 1e-12)))


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch."""
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def backward(net: Network, acts: Activations, labels) -> Gradients:
    """Gradients of the mean cross-entropy over the batch in ``acts``.

    Max-pool routes gradient to the stored argmax positions; ReLU gates
    on stored pre-activation signs; the dropout mask is re-applied.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b = acts.input.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")

    dlogits = acts.probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b

    g_logits_w = dlogits.T @ acts.dense_dropped
    g_logits_b = dlogits.sum(axis=0)

    ddropped = dlogits @ net.logits_w
    if acts.dropout_mask is not None:
        ddense_out = ddropped * acts.dropout_mask / (1.0 - net.dropout_rate)
    else:
        ddense_out = ddropped
    ddense_pre = ddense_out * (acts.dense_pre > 0.0)

    g_dense_w = ddense_pre.T @ acts.pool2_out.reshape(b, -1)
    g_dense_b = ddense_pre.sum(axis=0)

    f2 = net.conv2_w.shape[0]
    p2 = acts.pool2_out.shape[1]
    dpool2 = (ddense_pre @ net.dense_w).reshape(b, p2, f2)
    dconv2_out = _maxpool_backward(dpool2, acts.pool2_argmax, acts.conv2_out.shape[1])
    dconv2_pre = dconv2_out * (acts.conv2_pre > 0.0)

    c2 = dconv2_pre.shape[1]
    f1 = acts.pool1_out.shape[2]
    dpre2_flat = dconv2_pre.reshape(-1, f2)  # (B*C2, F2)
    g_conv2_w = np.empty_like(net.conv2_w)
    g_conv2_b = dconv2_pre.sum(axis=(0, 1))
    dpool1 = np.zeros_like(acts.pool1_out)
    for t in range(CONV_KERNEL):
        in_slice = acts.pool1_out[:, t : t + c2, :]
        g_conv2_w[:, t, :] = dpre2_flat.T @ in_slice.reshape(-1, f1)
        dpool1[:, t : t + c2, :] += dconv2_pre @ net.conv2_w[:, t, :]
    dconv1_out = _maxpool_backward(dpool1, acts.pool1_argmax, acts.conv1_out.shape[1])
    dconv1_pre = dconv1_out * (acts.conv1_pre > 0.0)

    c1 = dconv1_pre.shape[1]
    f1_out = net.conv1_w.shape[0]
    dpre1_flat = dconv1_pre.reshape(-1, f1_out)
    g_conv1_w = np.empty_like(net.conv1_w)
    for t in range(CONV_KERNEL):
        g_conv1_w[:, t] = dpre1_flat.T @ acts.input[:, t : t + c1].reshape(-1)
    g_conv1_b = dconv1_pre.sum(axis=(0, 1))

    return Gradients(
        conv1_w=g_conv1_w,
        conv1_b=g_conv1_b,
        conv2_w=g_conv2_w,
        conv2_b=g_conv2_b,
        dense_w=g_dense_w,
        dense_b=g_dense_b,
        logits_w=g_logits_w,
        logits_b=g_logits_b,
    )


def sgd_step(net: Network, grads: Gradients, lr: float) -> Network:
    """Plain SGD update in place: p <- p - lr * g. No momentum, no decay."""
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for name, g in grads.param_arrays().items():
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"non-finite gradient in {name}")
        getattr(net, name)[...] -= lr * g
    return net


def predict(net: Network, x: np.ndarray) -> np.ndarray:
    """Class labels for a batch of feature vectors (inference mode)."""
    return np.argmax(forward(net, x).probs, axis=1)


def _write_array(fh, tag: int, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<BB", tag, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def save_model(net: Network, path) -> None:
    """Serialize a network; load_model(save path) is bit-exact."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<H", MODEL_VERSION))
        fh.write(struct.pack("<d", net.dropout_rate))
        fh.write(struct.pack("<q", net.rng_seed))
        has_norm = net.norm_mean is not None and net.norm_std is not None
        fh.write(struct.pack("<B", 1 if has_norm else 0))
        for tag, name in _LAYER_TAGS.items():
            if tag >= 9 and not has_norm:
                continue
            _write_array(fh, tag, getattr(net, name))


def _read_exact(fh, n: int, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedModelError(f"{path}: file ends {n - len(data)} bytes early")
    return data


def load_model(path) -> Network:
    """Read a model file, validating magic, version, and payload length."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, path))
        if version != MODEL_VERSION:
            raise VersionMismatchError(
                f"{path}: model format version {version}, this build reads version {MODEL_VERSION}"
            )
        (dropout_rate,) = struct.unpack("<d", _read_exact(fh, 8, path))
        (rng_seed,) = struct.unpack("<q", _read_exact(fh, 8, path))
        (has_norm,) = struct.unpack("<B", _read_exact(fh, 1, path))
        want_tags = list(range(1, 11 if has_norm else 9))
        arrays = {}
        for want in want_tags:
            tag, ndim = struct.unpack("<BB", _read_exact(fh, 2, path))
            if tag != want:
                raise ModelFileError(f"{path}: expected layer tag {want}, found {tag}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, path))
            count = int(np.prod(shape)) if shape else 1
            data = _read_exact(fh, 8 * count, path)
            arrays[_LAYER_TAGS[tag]] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ModelFileError(f"{path}: trailing bytes after final layer")
    return Network(
        dropout_rate=dropout_rate,
        rng_seed=rng_seed,
        norm_mean=arrays.get("norm_mean"),
        norm_std=arrays.get("norm_std"),
        **{name: arrays[name] for name in _PARAM_NAMES},
    )
