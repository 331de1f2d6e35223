"""
Dense double-precision layers with hand-written reverse-mode gradients.

Tensors are plain numpy float64 arrays in NCHW layout. Convolution runs as
im2col followed by one matrix product; pooling uses ceil-mode windows.
A ReLU follows every Conv and FullyConnected layer except the one producing
the logits.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.arch_dsl import ArchSpec, LayerKind, LayerSpec, infer_shapes, pool_output_size
from core.errors import ForwardCacheError, LabelRangeError, ShapeError

Tensor = np.ndarray

TRAIN = "train"
EVAL = "eval"


@dataclass
class NetworkParams:
    """Weights and biases per layer, ``None`` for layers without parameters."""

    spec: ArchSpec
    weights: List[Optional[Tensor]]
    biases: List[Optional[Tensor]]

    def tensors(self) -> List[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            if w is not None:
                out.extend((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.spec,
            [None if w is None else w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            self.spec,
            [None if w is None else np.zeros_like(w) for w in self.weights],
            [None if b is None else np.zeros_like(b) for b in self.biases],
        )

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors())


def image_shape_to_arch(shape: Sequence[int]) -> Tuple[int, int, int]:
    """(C, H, W) engine layout to the (H, W, C) layout of shape traces."""
    c, h, w = shape
    return h, w, c


def init_params(spec: ArchSpec, input_shape: Sequence[int], rng: np.random.Generator) -> NetworkParams:
    """
    Glorot-uniform weights and zero biases.

    ``input_shape`` is (height, width, channels) as in the shape trace.
    """
    spec.logit_layer_index()
    trace = infer_shapes(spec, input_shape)
    shape = tuple(input_shape)
    weights, biases = [], []
    for layer, out_shape in zip(spec.layers, trace):
        if layer.kind == LayerKind.CONV:
            in_c = shape[2]
            k = layer.kernel
            fan_in, fan_out = k * k * in_c, k * k * layer.out_channels
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(layer.out_channels, in_c, k, k)))
            biases.append(np.zeros(layer.out_channels))
        elif layer.kind == LayerKind.FULLY_CONNECTED:
            fan_in = int(np.prod(shape))
            limit = np.sqrt(6.0 / (fan_in + layer.out_units))
            weights.append(rng.uniform(-limit, limit, size=(layer.out_units, fan_in)))
            biases.append(np.zeros(layer.out_units))
        else:
            weights.append(None)
            biases.append(None)
        shape = out_shape
    return NetworkParams(spec, weights, biases)


def im2col(x: Tensor, kernel: int, stride: int, padding: int) -> Tuple[Tensor, int, int]:
    n, c, h, w = x.shape
    out_h = (h + 2 * padding - kernel) // stride + 1
    out_w = (w + 2 * padding - kernel) // stride + 1
    img = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)], mode="constant")
    col = np.empty((n, c, kernel, kernel, out_h, out_w))
    for y in range(kernel):
        y_max = y + stride * out_h
        for xx in range(kernel):
            x_max = xx + stride * out_w
            col[:, :, y, xx, :, :] = img[:, :, y:y_max:stride, xx:x_max:stride]
    # (N, out_h, out_w, C, k, k) rows match a (out_c, C, k, k) weight reshape
    col = col.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, -1)
    return col, out_h, out_w


def col2im(col: Tensor, x_shape: Sequence[int], kernel: int, stride: int, padding: int,
           out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x_shape
    col = col.reshape(n, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * padding + stride - 1, w + 2 * padding + stride - 1))
    for y in range(kernel):
        y_max = y + stride * out_h
        for xx in range(kernel):
            x_max = xx + stride * out_w
            img[:, :, y:y_max:stride, xx:x_max:stride] += col[:, :, y, xx, :, :]
    return img[:, :, padding:padding + h, padding:padding + w]


def conv2d_forward(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tuple[Tensor, Tensor]:
    if x.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv input {x.shape} does not match weight {weight.shape}")
    out_c, _, k, _ = weight.shape
    col, out_h, out_w = im2col(x, k, stride, padding)
    out = col @ weight.reshape(out_c, -1).T + bias
    out = out.reshape(x.shape[0], out_h, out_w, out_c).transpose(0, 3, 1, 2)
    return out, col


def conv2d_backward(dout: Tensor, x_shape: Sequence[int], col: Tensor, weight: Tensor,
                    stride: int, padding: int) -> Tuple[Tensor, Tensor, Tensor]:
    out_c, _, k, _ = weight.shape
    n, _, out_h, out_w = dout.shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(n * out_h * out_w, out_c)
    dweight = (dflat.T @ col).reshape(weight.shape)
    dbias = dflat.sum(axis=0)
    dcol = dflat @ weight.reshape(out_c, -1)
    dx = col2im(dcol, x_shape, k, stride, padding, out_h, out_w)
    return dx, dweight, dbias


def _pool_windows(x: Tensor, kernel: int, stride: int, fill: float) -> Tuple[Tensor, int, int]:
    n, c, h, w = x.shape
    out_h = pool_output_size(h, kernel, stride)
    out_w = pool_output_size(w, kernel, stride)
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"pooling {kernel}/{stride} maps {h}x{w} to an empty output")
    ph = max(h, (out_h - 1) * stride + kernel)
    pw = max(w, (out_w - 1) * stride + kernel)
    img = np.full((n, c, ph, pw), fill)
    img[:, :, :h, :w] = x
    windows = np.empty((n, c, kernel, kernel, out_h, out_w))
    for y in range(kernel):
        for xx in range(kernel):
            windows[:, :, y, xx] = img[:, :, y:y + stride * out_h:stride, xx:xx + stride * out_w:stride]
    return windows.reshape(n, c, kernel * kernel, out_h, out_w), out_h, out_w


def max_pool_forward(x: Tensor, kernel: int, stride: int) -> Tuple[Tensor, Tensor]:
    windows, _, _ = _pool_windows(x, kernel, stride, -np.inf)
    argmax = windows.argmax(axis=2)
    out = np.take_along_axis(windows, argmax[:, :, None], axis=2)[:, :, 0]
    return out, argmax


def max_pool_backward(dout: Tensor, x_shape: Sequence[int], argmax: Tensor, kernel: int, stride: int) -> Tensor:
    n, c, h, w = x_shape
    _, _, out_h, out_w = dout.shape
    ph = max(h, (out_h - 1) * stride + kernel)
    pw = max(w, (out_w - 1) * stride + kernel)
    dimg = np.zeros((n, c, ph, pw))
    for idx in range(kernel * kernel):
        y, xx = divmod(idx, kernel)
        dimg[:, :, y:y + stride * out_h:stride, xx:xx + stride * out_w:stride] += dout * (argmax == idx)
    return dimg[:, :, :h, :w]


def _pool_counts(x_shape: Sequence[int], kernel: int, stride: int) -> Tensor:
    _, _, h, w = x_shape
    ones = np.ones((1, 1, h, w))
    windows, _, _ = _pool_windows(ones, kernel, stride, 0.0)
    return windows.sum(axis=2)[0, 0]


def avg_pool_forward(x: Tensor, kernel: int, stride: int) -> Tuple[Tensor, Tensor]:
    """Averages over the in-bounds part of each window."""
    windows, _, _ = _pool_windows(x, kernel, stride, 0.0)
    counts = _pool_counts(x.shape, kernel, stride)
    return windows.sum(axis=2) / counts, counts


def avg_pool_backward(dout: Tensor, x_shape: Sequence[int], counts: Tensor, kernel: int, stride: int) -> Tensor:
    n, c, h, w = x_shape
    _, _, out_h, out_w = dout.shape
    ph = max(h, (out_h - 1) * stride + kernel)
    pw = max(w, (out_w - 1) * stride + kernel)
    dimg = np.zeros((n, c, ph, pw))
    share = dout / counts
    for y in range(kernel):
        for xx in range(kernel):
            dimg[:, :, y:y + stride * out_h:stride, xx:xx + stride * out_w:stride] += share
    return dimg[:, :, :h, :w]


def fc_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != weight.shape[1]:
        raise ShapeError(f"fully connected input of {flat.shape[1]} units, weight expects {weight.shape[1]}")
    return flat @ weight.T + bias


def fc_backward(dout: Tensor, x: Tensor, weight: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    flat = x.reshape(x.shape[0], -1)
    return (dout @ weight).reshape(x.shape), dout.T @ flat, dout.sum(axis=0)


def dropout_mask(shape: Sequence[int], drop_prob: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept units are scaled by 1 / (1 - r) at train time."""
    keep = rng.random(shape) >= drop_prob
    if drop_prob >= 1.0:
        return np.zeros(shape)
    return keep / (1.0 - drop_prob)


@dataclass
class ForwardCache:
    spec: ArchSpec
    params: NetworkParams
    records: List[Dict] = field(default_factory=list)
    output_shape: Tuple[int, ...] = ()


def forward(spec: ArchSpec, params: NetworkParams, batch: Tensor, mode: str = EVAL,
            rng: Optional[np.random.Generator] = None,
            dropout_masks: Optional[Dict[int, Tensor]] = None) -> Tuple[Tensor, Optional[ForwardCache]]:
    """
    Run the network on a rank-4 batch.

    Returns (logits of shape batch x classes, cache). The cache is only kept in
    train mode. ``dropout_masks`` maps layer index to a fixed scaled mask; masks
    not given are drawn from ``rng``.
    """
    if batch.ndim != 4:
        raise ShapeError(f"batch must be rank 4 (N, C, H, W), got shape {batch.shape}")
    if len(params.weights) != len(spec.layers):
        raise ShapeError("parameters do not belong to this architecture")
    logit_index = spec.logit_layer_index()
    training = mode == TRAIN
    cache = ForwardCache(spec, params) if training else None
    x = np.asarray(batch, dtype=np.float64)
    for index, layer in enumerate(spec.layers):
        record = {'x_shape': x.shape}
        if layer.kind == LayerKind.CONV:
            w, b = params.weights[index], params.biases[index]
            if x.ndim != 4:
                raise ShapeError(f"layer {index} ({layer.render()}) needs a spatial input")
            record['x'] = x
            x, record['col'] = conv2d_forward(x, w, b, layer.stride, layer.padding)
        elif layer.kind == LayerKind.FULLY_CONNECTED:
            record['x'] = x
            x = fc_forward(x, params.weights[index], params.biases[index])
        elif layer.kind == LayerKind.MAX_POOL:
            x, record['argmax'] = max_pool_forward(x, layer.kernel, layer.stride)
        elif layer.kind == LayerKind.AVG_POOL:
            x, record['counts'] = avg_pool_forward(x, layer.kernel, layer.stride)
        elif training:
            mask = None if dropout_masks is None else dropout_masks.get(index)
            if mask is None:
                if rng is None:
                    raise ValueError("train-mode dropout needs a random generator")
                mask = dropout_mask(x.shape, layer.drop_prob, rng)
            record['mask'] = mask
            x = x * mask
        if layer.is_parametric and index != logit_index:
            record['relu'] = x > 0
            x = x * record['relu']
        if training:
            cache.records.append(record)
    if training:
        cache.output_shape = x.shape
    return x.reshape(x.shape[0], -1), cache


def backward(cache: Optional[ForwardCache], loss_gradient: Tensor) -> NetworkParams:
    """Gradients of the loss with respect to every parameter tensor."""
    if cache is None or len(cache.records) != len(cache.spec.layers):
        raise ForwardCacheError("backward needs the cache of a train-mode forward pass")
    grads = cache.params.zeros_like()
    d = np.asarray(loss_gradient, dtype=np.float64).reshape(cache.output_shape)
    for index in range(len(cache.spec.layers) - 1, -1, -1):
        layer: LayerSpec = cache.spec.layers[index]
        record = cache.records[index]
        if 'relu' in record:
            d = d * record['relu']
        if layer.kind == LayerKind.CONV:
            d, grads.weights[index], grads.biases[index] = conv2d_backward(
                d, record['x_shape'], record['col'], cache.params.weights[index], layer.stride, layer.padding)
        elif layer.kind == LayerKind.FULLY_CONNECTED:
            d, grads.weights[index], grads.biases[index] = fc_backward(
                d.reshape(d.shape[0], -1), record['x'], cache.params.weights[index])
        elif layer.kind == LayerKind.MAX_POOL:
            d = max_pool_backward(d, record['x_shape'], record['argmax'], layer.kernel, layer.stride)
        elif layer.kind == LayerKind.AVG_POOL:
            d = avg_pool_backward(d, record['x_shape'], record['counts'], layer.kernel, layer.stride)
        else:
            d = d * record['mask']
    return grads


def predict_logits(spec: ArchSpec, params: NetworkParams, images: Tensor, batch_size: int = 256) -> Tensor:
    """Eval-mode logits for a whole set, computed in chunks."""
    if len(images) == 0:
        classes = params.weights[spec.logit_layer_index()].shape[0]
        return np.zeros((0, classes))
    chunks = []
    for start in range(0, len(images), batch_size):
        logits, _ = forward(spec, params, images[start:start + batch_size], EVAL)
        chunks.append(logits)
    return np.concatenate(chunks, axis=0)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tuple[float, Tensor]:
    """Mean cross-entropy over the batch and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise LabelRangeError(f"labels must lie in [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n
