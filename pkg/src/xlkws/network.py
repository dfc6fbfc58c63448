"""The speech network f(X): 1-D CNN forward pass, summed cross-entropy
loss, and analytic gradients.

Architecture (default spec): conv1d(64, 9) -> relu -> maxpool(3) ->
conv1d(256, 10) -> relu -> maxpool(3) -> conv1d(1024, 11) -> relu ->
global maxpool -> dense(3000) -> relu -> dense(W) -> sigmoid.

Convolutions are valid (no padding), stride 1; pooling is non-overlapping
width 3 discarding remainder frames. Max-pool ties route gradient to the
earliest index. Layer sizes are configurable so miniature instances can be
gradient-checked exhaustively; the defaults are the model of record.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kwsio

LOSS_EPS = 1e-12


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int = 39
    conv_filters: tuple = (64, 256, 1024)
    conv_widths: tuple = (9, 10, 11)
    pool_width: int = 3
    hidden_units: int = 3000

    def __post_init__(self):
        if len(self.conv_filters) != len(self.conv_widths):
            raise NetworkError("conv_filters and conv_widths must align")
        if self.pool_width < 1:
            raise NetworkError("pool_width must be >= 1")

    @property
    def min_input_length(self) -> int:
        """Smallest T for which the final conv output has length >= 1."""
        need = 1
        widths = self.conv_widths
        for i in reversed(range(len(widths))):
            need = need + widths[i] - 1
            if i > 0:
                need = need * self.pool_width
        return need

    def intermediate_lengths(self, t: int):
        """Sequence of time lengths through the stack, ending at 1."""
        lengths = [t]
        n = len(self.conv_widths)
        for i, width in enumerate(self.conv_widths):
            t = t - width + 1
            lengths.append(t)
            if i < n - 1:
                t = t // self.pool_width
                lengths.append(t)
        lengths.append(1)
        return lengths


DEFAULT_SPEC = LayerSpec()
MIN_INPUT_FRAMES = DEFAULT_SPEC.min_input_length


@dataclass
class NetworkParams:
    """All weights and biases; conv weights are (width * C_in, C_out)."""

    spec: LayerSpec
    output_dim: int
    conv_w: list
    conv_b: list
    dense_w: list
    dense_b: list

    def arrays(self):
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out.extend([w, b])
        for w, b in zip(self.dense_w, self.dense_b):
            out.extend([w, b])
        return out

    def map(self, fn):
        return NetworkParams(
            spec=self.spec,
            output_dim=self.output_dim,
            conv_w=[fn(a) for a in self.conv_w],
            conv_b=[fn(a) for a in self.conv_b],
            dense_w=[fn(a) for a in self.dense_w],
            dense_b=[fn(a) for a in self.dense_b],
        )

    def astype(self, dtype):
        return self.map(lambda a: a.astype(dtype))

    @property
    def dtype(self):
        return self.conv_w[0].dtype


def init_params(output_dim, seed, spec: LayerSpec = None, dtype=np.float32):
    """He fan-in scaled Gaussian weights, zero biases; deterministic."""
    if output_dim < 1:
        raise NetworkError("output_dim must be >= 1")
    spec = spec or DEFAULT_SPEC
    rng = np.random.default_rng(seed)
    conv_w, conv_b = [], []
    c_in = spec.input_dim
    for width, filters in zip(spec.conv_widths, spec.conv_filters):
        fan_in = width * c_in
        conv_w.append(
            (rng.standard_normal((fan_in, filters)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        )
        conv_b.append(np.zeros(filters, dtype=dtype))
        c_in = filters
    dense_dims = [spec.conv_filters[-1], spec.hidden_units, output_dim]
    dense_w, dense_b = [], []
    for d_in, d_out in zip(dense_dims[:-1], dense_dims[1:]):
        dense_w.append(
            (rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)).astype(dtype)
        )
        dense_b.append(np.zeros(d_out, dtype=dtype))
    return NetworkParams(spec, output_dim, conv_w, conv_b, dense_w, dense_b)


@dataclass
class ForwardTrace:
    """Cached activations for backprop; valid only for its params object."""

    params_ref: object
    conv_windows: list = field(default_factory=list)
    conv_masks: list = field(default_factory=list)
    conv_in_lengths: list = field(default_factory=list)
    pool_idx: list = field(default_factory=list)
    pool_in_lengths: list = field(default_factory=list)
    global_idx: np.ndarray = None
    global_out: np.ndarray = None
    hidden: np.ndarray = None
    scores: np.ndarray = None


def _windows(x, width):
    """(B, L, C) -> (B, L - width + 1, width * C) sliding windows."""
    view = np.lib.stride_tricks.sliding_window_view(x, width, axis=1)
    # view: (B, L_out, C, width) -> (B, L_out, width, C) -> flatten
    b, l_out, c, _ = view.shape
    return np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(b, l_out, width * c)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward_batch(params: NetworkParams, x):
    """Forward pass over a batch (B, T, D); returns (scores, trace)."""
    spec = params.spec
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != spec.input_dim:
        raise NetworkError(f"expected (B, T, {spec.input_dim}) input, got {x.shape}")
    if x.shape[1] < spec.min_input_length:
        raise NetworkError(
            f"input length {x.shape[1]} is below the network minimum of "
            f"{spec.min_input_length} frames; apply fit_length first"
        )
    if not np.all(np.isfinite(x)):
        raise NetworkError("non-finite values in network input")
    x = x.astype(params.dtype, copy=False)

    trace = ForwardTrace(params_ref=params)
    h = x
    n_conv = len(spec.conv_widths)
    for i in range(n_conv):
        trace.conv_in_lengths.append(h.shape[1])
        win = _windows(h, spec.conv_widths[i])
        bb, ll, kk = win.shape
        z = (win.reshape(bb * ll, kk) @ params.conv_w[i]).reshape(
            bb, ll, -1
        ) + params.conv_b[i]
        mask = z > 0
        a = z * mask
        trace.conv_windows.append(win)
        trace.conv_masks.append(mask)
        if i < n_conv - 1:
            b, l, c = a.shape
            lp = l // spec.pool_width
            trace.pool_in_lengths.append(l)
            blocks = a[:, : lp * spec.pool_width].reshape(b, lp, spec.pool_width, c)
            trace.pool_idx.append(blocks.argmax(axis=2))
            h = blocks.max(axis=2)
        else:
            trace.global_idx = a.argmax(axis=1)
            g = a.max(axis=1)
            trace.global_out = g
    z1 = g @ params.dense_w[0] + params.dense_b[0]
    h1 = z1 * (z1 > 0)
    trace.hidden = h1
    logits = h1 @ params.dense_w[1] + params.dense_b[1]
    scores = _sigmoid(logits)
    trace.scores = scores
    return scores, trace


def forward(params: NetworkParams, frames):
    """Forward pass for a single (T, D) utterance."""
    scores, trace = forward_batch(params, np.asarray(frames)[None])
    return scores[0], trace


def loss(scores, target):
    """Summed cross-entropy of W sigmoid outputs against a [0,1]^W target."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if s.shape != y.shape:
        raise NetworkError(f"score/target shape mismatch: {s.shape} vs {y.shape}")
    s = np.clip(s, LOSS_EPS, 1.0 - LOSS_EPS)
    per_dim = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))
    return per_dim.sum(axis=-1)


def backward(params: NetworkParams, trace: ForwardTrace, targets):
    """Gradient of the batch-mean summed cross-entropy w.r.t. every parameter.

    targets is (B, W) (or (W,) for a single-utterance trace).
    """
    if trace.params_ref is not params:
        raise NetworkError("trace does not belong to these params")
    spec = params.spec
    scores = trace.scores
    y = np.asarray(targets, dtype=params.dtype)
    if y.ndim == 1:
        y = y[None]
    if y.shape != scores.shape:
        raise NetworkError(f"target shape {y.shape} does not match scores {scores.shape}")
    b = scores.shape[0]

    grads = params.map(np.zeros_like)

    # sigmoid + cross-entropy: d loss / d logits = f - y
    dlogits = (scores - y) / b
    h1 = trace.hidden
    grads.dense_w[1][...] = h1.T @ dlogits
    grads.dense_b[1][...] = dlogits.sum(axis=0)
    dh1 = dlogits @ params.dense_w[1].T
    dz1 = dh1 * (h1 > 0)
    g = trace.global_out
    grads.dense_w[0][...] = g.T @ dz1
    grads.dense_b[0][...] = dz1.sum(axis=0)
    dg = dz1 @ params.dense_w[0].T

    n_conv = len(spec.conv_widths)
    # global max pool: route to argmax frame per channel
    l_last = trace.conv_masks[-1].shape[1]
    da = np.zeros((b, l_last, spec.conv_filters[-1]), dtype=params.dtype)
    np.put_along_axis(da, trace.global_idx[:, None, :], dg[:, None, :], axis=1)

    for i in reversed(range(n_conv)):
        dz = da * trace.conv_masks[i]
        win = trace.conv_windows[i]
        bb, ll, kk = win.shape
        dz2d = dz.reshape(bb * ll, -1)
        grads.conv_w[i][...] = win.reshape(bb * ll, kk).T @ dz2d
        grads.conv_b[i][...] = dz2d.sum(axis=0)
        if i == 0:
            break
        dwin = (dz2d @ params.conv_w[i].T).reshape(bb, ll, kk)
        width = spec.conv_widths[i]
        l_in = trace.conv_in_lengths[i]
        c_in = spec.conv_filters[i - 1]
        l_out = dwin.shape[1]
        dpool = np.zeros((b, l_in, c_in), dtype=params.dtype)
        for k in range(width):
            dpool[:, k : k + l_out] += dwin[:, :, k * c_in : (k + 1) * c_in]
        # max pool: scatter into winning positions, remainder frames get zero
        pw = spec.pool_width
        l_pre = trace.pool_in_lengths[i - 1]
        lp = l_pre // pw
        blocks = np.zeros((b, lp, pw, c_in), dtype=params.dtype)
        idx = trace.pool_idx[i - 1]
        np.put_along_axis(blocks, idx[:, :, None, :], dpool[:, :, None, :], axis=2)
        da = np.zeros((b, l_pre, c_in), dtype=params.dtype)
        da[:, : lp * pw] = blocks.reshape(b, lp * pw, c_in)
    return grads


def save_params(path, params: NetworkParams, extra_metadata=None):
    metadata = {
        "input_dim": params.spec.input_dim,
        "conv_filters": list(params.spec.conv_filters),
        "conv_widths": list(params.spec.conv_widths),
        "pool_width": params.spec.pool_width,
        "hidden_units": params.spec.hidden_units,
        "output_dim": params.output_dim,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    kwsio.write_checkpoint(path, params.arrays(), params.output_dim, metadata)


def load_params(path, dtype=np.float32):
    arrays, output_dim, metadata = kwsio.read_checkpoint(path)
    if metadata and "conv_filters" in metadata:
        spec = LayerSpec(
            input_dim=metadata["input_dim"],
            conv_filters=tuple(metadata["conv_filters"]),
            conv_widths=tuple(metadata["conv_widths"]),
            pool_width=metadata["pool_width"],
            hidden_units=metadata["hidden_units"],
        )
    else:
        spec = _infer_spec(arrays)
    n_conv = len(spec.conv_filters)
    conv_w = [arrays[2 * i].astype(dtype) for i in range(n_conv)]
    conv_b = [arrays[2 * i + 1].astype(dtype) for i in range(n_conv)]
    dense_w = [arrays[2 * n_conv].astype(dtype), arrays[2 * n_conv + 2].astype(dtype)]
    dense_b = [arrays[2 * n_conv + 1].astype(dtype), arrays[2 * n_conv + 3].astype(dtype)]
    params = NetworkParams(spec, output_dim, conv_w, conv_b, dense_w, dense_b)
    return params, metadata


def _infer_spec(arrays, input_dim=39):
    weights = arrays[0::2]
    n_conv = len(weights) - 2
    filters, widths = [], []
    c_in = input_dim
    for i in range(n_conv):
        rows, cols = weights[i].shape
        widths.append(rows // c_in)
        filters.append(cols)
        c_in = cols
    return LayerSpec(
        input_dim=input_dim,
        conv_filters=tuple(filters),
        conv_widths=tuple(widths),
        hidden_units=weights[n_conv].shape[1],
    )
