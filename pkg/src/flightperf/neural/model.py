"""Stacked LSTM sequence classifier in numpy (float64), with exact BPTT gradients.

Layout: `num_layers` LSTM layers -> dropout -> dense (ReLU) -> softmax head,
applied independently at every timestep. Gate order inside the stacked
weight matrices is (input, forget, cell, output).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..records import N_CLASSES

Params = dict[str, np.ndarray]
PROB_FLOOR = 1e-12


class ShapeMismatch(ValueError):
    pass


class AllMasked(ValueError):
    pass


@dataclass(frozen=True)
class ModelDims:
    input_size: int = 36
    hidden_size: int = 128
    num_layers: int = 4
    dense_size: int = 128
    n_classes: int = N_CLASSES

    def to_json(self) -> dict:
        return asdict(self)


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    H = dims.hidden_size
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(dims.num_layers):
        fan_in = dims.input_size if layer == 0 else H
        shapes[f"W{layer}"] = (4 * H, fan_in)
        shapes[f"U{layer}"] = (4 * H, H)
        shapes[f"b{layer}"] = (4 * H,)
    shapes["Wd"] = (dims.dense_size, H)
    shapes["bd"] = (dims.dense_size,)
    shapes["Wo"] = (dims.n_classes, dims.dense_size)
    shapes["bo"] = (dims.n_classes,)
    return shapes


def init_params(dims: ModelDims, rng: np.random.Generator) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor; biases use the matching weight's fan-in."""
    shapes = param_shapes(dims)
    params: Params = {}
    for name, shape in shapes.items():
        if len(shape) == 2:
            fan_in = shape[1]
        elif name == "bo":
            fan_in = dims.dense_size
        else:
            fan_in = dims.hidden_size
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def dims_of(params: Params) -> ModelDims:
    n_layers = sum(1 for k in params if k.startswith("U"))
    H = params["U0"].shape[1]
    return ModelDims(params["W0"].shape[1], H, n_layers, params["Wd"].shape[0], params["Wo"].shape[0])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    layer_inputs: list[np.ndarray]
    gates: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    cells: list[np.ndarray]
    tanh_cells: list[np.ndarray]
    hiddens: list[np.ndarray]
    masks: list[np.ndarray | None]     # dropout mask applied to each layer's output (pre-scaled)
    dense_pre: np.ndarray
    dense_out: np.ndarray
    probs: np.ndarray


def _dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(params: Params, inputs: np.ndarray, train: bool = False, rng: np.random.Generator | None = None,
            dropout: float = 0.2, dropout_all_layers: bool = False) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities of shape (B, T, n_classes).

    Inverted dropout (scaled by 1/(1-rate)) is applied to the top LSTM output
    in training mode only, or after every LSTM layer with `dropout_all_layers`.
    """
    dims = dims_of(params)
    if inputs.ndim != 3 or inputs.shape[2] != dims.input_size:
        raise ShapeMismatch(f"expected (B, T, {dims.input_size}) inputs, got {inputs.shape}")
    if train and dropout > 0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    B, T, _ = inputs.shape
    H = dims.hidden_size
    use_dropout = train and dropout > 0

    layer_inputs, gates_all, cells_all, tanh_all, hidden_all, masks = [], [], [], [], [], []
    A = inputs
    for layer in range(dims.num_layers):
        W, U, b = params[f"W{layer}"], params[f"U{layer}"], params[f"b{layer}"]
        Zx = A @ W.T + b
        i_g = np.empty((B, T, H))
        f_g = np.empty((B, T, H))
        g_g = np.empty((B, T, H))
        o_g = np.empty((B, T, H))
        C = np.empty((B, T, H))
        TC = np.empty((B, T, H))
        Hs = np.empty((B, T, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            z = Zx[:, t] + h @ U.T
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            i_g[:, t], f_g[:, t], g_g[:, t], o_g[:, t] = i, f, g, o
            C[:, t], TC[:, t], Hs[:, t] = c, tc, h
        layer_inputs.append(A)
        gates_all.append((i_g, f_g, g_g, o_g))
        cells_all.append(C)
        tanh_all.append(TC)
        hidden_all.append(Hs)
        top = layer == dims.num_layers - 1
        if use_dropout and (top or dropout_all_layers):
            m = _dropout_mask(Hs.shape, dropout, rng)
            masks.append(m)
            A = Hs * m
        else:
            masks.append(None)
            A = Hs

    dense_pre = A @ params["Wd"].T + params["bd"]
    dense_out = np.maximum(dense_pre, 0.0)
    logits = dense_out @ params["Wo"].T + params["bo"]
    probs = softmax(logits)
    cache = ForwardCache(layer_inputs, gates_all, cells_all, tanh_all, hidden_all, masks, dense_pre, dense_out, probs)
    return probs, cache


def _loss_coefficients(labels: np.ndarray, mask: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = labels.argmax(axis=-1)
    coef = mask * np.asarray(weights)[y]
    return y, coef


def masked_weighted_ce(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean of -log p[true class] over unmasked timesteps."""
    if probs.shape != labels.shape or probs.shape[:2] != mask.shape:
        raise ShapeMismatch(f"probs {probs.shape}, labels {labels.shape}, mask {mask.shape}")
    if not np.any(mask):
        raise AllMasked("every timestep is masked")
    y, coef = _loss_coefficients(labels, mask, weights)
    p_true = np.take_along_axis(probs, y[..., None], axis=-1)[..., 0]
    nll = -np.log(np.clip(p_true, PROB_FLOOR, 1.0))
    return float((coef * nll).sum() / coef.sum())


def class_weights(labels: np.ndarray, mask: np.ndarray | None = None, n_classes: int = N_CLASSES) -> np.ndarray:
    """w_c = N / (K * n_c) over unmasked timesteps; absent classes get the largest present weight."""
    y = labels.reshape(-1, labels.shape[-1]).argmax(axis=-1)
    if mask is not None:
        y = y[mask.reshape(-1) > 0]
    counts = np.bincount(y, minlength=n_classes).astype(float)
    total = counts.sum()
    if total == 0:
        return np.ones(n_classes)
    w = np.zeros(n_classes)
    present = counts > 0
    w[present] = total / (n_classes * counts[present])
    w[~present] = w[present].max()
    return w


def backward(params: Params, cache: ForwardCache, labels: np.ndarray, mask: np.ndarray,
             weights: np.ndarray, return_input_grad: bool = False):
    """Gradients of `masked_weighted_ce` with respect to every parameter.

    With `return_input_grad` the gradient with respect to the inputs is
    returned as well, as a (grads, d_inputs) pair.
    """
    dims = dims_of(params)
    H = dims.hidden_size
    grads = zeros_like_params(params)
    y, coef = _loss_coefficients(labels, mask, weights)
    denom = coef.sum()
    if denom == 0:
        zero_in = np.zeros_like(cache.layer_inputs[0])
        return (grads, zero_in) if return_input_grad else grads
    dlogits = (cache.probs - labels) * (coef / denom)[..., None]
    # exact as long as no true-class probability falls below PROB_FLOOR

    q = cache.dense_out
    grads["Wo"] = np.einsum("btk,btd->kd", dlogits, q)
    grads["bo"] = dlogits.sum(axis=(0, 1))
    dq = dlogits @ params["Wo"]
    dq_pre = dq * (cache.dense_pre > 0)
    top_in = cache.hiddens[-1] if cache.masks[-1] is None else cache.hiddens[-1] * cache.masks[-1]
    grads["Wd"] = np.einsum("btk,bth->kh", dq_pre, top_in)
    grads["bd"] = dq_pre.sum(axis=(0, 1))
    dA = dq_pre @ params["Wd"]

    for layer in range(dims.num_layers - 1, -1, -1):
        if cache.masks[layer] is not None:
            dA = dA * cache.masks[layer]
        U, W = params[f"U{layer}"], params[f"W{layer}"]
        i_g, f_g, g_g, o_g = cache.gates[layer]
        C, TC, Hs = cache.cells[layer], cache.tanh_cells[layer], cache.hiddens[layer]
        B, T, _ = Hs.shape
        dZ = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dA[:, t] + dh_next
            o, tc = o_g[:, t], TC[:, t]
            i, f, g = i_g[:, t], f_g[:, t], g_g[:, t]
            c_prev = C[:, t - 1] if t > 0 else 0.0
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dz = dZ[:, t]
            dz[:, :H] = di * i * (1.0 - i)
            dz[:, H:2 * H] = df * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dg * (1.0 - g * g)
            dz[:, 3 * H:] = do * o * (1.0 - o)
            dh_next = dz @ U
        h_prev = np.zeros_like(Hs)
        h_prev[:, 1:] = Hs[:, :-1]
        dZ2 = dZ.reshape(-1, 4 * H)
        grads[f"U{layer}"] = dZ2.T @ h_prev.reshape(-1, H)
        A_in = cache.layer_inputs[layer]
        grads[f"W{layer}"] = dZ2.T @ A_in.reshape(-1, A_in.shape[-1])
        grads[f"b{layer}"] = dZ2.sum(axis=0)
        dA = dZ @ W
    return (grads, dA) if return_input_grad else grads
