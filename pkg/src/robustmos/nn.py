"""Dense neural-network primitives with hand-written backward passes.

Everything runs on 64-bit numpy arrays. Each forward has an exact analytic
backward, and ``grad_check`` verifies any scalar loss against central finite
differences. No autodiff: the model graph in :mod:`robustmos.model` is
differentiated by hand from these pieces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinearLayer",
    "LayerNormParams",
    "AdamState",
    "linear_init",
    "linear_forward",
    "linear_backward",
    "relu_forward_backward",
    "layernorm_forward",
    "layernorm_backward",
    "layernorm_forward_backward",
    "softmax",
    "cross_entropy_with_grad",
    "adam_init",
    "adam_step",
    "grad_check",
]

PROB_FLOOR = 1e-12  # clamp probabilities before log


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass
class LinearLayer:
    """Affine map y = weight @ x + bias, weight is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray | None

    def __post_init__(self):
        self.weight = _as_f64(self.weight)
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-d, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = _as_f64(self.bias)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError(
                    f"bias shape {self.bias.shape} does not match out dim {self.weight.shape[0]}"
                )

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class LayerNormParams:
    """Elementwise gain/bias for layer normalization over the last axis."""

    gain: np.ndarray
    bias: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        self.gain = _as_f64(self.gain)
        self.bias = _as_f64(self.bias)
        if self.gain.shape != self.bias.shape or self.gain.ndim != 1:
            raise ValueError("gain and bias must be 1-d and the same length")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def linear_init(in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> LinearLayer:
    """Symmetric uniform fan-in initialization: U(-1/sqrt(in), 1/sqrt(in))."""
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim) if bias else None
    return LinearLayer(weight=w, bias=b)


def linear_forward(layer: LinearLayer, x: np.ndarray) -> np.ndarray:
    """Apply the affine map to a vector (in,) or a batch (n, in)."""
    x = _as_f64(x)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input dim {x.shape[-1]} != layer in dim {layer.in_dim}")
    y = x @ layer.weight.T
    if layer.bias is not None:
        y = y + layer.bias
    return y


def linear_backward(
    layer: LinearLayer, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Exact chain rule through the affine map.

    Returns (grad_weight, grad_bias, grad_x); grad_bias is None for
    bias-free layers. Accepts a single vector or a batch; batch gradients
    are summed into the parameter gradients.
    """
    x = _as_f64(x)
    upstream = _as_f64(upstream)
    if x.shape[-1] != layer.in_dim or upstream.shape[-1] != layer.out_dim:
        raise ValueError(
            f"shape mismatch: x {x.shape}, upstream {upstream.shape}, "
            f"layer ({layer.out_dim}, {layer.in_dim})"
        )
    x2 = np.atleast_2d(x)
    u2 = np.atleast_2d(upstream)
    if x2.shape[0] != u2.shape[0]:
        raise ValueError("x and upstream batch sizes differ")
    grad_w = u2.T @ x2
    grad_b = u2.sum(axis=0) if layer.bias is not None else None
    grad_x = u2 @ layer.weight
    if x.ndim == 1:
        grad_x = grad_x[0]
    return grad_w, grad_b, grad_x


def relu_forward_backward(x: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """y = max(0, x); grad_x = upstream where x > 0 else 0."""
    x = _as_f64(x)
    upstream = _as_f64(upstream)
    y = np.maximum(x, 0.0)
    grad_x = np.where(x > 0.0, upstream, 0.0)
    return y, grad_x


def layernorm_forward(p: LayerNormParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Returns (y, cache) where the cache feeds ``layernorm_backward``.
    """
    x = _as_f64(x)
    if x.shape[-1] != p.gain.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != normalized dim {p.gain.shape[0]}")
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    scale = np.sqrt(var + p.epsilon)
    xhat = (x - mean) / scale
    y = p.gain * xhat + p.bias
    return y, {"xhat": xhat, "scale": scale}


def layernorm_backward(
    p: LayerNormParams, cache: dict, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradient through mean and variance.

    Returns (grad_gain, grad_bias, grad_x); batch gradients are summed into
    the parameter gradients.
    """
    upstream = _as_f64(upstream)
    xhat, scale = cache["xhat"], cache["scale"]
    u2 = np.atleast_2d(upstream)
    xhat2 = np.atleast_2d(xhat)
    grad_gain = (u2 * xhat2).sum(axis=0)
    grad_bias = u2.sum(axis=0)
    dxhat = upstream * p.gain
    grad_x = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) / scale
    return grad_gain, grad_bias, grad_x


def layernorm_forward_backward(
    p: LayerNormParams, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Fused forward + backward; returns (y, (grad_gain, grad_bias, grad_x))."""
    y, cache = layernorm_forward(p, x)
    return y, layernorm_backward(p, cache, upstream)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max subtraction before exp)."""
    z = _as_f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_vjp(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient wrt logits given probs = softmax(logits) and dL/dprobs."""
    inner = (upstream * probs).sum(axis=-1, keepdims=True)
    return probs * (upstream - inner)


def cross_entropy_with_grad(p: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Loss -log p[y] with p clamped below at 1e-12, plus the logit gradient.

    The gradient (p - onehot(y)) is exact when p came from a plain softmax;
    the mixture path in :mod:`robustmos.model` uses its own backward instead.
    """
    p = _as_f64(p)
    if not 0 <= y < p.shape[-1]:
        raise ValueError(f"label {y} out of range for {p.shape[-1]} classes")
    loss = -np.log(max(float(p[y]), PROB_FLOOR))
    grad = p.copy()
    grad[y] -= 1.0
    return float(loss), grad


@dataclass
class AdamState:
    """Adaptive-moment optimizer state for a named set of parameter arrays."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], learning_rate: float = 1e-3) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected adaptive-moment update; mutates params and state in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def grad_check(
    value_and_grad,
    params: dict[str, np.ndarray],
    num_probes: int = 50,
    step: float = 1e-5,
    seed: int = 0,
    selection_signature=None,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    ``value_and_grad(params) -> (value, grads)`` where grads mirrors params.
    Random coordinates are probed (seeded). ``selection_signature``, when
    given, maps params to a hashable tag of any piecewise selection (e.g. a
    dropout mask); probes where the tag changes at params +/- step are
    discarded so the comparison stays away from selection boundaries.

    Relative error per coordinate is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-6); the floor absorbs finite-difference noise where both
    values vanish.
    """
    rng = np.random.default_rng(seed)
    _, grads = value_and_grad(params)
    coords = [(name, idx) for name, p in params.items() for idx in range(p.size)]
    if not coords:
        return 0.0
    base_sig = selection_signature(params) if selection_signature is not None else None

    worst = 0.0
    probed = 0
    attempts = 0
    max_attempts = num_probes * 20
    while probed < num_probes and attempts < max_attempts:
        attempts += 1
        name, idx = coords[rng.integers(len(coords))]
        p = params[name]
        flat = p.reshape(-1)
        original = flat[idx]

        flat[idx] = original + step
        if selection_signature is not None and selection_signature(params) != base_sig:
            flat[idx] = original
            continue
        f_plus, _ = value_and_grad(params)

        flat[idx] = original - step
        if selection_signature is not None and selection_signature(params) != base_sig:
            flat[idx] = original
            continue
        f_minus, _ = value_and_grad(params)
        flat[idx] = original

        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = grads[name].reshape(-1)[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, rel)
        probed += 1
    return worst
