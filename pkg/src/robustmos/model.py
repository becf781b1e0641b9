"""Mixture-of-softmax classifier with exact hand-derived gradients.

A small two-layer perceptron encodes the input; on top of it sit
``num_experts`` expert heads (each a Linear -> ReLU -> LayerNorm transform
followed by a softmax classifier with bias) and one router head of the same
transform shape whose bias-free logits produce the mixture weights. The
aggregate prediction is the router-weighted convex combination of the expert
distributions. Expert and router transforms share structure but never
parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diversity
from .control import Decision, aggregate
from .nn import (
    PROB_FLOOR,
    LayerNormParams,
    LinearLayer,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    linear_init,
    softmax,
    softmax_vjp,
)

__all__ = [
    "MosConfig",
    "EncoderParams",
    "HeadParams",
    "ModelParams",
    "MixtureOutput",
    "init_model",
    "named_parameters",
    "encode",
    "aggregate_distribution",
    "mixture_forward",
    "mixture_backward",
    "predict",
    "decide_batch",
    "save_checkpoint",
    "load_checkpoint",
]

MAX_EXPERTS = 32
CHECKPOINT_FORMAT = "robustmos-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MosConfig:
    """Shape of the mixture model."""

    num_experts: int
    num_labels: int
    input_dim: int
    hidden_dim: int
    encoded_dim: int

    def __post_init__(self):
        if not 1 <= self.num_experts <= MAX_EXPERTS:
            raise ValueError(f"num_experts must be in [1, {MAX_EXPERTS}]")
        if self.num_labels < 2:
            raise ValueError("num_labels must be at least 2")
        for name in ("input_dim", "hidden_dim", "encoded_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class EncoderParams:
    """Two linear layers with a ReLU between them."""

    first: LinearLayer
    second: LinearLayer


@dataclass
class HeadParams:
    """Linear -> ReLU -> LayerNorm transform plus an output projection.

    Expert heads project to label logits with a bias; the router head
    projects to expert logits without one.
    """

    transform: LinearLayer
    norm: LayerNormParams
    output: LinearLayer


@dataclass
class ModelParams:
    config: MosConfig
    encoder: EncoderParams
    experts: list[HeadParams]
    router: HeadParams


@dataclass
class MixtureOutput:
    """Batched forward results plus the intermediates the backward pass needs."""

    expert_probs: np.ndarray   # (batch, num_experts, num_labels)
    router_probs: np.ndarray   # (batch, num_experts)
    aggregate: np.ndarray      # (batch, num_labels)
    cache: dict | None = field(default=None, repr=False)


def init_model(config: MosConfig, seed: int) -> ModelParams:
    """Fresh parameters: uniform fan-in linears, identity LayerNorm."""
    rng = np.random.default_rng(seed)
    d = config.encoded_dim

    def head(out_dim: int, out_bias: bool) -> HeadParams:
        return HeadParams(
            transform=linear_init(d, d, rng),
            norm=LayerNormParams(gain=np.ones(d), bias=np.zeros(d)),
            output=linear_init(d, out_dim, rng, bias=out_bias),
        )

    encoder = EncoderParams(
        first=linear_init(config.input_dim, config.hidden_dim, rng),
        second=linear_init(config.hidden_dim, d, rng),
    )
    experts = [head(config.num_labels, out_bias=True) for _ in range(config.num_experts)]
    router = head(config.num_experts, out_bias=False)
    return ModelParams(config=config, encoder=encoder, experts=experts, router=router)


def named_parameters(model: ModelParams) -> dict[str, np.ndarray]:
    """Live views of every trainable array, keyed by a stable dotted name."""
    params: dict[str, np.ndarray] = {
        "encoder.first.weight": model.encoder.first.weight,
        "encoder.first.bias": model.encoder.first.bias,
        "encoder.second.weight": model.encoder.second.weight,
        "encoder.second.bias": model.encoder.second.bias,
    }

    def add_head(prefix: str, head: HeadParams):
        params[f"{prefix}.transform.weight"] = head.transform.weight
        params[f"{prefix}.transform.bias"] = head.transform.bias
        params[f"{prefix}.norm.gain"] = head.norm.gain
        params[f"{prefix}.norm.bias"] = head.norm.bias
        params[f"{prefix}.output.weight"] = head.output.weight
        if head.output.bias is not None:
            params[f"{prefix}.output.bias"] = head.output.bias

    for k, expert in enumerate(model.experts):
        add_head(f"expert_{k}", expert)
    add_head("router", model.router)
    return params


def clone_model(model: ModelParams) -> ModelParams:
    """Deep copy of the parameters (config is shared, it is frozen)."""

    def copy_head(h: HeadParams) -> HeadParams:
        return HeadParams(
            transform=LinearLayer(h.transform.weight.copy(), h.transform.bias.copy()),
            norm=LayerNormParams(h.norm.gain.copy(), h.norm.bias.copy(), h.norm.epsilon),
            output=LinearLayer(
                h.output.weight.copy(),
                None if h.output.bias is None else h.output.bias.copy(),
            ),
        )

    return ModelParams(
        config=model.config,
        encoder=EncoderParams(
            first=LinearLayer(model.encoder.first.weight.copy(), model.encoder.first.bias.copy()),
            second=LinearLayer(model.encoder.second.weight.copy(), model.encoder.second.bias.copy()),
        ),
        experts=[copy_head(h) for h in model.experts],
        router=copy_head(model.router),
    )


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ValueError(f"expected a vector or a batch of vectors, got shape {arr.shape}")


def encode(model: ModelParams, x) -> np.ndarray:
    """Encoder output for one input vector or a batch of them."""
    batch, single = _as_batch(x)
    if batch.shape[1] != model.config.input_dim:
        raise ValueError(f"input dim {batch.shape[1]} != configured {model.config.input_dim}")
    hidden = np.maximum(linear_forward(model.encoder.first, batch), 0.0)
    encoded = linear_forward(model.encoder.second, hidden)
    return encoded[0] if single else encoded


def aggregate_distribution(expert_probs, router_probs) -> np.ndarray:
    """Router-weighted convex combination of expert distributions.

    Accepts one instance ((num_experts, num_labels) with (num_experts,))
    or a batch with a leading batch axis on both.
    """
    p = np.asarray(expert_probs, dtype=np.float64)
    pi = np.asarray(router_probs, dtype=np.float64)
    if p.ndim == 2:
        return pi @ p
    return np.einsum("mk,mky->my", pi, p)


def _head_forward(head: HeadParams, encoded: np.ndarray) -> tuple[np.ndarray, dict]:
    pre = linear_forward(head.transform, encoded)
    act = np.maximum(pre, 0.0)
    normed, ln_cache = layernorm_forward(head.norm, act)
    logits = linear_forward(head.output, normed)
    probs = softmax(logits)
    return probs, {"pre": pre, "act": act, "ln": ln_cache, "normed": normed}


def mixture_forward(model: ModelParams, x) -> MixtureOutput:
    """Full forward pass; caches every intermediate for the backward pass."""
    batch, _ = _as_batch(x)
    cfg = model.config
    if batch.shape[1] != cfg.input_dim:
        raise ValueError(f"input dim {batch.shape[1]} != configured {cfg.input_dim}")

    hidden_pre = linear_forward(model.encoder.first, batch)
    hidden = np.maximum(hidden_pre, 0.0)
    encoded = linear_forward(model.encoder.second, hidden)

    expert_probs = np.empty((batch.shape[0], cfg.num_experts, cfg.num_labels))
    expert_caches = []
    for k, head in enumerate(model.experts):
        probs, cache = _head_forward(head, encoded)
        expert_probs[:, k, :] = probs
        expert_caches.append(cache)
    router_probs, router_cache = _head_forward(model.router, encoded)

    return MixtureOutput(
        expert_probs=expert_probs,
        router_probs=router_probs,
        aggregate=aggregate_distribution(expert_probs, router_probs),
        cache={
            "x": batch,
            "hidden_pre": hidden_pre,
            "hidden": hidden,
            "encoded": encoded,
            "experts": expert_caches,
            "router": router_cache,
        },
    )


def _head_backward(
    head: HeadParams,
    cache: dict,
    encoded: np.ndarray,
    upstream_logits: np.ndarray,
    grads: dict[str, np.ndarray],
    prefix: str,
) -> np.ndarray:
    """Backward through output projection, LayerNorm, ReLU, transform.

    Returns the gradient wrt the encoder output and fills ``grads``.
    """
    g_out_w, g_out_b, d_normed = linear_backward(head.output, cache["normed"], upstream_logits)
    grads[f"{prefix}.output.weight"] = g_out_w
    if g_out_b is not None:
        grads[f"{prefix}.output.bias"] = g_out_b
    g_gain, g_bias, d_act = layernorm_backward(head.norm, cache["ln"], d_normed)
    grads[f"{prefix}.norm.gain"] = g_gain
    grads[f"{prefix}.norm.bias"] = g_bias
    d_pre = np.where(cache["pre"] > 0.0, d_act, 0.0)
    g_t_w, g_t_b, d_encoded = linear_backward(head.transform, encoded, d_pre)
    grads[f"{prefix}.transform.weight"] = g_t_w
    grads[f"{prefix}.transform.bias"] = g_t_b
    return d_encoded


def mixture_backward(
    model: ModelParams,
    out: MixtureOutput,
    labels: np.ndarray,
    penalty_weight: float = 0.0,
    drop_count: int = 0,
    classifier_weight: float = 1.0,
) -> tuple[float, float | None, dict[str, np.ndarray]]:
    """Exact gradient of classifier_weight * L_cls + penalty_weight * L_div.

    L_cls is the mean negative log aggregate probability of the true labels;
    L_div is the router-diversity penalty of this batch (absent for batches
    of fewer than two instances). Returns (L_cls, L_div, grads) where grads
    mirrors ``named_parameters``.
    """
    if out.cache is None:
        raise ValueError("mixture_backward needs a MixtureOutput with its forward cache")
    cache = out.cache
    labels = np.asarray(labels)
    batch_size = cache["x"].shape[0]
    if labels.shape != (batch_size,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch_size}")

    rows = np.arange(batch_size)
    true_prob = out.aggregate[rows, labels]
    clipped = np.maximum(true_prob, PROB_FLOOR)
    loss_cls = float(-np.log(clipped).mean())

    comp = diversity.penalty(out.router_probs, drop_count)
    loss_div = None if comp is None else comp.value

    # d loss_cls / d aggregate: nonzero only at the true label of each row
    g_agg = np.zeros_like(out.aggregate)
    g_agg[rows, labels] = np.where(
        true_prob >= PROB_FLOOR, -classifier_weight / (batch_size * clipped), 0.0
    )

    d_expert_probs = g_agg[:, None, :] * out.router_probs[:, :, None]
    d_router_probs = np.einsum("my,mky->mk", g_agg, out.expert_probs)
    if comp is not None and penalty_weight != 0.0:
        d_router_probs = d_router_probs + penalty_weight * diversity.penalty_gradient(comp)

    grads: dict[str, np.ndarray] = {}
    encoded = cache["encoded"]
    d_encoded = np.zeros_like(encoded)
    for k, head in enumerate(model.experts):
        d_logits = softmax_vjp(out.expert_probs[:, k, :], d_expert_probs[:, k, :])
        d_encoded += _head_backward(head, cache["experts"][k], encoded, d_logits, grads, f"expert_{k}")
    d_router_logits = softmax_vjp(out.router_probs, d_router_probs)
    d_encoded += _head_backward(model.router, cache["router"], encoded, d_router_logits, grads, "router")

    g_w2, g_b2, d_hidden = linear_backward(model.encoder.second, cache["hidden"], d_encoded)
    grads["encoder.second.weight"] = g_w2
    grads["encoder.second.bias"] = g_b2
    d_hidden_pre = np.where(cache["hidden_pre"] > 0.0, d_hidden, 0.0)
    g_w1, g_b1, _ = linear_backward(model.encoder.first, cache["x"], d_hidden_pre)
    grads["encoder.first.weight"] = g_w1
    grads["encoder.first.bias"] = g_b1
    return loss_cls, loss_div, grads


def predict(model: ModelParams, x, rule: str = "estimated") -> Decision:
    """Classify one input under the given aggregation rule."""
    out = mixture_forward(model, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return aggregate(out.expert_probs[0], out.router_probs[0], rule)


def decide_batch(model: ModelParams, x, rule: str = "estimated") -> np.ndarray:
    """Vectorized labels for a batch under the given rule (lowest-index ties)."""
    out = mixture_forward(model, x)
    if rule == "estimated":
        scores = out.aggregate
    elif rule == "uniform":
        scores = out.expert_probs.mean(axis=1)
    elif rule == "argmin":
        scores = out.expert_probs.min(axis=1)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return scores.argmax(axis=1)


def _format_array(arr: np.ndarray) -> dict:
    # 17 significant decimal digits: lossless for 64-bit floats
    values = " ".join(format(float(v), ".17g") for v in arr.ravel())
    return {"shape": list(arr.shape), "values": values}


def _parse_array(spec: dict) -> np.ndarray:
    text = spec["values"]
    flat = np.array([float(v) for v in text.split()] if text else [], dtype=np.float64)
    return flat.reshape(spec["shape"])


def save_checkpoint(model: ModelParams, path, seed: int) -> None:
    """Write config, seed and every parameter tensor as versioned JSON.

    Floats are serialized with 17 significant digits, so a load returns
    values identical to the saved ones.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "seed": int(seed),
        "params": {name: _format_array(arr) for name, arr in named_parameters(model).items()},
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, int]:
    """Read a checkpoint back into a model; returns (model, seed)."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = MosConfig(**payload["config"])
    model = init_model(config, seed=0)
    params = named_parameters(model)
    saved = payload["params"]
    if set(saved) != set(params):
        raise ValueError("checkpoint parameter names do not match the configured model")
    for name, arr in params.items():
        loaded = _parse_array(saved[name])
        if loaded.shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        arr[...] = loaded
    return model, int(payload["seed"])
