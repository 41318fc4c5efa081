"""Decoder-only transformer (Llama-family layout) with optional low-rank adapters.

The stack is pre-norm RMSNorm, rotary positions on queries/keys, SwiGLU feed
forward, untied output head. Projection weights are stored in math
orientation (d_out, d_in), so a projection of h is h @ W.T and the adapter
update merges as W + scaling * (B @ A) with A of shape (r, d_in) and B of
shape (d_out, r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RadsumError
from . import tensor as T
from .tensor import Rng, Tensor

ROPE_BASE = 10000.0
INIT_STD = 0.02
# Additive mask for future positions. Finite so softmax sees no NaNs, yet
# large enough that exp() underflows to exactly 0.0, making causality exact.
MASK_VALUE = -1e30

PROJECTION_NAMES = ("q_proj", "k_proj", "v_proj", "o_proj")


class BadConfig(RadsumError):
    pass


class SequenceTooLong(RadsumError):
    pass


class PromptTooLong(RadsumError):
    pass


class UnknownTarget(RadsumError):
    pass


class NoAdapters(RadsumError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_heads: int
    n_layers: int
    d_ff: int
    vocab_size: int
    max_seq_len: int

    def __post_init__(self):
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff, self.vocab_size) < 1:
            raise BadConfig(f"all dimensions must be positive: {self}")
        if self.d_model % self.n_heads != 0:
            raise BadConfig(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise BadConfig(f"head dim {self.d_model // self.n_heads} must be even for rotary positions")
        if self.max_seq_len < 2:
            raise BadConfig(f"max_seq_len must be >= 2, got {self.max_seq_len}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class LoraConfig:
    r: int = 8
    alpha: float = 16.0
    dropout: float = 0.05
    targets: tuple[str, ...] = ("q_proj", "v_proj")

    def __post_init__(self):
        if self.r < 1:
            raise BadConfig(f"rank must be >= 1, got {self.r}")
        if not 0.0 <= self.dropout < 1.0:
            raise BadConfig(f"dropout must be in [0, 1), got {self.dropout}")
        for name in self.targets:
            if name not in PROJECTION_NAMES:
                raise UnknownTarget(f"unknown projection {name!r}; expected one of {PROJECTION_NAMES}")

    @property
    def scaling(self) -> float:
        return self.alpha / self.r


@dataclass
class LoraAdapter:
    a: Tensor  # (r, d_in)
    b: Tensor  # (d_out, r), zero at initialization
    scaling: float


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor]
    lora: dict[tuple[int, str], LoraAdapter] | None = None
    lora_config: LoraConfig | None = None
    _dropout_rng: Rng | None = field(default=None, repr=False)

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.params)
        if self.lora:
            for (layer, target), adapter in self.lora.items():
                out[f"layers.{layer}.{target}.lora_a"] = adapter.a
                out[f"layers.{layer}.{target}.lora_b"] = adapter.b
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters().items() if v.requires_grad}


def param_count(config: ModelConfig) -> int:
    """Scalar parameters in a base model: embeddings, blocks, head, gains."""
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    per_layer = 4 * d * d + 3 * d * f + 2 * d
    return 2 * v * d + config.n_layers * per_layer + d


def _parameter_specs(config: ModelConfig):
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    yield "tok_embedding", (v, d), ("normal", 0.0, INIT_STD)
    for i in range(config.n_layers):
        yield f"layers.{i}.attn_norm", (d,), ("ones",)
        for name in PROJECTION_NAMES:
            yield f"layers.{i}.{name}", (d, d), ("normal", 0.0, INIT_STD)
        yield f"layers.{i}.ffn_norm", (d,), ("ones",)
        yield f"layers.{i}.w_gate", (f, d), ("normal", 0.0, INIT_STD)
        yield f"layers.{i}.w_up", (f, d), ("normal", 0.0, INIT_STD)
        yield f"layers.{i}.w_down", (d, f), ("normal", 0.0, INIT_STD)
    yield "final_norm", (d,), ("ones",)
    yield "lm_head", (v, d), ("normal", 0.0, INIT_STD)


def init_model(config: ModelConfig, rng: Rng) -> Model:
    """Fresh model; draws weights from ``rng`` in a fixed parameter order."""
    params: dict[str, Tensor] = {}
    for name, shape, dist in _parameter_specs(config):
        if dist[0] == "ones":
            t = Tensor(np.ones(shape), requires_grad=True)
        else:
            t = T.seeded_init(shape, dist, rng, requires_grad=True)
        params[name] = t
    return Model(config=config, params=params)


# ---------------------------------------------------------------------------
# Forward pass


def _rope_tables(seq_len: int, d_head: int) -> tuple[np.ndarray, np.ndarray]:
    half = d_head // 2
    inv_freq = ROPE_BASE ** (-np.arange(half) * 2.0 / d_head)
    angles = np.arange(seq_len)[:, None] * inv_freq[None, :]  # (T, half)
    return np.cos(angles), np.sin(angles)


def _apply_rope(x: Tensor, cos: Tensor, sin: Tensor) -> Tensor:
    """Rotate (heads, T, d_head) vectors: pair dimension i with i + d_head/2."""
    half = x.shape[-1] // 2
    x1 = T.slice_axis(x, 2, 0, half)
    x2 = T.slice_axis(x, 2, half, x.shape[-1])
    return T.concat([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=2)


def _dropout(x: Tensor, p: float, rng: Rng) -> Tensor:
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * Tensor(keep)


def _project(model: Model, layer: int, name: str, h: Tensor, train_mode: bool) -> Tensor:
    w = model.params[f"layers.{layer}.{name}"]
    y = h @ T.transpose(w)
    adapter = model.lora.get((layer, name)) if model.lora else None
    if adapter is not None:
        x_in = h
        p = model.lora_config.dropout
        if train_mode and p > 0.0:
            x_in = _dropout(x_in, p, model._dropout_rng)
        y = y + ((x_in @ T.transpose(adapter.a)) @ T.transpose(adapter.b)) * adapter.scaling
    return y


def forward(model: Model, tokens, train_mode: bool = False) -> Tensor:
    """Logits of shape (len(tokens), vocab); position t sees only tokens <= t."""
    cfg = model.config
    ids = list(tokens)
    n = len(ids)
    if n == 0 or n > cfg.max_seq_len:
        raise SequenceTooLong(f"sequence length {n} outside [1, {cfg.max_seq_len}]")
    if any(t < 0 or t >= cfg.vocab_size for t in ids):
        raise RadsumError(f"token id out of range for vocab {cfg.vocab_size}")

    cos_np, sin_np = _rope_tables(n, cfg.d_head)
    cos, sin = Tensor(cos_np), Tensor(sin_np)
    causal = Tensor(np.triu(np.full((n, n), MASK_VALUE), k=1))
    scale = 1.0 / math.sqrt(cfg.d_head)

    x = T.embedding(model.params["tok_embedding"], ids)  # (n, d)
    for i in range(cfg.n_layers):
        h = T.rms_norm(x) * model.params[f"layers.{i}.attn_norm"]
        q = _split_heads(_project(model, i, "q_proj", h, train_mode), cfg)
        k = _split_heads(_project(model, i, "k_proj", h, train_mode), cfg)
        v = _split_heads(_project(model, i, "v_proj", h, train_mode), cfg)
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)
        scores = (q @ T.transpose(k, (0, 2, 1))) * scale + causal  # (H, n, n)
        attn = T.softmax(scores) @ v  # (H, n, d_head)
        merged = T.reshape(T.transpose(attn, (1, 0, 2)), (n, cfg.d_model))
        x = x + _project(model, i, "o_proj", merged, train_mode)

        h = T.rms_norm(x) * model.params[f"layers.{i}.ffn_norm"]
        gate = T.silu(h @ T.transpose(model.params[f"layers.{i}.w_gate"]))
        up = h @ T.transpose(model.params[f"layers.{i}.w_up"])
        x = x + (gate * up) @ T.transpose(model.params[f"layers.{i}.w_down"])

    h = T.rms_norm(x) * model.params["final_norm"]
    return h @ T.transpose(model.params["lm_head"])


def _split_heads(x: Tensor, cfg: ModelConfig) -> Tensor:
    n = x.shape[0]
    return T.transpose(T.reshape(x, (n, cfg.n_heads, cfg.d_head)), (1, 0, 2))


# ---------------------------------------------------------------------------
# LoRA


def attach_lora(model: Model, lora_config: LoraConfig, rng: Rng) -> Model:
    """Add zero-effect adapters to the targets and freeze base weights.

    A is drawn normal(0, 1/r) and B starts at zero, so logits are unchanged
    until training moves B. Returns the same model object.
    """
    if model.lora is not None:
        raise RadsumError("adapters already attached")
    d = model.config.d_model
    init_rng = rng.split("lora_a")
    adapters: dict[tuple[int, str], LoraAdapter] = {}
    for i in range(model.config.n_layers):
        for target in lora_config.targets:
            a = T.seeded_init((lora_config.r, d), ("normal", 0.0, 1.0 / lora_config.r),
                              init_rng, requires_grad=True)
            b = Tensor(np.zeros((d, lora_config.r)), requires_grad=True)
            adapters[(i, target)] = LoraAdapter(a=a, b=b, scaling=lora_config.scaling)
    for p in model.params.values():
        p.requires_grad = False
    model.lora = adapters
    model.lora_config = lora_config
    model._dropout_rng = rng.split("lora_dropout")
    return model


def merge_lora(model: Model) -> Model:
    """Fold adapters into the base weights: W' = W + scaling * (B @ A)."""
    if model.lora is None:
        raise NoAdapters("no adapters to merge")
    for (layer, target), adapter in model.lora.items():
        w = model.params[f"layers.{layer}.{target}"]
        w.data = w.data + adapter.scaling * (adapter.b.data @ adapter.a.data)
    model.lora = None
    model.lora_config = None
    model._dropout_rng = None
    for p in model.params.values():
        p.requires_grad = True
    return model


def lora_parameter_count(model: Model) -> int:
    if model.lora is None:
        return 0
    return sum(a.a.data.size + a.b.data.size for a in model.lora.values())


# ---------------------------------------------------------------------------
# Generation


def generate(model: Model, prompt_tokens, max_new: int, temperature: float = 0.0,
             stop_id: int | None = None, rng: Rng | None = None) -> list[int]:
    """Decode up to ``max_new`` tokens after the prompt.

    temperature 0 is greedy argmax with ties going to the lowest id; the
    returned list excludes both the prompt and the stop token. Decoding also
    halts when the context window fills.
    """
    prompt = list(prompt_tokens)
    cfg = model.config
    if len(prompt) > cfg.max_seq_len - 1:
        raise PromptTooLong(f"prompt length {len(prompt)} exceeds {cfg.max_seq_len - 1}")
    if temperature > 0.0 and rng is None:
        raise ValueError("sampling (temperature > 0) needs an rng")

    ids = list(prompt)
    out: list[int] = []
    with T.no_grad():
        while len(out) < max_new and len(ids) < cfg.max_seq_len:
            logits = forward(model, ids, train_mode=False).data[-1]
            if temperature > 0.0:
                z = (logits - logits.max()) / temperature
                probs = np.exp(z)
                probs /= probs.sum()
                next_id = _sample(probs, rng)
            else:
                next_id = int(np.argmax(logits))
            if stop_id is not None and next_id == stop_id:
                break
            out.append(next_id)
            ids.append(next_id)
    return out


def _sample(probs: np.ndarray, rng: Rng) -> int:
    u = rng.random(())
    return int(np.searchsorted(np.cumsum(probs), u))


# ---------------------------------------------------------------------------
# Persistence

_CONFIG_KEY = "meta.config"
_LORA_META_KEY = "meta.lora"
_TARGET_CODES = {name: i for i, name in enumerate(PROJECTION_NAMES)}


def save_model(model: Model, path) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    cfg = model.config
    tensors[_CONFIG_KEY] = np.array(
        [cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.d_ff, cfg.vocab_size, cfg.max_seq_len],
        dtype=np.float64)
    T.save_checkpoint(path, tensors)


def load_model(path) -> Model:
    tensors = T.load_checkpoint(path)
    if _CONFIG_KEY not in tensors:
        raise RadsumError(f"{path}: missing model config record")
    dims = [int(v) for v in tensors.pop(_CONFIG_KEY)]
    config = ModelConfig(*dims)
    params: dict[str, Tensor] = {}
    for name, shape, _ in _parameter_specs(config):
        if name not in tensors:
            raise RadsumError(f"{path}: missing parameter {name}")
        data = tensors[name]
        if data.shape != shape:
            raise RadsumError(f"{path}: {name} has shape {data.shape}, expected {shape}")
        params[name] = Tensor(data.copy(), requires_grad=True)
    return Model(config=config, params=params)


def save_adapters(model: Model, path) -> None:
    if model.lora is None:
        raise NoAdapters("no adapters to save")
    cfg = model.lora_config
    tensors: dict[str, np.ndarray] = {
        _LORA_META_KEY: np.array([cfg.r, cfg.alpha, cfg.dropout], dtype=np.float64),
        "meta.lora_targets": np.array(sorted(_TARGET_CODES[t] for t in cfg.targets), dtype=np.float64),
    }
    for (layer, target), adapter in model.lora.items():
        tensors[f"layers.{layer}.{target}.lora_a"] = adapter.a.data
        tensors[f"layers.{layer}.{target}.lora_b"] = adapter.b.data
    T.save_checkpoint(path, tensors)


def load_adapters(model: Model, path, rng: Rng) -> Model:
    """Attach adapters to a base model and overwrite A/B from a checkpoint."""
    tensors = T.load_checkpoint(path)
    if _LORA_META_KEY not in tensors:
        raise RadsumError(f"{path}: missing adapter metadata")
    r, alpha, dropout = tensors[_LORA_META_KEY]
    targets = tuple(PROJECTION_NAMES[int(c)] for c in tensors["meta.lora_targets"])
    config = LoraConfig(r=int(r), alpha=float(alpha), dropout=float(dropout), targets=targets)
    attach_lora(model, config, rng)
    for (layer, target), adapter in model.lora.items():
        for attr, suffix in ((adapter.a, "lora_a"), (adapter.b, "lora_b")):
            key = f"layers.{layer}.{target}.{suffix}"
            if key not in tensors:
                raise RadsumError(f"{path}: missing adapter tensor {key}")
            if tensors[key].shape != attr.data.shape:
                raise RadsumError(f"{path}: {key} has shape {tensors[key].shape}, "
                                  f"expected {attr.data.shape}")
            attr.data = tensors[key].copy()
    return model
