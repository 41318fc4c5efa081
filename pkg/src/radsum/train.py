"""Instruction-tuning loop: response-masked cross-entropy under AdamW.

Examples are encoded part-by-part (scaffold, findings, scaffold, impression)
so the response region is identical at training and generation time, and
only that region (separator, impression, EOS) contributes to the loss.
Gradients accumulate over single-example forward passes until an effective
batch is reached, then one optimizer step runs.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import INPUT_HEADER, PROMPT_HEADER, RESPONSE_HEADER, DatasetSplit, InstructionPair
from .errors import RadsumError
from .model import Model, forward, save_adapters, save_model
from . import tensor as T
from .tensor import Rng, Tensor
from .tokenizer import BOS_ID, EOS_ID, Vocab, encode

ADAM_EPS = 1e-8


class EmptyMask(RadsumError):
    pass


class EmptyDataset(RadsumError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    effective_batch: int = 128
    micro_batch: int = 8
    max_steps: int = 100
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float | None = None
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise RadsumError(f"learning rate must be positive, got {self.learning_rate}")
        if self.effective_batch % self.micro_batch != 0:
            raise RadsumError(f"effective batch {self.effective_batch} not divisible "
                              f"by micro batch {self.micro_batch}")


@dataclass
class TrainReport:
    losses: list[float]
    checkpoint_path: str | None
    tokens_seen: int
    wall_time: float


@dataclass
class EncodedExample:
    prompt_ids: list[int]   # BOS + scaffold + (possibly truncated) findings + scaffold
    target_ids: list[int]   # separator + impression + EOS
    source_id: str

    @property
    def tokens(self) -> list[int]:
        return self.prompt_ids + self.target_ids


def encode_example(pair: InstructionPair, vocab: Vocab, max_seq_len: int) -> EncodedExample:
    """Tokenize one pair; overlong findings are cut from the left.

    The response region is never truncated: if scaffold plus response alone
    exceed the window the example is rejected.
    """
    pre = f"{PROMPT_HEADER}\n\n{pair.instruction}\n\n{INPUT_HEADER}\n\n"
    post = f"\n\n{RESPONSE_HEADER}"
    completion = f"\n\n{pair.output}"

    pre_ids = encode(pre, vocab)
    input_ids = encode(pair.input, vocab)
    post_ids = encode(post, vocab)
    target_ids = encode(completion, vocab) + [EOS_ID]

    fixed = 1 + len(pre_ids) + len(post_ids) + len(target_ids)
    if fixed > max_seq_len:
        raise RadsumError(f"{pair.source_id}: scaffold and response need {fixed} tokens, "
                          f"window is {max_seq_len}")
    room = max_seq_len - fixed
    if len(input_ids) > room:
        input_ids = input_ids[len(input_ids) - room:]
    prompt_ids = [BOS_ID] + pre_ids + input_ids + post_ids
    return EncodedExample(prompt_ids=prompt_ids, target_ids=target_ids, source_id=pair.source_id)


def masked_loss(logits: Tensor, targets, response_mask) -> Tensor:
    """Mean cross-entropy over positions where the mask is true."""
    targets = list(targets)
    mask = np.asarray(response_mask, dtype=np.float64)
    if logits.shape[0] != len(targets) or len(targets) != mask.shape[0]:
        raise RadsumError(f"lengths differ: {logits.shape[0]} logits, "
                          f"{len(targets)} targets, {mask.shape[0]} mask flags")
    n_masked = mask.sum()
    if n_masked == 0:
        raise EmptyMask("response mask selects no positions")
    picked = T.gather_rows(T.log_softmax(logits), targets)
    return (picked * Tensor(mask)).sum() * (-1.0 / n_masked)


def example_loss(model: Model, example: EncodedExample, train_mode: bool = True) -> Tensor:
    tokens = example.tokens
    inputs, targets = tokens[:-1], tokens[1:]
    boundary = len(example.prompt_ids) - 1
    mask = [t >= boundary for t in range(len(targets))]
    logits = forward(model, inputs, train_mode=train_mode)
    return masked_loss(logits, targets, mask)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected update; decoupled decay runs before the moments."""
    lr = config.learning_rate
    b1, b2 = config.betas
    state.step += 1
    t = state.step
    for name in sorted(params):
        p, g = params[name], grads[name]
        p.data *= 1.0 - lr * config.weight_decay
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


# ---------------------------------------------------------------------------
# Training loop


def train(model: Model, split: DatasetSplit, vocab: Vocab, tc: TrainConfig,
          out_dir: str | Path | None = None) -> TrainReport:
    """Run ``max_steps`` optimizer steps over the train split.

    Each step accumulates single-example gradients scaled by the effective
    batch size, so micro-batch size only changes bookkeeping, never results.
    Repeated draws of one example inside a step collapse into a single pass
    scaled by the repeat count whenever the forward pass is deterministic.
    Only parameters with requires_grad update: all of them on a plain model,
    adapters only once LoRA is attached.
    """
    if not split.train:
        raise EmptyDataset("train split is empty")

    examples = [encode_example(p, vocab, model.config.max_seq_len) for p in split.train]
    trainable = model.trainable_parameters()
    if not trainable:
        raise RadsumError("model has no trainable parameters")

    order_rng = Rng(tc.seed).split("order")
    queue: list[int] = []

    def next_index() -> int:
        if not queue:
            queue.extend(int(i) for i in order_rng.permutation(len(examples)))
        return queue.pop(0)

    state = AdamState()
    losses: list[float] = []
    tokens_seen = 0
    started = time.perf_counter()
    out_path = Path(out_dir) if out_dir is not None else None
    ckpt_path = None

    stochastic = model.lora is not None and model.lora_config.dropout > 0.0

    for step in range(tc.max_steps):
        for p in trainable.values():
            p.zero_grad()
        draws = [next_index() for _ in range(tc.effective_batch)]
        if stochastic:
            # Every pass draws fresh dropout masks, so repeats must rerun.
            grouped = [(i, 1) for i in draws]
        else:
            grouped = sorted(Counter(draws).items())
        step_loss = 0.0
        for index, copies in grouped:
            example = examples[index]
            loss = example_loss(model, example) * (copies / tc.effective_batch)
            loss.backward()
            step_loss += loss.item()
            tokens_seen += copies * (len(example.tokens) - 1)
        grads = {name: p.grad for name, p in trainable.items()}
        if tc.grad_clip is not None:
            clip_gradients(grads, tc.grad_clip)
        adamw_step(trainable, grads, state, tc)
        losses.append(step_loss)
        if out_path and tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
            ckpt_path = _write_checkpoint(model, out_path)

    if out_path:
        ckpt_path = _write_checkpoint(model, out_path)
        _write_loss_curve(losses, out_path / "loss_curve.tsv")

    return TrainReport(losses=losses, checkpoint_path=str(ckpt_path) if ckpt_path else None,
                       tokens_seen=tokens_seen, wall_time=time.perf_counter() - started)


def _write_checkpoint(model: Model, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if model.lora is not None:
        path = out_dir / "adapter.ckpt"
        save_adapters(model, path)
    else:
        path = out_dir / "model.ckpt"
        save_model(model, path)
    return path


def _write_loss_curve(losses: list[float], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step\tloss\n")
        for i, value in enumerate(losses):
            fh.write(f"{i}\t{value:.6f}\n")
