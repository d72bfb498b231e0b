"""Optimization: decoupled-weight-decay Adam, warmup/decay schedule, and
the pre-training loop with per-component loss logging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .model import GroundedModel, collate
from .records import SampleRecord


class TrainingDivergenceError(RuntimeError):
    """Raised when a loss component goes non-finite; names the first one."""


@dataclass
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 3e-4
    weight_decay: float = 0.05
    warmup_steps: int = 10
    decay_rate: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind != "adamw":
            raise ValueError(f"unsupported optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in [0, 1]")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], config: OptimizerConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        cfg = self.config
        lr = cfg.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - cfg.beta1 ** self.t
        b2t = 1.0 - cfg.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            np.multiply(m, cfg.beta1, out=m)
            m += (1 - cfg.beta1) * g
            np.multiply(v, cfg.beta2, out=v)
            v += (1 - cfg.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + cfg.eps)
            p.data -= lr * update + lr * cfg.weight_decay * p.data


def schedule_lr(step: int, epoch: int, config: OptimizerConfig) -> float:
    """Linear warmup over warmup_steps, then per-epoch exponential decay."""
    warm = 1.0
    if config.warmup_steps > 0:
        warm = min(1.0, (step + 1) / config.warmup_steps)
    return config.lr * warm * config.decay_rate ** epoch


LOSS_KEYS = ("itc", "itm", "lm", "entity", "total")


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)

    def record(self, entry: dict) -> None:
        self.steps.append(entry)

    @property
    def totals(self) -> list[float]:
        return [s["total"] for s in self.steps]


def epoch_batches(
    num_samples: int, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffled index batches; the trailing partial batch is dropped because
    in-batch matching negatives need at least two samples."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if num_samples < batch_size:
        raise ValueError(
            f"dataset of {num_samples} samples cannot fill a batch of {batch_size}"
        )
    order = rng.permutation(num_samples)
    full = (num_samples // batch_size) * batch_size
    return [order[i : i + batch_size] for i in range(0, full, batch_size)]


def check_finite(losses: dict, step: int) -> None:
    for key in LOSS_KEYS:
        value = losses[key].data
        if not np.isfinite(value):
            raise TrainingDivergenceError(
                f"loss component '{key}' became non-finite at step {step}"
            )


def train_pretrain(
    model: GroundedModel,
    records: list[SampleRecord],
    optimizer_config: OptimizerConfig,
    batch_size: int,
    epochs: int,
    seed: int,
) -> TrainLog:
    """Deterministic pre-training loop; returns the per-step loss log."""
    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), optimizer_config)
    log = TrainLog()
    step = 0
    for epoch in range(epochs):
        for batch_idx in epoch_batches(len(records), batch_size, rng):
            batch = collate([records[i] for i in batch_idx], model.vocab, model.config.encoder)
            losses = model.forward_losses(batch, rng)
            check_finite(losses, step)
            lr = schedule_lr(step, epoch, optimizer_config)
            opt.zero_grad()
            losses["total"].backward()
            opt.step(lr)
            log.record(
                {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "itm_accuracy": losses["itm_accuracy"],
                    **{k: float(losses[k].data) for k in LOSS_KEYS},
                }
            )
            step += 1
    return log
