"""Training loop: per-group learning rates, early stopping, checkpoints.

Two parameter groups exist: "encoder" (the embedding backend) and "main"
(everything else), mirroring the separate fine-tuning rate for a
pretrained encoder. Plain SGD is the default; Adam is available behind
``optimizer="adam"`` for the synthetic learnability runs.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import make_batches
from .mathcore import Tensor, no_grad, save_params


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; training state is not trustworthy."""


@dataclass
class TrainConfig:
    max_epochs: int = 40
    patience: int = 3
    batch_size: int = 30
    lr_main: float = 1e-3
    lr_encoder: float = 1e-5
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" | "adam"
    freeze: tuple[str, ...] = ()  # parameter-name prefixes to keep fixed
    checkpoint_dir: str | None = None
    keep_checkpoints: int | None = None  # None keeps every epoch

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_main <= 0 or self.lr_encoder <= 0:
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.keep_checkpoints is not None and self.keep_checkpoints < 1:
            raise ValueError("keep_checkpoints must be >= 1 or None")

    def sent_preset(self) -> "TrainConfig":
        """Batch of one, as used when fine-tuning the sentence reader."""
        from dataclasses import replace

        return replace(self, batch_size=1)


@dataclass
class EpochStats:
    epoch: int  # 1-based
    dev_accuracy: float
    train_loss: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_dev_accuracy(self) -> float:
        return self.epochs[self.best_epoch - 1].dev_accuracy if self.best_epoch else 0.0

    def to_json(self) -> dict:
        return {
            "epochs": [
                {
                    "epoch": e.epoch,
                    "dev_accuracy": e.dev_accuracy,
                    "train_loss": e.train_loss,
                    "seconds": e.seconds,
                }
                for e in self.epochs
            ],
            "best_epoch": self.best_epoch,
            "best_dev_accuracy": self.best_dev_accuracy,
            "stopped_early": self.stopped_early,
        }

    def to_csv(self) -> str:
        lines = ["epoch,dev_accuracy,train_loss,seconds"]
        lines += [
            f"{e.epoch},{e.dev_accuracy:.6f},{e.train_loss:.6f},{e.seconds:.3f}"
            for e in self.epochs
        ]
        return "\n".join(lines) + "\n"


def expand_frozen(names: Iterable[str], prefixes: Iterable[str]) -> set[str]:
    prefixes = tuple(prefixes)
    return {n for n in names if any(n == p or n.startswith(p) for p in prefixes)}


def sgd_step(
    params: dict[str, Tensor], lr_by_name: dict[str, float], frozen: set[str] = frozenset()
) -> None:
    """p <- p - lr * grad per parameter; frozen names untouched."""
    for name, p in params.items():
        if name in frozen or p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ValueError(f"{name}: grad shape {p.grad.shape} != {p.data.shape}")
        p.data = p.data - lr_by_name[name] * p.grad


class AdamState:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.steps = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(
        self, params: dict[str, Tensor], lr_by_name: dict[str, float], frozen: set[str] = frozenset()
    ) -> None:
        self.steps += 1
        b1c = 1.0 - self.beta1**self.steps
        b2c = 1.0 - self.beta2**self.steps
        for name, p in params.items():
            if name in frozen or p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr_by_name[name] * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def evaluate(model, samples: Sequence) -> float:
    """Fraction of samples whose prediction equals the gold answer."""
    if not len(samples):
        raise ValueError("cannot evaluate on an empty set")
    with no_grad():
        correct = sum(1 for s in samples if model.predict(s) == s.gold)
    return correct / len(samples)


def train(
    model,
    train_samples: Sequence,
    dev_samples: Sequence,
    cfg: TrainConfig,
    checkpoint_meta: dict | None = None,
) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Fit the model, early-stopping on dev accuracy.

    Stops after ``patience`` consecutive epochs without strict dev
    improvement. The best epoch's parameters (first epoch on ties) are
    restored into the model and returned as plain arrays. With a
    checkpoint_dir every epoch's parameters are also written to disk.
    """
    params = model.parameters()
    groups = model.param_groups()
    lr_by_name = {}
    for name in params:
        lr_by_name[name] = cfg.lr_encoder if name in groups.get("encoder", ()) else cfg.lr_main
    frozen = expand_frozen(params, cfg.freeze)
    frozen |= set(getattr(model, "frozen_param_names", tuple)())

    adam = AdamState() if cfg.optimizer == "adam" else None
    rng = np.random.default_rng(cfg.seed)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    report = TrainReport()
    best_state: dict[str, np.ndarray] = {n: t.data.copy() for n, t in params.items()}
    best_acc = -1.0
    stale_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        shuffle_seed = int(rng.integers(0, 2**31 - 1))
        total_loss = 0.0
        n_seen = 0
        for batch_i, batch in enumerate(make_batches(train_samples, cfg.batch_size, shuffle_seed)):
            for t in params.values():
                t.zero_grad()
            for sample in batch:
                loss = model.loss(sample)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(
                        f"epoch {epoch} batch {batch_i}: loss {value} on sample "
                        f"{getattr(sample, 'uid', '?')}"
                    )
                total_loss += value
                n_seen += 1
                loss.backward()
            inv = 1.0 / len(batch)
            for t in params.values():
                if t.grad is not None:
                    t.grad = t.grad * inv
            if adam is not None:
                adam.step(params, lr_by_name, frozen)
            else:
                sgd_step(params, lr_by_name, frozen)

        dev_acc = evaluate(model, dev_samples)
        report.epochs.append(
            EpochStats(epoch, dev_acc, total_loss / max(1, n_seen), time.perf_counter() - started)
        )
        if ckpt_dir:
            save_params(
                ckpt_dir / f"epoch{epoch:03d}.json",
                params,
                meta={**(checkpoint_meta or {}), "epoch": epoch},
            )

        if dev_acc > best_acc:
            best_acc = dev_acc
            report.best_epoch = epoch
            best_state = {n: t.data.copy() for n, t in params.items()}
            stale_epochs = 0
        else:
            stale_epochs += 1
        if ckpt_dir and cfg.keep_checkpoints is not None:
            # prune old per-epoch files, always keeping the best epoch's
            keep = {f"epoch{report.best_epoch:03d}.json"}
            saved = sorted(p.name for p in ckpt_dir.glob("epoch*.json"))
            for name in saved[: -cfg.keep_checkpoints]:
                if name not in keep:
                    (ckpt_dir / name).unlink()
        if stale_epochs >= cfg.patience:
            report.stopped_early = True
            break

    for name, t in params.items():
        t.data = best_state[name].copy()
        t.zero_grad()
    return best_state, report
