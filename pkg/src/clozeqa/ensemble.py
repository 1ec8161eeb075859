"""MLP weighting layer fusing two readers' per-candidate scores.

Each reader's raw score vector is softmax-normalized (their scales are
not comparable: one emits attention mass sums, the other max-pooled MLP
logits), then one shared one-hidden-layer MLP maps every candidate's
normalized pair to a final scalar. Sharing the map across candidates
keeps the layer permutation-equivariant and independent of the number of
candidates, which varies per sample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aoa import ScoreVector
from .mathcore import MlpParams, Tensor, mlp_forward, no_grad, softmax
from .mathcore.tensor import concat_vec, log, pick, scale, stack_vec, take_vec
from .trainer import TrainConfig, TrainReport, train


class EnsembleError(ValueError):
    """Raised for misaligned reader outputs or malformed score files."""


@dataclass
class EnsembleSample:
    """Aligned per-candidate scores from two readers plus the gold index."""

    uid: str
    candidates: list[str]
    gold: int
    scores_a: np.ndarray
    scores_b: np.ndarray

    def __post_init__(self):
        self.scores_a = np.asarray(self.scores_a, dtype=np.float64)
        self.scores_b = np.asarray(self.scores_b, dtype=np.float64)
        n = len(self.candidates)
        if self.scores_a.shape != (n,) or self.scores_b.shape != (n,):
            raise EnsembleError(f"{self.uid}: score vectors must have length {n}")
        if not 0 <= self.gold < n:
            raise EnsembleError(f"{self.uid}: gold index {self.gold} out of range")
        if not (np.isfinite(self.scores_a).all() and np.isfinite(self.scores_b).all()):
            raise EnsembleError(f"{self.uid}: scores must be finite")


def weighting_forward(sample: EnsembleSample, params: MlpParams) -> ScoreVector:
    """Final per-candidate scores from the shared two-input MLP."""
    if params.input_dim != 2 or params.output_dim != 1:
        raise EnsembleError("weighting MLP must map 2 inputs to 1 output")
    norm_a = softmax(Tensor(sample.scores_a))
    norm_b = softmax(Tensor(sample.scores_b))
    outputs = []
    for i in range(len(sample.candidates)):
        pair = concat_vec(take_vec(norm_a, [i]), take_vec(norm_b, [i]))
        outputs.append(pick(mlp_forward(pair, params), 0))
    return ScoreVector(list(sample.candidates), stack_vec(outputs))


class WeightingModel:
    """Trainer-protocol wrapper around the weighting MLP."""

    def __init__(self, hidden: int = 8, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.mlp = MlpParams.init(2, hidden, 1, rng)

    def score_sample(self, sample: EnsembleSample) -> ScoreVector:
        return weighting_forward(sample, self.mlp)

    def loss(self, sample: EnsembleSample) -> Tensor:
        scores = self.score_sample(sample)
        return scale(log(pick(softmax(scores.scores), sample.gold)), -1.0)

    def predict(self, sample: EnsembleSample) -> int:
        return self.score_sample(sample).argmax()

    def parameters(self) -> dict[str, Tensor]:
        return self.mlp.tensors("weighting")

    def param_groups(self) -> dict[str, set[str]]:
        return {"encoder": set(), "main": set(self.parameters())}


def default_weighting_config(seed: int = 0) -> TrainConfig:
    """Adam converges reliably on this tiny head; SGD needs hand-tuned rates.

    Small batches and a generous patience matter more than elsewhere: on a
    small score file an epoch is only a handful of optimizer steps, and
    the head needs a few dozen steps to leave its init plateau.
    """
    return TrainConfig(
        max_epochs=60, patience=10, batch_size=8, lr_main=0.01, lr_encoder=0.01,
        optimizer="adam", seed=seed,
    )


def train_weighting(
    train_samples: Sequence[EnsembleSample],
    dev_samples: Sequence[EnsembleSample],
    cfg: TrainConfig | None = None,
    hidden: int = 8,
) -> tuple[WeightingModel, TrainReport]:
    """Fit the weighting MLP; returns the best-dev-epoch model."""
    if not len(train_samples) or not len(dev_samples):
        raise EnsembleError("train and dev sets must be non-empty")
    cfg = cfg or default_weighting_config()
    model = WeightingModel(hidden=hidden, seed=cfg.seed)
    _, report = train(model, train_samples, dev_samples, cfg)
    return model, report


def collect_scores(reader_a, reader_b, split) -> list[EnsembleSample]:
    """Score every sample with both frozen readers, aligned per candidate."""
    out = []
    with no_grad():
        for sample in split:
            sv_a = reader_a.score_sample(sample)
            sv_b = reader_b.score_sample(sample)
            if sv_a.candidates != sv_b.candidates:
                raise EnsembleError(
                    f"{sample.uid}: candidate sets differ between readers "
                    f"({sv_a.candidates} vs {sv_b.candidates})"
                )
            out.append(
                EnsembleSample(
                    uid=sample.uid,
                    candidates=list(sv_a.candidates),
                    gold=sv_a.candidates.index(sample.gold),
                    scores_a=sv_a.scores.data.copy(),
                    scores_b=sv_b.scores.data.copy(),
                )
            )
    return out


SCORE_FILE_VERSION = 1


def write_score_file(samples: Sequence[EnsembleSample], path: str | Path, meta: dict | None = None) -> None:
    doc = {
        "format": "clozeqa-scores",
        "version": SCORE_FILE_VERSION,
        "meta": dict(meta or {}),
        "samples": [
            {
                "id": s.uid,
                "candidates": s.candidates,
                "gold": s.gold,
                "scores_a": s.scores_a.tolist(),
                "scores_b": s.scores_b.tolist(),
            }
            for s in samples
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_score_file(path: str | Path) -> list[EnsembleSample]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EnsembleError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != "clozeqa-scores" or doc.get("version") != SCORE_FILE_VERSION:
        raise EnsembleError(f"{path}: not a version-{SCORE_FILE_VERSION} score file")
    return [
        EnsembleSample(
            uid=entry["id"],
            candidates=list(entry["candidates"]),
            gold=int(entry["gold"]),
            scores_a=entry["scores_a"],
            scores_b=entry["scores_b"],
        )
        for entry in doc["samples"]
    ]
