"""Model specifications, training dispatch and model files for all four families."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .domain import Corpus, FormatError
from .neural.classifiers import (
    LM_DEFAULT,
    S2L_DEFAULTS,
    NeuralConfig,
    load_neural_model,
    s2l_train,
    train_lm_mixture,
)
from .probmodels import load_prob_model, mc_train, nb_train

KINDS = ("nb", "mc", "lm", "s2l")
DETERMINISTIC_KINDS = ("nb", "mc")


@dataclass(frozen=True)
class ModelSpec:
    """What to train. Unset neural hyperparameters fall back to the best
    reported grid point for the architecture."""

    kind: str
    order: int = 5
    alpha: float = 1.0
    pooling: str = "last"
    hidden: int | None = None
    lr: float | None = None
    batch: int | None = None
    patience: int = 10
    max_epochs: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.pooling not in ("last", "avg"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def deterministic(self) -> bool:
        return self.kind in DETERMINISTIC_KINDS

    def neural_config(self) -> NeuralConfig:
        base = LM_DEFAULT if self.kind == "lm" else S2L_DEFAULTS[self.pooling]
        return NeuralConfig(
            hidden=self.hidden or base.hidden,
            lr=self.lr or base.lr,
            batch_size=self.batch or base.batch_size,
            patience=self.patience,
            max_epochs=self.max_epochs,
        )

    def resolved(self) -> "ModelSpec":
        """Copy with every default made explicit (for echoing configs)."""
        if self.deterministic:
            return self
        cfg = self.neural_config()
        return replace(self, hidden=cfg.hidden, lr=cfg.lr, batch=cfg.batch_size)

    @property
    def model_id(self) -> str:
        if self.kind == "nb":
            return f"nb(n={self.order},alpha={self.alpha:g})"
        if self.kind == "mc":
            return f"mc(k={self.order},alpha={self.alpha:g})"
        cfg = self.neural_config()
        head = "lm" if self.kind == "lm" else f"s2l-{self.pooling}"
        return f"{head}(H={cfg.hidden},lr={cfg.lr:g},B={cfg.batch_size})"

    def to_dict(self) -> dict:
        return asdict(self.resolved())


def train_model(spec: ModelSpec, corpus: Corpus, seed: int = 0):
    if spec.kind == "nb":
        return nb_train(corpus.train, spec.order, spec.alpha)
    if spec.kind == "mc":
        return mc_train(corpus.train, spec.order, spec.alpha)
    if spec.kind == "lm":
        return train_lm_mixture(corpus, spec.neural_config(), seed)
    return s2l_train(corpus, spec.pooling, spec.neural_config(), seed)


def model_epoch_log(model) -> list[dict] | dict | None:
    """Per-epoch training history of a neural model, if it has one."""
    if getattr(model, "train_result", None) is not None:
        return [asdict(e) for e in model.train_result.epochs]
    if getattr(model, "train_results", None):
        return {lab.value: [asdict(e) for e in r.epochs] for lab, r in model.train_results.items()}
    return None


def save_model(model, path: str | Path, extra: dict | None = None) -> None:
    doc = model.to_dict()
    if extra:
        doc["run"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    fmt = doc.get("format", "")
    if fmt == "clickintent.neural":
        return load_neural_model(doc)
    if fmt in ("clickintent.nb", "clickintent.mc"):
        return load_prob_model(doc)
    raise FormatError(f"{path}: unknown model format {fmt!r}")
