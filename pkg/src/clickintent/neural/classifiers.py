"""Generative LSTM language-model mixture and discriminative Seq2Label classifier."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..domain import BOS, EOS, N_TOKENS, PAD, FormatError, InsufficientData, Label, SymbolizedSession, Corpus
from ..probmodels import Posterior, map_classify
from .core import (
    FORMAT_VERSION,
    Batch,
    EarlyStopConfig,
    TrainResult,
    init_params,
    lm_loss_and_grads,
    log_softmax,
    lstm_forward,
    pad_sequences,
    params_from_dict,
    params_to_dict,
    s2l_logits,
    s2l_loss_and_grads,
    train_loop,
)

SCORE_CHUNK = 256


@dataclass(frozen=True)
class NeuralConfig:
    hidden: int
    lr: float
    batch_size: int
    patience: int = 10
    max_epochs: int = 50

    @property
    def stop(self) -> EarlyStopConfig:
        return EarlyStopConfig(self.patience, self.max_epochs)


# best grid points reported for each architecture
LM_DEFAULT = NeuralConfig(hidden=80, lr=0.001, batch_size=50)
S2L_DEFAULTS = {
    "avg": NeuralConfig(hidden=80, lr=0.01, batch_size=50),
    "last": NeuralConfig(hidden=20, lr=0.01, batch_size=10),
}
GRID_HIDDEN = (10, 20, 40, 80)
GRID_LR = (0.01, 0.001)
GRID_BATCH = (10, 20, 50)


def _symbols(s) -> tuple[int, ...]:
    return s.symbols if isinstance(s, SymbolizedSession) else tuple(s)


def _chunks(items: Sequence, size: int = SCORE_CHUNK):
    for start in range(0, len(items), size):
        yield items[start : start + size]


class LSTMLanguageModel:
    """Next-token model over the 9-token space, read as BOS s_1 .. s_n EOS."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def initialise(cls, hidden: int, rng: np.random.Generator) -> "LSTMLanguageModel":
        return cls(init_params(rng, hidden, N_TOKENS))

    def make_batch(self, items: Sequence) -> Batch:
        inputs = [(BOS,) + _symbols(s) for s in items]
        tokens, lengths = pad_sequences(inputs)
        targets = np.full_like(tokens, PAD)
        for j, s in enumerate(items):
            sym = _symbols(s)
            targets[: len(sym) + 1, j] = sym + (EOS,)
        return Batch(tokens, lengths, targets=targets)

    def loss_and_grads(self, batch: Batch):
        return lm_loss_and_grads(self.params, batch)

    def _target_logprobs(self, batch: Batch):
        """(T, B) log P(target_t | prefix), zero where there is no target; plus the raw log-softmax rows."""
        cache = lstm_forward(self.params, batch.tokens)
        valid = cache.mask
        logp = log_softmax(cache.hs[valid] @ self.params["V"] + self.params["c"])
        out = np.zeros(batch.tokens.shape)
        out[valid] = logp[np.arange(logp.shape[0]), batch.targets[valid]]
        return out, logp, valid

    def sequence_loglik(self, sessions: Sequence) -> np.ndarray:
        """Sum over targets s_1..s_n, EOS of log P(target | prefix)."""
        out = []
        for chunk in _chunks(list(sessions)):
            batch = self.make_batch(chunk)
            token_lp, _, _ = self._target_logprobs(batch)
            for j in range(token_lp.shape[1]):
                out.append(math.fsum(token_lp[: batch.lengths[j], j]))
        return np.asarray(out)

    def accuracy(self, items: Sequence) -> float:
        """Fraction of non-PAD next-token targets predicted by the argmax."""
        hits = total = 0
        for chunk in _chunks(list(items)):
            batch = self.make_batch(chunk)
            _, logp, valid = self._target_logprobs(batch)
            hits += int((logp.argmax(axis=1) == batch.targets[valid]).sum())
            total += logp.shape[0]
        return hits / total if total else 0.0

    def cross_entropy(self, items: Sequence) -> float:
        """Mean per-token cross-entropy (nats) over ``items``."""
        lls = self.sequence_loglik(items)
        n_tokens = sum(len(_symbols(s)) + 1 for s in items)
        return float(-lls.sum() / n_tokens)


def _class_log_priors(sessions: Sequence[SymbolizedSession]) -> dict[Label, float]:
    n_buy = sum(1 for s in sessions if s.label is Label.BUY)
    n_nobuy = sum(1 for s in sessions if s.label is Label.NOBUY)
    if not n_buy or not n_nobuy:
        raise InsufficientData("both classes must be present in the training split")
    total = n_buy + n_nobuy
    return {Label.BUY: math.log(n_buy / total), Label.NOBUY: math.log(n_nobuy / total)}


def lm_train(corpus: Corpus, label: Label, config: NeuralConfig = LM_DEFAULT,
             rng: np.random.Generator | None = None) -> tuple[LSTMLanguageModel, TrainResult]:
    """Fit one class's language model; early stopping watches next-token
    accuracy on that class's validation sessions."""
    rng = rng if rng is not None else np.random.default_rng(0)
    train = [s for s in corpus.train if s.label is label]
    val = [s for s in corpus.validation if s.label is label] or train
    if not train:
        raise InsufficientData(f"no {label.value} sessions in the training split")
    lm = LSTMLanguageModel.initialise(config.hidden, rng)
    result = train_loop(lm, train, val, lr=config.lr, batch_size=config.batch_size, rng=rng, stop=config.stop)
    return lm, result


class LMMixtureModel:
    """One language model per class combined through the MAP rule."""

    kind = "lm"

    def __init__(self, lms: dict[Label, LSTMLanguageModel], log_priors: dict[Label, float]):
        self.lms = lms
        self.log_priors = log_priors
        self.train_results: dict[Label, TrainResult] = {}

    def posteriors(self, sessions: Sequence) -> list[Posterior]:
        ll_buy = self.lms[Label.BUY].sequence_loglik(sessions)
        ll_nobuy = self.lms[Label.NOBUY].sequence_loglik(sessions)
        return [
            map_classify(a, b, self.log_priors[Label.BUY], self.log_priors[Label.NOBUY])
            for a, b in zip(ll_buy, ll_nobuy)
        ]

    def score(self, s) -> Posterior:
        return self.posteriors([s])[0]

    def predict(self, sessions: Sequence) -> list[Label]:
        return [p.label for p in self.posteriors(sessions)]

    def to_dict(self) -> dict:
        return {
            "format": "clickintent.neural",
            "version": FORMAT_VERSION,
            "kind": "lm",
            "log_priors": {lab.value: v for lab, v in self.log_priors.items()},
            "params": {lab.value: params_to_dict(lm.params) for lab, lm in self.lms.items()},
        }


def train_lm_mixture(corpus: Corpus, config: NeuralConfig = LM_DEFAULT, seed: int = 0) -> LMMixtureModel:
    rng = np.random.default_rng(seed)
    priors = _class_log_priors(corpus.train)
    lms, results = {}, {}
    for label in (Label.BUY, Label.NOBUY):
        lms[label], results[label] = lm_train(corpus, label, config, rng)
    model = LMMixtureModel(lms, priors)
    model.train_results = results
    return model


class S2LModel:
    """LSTM encoder, last-step or average pooling, one sigmoid output."""

    kind = "s2l"

    def __init__(self, params: dict[str, np.ndarray], pooling: str):
        if pooling not in ("last", "avg"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.params = params
        self.pooling = pooling
        self.train_result: TrainResult | None = None

    @classmethod
    def initialise(cls, hidden: int, pooling: str, rng: np.random.Generator) -> "S2LModel":
        return cls(init_params(rng, hidden, 1), pooling)

    def make_batch(self, items: Sequence[SymbolizedSession]) -> Batch:
        tokens, lengths = pad_sequences([_symbols(s) for s in items])
        labels = np.array([1.0 if s.label is Label.BUY else 0.0 for s in items])
        return Batch(tokens, lengths, labels=labels)

    def loss_and_grads(self, batch: Batch):
        return s2l_loss_and_grads(self.params, batch, self.pooling)

    def logits(self, sessions: Sequence) -> np.ndarray:
        out = []
        for chunk in _chunks(list(sessions)):
            tokens, lengths = pad_sequences([_symbols(s) for s in chunk])
            out.append(s2l_logits(self.params, tokens, lengths, self.pooling))
        return np.concatenate(out) if out else np.zeros(0)

    def predict_proba(self, sessions: Sequence) -> np.ndarray:
        return expit(self.logits(sessions))

    def score(self, s) -> float:
        return float(self.predict_proba([s])[0])

    def predict(self, sessions: Sequence) -> list[Label]:
        # p > 0.5 exactly when the logit is positive; ties go to NOBUY
        return [Label.BUY if z > 0 else Label.NOBUY for z in self.logits(sessions)]

    def accuracy(self, items: Sequence[SymbolizedSession]) -> float:
        if not items:
            return 0.0
        preds = self.predict(items)
        return sum(p is s.label for p, s in zip(preds, items)) / len(items)

    def to_dict(self) -> dict:
        return {
            "format": "clickintent.neural",
            "version": FORMAT_VERSION,
            "kind": "s2l",
            "pooling": self.pooling,
            "params": params_to_dict(self.params),
        }


def s2l_train(corpus: Corpus, pooling: str = "last", config: NeuralConfig | None = None,
              seed: int = 0) -> S2LModel:
    config = config or S2L_DEFAULTS[pooling]
    _class_log_priors(corpus.train)
    rng = np.random.default_rng(seed)
    model = S2LModel.initialise(config.hidden, pooling, rng)
    model.train_result = train_loop(model, corpus.train, corpus.validation or corpus.train,
                                    lr=config.lr, batch_size=config.batch_size, rng=rng, stop=config.stop)
    return model


def load_neural_model(doc: dict):
    if doc.get("format") != "clickintent.neural" or doc.get("version") != FORMAT_VERSION:
        raise FormatError("not a version-1 neural checkpoint")
    if doc["kind"] == "s2l":
        return S2LModel(params_from_dict(doc["params"]), doc["pooling"])
    if doc["kind"] == "lm":
        lms = {Label(k): LSTMLanguageModel(params_from_dict(v)) for k, v in doc["params"].items()}
        priors = {Label(k): float(v) for k, v in doc["log_priors"].items()}
        return LMMixtureModel(lms, priors)
    raise FormatError(f"unknown neural model kind {doc['kind']!r}")


def config_dict(config: NeuralConfig) -> dict:
    return asdict(config)
