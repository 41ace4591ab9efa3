"""Bag-of-n-grams Naive Bayes and order-k Markov chain classifiers.

Both fit one class-conditional sequence model per label and decide with the
MAP rule: BUY iff P(BUY|s) > P(NOBUY|s), ties go to NOBUY.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .domain import (
    BOS,
    EVENT_CODES,
    FormatError,
    InsufficientData,
    Label,
    SessionTooShort,
    SymbolizedSession,
)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Posterior:
    p_buy: float
    log_lik_buy: float
    log_lik_nobuy: float
    log_odds: float

    @property
    def p_nobuy(self) -> float:
        return float(expit(-self.log_odds))

    @property
    def predict_buy(self) -> bool:
        return self.log_odds > 0

    @property
    def label(self) -> Label:
        return Label.BUY if self.predict_buy else Label.NOBUY


def map_classify(log_lik_buy: float, log_lik_nobuy: float,
                 log_prior_buy: float = math.log(0.5), log_prior_nobuy: float = math.log(0.5)) -> Posterior:
    """Two-class Bayes posterior computed from log joints.

    P(BUY|s) = exp(a) / (exp(a) + exp(b)) with a, b the log joints, which is
    the logistic of a - b; no large magnitude is ever exponentiated.
    """
    log_odds = (log_prior_buy - log_prior_nobuy) + (log_lik_buy - log_lik_nobuy)
    return Posterior(float(expit(log_odds)), float(log_lik_buy), float(log_lik_nobuy), float(log_odds))


def posterior_pair(log_lik_buy, log_lik_nobuy, log_prior_buy, log_prior_nobuy) -> tuple[float, float]:
    """(p_buy, p_nobuy) each obtained through log-sum-exp normalisation."""
    a = log_prior_buy + log_lik_buy
    b = log_prior_nobuy + log_lik_nobuy
    norm = np.logaddexp(a, b)
    return float(np.exp(a - norm)), float(np.exp(b - norm))


def _class_priors(sessions: Sequence[SymbolizedSession]) -> dict[Label, float]:
    counts = Counter(s.label for s in sessions)
    total = counts[Label.BUY] + counts[Label.NOBUY]
    if counts[Label.BUY] == 0 or counts[Label.NOBUY] == 0:
        raise InsufficientData("both classes must be present in the training split")
    return {lab: math.log(counts[lab] / total) for lab in Label}


def _key(gram: Sequence[int]) -> str:
    return "-".join(str(x) for x in gram)


def _unkey(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split("-"))


def ngrams(symbols: Sequence[int], n: int) -> Iterable[tuple[int, ...]]:
    return (tuple(symbols[i : i + n]) for i in range(len(symbols) - n + 1))


class NgramNBModel:
    """Naive Bayes over bags of contiguous n-grams.

    Each class gets a Laplace-smoothed distribution over the union of n-grams
    observed in training. n-grams never seen in training carry no evidence and
    are skipped at scoring time.
    """

    kind = "nb"

    def __init__(self, n: int, alpha: float, counts: dict[Label, Counter], log_priors: dict[Label, float]):
        self.n = n
        self.alpha = alpha
        self.counts = counts
        self.log_priors = log_priors
        self.vocab = sorted(set(counts[Label.BUY]) | set(counts[Label.NOBUY]))
        self._logp: dict[Label, dict[tuple[int, ...], float]] = {}
        for lab in Label:
            total = sum(counts[lab].values())
            denom = total + alpha * len(self.vocab)
            self._logp[lab] = {g: math.log((counts[lab][g] + alpha) / denom) for g in self.vocab}

    def prob(self, gram: Sequence[int], label: Label) -> float:
        return math.exp(self._logp[label][tuple(gram)])

    def log_likelihood(self, symbols: Sequence[int], label: Label) -> float:
        table = self._logp[label]
        return math.fsum(table[g] for g in ngrams(symbols, self.n) if g in table)

    def score(self, s: SymbolizedSession | Sequence[int]) -> Posterior:
        symbols = s.symbols if isinstance(s, SymbolizedSession) else tuple(s)
        if len(symbols) < self.n:
            raise SessionTooShort(f"session of length {len(symbols)} has no {self.n}-grams")
        return map_classify(
            self.log_likelihood(symbols, Label.BUY),
            self.log_likelihood(symbols, Label.NOBUY),
            self.log_priors[Label.BUY],
            self.log_priors[Label.NOBUY],
        )

    def predict(self, sessions: Sequence[SymbolizedSession]) -> list[Label]:
        return [self.score(s).label for s in sessions]

    def to_dict(self) -> dict:
        return {
            "format": "clickintent.nb",
            "version": FORMAT_VERSION,
            "n": self.n,
            "alpha": self.alpha,
            "log_priors": {lab.value: v for lab, v in self.log_priors.items()},
            "counts": {lab.value: {_key(g): c for g, c in sorted(self.counts[lab].items())} for lab in Label},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NgramNBModel":
        if doc.get("format") != "clickintent.nb" or doc.get("version") != FORMAT_VERSION:
            raise FormatError("not a version-1 naive Bayes model document")
        counts = {lab: Counter({_unkey(k): int(v) for k, v in doc["counts"][lab.value].items()}) for lab in Label}
        priors = {lab: float(doc["log_priors"][lab.value]) for lab in Label}
        return cls(int(doc["n"]), float(doc["alpha"]), counts, priors)


def nb_train(sessions: Sequence[SymbolizedSession], n: int = 5, alpha: float = 1.0) -> NgramNBModel:
    if n < 1:
        raise ValueError("n must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    priors = _class_priors(sessions)
    counts = {lab: Counter() for lab in Label}
    for s in sessions:
        counts[s.label].update(ngrams(s.symbols, n))
    for lab in Label:
        if not counts[lab]:
            raise InsufficientData(f"no {lab.value} session has length >= {n}")
    return NgramNBModel(n, alpha, counts, priors)


class MarkovModel:
    """Class-conditional order-k Markov chains.

    The context of position t is the k preceding symbols, left-padded with
    BOS. Conditionals are Laplace-smoothed over ``alphabet``; an unseen
    context therefore predicts uniformly.
    """

    kind = "mc"

    def __init__(self, k: int, alpha: float, counts: dict[Label, dict[tuple[int, ...], np.ndarray]],
                 log_priors: dict[Label, float], alphabet: Sequence[int] = EVENT_CODES):
        self.k = k
        self.alpha = alpha
        self.counts = counts
        self.log_priors = log_priors
        self.alphabet = tuple(alphabet)
        self._index = {a: i for i, a in enumerate(self.alphabet)}
        self._uniform = math.log(1.0 / len(self.alphabet))
        self._logp: dict[Label, dict[tuple[int, ...], np.ndarray]] = {}
        for lab in Label:
            self._logp[lab] = {
                ctx: np.log((row + alpha) / (row.sum() + alpha * len(self.alphabet)))
                for ctx, row in counts[lab].items()
            }

    def contexts(self, symbols: Sequence[int]) -> Iterable[tuple[tuple[int, ...], int]]:
        padded = (BOS,) * self.k + tuple(symbols)
        for t, sym in enumerate(symbols):
            yield padded[t : t + self.k], sym

    def conditional(self, context: Sequence[int], label: Label) -> np.ndarray:
        """P(next | context) over ``alphabet``."""
        row = self._logp[label].get(tuple(context))
        if row is None:
            return np.full(len(self.alphabet), 1.0 / len(self.alphabet))
        return np.exp(row)

    def log_likelihood(self, symbols: Sequence[int], label: Label) -> float:
        table = self._logp[label]
        terms = []
        for ctx, sym in self.contexts(symbols):
            row = table.get(ctx)
            terms.append(self._uniform if row is None else float(row[self._index[sym]]))
        return math.fsum(terms)

    def score(self, s: SymbolizedSession | Sequence[int]) -> Posterior:
        symbols = s.symbols if isinstance(s, SymbolizedSession) else tuple(s)
        return map_classify(
            self.log_likelihood(symbols, Label.BUY),
            self.log_likelihood(symbols, Label.NOBUY),
            self.log_priors[Label.BUY],
            self.log_priors[Label.NOBUY],
        )

    def predict(self, sessions: Sequence[SymbolizedSession]) -> list[Label]:
        return [self.score(s).label for s in sessions]

    def transition_matrix(self, label: Label) -> np.ndarray:
        """First-order conditional matrix indexed by alphabet position (k == 1 only)."""
        if self.k != 1:
            raise ValueError("transition_matrix is defined for order-1 chains")
        return np.vstack([self.conditional((a,), label) for a in self.alphabet])

    def to_dict(self) -> dict:
        return {
            "format": "clickintent.mc",
            "version": FORMAT_VERSION,
            "k": self.k,
            "alpha": self.alpha,
            "alphabet": list(self.alphabet),
            "log_priors": {lab.value: v for lab, v in self.log_priors.items()},
            "counts": {
                lab.value: {_key(ctx): [int(x) for x in row] for ctx, row in sorted(self.counts[lab].items())}
                for lab in Label
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MarkovModel":
        if doc.get("format") != "clickintent.mc" or doc.get("version") != FORMAT_VERSION:
            raise FormatError("not a version-1 Markov model document")
        counts = {
            lab: {_unkey(k): np.asarray(v, dtype=np.int64) for k, v in doc["counts"][lab.value].items()}
            for lab in Label
        }
        priors = {lab: float(doc["log_priors"][lab.value]) for lab in Label}
        return cls(int(doc["k"]), float(doc["alpha"]), counts, priors, doc["alphabet"])


def mc_train(sessions: Sequence[SymbolizedSession], k: int = 5, alpha: float = 1.0,
             alphabet: Sequence[int] = EVENT_CODES) -> MarkovModel:
    if k < 1:
        raise ValueError("k must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    priors = _class_priors(sessions)
    index = {a: i for i, a in enumerate(alphabet)}
    counts: dict[Label, dict[tuple[int, ...], np.ndarray]] = {lab: {} for lab in Label}
    padding = (BOS,) * k
    for s in sessions:
        table = counts[s.label]
        padded = padding + tuple(s.symbols)
        for t, sym in enumerate(s.symbols):
            ctx = padded[t : t + k]
            row = table.get(ctx)
            if row is None:
                row = table[ctx] = np.zeros(len(alphabet), dtype=np.int64)
            row[index[sym]] += 1
    return MarkovModel(k, alpha, counts, priors, alphabet)


def load_prob_model(doc: dict):
    fmt = doc.get("format")
    if fmt == "clickintent.nb":
        return NgramNBModel.from_dict(doc)
    if fmt == "clickintent.mc":
        return MarkovModel.from_dict(doc)
    raise FormatError(f"unknown model format {fmt!r}")
