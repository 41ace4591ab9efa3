"""Synthetic labeled session corpora and their exact Bayes-optimal classifier.

A generator spec gives each class a variable-memory Markov chain over the six
event codes plus a truncated-geometric length law. The conditional for the
next symbol is looked up as follows: the longest suffix (up to ``order``
symbols, at least 2) of the history that has an entry in ``contexts``;
otherwise the first-order row of the last symbol; ``initial`` for the first
symbol.
"""

from __future__ import annotations

import bisect
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import EVENT_CODES, InvalidSpec, Label, SymbolizedSession
from .probmodels import Posterior, map_classify

N_SYMBOLS = len(EVENT_CODES)
ROW_TOL = 1e-9


def _check_row(row, what: str) -> tuple[float, ...]:
    try:
        row = tuple(float(x) for x in row)
    except (TypeError, ValueError):
        raise InvalidSpec(f"{what}: not a numeric row") from None
    if len(row) != N_SYMBOLS:
        raise InvalidSpec(f"{what}: expected {N_SYMBOLS} probabilities, got {len(row)}")
    if any(not math.isfinite(p) or p < 0 for p in row):
        raise InvalidSpec(f"{what}: probabilities must be finite and non-negative")
    if abs(math.fsum(row) - 1.0) > ROW_TOL:
        raise InvalidSpec(f"{what}: row sums to {math.fsum(row)!r}, not 1")
    return row


@dataclass(frozen=True)
class ClassProcess:
    initial: tuple[float, ...]
    transitions: tuple[tuple[float, ...], ...]
    contexts: dict[tuple[int, ...], tuple[float, ...]] = field(default_factory=dict)
    mean_length: float = 29.0


@dataclass(frozen=True)
class GeneratorSpec:
    classes: dict[Label, ClassProcess]
    order: int = 1
    prior_buy: float = 0.5
    min_len: int = 10
    max_len: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise InvalidSpec("order must be >= 1")
        if not 0.0 <= self.prior_buy <= 1.0:
            raise InvalidSpec("prior_buy must lie in [0, 1]")
        if not 1 <= self.min_len <= self.max_len:
            raise InvalidSpec("need 1 <= min_len <= max_len")
        if set(self.classes) != set(Label):
            raise InvalidSpec("spec needs a BUY and a NOBUY process")
        for label, proc in self.classes.items():
            _check_row(proc.initial, f"{label.value}.initial")
            if len(proc.transitions) != N_SYMBOLS:
                raise InvalidSpec(f"{label.value}.transitions must have {N_SYMBOLS} rows")
            for i, row in enumerate(proc.transitions):
                _check_row(row, f"{label.value}.transitions[{i}]")
            for ctx, row in proc.contexts.items():
                if not 2 <= len(ctx) <= self.order or any(c not in EVENT_CODES for c in ctx):
                    raise InvalidSpec(f"{label.value}.contexts: bad context {ctx}")
                _check_row(row, f"{label.value}.contexts[{ctx}]")
            if not self.min_len <= proc.mean_length:
                raise InvalidSpec(f"{label.value}.mean_length below min_len")

    # ------------------------------------------------------------------ io

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        try:
            classes = {}
            for label in Label:
                c = doc["classes"][label.value]
                classes[label] = ClassProcess(
                    initial=_check_row(c["initial"], f"{label.value}.initial"),
                    transitions=tuple(
                        _check_row(r, f"{label.value}.transitions[{i}]") for i, r in enumerate(c["transitions"])
                    ),
                    contexts={
                        tuple(int(x) for x in k.split("-")): _check_row(v, f"{label.value}.contexts[{k}]")
                        for k, v in c.get("contexts", {}).items()
                    },
                    mean_length=float(c.get("mean_length", 29.0)),
                )
            return cls(
                classes=classes,
                order=int(doc.get("order", 1)),
                prior_buy=float(doc.get("prior_buy", 0.5)),
                min_len=int(doc.get("min_len", 10)),
                max_len=int(doc.get("max_len", 200)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"malformed generator spec: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "prior_buy": self.prior_buy,
            "min_len": self.min_len,
            "max_len": self.max_len,
            "seed": self.seed,
            "classes": {
                label.value: {
                    "mean_length": proc.mean_length,
                    "initial": list(proc.initial),
                    "transitions": [list(r) for r in proc.transitions],
                    "contexts": {"-".join(map(str, k)): list(v) for k, v in sorted(proc.contexts.items())},
                }
                for label, proc in self.classes.items()
            },
        }

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "GeneratorSpec":
        text = resources.files("clickintent.data").joinpath("default_spec.json").read_text()
        return cls.from_dict(json.loads(text))

    # ------------------------------------------------------------ process

    def conditional(self, label: Label, history: Sequence[int]) -> tuple[float, ...]:
        proc = self.classes[label]
        if not history:
            return proc.initial
        for size in range(min(self.order, len(history)), 1, -1):
            row = proc.contexts.get(tuple(history[-size:]))
            if row is not None:
                return row
        return proc.transitions[history[-1] - 1]

    def first_order_matrix(self, label: Label) -> np.ndarray:
        return np.asarray(self.classes[label].transitions)

    def length_geometric_p(self, label: Label) -> float:
        return 1.0 / (self.classes[label].mean_length - self.min_len + 1.0)

    def length_pmf(self, label: Label) -> np.ndarray:
        """P(length = min_len + i) for i = 0 .. max_len - min_len."""
        p = self.length_geometric_p(label)
        steps = np.arange(self.max_len - self.min_len + 1)
        log_w = steps * math.log1p(-p) if p < 1 else np.where(steps == 0, 0.0, -np.inf)
        w = np.exp(log_w - np.max(log_w))
        return w / w.sum()

    def length_logpmf(self, label: Label, length: int) -> float:
        if not self.min_len <= length <= self.max_len:
            return -math.inf
        p = self.length_geometric_p(label)
        i = length - self.min_len
        if p >= 1:
            return 0.0 if i == 0 else -math.inf
        # truncated geometric: (1-p)^i / sum_{j<=m} (1-p)^j
        m = self.max_len - self.min_len
        log_q = math.log1p(-p)
        log_norm = math.log(-math.expm1((m + 1) * log_q)) - math.log(p)
        return i * log_q - log_norm


def _session_id(seed: int, index: int) -> str:
    return hashlib.sha1(f"synth|{seed}|{index}".encode()).hexdigest()


class _Sampler:
    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self.length_cdf = {lab: np.cumsum(spec.length_pmf(lab)) for lab in Label}
        self._cum: dict[tuple[Label, tuple[float, ...]], list[float]] = {}

    def _cumulative(self, label: Label, row: tuple[float, ...]) -> list[float]:
        key = (label, row)
        cum = self._cum.get(key)
        if cum is None:
            cum = list(np.cumsum(row))
            # never pick a zero-probability symbol because of a rounding shortfall
            last = max(i for i, p in enumerate(row) if p > 0)
            cum[last:] = [math.inf] * (N_SYMBOLS - last)
            self._cum[key] = cum
        return cum

    def session(self, label: Label, rng: np.random.Generator) -> tuple[int, ...]:
        spec = self.spec
        cdf = self.length_cdf[label]
        length = spec.min_len + min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        draws = rng.random(length)
        out: list[int] = []
        for u in draws:
            cum = self._cumulative(label, spec.conditional(label, out[-spec.order:]))
            out.append(bisect.bisect_right(cum, u) + 1)
        return tuple(out)


def generate(spec: GeneratorSpec, n_sessions: int, seed: int | None = None,
             stratified: bool = False) -> list[SymbolizedSession]:
    """Draw ``n_sessions`` labeled sessions.

    Session i uses its own generator seeded with (seed, i), so the output does
    not depend on generation order. With ``stratified`` the class counts are
    fixed to round(prior_buy * n) BUY sessions instead of being sampled.
    """
    seed = spec.seed if seed is None else seed
    sampler = _Sampler(spec)
    if stratified:
        n_buy = int(round(spec.prior_buy * n_sessions))
        labels = [Label.BUY] * n_buy + [Label.NOBUY] * (n_sessions - n_buy)
        order = np.random.default_rng([seed, n_sessions, 1]).permutation(n_sessions)
        labels = [labels[i] for i in order]
    out = []
    for i in range(n_sessions):
        rng = np.random.default_rng([seed, i])
        if stratified:
            label = labels[i]
            rng.random()  # keep the per-session stream aligned with the sampled mode
        else:
            label = Label.BUY if rng.random() < spec.prior_buy else Label.NOBUY
        out.append(SymbolizedSession(_session_id(seed, i), sampler.session(label, rng), label))
    return out


def sequence_loglik(spec: GeneratorSpec, label: Label, symbols: Sequence[int], include_length: bool = True) -> float:
    terms = [spec.length_logpmf(label, len(symbols))] if include_length else []
    for t, sym in enumerate(symbols):
        p = spec.conditional(label, symbols[max(0, t - spec.order) : t])[sym - 1]
        if p <= 0:
            return -math.inf
        terms.append(math.log(p))
    return math.fsum(terms)


def bayes_oracle(spec: GeneratorSpec, s: SymbolizedSession | Sequence[int]) -> Posterior:
    """Exact posterior under the generating process (length law included)."""
    symbols = s.symbols if isinstance(s, SymbolizedSession) else tuple(s)
    ll_buy = sequence_loglik(spec, Label.BUY, symbols)
    ll_nobuy = sequence_loglik(spec, Label.NOBUY, symbols)
    prior = spec.prior_buy
    lp_buy = math.log(prior) if prior > 0 else -math.inf
    lp_nobuy = math.log1p(-prior) if prior < 1 else -math.inf
    if math.isinf(ll_buy) and math.isinf(ll_nobuy):
        # impossible under both classes; fall back to the prior
        ll_buy = ll_nobuy = 0.0
    if math.isinf(lp_buy) or math.isinf(lp_nobuy):
        p = 1.0 if math.isinf(lp_nobuy) else 0.0
        return Posterior(p, ll_buy, ll_nobuy, math.inf if p == 1.0 else -math.inf)
    return map_classify(ll_buy, ll_nobuy, lp_buy, lp_nobuy)


class BayesOracle:
    """Classifier facade over :func:`bayes_oracle` for the evaluation harness."""

    kind = "oracle"

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec

    def score(self, s) -> Posterior:
        return bayes_oracle(self.spec, s)

    def predict(self, sessions: Sequence[SymbolizedSession]) -> list[Label]:
        return [bayes_oracle(self.spec, s).label for s in sessions]


def random_spec(order: int = 3, concentration: float = 5.0, seed: int = 0,
                alphabet: Sequence[int] = (1, 2, 3, 4, 6), shared_low_order: bool = True,
                mean_length: dict[Label, float] | None = None) -> GeneratorSpec:
    """Spec whose classes differ through Dirichlet-drawn order-``order`` contexts.

    With ``shared_low_order`` both classes share the initial distribution and
    first-order rows, so the class signal sits in the longer contexts. Smaller
    ``concentration`` means more peaked rows and easier separation.
    """
    rng = np.random.default_rng(seed)
    idx = np.asarray(alphabet) - 1

    def row(conc: float) -> tuple[float, ...]:
        out = np.zeros(N_SYMBOLS)
        out[idx] = rng.dirichlet(np.full(len(idx), conc))
        return tuple(float(x) for x in out / out.sum())

    def low_order():
        initial = row(5.0)
        rows = tuple(row(5.0) for _ in EVENT_CODES)
        return initial, rows

    shared = low_order()
    lengths = mean_length or {Label.BUY: 45.78, Label.NOBUY: 28.1}
    classes = {}
    for label in (Label.BUY, Label.NOBUY):
        initial, rows = shared if shared_low_order else low_order()
        contexts = {}
        if order >= 2:
            for ctx in itertools.product(alphabet, repeat=order):
                contexts[ctx] = row(concentration)
        classes[label] = ClassProcess(initial, rows, contexts, lengths[label])
    return GeneratorSpec(classes, order=order)


def last_event_sessions(n_sessions: int, seed: int = 0, trigger: int = 3, min_len: int = 10,
                        max_len: int = 30, alphabet: Sequence[int] = (1, 2, 3, 4, 6)) -> list[SymbolizedSession]:
    """Balanced toy set where a session is BUY exactly when it ends in ``trigger``.

    Everything before the last event is uniform noise over ``alphabet``.
    """
    if trigger not in alphabet:
        raise InvalidSpec("trigger must belong to the alphabet")
    others = [a for a in alphabet if a != trigger]
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sessions):
        label = Label.BUY if i % 2 == 0 else Label.NOBUY
        body = rng.choice(alphabet, size=int(rng.integers(min_len, max_len + 1)) - 1).tolist()
        last = trigger if label is Label.BUY else int(rng.choice(others))
        out.append(SymbolizedSession(_session_id(seed, i), tuple(body) + (last,), label))
    return out
