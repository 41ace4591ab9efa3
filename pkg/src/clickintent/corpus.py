"""Benchmark corpus preparation and descriptive statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import (
    BUY_CODE,
    EVENT_CODES,
    SPLITS,
    Corpus,
    EmptyInput,
    EventType,
    InsufficientData,
    Label,
    SymbolizedSession,
)
from .ingestion import read_sessions, write_sessions

PERCENTILES = (0, 25, 50, 75, 100)
SPLIT_FILES = {"train": "train.txt", "validation": "val.txt", "test": "test.txt"}


@dataclass(frozen=True)
class PrepConfig:
    min_len: int = 10
    max_len: int = 200
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.min_len < 1:
            raise ValueError("min_len must be >= 1")
        if self.max_len < self.min_len:
            raise ValueError("max_len must be >= min_len")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ValueError("split_fractions must be three non-negative numbers")
        if sum(Fraction(str(f)) for f in self.split_fractions) != 1:
            raise ValueError("split_fractions must sum to 1")


def cut_before_first_buy(s: SymbolizedSession) -> SymbolizedSession:
    """Truncate a BUY session just before its first buy event."""
    if s.label is not Label.BUY or BUY_CODE not in s.symbols:
        return s
    return SymbolizedSession(s.id, s.symbols[: s.symbols.index(BUY_CODE)], s.label)


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """floor() for train and validation, remainder to test."""
    n_train = math.floor(Fraction(str(fractions[0])) * n)
    n_val = math.floor(Fraction(str(fractions[1])) * n)
    return n_train, n_val, n - n_train - n_val


def prepare(sessions: Sequence[SymbolizedSession], cfg: PrepConfig | None = None) -> Corpus:
    """Filter, cut, balance and split labeled sessions into a Corpus.

    Order of operations: length filter, cut before the first buy, min-length
    re-filter, random downsampling of the majority class to the minority
    count, then a stratified split per class. All randomness comes from one
    generator seeded with ``cfg.seed``.
    """
    cfg = cfg or PrepConfig()
    if any(s.label is None for s in sessions):
        raise ValueError("prepare() needs labeled sessions")
    log = {
        "input_total": len(sessions),
        "input_buy": sum(1 for s in sessions if s.label is Label.BUY),
        "input_nobuy": sum(1 for s in sessions if s.label is Label.NOBUY),
        "dropped_short": 0,
        "dropped_long": 0,
        "dropped_after_cut": 0,
        "downsampled": 0,
    }
    kept = []
    for s in sessions:
        if len(s) < cfg.min_len:
            log["dropped_short"] += 1
        elif len(s) > cfg.max_len:
            log["dropped_long"] += 1
        else:
            kept.append(s)

    by_class: dict[Label, list[SymbolizedSession]] = {Label.BUY: [], Label.NOBUY: []}
    for s in kept:
        cut = cut_before_first_buy(s)
        if len(cut) < cfg.min_len:
            log["dropped_after_cut"] += 1
        else:
            by_class[cut.label].append(cut)
    log["filtered_buy"] = len(by_class[Label.BUY])
    log["filtered_nobuy"] = len(by_class[Label.NOBUY])
    for label, members in by_class.items():
        if not members:
            raise InsufficientData(f"no {label.value} sessions left after filtering")

    rng = np.random.default_rng(cfg.seed)
    n_min = min(len(v) for v in by_class.values())
    for label, members in by_class.items():
        if len(members) > n_min:
            keep = np.sort(rng.choice(len(members), size=n_min, replace=False))
            log["downsampled"] += len(members) - n_min
            by_class[label] = [members[i] for i in keep]

    parts: dict[str, list[SymbolizedSession]] = {name: [] for name in SPLITS}
    for label in (Label.BUY, Label.NOBUY):
        members = by_class[label]
        order = rng.permutation(len(members))
        n_train, n_val, _ = split_sizes(len(members), cfg.split_fractions)
        shuffled = [members[i] for i in order]
        parts["train"] += shuffled[:n_train]
        parts["validation"] += shuffled[n_train : n_train + n_val]
        parts["test"] += shuffled[n_train + n_val :]
    for name in SPLITS:
        parts[name] = [parts[name][i] for i in rng.permutation(len(parts[name]))]
    log["total"] = sum(len(v) for v in parts.values())
    return Corpus(parts["train"], parts["validation"], parts["test"], prep_log=log)


def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, fname in SPLIT_FILES.items():
        with open(directory / fname, "w", encoding="utf-8") as fh:
            write_sessions(corpus.split(name), fh, with_label=True)
    with open(directory / "prep_log.json", "w", encoding="utf-8") as fh:
        json.dump({"prep_log": corpus.prep_log, "class_counts": corpus.class_counts}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(directory: str | Path) -> Corpus:
    directory = Path(directory)
    splits = {}
    for name, fname in SPLIT_FILES.items():
        with open(directory / fname, encoding="utf-8") as fh:
            splits[name] = read_sessions(fh)
    log = {}
    if (directory / "prep_log.json").exists():
        log = json.loads((directory / "prep_log.json").read_text())["prep_log"]
    return Corpus(splits["train"], splits["validation"], splits["test"], prep_log=log)


# --------------------------------------------------------------------------
# statistics


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    if pct <= 0:
        return sorted_values[0]
    rank = math.ceil(Fraction(str(pct)) / 100 * n)
    return sorted_values[min(max(rank, 1), n) - 1]


@dataclass
class GroupStats:
    n_sessions: int
    n_events: int
    length_percentiles: dict[int, int]
    length_mean: float
    length_sd: float
    event_distribution: dict[str, float]
    transitions: list[list[float]]
    zero_rows: list[int]


@dataclass
class CorpusStats:
    groups: dict[str, GroupStats] = field(default_factory=dict)
    transition_diff: list[list[float]] | None = None

    def to_dict(self) -> dict:
        out = {"groups": {}, "transition_diff": self.transition_diff, "codes": list(EVENT_CODES)}
        for name, g in self.groups.items():
            out["groups"][name] = {
                "n_sessions": g.n_sessions,
                "n_events": g.n_events,
                "length_percentiles": {str(k): v for k, v in g.length_percentiles.items()},
                "length_mean": g.length_mean,
                "length_sd": g.length_sd,
                "event_distribution": g.event_distribution,
                "transitions": g.transitions,
                "zero_rows": g.zero_rows,
            }
        return out

    def write_csv(self, directory: str | Path) -> list[Path]:
        """One CSV per table: lengths, event distribution, transition matrices."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = [e.label for e in EventType]
        written = []

        path = directory / "length_stats.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "n_sessions", "n_events"] + [f"p{p}" for p in PERCENTILES] + ["mean", "sd"])
            for gname, g in self.groups.items():
                w.writerow([gname, g.n_sessions, g.n_events]
                           + [g.length_percentiles[p] for p in PERCENTILES]
                           + [repr(g.length_mean), repr(g.length_sd)])
        written.append(path)

        path = directory / "event_distribution.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event"] + list(self.groups))
            for name in names:
                w.writerow([name] + [repr(g.event_distribution[name]) for g in self.groups.values()])
        written.append(path)

        matrices = {f"transitions_{k}": g.transitions for k, g in self.groups.items()}
        if self.transition_diff is not None:
            matrices["transitions_diff"] = self.transition_diff
        for stem, mat in matrices.items():
            path = directory / f"{stem}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["from\\to"] + names)
                for name, row in zip(names, mat):
                    w.writerow([name] + [repr(v) for v in row])
            written.append(path)
        return written


def transition_counts(sessions: Sequence[SymbolizedSession]) -> np.ndarray:
    counts = np.zeros((len(EVENT_CODES), len(EVENT_CODES)), dtype=np.int64)
    for s in sessions:
        for a, b in zip(s.symbols, s.symbols[1:]):
            counts[a - 1, b - 1] += 1
    return counts


def _group_stats(sessions: Sequence[SymbolizedSession]) -> GroupStats:
    lengths = sorted(len(s) for s in sessions)
    arr = np.asarray(lengths, dtype=np.float64)
    events = np.zeros(len(EVENT_CODES), dtype=np.int64)
    for s in sessions:
        for c in s.symbols:
            events[c - 1] += 1
    total = events.sum()
    counts = transition_counts(sessions)
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(row_sums > 0, counts / np.where(row_sums > 0, row_sums, 1), 0.0)
    return GroupStats(
        n_sessions=len(sessions),
        n_events=int(total),
        length_percentiles={p: nearest_rank(lengths, p) for p in PERCENTILES},
        length_mean=float(arr.mean()),
        length_sd=float(arr.std(ddof=0)),
        event_distribution={
            e.label: (float(events[e - 1] / total) if total else 0.0) for e in EventType
        },
        transitions=probs.tolist(),
        zero_rows=[int(c) for c, rs in zip(EVENT_CODES, row_sums[:, 0]) if rs == 0],
    )


def compute_stats(data: Corpus | Sequence[SymbolizedSession]) -> CorpusStats:
    """Table-C style length statistics plus event and transition distributions per label."""
    sessions = data.all_sessions() if isinstance(data, Corpus) else list(data)
    if not sessions:
        raise EmptyInput("cannot compute statistics of an empty set")
    stats = CorpusStats()
    stats.groups["ALL"] = _group_stats(sessions)
    for label in Label:
        members = [s for s in sessions if s.label is label]
        if members:
            stats.groups[label.value] = _group_stats(members)
    if "BUY" in stats.groups and "NOBUY" in stats.groups:
        diff = np.asarray(stats.groups["BUY"].transitions) - np.asarray(stats.groups["NOBUY"].transitions)
        stats.transition_diff = diff.tolist()
    return stats
