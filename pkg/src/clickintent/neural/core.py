"""Single-layer LSTM with masking, output heads, Adam and an early-stopping loop.

Everything is float64 numpy. Sequences are stored time-major ``(T, B)`` with
PAD (0) after each sequence's true length. At PAD positions the hidden and
cell states are carried through unchanged, so padding never alters an
output, a loss or a gradient.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.special import expit

from ..domain import N_TOKENS, PAD, FormatError, ShapeMismatch

FORMAT_VERSION = 1
PARAM_NAMES = ("W", "U", "b", "V", "c")


def init_params(rng: np.random.Generator, hidden: int, output: int, input_size: int = N_TOKENS) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; zero biases except forget gate = 1.

    Gate blocks are stacked as [input, forget, output, candidate].
    """
    bound = 1.0 / math.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return {
        "W": rng.uniform(-bound, bound, size=(4 * hidden, input_size)),
        "U": rng.uniform(-bound, bound, size=(4 * hidden, hidden)),
        "b": b,
        "V": rng.uniform(-bound, bound, size=(hidden, output)),
        "c": np.zeros(output),
    }


def check_shapes(params: dict[str, np.ndarray]) -> tuple[int, int, int]:
    try:
        four_h, n_in = params["W"].shape
        hidden = four_h // 4
        n_out = params["V"].shape[1]
        ok = (
            four_h == 4 * hidden
            and params["U"].shape == (four_h, hidden)
            and params["b"].shape == (four_h,)
            and params["V"].shape == (hidden, n_out)
            and params["c"].shape == (n_out,)
        )
    except (KeyError, ValueError, IndexError):
        ok = False
    if not ok:
        raise ShapeMismatch("inconsistent LSTM parameter shapes")
    return n_in, hidden, n_out


@dataclass
class Batch:
    tokens: np.ndarray            # (T, B) int, time-major, PAD-filled
    lengths: np.ndarray           # (B,)
    labels: np.ndarray | None = None   # (B,) float in {0, 1}
    targets: np.ndarray | None = None  # (T, B) int, PAD where no target

    @property
    def mask(self) -> np.ndarray:
        return self.tokens != PAD


def pad_sequences(seqs: Sequence[Sequence[int]], width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if (lengths < 1).any():
        raise ShapeMismatch("empty sequence in batch")
    width = int(lengths.max()) if width is None else width
    if width < lengths.max():
        raise ShapeMismatch("pad width shorter than longest sequence")
    out = np.full((width, len(seqs)), PAD, dtype=np.int64)
    for j, s in enumerate(seqs):
        out[: len(s), j] = s
    return out, lengths


# --------------------------------------------------------------------------
# LSTM layer


@dataclass
class LSTMCache:
    tokens: np.ndarray
    mask: np.ndarray
    hs: np.ndarray       # h_t after step t (carried at PAD)
    h_prev: np.ndarray
    c_prev: np.ndarray
    acts: np.ndarray     # post-activation gates [i, f, o, g]
    tanh_c: np.ndarray


def lstm_forward(params: dict[str, np.ndarray], tokens: np.ndarray) -> LSTMCache:
    """Run the recurrence over one-hot ``tokens`` of shape (T, B)."""
    n_in, H, _ = check_shapes(params)
    if tokens.ndim != 2:
        raise ShapeMismatch("tokens must be a (T, B) matrix")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= n_in):
        raise ShapeMismatch(f"token id outside one-hot width {n_in}")
    T, B = tokens.shape
    mask = tokens != PAD
    U_T = params["U"].T
    # one-hot input times W is a column gather
    xw = params["W"].T[tokens] + params["b"]
    hs = np.empty((T, B, H))
    h_prev = np.empty((T, B, H))
    c_prev = np.empty((T, B, H))
    acts = np.empty((T, B, 4 * H))
    tanh_c = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        h_prev[t] = h
        c_prev[t] = c
        z = xw[t] + h @ U_T
        a = acts[t]
        a[:, : 3 * H] = expit(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c_new = a[:, H : 2 * H] * c + a[:, :H] * a[:, 3 * H :]
        tc = np.tanh(c_new)
        tanh_c[t] = tc
        m = mask[t][:, None]
        c = np.where(m, c_new, c)
        h = np.where(m, a[:, 2 * H : 3 * H] * tc, h)
        hs[t] = h
    return LSTMCache(tokens, mask, hs, h_prev, c_prev, acts, tanh_c)


def lstm_backward(params: dict[str, np.ndarray], cache: LSTMCache, d_hs: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagation through time.

    ``d_hs[t]`` is the loss gradient flowing into h_t from the output head.
    Returns gradients for W, U and b; masked positions contribute nothing.
    """
    n_in, H, _ = check_shapes(params)
    T, B = cache.tokens.shape
    U = params["U"]
    dz_all = np.zeros((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        m = cache.mask[t][:, None]
        a = cache.acts[t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = cache.tanh_c[t]
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cache.c_prev[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dz_all[t] = np.where(m, dz, 0.0)
        dh_next = np.where(m, dz_all[t] @ U, dh)
        dc_next = np.where(m, dc * f, dc_next)

    valid = cache.mask
    dz_v = dz_all[valid]
    onehot = np.zeros((dz_v.shape[0], n_in))
    onehot[np.arange(dz_v.shape[0]), cache.tokens[valid]] = 1.0
    return {
        "W": dz_v.T @ onehot,
        "U": dz_v.T @ cache.h_prev[valid],
        "b": dz_v.sum(axis=0),
    }


# --------------------------------------------------------------------------
# losses and heads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), targets].sum() / n
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return float(loss), grad / n


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels."""
    n = logits.shape[0]
    loss = (np.logaddexp(0.0, logits) - labels * logits).sum() / n
    return float(loss), (expit(logits) - labels) / n


def lm_loss_and_grads(params: dict[str, np.ndarray], batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    """Next-token cross-entropy averaged over every non-PAD target."""
    cache = lstm_forward(params, batch.tokens)
    valid = cache.mask
    h_v = cache.hs[valid]
    logits = h_v @ params["V"] + params["c"]
    loss, d_logits = softmax_cross_entropy(logits, batch.targets[valid])
    d_hs = np.zeros_like(cache.hs)
    d_hs[valid] = d_logits @ params["V"].T
    grads = lstm_backward(params, cache, d_hs)
    grads["V"] = h_v.T @ d_logits
    grads["c"] = d_logits.sum(axis=0)
    return loss, grads


def pool(cache: LSTMCache, lengths: np.ndarray, pooling: str) -> np.ndarray:
    if pooling == "last":
        # states are frozen at PAD, so the final column holds each last real step
        return cache.hs[-1].copy()
    if pooling == "avg":
        acc = np.zeros(cache.hs.shape[1:])
        for t in range(cache.hs.shape[0]):
            acc = acc + np.where(cache.mask[t][:, None], cache.hs[t], 0.0)
        return acc / lengths[:, None]
    raise ValueError(f"unknown pooling {pooling!r}")


def s2l_logits(params: dict[str, np.ndarray], tokens: np.ndarray, lengths: np.ndarray, pooling: str) -> np.ndarray:
    cache = lstm_forward(params, tokens)
    return (pool(cache, lengths, pooling) @ params["V"] + params["c"])[:, 0]


def s2l_loss_and_grads(params: dict[str, np.ndarray], batch: Batch, pooling: str) -> tuple[float, dict[str, np.ndarray]]:
    cache = lstm_forward(params, batch.tokens)
    pooled = pool(cache, batch.lengths, pooling)
    logits = (pooled @ params["V"] + params["c"])[:, 0]
    loss, d_logits = bce_with_logits(logits, batch.labels)
    d_pooled = d_logits[:, None] @ params["V"].T
    d_hs = np.zeros_like(cache.hs)
    if pooling == "last":
        d_hs[-1] = d_pooled
    else:
        share = d_pooled / batch.lengths[:, None]
        for t in range(d_hs.shape[0]):
            d_hs[t] = np.where(cache.mask[t][:, None], share, 0.0)
    grads = lstm_backward(params, cache, d_hs)
    grads["V"] = pooled.T @ d_logits[:, None]
    grads["c"] = np.array([d_logits.sum()])
    return loss, grads


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    n_checked: int

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def grad_check(loss_fn: Callable[[dict[str, np.ndarray]], float], params: dict[str, np.ndarray],
               analytic: dict[str, np.ndarray], h: float = 1e-5, floor: float = 1e-6) -> GradCheckReport:
    """Compare ``analytic`` gradients with central differences of ``loss_fn``.

    Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor keeps
    entries whose true gradient is ~0 from dividing roundoff by roundoff.
    """
    per_param = {}
    n_checked = 0
    for name, p in params.items():
        worst = 0.0
        flat = p.reshape(-1)
        grad = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn(params)
            flat[idx] = orig - h
            down = loss_fn(params)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(grad[idx]), abs(numeric), floor)
            worst = max(worst, abs(grad[idx] - numeric) / denom)
            n_checked += 1
        per_param[name] = worst
    return GradCheckReport(max(per_param.values(), default=0.0), per_param, n_checked)


def random_gradcheck_suite(n_configs: int = 100, seed: int = 0, h: float = 1e-5,
                           max_hidden: int = 5, max_steps: int = 6, max_batch: int = 3) -> list[dict]:
    """Gradient checks of both heads on random tiny networks.

    Configurations cycle through the LM head and the two S2L poolings; every
    batch mixes sequence lengths so masking is exercised.
    """
    rng = np.random.default_rng(seed)
    heads = ("lm", "s2l-last", "s2l-avg")
    results = []
    for k in range(n_configs):
        head = heads[k % 3]
        H = int(rng.integers(1, max_hidden + 1))
        T = int(rng.integers(1, max_steps + 1))
        B = int(rng.integers(1, max_batch + 1))
        lengths = rng.integers(1, T + 1, size=B)
        lengths[0] = T
        params = init_params(rng, H, N_TOKENS if head == "lm" else 1)
        # push weights off the tiny-init regime so every gate is exercised
        for name in params:
            params[name] += rng.normal(0.0, 0.5, size=params[name].shape)
        seqs = [rng.integers(1, N_TOKENS, size=n).tolist() for n in lengths]
        tokens, lens = pad_sequences(seqs, width=T)
        if head == "lm":
            targets = np.where(tokens != PAD, rng.integers(1, N_TOKENS, size=tokens.shape), PAD)
            batch = Batch(tokens, lens, targets=targets)
            fn = lambda p, b=batch: lm_loss_and_grads(p, b)[0]
            _, grads = lm_loss_and_grads(params, batch)
        else:
            pooling = head.split("-")[1]
            batch = Batch(tokens, lens, labels=rng.integers(0, 2, size=B).astype(np.float64))
            fn = lambda p, b=batch, pl=pooling: s2l_loss_and_grads(p, b, pl)[0]
            _, grads = s2l_loss_and_grads(params, batch, pooling)
        report = grad_check(fn, params, grads, h=h)
        results.append({"head": head, "hidden": H, "steps": T, "batch": B,
                        "max_rel_error": report.max_rel_error})
    return results


# --------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 10
    max_epochs: int = 50

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float


class Trainable(Protocol):
    params: dict[str, np.ndarray]

    def make_batch(self, items: Sequence) -> Batch: ...

    def loss_and_grads(self, batch: Batch) -> tuple[float, dict[str, np.ndarray]]: ...

    def accuracy(self, items: Sequence) -> float: ...


@dataclass
class TrainResult:
    epochs: list[EpochLog]
    best_epoch: int
    best_val_accuracy: float


def train_loop(model: Trainable, train_items: Sequence, val_items: Sequence, *, lr: float, batch_size: int,
               rng: np.random.Generator, stop: EarlyStopConfig | None = None) -> TrainResult:
    """Adam mini-batch training with early stopping on validation accuracy.

    The epoch order is reshuffled from ``rng`` every epoch. Training halts once
    accuracy has not strictly improved for ``patience`` epochs; the model is
    left holding the parameters of its best validation epoch.
    """
    stop = stop or EarlyStopConfig()
    state = AdamState(lr=lr)
    best_params = copy.deepcopy(model.params)
    best_acc, best_epoch, stale = -math.inf, 0, 0
    log: list[EpochLog] = []
    n = len(train_items)
    for epoch in range(1, stop.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = model.make_batch([train_items[i] for i in order[start : start + batch_size]])
            loss, grads = model.loss_and_grads(batch)
            adam_step(model.params, grads, state)
            losses.append(loss)
        acc = float(model.accuracy(val_items))
        log.append(EpochLog(epoch, float(np.mean(losses)) if losses else 0.0, acc))
        if acc > best_acc:
            best_acc, best_epoch, stale = acc, epoch, 0
            best_params = copy.deepcopy(model.params)
        else:
            stale += 1
            if stale >= stop.patience:
                break
    model.params = best_params
    return TrainResult(log, best_epoch, best_acc)


# --------------------------------------------------------------------------
# checkpoints


def params_to_dict(params: dict[str, np.ndarray]) -> dict:
    return {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()} for name, arr in params.items()}


def params_from_dict(doc: dict) -> dict[str, np.ndarray]:
    try:
        params = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc.items()
        }
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad parameter block: {exc}") from None
    check_shapes(params)
    return params
