"""Minimal dense neural-network kernel with explicit forward/backward passes.

No autodiff graph: every layer implements its own backward pass, which keeps
training fully deterministic and makes central finite-difference checking of
every analytic gradient straightforward. Parameters live in a ParamSet that
also owns the gradient accumulators and Adam moment buffers.
"""

from __future__ import annotations

import base64
import json
from typing import Callable, Iterator

import numpy as np


class TrainingError(RuntimeError):
    """Raised when an update would apply a non-finite gradient."""


class Param:
    """A named weight array plus its gradient and optimizer state."""

    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, name: str, value: np.ndarray) -> None:
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParamSet:
    def __init__(self) -> None:
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self:
            p.grad[...] = 0.0

    def copy_values_from(self, other: "ParamSet") -> None:
        """Deep-copy parameter values (not optimizer state) from a twin set."""
        if self.names() != other.names():
            raise ValueError("parameter sets do not match")
        for name, p in self._params.items():
            p.value[...] = other[name].value

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            p.value[...] = state[name]


class Sgd:
    def __init__(self, lr: float) -> None:
        self.lr = lr

    def step(self, params: ParamSet) -> None:
        for p in params:
            _check_finite(p)
            p.value -= self.lr * p.grad
        params.zero_grads()


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self, params: ParamSet) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1**self.t
        correct2 = 1.0 - b2**self.t
        for p in params:
            _check_finite(p)
            p.m[...] = b1 * p.m + (1.0 - b1) * p.grad
            p.v[...] = b2 * p.v + (1.0 - b2) * p.grad**2
            m_hat = p.m / correct1
            v_hat = p.v / correct2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        params.zero_grads()


def _check_finite(p: Param) -> None:
    if not np.all(np.isfinite(p.grad)):
        raise TrainingError(f"non-finite gradient in parameter {p.name!r}")


def make_optimizer(kind: str, lr: float) -> Sgd | Adam:
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad**2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# Layers. forward() returns (output, cache); backward(dout, cache) accumulates
# parameter gradients and returns the gradient w.r.t. the layer input. Caches
# are per-call so one cell can be stepped through time.
# ---------------------------------------------------------------------------


class Affine:
    """y = x W + b, with fan-in scaled normal init."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
        scale = 1.0 / np.sqrt(n_in)
        self.W = params.add(f"{name}.W", rng.normal(0.0, scale, (n_in, n_out)))
        self.b = params.add(f"{name}.b", np.zeros(n_out))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if x.shape[1] != self.W.value.shape[0]:
            raise ValueError(
                f"affine input width {x.shape[1]} != {self.W.value.shape[0]}"
            )
        return x @ self.W.value + self.b.value, x

    def backward(self, dy: np.ndarray, x: np.ndarray) -> np.ndarray:
        self.W.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value.T


class Embedding:
    """Row lookup table; default init uniform(-0.01, 0.01)."""

    def __init__(
        self,
        params: ParamSet,
        name: str,
        n_rows: int,
        dim: int,
        rng: np.random.Generator,
        init_scale: float = 0.01,
    ) -> None:
        self.table = params.add(f"{name}.E", rng.uniform(-init_scale, init_scale, (n_rows, dim)))

    def forward(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx, dtype=np.intp)
        return self.table.value[idx], idx

    def backward(self, dvec: np.ndarray, idx: np.ndarray) -> None:
        np.add.at(self.table.grad, idx, dvec)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class RnnCell:
    """h_t = tanh(x W_xh + h_prev W_hh + b); recurrent init uniform(-0.08, 0.08)."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_hidden: int, rng: np.random.Generator) -> None:
        self.W_xh = params.add(f"{name}.W_xh", rng.uniform(-0.08, 0.08, (n_in, n_hidden)))
        self.W_hh = params.add(f"{name}.W_hh", rng.uniform(-0.08, 0.08, (n_hidden, n_hidden)))
        self.b = params.add(f"{name}.b", np.zeros(n_hidden))
        self.n_hidden = n_hidden

    def forward(self, x: np.ndarray, h_prev: np.ndarray) -> tuple[np.ndarray, tuple]:
        if x.shape[1] != self.W_xh.value.shape[0] or h_prev.shape[1] != self.n_hidden:
            raise ValueError("rnn cell shape mismatch")
        h = np.tanh(x @ self.W_xh.value + h_prev @ self.W_hh.value + self.b.value)
        return h, (x, h_prev, h)

    def backward(self, dh: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
        x, h_prev, h = cache
        da = dh * (1.0 - h * h)
        self.W_xh.grad += x.T @ da
        self.W_hh.grad += h_prev.T @ da
        self.b.grad += da.sum(axis=0)
        return da @ self.W_xh.value.T, da @ self.W_hh.value.T


class GruCell:
    """Gated recurrent unit: h_t = (1-z) * h_prev + z * h_candidate."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_hidden: int, rng: np.random.Generator) -> None:
        def u(shape):
            return rng.uniform(-0.08, 0.08, shape)

        self.W_xz = params.add(f"{name}.W_xz", u((n_in, n_hidden)))
        self.W_hz = params.add(f"{name}.W_hz", u((n_hidden, n_hidden)))
        self.b_z = params.add(f"{name}.b_z", np.zeros(n_hidden))
        self.W_xr = params.add(f"{name}.W_xr", u((n_in, n_hidden)))
        self.W_hr = params.add(f"{name}.W_hr", u((n_hidden, n_hidden)))
        self.b_r = params.add(f"{name}.b_r", np.zeros(n_hidden))
        self.W_xc = params.add(f"{name}.W_xc", u((n_in, n_hidden)))
        self.W_hc = params.add(f"{name}.W_hc", u((n_hidden, n_hidden)))
        self.b_c = params.add(f"{name}.b_c", np.zeros(n_hidden))
        self.n_hidden = n_hidden

    def forward(self, x: np.ndarray, h_prev: np.ndarray) -> tuple[np.ndarray, tuple]:
        if x.shape[1] != self.W_xz.value.shape[0] or h_prev.shape[1] != self.n_hidden:
            raise ValueError("gru cell shape mismatch")
        z = sigmoid(x @ self.W_xz.value + h_prev @ self.W_hz.value + self.b_z.value)
        r = sigmoid(x @ self.W_xr.value + h_prev @ self.W_hr.value + self.b_r.value)
        rh = r * h_prev
        c = np.tanh(x @ self.W_xc.value + rh @ self.W_hc.value + self.b_c.value)
        h = (1.0 - z) * h_prev + z * c
        return h, (x, h_prev, z, r, rh, c)

    def backward(self, dh: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
        x, h_prev, z, r, rh, c = cache
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        dc_pre = dc * (1.0 - c * c)
        self.W_xc.grad += x.T @ dc_pre
        self.W_hc.grad += rh.T @ dc_pre
        self.b_c.grad += dc_pre.sum(axis=0)
        drh = dc_pre @ self.W_hc.value.T
        dr = drh * h_prev
        dh_prev += drh * r

        dz_pre = dz * z * (1.0 - z)
        self.W_xz.grad += x.T @ dz_pre
        self.W_hz.grad += h_prev.T @ dz_pre
        self.b_z.grad += dz_pre.sum(axis=0)
        dh_prev += dz_pre @ self.W_hz.value.T

        dr_pre = dr * r * (1.0 - r)
        self.W_xr.grad += x.T @ dr_pre
        self.W_hr.grad += h_prev.T @ dr_pre
        self.b_r.grad += dr_pre.sum(axis=0)
        dh_prev += dr_pre @ self.W_hr.value.T

        dx = dc_pre @ self.W_xc.value.T + dz_pre @ self.W_xz.value.T + dr_pre @ self.W_xr.value.T
        return dx, dh_prev


class Dropout:
    """Inverted dropout: train-mode expectation equals the input; eval is identity."""

    def __init__(self, rate: float) -> None:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate

    def forward(
        self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, np.ndarray | None]:
        if not train or self.rate == 0.0:
            return x, None
        assert rng is not None, "train-mode dropout needs an rng"
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        return dy if mask is None else dy * mask


class Relu:
    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mask = x > 0
        return x * mask, mask

    def backward(self, dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return dy * mask


class DuelingHead:
    """State-value stream plus mean-centered advantage stream:
    Q = V + A - mean(A)."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_actions: int, rng: np.random.Generator) -> None:
        self.value = Affine(params, f"{name}.value", n_in, 1, rng)
        self.adv = Affine(params, f"{name}.adv", n_in, n_actions, rng)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        v, cv = self.value.forward(x)
        a, ca = self.adv.forward(x)
        q = v + a - a.mean(axis=1, keepdims=True)
        return q, (cv, ca)

    def backward(self, dq: np.ndarray, cache: tuple) -> np.ndarray:
        cv, ca = cache
        da = dq - dq.mean(axis=1, keepdims=True)
        dv = dq.sum(axis=1, keepdims=True)
        return self.value.backward(dv, cv) + self.adv.backward(da, ca)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of a single logit row against a class index.

    Returns the loss and d(loss)/d(logits) = softmax - onehot(target).
    """
    row = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= target < row.size:
        raise IndexError(f"target {target} out of range for {row.size} logits")
    p = softmax(row)
    loss = -float(np.log(p[target]))
    dlogits = p.copy()
    dlogits[target] -= 1.0
    return loss, dlogits.reshape(np.asarray(logits).shape)


def softmax_xent_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch of logit rows."""
    p = softmax(logits)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -float(np.mean(np.log(p[rows, targets])))
    dlogits = p.copy()
    dlogits[rows, targets] -= 1.0
    return loss, dlogits / n


def grad_check(
    params: ParamSet,
    loss_fn: Callable[[], float],
    eps: float = 1e-5,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Central finite-difference check of the gradients stored in ``params``.

    The caller must already have accumulated analytic gradients (one forward +
    backward, eval mode). ``loss_fn`` re-evaluates the loss forward-only and
    must be deterministic. Returns the max relative error over all checked
    entries; entries where both gradients are below 1e-8 count as agreeing.
    """
    worst = 0.0
    for p in params:
        flat_value = p.value.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        indices = np.arange(flat_value.size)
        if max_entries_per_param is not None and flat_value.size > max_entries_per_param:
            assert rng is not None, "subsampling needs an rng"
            indices = rng.choice(flat_value.size, size=max_entries_per_param, replace=False)
        for i in indices:
            original = flat_value[i]
            flat_value[i] = original + eps
            loss_plus = loss_fn()
            flat_value[i] = original - eps
            loss_minus = loss_fn()
            flat_value[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            analytic = flat_grad[i]
            denom = max(abs(numeric), abs(analytic))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: named parameters with shapes and row-major float64 payloads.
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_params(path: str, params: ParamSet, meta: dict | None = None) -> None:
    entries = []
    for p in params:
        entries.append(
            {
                "name": p.name,
                "shape": list(p.value.shape),
                "data": base64.b64encode(np.ascontiguousarray(p.value).tobytes()).decode("ascii"),
            }
        )
    doc = {"format_version": CHECKPOINT_VERSION, "meta": meta or {}, "params": entries}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_params(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    arrays: dict[str, np.ndarray] = {}
    for entry in doc["params"]:
        raw = base64.b64decode(entry["data"])
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
    return arrays, doc.get("meta", {})
