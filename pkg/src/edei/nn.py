"""Small float64 neural-network kernel with hand-written reverse-mode gradients.

Networks here are chains: every recorded op consumes the previous op's output,
so a :class:`Tape` is just a stack of backward closures. Each closure receives
the gradient w.r.t. its output, accumulates parameter gradients into a dict and
returns the gradient w.r.t. its input.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

Backward = Callable[[np.ndarray, dict], np.ndarray]


class ParameterStore:
    """Named float64 arrays with fixed shapes."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        self._flat: np.ndarray | None = None
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._arrays:
            raise KeyError(f"parameter {name!r} already exists")
        self._arrays[name] = np.array(value, dtype=np.float64)
        self._flat = None

    def flat(self) -> np.ndarray:
        """All parameters as one contiguous vector; the named arrays become views into it."""
        if self._flat is None:
            buf = np.concatenate([v.ravel() for v in self._arrays.values()]) if self._arrays else np.zeros(0)
            off = 0
            for k, v in self._arrays.items():
                self._arrays[k] = buf[off:off + v.size].reshape(v.shape)
                off += v.size
            self._flat = buf
        return self._flat

    def pack(self, grads: Mapping[str, np.ndarray]) -> np.ndarray:
        """Flatten a full gradient dict in parameter order."""
        return np.concatenate([np.ravel(grads[k]) for k in self._arrays]) if self._arrays else np.zeros(0)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._arrays[name].shape:
            raise ValueError(f"shape mismatch for {name!r}: {value.shape} vs {self._arrays[name].shape}")
        self._arrays[name][...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list[str]:
        return list(self._arrays)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._arrays.items()})

    def zeros(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def check_finite(self) -> None:
        if np.all(np.isfinite(self.flat())):
            return
        for k, v in self._arrays.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"parameter {k!r} is not finite")

    def prefixed(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}{k}": v for k, v in self._arrays.items()}


class Tape:
    def __init__(self):
        self._ops: list[Backward] = []
        self._used = False

    def record(self, fn: Backward) -> None:
        if self._used:
            raise RuntimeError("tape already consumed; run a new forward pass")
        self._ops.append(fn)

    def __len__(self) -> int:
        return len(self._ops)


def backward(tape: Tape, grad_output=1.0, grads: dict | None = None) -> tuple[dict, np.ndarray]:
    """Run the tape in reverse. Returns ``(param_grads, input_grad)``.

    ``grad_output`` defaults to 1 for a scalar loss. Gradients accumulate into
    ``grads`` when given, which lets several tapes share one dict.
    """
    if tape._used:
        raise RuntimeError("backward called twice on the same tape")
    tape._used = True
    grads = {} if grads is None else grads
    g = np.asarray(grad_output, dtype=np.float64)
    for fn in reversed(tape._ops):
        g = fn(g, grads)
    return grads, g


def _acc(grads: dict, name: str, value: np.ndarray) -> None:
    # callers hand over freshly allocated arrays, so no defensive copy
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def _rec(tape: Tape | None, fn: Backward) -> None:
    if tape is not None:
        tape.record(fn)


# ---------------------------------------------------------------------------
# initialisers
# ---------------------------------------------------------------------------

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_dense(store: ParameterStore, name: str, n_in: int, n_out: int, rng) -> None:
    store.add(f"{name}.W", glorot(rng, n_in, n_out))
    store.add(f"{name}.b", np.zeros(n_out))


def init_mlp(store: ParameterStore, prefix: str, sizes: list[int], rng) -> None:
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_dense(store, f"{prefix}{k}", a, b, rng)


def init_gru(store: ParameterStore, name: str, n_in: int, n_hidden: int, rng) -> None:
    for gate in ("z", "r", "n"):
        store.add(f"{name}.W{gate}", glorot(rng, n_in, n_hidden))
        store.add(f"{name}.U{gate}", glorot(rng, n_hidden, n_hidden))
        store.add(f"{name}.b{gate}", np.zeros(n_hidden))


def init_conv1x3(store: ParameterStore, name: str, rng) -> None:
    store.add(f"{name}.k", rng.uniform(-0.5, 0.5, size=3))
    store.add(f"{name}.b", np.zeros(()))


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def dense(p: ParameterStore, name: str, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    W, b = p[f"{name}.W"], p[f"{name}.b"]
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {W.shape[0]}")
    y = x @ W + b

    def back(dy, grads):
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        _acc(grads, f"{name}.W", x2.T @ dy2)
        _acc(grads, f"{name}.b", dy2.sum(axis=0))
        return dy @ W.T

    _rec(tape, back)
    return y


def relu(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    y = np.maximum(x, 0.0)
    if tape is not None:
        on = x > 0
        tape.record(lambda dy, grads: dy * on)
    return y


def sigmoid_fn(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    y = sigmoid_fn(x)
    _rec(tape, lambda dy, grads: dy * y * (1.0 - y))
    return y


def tanh(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    y = np.tanh(x)
    _rec(tape, lambda dy, grads: dy * (1.0 - y * y))
    return y


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None = None, tape: Tape | None = None) -> np.ndarray:
    """Softmax over the last axis; masked-out entries get probability 0."""
    z = logits if mask is None else np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(dy, grads):
        return p * (dy - (p * dy).sum(axis=-1, keepdims=True))

    _rec(tape, back)
    return p


def last_step(seq: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    def back(dy, grads):
        out = np.zeros_like(seq)
        out[-1] = dy
        return out

    _rec(tape, back)
    return seq[-1]


def conv1x3(p: ParameterStore, name: str, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Same-length 1-D convolution along the last axis with zero padding.

    ``y[i] = k[0]*x[i+1] + k[1]*x[i] + k[2]*x[i-1] + b`` (kernel flipped, as in
    a true convolution), so ``k = [1, 0, 0]`` shifts left and ``[0, 1, 0]`` is
    the identity.
    """
    k, b = p[f"{name}.k"], p[f"{name}.b"]
    if x.shape[-1] < 1:
        raise ValueError("conv1x3 needs at least one element")
    pad = [(0, 0)] * (x.ndim - 1) + [(1, 1)]
    xp = np.pad(x, pad)
    y = k[0] * xp[..., 2:] + k[1] * xp[..., 1:-1] + k[2] * xp[..., :-2] + b

    def back(dy, grads):
        _acc(grads, f"{name}.k", np.array([
            np.sum(dy * xp[..., 2:]), np.sum(dy * xp[..., 1:-1]), np.sum(dy * xp[..., :-2]),
        ]))
        _acc(grads, f"{name}.b", np.asarray(dy.sum()))
        dxp = np.zeros_like(xp)
        dxp[..., 2:] += k[0] * dy
        dxp[..., 1:-1] += k[1] * dy
        dxp[..., :-2] += k[2] * dy
        return dxp[..., 1:-1]

    _rec(tape, back)
    return y


def gru(
    p: ParameterStore,
    name: str,
    xs: np.ndarray,
    h0: np.ndarray | None = None,
    tape: Tape | None = None,
) -> np.ndarray:
    """Run a GRU over ``xs`` of shape (T, B, D); returns all hidden states (T, B, H).

    z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn), h' = (1 - z) n + z h.
    """
    Wz, Uz, bz = p[f"{name}.Wz"], p[f"{name}.Uz"], p[f"{name}.bz"]
    Wr, Ur, br = p[f"{name}.Wr"], p[f"{name}.Ur"], p[f"{name}.br"]
    Wn, Un, bn = p[f"{name}.Wn"], p[f"{name}.Un"], p[f"{name}.bn"]
    if xs.ndim != 3 or xs.shape[-1] != Wz.shape[0]:
        raise ValueError(f"{name}: expected (T, B, {Wz.shape[0]}) input, got {xs.shape}")
    T, B, _ = xs.shape
    H = Uz.shape[0]
    h = np.zeros((B, H)) if h0 is None else np.asarray(h0, dtype=np.float64)
    if h.shape != (B, H):
        raise ValueError(f"{name}: h0 shape {h.shape} != {(B, H)}")
    cache = []
    outs = np.empty((T, B, H))
    for t in range(T):
        x = xs[t]
        z = sigmoid_fn(x @ Wz + h @ Uz + bz)
        r = sigmoid_fn(x @ Wr + h @ Ur + br)
        rh = r * h
        n = np.tanh(x @ Wn + rh @ Un + bn)
        h_new = (1.0 - z) * n + z * h
        cache.append((x, h, z, r, rh, n))
        outs[t] = h_new
        h = h_new

    def back(douts, grads):
        dxs = np.zeros_like(xs)
        dh = np.zeros((B, H))
        g = {k: np.zeros_like(p[f"{name}.{k}"]) for k in ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")}
        for t in reversed(range(T)):
            x, hp, z, r, rh, n = cache[t]
            dh = dh + douts[t]
            dn = dh * (1.0 - z)
            dz = dh * (hp - n)
            dh_prev = dh * z
            dan = dn * (1.0 - n * n)
            g["Wn"] += x.T @ dan
            g["Un"] += rh.T @ dan
            g["bn"] += dan.sum(axis=0)
            drh = dan @ Un.T
            dr = drh * hp
            dh_prev += drh * r
            dar = dr * r * (1.0 - r)
            g["Wr"] += x.T @ dar
            g["Ur"] += hp.T @ dar
            g["br"] += dar.sum(axis=0)
            daz = dz * z * (1.0 - z)
            g["Wz"] += x.T @ daz
            g["Uz"] += hp.T @ daz
            g["bz"] += daz.sum(axis=0)
            dh_prev += dar @ Ur.T + daz @ Uz.T
            dxs[t] = dan @ Wn.T + dar @ Wr.T + daz @ Wz.T
            dh = dh_prev
        for k, v in g.items():
            _acc(grads, f"{name}.{k}", v)
        return dxs

    _rec(tape, back)
    return outs


def gru_forward(p: ParameterStore, name: str, xs: np.ndarray, h0=None) -> tuple[np.ndarray, np.ndarray]:
    outs = gru(p, name, xs, h0)
    return outs, outs[-1]


def mlp(
    p: ParameterStore,
    prefix: str,
    x: np.ndarray,
    n_layers: int,
    tape: Tape | None = None,
) -> np.ndarray:
    """Dense layers with ReLU between them and a linear output."""
    for k in range(n_layers):
        x = dense(p, f"{prefix}{k}", x, tape)
        if k < n_layers - 1:
            x = relu(x, tape)
    return x


# ---------------------------------------------------------------------------
# losses (scalar outputs)
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray, tape: Tape | None = None) -> float:
    diff = pred - target
    n = diff.size
    _rec(tape, lambda dy, grads: dy * 2.0 * diff / n)
    return float(np.mean(diff * diff))


def bce_with_logits(logits: np.ndarray, target: np.ndarray, tape: Tape | None = None,
                    weight: np.ndarray | None = None) -> float:
    w = np.ones_like(logits) if weight is None else np.broadcast_to(weight, logits.shape)
    n = logits.size
    loss = np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
    _rec(tape, lambda dy, grads: dy * w * (sigmoid_fn(logits) - target) / n)
    return float(np.sum(w * loss) / n)


def mean_scaled(x: np.ndarray, scale: float = 1.0, tape: Tape | None = None) -> float:
    n = x.size
    _rec(tape, lambda dy, grads: np.full(x.shape, dy * scale / n))
    return float(scale * np.mean(x))


def sum_squares(p: ParameterStore, tape: Tape) -> float:
    """Sum of squares of every parameter; input-free, used for kernel checks."""
    names = p.names()

    def back(dy, grads):
        for k in names:
            _acc(grads, k, 2.0 * dy * p[k])
        return np.zeros(())

    tape.record(back)
    return float(sum(np.sum(p[k] ** 2) for k in names))


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive-moment optimiser bound to one :class:`ParameterStore`.

    Updates whose gradients contain NaN/Inf are skipped and counted.
    """

    def __init__(self, params: ParameterStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = None):
        self.params = params
        params.flat()
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = params.zeros()
        self.v = params.zeros()
        self.t = 0
        self.skipped = 0
        self._mf: np.ndarray | None = None
        self._vf: np.ndarray | None = None

    def step(self, grads: Mapping[str, np.ndarray]) -> bool:
        for k, g in grads.items():
            if k not in self.params:
                raise KeyError(f"gradient for unknown parameter {k!r}")
            if np.shape(g) != self.params[k].shape:
                raise ValueError(f"gradient shape mismatch for {k!r}")
        if len(grads) == len(self.params):
            return self._step_flat(self.params.pack(grads))
        # partial gradients: only the named tensors move
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            return False
        scale = self._scale(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            g = g * scale
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.params.check_finite()
        return True

    def _scale(self, norm: float) -> float:
        if self.clip_norm is not None and norm > self.clip_norm:
            return self.clip_norm / norm
        return 1.0

    def _step_flat(self, g: np.ndarray) -> bool:
        if not np.all(np.isfinite(g)):
            self.skipped += 1
            return False
        if self._mf is None:
            self._mf = self.params.pack(self.m)
            self._vf = self.params.pack(self.v)
            off = 0
            for k, a in self.params.items():
                self.m[k] = self._mf[off:off + a.size].reshape(a.shape)
                self.v[k] = self._vf[off:off + a.size].reshape(a.shape)
                off += a.size
        g = g * self._scale(float(np.sqrt(g @ g)))
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        m, v = self._mf, self._vf
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        flat = self.params.flat()
        flat -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.params.check_finite()
        return True


def adam_step(params: ParameterStore, grads: Mapping[str, np.ndarray], opt: Adam | None = None,
              **hyper) -> Adam:
    """Functional wrapper: one Adam update, creating the optimiser state if needed."""
    opt = opt or Adam(params, **hyper)
    opt.step(grads)
    return opt


def grad_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
