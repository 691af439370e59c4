"""Numpy layers with explicit backward passes.

Every layer keeps the activations of its most recent ``forward`` call and
``backward`` consumes them, so a layer must be applied once per pass.
Sharing a layer across several inputs is done by folding them into the
batch axis. ``forward`` never reads cached state, which keeps inference
re-entrant.
"""

from __future__ import annotations

import numpy as np


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    lim = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-lim, lim, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}

    def sublayers(self) -> dict[str, "Layer"]:
        return {}

    def kinks(self) -> list[np.ndarray]:
        """Discrete state of the last forward (ReLU masks, argmax choices)."""
        out = []
        for layer in self.sublayers().values():
            out.extend(layer.kinks())
        return out


class Dense(Layer):
    """Affine map over the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": uniform_init(rng, n_in, (n_in, n_out)), "b": np.zeros(n_out)}

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.grads = {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}
        return dy @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        self._mask = mask
        return np.where(mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)

    def kinks(self):
        return [self._mask]


class Tanh(Layer):
    def forward(self, x):
        y = np.tanh(x)
        self._y = y
        return y

    def backward(self, dy):
        return dy * (1.0 - self._y**2)


class Identity(Layer):
    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


ACTIVATIONS = {"relu": ReLU, "tanh": Tanh, "identity": Identity}


def make_activation(name: str) -> Layer:
    try:
        return ACTIVATIONS[name]()
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class LayerNorm(Layer):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.params = {"gamma": np.ones(d), "beta": np.zeros(d)}

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._xhat, self._inv = xhat, inv
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy):
        xhat, inv = self._xhat, self._inv
        d = xhat.shape[-1]
        self.grads = {
            "gamma": (dy * xhat).reshape(-1, d).sum(axis=0),
            "beta": dy.reshape(-1, d).sum(axis=0),
        }
        dxhat = dy * self.params["gamma"]
        return inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention over axis 1 of a ``(B, L, d)`` input."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d, self.h, self.dh = d_model, n_heads, d_model // n_heads
        self.q = Dense(d_model, d_model, rng)
        self.k = Dense(d_model, d_model, rng)
        self.v = Dense(d_model, d_model, rng)
        self.o = Dense(d_model, d_model, rng)

    def sublayers(self):
        return {"q": self.q, "k": self.k, "v": self.v, "o": self.o}

    def _split(self, x):
        B, L, _ = x.shape
        return x.reshape(B, L, self.h, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, _, L, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, L, self.d)

    def forward(self, x):
        q = self._split(self.q.forward(x))
        k = self._split(self.k.forward(x))
        v = self._split(self.v.forward(x))
        scale = 1.0 / np.sqrt(self.dh)
        attn = softmax(q @ k.transpose(0, 1, 3, 2) * scale, axis=-1)
        self._q, self._k, self._v, self.attn = q, k, v, attn
        return self.o.forward(self._merge(attn @ v))

    def backward(self, dy):
        q, k, v, a = self._q, self._k, self._v, self.attn
        scale = 1.0 / np.sqrt(self.dh)
        do = self._split(self.o.backward(dy))
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        return (self.q.backward(self._merge(dq)) + self.k.backward(self._merge(dk))
                + self.v.backward(self._merge(dv)))


class EncoderBlock(Layer):
    """Post-norm transformer encoder block: attention and feed-forward, each with residual + LayerNorm."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator, activation: str = "relu"):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d_model, n_heads, rng)
        self.ln1 = LayerNorm(d_model)
        self.ff1 = Dense(d_model, d_ff, rng)
        self.act = make_activation(activation)
        self.ff2 = Dense(d_ff, d_model, rng)
        self.ln2 = LayerNorm(d_model)

    def sublayers(self):
        return {"attn": self.attn, "ln1": self.ln1, "ff1": self.ff1, "act": self.act, "ff2": self.ff2,
                "ln2": self.ln2}

    def forward(self, x):
        h = self.ln1.forward(x + self.attn.forward(x))
        return self.ln2.forward(h + self.ff2.forward(self.act.forward(self.ff1.forward(h))))

    def backward(self, dy):
        dz = self.ln2.backward(dy)
        dh = dz + self.ff1.backward(self.act.backward(self.ff2.backward(dz)))
        dr = self.ln1.backward(dh)
        return dr + self.attn.backward(dr)


class LSTM(Layer):
    """Single LSTM layer over ``(B, T, n_in)``; returns the full hidden sequence.

    One fused weight ``W`` of shape ``(n_in + h, 4h)`` and bias ``b`` of
    length ``4h``; gate order is input, forget, output, candidate.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.params = {"W": uniform_init(rng, n_in + hidden, (n_in + hidden, 4 * hidden)), "b": b}

    def forward(self, x):
        B, T, _ = x.shape
        H = self.hidden
        W, b = self.params["W"], self.params["b"]
        hs = np.zeros((B, T + 1, H))
        cs = np.zeros((B, T + 1, H))
        gates = np.zeros((B, T, 4 * H))
        zin = np.zeros((B, T, self.n_in + H))
        for t in range(T):
            z = np.concatenate([x[:, t], hs[:, t]], axis=1)
            zin[:, t] = z
            pre = z @ W + b
            g = np.empty_like(pre)
            g[:, :3 * H] = sigmoid(pre[:, :3 * H])
            g[:, 3 * H:] = np.tanh(pre[:, 3 * H:])
            gates[:, t] = g
            cs[:, t + 1] = g[:, H:2 * H] * cs[:, t] + g[:, :H] * g[:, 3 * H:]
            hs[:, t + 1] = g[:, 2 * H:3 * H] * np.tanh(cs[:, t + 1])
        self._zin, self._gates, self._cs = zin, gates, cs
        return hs[:, 1:]

    def backward(self, dy):
        zin, gates, cs = self._zin, self._gates, self._cs
        B, T, H = dy.shape
        W = self.params["W"]
        dW = np.zeros_like(W)
        db = np.zeros(4 * H)
        dx = np.zeros((B, T, self.n_in))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            g = gates[:, t]
            i, f, o, c_hat = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dh = dy[:, t] + dh_next
            dc = dc_next + dh * o * (1 - tc**2)
            dpre = np.concatenate([
                dc * c_hat * i * (1 - i),
                dc * cs[:, t] * f * (1 - f),
                dh * tc * o * (1 - o),
                dc * i * (1 - c_hat**2),
            ], axis=1)
            dW += zin[:, t].T @ dpre
            db += dpre.sum(axis=0)
            dz = dpre @ W.T
            dx[:, t] = dz[:, :self.n_in]
            dh_next = dz[:, self.n_in:]
            dc_next = dc * f
        self.grads = {"W": dW, "b": db}
        return dx


class MaxOver(Layer):
    """Elementwise max over one axis; the gradient goes to the arg-max."""

    def __init__(self, axis: int):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        idx = np.argmax(x, axis=self.axis)
        self._idx, self._shape = idx, x.shape
        return np.take_along_axis(x, np.expand_dims(idx, self.axis), self.axis).squeeze(self.axis)

    def backward(self, dy):
        dx = np.zeros(self._shape)
        np.put_along_axis(dx, np.expand_dims(self._idx, self.axis), np.expand_dims(dy, self.axis), self.axis)
        return dx

    def kinks(self):
        return [self._idx]


class MeanOver(Layer):
    """Average pooling over one axis (global average pooling over time)."""

    def __init__(self, axis: int):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=self.axis)

    def backward(self, dy):
        n = self._shape[self.axis]
        return np.broadcast_to(np.expand_dims(dy, self.axis) / n, self._shape).copy()


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, class_weight=None):
    """Mean class-weighted cross-entropy over a batch and its gradient w.r.t. logits."""
    p = softmax(logits, axis=1)
    n = logits.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    w = np.ones(n) if class_weight is None else np.asarray(class_weight, dtype=np.float64)[labels]
    picked = np.clip(p[np.arange(n), labels], 1e-300, None)
    loss = float(np.sum(w * -np.log(picked)) / n)
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= (w / n)[:, None]
    return loss, grad


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
