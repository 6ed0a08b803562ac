"""Small feed-forward networks with explicit reverse-mode gradients."""

from __future__ import annotations

import json
import logging

import numpy as np

log = logging.getLogger(__name__)

GRAD_CLIP = 10.0


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class MLP:
    """tanh hidden layers and a linear or softplus output layer.

    ``forward`` caches activations for a single input vector; ``backward``
    consumes the cache and returns (parameter grads, input grad).
    """

    def __init__(self, sizes, head="linear", rng=None, layers=None):
        if head not in ("linear", "softplus"):
            raise ValueError(f"unknown head {head!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.head = head
        if layers is not None:
            self.layers = [(np.array(W, dtype=float), np.array(b, dtype=float)) for W, b in layers]
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            self.layers = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                self.layers.append((rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out)))
        for (W, b), i, o in zip(self.layers, self.sizes[:-1], self.sizes[1:]):
            if W.shape != (i, o) or b.shape != (o,):
                raise ValueError("layer shapes do not match sizes")

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        acts = [x]
        pre = None
        for li, (W, b) in enumerate(self.layers):
            pre = acts[-1] @ W + b
            if li < len(self.layers) - 1:
                acts.append(np.tanh(pre))
        out = softplus(pre) if self.head == "softplus" else pre
        return out, (acts, pre)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        acts, pre = cache
        g = np.asarray(grad_out, dtype=float)
        if self.head == "softplus":
            g = g * sigmoid(pre)
        grads = [None] * len(self.layers)
        for li in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[li]
            grads[li] = (np.outer(acts[li], g), g.copy())
            g = W @ g
            if li > 0:
                g = g * (1.0 - acts[li] ** 2)
        return grads, g

    def zero_grads(self):
        return [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.layers]

    def copy(self):
        return MLP(self.sizes, self.head, layers=[(W.copy(), b.copy()) for W, b in self.layers])

    def flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def set_flat(self, v):
        v = np.asarray(v, dtype=float)
        pos = 0
        layers = []
        for W, b in self.layers:
            W2 = v[pos : pos + W.size].reshape(W.shape)
            pos += W.size
            b2 = v[pos : pos + b.size].copy()
            pos += b.size
            layers.append((W2.copy(), b2))
        if pos != v.size:
            raise ValueError("flat parameter vector has the wrong length")
        self.layers = layers

    def to_json(self):
        return {
            "sizes": list(self.sizes),
            "head": self.head,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["sizes"], obj.get("head", "linear"), layers=[(L["W"], L["b"]) for L in obj["layers"]])


def flatten_grads(grads):
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def add_grads(acc, grads, scale=1.0):
    for (aW, ab), (gW, gb) in zip(acc, grads):
        aW += scale * gW
        ab += scale * gb
    return acc


def sgd_step(net, grads, lr, clip=GRAD_CLIP):
    """Ascent step ``params += lr * grad`` with global-norm clipping.

    Returns the applied step as a flat vector (zeros when skipped).
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    flat = flatten_grads(grads)
    if not np.all(np.isfinite(flat)):
        log.warning("non-finite gradient; step skipped")
        return np.zeros_like(flat)
    norm = float(np.linalg.norm(flat))
    scale = clip / norm if clip is not None and norm > clip else 1.0
    step = lr * scale * flat
    net.set_flat(net.flat() + step)
    return step


class PolicyNet:
    """Cluster state (C x 5, flattened) -> tweet actions (C) and retweet actions (C x C).

    With ``tied`` the net emits only the C tweet actions and the retweet
    head reuses them.
    """

    def __init__(self, n_clusters, input_dim=None, hidden=(64, 64), tied=False, rng=None, mlp=None):
        self.n_clusters = int(n_clusters)
        self.tied = bool(tied)
        self.input_dim = int(input_dim if input_dim is not None else 5 * self.n_clusters)
        n_out = self.n_clusters if self.tied else self.n_clusters + self.n_clusters**2
        self.mlp = mlp if mlp is not None else MLP((self.input_dim, *hidden, n_out), "softplus", rng)

    def forward(self, x):
        out, cache = self.mlp.forward(np.ravel(x))
        C = self.n_clusters
        a_t = out[:C]
        a_r = a_t.copy() if self.tied else out[C:].reshape(C, C)
        return a_t, a_r, cache

    def backward(self, cache, g_t, g_r):
        if self.tied:
            g_out = np.asarray(g_t, dtype=float).copy()
        else:
            g_out = np.concatenate([g_t, np.ravel(g_r)])
        grads, _ = self.mlp.backward(cache, g_out)
        return grads

    def to_json(self):
        return {"n_clusters": self.n_clusters, "tied": self.tied, "input_dim": self.input_dim, **self.mlp.to_json()}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["n_clusters"], obj["input_dim"], tied=obj["tied"], mlp=MLP.from_json(obj))


class ValueNet:
    """User state (N x 5, flattened row-major) -> scalar value."""

    def __init__(self, n_users, hidden=(64,), rng=None, mlp=None):
        self.n_users = int(n_users)
        self.mlp = mlp if mlp is not None else MLP((5 * self.n_users, *hidden, 1), "linear", rng)

    def forward(self, s):
        out, cache = self.mlp.forward(np.ravel(s))
        return float(out[0]), cache

    def __call__(self, s):
        return self.forward(s)[0]

    def backward(self, cache, g):
        grads, g_in = self.mlp.backward(cache, np.array([g], dtype=float))
        return grads, g_in

    def to_json(self):
        return {"n_users": self.n_users, **self.mlp.to_json()}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["n_users"], mlp=MLP.from_json(obj))


def save_checkpoint(path, policy, value, meta):
    obj = {"theta": policy.to_json(), "phi": value.to_json(), "meta": dict(meta)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return PolicyNet.from_json(obj["theta"]), ValueNet.from_json(obj["phi"]), obj["meta"]
