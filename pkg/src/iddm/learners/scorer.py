"""Scalar score functions over tuples of discrete indices.

Inputs are integer arrays of shape ``(n, n_blocks)``; block ``j`` holds an
index in ``[0, sizes[j])``. The tabular scorer keeps one parameter per joint
index. The MLP scorer one-hot encodes each block, concatenates them and runs
``tanh`` hidden layers into a linear scalar head.
"""
from __future__ import annotations

import numpy as np

from ..validation import check_index_batch

SIGNATURES = {
    "s": lambda S, A: (S,),
    "sa": lambda S, A: (S, A),
    "ss": lambda S, A: (S, S),
    "s_sa": lambda S, A: (S, S, A),  # (s, (s', a))
}


class Scorer:
    def __init__(self, sizes, kind="tabular", hidden=(64, 64), rng=None, init_scale=None):
        self.sizes = tuple(int(n) for n in sizes)
        self.kind = kind
        if kind == "tabular":
            self.hidden = ()
            self.params = np.zeros(int(np.prod(self.sizes)))
        elif kind == "mlp":
            self.hidden = tuple(int(h) for h in hidden)
            widths = (sum(self.sizes),) + self.hidden + (1,)
            self._shapes = []
            for i, (a, b) in enumerate(zip(widths, widths[1:])):
                self._shapes += [(a, b), (b,)]
            self.params = np.zeros(sum(int(np.prod(s)) for s in self._shapes))
            if rng is not None:
                self._init(rng, init_scale)
        else:
            raise ValueError(f"unknown scorer kind {kind!r}; expected 'tabular' or 'mlp'")

    @classmethod
    def for_signature(cls, signature, n_states, n_actions, **kwargs):
        try:
            sizes = SIGNATURES[signature](n_states, n_actions)
        except KeyError:
            raise ValueError(f"unknown signature {signature!r}; expected one of {sorted(SIGNATURES)}") from None
        return cls(sizes, **kwargs)

    def _init(self, rng, scale):
        for i, (W, shape) in enumerate(zip(self._layers(self.params), self._shapes)):
            if len(shape) == 2:
                s = np.sqrt(1.0 / shape[0]) if scale is None else scale
                W[...] = rng.normal(scale=s, size=shape)

    def _layers(self, flat):
        out, off = [], 0
        for shape in self._shapes:
            n = int(np.prod(shape))
            out.append(flat[off:off + n].reshape(shape))
            off += n
        return out

    @property
    def n_params(self):
        return self.params.size

    def _check(self, X):
        return check_index_batch(X, self.sizes, name="scorer input")

    def _flat_index(self, X):
        return np.ravel_multi_index(tuple(X.T), self.sizes)

    def _offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]])

    def _forward_mlp(self, X):
        layers = self._layers(self.params)
        cols = X + self._offsets()
        W0, b0 = layers[0], layers[1]
        z = W0[cols].sum(axis=1) + b0
        acts = [np.tanh(z)]
        for W, b in zip(layers[2:-2:2], layers[3:-2:2]):
            acts.append(np.tanh(acts[-1] @ W + b))
        out = acts[-1] @ layers[-2][:, 0] + layers[-1][0]
        return out, acts, cols

    def forward(self, X):
        X = self._check(X)
        if self.kind == "tabular":
            return self.params[self._flat_index(X)]
        return self._forward_mlp(X)[0]

    def backward(self, X, dout):
        """Gradient of ``sum_i dout[i] * f(X[i])`` with respect to ``params``."""
        X = self._check(X)
        dout = np.asarray(dout, dtype=np.float64).reshape(-1)
        if self.kind == "tabular":
            return np.bincount(self._flat_index(X), weights=dout, minlength=self.params.size)
        _, acts, cols = self._forward_mlp(X)
        layers = self._layers(self.params)
        grad = np.zeros_like(self.params)
        glayers = self._layers(grad)
        glayers[-2][:, 0] = acts[-1].T @ dout
        glayers[-1][0] = dout.sum()
        delta = np.outer(dout, layers[-2][:, 0]) * (1.0 - acts[-1] ** 2)
        for li in range(len(acts) - 1, 0, -1):
            W = layers[2 * li]
            glayers[2 * li][...] = acts[li - 1].T @ delta
            glayers[2 * li + 1][...] = delta.sum(axis=0)
            delta = (delta @ W.T) * (1.0 - acts[li - 1] ** 2)
        gW0 = glayers[0]
        for j in range(cols.shape[1]):
            np.add.at(gW0, cols[:, j], delta)
        glayers[1][...] = delta.sum(axis=0)
        return grad

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=np.int64).reshape(1, -1)
        return float(self.forward(x)[0]), self.backward(x, [1.0])


def scorer_eval(scorer: Scorer, x):
    """Value and exact parameter gradient of ``scorer`` at a single input tuple."""
    return scorer.value_and_grad(x)
