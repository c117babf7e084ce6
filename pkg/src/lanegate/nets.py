"""Small dense networks with hand-written reverse-mode gradients.

Everything is float64 numpy. A network is a stack of fully connected
layers with tanh on every hidden layer and a linear output layer.
Gradients are exact vector-Jacobian products, so they can be checked
against central finite differences in tests.
"""

import numpy as np

__all__ = [
    "DenseNet",
    "GradientBuffer",
    "NonFiniteGradientError",
    "OptimizerState",
    "adam_step",
    "net_to_dict",
    "net_from_dict",
    "optimizer_to_dict",
    "optimizer_from_dict",
]


class NonFiniteGradientError(ValueError):
    """Raised when a gradient update would introduce NaN or inf."""


class DenseNet:
    """Fully connected network: tanh hidden layers, linear output.

    Weights are stored as (d_in, d_out) matrices so that a batch X of
    shape (n, d_in) propagates as X @ W + b.
    """

    def __init__(self, layer_dims: list[int], weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(layer_dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(layer_dims) - 1:
            raise ValueError("parameter count does not match layer_dims")
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (layer_dims[k], layer_dims[k + 1]) or b.shape != (layer_dims[k + 1],):
                raise ValueError(f"layer {k}: bad parameter shape {w.shape}, {b.shape}")
        self.layer_dims = list(layer_dims)
        self.weights = weights
        self.biases = biases

    @classmethod
    def create(cls, layer_dims: list[int], rng: np.random.Generator) -> "DenseNet":
        """Scaled uniform fan-in init: W ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), b = 0."""
        weights, biases = [], []
        for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(list(layer_dims), weights, biases)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live ones."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            if x.shape[0] != self.in_dim:
                raise ValueError(f"input dim {x.shape[0]}, expected {self.in_dim}")
        elif x.ndim == 2:
            if x.shape[1] != self.in_dim:
                raise ValueError(f"input dim {x.shape[1]}, expected {self.in_dim}")
        else:
            raise ValueError("input must be 1-D or 2-D")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the network. A 1-D input yields a 1-D output."""
        x = self._check_input(x)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k != last:
                h = np.tanh(h)
        return h[0] if squeeze else h

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass that keeps post-activation values for backward().

        The cache holds [h_0, h_1, ..., h_{L-1}] where h_0 is the input
        batch and h_k the activation feeding layer k.
        """
        x = self._check_input(x)
        if x.ndim == 1:
            x = x[None, :]
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k != last:
                h = np.tanh(h)
                cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], upstream: np.ndarray) -> "GradientBuffer":
        """Accumulate d(sum_i upstream_i . y_i)/d(params) for a cached batch.

        upstream has the shape of the forward output, (n, d_out).
        """
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        if upstream.shape != (cache[0].shape[0], self.out_dim):
            raise ValueError(f"upstream shape {upstream.shape} does not match batch")
        d_weights = [None] * len(self.weights)
        d_biases = [None] * len(self.weights)
        delta = upstream
        for k in range(len(self.weights) - 1, -1, -1):
            h_in = cache[k]
            d_weights[k] = h_in.T @ delta
            d_biases[k] = delta.sum(axis=0)
            if k > 0:
                # tanh'(z) expressed through the cached activation value
                delta = (delta @ self.weights[k].T) * (1.0 - h_in * h_in)
        return GradientBuffer(d_weights, d_biases)


class GradientBuffer:
    """Parameter-shaped gradient arrays for one DenseNet."""

    def __init__(self, d_weights: list[np.ndarray], d_biases: list[np.ndarray]):
        self.d_weights = d_weights
        self.d_biases = d_biases

    def arrays(self) -> list[np.ndarray]:
        out = []
        for dw, db in zip(self.d_weights, self.d_biases):
            out.append(dw)
            out.append(db)
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


class OptimizerState:
    """Adam state over a fixed list of parameter arrays.

    kind "adam" is standard Adam (beta1=0.9, beta2=0.999, eps=1e-8);
    kind "sgd" disables the moment estimates and applies plain descent
    theta' = theta - lr * g.
    """

    def __init__(self, templates: list[np.ndarray], lr: float, kind: str = "adam",
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.lr = float(lr)
        self.kind = kind
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(a) for a in templates]
        self.v = [np.zeros_like(a) for a in templates]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update params in place by one descent step on grads."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter list does not match optimizer state")
        for g in grads:
            if not np.isfinite(g).all():
                raise NonFiniteGradientError("non-finite gradient entries")
        self.step_count += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(net: DenseNet, grads: GradientBuffer, opt: OptimizerState) -> DenseNet:
    """Apply one optimizer step to a whole network; returns the same object."""
    opt.step(net.parameters(), grads.arrays())
    return net


def net_to_dict(net: DenseNet) -> dict:
    """Plain-data form: explicit dims plus row-major parameter lists."""
    return {
        "layer_dims": list(net.layer_dims),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d: dict) -> DenseNet:
    dims = [int(v) for v in d["layer_dims"]]
    weights = [np.asarray(w, dtype=np.float64) for w in d["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    return DenseNet(dims, weights, biases)


def optimizer_to_dict(opt: OptimizerState) -> dict:
    return {
        "kind": opt.kind,
        "lr": opt.lr,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "step_count": opt.step_count,
        "m": [a.tolist() for a in opt.m],
        "v": [a.tolist() for a in opt.v],
    }


def optimizer_from_dict(d: dict) -> OptimizerState:
    templates = [np.asarray(a, dtype=np.float64) for a in d["m"]]
    opt = OptimizerState(templates, lr=d["lr"], kind=d["kind"],
                         beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"])
    opt.m = templates
    opt.v = [np.asarray(a, dtype=np.float64) for a in d["v"]]
    opt.step_count = int(d["step_count"])
    return opt
