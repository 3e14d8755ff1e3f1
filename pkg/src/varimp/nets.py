"""Small fully-connected networks with hand-written reverse-mode gradients.

Rectified-linear hidden layers, linear output.  The forward pass returns
the cache the backward pass needs; gradients are exact, which the test
suite pins against central finite differences.  An adaptive-moment
optimizer with the usual decay constants drives the updates.
"""

import numpy as np


class Mlp:
    """weights[i]: (fan_in, fan_out); ReLU between layers, linear output."""

    def __init__(self, sizes, rng: np.random.Generator = None, dtype=np.float64):
        self.sizes = tuple(int(s) for s in sizes)
        self.dtype = np.dtype(dtype)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            if rng is None:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
                b = rng.uniform(-bound, bound, fan_out)
            self.weights.append(w.astype(self.dtype))
            self.biases.append(b.astype(self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        out = Mlp(self.sizes, rng=None, dtype=self.dtype)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def mlp_forward(net: Mlp, x: np.ndarray):
    """Run the stack; returns (output, cache) with cache holding the layer
    inputs needed for the backward pass."""
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.sizes[0]:
        raise ValueError(f"input dim {x.shape[1]} != expected {net.sizes[0]}")
    inputs = [x]
    h = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        inputs.append(h)
    return h, inputs


def mlp_backward(net: Mlp, cache, output_grad: np.ndarray):
    """Exact gradients of sum(output * output_grad) w.r.t. parameters.

    Returns (grads, input_grad) where grads is a list of (dW, db) per
    layer and input_grad has the shape of the forward input.
    """
    g = np.asarray(output_grad, dtype=net.dtype)
    if g.ndim == 1:
        g = g[None, :]
    grads = [None] * net.n_layers
    last = net.n_layers - 1
    for i in range(last, -1, -1):
        h_in = cache[i]
        if i != last:
            # cache[i + 1] holds the post-ReLU activation of this layer
            g = g * (cache[i + 1] > 0.0)
        grads[i] = (h_in.T @ g, g.sum(axis=0))
        g = g @ net.weights[i].T
    return grads, g


def mlp_input_grad(net: Mlp, cache, output_grad: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the forward input only (no parameter gradients).

    Cheaper than mlp_backward when the weights are not being updated,
    e.g. differentiating a frozen critic w.r.t. the action.
    """
    g = np.asarray(output_grad, dtype=net.dtype)
    if g.ndim == 1:
        g = g[None, :]
    last = net.n_layers - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (cache[i + 1] > 0.0)
        g = g @ net.weights[i].T
    return g


class Adam:
    """First-order adaptive-moment updates with standard decay constants."""

    def __init__(self, net: Mlp, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]

    def update(self, net: Mlp, grads, lr: float) -> None:
        """grads as returned by mlp_backward for the same net."""
        self.t += 1
        flat = []
        for dw, db in grads:
            flat.append(dw)
            flat.append(db)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(net.parameters(), flat, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m],
                "v": [v.copy() for v in self.v]}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.asarray(m).copy() for m in state["m"]]
        self.v = [np.asarray(v).copy() for v in state["v"]]
