"""Network building blocks on top of the autograd engine.

Layers take a numpy Generator at construction so initialization is a
pure function of the seed. Forward passes are deterministic except for
Dropout, which draws from the generator handed to it per call.
"""

import numpy as np

from .autograd import Tensor, stack


class Parameter(Tensor):
    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Base with recursive parameter discovery in attribute order."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for n, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(
                            prefix=f"{path}.{n}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_training(self, mode):
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_training(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(mode)
        if hasattr(self, "training"):
            self.training = mode


class Linear(Module):
    def __init__(self, in_features, out_features, rng, name="linear"):
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = Parameter(rng.uniform(-limit, limit,
                                            size=(in_features, out_features)),
                                name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_features), name=f"{name}.bias")

    def __call__(self, x):
        return x @ self.weight + self.bias


class Lstm(Module):
    """Single unidirectional layer over [T x B x in] sequences.

    The input projection for all timesteps is one batched matmul; only
    the hidden recurrence runs step by step. Gate order i, f, g, o with
    the forget gate biased open at init.
    """

    def __init__(self, in_features, hidden, rng, name="lstm"):
        self.hidden = hidden
        scale_x = np.sqrt(6.0 / (in_features + 4 * hidden))
        scale_h = np.sqrt(6.0 / (hidden + 4 * hidden))
        self.w_input = Parameter(
            rng.uniform(-scale_x, scale_x, size=(in_features, 4 * hidden)),
            name=f"{name}.w_input")
        self.w_hidden = Parameter(
            rng.uniform(-scale_h, scale_h, size=(hidden, 4 * hidden)),
            name=f"{name}.w_hidden")
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Parameter(bias, name=f"{name}.bias")

    def initial_state(self, batch):
        return (Tensor(np.zeros((batch, self.hidden))),
                Tensor(np.zeros((batch, self.hidden))))

    def __call__(self, x, state=None):
        num_frames, batch = x.shape[0], x.shape[1]
        h, c = state if state is not None else self.initial_state(batch)
        projected = x @ self.w_input  # T x B x 4h, one matmul
        size = self.hidden
        outputs = []
        for t in range(num_frames):
            z = projected[t] + h @ self.w_hidden + self.bias
            gate_in = z[:, :size].sigmoid()
            gate_forget = z[:, size:2 * size].sigmoid()
            cell_new = z[:, 2 * size:3 * size].tanh()
            gate_out = z[:, 3 * size:].sigmoid()
            c = gate_forget * c + gate_in * cell_new
            h = gate_out * c.tanh()
            outputs.append(h)
        return stack(outputs, axis=0), (h, c)


class Dropout(Module):
    def __init__(self, p):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.training = True

    def __call__(self, x, rng=None):
        if not self.training or self.p == 0.0:
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a generator")
        mask = (rng.uniform(size=x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(mask)


class RecurrentStack(Module):
    """num_layers Lstm layers with dropout between them."""

    def __init__(self, in_features, hidden, num_layers, rng, dropout=0.0,
                 name="stack"):
        self.layers = [Lstm(in_features if n == 0 else hidden, hidden, rng,
                            name=f"{name}.{n}") for n in range(num_layers)]
        self.drop = Dropout(dropout)

    def initial_state(self, batch):
        return [layer.initial_state(batch) for layer in self.layers]

    def __call__(self, x, states=None, rng=None):
        new_states = []
        out = x
        for n, layer in enumerate(self.layers):
            out, state = layer(out, states[n] if states else None)
            new_states.append(state)
            if n < len(self.layers) - 1:
                out = self.drop(out, rng)
        return out, new_states
