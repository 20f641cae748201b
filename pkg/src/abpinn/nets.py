"""Multi-layer perceptrons with tanh activations and Glorot initialization.

Every network in this library is an MLP mapping a coordinate vector (possibly
Fourier-embedded) to a single scalar.  Parameters live in one weight and one
bias ``ParamGroup`` per layer, so the trainer can schedule them per group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as ops
from .jets import Jet, stack
from .tape import ContractError, ParamGroup


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int = 1

    def __post_init__(self):
        if min(self.input_dim, self.hidden_layers, self.hidden_width) < 1:
            raise ContractError(f"all MLP dims must be >= 1, got {self}")
        if self.output_dim != 1:
            raise ContractError("only scalar-output networks are supported")

    @property
    def layer_dims(self):
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers
        return list(zip(dims, dims[1:] + [self.output_dim]))

    @property
    def param_count(self):
        return sum((fin + 1) * fout for fin, fout in self.layer_dims)


class Mlp:
    """tanh MLP; ``layers`` is a list of (weight group, bias group)."""

    def __init__(self, config: MlpConfig, layers):
        self.config = config
        self.layers = layers
        for (fin, fout), (w, b) in zip(config.layer_dims, layers):
            if w.shape != (fin, fout) or b.shape != (fout,):
                raise ContractError(
                    f"layer shape mismatch: expected {(fin, fout)}, got {w.shape}/{b.shape}"
                )

    @property
    def param_count(self):
        return sum(len(w) + len(b) for w, b in self.layers)

    def param_groups(self):
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def forward(self, inputs, tape=None):
        """Evaluate on a sequence of coordinate jets (or one stacked jet).

        Coordinate jets must share batch shape; their count must equal
        ``input_dim``.  Returns a scalar-shaped jet.
        """
        if isinstance(inputs, Jet):
            h = inputs
            width = np.shape(ops.value_of(h.value))[-1]
        else:
            inputs = list(inputs)
            width = len(inputs)
            h = stack(inputs)
        if width != self.config.input_dim:
            raise ContractError(
                f"expected {self.config.input_dim} inputs, got {width}"
            )
        n_layers = len(self.layers)
        for i, (w, b) in enumerate(self.layers):
            wv = tape.param(w) if tape is not None else w.array
            bv = tape.param(b) if tape is not None else b.array
            h = h.matmul(wv) + Jet.constant(bv)
            if i < n_layers - 1:
                h = h.tanh()
        return h.sum_last()  # (..., 1) -> (...)


def glorot_init(config: MlpConfig, rng_seed, name="mlp") -> Mlp:
    """Glorot-uniform weights, zero biases, reproducible from the seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    layers = []
    for i, (fin, fout) in enumerate(config.layer_dims):
        limit = np.sqrt(6.0 / (fin + fout))
        w = ParamGroup(f"{name}.w{i}", rng.uniform(-limit, limit, (fin, fout)), (fin, fout))
        b = ParamGroup(f"{name}.b{i}", np.zeros(fout), (fout,))
        layers.append((w, b))
    return Mlp(config, layers)
