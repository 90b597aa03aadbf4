"""Differentiable function approximators used by the policy models.

Three building blocks: plain MLPs, a Deep-Sets encoder for opponent sets
(permutation invariant), and a single-head graph-attention layer with edge
features (permutation equivariant).  Reverse-mode gradients come from
torch autograd; `gradient` wraps it with a finiteness contract that names
the offending parameter segment.

Initialization is fan-in-scaled uniform driven by an explicit generator so
that identical seeds give bit-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import DimensionMismatchError, NonFiniteError

_ACTIVATIONS = {
    "tanh": torch.tanh,
    "relu": torch.relu,
    "identity": lambda x: x,
}


def _lexsort_rows(x: torch.Tensor) -> torch.Tensor:
    """Canonical (value-lexicographic) ordering of rows along dim -2.

    Returns index tensor with the trailing feature dim removed.  Used to
    fix a reduction order that depends only on values, so permutation
    invariance/equivariance holds bit-for-bit.
    """
    arr = x.detach().cpu().numpy()
    keys = tuple(arr[..., k] for k in reversed(range(arr.shape[-1])))
    order = np.lexsort(keys, axis=-1)
    return torch.from_numpy(np.ascontiguousarray(order)).to(x.device)


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple = (64, 64)
    out_dim: int = 1
    activation: str = "tanh"
    final_activation: str | None = None

    def __post_init__(self):
        widths = (self.in_dim, *self.hidden, self.out_dim)
        if any(w < 1 for w in widths):
            raise DimensionMismatchError(f"layer widths must be >= 1, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise DimensionMismatchError(f"unknown activation {self.activation!r}")
        if self.final_activation is not None and self.final_activation not in _ACTIVATIONS:
            raise DimensionMismatchError(
                f"unknown final activation {self.final_activation!r}"
            )


def init_linear_(layer: nn.Linear, gen: torch.Generator, scale: float | None = None):
    """Fan-in-scaled uniform init; `scale` overrides the bound when given."""
    bound = scale if scale is not None else 1.0 / np.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=gen)
        layer.bias.uniform_(-bound, bound, generator=gen)


class Mlp(nn.Module):
    """Affine + nonlinearity stack per an `MlpSpec`."""

    def __init__(self, spec: MlpSpec, gen: torch.Generator, out_scale: float | None = None):
        super().__init__()
        self.spec = spec
        widths = (spec.in_dim, *spec.hidden, spec.out_dim)
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        )
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            init_linear_(layer, gen, scale=out_scale if last else None)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.in_dim:
            raise DimensionMismatchError(
                f"input dim {x.shape[-1]} != expected {self.spec.in_dim}"
            )
        act = _ACTIVATIONS[self.spec.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        x = self.layers[-1](x)
        if self.spec.final_activation is not None:
            x = _ACTIVATIONS[self.spec.final_activation](x)
        return x


class DeepSetsEncoder(nn.Module):
    """h = rho(own_features || sum_j phi(set_element_j)).

    The sum over set elements makes the output invariant to their order;
    an empty set contributes a zero sum vector.
    """

    def __init__(self, own_dim: int, elem_dim: int, out_dim: int,
                 gen: torch.Generator, hidden: tuple = (128, 128)):
        super().__init__()
        self.phi = Mlp(MlpSpec(elem_dim, hidden, hidden[-1]), gen)
        self.rho = Mlp(MlpSpec(own_dim + hidden[-1], hidden, out_dim), gen)
        self.elem_dim = elem_dim

    def forward(self, own: torch.Tensor, elems: torch.Tensor) -> torch.Tensor:
        # own: (B, own_dim); elems: (B, K, elem_dim), K may be 0
        if elems.shape[-1] != self.elem_dim and elems.shape[-2] != 0:
            raise DimensionMismatchError(
                f"set element dim {elems.shape[-1]} != expected {self.elem_dim}"
            )
        if elems.shape[-2] == 0:
            pooled = own.new_zeros(*own.shape[:-1], self.phi.spec.out_dim)
        else:
            feats = self.phi(elems)
            # sum in a canonical element order so the pooled value is
            # bit-identical under any permutation of the input set
            order = _lexsort_rows(feats)
            feats = feats.gather(-2, order.unsqueeze(-1).expand_as(feats))
            pooled = feats.sum(dim=-2)
        return self.rho(torch.cat([own, pooled], dim=-1))


class GatLayer(nn.Module):
    """Single-head graph attention with edge features.

    z_i = sum_{j in N_i u {i}} alpha_ij * psi(h_j), with alpha the softmax
    over the neighborhood of a learned logit on (h_i || h_j || e_ij).
    Self-loops must be present in the adjacency.
    """

    def __init__(self, node_dim: int, edge_dim: int, out_dim: int,
                 gen: torch.Generator, hidden: tuple = (128, 128)):
        super().__init__()
        self.att = Mlp(MlpSpec(2 * node_dim + edge_dim, hidden, 1), gen)
        self.psi = Mlp(MlpSpec(node_dim, hidden, out_dim), gen)
        self.node_dim = node_dim
        self.edge_dim = edge_dim

    def _sorted_pieces(self, h, edge, adj):
        """Logits, per-node psi values, and the canonical neighbor order.

        Each node's neighborhood is processed in an order keyed on the
        neighbor features themselves (never on agent labels), which makes
        the softmax and the weighted sum bit-identical under relabeling.
        """
        n = h.shape[-2]
        if not bool(adj.diagonal().all()):
            raise DimensionMismatchError("every node needs its self-loop in adj")
        hi = h.unsqueeze(-2).expand(*h.shape[:-1], n, h.shape[-1])
        hj = h.unsqueeze(-3).expand(*h.shape[:-2], n, n, h.shape[-1])
        logits = self.att(torch.cat([hi, hj, edge], dim=-1)).squeeze(-1)
        logits = logits.masked_fill(~adj, float("-inf"))
        order = _lexsort_rows(torch.cat([hj, edge], dim=-1))      # (B, n, n)
        logits = logits.gather(-1, order)
        psi = self.psi(h)                                          # (B, n, dz)
        psi_j = psi.unsqueeze(-3).expand(*psi.shape[:-2], n, n, psi.shape[-1])
        psi_j = psi_j.gather(-2, order.unsqueeze(-1).expand_as(psi_j))
        return logits, psi_j, order

    def forward(self, h: torch.Tensor, edge: torch.Tensor,
                adj: torch.Tensor) -> torch.Tensor:
        # h: (B, n, dh); edge: (B, n, n, de); adj: (n, n) bool incl. self-loops
        logits, psi_j, _ = self._sorted_pieces(h, edge, adj)
        alpha = torch.softmax(logits, dim=-1)          # (B, n, n), rows sum to 1
        return (alpha.unsqueeze(-1) * psi_j).sum(dim=-2)

    def attention(self, h, edge, adj) -> torch.Tensor:
        """Normalized attention coefficients in original neighbor indexing."""
        logits, _, order = self._sorted_pieces(h, edge, adj)
        alpha = torch.softmax(logits, dim=-1)
        return alpha.gather(-1, order.argsort(dim=-1))


@dataclass
class ParameterVector:
    """Flat parameter array with a named segment index."""

    values: np.ndarray
    segments: list = field(default_factory=list)  # (name, offset, shape)

    def segment(self, name: str) -> np.ndarray:
        for seg_name, offset, shape in self.segments:
            if seg_name == name:
                size = int(np.prod(shape))
                return self.values[offset:offset + size].reshape(shape)
        raise KeyError(name)


def flatten_params(module: nn.Module) -> ParameterVector:
    """Named parameters concatenated in declaration order."""
    chunks, segments, offset = [], [], 0
    for name, p in module.named_parameters():
        arr = p.detach().cpu().numpy().ravel()
        segments.append((name, offset, tuple(p.shape)))
        chunks.append(arr)
        offset += arr.size
    values = np.concatenate(chunks) if chunks else np.zeros(0)
    return ParameterVector(values, segments)


def load_flat_params(module: nn.Module, vec: ParameterVector) -> None:
    with torch.no_grad():
        for name, p in module.named_parameters():
            p.copy_(torch.from_numpy(np.ascontiguousarray(vec.segment(name))).to(p.dtype))


def gradient(loss_fn: Callable[[], torch.Tensor],
             params: Sequence[tuple]) -> dict:
    """Reverse-mode gradient of a scalar loss w.r.t. named parameters.

    `params` is an iterable of (name, tensor) pairs, e.g.
    `module.named_parameters()`.  Raises NonFiniteError identifying the
    parameter segment if the loss or any gradient is not finite.
    """
    named = list(params)
    tensors = [p for _, p in named]
    loss = loss_fn()
    if loss.ndim != 0:
        raise DimensionMismatchError("loss must be a scalar")
    if not torch.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    out = {}
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in segment {name!r}")
        out[name] = g
    return out
