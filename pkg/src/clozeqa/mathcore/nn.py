"""Neural primitives shared by the readers: softmax, GRU, one-hidden-layer MLP.

The GRU runs as a single fused graph node (the time loop and its BPTT
live inside the op) to keep graph overhead off the per-token path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, _make, _sigmoid, hstack2


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Tensor:
    """Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], trainable."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def softmax(v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Probability vector over the unmasked entries of a rank-1 tensor.

    Masked-out positions are excluded from the normalizing sum and come
    out exactly 0, so no attention mass leaks across them.
    """
    if v.data.ndim != 1:
        raise ShapeError("softmax: rank-1 only")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise ShapeError("softmax: mask length mismatch")
        if not mask.any():
            raise ValueError("empty softmax support")
    x = v.data
    if mask is None:
        shifted = x - x.max()
        e = np.exp(shifted)
    else:
        shifted = x - x[mask].max()
        e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum()

    def backward(g):
        return (out * (g - np.dot(g, out)),)

    return _make(out, (v,), backward)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor."""
    if m.data.ndim != 2:
        raise ShapeError("softmax_rows: rank-2 only")
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=1, keepdims=True)),)

    return _make(out, (m,), backward)


@dataclass
class GruParams:
    """Update/reset/candidate gate parameters for one GRU direction."""

    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor
    input_dim: int
    hidden_dim: int

    def __post_init__(self):
        d_in, d = self.input_dim, self.hidden_dim
        for name in ("w_update", "w_reset", "w_cand"):
            if getattr(self, name).shape != (d, d_in):
                raise ShapeError(f"GruParams.{name}: expected {(d, d_in)}")
        for name in ("u_update", "u_reset", "u_cand"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"GruParams.{name}: expected {(d, d)}")
        for name in ("b_update", "b_reset", "b_cand"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"GruParams.{name}: expected {(d,)}")

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruParams":
        def w():
            return uniform_init(rng, input_dim, (hidden_dim, input_dim))

        def u():
            return uniform_init(rng, hidden_dim, (hidden_dim, hidden_dim))

        def b():
            return Tensor(np.zeros(hidden_dim), requires_grad=True)

        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b(), input_dim, hidden_dim)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        def w():
            return Tensor(np.zeros((hidden_dim, input_dim)), requires_grad=True)

        def u():
            return Tensor(np.zeros((hidden_dim, hidden_dim)), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden_dim), requires_grad=True)

        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b(), input_dim, hidden_dim)

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_update": self.w_update,
            f"{prefix}.u_update": self.u_update,
            f"{prefix}.b_update": self.b_update,
            f"{prefix}.w_reset": self.w_reset,
            f"{prefix}.u_reset": self.u_reset,
            f"{prefix}.b_reset": self.b_reset,
            f"{prefix}.w_cand": self.w_cand,
            f"{prefix}.u_cand": self.u_cand,
            f"{prefix}.b_cand": self.b_cand,
        }


def gru_sequence(inputs: Tensor, params: GruParams, reverse: bool = False) -> Tensor:
    """Run one GRU direction over a (seq_len x input_dim) tensor.

    Output row t is the hidden state after consuming input t. With
    ``reverse=True`` the sequence is consumed back to front and the output
    re-reversed, so rows stay aligned with input positions. The initial
    hidden state is zero.
    """
    if inputs.data.ndim != 2:
        raise ShapeError("gru_sequence: inputs must be seq_len x input_dim")
    seq_len, d_in = inputs.shape
    if seq_len < 1:
        raise ShapeError("gru_sequence: empty sequence")
    if d_in != params.input_dim:
        raise ShapeError(f"gru_sequence: input dim {d_in} != params dim {params.input_dim}")
    d = params.hidden_dim
    p = params
    wz, uz, bz = p.w_update.data, p.u_update.data, p.b_update.data
    wr, ur, br = p.w_reset.data, p.u_reset.data, p.b_reset.data
    wc, uc, bc = p.w_cand.data, p.u_cand.data, p.b_cand.data

    x = inputs.data[::-1] if reverse else inputs.data
    # input projections for all steps at once
    ax_z = x @ wz.T + bz
    ax_r = x @ wr.T + br
    ax_c = x @ wc.T + bc

    h = np.zeros(d)
    hs = np.empty((seq_len, d))
    h_prev = np.empty((seq_len, d))
    zs = np.empty((seq_len, d))
    rs = np.empty((seq_len, d))
    cs = np.empty((seq_len, d))
    rh = np.empty((seq_len, d))
    for t in range(seq_len):
        h_prev[t] = h
        z = _sigmoid(ax_z[t] + uz @ h)
        r = _sigmoid(ax_r[t] + ur @ h)
        rh[t] = r * h
        c = np.tanh(ax_c[t] + uc @ rh[t])
        h = (1.0 - z) * h + z * c
        zs[t], rs[t], cs[t], hs[t] = z, r, c, h

    out = hs[::-1].copy() if reverse else hs

    def backward(g):
        gh = g[::-1] if reverse else g
        daz = np.empty((seq_len, d))
        dar = np.empty((seq_len, d))
        dac = np.empty((seq_len, d))
        duz = np.zeros((d, d))
        dur = np.zeros((d, d))
        duc = np.zeros((d, d))
        dh_next = np.zeros(d)
        for t in range(seq_len - 1, -1, -1):
            dh = gh[t] + dh_next
            dz = dh * (cs[t] - h_prev[t])
            daz[t] = dz * zs[t] * (1.0 - zs[t])
            dc = dh * zs[t]
            dac[t] = dc * (1.0 - cs[t] * cs[t])
            drh = uc.T @ dac[t]
            dr = drh * h_prev[t]
            dar[t] = dr * rs[t] * (1.0 - rs[t])
            duz += np.outer(daz[t], h_prev[t])
            dur += np.outer(dar[t], h_prev[t])
            duc += np.outer(dac[t], rh[t])
            dh_next = dh * (1.0 - zs[t]) + drh * rs[t] + uz.T @ daz[t] + ur.T @ dar[t]
        dx = daz @ wz + dar @ wr + dac @ wc
        if reverse:
            dx = dx[::-1].copy()
        return (
            dx,
            daz.T @ x,
            duz,
            daz.sum(axis=0),
            dar.T @ x,
            dur,
            dar.sum(axis=0),
            dac.T @ x,
            duc,
            dac.sum(axis=0),
        )

    parents = (
        inputs,
        p.w_update,
        p.u_update,
        p.b_update,
        p.w_reset,
        p.u_reset,
        p.b_reset,
        p.w_cand,
        p.u_cand,
        p.b_cand,
    )
    return _make(out, parents, backward)


def bigru(inputs: Tensor, fwd: GruParams, bwd: GruParams) -> Tensor:
    """Forward and backward GRU passes concatenated per position (seq_len x 2d)."""
    return hstack2(gru_sequence(inputs, fwd), gru_sequence(inputs, bwd, reverse=True))


@dataclass
class MlpParams:
    """One hidden layer, tanh activation: out = w2 @ tanh(w1 @ x + b1) + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __post_init__(self):
        h, d_in = self.w1.shape
        if self.b1.shape != (h,):
            raise ShapeError("MlpParams: b1 does not match w1")
        if self.w2.shape[1] != h:
            raise ShapeError("MlpParams: w2 does not chain onto the hidden layer")
        if self.b2.shape != (self.w2.shape[0],):
            raise ShapeError("MlpParams: b2 does not match w2")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, output_dim: int, rng: np.random.Generator) -> "MlpParams":
        return cls(
            uniform_init(rng, input_dim, (hidden_dim, input_dim)),
            Tensor(np.zeros(hidden_dim), requires_grad=True),
            uniform_init(rng, hidden_dim, (output_dim, hidden_dim)),
            Tensor(np.zeros(output_dim), requires_grad=True),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, output_dim: int) -> "MlpParams":
        return cls(
            Tensor(np.zeros((hidden_dim, input_dim)), requires_grad=True),
            Tensor(np.zeros(hidden_dim), requires_grad=True),
            Tensor(np.zeros((output_dim, hidden_dim)), requires_grad=True),
            Tensor(np.zeros(output_dim), requires_grad=True),
        )

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


def mlp_forward(x: Tensor, params: MlpParams) -> Tensor:
    from .tensor import add, matmul, tanh

    if x.data.ndim != 1:
        raise ShapeError("mlp_forward: rank-1 input only")
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"mlp_forward: input dim {x.shape[0]} != {params.input_dim}")
    hidden = tanh(add(matmul(params.w1, x), params.b1))
    return add(matmul(params.w2, hidden), params.b2)
