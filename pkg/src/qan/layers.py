"""GRU cells, bidirectional sweeps, and pooling on top of the graph core.

Vectors are rows: an input step is (1 x d_in), a hidden state (1 x d_h).
Masked timesteps perform no state update (the previous state node is
carried through unchanged), so trailing padding cannot leak into real
positions from either direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix
from .errors import EmptyInputError, ShapeError


@dataclass
class GRUWeights:
    """Parameters of one GRU direction.

    Gate convention: z and r are sigmoid gates, the candidate applies the
    reset gate to the previous state *before* its recurrent matmul, and
    the new state is (1 - z) * h_prev + z * h_candidate.
    """

    w_z: Matrix
    u_z: Matrix
    b_z: Matrix
    w_r: Matrix
    u_r: Matrix
    b_r: Matrix
    w_h: Matrix
    u_h: Matrix
    b_h: Matrix

    @classmethod
    def create(cls, d_in: int, d_h: int, rng: np.random.Generator) -> "GRUWeights":
        def w(fan_in: int, fan_out: int) -> Matrix:
            return Matrix(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))

        return cls(
            w_z=w(d_in, d_h), u_z=w(d_h, d_h), b_z=Matrix.zeros(1, d_h),
            w_r=w(d_in, d_h), u_r=w(d_h, d_h), b_r=Matrix.zeros(1, d_h),
            w_h=w(d_in, d_h), u_h=w(d_h, d_h), b_h=Matrix.zeros(1, d_h),
        )

    @property
    def input_dim(self) -> int:
        return self.w_z.rows

    @property
    def hidden_dim(self) -> int:
        return self.w_z.cols

    def named(self, prefix: str) -> dict[str, Matrix]:
        return {f"{prefix}.{name}": getattr(self, name)
                for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r",
                             "w_h", "u_h", "b_h")}


def _gru_node(x: Matrix, h_prev: Matrix, w: GRUWeights,
              xz: np.ndarray, xr: np.ndarray, xc: np.ndarray) -> Matrix:
    """Fused GRU step given precomputed input projections x@Wz, x@Wr, x@Wh.

    One graph node with an analytic backward; building the gate algebra
    from primitive nodes would dominate graph-construction time on
    recurrent chains.
    """
    xd, hd = x.data, h_prev.data
    z = ad.stable_sigmoid(xz + hd @ w.u_z.data + w.b_z.data)
    r = ad.stable_sigmoid(xr + hd @ w.u_r.data + w.b_r.data)
    rh = r * hd
    c = np.tanh(xc + rh @ w.u_h.data + w.b_h.data)
    out = (1.0 - z) * hd + z * c

    def vjp(g: np.ndarray) -> None:
        dz = g * (c - hd)
        dc = g * z
        dh = g * (1.0 - z)
        d_ac = dc * (1.0 - c * c)          # pre-activation of the candidate
        w.b_h.grad += d_ac
        w.w_h.grad += xd.T @ d_ac
        w.u_h.grad += rh.T @ d_ac
        dx = d_ac @ w.w_h.data.T
        d_rh = d_ac @ w.u_h.data.T
        dh += d_rh * r
        d_ar = (d_rh * hd) * r * (1.0 - r)  # pre-activation of the reset gate
        w.b_r.grad += d_ar
        w.w_r.grad += xd.T @ d_ar
        w.u_r.grad += hd.T @ d_ar
        dx += d_ar @ w.w_r.data.T
        dh += d_ar @ w.u_r.data.T
        d_az = dz * z * (1.0 - z)           # pre-activation of the update gate
        w.b_z.grad += d_az
        w.w_z.grad += xd.T @ d_az
        w.u_z.grad += hd.T @ d_az
        dx += d_az @ w.w_z.data.T
        dh += d_az @ w.u_z.data.T
        x.grad += dx
        h_prev.grad += dh

    parents = (x, h_prev, w.w_z, w.u_z, w.b_z, w.w_r, w.u_r, w.b_r,
               w.w_h, w.u_h, w.b_h)
    return ad._node(out, "gru_cell", parents, vjp)


def gru_cell(x: Matrix, h_prev: Matrix, w: GRUWeights) -> Matrix:
    """One GRU step: (1 x d_in), (1 x d_h) -> (1 x d_h).

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    c = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * c.
    """
    if x.cols != w.input_dim or h_prev.cols != w.hidden_dim:
        raise ShapeError(
            f"gru_cell: x {x.shape} / h {h_prev.shape} do not match weights "
            f"(d_in={w.input_dim}, d_h={w.hidden_dim})")
    return _gru_node(x, h_prev, w, x.data @ w.w_z.data,
                     x.data @ w.w_r.data, x.data @ w.w_h.data)


def _sweep(values: Matrix, mask: np.ndarray, w: GRUWeights,
           order: range) -> list[Matrix]:
    # Input projections for the whole sequence in three matmuls.
    xz = values.data @ w.w_z.data
    xr = values.data @ w.w_r.data
    xc = values.data @ w.w_h.data
    states: dict[int, Matrix] = {}
    h = Matrix.zeros(1, w.hidden_dim)
    for t in order:
        if mask[t]:
            h = _gru_node(ad.row(values, t), h, w,
                          xz[t:t + 1], xr[t:t + 1], xc[t:t + 1])
        states[t] = h
    return [states[t] for t in range(values.rows)]


def bigru(values: Matrix, mask: np.ndarray | None,
          weights_fwd: GRUWeights, weights_bwd: GRUWeights) -> Matrix:
    """Bidirectional GRU over an (L x d_in) sequence -> (L x 2*d_h).

    Row t is the forward state at t concatenated with the backward state
    at t; the backward direction processes the reversed sequence.
    """
    if values.rows == 0:
        raise EmptyInputError("bigru: empty sequence")
    m = (np.ones(values.rows, dtype=bool) if mask is None
         else np.asarray(mask, dtype=bool))
    if m.shape != (values.rows,):
        raise ShapeError(f"bigru: mask length {m.shape} != L={values.rows}")
    fwd = _sweep(values, m, weights_fwd, range(values.rows))
    bwd = _sweep(values, m, weights_bwd, range(values.rows - 1, -1, -1))
    rows = [ad.concat_cols([f, b]) for f, b in zip(fwd, bwd)]
    return ad.concat_rows(rows)


def pool_max_mean(values: Matrix, mask: np.ndarray | None = None) -> Matrix:
    """Concat of column-wise max and mean over unmasked rows -> (1 x 2d)."""
    return ad.concat_cols([ad.max_over_rows(values, mask),
                           ad.mean_over_rows(values, mask)])
