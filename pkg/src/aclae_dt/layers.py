"""ConvLSTM / LSTM cells, additive attention and parameter initialisation.

Gate kernels are stored stacked in ``i, f, o, C`` order so one convolution
(or one matmul) produces every gate pre-activation; the named per-gate
weights are exposed as read-only views.

The cell-state update defaults to the coupled input/forget form

    C_t = f_t * C_{t-1} + (1 - f_t) * C~_t

and ``cell_update="standard"`` switches to ``f_t * C_{t-1} + i_t * C~_t``.
The input gate is computed either way and returned for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GATES = ("i", "f", "o", "C")
CELL_UPDATES = ("printed", "standard")
FORGET_BIAS = 1.0
ATTENTION_DIM = 32


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fan_in and fan_out must be positive")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _gate_bias(filters: int) -> np.ndarray:
    b = np.zeros(4 * filters)
    b[filters:2 * filters] = FORGET_BIAS
    return b


def _check_cell_update(cell_update: str) -> None:
    if cell_update not in CELL_UPDATES:
        raise ValueError(f"cell_update must be one of {CELL_UPDATES}, got {cell_update!r}")


# -- ConvLSTM ---------------------------------------------------------------

@dataclass
class ConvLSTMCellParams:
    w_x: Tensor  # (4F, C_in, k, k)
    w_h: Tensor  # (4F, F, k, k)
    w_c: Tensor  # (3, F, H, W) peepholes for i, f, o
    b: Tensor    # (4F,)

    @property
    def filters(self) -> int:
        return self.w_h.shape[1]

    @property
    def in_channels(self) -> int:
        return self.w_x.shape[1]

    @property
    def state_shape(self) -> tuple:
        return tuple(self.w_c.shape[1:])

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.w_c, self.b]

    def named(self) -> dict[str, np.ndarray]:
        """Per-gate views: ``W_xi``, ``W_hf``, ``W_Co``, ``b_C`` and so on."""
        f = self.filters
        out = {}
        for g, name in enumerate(GATES):
            sl = slice(g * f, (g + 1) * f)
            out[f"W_x{name}"] = self.w_x.data[sl]
            out[f"W_h{name}"] = self.w_h.data[sl]
            out[f"b_{name}"] = self.b.data[sl]
        for g, name in enumerate(GATES[:3]):
            out[f"W_C{name}"] = self.w_c.data[g]
        return out


@dataclass
class ConvLSTMState:
    h: Tensor
    C: Tensor
    gates: dict = field(default_factory=dict, repr=False)


def init_convlstm(rng: np.random.Generator, in_channels: int, filters: int,
                  state_hw: tuple[int, int], kernel: int = 3) -> ConvLSTMCellParams:
    if min(in_channels, filters, kernel, *state_hw) <= 0:
        raise ValueError("ConvLSTM dimensions must be positive")
    kk = kernel * kernel
    w_x = np.concatenate([
        glorot_uniform(rng, (filters, in_channels, kernel, kernel), in_channels * kk, filters * kk)
        for _ in GATES
    ])
    w_h = np.concatenate([
        glorot_uniform(rng, (filters, filters, kernel, kernel), filters * kk, filters * kk)
        for _ in GATES
    ])
    # peepholes act per element; fan taken as the channel count
    w_c = glorot_uniform(rng, (3, filters, *state_hw), filters, filters)
    return ConvLSTMCellParams(
        Tensor(w_x, requires_grad=True),
        Tensor(w_h, requires_grad=True),
        Tensor(w_c, requires_grad=True),
        Tensor(_gate_bias(filters), requires_grad=True),
    )


def convlstm_step(params: ConvLSTMCellParams, x_t, prev: ConvLSTMState | None = None,
                  activation: str = "tanh", cell_update: str = "printed") -> ConvLSTMState:
    """One ConvLSTM time step with 'same'-padded convolutions and Hadamard peepholes.

    ``x_t`` is ``(C_in, H, W)`` or batched ``(N, C_in, H, W)``.
    """
    _check_cell_update(cell_update)
    x_t = ad.as_tensor(x_t)
    f = params.filters
    hw = params.state_shape[1:]
    if x_t.shape[-2:] != hw:
        raise ad.ShapeError(f"convlstm_step: input spatial dims {x_t.shape[-2:]} != state dims {hw}")
    if x_t.shape[-3] != params.in_channels:
        raise ad.ShapeError(f"convlstm_step: expected {params.in_channels} input channels, got {x_t.shape[-3]}")
    peep = params.w_c
    if prev is None:
        # zero initial state: the h-convolution and C-peepholes contribute nothing
        z = ad.conv2d(x_t, params.w_x, params.b, padding="same")
        i = ad.sigmoid(z[..., 0:f, :, :])
        fg = ad.sigmoid(z[..., f:2 * f, :, :])
        cand = ad.activation(z[..., 3 * f:4 * f, :, :], activation)
        c = ((1.0 - fg) if cell_update == "printed" else i) * cand
    else:
        if prev.h.shape[-3:] != (f, *hw) or prev.C.shape != prev.h.shape:
            raise ad.ShapeError(f"convlstm_step: state shape {prev.h.shape} does not match cell {(f, *hw)}")
        z = ad.conv2d(
            ad.concat([x_t, prev.h], axis=-3),
            ad.concat([params.w_x, params.w_h], axis=1),
            params.b,
            padding="same",
        )
        c_prev = prev.C
        i = ad.sigmoid(z[..., 0:f, :, :] + peep[0] * c_prev)
        fg = ad.sigmoid(z[..., f:2 * f, :, :] + peep[1] * c_prev)
        cand = ad.activation(z[..., 3 * f:4 * f, :, :], activation)
        if cell_update == "printed":
            c = fg * c_prev + (1.0 - fg) * cand
        else:
            c = fg * c_prev + i * cand
    o = ad.sigmoid(z[..., 2 * f:3 * f, :, :] + peep[2] * c)
    h = o * ad.activation(c, activation)
    return ConvLSTMState(h, c, {"i": i, "f": fg, "o": o, "C~": cand})


# -- dense LSTM ---------------------------------------------------------------

@dataclass
class LSTMCellParams:
    w_x: Tensor  # (d, 4H)
    w_h: Tensor  # (H, 4H)
    b: Tensor    # (4H,)

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b]

    def named(self) -> dict[str, np.ndarray]:
        hd = self.hidden
        out = {}
        for g, name in enumerate(GATES):
            sl = slice(g * hd, (g + 1) * hd)
            out[f"W_x{name}"] = self.w_x.data[:, sl]
            out[f"W_h{name}"] = self.w_h.data[:, sl]
            out[f"b_{name}"] = self.b.data[sl]
        return out


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LSTMCellParams:
    if input_dim <= 0 or hidden <= 0:
        raise ValueError("LSTM dimensions must be positive")
    w_x = np.concatenate([glorot_uniform(rng, (input_dim, hidden), input_dim, hidden) for _ in GATES], axis=1)
    w_h = np.concatenate([glorot_uniform(rng, (hidden, hidden), hidden, hidden) for _ in GATES], axis=1)
    return LSTMCellParams(
        Tensor(w_x, requires_grad=True),
        Tensor(w_h, requires_grad=True),
        Tensor(_gate_bias(hidden), requires_grad=True),
    )


def lstm_step(params: LSTMCellParams, x_t, prev: tuple | None = None,
              activation: str = "tanh", cell_update: str = "printed") -> tuple[Tensor, Tensor]:
    _check_cell_update(cell_update)
    x_t = ad.as_tensor(x_t)
    hd = params.hidden
    if x_t.shape[-1] != params.w_x.shape[0]:
        raise ad.ShapeError(f"lstm_step: input dim {x_t.shape[-1]} != {params.w_x.shape[0]}")
    if prev is None:
        zero = ad.Tensor(np.zeros(x_t.shape[:-1] + (hd,)))
        prev = (zero, zero)
    h_prev, c_prev = prev
    if h_prev.shape[-1] != hd or c_prev.shape != h_prev.shape:
        raise ad.ShapeError(f"lstm_step: state shape {h_prev.shape} does not match hidden size {hd}")
    z = h_prev @ params.w_h + x_t @ params.w_x + params.b
    i = ad.sigmoid(z[..., 0:hd])
    fg = ad.sigmoid(z[..., hd:2 * hd])
    o = ad.sigmoid(z[..., 2 * hd:3 * hd])
    cand = ad.activation(z[..., 3 * hd:], activation)
    c = fg * c_prev + ((1.0 - fg) if cell_update == "printed" else i) * cand
    h = o * ad.activation(c, activation)
    return h, c


# -- additive attention -------------------------------------------------------

@dataclass
class AttentionParams:
    w_s: Tensor  # (D_s, A)
    w_h: Tensor  # (D_h, A)
    v: Tensor    # (A,)

    def parameters(self) -> list[Tensor]:
        return [self.w_s, self.w_h, self.v]


def init_attention(rng: np.random.Generator, state_dim: int, annotation_dim: int,
                   align_dim: int = ATTENTION_DIM) -> AttentionParams:
    return AttentionParams(
        Tensor(glorot_uniform(rng, (state_dim, align_dim), state_dim, align_dim), requires_grad=True),
        Tensor(glorot_uniform(rng, (annotation_dim, align_dim), annotation_dim, align_dim), requires_grad=True),
        Tensor(glorot_uniform(rng, (align_dim,), align_dim, 1), requires_grad=True),
    )


def attention_context(params: AttentionParams, s_prev, annotations, batched: bool | None = None):
    """Bahdanau context for one decoder step.

    Scores are ``v . tanh(W_s s_prev + W_h h_t')``, normalised with softmax
    over the annotations. Annotations may be maps of any shape; they are
    flattened for scoring and the context comes back in their shape.

    Returns ``(context, weights)`` with weights of shape ``(T,)`` or ``(N, T)``.
    """
    if len(annotations) == 0:
        raise ValueError("attention_context: empty annotation sequence")
    s_prev = ad.as_tensor(s_prev)
    ann = [ad.as_tensor(a) for a in annotations]
    d_h = params.w_h.shape[0]
    if batched is None:
        batched = ann[0].size != d_h
    lead = ann[0].shape[:1] if batched else ()
    item_shape = ann[0].shape[len(lead):]
    if int(np.prod(item_shape)) != d_h:
        raise ad.ShapeError(f"attention_context: annotation size {item_shape} does not flatten to {d_h}")

    hs = ad.stack([a.reshape(lead + (d_h,)) for a in ann], axis=-2)       # (..., T, D)
    s_flat = s_prev.reshape(lead + (params.w_s.shape[0],))
    proj_s = (s_flat @ params.w_s).reshape(lead + (1, params.v.shape[0]))
    scores = ad.tanh(proj_s + hs @ params.w_h) @ params.v                   # (..., T)
    weights = ad.softmax(scores, axis=-1)
    context = ad.tsum(weights.reshape(weights.shape + (1,)) * hs, axis=-2)  # (..., D)
    return context.reshape(lead + item_shape), weights


def init_params(kind: str, seed: int, **dims):
    """Seeded initialisation by layer kind: ``convlstm``, ``lstm`` or ``attention``."""
    rng = ad.make_rng(seed)
    if kind == "convlstm":
        return init_convlstm(rng, dims["in_channels"], dims["filters"], dims["state_hw"], dims.get("kernel", 3))
    if kind == "lstm":
        return init_lstm(rng, dims["input_dim"], dims["hidden"])
    if kind == "attention":
        return init_attention(rng, dims["state_dim"], dims["annotation_dim"], dims.get("align_dim", ATTENTION_DIM))
    raise ValueError(f"unknown layer kind {kind!r}")
