"""Attention-based ConvLSTM autoencoder.

Topology (full variant, filters 64/64/32 then 32/64/64)::

    x_t -> ConvLSTM(64) -> pool -> ConvLSTM(64) -> pool -> ConvLSTM(32) -> pool
        -> up -> [ || attention context ] ConvLSTM(32) -> up -> ConvLSTM(64)
        -> up -> ConvLSTM(64) -> 1x1 conv -> x^_t

Every ConvLSTM layer unrolls over the ``h`` images of a sample and pooling /
upsampling are applied per step. Pooling uses ceil mode and the decoder
crops after each upsample so odd image sides come back exactly.

Attention scores the hidden maps of the deepest encoder layer against the
previous hidden map of the first decoder layer (seeded with the final
encoder hidden map) and concatenates the context channel-wise onto that
decoder layer's input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    AttentionParams,
    ConvLSTMCellParams,
    attention_context,
    convlstm_step,
    glorot_uniform,
    init_attention,
    init_convlstm,
)

VARIANTS = ("full", "no-attention", "shallow")
LOSSES = ("MAE", "MSE", "RMSE")


@dataclass(frozen=True)
class ModelSpec:
    image_size: int
    seq_len: int = 5
    encoder_filters: tuple = (64, 64, 32)
    decoder_filters: tuple = (32, 64, 64)
    kernel: int = 3
    activation: str = "tanh"
    attention: bool = True
    attention_dim: int = 32
    cell_update: str = "printed"
    output: str = "sequence"  # or "last"

    def __post_init__(self):
        if len(self.encoder_filters) != len(self.decoder_filters):
            raise ValueError("encoder and decoder need the same depth")
        if self.encoder_filters[-1] != self.decoder_filters[0]:
            raise ValueError("deepest encoder and first decoder layer must share a filter count")
        if self.output not in ("sequence", "last"):
            raise ValueError(f"output must be 'sequence' or 'last', got {self.output!r}")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        object.__setattr__(self, "encoder_filters", tuple(self.encoder_filters))
        object.__setattr__(self, "decoder_filters", tuple(self.decoder_filters))

    @classmethod
    def for_variant(cls, variant: str, image_size: int, **kw) -> "ModelSpec":
        if variant == "full":
            return cls(image_size, **kw)
        if variant == "no-attention":
            return cls(image_size, attention=False, **kw)
        if variant == "shallow":
            return cls(image_size, encoder_filters=(64, 64), decoder_filters=(64, 64), **kw)
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")

    @property
    def depth(self) -> int:
        return len(self.encoder_filters)

    def spatial_sizes(self) -> list[int]:
        """Side length at each encoder level, bottleneck last (ceil-mode halving)."""
        sizes = [self.image_size]
        for _ in range(self.depth):
            sizes.append(-(-sizes[-1] // 2))
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_filters"] = list(self.encoder_filters)
        d["decoder_filters"] = list(self.decoder_filters)
        return d


@dataclass
class AutoencoderParams:
    encoder: list[ConvLSTMCellParams]
    decoder: list[ConvLSTMCellParams]
    head_k: Tensor
    head_b: Tensor
    attention: AttentionParams | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for tag, cells in (("enc", self.encoder), ("dec", self.decoder)):
            for li, cell in enumerate(cells):
                for pname, p in zip(("w_x", "w_h", "w_c", "b"), cell.parameters()):
                    out.append((f"{tag}{li}.{pname}", p))
        if self.attention is not None:
            for pname, p in zip(("w_s", "w_h", "v"), self.attention.parameters()):
                out.append((f"att.{pname}", p))
        out.append(("head.k", self.head_k))
        out.append(("head.b", self.head_b))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


@dataclass
class ForwardTrace:
    attention_weights: list = field(default_factory=list)


class ConvLSTMAutoencoder:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        min_side = 2 ** spec.depth
        if spec.image_size < min_side:
            raise ValueError(
                f"image side {spec.image_size} too small for {spec.depth} pooling stages (need >= {min_side})"
            )
        self.spec = spec
        self.seed = seed
        self.params = self._init(ad.make_rng(seed))

    def _init(self, rng) -> AutoencoderParams:
        spec = self.spec
        sizes = spec.spatial_sizes()
        enc, dec = [], []
        in_ch = 1
        for li, filt in enumerate(spec.encoder_filters):
            enc.append(init_convlstm(rng, in_ch, filt, (sizes[li], sizes[li]), spec.kernel))
            in_ch = filt
        att = None
        deep = spec.encoder_filters[-1]
        for j, filt in enumerate(spec.decoder_filters):
            side = sizes[spec.depth - 1 - j]
            ch = in_ch + (deep if j == 0 and spec.attention else 0)
            dec.append(init_convlstm(rng, ch, filt, (side, side), spec.kernel))
            in_ch = filt
        if spec.attention:
            flat = deep * sizes[spec.depth - 1] ** 2
            att = init_attention(rng, flat, flat, spec.attention_dim)
        last = spec.decoder_filters[-1]
        head_k = Tensor(glorot_uniform(rng, (1, last, 1, 1), last, 1), requires_grad=True)
        head_b = Tensor(np.zeros(1), requires_grad=True)
        return AutoencoderParams(enc, dec, head_k, head_b, att)

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()

    def __call__(self, sample, trace: ForwardTrace | None = None) -> Tensor:
        return self.forward(sample, trace)

    def forward(self, sample, trace: ForwardTrace | None = None) -> Tensor:
        """Reconstruct ``(h, 1, H, W)`` or batched ``(N, h, 1, H, W)`` feature-image sequences."""
        spec = self.spec
        x = ad.as_tensor(sample)
        single = x.ndim == 4
        if single:
            x = x.reshape((1,) + x.shape)
        n, h = x.shape[:2]
        if x.shape[2:] != (1, spec.image_size, spec.image_size):
            raise ad.ShapeError(f"expected (N, h, 1, {spec.image_size}, {spec.image_size}) input, got {sample.shape}")
        sizes = spec.spatial_sizes()
        act, upd = spec.activation, spec.cell_update
        p = self.params

        xs = [x[:, t] for t in range(h)]
        annotations, final_h = None, None
        for li, cell in enumerate(p.encoder):
            state, outs = None, []
            for t in range(h):
                state = convlstm_step(cell, xs[t], state, act, upd)
                outs.append(state.h)
            if li == spec.depth - 1:
                annotations, final_h = outs, state.h
            pooled = ad.maxpool2x2(ad.concat(outs, axis=0))
            xs = [pooled[t * n:(t + 1) * n] for t in range(h)]

        for j, cell in enumerate(p.decoder):
            side = sizes[spec.depth - 1 - j]
            ups = ad.upsample2x2(ad.concat(xs, axis=0), (side, side))
            state, outs = None, []
            s_prev = final_h
            for t in range(h):
                inp = ups[t * n:(t + 1) * n]
                if j == 0 and p.attention is not None:
                    ctx, w = attention_context(p.attention, s_prev, annotations, batched=True)
                    if trace is not None:
                        trace.attention_weights.append(w.data)
                    inp = ad.concat([inp, ctx], axis=1)
                state = convlstm_step(cell, inp, state, act, upd)
                s_prev = state.h
                outs.append(state.h)
            xs = outs

        if spec.output == "last":
            xs = xs[-1:]
        steps = len(xs)
        feats = ad.concat(xs, axis=0)
        y = ad.conv2d(feats, p.head_k, p.head_b, padding="same")  # (steps*N, 1, H, W)
        y = ad.stack([y[t * n:(t + 1) * n] for t in range(steps)], axis=1)
        return y[0] if single else y

    def target(self, sample):
        """The tensor a reconstruction is compared against (all steps or the last one)."""
        sample = ad.as_tensor(sample)
        if self.spec.output == "last":
            return sample[..., -1:, :, :, :]
        return sample


def loss(y_hat, y, kind: str = "MSE") -> Tensor:
    y_hat, y = ad.as_tensor(y_hat), ad.as_tensor(y)
    if y_hat.shape != y.shape:
        raise ad.ShapeError(f"loss: shapes differ {y_hat.shape} vs {y.shape}")
    diff = y_hat - y
    if kind == "MAE":
        return ad.mean(ad.tabs(diff))
    if kind == "MSE":
        return ad.mean(ad.square(diff))
    if kind == "RMSE":
        return ad.sqrt(ad.mean(ad.square(diff)))
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}")
