"""The three networks of the pipeline plus a denoising pretext net.

All share one encoder layout (strided residual stages over a conv stem), so
encoder weights transfer between tasks by name. The segmentation and
UV-regression nets add a decoder with skip connections and emit one output
per scale; the age net pools the deepest features into a single scalar.

Construction is seeded and attribute order is fixed, so parameter names,
initialization, and parameter count are deterministic for a given config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import formats
from .autodiff import Tensor
from .errors import CheckpointFormatError


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs shared by all model kinds.

    ``num_scales`` output scales imply ``num_scales - 1`` stride-2 encoder
    stages below the full-resolution stem. Stage channels double per stage,
    capped at ``channel_cap`` times the base width. The U/V/age output
    scales are fixed multipliers that keep head weights O(1) while targets
    span pixels or hours.
    """

    num_scales: int = 5
    base_channels: int = 16
    blocks_per_stage: int = 2
    channel_cap: int = 4
    in_channels: int = 1
    input_size: int = 256
    u_scale: float = 64.0
    v_scale: float = 8.0
    age_scale: float = 400.0
    init_seed: int = 0

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError(f"num_scales must be >= 1, got {self.num_scales}")
        down = 2 ** (self.num_scales - 1)
        if self.input_size % down != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^(S-1) = {down}"
            )
        if self.base_channels < 1 or self.blocks_per_stage < 1:
            raise ValueError("base_channels and blocks_per_stage must be positive")

    def stage_channels(self):
        cap = self.base_channels * self.channel_cap
        return [min(self.base_channels * 2**s, cap) for s in range(self.num_scales)]

    def to_kv(self):
        return {f.name: repr(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_kv(cls, kv):
        kwargs = {}
        for f in fields(cls):
            if f.name in kv:
                raw = kv[f.name]
                kwargs[f.name] = int(raw) if f.type == "int" else float(raw)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# module system
# ---------------------------------------------------------------------------

class Module:
    """Container with named parameters, named buffers, and a training flag."""

    def __init__(self):
        self.training = True
        self._buffers = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = []
        for name, param in own.items():
            if name not in state:
                missing.append(name)
                continue
            value = np.asarray(state[name], dtype=param.data.dtype)
            if value.shape != param.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {value.shape} vs {param.data.shape}"
                )
            param.data[...] = value
        for name, buf in bufs.items():
            if name not in state:
                missing.append(name)
                continue
            value = np.asarray(state[name], dtype=buf.dtype)
            if value.shape != buf.shape:
                raise ValueError(f"shape mismatch for buffer {name}")
            buf[...] = value
        unexpected = [k for k in state if k not in own and k not in bufs]
        if strict and (missing or unexpected):
            raise ValueError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        return missing, unexpected

    def train(self, flag=True):
        self.training = flag
        for _, child in self._children():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv(Module):
    def __init__(self, rng, in_ch, out_ch, k=3, stride=1, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = k // 2
        self.weight = Tensor(he_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm(Module):
    def __init__(self, ch):
        super().__init__()
        self.gamma = Tensor(np.ones(ch, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(ch, dtype=np.float32), requires_grad=True)
        self._buffers["running_mean"] = np.zeros(ch, dtype=np.float32)
        self._buffers["running_var"] = np.ones(ch, dtype=np.float32)

    def forward(self, x):
        return ad.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
        )


class ConvBnRelu(Module):
    def __init__(self, rng, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv = Conv(rng, in_ch, out_ch, k=3, stride=stride, bias=False)
        self.bn = BatchNorm(out_ch)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))


class ResidualBlock(Module):
    def __init__(self, rng, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = Conv(rng, in_ch, out_ch, k=3, stride=stride, bias=False)
        self.bn1 = BatchNorm(out_ch)
        self.conv2 = Conv(rng, out_ch, out_ch, k=3, stride=1, bias=False)
        self.bn2 = BatchNorm(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv(rng, in_ch, out_ch, k=1, stride=stride, bias=False)
            self.proj_bn = BatchNorm(out_ch)
        else:
            self.proj = None

    def forward(self, x):
        h = ad.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ad.relu(ad.add(h, skip))


class Encoder(Module):
    """Stem at full resolution plus one stride-2 residual stage per scale."""

    def __init__(self, rng, cfg):
        super().__init__()
        chans = cfg.stage_channels()
        self.stem = ConvBnRelu(rng, cfg.in_channels, chans[0])
        self.stages = []
        for s in range(1, cfg.num_scales):
            blocks = [ResidualBlock(rng, chans[s - 1], chans[s], stride=2)]
            blocks += [
                ResidualBlock(rng, chans[s], chans[s]) for _ in range(cfg.blocks_per_stage - 1)
            ]
            self.stages.append(_Sequential(blocks))

    def forward(self, x):
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats


class _Sequential(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = blocks

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class Decoder(Module):
    """Upsample, concatenate the encoder skip, merge with one conv."""

    def __init__(self, rng, cfg):
        super().__init__()
        chans = cfg.stage_channels()
        self.merges = []
        for s in range(cfg.num_scales - 2, -1, -1):  # toward full resolution
            self.merges.append(ConvBnRelu(rng, chans[s + 1] + chans[s], chans[s]))

    def forward(self, feats):
        """feats: encoder outputs, full resolution first. Returns decoder
        features ordered full resolution first (deepest = encoder output)."""
        out = [feats[-1]]
        current = feats[-1]
        for merge, skip in zip(self.merges, feats[-2::-1]):
            current = merge(ad.concat_channels([ad.bilinear_upsample2x(current), skip]))
            out.append(current)
        return out[::-1]


class MultiScaleNet(Module):
    """Encoder-decoder emitting one head output per scale (full res first)."""

    def __init__(self, cfg, out_channels):
        super().__init__()
        rng = np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.out_channels = out_channels
        self.encoder = Encoder(rng, cfg)
        self.decoder = Decoder(rng, cfg)
        chans = cfg.stage_channels()
        self.heads = [Conv(rng, chans[s], out_channels, k=1) for s in range(cfg.num_scales)]

    def forward(self, x):
        feats = self.encoder(x)
        dec = self.decoder(feats)
        return [head(d) for head, d in zip(self.heads, dec)]


class CoarseNet(MultiScaleNet):
    """Per-scale single-channel segmentation logits."""

    def __init__(self, cfg):
        super().__init__(cfg, out_channels=1)


class FineNet(MultiScaleNet):
    """Per-scale 3-channel output: mask logit, U, V.

    U and V channels are linear heads times fixed output scales; the mask
    channel stays a logit.
    """

    def __init__(self, cfg):
        super().__init__(cfg, out_channels=3)
        self._channel_scale = np.array([1.0, cfg.u_scale, cfg.v_scale], dtype=np.float32)

    def forward(self, x):
        outs = super().forward(x)
        scale = Tensor(self._channel_scale.reshape(1, 3, 1, 1))
        return [ad.mul(o, scale) for o in outs]


class AgeNet(Module):
    """Encoder, global average pooling, and a linear head in hours."""

    def __init__(self, cfg):
        super().__init__()
        rng = np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.encoder = Encoder(rng, cfg)
        deep = cfg.stage_channels()[-1]
        self.head_weight = Tensor(he_uniform(rng, (deep, 1), deep), requires_grad=True)
        self.head_bias = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)

    def forward(self, x):
        feats = self.encoder(x)
        pooled = ad.global_avg_pool(feats[-1])
        hours = ad.add(ad.matmul(pooled, self.head_weight), self.head_bias)
        return ad.scale(ad.reshape(hours, (x.data.shape[0],)), self.cfg.age_scale)


class DenoiseNet(Module):
    """Reconstruction pretext: predict the clean image from a noised one."""

    def __init__(self, cfg):
        super().__init__()
        rng = np.random.default_rng(cfg.init_seed)
        self.cfg = cfg
        self.encoder = Encoder(rng, cfg)
        self.decoder = Decoder(rng, cfg)
        self.head = Conv(rng, cfg.stage_channels()[0], 1, k=1)

    def forward(self, x):
        dec = self.decoder(self.encoder(x))
        return self.head(dec[0])


MODEL_KINDS = {
    "coarse": CoarseNet,
    "fine": FineNet,
    "age": AgeNet,
    "denoise": DenoiseNet,
}


def build_coarse_net(cfg):
    return CoarseNet(cfg)


def build_fine_net(cfg):
    return FineNet(cfg)


def build_age_net(cfg):
    return AgeNet(cfg)


def build_denoise_net(cfg):
    return DenoiseNet(cfg)


def build_model(kind, cfg):
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r} (expected one of {sorted(MODEL_KINDS)})")
    return MODEL_KINDS[kind](cfg)


def count_parameters(model):
    return sum(p.data.size for p in model.parameters())


# ---------------------------------------------------------------------------
# checkpoints and encoder transfer
# ---------------------------------------------------------------------------

def save_model(path, model, kind, cfg, extra_echo=None):
    echo = {"kind": kind}
    echo.update(cfg.to_kv())
    if extra_echo:
        echo.update(extra_echo)
    formats.save_checkpoint(path, model.state_dict(), formats.format_kv_text(echo))


def load_model(path):
    """Rebuild a model from a checkpoint. Returns (model, kind, cfg, echo)."""
    tensors, echo_text = formats.load_checkpoint(path)
    echo = formats.parse_kv_text(echo_text)
    if "kind" not in echo:
        raise CheckpointFormatError(f"{path}: checkpoint echo lacks a model kind")
    kind = echo["kind"]
    cfg = NetConfig.from_kv(echo)
    model = build_model(kind, cfg)
    model.load_state_dict(tensors)
    return model, kind, cfg, echo


TRANSFER_MODES = ("scratch", "generic", "uvreg")


def transfer_encoder(src_tensors, dst_model, mode):
    """Initialize ``dst_model``'s encoder from checkpoint tensors.

    ``scratch`` keeps the fresh initialization and ignores the source. The
    pretrain modes copy every encoder tensor whose name and shape match;
    name matches with the wrong shape are skipped and reported. Returns
    (copied count, skipped names).
    """
    if mode not in TRANSFER_MODES:
        raise ValueError(f"unknown transfer mode {mode!r} (expected one of {TRANSFER_MODES})")
    if mode == "scratch":
        return 0, []
    dst = {name: p for name, p in dst_model.named_parameters() if name.startswith("encoder.")}
    dst_bufs = {
        name: b for name, b in dst_model.named_buffers() if name.startswith("encoder.")
    }
    copied = 0
    skipped = []
    for name, param in dst.items():
        if name not in src_tensors:
            continue
        value = np.asarray(src_tensors[name], dtype=np.float32)
        if value.shape != param.data.shape:
            skipped.append(name)
            continue
        param.data[...] = value
        copied += 1
    for name, buf in dst_bufs.items():
        if name not in src_tensors:
            continue
        value = np.asarray(src_tensors[name], dtype=buf.dtype)
        if value.shape != buf.shape:
            skipped.append(name)
            continue
        buf[...] = value
        copied += 1
    if copied == 0:
        raise ValueError(f"{mode} transfer matched no encoder tensors")
    return copied, skipped
