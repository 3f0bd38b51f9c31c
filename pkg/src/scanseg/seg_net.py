"""Configurable encoder-decoder segmentation backbones.

The family is generated from a six-entry table of encoder channel counts.
Topology: a stem at full resolution, five encoder stages that halve the width
(height is never strided; range images are short and wide), a decoder that
mirrors the strides with nearest-neighbor width upsampling and additive skip
connections behind channel-matching 1x1 convolutions, and a 1x1 head to the
class logits. Every convolution is a semi-local convolution whose component
count alpha can be scheduled per layer (default 1 everywhere, i.e. plain
convolutions), and every width padding follows the configured mode, so a
cyclic network is cyclic end to end.

Networks are deterministic: the same config and seed yield bit-identical
parameters. Parameters and buffers are flat name -> array dicts; weights
serialize to ``.npz`` archives of exactly those names.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .neural_core import (
    PadSpec,
    glorot_uniform,
    norm_backward,
    norm_forward,
    norm_inference,
    relu,
    relu_backward,
    slc_backward,
    slc_forward,
    upsample_width,
    upsample_width_backward,
)

N_ENCODER_STAGES = 5

#: Encoder channel tables of the sized backbones, smallest to largest.
BACKBONE_PRESETS: dict[str, tuple[int, ...]] = {
    "A": (32, 32, 32, 32, 32, 32),
    "B": (32, 48, 64, 64, 64, 64),
    "C": (32, 48, 64, 96, 128, 256),
    "D": (32, 48, 64, 128, 256, 512),
    "R*": (32, 64, 128, 256, 512, 1024),
}


@dataclass
class NetworkConfig:
    """Everything needed to rebuild a network deterministically."""

    stage_channels: tuple[int, ...] = BACKBONE_PRESETS["A"]
    blocks_per_stage: tuple[int, ...] = (1, 1, 2, 2, 2, 2)
    alpha_default: int = 1
    alpha_overrides: dict[str, int] = field(default_factory=dict)
    padding: str = "cyclic"  # width padding mode: "cyclic" | "zeros"
    in_channels: int = 3  # depth, reflectance, mask
    n_classes: int = 20

    def __post_init__(self):
        if len(self.stage_channels) != 6:
            raise ValueError(f"expected 6 stage channel counts, got {len(self.stage_channels)}")
        if len(self.blocks_per_stage) != 6:
            raise ValueError(f"expected 6 block counts, got {len(self.blocks_per_stage)}")
        if any(c <= 0 for c in self.stage_channels):
            raise ValueError("channel counts must be positive")
        if self.alpha_default < 1 or any(a < 1 for a in self.alpha_overrides.values()):
            raise ValueError("alpha must be >= 1")
        if self.padding not in ("cyclic", "zeros"):
            raise ValueError(f"unknown padding mode {self.padding!r}")

    def alpha_for(self, layer_name: str) -> int:
        """Component count for a named layer: exact match, then the longest
        prefix in ``alpha_overrides``, then the default."""
        if layer_name in self.alpha_overrides:
            return self.alpha_overrides[layer_name]
        best = None
        for key in self.alpha_overrides:
            if layer_name.startswith(key) and (best is None or len(key) > len(best)):
                best = key
        return self.alpha_overrides[best] if best is not None else self.alpha_default


def config_from_preset(name: str, **overrides) -> NetworkConfig:
    key = name.upper().replace("RSTAR", "R*")
    if key not in BACKBONE_PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(BACKBONE_PRESETS)}")
    return NetworkConfig(stage_channels=BACKBONE_PRESETS[key], **overrides)


class SlcLayer:
    """One semi-local convolution with owned parameters and cached input."""

    def __init__(self, name, rng, i, j, c_in, c_out, alpha, pad_mode, stride_w=1):
        self.name = name
        self.kernel = glorot_uniform(rng, i, j, c_in, c_out, alpha)
        self.pad_spec = PadSpec.same(i, j, pad_mode)
        self.stride_w = stride_w
        self._x = None
        self.grads: dict[str, np.ndarray] = {}

    def parameters(self):
        return {f"{self.name}.weights": self.kernel.weights, f"{self.name}.bias": self.kernel.bias}

    def buffers(self):
        return {}

    def forward(self, x, training=False):
        self._x = x
        return slc_forward(x, self.kernel, self.pad_spec, self.stride_w)

    def backward(self, upstream):
        gx, gw, gb = slc_backward(self._x, self.kernel, self.pad_spec, upstream, self.stride_w)
        self.grads = {f"{self.name}.weights": gw, f"{self.name}.bias": gb}
        return gx


class NormLayer:
    """Batch-statistics normalization with running statistics for inference."""

    def __init__(self, name, channels, momentum=0.1, eps=1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=np.float32)
        self.beta = np.zeros(channels, dtype=np.float32)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self._cache = None
        self.grads: dict[str, np.ndarray] = {}

    def parameters(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def forward(self, x, training=False):
        if not training:
            return norm_inference(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
        y, cache = norm_forward(x, self.gamma, self.beta, self.eps)
        self._cache = cache
        _, _, mean, var = cache
        m = self.momentum
        self.running_mean[:] = (1 - m) * self.running_mean + m * mean
        self.running_var[:] = (1 - m) * self.running_var + m * var
        return y

    def backward(self, upstream):
        gx, d_gamma, d_beta = norm_backward(upstream, self._cache, self.gamma)
        self.grads = {f"{self.name}.gamma": d_gamma, f"{self.name}.beta": d_beta}
        return gx


class ConvUnit:
    """conv [+ norm] [+ relu], the repeated building element."""

    def __init__(self, name, rng, i, j, c_in, c_out, alpha, pad_mode, stride_w=1, normed=True, activated=True):
        self.conv = SlcLayer(f"{name}.conv", rng, i, j, c_in, c_out, alpha, pad_mode, stride_w)
        self.norm = NormLayer(f"{name}.norm", c_out) if normed else None
        self.activated = activated
        self._pre_relu = None

    def children(self):
        return [self.conv] + ([self.norm] if self.norm else [])

    def forward(self, x, training=False):
        y = self.conv.forward(x, training)
        if self.norm:
            y = self.norm.forward(y, training)
        if self.activated:
            self._pre_relu = y
            y = relu(y)
        return y

    def backward(self, upstream):
        g = relu_backward(self._pre_relu, upstream) if self.activated else upstream
        if self.norm:
            g = self.norm.backward(g)
        return self.conv.backward(g)


class ResBlock:
    """Two 3x3 conv units with an additive shortcut."""

    def __init__(self, name, rng, channels, alpha_fn, pad_mode):
        self.u1 = ConvUnit(f"{name}.conv1", rng, 3, 3, channels, channels, alpha_fn(f"{name}.conv1"), pad_mode)
        self.u2 = ConvUnit(f"{name}.conv2", rng, 3, 3, channels, channels, alpha_fn(f"{name}.conv2"), pad_mode, activated=False)
        self._sum = None

    def children(self):
        return self.u1.children() + self.u2.children()

    def forward(self, x, training=False):
        r = self.u2.forward(self.u1.forward(x, training), training)
        s = x + r
        self._sum = s
        return relu(s)

    def backward(self, upstream):
        gs = relu_backward(self._sum, upstream)
        gx_branch = self.u1.backward(self.u2.backward(gs))
        return gs + gx_branch


class EncoderStage:
    """Width-stride-2 downsampling conv followed by residual blocks."""

    def __init__(self, name, rng, c_in, c_out, n_blocks, alpha_fn, pad_mode):
        self.down = ConvUnit(f"{name}.down", rng, 3, 3, c_in, c_out, alpha_fn(f"{name}.down"), pad_mode, stride_w=2)
        self.blocks = [ResBlock(f"{name}.block{k}", rng, c_out, alpha_fn, pad_mode) for k in range(n_blocks)]

    def children(self):
        out = self.down.children()
        for b in self.blocks:
            out += b.children()
        return out

    def forward(self, x, training=False):
        y = self.down.forward(x, training)
        for b in self.blocks:
            y = b.forward(y, training)
        return y

    def backward(self, upstream):
        g = upstream
        for b in reversed(self.blocks):
            g = b.backward(g)
        return self.down.backward(g)


class DecoderStage:
    """Width upsample, 1x1 channel matcher, additive skip, 3x3 refine."""

    def __init__(self, name, rng, c_in, c_out, alpha_fn, pad_mode):
        self.proj = ConvUnit(f"{name}.proj", rng, 1, 1, c_in, c_out, alpha_fn(f"{name}.proj"), pad_mode)
        self.refine = ConvUnit(f"{name}.refine", rng, 3, 3, c_out, c_out, alpha_fn(f"{name}.refine"), pad_mode)

    def children(self):
        return self.proj.children() + self.refine.children()

    def forward(self, x, skip, training=False):
        u = upsample_width(x, 2)
        p = self.proj.forward(u, training)
        return self.refine.forward(p + skip, training)

    def backward(self, upstream):
        gs = self.refine.backward(upstream)
        gu = self.proj.backward(gs)
        gx = upsample_width_backward(gu, 2)
        return gx, gs


class Network:
    """A built backbone: ordered layers, flat parameter registry, and the
    explicit forward/backward wiring of the encoder-decoder topology."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        ch = config.stage_channels
        pad_mode = config.padding
        alpha_fn = config.alpha_for

        self.stem = ConvUnit("stem", rng, 3, 3, config.in_channels, ch[0], alpha_fn("stem"), pad_mode)
        self.stem_blocks = [
            ResBlock(f"stem.block{k}", rng, ch[0], alpha_fn, pad_mode)
            for k in range(config.blocks_per_stage[0])
        ]
        self.encoder = [
            EncoderStage(f"enc{i}", rng, ch[i - 1], ch[i], config.blocks_per_stage[i], alpha_fn, pad_mode)
            for i in range(1, N_ENCODER_STAGES + 1)
        ]
        self.decoder = [
            DecoderStage(f"dec{i}", rng, ch[i], ch[i - 1], alpha_fn, pad_mode)
            for i in range(N_ENCODER_STAGES, 0, -1)
        ]
        self.head = SlcLayer("head", rng, 1, 1, ch[0], config.n_classes, alpha_fn("head"), pad_mode)

        # per-channel input normalization, set from data by the trainer
        self.input_mean = np.zeros(config.in_channels, dtype=np.float32)
        self.input_std = np.ones(config.in_channels, dtype=np.float32)

    def _units(self):
        units = self.stem.children()
        for b in self.stem_blocks:
            units += b.children()
        for stage in self.encoder:
            units += stage.children()
        for stage in self.decoder:
            units += stage.children()
        units.append(self.head)
        return units

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for u in self._units():
            out.update(u.parameters())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {"input_mean": self.input_mean, "input_std": self.input_std}
        for u in self._units():
            out.update(u.buffers())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for u in self._units():
            out.update(u.grads)
        return out

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        b, h, w, c = x.shape
        if c != self.config.in_channels:
            raise ValueError(f"input has {c} channels, config expects {self.config.in_channels}")
        stride_total = 2**N_ENCODER_STAGES
        if h < 1 or w % stride_total != 0:
            raise ValueError(f"input width {w} must be a positive multiple of {stride_total}")
        x = (x - self.input_mean) / self.input_std

        t = self.stem.forward(x, training)
        for blk in self.stem_blocks:
            t = blk.forward(t, training)
        skips = [t]
        for stage in self.encoder:
            t = stage.forward(t, training)
            skips.append(t)
        # decoder[k] consumes skips[-(k + 2)]: deepest first
        for k, stage in enumerate(self.decoder):
            t = stage.forward(t, skips[N_ENCODER_STAGES - 1 - k], training)
        return self.head.forward(t, training)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = self.head.backward(grad_logits)
        skip_grads = [None] * N_ENCODER_STAGES
        for k, stage in enumerate(reversed(self.decoder)):
            # reversed(decoder)[k] is the stage whose skip is skips[k]
            g, gs = stage.backward(g)
            skip_grads[k] = gs
        for i in range(N_ENCODER_STAGES, 0, -1):
            if i < N_ENCODER_STAGES:
                g = g + skip_grads[i]
            g = self.encoder[i - 1].backward(g)
        g = g + skip_grads[0]
        for blk in reversed(self.stem_blocks):
            g = blk.backward(g)
        return self.stem.backward(g)


def build(config: NetworkConfig, seed: int = 0) -> Network:
    """Build a network with deterministic, seeded initialization."""
    return Network(config, seed)


def count_params(net: Network) -> int:
    """Exact number of trainable scalars (buffers excluded)."""
    return int(sum(p.size for p in net.parameters().values()))


def save_weights(net: Network, path) -> None:
    """Write all parameters and buffers to a flat ``.npz`` archive."""
    arrays = {}
    arrays.update(net.parameters())
    arrays.update(net.buffers())
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_weights(net: Network, path) -> None:
    """Load a weight archive into a built network.

    Every archive entry must match an existing tensor in name and shape; the
    error lists all offending names at once.
    """
    try:
        with np.load(path) as archive:
            stored = {k: archive[k] for k in archive.files}
    except Exception as exc:
        raise ValueError(f"unreadable weight archive {path}: {exc}") from exc

    target = {}
    target.update(net.parameters())
    target.update(net.buffers())
    problems = []
    for name, arr in target.items():
        if name not in stored:
            problems.append(f"missing {name}")
        elif stored[name].shape != arr.shape:
            problems.append(f"{name}: archive {stored[name].shape} vs network {arr.shape}")
    for name in stored:
        if name not in target:
            problems.append(f"unexpected {name}")
    if problems:
        raise ValueError("weight archive does not fit the network: " + "; ".join(sorted(problems)))
    for name, arr in target.items():
        arr[...] = stored[name]
