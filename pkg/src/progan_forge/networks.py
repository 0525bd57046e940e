"""Progressive generator/discriminator and the fixed-resolution baseline.

The progressive pair grows in power-of-two stages (4x4 up to 1024x1024).
During a stage transition the old pathway is blended with the new one:
``out = alpha * old + (1 - alpha) * new`` with alpha the weight of the
previous-resolution pathway, fading 1 -> 0.

All parameters for every stage are created up front from per-stage seed
streams, so growing a spec by one stage leaves existing parameter values
bit-identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from .autodiff import Tensor, leaky_relu, sigmoid, tanh

LEAKY_SLOPE = 0.2
MIN_RESOLUTION = 4
MAX_RESOLUTION = 1024
CHANNEL_HALVING_START = 32  # halve feature maps per doubling beyond this


class ExperimentalResolutionWarning(UserWarning):
    """Fixed-mode resolutions above 64 diverge in practice."""


@dataclass(frozen=True)
class StageConfig:
    stage_index: int
    resolution: int
    channels: int

    def __post_init__(self):
        if self.resolution != MIN_RESOLUTION * 2**self.stage_index:
            raise ValueError(
                f"stage {self.stage_index} must have resolution "
                f"{MIN_RESOLUTION * 2 ** self.stage_index}, got {self.resolution}"
            )
        if self.channels < 1:
            raise ValueError("channels must be >= 1")


@dataclass
class FadeState:
    alpha: float = 0.0
    fading: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.fading and self.alpha != 0.0:
            raise ValueError("alpha must be 0 when not fading")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class NetworkSpec:
    latent_dim: int = 512
    max_resolution: int = 1024
    channel_base: int = 256
    channel_max: int = 256
    mode: str = "progressive"  # or "dcgan-fixed"
    head: str = "wgan-scalar"  # or "sigmoid"
    equalized: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ValueError(f"latent_dim must be positive, got {self.latent_dim}")
        if not _is_pow2(self.max_resolution) or not (
            MIN_RESOLUTION <= self.max_resolution <= MAX_RESOLUTION
        ):
            raise ValueError(
                f"max_resolution must be a power of two in "
                f"[{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {self.max_resolution}"
            )
        if self.mode not in ("progressive", "dcgan-fixed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.head not in ("wgan-scalar", "sigmoid"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.max_resolution // MIN_RESOLUTION)) + 1

    def channels_for(self, resolution: int) -> int:
        c0 = min(self.channel_base, self.channel_max)
        if resolution <= CHANNEL_HALVING_START:
            return max(1, c0)
        return max(1, c0 // (resolution // CHANNEL_HALVING_START))

    def stages(self) -> list[StageConfig]:
        return [
            StageConfig(i, MIN_RESOLUTION * 2**i, self.channels_for(MIN_RESOLUTION * 2**i))
            for i in range(self.n_stages)
        ]

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def desk_spec(max_resolution: int = 32, **overrides) -> NetworkSpec:
    """Small-channel preset sized for CPU desk runs."""
    base = NetworkSpec(max_resolution=max_resolution, channel_base=64, channel_max=64)
    return replace(base, **overrides) if overrides else base


def dcgan_spec(resolution: int = 64, **overrides) -> NetworkSpec:
    base = NetworkSpec(
        latent_dim=100,
        max_resolution=resolution,
        channel_base=128,
        channel_max=128,
        mode="dcgan-fixed",
        head="sigmoid",
    )
    return replace(base, **overrides) if overrides else base


SPEC_FILE_KEYS = (
    "latent_dim",
    "max_resolution",
    "channel_base",
    "channel_max",
    "mode",
    "head",
    "equalized",
)


def save_network_spec(path, spec: NetworkSpec) -> None:
    lines = []
    for key in SPEC_FILE_KEYS:
        value = getattr(spec, key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network_spec(path) -> NetworkSpec:
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in SPEC_FILE_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in ("latent_dim", "max_resolution", "channel_base", "channel_max"):
                values[key] = int(val)
            elif key == "equalized":
                values[key] = val.lower() in ("1", "true", "yes", "on")
            else:
                values[key] = val
    return NetworkSpec(**values)


def equalized_weight_scale(shape) -> float:
    """Runtime multiplier sqrt(2 / fan_in) for a unit-variance weight.

    Rank-4 weights are OIKK (fan_in = I*K*K); rank-2 weights are
    (in, out) (fan_in = in).
    """
    shape = tuple(shape)
    if len(shape) < 2:
        raise ValueError(f"weight rank must be >= 2, got shape {shape}")
    if len(shape) == 2:
        fan_in = shape[0]
    else:
        fan_in = int(np.prod(shape[1:]))
    return math.sqrt(2.0 / fan_in)


class _Layer:
    """One weight+bias pair with optional equalized runtime scaling."""

    def __init__(self, name, shape, rng, equalized, dtype):
        he = equalized_weight_scale(shape)
        if equalized:
            init = rng.standard_normal(shape)
            self.scale = he
        else:
            init = rng.standard_normal(shape) * he
            self.scale = 1.0
        out_ch = shape[-1] if len(shape) == 2 else shape[0]
        self.weight = Tensor(init.astype(dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True, name=f"{name}.bias")
        self.name = name

    def scaled_weight(self) -> Tensor:
        if self.scale == 1.0:
            return self.weight
        return self.weight * self.scale

    def conv(self, x, stride=1, padding=0):
        return L.conv2d(x, self.scaled_weight(), self.bias, stride=stride, padding=padding)

    def dense(self, x):
        return L.dense(x, self.scaled_weight(), self.bias)


class _Network:
    """Shared parameter-registry behaviour for both network roles."""

    def __init__(self, spec: NetworkSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self._layers: dict[str, _Layer] = {}

    def _stage_rng(self, stage: int):
        return np.random.default_rng(np.random.SeedSequence(entropy=[self.seed, stage]))

    def _add(self, name, shape, rng) -> _Layer:
        layer = _Layer(name, shape, rng, self.spec.equalized, self.spec.np_dtype)
        self._layers[name] = layer
        return layer

    def parameters(self):
        out = []
        for layer in self._layers.values():
            out.append((layer.weight.name, layer.weight))
            out.append((layer.bias.name, layer.bias))
        return out

    def _layer_params(self, names):
        out = []
        for name in names:
            layer = self._layers[name]
            out.append((layer.weight.name, layer.weight))
            out.append((layer.bias.name, layer.bias))
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def load_state(self, arrays: dict) -> None:
        for name, tensor in self.parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            if arrays[name].shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data = arrays[name].astype(tensor.data.dtype, copy=True)

    def state(self) -> dict:
        return {name: t.data.copy() for name, t in self.parameters()}

    def clone(self):
        other = type(self)(self.spec, self.seed)
        other.load_state(self.state())
        return other

    def _check_stage(self, stage, alpha):
        n = self.spec.n_stages if self.spec.mode == "progressive" else 1
        if stage is None:
            stage = n - 1
        if not 0 <= stage < n:
            raise ValueError(f"stage {stage} outside [0, {n - 1}]")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if alpha > 0.0 and stage == 0:
            raise ValueError("fade requested at stage 0: no previous pathway exists")
        return stage


class Generator(_Network):
    """Latent vectors -> RGB images in [-1, 1]."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        super().__init__(spec, seed)
        stages = spec.stages()
        c0 = stages[0].channels
        rng = self._stage_rng(0)
        self._add("g.base.dense", (spec.latent_dim, 16 * c0), rng)
        if spec.mode == "progressive":
            self._add("g.base.conv", (c0, c0, 3, 3), rng)
            self._add("g.to_rgb0", (3, c0, 1, 1), rng)
            for s in range(1, len(stages)):
                rng = self._stage_rng(s)
                prev_c, c = stages[s - 1].channels, stages[s].channels
                self._add(f"g.stage{s}.conv0", (c, prev_c, 3, 3), rng)
                self._add(f"g.stage{s}.conv1", (c, c, 3, 3), rng)
                self._add(f"g.to_rgb{s}", (3, c, 1, 1), rng)
        else:
            if spec.max_resolution > 64:
                warnings.warn(
                    f"dcgan-fixed above 64x64 is experimental "
                    f"(requested {spec.max_resolution})",
                    ExperimentalResolutionWarning,
                    stacklevel=2,
                )
            for s in range(1, len(stages)):
                rng = self._stage_rng(s)
                prev_c, c = stages[s - 1].channels, stages[s].channels
                self._add(f"g.stage{s}.conv", (c, prev_c, 3, 3), rng)
            rng = self._stage_rng(len(stages))
            self._add("g.to_rgb", (3, stages[-1].channels, 1, 1), rng)

    def _base(self, z: Tensor) -> Tensor:
        c0 = self.spec.stages()[0].channels
        h = L.pixelwise_feature_norm(z)
        h = self._layers["g.base.dense"].dense(h)
        h = L.reshape(h, (z.shape[0], c0, 4, 4))
        h = leaky_relu(h, LEAKY_SLOPE)
        return L.pixelwise_feature_norm(h)

    def _grow(self, h: Tensor, stage: int) -> Tensor:
        conv0 = self._layers[f"g.stage{stage}.conv0"]
        conv1 = self._layers[f"g.stage{stage}.conv1"]
        h = L.upsample_nearest2x(h)
        h = L.pixelwise_feature_norm(leaky_relu(conv0.conv(h, padding=1), LEAKY_SLOPE))
        h = L.pixelwise_feature_norm(leaky_relu(conv1.conv(h, padding=1), LEAKY_SLOPE))
        return h

    def _rgb(self, h: Tensor, stage: int) -> Tensor:
        return tanh(self._layers[f"g.to_rgb{stage}"].conv(h))

    def forward(self, z: Tensor, stage: int | None = None, alpha: float = 0.0) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.spec.np_dtype))
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(
                f"latent batch must have shape (N, {self.spec.latent_dim}), got {z.shape}"
            )
        stage = self._check_stage(stage, alpha)
        if self.spec.mode == "dcgan-fixed":
            return self._forward_fixed(z)

        h = self._base(z)
        conv = self._layers["g.base.conv"]
        h = L.pixelwise_feature_norm(leaky_relu(conv.conv(h, padding=1), LEAKY_SLOPE))
        for s in range(1, stage + 1):
            prev = h
            h = self._grow(h, s)
        new_rgb = self._rgb(h, stage)
        if alpha == 0.0:
            return new_rgb
        old_rgb = L.upsample_nearest2x(self._rgb(prev, stage - 1))
        return old_rgb * alpha + new_rgb * (1.0 - alpha)

    def _forward_fixed(self, z: Tensor) -> Tensor:
        stages = self.spec.stages()
        c0 = stages[0].channels
        h = self._layers["g.base.dense"].dense(z)
        h = leaky_relu(L.reshape(h, (z.shape[0], c0, 4, 4)), LEAKY_SLOPE)
        for s in range(1, len(stages)):
            conv = self._layers[f"g.stage{s}.conv"]
            h = leaky_relu(conv.conv(L.upsample_nearest2x(h), padding=1), LEAKY_SLOPE)
        return tanh(self._layers["g.to_rgb"].conv(h))

    __call__ = forward

    def active_parameters(self, stage: int | None = None, alpha: float = 0.0):
        """Parameters that participate in a forward at (stage, alpha)."""
        if self.spec.mode == "dcgan-fixed":
            return self.parameters()
        stage = self._check_stage(stage, alpha)
        names = ["g.base.dense", "g.base.conv"]
        for s in range(1, stage + 1):
            names += [f"g.stage{s}.conv0", f"g.stage{s}.conv1"]
        names.append(f"g.to_rgb{stage}")
        if alpha > 0.0:
            names.append(f"g.to_rgb{stage - 1}")
        return self._layer_params(names)


class Discriminator(_Network):
    """RGB images -> per-sample realism scores."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        super().__init__(spec, seed)
        stages = spec.stages()
        c0 = stages[0].channels
        rng = self._stage_rng(0)
        if spec.mode == "progressive":
            self._add("d.from_rgb0", (c0, 3, 1, 1), rng)
            self._add("d.base.conv", (c0, c0 + 1, 3, 3), rng)
        else:
            self._add("d.base.conv", (c0, c0, 3, 3), rng)
        self._add("d.base.dense0", (16 * c0, c0), rng)
        self._add("d.base.dense1", (c0, 1), rng)
        for s in range(1, len(stages)):
            rng = self._stage_rng(s)
            prev_c, c = stages[s - 1].channels, stages[s].channels
            if spec.mode == "progressive":
                self._add(f"d.from_rgb{s}", (c, 3, 1, 1), rng)
                self._add(f"d.stage{s}.conv0", (c, c, 3, 3), rng)
                self._add(f"d.stage{s}.conv1", (prev_c, c, 3, 3), rng)
            else:
                self._add(f"d.stage{s}.conv", (prev_c, c, 3, 3), rng)
        if spec.mode == "dcgan-fixed":
            rng = self._stage_rng(len(stages))
            self._add("d.from_rgb", (stages[-1].channels, 3, 1, 1), rng)

    @property
    def head(self) -> str:
        return self.spec.head

    def _from_rgb(self, x: Tensor, stage: int) -> Tensor:
        return leaky_relu(self._layers[f"d.from_rgb{stage}"].conv(x), LEAKY_SLOPE)

    def _shrink(self, h: Tensor, stage: int) -> Tensor:
        conv0 = self._layers[f"d.stage{stage}.conv0"]
        conv1 = self._layers[f"d.stage{stage}.conv1"]
        h = leaky_relu(conv0.conv(h, padding=1), LEAKY_SLOPE)
        h = leaky_relu(conv1.conv(h, padding=1), LEAKY_SLOPE)
        return L.avgpool2x(h)

    def _base_score(self, h: Tensor, with_stddev: bool) -> Tensor:
        if with_stddev:
            h = L.minibatch_stddev_feature(h)
        h = leaky_relu(self._layers["d.base.conv"].conv(h, padding=1), LEAKY_SLOPE)
        h = leaky_relu(self._layers["d.base.dense0"].dense(L.flatten(h)), LEAKY_SLOPE)
        score = self._layers["d.base.dense1"].dense(h)
        score = L.reshape(score, (score.shape[0],))
        if self.spec.head == "sigmoid":
            score = sigmoid(score)
        return score

    def forward(self, x: Tensor, stage: int | None = None, alpha: float = 0.0) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.spec.np_dtype))
        stage = self._check_stage(stage, alpha)
        if self.spec.mode == "dcgan-fixed":
            return self._forward_fixed(x)
        expected = MIN_RESOLUTION * 2**stage
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != expected or x.shape[3] != expected:
            raise ValueError(
                f"stage {stage} expects input (N, 3, {expected}, {expected}), got {x.shape}"
            )
        if stage == 0:
            return self._base_score(self._from_rgb(x, 0), with_stddev=True)
        h = self._shrink(self._from_rgb(x, stage), stage)
        if alpha > 0.0:
            old = self._from_rgb(L.avgpool2x(x), stage - 1)
            h = old * alpha + h * (1.0 - alpha)
        for s in range(stage - 1, 0, -1):
            h = self._shrink(h, s)
        return self._base_score(h, with_stddev=True)

    def _forward_fixed(self, x: Tensor) -> Tensor:
        stages = self.spec.stages()
        expected = stages[-1].resolution
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != expected:
            raise ValueError(f"expected input (N, 3, {expected}, {expected}), got {x.shape}")
        h = leaky_relu(self._layers["d.from_rgb"].conv(x), LEAKY_SLOPE)
        for s in range(len(stages) - 1, 0, -1):
            conv = self._layers[f"d.stage{s}.conv"]
            h = L.avgpool2x(leaky_relu(conv.conv(h, padding=1), LEAKY_SLOPE))
        h = leaky_relu(self._layers["d.base.conv"].conv(h, padding=1), LEAKY_SLOPE)
        h = leaky_relu(self._layers["d.base.dense0"].dense(L.flatten(h)), LEAKY_SLOPE)
        score = L.reshape(self._layers["d.base.dense1"].dense(h), (x.shape[0],))
        if self.spec.head == "sigmoid":
            score = sigmoid(score)
        return score

    __call__ = forward

    def active_parameters(self, stage: int | None = None, alpha: float = 0.0):
        """Parameters that participate in a forward at (stage, alpha)."""
        if self.spec.mode == "dcgan-fixed":
            return self.parameters()
        stage = self._check_stage(stage, alpha)
        names = [f"d.from_rgb{stage}"]
        if alpha > 0.0:
            names.append(f"d.from_rgb{stage - 1}")
        for s in range(stage, 0, -1):
            names += [f"d.stage{s}.conv0", f"d.stage{s}.conv1"]
        names += ["d.base.conv", "d.base.dense0", "d.base.dense1"]
        return self._layer_params(names)

    def at(self, stage: int | None = None, alpha: float = 0.0) -> "BoundCritic":
        return BoundCritic(self, stage, alpha)


@dataclass
class BoundCritic:
    """Discriminator pinned to one stage/alpha, exposing its head tag."""

    net: Discriminator
    stage: int | None = None
    alpha: float = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return self.net.forward(x, stage=self.stage, alpha=self.alpha)

    @property
    def head(self) -> str:
        return self.net.head


def build_generator(spec: NetworkSpec, seed: int = 0) -> Generator:
    return Generator(spec, seed)


def build_discriminator(spec: NetworkSpec, seed: int = 0) -> Discriminator:
    return Discriminator(spec, seed)


def forward_with_fade(net, x, stage: int, fade: FadeState) -> Tensor:
    alpha = fade.alpha if fade.fading else 0.0
    return net.forward(x, stage=stage, alpha=alpha)
