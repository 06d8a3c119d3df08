"""Networks for two-stage spectrogram disentanglement.

Stage 1 trains a general encoder plus decoder to reconstruct log-mel
inputs.  Stage 2 freezes the general encoder, trains a second identical
encoder whose latent should capture what separates synthetic from bona
fide speech, a joint decoder reconstructing from both latents, a map
decoder producing a [0,1] activation map over the spectrogram, and a
classifier scoring the activation-weighted spectrogram.

All parameter tensors are float32 and owned by exactly one network; the
bundle exposes them with stable dotted names so optimizers and
checkpoints agree on ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .rng import Stream
from .tensor import Tensor

LEAK = 0.2

GENERAL = "general"
DISENTANGLED = "disentangled"

# spawn indices off the master init stream, one per network
_NET_STREAMS = {
    "general_encoder": 0,
    "general_decoder": 1,
    "disentangled_encoder": 2,
    "joint_decoder": 3,
    "map_decoder": 4,
    "classifier": 5,
}
COSFACE_STREAM_INDEX = 6


@dataclass(frozen=True)
class ModelConfig:
    """Input extent and layer widths shared by every network."""

    n_mels: int = 80
    target_frames: int = 96
    latent_dim: int = 32
    channels: tuple = (16, 32, 64, 128)
    classifier_channels: tuple = (8, 16)

    def __post_init__(self):
        factor = 2 ** len(self.channels)
        if self.n_mels % factor or self.target_frames % factor:
            raise ContractError(
                f"input extent {self.n_mels}x{self.target_frames} must be "
                f"divisible by {factor} (one halving per encoder layer)")
        if self.latent_dim < 1:
            raise ContractError(f"latent_dim must be positive, got {self.latent_dim}")

    @property
    def bottleneck(self) -> tuple:
        # channels x spatial extent after the strided encoder stack
        factor = 2 ** len(self.channels)
        return (self.channels[-1], self.n_mels // factor, self.target_frames // factor)

    def to_dict(self) -> dict:
        return {
            "n_mels": self.n_mels,
            "target_frames": self.target_frames,
            "latent_dim": self.latent_dim,
            "channels": list(self.channels),
            "classifier_channels": list(self.classifier_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ContractError(f"unknown model config keys: {sorted(extra)}")
        d = dict(d)
        for key in ("channels", "classifier_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _kaiming_uniform(stream: Stream, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return stream.uniform(-bound, bound, shape).astype(np.float32)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, stream: Stream):
        self.w = Tensor(_kaiming_uniform(stream, (in_dim, out_dim), in_dim),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True)
        self.descriptor = f"linear({in_dim}->{out_dim})"

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.matmul(x, self.w), self.b)

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Conv:
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: int, stream: Stream):
        fan_in = in_ch * kernel * kernel
        self.w = Tensor(_kaiming_uniform(stream, (out_ch, in_ch, kernel, kernel), fan_in),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.descriptor = f"conv({in_ch}->{out_ch},k{kernel},s{stride},p{padding})"

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.conv2d(x, self.w, self.stride, self.padding), self.b)

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Deconv:
    """Upsampling layer; kernel dim 0 is the incoming channel count."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: int, stream: Stream):
        fan_in = in_ch * kernel * kernel
        self.w = Tensor(_kaiming_uniform(stream, (in_ch, out_ch, kernel, kernel), fan_in),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.descriptor = f"deconv({in_ch}->{out_ch},k{kernel},s{stride},p{padding})"

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.conv2d_transpose(x, self.w, self.stride, self.padding),
                          self.b)

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Encoder:
    """Strided conv stack producing per-item (mu, logvar) latent heads."""

    def __init__(self, cfg: ModelConfig, stream: Stream):
        self.cfg = cfg
        self.convs = []
        prev = 1
        for ch in cfg.channels:
            self.convs.append(Conv(prev, ch, 3, 2, 1, stream))
            prev = ch
        c, h, w = cfg.bottleneck
        self.flat = c * h * w
        self.mu_head = Linear(self.flat, cfg.latent_dim, stream)
        self.logvar_head = Linear(self.flat, cfg.latent_dim, stream)
        self.descriptors = [c.descriptor for c in self.convs] + [
            "flatten", f"mu:{self.mu_head.descriptor}",
            f"logvar:{self.logvar_head.descriptor}"]

    def __call__(self, x: Tensor):
        want = (self.cfg.n_mels, self.cfg.target_frames)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != want:
            raise DimensionError(
                f"encoder expects (batch, 1, {want[0]}, {want[1]}), got {x.shape}")
        h = x
        for conv in self.convs:
            h = T.leaky_relu(conv(h), LEAK)
        h = T.reshape(h, (x.shape[0], self.flat))
        return self.mu_head(h), self.logvar_head(h)

    def params(self, prefix: str):
        out = []
        for i, conv in enumerate(self.convs):
            out += conv.params(f"{prefix}.conv{i}")
        out += self.mu_head.params(f"{prefix}.mu")
        out += self.logvar_head.params(f"{prefix}.logvar")
        return out


class Decoder:
    """Linear + deconv stack mapping a latent vector back to input extent.

    Final layer is linear by default (reconstructions of standardized
    features are unbounded); with sigmoid_output=True the map lands in [0,1].
    """

    def __init__(self, cfg: ModelConfig, in_dim: int, sigmoid_output: bool,
                 stream: Stream):
        self.cfg = cfg
        self.in_dim = in_dim
        self.sigmoid_output = sigmoid_output
        c, h, w = cfg.bottleneck
        self.bottleneck = (c, h, w)
        self.fc = Linear(in_dim, c * h * w, stream)
        chans = [c] + [ch for ch in reversed(cfg.channels[:-1])] + [1]
        # stride-2 kernel-4 pad-1 doubles each extent exactly
        self.deconvs = [Deconv(chans[i], chans[i + 1], 4, 2, 1, stream)
                        for i in range(len(chans) - 1)]
        self.descriptors = [self.fc.descriptor, "reshape"] + \
            [d.descriptor for d in self.deconvs] + \
            (["sigmoid"] if sigmoid_output else ["linear-out"])

    def __call__(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.in_dim:
            raise DimensionError(
                f"decoder expects (batch, {self.in_dim}), got {z.shape}")
        c, h, w = self.bottleneck
        out = T.leaky_relu(T.reshape(self.fc(z), (z.shape[0], c, h, w)), LEAK)
        for dc in self.deconvs[:-1]:
            out = T.leaky_relu(dc(out), LEAK)
        out = self.deconvs[-1](out)
        if self.sigmoid_output:
            out = T.sigmoid(out)
        return out

    def params(self, prefix: str):
        out = self.fc.params(f"{prefix}.fc")
        for i, dc in enumerate(self.deconvs):
            out += dc.params(f"{prefix}.deconv{i}")
        return out


class Classifier:
    """Small conv net scoring one probability per item (1 = synthetic)."""

    def __init__(self, cfg: ModelConfig, stream: Stream):
        self.cfg = cfg
        self.convs = []
        prev = 1
        for ch in cfg.classifier_channels:
            self.convs.append(Conv(prev, ch, 3, 2, 1, stream))
            prev = ch
        self.head = Linear(prev, 1, stream)
        self.descriptors = [c.descriptor for c in self.convs] + [
            "global-mean-pool", self.head.descriptor, "sigmoid"]

    def __call__(self, x: Tensor) -> Tensor:
        want = (self.cfg.n_mels, self.cfg.target_frames)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != want:
            raise DimensionError(
                f"classifier expects (batch, 1, {want[0]}, {want[1]}), got {x.shape}")
        h = x
        for conv in self.convs:
            h = T.leaky_relu(conv(h), LEAK)
        pooled = T.reduce_mean(h, (2, 3))
        logit = T.reshape(self.head(pooled), (x.shape[0],))
        return T.sigmoid(logit)

    def params(self, prefix: str):
        out = []
        for i, conv in enumerate(self.convs):
            out += conv.params(f"{prefix}.conv{i}")
        out += self.head.params(f"{prefix}.head")
        return out


# ---- latent plumbing --------------------------------------------------------

@dataclass
class LatentDistribution:
    """Batched diagonal-Gaussian parameters, each (batch, latent_dim)."""

    mu: Tensor
    logvar: Tensor


@dataclass
class LatentSample:
    """A latent draw tagged with which encoder produced it."""

    z: Tensor
    source: str

    def __post_init__(self):
        if self.source not in (GENERAL, DISENTANGLED):
            raise ContractError(f"unknown latent source {self.source!r}")


@dataclass
class JointFeature:
    """Concatenation [general latent, disentangled latent], (batch, 2d)."""

    f: Tensor


@dataclass
class ActivationMap:
    """Per-cell [0,1] weighting of the spectrogram, (batch, 1, H, W)."""

    values: Tensor


def reparameterize(dist: LatentDistribution, stream: Stream | None = None,
                   source: str = GENERAL, eps: np.ndarray | None = None) -> LatentSample:
    """Sample z = mu + exp(0.5*logvar) * eps with eps ~ N(0, I).

    Gradients flow into mu and logvar; eps is a constant.  Pass eps
    explicitly to pin the draw (tests), otherwise it comes from `stream`.
    """
    if eps is None:
        if stream is None:
            raise ContractError("reparameterize needs a stream or explicit eps")
        eps = stream.normal(shape=dist.mu.shape)
    noise = Tensor(np.asarray(eps, dtype=np.float32))
    if noise.shape != dist.mu.shape:
        raise DimensionError(f"eps shape {noise.shape} != mu shape {dist.mu.shape}")
    sigma = T.exp(T.scale(dist.logvar, 0.5))
    return LatentSample(z=dist.mu + sigma * noise, source=source)


def mean_latent(dist: LatentDistribution, source: str) -> LatentSample:
    """Deterministic latent (the mean); used at inference."""
    return LatentSample(z=dist.mu, source=source)


def concat_features(f_g: LatentSample, f_d: LatentSample) -> JointFeature:
    if f_g.source != GENERAL or f_d.source != DISENTANGLED:
        raise ContractError(
            f"concat_features needs (general, disentangled), "
            f"got ({f_g.source}, {f_d.source})")
    if f_g.z.shape != f_d.z.shape:
        raise ContractError(
            f"latent shapes differ: {f_g.z.shape} vs {f_d.z.shape}")
    return JointFeature(f=T.concat(f_g.z, f_d.z, axis=1))


# ---- the bundle -------------------------------------------------------------

NET_NAMES = ("general_encoder", "general_decoder", "disentangled_encoder",
             "joint_decoder", "map_decoder", "classifier")
STAGE1_NETS = ("general_encoder", "general_decoder")
STAGE2_NETS = ("disentangled_encoder", "joint_decoder", "map_decoder", "classifier")


@dataclass
class ModelBundle:
    """All six networks plus the frozen-subnetwork bookkeeping."""

    config: ModelConfig
    general_encoder: Encoder
    general_decoder: Decoder
    disentangled_encoder: Encoder
    joint_decoder: Decoder
    map_decoder: Decoder
    classifier: Classifier
    frozen: set = field(default_factory=set)

    def net(self, name: str):
        if name not in NET_NAMES:
            raise ContractError(f"unknown network {name!r}")
        return getattr(self, name)

    def named_params(self, nets=NET_NAMES):
        out = []
        for name in nets:
            out += self.net(name).params(name)
        return out

    def trainable_params(self, nets=NET_NAMES):
        return [(n, p) for n, p in self.named_params(nets)
                if n.split(".")[0] not in self.frozen]

    def freeze(self, net_name: str) -> None:
        """Exclude a network from gradients and optimizer updates."""
        self.net(net_name)
        self.frozen.add(net_name)
        for _, p in self.net(net_name).params(net_name):
            p.requires_grad = False

    def arch(self) -> dict:
        return {name: list(self.net(name).descriptors) for name in NET_NAMES}


def build_model(config: ModelConfig, seed: int) -> ModelBundle:
    """Deterministically initialize all networks from one master seed."""
    master = Stream(seed)
    streams = {name: master.spawn(i) for name, i in _NET_STREAMS.items()}
    d = config.latent_dim
    return ModelBundle(
        config=config,
        general_encoder=Encoder(config, streams["general_encoder"]),
        general_decoder=Decoder(config, d, False, streams["general_decoder"]),
        disentangled_encoder=Encoder(config, streams["disentangled_encoder"]),
        joint_decoder=Decoder(config, 2 * d, False, streams["joint_decoder"]),
        map_decoder=Decoder(config, d, True, streams["map_decoder"]),
        classifier=Classifier(config, streams["classifier"]),
    )


# ---- spec-level operations --------------------------------------------------

def encode(bundle: ModelBundle, which: str, x: Tensor) -> LatentDistribution:
    """Run one of the two encoders; which is 'general' or 'disentangled'."""
    if which == GENERAL:
        mu, logvar = bundle.general_encoder(x)
    elif which == DISENTANGLED:
        mu, logvar = bundle.disentangled_encoder(x)
    else:
        raise ContractError(f"unknown encoder {which!r}")
    return LatentDistribution(mu=mu, logvar=logvar)


def decode_general(bundle: ModelBundle, f_g: LatentSample) -> Tensor:
    if f_g.source != GENERAL:
        raise ContractError(f"decode_general needs a general latent, got {f_g.source}")
    return bundle.general_decoder(f_g.z)


def decode_joint(bundle: ModelBundle, joint: JointFeature) -> Tensor:
    return bundle.joint_decoder(joint.f)


def decode_activation(bundle: ModelBundle, f_d: LatentSample) -> ActivationMap:
    if f_d.source != DISENTANGLED:
        raise ContractError(
            f"decode_activation needs a disentangled latent, got {f_d.source}")
    return ActivationMap(values=bundle.map_decoder(f_d.z))


def apply_activation(a: ActivationMap, x: Tensor) -> Tensor:
    """Elementwise product weighting the spectrogram by the map."""
    if a.values.shape != x.shape:
        raise DimensionError(
            f"activation map {a.values.shape} does not match input {x.shape}")
    return a.values * x


def classify(bundle: ModelBundle, x_map: Tensor) -> Tensor:
    return bundle.classifier(x_map)


def infer(bundle: ModelBundle, x: Tensor):
    """Inference chain: disentangled mean latent -> map -> weighting -> score.

    The general encoder is not used at inference.  Returns float32 numpy
    (scores, activation maps, weighted inputs).
    """
    with T.no_grad():
        dist = encode(bundle, DISENTANGLED, x)
        f_d = mean_latent(dist, DISENTANGLED)
        a_map = decode_activation(bundle, f_d)
        x_map = apply_activation(a_map, x)
        scores = classify(bundle, x_map)
    return scores.data, a_map.values.data, x_map.data


def reconstruct(bundle: ModelBundle, x: Tensor) -> np.ndarray:
    """Joint reconstruction from both mean latents; float32 numpy output."""
    with T.no_grad():
        f_g = mean_latent(encode(bundle, GENERAL, x), GENERAL)
        f_d = mean_latent(encode(bundle, DISENTANGLED, x), DISENTANGLED)
        x_hat = decode_joint(bundle, concat_features(f_g, f_d))
    return x_hat.data
