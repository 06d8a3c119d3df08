"""Two-stage training loops, checkpoint selection, and their config.

Stage 1 treats the whole corpus as unlabeled and fits the general encoder
plus its decoder to reconstruct log-mel inputs under a KL prior.  Stage 2
freezes the general encoder at its stage-1 weights and trains the
disentangled encoder, joint decoder, map decoder, classifier, and margin
head on labeled data, recording validation balanced accuracy once per
epoch.

Every random choice flows from StageConfig.seed through one master stream:
child 0 seeds parameter initialization, child 1 drives batch shuffling,
child 2 supplies reparameterization noise.  Identical (seed, config,
manifest) therefore reproduce every checkpoint bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .checkpoint import (Checkpoint, checkpoint_from_bundle, load_net_params,
                         restore_bundle)
from .dsp import FrontendConfig
from .errors import ContractError, FormatError, InputError
from .evaluate import (ScoreRecord, balanced_accuracy, load_clip_features,
                       score_features)
from .losses import (CosFaceHead, LossWeights, format_loss_record, stage1_loss,
                     stage2_loss)
from .model import STAGE1_NETS, STAGE2_NETS, ModelConfig, build_model
from .optim import Adam, AdamW
from .rng import Stream
from .tensor import Tensor

SMOOTHING = 0.98  # exponential moving average factor for the loss curve

_INIT_CHILD = 0
_SHUFFLE_CHILD = 1
_NOISE_CHILD = 2


@dataclass(frozen=True)
class StageConfig:
    """Hyperparameters for one training stage; JSON keys mirror field names."""

    stage: int
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    lr_decay: float = 0.0
    batch_size: int = 32
    max_iterations: int = 0
    epochs: int = 0
    seed: int = 0
    convergence_threshold: float | None = None
    cosface_scale: float = 30.0
    cosface_margin: float = 0.35
    loss_weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise InputError(f"stage must be 1 or 2, got {self.stage}")
        if self.optimizer not in ("adam", "adamw"):
            raise InputError(f"optimizer must be adam or adamw, got "
                             f"{self.optimizer!r}")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.stage == 1 and self.max_iterations < 1:
            raise InputError("stage 1 needs max_iterations >= 1")
        if self.stage == 2 and self.epochs < 1:
            raise InputError("stage 2 needs epochs >= 1")
        if (self.model.n_mels != self.frontend.n_mels or
                self.model.target_frames != self.frontend.target_frames):
            raise InputError(
                f"model input extent {self.model.n_mels}x"
                f"{self.model.target_frames} does not match frontend "
                f"{self.frontend.n_mels}x{self.frontend.target_frames}")

    @classmethod
    def stage1(cls, **overrides) -> "StageConfig":
        base = cls(stage=1, optimizer="adam", learning_rate=1e-3,
                   lr_decay=5e-7, batch_size=32, max_iterations=300)
        return dataclasses.replace(base, **overrides) if overrides else base

    @classmethod
    def stage2(cls, **overrides) -> "StageConfig":
        base = cls(stage=2, optimizer="adamw", learning_rate=1e-4,
                   weight_decay=1e-3, batch_size=32, epochs=30)
        return dataclasses.replace(base, **overrides) if overrides else base

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if hasattr(value, "to_dict") else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown config keys: {sorted(extra)}")
        if "stage" not in d:
            raise InputError("config must declare its stage")
        base = cls.stage1() if d["stage"] == 1 else \
            cls.stage2() if d["stage"] == 2 else None
        if base is None:
            raise InputError(f"stage must be 1 or 2, got {d['stage']!r}")
        parsers = {"loss_weights": LossWeights.from_dict,
                   "model": ModelConfig.from_dict,
                   "frontend": FrontendConfig.from_dict}
        overrides = {}
        for key, value in d.items():
            if key == "stage":
                continue
            try:
                overrides[key] = parsers[key](value) if key in parsers else value
            except ContractError as exc:
                raise InputError(f"bad {key} in config: {exc}") from exc
        return dataclasses.replace(base, **overrides)

    @classmethod
    def from_json_file(cls, path) -> "StageConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)


# ---- shared plumbing ---------------------------------------------------------

def load_features(records, frontend: FrontendConfig):
    """Stack front-end features for records; returns (feats, labels).

    feats is (N, 1, mels, frames) float32, labels int64 with 1 = synthetic.
    Unreadable clips raise; training wants a complete corpus.
    """
    feats = [load_clip_features(r, frontend) for r in records]
    labels = np.array([0 if r.label == "bonafide" else 1 for r in records],
                      dtype=np.int64)
    if feats:
        return np.stack(feats), labels
    shape = (0, 1, frontend.n_mels, frontend.target_frames)
    return np.zeros(shape, dtype=np.float32), labels


def _val_balanced_accuracy(bundle, feats, labels) -> float:
    scores = score_features(bundle, feats)
    recs = [ScoreRecord(clip_id=str(i), score=float(s), label=int(l),
                        synthesizer_id="bonafide" if l == 0 else "synthetic")
            for i, (s, l) in enumerate(zip(scores, labels))]
    return balanced_accuracy(recs)


class _BatchCycle:
    """Endless batch index source: reshuffle each pass, drop the short tail."""

    def __init__(self, n: int, batch_size: int, stream: Stream):
        self.n = n
        self.batch = min(batch_size, n)
        self.stream = stream
        self.order = stream.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.stream.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos:self.pos + self.batch]
        self.pos += self.batch
        return idx


# ---- stage 1 -----------------------------------------------------------------

def train_stage1(records, cfg: StageConfig, log=None) -> Checkpoint:
    """Fit the general encoder and decoder by reconstruction; one checkpoint.

    Runs max_iterations batches (reshuffling the corpus as needed) or stops
    early once the smoothed loss drops below cfg.convergence_threshold.
    """
    if cfg.stage != 1:
        raise ContractError(f"train_stage1 got a stage-{cfg.stage} config")
    if not records:
        raise InputError("stage 1 corpus is empty")
    feats, _ = load_features(records, cfg.frontend)

    master = Stream(cfg.seed)
    bundle = build_model(cfg.model, master.spawn(_INIT_CHILD).seed)
    shuffle = master.spawn(_SHUFFLE_CHILD)
    noise = master.spawn(_NOISE_CHILD)
    opt = Adam(bundle.trainable_params(STAGE1_NETS),
               learning_rate=cfg.learning_rate, beta1=cfg.beta1,
               beta2=cfg.beta2, epsilon=cfg.epsilon, lr_decay=cfg.lr_decay)

    batches = _BatchCycle(feats.shape[0], cfg.batch_size, shuffle)
    history = []
    smoothed = None
    iterations = 0
    for step in range(cfg.max_iterations):
        x = Tensor(feats[batches.next()])
        dist = M.encode(bundle, M.GENERAL, x)
        z = M.reparameterize(dist, eps=noise.normal(shape=dist.mu.shape),
                             source=M.GENERAL)
        x_rec = M.decode_general(bundle, z)
        total, report = stage1_loss(x, x_rec, dist, cfg.loss_weights)
        total.backward()
        opt.step()
        opt.zero_grad()
        smoothed = report.total if smoothed is None else \
            SMOOTHING * smoothed + (1.0 - SMOOTHING) * report.total
        history.append({"iteration": step, "loss": report.total,
                        "smoothed_loss": smoothed})
        iterations = step + 1
        if log is not None:
            log(format_loss_record(step, report, lr=opt.lr))
        if (cfg.convergence_threshold is not None
                and smoothed < cfg.convergence_threshold):
            break
    return checkpoint_from_bundle(
        bundle, cfg.frontend, stage=1, nets=STAGE1_NETS,
        iteration=iterations, optimizer=opt, metric_history=history)


# ---- stage 2 -----------------------------------------------------------------

def _check_stage1_compat(ckpt: Checkpoint, cfg: StageConfig) -> None:
    if ckpt.stage != 1:
        raise FormatError(
            f"expected a stage-1 checkpoint, got stage {ckpt.stage}")
    if "general_encoder" not in ckpt.nets:
        raise FormatError("stage-1 checkpoint lacks the general encoder")
    if ckpt.model_config != cfg.model:
        raise FormatError(
            f"stage-1 checkpoint architecture {ckpt.model_config.to_dict()} "
            f"does not match configured {cfg.model.to_dict()}")


def train_stage2(records, stage1_ckpt: Checkpoint | None, cfg: StageConfig,
                 val_records=None, log=None) -> list:
    """Train the labeled stage on top of a frozen general encoder.

    Returns one checkpoint per epoch, each recording validation balanced
    accuracy (measured on val_records, or on the training records when no
    validation set is given).  Optimizer state rides only on the final
    epoch's checkpoint.  stage1_ckpt may be None: the general encoder then
    stays at its fresh random initialization, still frozen.
    """
    if cfg.stage != 2:
        raise ContractError(f"train_stage2 got a stage-{cfg.stage} config")
    if not records:
        raise InputError("stage 2 corpus is empty")
    feats, labels = load_features(records, cfg.frontend)
    if len(set(labels.tolist())) < 2:
        raise InputError("stage 2 needs both labels in the training manifest")
    if val_records:
        val_feats, val_labels = load_features(val_records, cfg.frontend)
    else:
        val_feats, val_labels = feats, labels

    master = Stream(cfg.seed)
    init_seed = master.spawn(_INIT_CHILD).seed
    bundle = build_model(cfg.model, init_seed)
    if stage1_ckpt is not None:
        _check_stage1_compat(stage1_ckpt, cfg)
        load_net_params(bundle, "general_encoder", stage1_ckpt)
    bundle.freeze("general_encoder")
    head = CosFaceHead(cfg.model.latent_dim, scale=cfg.cosface_scale,
                       margin=cfg.cosface_margin,
                       stream=Stream(init_seed).spawn(M.COSFACE_STREAM_INDEX))
    shuffle = master.spawn(_SHUFFLE_CHILD)
    noise = master.spawn(_NOISE_CHILD)
    opt_cls = AdamW if cfg.optimizer == "adamw" else Adam
    kwargs = {} if opt_cls is Adam else {"weight_decay": cfg.weight_decay}
    opt = opt_cls(bundle.trainable_params(STAGE2_NETS) + head.params(),
                  learning_rate=cfg.learning_rate, beta1=cfg.beta1,
                  beta2=cfg.beta2, epsilon=cfg.epsilon,
                  lr_decay=cfg.lr_decay, **kwargs)

    n = feats.shape[0]
    nets = ("general_encoder",) + STAGE2_NETS
    checkpoints = []
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = Tensor(feats[idx])
            y = labels[idx]
            dist_g = M.encode(bundle, M.GENERAL, x)
            dist_d = M.encode(bundle, M.DISENTANGLED, x)
            z_g = M.reparameterize(dist_g, eps=noise.normal(shape=dist_g.mu.shape),
                                   source=M.GENERAL)
            z_d = M.reparameterize(dist_d, eps=noise.normal(shape=dist_d.mu.shape),
                                   source=M.DISENTANGLED)
            x_hat = M.decode_joint(bundle, M.concat_features(z_g, z_d))
            a_map = M.decode_activation(bundle, z_d)
            x_map = M.apply_activation(a_map, x)
            y_hat = M.classify(bundle, x_map)
            total, report = stage2_loss(x, x_hat, dist_d, z_d.z, a_map, y_hat,
                                        y, head, cfg.loss_weights)
            total.backward()
            opt.step()
            opt.zero_grad()
            loss_sum += report.total * idx.size
            if log is not None:
                log(format_loss_record(step, report, lr=opt.lr))
            step += 1
        val_acc = _val_balanced_accuracy(bundle, val_feats, val_labels)
        history.append({"epoch": epoch, "mean_loss": loss_sum / n,
                        "val_balanced_accuracy": val_acc})
        checkpoints.append(checkpoint_from_bundle(
            bundle, cfg.frontend, stage=2, nets=nets, iteration=step,
            epoch=epoch, head=head,
            optimizer=opt if epoch == cfg.epochs else None,
            metric_history=list(history), alias=("general_encoder",)))
    return checkpoints


# ---- model selection ---------------------------------------------------------

def recorded_val_accuracy(ckpt: Checkpoint) -> float:
    """The checkpoint's own epoch's validation balanced accuracy."""
    if not ckpt.metric_history:
        raise InputError("checkpoint has no recorded metric history")
    entry = ckpt.metric_history[-1]
    if "val_balanced_accuracy" not in entry:
        raise InputError("checkpoint history lacks val_balanced_accuracy")
    return float(entry["val_balanced_accuracy"])


def select_best(checkpoints, val_records=None) -> Checkpoint:
    """Checkpoint with the highest validation balanced accuracy.

    With val_records the accuracies are recomputed by scoring; otherwise
    the values recorded during training are used.  Ties go to the earliest
    epoch.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise InputError("select_best needs at least one checkpoint")
    if val_records is not None:
        feats, labels = load_features(val_records, checkpoints[0].frontend)
        if len(set(labels.tolist())) < 2:
            raise InputError("validation manifest needs both labels")
        accs = []
        for ckpt in checkpoints:
            bundle, _ = restore_bundle(ckpt)
            accs.append(_val_balanced_accuracy(bundle, feats, labels))
    else:
        accs = [recorded_val_accuracy(c) for c in checkpoints]
    best = 0
    for i in range(1, len(accs)):
        if accs[i] > accs[best]:
            best = i
    return checkpoints[best]
