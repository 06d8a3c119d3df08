"""Binary checkpoint container for model snapshots.

Wire layout, in order:

  bytes 0..4    magic b"DSVA"
  bytes 4..8    format version, uint32 little-endian (currently 1)
  bytes 8..12   header length in bytes, uint32 little-endian
  header        canonical JSON (UTF-8, sorted keys, no whitespace)
  blobs         raw little-endian float32 arrays, in declared order

The header's "tensors" list declares parameter names and shapes; blobs
follow in exactly that order.  When optimizer state is present, its first-
and second-moment arrays follow the parameters (all m blobs, then all v
blobs, ordered by the header's optimizer parameter list).  Canonical JSON
plus fixed blob order makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dsp import FrontendConfig
from .errors import ContractError, FormatError, InputError
from .losses import CosFaceHead
from .model import NET_NAMES, ModelBundle, ModelConfig, build_model
from .optim import Adam, AdamW

MAGIC = b"DSVA"
VERSION = 1
_HEADER_AT = 12  # magic + version + header length


@dataclass(eq=False)  # arrays inside; identity comparison only
class Checkpoint:
    """One model snapshot: parameters plus enough context to resume or score.

    `params` maps dotted tensor names to float32 arrays in a stable order;
    `nets` says which networks those names belong to and `frozen` which of
    them were excluded from training.  `optimizer` is None or a dict with
    hyperparameters, step count, current lr, and the m/v moment arrays for
    the parameters it was driving.  `metric_history` is a list of small
    JSON-safe dicts (loss curve for stage 1, per-epoch validation balanced
    accuracy for stage 2).
    """

    stage: int
    iteration: int
    epoch: int
    model_config: ModelConfig
    frontend: FrontendConfig
    nets: tuple
    frozen: tuple
    params: dict
    cosface: dict | None = None
    optimizer: dict | None = None
    metric_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ContractError(f"stage must be 1 or 2, got {self.stage}")
        for name in self.nets:
            if name not in NET_NAMES:
                raise ContractError(f"unknown network {name!r} in checkpoint")
        for name in self.frozen:
            if name not in self.nets:
                raise ContractError(f"frozen net {name!r} not among stored nets")
        for name, arr in self.params.items():
            if arr.dtype != np.float32:
                raise ContractError(
                    f"checkpoint tensor {name!r} must be float32, got {arr.dtype}")


# ---- bundle <-> checkpoint --------------------------------------------------

def optimizer_to_state(opt: Adam) -> dict:
    """Capture everything needed to rebuild the optimizer exactly."""
    snap = opt.state_dict()
    return {
        "mode": "adamw" if isinstance(opt, AdamW) else "adam",
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "epsilon": opt.epsilon,
        "weight_decay": float(opt.weight_decay),
        "lr_decay": opt.lr_decay,
        "t": snap["t"],
        "lr": snap["lr"],
        "m": snap["m"],
        "v": snap["v"],
    }


def optimizer_from_state(state: dict, params) -> Adam:
    """Rebuild an optimizer over `params` from a captured state dict."""
    common = dict(learning_rate=state["lr"], beta1=state["beta1"],
                  beta2=state["beta2"], epsilon=state["epsilon"],
                  lr_decay=state["lr_decay"])
    if state["mode"] == "adamw":
        opt = AdamW(params, weight_decay=state["weight_decay"], **common)
    elif state["mode"] == "adam":
        opt = Adam(params, **common)
    else:
        raise FormatError(f"unknown optimizer mode {state['mode']!r}")
    opt.load_state_dict({"t": state["t"], "lr": state["lr"],
                         "m": state["m"], "v": state["v"]})
    return opt


def checkpoint_from_bundle(bundle: ModelBundle, frontend: FrontendConfig, *,
                           stage: int, nets, iteration: int = 0, epoch: int = 0,
                           head: CosFaceHead | None = None,
                           optimizer: Adam | None = None,
                           metric_history=(), alias=()) -> Checkpoint:
    """Snapshot the given networks (and optionally the margin head).

    Arrays are copied so later training steps cannot mutate the snapshot.
    Nets listed in `alias` share storage with the live bundle instead; only
    safe for frozen networks, which nothing writes to.
    """
    params = {}
    for name in nets:
        share = name in alias
        for pname, p in bundle.net(name).params(name):
            params[pname] = p.data if share else p.data.copy()
    cosface = None
    if head is not None:
        params["cosface_head.w"] = head.weight.data.copy()
        cosface = {"scale": head.scale, "margin": head.margin}
    return Checkpoint(
        stage=stage, iteration=iteration, epoch=epoch,
        model_config=bundle.config, frontend=frontend,
        nets=tuple(nets), frozen=tuple(n for n in nets if n in bundle.frozen),
        params=params, cosface=cosface,
        optimizer=optimizer_to_state(optimizer) if optimizer is not None else None,
        metric_history=list(metric_history))


def restore_bundle(ckpt: Checkpoint):
    """Rebuild (bundle, head) from a checkpoint.

    Networks absent from the checkpoint keep a fixed-seed fresh
    initialization; callers that need them train or overwrite them.  The
    head is None unless the checkpoint stored one.
    """
    bundle = build_model(ckpt.model_config, seed=0)
    for name in ckpt.nets:
        load_net_params(bundle, name, ckpt)
    for name in ckpt.frozen:
        bundle.freeze(name)
    head = None
    if ckpt.cosface is not None:
        head = CosFaceHead(ckpt.model_config.latent_dim,
                           scale=ckpt.cosface["scale"],
                           margin=ckpt.cosface["margin"],
                           weight=ckpt.params["cosface_head.w"].copy())
    return bundle, head


def load_net_params(bundle: ModelBundle, net_name: str, ckpt: Checkpoint) -> None:
    """Copy one network's parameters out of a checkpoint into the bundle."""
    for pname, p in bundle.net(net_name).params(net_name):
        if pname not in ckpt.params:
            raise FormatError(f"checkpoint is missing tensor {pname!r}")
        arr = ckpt.params[pname]
        if arr.shape != p.data.shape:
            raise FormatError(
                f"checkpoint tensor {pname!r} has shape {arr.shape}, "
                f"model expects {p.data.shape}")
        p.data = arr.astype(np.float32).copy()


# ---- serialization ----------------------------------------------------------

def _canonical_header(ckpt: Checkpoint) -> bytes:
    opt = None
    if ckpt.optimizer is not None:
        opt = {k: ckpt.optimizer[k] for k in
               ("mode", "beta1", "beta2", "epsilon", "weight_decay",
                "lr_decay", "t", "lr")}
        opt["params"] = list(ckpt.optimizer["m"].keys())
    header = {
        "stage": ckpt.stage,
        "iteration": ckpt.iteration,
        "epoch": ckpt.epoch,
        "model_config": ckpt.model_config.to_dict(),
        "frontend": ckpt.frontend.to_dict(),
        "nets": list(ckpt.nets),
        "frozen": list(ckpt.frozen),
        "cosface": ckpt.cosface,
        "optimizer": opt,
        "metric_history": ckpt.metric_history,
        "tensors": [[name, list(arr.shape)] for name, arr in ckpt.params.items()],
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the binary checkpoint file described in the module docstring."""
    if ckpt.optimizer is not None:
        for key in ("m", "v"):
            for name, arr in ckpt.optimizer[key].items():
                if name not in ckpt.params:
                    raise ContractError(
                        f"optimizer moment {key}[{name!r}] has no matching tensor")
                if arr.shape != ckpt.params[name].shape:
                    raise ContractError(
                        f"optimizer moment {key}[{name!r}] shape {arr.shape} "
                        f"!= tensor shape {ckpt.params[name].shape}")
    header = _canonical_header(ckpt)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for arr in ckpt.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        if ckpt.optimizer is not None:
            names = list(ckpt.optimizer["m"].keys())
            for key in ("m", "v"):
                for name in names:
                    fh.write(np.ascontiguousarray(
                        ckpt.optimizer[key][name], dtype="<f4").tobytes())


def _read_blob(buf: bytes, offset: int, name: str, shape) -> tuple:
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    nbytes = 4 * count
    end = offset + nbytes
    if end > len(buf):
        raise FormatError(
            f"truncated checkpoint: tensor {name!r} needs bytes "
            f"{offset}..{end}, file ends at byte {len(buf)}")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return arr.reshape(tuple(shape)).copy(), end


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint file; format violations name the byte offset."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(
            f"bad magic at byte 0: expected {MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < _HEADER_AT:
        raise FormatError(
            f"truncated checkpoint: fixed 12-byte prefix, file ends at "
            f"byte {len(buf)}")
    version, header_len = struct.unpack("<II", buf[4:_HEADER_AT])
    if version != VERSION:
        raise FormatError(
            f"unsupported format version {version} at byte 4 "
            f"(supported: {VERSION})")
    if _HEADER_AT + header_len > len(buf):
        raise FormatError(
            f"truncated checkpoint: header needs bytes "
            f"{_HEADER_AT}..{_HEADER_AT + header_len}, file ends at byte {len(buf)}")
    try:
        header = json.loads(buf[_HEADER_AT:_HEADER_AT + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header at byte {_HEADER_AT}: {exc}") from exc

    offset = _HEADER_AT + header_len
    params = {}
    shapes = {}
    for name, shape in header["tensors"]:
        params[name], offset = _read_blob(buf, offset, name, shape)
        shapes[name] = shape
    optimizer = None
    if header["optimizer"] is not None:
        opt = header["optimizer"]
        moments = {"m": {}, "v": {}}
        for key in ("m", "v"):
            for name in opt["params"]:
                if name not in shapes:
                    raise FormatError(
                        f"optimizer references unknown tensor {name!r}")
                moments[key][name], offset = _read_blob(
                    buf, offset, f"{key}.{name}", shapes[name])
        optimizer = {k: opt[k] for k in
                     ("mode", "beta1", "beta2", "epsilon", "weight_decay",
                      "lr_decay", "t", "lr")}
        optimizer.update(moments)
    if offset != len(buf):
        raise FormatError(
            f"{len(buf) - offset} trailing bytes at byte {offset}")

    try:
        model_config = ModelConfig.from_dict(header["model_config"])
        frontend = FrontendConfig.from_dict(header["frontend"])
    except (ContractError, InputError, TypeError) as exc:
        raise FormatError(f"invalid config in header: {exc}") from exc
    return Checkpoint(
        stage=int(header["stage"]), iteration=int(header["iteration"]),
        epoch=int(header["epoch"]), model_config=model_config,
        frontend=frontend, nets=tuple(header["nets"]),
        frozen=tuple(header["frozen"]), params=params,
        cosface=header["cosface"], optimizer=optimizer,
        metric_history=list(header["metric_history"]))
