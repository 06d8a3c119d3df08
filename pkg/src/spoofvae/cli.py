"""Command-line entry point exposing the full pipeline as subcommands.

Subcommands: gen-toy, train-stage1, train-stage2, select-best, eval, infer,
export-embeddings.  Machine-readable output goes to stdout or files under
--out; progress and notes go to stderr.  Exit codes: 0 success, 1 bad
input or file format, 2 internal error.

Manifest splits follow fixed conventions: train-stage1 and train-stage2
consume the train split, validation comes from the dev split, and eval /
export-embeddings use the eval split.  When the wanted split is empty the
whole manifest is used and a note is printed to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import model as M
from .checkpoint import load_checkpoint, restore_bundle, save_checkpoint
from .data import (ToyConfig, export_pgm, generate_toy_dataset, load_wav,
                   parse_manifest)
from .dsp import mel_features
from .errors import FormatError, InputError, SpoofVaeError
from .evaluate import (EMBED_BOTH, EMBED_DISENTANGLED, EMBED_GENERAL,
                       eval_report, export_embeddings, score_dataset,
                       write_scores_csv)
from .tensor import Tensor
from .train import StageConfig, select_best, train_stage1, train_stage2

_WHICH = {"fg": EMBED_GENERAL, "fd": EMBED_DISENTANGLED, "both": EMBED_BOTH}


class _UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage as exit-1 input errors."""

    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _pick_split(records, split: str):
    subset = [r for r in records if r.split == split]
    if subset:
        return subset
    _note(f"note: manifest has no '{split}' rows; using all "
          f"{len(records)} rows")
    return records


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return doc


def _stage_config(args, stage: int) -> StageConfig:
    if args.config:
        doc = _load_json(args.config)
        doc.setdefault("stage", stage)
        if doc["stage"] != stage:
            raise InputError(
                f"config declares stage {doc['stage']}, subcommand needs "
                f"stage {stage}")
        cfg = StageConfig.from_dict(doc)
    else:
        cfg = StageConfig.stage1() if stage == 1 else StageConfig.stage2()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _checkpoint_paths(arg) -> list:
    if os.path.isdir(arg):
        paths = sorted(glob.glob(os.path.join(arg, "*.dsva")))
        if not paths:
            raise InputError(f"no .dsva checkpoints found in {arg}")
        return paths
    return [arg]


def _report_failures(failures) -> None:
    for f in failures:
        _note(f"failed: {f['path']}: {f['error']}")
    if failures:
        _note(f"note: {len(failures)} clip(s) failed to score")


# ---- subcommand bodies --------------------------------------------------------

def _cmd_gen_toy(args) -> int:
    cfg = ToyConfig.from_dict(_load_json(args.config)) if args.config \
        else ToyConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    manifest = generate_toy_dataset(cfg, args.out)
    print(manifest)
    return 0


def _cmd_train_stage1(args) -> int:
    cfg = _stage_config(args, 1)
    records = _pick_split(parse_manifest(args.manifest), "train")
    ckpt = train_stage1(records, cfg, log=_note)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "stage1.dsva")
    save_checkpoint(ckpt, path)
    print(path)
    return 0


def _cmd_train_stage2(args) -> int:
    cfg = _stage_config(args, 2)
    records = parse_manifest(args.manifest)
    train_records = _pick_split(records, "train")
    if args.val_manifest:
        val_records = _pick_split(parse_manifest(args.val_manifest), "dev")
    else:
        val_records = [r for r in records if r.split == "dev"]
        if not val_records:
            _note("note: no dev rows for validation; metrics use the "
                  "training records")
            val_records = None
    stage1 = load_checkpoint(args.stage1_checkpoint) \
        if args.stage1_checkpoint else None
    if stage1 is None:
        _note("note: no stage-1 checkpoint; the general encoder stays at "
              "its random initialization")
    ckpts = train_stage2(train_records, stage1, cfg,
                         val_records=val_records, log=_note)
    os.makedirs(args.out, exist_ok=True)
    for ckpt in ckpts:
        path = os.path.join(args.out, f"epoch_{ckpt.epoch:03d}.dsva")
        save_checkpoint(ckpt, path)
        print(path)
    return 0


def _cmd_select_best(args) -> int:
    paths = _checkpoint_paths(args.checkpoint)
    ckpts = [load_checkpoint(p) for p in paths]
    val_records = _pick_split(parse_manifest(args.val_manifest), "dev") \
        if args.val_manifest else None
    best = select_best(ckpts, val_records)
    source = paths[next(i for i, c in enumerate(ckpts) if c is best)]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "best.dsva")
        save_checkpoint(best, path)
        print(path)
    else:
        print(source)
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    bundle, _ = restore_bundle(ckpt)
    records = _pick_split(parse_manifest(args.manifest), "eval")
    scores, failures = score_dataset(bundle, records, ckpt.frontend)
    _report_failures(failures)
    report = eval_report(scores)
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_scores_csv(scores, os.path.join(args.out, "scores.csv"))
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    bundle, _ = restore_bundle(ckpt)
    feats = mel_features(load_wav(args.wav), ckpt.frontend)[None, None, :, :]
    scores, a_map, x_map = M.infer(bundle, Tensor(feats))
    score_text = f"{float(scores[0]):.6g}"
    print(score_text)
    if args.maps:
        os.makedirs(args.maps, exist_ok=True)
        stem = os.path.splitext(os.path.basename(args.wav))[0]
        x_hat = M.reconstruct(bundle, Tensor(feats))
        with open(os.path.join(args.maps, f"{stem}.score.txt"), "w") as fh:
            fh.write(score_text + "\n")
        # row 0 is the lowest mel bin; images put high frequencies on top
        export_pgm(np.flipud(feats[0, 0]),
                   os.path.join(args.maps, f"{stem}.x.pgm"), "minmax")
        export_pgm(np.flipud(x_hat[0, 0]),
                   os.path.join(args.maps, f"{stem}.xrec.pgm"), "minmax")
        export_pgm(np.flipud(a_map[0, 0]),
                   os.path.join(args.maps, f"{stem}.amap.pgm"),
                   ("fixed", 0.0, 1.0))
        export_pgm(np.flipud(x_map[0, 0]),
                   os.path.join(args.maps, f"{stem}.xmap.pgm"), "minmax")
    return 0


def _cmd_export_embeddings(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    bundle, _ = restore_bundle(ckpt)
    records = _pick_split(parse_manifest(args.manifest), "eval")
    lines, failures = export_embeddings(bundle, records, _WHICH[args.which],
                                        ckpt.frontend)
    _report_failures(failures)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "embeddings.csv")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(path)
    else:
        for line in lines:
            print(line)
    return 0


# ---- wiring -------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="spoofvae",
                     description="Two-stage spectrogram disentanglement for "
                                 "synthetic-speech detection")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-toy", help="generate the deterministic toy corpus")
    p.add_argument("--config", help="ToyConfig JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(run=_cmd_gen_toy)

    p = sub.add_parser("train-stage1", help="reconstruction pre-training")
    p.add_argument("--config", help="StageConfig JSON (stage 1)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(run=_cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="labeled disentanglement training")
    p.add_argument("--config", help="StageConfig JSON (stage 2)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--stage1-checkpoint")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(run=_cmd_train_stage2)

    p = sub.add_parser("select-best",
                       help="pick the checkpoint with the best validation "
                            "balanced accuracy")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint file or directory of .dsva files")
    p.add_argument("--val-manifest",
                   help="recompute metrics instead of using recorded ones")
    p.add_argument("--out", help="directory for a best.dsva copy")
    p.set_defaults(run=_cmd_select_best)

    p = sub.add_parser("eval", help="score a manifest and print the report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="directory for scores.csv and report.json")
    p.set_defaults(run=_cmd_eval)

    p = sub.add_parser("infer", help="score one clip, optionally with maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--maps", help="directory for score.txt and PGM images")
    p.set_defaults(run=_cmd_infer)

    p = sub.add_parser("export-embeddings", help="per-clip mean latents as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--which", choices=sorted(_WHICH), default="both")
    p.add_argument("--out", help="directory for embeddings.csv")
    p.set_defaults(run=_cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.run(args)
    except SystemExit as exc:  # argparse -h/--help
        return 0 if exc.code in (0, None) else int(exc.code)
    except (InputError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpoofVaeError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
