#!/usr/bin/env python3
"""Tour of a trained detector: latent separation, activation maps, freezing.

Loads the corpus and checkpoints written by quickstart_pipeline.py and pokes
at three properties the architecture is built around:

  * the disentangled latent z_d splits bona fide from synthetic clips far
    more cleanly than the general latent z_g does;
  * activation maps stay small on bona fide input (the concentration loss
    pushes them toward zero unless a pixel earns its keep);
  * the labeled stage never touches the general encoder, byte for byte.

Writes a handful of PGM images (input mel, activation map, weighted input)
under <run>/maps so you can look at what the classifier actually sees.
"""

import argparse
import os
import sys

import numpy as np

from spoofvae.checkpoint import load_checkpoint, restore_bundle
from spoofvae.data import export_pgm, parse_manifest
from spoofvae.evaluate import (compute_embeddings, load_clip_features,
                               separation_ratio)
from spoofvae.model import infer
from spoofvae.tensor import Tensor


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", default="quickstart_out",
                    help="output directory of quickstart_pipeline.py")
    args = ap.parse_args()
    manifest = os.path.join(args.run, "corpus", "manifest.csv")
    best_path = os.path.join(args.run, "best.dsva")
    if not (os.path.exists(manifest) and os.path.exists(best_path)):
        sys.exit(f"no pipeline artifacts under {args.run!r}; "
                 "run quickstart_pipeline.py first")

    best = load_checkpoint(best_path)
    bundle, _ = restore_bundle(best)
    eval_recs = [r for r in parse_manifest(manifest) if r.split == "eval"]
    feats = np.concatenate([load_clip_features(r, best.frontend)[None]
                            for r in eval_recs])
    labels = [0 if r.label == "bonafide" else 1 for r in eval_recs]

    print("[1/3] class separation in the two latent spaces (eval split)")
    sep = {}
    for which in ("general", "disentangled"):
        emb = compute_embeddings(bundle, feats, which)
        sep[which] = separation_ratio(emb, labels)
        print(f"      z_{which[0]}: centroid gap / within-class spread = "
              f"{sep[which]:.2f}")
    print(f"      the disentangled space separates "
          f"{sep['disentangled'] / sep['general']:.1f}x more sharply")

    print("[2/3] activation-map mass by class")
    _, a_map, _ = infer(bundle, Tensor(feats))
    mass = np.abs(a_map).mean(axis=(1, 2, 3))
    by_class = {lab: np.mean([m for m, y in zip(mass, labels) if y == lab])
                for lab in (0, 1)}
    print(f"      mean |A|: bona fide {by_class[0]:.3f}, "
          f"synthetic {by_class[1]:.3f} "
          "(maps light up where artifact evidence lives)")

    print("[3/3] the general encoder after the labeled stage")
    stage1 = load_checkpoint(os.path.join(args.run, "stage1.dsva"))
    names = [n for n in stage1.params if n.startswith("general_encoder.")]
    same = all(stage1.params[n].tobytes() == best.params[n].tobytes()
               for n in names)
    print(f"      {len(names)} tensors compared: "
          f"{'byte-identical' if same else 'CHANGED (bug!)'}")

    maps_dir = os.path.join(args.run, "maps")
    os.makedirs(maps_dir, exist_ok=True)
    picks = {}
    for rec in eval_recs:
        picks.setdefault(rec.synthesizer_id, rec)
    for gid, rec in sorted(picks.items()):
        x = load_clip_features(rec, best.frontend)[None]
        _, a, xw = infer(bundle, Tensor(x))
        # row 0 is the lowest mel bin; flip so images put high freqs on top
        export_pgm(np.flipud(x[0, 0]),
                   os.path.join(maps_dir, f"{gid}.x.pgm"), "minmax")
        export_pgm(np.flipud(a[0, 0]),
                   os.path.join(maps_dir, f"{gid}.amap.pgm"),
                   ("fixed", 0.0, 1.0))
        export_pgm(np.flipud(xw[0, 0]),
                   os.path.join(maps_dir, f"{gid}.xmap.pgm"), "minmax")
    print(f"      wrote {3 * len(picks)} PGM images to {maps_dir}")


if __name__ == "__main__":
    main()
