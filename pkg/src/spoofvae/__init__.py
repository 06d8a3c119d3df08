"""Two-stage disentangled VAE for synthetic-speech detection.

A numpy-only pipeline: WAV ingestion and a log-mel front end, a small
reverse-mode autodiff core, paired variational encoders with joint and
activation-map decoders, two-stage training with encoder freezing, and
EER / balanced-accuracy evaluation.  The `spoofvae` command line exposes
the whole thing; see the README for a walkthrough.
"""

__version__ = "0.1.0"
