"""Weakly-supervised semantic segmentation from image-level tags.

The package trains a small segmentation network without any pixel labels:
a pair of weight-shared classification branches mines per-class activation
masks (one branch sees the clean image, the other an image with randomly
hidden grid patches), a fully-connected CRF smooths the masks into
pseudo-labels, and the segmenter is trained against those labels with an
adaptive switch to a tag-only loss whenever the mask collapses to
background. Everything runs on CPU in double precision on top of a tiny
reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
