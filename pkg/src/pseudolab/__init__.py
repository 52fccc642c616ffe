"""Semi-supervised training lab: two networks cross-supervise each other
with confidence-thresholded pseudo-labels on a synthetic video benchmark."""

__version__ = "0.1.0"
