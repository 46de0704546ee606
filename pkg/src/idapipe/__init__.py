"""Interventional data augmentation pipeline.

Turns a labeled source-domain image dataset into an interventionally
augmented training set via prompt-driven generation backends, filters and
audits the synthetic data, and measures the downstream effect with
single-domain generalization and spurious-feature-reliance protocols.
"""

__version__ = "0.1.0"
