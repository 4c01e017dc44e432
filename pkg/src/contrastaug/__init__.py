"""Contrastive visual data-augmentation pipeline."""

__version__ = "0.1.0"
