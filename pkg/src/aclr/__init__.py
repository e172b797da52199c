"""Adversarial contrastive training of BiGCN rumor detectors for low-resource targets."""

__version__ = "0.1.0"
