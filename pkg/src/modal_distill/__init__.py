"""Decoupled multimodal representation learning with graph distillation."""

__version__ = "0.1.0"
