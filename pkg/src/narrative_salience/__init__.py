"""Contrastive story embeddings and sentence-salience ranking."""

__version__ = "0.1.0"
