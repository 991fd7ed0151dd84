"""Export text embeddings in the prompt-selection scenario contract."""

__version__ = "0.1.0"
