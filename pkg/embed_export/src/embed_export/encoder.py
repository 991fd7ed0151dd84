"""Pretrained text encoders with first-token or mean pooling."""

from __future__ import annotations

import numpy as np


class EncoderError(RuntimeError):
    """The encoder could not be loaded.  Maps to exit code 1."""


class TextEncoder:
    """Wraps a transformers encoder for deterministic batch inference.

    ``pooling='cls'`` takes the first-token hidden state; ``'mean'`` averages
    hidden states over non-padding tokens.
    """

    def __init__(self, name_or_path: str, pooling: str = "cls", batch_size: int = 16):
        if pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling {pooling!r}; use 'cls' or 'mean'")
        self.pooling = pooling
        self.batch_size = batch_size
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer

            self._torch = torch
            self.tokenizer = AutoTokenizer.from_pretrained(name_or_path)
            self.model = AutoModel.from_pretrained(name_or_path)
        except Exception as exc:  # noqa: BLE001 - any load failure is fatal
            raise EncoderError(f"failed to load encoder {name_or_path!r}: {exc}") from exc
        self.model.eval()

    @property
    def hidden_size(self) -> int:
        return int(self.model.config.hidden_size)

    def encode(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        rows = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = texts[start : start + self.batch_size]
                tokens = self.tokenizer(
                    batch, padding=True, truncation=True, return_tensors="pt"
                )
                hidden = self.model(**tokens).last_hidden_state
                if self.pooling == "cls":
                    pooled = hidden[:, 0, :]
                else:
                    mask = tokens["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                    pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
                rows.append(pooled.to(torch.float64).cpu().numpy())
        out = np.concatenate(rows, axis=0)
        if not np.isfinite(out).all():
            raise EncoderError("encoder produced non-finite embeddings")
        return out
