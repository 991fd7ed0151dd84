"""Text asset loading: instruction and exemplar lists with dense ids."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class AssetError(ValueError):
    """Malformed text assets (bad ids, empty text).  Maps to exit code 2."""


@dataclass(frozen=True)
class TextAssets:
    """Instruction and exemplar texts ready for encoding.

    Exemplar text is the exemplar's input-output examples joined by newlines
    in tuple order, so example ordering stays visible to the encoder.
    """

    instructions: list[tuple[int, str]]
    exemplars: list[tuple[int, str]]


def _render_examples(examples: list[dict]) -> str:
    parts = []
    for ex in examples:
        parts.append(str(ex["input"]))
        parts.append(str(ex["output"]))
    return "\n".join(parts)


def _load_items(path: Path, label: str) -> list[tuple[int, str]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not data:
        raise AssetError(f"{label} file must be a non-empty JSON list")
    items = []
    for entry in data:
        if "id" not in entry:
            raise AssetError(f"{label} entry lacks an id: {entry!r}")
        ident = int(entry["id"])
        if "text" in entry:
            text = str(entry["text"])
        elif "examples" in entry:
            text = _render_examples(entry["examples"])
        else:
            raise AssetError(f"{label} {ident} has neither 'text' nor 'examples'")
        if not text.strip():
            raise AssetError(f"{label} {ident} has empty text")
        items.append((ident, text))
    items.sort(key=lambda t: t[0])
    ids = [i for i, _ in items]
    if ids != list(range(len(ids))):
        raise AssetError(f"{label} ids must be dense from 0, got {ids}")
    return items


def load_assets(instructions_path, exemplars_path) -> TextAssets:
    return TextAssets(
        instructions=_load_items(Path(instructions_path), "instruction"),
        exemplars=_load_items(Path(exemplars_path), "exemplar"),
    )
