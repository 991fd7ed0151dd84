"""Write encoded texts into the scenario embedding-CSV contract."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .assets import TextAssets
from .encoder import TextEncoder


def _write_table(path: Path, id_column: str, ids: list[int], matrix: np.ndarray) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([id_column] + [f"e{k}" for k in range(matrix.shape[1])])
        for ident, row in zip(ids, matrix):
            writer.writerow([str(ident)] + [repr(float(x)) for x in row])


def export_embeddings(assets: TextAssets, encoder: TextEncoder, out_dir) -> tuple[Path, Path]:
    """Encode all texts and write instructions.csv / exemplars.csv.

    Output width equals the encoder hidden size; rows align with the dense
    asset ids.  Returns the two file paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inst_matrix = encoder.encode([text for _, text in assets.instructions])
    ex_matrix = encoder.encode([text for _, text in assets.exemplars])
    inst_path = out / "instructions.csv"
    ex_path = out / "exemplars.csv"
    _write_table(inst_path, "instruction_id", [i for i, _ in assets.instructions], inst_matrix)
    _write_table(ex_path, "exemplar_id", [e for e, _ in assets.exemplars], ex_matrix)
    return inst_path, ex_path
