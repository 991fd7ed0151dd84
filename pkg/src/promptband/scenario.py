"""On-disk scenario contract: embedding CSVs, loss tables, manifest.

All files are UTF-8 CSV with a header row and "." as the decimal separator.
Floats are written with ``repr`` so identical data produces identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import PromptSpace, build_prompt_space
from .errors import ConfigError, ValidationError
from .oracle import TabularOracle

__all__ = ["Scenario", "load_scenario", "write_scenario_files", "scenario_from_spec", "read_embeddings_csv"]

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class Scenario:
    """A named prompt pool plus its precomputed validation/test losses."""

    name: str
    space: PromptSpace
    oracle: TabularOracle
    chain_seed: int
    digest: str

    @property
    def n_valid(self) -> int:
        return self.oracle.n_valid

    @property
    def n_test(self) -> int:
        return self.oracle.n_test


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scenario_files(out_dir, name: str, instructions, exemplars, oracle: TabularOracle) -> None:
    """Write the full scenario contract into ``out_dir`` (created if needed)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = len(np.atleast_1d(instructions[0][1]))
    emb_header = [f"e{k}" for k in range(d)]

    _write_csv(
        out / "instructions.csv",
        ["instruction_id", *emb_header],
        [[str(int(i)), *(_fmt(x) for x in np.atleast_1d(v))] for i, v in instructions],
    )
    _write_csv(
        out / "exemplars.csv",
        ["exemplar_id", *emb_header],
        [[str(int(e)), *(_fmt(x) for x in np.atleast_1d(v))] for e, v in exemplars],
    )

    space = build_prompt_space(list(instructions), list(exemplars))
    _write_csv(
        out / "prompts.csv",
        ["prompt_id", "instruction_id", "exemplar_id"],
        [[str(p), str(i), str(e)] for p, (i, e) in enumerate(space.prompts)],
    )

    for fname, matrix in (("valid_losses.csv", oracle.valid_matrix), ("test_losses.csv", oracle.test_matrix)):
        rows = (
            [str(p), str(j), _fmt(matrix[p, j])]
            for p in range(matrix.shape[0])
            for j in range(matrix.shape[1])
        )
        _write_csv(out / fname, ["prompt_id", "instance_id", "loss"], rows)

    manifest = {
        "name": name,
        "n_valid": int(oracle.n_valid),
        "n_test": int(oracle.n_test),
        "embedding_dim": int(d),
        "loss_kind": "zero_one",
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_embeddings_csv(
    path: Path, id_column: str, expect_dim: int | None = None
) -> list[tuple[int, np.ndarray]]:
    """Read an id + e0..e{d-1} embedding table; width inferred when unpinned."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != id_column or header[1:] != [f"e{k}" for k in range(len(header) - 1)]:
            raise ValidationError(f"{path.name}: unexpected header {header[:3]}...")
        if expect_dim is not None and len(header) - 1 != expect_dim:
            raise ValidationError(
                f"{path.name}: embedding width {len(header) - 1} != manifest embedding_dim {expect_dim}"
            )
        out = []
        for row in reader:
            out.append((int(row[0]), np.array([float(x) for x in row[1:]], dtype=np.float64)))
    return out


def _read_loss_matrix(path: Path, n_prompts: int, n_instances: int) -> np.ndarray:
    matrix = np.full((n_prompts, n_instances), np.nan)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["prompt_id", "instance_id", "loss"]:
            raise ValidationError(f"{path.name}: unexpected header {header}")
        for row in reader:
            matrix[int(row[0]), int(row[1])] = float(row[2])
    if np.isnan(matrix).any():
        raise ValidationError(f"{path.name}: missing (prompt, instance) loss entries")
    return matrix


def load_scenario(directory, chain_seed: int = 0) -> Scenario:
    """Load and validate a scenario directory written in the contract above."""
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigError(f"missing manifest: {manifest_path}")
    manifest_bytes = manifest_path.read_bytes()
    manifest = json.loads(manifest_bytes)
    for key in ("name", "n_valid", "n_test", "embedding_dim", "loss_kind"):
        if key not in manifest:
            raise ConfigError(f"{manifest_path}: manifest lacks key {key!r}")

    d = int(manifest["embedding_dim"])
    instructions = read_embeddings_csv(root / "instructions.csv", "instruction_id", d)
    exemplars = read_embeddings_csv(root / "exemplars.csv", "exemplar_id", d)
    space = build_prompt_space(instructions, exemplars)

    with (root / "prompts.csv").open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        listed = [(int(r[0]), int(r[1]), int(r[2])) for r in reader]
    expected = [(p, i, e) for p, (i, e) in enumerate(space.prompts)]
    if sorted(listed) != expected:
        raise ValidationError("prompts.csv does not enumerate the Cartesian pool in id order")

    valid = _read_loss_matrix(root / "valid_losses.csv", space.n_prompts, int(manifest["n_valid"]))
    test = _read_loss_matrix(root / "test_losses.csv", space.n_prompts, int(manifest["n_test"]))
    oracle = TabularOracle(valid_matrix=valid, test_matrix=test)

    return Scenario(
        name=str(manifest["name"]),
        space=space,
        oracle=oracle,
        chain_seed=chain_seed,
        digest=hashlib.sha256(manifest_bytes).hexdigest(),
    )


def scenario_from_spec(spec) -> Scenario:
    """Materialize a synthetic scenario in memory (no files)."""
    from .oracle import synthesize

    instructions, exemplars, oracle, _ = synthesize(spec)
    space = build_prompt_space(instructions, exemplars)
    digest = hashlib.sha256(json.dumps(spec.__dict__, sort_keys=True).encode()).hexdigest()
    return Scenario(name=spec.name, space=space, oracle=oracle, chain_seed=spec.seed, digest=digest)
