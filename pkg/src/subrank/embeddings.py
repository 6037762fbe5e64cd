"""Word-vector table in FastText text format, plus sum pooling.

File layout: a header line "count dim", then one "word v1 ... v_dim" line
per word. Pooling is an element-wise SUM over in-vocabulary tokens (sum
beats average for short titles because it keeps title length information);
out-of-vocabulary tokens are skipped so features stay faithful to the
embedding file.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

# A pair feature is pool(query tokens) ++ pool(candidate tokens): 2*dim floats.
PairFeature = np.ndarray


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse a FastText-format text file; malformed lines error with their number."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: header must be 'count dim', got {' '.join(header)!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise DataError(f"{path}:1: non-integer header: {exc}") from exc
        if count < 0 or dim <= 0:
            raise DataError(f"{path}:1: invalid header count={count} dim={dim}")
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values for {word!r}, got {len(values)}"
                )
            if word in vectors:
                raise DataError(f"{path}:{lineno}: duplicate word {word!r}")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric value: {exc}") from exc
            vectors[word] = vec
    if len(vectors) != count:
        raise DataError(f"{path}: header declares {count} words but file has {len(vectors)}")
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for word, vec in table.vectors.items():
            fh.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def pool(tokens: list[str], table: EmbeddingTable) -> np.ndarray:
    """Sum of embeddings of in-vocabulary tokens; zero vector when none match."""
    out = np.zeros(table.dim, dtype=np.float64)
    for tok in tokens:
        vec = table.vectors.get(tok)
        if vec is not None:
            out += vec
    return out


def featurize_pair(
    u_tokens: list[str], v_tokens: list[str], table: EmbeddingTable
) -> PairFeature:
    """Concatenate pooled query and candidate embeddings. Order-sensitive."""
    return np.concatenate([pool(u_tokens, table), pool(v_tokens, table)])
