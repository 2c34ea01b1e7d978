"""procuraudit - engineered contract features and the model matrix"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from errors import AlignmentError, DegenerateInputError
from ingest import RawContract
from text import SparseCounts, Vocabulary

OTHER = "__OTHER__"

# log_* column -> raw amount attribute
LOG_SOURCES = {
    "log_cuantia": "cuantia",
    "log_valor_definitivo": "valor_definitivo",
    "log_valor_contrato": "valor_contrato",
    "log_valor_adiciones": "valor_adiciones",
    "log_valor_total": "valor_total",
}
NUMERIC_COLUMNS = tuple(LOG_SOURCES) + ("amount_diff",)
FLAG_COLUMNS = ("overdraw_flag", "date_inconsistency_flag")

DEFAULT_CATEGORICALS = ("TIPO_CONTRATO", "TIPO_MODALIDAD", "NIVEL", "ORDEN", "ESTADO_PROCESO")
BLOCK_PREFIXES = ("num:", "flag:", "cat:", "tok:")


# ========== per-contract features ==========

@dataclass(frozen=True)
class ContractFeatures:
    contract_key: tuple[str | None, int]
    log_cuantia: float | None
    log_valor_definitivo: float | None
    log_valor_contrato: float | None
    log_valor_adiciones: float | None
    log_valor_total: float | None
    amount_diff: float | None
    overdraw_flag: int | None
    date_inconsistency_flag: int | None

    @property
    def missing_flags(self) -> dict[str, int]:
        return {name: int(getattr(self, name) is None) for name in NUMERIC_COLUMNS + FLAG_COLUMNS}


def log_transform(v: Decimal | float | None) -> float | None:
    """ln(1 + v). Amounts can be exactly 0, hence log1p."""
    if v is None:
        return None
    if v < 0:
        raise ValueError(f"log_transform expects a non-negative amount, got {v}")
    return math.log1p(float(v))


def derive_overdraw(cuantia, valor_definitivo) -> tuple[float | None, int | None]:
    """(amount_diff in log space, 1 if the definitive value exceeds the sanctioned amount)."""
    if cuantia is None or valor_definitivo is None:
        return None, None
    diff = log_transform(valor_definitivo) - log_transform(cuantia)
    return diff, int(valor_definitivo > cuantia)


def derive_date_flag(created: date | None, awarded: date | None) -> int | None:
    """1 when the contract was created after it was awarded."""
    if created is None or awarded is None:
        return None
    return int(created > awarded)


def extract_features(records: list[RawContract]) -> list[ContractFeatures]:
    out = []
    for rec in records:
        logs = {name: log_transform(getattr(rec, attr)) for name, attr in LOG_SOURCES.items()}
        diff, overdraw = derive_overdraw(rec.cuantia, rec.valor_definitivo)
        out.append(ContractFeatures(
            contract_key=(rec.id_objeto_contrato, rec.row_index),
            amount_diff=diff,
            overdraw_flag=overdraw,
            date_inconsistency_flag=derive_date_flag(rec.fechacreacion, rec.fechaestadoadjudicado),
            **logs,
        ))
    return out


# ---------- correlation ----------

def pearson(xs, ys) -> float:
    """Pearson correlation coefficient, clipped to [-1, 1]."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInputError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DegenerateInputError("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("pearson undefined for a zero-variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


# ---------- categoricals ----------

def one_hot(values: list[str | None], min_count: int = 5) -> tuple[list[str], np.ndarray]:
    """One column per category seen at least min_count times, plus __OTHER__.

    __OTHER__ absorbs rare categories and nulls; it is always the last column.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(v for v in values if v is not None)
    kept = sorted(c for c, n in counts.items() if n >= min_count)
    position = {c: i for i, c in enumerate(kept)}
    columns = kept + [OTHER]

    matrix = np.zeros((len(values), len(columns)), dtype=np.int8)
    for r, v in enumerate(values):
        matrix[r, position.get(v, len(kept))] = 1
    return columns, matrix


# ========== FeatureMatrix ==========

@dataclass
class FeatureMatrix:
    column_names: list[str]
    rows: np.ndarray
    row_keys: list[tuple[str | None, int]]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise AlignmentError(f"rows must be 2-D, got shape {self.rows.shape}")
        n, d = self.rows.shape
        if len(self.column_names) != d:
            raise AlignmentError(f"{len(self.column_names)} column names for {d} columns")
        if len(self.row_keys) != n:
            raise AlignmentError(f"{len(self.row_keys)} row keys for {n} rows")
        if len(set(self.column_names)) != d:
            dupes = sorted({c for c in self.column_names if self.column_names.count(c) > 1})
            raise AlignmentError(f"duplicate column names: {dupes}")
        if not np.isfinite(self.rows).all():
            raise DegenerateInputError("feature matrix contains NaN or infinite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.column_names.index(name)]

    def block_counts(self) -> dict[str, int]:
        """Number of columns per block prefix."""
        return {p.rstrip(":"): sum(1 for c in self.column_names if c.startswith(p)) for p in BLOCK_PREFIXES}

    def row_position(self) -> dict[int, int]:
        """row_index -> matrix row."""
        return {key[1]: i for i, key in enumerate(self.row_keys)}

    def save(self, path: str | Path) -> None:
        """CSV with header = column_names plus a sidecar JSON holding row_keys."""
        path = Path(path)
        pd.DataFrame(self.rows, columns=self.column_names).to_csv(
            path, index=False, float_format="%.17g", lineterminator="\n",
        )
        with open(path.with_suffix(".json"), "w", encoding="utf-8") as f:
            json.dump({"row_keys": [list(k) for k in self.row_keys]}, f, ensure_ascii=False)

    @classmethod
    def load(cls, path: str | Path) -> FeatureMatrix:
        path = Path(path)
        df = pd.read_csv(path, dtype=np.float64)
        with open(path.with_suffix(".json"), "r", encoding="utf-8") as f:
            keys = [tuple(k) for k in json.load(f)["row_keys"]]
        return cls(column_names=list(df.columns), rows=df.to_numpy(), row_keys=keys)


def _impute(column: np.ndarray, strategy: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Fill NaNs. Returns (filled, missing mask or None if nothing was missing)."""
    mask = np.isnan(column)
    if not mask.any():
        return column, None
    if strategy == "median":
        present = column[~mask]
        fill = float(np.median(present)) if present.size else 0.0
    elif strategy == "zero":
        fill = 0.0
    else:
        raise ValueError(f"unknown impute strategy {strategy!r}")
    filled = column.copy()
    filled[mask] = fill
    return filled, mask


def assemble_matrix(
    features: list[ContractFeatures],
    categoricals: dict[str, tuple[list[str], np.ndarray]] | None = None,
    text: SparseCounts | None = None,
    vocabulary: Vocabulary | None = None,
    impute: str = "median",
) -> FeatureMatrix:
    """Concatenate [numeric | flags | one-hot | token counts] into a FeatureMatrix.

    Nulls are imputed; every column that needed imputation gets a
    flag:missing_<name> indicator.
    """
    n = len(features)
    names: list[str] = []
    blocks: list[np.ndarray] = []
    missing: list[tuple[str, np.ndarray]] = []

    for prefix, columns in (("num:", NUMERIC_COLUMNS), ("flag:", FLAG_COLUMNS)):
        for name in columns:
            raw = np.array(
                [np.nan if getattr(f, name) is None else float(getattr(f, name)) for f in features],
                dtype=np.float64,
            )
            filled, mask = _impute(raw, impute)
            names.append(prefix + name)
            blocks.append(filled)
            if mask is not None:
                missing.append((f"flag:missing_{name}", mask.astype(np.float64)))

    for name, mask in missing:
        names.append(name)
        blocks.append(mask)

    for field_name, (columns, matrix) in (categoricals or {}).items():
        if matrix.shape[0] != n:
            raise AlignmentError(f"categorical block {field_name} has {matrix.shape[0]} rows, expected {n}")
        for j, category in enumerate(columns):
            names.append(f"cat:{field_name}={category}")
            blocks.append(matrix[:, j].astype(np.float64))

    if text is not None:
        if text.n_rows != n:
            raise AlignmentError(f"text block has {text.n_rows} rows, expected {n}")
        tokens = vocabulary.tokens if vocabulary is not None else [str(j) for j in range(text.n_cols)]
        if len(tokens) != text.n_cols:
            raise AlignmentError(f"vocabulary has {len(tokens)} tokens, counts have {text.n_cols} columns")
        dense = text.toarray().astype(np.float64)
        names.extend(f"tok:{t}" for t in tokens)
        blocks.extend(dense[:, j] for j in range(dense.shape[1]))

    rows = np.column_stack(blocks) if blocks else np.zeros((n, 0))
    matrix = FeatureMatrix(column_names=names, rows=rows, row_keys=[f.contract_key for f in features])
    logger.info(f"[features] matrix {matrix.shape[0]}x{matrix.shape[1]} {matrix.block_counts()}")
    return matrix
