"""procuraudit - bag-of-words over contract descriptions"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from scipy import sparse

from errors import EmptyVocabularyError, InsufficientDataError, UnreadableFileError

BUILTIN_STOPWORDS = Path(__file__).parent / "stopwords_es.txt"

# maximal runs of Unicode letters (word characters minus digits and underscore)
_TOKEN_RE = re.compile(r"[^\W\d_]+")


# ---------- tokens ----------

def tokenize(text: str | None, min_token_len: int = 2) -> list[str]:
    """Lowercased letter runs; digits and punctuation separate tokens. Accents are kept."""
    if not text:
        return []
    text = unicodedata.normalize("NFC", text).lower()
    return [t for t in _TOKEN_RE.findall(text) if len(t) >= min_token_len]


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """One word per line, '#' starts a comment. None or 'builtin' -> shipped Spanish list."""
    if path is None or path == "builtin":
        path = BUILTIN_STOPWORDS
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise UnreadableFileError(f"cannot read stopword file {path}: {e}") from e
    words = set()
    for line in lines:
        word = line.split("#", 1)[0].strip()
        if word:
            words.add(unicodedata.normalize("NFC", word).lower())
    return frozenset(words)


def document_text(record, columns=("DETALLE_OBJETO",)) -> str:
    """Concatenate the description columns of a RawContract."""
    parts = [record.get(c) for c in columns]
    return " ".join(p for p in parts if p)


# ========== vocabulary ==========

@dataclass(frozen=True)
class VectorizerParams:
    min_df_fraction: float = 0.0001
    max_df_fraction: float = 0.5
    max_features: int = 10000
    stopword_list: frozenset[str] = field(default_factory=load_stopwords)
    min_token_len: int = 2

    def __post_init__(self):
        if not 0 <= self.min_df_fraction < self.max_df_fraction <= 1:
            raise ValueError(
                f"need 0 <= min_df_fraction < max_df_fraction <= 1, "
                f"got {self.min_df_fraction}, {self.max_df_fraction}"
            )
        if self.max_features < 1:
            raise ValueError(f"max_features must be >= 1, got {self.max_features}")
        if self.min_token_len < 1:
            raise ValueError(f"min_token_len must be >= 1, got {self.min_token_len}")


@dataclass(frozen=True)
class Vocabulary:
    tokens: list[str]
    doc_freq: dict[str, int]
    n_docs: int

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def to_json(self) -> str:
        return json.dumps(
            {"n_docs": self.n_docs, "tokens": [{"t": t, "df": self.doc_freq[t]} for t in self.tokens]},
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, payload: str) -> Vocabulary:
        data = json.loads(payload)
        tokens = [entry["t"] for entry in data["tokens"]]
        return cls(tokens=tokens, doc_freq={e["t"]: e["df"] for e in data["tokens"]}, n_docs=data["n_docs"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def build_vocabulary(docs: list[list[str]], params: VectorizerParams | None = None) -> Vocabulary:
    """Stopwords out, then keep tokens with min_df < df/n_docs < max_df (both strict).

    Above max_features, the most frequent tokens by total count win, ties
    going to the lexicographically smaller token.
    """
    params = params or VectorizerParams()
    n_docs = len(docs)
    if n_docs < 1:
        raise InsufficientDataError("build_vocabulary needs at least one document")

    stop = params.stopword_list
    doc_freq: Counter[str] = Counter()
    total: Counter[str] = Counter()
    for doc in docs:
        kept = [t for t in doc if t not in stop]
        total.update(kept)
        doc_freq.update(set(kept))

    survivors = [
        t for t, df in doc_freq.items()
        if df / n_docs > params.min_df_fraction and df / n_docs < params.max_df_fraction
    ]
    if len(survivors) > params.max_features:
        survivors = sorted(survivors, key=lambda t: (-total[t], t))[: params.max_features]
    if not survivors:
        raise EmptyVocabularyError(
            f"no token survives stopword and document-frequency pruning ({n_docs} documents)"
        )

    tokens = sorted(survivors)
    logger.info(f"[text] vocabulary {len(tokens)} tokens from {len(doc_freq)} candidates, {n_docs} documents")
    return Vocabulary(tokens=tokens, doc_freq={t: doc_freq[t] for t in tokens}, n_docs=n_docs)


# ========== counts ==========

@dataclass
class SparseCounts:
    """Row-sparse document x token counts, CSR-backed."""

    matrix: sparse.csr_matrix

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def rows(self) -> list[list[tuple[int, int]]]:
        m = self.matrix
        return [
            [(int(c), int(v)) for c, v in zip(m.indices[m.indptr[r]:m.indptr[r + 1]], m.data[m.indptr[r]:m.indptr[r + 1]])]
            for r in range(self.n_rows)
        ]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_frame(self) -> pd.DataFrame:
        """(row, col, count) triplets sorted by (row, col)."""
        coo = self.matrix.tocoo()
        df = pd.DataFrame({"row": coo.row, "col": coo.col, "count": coo.data})
        return df.sort_values(["row", "col"], kind="mergesort").reset_index(drop=True)

    def save(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def load(cls, path: str | Path, n_rows: int, n_cols: int) -> SparseCounts:
        df = pd.read_csv(path)
        m = sparse.csr_matrix((df["count"].to_numpy(), (df["row"].to_numpy(), df["col"].to_numpy())), shape=(n_rows, n_cols))
        return cls(m)


def vectorize(docs: list[list[str]], vocab: Vocabulary) -> SparseCounts:
    """Count in-vocabulary tokens per document; everything else is ignored."""
    index = vocab.index
    indptr = [0]
    indices: list[int] = []
    data: list[int] = []
    for doc in docs:
        counts = Counter(index[t] for t in doc if t in index)
        for col in sorted(counts):
            indices.append(col)
            data.append(counts[col])
        indptr.append(len(indices))
    m = sparse.csr_matrix(
        (np.asarray(data, dtype=np.int64), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(docs), len(vocab.tokens)),
    )
    return SparseCounts(m)


def term_summary(counts: SparseCounts, vocab: Vocabulary) -> pd.DataFrame:
    """Terms with total and document counts, most frequent first."""
    m = counts.matrix
    summary = pd.DataFrame({
        "term": vocab.tokens,
        "term_count": np.asarray(m.sum(axis=0)).ravel(),
        "document_count": np.asarray((m > 0).sum(axis=0)).ravel(),
    })
    return summary.sort_values(["term_count", "term"], ascending=[False, True], kind="mergesort").reset_index(drop=True)
