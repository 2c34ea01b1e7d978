"""procuraudit - contract CSV ingest (schema mapping, cell parsing, duplicate collapse)"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from datetime import date, datetime
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import BinaryIO

import pandas as pd
import yaml
from loguru import logger

from errors import ParseError, SchemaError, UnreadableFileError

# logical columns of the SECOP export, in source order
LOGICAL_FIELDS: tuple[str, ...] = (
    "NIVEL",
    "ORDEN",
    "NIT_ENTIDAD",
    "NOMBRE_ENTIDAD",
    "TIPO_MODALIDAD",
    "NUMERO_CONSTANCIA",
    "ID_OBJETO_CONTRATO",
    "OBJETO_CONTRATO",
    "DETALLE_OBJETO",
    "TIPO_CONTRATO",
    "CUANTIA",
    "VALOR_DEFINITIVO",
    "FECHACREACION",
    "FECHAESTADOBORRADOR",
    "FECHAESTADODESCARTADO",
    "FECHAESTADOCONVOCADO",
    "FECHAESTADOADJUDICADO",
    "FECHAESTADOTERMANORMALDESPCONV",
    "FECHAESTADOTERMANORMALDESPCONV_1",
    "FECHAESTADOTERMANORMALDESPCONV_2",
    "FECHAESTADOTERMANORMALDESPCONV_3",
    "ESTADO_PROCESO",
    "NOMBRE_CONTRATISTA",
    "NIT_CONTRATISTA",
    "FECHA_FIRMA_CONTRATO",
    "VALOR_CONTRATO",
    "VALOR_ADICIONES",
    "VALOR_TOTAL",
)

AMOUNT_FIELDS = ("CUANTIA", "VALOR_DEFINITIVO", "VALOR_CONTRATO", "VALOR_ADICIONES", "VALOR_TOTAL")
DATE_FIELDS = tuple(f for f in LOGICAL_FIELDS if f.startswith("FECHA"))
REQUIRED_FIELDS = ("ID_OBJETO_CONTRATO", "FECHACREACION", "CUANTIA", "VALOR_DEFINITIVO", "DETALLE_OBJETO")

DEFAULT_DATE_FORMATS = ("YYYY-MM-DD", "DD/MM/YYYY", "MM/DD/YYYY hh:mm:ss")

# the source export spells this one header with a space
DEFAULT_COLUMN_MAP = {name: name for name in LOGICAL_FIELDS} | {"VALOR_TOTAL": "VALOR TOTAL"}

_LINE_RE = re.compile(r"line (\d+)")


# ========== types ==========

@dataclass(frozen=True)
class SchemaConfig:
    """How logical fields are found in a CSV and how cells are read."""

    column_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMN_MAP))
    date_formats: tuple[str, ...] = DEFAULT_DATE_FORMATS
    decimal_separator: str = "comma"

    def __post_init__(self):
        unknown = sorted(set(self.column_map) - set(LOGICAL_FIELDS))
        if unknown:
            raise SchemaError(f"unknown logical fields in column_map: {unknown}")
        missing = [f for f in REQUIRED_FIELDS if not self.column_map.get(f)]
        if missing:
            raise SchemaError(f"column_map must bind {missing}")
        headers = list(self.column_map.values())
        dupes = sorted({h for h in headers if headers.count(h) > 1})
        if dupes:
            raise SchemaError(f"headers mapped more than once: {dupes}")
        if self.decimal_separator not in ("point", "comma"):
            raise SchemaError(f"decimal_separator must be 'point' or 'comma', got {self.decimal_separator!r}")
        if not self.date_formats:
            raise SchemaError("date_formats must not be empty")

    @classmethod
    def from_dict(cls, raw: dict | None) -> SchemaConfig:
        raw = raw or {}
        column_map = raw.get("column_map") or DEFAULT_COLUMN_MAP
        return cls(
            column_map=dict(column_map),
            date_formats=tuple(raw.get("date_formats") or DEFAULT_DATE_FORMATS),
            decimal_separator=raw.get("decimal_separator", "comma"),
        )

    def mapped_fields(self) -> list[str]:
        """Logical fields bound by this config, in source order."""
        return [f for f in LOGICAL_FIELDS if f in self.column_map]


@dataclass
class RawContract:
    """One parsed CSV row. Attribute names are the lowercased logical names."""

    row_index: int
    nivel: str | None = None
    orden: str | None = None
    nit_entidad: str | None = None
    nombre_entidad: str | None = None
    tipo_modalidad: str | None = None
    numero_constancia: str | None = None
    id_objeto_contrato: str | None = None
    objeto_contrato: str | None = None
    detalle_objeto: str | None = None
    tipo_contrato: str | None = None
    cuantia: Decimal | None = None
    valor_definitivo: Decimal | None = None
    fechacreacion: date | None = None
    fechaestadoborrador: date | None = None
    fechaestadodescartado: date | None = None
    fechaestadoconvocado: date | None = None
    fechaestadoadjudicado: date | None = None
    fechaestadotermanormaldespconv: date | None = None
    fechaestadotermanormaldespconv_1: date | None = None
    fechaestadotermanormaldespconv_2: date | None = None
    fechaestadotermanormaldespconv_3: date | None = None
    estado_proceso: str | None = None
    nombre_contratista: str | None = None
    nit_contratista: str | None = None
    fecha_firma_contrato: date | None = None
    valor_contrato: Decimal | None = None
    valor_adiciones: Decimal | None = None
    valor_total: Decimal | None = None

    def get(self, logical: str):
        return getattr(self, logical.lower())

    @property
    def key(self) -> tuple[str | None, date | None]:
        return self.id_objeto_contrato, self.fechacreacion

    def fields_equal(self, other: RawContract) -> bool:
        """Equality on the logical fields, ignoring row_index."""
        return all(
            getattr(self, f.name) == getattr(other, f.name)
            for f in fields(self) if f.name != "row_index"
        )


@dataclass(frozen=True)
class Diagnostic:
    row: int
    column: str
    reason: str

    def to_json(self) -> str:
        return json.dumps({"row": self.row, "column": self.column, "reason": self.reason}, ensure_ascii=False)


# ---------- cell parsing ----------

_PATTERN_TOKENS = (("YYYY", "%Y"), ("MM", "%m"), ("DD", "%d"), ("hh", "%H"), ("mm", "%M"), ("ss", "%S"))


def _strptime_pattern(fmt: str) -> str:
    """'DD/MM/YYYY' -> '%d/%m/%Y'. strptime patterns pass through unchanged."""
    if "%" in fmt:
        return fmt
    for token, directive in _PATTERN_TOKENS:
        fmt = fmt.replace(token, directive)
    return fmt


def parse_date(text: str | None, formats=DEFAULT_DATE_FORMATS) -> date | None:
    """First format that parses wins. Empty or unparseable -> None."""
    if not formats:
        raise ValueError("formats must not be empty")
    if text is None:
        return None
    text = text.strip()
    if not text:
        return None
    for fmt in formats:
        try:
            return datetime.strptime(text, _strptime_pattern(fmt)).date()
        except ValueError:
            continue
    return None


def _read_amount(text: str | None, sep: str) -> tuple[Decimal | None, str | None]:
    """Returns (value, reason). reason is set only when a non-empty cell is rejected."""
    if text is None:
        return None, None
    cleaned = text.strip().replace(" ", "").lstrip("$")
    if not cleaned:
        return None, None
    if sep == "comma":
        cleaned = cleaned.replace(".", "").replace(",", ".")
    else:
        cleaned = cleaned.replace(",", "")
    try:
        value = Decimal(cleaned)
    except InvalidOperation:
        return None, "unparseable amount"
    if not value.is_finite():
        return None, "unparseable amount"
    if value < 0:
        return None, "negative amount"
    if value == 0:
        value = Decimal(0)  # drop the sign of -0
    return value, None


def parse_amount(text: str | None, sep: str = "comma") -> Decimal | None:
    """Amount in pesos. Thousands separators stripped; negatives and junk -> None."""
    return _read_amount(text, sep)[0]


# ========== CSV reading ==========

def _read_frame(stream) -> pd.DataFrame:
    try:
        df = pd.read_csv(stream, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise ParseError("no header row", line=1) from e
    except pd.errors.ParserError as e:
        m = _LINE_RE.search(str(e))
        raise ParseError(f"malformed CSV: {e}", line=int(m.group(1)) if m else None) from e
    except UnicodeDecodeError as e:
        raise ParseError(f"input is not UTF-8: {e}") from e
    except OSError as e:
        raise UnreadableFileError(f"cannot read {stream}: {e}") from e
    # short rows come back as NaN even with keep_default_na=False
    return df.fillna("")


def parse_csv(stream: BinaryIO | str | Path, cfg: SchemaConfig | None = None) -> tuple[list[RawContract], list[Diagnostic]]:
    """Parse a contract CSV. One RawContract per data row; rows are never dropped.

    Cells that fail to parse become None and leave a Diagnostic behind.
    """
    cfg = cfg or SchemaConfig()
    df = _read_frame(stream)

    headers = set(df.columns)
    missing = [(logical, header) for logical, header in cfg.column_map.items() if header not in headers]
    if missing:
        raise SchemaError(f"CSV is missing mapped headers: {[h for _, h in missing]}")

    columns = {logical: df[header].tolist() for logical, header in cfg.column_map.items()}
    records: list[RawContract] = []
    diagnostics: list[Diagnostic] = []

    for i in range(len(df)):
        row_index = i + 2  # header is line 1
        values = {}
        for logical in cfg.mapped_fields():
            cell = columns[logical][i]
            reason = None
            if logical in AMOUNT_FIELDS:
                value, reason = _read_amount(cell, cfg.decimal_separator)
            elif logical in DATE_FIELDS:
                value = parse_date(cell, cfg.date_formats)
                if value is None and cell.strip():
                    reason = "unparseable date"
            else:
                value = cell.strip() or None
            if reason:
                diagnostics.append(Diagnostic(row_index, logical, reason))
            values[logical.lower()] = value
        records.append(RawContract(row_index=row_index, **values))

    logger.info(f"[ingest] parsed {len(records)} rows, {len(diagnostics)} diagnostics")
    return records, diagnostics


def load_schema(path: str | Path) -> SchemaConfig:
    """SchemaConfig from a JSON (or YAML) file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise UnreadableFileError(f"cannot read schema file {path}: {e}") from e
    return SchemaConfig.from_dict(raw)


# ========== duplicates ==========

def deduplicate(records: list[RawContract]) -> tuple[list[RawContract], int]:
    """Collapse records sharing (ID_OBJETO_CONTRATO, FECHACREACION).

    The record with the smallest row_index survives. Records with a null key
    field are never merged.
    """
    first_seen: dict[tuple, int] = {}
    for rec in records:
        key = rec.key
        if key[0] is None or key[1] is None:
            continue
        if key not in first_seen or rec.row_index < first_seen[key]:
            first_seen[key] = rec.row_index

    kept = [
        rec for rec in records
        if rec.key[0] is None or rec.key[1] is None or first_seen[rec.key] == rec.row_index
    ]
    removed = len(records) - len(kept)
    if removed:
        logger.info(f"[ingest] removed {removed} duplicate records")
    return kept, removed


# ========== writing ==========

def _format_cell(value, cfg: SchemaConfig) -> str:
    if value is None:
        return ""
    if isinstance(value, Decimal):
        text = format(value, "f")
        return text.replace(".", ",") if cfg.decimal_separator == "comma" else text
    if isinstance(value, date):
        return value.strftime(_strptime_pattern(cfg.date_formats[0]))
    return str(value)


def to_frame(records: list[RawContract], cfg: SchemaConfig | None = None) -> pd.DataFrame:
    """Canonical string frame: mapped headers, source order."""
    cfg = cfg or SchemaConfig()
    data = {
        cfg.column_map[logical]: [_format_cell(rec.get(logical), cfg) for rec in records]
        for logical in cfg.mapped_fields()
    }
    return pd.DataFrame(data, columns=[cfg.column_map[f] for f in cfg.mapped_fields()])


def write_csv(records: list[RawContract], path: str | Path, cfg: SchemaConfig | None = None) -> None:
    to_frame(records, cfg).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def write_diagnostics(diagnostics: list[Diagnostic], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in diagnostics:
            f.write(d.to_json() + "\n")
