"""procuraudit - synthetic contract data with planted anomalies

Output is in the default ingest dialect (SECOP export headers, comma
decimals, ISO dates). Ground-truth rows are CSV line numbers, i.e. ingest row_index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from ingest import DEFAULT_COLUMN_MAP, LOGICAL_FIELDS

CONTRACT_TYPES = ("Compraventa", "Suministro", "Obra", "Prestacion de Servicios")
MODALITIES = (
    "Licitacion Publica",
    "Subasta",
    "Seleccion Abreviada de Menor Cuantia (Ley 1150 de 2007)",
    "Contratacion Directa (Ley 1150 de 2007)",
)
NIVELES = ("NACIONAL", "TERRITORIAL")
ORDENES = ("NACIONAL CENTRALIZADO", "DEPARTAMENTAL", "MUNICIPAL")
ESTADOS = ("Celebrado", "Liquidado", "Terminado sin Liquidar")

DEFAULT_TEMPLATES = (
    "Suministro de {item} para {place}",
    "Compraventa de {item} con destino a {place}",
    "Construccion y mejoramiento de {item} en {place}",
    "Prestacion de servicios profesionales de apoyo a {place}",
    "Mantenimiento preventivo y correctivo de {item} de {place}",
    "Adquisicion de {item} para el funcionamiento de {place}",
)
ITEMS = (
    "equipos de computo", "material de oficina", "vias terciarias", "alimentos escolares",
    "vehiculos", "medicamentos", "mobiliario", "redes electricas", "acueducto veredal",
    "papeleria", "combustible", "uniformes", "puentes peatonales", "software contable",
)
PLACES = (
    "la alcaldia municipal", "la gobernacion", "el hospital departamental",
    "la secretaria de educacion", "el concejo municipal", "las instituciones educativas",
    "la personeria", "el instituto de transito",
)
# only planted anomalies draw these
RARE_WORDS = (
    "urgencia manifiesta", "calamidad", "adicion extraordinaria", "sobrecosto",
    "emergencia sanitaria", "anticipo", "interventoria externa", "obra inconclusa",
    "reajuste", "prorroga especial", "convenio interadministrativo", "contingencia",
)
START = date(2007, 1, 1)


@dataclass(frozen=True)
class SynthConfig:
    n_contracts: int = 1000
    anomaly_rate: float = 0.01
    seed: int = 0
    duplicate_rate: float = 0.0
    date_inversion_rate: float = 0.0
    vocab_pool: tuple[str, ...] = field(default=DEFAULT_TEMPLATES)

    def __post_init__(self):
        if self.n_contracts < 10:
            raise ValueError(f"n_contracts must be >= 10, got {self.n_contracts}")
        if not 0 <= self.anomaly_rate <= 0.2:
            raise ValueError(f"anomaly_rate must be in [0, 0.2], got {self.anomaly_rate}")
        for name in ("duplicate_rate", "date_inversion_rate"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if not self.vocab_pool:
            raise ValueError("vocab_pool must not be empty")


def _amount(value: float) -> str:
    """Pesos with centavos, comma decimal."""
    return f"{max(0.0, value):.2f}".replace(".", ",")


def _contract_row(rng: np.random.Generator, i: int, cfg: SynthConfig, anomalous: bool, inverted: bool) -> dict:
    # log-space amounts: log_cuantia ~ N(13, var 2), noise ~ N(0, var 0.25)
    log_c = rng.normal(13.0, math.sqrt(2.0))
    log_vd = 0.97 * log_c + rng.normal(0.0, 0.5)
    cuantia = math.expm1(log_c)
    definitivo = math.expm1(log_vd)
    if anomalous:
        definitivo *= rng.uniform(5.0, 10.0)
    adiciones = definitivo * rng.uniform(0.0, 0.3) if rng.random() < 0.2 else 0.0

    created = START + timedelta(days=int(rng.integers(0, 6 * 365)))
    if inverted:
        awarded = created - timedelta(days=int(rng.integers(1, 61)))
    else:
        awarded = created + timedelta(days=int(rng.integers(5, 91)))
    convoked = created + timedelta(days=int(rng.integers(1, 6)))
    signed = awarded + timedelta(days=int(rng.integers(1, 16)))

    tipo = CONTRACT_TYPES[rng.integers(len(CONTRACT_TYPES))]
    item = ITEMS[rng.integers(len(ITEMS))]
    place = PLACES[rng.integers(len(PLACES))]
    detail = cfg.vocab_pool[rng.integers(len(cfg.vocab_pool))].format(item=item, place=place)
    if anomalous:
        picks = rng.choice(len(RARE_WORDS), size=int(rng.integers(1, 3)), replace=False)
        detail += " por " + " y ".join(RARE_WORDS[j] for j in sorted(picks))

    row = {name: "" for name in LOGICAL_FIELDS}
    row.update({
        "NIVEL": NIVELES[rng.integers(len(NIVELES))],
        "ORDEN": ORDENES[rng.integers(len(ORDENES))],
        "NIT_ENTIDAD": str(800000000 + int(rng.integers(0, 99999))),
        "NOMBRE_ENTIDAD": f"ENTIDAD {int(rng.integers(1, 200)):03d}",
        "TIPO_MODALIDAD": MODALITIES[rng.integers(len(MODALITIES))],
        "NUMERO_CONSTANCIA": f"{created.year % 100:02d}-{int(rng.integers(1, 20))}-{i + 1:06d}",
        "ID_OBJETO_CONTRATO": f"{created.year}-{i + 1:06d}",
        "OBJETO_CONTRATO": f"{tipo} de {item}",
        "DETALLE_OBJETO": detail,
        "TIPO_CONTRATO": tipo,
        "CUANTIA": _amount(cuantia),
        "VALOR_DEFINITIVO": _amount(definitivo),
        "FECHACREACION": created.isoformat(),
        "FECHAESTADOBORRADOR": created.isoformat(),
        "FECHAESTADOCONVOCADO": convoked.isoformat(),
        "FECHAESTADOADJUDICADO": awarded.isoformat(),
        "ESTADO_PROCESO": ESTADOS[rng.integers(len(ESTADOS))],
        "NOMBRE_CONTRATISTA": f"CONTRATISTA {int(rng.integers(1, 400)):04d}",
        "NIT_CONTRATISTA": str(900000000 + int(rng.integers(0, 999999))),
        "FECHA_FIRMA_CONTRATO": signed.isoformat(),
        "VALOR_CONTRATO": _amount(definitivo),
        "VALOR_ADICIONES": _amount(adiciones),
        "VALOR_TOTAL": _amount(definitivo + adiciones),
    })
    return row


def _perturbed_copy(rng: np.random.Generator, row: dict) -> dict:
    """Same (id, creation date), amounts scaled by U(0.8, 1.2)."""
    copy = dict(row)
    for name in ("CUANTIA", "VALOR_DEFINITIVO", "VALOR_CONTRATO", "VALOR_ADICIONES", "VALOR_TOTAL"):
        value = float(row[name].replace(",", "."))
        copy[name] = _amount(value * rng.uniform(0.8, 1.2))
    return copy


def generate(cfg: SynthConfig) -> tuple[str, list[dict]]:
    """Returns (CSV text, ground truth [{"row": line, "kind": ...}])."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_contracts
    n_anomalies = int(round(cfg.anomaly_rate * n))
    n_inverted = min(int(round(cfg.date_inversion_rate * n)), n - n_anomalies)
    n_duplicates = min(int(round(cfg.duplicate_rate * n)), n)

    order = rng.permutation(n)
    anomalies = set(order[:n_anomalies].tolist())
    inverted = set(order[n_anomalies:n_anomalies + n_inverted].tolist())
    dup_sources = set(rng.choice(n, size=n_duplicates, replace=False).tolist()) if n_duplicates else set()

    rows: list[dict] = []
    truth: list[dict] = []
    for i in range(n):
        row = _contract_row(rng, i, cfg, i in anomalies, i in inverted)
        kind = "planted_anomaly" if i in anomalies else "date_inverted" if i in inverted else "normal"
        rows.append(row)
        truth.append({"row": len(rows) + 1, "kind": kind})
        if i in dup_sources:
            rows.append(_perturbed_copy(rng, row))
            truth.append({"row": len(rows) + 1, "kind": "duplicate"})

    frame = pd.DataFrame(rows, columns=list(LOGICAL_FIELDS)).rename(columns=DEFAULT_COLUMN_MAP)
    csv_text = frame.to_csv(index=False, lineterminator="\n")
    logger.info(
        f"[synth] {len(rows)} rows: {n_anomalies} anomalies, {n_duplicates} duplicates, {n_inverted} date inversions"
    )
    return csv_text, truth


def write_outputs(csv_text: str, truth: list[dict], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "synth.csv"
    truth_path = out_dir / "ground_truth.jsonl"
    csv_path.write_text(csv_text, encoding="utf-8", newline="\n")
    with open(truth_path, "w", encoding="utf-8", newline="\n") as f:
        for entry in truth:
            f.write(json.dumps(entry) + "\n")
    return csv_path, truth_path
