"""Shared fixtures: repo root on sys.path, contract CSV builders, small pipeline configs."""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from ingest import DEFAULT_COLUMN_MAP, LOGICAL_FIELDS  # noqa: E402

BASE_ROW = {
    "NIVEL": "TERRITORIAL",
    "ORDEN": "MUNICIPAL",
    "NIT_ENTIDAD": "800123456",
    "NOMBRE_ENTIDAD": "ALCALDIA DE PRUEBA",
    "TIPO_MODALIDAD": "Licitacion Publica",
    "NUMERO_CONSTANCIA": "10-1-000001",
    "ID_OBJETO_CONTRATO": "C1",
    "OBJETO_CONTRATO": "Obra de vias",
    "DETALLE_OBJETO": "Construccion de vias terciarias",
    "TIPO_CONTRATO": "Obra",
    "CUANTIA": "1.000.000,00",
    "VALOR_DEFINITIVO": "1.100.000,00",
    "FECHACREACION": "2010-03-15",
    "FECHAESTADOADJUDICADO": "2010-04-20",
    "ESTADO_PROCESO": "Celebrado",
    "VALOR_CONTRATO": "1.100.000,00",
    "VALOR_ADICIONES": "0",
    "VALOR_TOTAL": "1.100.000,00",
}


def contract_csv(rows: list[dict], drop: tuple[str, ...] = ()) -> str:
    """CSV text with the default headers; each row overrides BASE_ROW."""
    records = [{**{f: "" for f in LOGICAL_FIELDS}, **BASE_ROW, **row} for row in rows]
    frame = pd.DataFrame(records, columns=list(LOGICAL_FIELDS)).rename(columns=DEFAULT_COLUMN_MAP)
    frame = frame.drop(columns=[DEFAULT_COLUMN_MAP[f] for f in drop])
    return frame.to_csv(index=False, lineterminator="\n")


@pytest.fixture
def make_csv(tmp_path):
    def _make(rows: list[dict], name: str = "contracts.csv", drop: tuple[str, ...] = ()) -> Path:
        path = tmp_path / name
        path.write_text(contract_csv(rows, drop), encoding="utf-8")
        return path
    return _make


@pytest.fixture
def small_config():
    """Default pipeline config shrunk for fast end-to-end runs."""
    from cli import PipelineConfig, load_config
    from synth import SynthConfig

    cfg = PipelineConfig.from_dict(load_config())
    return replace(
        cfg,
        forest=replace(cfg.forest, n_trees=50),
        synth=SynthConfig(n_contracts=300, anomaly_rate=0.02, seed=3, duplicate_rate=0.05, date_inversion_rate=0.02),
    )
