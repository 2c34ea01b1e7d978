"""features: log transforms, derived flags, correlation, one-hot, matrix assembly"""

from __future__ import annotations

import math
from datetime import date
from decimal import Decimal

import numpy as np
import pytest

from errors import AlignmentError, DegenerateInputError
from features import (
    OTHER,
    ContractFeatures,
    FeatureMatrix,
    assemble_matrix,
    derive_date_flag,
    derive_overdraw,
    extract_features,
    log_transform,
    one_hot,
    pearson,
)
from ingest import parse_csv
from text import SparseCounts, Vocabulary, vectorize


def _features(i: int, **overrides) -> ContractFeatures:
    values = dict(
        contract_key=(f"C{i}", i + 2),
        log_cuantia=10.0 + i,
        log_valor_definitivo=10.5 + i,
        log_valor_contrato=10.5 + i,
        log_valor_adiciones=0.0,
        log_valor_total=10.5 + i,
        amount_diff=0.5,
        overdraw_flag=1,
        date_inconsistency_flag=0,
    )
    values.update(overrides)
    return ContractFeatures(**values)


class TestLogTransform:
    def test_zero(self):
        assert log_transform(0) == 0.0

    def test_e_minus_one(self):
        assert log_transform(math.e - 1) == pytest.approx(1.0, abs=1e-12)

    def test_million(self):
        assert log_transform(Decimal(1_000_000)) == pytest.approx(13.815511557963774, abs=1e-12)

    def test_null_passes_through(self):
        assert log_transform(None) is None

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            log_transform(Decimal(-1))


class TestDerivedFlags:
    def test_overdraw_equal(self):
        assert derive_overdraw(Decimal(100), Decimal(100)) == (0.0, 0)

    def test_overdraw_exceeds(self):
        diff, flag = derive_overdraw(Decimal(100), Decimal(250))
        assert diff == pytest.approx(math.log(251) - math.log(101), abs=1e-12)
        assert flag == 1

    def test_overdraw_null(self):
        assert derive_overdraw(None, Decimal(250)) == (None, None)

    def test_flag_matches_sign_of_diff(self):
        rng = np.random.default_rng(11)
        for a, b in rng.integers(0, 10**9, size=(200, 2)):
            diff, flag = derive_overdraw(Decimal(int(a)), Decimal(int(b)))
            assert flag == int(diff > 0)

    def test_date_inversion(self):
        assert derive_date_flag(date(2010, 5, 1), date(2010, 4, 1)) == 1

    def test_same_day_is_not_inversion(self):
        assert derive_date_flag(date(2010, 4, 1), date(2010, 4, 1)) == 0

    def test_date_null(self):
        assert derive_date_flag(None, date(2010, 4, 1)) is None

    def test_extract_features(self, make_csv):
        rows = [
            {"ID_OBJETO_CONTRATO": "C1"},
            {"ID_OBJETO_CONTRATO": "C2", "CUANTIA": "", "FECHACREACION": "2010-05-01", "FECHAESTADOADJUDICADO": "2010-04-01"},
        ]
        records, _ = parse_csv(make_csv(rows))
        first, second = extract_features(records)
        assert first.contract_key == ("C1", 2)
        assert first.overdraw_flag == 1
        assert first.date_inconsistency_flag == 0
        assert first.log_cuantia == pytest.approx(math.log1p(1_000_000))
        assert second.log_cuantia is None
        assert second.amount_diff is None
        assert second.overdraw_flag is None
        assert second.date_inconsistency_flag == 1
        assert second.missing_flags["log_cuantia"] == 1
        assert second.missing_flags["log_valor_total"] == 0


class TestPearson:
    def test_perfect(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)

    def test_anti(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_computed(self):
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_affine_invariance_and_symmetry(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=50)
        y = 0.5 * x + rng.normal(size=50)
        r = pearson(x, y)
        assert pearson(y, x) == pytest.approx(r, abs=1e-12)
        assert pearson(3.0 * x + 7.0, y) == pytest.approx(r, abs=1e-12)
        assert pearson(x, 2.5 * x - 1.0) == pytest.approx(1.0, abs=1e-12)
        assert pearson(x, -2.5 * x + 4.0) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(DegenerateInputError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_too_short_or_mismatched(self):
        with pytest.raises(DegenerateInputError):
            pearson([1], [2])
        with pytest.raises(DegenerateInputError):
            pearson([1, 2, 3], [1, 2])


class TestOneHot:
    def test_table_categories(self):
        columns, matrix = one_hot(["Obra", "Obra", "Suministro"], min_count=1)
        assert columns == ["Obra", "Suministro", OTHER]
        assert matrix.tolist() == [[1, 0, 0], [1, 0, 0], [0, 1, 0]]

    def test_all_null(self):
        columns, matrix = one_hot([None, None, None], min_count=1)
        assert columns == [OTHER]
        assert matrix.tolist() == [[1], [1], [1]]

    def test_rare_category_goes_to_other(self):
        columns, matrix = one_hot(["A", "A", "B"], min_count=2)
        assert columns == ["A", OTHER]
        assert matrix.tolist() == [[1, 0], [1, 0], [0, 1]]

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        values = [None if v == "n" else v for v in rng.choice(list("abcden"), size=300)]
        _, matrix = one_hot(values, min_count=40)
        assert (matrix.sum(axis=1) == 1).all()

    def test_min_count_validated(self):
        with pytest.raises(ValueError):
            one_hot(["a"], min_count=0)


class TestAssembleMatrix:
    def test_block_layout(self):
        feats = [_features(i) for i in range(5)]
        columns, onehot = one_hot(["Obra", "Obra", "Suministro", "Obra", "Compraventa"], min_count=1)
        matrix = assemble_matrix(feats, {"TIPO_CONTRATO": (columns, onehot)})
        assert matrix.shape == (5, 8 + 4)
        assert matrix.column_names[:8] == [
            "num:log_cuantia",
            "num:log_valor_definitivo",
            "num:log_valor_contrato",
            "num:log_valor_adiciones",
            "num:log_valor_total",
            "num:amount_diff",
            "flag:overdraw_flag",
            "flag:date_inconsistency_flag",
        ]
        assert matrix.column_names[8:] == [
            "cat:TIPO_CONTRATO=Compraventa",
            "cat:TIPO_CONTRATO=Obra",
            "cat:TIPO_CONTRATO=Suministro",
            f"cat:TIPO_CONTRATO={OTHER}",
        ]
        assert matrix.block_counts() == {"num": 6, "flag": 2, "cat": 4, "tok": 0}
        assert matrix.row_keys == [f.contract_key for f in feats]

    def test_median_imputation_with_indicator(self):
        feats = [_features(0, log_cuantia=1.0), _features(1, log_cuantia=None), _features(2, log_cuantia=3.0)]
        matrix = assemble_matrix(feats)
        assert matrix.column("num:log_cuantia").tolist() == [1.0, 2.0, 3.0]
        assert matrix.column("flag:missing_log_cuantia").tolist() == [0.0, 1.0, 0.0]
        assert matrix.block_counts()["flag"] == 3
        assert not np.isnan(matrix.rows).any()

    def test_all_null_column_and_zero_strategy(self):
        feats = [_features(i, overdraw_flag=None, amount_diff=None if i == 0 else 4.0) for i in range(3)]
        median = assemble_matrix(feats)
        assert median.column("flag:overdraw_flag").tolist() == [0.0, 0.0, 0.0]
        assert median.column("num:amount_diff").tolist() == [4.0, 4.0, 4.0]
        zero = assemble_matrix(feats, impute="zero")
        assert zero.column("num:amount_diff").tolist() == [0.0, 4.0, 4.0]

    def test_unknown_impute_strategy(self):
        with pytest.raises(ValueError):
            assemble_matrix([_features(0, log_cuantia=None)], impute="mean")

    def test_text_block_adds_vocabulary_width(self):
        feats = [_features(i) for i in range(3)]
        vocab = Vocabulary(tokens=["civil", "obra", "vias"], doc_freq={"civil": 1, "obra": 2, "vias": 1}, n_docs=3)
        counts = vectorize([["obra", "obra", "civil"], ["vias"], ["obra"]], vocab)
        without = assemble_matrix(feats)
        with_text = assemble_matrix(feats, text=counts, vocabulary=vocab)
        assert with_text.shape[1] - without.shape[1] == len(vocab)
        assert with_text.column("tok:obra").tolist() == [2.0, 0.0, 1.0]

    def test_row_count_mismatch(self):
        feats = [_features(i) for i in range(3)]
        with pytest.raises(AlignmentError):
            assemble_matrix(feats, {"NIVEL": one_hot(["a", "b"], min_count=1)})
        counts = SparseCounts(vectorize([["a"]], Vocabulary(["a"], {"a": 1}, 1)).matrix)
        with pytest.raises(AlignmentError):
            assemble_matrix(feats, text=counts)


class TestFeatureMatrix:
    def test_rejects_duplicate_names(self):
        with pytest.raises(AlignmentError):
            FeatureMatrix(["num:a", "num:a"], np.zeros((2, 2)), [("a", 2), ("b", 3)])

    def test_rejects_misaligned_keys(self):
        with pytest.raises(AlignmentError):
            FeatureMatrix(["num:a"], np.zeros((2, 1)), [("a", 2)])

    def test_rejects_non_finite(self):
        with pytest.raises(DegenerateInputError):
            FeatureMatrix(["num:a"], np.array([[1.0], [np.inf]]), [("a", 2), ("b", 3)])

    def test_save_and_load(self, tmp_path):
        feats = [_features(i, log_cuantia=0.1 * i + 1e-7) for i in range(4)]
        matrix = assemble_matrix(feats)
        matrix.save(tmp_path / "features.csv")
        assert (tmp_path / "features.json").exists()
        loaded = FeatureMatrix.load(tmp_path / "features.csv")
        assert loaded.column_names == matrix.column_names
        assert loaded.row_keys == matrix.row_keys
        np.testing.assert_array_equal(loaded.rows, matrix.rows)
        assert loaded.row_position() == {2: 0, 3: 1, 4: 2, 5: 3}
