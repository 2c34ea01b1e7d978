"""cli: config loading, overrides, and clean -> score -> report runs end to end"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import pandas as pd
import pytest
import yaml

from cli import (
    REPORT_COLUMNS,
    SCORE_COLUMNS,
    PipelineConfig,
    cmd_clean,
    cmd_report,
    cmd_score,
    cmd_synth,
    load_config,
    main,
)
from errors import ConfigError
from synth import SynthConfig


def _run_all(cfg: PipelineConfig, out: Path) -> dict:
    synth = cmd_synth(out, cfg)
    clean = cmd_clean(out / "synth.csv", out, cfg)
    manifest = cmd_score(out / "cleaned.csv", out, cfg)
    report = cmd_report(out / "scores.csv", out, cfg)
    return {"synth": synth, "clean": clean, "manifest": manifest, "report": report}


def _artifacts(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({
        "forest": {"n_trees": 50},
        "synth": {"n_contracts": 300, "anomaly_rate": 0.02, "seed": 3, "duplicate_rate": 0.05},
    }), encoding="utf-8")
    return path


class TestLoadConfig:
    def test_defaults(self):
        raw = load_config()
        assert raw["top_k"] == 10
        assert raw["forest"]["n_trees"] == 100
        assert raw["schema"]["column_map"]["VALOR_TOTAL"] == "VALOR TOTAL"

    def test_json_override_merges(self, tmp_path):
        path = tmp_path / "override.json"
        path.write_text(json.dumps({"forest": {"n_trees": 7}, "top_k": 3}), encoding="utf-8")
        raw = load_config(path)
        assert raw["forest"]["n_trees"] == 7
        assert raw["forest"]["subsample_size"] == 256
        assert raw["top_k"] == 3

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("forest: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- a\n- b\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")


class TestPipelineConfig:
    def test_defaults_build(self):
        cfg = PipelineConfig.from_dict(load_config())
        assert cfg.forest.n_trees == 100
        assert cfg.text_columns == ("DETALLE_OBJETO",)
        assert "de" in cfg.vectorizer.stopword_list
        assert cfg.explain.label_source == "model_topk"

    @pytest.mark.parametrize("patch", [
        {"top_k": 0},
        {"workers": 0},
        {"forest": {"bogus": 1}},
        {"forest": {"n_trees": 0}},
        {"explain": {"label_source": "magic"}},
        {"features": {"impute": "mean"}},
        {"vectorizer": {"text_columns": ["NOT_A_FIELD"]}},
        {"regression": {"max_iter": -1}},
        {"synth": {"n_contracts": 3}},
    ])
    def test_invalid_values(self, patch):
        raw = load_config()
        for key, value in patch.items():
            raw[key] = {**raw[key], **value} if isinstance(value, dict) else value
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(raw)

    def test_overrides(self):
        cfg = PipelineConfig.from_dict(load_config()).with_overrides(
            seed=5, top_k=4, no_text=True, workers=2, labels="labels.csv",
        )
        assert cfg.forest.seed == 5
        assert cfg.synth.seed == 5
        assert cfg.top_k == 4
        assert cfg.use_text is False
        assert cfg.workers == 2
        assert cfg.explain.label_source == "external_file"
        assert cfg.explain.label_file == "labels.csv"

    def test_bad_overrides(self):
        cfg = PipelineConfig.from_dict(load_config())
        with pytest.raises(ConfigError):
            cfg.with_overrides(top_k=0)
        with pytest.raises(ConfigError):
            cfg.with_overrides(workers=0)
        with pytest.raises(ConfigError):
            cfg.with_overrides(seed=-1)

    def test_negative_seed_exits_2(self, tmp_path):
        assert main(["synth", "--seed", "-1", "--out-dir", str(tmp_path / "out")]) == 2


class TestClean:
    def test_duplicates_and_inversions_counted(self, tmp_path, small_config):
        out = tmp_path / "out"
        kinds = cmd_synth(out, small_config)["kinds"]
        summary = cmd_clean(out / "synth.csv", out, small_config)
        assert summary["duplicates_removed"] == kinds["duplicate"] == 15
        assert summary["date_inversions"] == kinds["date_inverted"] == 6
        assert summary["rows_out"] == 300
        assert summary["diagnostics"] == 0
        assert (out / "diagnostics.jsonl").read_text(encoding="utf-8") == ""

        again = cmd_clean(out / "cleaned.csv", tmp_path / "again", small_config)
        assert again["duplicates_removed"] == 0
        assert again["rows_out"] == 300

    def test_missing_required_header_exits_2(self, tmp_path, make_csv):
        path = make_csv([{}, {"ID_OBJETO_CONTRATO": "C2"}], drop=("CUANTIA",))
        assert main(["clean", "--input", str(path), "--out-dir", str(tmp_path / "out")]) == 2

    def test_clean_needs_input(self, tmp_path):
        assert main(["clean", "--out-dir", str(tmp_path / "out")]) == 2

    def test_bad_config_exits_2(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("top_k: 0\n", encoding="utf-8")
        assert main(["synth", "--config", str(path), "--out-dir", str(tmp_path / "out")]) == 2


class TestScore:
    def test_one_row_per_contract(self, tmp_path, small_config):
        out = tmp_path / "out"
        cmd_synth(out, small_config)
        cmd_clean(out / "synth.csv", out, small_config)
        manifest = cmd_score(out / "cleaned.csv", out, small_config)

        scores = pd.read_csv(out / "scores.csv")
        assert list(scores.columns) == SCORE_COLUMNS
        assert len(scores) == manifest["n_rows"] == 300
        assert scores["row_key"].tolist() == list(range(2, 302))
        assert scores["score"].between(0.0, 1.0, inclusive="right").all()
        assert manifest["blocks"]["num"] == 6
        assert manifest["blocks"]["tok"] == manifest["vocabulary_size"] > 0
        assert 0.8 < manifest["amount_correlation"] < 1.0
        assert json.loads((out / "manifest.json").read_text(encoding="utf-8"))["amount_correlation"] == manifest["amount_correlation"]
        for name in ("forest.json", "regression.json", "features.csv", "features.json", "vocabulary.json", "counts.csv", "terms.csv"):
            assert (out / name).exists()

    def test_text_block_toggle(self, tmp_path, small_config):
        runs = {}
        for name, cfg in (("text", small_config), ("plain", replace(small_config, use_text=False))):
            out = tmp_path / name
            cmd_synth(out, cfg)
            cmd_clean(out / "synth.csv", out, cfg)
            runs[name] = (cmd_score(out / "cleaned.csv", out, cfg), pd.read_csv(out / "scores.csv"))

        (with_text, text_scores), (without, plain_scores) = runs["text"], runs["plain"]
        assert without["vocabulary_size"] == 0
        assert with_text["n_columns"] - without["n_columns"] == with_text["vocabulary_size"]
        assert not (tmp_path / "plain" / "vocabulary.json").exists()
        assert text_scores["score"].tolist() != plain_scores["score"].tolist()

    def test_header_only_file_exits_3(self, tmp_path, make_csv):
        path = make_csv([])
        assert main(["score", "--input", str(path), "--out-dir", str(tmp_path / "out")]) == 3
        assert main(["score", "--input", str(path), "--out-dir", str(tmp_path / "plain"), "--no-text"]) == 3

    def test_amount_correlation_needs_spread(self, tmp_path, make_csv):
        rows = [{"ID_OBJETO_CONTRATO": f"C{i}", "CUANTIA": f"{1000 + 10 * i},00", "VALOR_DEFINITIVO": "5000,00"} for i in range(12)]
        manifest = cmd_score(make_csv(rows), tmp_path / "out", replace(PipelineConfig.from_dict(load_config()), use_text=False))
        assert manifest["amount_correlation"] is None

    def test_all_stopword_corpus_exits_3(self, tmp_path, make_csv):
        rows = [
            {"ID_OBJETO_CONTRATO": f"C{i}", "CUANTIA": f"{1000 + 10 * i},00", "DETALLE_OBJETO": "de la que por"}
            for i in range(12)
        ]
        path = make_csv(rows)
        assert main(["score", "--input", str(path), "--out-dir", str(tmp_path / "out")]) == 3


class TestReport:
    def test_top_k_and_summary(self, tmp_path, small_config):
        out = tmp_path / "out"
        result = _run_all(replace(small_config, top_k=9), out)
        report = pd.read_csv(out / "report.csv", keep_default_na=False)
        assert list(report.columns) == REPORT_COLUMNS
        assert report["rank"].tolist() == list(range(1, 10))
        assert report["score"].is_monotonic_decreasing
        assert result["report"]["reported"] == 9
        assert result["report"]["surrogate"]

        text = (out / "explain.txt").read_text(encoding="utf-8")
        assert text.startswith("Number of contracts: 9\n")
        assert "TYPE OF CONTRACT\tTYPE MODALITY\tCOUNT" in text
        assert "Feature importance" in text
        assert all(e for e in report["explanation"])
        assert pd.read_csv(out / "importance.csv")["importance"].sum() == pytest.approx(1.0)

    def test_top_k_via_main(self, tmp_path, config_file):
        out = str(tmp_path / "out")
        common = ["--config", str(config_file), "--out-dir", out]
        assert main(["synth", *common]) == 0
        assert main(["clean", "--input", str(Path(out) / "synth.csv"), *common]) == 0
        assert main(["score", *common]) == 0
        assert main(["report", "--top-k", "9", *common]) == 0
        assert len(pd.read_csv(Path(out) / "report.csv")) == 9
        assert (Path(out) / "explain.txt").read_text(encoding="utf-8").startswith("Number of contracts: 9")

    def test_top_k_beyond_rows_reports_all(self, tmp_path, small_config):
        cfg = replace(small_config, top_k=50, use_text=False, synth=SynthConfig(n_contracts=12, anomaly_rate=0.0, seed=1))
        result = _run_all(cfg, tmp_path / "out")
        assert result["report"] == {"reported": 12, "surrogate": False}
        assert not (tmp_path / "out" / "tree.json").exists()

    def test_report_without_features_exits_2(self, tmp_path, small_config):
        out = tmp_path / "out"
        cmd_synth(out, small_config)
        cmd_clean(out / "synth.csv", out, small_config)
        cmd_score(out / "cleaned.csv", out, small_config)
        (out / "features.csv").unlink()
        assert main(["report", "--out-dir", str(out)]) == 2

    def test_external_labels(self, tmp_path, small_config):
        out = tmp_path / "out"
        _run_all(small_config, out)

        single = tmp_path / "single.csv"
        single.write_text("row_key,label\n2,0\n3,0\n", encoding="utf-8")
        assert main(["report", "--out-dir", str(out), "--labels", str(single)]) == 4

        positives = tmp_path / "positives.csv"
        positives.write_text("row_key,label\n2,1\n3,1\n", encoding="utf-8")
        assert main(["report", "--out-dir", str(out), "--labels", str(positives)]) == 4

        unknown = tmp_path / "unknown.csv"
        unknown.write_text("row_key,label\n99999,1\n2,0\n", encoding="utf-8")
        assert main(["report", "--out-dir", str(out), "--labels", str(unknown)]) == 3

        labels = tmp_path / "labels.csv"
        labels.write_text("row_key,label\n2,1\n10,1\n3,0\n", encoding="utf-8")
        assert main(["report", "--out-dir", str(out), "--labels", str(labels)]) == 0
        assert "labels: external_file, positives 2" in (out / "explain.txt").read_text(encoding="utf-8")


class TestDeterminism:
    def test_repeat_runs_are_byte_identical(self, tmp_path, small_config):
        _run_all(small_config, tmp_path / "a")
        _run_all(small_config, tmp_path / "b")
        _run_all(replace(small_config, workers=3), tmp_path / "c")
        first = _artifacts(tmp_path / "a")
        assert "report.csv" in first and "forest.json" in first
        assert _artifacts(tmp_path / "b") == first
        assert _artifacts(tmp_path / "c") == first


class TestSurrogateOnPlantedAnomalies:
    def test_numeric_features_explain_the_top_k(self, tmp_path, small_config):
        good = 0
        for seed in range(20):
            cfg = replace(
                small_config,
                use_text=False,
                forest=replace(small_config.forest, n_trees=100, seed=seed),
                synth=SynthConfig(n_contracts=1000, anomaly_rate=0.01, seed=seed),
            )
            report = _run_all(cfg, tmp_path / str(seed))["report"]
            top_feature = report["importance"][0][0]
            good += report["accuracy"] >= 0.95 and top_feature.startswith(("num:", "flag:"))
        assert good >= 18
