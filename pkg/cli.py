"""procuraudit - command line (clean / score / report / synth)

    python cli.py synth  --out-dir out --seed 1
    python cli.py clean  --input out/synth.csv --out-dir out
    python cli.py score  --out-dir out            # reads out/cleaned.csv
    python cli.py report --out-dir out --top-k 9  # reads out/scores.csv
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from loguru import logger

from errors import (
    AlignmentError,
    ConfigError,
    DegenerateInputError,
    InsufficientDataError,
    ParseError,
    ProcurauditError,
    SchemaError,
    SingleClassError,
    UnreadableFileError,
)
from explain import TreeParams, decision_path, feature_importance, fit_tree, predict
from features import (
    DEFAULT_CATEGORICALS,
    FeatureMatrix,
    assemble_matrix,
    derive_date_flag,
    extract_features,
    one_hot,
    pearson,
)
from iforest import ForestParams, build_forest, score
from ingest import LOGICAL_FIELDS, SchemaConfig, deduplicate, parse_csv, write_csv, write_diagnostics
from regress import design_from_matrix, residual_scores, robust_fit
from synth import SynthConfig, generate, write_outputs
from text import (
    VectorizerParams,
    build_vocabulary,
    document_text,
    load_stopwords,
    term_summary,
    tokenize,
    vectorize,
)

BASE_DIR = Path(__file__).parent

SCORE_COLUMNS = [
    "row_key", "contract_id", "expected_path", "score", "residual", "z", "overspend_flag",
    "overdraw_flag", "date_inconsistency_flag", "tipo_contrato", "tipo_modalidad",
]
REPORT_COLUMNS = [
    "rank", "row_key", "contract_id", "score", "z", "overspend_flag", "overdraw_flag",
    "date_inconsistency_flag", "tipo_contrato", "tipo_modalidad", "explanation",
]
LABEL_SOURCES = ("model_topk", "external_file")
EXPLANATION_TERMS = 3


# ---------- config ----------

def _read_yaml(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return data


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None = None) -> dict:
    """config.default.yaml, with config.yaml (or the given file) merged on top.

    JSON config files load too; YAML is a superset.
    """
    config = _read_yaml(BASE_DIR / "config.default.yaml")
    user_path = Path(path) if path else BASE_DIR / "config.yaml"
    if path or user_path.exists():
        config = _deep_merge(config, _read_yaml(user_path))
    return config


@dataclass(frozen=True)
class RegressionSettings:
    z_threshold: float = 3.0
    max_iter: int = 5
    design_columns: tuple[str, ...] = ("num:log_cuantia",)
    target: str = "num:log_valor_definitivo"


@dataclass(frozen=True)
class ExplainSettings:
    tree: TreeParams = field(default_factory=TreeParams)
    label_source: str = "model_topk"
    label_file: str | None = None


@dataclass(frozen=True)
class FeatureSettings:
    categorical_columns: tuple[str, ...] = DEFAULT_CATEGORICALS
    min_category_count: int = 5
    impute: str = "median"


@dataclass(frozen=True)
class PipelineConfig:
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    vectorizer: VectorizerParams = field(default_factory=VectorizerParams)
    text_columns: tuple[str, ...] = ("DETALLE_OBJETO",)
    forest: ForestParams = field(default_factory=ForestParams)
    regression: RegressionSettings = field(default_factory=RegressionSettings)
    explain: ExplainSettings = field(default_factory=ExplainSettings)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)
    top_k: int = 10
    use_text: bool = True
    use_categoricals: bool = True
    workers: int = 1
    log_level: str = "INFO"

    @classmethod
    def from_dict(cls, raw: dict) -> PipelineConfig:
        """Build from a merged config dict. Bad values raise ConfigError."""
        try:
            return cls._build(raw)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid config: {e}") from e

    @classmethod
    def _build(cls, raw: dict) -> PipelineConfig:
        vec = dict(raw.get("vectorizer") or {})
        stopwords = load_stopwords(vec.pop("stopwords", "builtin"))
        text_columns = tuple(vec.pop("text_columns", None) or ("DETALLE_OBJETO",))
        unknown = sorted(set(text_columns) - set(LOGICAL_FIELDS))
        if unknown:
            raise ConfigError(f"vectorizer.text_columns names unknown fields: {unknown}")

        reg = raw.get("regression") or {}
        regression = RegressionSettings(
            z_threshold=float(reg.get("z_threshold", 3.0)),
            max_iter=int(reg.get("max_iter", 5)),
            design_columns=tuple(reg.get("design_columns") or ("num:log_cuantia",)),
            target=reg.get("target", "num:log_valor_definitivo"),
        )
        if regression.max_iter < 0:
            raise ConfigError(f"regression.max_iter must be >= 0, got {regression.max_iter}")

        exp = raw.get("explain") or {}
        explain = ExplainSettings(
            tree=TreeParams(
                max_depth=int(exp.get("max_depth", 5)),
                min_samples_split=int(exp.get("min_samples_split", 2)),
            ),
            label_source=exp.get("label_source", "model_topk"),
            label_file=exp.get("label_file"),
        )
        if explain.label_source not in LABEL_SOURCES:
            raise ConfigError(f"explain.label_source must be one of {LABEL_SOURCES}, got {explain.label_source!r}")

        feat = raw.get("features") or {}
        features = FeatureSettings(
            categorical_columns=tuple(feat.get("categorical_columns") or DEFAULT_CATEGORICALS),
            min_category_count=int(feat.get("min_category_count", 5)),
            impute=feat.get("impute", "median"),
        )
        if features.impute not in ("median", "zero"):
            raise ConfigError(f"features.impute must be 'median' or 'zero', got {features.impute!r}")
        if features.min_category_count < 1:
            raise ConfigError(f"features.min_category_count must be >= 1, got {features.min_category_count}")

        syn = dict(raw.get("synth") or {})
        if "vocab_pool" in syn:
            syn["vocab_pool"] = tuple(syn["vocab_pool"])

        cfg = cls(
            schema=SchemaConfig.from_dict(raw.get("schema")),
            vectorizer=VectorizerParams(stopword_list=stopwords, **vec),
            text_columns=text_columns,
            forest=ForestParams(**(raw.get("forest") or {})),
            regression=regression,
            explain=explain,
            features=features,
            synth=SynthConfig(**syn),
            top_k=int(raw.get("top_k", 10)),
            use_text=bool(raw.get("use_text", True)),
            use_categoricals=bool(raw.get("use_categoricals", True)),
            workers=int(raw.get("workers", 1)),
            log_level=str(raw.get("log_level", "INFO")).upper(),
        )
        if cfg.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {cfg.top_k}")
        if cfg.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
        return cfg

    def with_overrides(self, seed=None, top_k=None, no_text=False, workers=None, labels=None) -> PipelineConfig:
        """Apply command-line options on top of the file config. Bad values raise ConfigError."""
        try:
            return self._override(seed, top_k, no_text, workers, labels)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid override: {e}") from e

    def _override(self, seed, top_k, no_text, workers, labels) -> PipelineConfig:
        cfg = self
        if seed is not None:
            cfg = replace(cfg, forest=replace(cfg.forest, seed=seed), synth=replace(cfg.synth, seed=seed))
        if top_k is not None:
            if top_k < 1:
                raise ConfigError(f"--top-k must be >= 1, got {top_k}")
            cfg = replace(cfg, top_k=top_k)
        if no_text:
            cfg = replace(cfg, use_text=False)
        if workers is not None:
            if workers < 1:
                raise ConfigError(f"--workers must be >= 1, got {workers}")
            cfg = replace(cfg, workers=workers)
        if labels is not None:
            cfg = replace(cfg, explain=replace(cfg.explain, label_source="external_file", label_file=str(labels)))
        return cfg


# ========== clean ==========

def cmd_clean(input_path: str | Path, out_dir: str | Path, cfg: PipelineConfig) -> dict:
    """parse -> dedup -> cleaned.csv + diagnostics.jsonl"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records, diagnostics = parse_csv(input_path, cfg.schema)
    kept, removed = deduplicate(records)
    inversions = sum(derive_date_flag(r.fechacreacion, r.fechaestadoadjudicado) == 1 for r in kept)

    write_csv(kept, out_dir / "cleaned.csv", cfg.schema)
    write_diagnostics(diagnostics, out_dir / "diagnostics.jsonl")

    summary = {
        "rows_in": len(records),
        "rows_out": len(kept),
        "duplicates_removed": removed,
        "date_inversions": inversions,
        "diagnostics": len(diagnostics),
    }
    print(
        f"[clean] rows in {summary['rows_in']}, rows out {summary['rows_out']}, "
        f"duplicates removed {removed}, date inversions {inversions}, diagnostics {len(diagnostics)}"
    )
    return summary


# ========== score ==========

def _nullable_int(values) -> pd.Series:
    return pd.Series([None if v is None else int(v) for v in values], dtype="Int64")


def _amount_correlation(features) -> float | None:
    """Pearson of log_cuantia vs log_valor_definitivo over rows with both amounts."""
    pairs = [
        (f.log_cuantia, f.log_valor_definitivo) for f in features
        if f.log_cuantia is not None and f.log_valor_definitivo is not None
    ]
    try:
        return pearson([p[0] for p in pairs], [p[1] for p in pairs])
    except DegenerateInputError as e:
        logger.warning(f"[score] amount correlation skipped: {e}")
        return None


def cmd_score(input_path: str | Path, out_dir: str | Path, cfg: PipelineConfig) -> dict:
    """Featurize, isolation forest, robust regression; one score row per contract."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records, _ = parse_csv(input_path, cfg.schema)
    if not records:
        raise InsufficientDataError(f"{input_path} has no contract rows to score")
    features = extract_features(records)

    categoricals = None
    if cfg.use_categoricals:
        categoricals = {
            name: one_hot([rec.get(name) for rec in records], cfg.features.min_category_count)
            for name in cfg.features.categorical_columns
        }

    counts = vocab = None
    if cfg.use_text:
        docs = [
            tokenize(document_text(rec, cfg.text_columns), cfg.vectorizer.min_token_len)
            for rec in records
        ]
        vocab = build_vocabulary(docs, cfg.vectorizer)
        counts = vectorize(docs, vocab)

    matrix = assemble_matrix(features, categoricals, counts, vocab, impute=cfg.features.impute)

    forest = build_forest(matrix, cfg.forest, workers=cfg.workers)
    scores = score(forest, matrix, workers=cfg.workers)

    reg = cfg.regression
    try:
        X, y, complete = design_from_matrix(matrix, reg.design_columns, reg.target)
    except ValueError as e:
        raise ConfigError(f"regression columns not in the feature matrix: {e}") from e
    keys = [k[1] for k in matrix.row_keys]
    model = robust_fit(
        X[complete], y[complete],
        z_threshold=reg.z_threshold,
        max_iter=reg.max_iter,
        row_keys=[k for k, ok in zip(keys, complete) if ok],
    )
    residuals = residual_scores(model, X, y, reg.z_threshold)

    table = pd.DataFrame({
        "row_key": keys,
        "contract_id": [rec.id_objeto_contrato for rec in records],
        "expected_path": scores.expected_path,
        "score": scores.score,
        "residual": residuals.residual,
        "z": residuals.z,
        "overspend_flag": residuals.overspend_flag,
        "overdraw_flag": _nullable_int(f.overdraw_flag for f in features),
        "date_inconsistency_flag": _nullable_int(f.date_inconsistency_flag for f in features),
        "tipo_contrato": [rec.tipo_contrato for rec in records],
        "tipo_modalidad": [rec.tipo_modalidad for rec in records],
    }, columns=SCORE_COLUMNS)
    table.to_csv(out_dir / "scores.csv", index=False, float_format="%.17g", lineterminator="\n")

    forest.save(out_dir / "forest.json")
    model.save(out_dir / "regression.json")
    matrix.save(out_dir / "features.csv")
    if vocab is not None:
        vocab.save(out_dir / "vocabulary.json")
        counts.save(out_dir / "counts.csv")
        term_summary(counts, vocab).to_csv(out_dir / "terms.csv", index=False, lineterminator="\n")

    correlation = _amount_correlation(features)
    manifest = {
        "n_rows": matrix.shape[0],
        "n_columns": matrix.shape[1],
        "blocks": matrix.block_counts(),
        "use_text": cfg.use_text,
        "use_categoricals": cfg.use_categoricals,
        "vocabulary_size": len(vocab) if vocab is not None else 0,
        "regression": {"n_used": model.n_used, "excluded": len(model.excluded_rows), "exact_fit": model.exact_fit},
        "amount_correlation": correlation,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")

    print(
        f"[score] {matrix.shape[0]} contracts x {matrix.shape[1]} features, "
        f"{int(residuals.overspend_flag.sum())} overspend flags, text={'on' if cfg.use_text else 'off'}, "
        f"amount correlation {'n/a' if correlation is None else f'{correlation:.4f}'}"
    )
    return manifest


# ========== report ==========

def _read_scores(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise UnreadableFileError(f"cannot read scores {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} is empty", line=1) from e
    missing = [c for c in SCORE_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path} is missing columns {missing}")
    df["_key"] = df["row_key"].astype(int)
    df["_score"] = df["score"].astype(float)
    return df


def _read_labels(path: Path, matrix: FeatureMatrix) -> np.ndarray:
    """row_key,label CSV -> 0/1 per matrix row. Unlisted rows are 0."""
    try:
        df = pd.read_csv(path)
    except OSError as e:
        raise UnreadableFileError(f"cannot read label file {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} is empty", line=1) from e
    if not {"row_key", "label"} <= set(df.columns):
        raise SchemaError(f"label file {path} needs row_key and label columns")
    if not set(df["label"].unique().tolist()) <= {0, 1}:
        raise ParseError(f"labels in {path} must be 0 or 1")
    if df["label"].nunique() < 2:
        raise SingleClassError(f"label file {path} holds a single class; the surrogate needs both")

    position = matrix.row_position()
    labels = np.zeros(matrix.shape[0], dtype=np.int64)
    for key, label in zip(df["row_key"], df["label"]):
        if int(key) not in position:
            raise AlignmentError(f"label file row_key {key} is not in the feature matrix")
        labels[position[int(key)]] = int(label)
    return labels


def _summary_table(top: pd.DataFrame) -> list[str]:
    """Anomaly counts by contract type and modality."""
    pairs = Counter(zip(top["tipo_contrato"], top["tipo_modalidad"]))
    lines = ["TYPE OF CONTRACT\tTYPE MODALITY\tCOUNT"]
    for (tipo, modalidad), n in sorted(pairs.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f"{tipo}\t{modalidad}\t{n}")
    return lines


def cmd_report(
    scores_path: str | Path,
    out_dir: str | Path,
    cfg: PipelineConfig,
) -> dict:
    """Top-k anomalies, surrogate tree and feature importances.

    Reads features.csv from the directory holding scores.csv.
    """
    scores_path = Path(scores_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    df = _read_scores(scores_path)
    n = len(df)
    if cfg.top_k >= n:
        logger.warning(f"[report] top_k={cfg.top_k} >= {n} contracts, reporting all of them")
    ranked = df.sort_values(["_score", "_key"], ascending=[False, True], kind="mergesort")
    top = ranked.head(cfg.top_k)

    features_path = scores_path.parent / "features.csv"
    if not features_path.exists():
        raise UnreadableFileError(f"{features_path} not found; run score first")
    matrix = FeatureMatrix.load(features_path)
    position = matrix.row_position()
    unknown = [k for k in df["_key"] if k not in position]
    if unknown:
        raise AlignmentError(f"{len(unknown)} score rows have no feature row, e.g. {unknown[0]}")

    if cfg.explain.label_source == "external_file":
        if not cfg.explain.label_file:
            raise ConfigError("explain.label_source is external_file but no label_file is set")
        labels = _read_labels(Path(cfg.explain.label_file), matrix)
    else:
        labels = np.zeros(matrix.shape[0], dtype=np.int64)
        labels[[position[k] for k in top["_key"]]] = 1

    tree = None
    if cfg.explain.label_source == "model_topk" and labels.min() == labels.max():
        logger.warning("[report] every contract is in the top-k, skipping the surrogate tree")
    else:
        tree = fit_tree(matrix, labels, cfg.explain.tree)

    explanations = []
    for key in top["_key"]:
        if tree is None:
            explanations.append("")
        else:
            path = decision_path(tree, matrix.rows[position[key]])
            explanations.append("; ".join(path[:EXPLANATION_TERMS]))

    report = pd.DataFrame({
        "rank": range(1, len(top) + 1),
        **{c: top[c].tolist() for c in REPORT_COLUMNS if c not in ("rank", "explanation")},
        "explanation": explanations,
    }, columns=REPORT_COLUMNS)
    report.to_csv(out_dir / "report.csv", index=False, lineterminator="\n")

    lines = [f"Number of contracts: {len(top)}", ""] + _summary_table(top)
    summary = {"reported": len(top), "surrogate": tree is not None}
    if tree is not None:
        accuracy = float(np.mean([predict(tree, row) == y for row, y in zip(matrix.rows, labels)]))
        importance = feature_importance(tree)
        importance.save(out_dir / "importance.csv")
        (out_dir / "tree.json").write_text(tree.to_json(), encoding="utf-8")
        lines += [
            "",
            f"Surrogate tree (labels: {cfg.explain.label_source}, positives {int(labels.sum())}, "
            f"training accuracy {accuracy:.4f})",
            tree.to_text(),
            "",
            "Feature importance",
        ]
        lines += [f"{name}\t{share:.6f}" for name, share in importance.entries]
        summary.update(accuracy=accuracy, importance=importance.entries)
    (out_dir / "explain.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(f"[report] {len(top)} anomalies reported, surrogate {'fitted' if tree is not None else 'skipped'}")
    return summary


# ========== synth ==========

def cmd_synth(out_dir: str | Path, cfg: PipelineConfig) -> dict:
    csv_text, truth = generate(cfg.synth)
    csv_path, truth_path = write_outputs(csv_text, truth, out_dir)
    kinds = Counter(entry["kind"] for entry in truth)
    print(f"[synth] {len(truth)} rows -> {csv_path} ({dict(sorted(kinds.items()))})")
    return {"rows": len(truth), "kinds": dict(kinds)}


# ========== entry point ==========

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML/JSON config merged over the defaults")
    common.add_argument("--input", type=str, default=None, help="input CSV")
    common.add_argument("--out-dir", type=str, default="out", help="artifact directory (default: out)")
    common.add_argument("--seed", type=int, default=None, help="seed for the forest and the generator")
    common.add_argument("--top-k", type=int, default=None, help="contracts to report")
    common.add_argument("--no-text", action="store_true", help="leave the bag-of-words block out")
    common.add_argument("--workers", type=int, default=None, help="threads for forest build and scoring")
    common.add_argument("--labels", type=str, default=None, help="row_key,label CSV for the surrogate tree")

    parser = argparse.ArgumentParser(prog="procuraudit", description="Anomaly detection over public procurement contracts")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("clean", parents=[common], help="parse, deduplicate, write cleaned.csv")
    sub.add_parser("score", parents=[common], help="isolation forest and regression scores")
    sub.add_parser("report", parents=[common], help="top-k anomalies with a surrogate tree")
    sub.add_parser("synth", parents=[common], help="generate a synthetic contract CSV")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = PipelineConfig.from_dict(load_config(args.config)).with_overrides(
            seed=args.seed, top_k=args.top_k, no_text=args.no_text, workers=args.workers, labels=args.labels,
        )
        logger.remove()
        logger.add(sys.stderr, level=cfg.log_level, format="{time:HH:mm:ss} | {level: <7} | {message}")

        out_dir = Path(args.out_dir)
        if args.command == "clean":
            if not args.input:
                raise ConfigError("clean needs --input")
            cmd_clean(args.input, out_dir, cfg)
        elif args.command == "score":
            cmd_score(args.input or out_dir / "cleaned.csv", out_dir, cfg)
        elif args.command == "report":
            cmd_report(args.input or out_dir / "scores.csv", out_dir, cfg)
        else:
            cmd_synth(out_dir, cfg)
    except ProcurauditError as e:
        logger.error(f"[{args.command}] {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
