"""Mixed categorical/continuous datasets: CSV ingestion, export, synthetic data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, EmptyFileError, MissingColumnError, NonNumericCellError, ParameterError

SYNTHETIC_LINEAR = "synthetic_linear"
CSV_FILE = "csv_file"
MISSING = "?"
UNK_TOKEN = -2

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]
ADULT_CATEGORICAL = [
    "workclass", "education", "marital-status", "occupation",
    "relationship", "race", "sex", "native-country",
]
ADULT_CONTINUOUS = [
    "age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week",
]


@dataclass
class DatasetSpec:
    source: str
    categorical_columns: list[str] = field(default_factory=list)
    continuous_columns: list[str] = field(default_factory=list)
    label_column: str = "label"
    # column -> (mean, scale); filled in by ingestion when empty
    standardization: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in (SYNTHETIC_LINEAR, CSV_FILE):
            raise ParameterError(f"unknown dataset source {self.source!r}")


def adult_dataset_spec() -> DatasetSpec:
    return DatasetSpec(CSV_FILE, list(ADULT_CATEGORICAL), list(ADULT_CONTINUOUS), "income")


@dataclass
class DatasetSchema:
    """Everything needed to encode new rows the same way as the training rows."""

    categorical_columns: list[str]
    continuous_columns: list[str]
    label_column: str
    vocabularies: dict[str, list[str]]
    standardization: dict[str, tuple[float, float]]
    label_values: list[str]

    @property
    def cardinalities(self) -> list[int]:
        return [len(self.vocabularies[c]) for c in self.categorical_columns]

    def to_json(self) -> str:
        payload = {
            "categorical_columns": self.categorical_columns,
            "continuous_columns": self.continuous_columns,
            "label_column": self.label_column,
            "vocabularies": self.vocabularies,
            "standardization": {k: list(v) for k, v in self.standardization.items()},
            "label_values": self.label_values,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetSchema":
        raw = json.loads(text)
        raw["standardization"] = {k: tuple(v) for k, v in raw["standardization"].items()}
        return cls(**raw)


@dataclass
class TabularDataset:
    categorical: np.ndarray   # (n, m) int tokens
    continuous: np.ndarray    # (n, k) standardized
    labels: np.ndarray        # (n,) in {0, 1}
    schema: DatasetSchema
    dropped_rows: int = 0

    def __len__(self):
        return self.labels.shape[0]

    @property
    def cardinalities(self) -> list[int]:
        return self.schema.cardinalities


def _read_rows(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise EmptyFileError("file has no header row", path=path) from None
            rows = [[cell.strip() for cell in row] for row in reader if row]
    except FileNotFoundError:
        raise DataError("file not found", path=path) from None
    if not rows:
        raise EmptyFileError("file has a header but no data rows", path=path)
    return header, rows


def ingest_csv(path, spec: DatasetSpec, schema: DatasetSchema | None = None) -> TabularDataset:
    """Read a headered CSV into token and standardized-feature arrays.

    Without ``schema`` the vocabularies (sorted category values) and the
    per-column mean and scale are fitted on the file and recorded in
    ``spec.standardization``. With ``schema`` they are reused and unseen
    categories map to ``UNK_TOKEN``. Rows containing ``?`` are dropped and
    counted in ``dropped_rows``.
    """
    path = Path(path)
    header, rows = _read_rows(path)
    index = {name: i for i, name in enumerate(header)}
    needed = list(spec.categorical_columns) + list(spec.continuous_columns) + [spec.label_column]
    for col in needed:
        if col not in index:
            raise MissingColumnError("column not present in header", path=path, column=col)

    kept, dropped = [], 0
    for line_no, row in enumerate(rows, start=2):
        if len(row) < len(header):
            raise DataError(f"expected {len(header)} cells, found {len(row)}", path=path, row=line_no)
        if any(row[index[c]] == MISSING for c in needed):
            dropped += 1
            continue
        kept.append((line_no, row))
    if not kept:
        raise EmptyFileError("no complete rows after dropping missing values", path=path)

    raw_cont = np.empty((len(kept), len(spec.continuous_columns)))
    for r, (line_no, row) in enumerate(kept):
        for c, col in enumerate(spec.continuous_columns):
            cell = row[index[col]]
            try:
                value = float(cell)
            except ValueError:
                raise NonNumericCellError(f"non-numeric value {cell!r}", path=path,
                                          row=line_no, column=col) from None
            if not math.isfinite(value):
                raise NonNumericCellError(f"non-finite value {cell!r}", path=path,
                                          row=line_no, column=col)
            raw_cont[r, c] = value

    if schema is None:
        vocabularies = {
            col: sorted({row[index[col]] for _, row in kept}) for col in spec.categorical_columns
        }
        standardization = {}
        for c, col in enumerate(spec.continuous_columns):
            if col in spec.standardization:
                standardization[col] = tuple(spec.standardization[col])
                continue
            mean = float(raw_cont[:, c].mean())
            scale = float(raw_cont[:, c].std())
            standardization[col] = (mean, scale if scale > 0 else 1.0)
        spec.standardization = dict(standardization)
        label_values = sorted({row[index[spec.label_column]] for _, row in kept})
        if len(label_values) > 2:
            raise DataError(f"label column has {len(label_values)} classes; binary required",
                            path=path, column=spec.label_column)
        schema = DatasetSchema(list(spec.categorical_columns), list(spec.continuous_columns),
                               spec.label_column, vocabularies, standardization, label_values)
    for col, vocab in schema.vocabularies.items():
        if len(vocab) < 2:
            raise DataError("categorical column needs at least 2 distinct values",
                            path=path, column=col)

    lookups = {col: {v: i for i, v in enumerate(schema.vocabularies[col])}
               for col in schema.categorical_columns}
    cat = np.array([[lookups[col].get(row[index[col]], UNK_TOKEN) for col in schema.categorical_columns]
                    for _, row in kept], dtype=np.int64).reshape(len(kept), len(schema.categorical_columns))
    means = np.array([schema.standardization[c][0] for c in schema.continuous_columns])
    scales = np.array([schema.standardization[c][1] for c in schema.continuous_columns])
    cont = (raw_cont - means) / scales
    positive = schema.label_values[-1]
    labels = np.array([int(row[index[schema.label_column]] == positive) for _, row in kept])
    return TabularDataset(cat, cont, labels, schema, dropped)


def export_csv(dataset: TabularDataset, path) -> None:
    """Write raw (decoded, unstandardized) values back to CSV."""
    s = dataset.schema
    means = np.array([s.standardization[c][0] for c in s.continuous_columns])
    scales = np.array([s.standardization[c][1] for c in s.continuous_columns])
    raw = dataset.continuous * scales + means
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(s.categorical_columns + s.continuous_columns + [s.label_column])
        for i in range(len(dataset)):
            cats = [s.vocabularies[c][t] if t >= 0 else MISSING
                    for c, t in zip(s.categorical_columns, dataset.categorical[i])]
            conts = [repr(float(v)) for v in raw[i]]
            label = s.label_values[-1] if dataset.labels[i] else s.label_values[0]
            w.writerow(cats + conts + [label])


def make_synthetic_linear(
    n_examples: int,
    seed: int,
    cardinalities: Sequence[int] = (3, 4, 5),
    n_continuous: int = 4,
    label_noise: float = 0.25,
):
    """Seeded mixed-feature dataset whose labels follow a noisy linear rule.

    Returns ``(dataset, weights)`` where ``weights`` is a dict with
    ``categorical`` (one array per column), ``continuous`` and ``bias`` for
    the generating rule, usable directly as a base classifier.
    """
    if n_examples < 1:
        raise ParameterError("n_examples must be positive")
    rng = np.random.default_rng(seed)
    cat_w = [rng.normal(0.0, 1.0, size=v) for v in cardinalities]
    cont_w = rng.normal(0.0, 1.0, size=n_continuous)
    bias = 0.0
    cat = np.stack([rng.integers(0, v, size=n_examples) for v in cardinalities], axis=1) \
        if cardinalities else np.zeros((n_examples, 0), dtype=np.int64)
    cont = rng.normal(0.0, 1.0, size=(n_examples, n_continuous))
    score = cont @ cont_w + bias
    for c, w in enumerate(cat_w):
        score = score + w[cat[:, c]]
    labels = (score + label_noise * rng.normal(size=n_examples) > 0).astype(np.int64)

    cat_cols = [f"cat{c}" for c in range(len(cardinalities))]
    cont_cols = [f"num{c}" for c in range(n_continuous)]
    schema = DatasetSchema(
        cat_cols, cont_cols, "label",
        {col: [f"v{t}" for t in range(v)] for col, v in zip(cat_cols, cardinalities)},
        {col: (0.0, 1.0) for col in cont_cols},
        ["0", "1"],
    )
    weights = {"categorical": cat_w, "continuous": cont_w, "bias": bias}
    return TabularDataset(cat.astype(np.int64), cont, labels, schema), weights
