"""CSV ingestion, JSON run configuration and report serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, DataError
from .model import CovariateSchema, Dataset, validate_dataset
from .nuisance import NuisanceSpecs
from .simlab.dgp import SimConfig

IMPUTE_V = ("drop", "mode", "forest")
PARTIAL_X = ("reject", "blank")
DEFAULT_RATES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
SUBCOMMANDS = ("estimate", "simulate", "diagnose")


def _missing(value: str | None) -> bool:
    return value is None or value.strip() == ""


@dataclass
class IngestResult:
    """A validated dataset plus what preprocessing did to get there."""

    dataset: Dataset
    n_rows_read: int
    n_dropped_v: int = 0
    n_imputed_v: int = 0
    n_blanked_x: int = 0

    def counters(self) -> dict:
        return {
            "rows_read": self.n_rows_read,
            "dropped_missing_v": self.n_dropped_v,
            "imputed_v": self.n_imputed_v,
            "blanked_partial_x": self.n_blanked_x,
        }


def read_rows(path: str | Path, schema: CovariateSchema) -> tuple[list[dict], list[int]]:
    """Rows as dicts of stripped strings, with their 1-based file line numbers."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except UnicodeDecodeError:
            raise DataError(f"{path}: not valid UTF-8") from None
        needed = list(schema.lists) + schema.v_names + [c.name for c in schema.x_columns]
        absent = [name for name in needed if name not in header]
        if absent:
            raise DataError(f"{path}: columns not in header: {absent}")
        rows, lines = [], []
        try:
            for fields in reader:
                line = reader.line_num
                if not fields or all(f.strip() == "" for f in fields):
                    continue
                if len(fields) != len(header):
                    raise DataError(
                        f"line {line}: expected {len(header)} fields, found {len(fields)}", line=line
                    )
                rows.append({h: f.strip() for h, f in zip(header, fields)})
                lines.append(line)
        except UnicodeDecodeError:
            raise DataError(f"{path}: not valid UTF-8") from None
        except csv.Error as exc:
            raise DataError(f"line {reader.line_num}: {exc}", line=reader.line_num) from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows, lines


def _impute_v_values(rows: list[dict], schema: CovariateSchema, method: str, seed: int) -> int:
    """Fill missing v cells in place; returns the number of cells filled."""
    filled = 0
    for col in schema.v_columns:
        gaps = [i for i, r in enumerate(rows) if _missing(r.get(col.name))]
        if not gaps:
            continue
        known = [r[col.name] for r in rows if not _missing(r.get(col.name))]
        if not known:
            raise DataError(f"column {col.name!r} has no observed values to impute from")
        if method == "mode":
            if col.is_categorical:
                values, counts = np.unique(known, return_counts=True)
                fill = [str(values[np.argmax(counts)])] * len(gaps)
            else:
                fill = [repr(float(np.median([float(k) for k in known])))] * len(gaps)
        else:
            fill = _forest_fill(rows, schema, col, gaps, seed)
        for i, value in zip(gaps, fill):
            rows[i][col.name] = value
        filled += len(gaps)
    return filled


def _forest_fill(rows, schema, col, gaps, seed) -> list[str]:
    """Random-forest prediction of one v column from list flags and x levels."""
    from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

    def features(r):
        flags = [float(r[name] in ("1", "1.0")) for name in schema.lists]
        codes = [
            float(c.levels.index(r[c.name])) if r.get(c.name) in c.levels else -1.0
            for c in schema.x_columns
        ]
        return flags + codes

    gap_set = set(gaps)
    train = [i for i in range(len(rows)) if i not in gap_set]
    X = np.array([features(rows[i]) for i in train])
    Xg = np.array([features(rows[i]) for i in gaps])
    if col.is_categorical:
        y = np.array([rows[i][col.name] for i in train])
        model = RandomForestClassifier(n_estimators=100, random_state=seed, n_jobs=1).fit(X, y)
        return [str(v) for v in model.predict(Xg)]
    y = np.array([float(rows[i][col.name]) for i in train])
    model = RandomForestRegressor(n_estimators=100, random_state=seed, n_jobs=1).fit(X, y)
    return [repr(float(v)) for v in model.predict(Xg)]


def ingest_csv(path: str | Path, schema: CovariateSchema, impute_v: str = "drop",
               partial_x: str = "reject", seed: int = 0) -> IngestResult:
    """Read and validate a capture-recapture CSV.

    List columns hold 0/1; an empty cell is a missing value. Rows missing an
    always-observed covariate are dropped or imputed per ``impute_v``. A
    partially observed x vector is an error unless ``partial_x="blank"``,
    which treats the whole vector as missing.

    Raises
    ------
    DataError
        With the offending file line number.
    """
    if impute_v not in IMPUTE_V:
        raise ConfigError(f"impute_v must be one of {IMPUTE_V}")
    if partial_x not in PARTIAL_X:
        raise ConfigError(f"partial_x must be one of {PARTIAL_X}")
    rows, lines = read_rows(path, schema)
    n_read = len(rows)
    result = IngestResult(None, n_read)  # type: ignore[arg-type]

    v_gap = [any(_missing(r.get(n)) for n in schema.v_names) for r in rows]
    if impute_v == "drop":
        keep = [i for i, gap in enumerate(v_gap) if not gap]
        result.n_dropped_v = n_read - len(keep)
        rows = [rows[i] for i in keep]
        lines = [lines[i] for i in keep]
        if not rows:
            raise DataError("every row is missing an always-observed covariate")
    else:
        result.n_imputed_v = _impute_v_values(rows, schema, impute_v, seed)

    if partial_x == "blank":
        x_names = [c.name for c in schema.x_columns]
        for r in rows:
            gaps = [_missing(r.get(n)) for n in x_names]
            if any(gaps) and not all(gaps):
                for n in x_names:
                    r[n] = ""
                result.n_blanked_x += 1

    try:
        result.dataset = validate_dataset(rows, schema)
    except DataError as exc:
        if exc.row is None:
            raise
        line = lines[exc.row]
        message = str(exc.args[0]).split(": ", 1)[-1]
        raise DataError(f"line {line}: {message}", exc.row, line) from None
    return result


def write_csv(dataset: Dataset, path: str | Path) -> Path:
    """Write ``dataset`` in the layout :func:`ingest_csv` reads."""
    path = Path(path)
    records = dataset.to_records()
    schema = dataset.schema
    header = list(schema.lists) + schema.v_names + [c.name for c in schema.x_columns]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(records)
    return path


@dataclass(frozen=True)
class DiagnoseSettings:
    """Which remainder checks ``diagnose`` runs."""

    missing_target: float = 0.25
    eps_grid: tuple[float, ...] = (0.02, 0.04, 0.08)
    sample_size: int = 100_000
    replicate: int = 0

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiagnoseSettings":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown diagnose settings: {sorted(unknown)}")
        d = dict(d)
        if "eps_grid" in d:
            d["eps_grid"] = tuple(float(e) for e in d["eps_grid"])
        return cls(**d)


@dataclass
class RunConfig:
    """Everything one CLI invocation needs; loaded from JSON.

    ``schema``, ``learners`` and the fold/alpha/seed settings drive
    ``estimate``; ``simulation``, ``rates`` and ``workers`` drive
    ``simulate``; ``diagnose`` takes ``simulation`` and ``diagnostics``.
    """

    schema: CovariateSchema | None = None
    data: str | None = None
    learners: NuisanceSpecs = field(default_factory=NuisanceSpecs)
    k_folds: int = 5
    alpha: float = 0.05
    seed: int = 0
    gamma_cap: float = 1e4
    impute_v: str = "drop"
    partial_x: str = "reject"
    simulation: SimConfig = field(default_factory=SimConfig)
    rates: tuple[float, ...] = DEFAULT_RATES
    workers: int = 1
    diagnostics: DiagnoseSettings = field(default_factory=DiagnoseSettings)

    def __post_init__(self):
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.impute_v not in IMPUTE_V:
            raise ConfigError(f"impute_v must be one of {IMPUTE_V}")
        if self.partial_x not in PARTIAL_X:
            raise ConfigError(f"partial_x must be one of {PARTIAL_X}")
        if self.gamma_cap <= 1:
            raise ConfigError("gamma_cap must exceed 1")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        self.rates = tuple(float(r) for r in self.rates)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: str | Path | None = None) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "schema" in d:
            d["schema"] = CovariateSchema.from_dict(d["schema"])
        if "learners" in d:
            d["learners"] = NuisanceSpecs.from_dict(d["learners"])
        if "simulation" in d:
            d["simulation"] = SimConfig.from_dict(d["simulation"])
        if "diagnostics" in d:
            d["diagnostics"] = DiagnoseSettings.from_dict(d["diagnostics"])
        if d.get("data") and base_dir is not None and not Path(d["data"]).is_absolute():
            d["data"] = str(Path(base_dir) / d["data"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad configuration: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict() if self.schema else None,
            "data": self.data,
            "learners": self.learners.to_dict(),
            "k_folds": self.k_folds,
            "alpha": self.alpha,
            "seed": self.seed,
            "gamma_cap": self.gamma_cap,
            "impute_v": self.impute_v,
            "partial_x": self.partial_x,
            "simulation": self.simulation.to_dict(),
            "rates": list(self.rates),
            "workers": self.workers,
            "diagnostics": {**asdict(self.diagnostics), "eps_grid": list(self.diagnostics.eps_grid)},
        }

    def override(self, **flags) -> "RunConfig":
        """Apply CLI flags that were actually given (``None`` means unset)."""
        given = {k: v for k, v in flags.items() if v is not None}
        return replace(self, **given)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(raw, base_dir=path.parent)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


@dataclass
class Report:
    """Structured output of one run; serializes to JSON and back unchanged."""

    command: str
    version: str
    estimates: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    error: dict | None = None

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Report":
        return cls(**dict(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path
