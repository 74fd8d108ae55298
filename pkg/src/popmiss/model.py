"""Domain types for K-list capture-recapture data with missing covariates.

Capture profiles are stored as integer indices into the canonical binary
counting order of the nonzero profiles: for K=2 the order is
``(0,1), (1,0), (1,1)`` and a profile's index is its binary value minus one.
Every probability vector over profiles in this package uses that order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

MAX_LISTS = 16


@dataclass(frozen=True)
class CaptureProfile:
    """Binary membership vector of one unit over the K lists."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 2:
            raise ConfigError("a capture profile needs at least two lists")
        if any(b not in (0, 1) for b in self.bits):
            raise DataError(f"profile entries must be 0/1, got {self.bits}")
        if not any(self.bits):
            raise DataError("the all-zero profile is never observed")

    @property
    def K(self) -> int:
        return len(self.bits)

    @property
    def size(self) -> int:
        """Number of lists the unit appears on, |y|."""
        return sum(self.bits)

    @property
    def sign(self) -> int:
        """(-1)^(1+|y|): +1 for odd |y|, -1 for even |y|."""
        return 1 if self.size % 2 == 1 else -1

    @property
    def index(self) -> int:
        value = 0
        for b in self.bits:
            value = 2 * value + b
        return value - 1

    @classmethod
    def from_index(cls, index: int, K: int) -> "CaptureProfile":
        value = index + 1
        return cls(tuple((value >> (K - 1 - j)) & 1 for j in range(K)))

    def label(self) -> str:
        return "L" + "".join(str(b) for b in self.bits)


def _check_K(K: int) -> None:
    if not isinstance(K, (int, np.integer)) or not 2 <= K <= MAX_LISTS:
        raise ConfigError(f"number of lists K must be in [2, {MAX_LISTS}], got {K!r}")


def enumerate_profiles(K: int) -> list[CaptureProfile]:
    """All 2^K - 1 nonzero profiles in binary counting order."""
    _check_K(K)
    return [CaptureProfile.from_index(i, K) for i in range(2**K - 1)]


def profile_bits(K: int) -> np.ndarray:
    """(2^K - 1, K) 0/1 matrix of the canonical profiles."""
    _check_K(K)
    values = np.arange(1, 2**K)
    shifts = np.arange(K - 1, -1, -1)
    return (values[:, None] >> shifts[None, :]) & 1


def parity_signs(K: int) -> np.ndarray:
    """(-1)^(1+|y|) for every canonical profile, as floats."""
    sizes = profile_bits(K).sum(axis=1)
    return np.where(sizes % 2 == 1, 1.0, -1.0)


def n_lists_from_profiles(n_profiles: int) -> int:
    K = int(round(math.log2(n_profiles + 1)))
    if 2**K - 1 != n_profiles:
        raise ConfigError(f"{n_profiles} is not of the form 2^K - 1")
    return K


def profile_index(bits: np.ndarray) -> np.ndarray:
    """Map an (n, K) 0/1 array to canonical profile indices (-1 for zero rows)."""
    bits = np.asarray(bits, dtype=np.int64)
    K = bits.shape[1]
    weights = 1 << np.arange(K - 1, -1, -1)
    return bits @ weights - 1


@dataclass(frozen=True)
class Column:
    """A covariate column; ``levels`` is set iff the column is categorical."""

    name: str
    kind: str = "categorical"
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise ConfigError(f"categorical column {self.name!r} needs levels")
            levels = tuple(str(v) for v in self.levels)
            if len(set(levels)) != len(levels):
                raise ConfigError(f"column {self.name!r} has duplicate levels")
            object.__setattr__(self, "levels", levels)
        elif self.levels is not None:
            raise ConfigError(f"numeric column {self.name!r} cannot declare levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.levels is not None:
            out["levels"] = list(self.levels)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Column":
        levels = d.get("levels")
        kind = d.get("kind", "categorical" if levels is not None else "numeric")
        return cls(str(d["name"]), kind, tuple(levels) if levels is not None else None)


@dataclass(frozen=True)
class CovariateSchema:
    """Column layout: list indicators, always-observed V, possibly missing X.

    X columns are categorical with a finite declared support; their joint
    support is enumerated in row-major order over ``x_columns``.
    """

    lists: tuple[str, ...]
    v_columns: tuple[Column, ...] = ()
    x_columns: tuple[Column, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lists", tuple(self.lists))
        object.__setattr__(self, "v_columns", tuple(self.v_columns))
        object.__setattr__(self, "x_columns", tuple(self.x_columns))
        _check_K(len(self.lists))
        names = list(self.lists) + [c.name for c in self.v_columns + self.x_columns]
        dupes = [n for n, c in Counter(names).items() if c > 1]
        if dupes:
            raise ConfigError(f"duplicate column names: {dupes}")
        if not self.x_columns:
            raise ConfigError("at least one potentially missing (x) column is required")
        for c in self.x_columns:
            if not c.is_categorical:
                raise ConfigError(f"x column {c.name!r} must be categorical")

    @property
    def K(self) -> int:
        return len(self.lists)

    @property
    def n_profiles(self) -> int:
        return 2**self.K - 1

    @property
    def x_shape(self) -> tuple[int, ...]:
        return tuple(len(c.levels) for c in self.x_columns)

    @property
    def x_support_size(self) -> int:
        return int(np.prod(self.x_shape))

    @property
    def v_names(self) -> list[str]:
        return [c.name for c in self.v_columns]

    def v_column(self, name: str) -> Column:
        for c in self.v_columns:
            if c.name == name:
                return c
        raise ConfigError(f"unknown v column {name!r}")

    def x_joint_index(self, codes: np.ndarray) -> np.ndarray:
        """Row-major joint index of per-column level codes; -1 where missing."""
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim == 1:
            codes = codes[:, None]
        out = np.ravel_multi_index(tuple(np.maximum(codes, 0).T), self.x_shape)
        return np.where((codes < 0).any(axis=1), -1, out)

    def x_levels_of(self, joint: int) -> tuple[str, ...]:
        idx = np.unravel_index(joint, self.x_shape)
        return tuple(c.levels[i] for c, i in zip(self.x_columns, idx))

    def to_dict(self) -> dict:
        return {
            "lists": list(self.lists),
            "v": [c.to_dict() for c in self.v_columns],
            "x": [c.to_dict() for c in self.x_columns],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateSchema":
        try:
            return cls(
                tuple(d["lists"]),
                tuple(Column.from_dict(c) for c in d.get("v", [])),
                tuple(Column.from_dict({"kind": "categorical", **c}) for c in d["x"]),
            )
        except KeyError as exc:
            raise ConfigError(f"schema is missing field {exc}") from None


@dataclass(frozen=True)
class Observation:
    """One captured unit. ``x`` is None exactly when ``r`` is 0."""

    y: CaptureProfile
    v: tuple
    r: int
    x: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.r == 1) != (self.x is not None):
            raise DataError("x must be present iff r == 1")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated captured sample in columnar form.

    Attributes
    ----------
    schema : CovariateSchema
    profile : (N,) int array of canonical profile indices.
    v : (N, d_v) float array; categorical columns hold level codes.
    x : (N, d_x) int array of level codes, -1 where the unit has r = 0.
    r : (N,) bool array, True when every x column is observed.
    """

    schema: CovariateSchema
    profile: np.ndarray
    v: np.ndarray
    x: np.ndarray
    r: np.ndarray
    x_joint: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.profile)
        object.__setattr__(self, "profile", _frozen(np.asarray(self.profile, dtype=np.int64)))
        v = np.asarray(self.v, dtype=float).reshape(n, len(self.schema.v_columns))
        object.__setattr__(self, "v", _frozen(v))
        x = np.asarray(self.x, dtype=np.int64).reshape(n, len(self.schema.x_columns))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "r", _frozen(np.asarray(self.r, dtype=bool)))
        object.__setattr__(self, "x_joint", _frozen(self.schema.x_joint_index(self.x)))
        if n < 1:
            raise DataError("dataset must contain at least one captured unit")
        if self.profile.min() < 0 or self.profile.max() >= self.schema.n_profiles:
            raise DataError("profile index out of range (zero profile?)")
        if np.any((self.x_joint >= 0) != self.r):
            raise DataError("x must be fully observed iff r is true")

    @property
    def K(self) -> int:
        return self.schema.K

    @property
    def N(self) -> int:
        return len(self.profile)

    def __len__(self) -> int:
        return self.N

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.profile, other.profile)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.r, other.r)
        )

    def subset(self, idx) -> "Dataset":
        return Dataset(self.schema, self.profile[idx], self.v[idx], self.x[idx], self.r[idx])

    def with_x(self, x: np.ndarray) -> "Dataset":
        x = np.asarray(x, dtype=np.int64)
        return Dataset(self.schema, self.profile, self.v, x, (x >= 0).all(axis=1))

    def profile_counts(self) -> np.ndarray:
        return np.bincount(self.profile, minlength=self.schema.n_profiles)

    def list_counts(self) -> np.ndarray:
        """Number of units on each list."""
        return profile_bits(self.K)[self.profile].sum(axis=0)

    def crosstab(self) -> dict:
        """Complete-case by capture-profile counts, keyed by profile label."""
        labels = [p.label() for p in enumerate_profiles(self.K)]
        comp = np.bincount(self.profile[self.r], minlength=len(labels))
        inc = np.bincount(self.profile[~self.r], minlength=len(labels))
        return {
            "profiles": labels,
            "complete": comp.tolist(),
            "incomplete": inc.tolist(),
        }

    def summary(self) -> dict:
        return {
            "N": self.N,
            "K": self.K,
            "complete_cases": int(self.r.sum()),
            "complete_fraction": float(self.r.mean()),
            "list_counts": dict(zip(self.schema.lists, self.list_counts().tolist())),
            "crosstab": self.crosstab(),
        }

    def observations(self) -> Iterator[Observation]:
        bits = profile_bits(self.K)
        for i in range(self.N):
            y = CaptureProfile(tuple(int(b) for b in bits[self.profile[i]]))
            v = tuple(self._v_value(j, self.v[i, j]) for j in range(self.v.shape[1]))
            if self.r[i]:
                x = tuple(c.levels[k] for c, k in zip(self.schema.x_columns, self.x[i]))
                yield Observation(y, v, 1, x)
            else:
                yield Observation(y, v, 0, None)

    def _v_value(self, j, value):
        col = self.schema.v_columns[j]
        return col.levels[int(value)] if col.is_categorical else float(value)

    def to_records(self) -> list[dict[str, str]]:
        """Raw string records (the CSV cell representation) of every unit."""
        bits = profile_bits(self.K)
        records = []
        for i in range(self.N):
            rec = {name: str(int(b)) for name, b in zip(self.schema.lists, bits[self.profile[i]])}
            for j, col in enumerate(self.schema.v_columns):
                rec[col.name] = str(self._v_value(j, self.v[i, j])) if col.is_categorical \
                    else repr(float(self.v[i, j]))
            for j, col in enumerate(self.schema.x_columns):
                code = self.x[i, j]
                rec[col.name] = col.levels[code] if code >= 0 else ""
            records.append(rec)
        return records


def _parse_list_flag(value, name, row):
    s = str(value).strip()
    if s in ("1", "1.0", "True", "true"):
        return 1
    if s in ("0", "0.0", "False", "false"):
        return 0
    raise DataError(f"row {row}: list column {name!r} must be 0/1, got {value!r}", row)


def _is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return str(value).strip() == ""


def validate_dataset(raw_rows: Iterable[Mapping], schema: CovariateSchema) -> Dataset:
    """Build a :class:`Dataset` from raw records, enforcing every invariant.

    Raises
    ------
    DataError
        On an all-zero profile, a partially observed x vector, an unknown
        categorical level, or a missing/unparseable v value. The message
        names the zero-based row index.
    """
    v_lookup = [
        {lvl: k for k, lvl in enumerate(c.levels)} if c.is_categorical else None
        for c in schema.v_columns
    ]
    x_lookup = [{lvl: k for k, lvl in enumerate(c.levels)} for c in schema.x_columns]
    weights = 1 << np.arange(schema.K - 1, -1, -1)
    profiles, vs, xs = [], [], []
    for i, row in enumerate(raw_rows):
        try:
            bits = [_parse_list_flag(row[name], name, i) for name in schema.lists]
        except KeyError as exc:
            raise DataError(f"row {i}: missing list column {exc}", i) from None
        if not any(bits):
            raise DataError(f"row {i}: all-zero capture profile", i)
        profiles.append(int(np.dot(bits, weights)) - 1)

        vrow = []
        for col, lookup in zip(schema.v_columns, v_lookup):
            value = row.get(col.name)
            if _is_missing(value):
                raise DataError(f"row {i}: always-observed column {col.name!r} is missing", i)
            if lookup is not None:
                key = str(value).strip()
                if key not in lookup:
                    raise DataError(f"row {i}: unknown level {key!r} for {col.name!r}", i)
                vrow.append(lookup[key])
            else:
                try:
                    vrow.append(float(value))
                except (TypeError, ValueError):
                    raise DataError(f"row {i}: {col.name!r} is not numeric: {value!r}", i) from None
                if not math.isfinite(vrow[-1]):
                    raise DataError(f"row {i}: {col.name!r} is not finite", i)
        vs.append(vrow)

        raw_x = [row.get(col.name) for col in schema.x_columns]
        missing = [_is_missing(val) for val in raw_x]
        if all(missing):
            xs.append([-1] * len(raw_x))
        elif any(missing):
            names = [c.name for c, m in zip(schema.x_columns, missing) if m]
            raise DataError(f"row {i}: partially observed x (missing {names})", i)
        else:
            xrow = []
            for col, lookup, val in zip(schema.x_columns, x_lookup, raw_x):
                key = str(val).strip()
                if key not in lookup:
                    raise DataError(f"row {i}: unknown level {key!r} for {col.name!r}", i)
                xrow.append(lookup[key])
            xs.append(xrow)
    if not profiles:
        raise DataError("dataset must contain at least one captured unit")
    x = np.asarray(xs, dtype=np.int64).reshape(len(profiles), len(schema.x_columns))
    return Dataset(
        schema,
        np.asarray(profiles),
        np.asarray(vs, dtype=float).reshape(len(profiles), len(schema.v_columns)),
        x,
        (x >= 0).all(axis=1),
    )


def dataset_from_arrays(
    schema: CovariateSchema,
    bits: np.ndarray,
    v: np.ndarray,
    x: np.ndarray,
) -> Dataset:
    """Build a dataset from numeric arrays (simulation path).

    ``x`` holds level codes with -1 marking a missing unit; rows must be
    either fully observed or fully missing.
    """
    prof = profile_index(bits)
    bad = np.flatnonzero(prof < 0)
    if bad.size:
        raise DataError(f"row {bad[0]}: all-zero capture profile", int(bad[0]))
    x = np.asarray(x, dtype=np.int64).reshape(len(prof), -1)
    miss = x < 0
    partial = np.flatnonzero(miss.any(axis=1) & ~miss.all(axis=1))
    if partial.size:
        raise DataError(f"row {partial[0]}: partially observed x", int(partial[0]))
    return Dataset(schema, prof, v, x, ~miss.any(axis=1))


def from_observations(observations: Sequence[Observation], schema: CovariateSchema) -> Dataset:
    """Inverse of :meth:`Dataset.observations`."""
    rows = []
    for obs in observations:
        rec = dict(zip(schema.lists, obs.y.bits))
        rec.update(zip(schema.v_names, obs.v))
        xs = obs.x if obs.x is not None else [""] * len(schema.x_columns)
        rec.update(zip((c.name for c in schema.x_columns), xs))
        rows.append(rec)
    return validate_dataset(rows, schema)
