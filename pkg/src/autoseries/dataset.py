"""Long-format time-series tables: schema, CSV ingestion, pivoting, splitting.

A dataset is one row per (timestamp, series key) with feature columns and a
target. Float columns use NaN as the missing marker, token columns use None;
neither is ever a real value, so statistics that skip missing cells stay exact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

SeriesKey = tuple  # ordered tuple of key tokens; () when there are no key columns

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


class DatasetError(ValueError):
    """Base class for malformed-data errors."""


class MissingColumn(DatasetError):
    def __init__(self, name: str):
        super().__init__(f"missing column: {name!r}")
        self.name = name


class UnparsableTimestamp(DatasetError):
    def __init__(self, row: int, value: str):
        super().__init__(f"row {row}: cannot parse timestamp {value!r}")
        self.row = row


class UnparsableNumber(DatasetError):
    def __init__(self, row: int, col: str, value: str):
        super().__init__(f"row {row}, column {col!r}: cannot parse number {value!r}")
        self.row = row
        self.col = col


class EmptyFile(DatasetError):
    pass


class DuplicateCell(DatasetError):
    def __init__(self, key: SeriesKey, timestamp):
        super().__init__(f"duplicate row for series {key!r} at {timestamp}")
        self.key = key
        self.timestamp = timestamp


class EmptySplit(DatasetError):
    pass


class InvalidSchema(DatasetError):
    pass


class UnsortedSeries(DatasetError):
    pass


class Period(enum.Enum):
    MINUTE = "M"
    HOUR = "H"
    DAY = "D"
    MONTH = "Mo"

    @property
    def offset(self) -> pd.DateOffset:
        return {
            Period.MINUTE: pd.DateOffset(minutes=1),
            Period.HOUR: pd.DateOffset(hours=1),
            Period.DAY: pd.DateOffset(days=1),
            Period.MONTH: pd.DateOffset(months=1),
        }[self]


@dataclass(frozen=True)
class Schema:
    timestamp_col: str
    key_cols: tuple[str, ...]
    categorical_cols: tuple[str, ...]
    continuous_cols: tuple[str, ...]
    target_col: str
    period: Period = Period.DAY
    budget_seconds: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "key_cols", tuple(self.key_cols))
        object.__setattr__(self, "categorical_cols", tuple(self.categorical_cols))
        object.__setattr__(self, "continuous_cols", tuple(self.continuous_cols))
        if isinstance(self.period, str):
            object.__setattr__(self, "period", Period(self.period))
        roles = [
            [self.timestamp_col],
            list(self.key_cols),
            list(self.categorical_cols),
            list(self.continuous_cols),
            [self.target_col],
        ]
        names = [name for group in roles for name in group]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise InvalidSchema(f"columns assigned to more than one role: {dupes}")
        if not self.budget_seconds > 0:
            raise InvalidSchema("budget_seconds must be positive")

    @property
    def feature_cols(self) -> tuple[str, ...]:
        return self.categorical_cols + self.continuous_cols

    @property
    def columns(self) -> list[str]:
        return [self.timestamp_col, *self.key_cols, *self.feature_cols, self.target_col]

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp_col,
            "keys": list(self.key_cols),
            "categorical": list(self.categorical_cols),
            "continuous": list(self.continuous_cols),
            "target": self.target_col,
            "period": self.period.value,
            "budget_seconds": self.budget_seconds,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        required = ["timestamp", "target", "period", "budget_seconds"]
        for name in required:
            if name not in doc:
                raise InvalidSchema(f"schema descriptor lacks key {name!r}")
        try:
            period = Period(doc["period"])
        except ValueError:
            raise InvalidSchema(f"unknown period {doc['period']!r}") from None
        return cls(
            timestamp_col=doc["timestamp"],
            key_cols=tuple(doc.get("keys", [])),
            categorical_cols=tuple(doc.get("categorical", [])),
            continuous_cols=tuple(doc.get("continuous", [])),
            target_col=doc["target"],
            period=period,
            budget_seconds=float(doc["budget_seconds"]),
        )

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class LongTable:
    """Immutable long-format dataset.

    ``frame`` holds the schema columns only: the timestamp as datetime64,
    key and categorical columns as object arrays of str (None = missing),
    continuous and target columns as float64 (NaN = missing).
    """

    schema: Schema
    frame: pd.DataFrame = field(repr=False)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def timestamps(self) -> np.ndarray:
        return self.frame[self.schema.timestamp_col].to_numpy()

    @property
    def target(self) -> np.ndarray:
        return self.frame[self.schema.target_col].to_numpy(dtype=float)

    def missing_mask(self, col: str) -> np.ndarray:
        return self.frame[col].isna().to_numpy()

    def series_keys(self) -> list[SeriesKey]:
        """Per-row SeriesKey."""
        cols = self.schema.key_cols
        if not cols:
            return [()] * len(self.frame)
        return list(zip(*(self.frame[c].tolist() for c in cols)))

    def take(self, index) -> "LongTable":
        return LongTable(self.schema, self.frame.iloc[index].reset_index(drop=True))

    def validate(self) -> "LongTable":
        missing = [c for c in self.schema.columns if c not in self.frame.columns]
        if missing:
            raise MissingColumn(missing[0])
        ts = self.frame[self.schema.timestamp_col]
        if len(self.frame) and self.schema.key_cols:
            ordered = ts.groupby(
                [self.frame[c] for c in self.schema.key_cols], sort=False, dropna=False
            ).apply(lambda s: s.is_monotonic_increasing)
            if not ordered.all():
                raise UnsortedSeries("rows within a series are not time-ordered")
        elif len(self.frame) and not ts.is_monotonic_increasing:
            raise UnsortedSeries("rows are not time-ordered")
        return self


@dataclass(frozen=True)
class WideView:
    timestamps: np.ndarray
    series: dict  # SeriesKey -> np.ma.MaskedArray aligned with timestamps

    def unpivot(self) -> list[tuple]:
        """(key, timestamp, value) for every non-missing cell."""
        out = []
        for key, values in self.series.items():
            mask = np.ma.getmaskarray(values)
            for i in np.flatnonzero(~mask):
                out.append((key, self.timestamps[i], values.data[i]))
        return out


@dataclass(frozen=True)
class DatasetMetadata:
    row_count: int
    col_count: int
    key_num: int
    feat_num: int
    cont_num: int
    cat_num: int
    id_num: int
    period: Period
    budget_seconds: float


def _is_blank(values: pd.Series) -> np.ndarray:
    stripped = values.fillna("").astype(str).str.strip()
    return (stripped == "").to_numpy()


_NAN_TOKENS = {"", "nan", "na", "null", "none"}


def _parse_floats(cells: list, col: str) -> np.ndarray:
    values = np.empty(len(cells))
    for i, cell in enumerate(cells):
        text = cell.strip()
        if text.lower() in _NAN_TOKENS:
            values[i] = np.nan
            continue
        try:
            values[i] = float(text)
        except ValueError:
            raise UnparsableNumber(i, col, text) from None
    return values


def load_long_csv(path, schema: Schema) -> LongTable:
    path = Path(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    for col in schema.columns:
        if col not in raw.columns:
            raise MissingColumn(col)
    if raw.empty:
        raise EmptyFile(f"{path} has no data rows")

    out = {}
    ts_raw = raw[schema.timestamp_col].str.strip()
    ts = pd.to_datetime(ts_raw, format=TIMESTAMP_FORMAT, errors="coerce")
    if ts.isna().any():
        # date-only and other ISO layouts are accepted as a fallback
        ts = ts.fillna(pd.to_datetime(ts_raw, format="ISO8601", errors="coerce"))
    if ts.isna().any():
        row = int(np.flatnonzero(ts.isna().to_numpy())[0])
        raise UnparsableTimestamp(row, ts_raw.iloc[row])
    out[schema.timestamp_col] = ts.astype("datetime64[ns]")

    for col in (*schema.key_cols, *schema.categorical_cols):
        values = raw[col].astype(object)
        values[_is_blank(raw[col])] = None
        out[col] = values

    for col in (*schema.continuous_cols, schema.target_col):
        out[col] = _parse_floats(raw[col].tolist(), col)

    frame = pd.DataFrame(out, columns=schema.columns)
    return LongTable(schema, frame).validate()


def format_floats(values) -> list[str]:
    """Shortest round-trip text for each float; missing becomes an empty cell."""
    return ["" if v != v else repr(float(v)) for v in values]


def write_long_csv(table: LongTable, path) -> None:
    frame = table.frame.copy()
    s = table.schema
    frame[s.timestamp_col] = frame[s.timestamp_col].dt.strftime(TIMESTAMP_FORMAT)
    for col in (*s.continuous_cols, s.target_col):
        frame[col] = format_floats(frame[col].to_numpy())
    frame.to_csv(path, index=False, lineterminator="\n")


def group_by_series(table: LongTable) -> dict:
    """SeriesKey -> row indices (timestamp order)."""
    groups: dict = {}
    for i, key in enumerate(table.series_keys()):
        groups.setdefault(key, []).append(i)
    return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}


def pivot_to_wide(table: LongTable, value_col: str) -> WideView:
    schema = table.schema
    if value_col not in (*schema.feature_cols, schema.target_col):
        raise ValueError(f"{value_col!r} is neither a feature nor the target")
    stamps = table.timestamps
    uniq = np.unique(stamps)
    col_of = {t: i for i, t in enumerate(uniq)}
    values = table.frame[value_col].to_numpy()
    numeric = value_col in (*schema.continuous_cols, schema.target_col)
    series = {}
    for key, rows in group_by_series(table).items():
        data = np.zeros(len(uniq)) if numeric else np.full(len(uniq), None, dtype=object)
        seen = np.zeros(len(uniq), dtype=bool)
        missing = np.ones(len(uniq), dtype=bool)
        for r in rows:
            j = col_of[stamps[r]]
            if seen[j]:
                raise DuplicateCell(key, pd.Timestamp(stamps[r]))
            seen[j] = True
            v = values[r]
            if v is None or (numeric and np.isnan(v)):
                continue  # present row, missing value: stays masked
            data[j] = v
            missing[j] = False
        series[key] = np.ma.MaskedArray(data, mask=missing)
    return WideView(uniq, series)


def split_train_test(table: LongTable, split_instant) -> tuple[LongTable, list]:
    """Rows at or before ``split_instant`` train; the rest stream by timestamp."""
    split_instant = np.datetime64(pd.Timestamp(split_instant), "ns")
    stamps = table.timestamps
    train_mask = stamps <= split_instant
    if not train_mask.any() or train_mask.all():
        raise EmptySplit(f"split at {pd.Timestamp(split_instant)} leaves one side empty")
    train = table.take(np.flatnonzero(train_mask))
    test_idx = np.flatnonzero(~train_mask)
    order = test_idx[np.argsort(stamps[test_idx], kind="stable")]
    steps = []
    sorted_stamps = stamps[order]
    bounds = np.flatnonzero(np.diff(sorted_stamps.astype("int64"))) + 1
    for chunk in np.split(order, bounds):
        steps.append((pd.Timestamp(stamps[chunk[0]]), table.take(chunk)))
    return train, steps


def split_by_fraction(table: LongTable, train_fraction: float = 0.8):
    """Split at the distinct timestamp at ``train_fraction`` of the time axis."""
    uniq = np.unique(table.timestamps)
    if len(uniq) < 2:
        raise EmptySplit("need at least two distinct timestamps to split")
    idx = min(max(int(np.ceil(train_fraction * len(uniq))) - 1, 0), len(uniq) - 2)
    return pd.Timestamp(uniq[idx])


def infer_metadata(table: LongTable) -> DatasetMetadata:
    s = table.schema
    key_num = len(s.key_cols)
    feat_num = len(s.feature_cols)
    if key_num:
        id_num = len(set(table.series_keys()))
    else:
        id_num = 1 if len(table) else 0
    return DatasetMetadata(
        row_count=len(table),
        col_count=1 + key_num + feat_num + 1,
        key_num=key_num,
        feat_num=feat_num,
        cont_num=len(s.continuous_cols),
        cat_num=len(s.categorical_cols),
        id_num=id_num,
        period=s.period,
        budget_seconds=s.budget_seconds,
    )


def sort_by_time(table: LongTable) -> LongTable:
    """Stable sort by timestamp, keeping file order among equal stamps."""
    order = np.argsort(table.timestamps, kind="stable")
    if np.array_equal(order, np.arange(len(order))):
        return table
    return table.take(order)


def concat(tables: Sequence[LongTable]) -> LongTable:
    schema = tables[0].schema
    frame = pd.concat([t.frame for t in tables], ignore_index=True)
    return LongTable(schema, frame)


def iter_rows(table: LongTable) -> Iterator[tuple]:
    yield from table.frame.itertuples(index=False, name=None)
