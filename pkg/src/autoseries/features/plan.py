"""Fitted, replayable feature engineering over a long table.

A :class:`FeaturePlan` is fit once on training rows and then applied to any
table with the same schema. Target-derived features only read targets from
strictly earlier timestamps, so a plan can be applied to a buffer holding
revealed history plus the current rows (whose targets are unknown).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..dataset import LongTable, Period, Schema
from . import encoders as enc
from . import temporal as tmp
from .calendar import extract_calendar

KINDS = (
    "calendar",
    "raw_continuous",
    "encoded_categorical",
    "lag",
    "diff",
    "rolling",
    "delta",
    "interaction",
)
BATCH = "batch_id"


@dataclass(frozen=True)
class FeatureOptions:
    calendar: bool = True
    target_lags: tuple = (1, 2, 3, 5, 7)
    covariate_lags: tuple = (1, 2, 3)
    rolling_windows: tuple = (3, 7, 14, 30)
    delta: bool = True
    sqrt_target: bool = True
    ordered_encoding: bool = True
    group_encoding: bool = True
    change_indicator: bool = True
    te_smoothing: float = 1.0
    min_group_size: int = 5
    group_blend: float = 0.8

    @classmethod
    def preset(cls, name: str) -> "FeatureOptions":
        if name == "full":
            return cls()
        if name == "baseline":
            # calendar fields, hashed categoricals and raw covariates only
            return cls(
                target_lags=(),
                covariate_lags=(),
                rolling_windows=(),
                delta=False,
                sqrt_target=False,
                ordered_encoding=False,
                group_encoding=False,
                change_indicator=False,
            )
        raise ValueError(f"unknown feature preset {name!r}")

    @property
    def lookback(self) -> int:
        """Past rows per series that the target/covariate features can reach."""
        depth = [1]
        depth += list(self.target_lags) + list(self.covariate_lags) + list(self.rolling_windows)
        if self.delta:
            depth.append(3)
        return max(depth)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureOptions":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


@dataclass
class FeatureMatrix:
    column_names: list
    column_kinds: list
    values: np.ndarray  # rows aligned with the source table, NaN = missing
    target: np.ndarray  # transformed target y' (NaN where unknown)
    anchor: np.ndarray  # last observed y' before each row, prior mean if none

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]

    def select(self, names) -> "FeatureMatrix":
        idx = [self.column_names.index(n) for n in names]
        return FeatureMatrix(
            [self.column_names[i] for i in idx],
            [self.column_kinds[i] for i in idx],
            self.values[:, idx],
            self.target,
            self.anchor,
        )

    def take(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(
            self.column_names, self.column_kinds, self.values[rows], self.target[rows], self.anchor[rows]
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.column_names)

    def to_csv(self, path) -> None:
        from ..dataset import format_floats

        frame = pd.DataFrame({n: format_floats(self.values[:, j]) for j, n in enumerate(self.column_names)})
        frame.to_csv(path, index=False, lineterminator="\n")


@dataclass(frozen=True)
class TargetTransform:
    """``y' = y - offset`` with ``offset = min(y_train) - 1``."""

    offset: float

    @classmethod
    def fit(cls, y) -> "TargetTransform":
        y = np.asarray(y, dtype=float)
        y = y[~np.isnan(y)]
        if not len(y):
            raise ValueError("target transform needs at least one observed target")
        return cls(float(y.min()) - 1.0)

    def forward(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) - self.offset

    def inverse(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) + self.offset


def difference_target(y_prime, anchor) -> np.ndarray:
    return np.asarray(y_prime, dtype=float) - np.asarray(anchor, dtype=float)


def integrate_target(diff, anchor) -> np.ndarray:
    return np.asarray(diff, dtype=float) + np.asarray(anchor, dtype=float)


def _tokens(frame: pd.DataFrame, col: str) -> list:
    return frame[col].tolist()


def series_codes(table: LongTable) -> np.ndarray:
    """Dense id per distinct raw key tuple, first-appearance order."""
    keys = table.schema.key_cols
    if not keys or not len(table):
        return np.zeros(len(table), dtype=np.int64)
    return table.frame.groupby(list(keys), sort=False, dropna=False).ngroup().to_numpy(dtype=np.int64)


@dataclass
class FeaturePlan:
    schema: Schema
    options: FeatureOptions
    label_maps: dict
    key_radices: list
    impute_means: dict
    target: TargetTransform
    prior: float
    fit_cutoff: int  # ns timestamp of the last fitting row
    ordered_totals: dict = field(default_factory=dict)
    group_tables: dict = field(default_factory=dict)
    interactions: list = field(default_factory=list)
    selected: list | None = None

    # ---- fitting -------------------------------------------------------
    @classmethod
    def fit(cls, table: LongTable, options: FeatureOptions | None = None) -> "FeaturePlan":
        options = options or FeatureOptions()
        s = table.schema
        if not len(table):
            raise ValueError("cannot fit a feature plan on an empty table")
        frame = table.frame
        label_maps = {c: enc.fit_label_mapping(_tokens(frame, c)) for c in (*s.key_cols, *s.categorical_cols)}
        key_codes = [enc.label_encode(_tokens(frame, c), label_maps[c])[0] for c in s.key_cols]
        radices = enc.key_radices(key_codes) if key_codes else []
        means = {c: enc.impute_mean(frame[c].to_numpy(dtype=float))[1] for c in s.continuous_cols}
        tt = TargetTransform.fit(table.target)
        yp = tt.forward(table.target)
        prior = float(np.nanmean(yp))
        plan = cls(
            schema=s,
            options=options,
            label_maps=label_maps,
            key_radices=radices,
            impute_means=means,
            target=tt,
            prior=prior,
            fit_cutoff=int(table.timestamps.astype("datetime64[ns]").astype("int64").max()),
        )
        enc_keys = plan._encoding_keys(table)
        if options.ordered_encoding:
            times = table.timestamps
            for name, keys in enc_keys.items():
                _, totals = enc.ordered_target_encode(keys, times, yp, prior, options.te_smoothing)
                plan.ordered_totals[name] = totals
        if options.group_encoding:
            for name in [*s.categorical_cols, BATCH]:
                keys = enc_keys[name] if name == BATCH else plan._codes(table, name)
                table_, glob = enc.fit_group_mean(keys, yp, options.min_group_size, options.group_blend)
                plan.group_tables[name] = (table_, glob)
        return plan

    def refit(self, table: LongTable) -> "FeaturePlan":
        """Refit statistics on ``table`` keeping interactions and the column selection."""
        plan = FeaturePlan.fit(table, self.options)
        plan.interactions = list(self.interactions)
        plan.selected = None if self.selected is None else list(self.selected)
        return plan

    def with_interactions(self, top) -> "FeaturePlan":
        return dataclasses.replace(self, interactions=list(top), selected=None)

    def with_selection(self, names) -> "FeaturePlan":
        return dataclasses.replace(self, selected=None if names is None else list(names))

    # ---- encodings -----------------------------------------------------
    def _codes(self, table: LongTable, col: str) -> np.ndarray:
        return enc.label_encode(_tokens(table.frame, col), self.label_maps[col])[0]

    def batch_ids(self, table: LongTable) -> np.ndarray:
        if not self.schema.key_cols:
            return np.zeros(len(table), dtype=np.int64)
        codes = [self._codes(table, c) for c in self.schema.key_cols]
        return enc.key_cross(codes, self.key_radices)[0]

    def _encoding_keys(self, table: LongTable) -> dict:
        """Integer keys for ordered encoding: each category crossed with batch_id, and batch_id."""
        batch = self.batch_ids(table)
        span = int(np.prod(np.asarray(self.key_radices, dtype=object))) + 1 if self.key_radices else 1
        keys = {}
        for c in self.schema.categorical_cols:
            codes = self._codes(table, c)
            if (len(self.label_maps[c]) + 1) * span >= np.iinfo(np.int64).max:
                raise enc.KeyCrossOverflow(f"crossing {c!r} with batch_id overflows")
            keys[c] = codes * span + batch
        keys[BATCH] = batch
        return keys

    # ---- application ---------------------------------------------------
    def column_names(self) -> list:
        return [n for n, _ in self._layout()]

    def _layout(self) -> list:
        s, o = self.schema, self.options
        out = []
        if o.calendar:
            from .calendar import calendar_fields

            out += [(f"{s.timestamp_col}__calendar__{f}", "calendar") for f in calendar_fields(s.period)]
        out += [(f"{c}__impute__mean", "raw_continuous") for c in s.continuous_cols]
        out += [(f"{c}__label__code", "encoded_categorical") for c in s.categorical_cols]
        out.append((f"{BATCH}__keycross__id", "encoded_categorical"))
        if o.ordered_encoding:
            out += [(f"{c}__ordered_te__{BATCH}", "encoded_categorical") for c in s.categorical_cols]
            out.append((f"{BATCH}__ordered_te__self", "encoded_categorical"))
        if o.group_encoding:
            out += [(f"{c}__group_te__mean", "encoded_categorical") for c in [*s.categorical_cols, BATCH]]
        if o.change_indicator:
            out += [(f"{c}__change__prev", "encoded_categorical") for c in s.categorical_cols]
        for k in o.target_lags:
            out.append((f"target__lag__{k}", "lag"))
        for k in o.target_lags:
            if k > 1:
                out.append((f"target__diff__{k}", "diff"))
        for c in s.continuous_cols:
            out += [(f"{c}__lag__{k}", "lag") for k in o.covariate_lags]
            out += [(f"{c}__diff__{k}", "diff") for k in o.covariate_lags]
        for w in o.rolling_windows:
            out += [(f"target__rolling_{st}__{w}", "rolling") for st in ("mean", "std", "max", "min")]
        if o.delta:
            out += [(f"target__delta__{d}", "delta") for d in ("d1", "d2", "ratio")]
        if o.sqrt_target:
            out.append(("target__sqrt__lag1", "lag"))
        top = self.interactions
        for i in range(len(top)):
            for j in range(i + 1, len(top)):
                out += [(f"{top[i]}__{op}__{top[j]}", "interaction") for op in tmp.INTERACTION_OPS]
        return out

    def transform(self, table: LongTable) -> FeatureMatrix:
        s, o = self.schema, self.options
        n = len(table)
        frame = table.frame
        times = table.timestamps
        cols: dict = {}
        if o.calendar:
            for f, v in extract_calendar(times, s.period).items():
                cols[f"{s.timestamp_col}__calendar__{f}"] = v
        imputed = {}
        for c in s.continuous_cols:
            imputed[c] = enc.impute_mean(frame[c].to_numpy(dtype=float), self.impute_means[c])[0]
            cols[f"{c}__impute__mean"] = imputed[c]
        codes = {c: self._codes(table, c) for c in s.categorical_cols}
        for c in s.categorical_cols:
            cols[f"{c}__label__code"] = codes[c].astype(float)
        batch = self.batch_ids(table)
        cols[f"{BATCH}__keycross__id"] = batch.astype(float)

        yp = self.target.forward(table.target)
        if o.ordered_encoding:
            keys = self._encoding_keys(table)
            past = times.astype("datetime64[ns]").astype("int64") <= self.fit_cutoff
            a = o.te_smoothing
            for name, k in keys.items():
                col = enc.apply_frozen_totals(k, self.ordered_totals.get(name, {}), self.prior, a)
                if past.any():
                    idx = np.flatnonzero(past)
                    col[idx] = enc.ordered_target_encode(k[idx], times[idx], yp[idx], self.prior, a)[0]
                label = f"{name}__ordered_te__{BATCH}" if name != BATCH else f"{BATCH}__ordered_te__self"
                cols[label] = col
        if o.group_encoding:
            for name in [*s.categorical_cols, BATCH]:
                table_, glob = self.group_tables[name]
                keys = batch if name == BATCH else codes[name]
                cols[f"{name}__group_te__mean"] = enc.apply_group_mean(keys, table_, glob)

        index = tmp.SeriesIndex.build(series_codes(table), times)
        if o.change_indicator:
            for c in s.categorical_cols:
                cols[f"{c}__change__prev"] = tmp.change_indicator(codes[c], index)
        if o.target_lags:
            lags, diffs = tmp.lag_and_diff(yp, index, o.target_lags, is_target=True)
            for k, v in lags.items():
                cols[f"target__lag__{k}"] = v
            for k, v in diffs.items():
                cols[f"target__diff__{k}"] = v
        if o.covariate_lags:
            for c in s.continuous_cols:
                lags, diffs = tmp.lag_and_diff(imputed[c], index, o.covariate_lags, is_target=False)
                for k, v in lags.items():
                    cols[f"{c}__lag__{k}"] = v
                for k, v in diffs.items():
                    cols[f"{c}__diff__{k}"] = v
        if o.rolling_windows:
            for (st, w), v in tmp.rolling_stats(yp, index, o.rolling_windows).items():
                cols[f"target__rolling_{st}__{w}"] = v
        if o.delta:
            for d, v in tmp.delta_features(yp, index).items():
                cols[f"target__delta__{d}"] = v
        lag1 = None
        if o.sqrt_target:
            lag1 = tmp.shift(yp, index, 1)
            with np.errstate(invalid="ignore"):
                cols["target__sqrt__lag1"] = np.sqrt(np.maximum(lag1, 0.0))
        if self.interactions:
            src = {c: imputed[c] for c in self.interactions}
            cols.update(tmp.pairwise_interactions(src, list(self.interactions)))

        anchor = tmp.last_observed(yp, index)
        anchor = np.where(np.isnan(anchor), self.prior, anchor)

        layout = self._layout()
        if self.selected is not None:
            keep = set(self.selected)
            layout = [(nm, kd) for nm, kd in layout if nm in keep]
        values = np.empty((n, len(layout)))
        for j, (name, _) in enumerate(layout):
            values[:, j] = cols[name]
        return FeatureMatrix([nm for nm, _ in layout], [kd for _, kd in layout], values, yp, anchor)

    # ---- persistence ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "options": self.options.to_dict(),
            "label_maps": self.label_maps,
            "key_radices": list(self.key_radices),
            "impute_means": self.impute_means,
            "target_offset": self.target.offset,
            "prior": self.prior,
            "fit_cutoff": str(pd.Timestamp(self.fit_cutoff)),
            "ordered_totals": {
                name: {str(k): [v[0], v[1]] for k, v in totals.items()}
                for name, totals in self.ordered_totals.items()
            },
            "group_tables": {
                name: {"global": glob, "groups": {str(k): v for k, v in tab.items()}}
                for name, (tab, glob) in self.group_tables.items()
            },
            "interactions": list(self.interactions),
            "selected": self.selected,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeaturePlan":
        return cls(
            schema=Schema.from_dict(doc["schema"]),
            options=FeatureOptions.from_dict(doc["options"]),
            label_maps={c: {t: int(i) for t, i in m.items()} for c, m in doc["label_maps"].items()},
            key_radices=[int(r) for r in doc["key_radices"]],
            impute_means={c: float(v) for c, v in doc["impute_means"].items()},
            target=TargetTransform(float(doc["target_offset"])),
            prior=float(doc["prior"]),
            fit_cutoff=pd.Timestamp(doc["fit_cutoff"]).value,
            ordered_totals={
                name: {int(k): (float(v[0]), int(v[1])) for k, v in totals.items()}
                for name, totals in doc["ordered_totals"].items()
            },
            group_tables={
                name: ({int(k): float(v) for k, v in g["groups"].items()}, float(g["global"]))
                for name, g in doc["group_tables"].items()
            },
            interactions=list(doc["interactions"]),
            selected=doc["selected"],
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text
