"""Synthetic long-format datasets with known ground truth.

Random numbers come from SplitMix64 so any implementation can regenerate the
same bytes. Each purpose draws from its own stream; stream ``tag`` starts at
state ``seed XOR (tag * 0xD1B54A32D192ED03)`` and yields the usual SplitMix64
sequence (add 0x9E3779B97F4A7C15, then the two xor-shift-multiply rounds).
Uniforms are ``(u64 >> 11) * 2**-53``; normals are Box-Muller,
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, consuming two uniforms each.

Stream layout (cells are ``step * n_series + series``, all cells drawn even
when the series has not started yet):

    1  per series: offset, intercept, slope, amplitude, phase   (5 uniforms)
    2  per series, per continuous covariate: coefficient        (uniform)
    3  per categorical covariate, per category: offset          (normal)
    4  per cell, per continuous covariate: value                (normal)
    5  per cell, per categorical covariate: category            (uniform)
    6  per cell: target noise                                   (normal)
    7  per cell: target missing, then each covariate missing    (uniform)

Target model for series ``s`` at step ``t`` (``t0`` = series start):

    intercept + slope * (t - t0) + amplitude * sin(2 pi t / P + phase)
        + w * (sum_j beta_sj * x_j + sum_k offset_k[c_k]) + noise

After ``drift_at`` the covariate coefficients and category offsets are
multiplied by ``1 + drift_magnitude`` and the intercept moves by
``drift_magnitude * w``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import TIMESTAMP_FORMAT, LongTable, Period, Schema, format_floats, write_long_csv

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TAG_MULT = 0xD1B54A32D192ED03
_MASK64 = (1 << 64) - 1


class InvalidConfig(ValueError):
    def __init__(self, field_name: str, reason: str = "invalid value"):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-style SplitMix64 stream; ``next_u64(n)`` is vectorized."""

    def __init__(self, seed: int, tag: int = 0):
        self.state = (int(seed) ^ (tag * _TAG_MULT)) & _MASK64
        self.count = 0

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(self.count + 1, self.count + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.count += n
        return out

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2) if n else np.zeros((0, 2))
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


@dataclass
class SynthConfig:
    seed: int = 0
    n_series: int = 4
    period: str = "H"
    n_steps: int = 500
    length_jitter: float = 0.0
    trend_slope_range: tuple = (0.0, 0.0)
    seasonal_amplitude_range: tuple = (0.0, 0.0)
    seasonal_period_steps: int = 24
    noise_sigma: float = 1.0
    missing_rate: float = 0.0
    n_cont_covariates: int = 1
    n_cat_covariates: int = 0
    cat_cardinality: int = 3
    covariate_signal_weight: float = 1.0
    drift_at: int | None = None
    drift_magnitude: float = 0.0
    intercept_range: tuple = (10.0, 100.0)
    n_key_cols: int = 1
    start: str = "2020-01-01 00:00:00"
    budget_seconds: float = 30.0
    name: str = "synthetic"

    def __post_init__(self):
        self.trend_slope_range = tuple(self.trend_slope_range)
        self.seasonal_amplitude_range = tuple(self.seasonal_amplitude_range)
        self.intercept_range = tuple(self.intercept_range)
        self.validate()

    def validate(self) -> None:
        def check(ok, name, reason):
            if not ok:
                raise InvalidConfig(name, reason)

        check(self.n_series >= 1, "n_series", "must be positive")
        check(self.n_steps >= 1, "n_steps", "must be positive")
        check(self.period in {p.value for p in Period}, "period", "unknown period")
        check(0 <= self.length_jitter < 1, "length_jitter", "must be in [0, 1)")
        for name in ("trend_slope_range", "seasonal_amplitude_range", "intercept_range"):
            lo_hi = getattr(self, name)
            check(len(lo_hi) == 2 and lo_hi[0] <= lo_hi[1], name, "range must be ordered")
        check(self.seasonal_amplitude_range[0] >= 0, "seasonal_amplitude_range", "must be non-negative")
        check(self.seasonal_period_steps >= 2, "seasonal_period_steps", "must be at least 2")
        check(self.noise_sigma >= 0, "noise_sigma", "must be non-negative")
        check(0 <= self.missing_rate < 1, "missing_rate", "must be in [0, 1)")
        check(self.n_cont_covariates >= 0, "n_cont_covariates", "must be non-negative")
        check(self.n_cat_covariates >= 0, "n_cat_covariates", "must be non-negative")
        check(self.cat_cardinality >= 1, "cat_cardinality", "must be positive")
        check(self.covariate_signal_weight >= 0, "covariate_signal_weight", "must be non-negative")
        check(self.n_key_cols in (0, 1, 2), "n_key_cols", "must be 0, 1 or 2")
        check(self.n_key_cols > 0 or self.n_series == 1, "n_key_cols", "several series need a key column")
        check(self.drift_at is None or self.drift_at >= 0, "drift_at", "must be a step index")
        check(self.budget_seconds > 0, "budget_seconds", "must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InvalidConfig(unknown[0], "unknown key")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InvalidConfig("config", str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfig("json", f"line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise InvalidConfig("json", "top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        return doc

    def schema(self) -> Schema:
        keys = {0: (), 1: ("series",), 2: ("store", "item")}[self.n_key_cols]
        return Schema(
            timestamp_col="timestamp",
            key_cols=keys,
            categorical_cols=tuple(f"c{k}" for k in range(self.n_cat_covariates)),
            continuous_cols=tuple(f"x{j}" for j in range(self.n_cont_covariates)),
            target_col="y",
            period=Period(self.period),
            budget_seconds=self.budget_seconds,
        )


@dataclass
class GroundTruth:
    frame: pd.DataFrame  # key columns, timestamp, noiseless; aligned 1:1 with table rows
    coefficients: dict = field(default_factory=dict)

    @property
    def noiseless(self) -> np.ndarray:
        return self.frame["noiseless"].to_numpy(dtype=float)


def _series_tokens(config: SynthConfig, s: int) -> tuple:
    if config.n_key_cols == 0:
        return ()
    if config.n_key_cols == 1:
        return (f"s{s:03d}",)
    width = math.ceil(math.sqrt(config.n_series))
    return (f"store{s // width:02d}", f"item{s % width:02d}")


def _timestamps(config: SynthConfig) -> pd.DatetimeIndex:
    start = pd.Timestamp(config.start)
    period = Period(config.period)
    if period is Period.MONTH:
        return pd.date_range(start, periods=config.n_steps, freq="MS")
    step = {Period.MINUTE: "min", Period.HOUR: "h", Period.DAY: "D"}[period]
    return pd.date_range(start, periods=config.n_steps, freq=step)


def generate(config: SynthConfig) -> tuple[LongTable, GroundTruth]:
    config.validate()
    S, T = config.n_series, config.n_steps
    J, K = config.n_cont_covariates, config.n_cat_covariates
    w = config.covariate_signal_weight
    seed = config.seed

    per_series = SplitMix64(seed, 1).uniform(5 * S).reshape(S, 5)
    lo, hi = config.intercept_range
    intercept = lo + (hi - lo) * per_series[:, 1]
    lo, hi = config.trend_slope_range
    slope = lo + (hi - lo) * per_series[:, 2]
    lo, hi = config.seasonal_amplitude_range
    amplitude = lo + (hi - lo) * per_series[:, 3]
    phase = 2.0 * np.pi * per_series[:, 4]
    start_step = np.floor(per_series[:, 0] * config.length_jitter * T).astype(np.int64)

    beta = 0.5 + SplitMix64(seed, 2).uniform(S * J).reshape(S, J)
    cat_offsets = SplitMix64(seed, 3).normal(K * config.cat_cardinality).reshape(
        K, config.cat_cardinality
    )

    n_cells = T * S
    x = SplitMix64(seed, 4).normal(n_cells * J).reshape(n_cells, J)
    cat_u = SplitMix64(seed, 5).uniform(n_cells * K).reshape(n_cells, K)
    cats = np.minimum((cat_u * config.cat_cardinality).astype(np.int64), config.cat_cardinality - 1)
    noise = SplitMix64(seed, 6).normal(n_cells)
    miss_u = SplitMix64(seed, 7).uniform(n_cells * (1 + J + K)).reshape(n_cells, 1 + J + K)

    step = np.repeat(np.arange(T), S)
    series = np.tile(np.arange(S), T)

    drifted = np.zeros(n_cells, dtype=bool)
    if config.drift_at is not None:
        drifted = step >= config.drift_at
    effect_scale = np.where(drifted, 1.0 + config.drift_magnitude, 1.0)

    covariate_effect = (beta[series] * x).sum(axis=1) if J else np.zeros(n_cells)
    if K:
        covariate_effect = covariate_effect + cat_offsets[np.arange(K)[None, :], cats].sum(axis=1)
    season = amplitude[series] * np.sin(2.0 * np.pi * step / config.seasonal_period_steps + phase[series])
    level = intercept[series] + np.where(drifted, config.drift_magnitude * w, 0.0)
    noiseless = (
        level
        + slope[series] * (step - start_step[series])
        + season
        + w * effect_scale * covariate_effect
    )
    observed = noiseless + config.noise_sigma * noise

    present = step >= start_step[series]
    missing = miss_u < config.missing_rate

    schema = config.schema()
    stamps = _timestamps(config)
    tokens = [_series_tokens(config, s) for s in range(S)]
    rows = np.flatnonzero(present)

    data: dict = {schema.timestamp_col: stamps.values[step[rows]]}
    for i, col in enumerate(schema.key_cols):
        data[col] = np.array([tokens[s][i] for s in series[rows]], dtype=object)
    for k, col in enumerate(schema.categorical_cols):
        vals = np.array([f"cat{c}" for c in cats[rows, k]], dtype=object)
        vals[missing[rows, 1 + J + k]] = None
        data[col] = vals
    for j, col in enumerate(schema.continuous_cols):
        data[col] = np.where(missing[rows, 1 + j], np.nan, x[rows, j])
    data[schema.target_col] = np.where(missing[rows, 0], np.nan, observed[rows])
    frame = pd.DataFrame(data, columns=schema.columns)
    frame[schema.timestamp_col] = frame[schema.timestamp_col].astype("datetime64[ns]")

    truth_frame = pd.DataFrame(
        {
            **{col: data[col] for col in schema.key_cols},
            schema.timestamp_col: frame[schema.timestamp_col].to_numpy(),
            "noiseless": noiseless[rows],
        }
    )
    coefficients = {
        "|".join(tokens[s]): {
            "intercept": float(intercept[s]),
            "slope": float(slope[s]),
            "amplitude": float(amplitude[s]),
            "phase": float(phase[s]),
            "start_step": int(start_step[s]),
            "beta": [float(b) for b in beta[s]],
        }
        for s in range(S)
    }
    coefficients["category_offsets"] = cat_offsets.tolist()
    return LongTable(schema, frame), GroundTruth(truth_frame, coefficients)


def noise_floor_rmse(config: SynthConfig) -> float:
    """RMSE of the predictor that outputs the noiseless target."""
    return float(config.noise_sigma)


def write_dataset(config: SynthConfig, out_dir, split_fraction: float = 0.8) -> dict:
    """Write data.csv, schema.json and truth.csv; returns the paths."""
    from .dataset import split_by_fraction

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, truth = generate(config)
    write_long_csv(table, out / "data.csv")
    schema_doc = table.schema.to_dict()
    schema_doc["name"] = config.name
    schema_doc["split_instant"] = split_by_fraction(table, split_fraction).strftime(TIMESTAMP_FORMAT)
    with open(out / "schema.json", "w", encoding="utf-8") as fh:
        json.dump(schema_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    tf = truth.frame.copy()
    tf[table.schema.timestamp_col] = pd.to_datetime(tf[table.schema.timestamp_col]).dt.strftime(
        TIMESTAMP_FORMAT
    )
    tf["noiseless"] = format_floats(tf["noiseless"].to_numpy())
    tf.to_csv(out / "truth.csv", index=False, lineterminator="\n")
    return {"data": out / "data.csv", "schema": out / "schema.json", "truth": out / "truth.csv"}
