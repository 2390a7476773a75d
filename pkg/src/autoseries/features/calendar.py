import numpy as np
import pandas as pd

from ..dataset import Period

CALENDAR_FIELDS = ("year", "month", "day", "weekday", "hour")


def calendar_fields(period) -> tuple:
    return CALENDAR_FIELDS + (("minute",) if Period(period) is Period.MINUTE else ())


def extract_calendar(timestamps, period) -> dict:
    """Civil-calendar columns; weekday counts from Monday = 0."""
    ts = pd.DatetimeIndex(pd.to_datetime(np.asarray(timestamps)))
    cols = {
        "year": ts.year,
        "month": ts.month,
        "day": ts.day,
        "weekday": ts.weekday,
        "hour": ts.hour,
        "minute": ts.minute,
    }
    return {f: np.asarray(cols[f], dtype=float) for f in calendar_fields(period)}
