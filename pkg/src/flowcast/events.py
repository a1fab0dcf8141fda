"""Extreme net-inflow detection and case-study window extraction.

Per UTC calendar year, the k largest hourly net inflows are flagged
(rank 1 = largest; ties broken by earlier timestamp). The flagged hours
can then be cut into plot-ready windows pairing the hourly net-inflow
track with the hourly close-price track.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import EmptyYear, FrequencyMismatch, InsufficientCoverage
from .ingest import Asset, BarSeries, FlowSeries, format_number, format_timestamp, to_datetime
from .series import HOUR, NetInflowSeries, net_inflows

EVENTS_HEADER = ["asset", "timestamp", "net_inflow_musd", "year", "rank"]


@dataclass(frozen=True)
class EventHit:
    asset: Asset
    timestamp: datetime
    net_inflow_musd: float
    year: int
    rank_in_year: int


@dataclass
class CaseWindow:
    event: EventHit
    pre: timedelta
    post: timedelta
    flow_track: list[tuple[datetime, float]]   # hourly net inflow, US$M
    price_track: list[tuple[datetime, float]]  # hourly close, USD


def threshold_percentile(k: int, observations: int) -> float:
    """Percentile implied by flagging the top k of ``observations`` hours.

    For k=10 over a full 8,760-hour year this is 1 - 10/8760, which prints
    as the 99.89th percentile.
    """
    if observations <= 0:
        raise EmptyYear("no observations")
    return 1.0 - k / observations


def detect_extremes(series: NetInflowSeries, k: int,
                    years: set[int] | None = None,
                    most_negative: bool = False) -> list[EventHit]:
    """Flag the k most extreme net-inflow hours per calendar year.

    By default the largest net inflows are flagged; ``most_negative``
    flips the ranking to catch extreme net outflows instead.
    """
    if k < 1:
        raise EmptyYear(f"k must be >= 1, got {k}")
    if series.horizon != HOUR:
        raise FrequencyMismatch(f"extreme detection runs on 1h series, got {series.horizon}")
    ts = series.timestamps
    vals = series.values
    years_of = np.array([to_datetime(t).year for t in ts], dtype=np.int64)
    present = set(years_of.tolist())
    wanted = sorted(present) if years is None else sorted(years)
    hits: list[EventHit] = []
    for year in wanted:
        mask = years_of == year
        if not mask.any():
            raise EmptyYear(f"no observations in {year}")
        yt, yv = ts[mask], vals[mask]
        key = yv if most_negative else -yv
        order = np.lexsort((yt, key))
        top = order[:min(k, len(order))]
        for rank, i in enumerate(top, start=1):
            hits.append(EventHit(asset=series.asset, timestamp=to_datetime(yt[i]),
                                 net_inflow_musd=float(yv[i]), year=year,
                                 rank_in_year=rank))
    return hits


def extract_window(event: EventHit, flows: FlowSeries, bars: BarSeries,
                   pre: timedelta, post: timedelta) -> CaseWindow:
    """Cut hourly flow and close-price tracks spanning [event-pre, event+post]."""
    if pre < timedelta(0) or post < timedelta(0):
        raise InsufficientCoverage("pre and post must be non-negative")
    asset_flows = flows.select(event.asset)
    if len(asset_flows) == 0:
        raise InsufficientCoverage(f"no flows for {event.asset.value}")
    hourly = net_inflows(asset_flows, HOUR)

    t0 = int(event.timestamp.timestamp())
    grid = np.arange(t0 - int(pre.total_seconds()),
                     t0 + int(post.total_seconds()) + 1, 3600, dtype=np.int64)

    flow_track = []
    for t in grid:
        v = hourly.value_at(int(t))
        if v is None:
            raise InsufficientCoverage(f"no net inflow at {format_timestamp(t)}")
        flow_track.append((to_datetime(t), v))

    # Hourly close of the hour starting at t = close of the last bar in [t, t+1h).
    f_s = int(bars.frequency.total_seconds())
    if 3600 % f_s != 0:
        raise FrequencyMismatch(f"bar frequency {bars.frequency} does not divide 1h")
    price_track = []
    for t in grid:
        want = int(t) + 3600 - f_s
        i = np.searchsorted(bars.timestamps, want)
        if i >= len(bars.timestamps) or bars.timestamps[i] != want:
            raise InsufficientCoverage(f"no bar closing the hour at {format_timestamp(t)}")
        price_track.append((to_datetime(t), float(bars.close[i])))

    return CaseWindow(event=event, pre=pre, post=post,
                      flow_track=flow_track, price_track=price_track)


def events_to_csv(hits: list[EventHit]) -> str:
    buf = io.StringIO()
    buf.write(",".join(EVENTS_HEADER) + "\n")
    for h in hits:
        buf.write(f"{h.asset.value},{format_timestamp(h.timestamp.timestamp())},"
                  f"{format_number(h.net_inflow_musd)},{h.year},{h.rank_in_year}\n")
    return buf.getvalue()


def window_track_csvs(window: CaseWindow) -> tuple[str, str]:
    """(flow track CSV, price track CSV) for external plotting."""
    flows = io.StringIO()
    flows.write("timestamp,net_inflow_musd\n")
    for t, v in window.flow_track:
        flows.write(f"{format_timestamp(t.timestamp())},{format_number(v)}\n")
    prices = io.StringIO()
    prices.write("timestamp,close\n")
    for t, v in window.price_track:
        prices.write(f"{format_timestamp(t.timestamp())},{format_number(v)}\n")
    return flows.getvalue(), prices.getvalue()
