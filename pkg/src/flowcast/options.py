"""Delta-hedged call trade accounting, cost model, and percentile backtests.

A trade pairs two quotes of the same instrument (strike, expiry). With
``P_call = option_price * index_price``:

    pnl_option     = P_call(entry) - P_call(exit)      (sell side; negated for buy)
    r_option       = pnl_option / P_call(entry)        (sell; buy = -sell)
    pnl_underlying = (index_exit - index_entry) * delta_hedge
    r_underlying   = (index_exit/index_entry - 1) * delta_hedge
    pnl_portfolio  = pnl_option + pnl_underlying
    r_portfolio    = r_option + r_underlying

Costs are charged against the entry index price at a fixed rate
premium + hedge*delta + half_spread + slippage; the net portfolio return
divides net PnL by the initial capital (0.3 + delta) * index, and a trade
wins when that return is positive.
"""

from __future__ import annotations

import io
import math
import logging
from dataclasses import dataclass, replace
from datetime import timedelta

import numpy as np

from .errors import InstrumentMismatch, InvalidConfig, NoMatchingQuotes, ZeroEntryPrice
from .ingest import OptionQuote, QuoteSeries, format_number
from .series import NetInflowSeries

logger = logging.getLogger(__name__)

SIDE_SELL = "sell_call"
SIDE_BUY = "buy_call"
LEG_TOP = "top"
LEG_BOTTOM = "bottom"

MARGIN_FACTOR = 0.3  # initial capital per trade is (0.3 + delta) * index

DEFAULT_ENTRY_TOLERANCE = timedelta(minutes=30)
REPORT_HEADER = ["bucket", "win_rate", "total_trades", "wtl", "r_avg_net", "r_total_net"]

WTL_COUNTS = "counts"
WTL_PNL = "pnl"


@dataclass(frozen=True)
class CostParams:
    premium_rate: float = 0.0003
    hedge_rate: float = 0.0005    # applied per unit of hedge delta
    half_spread: float = 0.0005   # half of a 0.1% bid-ask spread
    slippage: float = 0.0

    def rate(self, delta: float) -> float:
        return (self.premium_rate + self.hedge_rate * delta
                + self.half_spread + self.slippage)


ZERO_COSTS = CostParams(premium_rate=0.0, hedge_rate=0.0, half_spread=0.0, slippage=0.0)


@dataclass(frozen=True)
class TradeOutcome:
    entry: OptionQuote
    exit: OptionQuote
    side: str
    delta_hedge: float
    pnl_option: float
    pnl_underlying: float
    pnl_portfolio: float
    pnl_net: float
    r_option: float
    r_underlying: float
    r_portfolio: float
    r_portfolio_net: float
    win: bool


def call_price(q: OptionQuote) -> float:
    """Premium in USD: option price (in underlying units) times index price."""
    return q.option_price * q.index_price


def otm_range(strike: float, index: float) -> float:
    """Signed fractional moneyness (strike - index) / index."""
    if index <= 0:
        raise InvalidConfig(f"index price must be positive, got {index}")
    return (strike - index) / index


def initial_capital(delta: float, index: float) -> float:
    """Capital posted per trade: (0.3 + delta) * index."""
    if index <= 0:
        raise InvalidConfig(f"index price must be positive, got {index}")
    return (MARGIN_FACTOR + delta) * index


def trade(entry: OptionQuote, exit: OptionQuote, side: str,
          delta_hedge: float | None = None,
          costs: CostParams | None = None) -> TradeOutcome:
    """Account one round trip between two quotes of the same instrument.

    ``delta_hedge`` defaults to the entry quote's delta. ``costs`` default
    to zero, in which case the net fields equal the gross ones.
    """
    if side not in (SIDE_SELL, SIDE_BUY):
        raise InvalidConfig(f"side must be {SIDE_SELL} or {SIDE_BUY}, got {side!r}")
    if entry.instrument != exit.instrument:
        raise InstrumentMismatch(
            f"entry {entry.instrument} vs exit {exit.instrument}")
    if exit.quote_time <= entry.quote_time:
        raise InstrumentMismatch("exit quote must be strictly after entry quote")
    p_entry = call_price(entry)
    if p_entry <= 0:
        raise ZeroEntryPrice("entry call price must be positive")
    delta = entry.delta if delta_hedge is None else delta_hedge

    pnl_sell = p_entry - call_price(exit)
    r_sell = pnl_sell / p_entry
    pnl_option = pnl_sell if side == SIDE_SELL else -pnl_sell
    r_option = r_sell if side == SIDE_SELL else -r_sell

    index_move = exit.index_price - entry.index_price
    pnl_underlying = index_move * delta
    r_underlying = (index_move / entry.index_price) * delta

    pnl_portfolio = pnl_option + pnl_underlying
    r_portfolio = r_option + r_underlying

    c = ZERO_COSTS if costs is None else costs
    pnl_net = pnl_portfolio - c.rate(delta) * entry.index_price
    r_portfolio_net = pnl_net / initial_capital(delta, entry.index_price)
    return TradeOutcome(entry=entry, exit=exit, side=side, delta_hedge=delta,
                        pnl_option=pnl_option, pnl_underlying=pnl_underlying,
                        pnl_portfolio=pnl_portfolio, pnl_net=pnl_net,
                        r_option=r_option, r_underlying=r_underlying,
                        r_portfolio=r_portfolio, r_portfolio_net=r_portfolio_net,
                        win=r_portfolio_net > 0)


def net_pnl(t: TradeOutcome, c: CostParams) -> float:
    """Net PnL under cost parameters c, from the trade's gross PnL."""
    return t.pnl_portfolio - c.rate(t.delta_hedge) * t.entry.index_price


def apply_costs(t: TradeOutcome, c: CostParams) -> TradeOutcome:
    """Re-derive the net fields of a trade under different cost parameters."""
    pnl = net_pnl(t, c)
    r_net = pnl / initial_capital(t.delta_hedge, t.entry.index_price)
    return replace(t, pnl_net=pnl, r_portfolio_net=r_net, win=r_net > 0)


def breakeven_slippage(t: TradeOutcome, c: CostParams) -> float:
    """Slippage that drives the trade's net PnL to exactly zero."""
    index = t.entry.index_price
    if index <= 0:
        raise InvalidConfig("entry index price must be positive")
    base = c.premium_rate + c.hedge_rate * t.delta_hedge + c.half_spread
    return t.pnl_portfolio / index - base


# ---------------------------------------------------------------------------
# Buckets and aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BucketKey:
    """Conjunctive trade filters for one report row.

    ``leg``/``pct`` label which percentile selection the trades came from;
    IV bounds are closed below and open above; the OTM interval is
    half-open [otm_lo, otm_hi).
    """

    leg: str
    pct: float
    iv_min: float | None = None
    iv_max: float | None = None
    otm_lo: float | None = None
    otm_hi: float | None = None

    def matches(self, t: TradeOutcome) -> bool:
        if self.iv_min is not None and not t.entry.implied_vol >= self.iv_min:
            return False
        if self.iv_max is not None and not t.entry.implied_vol < self.iv_max:
            return False
        if self.otm_lo is not None or self.otm_hi is not None:
            m = otm_range(t.entry.strike, t.entry.index_price)
            if self.otm_lo is not None and not m >= self.otm_lo:
                return False
            if self.otm_hi is not None and not m < self.otm_hi:
                return False
        return True

    def label(self) -> str:
        parts = [f"{self.leg}{format_number(self.pct * 100).rstrip('0').rstrip('.')}%"]
        if self.iv_min is not None:
            parts.append(f"iv>={format_number(self.iv_min)}")
        if self.iv_max is not None:
            parts.append(f"iv<{format_number(self.iv_max)}")
        if self.otm_lo is not None or self.otm_hi is not None:
            lo = "" if self.otm_lo is None else f"{self.otm_lo * 100:g}%<="
            hi = "" if self.otm_hi is None else f"<{self.otm_hi * 100:g}%"
            parts.append(f"{lo}otm{hi}")
        if len(parts) == 1:
            parts.append("original")
        return ",".join(parts)


@dataclass(frozen=True)
class BucketStats:
    win_rate: float | None
    total_trades: int
    wtl: float | None
    r_avg_net: float | None
    r_total_net: float


DEFAULT_OTM_EDGES = ((None, 0.01), (0.01, 0.03), (0.03, 0.05), (0.05, 0.10))


def table_buckets(leg: str, pct: float,
                  iv_thresholds: tuple[float, ...] = (1.0, 2.0),
                  otm_edges: tuple = DEFAULT_OTM_EDGES) -> list[BucketKey]:
    """The standard report rows: original, IV floors, OTM bands, and combos."""
    buckets = [BucketKey(leg, pct)]
    for iv in iv_thresholds:
        buckets.append(BucketKey(leg, pct, iv_min=iv))
    for lo, hi in otm_edges:
        buckets.append(BucketKey(leg, pct, otm_lo=lo, otm_hi=hi))
    for iv in iv_thresholds:
        for lo, hi in otm_edges:
            buckets.append(BucketKey(leg, pct, iv_min=iv, otm_lo=lo, otm_hi=hi))
    return buckets


def bucket_stats(trades: list[TradeOutcome], key: BucketKey,
                 wtl_mode: str = WTL_COUNTS) -> BucketStats:
    """Win rate, win-to-loss ratio, and net-return aggregates for one bucket.

    WtL is the win/loss *count* ratio by default; ``wtl_mode="pnl"`` uses
    the ratio of summed winning to summed losing net returns instead.
    Undefined ratios (no trades, or no losses) are reported as None.
    """
    selected = [t for t in trades if key.matches(t)]
    total = len(selected)
    if total == 0:
        return BucketStats(win_rate=None, total_trades=0, wtl=None,
                           r_avg_net=None, r_total_net=0.0)
    wins = [t for t in selected if t.win]
    losses = [t for t in selected if not t.win]
    if wtl_mode == WTL_COUNTS:
        wtl = len(wins) / len(losses) if losses else None
    elif wtl_mode == WTL_PNL:
        loss_sum = abs(math.fsum(t.r_portfolio_net for t in losses))
        wtl = (math.fsum(t.r_portfolio_net for t in wins) / loss_sum
               if loss_sum > 0 else None)
    else:
        raise InvalidConfig(f"wtl_mode must be '{WTL_COUNTS}' or '{WTL_PNL}'")
    # fsum is exactly rounded, so the stats cannot depend on trade order
    total_net = math.fsum(t.r_portfolio_net for t in selected)
    return BucketStats(win_rate=len(wins) / total, total_trades=total, wtl=wtl,
                       r_avg_net=total_net / total, r_total_net=total_net)


# ---------------------------------------------------------------------------
# Percentile backtest
# ---------------------------------------------------------------------------

@dataclass
class BacktestDiagnostics:
    events: int = 0
    trades: int = 0
    unmatched_entries: int = 0
    unmatched_exits: int = 0
    zero_price_skips: int = 0


class _QuoteBook:
    """Per-instrument quote index for entry/exit lookup."""

    def __init__(self, quotes: QuoteSeries):
        self.by_instrument: dict[tuple[float, int], tuple[np.ndarray, np.ndarray]] = {}
        keys = list(zip(quotes.strikes.tolist(), quotes.expiries.tolist()))
        order: dict[tuple[float, int], list[int]] = {}
        for i, key in enumerate(keys):
            order.setdefault(key, []).append(i)
        for key, idx in order.items():
            idx_arr = np.asarray(idx, dtype=np.int64)
            times = quotes.quote_times[idx_arr]  # already time-sorted
            self.by_instrument[key] = (times, idx_arr)
        self.quotes = quotes

    def instruments(self) -> list[tuple[float, int]]:
        return sorted(self.by_instrument)

    def first_at_or_after(self, key, epoch: int, tolerance_s: int) -> OptionQuote | None:
        times, idx = self.by_instrument[key]
        i = int(np.searchsorted(times, epoch))
        if i >= len(times) or times[i] > epoch + tolerance_s:
            return None
        return self.quotes[int(idx[i])]


def select_percentile_hours(net_series: NetInflowSeries, pct: float,
                            leg: str) -> np.ndarray:
    """Timestamps whose net inflow lies in the requested percentile leg."""
    if not 0.0 < pct <= 1.0:
        raise InvalidConfig(f"pct must be in (0, 1], got {pct}")
    if leg not in (LEG_TOP, LEG_BOTTOM):
        raise InvalidConfig(f"leg must be '{LEG_TOP}' or '{LEG_BOTTOM}', got {leg!r}")
    vals = net_series.values
    if len(vals) == 0:
        raise InvalidConfig("empty net inflow series")
    if leg == LEG_TOP:
        cutoff = np.quantile(vals, 1.0 - pct)
        mask = vals >= cutoff
    else:
        cutoff = np.quantile(vals, pct)
        mask = vals <= cutoff
    return net_series.timestamps[mask]


def run_percentile_backtest(net_series: NetInflowSeries, quotes: QuoteSeries,
                            pct: float, leg: str, side: str, costs: CostParams,
                            buckets: list[BucketKey],
                            holding: timedelta = timedelta(hours=1),
                            entry_tolerance: timedelta = DEFAULT_ENTRY_TOLERANCE,
                            wtl_mode: str = WTL_COUNTS,
                            ) -> tuple[dict[BucketKey, BucketStats], BacktestDiagnostics]:
    """Open one trade per instrument on each selected hour; aggregate by bucket.

    Entries take the first quote at or after the event hour within the
    tolerance; exits take the first quote at or after entry + holding,
    with the same tolerance. Events without a usable quote are skipped
    and counted in the diagnostics.
    """
    if len(quotes) == 0:
        raise NoMatchingQuotes("no option quotes supplied")
    book = _QuoteBook(quotes)
    tol_s = int(entry_tolerance.total_seconds())
    hold_s = int(holding.total_seconds())
    if hold_s <= 0:
        raise InvalidConfig("holding horizon must be positive")

    diag = BacktestDiagnostics()
    trades: list[TradeOutcome] = []
    for event_ts in select_percentile_hours(net_series, pct, leg):
        diag.events += 1
        for key in book.instruments():
            entry = book.first_at_or_after(key, int(event_ts), tol_s)
            if entry is None:
                diag.unmatched_entries += 1
                continue
            entry_epoch = int(entry.quote_time.timestamp())
            exit_q = book.first_at_or_after(key, entry_epoch + hold_s, tol_s)
            if exit_q is None or exit_q.quote_time <= entry.quote_time:
                diag.unmatched_exits += 1
                continue
            if call_price(entry) <= 0:
                diag.zero_price_skips += 1
                continue
            trades.append(trade(entry, exit_q, side, costs=costs))
    diag.trades = len(trades)
    if diag.events and not trades:
        logger.warning("percentile backtest produced no trades "
                       "(%d events, %d entry misses)", diag.events,
                       diag.unmatched_entries)
    stats = {key: bucket_stats(trades, key, wtl_mode=wtl_mode) for key in buckets}
    return stats, diag


def percentile_backtest(net_inflows: NetInflowSeries, quotes: QuoteSeries,
                        pct: float, leg: str, side: str, c: CostParams,
                        buckets: list[BucketKey],
                        holding: timedelta = timedelta(hours=1),
                        wtl_mode: str = WTL_COUNTS) -> dict[BucketKey, BucketStats]:
    stats, _ = run_percentile_backtest(net_inflows, quotes, pct, leg, side, c,
                                       buckets, holding=holding, wtl_mode=wtl_mode)
    return stats


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _fmt(value: float | None) -> str:
    return "N/A" if value is None else format_number(value)


def report_to_tsv(stats: dict[BucketKey, BucketStats]) -> str:
    buf = io.StringIO()
    buf.write("\t".join(REPORT_HEADER) + "\n")
    for key, s in stats.items():
        buf.write("\t".join([key.label(), _fmt(s.win_rate), str(s.total_trades),
                             _fmt(s.wtl), _fmt(s.r_avg_net),
                             format_number(s.r_total_net)]) + "\n")
    return buf.getvalue()
