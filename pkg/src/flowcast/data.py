"""Loading, validation, windowing, and synthesis of monthly migration series.

All values inside the package are expressed in hundreds of persons per
month; raw person counts appear only at the CSV boundary (divided by 100
on ingest, multiplied back on write).

CSV schema (UTF-8, comma-separated, header mandatory)::

    date,province,stream,count

with ``date`` as YYYY-MM, ``province`` one of the ten two-letter codes,
``stream`` one of Sponsor/Refugee/Economic/Total, and ``count`` in raw
persons.
"""

from __future__ import annotations

import configparser
import csv
import decimal
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, GapError, ParseError, RangeError

__all__ = [
    "Province",
    "Stream",
    "YearMonth",
    "MonthlySeries",
    "WindowSpec",
    "GeneratorConfig",
    "load_csv",
    "write_csv",
    "split_window",
    "standardize",
    "destandardize",
    "gen_synthetic",
    "default_generator_config",
    "bundled_dataset_path",
    "DEFAULT_SEED",
    "DEFAULT_MONTHS",
    "DEFAULT_START",
]

# seed of the bundled dataset; chosen so the shipped draw shows the
# designed structure cleanly (positive values, lag-12 seasonality in every
# component, naive-baseline MASE near 1 on Total)
DEFAULT_SEED = 106
DEFAULT_MONTHS = 96
TOTAL_SLACK = 0.5  # |Total - (S+R+E)| tolerance, in hundreds (50 persons)


class Province(Enum):
    """The ten provinces, ordered as conventionally listed west to east."""

    BC = "BC"
    AB = "AB"
    SK = "SK"
    MB = "MB"
    ON = "ON"
    QC = "QC"
    NL = "NL"
    NB = "NB"
    PE = "PE"
    NS = "NS"

    @classmethod
    def parse(cls, text: str) -> "Province":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ParseError(f"unknown province {text!r}") from None


class Stream(Enum):
    """Migration streams; Total aggregates the three component streams."""

    SPONSOR = "Sponsor"
    REFUGEE = "Refugee"
    ECONOMIC = "Economic"
    TOTAL = "Total"

    @classmethod
    def parse(cls, text: str) -> "Stream":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise ParseError(f"unknown stream {text!r}")


COMPONENT_STREAMS = (Stream.SPONSOR, Stream.REFUGEE, Stream.ECONOMIC)

_YM_RE = re.compile(r"^(\d{4})-(\d{2})$")


@dataclass(frozen=True, order=True)
class YearMonth:
    """A calendar month, with arithmetic in whole months."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be 1..12, got {self.month}")

    @property
    def index(self) -> int:
        return self.year * 12 + self.month - 1

    @classmethod
    def from_index(cls, idx: int) -> "YearMonth":
        return cls(idx // 12, idx % 12 + 1)

    @classmethod
    def parse(cls, text: str) -> "YearMonth":
        m = _YM_RE.match(text.strip())
        if not m:
            raise ParseError(f"date {text!r} is not in YYYY-MM form")
        try:
            return cls(int(m.group(1)), int(m.group(2)))
        except ValueError as exc:
            raise ParseError(str(exc)) from None

    def __add__(self, months: int) -> "YearMonth":
        return YearMonth.from_index(self.index + months)

    def __sub__(self, other) -> int:
        if isinstance(other, YearMonth):
            return self.index - other.index
        return NotImplemented

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


DEFAULT_START = YearMonth(2015, 1)


@dataclass(frozen=True)
class MonthlySeries:
    """One province x one stream as a contiguous monthly sequence.

    ``values`` are non-negative reals in hundreds of persons/month,
    starting at ``start`` with no gaps. Instances are immutable and safe
    to share across threads.
    """

    province: Province
    stream: Stream
    start: YearMonth
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("values must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(arr)):
            raise ValueError("values must be finite")
        if np.any(arr < 0):
            raise ValueError(
                f"series ({self.province.value}, {self.stream.value}) "
                "contains a negative value"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, MonthlySeries):
            return NotImplemented
        return (
            self.province is other.province
            and self.stream is other.stream
            and self.start == other.start
            and np.array_equal(self.values, other.values)
        )

    @property
    def end(self) -> YearMonth:
        """First month after the series (exclusive bound)."""
        return self.start + len(self)

    def month_at(self, i: int) -> YearMonth:
        return self.start + i

    def covers(self, first: YearMonth, last_exclusive: YearMonth) -> bool:
        return self.start <= first and last_exclusive <= self.end

    def window(self, first: YearMonth, last_exclusive: YearMonth) -> np.ndarray:
        """Values for [first, last_exclusive); raises RangeError if uncovered."""
        if not self.covers(first, last_exclusive):
            raise RangeError(
                f"series ({self.province.value}, {self.stream.value}) covers "
                f"[{self.start}, {self.end}) but [{first}, {last_exclusive}) "
                "was requested"
            )
        a = first - self.start
        b = last_exclusive - self.start
        return np.array(self.values[a:b])


@dataclass(frozen=True)
class WindowSpec:
    """Context/horizon sizes for a forecasting window."""

    context_years: int
    horizon_months: int = 12

    def __post_init__(self):
        if not 1 <= self.context_years <= 9:
            raise ConfigError(
                f"context_years must be in 1..9, got {self.context_years}"
            )
        if self.horizon_months < 1:
            raise ConfigError("horizon_months must be >= 1")

    @property
    def context_months(self) -> int:
        return 12 * self.context_years


def _sort_key(s: MonthlySeries):
    provinces = list(Province)
    streams = list(Stream)
    return (provinces.index(s.province), streams.index(s.stream))


def load_csv(path) -> list[MonthlySeries]:
    """Read the canonical CSV schema into a validated series list.

    Counts are divided by 100 (raw persons -> hundreds). Rows are grouped
    per (province, stream) and sorted by month; a missing interior month
    raises :class:`GapError`, an unknown province/stream or malformed row
    raises :class:`ParseError` with its line number, and a negative count
    raises ``ValueError``.
    """
    path = Path(path)
    rows: dict[tuple[Province, Stream], dict[int, float]] = {}
    row_lines: dict[tuple[Province, Stream, int], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty (header row required)") from None
        if [h.strip().lower() for h in header] != ["date", "province", "stream", "count"]:
            raise ParseError(
                "header must be 'date,province,stream,count', got "
                f"{','.join(header)!r}",
                line=1,
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
            try:
                ym = YearMonth.parse(row[0])
                province = Province.parse(row[1])
                stream = Stream.parse(row[2])
            except ParseError as exc:
                raise ParseError(str(exc), line=lineno) from None
            try:
                value = _parse_count(row[3])
            except (decimal.InvalidOperation, decimal.DecimalException):
                raise ParseError(f"count {row[3]!r} is not a number", line=lineno) from None
            if not math.isfinite(value):
                raise ParseError(f"count {row[3]!r} is not finite", line=lineno)
            if value < 0:
                raise ValueError(
                    f"line {lineno}: negative count {row[3]} for "
                    f"({province.value}, {stream.value}, {ym})"
                )
            key = (province, stream)
            per_month = rows.setdefault(key, {})
            if ym.index in per_month:
                raise ParseError(
                    f"duplicate month {ym} for ({province.value}, {stream.value})",
                    line=lineno,
                )
            per_month[ym.index] = value
            row_lines[(province, stream, ym.index)] = lineno

    series: list[MonthlySeries] = []
    for (province, stream), per_month in rows.items():
        indices = sorted(per_month)
        for prev, cur in zip(indices, indices[1:]):
            if cur != prev + 1:
                raise GapError(
                    province.value, stream.value, str(YearMonth.from_index(prev + 1))
                )
        values = np.array([per_month[i] for i in indices], dtype=np.float64)
        series.append(
            MonthlySeries(province, stream, YearMonth.from_index(indices[0]), values)
        )

    _check_total_consistency(series)
    series.sort(key=_sort_key)
    return series


def _check_total_consistency(series: list[MonthlySeries]) -> None:
    """Where Total and all three components overlap, enforce the sum identity."""
    by_key = {(s.province, s.stream): s for s in series}
    for province in Province:
        total = by_key.get((province, Stream.TOTAL))
        comps = [by_key.get((province, st)) for st in COMPONENT_STREAMS]
        if total is None or any(c is None for c in comps):
            continue
        first = max([total.start] + [c.start for c in comps])
        last = min([total.end] + [c.end for c in comps])
        if last - first <= 0:
            continue
        t = total.window(first, last)
        s = sum(c.window(first, last) for c in comps)
        bad = np.nonzero(np.abs(t - s) > TOTAL_SLACK + 1e-9)[0]
        if bad.size:
            month = first + int(bad[0])
            raise ValueError(
                f"({province.value}, {month}): Total {t[bad[0]]:.4f} differs from "
                f"component sum {s[bad[0]]:.4f} by more than {TOTAL_SLACK}"
            )


def write_csv(series: list[MonthlySeries], path) -> None:
    """Inverse of :func:`load_csv`; counts written back in raw persons."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "province", "stream", "count"])
        for s in sorted(series, key=_sort_key):
            for i, v in enumerate(s.values):
                writer.writerow(
                    [str(s.month_at(i)), s.province.value, s.stream.value, _person_text(float(v))]
                )


def _parse_count(text: str) -> float:
    """Raw persons -> hundreds with a single rounding step.

    Dividing in decimal (exact exponent shift) and converting to float
    once avoids the double rounding of float(text)/100, which cannot
    reach every representable value.
    """
    with decimal.localcontext() as ctx:
        ctx.prec = 1200
        return float(decimal.Decimal(text.strip()) / 100)


def _person_text(value: float) -> str:
    """Decimal person count that :func:`_parse_count` maps back to
    ``value`` exactly: an int when person-granular, otherwise the exact
    decimal expansion of value*100."""
    persons = value * 100.0
    if abs(persons - round(persons)) < 1e-9 and float(round(persons)) / 100.0 == value:
        return str(int(round(persons)))
    with decimal.localcontext() as ctx:
        ctx.prec = 1200
        exact = decimal.Decimal(value) * 100
        text = format(exact.normalize(), "f")
    if _parse_count(text) != value:
        raise ValueError(f"no decimal person count recovers {value!r}")
    return text


def split_window(
    series: MonthlySeries, spec: WindowSpec, split_month: YearMonth
) -> tuple[np.ndarray, np.ndarray]:
    """Split a series into (context, target) around ``split_month``.

    The context is the ``12 * context_years`` values ending the month
    before ``split_month``; the target is the ``horizon_months`` values
    starting at ``split_month``.
    """
    first = split_month + (-spec.context_months)
    last = split_month + spec.horizon_months
    if not series.covers(first, last):
        missing_lo = str(first) if series.start > first else str(series.end)
        missing_hi = str(series.start) if series.start > first else str(last)
        raise RangeError(
            f"series ({series.province.value}, {series.stream.value}) covers "
            f"[{series.start}, {series.end}) but the window needs "
            f"[{first}, {last}); missing span [{missing_lo}, {missing_hi})"
        )
    context = series.window(first, split_month)
    target = series.window(split_month, last)
    return context, target


def standardize(context) -> tuple[np.ndarray, float, float]:
    """Center/scale a context window: (x - mean) / max(population std, 1e-8)."""
    arr = np.asarray(context, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("context must be non-empty")
    loc = float(arr.mean())
    scale = max(float(arr.std()), 1e-8)
    return (arr - loc) / scale, loc, scale


def destandardize(scaled, loc: float, scale: float) -> np.ndarray:
    """Inverse of :func:`standardize`; recovers the input to 1e-9."""
    return np.asarray(scaled, dtype=np.float64) * scale + loc


# ---------------------------------------------------------------------------
# Synthetic data generation
# ---------------------------------------------------------------------------

# Per-stream defaults: seasonal amplitude / noise sd / linear trend, all as
# fractions of the province base level. Sponsor and Refugee run in
# anti-phase to Economic so their seasonal swings largely cancel in Total.
_STREAM_KEYS = {
    Stream.SPONSOR: "sponsor",
    Stream.REFUGEE: "refugee",
    Stream.ECONOMIC: "economic",
}


@dataclass(frozen=True)
class StreamShape:
    """Deterministic + stochastic shape of one generated component stream."""

    base: float
    amp_frac: float
    noise_frac: float
    trend_frac: float
    phase: float


@dataclass(frozen=True)
class GeneratorConfig:
    """Fixed per-province parameters driving :func:`gen_synthetic`.

    The packaged ``synthetic_params.ini`` documents every key; custom
    files with the same layout can be passed via the CLI ``--config``.
    """

    start: YearMonth
    shapes: dict[tuple[Province, Stream], StreamShape]

    @classmethod
    def from_file(cls, path) -> "GeneratorConfig":
        parser = configparser.ConfigParser()
        read = parser.read(Path(path))
        if not read:
            raise ConfigError(f"config file {path} not found or unreadable")
        return cls._from_parser(parser)

    @classmethod
    def _from_parser(cls, parser: configparser.ConfigParser) -> "GeneratorConfig":
        if "generator" not in parser:
            raise ConfigError("config is missing the [generator] section")
        gen = parser["generator"]
        try:
            start = YearMonth.parse(gen.get("start", str(DEFAULT_START)))
        except ParseError as exc:
            raise ConfigError(f"bad generator.start: {exc}") from None

        defaults = parser["defaults"] if "defaults" in parser else {}

        def get_float(section, key, fallback=None):
            if key in section:
                return float(section[key])
            if fallback is None:
                raise ConfigError(f"missing config key {key!r}")
            return float(fallback)

        shapes: dict[tuple[Province, Stream], StreamShape] = {}
        for province in Province:
            name = province.value
            if name not in parser:
                raise ConfigError(f"config is missing the [{name}] section")
            section = parser[name]
            phase = get_float(section, "phase", defaults.get("phase", 0.0))
            for stream, key in _STREAM_KEYS.items():
                base = get_float(section, f"{key}_base")
                amp = get_float(
                    section, f"{key}_amp_frac", defaults.get(f"{key}_amp_frac")
                )
                noise = get_float(
                    section, f"{key}_noise_frac", defaults.get(f"{key}_noise_frac")
                )
                trend = get_float(
                    section,
                    f"{key}_trend_frac",
                    defaults.get("trend_frac_per_month", 0.0),
                )
                offset = get_float(
                    section,
                    f"{key}_phase_offset",
                    defaults.get(f"{key}_phase_offset", 0.0),
                )
                if base <= 0 or noise < 0 or amp < 0:
                    raise ConfigError(
                        f"[{name}] {key}: base must be > 0, fractions >= 0"
                    )
                shapes[(province, stream)] = StreamShape(
                    base, amp, noise, trend, phase + offset
                )
        return cls(start=start, shapes=shapes)


def default_generator_config() -> GeneratorConfig:
    """The packaged parameter set used for the bundled dataset."""
    ref = resources.files("flowcast.data_files") / "synthetic_params.ini"
    parser = configparser.ConfigParser()
    parser.read_string(ref.read_text(encoding="utf-8"))
    return GeneratorConfig._from_parser(parser)


def bundled_dataset_path() -> Path:
    """Path of the shipped synthetic dataset CSV (96 months x 40 series)."""
    return Path(str(resources.files("flowcast.data_files") / "synthetic.csv"))


def gen_synthetic(
    seed: int = DEFAULT_SEED,
    months: int = DEFAULT_MONTHS,
    config: GeneratorConfig | None = None,
) -> list[MonthlySeries]:
    """Generate the deterministic synthetic dataset.

    Each component stream is ``base + trend*t + amp*sin(2*pi*t/12 + phase)
    + noise`` rounded to whole persons; Total is the exact elementwise sum
    of the three components. Identical (seed, months, config) triples give
    identical output.
    """
    if months < 24:
        raise ConfigError(f"months must be >= 24, got {months}")
    cfg = config or default_generator_config()
    rng = np.random.default_rng(seed)
    t = np.arange(months, dtype=np.float64)
    out: list[MonthlySeries] = []
    for province in Province:
        persons: dict[Stream, np.ndarray] = {}
        for stream in COMPONENT_STREAMS:
            shape = cfg.shapes[(province, stream)]
            values = (
                shape.base
                + shape.trend_frac * shape.base * t
                + shape.amp_frac * shape.base * np.sin(2.0 * np.pi * t / 12.0 + shape.phase)
                + rng.normal(0.0, shape.noise_frac * shape.base, months)
            )
            # person granularity keeps the CSV boundary exact; summing in
            # person space keeps Total equal to the component sum exactly
            persons[stream] = np.maximum(np.round(values * 100.0), 0.0)
            out.append(MonthlySeries(province, stream, cfg.start, persons[stream] / 100.0))
        total = persons[Stream.SPONSOR] + persons[Stream.REFUGEE] + persons[Stream.ECONOMIC]
        out.append(MonthlySeries(province, Stream.TOTAL, cfg.start, total / 100.0))
    out.sort(key=_sort_key)
    return out
