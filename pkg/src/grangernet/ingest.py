"""Parsing and classification of raw event logs and socio-economic tables.

Canonical input is CSV with ISO-8601 dates. Event log columns:
``date,latitude,longitude,category,count``. SES table columns:
``region_id,crowded_pct,poverty_pct,unemployed_pct,income_pc,hardship``.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

EVENT_HEADER = ["date", "latitude", "longitude", "category", "count"]
SES_HEADER = ["region_id", "crowded_pct", "poverty_pct", "unemployed_pct",
              "income_pc", "hardship"]

SCHEMAS = ("crime", "terror")

# Event classes. Crime schema: violent / property crime streams plus a
# separate arrests stream derived from per-event arrest counts. Terror
# schema is the analogous triple.
VIOLENT = "violent"
PROPERTY = "property"
ARRESTS = "arrests"
ANTI_INFRA = "anti_infrastructure"
ANTI_PERSONNEL = "anti_personnel"
CASUALTIES = "casualties"

IGNORED = "ignored"


class IngestError(Exception):
    """Raised for unrecoverable problems with an input file."""


class UnknownCategoryError(IngestError):
    """Raised when the data contains categories absent from the class map."""

    def __init__(self, categories):
        self.categories = sorted(categories)
        super().__init__(
            "categories present in data but absent from class map: "
            + ", ".join(self.categories)
        )


@dataclass(frozen=True)
class RawEvent:
    date: dt.date
    latitude: float
    longitude: float
    category: str
    count: int  # arrests (crime schema) or casualties (terror schema)


@dataclass(frozen=True)
class ClassifiedEvent:
    date: dt.date
    latitude: float
    longitude: float
    category: str
    cls: str


@dataclass(frozen=True)
class SesRecord:
    region_id: str
    crowded_pct: float
    poverty_pct: float
    unemployed_pct: float
    income_pc: float
    hardship: float


@dataclass(frozen=True)
class EventClassMap:
    """Maps raw category strings onto event classes.

    ``mapping`` values are class names or ``"ignored"``; ``count_class`` is
    the class emitted for the per-event count column when it is positive.
    """

    mapping: dict
    count_class: str

    def with_extra(self, extra: dict) -> "EventClassMap":
        merged = dict(self.mapping)
        merged.update(extra)
        return EventClassMap(mapping=merged, count_class=self.count_class)


# Default maps cover the named categories only; callers extend via
# ``with_extra`` for other data sources.
CRIME_CLASS_MAP = EventClassMap(
    mapping={
        "HOMICIDE": VIOLENT,
        "ASSAULT": VIOLENT,
        "BATTERY": VIOLENT,
        "BURGLARY": PROPERTY,
        "THEFT": PROPERTY,
        "MOTOR VEHICLE THEFT": PROPERTY,
    },
    count_class=ARRESTS,
)

TERROR_CLASS_MAP = EventClassMap(
    mapping={
        "BOMBING/EXPLOSION": ANTI_INFRA,
        "FACILITY/INFRASTRUCTURE ATTACK": ANTI_INFRA,
        "ARMED ASSAULT": ANTI_PERSONNEL,
        "HOSTAGE TAKING (KIDNAPPING)": ANTI_PERSONNEL,
        "HOSTAGE TAKING (BARRICADE INCIDENT)": ANTI_PERSONNEL,
        "HIJACKING": ANTI_PERSONNEL,
        "ASSASSINATION": ANTI_PERSONNEL,
    },
    count_class=CASUALTIES,
)


def default_class_map(schema: str) -> EventClassMap:
    if schema == "crime":
        return CRIME_CLASS_MAP
    if schema == "terror":
        return TERROR_CLASS_MAP
    raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")


@dataclass
class ParseResult:
    events: list
    malformed: int
    total_rows: int


def _parse_row(row) -> RawEvent:
    if len(row) != 5:
        raise ValueError("wrong field count")
    date = dt.date.fromisoformat(row[0].strip())
    lat = float(row[1])
    lon = float(row[2])
    category = row[3].strip()
    count = int(row[4])
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError("coordinates out of range")
    if lat == 0.0 and lon == 0.0:
        # (0,0) is a common sentinel for missing geocoding in municipal data
        raise ValueError("null island coordinates")
    if count < 0:
        raise ValueError("negative count")
    if not category:
        raise ValueError("empty category")
    return RawEvent(date, lat, lon, category, count)


def parse_event_log(path, schema: str, max_malformed_fraction: float = 0.10) -> ParseResult:
    """Parse an event-log CSV into RawEvent records.

    Malformed rows are counted and reported in the result; more than
    ``max_malformed_fraction`` malformed rows aborts with a diagnostic.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    events = []
    malformed = 0
    total = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, missing header")
        if [h.strip() for h in header] != EVENT_HEADER:
            raise IngestError(
                f"{path}: header {header!r} does not match expected {EVENT_HEADER!r}"
            )
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            total += 1
            try:
                events.append(_parse_row(row))
            except (ValueError, IndexError):
                malformed += 1
    if total > 0 and malformed / total > max_malformed_fraction:
        raise IngestError(
            f"{path}: {malformed}/{total} malformed rows exceeds "
            f"{max_malformed_fraction:.0%} limit"
        )
    return ParseResult(events=events, malformed=malformed, total_rows=total)


def classify_events(events, class_map: EventClassMap):
    """Assign each event to a class; emit count-class records separately.

    Returns ``(classified, ignored_count)``. Events whose category maps to
    ``"ignored"`` are excluded. An event with a positive count column
    additionally yields one record of the map's count class (arrests or
    casualties are modeled as their own stream, not as weights).
    """
    unknown = {e.category for e in events if e.category not in class_map.mapping}
    if unknown:
        raise UnknownCategoryError(unknown)

    classified = []
    ignored = 0
    for e in events:
        cls = class_map.mapping[e.category]
        if cls == IGNORED:
            ignored += 1
            continue
        classified.append(ClassifiedEvent(e.date, e.latitude, e.longitude, e.category, cls))
        if e.count > 0:
            classified.append(
                ClassifiedEvent(e.date, e.latitude, e.longitude, e.category,
                                class_map.count_class)
            )
    return classified, ignored


def write_event_log(path, events) -> None:
    """Write RawEvents back to canonical CSV (round-trips with parse)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_HEADER)
        for e in events:
            writer.writerow([e.date.isoformat(), repr(e.latitude), repr(e.longitude),
                             e.category, e.count])


def load_ses(path):
    """Parse the SES table CSV into SesRecord rows."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SES_HEADER:
            raise IngestError(f"{path}: header does not match {SES_HEADER!r}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rec = SesRecord(
                region_id=row[0].strip(),
                crowded_pct=float(row[1]),
                poverty_pct=float(row[2]),
                unemployed_pct=float(row[3]),
                income_pc=float(row[4]),
                hardship=float(row[5]),
            )
            for pct in (rec.crowded_pct, rec.poverty_pct, rec.unemployed_pct):
                if not (0.0 <= pct <= 100.0):
                    raise IngestError(f"{path}: percentage out of [0,100] in {row!r}")
            if not (1.0 <= rec.hardship <= 100.0):
                raise IngestError(f"{path}: hardship index out of [1,100] in {row!r}")
            records.append(rec)
    return records
