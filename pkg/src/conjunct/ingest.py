"""Reading CDM records and assembling the event database.

Two input paths exist: the tabular CSV export (one CDM per row, the
canonical interchange format) and line-oriented ``KEY = VALUE [unit]`` text
messages. Both produce :class:`~conjunct.cdm.Event` objects, which can then
be filtered by :func:`assemble_database` and persisted with
:func:`save_events`.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
import os
import random
import re
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .cdm import CATEGORICAL_FIELDS, NUMERIC_FIELDS, Cdm, Event
from .exceptions import (
    DuplicateTimestamp,
    InvalidEvent,
    KvnSyntaxError,
    MissingRequired,
    ParseError,
    SchemaError,
    UnitMismatch,
)

EVENTS_FORMAT = "conjunct-events"
EVENTS_FORMAT_VERSION = 1

# Feature names reported as the most relevant ones for near-term risk change.
RELEVANCE_FEATURES = (
    "risk",
    "max_risk_scaling",
    "mahalanobis_distance",
    "c_sigma_t",
    "max_risk_estimate",
    "c_sigma_rdot",
    "miss_distance",
    "c_position_covariance_det",
    "c_sigma_n",
    "time_to_tca",
    "c_sigma_r",
    "c_obs_used",
    "c_sigma_ndot",
    "relative_position_n",
    "c_recommended_od_span",
    "relative_position_r",
    "c_sedr",
    "SSN",
    "c_crdot_t",
    "relative_speed",
)


@dataclass(frozen=True)
class DatasetSchema:
    required: tuple = ("event_id", "time_to_tca", "mission_id", "risk")
    optional: tuple = tuple(
        c for c in dict.fromkeys(RELEVANCE_FEATURES + ("c_object_type", "t_span"))
        if c not in ("time_to_tca", "risk")
    )
    categorical: tuple = ("mission_id", "c_object_type")

    def __post_init__(self):
        declared = self.required + self.optional
        if len(set(declared)) != len(declared):
            raise SchemaError("duplicate column names in schema")
        if not set(self.categorical) <= set(declared):
            raise SchemaError("categorical columns must be declared")

    @property
    def columns(self) -> tuple:
        return self.required + tuple(c for c in self.optional if c not in self.required)


DEFAULT_SCHEMA = DatasetSchema()


@dataclass
class AssemblyReport:
    events_read: int = 0
    cdms_read: int = 0
    events_kept: int = 0
    cdms_kept: int = 0
    dropped_probability_floor: int = 0
    dropped_anomalous: int = 0
    dropped_after_manoeuvre: int = 0
    cdms_removed_pre_manoeuvre: int = 0

    @property
    def events_dropped(self) -> int:
        return self.dropped_probability_floor + self.dropped_anomalous + self.dropped_after_manoeuvre

    def to_dict(self) -> dict:
        return asdict(self)


# -- KVN ----------------------------------------------------------------------

_UNITLESS = frozenset()
# key -> (field name, accepted unit tokens); empty set means unitless
KVN_KEYS = {
    "EVENT_ID": ("event_id", None),
    "MISSION_ID": ("mission_id", None),
    "C_OBJECT_TYPE": ("c_object_type", None),
    "TIME_TO_TCA": ("time_to_tca", frozenset({"d", "day", "days"})),
    "RISK": ("risk", _UNITLESS),
    "T_SPAN": ("t_span", frozenset({"m"})),
    "MISS_DISTANCE": ("miss_distance", frozenset({"m"})),
    "MAX_RISK_ESTIMATE": ("max_risk_estimate", _UNITLESS),
    "MAX_RISK_SCALING": ("max_risk_scaling", _UNITLESS),
    "MAHALANOBIS_DISTANCE": ("mahalanobis_distance", _UNITLESS),
    "C_POSITION_COVARIANCE_DET": ("c_position_covariance_det", _UNITLESS),
    "C_OBS_USED": ("c_obs_used", _UNITLESS),
    "RELATIVE_SPEED": ("relative_speed", frozenset({"m/s"})),
}

_KVN_LINE = re.compile(r"^([A-Za-z][A-Za-z0-9_]*)\s*=\s*(.*?)\s*(?:\[([^\]]*)\])?\s*$")


def _parse_kvn_fields(text: str) -> dict:
    fields: dict = {}
    features: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.upper() == "COMMENT" or line.upper().startswith("COMMENT "):
            continue
        match = _KVN_LINE.match(line)
        if match is None or not match.group(2):
            raise KvnSyntaxError(line_no, raw)
        key, value, unit = match.group(1).upper(), match.group(2), match.group(3)
        unit = unit.strip() if unit is not None else None
        name, units = KVN_KEYS.get(key, (key.lower(), None))
        if units is not None and unit:
            if unit.lower() not in units:
                raise UnitMismatch(name, unit, sorted(units) or "unitless")
        if name in CATEGORICAL_FIELDS or name == "event_id":
            fields[name] = value
            continue
        try:
            number = float(value)
        except ValueError:
            raise KvnSyntaxError(line_no, raw) from None
        if name in NUMERIC_FIELDS:
            fields[name] = number
        else:
            features[name] = number
    fields["features"] = features
    return fields


def parse_kvn(text: str) -> Cdm:
    """Parse one ``KEY = VALUE [unit]`` message into a :class:`Cdm`.

    Keys are case-insensitive. Unknown numeric keys land in ``features``
    under their lower-cased name.

    Raises:
        KvnSyntaxError: malformed line or non-numeric value for a numeric key.
        UnitMismatch: unit token disagrees with the expected unit.
        MissingRequired: ``TIME_TO_TCA`` or ``RISK`` absent.
    """
    fields = _parse_kvn_fields(text)
    fields.pop("event_id", None)
    for key in ("time_to_tca", "risk"):
        if key not in fields:
            raise MissingRequired(key)
    return Cdm(**fields)


def read_kvn_dir(directory, pattern: str = "*.kvn") -> list[Event]:
    """Read every KVN file in a directory; each must carry an ``EVENT_ID``."""
    groups: dict = OrderedDict()
    for path in sorted(Path(directory).glob(pattern)):
        fields = _parse_kvn_fields(path.read_text(encoding="ascii"))
        event_id = fields.pop("event_id", None)
        if event_id is None:
            raise MissingRequired("event_id")
        for key in ("time_to_tca", "risk"):
            if key not in fields:
                raise MissingRequired(key)
        groups.setdefault(event_id, []).append(Cdm(**fields))
    return [_make_event(event_id, cdms) for event_id, cdms in groups.items()]


# -- CSV ----------------------------------------------------------------------


def _make_event(event_id, cdms) -> Event:
    cdms = sorted(cdms, key=lambda c: -c.time_to_tca)
    for before, after in zip(cdms, cdms[1:]):
        if before.time_to_tca == after.time_to_tca:
            raise DuplicateTimestamp(event_id, before.time_to_tca)
    return Event(event_id=event_id, cdms=cdms)


def _number(text, row, column) -> Optional[float]:
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, column, text) from None
    return None if math.isnan(value) else value


def read_dataset_csv(path, schema: DatasetSchema = DEFAULT_SCHEMA) -> list[Event]:
    """Load a CSV export, one CDM per row, into events.

    Columns outside the named CDM attributes are kept as generic numeric
    features. Events keep the order of their first row in the file.

    Raises:
        SchemaError: a required column is missing.
        ParseError: a numeric cell cannot be parsed.
        DuplicateTimestamp: two rows of one event share a time_to_tca.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _read_rows(csv.reader(fh), schema)


def _read_rows(reader, schema: DatasetSchema) -> list[Event]:
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty CSV: no header row") from None
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    missing = [c for c in schema.required if c not in header]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")
    categorical = set(schema.categorical) | {"event_id"}
    groups: dict = OrderedDict()
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(row_no, None, ",".join(row))
        fields: dict = {}
        features: dict = {}
        for column, text in zip(header, row):
            text = text.strip()
            if column in categorical:
                fields[column] = text or None
            elif column in NUMERIC_FIELDS:
                fields[column] = _number(text, row_no, column)
            else:
                features[column] = _number(text, row_no, column)
        event_id = fields.pop("event_id")
        if event_id is None:
            raise ParseError(row_no, "event_id", "")
        if fields.get("time_to_tca") is None:
            raise ParseError(row_no, "time_to_tca", "")
        try:
            cdm = Cdm(features=features, **fields)
        except InvalidEvent as exc:
            raise ParseError(row_no, None, str(exc)) from None
        groups.setdefault(event_id, []).append(cdm)
    return [_make_event(event_id, cdms) for event_id, cdms in groups.items()]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_dataset_csv(events: Iterable[Event], path) -> None:
    """Write events in the CSV layout read by :func:`read_dataset_csv`."""
    events = list(events)
    extra = sorted({k for e in events for c in e.cdms for k in c.features})
    header = ["event_id", *NUMERIC_FIELDS, *CATEGORICAL_FIELDS, *extra]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for event in events:
            for cdm in event.cdms:
                row = [event.event_id]
                row += [_format(getattr(cdm, n)) for n in NUMERIC_FIELDS + CATEGORICAL_FIELDS]
                row += [_format(cdm.features.get(k)) for k in extra]
                writer.writerow(row)


def read_manoeuvres(path) -> dict[str, float]:
    """CSV with columns ``event_id,manoeuvre_epoch`` (days to TCA)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"event_id", "manoeuvre_epoch"} <= set(reader.fieldnames):
            raise SchemaError("manoeuvre file needs event_id and manoeuvre_epoch columns")
        out = {}
        for row_no, row in enumerate(reader, start=2):
            value = _number(row["manoeuvre_epoch"].strip(), row_no, "manoeuvre_epoch")
            if value is not None:
                out[row["event_id"].strip()] = value
        return out


# -- database assembly ---------------------------------------------------------


def assemble_database(
    events: Iterable[Event],
    manoeuvres: Optional[Mapping[str, float]] = None,
    prob_floor: float = -15.0,
    speed_tolerance: float = 0.0,
) -> tuple[list[Event], AssemblyReport]:
    """Apply the database filters in order and report what each removed.

    1. Drop events whose largest ``max_risk_estimate`` is below ``prob_floor``.
       Events where the attribute is missing everywhere are kept.
    2. Drop events with any CDM whose ``relative_speed`` is within
       ``speed_tolerance`` of zero.
    3. For manoeuvred events, drop CDMs issued before the manoeuvre
       (``time_to_tca > epoch``) and the event itself if none remain.

    Each dropped event is counted under the first filter it fails.
    """
    manoeuvres = dict(manoeuvres or {})
    report = AssemblyReport()
    kept = []
    for event in events:
        report.events_read += 1
        report.cdms_read += len(event)
        estimates = [c.max_risk_estimate for c in event.cdms if c.max_risk_estimate is not None]
        if estimates and max(estimates) < prob_floor:
            report.dropped_probability_floor += 1
            continue
        if any(c.relative_speed is not None and abs(c.relative_speed) <= speed_tolerance for c in event.cdms):
            report.dropped_anomalous += 1
            continue
        epoch = manoeuvres.get(event.event_id, event.manoeuvre_epoch)
        if epoch is not None:
            survivors = [c for c in event.cdms if c.time_to_tca <= epoch]
            report.cdms_removed_pre_manoeuvre += len(event) - len(survivors)
            if not survivors:
                report.dropped_after_manoeuvre += 1
                continue
            event = Event(event.event_id, survivors, manoeuvre_epoch=epoch, tca_epoch=event.tca_epoch)
        report.events_kept += 1
        report.cdms_kept += len(event)
        kept.append(event)
    return kept, report


def anonymize(events: Iterable[Event], rng_seed: int) -> tuple[list[Event], dict[str, str]]:
    """Replace event ids with seeded random ones and absolute times with time to TCA.

    Returns the anonymized events and the ``original id -> new id`` mapping.
    """
    events = list(events)
    new_ids = list(range(len(events)))
    random.Random(rng_seed).shuffle(new_ids)
    mapping = {}
    out = []
    for event, new_id in zip(events, new_ids):
        mapping[event.event_id] = str(new_id)
        cdms = event.cdms
        if event.tca_epoch is not None:
            cdms = [
                Cdm(**{**c.to_dict(), "time_to_tca": event.tca_epoch - c.creation_epoch, "creation_epoch": None})
                for c in cdms
            ]
        out.append(Event(str(new_id), cdms, manoeuvre_epoch=event.manoeuvre_epoch))
    return out, mapping


# -- events.bin ----------------------------------------------------------------


def save_events(path, events: Iterable[Event], report: Optional[AssemblyReport] = None, metadata=None) -> None:
    """Persist events as gzip-compressed JSON (byte-stable for equal input)."""
    payload = {
        "format": EVENTS_FORMAT,
        "version": EVENTS_FORMAT_VERSION,
        "metadata": metadata or {},
        "report": report.to_dict() if report is not None else None,
        "events": [e.to_dict() for e in events],
    }
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    with open(path, "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(raw)


def load_events(path) -> list[Event]:
    with gzip.open(path, "rb") as gz:
        payload = json.load(io.TextIOWrapper(gz, encoding="utf-8"))
    if payload.get("format") != EVENTS_FORMAT:
        raise SchemaError(f"{path}: not an events file")
    if payload.get("version") != EVENTS_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported events file version {payload.get('version')}")
    return [Event.from_dict(e) for e in payload["events"]]


def read_official_dataset(path) -> dict[str, list[Event]]:
    """Load the released competition data.

    ``path`` is either one CSV or a directory holding ``train_data.csv`` and
    ``test_data.csv``. Ids are prefixed per file because both files number
    their events from zero.
    """
    path = Path(os.fspath(path))
    if path.is_file():
        return {"all": read_dataset_csv(path)}
    out = {}
    for name in ("train", "test"):
        events = read_dataset_csv(path / f"{name}_data.csv")
        out[name] = [Event(f"{name}:{e.event_id}", e.cdms) for e in events]
    return out
