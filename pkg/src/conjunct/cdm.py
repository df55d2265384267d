"""Conjunction data messages, events, and the risk semantics built on them.

Risks are always log10 collision probabilities. A value of -30 is the
"negligible" sentinel used by the operational tools and is kept as ordinary
data.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .exceptions import InvalidEvent, NoCdmBeforeCutoff, NonFinite, NoRisk

HIGH_RISK_THRESHOLD = -6.0
RISK_SENTINEL = -30.0
DEFAULT_CUTOFF = 2.0

# Named numeric attributes promoted to first-class Cdm fields.
NUMERIC_FIELDS = (
    "time_to_tca",
    "risk",
    "t_span",
    "miss_distance",
    "max_risk_estimate",
    "max_risk_scaling",
    "mahalanobis_distance",
    "c_position_covariance_det",
    "c_obs_used",
    "relative_speed",
)
CATEGORICAL_FIELDS = ("mission_id", "c_object_type")


class RiskClass(enum.Enum):
    HIGH = "high"
    LOW = "low"

    @classmethod
    def of(cls, risk: float) -> "RiskClass":
        return cls.HIGH if risk >= HIGH_RISK_THRESHOLD else cls.LOW


def _copy(mapping):
    # private copy; a mappingproxy would not survive pickling to worker processes
    return dict(mapping or {})


@dataclass(frozen=True)
class Cdm:
    """One conjunction data message.

    Optional attributes are ``None`` when absent; nothing is imputed here.
    ``features`` holds every other numeric attribute by name.
    """

    time_to_tca: float
    risk: Optional[float] = None
    mission_id: Optional[str] = None
    c_object_type: Optional[str] = None
    t_span: Optional[float] = None
    miss_distance: Optional[float] = None
    max_risk_estimate: Optional[float] = None
    max_risk_scaling: Optional[float] = None
    mahalanobis_distance: Optional[float] = None
    c_position_covariance_det: Optional[float] = None
    c_obs_used: Optional[float] = None
    relative_speed: Optional[float] = None
    features: Mapping[str, Optional[float]] = field(default_factory=dict)
    creation_epoch: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "features", _copy(self.features))
        if not self.time_to_tca >= 0:
            raise InvalidEvent(f"time_to_tca must be >= 0, got {self.time_to_tca}")
        if self.risk is not None and not (RISK_SENTINEL <= self.risk <= 0):
            raise InvalidEvent(f"risk must lie in [-30, 0], got {self.risk}")
        for name in ("miss_distance", "relative_speed", "t_span"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise InvalidEvent(f"{name} must be >= 0, got {value}")

    def get(self, name: str) -> Optional[float]:
        """Look up a named attribute or a generic feature; ``None`` if absent."""
        if name in NUMERIC_FIELDS or name in CATEGORICAL_FIELDS:
            return getattr(self, name)
        return self.features.get(name)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in NUMERIC_FIELDS + CATEGORICAL_FIELDS}
        out["features"] = dict(self.features)
        if self.creation_epoch is not None:
            out["creation_epoch"] = self.creation_epoch
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Cdm":
        return cls(**data)


@dataclass(frozen=True)
class Event:
    """The CDM time series of one close approach, newest CDM last."""

    event_id: str
    cdms: Sequence[Cdm]
    manoeuvre_epoch: Optional[float] = None
    tca_epoch: Optional[float] = None

    def __post_init__(self):
        cdms = tuple(self.cdms)
        object.__setattr__(self, "cdms", cdms)
        if not cdms:
            raise InvalidEvent(f"event {self.event_id!r} has no CDMs")
        if self.tca_epoch is None:
            key, label = (lambda c: -c.time_to_tca), "time_to_tca must strictly decrease"
        else:
            # absolute timestamps: time_to_tca is recomputed by anonymize()
            if any(c.creation_epoch is None for c in cdms):
                raise InvalidEvent(f"event {self.event_id!r}: tca_epoch set but a CDM lacks creation_epoch")
            key, label = (lambda c: c.creation_epoch), "creation_epoch must strictly increase"
        for before, after in zip(cdms, cdms[1:]):
            if not key(before) < key(after):
                raise InvalidEvent(f"event {self.event_id!r}: {label}")
        missions = {c.mission_id for c in cdms}
        if len(missions) > 1:
            raise InvalidEvent(f"event {self.event_id!r} mixes missions {sorted(map(str, missions))}")

    @property
    def mission_id(self) -> Optional[str]:
        return self.cdms[0].mission_id

    @property
    def last(self) -> Cdm:
        return self.cdms[-1]

    def __len__(self):
        return len(self.cdms)

    def to_dict(self) -> dict:
        out = {"event_id": self.event_id, "cdms": [c.to_dict() for c in self.cdms]}
        if self.manoeuvre_epoch is not None:
            out["manoeuvre_epoch"] = self.manoeuvre_epoch
        if self.tca_epoch is not None:
            out["tca_epoch"] = self.tca_epoch
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Event":
        return cls(
            event_id=data["event_id"],
            cdms=[Cdm.from_dict(c) for c in data["cdms"]],
            manoeuvre_epoch=data.get("manoeuvre_epoch"),
            tca_epoch=data.get("tca_epoch"),
        )


def classify(risk: float) -> RiskClass:
    """High-risk iff ``risk >= -6`` (boundary included)."""
    if not math.isfinite(risk):
        raise NonFinite(f"risk must be finite, got {risk}")
    return RiskClass.of(risk)


def final_risk(event: Event) -> float:
    """Risk of the last CDM, i.e. the one closest to TCA.

    Raises:
        NoRisk: if no CDM of the event carries a risk.
    """
    if event.last.risk is not None:
        return event.last.risk
    if all(c.risk is None for c in event.cdms):
        raise NoRisk(f"event {event.event_id!r} has no risk values")
    raise NoRisk(f"event {event.event_id!r}: last CDM has no risk value")


def _before_cutoff(event: Event, cutoff: float) -> list[Cdm]:
    kept = [c for c in event.cdms if c.time_to_tca >= cutoff]
    if not kept:
        raise NoCdmBeforeCutoff(event.event_id, cutoff)
    return kept


def latest_cdm(event: Event, cutoff: float = DEFAULT_CUTOFF) -> Cdm:
    """Most recent CDM issued at least ``cutoff`` days before TCA."""
    return _before_cutoff(event, cutoff)[-1]


def latest_known_risk(event: Event, cutoff: float = DEFAULT_CUTOFF) -> float:
    """The latest risk an operator knows ``cutoff`` days before TCA.

    With the default cutoff of two days this is the r_{-2} of the baselines.
    """
    cdm = latest_cdm(event, cutoff)
    if cdm.risk is None:
        raise NoRisk(f"event {event.event_id!r}: CDM at {cdm.time_to_tca}d has no risk")
    return cdm.risk


def derived_series_features(event: Event, cutoff: float = DEFAULT_CUTOFF) -> dict:
    """Count, mean and population std of risks of CDMs at or before the cutoff.

    CDMs without a risk value are counted but excluded from the moments.
    """
    kept = _before_cutoff(event, cutoff)
    risks = [c.risk for c in kept if c.risk is not None]
    if risks:
        mean = math.fsum(risks) / len(risks)
        std = math.sqrt(math.fsum((r - mean) ** 2 for r in risks) / len(risks))
    else:
        mean = std = math.nan
    return {"number_CDMs": len(kept), "mean_risk_CDMs": mean, "std_risk_CDMs": std}
