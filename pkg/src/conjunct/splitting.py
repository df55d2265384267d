"""Test-set eligibility, cropping, visible subsets and stratified splits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .cdm import DEFAULT_CUTOFF, Event, RiskClass, final_risk
from .exceptions import DegenerateSplit, EmptyClassWarning, NotEligible

TEST_SIZE_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
VISIBLE_GRID = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class EligibilityRule:
    min_cdms: int = 2
    last_cdm_max_tca: float = 1.0
    first_cdm_min_tca: float = 2.0
    crop_below: float = DEFAULT_CUTOFF

    def __post_init__(self):
        if self.min_cdms < 2:
            raise ValueError("min_cdms must be at least 2")
        if self.crop_below < self.last_cdm_max_tca:
            raise ValueError("crop_below must not be smaller than last_cdm_max_tca")


DEFAULT_RULE = EligibilityRule()


@dataclass(frozen=True)
class DataSplit:
    train: tuple
    test: tuple
    seed: Optional[int] = None
    provenance: str = ""
    test_size: Optional[float] = None
    visible: Optional[tuple] = None

    def __post_init__(self):
        for name in ("train", "test", "visible"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if set(self.train) & set(self.test):
            raise ValueError("train and test overlap")
        if self.visible is not None and not set(self.visible) <= set(self.test):
            raise ValueError("visible ids must be a subset of test ids")

    @property
    def hold_out(self) -> tuple:
        if self.visible is None:
            return ()
        visible = set(self.visible)
        return tuple(i for i in self.test if i not in visible)

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "test": list(self.test),
            "visible": None if self.visible is None else list(self.visible),
            "seed": self.seed,
            "test_size": self.test_size,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data) -> "DataSplit":
        return cls(
            train=data["train"],
            test=data["test"],
            visible=data.get("visible"),
            seed=data.get("seed"),
            test_size=data.get("test_size"),
            provenance=data.get("provenance", ""),
        )


@dataclass(frozen=True)
class CroppedEvent:
    """An eligible event as a test set presents it: inputs plus held-back target."""

    event_id: str
    inputs: tuple
    target_risk: float
    source: Event = field(repr=False, compare=False, default=None)

    def as_event(self) -> Event:
        """The inputs alone, as an event a predictor can consume."""
        return Event(self.event_id, self.inputs)


def is_eligible(event: Event, rule: EligibilityRule = DEFAULT_RULE) -> bool:
    """Whether an event may enter the test set.

    Needs enough CDMs, a last CDM close to TCA, and a first CDM early enough
    that something is left once CDMs close to TCA are cropped.
    """
    cdms = event.cdms
    if len(cdms) < rule.min_cdms:
        return False
    if not cdms[-1].time_to_tca < rule.last_cdm_max_tca:
        return False
    if not cdms[0].time_to_tca >= rule.first_cdm_min_tca:
        return False
    return any(c.time_to_tca >= rule.crop_below for c in cdms)


def crop_for_test(event: Event, rule: EligibilityRule = DEFAULT_RULE) -> CroppedEvent:
    if not is_eligible(event, rule):
        raise NotEligible(f"event {event.event_id!r} is not eligible for the test set")
    inputs = tuple(c for c in event.cdms if c.time_to_tca >= rule.crop_below)
    return CroppedEvent(event.event_id, inputs, final_risk(event), source=event)


def _class_of(event: Event) -> RiskClass:
    return RiskClass.of(final_risk(event))


def _round_half_away(x: float) -> int:
    # tolerance absorbs products like 0.35 * 10 = 3.4999999999999996
    return int(math.floor(abs(x) + 0.5 + 1e-9)) * (1 if x >= 0 else -1)


def sample_visible(
    test_events: Sequence[Event], p_high: float = 0.9, p_low: float = 0.9, seed: int = 0
) -> frozenset:
    """Draw the visible part of a test set, class by class.

    ``ceil(p * n)`` events of each class are sampled without replacement.
    A class with no events yields nothing for that class and an
    :class:`EmptyClassWarning`.
    """
    for p in (p_high, p_low):
        if not 0 < p <= 1:
            raise ValueError(f"sampling proportions must lie in (0, 1], got {p}")
    rng = np.random.default_rng(seed)
    chosen = []
    for cls, p in ((RiskClass.HIGH, p_high), (RiskClass.LOW, p_low)):
        ids = [e.event_id for e in test_events if _class_of(e) is cls]
        if not ids:
            warnings.warn(f"no {cls.value}-risk events to sample from", EmptyClassWarning, stacklevel=2)
            continue
        n = math.ceil(p * len(ids) - 1e-9)
        picked = rng.choice(len(ids), size=n, replace=False)
        chosen.extend(ids[i] for i in picked)
    return frozenset(chosen)


def stratified_shuffle_split(
    events: Sequence[Event], test_size: float, seed: int = 0, stratify_missions: bool = False
) -> DataSplit:
    """Random train/test partition preserving the high-risk proportion.

    Each stratum (risk class, optionally crossed with mission) contributes
    ``round(test_size * n)`` events to the test set, rounding half away from
    zero; the largest stratum absorbs any difference to
    ``round(test_size * N)``.

    Raises:
        DegenerateSplit: either side would be empty.
    """
    if not 0 < test_size < 1:
        raise DegenerateSplit(f"test_size must lie in (0, 1), got {test_size}")
    strata: dict = {}
    for event in events:
        key = (_class_of(event).value, event.mission_id if stratify_missions else None)
        strata.setdefault(key, []).append(event.event_id)
    keys = sorted(strata, key=lambda k: (k[0], str(k[1])))
    counts = {k: _round_half_away(test_size * len(strata[k])) for k in keys}
    n_total = sum(len(v) for v in strata.values())
    target = _round_half_away(test_size * n_total)
    if keys and sum(counts.values()) != target:
        largest = max(keys, key=lambda k: len(strata[k]))
        counts[largest] = min(len(strata[largest]), max(0, counts[largest] + target - sum(counts.values())))
    n_test = sum(counts.values())
    if n_test == 0 or n_test == n_total:
        raise DegenerateSplit(f"test_size {test_size} on {n_total} events leaves one side empty")
    rng = np.random.default_rng(seed)
    test_ids = set()
    for k in keys:
        ids = strata[k]
        picked = rng.choice(len(ids), size=counts[k], replace=False)
        test_ids.update(ids[i] for i in picked)
    order = [e.event_id for e in events]
    provenance = f"stratified(test_size={test_size}{', missions' if stratify_missions else ''})"
    return DataSplit(
        train=tuple(i for i in order if i not in test_ids),
        test=tuple(i for i in order if i in test_ids),
        seed=seed,
        provenance=provenance,
        test_size=test_size,
    )


def competition_seed(seed: int, index: int) -> int:
    """Per-competition seed derived from the run seed and competition index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def virtual_competition_splits(
    events: Sequence[Event],
    n_competitions: int,
    seed: int = 0,
    test_sizes: Sequence[float] = TEST_SIZE_GRID,
    stratify_missions: bool = False,
) -> list[DataSplit]:
    """One stratified split per simulated competition, test size drawn uniformly."""
    if n_competitions < 1:
        raise ValueError("n_competitions must be at least 1")
    return [virtual_competition_split(events, i, seed, test_sizes, stratify_missions) for i in range(n_competitions)]


def virtual_competition_split(events, index, seed=0, test_sizes=TEST_SIZE_GRID, stratify_missions=False) -> DataSplit:
    split_seed = competition_seed(seed, index)
    rng = np.random.default_rng(split_seed)
    test_size = float(test_sizes[int(rng.integers(len(test_sizes)))])
    return stratified_shuffle_split(events, test_size, seed=split_seed, stratify_missions=stratify_missions)


def official_split(
    events: Sequence[Event],
    test_size: float = 0.7,
    seed: int = 0,
    rule: EligibilityRule = DEFAULT_RULE,
    p_high: float = 0.9,
    p_low: float = 0.9,
) -> DataSplit:
    """Competition-style split: only eligible events may go to the test set.

    A stratified ``test_size`` fraction of the eligible events forms the test
    set; every other event is training data. A visible subset is sampled from
    the test set.
    """
    eligible = [e for e in events if is_eligible(e, rule)]
    inner = stratified_shuffle_split(eligible, test_size, seed=seed)
    test = set(inner.test)
    test_events = [e for e in eligible if e.event_id in test]
    visible = sample_visible(test_events, p_high, p_low, seed=seed)
    return DataSplit(
        train=tuple(e.event_id for e in events if e.event_id not in test),
        test=inner.test,
        visible=tuple(i for i in inner.test if i in visible),
        seed=seed,
        provenance=f"official(test_size={test_size}, p_high={p_high}, p_low={p_low})",
        test_size=test_size,
    )


def visible_sensitivity_experiment(
    test_events: Sequence[Event],
    p_grid: Iterable[float] = VISIBLE_GRID,
    draws: int = 200,
    seed: int = 0,
    predictor=None,
    include_full: bool = False,
) -> dict:
    """Mean relative score change between visible subsets and the full test set.

    For every ``(p_low, p_high)`` pair, ``draws`` visible subsets are sampled
    and scored with the predictor (LRP by default). Returns
    ``{(p_low, p_high): mean |L_visible - L_full| / L_full}``.
    """
    from .predictors import LRPPredictor
    from .scoring import PredictionSet, competition_loss

    predictor = LRPPredictor() if predictor is None else predictor
    test_events = list(test_events)
    ids = [e.event_id for e in test_events]
    truth = {e.event_id: final_risk(e) for e in test_events}
    preds = PredictionSet.from_arrays(ids, predictor.predict(test_events))
    full = competition_loss(truth, preds, strict=True).loss
    grid = list(p_grid)
    if include_full:
        grid = grid + [1.0]
    rng = np.random.default_rng(seed)
    table = {}
    for p_low in grid:
        for p_high in grid:
            changes = []
            for _ in range(draws):
                draw_seed = int(rng.integers(2**63))
                visible = sample_visible(test_events, p_high, p_low, seed=draw_seed)
                sub = [i for i in ids if i in visible]
                loss = competition_loss({i: truth[i] for i in sub}, preds.subset(sub), strict=True).loss
                changes.append(abs(loss - full) / full)
            table[(p_low, p_high)] = float(np.mean(changes))
    return table
