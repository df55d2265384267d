"""Exception hierarchy.

Everything raised on purpose by the library derives from
:class:`ConjunctError`, so callers (the CLI in particular) can separate data
errors from programming errors.
"""


class ConjunctError(Exception):
    """Base class for all library errors."""


# -- events and risks -------------------------------------------------------


class InvalidEvent(ConjunctError, ValueError):
    """An event violates a structural invariant (ordering, shared ids...)."""


class NoRisk(ConjunctError):
    """No CDM of the event carries a risk value."""


class NoCdmBeforeCutoff(ConjunctError):
    """No CDM was issued at or before the requested time-to-TCA cutoff."""

    def __init__(self, event_id, cutoff):
        super().__init__(f"event {event_id!r}: no CDM with time_to_tca >= {cutoff}")
        self.event_id = event_id
        self.cutoff = cutoff


# -- ingest -----------------------------------------------------------------


class KvnSyntaxError(ConjunctError):
    def __init__(self, line_no, line):
        super().__init__(f"line {line_no}: malformed KVN line {line!r}")
        self.line_no = line_no
        self.line = line


class UnitMismatch(ConjunctError):
    def __init__(self, key, unit, expected):
        super().__init__(f"{key}: unit [{unit}] does not match expected {expected!r}")
        self.key = key
        self.unit = unit
        self.expected = expected


class MissingRequired(ConjunctError):
    def __init__(self, key):
        super().__init__(f"missing required field {key!r}")
        self.key = key


class SchemaError(ConjunctError):
    pass


class ParseError(ConjunctError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")
        self.row = row
        self.column = column
        self.value = value


class DuplicateTimestamp(ConjunctError):
    def __init__(self, event_id, time_to_tca):
        super().__init__(f"event {event_id!r}: two CDMs at time_to_tca={time_to_tca}")
        self.event_id = event_id
        self.time_to_tca = time_to_tca


# -- splitting --------------------------------------------------------------


class NotEligible(ConjunctError):
    pass


class DegenerateSplit(ConjunctError):
    pass


class EmptyClassWarning(UserWarning):
    """A risk class was requested for sampling but has no events."""


# -- scoring ----------------------------------------------------------------


class NonFinite(ConjunctError, ValueError):
    pass


class IdMismatch(ConjunctError):
    pass


class NoHighRiskEvents(ConjunctError):
    pass


class ZeroF2(ConjunctError):
    pass


# -- predictors -------------------------------------------------------------


class MissingFeature(ConjunctError):
    def __init__(self, event_id, step, feature):
        super().__init__(f"event {event_id!r}: step {step} needs {feature!r}, which is missing")
        self.event_id = event_id
        self.step = step
        self.feature = feature


class EmptyTrainSet(ConjunctError, ValueError):
    pass


# -- analysis ---------------------------------------------------------------


class LengthMismatch(ConjunctError, ValueError):
    pass


class DegenerateInput(ConjunctError, ValueError):
    pass


class AllZeroWeights(ConjunctError, ValueError):
    pass


class NonPositiveSample(ConjunctError, ValueError):
    pass


class NoConvergence(ConjunctError):
    pass


class RankDeficient(ConjunctError):
    pass
