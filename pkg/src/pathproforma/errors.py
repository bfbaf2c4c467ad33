"""Shared exception types.

Parse- and normalisation-level problems are modelled as returned values
(see ``schema.NormalisationFailure`` and ``extraction.ParseFailure``)
because they are expected, countable outcomes of sampling a language
model.  Everything in this module is raised: these are conditions a
caller must handle or a run must stop on.
"""


class UnknownFieldError(KeyError):
    """A field id (or alias) does not exist in the loaded catalogue."""


class SchemaError(ValueError):
    """The field catalogue data file violates a structural invariant."""


class AuthError(RuntimeError):
    """The backend rejected our credential.  Fatal for the whole run."""


class TransportError(RuntimeError):
    """A backend call failed after the retry budget was exhausted."""


class ScriptMissError(KeyError):
    """The mock backend was queried for a key its script does not cover.

    This always indicates a test-configuration bug, never a runtime
    condition, so it is deliberately loud.
    """


class ScriptError(ValueError):
    """A mock script file violates one of its invariants."""


class UnsupportedFormatError(ValueError):
    """An image was supplied in a format the transcriber does not accept."""


class TranscriptionEmptyError(RuntimeError):
    """The transcription backend returned no text for an image.

    Callers treat the report as unreadable and exclude it from the run.
    """


class EmptyInputError(ValueError):
    """An aggregation or metric was asked to operate on no data."""


class FieldMismatchError(ValueError):
    """Extraction and validation results refer to different fields."""


class DegenerateLabelsError(ValueError):
    """Calibration labels contain only one class; no sigmoid can be fit."""


class SingleClassError(ValueError):
    """A ranking metric needs both classes present and got one."""


class MissingLabelsError(ValueError):
    """The label file does not cover the evaluated (report, field) pairs."""


class NoEventsError(ValueError):
    """Survival statistics need at least one observed event."""


class NoComparablePairsError(ValueError):
    """No pair of subjects is orderable under the censoring rules."""


class NoUsableFieldsError(ValueError):
    """Calibration found no field with enough two-class label pairs."""


class MissingOutcomesError(ValueError):
    """The outcomes file does not cover every subject in the run."""

    def __init__(self, missing_ids):
        self.missing_ids = sorted(missing_ids)
        super().__init__(
            "outcomes file is missing subjects: " + ", ".join(self.missing_ids)
        )
