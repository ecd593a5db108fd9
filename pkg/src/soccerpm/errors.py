"""Exception hierarchy shared by all pipeline stages."""


class SoccerPMError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


# ingest
class IngestError(SoccerPMError):
    code = "ingest_error"

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["line"] = self.line_no
        return out


class MalformedLine(IngestError):
    code = "malformed_line"


class SchemaViolation(IngestError):
    code = "schema_violation"

    def __init__(self, field: str, detail: str, line_no: int | None = None):
        self.field = field
        super().__init__(f"field {field!r}: {detail}", line_no)


class InconsistentLineup(IngestError):
    code = "inconsistent_lineup"

    def __init__(self, match_id: str, detail: str, line_no: int | None = None):
        self.match_id = match_id
        super().__init__(f"match {match_id}: {detail}", line_no)


class DuplicateMatch(IngestError):
    code = "duplicate_match"


class UnknownMatch(IngestError):
    code = "unknown_match"


class OutOfRangeCoordinate(IngestError):
    code = "out_of_range_coordinate"

    def __init__(self, field: str, value, line_no: int | None = None):
        self.field = field
        super().__init__(f"{field}={value!r} outside [0, 1]", line_no)


class EmptyLeague(SoccerPMError):
    code = "empty_league"


# segmentation
class FutureSegment(SoccerPMError):
    code = "future_segment"


class UnknownPlayer(SoccerPMError):
    code = "unknown_player"


class ZeroMinutes(SoccerPMError):
    code = "zero_minutes"


# xg
class InsufficientData(SoccerPMError):
    code = "insufficient_data"


class MaskMismatch(SoccerPMError):
    code = "mask_mismatch"


class EmptyCorpus(SoccerPMError):
    code = "empty_corpus"


class NonConvergence(SoccerPMError):
    code = "non_convergence"


# ridge
class EmptyObservationSet(SoccerPMError):
    code = "empty_observation_set"


class SingularUnregularized(SoccerPMError):
    code = "singular_unregularized"


class EmptyWindow(SoccerPMError):
    code = "empty_window"


# evaluate
class LengthMismatch(SoccerPMError):
    code = "length_mismatch"


class InvalidDistribution(SoccerPMError):
    code = "invalid_distribution"


class NoEligiblePlayers(SoccerPMError):
    code = "no_eligible_players"


class TooFewLeagues(SoccerPMError):
    code = "too_few_leagues"


class ConfigError(SoccerPMError):
    code = "config_error"
