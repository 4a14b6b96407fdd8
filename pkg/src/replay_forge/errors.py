"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures without a
lookup table: 2 for bad input, 3 for a broken runtime invariant.
"""


class ReplayForgeError(Exception):
    exit_code = 2

    @property
    def code(self) -> str:
        return type(self).__name__


# volume-core
class DimensionMismatch(ReplayForgeError, ValueError):
    pass


class InvalidVolume(ReplayForgeError, ValueError):
    pass


# scoring
class EmptyLesion(ReplayForgeError, ValueError):
    pass


class EmptyBand(ReplayForgeError, ValueError):
    pass


class EmptyInput(ReplayForgeError, ValueError):
    pass


class AllSamplesEmpty(ReplayForgeError, ValueError):
    pass


# replay-buffer
class NoValidSamples(ReplayForgeError, ValueError):
    pass


class NonMonotonicEpisode(ReplayForgeError, ValueError):
    pass


class BufferEmpty(ReplayForgeError, ValueError):
    pass


class KTooLarge(ReplayForgeError, ValueError):
    pass


class SchemaMismatch(ReplayForgeError, ValueError):
    pass


class CorruptState(ReplayForgeError, ValueError):
    pass


# modality
class ShrinkNotAllowed(ReplayForgeError, ValueError):
    pass


class UnregisteredModality(ReplayForgeError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class EmptyAvailable(ReplayForgeError, ValueError):
    pass


# dctg
class HeadDivisibility(ReplayForgeError, ValueError):
    pass


class ShapeMismatch(ReplayForgeError, ValueError):
    pass


# cl-metrics
class IncompleteRow(ReplayForgeError, ValueError):
    pass


class SingleTask(ReplayForgeError, ValueError):
    pass


class LengthMismatch(ReplayForgeError, ValueError):
    pass


class EmptyList(ReplayForgeError, ValueError):
    pass


# io-formats
class Vol1Error(ReplayForgeError, ValueError):
    pass


class BadMagic(Vol1Error):
    pass


class BadDtype(Vol1Error):
    pass


class TruncatedPayload(Vol1Error):
    pass


class NdimOutOfRange(Vol1Error):
    pass


class ManifestError(ReplayForgeError, ValueError):
    pass


class MissingField(ManifestError):
    pass


class DuplicateSampleId(ManifestError):
    pass


class UnknownModalityKey(ManifestError):
    pass


class MissingFile(ManifestError):
    pass


class InvariantViolation(ReplayForgeError, AssertionError):
    exit_code = 3


class InvalidDocument(ReplayForgeError, ValueError):
    pass
