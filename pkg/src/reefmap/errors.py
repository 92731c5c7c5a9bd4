"""Exception hierarchy shared by all reefmap modules.

Two branches matter to callers: InputError (bad values or malformed files,
CLI exit 3) and DataMismatchError (individually valid inputs that do not fit
together, CLI exit 4). Both subclass ValueError so plain `except ValueError`
also works.
"""


class ReefmapError(Exception):
    """Base class for every error raised by this package."""


class InputError(ReefmapError, ValueError):
    """An argument or file content is invalid on its own."""


class DataMismatchError(ReefmapError, ValueError):
    """Inputs are individually valid but mutually inconsistent."""


# grids
class NonPositiveSpacing(InputError):
    pass


class DegenerateExtent(InputError):
    pass


# ingest
class MalformedRow(InputError):
    def __init__(self, line, detail=""):
        self.line = line
        super().__init__(f"line {line}: malformed row" + (f" ({detail})" if detail else ""))


class ProbabilityOutOfRange(InputError):
    def __init__(self, line, class_name, value):
        self.line = line
        self.class_name = class_name
        super().__init__(f"line {line}: probability for {class_name!r} out of [0,1]: {value}")


class MissingClassColumn(InputError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing column {name!r}")


class EmptyFile(InputError):
    pass


class TooFewPoints(InputError):
    pass


class OutOfRangeCoordinate(InputError):
    pass


class UnknownClass(InputError):
    pass


# rasterize
class AllCollinear(InputError):
    pass


class LengthMismatch(DataMismatchError):
    pass


class GridMismatch(DataMismatchError):
    pass


class EmptyList(InputError):
    pass


# annotate
class EmptyValues(InputError):
    pass


class BadPercentilePair(InputError):
    pass


class ClassMismatch(DataMismatchError):
    pass


class NonPositiveEpsilon(InputError):
    pass


class MissingClassRaster(DataMismatchError):
    pass


class NoOverlap(DataMismatchError):
    pass


# dataset
class TileTooSmall(InputError):
    pass


class NoLabeledPixels(InputError):
    pass


class MissingMask(DataMismatchError):
    def __init__(self, tile_id):
        self.tile_id = tile_id
        super().__init__(f"no predicted mask for tile {tile_id!r}")


class ExtraMask(DataMismatchError):
    def __init__(self, tile_id):
        self.tile_id = tile_id
        super().__init__(f"predicted mask for unknown tile {tile_id!r}")


class SizeMismatch(DataMismatchError):
    pass


class LabelOutOfCatalog(DataMismatchError):
    pass


class BadNoiseRate(InputError):
    pass


class InvalidWeights(InputError):
    pass


class VerificationFailed(DataMismatchError):
    """A manifest hash chain no longer matches the files on disk."""


# metrics
class NoEvaluatedPixels(InputError):
    pass


class NoPresentClasses(InputError):
    pass


# analytics
class EmptyInstance(InputError):
    pass


class NonPositiveArea(InputError):
    pass


class EmptySet(InputError):
    pass


# synth
class BadParameters(InputError):
    pass
