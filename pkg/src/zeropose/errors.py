"""Exception types shared across the pipeline."""


class ZeroposeError(Exception):
    """Base class for all library-specific failures."""


# geometry / projection
class NonPositiveDepth(ZeroposeError):
    pass


# feature tensor files
class BadMagic(ZeroposeError):
    pass


class VersionMismatch(ZeroposeError):
    pass


class TruncatedFile(ZeroposeError):
    pass


class NonFiniteValue(ZeroposeError):
    pass


# image assets
class UnsupportedBitDepth(ZeroposeError):
    pass


class DecodeError(ZeroposeError):
    pass


# PLY meshes
class MalformedHeader(ZeroposeError):
    pass


class UnsupportedElement(ZeroposeError):
    pass


class IndexOutOfRange(ZeroposeError):
    pass


# rendering
class BehindCamera(ZeroposeError):
    pass


# template matching
class EmptyMask(ZeroposeError):
    pass


class ZeroNorm(ZeroposeError):
    pass


class NoTemplates(ZeroposeError):
    pass


# hyperfeatures
class InsufficientSamples(ZeroposeError):
    pass


class DimMismatch(ZeroposeError):
    pass


class MissingLayer(ZeroposeError):
    pass


# correspondences / clustering
class TooFewPoints(ZeroposeError):
    pass


# pose solving
class DegenerateConfiguration(ZeroposeError):
    pass


class NoConsensus(ZeroposeError):
    pass


class NoValidCorrespondences(ZeroposeError):
    pass


# metrics / evaluation
class EmptyRecords(ZeroposeError):
    pass


# configuration / datasets
class ConfigError(ZeroposeError):
    pass
