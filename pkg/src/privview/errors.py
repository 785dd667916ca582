"""Exception hierarchy shared by all privview modules."""

from __future__ import annotations


class PrivviewError(Exception):
    """Base class; the CLI maps any subclass to exit status 1."""


class SerializationOverflow(PrivviewError):
    pass


class UnrepresentableCharacter(PrivviewError):
    pass


class FieldCountMismatch(PrivviewError):
    pass


class ValueParseError(PrivviewError):
    pass


class MalformedSequence(PrivviewError):
    pass


class DatasetFormatError(PrivviewError):
    pass


class RangeError(PrivviewError):
    pass


class EmptySplit(PrivviewError):
    pass


class MissingGeneralization(PrivviewError):
    pass


class PolicyConfigError(PrivviewError):
    pass


class DimensionMismatch(PrivviewError):
    pass


class NonFiniteGradient(PrivviewError):
    pass


class NonFiniteLoss(PrivviewError):
    pass


class VersionMismatch(PrivviewError):
    pass


class DigestMismatch(PrivviewError):
    pass


class MissingDecoder(PrivviewError):
    pass


class MalformedVectorFile(PrivviewError):
    pass
