"""Exception types shared across the package."""


class SmclabError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(SmclabError, ValueError):
    """An operation received an argument outside its contract."""


class InvalidModel(SmclabError, ValueError):
    """A model definition violates its invariants (e.g. non-positive weights)."""


class InvalidConfig(SmclabError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
