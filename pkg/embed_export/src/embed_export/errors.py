class ExportError(Exception):
    """Base error for export failures."""


class ProviderError(ExportError):
    """Unknown provider id or provider failed to load."""


class AudioDecodeError(ExportError):
    """Audio file could not be decoded."""
