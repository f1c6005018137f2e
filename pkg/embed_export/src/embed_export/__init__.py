"""embed-export: run an embedding provider over audio windows, emit .dkeb."""

__version__ = "0.1.0"

from .errors import AudioDecodeError, ExportError, ProviderError  # noqa: F401
from .export import ExportJob, export  # noqa: F401
from .providers import available_providers, resolve_provider  # noqa: F401
from .windows import WindowPlan, make_windows  # noqa: F401
