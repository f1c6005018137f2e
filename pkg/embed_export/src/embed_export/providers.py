"""Embedding providers resolved from opaque string ids.

A provider id has the form `name` or `name:arg`. Everything is resolved
locally; nothing is downloaded at export time. The built-in `spectral`
provider computes deterministic log band-energy features and exists so the
export path can run and be tested without any pretrained model on disk;
real providers register themselves via register_provider.
"""

from __future__ import annotations

import numpy as np

from .errors import ProviderError


class SpectralProvider:
    """Log band-energy embedding: FFT magnitudes pooled into `dim` bands,
    averaged over 32 ms frames, then mean/variance normalized per window."""

    frame_len = 512
    hop = 256

    def __init__(self, dim: int = 512):
        if dim < 1:
            raise ProviderError(f"spectral provider needs dim >= 1, got {dim}")
        self.dim = dim
        self._window = np.hanning(self.frame_len)

    def embed(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        if len(samples) < self.frame_len:
            samples = np.pad(samples, (0, self.frame_len - len(samples)))
        n_frames = 1 + (len(samples) - self.frame_len) // self.hop
        idx = np.arange(self.frame_len)[None, :] + self.hop * np.arange(n_frames)[:, None]
        frames = samples[idx] * self._window
        spectra = np.abs(np.fft.rfft(frames, axis=1))
        n_bins = spectra.shape[1]
        edges = np.linspace(0, n_bins, self.dim + 1).astype(int)
        bands = np.empty((n_frames, self.dim))
        for j in range(self.dim):
            lo, hi = edges[j], max(edges[j + 1], edges[j] + 1)
            bands[:, j] = spectra[:, lo:hi].mean(axis=1)
        feats = np.log(bands + 1e-10).mean(axis=0)
        centered = feats - feats.mean()
        scale = centered.std()
        return centered / scale if scale > 0 else centered


_FACTORIES = {"spectral": SpectralProvider}


def register_provider(name: str, factory) -> None:
    """Register a provider factory taking an optional integer dim argument."""
    _FACTORIES[name] = factory


def available_providers() -> list[str]:
    return sorted(_FACTORIES)


def resolve_provider(provider_id: str):
    name, _, arg = provider_id.partition(":")
    factory = _FACTORIES.get(name)
    if factory is None:
        raise ProviderError(
            f"unknown provider {name!r}; available: {', '.join(available_providers())}"
        )
    try:
        provider = factory(int(arg)) if arg else factory()
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"provider {provider_id!r} failed to load: {exc}") from None
    if not hasattr(provider, "dim") or not hasattr(provider, "embed"):
        raise ProviderError(f"provider {provider_id!r} lacks dim/embed")
    return provider
