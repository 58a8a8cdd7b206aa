"""Collaborative correlation filter: features, windowing, inference, training.

A single filter is trained from weighted samples pooled across all camera
views by ridge regression in the frequency domain.  Conventions used
throughout:

  * feature maps are real arrays of shape (D, H, W), channel first;
  * the response of filter f on features x is
        Y = ifft2( sum_d conj(fhat_d) * xhat_d ),
    i.e. circular cross-correlation summed over channels;
  * the training objective, with per-sample weights alpha_j >= 0, is
        E(f) = sum_j alpha_j ||corr(f, X_j) - Y_j||^2 + lam * ||f||^2
    with all norms taken in the spatial domain.

E(f) is an ordinary ridge problem per frequency bin: the normal equations
couple the D channels through a D x D system at each bin, which is solved
exactly (batched) rather than with the diagonal (shared denominator)
approximation common in single-sample filters.  The exact solve keeps the
returned filter a true minimizer of E for any number of samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

N_FEATURE_CHANNELS = 6  # intensity, gradient magnitude, 4 orientation bins


class EmptySampleSetError(ValueError):
    """Raised when a filter solve is requested with no weighted samples."""


@dataclass
class FilterBank:
    """Per-channel frequency-domain filter plus its regularizer."""

    spectra: np.ndarray  # complex128, shape (D, H, W)
    lam: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.spectra.shape

    def spatial(self) -> np.ndarray:
        """Real spatial-domain filter, shape (D, H, W)."""
        return np.real(np.fft.ifft2(self.spectra, axes=(-2, -1)))


@dataclass
class Sample:
    """One training sample: features, label spectrum and an importance weight."""

    features: np.ndarray        # (D, H, W) real
    label_spectrum: np.ndarray  # (H, W) complex
    weight: float
    view: int
    time: int
    _spectra: np.ndarray | None = field(default=None, repr=False)

    def spectra(self) -> np.ndarray:
        """FFT of the features, cached after the first call."""
        if self._spectra is None:
            self._spectra = np.fft.fft2(self.features, axes=(-2, -1))
        return self._spectra


class SampleSet:
    """Bounded per-view memory of weighted training samples.

    When a view exceeds capacity the lowest-weight sample in that view is
    evicted; ties are broken by age (oldest goes first).
    """

    def __init__(self, m_max: int):
        if m_max < 1:
            raise ValueError("capacity must be at least 1")
        self.m_max = m_max
        self._views: dict[int, list[Sample]] = {}
        self._insert_order: dict[int, list[int]] = {}
        self._counter = 0

    def insert(self, sample: Sample) -> None:
        view = sample.view
        samples = self._views.setdefault(view, [])
        order = self._insert_order.setdefault(view, [])
        samples.append(sample)
        order.append(self._counter)
        self._counter += 1
        if len(samples) > self.m_max:
            evict = min(range(len(samples)), key=lambda i: (samples[i].weight, order[i]))
            samples.pop(evict)
            order.pop(evict)

    def decay(self, factor: float = 0.98) -> None:
        """Fade the weights of stored samples by one update round."""
        for samples in self._views.values():
            for s in samples:
                s.weight *= factor

    def view_sizes(self) -> dict[int, int]:
        return {c: len(s) for c, s in self._views.items()}

    def all_samples(self) -> list[Sample]:
        out: list[Sample] = []
        for view in sorted(self._views):
            out.extend(self._views[view])
        return out

    def __len__(self) -> int:
        return sum(len(s) for s in self._views.values())


def extract_features(patch: np.ndarray, cell: int = 4) -> np.ndarray:
    """Hand-crafted channel stack for a grayscale patch.

    Channels: zero-mean normalized intensity, gradient magnitude and four
    unsigned gradient-orientation histogram bins, each averaged over
    cell x cell blocks.  The patch side lengths must be divisible by cell.
    """
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("patch must be a single-channel image")
    if p.shape[0] % cell or p.shape[1] % cell:
        raise ValueError(f"patch shape {p.shape} not divisible by cell={cell}")
    p = p / 255.0
    intensity = p - p.mean()
    gy, gx = np.gradient(p)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bin_idx = np.minimum((ang / (np.pi / 4)).astype(np.int64), 3)
    channels = [intensity, mag]
    for b in range(4):
        channels.append(np.where(bin_idx == b, mag, 0.0))
    stacked = np.stack(channels)

    d, hh, ww = stacked.shape
    pooled = stacked.reshape(d, hh // cell, cell, ww // cell, cell).mean(axis=(2, 4))
    return pooled


def hann_window(x: np.ndarray) -> np.ndarray:
    """Multiply every channel by the separable 2D Hann window."""
    h, w = x.shape[-2:]
    win = np.outer(np.hanning(h), np.hanning(w))
    return x * win


def gaussian_label(h: int, w: int, sigma: float) -> np.ndarray:
    """Circularly centered Gaussian score map with peak 1 at the origin cell."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dy = (np.arange(h) + h // 2) % h - h // 2
    dx = (np.arange(w) + w // 2) % w - w // 2
    return np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma**2))


def correlate(f: FilterBank, x: np.ndarray) -> np.ndarray:
    """Response map of filter f on feature map x (real H x W array)."""
    if x.shape != f.spectra.shape:
        raise ValueError(f"feature shape {x.shape} does not match filter {f.spectra.shape}")
    xhat = np.fft.fft2(x, axes=(-2, -1))
    yhat = np.sum(np.conj(f.spectra) * xhat, axis=0)
    y = np.fft.ifft2(yhat)
    return np.real(y)


def solve_ccf(samples: SampleSet | list[Sample], lam: float) -> FilterBank:
    """Closed-form minimizer of the pooled weighted ridge objective.

    Per frequency bin k the normal equations are
        ( sum_j a_j xhat_j(k)* xhat_j(k)^T + lam I ) g(k)
            = sum_j a_j xhat_j(k)* yhat_j(k)
    with g = conj(fhat); the D x D systems are solved batched over bins.
    """
    if isinstance(samples, SampleSet):
        samples = samples.all_samples()
    samples = [s for s in samples if s.weight > 0]
    if not samples:
        raise EmptySampleSetError("no samples with positive weight")

    d, h, w = samples[0].features.shape
    xhat = np.stack([s.spectra() for s in samples])            # (m, D, H, W)
    yhat = np.stack([s.label_spectrum for s in samples])       # (m, H, W)
    alpha = np.array([s.weight for s in samples])              # (m,)

    # A: (H, W, D, D), b: (H, W, D)
    a_mat = np.einsum("m,mdhw,mehw->hwde", alpha, np.conj(xhat), xhat, optimize=True)
    a_mat += lam * np.eye(d)
    b_vec = np.einsum("m,mdhw,mhw->hwd", alpha, np.conj(xhat), yhat, optimize=True)
    g = np.linalg.solve(a_mat, b_vec[..., None])[..., 0]       # (H, W, D)
    spectra = np.conj(np.moveaxis(g, -1, 0))                   # (D, H, W)
    return FilterBank(spectra=spectra, lam=lam)


def objective(f: FilterBank, samples: SampleSet | list[Sample]) -> float:
    """Spatial-domain value of the training objective E(f)."""
    if isinstance(samples, SampleSet):
        samples = samples.all_samples()
    total = f.lam * float(np.sum(f.spatial() ** 2))
    for s in samples:
        label = np.real(np.fft.ifft2(s.label_spectrum))
        resid = correlate(f, s.features) - label
        total += s.weight * float(np.sum(resid**2))
    return total


def objective_freq(f: FilterBank, samples: SampleSet | list[Sample]) -> float:
    """Frequency-domain evaluation of E(f); equals objective() by Parseval."""
    if isinstance(samples, SampleSet):
        samples = samples.all_samples()
    d, h, w = f.spectra.shape
    n = h * w
    total = f.lam * float(np.sum(np.abs(f.spectra) ** 2)) / n
    for s in samples:
        resid = np.sum(np.conj(f.spectra) * s.spectra(), axis=0) - s.label_spectrum
        total += s.weight * float(np.sum(np.abs(resid) ** 2)) / n
    return total


_FILTER_MAGIC = b"MVCF"


def save_filter(f: FilterBank, path) -> None:
    """Binary snapshot: magic, dims header, little-endian complex array."""
    d, h, w = f.spectra.shape
    header = _FILTER_MAGIC + struct.pack("<IIIId", 1, d, h, w, f.lam)
    payload = np.ascontiguousarray(f.spectra.astype("<c16")).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_filter(path) -> FilterBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _FILTER_MAGIC:
        raise ValueError("not a filter snapshot")
    version, d, h, w, lam = struct.unpack("<IIIId", blob[4 : 4 + 24])
    if version != 1:
        raise ValueError(f"unsupported snapshot version {version}")
    spectra = np.frombuffer(blob[4 + 24 :], dtype="<c16").reshape(d, h, w).astype(np.complex128)
    return FilterBank(spectra=spectra, lam=lam)
