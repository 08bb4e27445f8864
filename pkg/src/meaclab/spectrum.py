"""PSD/spectrogram estimation and the two spectral attack signatures:
broadband jamming (drastic spectral change) and the narrowband replay bump.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import IqBuffer

JAMMING_SCORE_THRESHOLD_DB = 3.0
REPLAY_CONTRAST_THRESHOLD_DB = 2.0
JAMMING_SUSPECTED = "JammingSuspected"
REPLAY_SPIKE_SUSPECTED = "ReplaySpikeSuspected"

_TINY = 1e-30


class SpectrumError(ValueError):
    pass


@dataclass
class PowerSpectrum:
    """Complex-baseband power spectral density over [-fs/2, fs/2)."""

    freqs: np.ndarray  # Hz, baseband-relative, fftshifted ascending
    power_db: np.ndarray  # dB per bin (density, dB re 1/Hz)
    nfft: int
    sample_rate: float
    window: str = "hann"
    n_segments: int = 1

    def __post_init__(self):
        if len(self.freqs) != self.nfft or len(self.power_db) != self.nfft:
            raise SpectrumError("freqs/power length must equal nfft")

    def linear(self) -> np.ndarray:
        return 10.0 ** (self.power_db / 10.0)

    def total_power(self) -> float:
        return float(np.sum(self.linear()) * self.sample_rate / self.nfft)


@dataclass
class Spectrogram:
    times: np.ndarray  # column start times, s
    freqs: np.ndarray
    power_db: np.ndarray  # shape (nfft, n_columns)
    nfft: int
    hop: int
    sample_rate: float

    def column(self, j: int) -> PowerSpectrum:
        return PowerSpectrum(
            freqs=self.freqs,
            power_db=self.power_db[:, j],
            nfft=self.nfft,
            sample_rate=self.sample_rate,
        )


@dataclass(frozen=True)
class SpectralAlarm:
    kind: str
    t: float
    score: float


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _periodogram(block: np.ndarray, win: np.ndarray, fs: float) -> np.ndarray:
    spec = np.fft.fftshift(np.fft.fft(block * win))
    return np.abs(spec) ** 2 / (fs * np.sum(win**2))


def welch_psd(feed: IqBuffer, nfft: int = 4096, overlap_fraction: float = 0.5) -> PowerSpectrum:
    """Averaged Hann-windowed periodograms of the complex baseband feed."""
    if len(feed) < nfft:
        raise SpectrumError(f"feed length {len(feed)} shorter than nfft {nfft}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise SpectrumError("overlap_fraction must be in [0, 1)")
    hop = max(1, int(round(nfft * (1.0 - overlap_fraction))))
    win = _hann(nfft)
    n_segments = (len(feed) - nfft) // hop + 1
    acc = np.zeros(nfft)
    for k in range(n_segments):
        acc += _periodogram(feed.samples[k * hop : k * hop + nfft], win, feed.sample_rate)
    psd = acc / n_segments
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, d=1.0 / feed.sample_rate))
    return PowerSpectrum(
        freqs=freqs,
        power_db=10.0 * np.log10(psd + _TINY),
        nfft=nfft,
        sample_rate=feed.sample_rate,
        n_segments=n_segments,
    )


def spectrogram(feed: IqBuffer, nfft: int = 4096, hop: int | None = None) -> Spectrogram:
    """Time-frequency matrix; column j covers [t_j, t_j + nfft/fs)."""
    if len(feed) < nfft:
        raise SpectrumError(f"feed length {len(feed)} shorter than nfft {nfft}")
    if hop is None:
        hop = nfft
    if hop <= 0:
        raise SpectrumError("hop must be positive")
    win = _hann(nfft)
    n_cols = (len(feed) - nfft) // hop + 1
    power = np.empty((nfft, n_cols))
    for j in range(n_cols):
        power[:, j] = 10.0 * np.log10(
            _periodogram(feed.samples[j * hop : j * hop + nfft], win, feed.sample_rate) + _TINY
        )
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, d=1.0 / feed.sample_rate))
    times = feed.start_time + np.arange(n_cols) * hop / feed.sample_rate
    return Spectrogram(
        times=times, freqs=freqs, power_db=power, nfft=nfft, hop=hop,
        sample_rate=feed.sample_rate,
    )


def _check_compatible(a: PowerSpectrum, b: PowerSpectrum):
    if a.nfft != b.nfft or abs(a.sample_rate - b.sample_rate) > 1e-6:
        raise SpectrumError("spectra have mismatched nfft or sample rate")


def detect_jamming(
    baseline: PowerSpectrum, current: PowerSpectrum, t: float = 0.0
) -> SpectralAlarm | None:
    """Mean absolute dB deviation from the baseline across all bins.

    A constant gain offset applied to both spectra leaves the score
    unchanged; broadband noise lifts every bin and trips the alarm.
    """
    _check_compatible(baseline, current)
    score = float(np.mean(np.abs(current.power_db - baseline.power_db)))
    if score > JAMMING_SCORE_THRESHOLD_DB:
        return SpectralAlarm(kind=JAMMING_SUSPECTED, t=t, score=score)
    return None


def detect_replay_spike(
    baseline: PowerSpectrum,
    current: PowerSpectrum,
    band_edges,
    t: float = 0.0,
) -> SpectralAlarm | None:
    """In-band vs out-of-band contrast of the dB change from baseline.

    ``band_edges`` is one (f_lo, f_hi) pair or a list of candidate pairs;
    the score is the best contrast over the candidates.  A narrow, strong
    replay band scores high; flat broadband jamming does not.
    """
    _check_compatible(baseline, current)
    if np.isscalar(band_edges[0]):
        band_edges = [band_edges]
    delta = current.power_db - baseline.power_db
    best = -np.inf
    for f_lo, f_hi in band_edges:
        if f_lo >= f_hi:
            raise SpectrumError("band edges must satisfy f_lo < f_hi")
        if f_lo < baseline.freqs[0] or f_hi > baseline.freqs[-1] + baseline.sample_rate / baseline.nfft:
            raise SpectrumError("band edges outside the spectrum span")
        inside = (baseline.freqs >= f_lo) & (baseline.freqs < f_hi)
        if not inside.any() or inside.all():
            raise SpectrumError("band must cover part but not all of the spectrum")
        contrast = float(np.mean(delta[inside]) - np.mean(delta[~inside]))
        best = max(best, contrast)
    if best > REPLAY_CONTRAST_THRESHOLD_DB:
        return SpectralAlarm(kind=REPLAY_SPIKE_SUSPECTED, t=t, score=best)
    return None


def average_spectrum(spectra: list[PowerSpectrum]) -> PowerSpectrum:
    """Linear-domain average, used to form the clean-interval baseline."""
    if not spectra:
        raise SpectrumError("no spectra to average")
    for s in spectra[1:]:
        _check_compatible(spectra[0], s)
    mean_linear = np.mean([s.linear() for s in spectra], axis=0)
    return PowerSpectrum(
        freqs=spectra[0].freqs,
        power_db=10.0 * np.log10(mean_linear + _TINY),
        nfft=spectra[0].nfft,
        sample_rate=spectra[0].sample_rate,
        n_segments=sum(s.n_segments for s in spectra),
    )
