"""Walking-speed, distance, motion-state and Rician-K estimation from CSI.

Pipeline: amplitude resampling -> mean-filter noise cancellation -> Sobel-style
fading enhancement -> per-subcarrier STFT.  Each window yields the in-band
weighted-expectation ripple frequency per subcarrier, fused by a median.

The raw weighted expectation tracks the spectral centroid of the amplitude
fluctuation, which on an isotropic scattered channel sits below the ripple
frequency 2*v/lambda: the envelope spectrum occupies [0, 2 f_d] with most of
its mass in the interior, so the centroid under-reads by ~15-20%.  Speeds are
therefore obtained by inverting a response curve computed from the closed-form
fluctuation spectrum (Rayleigh self-beat term plus, for Rician channels, the
LoS-scatter beat term) pushed through the exact transfer functions of the
pipeline's filters and STFT window.  No empirically fitted constants enter;
see the module tests for the ground-truth checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal
from scipy.signal import fftconvolve
from scipy.special import j0

from .chansim import CsiTrace

ENHANCE_KERNEL = np.array([[2.0, 5.0, 2.0],
                           [0.0, 0.0, 0.0],
                           [-2.0, -5.0, -2.0]])

DEFAULT_RESAMPLE_HZ = 500.0
DEFAULT_WINDOW_S = 2.0
DEFAULT_V_MIN = 0.8
DEFAULT_V_MAX = 1.6
RICIAN_K_CAP = 100.0


@dataclass
class AmplitudeMatrix:
    """Uniformly resampled time x subcarrier amplitude grid."""

    rate: float
    values: np.ndarray
    t0: float = 0.0
    source_rate: Optional[float] = None   # median rate of the originating trace

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D (time x subcarrier)")
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.values.shape[1]

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.rate


@dataclass
class SpeedSeries:
    times: np.ndarray                  # window centers, s
    speeds: np.ndarray                 # m/s, NaN where undefined
    fo: np.ndarray                     # median weighted-expectation frequency, Hz
    fo_per_subcarrier: np.ndarray      # (n_windows, n_subcarriers) diagnostics
    rician_k: float = 0.0

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("window centers must be increasing")


@dataclass
class MotionSegments:
    segments: List[Tuple[float, float, str]]   # (start, end, "moving"|"static")

    def __post_init__(self):
        for (s, e, st) in self.segments:
            if e <= s or st not in ("moving", "static"):
                raise ValueError("bad segment")
        for (_, e0, _), (s1, _, _) in zip(self.segments, self.segments[1:]):
            if abs(e0 - s1) > 1e-9:
                raise ValueError("segments must be contiguous")

    def moving_intervals(self) -> List[Tuple[float, float]]:
        return [(s, e) for s, e, st in self.segments if st == "moving"]

    def state_at(self, t: float) -> str:
        for s, e, st in self.segments:
            if s <= t <= e:
                return st
        return self.segments[-1][2] if t > self.segments[-1][1] else self.segments[0][2]


def speed_bounds_to_band(wavelength: float, v_min: float, v_max: float) -> Tuple[float, float]:
    """Ripple-frequency search band [2 v_min / lambda, 2 v_max / lambda]."""
    return 2.0 * v_min / wavelength, 2.0 * v_max / wavelength


def speed_from_frequency(fo: float, wavelength: float) -> float:
    """Ripple frequency to speed: v = lambda * fo / 2."""
    return wavelength * fo / 2.0


def preprocess(trace: CsiTrace, f_w: float) -> AmplitudeMatrix:
    """Drop phase, keep amplitude, and linearly resample onto a uniform grid."""
    if len(trace) < 2:
        raise ValueError("need at least 2 frames to resample")
    if f_w <= 0:
        raise ValueError("resample rate must be positive")
    t = trace.timestamps
    grid = np.arange(t[0], t[-1], 1.0 / f_w)
    amps = trace.amplitudes()
    out = np.empty((grid.size, amps.shape[1]))
    for i in range(amps.shape[1]):
        out[:, i] = np.interp(grid, t, amps[:, i])
    return AmplitudeMatrix(rate=f_w, values=out, t0=float(t[0]),
                           source_rate=trace.median_rate)


def noise_cancel(a: AmplitudeMatrix, size: int = 6) -> AmplitudeMatrix:
    """Mean filter: convolution with the all-ones size x size kernel scaled by
    1/size^2, edge-replicated."""
    if a.n_samples < size or a.n_subcarriers < 1:
        raise ValueError("grid smaller than the filter kernel")
    vals = ndimage.uniform_filter(a.values, size=size, mode="nearest")
    return AmplitudeMatrix(rate=a.rate, values=vals, t0=a.t0, source_rate=a.source_rate)


def enhance_fading(a: AmplitudeMatrix) -> AmplitudeMatrix:
    """Sobel-style time-derivative convolution emphasizing fading ripples."""
    if a.n_samples < 3 or a.n_subcarriers < 1:
        raise ValueError("grid must be at least 3x1")
    vals = ndimage.convolve(a.values, ENHANCE_KERNEL, mode="nearest")
    return AmplitudeMatrix(rate=a.rate, values=vals, t0=a.t0, source_rate=a.source_rate)


# ---------------------------------------------------------------------------
# Response-curve model: expected weighted-mean frequency vs speed.

_CURVE_CACHE: Dict[tuple, Tuple[np.ndarray, np.ndarray]] = {}
_K_GRID = (0.0, 1.0, 2.0, 5.0, 10.0)


def _pipeline_gain(f: np.ndarray, f_w: float, nc_size: int, source_rate: Optional[float]) -> np.ndarray:
    """Squared magnitude response of mean filter x derivative kernel x
    linear-interpolation reconstruction along the time axis."""
    with np.errstate(divide="ignore", invalid="ignore"):
        box = np.abs(np.sinc(nc_size * f / f_w) / np.where(np.abs(np.sinc(f / f_w)) < 1e-12,
                                                           1e-12, np.sinc(f / f_w)))
    deriv = 2.0 * np.abs(np.sin(2.0 * np.pi * f / f_w))
    gain = box ** 2 * deriv ** 2
    if source_rate is not None and source_rate < 0.9 * f_w:
        gain = gain * np.sinc(f / source_rate) ** 4   # triangle-kernel reconstruction
    return gain


def _response_curve(wavelength: float, f_w: float, nper: int, v_min: float,
                    v_max: float, rician_k: float, nc_size: int,
                    source_rate: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Theoretical in-band weighted-mean frequency vs speed, on the actual STFT
    bin grid, for Rayleigh (K=0) or axial-LoS Rician fluctuation spectra."""
    src_bucket = None if source_rate is None or source_rate >= 0.9 * f_w \
        else round(source_rate / 5.0) * 5.0
    key = (round(wavelength, 9), f_w, nper, round(v_min, 6), round(v_max, 6),
           round(rician_k, 4), nc_size, src_bucket)
    if key in _CURVE_CACHE:
        return _CURVE_CACHE[key]

    n = 1 << 15
    dt = 1.0 / f_w
    tau = np.arange(n) * dt
    nfull = 2 * n - 2
    f = np.fft.rfftfreq(nfull, dt)
    df = f[1] - f[0]
    gain = _pipeline_gain(f, f_w, nc_size, src_bucket)

    # STFT leakage: convolve model spectra with the Hann window power response
    wpsd = np.abs(np.fft.rfft(np.hanning(nper), n=nfull)) ** 2
    halfw = int(round(6.0 / df))
    kfull = np.concatenate([wpsd[::-1][:-1], wpsd])
    kc = len(kfull) // 2
    kwin = kfull[kc - halfw: kc + halfw + 1]
    kwin = kwin / kwin.sum()

    f_min, f_max = speed_bounds_to_band(wavelength, v_min, v_max)
    fbins = np.fft.rfftfreq(nper, dt)
    fb = fbins[(fbins > f_min) & (fbins < f_max)]
    xf = np.concatenate([-f[::-1][:-1], f])

    vs = np.linspace(v_min * 0.55, v_max * 1.3, 80)
    mus = np.empty_like(vs)
    for vi, v in enumerate(vs):
        fd = v / wavelength
        # scatter-scatter beat: FT of the envelope autocovariance series in J0^2
        z = j0(2.0 * np.pi * fd * tau) ** 2
        r_amp = z / 4.0 + z ** 2 / 64.0 + z ** 3 / 256.0
        rfull = np.concatenate([r_amp, r_amp[-2:0:-1]])
        sc = np.maximum(np.fft.rfft(rfull).real, 0.0)
        sc /= max(np.trapezoid(sc, f), 1e-30)
        if rician_k > 0:
            # LoS-scatter beat for a LoS ray along the walking direction:
            # Jakes arcsine shifted to +-f_d, folded to positive frequencies
            ucdf = np.where(xf <= -fd, 0.0,
                            np.where(xf >= fd, 1.0,
                                     0.5 + np.arcsin(np.clip(xf / fd, -1, 1)) / np.pi))
            updf = np.diff(ucdf, prepend=0.0) / df
            cross = np.interp(f - fd, xf, updf) + np.interp(-f - fd, xf, updf)
            cross /= max(np.trapezoid(cross, f), 1e-30)
            spec = (2.0 * rician_k * cross + sc) / (2.0 * rician_k + 1.0)
        else:
            spec = sc
        senh = spec * gain
        sfull = np.concatenate([senh[::-1][:-1], senh])
        ssm = fftconvolve(sfull, kwin, mode="same")[n - 1:]
        sb = np.interp(fb, f, ssm)
        mus[vi] = float((fb * sb).sum() / max(sb.sum(), 1e-30))

    i0 = int(np.argmin(mus))          # keep the invertible rising branch
    curve = (vs[i0:], mus[i0:])
    _CURVE_CACHE[key] = curve
    return curve


def _invert_frequency(fo: np.ndarray, wavelength: float, f_w: float, nper: int,
                      v_min: float, v_max: float, rician_k: float, nc_size: int,
                      source_rate: Optional[float]) -> np.ndarray:
    kg = np.array(_K_GRID)
    if rician_k < 0.75:
        vg, mg = _response_curve(wavelength, f_w, nper, v_min, v_max, 0.0,
                                 nc_size, source_rate)
        return np.interp(fo, mg, vg, left=vg[0], right=vg[-1])
    kq = np.log1p(min(rician_k, kg[-1]))
    hi = int(np.clip(np.searchsorted(np.log1p(kg), kq), 1, len(kg) - 1))
    k0, k1 = kg[hi - 1], kg[hi]
    w = (kq - np.log1p(k0)) / (np.log1p(k1) - np.log1p(k0))
    v0g, m0g = _response_curve(wavelength, f_w, nper, v_min, v_max, k0, nc_size, source_rate)
    v1g, m1g = _response_curve(wavelength, f_w, nper, v_min, v_max, k1, nc_size, source_rate)
    va = np.interp(fo, m0g, v0g, left=v0g[0], right=v0g[-1])
    vb = np.interp(fo, m1g, v1g, left=v1g[0], right=v1g[-1])
    return (1.0 - w) * va + w * vb


def estimate_speed(a: AmplitudeMatrix, wavelength: float, v_min: float = DEFAULT_V_MIN,
                   v_max: float = DEFAULT_V_MAX, stft_window: Optional[int] = None,
                   rician_k: Optional[float] = None, nc_size: int = 6) -> SpeedSeries:
    """Windowed speed estimates from an enhanced amplitude matrix.

    Per subcarrier, an STFT (Hann, 50% overlap) gives the in-band power
    distribution; the weighted expectation of frequencies is fused across
    subcarriers by a median and mapped to speed through the response model.
    Windows with no in-band power get NaN.  `rician_k` selects the Rician
    branch of the response model (None means Rayleigh).
    """
    f_min, f_max = speed_bounds_to_band(wavelength, v_min, v_max)
    if a.rate < 2.0 * f_max:
        raise ValueError(f"resample rate {a.rate} below 2*f_max={2 * f_max:.1f}")
    nper = int(stft_window) if stft_window else int(round(DEFAULT_WINDOW_S * a.rate))
    if a.n_samples < nper:
        raise ValueError("matrix shorter than one STFT window")

    freqs, seg_times, sxx = signal.spectrogram(
        a.values, fs=a.rate, window="hann", nperseg=nper, noverlap=nper // 2,
        detrend=False, axis=0, mode="psd")
    band = (freqs > f_min) & (freqs < f_max)
    fb = freqs[band]
    w = sxx[band]                                    # (n_band, n_sub, n_win)
    den = w.sum(axis=0)
    num = (fb[:, None, None] * w).sum(axis=0)
    with np.errstate(invalid="ignore"):
        fo_sub = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    fo = np.nanmedian(fo_sub, axis=0)
    fo = np.where(np.isfinite(fo), fo, np.nan)

    k_for_curve = 0.0 if rician_k is None else float(rician_k)
    speeds = np.full_like(fo, np.nan)
    ok = np.isfinite(fo)
    if ok.any():
        v_hat = _invert_frequency(fo[ok], wavelength, a.rate, nper, v_min, v_max,
                                  k_for_curve, nc_size, a.source_rate)
        speeds[ok] = np.clip(v_hat, v_min, v_max)
    return SpeedSeries(times=a.t0 + seg_times, speeds=speeds, fo=fo,
                       fo_per_subcarrier=fo_sub.T, rician_k=k_for_curve)


def estimate_rician_k(a: AmplitudeMatrix, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """Moment-based K estimate per window: with P = A^2 and
    gamma = Var(P)/E[P]^2, K = sqrt(1-gamma)/(1-sqrt(1-gamma)); gamma > 1 maps
    to 0 and gamma -> 0 saturates at the 100 cap.  Median across subcarriers.
    """
    if window < 100:
        raise ValueError("window must be >= 100 samples")
    n_win = a.n_samples // window
    if n_win == 0:
        raise ValueError("matrix shorter than one window")
    times = np.empty(n_win)
    ks = np.empty(n_win)
    for k in range(n_win):
        block = a.values[k * window:(k + 1) * window]
        p = block ** 2
        mean_p = p.mean(axis=0)
        gamma = p.var(axis=0) / np.maximum(mean_p ** 2, 1e-300)
        root = np.sqrt(np.clip(1.0 - gamma, 0.0, None))
        with np.errstate(divide="ignore"):
            est = np.where(gamma >= 1.0, 0.0, root / np.maximum(1.0 - root, 1e-12))
        ks[k] = float(np.median(np.minimum(est, RICIAN_K_CAP)))
        times[k] = a.t0 + (k + 0.5) * window / a.rate
    return times, ks


def trace_rician_k(trace: CsiTrace, f_w: float = DEFAULT_RESAMPLE_HZ,
                   window_s: float = 10.0) -> float:
    """Trace-level K for response-model selection (long windows, median)."""
    a = preprocess(trace, f_w)
    window = min(int(window_s * f_w), a.n_samples)
    _, ks = estimate_rician_k(a, max(window, 100))
    return float(np.median(ks))


def run_speed_pipeline(trace: CsiTrace, f_w: float = DEFAULT_RESAMPLE_HZ,
                       v_min: float = DEFAULT_V_MIN, v_max: float = DEFAULT_V_MAX,
                       stft_window: Optional[int] = None,
                       nc_size: int = 6) -> SpeedSeries:
    """Full chain: preprocess -> noise_cancel -> enhance_fading -> estimate_speed,
    with the channel's K measured from the resampled amplitudes."""
    resampled = preprocess(trace, f_w)
    k_win = min(int(10.0 * f_w), resampled.n_samples)
    k_hat = 0.0
    if k_win >= 100:
        _, ks = estimate_rician_k(resampled, k_win)
        k_hat = float(np.median(ks))
    enhanced = enhance_fading(noise_cancel(resampled, size=nc_size))
    return estimate_speed(enhanced, trace.env.wavelength, v_min=v_min, v_max=v_max,
                          stft_window=stft_window, rician_k=k_hat, nc_size=nc_size)


def detect_motion(trace: CsiTrace, rho_threshold: float = 0.4,
                  window: int = 50) -> MotionSegments:
    """Correlation-based moving/static segmentation.

    Pearson correlation between consecutive windowed amplitude blocks (all
    subcarriers concatenated) collapses once the device moves more than half a
    wavelength per window; a 3-point smoothing plus a 3-window hysteresis
    suppresses flicker.
    """
    if len(trace) < 2 * window:
        raise ValueError("trace must hold at least two windows")
    amps = trace.amplitudes()
    n_win = len(trace) // window
    blocks = [amps[k * window:(k + 1) * window].ravel() for k in range(n_win)]
    rho = np.empty(n_win - 1)
    for k in range(1, n_win):
        x, y = blocks[k - 1], blocks[k]
        sx, sy = x.std(), y.std()
        rho[k - 1] = 0.0 if sx == 0 or sy == 0 else float(np.corrcoef(x, y)[0, 1])
    bnd_times = trace.timestamps[np.arange(1, n_win) * window]
    if len(rho) >= 3:
        smoothed = np.convolve(rho, np.ones(3) / 3.0, mode="same")
        smoothed[0], smoothed[-1] = rho[0], rho[-1]
    else:
        smoothed = rho

    hysteresis = 3
    moving = smoothed < rho_threshold
    state = bool(moving[0])
    t_start = float(trace.timestamps[0])
    segments: List[Tuple[float, float, str]] = []
    k = 0
    while k < len(moving):
        if moving[k] == state:
            k += 1
            continue
        run = 0
        while k + run < len(moving) and moving[k + run] != state:
            run += 1
        if run >= hysteresis or k + run == len(moving):
            t_flip = float(bnd_times[k])
            segments.append((t_start, t_flip, "moving" if state else "static"))
            t_start = t_flip
            state = not state
            k += 1
        else:
            k += run
    end = float(trace.timestamps[-1])
    if end > t_start:
        segments.append((t_start, end, "moving" if state else "static"))
    return MotionSegments(segments)


def integrate_distance(series: SpeedSeries, segments: MotionSegments,
                       gaps: Sequence[Tuple[float, float]] = ()) -> float:
    """Trapezoidal distance over moving intervals.

    Undefined stretches (declared traffic gaps or NaN windows) take the mean
    of the flanking estimates, which is exactly linear interpolation between
    them; static segments contribute nothing.
    """
    total = 0.0
    t = series.times
    v = series.speeds.copy()
    for a, b in gaps:
        v[(t >= a) & (t <= b)] = np.nan

    for (seg_a, seg_b) in segments.moving_intervals():
        inside = (t >= seg_a) & (t <= seg_b)
        tt, vv = t[inside], v[inside]
        if tt.size == 0 or not np.any(np.isfinite(vv)):
            raise ValueError(f"no speed estimates inside moving segment "
                             f"[{seg_a:.2f}, {seg_b:.2f}]")
        good = np.isfinite(vv)
        if not good.all():
            # linear interpolation across undefined runs == flank-mean fill;
            # np.interp clamps to the nearest estimate at the ends
            vv = np.interp(tt, tt[good], vv[good])
        knots_t = np.concatenate([[seg_a], tt, [seg_b]])
        knots_v = np.concatenate([[vv[0]], vv, [vv[-1]]])
        total += float(np.trapezoid(knots_v, knots_t))
    return total
