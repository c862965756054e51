"""Renderer bank: panning, mode matching, gain-delay wavefront synthesis,
pressure matching, and diffuse decorrelation.

Each renderer reduces to a DrivingFunction (per-speaker gain, delay, optional
FIR). render_block executes a driving function block by block with state so a
long signal can stream without discontinuities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dsp import BlockFIR, decorrelator_fir, fractional_delay
from .errors import (
    NotBracketed,
    RankDeficient,
    SingularSystem,
    SourceInsideArray,
    StateMismatch,
    TooFewSpeakers,
)
from .geometry import Direction3, angle_between_deg, ccw_arc_deg

SPEED_OF_SOUND_MS = 343.0

# Pressure matching defaults: solve on a log grid, realize as linear-phase FIRs.
PM_FREQ_COUNT = 129
PM_FREQ_LO_HZ = 50.0
PM_FREQ_HI_HZ = 16000.0
PM_BETA_DEFAULT = 1e-3
PM_FIR_TAPS = 1024

_TIE_EPS_DEG = 1e-9
_FLAT_EPS_DEG = 1e-9


def pm_default_freqs() -> np.ndarray:
    return np.geomspace(PM_FREQ_LO_HZ, PM_FREQ_HI_HZ, PM_FREQ_COUNT)


# ---------------------------------------------------------------------------
# panning

def nearest_speaker_gains(speaker_dirs, target: Direction3) -> np.ndarray:
    """One-hot gain vector selecting the speaker at minimum great-circle angle.

    Exact ties go to the lowest index.
    """
    if not speaker_dirs:
        raise TooFewSpeakers("nearest-speaker panning needs a speaker")
    angles = np.array([angle_between_deg(d, target) for d in speaker_dirs])
    best = float(np.min(angles))
    index = int(np.flatnonzero(angles <= best + _TIE_EPS_DEG)[0])
    gains = np.zeros(len(speaker_dirs))
    gains[index] = 1.0
    return gains


def _is_horizontal(speaker_dirs, target: Direction3) -> bool:
    return abs(target.el_deg) < _FLAT_EPS_DEG and all(
        abs(d.el_deg) < _FLAT_EPS_DEG for d in speaker_dirs)


def _bracketing_pair(azimuths, target_az: float):
    """Adjacent azimuth pair whose arc (< 180 deg) contains the target."""
    order = sorted(range(len(azimuths)), key=lambda i: azimuths[i])
    for k in range(len(order)):
        i, j = order[k], order[(k + 1) % len(order)]
        arc = ccw_arc_deg(azimuths[i], azimuths[j])
        if len(order) == 1 or arc == 0.0:
            continue
        if arc < 180.0 and ccw_arc_deg(azimuths[i], target_az) <= arc + 1e-12:
            return i, j
    return None


def vbap_gains(speaker_dirs, target: Direction3) -> np.ndarray:
    """Vector-base amplitude panning gains, power-normalized.

    Horizontal layouts pan over the adjacent speaker pair that brackets the
    target; layouts or targets with elevation pan over an enclosing triplet.
    Raises NotBracketed when no pair or triplet contains the target.
    """
    if len(speaker_dirs) < 2:
        raise NotBracketed("vector-base panning needs at least two speakers")
    units = np.array([d.unit_vector() for d in speaker_dirs])
    p = np.array(target.unit_vector())
    gains = np.zeros(len(speaker_dirs))
    if _is_horizontal(speaker_dirs, target):
        pair = _bracketing_pair([d.az_deg for d in speaker_dirs], target.az_deg)
        if pair is None:
            raise NotBracketed(
                f"no adjacent speaker pair brackets azimuth {target.az_deg}")
        i, j = pair
        basis = np.column_stack([units[i, :2], units[j, :2]])
        g = np.linalg.solve(basis, p[:2])
        g = np.maximum(g, 0.0)
        gains[i], gains[j] = g
    else:
        best = None
        for tri in combinations(range(len(speaker_dirs)), 3):
            basis = units[list(tri)].T
            if abs(np.linalg.det(basis)) < 1e-9:
                continue
            g = np.linalg.solve(basis, p)
            if np.min(g) >= -1e-9:
                if best is None or np.min(g) > best[1]:
                    best = (tri, float(np.min(g)), np.maximum(g, 0.0))
        if best is None:
            raise NotBracketed("no speaker triplet encloses the target")
        tri, _, g = best
        gains[list(tri)] = g
    return gains / np.linalg.norm(gains)


def vbap_feasible(speaker_dirs, target: Direction3) -> bool:
    """True when vbap_gains would succeed for this target."""
    try:
        vbap_gains(speaker_dirs, target)
        return True
    except NotBracketed:
        return False


# ---------------------------------------------------------------------------
# ambisonic mode matching (2D circular harmonics)

def ambi_encode(direction: Direction3, order: int) -> np.ndarray:
    """Circular-harmonic coefficients [1, cos t, sin t, ..., cos Nt, sin Nt]."""
    if order < 0:
        raise ValueError("order must be >= 0")
    theta = math.radians(direction.az_deg)
    coeffs = [1.0]
    for n in range(1, order + 1):
        coeffs.append(math.cos(n * theta))
        coeffs.append(math.sin(n * theta))
    return np.array(coeffs)


def ambi_mm_decode(speaker_dirs, order: int) -> np.ndarray:
    """Mode-matching decode matrix, speakers x (2*order+1).

    Gains for a direction are D @ ambi_encode(direction, order). Raises
    RankDeficient when the layout cannot carry all requested modes (too few or
    coincident speakers).
    """
    n_modes = 2 * order + 1
    if len(speaker_dirs) < n_modes:
        raise RankDeficient(
            f"{len(speaker_dirs)} speakers cannot match {n_modes} modes")
    encodes = np.array([ambi_encode(d, order) for d in speaker_dirs])
    singulars = np.linalg.svd(encodes, compute_uv=False)
    if singulars[-1] < 1e-9 * singulars[0]:
        raise RankDeficient("speaker layout is rank deficient for this order")
    return np.linalg.pinv(encodes).T


# ---------------------------------------------------------------------------
# wavefront synthesis by gains and delays

def wfs_drive(speaker_positions, source: Direction3):
    """Per-speaker (gains, delays_s) reproducing a point source behind the array.

    Each speaker is delayed by its distance to the virtual source and weighted
    by 1/r, power-normalized over the subset; delays are offset so the smallest
    is exactly zero. The source must lie farther from the listener than every
    speaker in the subset.
    """
    if source.distance_m is None:
        raise SourceInsideArray("wavefront synthesis needs a source distance")
    src = np.array(source.cartesian())
    pts = []
    for sp in speaker_positions:
        if sp.distance_m is None:
            raise SourceInsideArray("speaker positions need distances")
        if source.distance_m <= sp.distance_m:
            raise SourceInsideArray(
                f"source at {source.distance_m} m is not behind a speaker at "
                f"{sp.distance_m} m")
        pts.append(np.array(sp.cartesian()))
    r = np.array([float(np.linalg.norm(src - p)) for p in pts])
    delays = r / SPEED_OF_SOUND_MS
    delays -= delays.min()
    inv = 1.0 / r
    gains = inv / math.sqrt(float(np.sum(inv**2)))
    return gains, delays


# ---------------------------------------------------------------------------
# single-zone pressure matching

@dataclass(frozen=True)
class PMDesign:
    """Solved pressure-matching filters: spectra on the grid plus FIR taps.

    Each speaker's bulk propagation delay (source path minus speaker path) is
    factored out of the taps into align_delays_s; rendering applies taps and
    delay together. Keeping the taps delay-free concentrates their energy at
    the window centre.
    """

    freqs: np.ndarray
    spectra: np.ndarray          # speakers x freqs, complex
    firs: np.ndarray             # speakers x taps
    align_delays_s: np.ndarray   # per speaker, may be negative


def _greens(distance_m: np.ndarray, freq_hz: float) -> np.ndarray:
    k = 2.0 * np.pi * freq_hz / SPEED_OF_SOUND_MS
    return np.exp(-1j * k * distance_m) / (4.0 * np.pi * distance_m)


def pm_filters(
    speaker_positions,
    control_points,
    source: Direction3,
    freqs: np.ndarray | None = None,
    beta: float = PM_BETA_DEFAULT,
    n_taps: int = PM_FIR_TAPS,
    sample_rate: int = 48000,
) -> PMDesign:
    """Regularized pressure matching over a control zone.

    Per frequency, driving weights minimize |G q - p|^2 + beta |q|^2 where G
    holds free-field Green's functions from speakers to control points and p
    the target source's Green's functions. Realized as linear-phase-shifted
    FIRs via the inverse transform with a Hann window.
    """
    if freqs is None:
        freqs = pm_default_freqs()
    if source.distance_m is None:
        raise SourceInsideArray("pressure matching needs a source distance")
    spk = np.array([p.cartesian() for p in speaker_positions])
    ctl = np.array([p.cartesian() for p in control_points])
    src = np.array(source.cartesian())
    d_spk = np.linalg.norm(ctl[:, None, :] - spk[None, :, :], axis=2)
    d_src = np.linalg.norm(ctl - src[None, :], axis=1)
    if np.any(d_spk < 1e-6) or np.any(d_src < 1e-6):
        raise SourceInsideArray("a control point coincides with a source or speaker")

    n_spk = len(speaker_positions)
    spectra = np.zeros((n_spk, len(freqs)), dtype=complex)
    eye = np.eye(n_spk)
    for fi, f in enumerate(freqs):
        G = _greens(d_spk, f)
        p = _greens(d_src, f)
        if beta == 0.0:
            s = np.linalg.svd(G, compute_uv=False)
            rank = int(np.sum(s > max(G.shape) * np.finfo(float).eps * s[0]))
            if rank < n_spk:
                raise SingularSystem(
                    f"unregularized system is singular at {f:.1f} Hz")
            q, *_ = np.linalg.lstsq(G, p, rcond=None)
        else:
            # augmented least squares, equivalent to the regularized normal
            # equations but solved along a different numerical route
            a = np.vstack([G, math.sqrt(beta) * eye])
            b = np.concatenate([p, np.zeros(n_spk)])
            q, *_ = np.linalg.lstsq(a, b, rcond=None)
        spectra[:, fi] = q

    align = (np.mean(d_src) - np.mean(d_spk, axis=0)) / SPEED_OF_SOUND_MS
    firs = _spectra_to_firs(freqs, spectra, align, n_taps, sample_rate)
    return PMDesign(freqs=np.asarray(freqs, dtype=float), spectra=spectra,
                    firs=firs, align_delays_s=align)


def _spectra_to_firs(freqs, spectra, align_delays_s, n_taps, sample_rate) -> np.ndarray:
    """Interpolate solved spectra onto the FFT grid, centre as linear phase,
    window, and invert to taps.

    The per-speaker bulk delay is unwound first so the interpolated phase
    varies slowly across the sparse log grid and the impulse lands on the
    window centre; callers reapply it as align_delays_s."""
    freqs = np.asarray(freqs, dtype=float)
    grid = np.fft.rfftfreq(n_taps, 1.0 / sample_rate)
    firs = np.zeros((spectra.shape[0], n_taps))
    centre = n_taps // 2
    window = np.hanning(n_taps)
    shift = np.exp(-2j * np.pi * grid * centre / sample_rate)
    for li in range(spectra.shape[0]):
        smooth = spectra[li] * np.exp(2j * np.pi * freqs * align_delays_s[li])
        re = np.interp(grid, freqs, smooth.real,
                       left=smooth[0].real, right=smooth[-1].real)
        im = np.interp(grid, freqs, smooth.imag,
                       left=smooth[0].imag, right=smooth[-1].imag)
        h = (re + 1j * im) * shift
        h[0] = h[0].real
        if n_taps % 2 == 0:
            h[-1] = h[-1].real
        firs[li] = np.fft.irfft(h, n_taps) * window
    return firs


# ---------------------------------------------------------------------------
# diffuse rendering

def diffuse_gains(n_speakers: int):
    """Equal power split with a distinct decorrelator per speaker index."""
    if n_speakers < 2:
        raise TooFewSpeakers("diffuse rendering needs at least two speakers")
    gains = np.full(n_speakers, 1.0 / math.sqrt(n_speakers))
    firs = tuple(decorrelator_fir(i) for i in range(n_speakers))
    return gains, firs


# ---------------------------------------------------------------------------
# driving functions and block rendering

@dataclass(frozen=True)
class DrivingFunction:
    """Per-speaker gain, delay, and optional FIR over a speaker subset."""

    speaker_ids: tuple[str, ...]
    gains: np.ndarray
    delays_s: np.ndarray
    firs: tuple = ()                 # per-speaker ndarray or None
    sample_rate: int = 48000

    def fingerprint(self) -> tuple:
        fir_bytes = tuple(
            None if f is None else f.tobytes() for f in self.firs) if self.firs else ()
        return (self.speaker_ids, self.gains.tobytes(),
                self.delays_s.tobytes(), fir_bytes, self.sample_rate)


@dataclass
class RenderState:
    """Streaming state for one driving function."""

    fingerprint: tuple
    delay_states: list = field(default_factory=list)
    fir_states: list = field(default_factory=list)


def new_render_state(drive: DrivingFunction) -> RenderState:
    n = len(drive.speaker_ids)
    firs = drive.firs if drive.firs else (None,) * n
    return RenderState(
        fingerprint=drive.fingerprint(),
        delay_states=[None] * n,
        fir_states=[None if f is None else BlockFIR(f) for f in firs],
    )


def render_block(stem_block: np.ndarray, drive: DrivingFunction,
                 state: RenderState) -> np.ndarray:
    """One block through a driving function: gain, delay, then filter.

    Returns (samples, subset speakers). The state must have been created for
    this exact driving function.
    """
    if state.fingerprint != drive.fingerprint():
        raise StateMismatch("render state belongs to a different driving function")
    stem_block = np.asarray(stem_block, dtype=float)
    n = len(stem_block)
    out = np.zeros((n, len(drive.speaker_ids)))
    for i in range(len(drive.speaker_ids)):
        y = drive.gains[i] * stem_block
        if drive.delays_s[i] != 0.0:
            y, state.delay_states[i] = fractional_delay(
                y, state.delay_states[i], drive.delays_s[i], drive.sample_rate)
        if state.fir_states[i] is not None:
            y = state.fir_states[i].process(y)
        out[:, i] = y
    return out
