"""Wideband geometric channel, analog beam sweeping, and power maps.

Arrays are uniform planar arrays (UPA) lying in a vertical plane whose
boresight points along azimuth ``yaw`` (rotation about z).  Steering phases
use the direction cosines ``u = sin(el) sin(az_local)`` (columns) and
``v = cos(el)`` (rows), with azimuths measured relative to the boresight.
A planar array cannot distinguish front from back, so paths leaving or
arriving outside an array's front hemisphere are dropped when the channel is
assembled (hemispheric element field of view).

The tap-domain channel follows the standard geometric model: per OFDM symbol
``H[n] = sqrt(Nr Nt) sum_l gain_l g(nT - tau_l) a_rx a_tx^H`` and the
subcarrier channel is its length-K DFT.  Beam sweeping accumulates
``sum_k |a_rx^H H[k] a_tx|^2`` per codebook quad into a 4-D power map
ordered (tx-az, tx-el, rx-az, rx-el).

Power-map file layout: 4 little-endian int64 dims followed by float64
row-major (C order) tensor data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import SPEED_OF_LIGHT, wrap_angle


class ChannelConfigError(ValueError):
    """Raised when delays, shapes or codebooks are inconsistent."""


class DegeneratePhaseError(ValueError):
    """Raised when a beamformed subcarrier response is numerically zero."""


@dataclass(frozen=True)
class ArrayConfig:
    """UPA geometry: n_rows elements along z, n_cols along the horizontal."""

    n_rows: int
    n_cols: int
    spacing_wl: float = 0.5
    yaw: float = 0.0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ChannelConfigError("array dimensions must be positive")
        if self.spacing_wl <= 0:
            raise ChannelConfigError("element spacing must be positive")

    @property
    def size(self):
        return self.n_rows * self.n_cols


@dataclass(frozen=True)
class ChannelConfig:
    """OFDM and pulse parameters; symbol period T = 1/bandwidth."""

    carrier_hz: float = 28e9
    bandwidth_hz: float = 40e6
    n_subcarriers: int = 64
    n_taps: int = 16
    pulse: str = "rect"
    rc_beta: float = 0.25
    noise_power: float = 0.0

    def __post_init__(self):
        if self.n_subcarriers < 2:
            raise ChannelConfigError("need at least 2 subcarriers")
        if self.n_taps < 1:
            raise ChannelConfigError("need at least 1 tap")
        if self.pulse not in ("rect", "raised-cosine"):
            raise ChannelConfigError("pulse must be 'rect' or 'raised-cosine'")
        if self.bandwidth_hz <= 0 or self.carrier_hz <= 0:
            raise ChannelConfigError("carrier and bandwidth must be positive")

    @property
    def symbol_period(self):
        return 1.0 / self.bandwidth_hz

    @property
    def subcarrier_spacing(self):
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_hz


def _uniform_set(values, name):
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ChannelConfigError(f"codebook set {name} must be a non-empty 1-D list")
    if np.any(np.diff(v) <= 0):
        raise ChannelConfigError(f"codebook set {name} must be strictly increasing")
    if v.size > 2:
        d = np.diff(v)
        if not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
            raise ChannelConfigError(f"codebook set {name} must be uniformly spaced")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Codebook:
    """Beam angle grids (radians, relative to each array's boresight)."""

    tx_az: np.ndarray
    tx_el: np.ndarray
    rx_az: np.ndarray
    rx_el: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tx_az", _uniform_set(self.tx_az, "tx_az"))
        object.__setattr__(self, "tx_el", _uniform_set(self.tx_el, "tx_el"))
        object.__setattr__(self, "rx_az", _uniform_set(self.rx_az, "rx_az"))
        object.__setattr__(self, "rx_el", _uniform_set(self.rx_el, "rx_el"))

    @property
    def shape(self):
        return (self.tx_az.size, self.tx_el.size, self.rx_az.size, self.rx_el.size)

    @staticmethod
    def uniform(n_tx_az=32, tx_az_span=(-np.pi / 2 * 0.95, np.pi / 2 * 0.95),
                n_tx_el=8, tx_el_span=(np.pi / 2 - 0.4, np.pi / 2 + 0.4),
                n_rx_az=16, rx_az_span=(-np.pi / 2 * 0.95, np.pi / 2 * 0.95),
                n_rx_el=4, rx_el_span=(np.pi / 2 - 0.5, np.pi / 2 + 0.5)):
        def grid(n, span):
            lo, hi = span
            return np.array([(lo + hi) / 2.0]) if n == 1 else np.linspace(lo, hi, n)
        return Codebook(grid(n_tx_az, tx_az_span), grid(n_tx_el, tx_el_span),
                        grid(n_rx_az, rx_az_span), grid(n_rx_el, rx_el_span))

    def angles_at(self, quad):
        """(tx_az, tx_el, rx_az, rx_el) boresight-relative angles at a quad."""
        i, j, p, q = quad
        return (float(self.tx_az[i]), float(self.tx_el[j]),
                float(self.rx_az[p]), float(self.rx_el[q]))


@dataclass
class PowerMap:
    """4-D beamformed received powers per (tx-az, tx-el, rx-az, rx-el) quad."""

    values: np.ndarray
    user_id: int = -1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 4:
            raise ChannelConfigError("power map must be a 4-D tensor")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ChannelConfigError("power map entries must be finite and >= 0")
        self.values = v

    @property
    def shape(self):
        return self.values.shape

    def argmax_quad(self):
        return tuple(int(i) for i in np.unravel_index(np.argmax(self.values), self.shape))


def steering_vector(array, az, el):
    """Unit-norm UPA steering vector for boresight-relative (az, el)."""
    u = np.sin(el) * np.sin(az)
    v = np.cos(el)
    m = np.arange(array.n_rows)[:, None]
    n = np.arange(array.n_cols)[None, :]
    phase = 2.0 * np.pi * array.spacing_wl * (n * u + m * v)
    a = np.exp(1j * phase) / np.sqrt(array.size)
    return a.reshape(-1)


def steering_matrix(array, az_set, el_set):
    """Steering vectors for the az x el grid; columns in C order over (az, el)."""
    az = np.asarray(az_set, dtype=float)[:, None]
    el = np.asarray(el_set, dtype=float)[None, :]
    u = (np.sin(el) * np.sin(az)).reshape(-1)   # (A*E,)
    v = np.broadcast_to(np.cos(el), (az.size, el.size)).reshape(-1)
    m = np.arange(array.n_rows)[:, None]
    n = np.arange(array.n_cols)[None, :]
    phase = 2.0 * np.pi * array.spacing_wl * (
        n[..., None] * u[None, None, :] + m[..., None] * v[None, None, :]
    )
    a = np.exp(1j * phase) / np.sqrt(array.size)
    return a.reshape(array.size, -1)


def in_field_of_view(array, az):
    """True if a global azimuth lies in the array's front hemisphere."""
    return abs(wrap_angle(az - array.yaw)) < np.pi / 2


def _pulse_value(cfg, t):
    """Shaping pulse g(t) sampled at time t (seconds)."""
    T = cfg.symbol_period
    x = t / T
    if cfg.pulse == "rect":
        return 1.0 if -0.5 <= x < 0.5 else 0.0
    beta = cfg.rc_beta
    s = np.sinc(x)
    denom = 1.0 - (2.0 * beta * x) ** 2
    if abs(denom) < 1e-12:
        return float(np.pi / 4.0 * np.sinc(1.0 / (2.0 * beta)))
    return float(s * np.cos(np.pi * beta * x) / denom)


def _path_taps(path, cfg):
    """(tap indices, pulse weights) for one path."""
    T = cfg.symbol_period
    if cfg.pulse == "rect":
        n = int(round(path.delay / T))
        if n >= cfg.n_taps:
            raise ChannelConfigError(
                f"path delay {path.delay:.3e}s exceeds tap span L*T = "
                f"{cfg.n_taps * T:.3e}s; increase n_taps"
            )
        return np.array([n]), np.array([1.0])
    if path.delay > (cfg.n_taps - 1) * T:
        raise ChannelConfigError(
            f"path delay {path.delay:.3e}s exceeds tap span; increase n_taps"
        )
    ns = np.arange(cfg.n_taps)
    g = np.array([_pulse_value(cfg, n * T - path.delay) for n in ns])
    keep = np.abs(g) > 1e-12
    return ns[keep], g[keep]


def _visible_paths(paths, tx, rx):
    """Paths inside both arrays' front hemispheres."""
    return [p for p in paths
            if in_field_of_view(tx, p.aod_az) and in_field_of_view(rx, p.aoa_az)]


def channel_frequency(paths, cfg, tx, rx):
    """Frequency-domain channel H[k] (shape K x Nr x Nt) from traced paths."""
    taps = np.zeros((cfg.n_taps, rx.size, tx.size), dtype=complex)
    scale = np.sqrt(rx.size * tx.size)
    for p in _visible_paths(paths, tx, rx):
        ns, gs = _path_taps(p, cfg)
        a_r = steering_vector(rx, wrap_angle(p.aoa_az - rx.yaw), p.aoa_el)
        a_t = steering_vector(tx, wrap_angle(p.aod_az - tx.yaw), p.aod_el)
        outer = scale * p.gain * np.outer(a_r, a_t.conj())
        for n, g in zip(ns, gs):
            taps[n] += g * outer
    k = np.arange(cfg.n_subcarriers)[:, None]
    n = np.arange(cfg.n_taps)[None, :]
    dft = np.exp(-2j * np.pi * k * n / cfg.n_subcarriers)
    return np.tensordot(dft, taps, axes=(1, 0))


def _tap_beam_matrices(paths, cfg, tx, rx, cb):
    """Per-delay-tap beamformed matrices M_n (R x T) for the fast sweep.

    The beamformed response factorizes as B[k] = sum_n exp(-j 2 pi k n / K) M_n
    with M_n accumulating every path weight landing on tap n, so the per-k
    cost is a handful of matrix adds instead of a length-L contraction.
    """
    vis = _visible_paths(paths, tx, rx)
    A_t = steering_matrix(tx, cb.tx_az, cb.tx_el)
    A_r = steering_matrix(rx, cb.rx_az, cb.rx_el)
    R, T = A_r.shape[1], A_t.shape[1]
    scale = np.sqrt(rx.size * tx.size)
    mats = {}
    for p in vis:
        ns, gs = _path_taps(p, cfg)
        a_r = steering_vector(rx, wrap_angle(p.aoa_az - rx.yaw), p.aoa_el)
        a_t = steering_vector(tx, wrap_angle(p.aod_az - tx.yaw), p.aod_el)
        r_row = A_r.conj().T @ a_r
        t_row = a_t.conj() @ A_t
        outer = np.outer(scale * p.gain * r_row, t_row)
        for n, g in zip(ns, gs):
            if int(n) in mats:
                mats[int(n)] += g * outer
            else:
                mats[int(n)] = g * outer
    return mats, R, T


def _accumulate_power(make_chunk, K, R, T, noise_power, seed):
    """sum_k |B[k] + noise|^2 with per-(k, quad) complex Gaussian noise."""
    rng = np.random.default_rng(seed) if noise_power > 0 else None
    sigma = np.sqrt(noise_power / 2.0)
    P = np.zeros((R, T))
    chunk = max(1, int(4e6 // max(R * T, 1)))
    for k0 in range(0, K, chunk):
        ks = np.arange(k0, min(k0 + chunk, K))
        B = make_chunk(ks)
        if rng is not None:
            # In-place accumulation on contiguous planes; chunking cannot
            # change the stream (draws are consumed in k-major order).
            noise = rng.standard_normal((2, len(ks), R, T))
            re = noise[0]
            im = noise[1]
            re *= sigma
            im *= sigma
            re += B.real
            im += B.imag
            np.square(re, out=re)
            np.square(im, out=im)
            re += im
            P += re.sum(axis=0)
        else:
            P += np.sum(B.real ** 2 + B.imag ** 2, axis=0)
    return P


def _reorder_power(P, cb):
    n_az_t, n_el_t, n_az_r, n_el_r = cb.shape
    return np.ascontiguousarray(
        P.T.reshape(n_az_t, n_el_t, n_az_r, n_el_r))


def sweep_power_map(H, cb, tx, rx, noise_power=0.0, seed=None, user_id=-1):
    """Exhaustive beam sweep of a frequency channel into a 4-D power map.

    Per quad: sum over subcarriers of |a_rx^H H[k] a_tx|^2, with seeded
    complex Gaussian noise of the given power added to each beamformed
    (k, quad) sample before the magnitude-square.
    """
    H = np.asarray(H)
    K = H.shape[0]
    A_t = steering_matrix(tx, cb.tx_az, cb.tx_el)
    A_r = steering_matrix(rx, cb.rx_az, cb.rx_el)
    R, T = A_r.shape[1], A_t.shape[1]

    def make_chunk(ks):
        return np.stack([A_r.conj().T @ H[k] @ A_t for k in ks], axis=0)

    P = _accumulate_power(make_chunk, K, R, T, noise_power, seed)
    return PowerMap(values=_reorder_power(P, cb), user_id=user_id)


def power_map_from_paths(paths, cfg, tx, rx, cb, noise_power=0.0, seed=None, user_id=-1):
    """Power map computed directly from paths (identical to sweeping H)."""
    mats, R, T = _tap_beam_matrices(paths, cfg, tx, rx, cb)
    K = cfg.n_subcarriers
    taps = np.array(sorted(mats))
    stacked = (np.stack([mats[n] for n in taps], axis=0).reshape(len(taps), -1)
               if len(taps) else np.zeros((0, R * T), complex))

    def make_chunk(ks):
        if not len(taps):
            return np.zeros((len(ks), R, T), dtype=complex)
        phases = np.exp(-2j * np.pi * ks[:, None] * taps[None, :] / K)
        return (phases @ stacked).reshape(len(ks), R, T)

    P = _accumulate_power(make_chunk, K, R, T, noise_power, seed)
    return PowerMap(values=_reorder_power(P, cb), user_id=user_id)


def subcarrier_phases(paths, quad, cfg, tx, rx, cb, noise_power=0.0, seed=None):
    """Beamformed per-subcarrier phases and absolute frequencies at a quad.

    The exact (continuous-delay) frequency response is used, so for a pure
    direct path beamformed on its own quad the phase is -2 pi f_m d / c with
    f_m = carrier + m * subcarrier spacing.
    """
    i, j, p, q = quad
    n_az_t, n_el_t, n_az_r, n_el_r = cb.shape
    if not (0 <= i < n_az_t and 0 <= j < n_el_t and 0 <= p < n_az_r and 0 <= q < n_el_r):
        raise ChannelConfigError(f"quad {quad} outside codebook shape {cb.shape}")
    a_t = steering_vector(tx, cb.tx_az[i], cb.tx_el[j])
    a_r = steering_vector(rx, cb.rx_az[p], cb.rx_el[q])
    K = cfg.n_subcarriers
    df = cfg.subcarrier_spacing
    k = np.arange(K)
    y = np.zeros(K, dtype=complex)
    scale = np.sqrt(rx.size * tx.size)
    for path in _visible_paths(paths, tx, rx):
        g_r = a_r.conj() @ steering_vector(rx, wrap_angle(path.aoa_az - rx.yaw), path.aoa_el)
        g_t = steering_vector(tx, wrap_angle(path.aod_az - tx.yaw), path.aod_el).conj() @ a_t
        y += scale * path.gain * g_r * g_t * np.exp(-2j * np.pi * k * df * path.delay)
    if noise_power > 0:
        rng = np.random.default_rng(seed)
        n = rng.standard_normal((K, 2))
        y = y + np.sqrt(noise_power / 2.0) * (n[:, 0] + 1j * n[:, 1])
    if np.any(np.abs(y) < 1e-15):
        raise DegeneratePhaseError("beamformed subcarrier response below numerical floor")
    freqs = cfg.carrier_hz + k * df
    return np.angle(y), freqs


def noise_power_for_snr(snr_db, reference_power):
    """Noise power giving the requested SNR against a reference signal power."""
    return reference_power / (10.0 ** (snr_db / 10.0))


def save_power_map(pm, path):
    """Binary export: 4 little-endian int64 dims + float64 C-order data."""
    with open(path, "wb") as fh:
        fh.write(np.asarray(pm.shape, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(pm.values, dtype="<f8").tobytes())


def load_power_map(path, user_id=-1):
    raw = Path(path).read_bytes()
    dims = np.frombuffer(raw[:32], dtype="<i8")
    vals = np.frombuffer(raw[32:], dtype="<f8").reshape(tuple(dims))
    return PowerMap(values=vals.copy(), user_id=user_id)
