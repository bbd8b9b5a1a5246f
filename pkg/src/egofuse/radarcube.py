"""FMCW radar cube: raw ADC -> range/Doppler/angle via a 3D FFT.

FFT convention: forward transforms are unnormalized (numpy default), so the
energy of the processed cube equals ``n_samples * n_chirps * n_angle_bins``
times the ADC energy. The Doppler and angle axes are fft-shifted so zero
velocity sits at bin ``D // 2`` and boresight at ``A // 2``; range is not
shifted. The angle axis models a uniform linear virtual array (azimuth only)
zero-padded to ``n_angle_bins``.
"""
import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .doppler import RadarDetection
from .errors import DimensionMismatch, IndexOutOfBounds, OutOfUnambiguousRange

SPEED_OF_LIGHT = 299_792_458.0
MAGIC = b"RDC1"
DOMAIN_ADC, DOMAIN_PROCESSED = 0, 1
# magnitude (relative to the cube maximum) the detector treats as round-off;
# -120 dB clears both float64 FFT residue and float32 RDC1 storage
DUST_FLOOR = 1e-6


@dataclass(frozen=True)
class RadarParams:
    fc: float = 77e9
    slope: float = 30e12
    fs: float = 10e6
    n_samples: int = 256
    n_chirps: int = 16
    chirp_interval: float = 4e-4
    n_virtual: int = 86
    element_spacing: float = 0.5
    n_angle_bins: int = 192

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError("RadarParams.%s must be positive" % f.name)
        if self.n_virtual > self.n_angle_bins:
            raise ValueError("n_virtual cannot exceed n_angle_bins")

    @property
    def range_resolution(self):
        return SPEED_OF_LIGHT * self.fs / (2.0 * self.slope * self.n_samples)

    @property
    def velocity_resolution(self):
        return SPEED_OF_LIGHT / (2.0 * self.fc * self.n_chirps * self.chirp_interval)

    @property
    def max_range(self):
        return self.n_samples * self.range_resolution

    @property
    def max_velocity(self):
        return 0.5 * self.n_chirps * self.velocity_resolution

    @property
    def cube_shape(self):
        return (self.n_samples, self.n_chirps, self.n_angle_bins)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class PointTarget:
    range: float  # m
    radial_velocity: float  # m/s, range rate
    angle: float  # rad, azimuth on the array
    amplitude: complex = 1.0


@dataclass
class AdcCube:
    data: np.ndarray  # [sample, chirp, virtual channel]
    params: RadarParams
    t: float = 0.0

    def __post_init__(self):
        p = self.params
        if self.data.shape != (p.n_samples, p.n_chirps, p.n_virtual):
            raise DimensionMismatch("ADC cube shape %s does not match params" % (self.data.shape,))


@dataclass
class RadarCube:
    data: np.ndarray  # [range, doppler, angle]
    params: RadarParams
    t: float = 0.0

    def __post_init__(self):
        if self.data.shape != self.params.cube_shape:
            raise DimensionMismatch("radar cube shape %s does not match params" % (self.data.shape,))

    def range_axis(self):
        return np.arange(self.params.n_samples) * self.params.range_resolution

    def velocity_axis(self):
        D = self.params.n_chirps
        return (np.arange(D) - D // 2) * self.params.velocity_resolution

    def angle_axis(self):
        A = self.params.n_angle_bins
        s = (np.arange(A) - A // 2) / A / self.params.element_spacing
        with np.errstate(invalid="ignore"):
            return np.arcsin(s)


def process_cube(adc):
    """Range FFT, shifted Doppler FFT, then zero-padded shifted angle FFT."""
    p = adc.params
    x = np.asarray(adc.data, dtype=complex)
    if x.shape != (p.n_samples, p.n_chirps, p.n_virtual):
        raise DimensionMismatch("ADC cube shape %s does not match params" % (x.shape,))
    x = np.fft.fft(x, axis=0)
    x = np.fft.fftshift(np.fft.fft(x, axis=1), axes=1)
    x = np.fft.fftshift(np.fft.fft(x, n=p.n_angle_bins, axis=2), axes=2)
    return RadarCube(x, p, adc.t)


def _spatial_frequency(angle, params):
    return params.element_spacing * math.sin(angle)


def synthesize_adc(params, targets, noise_sigma=0.0, seed=0, t=0.0):
    """Sum of separable complex exponentials plus complex Gaussian noise.

    ``noise_sigma`` is the RMS magnitude of the complex noise per sample.
    """
    n = np.arange(params.n_samples)[:, None, None]
    m = np.arange(params.n_chirps)[None, :, None]
    el = np.arange(params.n_virtual)[None, None, :]
    data = np.zeros((params.n_samples, params.n_chirps, params.n_virtual), dtype=complex)
    for tg in targets:
        if not 0.0 < tg.range < params.max_range:
            raise OutOfUnambiguousRange("range %.3f m outside (0, %.3f)" % (tg.range, params.max_range))
        if not abs(tg.radial_velocity) < params.max_velocity:
            raise OutOfUnambiguousRange(
                "radial velocity %.3f m/s outside +-%.3f" % (tg.radial_velocity, params.max_velocity))
        f_beat = 2.0 * params.slope * tg.range / SPEED_OF_LIGHT
        ph_r = 2.0 * np.pi * f_beat / params.fs * n
        ph_d = 4.0 * np.pi * tg.radial_velocity * params.chirp_interval * params.fc / SPEED_OF_LIGHT * m
        ph_a = 2.0 * np.pi * _spatial_frequency(tg.angle, params) * el
        data += tg.amplitude * np.exp(1j * (ph_r + ph_d + ph_a))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        s = noise_sigma / math.sqrt(2.0)
        data += s * (rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape))
    return AdcCube(data, params, t)


def bin_to_physical(i_r, i_d, i_a, params):
    """(range m, radial velocity m/s, azimuth rad) at the given cube bin."""
    D, A = params.n_chirps, params.n_angle_bins
    if not (0 <= i_r < params.n_samples and 0 <= i_d < D and 0 <= i_a < A):
        raise IndexOutOfBounds("bin (%d, %d, %d) outside cube" % (i_r, i_d, i_a))
    s = (i_a - A // 2) / A / params.element_spacing
    if abs(s) > 1.0:
        raise IndexOutOfBounds("angle bin %d maps outside the visible region" % i_a)
    return (i_r * params.range_resolution,
            (i_d - D // 2) * params.velocity_resolution,
            math.asin(s))


def physical_to_bin(range_m, radial_velocity, angle, params):
    """Fractional (range, Doppler, angle) bins; inverse of :func:`bin_to_physical`."""
    D, A = params.n_chirps, params.n_angle_bins
    return (range_m / params.range_resolution,
            radial_velocity / params.velocity_resolution + D // 2,
            _spatial_frequency(angle, params) * A + A // 2)


def on_grid_target(i_r, i_d, i_a, params, amplitude=1.0):
    r, v, a = bin_to_physical(i_r, i_d, i_a, params)
    return PointTarget(range=r, radial_velocity=v, angle=a, amplitude=amplitude)


def extract_detections(cube, threshold_db):
    """Peaks of the range-Doppler map more than ``threshold_db`` (20 log10) above
    the cube's median magnitude.

    Detection runs on the per-cell maximum over the angle axis; each peak's
    azimuth is the argmax of that cell's angle spectrum. Searching the full
    3-D cube instead would report every sidelobe of the zero-padded angle FFT
    as a separate target. Doppler wraps around, range does not. Magnitudes
    below ``DUST_FLOOR`` times the cube maximum count as zero, so a
    noise-free cube does not detect its own round-off (float64 FFT residue
    or float32 storage). Each peak becomes a
    zero-elevation unit direction ``(cos az, sin az, 0)`` with its Doppler
    velocity, weighted by its linear power SNR against the median.
    """
    mag = np.abs(cube.data)
    med = float(np.median(mag))
    peak_mag = float(mag.max()) if mag.size else 0.0
    thresh = max(med * 10.0 ** (threshold_db / 20.0), DUST_FLOOR * peak_mag)
    rd = mag.max(axis=2)
    ia = mag.argmax(axis=2)
    peaks = (rd == ndimage.maximum_filter(rd, size=3, mode=("nearest", "wrap"))) & (rd > thresh)
    ref = med if med > 0 else DUST_FLOOR * peak_mag
    dets = []
    for i_r, i_d in np.argwhere(peaks):
        try:
            _, v_r, az = bin_to_physical(int(i_r), int(i_d), int(ia[i_r, i_d]), cube.params)
        except IndexOutOfBounds:
            continue
        snr = float((rd[i_r, i_d] / ref) ** 2)
        dets.append(RadarDetection(dir=np.array([math.cos(az), math.sin(az), 0.0]), v_r=v_r, weight=snr))
    return dets


def write_rdc1(path, data, domain, params=None):
    """Write a complex cube in RDC1 layout, plus ``<name>.params.json`` when params are given."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise DimensionMismatch("RDC1 stores 3-D cubes")
    path = Path(path)
    inter = np.empty(data.shape + (2,), dtype="<f4")
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3IB", *data.shape, domain))
        fh.write(inter.tobytes(order="C"))
    if params is not None:
        sidecar_path(path).write_text(json.dumps(params.to_json(), indent=2))


def read_rdc1(path):
    """Return ``(data, domain, params)``; params is None if the sidecar is missing."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DimensionMismatch("%s is not an RDC1 file" % path)
    d0, d1, d2, domain = struct.unpack_from("<3IB", raw, 4)
    body = np.frombuffer(raw, dtype="<f4", offset=4 + 13)
    if body.size != d0 * d1 * d2 * 2:
        raise DimensionMismatch("RDC1 payload size does not match header")
    body = body.reshape(d0, d1, d2, 2)
    data = body[..., 0].astype(np.float64) + 1j * body[..., 1].astype(np.float64)
    sc = sidecar_path(path)
    params = RadarParams.from_json(json.loads(sc.read_text())) if sc.exists() else None
    return data, domain, params


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".params.json")
