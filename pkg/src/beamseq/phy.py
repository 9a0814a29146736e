"""Uniform-linear-array response, multipath channel synthesis, DFT codebooks,
and the beamforming metrics built on them.

Conventions used throughout:

* angles are azimuth against the array broadside, in radians, restricted to
  [-pi/2, pi/2] (a ULA cannot distinguish front from back);
* antenna spacing is expressed in wavelengths, so the carrier cancels out of
  every phase term;
* the receiver is a single antenna, so a channel is a length-N complex vector
  seen from the base-station array;
* received signal strength pairs a channel h with a unit-norm codeword f as
  |h^H f|^2 (conjugate-transpose inner product).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SPEED_OF_LIGHT",
    "OutageError",
    "ArrayGeometry",
    "PathComponent",
    "ChannelSnapshot",
    "Codebook",
    "steering_vector",
    "synthesize_channel",
    "build_dft_codebook",
    "received_signal_strength",
    "optimal_beam",
    "spectral_efficiency",
]

SPEED_OF_LIGHT = 299_792_458.0

# Slack for angles that land on +-pi/2 up to floating-point rounding.
_ANGLE_TOL = 1e-9


class OutageError(RuntimeError):
    """Raised when no usable propagation path exists (deep outage)."""


@dataclass(frozen=True)
class ArrayGeometry:
    """A uniform linear array: element count, spacing, and carrier.

    ``spacing_wavelengths`` is the inter-element distance as a multiple of the
    carrier wavelength (0.5 is the classic half-wavelength ULA).
    """

    num_antennas: int
    spacing_wavelengths: float = 0.5
    carrier_hz: float = 28e9

    def __post_init__(self) -> None:
        if self.num_antennas < 1:
            raise ValueError(f"num_antennas must be >= 1, got {self.num_antennas}")
        if not (self.spacing_wavelengths > 0):
            raise ValueError(f"spacing must be > 0, got {self.spacing_wavelengths}")
        if not (self.carrier_hz > 0):
            raise ValueError(f"carrier_hz must be > 0, got {self.carrier_hz}")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class PathComponent:
    """One propagation path: complex gain plus departure/arrival azimuths."""

    gain: complex
    aod: float
    aoa: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gain.real) and math.isfinite(self.gain.imag)):
            raise ValueError("path gain must be finite")
        for name, angle in (("aod", self.aod), ("aoa", self.aoa)):
            if not math.isfinite(angle):
                raise ValueError(f"{name} must be finite")
            if abs(angle) > math.pi / 2 + _ANGLE_TOL:
                raise ValueError(f"{name}={angle} outside broadside range [-pi/2, pi/2]")


@dataclass(frozen=True)
class ChannelSnapshot:
    """Downlink channel vector from one BS array to a single-antenna user
    at one time slot."""

    coefficients: np.ndarray
    slot_index: int = 0

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coefficients, dtype=np.complex128)
        if coeffs.ndim != 1 or coeffs.size < 1:
            raise ValueError("coefficients must be a non-empty 1-D vector")
        if not np.all(np.isfinite(coeffs.view(np.float64))):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def num_antennas(self) -> int:
        return self.coefficients.shape[0]


@dataclass(frozen=True)
class Codebook:
    """Unit-norm beamforming codewords, stored as columns of ``matrix``."""

    matrix: np.ndarray  # (num_antennas, num_beams) complex

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=np.complex128)
        if mat.ndim != 2:
            raise ValueError("codebook matrix must be 2-D (antennas x beams)")
        if mat.shape[1] < mat.shape[0]:
            raise ValueError(
                f"need at least as many beams as antennas, got {mat.shape[1]} < {mat.shape[0]}"
            )
        norms = np.linalg.norm(mat, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("every codeword must have unit Euclidean norm")
        object.__setattr__(self, "matrix", mat)

    @property
    def num_antennas(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_beams(self) -> int:
        return self.matrix.shape[1]

    def codeword(self, index: int) -> np.ndarray:
        if not 0 <= index < self.num_beams:
            raise ValueError(f"beam index {index} out of range [0, {self.num_beams})")
        return self.matrix[:, index]


def steering_vector(geometry: ArrayGeometry, angle: float) -> np.ndarray:
    """Phase response of the ULA toward broadside angle ``angle``.

    Element i is exp(-j * 2*pi * spacing * i * sin(angle)); element 0 is
    exactly 1+0j.
    """
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    if abs(angle) > math.pi / 2 + _ANGLE_TOL:
        raise ValueError(f"angle={angle} outside broadside range [-pi/2, pi/2]")
    idx = np.arange(geometry.num_antennas)
    phase = -2.0 * np.pi * geometry.spacing_wavelengths * math.sin(angle) * idx
    return np.exp(1j * phase)


def synthesize_channel(
    paths: list[PathComponent], bs: ArrayGeometry, slot: int = 0
) -> ChannelSnapshot:
    """Superpose path contributions into one channel vector.

    Each path adds gain * a(aod); the single-antenna receiver contributes a
    scalar 1. The sum is exact, no noise is added here.
    """
    if not paths:
        raise OutageError("no propagation path: cannot synthesize a channel")
    coeffs = np.zeros(bs.num_antennas, dtype=np.complex128)
    for path in paths:
        coeffs = coeffs + path.gain * steering_vector(bs, path.aod)
    return ChannelSnapshot(coefficients=coeffs, slot_index=slot)


def build_dft_codebook(num_beams: int, num_antennas: int) -> Codebook:
    """Codebook from the first ``num_antennas`` rows of a ``num_beams``-point
    DFT matrix, one unit-normalized codeword per column.

    Codeword x, element i is (1/sqrt(N)) * exp(-j * 2*pi * i * x / X). The
    truncated columns are constant-modulus, so unit normalization is the
    global 1/sqrt(N) scale.
    """
    if num_beams < num_antennas:
        raise ValueError(
            f"num_beams ({num_beams}) must be >= num_antennas ({num_antennas})"
        )
    i = np.arange(num_antennas)[:, None]
    x = np.arange(num_beams)[None, :]
    mat = np.exp(-2j * np.pi * i * x / num_beams) / math.sqrt(num_antennas)
    return Codebook(matrix=mat)


def _as_vector(h) -> np.ndarray:
    return h.coefficients if isinstance(h, ChannelSnapshot) else np.asarray(h)


def received_signal_strength(h, f: np.ndarray) -> float:
    """|h^H f|^2 for channel h and beamforming vector f."""
    hv = _as_vector(h)
    fv = np.asarray(f)
    if hv.shape != fv.shape:
        raise ValueError(f"dimension mismatch: channel {hv.shape} vs codeword {fv.shape}")
    return float(np.abs(np.vdot(hv, fv)) ** 2)


def optimal_beam(h, cb: Codebook) -> int:
    """Index of the codeword maximizing |h^H f|^2, ties to the lowest index."""
    hv = _as_vector(h)
    if hv.shape[0] != cb.num_antennas:
        raise ValueError(
            f"dimension mismatch: channel {hv.shape[0]} vs codebook {cb.num_antennas}"
        )
    if not np.any(hv):
        raise OutageError("zero channel: optimal beam undefined (outage)")
    rss = np.abs(hv.conj() @ cb.matrix) ** 2
    return int(np.argmax(rss))


def spectral_efficiency(h, f: np.ndarray, tx_snr: float) -> float:
    """log2(1 + tx_snr * |h^H f|^2) in bits/s/Hz, for linear tx_snr > 0."""
    if not (tx_snr > 0):
        raise ValueError(f"tx_snr must be positive, got {tx_snr}")
    return float(np.log2(1.0 + tx_snr * received_signal_strength(h, f)))
