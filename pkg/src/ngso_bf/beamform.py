"""Classical receive beamformers, SINR metrics and beam patterns.

Every weight vector ``w`` is applied as ``s_hat = w^H y``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DegenerateGeometryError
from .scenario import ArrayGeometry, Doa, Scenario, steering_vector
from .signals import SnapshotMatrix

log = logging.getLogger(__name__)

COND_WARN = 1e12
GAIN_FLOOR = 1e-30  # -300 dB, keeps exact nulls finite in dB


class Method(enum.Enum):
    INITIAL = "Initial"
    MRC = "MRC"
    ZF = "ZF"
    SMI = "SMI"
    MVDR = "MVDR"
    MAMBA = "MambaBF"


@dataclass(frozen=True, eq=False)
class BeamWeights:
    weights: np.ndarray
    method: Method

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=complex)
        if not np.all(np.isfinite(w)):
            raise ValueError("beam weights must be finite")
        if not np.linalg.norm(w) > 0:
            raise ValueError("beam weights must be nonzero")
        object.__setattr__(self, "weights", w)


def _as_array(w) -> np.ndarray:
    return w.weights if isinstance(w, BeamWeights) else np.asarray(w, dtype=complex)


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    r_desired: np.ndarray
    r_int_noise: np.ndarray
    r_sample: np.ndarray | None = None

    @property
    def r_true(self) -> np.ndarray:
        return self.r_desired + self.r_int_noise

    @classmethod
    def from_scenario(cls, scenario: Scenario, y: SnapshotMatrix | None = None) -> "CovarianceSet":
        h_d = scenario.h_d
        h_i = scenario.h_int
        m = h_d.shape[0]
        r_d = np.outer(h_d, h_d.conj())
        r_in = h_i @ h_i.conj().T + scenario.noise_power_w * np.eye(m)
        r_s = sample_covariance(y) if y is not None else None
        return cls(r_d, r_in, r_s)


def sample_covariance(y) -> np.ndarray:
    """``(1/L) Y Y^H`` for an (M, L) snapshot matrix."""
    data = y.data if isinstance(y, SnapshotMatrix) else np.asarray(y)
    r = data @ data.conj().T / data.shape[1]
    return (r + r.conj().T) / 2


def initial_weights(geometry: ArrayGeometry, doa: Doa) -> BeamWeights:
    return BeamWeights(steering_vector(geometry, doa), Method.INITIAL)


def mrc(h_d) -> BeamWeights:
    h_d = np.asarray(h_d, dtype=complex)
    norm = np.linalg.norm(h_d)
    if norm == 0:
        raise ValueError("MRC needs a nonzero desired channel")
    return BeamWeights(h_d / norm, Method.MRC)


def _project_out(h_int: np.ndarray, x: np.ndarray) -> np.ndarray:
    # columns are unit-normalised first: the projector only depends on their span
    norms = np.linalg.norm(h_int, axis=0)
    basis = h_int[:, norms > 0] / norms[norms > 0]
    if basis.shape[1] == 0:
        return x.copy()
    # SVD-based least squares is rank revealing (collinear interferers);
    # the second pass removes the residual left by the first
    for _ in range(2):
        coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
        x = x - basis @ coef
    return x


def zf(h_d, h_int) -> BeamWeights:
    """Project ``h_d`` onto the orthogonal complement of span(H_i)."""
    h_d = np.asarray(h_d, dtype=complex)
    h_int = np.asarray(h_int, dtype=complex).reshape(h_d.shape[0], -1)
    if h_int.shape[1] >= h_d.shape[0]:
        raise DegenerateGeometryError("ZF needs fewer interferers than elements")
    p_h = _project_out(h_int, h_d)
    norm = np.linalg.norm(p_h)
    if norm <= 1e-12 * np.linalg.norm(h_d):
        raise DegenerateGeometryError("desired channel lies in the interference subspace")
    return BeamWeights(p_h / norm, Method.ZF)


def _check_hermitian(r: np.ndarray) -> None:
    scale = np.linalg.norm(r)
    if np.linalg.norm(r - r.conj().T) >= 1e-10 * max(scale, np.finfo(float).tiny):
        raise ConditioningError("covariance matrix is not Hermitian")


def mvdr(r, v_d, diagonal_loading: float = 0.0, method: Method = Method.MVDR) -> BeamWeights:
    """Distortionless minimum-variance weights ``R^-1 v / (v^H R^-1 v)``.

    ``diagonal_loading`` adds ``eps * trace(R) / M`` to the diagonal;
    zero (the default) solves with ``R`` as given.
    """
    r = np.asarray(r, dtype=complex)
    v_d = np.asarray(v_d, dtype=complex)
    if not np.linalg.norm(v_d) > 0:
        raise ValueError("steering vector must be nonzero")
    _check_hermitian(r)
    r = (r + r.conj().T) / 2
    if diagonal_loading:
        m = r.shape[0]
        r = r + diagonal_loading * np.trace(r).real / m * np.eye(m)
    try:
        factor = scipy.linalg.cho_factor(r, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConditioningError(f"covariance is singular or indefinite: {exc}") from exc
    cond = np.linalg.cond(r)
    if not np.isfinite(cond) or cond > COND_WARN:
        log.warning("covariance condition number %.3g exceeds %.0e", cond, COND_WARN)
    r_inv_v = scipy.linalg.cho_solve(factor, v_d)
    denom = np.vdot(v_d, r_inv_v)
    if not abs(denom) > 0:
        raise ConditioningError("v^H R^-1 v vanished")
    w = r_inv_v / np.conj(denom)
    return BeamWeights(w, method)


def smi(y, v_d, diagonal_loading: float = 0.0) -> BeamWeights:
    """MVDR with the sample covariance of the snapshots."""
    return mvdr(sample_covariance(y), v_d, diagonal_loading, method=Method.SMI)


def sinr(w, h_d, h_int, noise_w: float) -> float:
    """Output SINR (linear) of weights ``w``; invariant to scaling of ``w``."""
    w = _as_array(w)
    h_d = np.asarray(h_d)
    h_int = np.asarray(h_int).reshape(h_d.shape[0], -1)
    signal = abs(np.vdot(w, h_d)) ** 2
    interference = float(np.sum(np.abs(w.conj() @ h_int) ** 2))
    noise = noise_w * float(np.vdot(w, w).real)
    return float(signal / (interference + noise))


def running_mean(values) -> float:
    """Incremental mean; exact for constant sequences."""
    mean = 0.0
    for i, x in enumerate(values):
        mean += (float(x) - mean) / (i + 1)
    return mean


def asinr(w, scenario: Scenario, num_snapshots: int, h_d=None) -> float:
    """Per-snapshot SINR averaged over ``num_snapshots``.

    Channels are constant within a coherence interval, so every term of
    the average is the same; the result coincides with :func:`sinr`.
    """
    if num_snapshots < 1:
        raise ValueError("num_snapshots must be >= 1")
    h_d = scenario.h_d if h_d is None else h_d
    per_snapshot = (
        sinr(w, h_d, scenario.h_int, scenario.noise_power_w) for _ in range(num_snapshots)
    )
    return running_mean(per_snapshot)


def beam_gain(geometry: ArrayGeometry, w, doa: Doa, efficiency: float) -> float:
    """Receive gain ``eta * M * |w^H v(doa)|^2 / ||w||^2`` (linear)."""
    w = _as_array(w)
    v = steering_vector(geometry, doa)
    m = geometry.num_elements
    return float(efficiency * m * abs(np.vdot(w, v)) ** 2 / np.vdot(w, w).real)


def _angle_axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def beam_pattern_grid(
    geometry: ArrayGeometry,
    w,
    az_range=(-90.0, 90.0),
    el_range=(-90.0, 90.0),
    step_deg: float = 1.0,
    efficiency: float = 0.99,
):
    """Gain in dB on an azimuth x elevation grid.

    Returns ``(azimuths, elevations, grid)`` with ``grid.shape ==
    (len(azimuths), len(elevations))``.
    """
    if step_deg <= 0:
        raise ValueError("grid step must be positive")
    w = _as_array(w)
    az = _angle_axis(*az_range, step_deg)
    el = _angle_axis(*el_range, step_deg)
    phi = np.radians(az)[:, None]
    theta = np.radians(el)[None, :]
    kx = np.sin(phi) * np.cos(theta)
    ky = np.broadcast_to(np.sin(theta), kx.shape)
    k = 2 * np.pi / geometry.wavelength * geometry.spacing
    mx = np.repeat(np.arange(geometry.m_x_count), geometry.m_y_count)
    my = np.tile(np.arange(geometry.m_y_count), geometry.m_x_count)
    m = geometry.num_elements
    # af[a, e] = w^H v(az_a, el_e)
    phase = k * (kx[..., None] * mx + ky[..., None] * my)
    af = np.exp(1j * phase) @ w.conj() / math.sqrt(m)
    gain = efficiency * m * np.abs(af) ** 2 / np.vdot(w, w).real
    return az, el, 10 * np.log10(np.maximum(gain, GAIN_FLOOR))
