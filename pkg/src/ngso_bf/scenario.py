"""Interference scenarios at a UT planar array.

Element ordering of every length-M vector is ``m = m_x * M_y + m_y``.
Angles are in degrees at the API boundary and radians internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError

BOLTZMANN = 1.380649e-23
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    m_x_count: int
    m_y_count: int
    spacing: float
    wavelength: float

    def __post_init__(self):
        if self.m_x_count < 1 or self.m_y_count < 1:
            raise ConfigError("array needs at least one element per axis")
        if self.spacing <= 0 or self.wavelength <= 0:
            raise ConfigError("spacing and wavelength must be positive")

    @property
    def num_elements(self) -> int:
        return self.m_x_count * self.m_y_count

    @classmethod
    def half_wavelength(cls, m_x_count: int, m_y_count: int, carrier_hz: float) -> "ArrayGeometry":
        lam = SPEED_OF_LIGHT / carrier_hz
        return cls(m_x_count, m_y_count, lam / 2, lam)


@dataclass(frozen=True)
class Doa:
    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        for name in ("azimuth_deg", "elevation_deg"):
            value = getattr(self, name)
            if not -90.0 <= value <= 90.0:
                raise ConfigError(f"{name}={value} outside [-90, 90]")


@dataclass(frozen=True)
class SatelliteLink:
    eirp_dbw: float
    slant_range_m: float
    carrier_hz: float
    bandwidth_hz: float
    doa: Doa

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def eirp_w(self) -> float:
        return 10.0 ** (self.eirp_dbw / 10.0)


@dataclass(frozen=True, eq=False)
class ChannelVector:
    """Channel ``h = gain_scalar * v(doa)``; the coefficient array is read-only."""

    coefficients: np.ndarray
    gain_scalar: float
    doa: Doa

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=complex)
        if not np.all(np.isfinite(coeffs)):
            raise ConfigError("channel coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    def __eq__(self, other):
        if not isinstance(other, ChannelVector):
            return NotImplemented
        return (
            self.gain_scalar == other.gain_scalar
            and self.doa == other.doa
            and np.array_equal(self.coefficients, other.coefficients)
        )


def steering_vector(geometry: ArrayGeometry, doa: Doa) -> np.ndarray:
    """Unit-norm UPA response toward ``doa``, shape (M,)."""
    phi = math.radians(doa.azimuth_deg)
    theta = math.radians(doa.elevation_deg)
    mx = np.arange(geometry.m_x_count)[:, None]
    my = np.arange(geometry.m_y_count)[None, :]
    k = 2 * np.pi / geometry.wavelength * geometry.spacing
    phase = k * (mx * math.sin(phi) * math.cos(theta) + my * math.sin(theta))
    return np.exp(1j * phase).reshape(-1) / math.sqrt(geometry.num_elements)


def free_space_gain(wavelength: float, range_m: float) -> float:
    """Inverse free-space path loss ``(lambda / (4 pi r))**2``."""
    if range_m <= 0:
        raise ConfigError("slant range must be positive")
    return (wavelength / (4 * math.pi * range_m)) ** 2


def link_budget_gain(link: SatelliteLink, rx_gain_linear: float) -> float:
    """Amplitude gain ``sqrt(P * L * G)`` of a satellite-to-UT link."""
    if rx_gain_linear < 0:
        raise ConfigError("receive gain must be non-negative")
    loss = free_space_gain(link.wavelength, link.slant_range_m)
    return math.sqrt(link.eirp_w * loss * rx_gain_linear)


def noise_power(temperature_k: float, bandwidth_hz: float) -> float:
    return BOLTZMANN * temperature_k * bandwidth_hz


def db10(x):
    return 10.0 * np.log10(x)


@dataclass
class ScenarioConfig:
    """Scenario parameters; defaults reproduce the reference LEO setup.

    The JSON form nests keys as in ``{"array": {"mx": 10}}``; see
    :meth:`from_dict` and the README for the schema.
    """

    mx: int = 10
    my: int = 10
    desired_eirp_dbw: float = 45.0
    desired_range_km: float = 1000.0
    desired_doa_az: float = 0.0
    desired_doa_el: float = 0.0
    interferer_count: int = 3
    interferer_eirp_dbw: float = 40.0
    interferer_range_km_min: float = 500.0
    interferer_range_km_max: float = 600.0
    interferer_doa_abs_max_deg: float = 40.0
    carrier_ghz: float = 11.75
    bandwidth_mhz: float = 50.0
    noise_temp_k: float = 230.0
    ut_efficiency: float = 0.99
    csi_error_variance: float = 0.15
    seed: int = 0

    # nested JSON key -> attribute name
    _SCHEMA = {
        ("array", "mx"): "mx",
        ("array", "my"): "my",
        ("desired", "eirp_dbw"): "desired_eirp_dbw",
        ("desired", "range_km"): "desired_range_km",
        ("desired", "doa_az"): "desired_doa_az",
        ("desired", "doa_el"): "desired_doa_el",
        ("interferers", "count"): "interferer_count",
        ("interferers", "eirp_dbw"): "interferer_eirp_dbw",
        ("interferers", "range_km_min"): "interferer_range_km_min",
        ("interferers", "range_km_max"): "interferer_range_km_max",
        ("interferers", "doa_abs_max_deg"): "interferer_doa_abs_max_deg",
        ("carrier_ghz",): "carrier_ghz",
        ("bandwidth_mhz",): "bandwidth_mhz",
        ("noise_temp_k",): "noise_temp_k",
        ("ut_efficiency",): "ut_efficiency",
        ("csi", "error_variance"): "csi_error_variance",
        ("seed",): "seed",
    }

    def validate(self) -> None:
        m = self.mx * self.my
        if self.mx < 1 or self.my < 1:
            raise ConfigError("array dimensions must be >= 1")
        if not 0 <= self.interferer_count < m:
            raise ConfigError(f"need 0 <= K < M, got K={self.interferer_count}, M={m}")
        if self.interferer_doa_abs_max_deg < 0 or self.interferer_doa_abs_max_deg > 90:
            raise ConfigError("interferer DOA range must be within [0, 90] degrees")
        if self.interferer_range_km_min > self.interferer_range_km_max:
            raise ConfigError("empty interferer range interval")
        if min(self.desired_range_km, self.interferer_range_km_min) <= 0:
            raise ConfigError("ranges must be positive")
        if self.carrier_ghz <= 0 or self.bandwidth_mhz <= 0 or self.noise_temp_k <= 0:
            raise ConfigError("carrier, bandwidth and noise temperature must be positive")
        if self.csi_error_variance < 0:
            raise ConfigError("CSI error variance must be >= 0")
        Doa(self.desired_doa_az, self.desired_doa_el)

    @property
    def carrier_hz(self) -> float:
        return self.carrier_ghz * 1e9

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry.half_wavelength(self.mx, self.my, self.carrier_hz)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        kwargs = {}
        for path, attr in cls._SCHEMA.items():
            node: Any = data
            for key in path:
                if not isinstance(node, Mapping) or key not in node:
                    break
                node = node[key]
            else:
                kwargs[attr] = node
        unknown = set(data) - {p[0] for p in cls._SCHEMA}
        if unknown:
            raise ConfigError(f"unknown scenario config keys: {sorted(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        try:
            for attr, value in kwargs.items():
                kwargs[attr] = int(value) if types[attr] == "int" else float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out: dict = {}
        flat = asdict(self)
        for path, attr in self._SCHEMA.items():
            node = out
            for key in path[:-1]:
                node = node.setdefault(key, {})
            node[path[-1]] = flat[attr]
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass(frozen=True, eq=False)
class Scenario:
    """One coherence interval: geometry, links and channels of all satellites."""

    geometry: ArrayGeometry
    desired_link: SatelliteLink
    desired: ChannelVector
    interferer_links: tuple[SatelliteLink, ...]
    interferers: tuple[ChannelVector, ...]
    noise_power_w: float
    ut_efficiency: float
    seed: int | None = None
    noise_temp_k: float = field(default=230.0)

    @property
    def num_interferers(self) -> int:
        return len(self.interferers)

    @property
    def h_d(self) -> np.ndarray:
        return self.desired.coefficients

    @property
    def h_int(self) -> np.ndarray:
        """Interference channel matrix, shape (M, K)."""
        m = self.geometry.num_elements
        if not self.interferers:
            return np.zeros((m, 0), dtype=complex)
        return np.stack([c.coefficients for c in self.interferers], axis=1)

    @property
    def v_d(self) -> np.ndarray:
        return steering_vector(self.geometry, self.desired.doa)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.desired_link == other.desired_link
            and self.desired == other.desired
            and self.interferer_links == other.interferer_links
            and self.interferers == other.interferers
            and self.noise_power_w == other.noise_power_w
            and self.ut_efficiency == other.ut_efficiency
            and self.seed == other.seed
        )


def make_channel(geometry: ArrayGeometry, link: SatelliteLink, rx_gain_linear: float) -> ChannelVector:
    chi = link_budget_gain(link, rx_gain_linear)
    return ChannelVector(chi * steering_vector(geometry, link.doa), chi, link.doa)


def build_scenario(
    config: ScenarioConfig,
    interferer_doas: list[Doa],
    interferer_ranges_m: list[float],
    seed: int | None = None,
) -> Scenario:
    """Assemble a scenario from explicit interferer positions.

    The UT receive gain toward every satellite is the pattern of the
    initial beam ``v_d`` (pointed at the desired satellite).
    """
    from .beamform import beam_gain

    config.validate()
    if len(interferer_doas) != len(interferer_ranges_m):
        raise ConfigError("one range per interferer DOA required")
    geometry = config.geometry()
    m = geometry.num_elements
    if len(interferer_doas) >= m:
        raise ConfigError(f"need K < M, got K={len(interferer_doas)}, M={m}")
    eta = config.ut_efficiency
    desired_doa = Doa(config.desired_doa_az, config.desired_doa_el)
    w_init = steering_vector(geometry, desired_doa)

    def link(eirp, range_m, doa):
        return SatelliteLink(eirp, range_m, config.carrier_hz, config.bandwidth_hz, doa)

    d_link = link(config.desired_eirp_dbw, config.desired_range_km * 1e3, desired_doa)
    desired = make_channel(geometry, d_link, beam_gain(geometry, w_init, desired_doa, eta))
    i_links = tuple(
        link(config.interferer_eirp_dbw, r, doa) for doa, r in zip(interferer_doas, interferer_ranges_m)
    )
    interferers = tuple(make_channel(geometry, lk, beam_gain(geometry, w_init, lk.doa, eta)) for lk in i_links)
    return Scenario(
        geometry=geometry,
        desired_link=d_link,
        desired=desired,
        interferer_links=i_links,
        interferers=interferers,
        noise_power_w=noise_power(config.noise_temp_k, config.bandwidth_hz),
        ut_efficiency=eta,
        seed=seed,
        noise_temp_k=config.noise_temp_k,
    )


def sample_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Draw interferer positions and build the scenario.

    Per interferer, in order: azimuth, elevation (uniform on
    ``[-doa_abs_max, doa_abs_max]``), then range (uniform in km).
    """
    config.validate()
    rng = np.random.default_rng(seed)
    lim = config.interferer_doa_abs_max_deg
    doas, ranges = [], []
    for _ in range(config.interferer_count):
        az, el = rng.uniform(-lim, lim, size=2)
        r_km = rng.uniform(config.interferer_range_km_min, config.interferer_range_km_max)
        doas.append(Doa(float(az), float(el)))
        ranges.append(float(r_km) * 1e3)
    return build_scenario(config, doas, ranges, seed=seed)


def perturb_csi(h: ChannelVector, error_variance: float, seed) -> np.ndarray:
    """Estimated desired channel under imperfect CSI.

    The error is drawn relative to the unit steering direction,
    ``h_hat = chi * (v + e)`` with ``e ~ CN(0, error_variance * I)``.
    """
    if error_variance < 0:
        raise ConfigError("error variance must be >= 0")
    v = np.asarray(h.coefficients)
    if error_variance == 0 or h.gain_scalar == 0:
        return v.copy()
    rng = np.random.default_rng(seed)
    m = v.shape[0]
    scale = math.sqrt(error_variance / 2)
    e = scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return v + h.gain_scalar * e
