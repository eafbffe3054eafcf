"""Shared domain types, physical constants and small numerical primitives.

Everything in this module is immutable after construction and safe to share
across workers.  All quantities are SI internally.

Radius conventions (both appear in fountain work and are easy to mix up):

* atomic cloud radii ``w0``, ``w2L`` use the 1/e *density* convention,
  W(r) = exp(-r^2/w^2);
* laser beam radii ``w_det`` use the 1/e^2 *intensity* convention,
  I(r) = exp(-2 r^2/w^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# CODATA 2018 reference values.
PLANCK_H = 6.62607015e-34          # J s (exact)
SPEED_OF_LIGHT = 299792458.0       # m/s (exact)
CS133_MASS = 2.2069469514537e-25   # kg, 132.905451961 u
CS_CLOCK_FREQUENCY = 9192631770.0  # Hz (exact)
G_EARTH = 9.80665                  # m/s^2, standard gravity

# Power series for J0/J1 are accurate to ~1e-15 on [0, BESSEL_X_MAX]; all
# uses in this package have k*r well inside that.
BESSEL_X_MAX = 6.0
_BESSEL_TERMS = 30


@dataclass(frozen=True)
class PhysicalConstants:
    """Fundamental constants plus the derived recoil scale of the clock.

    ``nu_r`` is the photon-recoil energy of one clock-frequency microwave
    photon expressed as a frequency, h nu^2 / (2 m c^2); ``k`` is the
    microwave wavenumber 2 pi nu / c.
    """

    h: float
    m_cs: float
    c: float
    nu_clock: float
    nu_r: float
    k: float


def derive_constants(h: float = PLANCK_H,
                     m_cs: float = CS133_MASS,
                     c: float = SPEED_OF_LIGHT,
                     nu_clock: float = CS_CLOCK_FREQUENCY) -> PhysicalConstants:
    """Build a :class:`PhysicalConstants` with nu_r and k populated."""
    for name, value in (("h", h), ("m_cs", m_cs), ("c", c),
                        ("nu_clock", nu_clock)):
        if not value > 0.0:
            raise InvalidArgumentError(f"{name} must be positive, got {value}")
    nu_r = h * nu_clock**2 / (2.0 * m_cs * c**2)
    k = 2.0 * math.pi * nu_clock / c
    return PhysicalConstants(h=h, m_cs=m_cs, c=c, nu_clock=nu_clock,
                             nu_r=nu_r, k=k)


def _bessel_series(x, coeffs):
    # Horner evaluation in q = x^2/4; exact enough for x <= BESSEL_X_MAX.
    q = np.square(x) * 0.25
    acc = np.zeros_like(q) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * q + c
    return acc


def _j0_coeffs():
    c = [1.0]
    for kk in range(1, _BESSEL_TERMS):
        c.append(-c[-1] / (kk * kk))
    return np.array(c)


def _j1_coeffs():
    c = [0.5]
    for kk in range(1, _BESSEL_TERMS):
        c.append(-c[-1] / (kk * (kk + 1)))
    return np.array(c)


_J0_COEFFS = _j0_coeffs()
_J1_COEFFS = _j1_coeffs()


def _check_bessel_domain(x):
    if np.any(x < 0.0):
        raise InvalidArgumentError("bessel argument must be non-negative")
    if np.any(x > BESSEL_X_MAX):
        raise InvalidArgumentError(
            f"bessel argument outside supported domain [0, {BESSEL_X_MAX}]")


def bessel_j0(x):
    """J0(x) on [0, 6], scalar or ndarray, absolute error < 1e-12."""
    arr = np.asarray(x, dtype=float)
    _check_bessel_domain(arr)
    out = _bessel_series(arr, _J0_COEFFS)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def bessel_j1(x):
    """J1(x) on [0, 6], scalar or ndarray, absolute error < 1e-12."""
    arr = np.asarray(x, dtype=float)
    _check_bessel_domain(arr)
    out = arr * _bessel_series(arr, _J1_COEFFS)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def bessel_j(order: int, x):
    """Bessel function of the first kind, orders 0 and 1 only."""
    if order == 0:
        return bessel_j0(x)
    if order == 1:
        return bessel_j1(x)
    raise InvalidArgumentError(f"only orders 0 and 1 are supported, got {order}")


@dataclass(frozen=True)
class FountainGeometry:
    """Aperture radii and axial positions of the fountain beam path.

    ``z_cutoff`` is the axial distance from the Ramsey-cavity midplane to
    the endcap corners where the cutoff waveguides meet the endcaps;
    ``z_sel`` locates the selection-cavity lower aperture (negative, below
    the cavity).  ``l_det`` is the effective lever arm converting a launch
    offset into an equivalent fountain tilt (offset = l_det * tilt).
    """

    a: float = 5.0e-3          # Ramsey cavity aperture radius (m)
    a_sel: float = 5.0e-3      # selection-cavity lower aperture radius (m)
    a_cutoff: float = 5.0e-3   # cutoff waveguide radius (m)
    z_cutoff: float = 0.0215   # |z| of endcap corners from midplane (m)
    z_sel: float = -0.44       # z of selection aperture from midplane (m)
    l_det: float = 3.7         # offset-to-tilt conversion baseline (m)

    def __post_init__(self):
        for name in ("a", "a_sel", "a_cutoff", "l_det"):
            if not getattr(self, name) > 0.0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not self.z_cutoff >= 0.0:
            raise InvalidArgumentError("z_cutoff must be non-negative")


@dataclass(frozen=True)
class TimingSchedule:
    """Passage times of the ballistic flight, all measured from launch.

    t1/t2 are the Ramsey cavity passages, t1L/t2L the lower-aperture
    passages on ascent/descent, t_d the detection time.
    """

    t1: float
    t2: float
    t1l: float
    t2l: float
    t_d: float

    def __post_init__(self):
        ok = 0.0 < self.t1l <= self.t1 < self.t2 <= self.t2l <= self.t_d
        if not ok:
            raise InvalidArgumentError(
                "timing must satisfy 0 < t1L <= t1 < t2 <= t2L <= t_d, got "
                f"t1L={self.t1l}, t1={self.t1}, t2={self.t2}, "
                f"t2L={self.t2l}, t_d={self.t_d}")

    @property
    def ramsey_time(self) -> float:
        return self.t2 - self.t1


def aperture_passage_times(timing: TimingSchedule, dz: float,
                           g: float = G_EARTH) -> tuple[float, float]:
    """Times at which the ballistic flight crosses the plane ``dz`` metres
    above the Ramsey-cavity midplane.

    Returns (ascending, descending).  The vertical launch speed is fixed by
    the two cavity passages: the apex sits at (t1 + t2)/2.
    """
    big_t = timing.ramsey_time
    disc = big_t * big_t - 8.0 * dz / g
    if disc < 0.0:
        raise InvalidArgumentError(
            f"plane at dz={dz} m is above the apex and is never crossed")
    root = math.sqrt(disc)
    s_up = 0.5 * (big_t - root)
    s_down = 0.5 * (big_t + root)
    return timing.t1 + s_up, timing.t1 + s_down


@dataclass(frozen=True)
class CloudState:
    """Launch-time state of the atomic cloud.

    ``w0`` is the 1/e density radius, ``u = sqrt(2 kB T / m)`` the thermal
    velocity; the density and velocity weights are exp(-r^2/w0^2) and
    exp(-v^2/u^2).  ``r_offset`` is a rigid transverse displacement of the
    launch distribution, ``tilt`` the fountain tilt (both 2-vectors).
    """

    w0: float
    u: float
    r_offset: tuple[float, float] = (0.0, 0.0)
    tilt: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.w0 > 0.0:
            raise InvalidArgumentError("w0 must be positive")
        if not self.u >= 0.0:
            raise InvalidArgumentError("u must be non-negative")

    def position_weight(self, r):
        """Density weight at transverse position(s) r, 1 at the centre."""
        r = np.asarray(r, dtype=float)
        d = r - np.asarray(self.r_offset)
        return np.exp(-np.sum(d * d, axis=-1) / self.w0**2)

    def velocity_weight(self, v):
        """Thermal weight at transverse velocity(ies) v, 1 at rest."""
        v = np.asarray(v, dtype=float)
        if self.u == 0.0:
            return np.where(np.sum(v * v, axis=-1) == 0.0, 1.0, 0.0)
        return np.exp(-np.sum(v * v, axis=-1) / self.u**2)


def w2l(cloud: CloudState, timing: TimingSchedule) -> float:
    """1/e cloud radius at the lower-aperture passage on descent,
    sqrt(w0^2 + u^2 t2L^2)."""
    return math.hypot(cloud.w0, cloud.u * timing.t2l)


@dataclass(frozen=True)
class DetectionProfile:
    """Detection-beam weighting applied at the detection time.

    ``mode`` is "uniform" (W_d = 1), "gaussian" (radially symmetric beam of
    1/e^2 intensity radius ``w_det``) or "gaussian_1d" (a horizontal light
    sheet, Gaussian along one transverse axis only; the beam axis is taken
    along x).  ``collection_radius``, when set, multiplies in a radially
    symmetric Gaussian fluorescence-collection weight of that 1/e^2 radius.
    """

    mode: str = "uniform"
    w_det: float = 7.0e-3
    collection_radius: float | None = None

    def __post_init__(self):
        if self.mode not in ("uniform", "gaussian", "gaussian_1d"):
            raise InvalidArgumentError(
                "detection mode must be 'uniform', 'gaussian' or "
                f"'gaussian_1d', got {self.mode!r}")
        if self.mode != "uniform" and not self.w_det > 0.0:
            raise InvalidArgumentError("w_det must be positive")
        if self.collection_radius is not None and not self.collection_radius > 0.0:
            raise InvalidArgumentError("collection_radius must be positive")

    @property
    def is_radial(self) -> bool:
        return self.mode != "gaussian_1d"

    def weight(self, r):
        """Detection weight at radial distance(s) r; 1 on axis.  Only
        defined for azimuthally symmetric modes."""
        if not self.is_radial:
            raise InvalidArgumentError(
                "radial weight undefined for gaussian_1d; use weight_xy")
        r = np.asarray(r, dtype=float)
        w = np.ones_like(r)
        if self.mode == "gaussian":
            w = np.exp(-2.0 * r * r / self.w_det**2)
        if self.collection_radius is not None:
            w = w * np.exp(-2.0 * r * r / self.collection_radius**2)
        return w

    def weight_and_slope(self, r):
        """(W_d, dW_d/dr) at radial distance(s) r, radial modes only."""
        w = self.weight(r)
        r = np.asarray(r, dtype=float)
        g = 0.0
        if self.mode == "gaussian":
            g = g - 4.0 / self.w_det**2
        if self.collection_radius is not None:
            g = g - 4.0 / self.collection_radius**2
        return w, w * g * r

    def weight_xy(self, points):
        """Detection weight at transverse position(s), shape (..., 2)."""
        p = np.asarray(points, dtype=float)
        r_sq = np.sum(p * p, axis=-1)
        if self.mode == "gaussian":
            w = np.exp(-2.0 * r_sq / self.w_det**2)
        elif self.mode == "gaussian_1d":
            w = np.exp(-2.0 * p[..., 0]**2 / self.w_det**2)
        else:
            w = np.ones_like(r_sq)
        if self.collection_radius is not None:
            w = w * np.exp(-2.0 * r_sq / self.collection_radius**2)
        return w


@dataclass(frozen=True)
class MicrowaveDrive:
    """Scaled microwave amplitudes of the two Ramsey passages.

    b = 1 corresponds to a pi/2 pulse averaged over atoms uniformly
    illuminating the aperture; ``eta`` converts that average to the on-axis
    pulse area (1.120 for a 5 mm aperture).  Feed amplitudes/phases and the
    cavity linewidth/detuning feed the phase-imbalance suppression estimate.
    """

    b1: float = 0.9386
    b2: float = 0.9386
    eta: float = 1.120
    feed_amplitudes: tuple[float, float] = (1.0, 1.0)
    feed_phases: tuple[float, float] = (0.0, 0.0)
    cavity_linewidth: float = CS_CLOCK_FREQUENCY / 19000.0
    cavity_detuning: float = 0.0

    def __post_init__(self):
        if self.b1 < 0.0 or self.b2 < 0.0:
            raise InvalidArgumentError("b1 and b2 must be non-negative")
        if not self.eta > 0.0:
            raise InvalidArgumentError("eta must be positive")
        if abs(self.feed_phases[0] - self.feed_phases[1]) >= math.pi:
            raise InvalidArgumentError("feed phase difference must be < pi")
        if not self.cavity_linewidth > 0.0:
            raise InvalidArgumentError("cavity_linewidth must be positive")
