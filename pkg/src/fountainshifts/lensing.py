"""Microwave lensing frequency shift of a fountain clock.

The standing wave in the Ramsey cavity acts as a weak lens on the atomic
wavefunctions: the two dressed states acquire opposite radial velocity
kicks during the first cavity passage, and the fountain apertures convert
the resulting focusing/defocusing into a small change of transition
probability, hence a frequency shift of order the microwave recoil
frequency nu_r.

Two evaluations are provided:

* :func:`analytic_shift` - closed form valid for a quadratic (k^2) kick,
  uniform detection, flat tipping angle and unbounded first-passage
  integration;
* :func:`full_shift` - first order in nu_r with circular apertures, the
  all-orders kick profile, position-dependent tipping angle and optional
  Gaussian detection weighting.  The change in transition probability
  splits into a line integral around the lower aperture rim (atoms pushed
  across the clipping edge) and a surface integral over the aperture (the
  kick moving atoms through the tipping-angle and detection profiles).

:func:`brute_force_shift` evaluates the pre-expansion transition
probability difference directly on a Riemann grid, with the two signed
velocity kicks applied explicitly to the trajectories; it is the
independent oracle for the quadrature path.

Geometry of the reduced integrals: with straight-line trajectories the
state of an atom is fixed by its position r1 at the first passage and its
undeflected position r2L0 at the lower aperture on descent.  On-axis
clouds make the integrand depend only on |r1|, |r2L0| and the relative
azimuth, so the quadrature is a tensor product of two radial
Gauss-Legendre rules and a periodic trapezoid rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (CloudState, DetectionProfile, FountainGeometry,
                   MicrowaveDrive, PhysicalConstants, TimingSchedule,
                   bessel_j0, bessel_j1)
from .errors import (AccuracyNotReachedError, DegenerateAmplitudeError,
                     DegenerateContrastError, InvalidArgumentError)

ORDER_MODES = ("all_orders", "k2_truncated")
R1_DOMAINS = ("clipped_to_a", "unbounded")

# Gaussian tails are dropped beyond this many 1/e radii (mass error < 1e-15).
_TAIL_RADII = 6.0
_CONTRAST_FLOOR = 1e-6


@dataclass(frozen=True)
class LensingConfig:
    """Complete description of one lensing evaluation."""

    constants: PhysicalConstants
    geometry: FountainGeometry
    timing: TimingSchedule
    cloud: CloudState
    drive: MicrowaveDrive
    detection: DetectionProfile = DetectionProfile()
    order: str = "all_orders"
    r1_domain: str = "clipped_to_a"
    include_lower_aperture: bool = False

    def __post_init__(self):
        if self.order not in ORDER_MODES:
            raise InvalidArgumentError(f"order must be one of {ORDER_MODES}")
        if self.r1_domain not in R1_DOMAINS:
            raise InvalidArgumentError(
                f"r1_domain must be one of {R1_DOMAINS}")


@dataclass(frozen=True)
class LensingResult:
    """Transition-probability breakdown and the resulting shift.

    delta_p_term1/term2 are the rim and surface contributions to the
    normalized change in transition probability; n is the detected-atom
    measure, delta_p_r the Ramsey fringe amplitude.  shift_rel is
    (term1 + term2) / (pi T delta_p_r) / nu.
    """

    delta_p_term1: float
    delta_p_term2: float
    n: float
    delta_p_r: float
    shift_rel: float
    quadrature_error: float


@dataclass(frozen=True)
class ScanPoint:
    """One amplitude-scan row; ``error`` holds a message when the point
    failed instead of a result."""

    b2: float
    result: LensingResult | None
    error: str | None = None


def tipping_angle(r2, b2: float, eta: float, k: float):
    """Tipping angle (pi/2) b2 eta J0(k |r2|) of the downward passage."""
    r2 = np.asarray(r2, dtype=float)
    radius = np.sqrt(np.sum(r2 * r2, axis=-1)) if r2.shape else r2
    theta = 0.5 * math.pi * b2 * eta * bessel_j0(k * radius)
    return float(theta) if np.ndim(theta) == 0 else theta


def velocity_kick(r1, drive: MicrowaveDrive,
                  constants: PhysicalConstants,
                  aperture_radius: float | None = None) -> np.ndarray:
    """Radial velocity change of the upper dressed state during the first
    cavity passage, magnitude b1 eta pi^2 (nu_r/k) J1(k r1), directed
    outward.  The lower dressed state receives the opposite kick."""
    vec = np.asarray(r1, dtype=float)
    radius = math.hypot(vec[0], vec[1])
    if aperture_radius is not None and radius > aperture_radius:
        raise InvalidArgumentError(
            f"|r1|={radius} exceeds the aperture radius {aperture_radius}")
    if radius == 0.0:
        return np.zeros(2)
    mag = _kick_magnitude(radius, drive.b1, drive.eta, constants,
                          "all_orders")
    return (mag / radius) * vec


def _kick_magnitude(radius, b1, eta, constants, order):
    pref = b1 * eta * math.pi**2 * constants.nu_r
    if order == "k2_truncated":
        return pref * 0.5 * np.asarray(radius, dtype=float)
    return (pref / constants.k) * bessel_j1(constants.k *
                                            np.asarray(radius, dtype=float))


def _sin_tip(radius, b, eta, constants, order):
    """sin(theta(r)) and its radial derivative for one pulse."""
    if order == "k2_truncated":
        theta = 0.5 * math.pi * b * eta
        s = math.sin(theta) * np.ones_like(np.asarray(radius, dtype=float))
        return s, np.zeros_like(s)
    x = constants.k * np.asarray(radius, dtype=float)
    theta = 0.5 * math.pi * b * eta * bessel_j0(x)
    dtheta = -0.5 * math.pi * b * eta * constants.k * bessel_j1(x)
    return np.sin(theta), np.cos(theta) * dtheta


def analytic_shift(config: LensingConfig) -> float:
    """Closed-form shift delta_nu/nu for the quadratic-kick, uniform
    detection, flat tipping-angle approximation."""
    cst, cloud, tim = config.constants, config.cloud, config.timing
    b1, eta = config.drive.b1, config.drive.eta
    a = config.geometry.a
    half_area = 0.5 * math.pi * b1 * eta
    sin_half = math.sin(half_area)
    if abs(sin_half) < 1e-6:
        raise DegenerateAmplitudeError(
            f"fringe contrast vanishes at b1*eta = {b1 * eta}")
    w2l_sq = cloud.w0**2 + cloud.u**2 * tim.t2l**2
    spatial = (a**2 * (cloud.w0**2 + tim.t1 * tim.t2l * cloud.u**2)
               * (tim.t2l - tim.t1)
               / (w2l_sq**2 * math.expm1(a**2 / w2l_sq) * tim.ramsey_time))
    return (half_area / sin_half) * spatial * cst.nu_r / cst.nu_clock


def _check_on_axis(config):
    if any(config.cloud.r_offset) or any(config.cloud.tilt):
        raise InvalidArgumentError(
            "lensing evaluation requires an on-axis, untilted cloud; "
            "offsets and tilts are handled by the cavity-phase module")


def _r1_max(config):
    if config.r1_domain == "clipped_to_a":
        return config.geometry.a
    cloud, tim = config.cloud, config.timing
    w1 = math.hypot(cloud.w0, cloud.u * tim.t1)
    return max(config.geometry.a, _TAIL_RADII * w1)


def _gauss_nodes(n, lo, hi):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


# Nodes averaging over the global azimuth when a 1d detection beam breaks
# the rotational symmetry; the integrand is a short cosine series in the
# global angle, so a small fixed trapezoid rule is already exact.
_N_GLOBAL_AZIMUTH = 16


class _DetectionOnGrid:
    """Detection weight and its kick response on the (rho, phi) grid,
    averaged over the global azimuth for beam profiles that need it."""

    def __init__(self, det: DetectionProfile, gd: float, phi: np.ndarray):
        self.det = det
        self.gd = gd
        if det.is_radial:
            self.psi = np.zeros(1)
        else:
            self.psi = 2.0 * math.pi * (np.arange(_N_GLOBAL_AZIMUTH)
                                        + 0.5) / _N_GLOBAL_AZIMUTH
        self.cos_psi = np.cos(self.psi)
        # cos(psi + dphi) expanded once per grid
        self.cos_psi_phi = (np.cos(self.psi)[:, None] * np.cos(phi)[None, :]
                            - np.sin(self.psi)[:, None] * np.sin(phi)[None, :])

    def average(self, x, rho, rd0, dotd):
        """(W_d, response) averaged over the global azimuth.

        ``response`` is the directional derivative of W_d along the kick
        direction (unit radial at the first passage), per unit kick
        displacement at the detection time.
        """
        det, gd = self.det, self.gd
        if det.is_radial:
            wd, wd_slope = det.weight_and_slope(rd0)
            return wd, dotd * wd_slope
        wd_acc = 0.0
        resp_acc = 0.0
        for j, cpsi in enumerate(self.cos_psi):
            x_d = (1.0 - gd) * x * cpsi + gd * rho * self.cos_psi_phi[j]
            w_beam = np.exp(-2.0 * x_d * x_d / det.w_det**2)
            resp_beam = (-4.0 * x_d / det.w_det**2) * w_beam * cpsi
            if det.collection_radius is not None:
                w_coll = np.exp(-2.0 * rd0 * rd0 / det.collection_radius**2)
                resp = (resp_beam * w_coll
                        + w_beam * (-4.0 * rd0 / det.collection_radius**2)
                        * w_coll * dotd)
                w_beam = w_beam * w_coll
            else:
                resp = resp_beam
            wd_acc = wd_acc + w_beam
            resp_acc = resp_acc + resp
        n = len(self.cos_psi)
        return wd_acc / n, resp_acc / n


def _evaluate_grid(config: LensingConfig, n_rad: int, n_phi: int):
    """One fixed-grid evaluation; returns unnormalized integrals
    (term1, term2, n, delta_p_r)."""
    cst, cloud, tim, det = (config.constants, config.cloud, config.timing,
                            config.detection)
    geom, drive = config.geometry, config.drive
    a = geom.a
    tau = tim.t2l - tim.t1
    alpha = tim.t2l / tau
    beta = tim.t1 / tau
    beta_sel = (tim.t1 - tim.t1l) / tau
    g2 = tim.ramsey_time / tau
    gd = (tim.t_d - tim.t1) / tau
    inv_u2 = 1.0 / cloud.u**2
    inv_w02 = 1.0 / cloud.w0**2

    x_nodes, x_weights = _gauss_nodes(n_rad, 0.0, _r1_max(config))
    rho_nodes, rho_weights = _gauss_nodes(n_rad, 0.0, a)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    w_phi = 2.0 * math.pi / n_phi
    cphi = np.cos(phi)

    sin1_x, _ = _sin_tip(x_nodes, drive.b1, drive.eta, cst, config.order)
    kick_x = _kick_magnitude(x_nodes, drive.b1, drive.eta, cst, config.order)

    rho_c = rho_nodes[:, None] * cphi[None, :]      # (n_rad, n_phi)
    rho_sq = rho_nodes[:, None] ** 2
    rho_grid = rho_nodes[:, None] * np.ones_like(cphi)[None, :]
    rim_rho = a * np.ones_like(cphi)

    det_grid = _DetectionOnGrid(det, gd, phi)

    n_acc = 0.0
    contrast_acc = 0.0
    term1_acc = 0.0
    term2_acc = 0.0
    for i, x in enumerate(x_nodes):
        wx = x_weights[i] * x
        x_sq = x * x
        cross = 2.0 * x * rho_c
        # interior of the lower aperture
        v_sq = (x_sq + rho_sq - cross) / tau**2
        r0_sq = alpha**2 * x_sq + beta**2 * rho_sq - alpha * beta * cross
        w = np.exp(-v_sq * inv_u2 - r0_sq * inv_w02)
        if config.include_lower_aperture:
            r1l_sq = ((1.0 + beta_sel)**2 * x_sq + beta_sel**2 * rho_sq
                      - (1.0 + beta_sel) * beta_sel * cross)
            w = w * (r1l_sq <= geom.a_sel**2)
        r20 = np.sqrt((1.0 - g2)**2 * x_sq + g2**2 * rho_sq
                      + (1.0 - g2) * g2 * cross)
        rd0 = np.sqrt((1.0 - gd)**2 * x_sq + gd**2 * rho_sq
                      + (1.0 - gd) * gd * cross)
        dotd = np.where(rd0 > 1e-300,
                        ((1.0 - gd) * x + gd * rho_c) / np.maximum(rd0, 1e-300),
                        0.0)
        wd, wd_response = det_grid.average(x, rho_grid, rd0, dotd)
        sin2, dsin2 = _sin_tip(r20, drive.b2, drive.eta, cst, config.order)

        cell = (rho_weights[:, None] * rho_nodes[:, None]) * w_phi * wx
        w_full = w * wd
        n_acc += np.sum(cell * w_full)
        contrast_acc += sin1_x[i] * np.sum(cell * w_full * sin2)

        # surface term: first-order response of sin(theta(r2)) W_d(r_d)
        # to the outward kick, with safe unit vectors on the axis
        dot2 = np.where(r20 > 1e-300,
                        ((1.0 - g2) * x + g2 * rho_c) / np.maximum(r20, 1e-300),
                        0.0)
        response = (tim.ramsey_time * dot2 * dsin2 * wd
                    + (tim.t_d - tim.t1) * wd_response * sin2)
        term2_acc += -0.5 * kick_x[i] * np.sum(cell * w * response)

        # rim term: line integral around the lower aperture at rho = a
        cross_r = 2.0 * x * a * cphi
        v_sq_r = (x_sq + a * a - cross_r) / tau**2
        r0_sq_r = alpha**2 * x_sq + beta**2 * a * a - alpha * beta * cross_r
        w_r = np.exp(-v_sq_r * inv_u2 - r0_sq_r * inv_w02)
        if config.include_lower_aperture:
            r1l_sq_r = ((1.0 + beta_sel)**2 * x_sq + beta_sel**2 * a * a
                        - (1.0 + beta_sel) * beta_sel * cross_r)
            w_r = w_r * (r1l_sq_r <= geom.a_sel**2)
        r20_r = np.sqrt((1.0 - g2)**2 * x_sq + g2**2 * a * a
                        + (1.0 - g2) * g2 * cross_r)
        rd0_r = np.sqrt((1.0 - gd)**2 * x_sq + gd**2 * a * a
                        + (1.0 - gd) * gd * cross_r)
        dotd_r = np.where(rd0_r > 1e-300,
                          ((1.0 - gd) * x + gd * a * cphi)
                          / np.maximum(rd0_r, 1e-300),
                          0.0)
        wd_r, _ = det_grid.average(x, rim_rho, rd0_r, dotd_r)
        sin2_r, _ = _sin_tip(r20_r, drive.b2, drive.eta, cst, config.order)
        term1_acc += (0.5 * a * tau * kick_x[i] * wx * w_phi
                      * np.sum(cphi * w_r * wd_r * sin2_r))

    return term1_acc, term2_acc, n_acc, contrast_acc


def full_shift(config: LensingConfig, tol: float = 1e-3,
               base_grid: tuple[int, int] = (24, 48),
               max_doublings: int = 4) -> LensingResult:
    """First-order-in-nu_r shift with apertures, all-orders kick and
    detection weighting.

    The grid (radial nodes, azimuthal nodes) is doubled until the relative
    change of the shift falls below ``tol``; the last relative change is
    reported as the quadrature error.
    """
    if not tol > 0.0:
        raise InvalidArgumentError("tolerance must be positive")
    _check_on_axis(config)
    n_rad, n_phi = base_grid
    previous = None
    for level in range(max_doublings + 1):
        term1, term2, n, contrast = _evaluate_grid(config, n_rad, n_phi)
        if not n > 0.0:
            raise DegenerateContrastError("no detected-atom measure")
        delta_p_r = contrast / n
        if abs(delta_p_r) < _CONTRAST_FLOOR:
            raise DegenerateContrastError(
                f"Ramsey fringe amplitude {delta_p_r:.2e} below "
                f"{_CONTRAST_FLOOR:.0e}")
        shift = ((term1 + term2) / n
                 / (math.pi * config.timing.ramsey_time * delta_p_r)
                 / config.constants.nu_clock)
        result = LensingResult(
            delta_p_term1=term1 / n, delta_p_term2=term2 / n, n=n,
            delta_p_r=delta_p_r, shift_rel=shift, quadrature_error=0.0)
        if previous is not None:
            change = abs(shift - previous.shift_rel)
            rel = change / max(abs(shift), 1e-300) if shift != 0.0 else 0.0
            result = replace(result, quadrature_error=rel)
            if rel <= tol:
                return result
        previous = result
        n_rad *= 2
        n_phi *= 2
    raise AccuracyNotReachedError(
        f"quadrature did not reach tolerance {tol} after "
        f"{max_doublings} grid doublings", best=previous)


def amplitude_scan(config: LensingConfig, b2_values,
                   tol: float = 1e-3) -> list[ScanPoint]:
    """Evaluate :func:`full_shift` for each second-pulse amplitude.

    Failures (for example vanishing fringe contrast near b2*eta = 2n) are
    recorded per point without aborting the scan.
    """
    points = []
    for b2 in b2_values:
        if not b2 > 0.0:
            raise InvalidArgumentError(f"b2 values must be positive, got {b2}")
        cfg = replace(config, drive=replace(config.drive, b2=float(b2)))
        try:
            points.append(ScanPoint(b2=float(b2), result=full_shift(cfg, tol)))
        except (DegenerateContrastError, DegenerateAmplitudeError,
                AccuracyNotReachedError) as exc:
            points.append(ScanPoint(b2=float(b2), result=None, error=str(exc)))
    return points


def _disk_points(radius, n_cells):
    """Cell-centred square grid restricted to a disk; returns (points,
    cell area)."""
    h = 2.0 * radius / n_cells
    centers = -radius + h * (np.arange(n_cells) + 0.5)
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = np.einsum("ij,ij->i", pts, pts) <= radius * radius
    return pts[inside], h * h


def brute_force_shift(config: LensingConfig, n_cells: int = 32,
                      kick_scale: float = 1.0):
    """Direct Riemann-sum evaluation of the transition-probability change
    with the two signed dressed-state kicks applied explicitly.

    Integration runs over the first-passage position r1 and the actual
    (post-kick) position at the lower aperture, so both dressed states
    share one clipping domain and the kick enters through the smooth
    launch weights.  The central difference of the two signed evaluations
    isolates the part odd in nu_r.  Returns a dict with delta_p, shift_rel
    and the detected measure.
    """
    _check_on_axis(config)
    cst, cloud, tim, det = (config.constants, config.cloud, config.timing,
                            config.detection)
    geom, drive = config.geometry, config.drive
    tau = tim.t2l - tim.t1
    r1_pts, da1 = _disk_points(_r1_max(config), n_cells)
    q_pts, da2 = _disk_points(geom.a, n_cells)

    inv_u2 = 1.0 / cloud.u**2
    inv_w02 = 1.0 / cloud.w0**2
    sums = {+1: 0.0, -1: 0.0}
    n_sum = 0.0
    contrast_sum = 0.0

    sin1_r1, _ = _sin_tip(np.hypot(r1_pts[:, 0], r1_pts[:, 1]),
                          drive.b1, drive.eta, cst, "all_orders")
    for i, r1 in enumerate(r1_pts):
        radius1 = math.hypot(r1[0], r1[1])
        kick_mag = kick_scale * _kick_magnitude(
            radius1, drive.b1, drive.eta, cst, "all_orders")
        kick_vec = (kick_mag / radius1) * r1 if radius1 > 0.0 else np.zeros(2)
        v_post = (q_pts - r1) / tau
        for sign in (+1, -1):
            v_pre = v_post - sign * kick_vec
            r0 = r1 - v_pre * tim.t1
            w = (np.exp(-np.einsum("ij,ij->i", v_pre, v_pre) * inv_u2
                        - np.einsum("ij,ij->i", r0, r0) * inv_w02))
            if config.include_lower_aperture:
                r1l = r1 - v_pre * (tim.t1 - tim.t1l)
                w = w * (np.einsum("ij,ij->i", r1l, r1l) <= geom.a_sel**2)
            r2 = r1 + v_post * tim.ramsey_time
            rd = r1 + v_post * (tim.t_d - tim.t1)
            sin2, _ = _sin_tip(np.hypot(r2[:, 0], r2[:, 1]),
                               drive.b2, drive.eta, cst, "all_orders")
            wd = det.weight_xy(rd)
            sums[sign] += np.sum(w * sin2 * wd)
            if sign == +1:
                # kick-free reference for the normalization and contrast
                v0 = v_post
                r0_0 = r1 - v0 * tim.t1
                w0 = np.exp(-np.einsum("ij,ij->i", v0, v0) * inv_u2
                            - np.einsum("ij,ij->i", r0_0, r0_0) * inv_w02)
                if config.include_lower_aperture:
                    r1l0 = r1 - v0 * (tim.t1 - tim.t1l)
                    w0 = w0 * (np.einsum("ij,ij->i", r1l0, r1l0)
                               <= geom.a_sel**2)
                n_sum += np.sum(w0 * wd)
                contrast_sum += sin1_r1[i] * np.sum(w0 * wd * sin2)

    if not n_sum > 0.0:
        raise DegenerateContrastError("no detected-atom measure")
    delta_p_r = contrast_sum / n_sum
    # average of the two signed transition-probability changes; the
    # measure (da1*da2) cancels in every ratio
    delta_p_plus = (sums[-1] - sums[+1]) / (4.0 * n_sum)
    delta_p_minus = -delta_p_plus
    delta_p = 0.5 * (delta_p_plus - delta_p_minus)
    shift = (delta_p / (math.pi * tim.ramsey_time * delta_p_r)
             / cst.nu_clock / kick_scale)
    return {"delta_p": delta_p / kick_scale, "shift_rel": shift,
            "n": n_sum * da1 * da2, "delta_p_r": delta_p_r}
