"""Distributed-cavity-phase (DCP) frequency shifts.

The microwave phase inside the Ramsey cavity varies with position; moving
atoms sample different phases on their ascending and descending passages,
which is a residual first-order Doppler shift.  Near the axis the phase of
each azimuthal Fourier component goes like r^m cos(m phi), so only m = 0,
1, 2 matter.

This module propagates a ballistic atom ensemble through the apertures and
accumulates the two-passage Ramsey phase difference for a pluggable
:class:`PhaseField`, weighted by the tipping angles of the two pulses.  It
also implements the measurement-style procedures built on top of that
model: the single-feed tilt differential, the feed-phase-imbalance
suppression estimate, and the cutoff-corner clearance bound.

Ensemble sampling is indexed: every atom's draw depends only on its index
and the seed (scrambled Sobol or counter-based Philox), and partial sums
are folded in fixed chunk order, so results are bit-identical for any
worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .core import (CS_CLOCK_FREQUENCY, CloudState, FountainGeometry,
                   G_EARTH, TimingSchedule, aperture_passage_times)
from .errors import (AccuracyNotReachedError, InvalidArgumentError,
                     NoAtomsError, PhaseMapParseError)
from .lensing import LensingConfig, _sin_tip

FEED_MODES = ("both_balanced", "single_phi0", "single_pi", "imbalanced")
SAMPLERS = ("sobol", "philox", "grid")

_N_REPLICATES = 16
_CHUNK = 65536


@dataclass(frozen=True)
class PhaseField:
    """One azimuthal Fourier component of the cavity phase.

    The phase seen at transverse position (r, phi) during a passage is

        amplitude * g_dir(r) * cos(m (phi - orientation))

    where g_dir is the radial profile reduced from the longitudinal one:
    a z-even profile contributes with the same sign on both passages, a
    z-odd profile flips sign between ascent and descent.

    Toy profiles use g(r) = (r/r_scale)^m for m >= 1 and (r/r_scale)^2 for
    m = 0 (the symmetric component has quadratically small transverse
    variation near the axis); tabulated profiles interpolate a sampled
    g(r, z) map.
    """

    m: int
    amplitude: float
    orientation: float = 0.0
    r_scale: float = 5.0e-3
    z_parity: str = "even"
    # tabulated radial profiles per direction (None for toy power laws)
    table_r: tuple[float, ...] | None = None
    table_up: tuple[float, ...] | None = None
    table_down: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.m not in (0, 1, 2):
            raise InvalidArgumentError("azimuthal order m must be 0, 1 or 2")
        if self.z_parity not in ("even", "odd"):
            raise InvalidArgumentError("z_parity must be 'even' or 'odd'")
        if not self.r_scale > 0.0:
            raise InvalidArgumentError("r_scale must be positive")

    @classmethod
    def toy(cls, m: int, amplitude: float, orientation: float = 0.0,
            r_scale: float = 5.0e-3) -> "PhaseField":
        """Analytic toy field: power-law radial profile, z-odd for m = 0
        (the symmetric term arises from axial power flow), z-even
        otherwise."""
        return cls(m=m, amplitude=amplitude, orientation=orientation,
                   r_scale=r_scale, z_parity="odd" if m == 0 else "even")

    def _radial(self, r, direction):
        if self.table_r is not None:
            prof = self.table_up if direction > 0 else self.table_down
            g = np.interp(r, np.asarray(self.table_r), np.asarray(prof))
        else:
            power = self.m if self.m >= 1 else 2
            g = (np.asarray(r, dtype=float) / self.r_scale) ** power
            if direction < 0 and self.z_parity == "odd":
                g = -g
        return g

    def passage_phase(self, points, direction: int):
        """Phase at transverse position(s) (..., 2); direction +1 for the
        ascending passage, -1 for the descending one."""
        p = np.asarray(points, dtype=float)
        r = np.hypot(p[..., 0], p[..., 1])
        phi = np.arctan2(p[..., 1], p[..., 0])
        g = self._radial(r, direction)
        return self.amplitude * g * np.cos(self.m * (phi - self.orientation))


@dataclass(frozen=True)
class FeedConfig:
    """How the cavity feeds are driven.

    Single-feed modes select the sign of the feed-origin m = 1 component
    (feeding at phi = pi flips every odd-m term); balancing the feeds
    cancels it; a residual amplitude imbalance leaves a fraction
    imbalance/2 of the single-feed field.
    """

    mode: str = "both_balanced"
    amplitude_imbalance: float = 0.0
    phase_imbalance: float = 0.0

    def __post_init__(self):
        if self.mode not in FEED_MODES:
            raise InvalidArgumentError(f"feed mode must be one of {FEED_MODES}")

    def field_factor(self, m: int) -> float:
        """Scaling applied to the feed-origin field of azimuthal order m."""
        if self.mode == "single_phi0":
            return 1.0
        if self.mode == "single_pi":
            return -1.0 if m % 2 else 1.0
        if m == 1:
            # balanced feeds cancel the odd gradient term
            return 0.5 * self.amplitude_imbalance if self.mode == "imbalanced" else 0.0
        return 1.0


@dataclass(frozen=True)
class DcpResult:
    delta_p: float
    shift_rel: float
    stat_error: float          # statistical error on shift_rel
    delta_p_error: float
    detected_fraction: float


def dp_to_frequency(delta_p: float, timing: TimingSchedule,
                    fringe_fwhm: float | None = None,
                    nu_clock: float = CS_CLOCK_FREQUENCY) -> float:
    """Convert a transition-probability change to a fractional frequency
    shift via the central-fringe slope, delta_nu = delta_p * 2 FWHM / pi.

    The default fringe width is 1/(2 T) for Ramsey time T.
    """
    if fringe_fwhm is None:
        fringe_fwhm = 1.0 / (2.0 * timing.ramsey_time)
    if not fringe_fwhm > 0.0:
        raise InvalidArgumentError("fringe FWHM must be positive")
    return delta_p * 2.0 * fringe_fwhm / math.pi / nu_clock


def phase_imbalance_residual(single_feed_shift: float,
                             phase_imbalance: float,
                             detuning_ratio: float) -> float:
    """Residual DCP shift of near-balanced feeds near cavity resonance.

    A phase imbalance leaves a fraction imbalance/2 of the single-feed
    field, and tuning within delta_c of resonance suppresses its shift by
    2 delta_c / Gamma, so the residual is the product of the two factors.
    """
    if abs(phase_imbalance) >= 0.1:
        raise InvalidArgumentError("phase imbalance must be below 0.1 rad")
    if abs(detuning_ratio) > 0.5:
        raise InvalidArgumentError("|detuning|/linewidth must be <= 0.5")
    return single_feed_shift * (0.5 * phase_imbalance) * (2.0 * detuning_ratio)


def _chunk_bounds(n):
    edges = list(range(0, n, _CHUNK)) + [n]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def _draw_uniforms(sampler, seed, replicate, start, count):
    """Uniform (0,1) draws for atoms [start, start+count) of a replicate;
    depends only on the indices, never on how work is partitioned."""
    if sampler == "sobol":
        rng = np.random.default_rng(np.random.SeedSequence([seed, replicate]))
        eng = qmc.Sobol(d=4, scramble=True, seed=rng)
        if start:
            eng.fast_forward(start)
        with warnings.catch_warnings():
            # chunk sizes need not be powers of two; scrambling keeps the
            # estimator unbiased either way
            warnings.simplefilter("ignore", UserWarning)
            return eng.random(count)
    if sampler == "philox":
        bitgen = np.random.Philox(key=seed * _N_REPLICATES + replicate)
        if start:
            bitgen = bitgen.advanced(start)
        return np.random.Generator(bitgen).random((count, 4))
    # stratified lattice: van der Corput in prime bases with a random
    # replicate offset; deterministic and index-addressable like the others
    idx = np.arange(start, start + count, dtype=np.uint64)
    cols = []
    for axis, base in enumerate((2, 3, 5, 7)):
        rng = np.random.Generator(np.random.Philox(
            key=(seed * _N_REPLICATES + replicate) * 4 + axis))
        offset = rng.random()
        cols.append((_van_der_corput(idx, base) + offset) % 1.0)
    return np.column_stack(cols)


def _van_der_corput(idx, base):
    x = np.zeros(len(idx))
    denom = 1.0
    work = idx.copy()
    while np.any(work > 0):
        denom *= base
        x += (work % base) / denom
        work //= base
    return x


def _clip_unit(u):
    return np.clip(u, 1e-12, 1.0 - 1e-12)


def simulate_dp(config: LensingConfig, phase_field: PhaseField,
                feed: FeedConfig, tilt=(0.0, 0.0), *,
                n_samples: int = 200_000, sampler: str = "sobol",
                seed: int = 1, workers: int = 1,
                err_bound: float | None = None,
                g: float = G_EARTH) -> DcpResult:
    """Ensemble-averaged change in transition probability from a cavity
    phase field.

    Straight-line trajectories with the tilt as a constant transverse
    acceleration g*psi; aperture clipping at t1L, t1, t2 and t2L;
    detection weighting at t_d.  The per-atom contribution is the
    two-passage Ramsey phase difference weighted by half the product of
    the pulse tipping-angle sines.
    """
    if sampler not in SAMPLERS:
        raise InvalidArgumentError(f"sampler must be one of {SAMPLERS}")
    if n_samples < _N_REPLICATES * 16:
        raise InvalidArgumentError(
            f"need at least {_N_REPLICATES * 16} samples")
    if workers < 1:
        raise InvalidArgumentError("workers must be >= 1")
    cst, cloud, tim = config.constants, config.cloud, config.timing
    geom, drive, det = config.geometry, config.drive, config.detection
    tilt = np.asarray(tilt, dtype=float)
    accel = -g * tilt                       # transverse, cavity frame
    offset = np.asarray(cloud.r_offset, dtype=float)
    factor = feed.field_factor(phase_field.m)
    per_rep = n_samples // _N_REPLICATES

    def run_chunk(replicate, start, stop):
        u = _clip_unit(_draw_uniforms(sampler, seed, replicate, start,
                                      stop - start))
        z = ndtri(u)
        r0 = offset + (cloud.w0 / math.sqrt(2.0)) * z[:, 0:2]
        v = (cloud.u / math.sqrt(2.0)) * z[:, 2:4]

        def pos(t):
            return r0 + v * t + 0.5 * accel * t * t

        p1l, p1 = pos(tim.t1l), pos(tim.t1)
        p2, p2l = pos(tim.t2), pos(tim.t2l)
        pd = pos(tim.t_d)
        alive = (np.einsum("ij,ij->i", p1l, p1l) <= geom.a_sel**2)
        alive &= (np.einsum("ij,ij->i", p1, p1) <= geom.a**2)
        alive &= (np.einsum("ij,ij->i", p2, p2) <= geom.a**2)
        alive &= (np.einsum("ij,ij->i", p2l, p2l) <= geom.a_cutoff**2)
        w_det = det.weight_xy(pd) * alive
        # clipped atoms carry zero weight; zero their radii so the pulse
        # profile is only evaluated inside the aperture
        rad1 = np.where(alive, np.hypot(p1[:, 0], p1[:, 1]), 0.0)
        rad2 = np.where(alive, np.hypot(p2[:, 0], p2[:, 1]), 0.0)
        sin1, _ = _sin_tip(rad1, drive.b1, drive.eta, cst, "all_orders")
        sin2, _ = _sin_tip(rad2, drive.b2, drive.eta, cst, "all_orders")
        dphi = factor * (phase_field.passage_phase(p2, -1)
                         - phase_field.passage_phase(p1, +1))
        numer = float(np.sum(0.5 * w_det * sin1 * sin2 * dphi))
        denom = float(np.sum(w_det))
        return numer, denom, float(np.sum(alive))

    jobs = [(rep, start, stop)
            for rep in range(_N_REPLICATES)
            for start, stop in _chunk_bounds(per_rep)]
    if workers == 1:
        partials = [run_chunk(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(lambda j: run_chunk(*j), jobs))

    # fold in fixed (replicate, chunk) order regardless of worker count
    numer = np.zeros(_N_REPLICATES)
    denom = np.zeros(_N_REPLICATES)
    n_alive = 0.0
    for job, (num, den, alive) in zip(jobs, partials):
        numer[job[0]] += num
        denom[job[0]] += den
        n_alive += alive
    if np.any(denom == 0.0):
        raise NoAtomsError("no atoms detected in at least one replicate")
    estimates = numer / denom
    delta_p = float(np.mean(estimates))
    delta_p_err = float(np.std(estimates, ddof=1) / math.sqrt(_N_REPLICATES))
    shift = dp_to_frequency(delta_p, tim, nu_clock=cst.nu_clock)
    shift_err = dp_to_frequency(delta_p_err, tim, nu_clock=cst.nu_clock)
    result = DcpResult(delta_p=delta_p, shift_rel=shift,
                       stat_error=abs(shift_err),
                       delta_p_error=delta_p_err,
                       detected_fraction=n_alive / (per_rep * _N_REPLICATES))
    if err_bound is not None and result.stat_error > err_bound:
        raise AccuracyNotReachedError(
            f"statistical error {result.stat_error:.2e} above requested "
            f"bound {err_bound:.2e}", best=result)
    return result


def tilt_scan(config: LensingConfig, phase_field: PhaseField,
              feed: FeedConfig | None, tilt_values, *,
              direction=(1.0, 0.0), **kwargs):
    """Single-feed differential shift versus fountain tilt.

    For each tilt, half the difference between feeding at phi = 0 and at
    phi = pi, converted to a fractional frequency.  Returns a list of
    (tilt, differential shift, statistical error).
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.hypot(direction[0], direction[1])
    imbalance = feed.amplitude_imbalance if feed is not None else 0.0
    rows = []
    for tilt in tilt_values:
        if abs(tilt) > 10.0e-3:
            raise InvalidArgumentError("tilt values must be within 10 mrad")
        vec = tilt * direction
        res0 = simulate_dp(config, phase_field,
                           FeedConfig("single_phi0", imbalance), vec, **kwargs)
        res1 = simulate_dp(config, phase_field,
                           FeedConfig("single_pi", imbalance), vec, **kwargs)
        diff = 0.5 * (res0.shift_rel - res1.shift_rel)
        err = 0.5 * math.hypot(res0.stat_error, res1.stat_error)
        rows.append((float(tilt), diff, err))
    return rows


def corner_clearance(geometry: FountainGeometry, timing: TimingSchedule,
                     cloud: CloudState, tilt: float, offset: float,
                     g: float = G_EARTH) -> float:
    """Closest approach of the 1/e cloud envelope to the endcap cutoff
    corners on the ascending cavity passage.

    The envelope is the 1/e isodensity radius sqrt(w0^2 + u^2 t^2) around
    the drifting centre |offset| + g*tilt*t^2/2 (worst-case aligned), and
    is capped by what the selection aperture passed at t1L (edge plus
    thermal spread accrued since).  Negative means the envelope reaches
    the corner radius.
    """
    if offset < 0.0 or tilt < 0.0:
        raise InvalidArgumentError("offset and tilt are magnitudes")
    t_lower, _ = aperture_passage_times(timing, -geometry.z_cutoff, g)
    t_upper, _ = aperture_passage_times(timing, +geometry.z_cutoff, g)
    clearance = math.inf
    for t_c in (t_lower, t_upper):
        centre = offset + 0.5 * g * tilt * t_c * t_c
        envelope = centre + math.hypot(cloud.w0, cloud.u * t_c)
        capped = (geometry.a_sel + cloud.u * (t_c - timing.t1l)
                  + 0.5 * g * tilt * (t_c * t_c - timing.t1l * timing.t1l))
        clearance = min(clearance, geometry.a_cutoff - min(envelope, capped))
    return clearance


# ---------------------------------------------------------------------------
# phase-map files: plain-text header, then nz rows of nr comma-separated
# g values (row-major in z).

def save_phase_map(path, field_m: int, r_mm, z_mm, g_values,
                   amplitude_rad: float, orientation_rad: float = 0.0):
    """Write a tabulated phase map; g_values has shape (nz, nr)."""
    g_values = np.asarray(g_values, dtype=float)
    nz, nr = g_values.shape
    lines = ["# fountain phase map",
             f"m = {field_m}",
             f"nr = {nr}",
             f"nz = {nz}",
             f"r_mm = {r_mm[0]!r} {r_mm[1]!r}",
             f"z_mm = {z_mm[0]!r} {z_mm[1]!r}",
             f"amplitude_rad = {amplitude_rad!r}",
             f"orientation_rad = {orientation_rad!r}",
             "data:"]
    for row in g_values:
        lines.append(",".join(repr(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_phase_map(path) -> PhaseField:
    """Parse a tabulated phase map into a :class:`PhaseField`.

    The longitudinal profile is reduced to per-direction radial profiles
    with a cos^2 cavity envelope: the z-even part contributes equally to
    both passages, the z-odd part with opposite signs.
    """
    text = Path(path).read_text(encoding="utf-8")
    header: dict[str, str] = {}
    data_rows: list[list[float]] = []
    in_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "data:":
            in_data = True
            continue
        if not in_data:
            if "=" not in line:
                raise PhaseMapParseError(
                    f"expected 'key = value', got {line!r}", line=lineno)
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
        else:
            try:
                data_rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise PhaseMapParseError(str(exc), line=lineno) from None
    for key in ("m", "nr", "nz", "r_mm", "z_mm", "amplitude_rad"):
        if key not in header:
            raise PhaseMapParseError(f"missing header key {key!r}")
    m = int(header["m"])
    nr, nz = int(header["nr"]), int(header["nz"])
    if len(data_rows) != nz or any(len(r) != nr for r in data_rows):
        raise PhaseMapParseError(
            f"expected {nz} rows of {nr} values after 'data:'")
    r_lo, r_hi = (1e-3 * float(v) for v in header["r_mm"].split())
    z_lo, z_hi = (1e-3 * float(v) for v in header["z_mm"].split())
    g = np.asarray(data_rows)                      # (nz, nr)
    r = np.linspace(r_lo, r_hi, nr)
    z = np.linspace(z_lo, z_hi, nz)
    span = max(abs(z_lo), abs(z_hi))
    envelope = np.cos(0.5 * math.pi * z / span) ** 2 if span > 0 else np.ones_like(z)
    norm = np.trapezoid(envelope, z) if nz > 1 else 1.0
    even = 0.5 * (g + g[::-1])
    odd = 0.5 * (g - g[::-1])
    g_even = np.trapezoid(even * envelope[:, None], z, axis=0) / norm
    g_odd = np.trapezoid(odd * envelope[:, None] * np.sign(z)[:, None],
                         z, axis=0) / norm
    _check_axis_behaviour(m, r, g_even + g_odd)
    return PhaseField(
        m=m,
        amplitude=float(header["amplitude_rad"]),
        orientation=float(header.get("orientation_rad", "0.0")),
        r_scale=r_hi if r_hi > 0 else 5.0e-3,
        table_r=tuple(r),
        table_up=tuple(g_even + g_odd),
        table_down=tuple(g_even - g_odd),
    )


def _check_axis_behaviour(m, r, profile):
    """Profiles of order m >= 1 must vanish at least as r^m near the axis."""
    if m < 1 or len(r) < 3:
        return
    scale = np.max(np.abs(profile))
    if scale == 0.0:
        return
    r_ref = r[-1] if r[-1] > 0 else 1.0
    for idx in range(1, 3):
        if r[idx] <= 0:
            continue
        bound = 10.0 * scale * (r[idx] / r_ref) ** m
        if abs(profile[idx]) > bound:
            raise InvalidArgumentError(
                f"tabulated m={m} profile does not vanish like r^{m} "
                f"near the axis (g({r[idx]:.2e}) = {profile[idx]:.3e})")
