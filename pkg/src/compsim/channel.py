"""Large-scale link budget, block-fading MIMO channels and analog beam selection.

The propagation model is a deliberately simple log-distance law with
lognormal shadowing, a distance-decaying LOS probability and a Ricean LOS
component.  Small-scale fading follows a first-order Gauss-Markov process
across TTIs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .scenario import ScenarioKind, Trp, Ue, UE_HEIGHT_M


DEFAULT_K_FACTOR_DB = 9.0
DEFAULT_RHO = 0.9


@dataclass(frozen=True)
class ChannelParams:
    intercept_db: float
    exponent_los: float
    exponent_nlos: float
    shadow_sigma_los_db: float = 3.0
    shadow_sigma_nlos_db: float = 8.0
    k_factor_db: float = DEFAULT_K_FACTOR_DB
    rho: float = DEFAULT_RHO
    # horizontal sector pattern, macro 4 GHz only
    sector_hpbw_deg: float = 65.0
    sector_max_atten_db: float = 30.0
    sector_gain_dbi: float = 8.0
    # analog beam pattern, 30 GHz only
    beam_peak_offset_db: float = 8.0
    beam_front_to_back_db: float = 30.0
    beam_hpbw_factor_deg: float = 102.0


def default_channel_params(kind: ScenarioKind, **overrides) -> ChannelParams:
    kind = ScenarioKind(kind)
    f = kind.carrier_ghz
    if kind.is_indoor:
        params = ChannelParams(32.4 + 20 * math.log10(f), 1.7, 3.0)
    else:
        params = ChannelParams(28.0 + 20 * math.log10(f), 2.2, 3.5)
    return replace(params, **overrides) if overrides else params


@dataclass(frozen=True)
class LargeScaleState:
    pathloss_db: float
    shadowing_db: float
    los: bool
    distance_m: float
    antenna_gain_db: float = 0.0
    degenerate: bool = False

    @property
    def gain_db(self) -> float:
        """Coupling gain excluding analog beamforming gain."""
        return -self.pathloss_db - self.shadowing_db + self.antenna_gain_db

    @property
    def gain_linear(self) -> float:
        return 10.0 ** (self.gain_db / 10.0)


def free_space_pathloss_db(distance_m, f_ghz):
    return 32.4 + 20 * np.log10(f_ghz) + 20 * np.log10(distance_m)


def los_probability(kind: ScenarioKind, d2d):
    """LOS probability as a function of horizontal distance in metres."""
    d2d = np.asarray(d2d, dtype=float)
    if ScenarioKind(kind).is_indoor:
        p = np.exp(-(d2d - 5.0) / 30.0)
        return np.minimum(1.0, np.where(d2d <= 5.0, 1.0, p))
    d = np.maximum(d2d, 1e-9)
    return np.minimum(18.0 / d, 1.0) * (1 - np.exp(-d / 63.0)) + np.exp(-d / 63.0)


def pathloss_db(params: ChannelParams, distance_m, los, f_ghz):
    """Log-distance pathloss, never below free space."""
    n = np.where(los, params.exponent_los, params.exponent_nlos)
    pl = params.intercept_db + 10 * n * np.log10(distance_m)
    return np.maximum(pl, free_space_pathloss_db(distance_m, f_ghz))


def sector_gain_db(params: ChannelParams, azimuth_off_deg):
    off = (np.asarray(azimuth_off_deg) + 180.0) % 360.0 - 180.0
    att = np.minimum(12.0 * (off / params.sector_hpbw_deg) ** 2, params.sector_max_atten_db)
    return params.sector_gain_dbi - att


def _bearing_deg(src, dst):
    return math.degrees(math.atan2(dst[1] - src[1], dst[0] - src[0]))


def compute_large_scale(kind: ScenarioKind, trp: Trp, ue_position, rng: np.random.Generator,
                        params: Optional[ChannelParams] = None) -> LargeScaleState:
    """Draw the frozen large-scale state of one TRP-UE link.

    Consumes exactly two variates from `rng` (LOS draw, then shadowing).
    Zero distance is clamped to the 1 m reference distance and flagged.
    """
    kind = ScenarioKind(kind)
    params = params or default_channel_params(kind)
    tp = np.asarray(trp.position, dtype=float)
    up = np.asarray(ue_position, dtype=float)
    d3d = float(np.linalg.norm(tp - up))
    d2d = float(np.linalg.norm(tp[:2] - up[:2]))
    degenerate = d3d < 1.0
    d = max(d3d, 1.0)
    los = bool(rng.random() < float(los_probability(kind, d2d)))
    sigma = params.shadow_sigma_los_db if los else params.shadow_sigma_nlos_db
    shadowing = float(rng.normal(0.0, sigma))
    pl = float(pathloss_db(params, d, los, kind.carrier_ghz))
    antenna = 0.0
    if not kind.is_indoor and not kind.is_mmwave:
        off = _bearing_deg(tp, up) - trp.antenna.azimuth_deg
        antenna = float(sector_gain_db(params, off))
    return LargeScaleState(pl, shadowing, los, d, antenna, degenerate)


# ---------------------------------------------------------------------------
# small-scale fading

def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Zero-mean, unit-variance circularly symmetric complex Gaussian samples."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * math.sqrt(0.5)


def los_component(rng: np.random.Generator, n_rx: int, n_tx: int, batch=()) -> np.ndarray:
    """Rank-1 unit-modulus LOS matrix a_rx a_tx^H from half-wavelength ULAs."""
    shape = tuple(batch)
    s_rx = rng.uniform(-1.0, 1.0, shape + (1, 1))
    s_tx = rng.uniform(-1.0, 1.0, shape + (1, 1))
    phase = rng.uniform(0.0, 2 * math.pi, shape + (1, 1))
    k_rx = np.arange(n_rx).reshape((1,) * len(shape) + (n_rx, 1))
    k_tx = np.arange(n_tx).reshape((1,) * len(shape) + (1, n_tx))
    return np.exp(1j * (math.pi * (k_rx * s_rx - k_tx * s_tx) + phase))


def ricean_weights(los, k_factor_db: float):
    """Amplitude weights (LOS, scattered) with unit total power."""
    los = np.asarray(los, dtype=bool)
    if math.isinf(k_factor_db):
        w_los, w_sc = 1.0, 0.0
    else:
        k = 10.0 ** (k_factor_db / 10.0)
        w_los, w_sc = math.sqrt(k / (k + 1)), math.sqrt(1 / (k + 1))
    return np.where(los, w_los, 0.0), np.where(los, w_sc, 1.0)


def evolve_scatter(previous: Optional[np.ndarray], rho: float, rng: np.random.Generator,
                   shape) -> np.ndarray:
    """Gauss-Markov update: rho * previous + sqrt(1 - rho^2) * innovation."""
    fresh = complex_gaussian(rng, shape)
    if previous is None:
        return fresh
    return rho * previous + math.sqrt(1.0 - rho * rho) * fresh


@dataclass
class ChannelRealization:
    h: np.ndarray
    large_scale: LargeScaleState
    scatter: np.ndarray
    los_matrix: Optional[np.ndarray] = None

    @property
    def dims(self):
        return self.h.shape


def draw_fading(large_scale: LargeScaleState, dims, rng: np.random.Generator,
                params: Optional[ChannelParams] = None,
                previous: Optional[ChannelRealization] = None,
                k_factor_db: Optional[float] = None,
                extra_gain_db: float = 0.0) -> ChannelRealization:
    """Draw one TTI of the block-fading MIMO channel of a link.

    Parameters
    ----------
    large_scale : LargeScaleState
        Frozen large-scale state of the link.
    dims : (n_rx, n_tx)
    rng : numpy Generator
    params : ChannelParams, optional
        Supplies the K-factor and the TTI-to-TTI correlation `rho`.
    previous : ChannelRealization, optional
        Realization of the previous TTI; when given the scattered part is
        correlated with it and the LOS component is kept.
    k_factor_db : float, optional
        Overrides ``params.k_factor_db``; ``inf`` gives a pure LOS channel.
    extra_gain_db : float
        Additional gain (e.g. analog beamforming) on top of the large-scale gain.
    """
    n_rx, n_tx = dims
    if n_rx <= 0 or n_tx <= 0:
        raise ValueError("channel dimensions must be positive")
    if k_factor_db is None:
        k_factor_db = params.k_factor_db if params is not None else DEFAULT_K_FACTOR_DB
    rho = params.rho if params is not None else DEFAULT_RHO
    if previous is not None:
        scatter = evolve_scatter(previous.scatter, rho, rng, (n_rx, n_tx))
        los_m = previous.los_matrix
    else:
        scatter = complex_gaussian(rng, (n_rx, n_tx))
        los_m = los_component(rng, n_rx, n_tx) if large_scale.los else None
    w_los, w_sc = ricean_weights(large_scale.los, k_factor_db)
    amp = math.sqrt(10.0 ** ((large_scale.gain_db + extra_gain_db) / 10.0))
    h = float(w_sc) * scatter
    if los_m is not None:
        h = h + float(w_los) * los_m
    return ChannelRealization(amp * h, large_scale, scatter, los_m)


# ---------------------------------------------------------------------------
# analog beams (30 GHz)

def dft_angles_deg(n: int) -> np.ndarray:
    """Pointing angles of an n-point DFT grid of a half-wavelength array."""
    u = (2 * np.arange(n) + 1 - n) / n
    return np.degrees(np.arcsin(u))


def trp_beam_grid(kind: ScenarioKind) -> np.ndarray:
    """(n_beams, 2) pointing directions in the TRP array frame, degrees.

    Indoor arrays face the floor and the two angles are the projected
    angles off nadir along x and y.  Macro arrays use (azimuth off
    boresight, elevation below horizon).
    """
    kind = ScenarioKind(kind)
    if kind is ScenarioKind.INH_30GHZ:
        a = dft_angles_deg(4)
        return np.array([(x, y) for x in a for y in a])
    if kind is ScenarioKind.DU_30GHZ:
        az = dft_angles_deg(8)
        el = np.degrees(np.arcsin((2 * np.arange(4) + 1) / 8.0))
        return np.array([(a, e) for a in az for e in el])
    raise ValueError(f"{kind.value} has no analog beams")


def ue_beam_grid() -> np.ndarray:
    """(8, 2) (azimuth, elevation) pointing directions of one UE panel."""
    az = dft_angles_deg(4)
    el = dft_angles_deg(2)
    return np.array([(a, e) for a in az for e in el])


def beam_gain_db(off_h, off_v, hpbw_h, hpbw_v, peak_db, floor_db):
    att = 12.0 * ((np.asarray(off_h) / hpbw_h) ** 2 + (np.asarray(off_v) / hpbw_v) ** 2)
    return peak_db - np.minimum(att, floor_db)


def _wrap(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class BeamGeometry:
    trp_angles: tuple  # direction of the UE in the TRP array frame
    ue_angles: tuple  # per panel: direction of the TRP in the panel frame


def relative_angles(kind: ScenarioKind, trp: Trp, ue: Ue) -> BeamGeometry:
    kind = ScenarioKind(kind)
    tp = np.asarray(trp.position, dtype=float)
    up = np.asarray(ue.position, dtype=float)
    dx, dy = up[0] - tp[0], up[1] - tp[1]
    dz = tp[2] - up[2]
    d2d = math.hypot(dx, dy)
    if kind.is_indoor:
        trp_ang = (math.degrees(math.atan2(dx, dz)), math.degrees(math.atan2(dy, dz)))
    else:
        az = float(_wrap(math.degrees(math.atan2(dy, dx)) - trp.antenna.azimuth_deg))
        trp_ang = (az, math.degrees(math.atan2(dz, d2d)))
    bearing = math.degrees(math.atan2(-dy, -dx))
    elev = math.degrees(math.atan2(dz, d2d))
    ue_ang = tuple((float(_wrap(bearing - ue.facing_deg - 180.0 * p)), elev)
                   for p in range(ue.panel.n_panels))
    return BeamGeometry(trp_ang, ue_ang)


@dataclass(frozen=True)
class BeamSelection:
    trp_beam_index: int
    ue_panel_index: int
    ue_beam_index: int
    beamforming_gain_db: float
    trp_beam_gains_db: np.ndarray  # gain towards the UE of every TRP beam
    ue_panel_gains_db: np.ndarray  # best beam gain of each UE panel

    def rx_port_gains_db(self, rx_ports_per_beam: int = 2) -> np.ndarray:
        return np.repeat(self.ue_panel_gains_db, rx_ports_per_beam)


def beam_gain_tables(kind: ScenarioKind, trp: Trp, ue: Ue, geometry: BeamGeometry,
                     params: Optional[ChannelParams] = None):
    """TRP beam gains (n_beams,) and UE beam gains (n_panels, beams_per_panel) in dB."""
    kind = ScenarioKind(kind)
    params = params or default_channel_params(kind)
    rows, cols = trp.antenna.array_geometry
    grid = trp_beam_grid(kind)
    f = params.beam_hpbw_factor_deg
    fb = params.beam_front_to_back_db
    peak = 5 * math.log10(rows * cols) + params.beam_peak_offset_db
    ta = np.asarray(geometry.trp_angles)
    trp_g = beam_gain_db(_wrap(ta[0] - grid[:, 0]), ta[1] - grid[:, 1], f / cols, f / rows, peak, fb)

    urows, ucols = ue.panel.array_geometry
    ugrid = ue_beam_grid()
    upeak = 5 * math.log10(urows * ucols) + params.beam_peak_offset_db
    ue_g = np.empty((ue.panel.n_panels, ue.panel.beams_per_panel))
    for p, (az, el) in enumerate(geometry.ue_angles):
        ue_g[p] = beam_gain_db(_wrap(az - ugrid[:, 0]), el - ugrid[:, 1], f / ucols, f / urows,
                               upeak, fb)
    return trp_g, ue_g


def select_beams(kind: ScenarioKind, trp: Trp, ue: Ue, geometry: Optional[BeamGeometry] = None,
                 rng: Optional[np.random.Generator] = None,
                 params: Optional[ChannelParams] = None) -> BeamSelection:
    """Exhaustive beam-pair search over TRP beams x UE panels x UE beams.

    Ties resolve to the lexicographically smallest (trp_beam, panel, beam).
    `rng` is accepted for interface symmetry; the gain model is deterministic.
    """
    kind = ScenarioKind(kind)
    if not kind.is_mmwave:
        raise ValueError(f"beam selection is undefined for {kind.value}")
    if geometry is None:
        geometry = relative_angles(kind, trp, ue)
    trp_g, ue_g = beam_gain_tables(kind, trp, ue, geometry, params)
    total = trp_g[:, None, None] + ue_g[None, :, :]
    b, p, q = np.unravel_index(int(np.argmax(total)), total.shape)
    return BeamSelection(int(b), int(p), int(q), float(total[b, p, q]), trp_g, ue_g.max(axis=1))


# ---------------------------------------------------------------------------
# batched links, one UE against every TRP

class LinkBank:
    """All TRP links of one UE, advanced jointly TTI by TTI.

    Holds per-link large-scale amplitude, the Ricean LOS component and the
    Gauss-Markov scattered part.  At 30 GHz it also keeps the beam gain
    tables so that interference through a TRP beam aimed elsewhere can be
    rescaled.
    """

    def __init__(self, large_scale, n_rx, n_tx, params: ChannelParams, rng,
                 beams=None, rx_ports_per_beam=2):
        self.large_scale = list(large_scale)
        self.n_links = len(self.large_scale)
        self.params = params
        self.rng = rng
        self.shape = (self.n_links, n_rx, n_tx)
        self.los = np.array([ls.los for ls in self.large_scale])
        gain_db = np.array([ls.gain_db for ls in self.large_scale])
        self.beams = beams
        if beams is not None:
            self.sel_beam = np.array([b.trp_beam_index for b in beams])
            self.trp_beam_gain = 10 ** (np.array([b.trp_beam_gains_db for b in beams]) / 10)
            rx_db = np.array([b.rx_port_gains_db(rx_ports_per_beam) for b in beams])
            tx_db = np.array([b.trp_beam_gains_db[b.trp_beam_index] for b in beams])
            self.coupling_db = gain_db + tx_db + rx_db.max(axis=1)
            row_amp = np.sqrt(10 ** ((gain_db[:, None] + tx_db[:, None] + rx_db) / 10))
        else:
            self.coupling_db = gain_db
            row_amp = np.repeat(np.sqrt(10 ** (gain_db / 10))[:, None], n_rx, axis=1)
        self.row_amp = row_amp[:, :, None]
        w_los, w_sc = ricean_weights(self.los, params.k_factor_db)
        self.w_los = w_los[:, None, None]
        self.w_sc = w_sc[:, None, None]
        self.los_matrix = los_component(rng, n_rx, n_tx, batch=(self.n_links,))
        self.scatter = complex_gaussian(rng, self.shape)
        self._update()

    def _update(self):
        self.h = self.row_amp * (self.w_los * self.los_matrix + self.w_sc * self.scatter)

    def evolve(self):
        self.scatter = evolve_scatter(self.scatter, self.params.rho, self.rng, self.shape)
        self._update()

    def channel(self, trp: int, beam: Optional[int] = None) -> np.ndarray:
        """Channel from `trp`; at 30 GHz `beam` selects the TRP beam in use."""
        h = self.h[trp]
        if beam is None or self.beams is None or beam == self.sel_beam[trp]:
            return h
        ratio = self.trp_beam_gain[trp, beam] / self.trp_beam_gain[trp, self.sel_beam[trp]]
        return h * math.sqrt(ratio)

    def beam_scale(self, beams: np.ndarray) -> np.ndarray:
        """Amplitude factors for transmissions of all TRPs on the given beams."""
        if self.beams is None:
            return np.ones(self.n_links)
        idx = np.arange(self.n_links)
        return np.sqrt(self.trp_beam_gain[idx, beams] / self.trp_beam_gain[idx, self.sel_beam])
