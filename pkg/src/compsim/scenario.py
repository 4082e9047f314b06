"""Deployment geometry: TRP layouts, coordination clusters and UE drops.

Four deployment kinds are supported: indoor hotspot (InH) and dense urban
macro (DU), each at 4 GHz (digital ports) and 30 GHz (analog beams).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class ScenarioKind(str, Enum):
    INH_4GHZ = "InH4GHz"
    DU_4GHZ = "DU4GHz"
    INH_30GHZ = "InH30GHz"
    DU_30GHZ = "DU30GHz"

    @property
    def is_indoor(self) -> bool:
        return self in (ScenarioKind.INH_4GHZ, ScenarioKind.INH_30GHZ)

    @property
    def is_mmwave(self) -> bool:
        return self in (ScenarioKind.INH_30GHZ, ScenarioKind.DU_30GHZ)

    @property
    def carrier_ghz(self) -> float:
        return 30.0 if self.is_mmwave else 4.0

    @property
    def cluster_size(self) -> int:
        return 2 if self.is_indoor else 3


UE_HEIGHT_M = 1.5


@dataclass(frozen=True)
class AntennaConfig:
    n_tx_ports: int
    n_analog_beams: int = 0
    array_geometry: Optional[tuple] = None  # (rows, cols) cross-polarized
    azimuth_deg: float = 0.0
    downtilt_deg: float = 0.0


@dataclass(frozen=True)
class UePanelConfig:
    n_panels: int
    beams_per_panel: int
    rx_ports_per_beam: int
    total_rx_ports: int
    array_geometry: Optional[tuple] = None


def trp_antenna(kind: ScenarioKind, n_tx: int = 2, azimuth_deg: float = 0.0,
                downtilt_deg: float = 0.0) -> AntennaConfig:
    """Antenna configuration of a TRP for the given scenario.

    At 30 GHz the port count is fixed at 2 per analog beam and `n_tx` must
    be 2.
    """
    if kind is ScenarioKind.INH_30GHZ:
        geometry, beams = (4, 4), 16
    elif kind is ScenarioKind.DU_30GHZ:
        geometry, beams = (8, 8), 32
    else:
        if n_tx not in (2, 4):
            raise ValueError(f"n_tx must be 2 or 4 at 4 GHz, got {n_tx}")
        return AntennaConfig(n_tx, 0, None, azimuth_deg, downtilt_deg)
    if n_tx != 2:
        raise ValueError(f"n_tx is fixed at 2 per analog beam for {kind.value}")
    return AntennaConfig(2, beams, geometry, azimuth_deg, downtilt_deg)


def ue_panel(kind: ScenarioKind) -> UePanelConfig:
    if kind.is_mmwave:
        return UePanelConfig(n_panels=2, beams_per_panel=8, rx_ports_per_beam=2,
                             total_rx_ports=4, array_geometry=(2, 4))
    return UePanelConfig(n_panels=1, beams_per_panel=0, rx_ports_per_beam=4,
                         total_rx_ports=4)


@dataclass(frozen=True)
class Trp:
    id: int
    position: tuple
    antenna: AntennaConfig
    cluster_id: int
    site_id: int = 0


@dataclass(frozen=True)
class CoordinationCluster:
    id: int
    member_trps: tuple


@dataclass
class Ue:
    id: int
    position: np.ndarray
    panel: UePanelConfig
    cluster_id: int = -1
    attached_trp: int = -1
    facing_deg: float = 0.0
    active_transfer: Optional[object] = None


@dataclass(frozen=True)
class LayoutParams:
    """Geometry knobs. Defaults follow the usual TR 38.802 conventions."""

    inh_length_m: float = 120.0
    inh_width_m: float = 50.0
    inh_spacing_m: float = 20.0
    inh_wall_offset_m: float = 10.0
    inh_height_m: float = 3.0
    du_isd_m: float = 200.0
    du_height_m: float = 25.0
    du_downtilt_deg: float = 12.0
    wraparound: bool = False


@dataclass(frozen=True)
class DropArea:
    """Region over which UEs are dropped uniformly.

    Either an axis-aligned rectangle (indoor) or a union of hexagonal
    site cells with the given inter-site distance (macro).
    """

    rect: Optional[tuple] = None  # (x0, x1, y0, y1)
    site_centers: Optional[np.ndarray] = None
    isd_m: float = 0.0

    def centroid(self) -> np.ndarray:
        if self.rect is not None:
            x0, x1, y0, y1 = self.rect
            return np.array([(x0 + x1) / 2, (y0 + y1) / 2])
        return self.site_centers.mean(axis=0)


@dataclass(frozen=True)
class Layout:
    kind: ScenarioKind
    scale: str
    trps: tuple
    clusters: tuple
    area: DropArea = field(repr=False, default=None)

    @property
    def n_trps(self) -> int:
        return len(self.trps)

    def positions(self) -> np.ndarray:
        return np.array([t.position for t in self.trps], dtype=float)

    def cluster_of(self, trp_id: int) -> int:
        return self.trps[trp_id].cluster_id


def hex_site_centers(n_sites: int, isd_m: float) -> np.ndarray:
    """Hexagonal grid of site centres: 1 (centre), 7 (one ring) or 19 (two rings)."""
    rings = {1: 0, 7: 1, 19: 2}
    if n_sites not in rings:
        raise ValueError(f"unsupported number of sites: {n_sites}")
    # axial coordinates, spiral order: centre, ring 1, ring 2
    directions = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    coords = [(0, 0)]
    for radius in range(1, rings[n_sites] + 1):
        q, r = directions[4][0] * radius, directions[4][1] * radius
        for d in range(6):
            for _ in range(radius):
                coords.append((q, r))
                q += directions[d][0]
                r += directions[d][1]
    centers = []
    for q, r in coords:
        x = isd_m * (q + r / 2.0)
        y = isd_m * (math.sqrt(3) / 2.0) * r
        centers.append((x, y))
    return np.array(centers)


def _inh_layout(kind, scale, n_tx, p: LayoutParams):
    n_cols = 6 if scale == "full" else 2
    if scale == "full":
        length = p.inh_length_m
    else:
        length = 2 * p.inh_wall_offset_m + (n_cols - 1) * p.inh_spacing_m
    rows_y = (p.inh_wall_offset_m, p.inh_width_m - p.inh_wall_offset_m)
    trps, clusters = [], []
    antenna = trp_antenna(kind, n_tx, 0.0, 90.0)  # ceiling mounted, facing down
    for row, y in enumerate(rows_y):
        for col in range(n_cols):
            tid = row * n_cols + col
            x = p.inh_wall_offset_m + col * p.inh_spacing_m
            cid = tid // 2  # pairs (2k, 2k+1) along a row
            trps.append(Trp(tid, (x, y, p.inh_height_m), antenna, cid, site_id=tid))
    for cid in range(len(trps) // 2):
        clusters.append(CoordinationCluster(cid, (2 * cid, 2 * cid + 1)))
    area = DropArea(rect=(0.0, length, 0.0, p.inh_width_m))
    return trps, clusters, area


def _du_layout(kind, scale, n_tx, p: LayoutParams):
    if scale == "full":
        n_sites = 7 if kind is ScenarioKind.DU_30GHZ else 19
    else:
        n_sites = 7
    centers = hex_site_centers(n_sites, p.du_isd_m)
    trps, clusters = [], []
    for s, (x, y) in enumerate(centers):
        members = []
        for k, az in enumerate((30.0, 150.0, 270.0)):
            tid = 3 * s + k
            antenna = trp_antenna(kind, n_tx, az, p.du_downtilt_deg)
            trps.append(Trp(tid, (float(x), float(y), p.du_height_m), antenna, s, site_id=s))
            members.append(tid)
        clusters.append(CoordinationCluster(s, tuple(members)))
    area = DropArea(site_centers=centers, isd_m=p.du_isd_m)
    return trps, clusters, area


def build_layout(kind: ScenarioKind, scale: str = "full", n_tx: int = 2,
                 params: Optional[LayoutParams] = None) -> Layout:
    kind = ScenarioKind(kind)
    if scale not in ("full", "desk"):
        raise ValueError(f"scale must be 'full' or 'desk', got {scale!r}")
    params = params or LayoutParams()
    if kind.is_indoor:
        trps, clusters, area = _inh_layout(kind, scale, n_tx, params)
    else:
        trps, clusters, area = _du_layout(kind, scale, n_tx, params)
    return Layout(kind, scale, tuple(trps), tuple(clusters), area)


def generate_layout(kind: ScenarioKind, scale: str = "full", n_tx: int = 2,
                    params: Optional[LayoutParams] = None):
    """TRPs and coordination clusters for a scenario.

    Deterministic: the result depends only on the arguments.

    Returns
    -------
    trps : list of Trp
    clusters : list of CoordinationCluster
    """
    layout = build_layout(kind, scale, n_tx, params)
    return list(layout.trps), list(layout.clusters)


def default_drop_area(kind: ScenarioKind, params: Optional[LayoutParams] = None) -> DropArea:
    return build_layout(kind, "full", 2, params).area


def _point_in_hexagon(x, y, radius):
    # pointy-top hexagon with circumradius `radius` centred at the origin
    ax, ay = abs(x), abs(y)
    h = radius * math.sqrt(3) / 2.0
    if ax > h or ay > radius:
        return False
    return radius * h - radius / 2.0 * ax - h * ay >= 0.0


def drop_ue(kind: ScenarioKind, rng: np.random.Generator,
            area: Optional[DropArea] = None) -> np.ndarray:
    """Uniform UE position (x, y, 1.5 m) over the scenario's drop area."""
    kind = ScenarioKind(kind)
    area = area if area is not None else default_drop_area(kind)
    if area.rect is not None:
        x0, x1, y0, y1 = area.rect
        x = rng.uniform(x0, x1)
        y = rng.uniform(y0, y1)
        return np.array([x, y, UE_HEIGHT_M])
    centers = area.site_centers
    # the hexagonal site cell has inradius isd/2
    radius = area.isd_m / math.sqrt(3)
    site = rng.integers(len(centers))
    while True:
        dx = rng.uniform(-radius * math.sqrt(3) / 2, radius * math.sqrt(3) / 2)
        dy = rng.uniform(-radius, radius)
        if _point_in_hexagon(dx, dy, radius):
            break
    cx, cy = centers[site]
    return np.array([cx + dx, cy + dy, UE_HEIGHT_M])


def associate_cluster(ue, trps: Sequence[Trp], large_scale) -> int:
    """Cluster holding the TRP with the strongest coupling gain.

    `large_scale` is a sequence of per-TRP coupling gains in dB (higher is
    stronger), indexed like `trps`. Ties go to the lowest TRP id.
    """
    gains = np.asarray(large_scale, dtype=float)
    best = int(np.argmax(gains))
    return trps[best].cluster_id


def strongest_trp(large_scale) -> int:
    return int(np.argmax(np.asarray(large_scale, dtype=float)))


def write_layout_csv(layout: Layout, path, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["trp_id", "x", "y", "z", "azimuth", "cluster_id"])
        for t in layout.trps:
            x, y, z = t.position
            writer.writerow([t.id, f"{x:.3f}", f"{y:.3f}", f"{z:.3f}",
                             f"{t.antenna.azimuth_deg:.1f}", t.cluster_id])
