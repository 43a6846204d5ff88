"""Snapshot network simulator.

Places macro sites and users, runs the CIO/HOM-aware serving-cell selection
(qualification, pre-selection, final selection) and computes per-user SINR
and the mean-SINR KPI for a given mobility configuration.

Everything here is a pure function of its inputs. The only randomness lives
in :func:`generate_scenario`, driven by an owned, seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np

CIO_RANGE = (-10.0, 10.0)
HOM_RANGE = (0.0, 10.0)
N_TARGETS = 3

# Gain outside the 120 degree main lobe of a sector, relative to boresight.
SIDE_LOBE_ATTENUATION_DB = 20.0
MAIN_LOBE_HALF_WIDTH_DEG = 60.0


class ScenarioError(ValueError):
    """Invalid scenario or layout parameters."""


class NoSinrError(ValueError):
    """SINR requested for a user in outage."""


class DegenerateKpiError(ValueError):
    """Every user in the data-gathering set is in outage."""


def to_db(x):
    return 10.0 * np.log10(x)


def to_linear(x_db):
    return np.power(10.0, np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class RadioConstants:
    carrier_frequency_mhz: float = 2100.0
    tx_power_dbm: float = 43.0
    antenna_gain_dbi: float = 18.5
    min_rsrp_dbm: float = -140.0
    selection_threshold_db: float = 0.0
    noise_power_dbm: float = -95.0
    pathloss_exponent: float = 3.5
    pathloss_ref_db: float = 34.5
    ref_distance_m: float = 1.0

    def __post_init__(self):
        if not self.carrier_frequency_mhz > 0:
            raise ScenarioError("carrier_frequency_mhz must be positive")
        if not self.tx_power_dbm > self.min_rsrp_dbm:
            raise ScenarioError("tx_power_dbm must exceed min_rsrp_dbm")
        if not self.noise_power_dbm < self.tx_power_dbm:
            raise ScenarioError("noise_power_dbm must be below tx_power_dbm")
        if self.selection_threshold_db < 0:
            raise ScenarioError("selection_threshold_db must be non-negative")
        if not self.pathloss_exponent > 2:
            raise ScenarioError("pathloss_exponent must be > 2")
        if not self.ref_distance_m > 0:
            raise ScenarioError("ref_distance_m must be positive")


@dataclass(frozen=True)
class Sector:
    sector_id: int
    site_position: Tuple[float, float]
    azimuth_deg: float
    is_target: bool = False
    load: float = 1.0

    def __post_init__(self):
        if self.sector_id < 0:
            raise ScenarioError(f"negative sector_id {self.sector_id}")
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise ScenarioError(f"azimuth {self.azimuth_deg} outside [0, 360)")
        if not 0.0 <= self.load <= 1.0:
            raise ScenarioError(f"sector {self.sector_id}: load {self.load} outside [0, 1]")


@dataclass(frozen=True)
class UserEquipment:
    ue_id: int
    position: Tuple[float, float]
    traffic_demand: float = 1.0

    def __post_init__(self):
        if self.ue_id < 0:
            raise ScenarioError(f"negative ue_id {self.ue_id}")
        if not self.traffic_demand > 0:
            raise ScenarioError(f"ue {self.ue_id}: traffic_demand must be positive")


@dataclass(frozen=True)
class MobilityConfig:
    """CIO and HOM (dB) of the three target sectors, in target order."""

    cio_db: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    hom_db: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        cio = tuple(float(v) for v in self.cio_db)
        hom = tuple(float(v) for v in self.hom_db)
        if len(cio) != N_TARGETS or len(hom) != N_TARGETS:
            raise ValueError("MobilityConfig needs exactly 3 CIO and 3 HOM values")
        for v in cio:
            if not CIO_RANGE[0] <= v <= CIO_RANGE[1]:
                raise ValueError(f"CIO {v} outside {CIO_RANGE}")
        for v in hom:
            if not HOM_RANGE[0] <= v <= HOM_RANGE[1]:
                raise ValueError(f"HOM {v} outside {HOM_RANGE}")
        object.__setattr__(self, "cio_db", cio)
        object.__setattr__(self, "hom_db", hom)

    def as_vector(self) -> np.ndarray:
        return np.array(self.cio_db + self.hom_db, dtype=float)

    @classmethod
    def from_vector(cls, genes: Sequence[float]) -> "MobilityConfig":
        g = [float(v) for v in genes]
        if len(g) != 2 * N_TARGETS:
            raise ValueError(f"expected 6 genes, got {len(g)}")
        return cls(tuple(g[:3]), tuple(g[3:]))


@dataclass(frozen=True)
class LayoutParams:
    """Site geometry for :func:`generate_scenario`.

    Sites sit on a hexagonal lattice, filled outward from the centre site.
    The centre site's three sectors are the targets. Users are uniform in
    the square bounding the sites plus ``margin_m`` (default ISD/2). The
    data-gathering disc around the centre site has ``gather_radius_m``
    (default 0.4 * ISD).
    """

    n_sites: int = 12
    sectors_per_site: int = 3
    inter_site_distance_m: float = 500.0
    n_users: int = 356
    margin_m: Optional[float] = None
    gather_radius_m: Optional[float] = None
    load: float = 1.0
    prb_count: int = 100
    demand_range: Tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        if self.n_sites < 1:
            raise ScenarioError("n_sites must be >= 1")
        if self.sectors_per_site < 1:
            raise ScenarioError("sectors_per_site must be >= 1")
        if self.n_sites * self.sectors_per_site < N_TARGETS:
            raise ScenarioError("layout needs at least 3 sectors")
        if not self.inter_site_distance_m > 0:
            raise ScenarioError("inter_site_distance_m must be positive")
        if self.n_users < 1:
            raise ScenarioError("n_users must be >= 1")
        if self.margin_m is not None and self.margin_m < 0:
            raise ScenarioError("margin_m must be non-negative")
        if self.gather_radius_m is not None and not self.gather_radius_m > 0:
            raise ScenarioError("gather_radius_m must be positive")
        if self.prb_count < 1:
            raise ScenarioError("prb_count must be positive")
        lo, hi = self.demand_range
        if not 0 < lo <= hi:
            raise ScenarioError("demand_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class NetworkScenario:
    constants: RadioConstants
    sectors: Tuple[Sector, ...]
    users: Tuple[UserEquipment, ...]
    rng_seed: int
    non_target_cio_db: float = 0.0
    non_target_hom_db: float = 0.0
    prb_count: int = 100
    # Data-gathering region: disc around the target site(s).
    gather_center: Tuple[float, float] = (0.0, 0.0)
    gather_radius_m: float = 200.0
    # Axis-aligned region users live in: (xmin, ymin, xmax, ymax).
    bounds: Tuple[float, float, float, float] = (-1.0, -1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "sectors", tuple(sorted(self.sectors, key=lambda s: s.sector_id)))
        object.__setattr__(self, "users", tuple(self.users))
        ids = [s.sector_id for s in self.sectors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate sector_id")
        uids = [u.ue_id for u in self.users]
        if len(set(uids)) != len(uids):
            raise ScenarioError("duplicate ue_id")
        if not self.users:
            raise ScenarioError("scenario has no users")
        if sum(s.is_target for s in self.sectors) != N_TARGETS:
            raise ScenarioError("scenario must have exactly 3 target sectors")
        xmin, ymin, xmax, ymax = self.bounds
        for u in self.users:
            x, y = u.position
            if not (xmin <= x <= xmax and ymin <= y <= ymax):
                raise ScenarioError(f"ue {u.ue_id} outside scenario bounds")
        if self.prb_count < 1:
            raise ScenarioError("prb_count must be positive")

    @property
    def target_ids(self) -> Tuple[int, ...]:
        return tuple(s.sector_id for s in self.sectors if s.is_target)

    def sector(self, sector_id: int) -> Sector:
        for s in self.sectors:
            if s.sector_id == sector_id:
                return s
        raise KeyError(sector_id)

    def sector_cio(self, sector_id: int, config: MobilityConfig) -> float:
        targets = self.target_ids
        if sector_id in targets:
            return config.cio_db[targets.index(sector_id)]
        return self.non_target_cio_db

    def sector_hom(self, sector_id: int, config: MobilityConfig) -> float:
        targets = self.target_ids
        if sector_id in targets:
            return config.hom_db[targets.index(sector_id)]
        return self.non_target_hom_db


@dataclass(frozen=True)
class AssociationResult:
    ue_id: int
    serving_sector_id: Optional[int]  # None means outage
    rsrp_by_sector_dbm: Dict[int, float] = field(compare=False)
    qualified_sector_ids: FrozenSet[int] = frozenset()

    @property
    def outage(self) -> bool:
        return self.serving_sector_id is None


@dataclass(frozen=True)
class KpiReport:
    mean_sinr_db: float
    per_user_sinr_db: Dict[int, float]
    capacity: float
    outage_count: int
    capacity_by_sector: Dict[int, float] = field(default_factory=dict)
    serving_by_user: Dict[int, Optional[int]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Scenario generation


def _hex_sites(n_sites: int, isd: float) -> np.ndarray:
    """First ``n_sites`` points of a hex lattice ordered by (radius, bearing)."""
    rings = 1
    while 3 * rings * (rings + 1) + 1 < n_sites:
        rings += 1
    pts = []
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            x = isd * (q + r / 2.0)
            y = isd * (r * math.sqrt(3.0) / 2.0)
            radius = round(math.hypot(x, y), 6)
            bearing = round(math.degrees(math.atan2(x, y)) % 360.0, 6)
            pts.append((radius, bearing, x, y))
    pts.sort()
    return np.array([(x, y) for _, _, x, y in pts[:n_sites]])


def generate_scenario(
    seed: int,
    constants: Optional[RadioConstants] = None,
    layout: Optional[LayoutParams] = None,
) -> NetworkScenario:
    """Build the canonical-style scenario deterministically from ``seed``."""
    constants = constants or RadioConstants()
    layout = layout or LayoutParams()
    isd = layout.inter_site_distance_m
    margin = isd / 2.0 if layout.margin_m is None else layout.margin_m
    gather_radius = 0.4 * isd if layout.gather_radius_m is None else layout.gather_radius_m

    sites = _hex_sites(layout.n_sites, isd)
    step = 360.0 / layout.sectors_per_site
    sectors = []
    for site_idx, (x, y) in enumerate(sites):
        for k in range(layout.sectors_per_site):
            sid = site_idx * layout.sectors_per_site + k
            sectors.append(
                Sector(
                    sector_id=sid,
                    site_position=(float(x), float(y)),
                    azimuth_deg=(30.0 + k * step) % 360.0,
                    is_target=sid < N_TARGETS,
                    load=layout.load,
                )
            )

    xmin, ymin = sites.min(axis=0) - margin
    xmax, ymax = sites.max(axis=0) + margin
    rng = np.random.default_rng(seed)
    xs = rng.uniform(xmin, xmax, size=layout.n_users)
    ys = rng.uniform(ymin, ymax, size=layout.n_users)
    demand = rng.uniform(*layout.demand_range, size=layout.n_users)
    users = [
        UserEquipment(i, (float(xs[i]), float(ys[i])), float(demand[i]))
        for i in range(layout.n_users)
    ]
    target_sites = np.array([s.site_position for s in sectors if s.is_target])
    cx, cy = target_sites.mean(axis=0)
    return NetworkScenario(
        constants=constants,
        sectors=tuple(sectors),
        users=tuple(users),
        rng_seed=int(seed),
        prb_count=layout.prb_count,
        gather_center=(float(cx), float(cy)),
        gather_radius_m=float(gather_radius),
        bounds=(float(xmin), float(ymin), float(xmax), float(ymax)),
    )


# ---------------------------------------------------------------------------
# Radio link


def path_loss_db(scenario: NetworkScenario, sector: Sector, ue_position) -> float:
    c = scenario.constants
    dx = ue_position[0] - sector.site_position[0]
    dy = ue_position[1] - sector.site_position[1]
    d = max(math.hypot(dx, dy), c.ref_distance_m)
    return c.pathloss_ref_db + 10.0 * c.pathloss_exponent * math.log10(d / c.ref_distance_m)


def antenna_gain_db(scenario: NetworkScenario, sector: Sector, ue_position) -> float:
    """Boresight gain inside the main lobe, side-lobe attenuated outside."""
    dx = ue_position[0] - sector.site_position[0]
    dy = ue_position[1] - sector.site_position[1]
    bearing = math.degrees(math.atan2(dx, dy)) % 360.0
    off = abs((bearing - sector.azimuth_deg + 180.0) % 360.0 - 180.0)
    gain = scenario.constants.antenna_gain_dbi
    if off > MAIN_LOBE_HALF_WIDTH_DEG:
        gain -= SIDE_LOBE_ATTENUATION_DB
    return gain


def rsrp_dbm(scenario: NetworkScenario, sector: Sector, ue: UserEquipment) -> float:
    return (
        scenario.constants.tx_power_dbm
        + antenna_gain_db(scenario, sector, ue.position)
        - path_loss_db(scenario, sector, ue.position)
    )


def rsrp_map(scenario: NetworkScenario, ue: UserEquipment) -> Dict[int, float]:
    return {s.sector_id: rsrp_dbm(scenario, s, ue) for s in scenario.sectors}


def qualify(scenario: NetworkScenario, ue: UserEquipment, rsrp_by_sector: Dict[int, float]) -> FrozenSet[int]:
    c = scenario.constants
    floor = c.min_rsrp_dbm + max(0.0, c.selection_threshold_db)
    return frozenset(sid for sid, r in rsrp_by_sector.items() if r >= floor)


def select_serving(
    rsrp: Dict[int, float],
    qualified,
    cio: Dict[int, float],
    hom: Dict[int, float],
) -> Optional[int]:
    """Pre-selection plus final selection; None when nothing qualified.

    S0 is the strongest qualified cell. The serving cell is the qualified
    cell with the largest RSRP+CIO among those whose RSRP+CIO clears
    S0's RSRP+CIO+HOM, or S0 itself if none does. Ties go to the lowest id.
    """
    if not qualified:
        return None
    s0 = min(qualified, key=lambda sid: (-rsrp[sid], sid))
    threshold = (rsrp[s0] + cio[s0]) + hom[s0]
    best, best_score = None, -math.inf
    for sid in sorted(qualified):
        score = rsrp[sid] + cio[sid]
        if score >= threshold and score > best_score:
            best, best_score = sid, score
    return s0 if best is None else best


def associate(scenario: NetworkScenario, config: MobilityConfig, ue: UserEquipment) -> AssociationResult:
    rsrp = rsrp_map(scenario, ue)
    qualified = qualify(scenario, ue, rsrp)
    cio = {sid: scenario.sector_cio(sid, config) for sid in rsrp}
    hom = {sid: scenario.sector_hom(sid, config) for sid in rsrp}
    return AssociationResult(ue.ue_id, select_serving(rsrp, qualified, cio, hom), rsrp, qualified)


def sinr_db(
    scenario: NetworkScenario,
    config: MobilityConfig,
    ue: UserEquipment,
    association: AssociationResult,
) -> float:
    """Linear-domain SINR of ``ue`` on its serving sector, returned in dB.

    Every non-serving sector interferes with its received power scaled by
    its load. ``config`` does not enter the ratio once association is fixed.
    """
    if association.outage:
        raise NoSinrError(f"ue {ue.ue_id} is in outage")
    serving = association.serving_sector_id
    signal = 10.0 ** (association.rsrp_by_sector_dbm[serving] / 10.0)
    interference = 0.0
    for s in scenario.sectors:
        if s.sector_id != serving:
            interference += s.load * 10.0 ** (association.rsrp_by_sector_dbm[s.sector_id] / 10.0)
    noise = 10.0 ** (scenario.constants.noise_power_dbm / 10.0)
    return 10.0 * math.log10(signal / (interference + noise))


def capacity_formula(prb_count: float, load: float, demands: Sequence[float], sinr_linear: Sequence[float]) -> float:
    """N_s - (1/w) * sum(tau / log2(1 + gamma))."""
    if load == 0:
        raise ZeroDivisionError("capacity undefined for zero load")
    total = 0.0
    for tau, gamma in zip(demands, sinr_linear):
        if not gamma > 0:
            raise ValueError("capacity needs positive linear SINR")
        total += tau / math.log2(1.0 + gamma)
    return prb_count - total / load


def capacity(
    scenario: NetworkScenario,
    config: MobilityConfig,
    kpi_inputs: Dict[int, Tuple[Optional[int], float]],
) -> Dict[int, float]:
    """Per-target-sector capacity from ``{ue_id: (serving_id, sinr_db)}``.

    The load of each target sector (its own ``load`` field) plays ``w``.
    A target sector with zero load has no defined capacity and reports NaN.
    """
    demand = {u.ue_id: u.traffic_demand for u in scenario.users}
    out = {}
    for sid in scenario.target_ids:
        served = [(demand[uid], 10.0 ** (g / 10.0)) for uid, (srv, g) in kpi_inputs.items() if srv == sid]
        load = scenario.sector(sid).load
        if load == 0:
            out[sid] = float("nan")
            continue
        out[sid] = capacity_formula(scenario.prb_count, load, [t for t, _ in served], [g for _, g in served])
    return out


# ---------------------------------------------------------------------------
# Vectorised evaluation


class KpiEvaluator:
    """Precomputed per-scenario tables for fast repeated KPI evaluation.

    RSRP, qualification, pre-selection and the SINR of every (user, sector)
    pairing do not depend on the mobility config, so they are computed once.
    Per config only the final-selection step runs.
    """

    def __init__(self, scenario: NetworkScenario):
        self.scenario = scenario
        sectors = scenario.sectors
        users = scenario.users
        n_u, n_s = len(users), len(sectors)
        self.sector_ids = np.array([s.sector_id for s in sectors])
        self.ue_ids = np.array([u.ue_id for u in users])

        rsrp = np.empty((n_u, n_s))
        for i, u in enumerate(users):
            for j, s in enumerate(sectors):
                rsrp[i, j] = rsrp_dbm(scenario, s, u)
        self.rsrp = rsrp

        c = scenario.constants
        floor = c.min_rsrp_dbm + max(0.0, c.selection_threshold_db)
        self.qualified = rsrp >= floor
        masked = np.where(self.qualified, rsrp, -np.inf)
        self.s0 = np.where(self.qualified.any(axis=1), np.argmax(masked, axis=1), -1)

        rx = 10.0 ** (rsrp / 10.0)
        loads = np.array([s.load for s in sectors])
        weighted = rx * loads
        interference = np.empty((n_u, n_s))
        for j in range(n_s):
            others = np.ones(n_s, dtype=bool)
            others[j] = False
            interference[:, j] = weighted[:, others].sum(axis=1)
        noise = 10.0 ** (c.noise_power_dbm / 10.0)
        self.sinr_db = 10.0 * np.log10(rx / (interference + noise))

        tx, ty = scenario.gather_center
        pos = np.array([u.position for u in users])
        self.in_region = np.hypot(pos[:, 0] - tx, pos[:, 1] - ty) <= scenario.gather_radius_m

        target_ids = scenario.target_ids
        self.target_idx = np.array([int(np.flatnonzero(self.sector_ids == t)[0]) for t in target_ids])
        self.is_target = np.zeros(n_s, dtype=bool)
        self.is_target[self.target_idx] = True
        self._rows = np.arange(n_u)

    def _offsets(self, config: MobilityConfig) -> Tuple[np.ndarray, np.ndarray]:
        n_s = len(self.sector_ids)
        cio = np.full(n_s, self.scenario.non_target_cio_db, dtype=float)
        hom = np.full(n_s, self.scenario.non_target_hom_db, dtype=float)
        cio[self.target_idx] = config.cio_db
        hom[self.target_idx] = config.hom_db
        return cio, hom

    def serving_index(self, config: MobilityConfig) -> np.ndarray:
        """Column index of each user's serving sector, -1 for outage."""
        cio, hom = self._offsets(config)
        score = self.rsrp + cio
        s0 = np.where(self.s0 < 0, 0, self.s0)
        threshold = score[self._rows, s0] + hom[s0]
        cand = self.qualified & (score >= threshold[:, None])
        best = np.argmax(np.where(cand, score, -np.inf), axis=1)
        serving = np.where(cand.any(axis=1), best, s0)
        return np.where(self.s0 < 0, -1, serving)

    def _gathered(self, serving: np.ndarray) -> np.ndarray:
        served_by_target = np.zeros(len(serving), dtype=bool)
        ok = serving >= 0
        served_by_target[ok] = self.is_target[serving[ok]]
        return served_by_target | self.in_region

    def mean_sinr(self, config: MobilityConfig) -> Tuple[float, int]:
        """(mean SINR dB over gathered non-outage users, gathered outage count).

        The mean is NaN when no gathered user is served.
        """
        serving = self.serving_index(config)
        gathered = self._gathered(serving)
        served = gathered & (serving >= 0)
        outages = int(np.count_nonzero(gathered & (serving < 0)))
        if not served.any():
            return math.nan, outages
        return float(np.mean(self.sinr_db[served, serving[served]])), outages

    def evaluate(self, config: MobilityConfig) -> KpiReport:
        serving = self.serving_index(config)
        gathered = self._gathered(serving)
        served = gathered & (serving >= 0)
        outages = int(np.count_nonzero(gathered & (serving < 0)))
        if not served.any():
            raise DegenerateKpiError("every user in the data-gathering set is in outage")
        values = self.sinr_db[served, serving[served]]
        per_user = {int(u): float(v) for u, v in zip(self.ue_ids[served], values)}
        serving_ids = {
            int(u): (int(self.sector_ids[j]) if j >= 0 else None)
            for u, j in zip(self.ue_ids[gathered], serving[gathered])
        }
        inputs = {uid: (serving_ids[uid], g) for uid, g in per_user.items()}
        cap = capacity(self.scenario, config, inputs)
        return KpiReport(
            mean_sinr_db=float(np.mean(values)),
            per_user_sinr_db=per_user,
            capacity=float(sum(cap.values())),
            outage_count=outages,
            capacity_by_sector=cap,
            serving_by_user=serving_ids,
        )


def evaluate_kpi(scenario: NetworkScenario, config: MobilityConfig) -> KpiReport:
    return KpiEvaluator(scenario).evaluate(config)


def with_loads(scenario: NetworkScenario, loads: Dict[int, float]) -> NetworkScenario:
    """Copy of ``scenario`` with some sector loads overridden."""
    sectors = tuple(replace(s, load=loads.get(s.sector_id, s.load)) for s in scenario.sectors)
    return replace(scenario, sectors=sectors)
