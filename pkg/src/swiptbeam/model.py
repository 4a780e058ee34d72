"""Network model: topology, random channels, and physical-layer metrics.

A :class:`Scenario` holds one downlink instance of the Cloud-RAN system:
L remote radio heads (RRHs) with M antennas each, K single-antenna data
receivers (DRs) and J single-antenna energy receivers (ERs).  Channel
vectors are stacked per RRH, so every channel lives in C^{M L}.

Every metric here is a pure function of raw beamforming vectors, which
makes the module usable both by the optimizer and by the independent
constraint auditor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Topology",
    "Scenario",
    "BeamformingSolution",
    "polygon_topology",
    "generate_channels",
    "selection_matrix",
    "selection_masks",
    "sinr",
    "sinr_all",
    "rate",
    "rates_all",
    "harvested_energy",
    "harvested_all",
    "rrh_power",
    "rrh_powers",
    "association_matrix",
    "fronthaul_usage",
    "fronthaul_usages",
    "scenario_from_config",
    "scenario_config_schema",
]

# channel power gain at distance d is REF_GAIN * a / d**alpha with a ~ exp(1)
REF_GAIN = 1e-3
DEFAULT_ALPHA = 3.0
DEFAULT_NOISE_W = 1e-9          # N0 = 1e-15 W/Hz times 1 MHz bandwidth
DEFAULT_EFFICIENCY = 0.5


@dataclass(frozen=True)
class Topology:
    """Planar coordinates (meters) of RRHs, DRs and ERs."""

    rrh_positions: np.ndarray   # (L, 2)
    dr_positions: np.ndarray    # (K, 2)
    er_positions: np.ndarray    # (J, 2)

    def __post_init__(self):
        for name in ("rrh_positions", "dr_positions", "er_positions"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.size == 0:
                arr = arr.reshape(0, 2)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError(f"{name} must be an (n, 2) array")
            object.__setattr__(self, name, arr)
        for name, rx in (("dr", self.dr_positions), ("er", self.er_positions)):
            if rx.shape[0] and self.rrh_positions.shape[0]:
                d = np.linalg.norm(
                    self.rrh_positions[:, None, :] - rx[None, :, :], axis=2)
                if np.any(d <= 0.0):
                    raise ValueError(f"zero RRH-{name} distance in topology")

    @property
    def n_rrh(self) -> int:
        return self.rrh_positions.shape[0]


def polygon_topology(n_rrh, n_dr, n_er, radius=15.0, seed=0,
                     exclusion=1.0) -> Topology:
    """Default topology: RRHs on a regular polygon, receivers uniform in the disc.

    Receivers are drawn uniformly in the polygon's enclosing disc and
    re-drawn while they fall within `exclusion` meters of any RRH, so all
    path gains stay bounded.  Deterministic for a fixed seed; DR positions
    are drawn before ER positions.
    """
    if n_rrh < 1:
        raise ValueError("need at least one RRH")
    angles = 2.0 * np.pi * np.arange(n_rrh) / n_rrh
    rrh = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rng = np.random.default_rng(np.uint64(seed))

    def draw(count):
        out = np.empty((count, 2))
        for i in range(count):
            while True:
                r = radius * math.sqrt(rng.uniform())
                theta = 2.0 * np.pi * rng.uniform()
                pos = np.array([r * math.cos(theta), r * math.sin(theta)])
                if np.all(np.linalg.norm(rrh - pos, axis=1) > exclusion):
                    out[i] = pos
                    break
        return out

    drs = draw(n_dr)
    ers = draw(n_er)
    return Topology(rrh, drs, ers)


def _splitmix64(state: int) -> int:
    z = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def generate_channels(topology: Topology, m_antennas: int, alpha: float = DEFAULT_ALPHA,
                      seed: int = 0):
    """Draw channel vectors h (DRs) and g (ERs) for one fading realization.

    Each antenna coefficient is circularly symmetric complex Gaussian with
    expected power REF_GAIN / d**alpha, so the realized power gain is
    REF_GAIN * a / d**alpha with a ~ exp(1).  Draw order is fixed for
    reproducibility: RRH-major, then receivers (all DRs before all ERs),
    then antennas, real part before imaginary part.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(np.uint64(seed))
    n_l = topology.n_rrh
    n_k = topology.dr_positions.shape[0]
    n_j = topology.er_positions.shape[0]
    h = np.zeros((n_k, m_antennas * n_l), dtype=complex)
    g = np.zeros((n_j, m_antennas * n_l), dtype=complex)
    for l in range(n_l):
        for kind, positions, dest in (("dr", topology.dr_positions, h),
                                      ("er", topology.er_positions, g)):
            for r in range(positions.shape[0]):
                d = float(np.linalg.norm(topology.rrh_positions[l] - positions[r]))
                if d <= 0.0:
                    raise ValueError(f"zero distance between RRH {l} and {kind} {r}")
                sigma = math.sqrt(REF_GAIN / d ** alpha / 2.0)
                for m in range(m_antennas):
                    re = rng.standard_normal()
                    im = rng.standard_normal()
                    dest[r, l * m_antennas + m] = sigma * (re + 1j * im)
    return h, g


@dataclass(frozen=True)
class Scenario:
    """One network instance with channels and resource budgets."""

    L: int
    M: int
    K: int
    J: int
    h: np.ndarray         # (K, M*L) complex
    g: np.ndarray         # (J, M*L) complex
    E: np.ndarray         # (L,) green energy per RRH, watts
    C: np.ndarray         # (L,) fronthaul capacity, bits/s/Hz; np.inf = unlimited
    q_min: float          # RF energy target at each ER, watts
    sigma2: float = DEFAULT_NOISE_W
    eta: float = DEFAULT_EFFICIENCY

    def __post_init__(self):
        if min(self.L, self.M) < 1 or self.K < 0 or self.J < 0:
            raise ValueError("L, M must be >= 1 and K, J >= 0")
        n = self.M * self.L
        h = np.asarray(self.h, dtype=complex).reshape(self.K, n)
        g = np.asarray(self.g, dtype=complex).reshape(self.J, n)
        e = np.broadcast_to(np.asarray(self.E, dtype=float), (self.L,)).copy()
        c = np.broadcast_to(np.asarray(self.C, dtype=float), (self.L,)).copy()
        if not np.all(np.isfinite(h.view(float))) or not np.all(np.isfinite(g.view(float))):
            raise ValueError("channel entries must be finite")
        if np.any(e <= 0):
            raise ValueError("per-RRH energy must be positive")
        if np.any(c <= 0):
            raise ValueError("fronthaul capacity must be positive (np.inf allowed)")
        if self.sigma2 <= 0:
            raise ValueError("noise power must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("RF conversion efficiency must lie in (0, 1)")
        if self.q_min < 0:
            raise ValueError("q_min must be nonnegative")
        for name, val in (("h", h), ("g", g), ("E", e), ("C", c)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        """Stacked channel dimension M * L."""
        return self.M * self.L


def selection_masks(L: int, M: int) -> np.ndarray:
    """Boolean (L, M*L) masks selecting each RRH's antenna block."""
    masks = np.zeros((L, M * L), dtype=bool)
    for l in range(L):
        masks[l, l * M:(l + 1) * M] = True
    return masks


def selection_matrix(l: int, L: int, M: int) -> np.ndarray:
    """Diagonal 0/1 matrix picking RRH l's antennas out of the stacked vector."""
    if not 0 <= l < L:
        raise IndexError(f"RRH index {l} out of range for L={L}")
    d = np.zeros(M * L)
    d[l * M:(l + 1) * M] = 1.0
    return np.diag(d)


def _as_beams(w, n) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    if w.size == 0:
        return w.reshape(0, n)
    return w.reshape(-1, n)


def sinr_all(scenario: Scenario, w, v) -> np.ndarray:
    """Per-DR SINR: desired power over interference (data, energy) plus noise."""
    w = _as_beams(w, scenario.n)
    v = _as_beams(v, scenario.n)
    if scenario.K == 0:
        return np.zeros(0)
    hw = scenario.h @ w.conj().T            # (K, K): h_k^H w_i
    hv = scenario.h @ v.conj().T if v.size else np.zeros((scenario.K, 0))
    power = np.abs(hw) ** 2
    desired = np.diag(power)
    interference = power.sum(axis=1) - desired
    if hv.size:
        interference = interference + (np.abs(hv) ** 2).sum(axis=1)
    return desired / (interference + scenario.sigma2)


def sinr(k: int, scenario: Scenario, w, v) -> float:
    return float(sinr_all(scenario, w, v)[k])


def rates_all(scenario: Scenario, w, v) -> np.ndarray:
    """Per-DR rate log2(1 + SINR) in bits/s/Hz."""
    return np.log2(1.0 + sinr_all(scenario, w, v))


def rate(k: int, scenario: Scenario, w, v) -> float:
    return float(rates_all(scenario, w, v)[k])


def harvested_all(scenario: Scenario, w, v) -> np.ndarray:
    """Per-ER harvested power eta * (sum |g^H w|^2 + sum |g^H v|^2), watts."""
    w = _as_beams(w, scenario.n)
    v = _as_beams(v, scenario.n)
    if scenario.J == 0:
        return np.zeros(0)
    total = np.zeros(scenario.J)
    if w.size:
        total += (np.abs(scenario.g @ w.conj().T) ** 2).sum(axis=1)
    if v.size:
        total += (np.abs(scenario.g @ v.conj().T) ** 2).sum(axis=1)
    return scenario.eta * total


def harvested_energy(j: int, scenario: Scenario, w, v) -> float:
    return float(harvested_all(scenario, w, v)[j])


def rrh_powers(w, v, L: int, M: int) -> np.ndarray:
    """Per-RRH transmit power: sum of squared beam block norms, watts."""
    n = L * M
    w = _as_beams(w, n)
    v = _as_beams(v, n)
    masks = selection_masks(L, M)
    out = np.zeros(L)
    for beams in (w, v):
        if beams.size:
            block_pow = np.abs(beams) ** 2
            out += np.array([block_pow[:, mask].sum() for mask in masks])
    return out


def rrh_power(l: int, w, v, L: int, M: int) -> float:
    return float(rrh_powers(w, v, L, M)[l])


def association_matrix(w, L: int, M: int, threshold: float) -> np.ndarray:
    """Boolean (K, L): DR k is served by RRH l iff its block power exceeds
    `threshold` times the beam's total power."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    n = L * M
    w = _as_beams(w, n)
    if w.shape[0] == 0:
        return np.zeros((0, L), dtype=bool)
    masks = selection_masks(L, M)
    block_pow = np.stack([(np.abs(w[:, mask]) ** 2).sum(axis=1) for mask in masks],
                         axis=1)                     # (K, L)
    total = block_pow.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        assoc = block_pow > threshold * total
    assoc[total[:, 0] == 0.0] = False
    return assoc


def fronthaul_usages(scenario: Scenario, w, v, threshold: float) -> np.ndarray:
    """Per-RRH fronthaul load: sum of served DRs' rates, bits/s/Hz."""
    assoc = association_matrix(w, scenario.L, scenario.M, threshold)
    r = rates_all(scenario, w, v)
    if r.size == 0:
        return np.zeros(scenario.L)
    return (assoc * r[:, None]).sum(axis=0)


def fronthaul_usage(l: int, scenario: Scenario, w, v, threshold: float) -> float:
    return float(fronthaul_usages(scenario, w, v, threshold)[l])


@dataclass(frozen=True)
class BeamformingSolution:
    """Beamforming vectors plus metrics recomputable from them.

    `status` is "Optimal" for converged runs, "Infeasible" when the RF
    energy target exceeds the achievable maximum (then `q_max` says what was
    achievable), and "NotConverged" when the outer loop hit its iteration
    cap (vectors are the best iterate found).
    """

    w: np.ndarray                 # (K, M*L)
    v: np.ndarray                 # (J, M*L)
    sinr: np.ndarray              # (K,)
    rates: np.ndarray             # (K,) bits/s/Hz
    harvested: np.ndarray         # (J,) watts
    powers: np.ndarray            # (L,) watts
    usages: np.ndarray            # (L,) bits/s/Hz
    association: np.ndarray       # (K, L) bool
    status: str = "Optimal"
    gamma: float = 0.0            # achieved common SINR target
    q_max: float = float("nan")   # populated for infeasible results
    bisect_iters: int = 0
    outer_iters: int = 0

    @classmethod
    def from_vectors(cls, scenario: Scenario, w, v, assoc_threshold: float = 1e-6,
                     **extra) -> "BeamformingSolution":
        w = _as_beams(w, scenario.n)
        v = _as_beams(v, scenario.n)
        s = sinr_all(scenario, w, v)
        return cls(
            w=w,
            v=v,
            sinr=s,
            rates=np.log2(1.0 + s),
            harvested=harvested_all(scenario, w, v),
            powers=rrh_powers(w, v, scenario.L, scenario.M),
            usages=fronthaul_usages(scenario, w, v, assoc_threshold),
            association=association_matrix(w, scenario.L, scenario.M, assoc_threshold),
            **extra,
        )

    @property
    def min_rate(self) -> float:
        return float(self.rates.min()) if self.rates.size else 0.0

    @property
    def mean_assoc_per_dr(self) -> float:
        if self.association.shape[0] == 0:
            return 0.0
        return float(self.association.sum(axis=1).mean())


# ---------------------------------------------------------------------------
# scenario configuration (JSON-friendly dict with units in field names)

_TOPOLOGY_FIELDS = {
    "rrh_radius_m": 15.0,
    "exclusion_m": 1.0,
    "seed": 0,
    "rrh_positions_m": None,
    "dr_positions_m": None,
    "er_positions_m": None,
}

_SCENARIO_FIELDS = {
    "n_rrh": 3,
    "n_antennas": 2,
    "n_dr": 6,
    "n_er": 3,
    "energy_watts": 5.0,
    "capacity_bps_hz": None,       # null means unlimited fronthaul
    "q_min_watts": 1e-6,
    "noise_watts": DEFAULT_NOISE_W,
    "rf_efficiency": DEFAULT_EFFICIENCY,
    "path_loss_exponent": DEFAULT_ALPHA,
    "channel_seed": 0,
    "topology": None,
}


def scenario_config_schema() -> dict:
    """Defaults for every recognised scenario config field."""
    schema = dict(_SCENARIO_FIELDS)
    schema["topology"] = dict(_TOPOLOGY_FIELDS)
    return schema


def _check_unknown(config: dict, allowed, where: str) -> None:
    for key in config:
        if key not in allowed:
            raise ValueError(f"unknown field {key!r} in {where}")


def topology_from_config(config: dict | None, n_rrh: int, n_dr: int,
                         n_er: int) -> Topology:
    config = dict(config or {})
    _check_unknown(config, _TOPOLOGY_FIELDS, "topology config")
    merged = {**_TOPOLOGY_FIELDS, **config}
    explicit = [merged[k] is not None for k in
                ("rrh_positions_m", "dr_positions_m", "er_positions_m")]
    if any(explicit):
        if not all(explicit):
            raise ValueError("give all of rrh/dr/er positions or none")
        return Topology(np.asarray(merged["rrh_positions_m"], dtype=float),
                        np.asarray(merged["dr_positions_m"], dtype=float),
                        np.asarray(merged["er_positions_m"], dtype=float))
    return polygon_topology(n_rrh, n_dr, n_er, radius=float(merged["rrh_radius_m"]),
                            seed=int(merged["seed"]),
                            exclusion=float(merged["exclusion_m"]))


def scenario_from_config(config: dict, channel_seed: int | None = None) -> Scenario:
    """Build a Scenario from a config dict (see `scenario_config_schema`).

    `channel_seed` overrides the config's seed; sweeps use it to draw a new
    fading realization per trial over the same fixed topology.
    """
    config = dict(config)
    _check_unknown(config, _SCENARIO_FIELDS, "scenario config")
    merged = {**_SCENARIO_FIELDS, **config}
    n_rrh = int(merged["n_rrh"])
    n_ant = int(merged["n_antennas"])
    n_dr = int(merged["n_dr"])
    n_er = int(merged["n_er"])
    topo = topology_from_config(merged["topology"], n_rrh, n_dr, n_er)
    if topo.n_rrh != n_rrh or topo.dr_positions.shape[0] != n_dr \
            or topo.er_positions.shape[0] != n_er:
        raise ValueError("topology sizes disagree with n_rrh/n_dr/n_er")
    seed = int(merged["channel_seed"] if channel_seed is None else channel_seed)
    h, g = generate_channels(topo, n_ant, float(merged["path_loss_exponent"]), seed)
    capacity = merged["capacity_bps_hz"]
    c = np.full(n_rrh, np.inf) if capacity is None else np.asarray(capacity, dtype=float)
    return Scenario(
        L=n_rrh, M=n_ant, K=n_dr, J=n_er, h=h, g=g,
        E=np.broadcast_to(np.asarray(merged["energy_watts"], dtype=float), (n_rrh,)),
        C=np.broadcast_to(c, (n_rrh,)),
        q_min=float(merged["q_min_watts"]),
        sigma2=float(merged["noise_watts"]),
        eta=float(merged["rf_efficiency"]),
    )


def splitmix64(base_seed: int, index: int) -> int:
    """Documented per-trial seed mix: splitmix64 of (base_seed + index steps).

    Extending a sweep with more trials never perturbs earlier trials.
    """
    return _splitmix64((int(base_seed) + int(index) * 0x9E3779B97F4A7C15)
                       & 0xFFFFFFFFFFFFFFFF)
