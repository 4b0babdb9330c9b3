"""Seedable problem-instance generation: topology, path loss, fading, CSI error, energy profiles.

Randomness comes from numpy's counter-based Philox generator. Every random
quantity has its own substream keyed by ``(seed, stream, index...)`` so that
changing one dimension of the instance (say, the number of antennas per RRH)
leaves the other draws untouched. Seeds are recorded in ``Scenario.meta``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StructuralError
from .model import Geometry, Scenario, secrecy_rate
from .units import db_to_linear, dbm_to_watt

SPEED_OF_LIGHT = 299_792_458.0
SLOTS_PER_DAY = 96
# backhaul caps of 10 and 15 bits/s/Hz against the 15.58 bits/s/Hz summed over the
# five default SINR targets, kept as fractions so that smaller K scale alike
TIGHT_CAP_FRACTION = 10.0 / 15.581809955797208
LOOSE_CAP_FRACTION = 15.0 / 15.581809955797208

_STREAM_POSITION = 0
_STREAM_IR_FADING = 1
_STREAM_ER_FADING = 2


def substream(*key: int) -> np.random.Generator:
    """Independent Philox stream for a tuple of nonnegative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class TopologyConfig:
    inter_site_distance: float = 150.0
    service_radius: float = 150.0
    path_loss_exponent: float = 2.7
    carrier_freq: float = 915e6
    seed: int = 0
    # combined transmit/receive antenna gain added on top of the 1 m free-space anchor
    antenna_gain_db: float = 38.0
    min_distance: float = 10.0

    def __post_init__(self):
        if self.inter_site_distance <= 0 or self.service_radius <= 0 or self.min_distance <= 0:
            raise StructuralError("distances must be positive")
        if self.path_loss_exponent < 2:
            raise StructuralError("path-loss exponent must be >= 2")
        if self.carrier_freq <= 0:
            raise StructuralError("carrier frequency must be positive")

    @property
    def reference_gain(self) -> float:
        """Linear channel power gain at 1 m: free-space loss plus antenna gain."""
        lam = SPEED_OF_LIGHT / self.carrier_freq
        return (lam / (4 * np.pi)) ** 2 * float(db_to_linear(self.antenna_gain_db))

    def path_gain(self, d) -> np.ndarray:
        d = np.maximum(np.asarray(d, dtype=float), self.min_distance)
        return self.reference_gain * d ** (-self.path_loss_exponent)


@dataclass(frozen=True)
class EnergyProfile:
    """Normalized wind/solar harvest traces (96 slots) and per-RRH mixing weights."""

    xi_wind: np.ndarray
    xi_solar: np.ndarray
    E_scale: float = 500.0
    mix: tuple = ((0.5, 0.5), (0.9, 0.1), (0.1, 0.9))

    def __post_init__(self):
        for name in ("xi_wind", "xi_solar"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (SLOTS_PER_DAY,):
                raise StructuralError(f"{name} must have {SLOTS_PER_DAY} samples")
            if np.any(arr < 0) or np.any(arr > 1):
                raise StructuralError(f"{name} samples must lie in [0, 1]")
            object.__setattr__(self, name, arr)
        mix = tuple(tuple(float(x) for x in w) for w in self.mix)
        for w in mix:
            if len(w) != 2 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise StructuralError(f"mixing weights {w} must be nonnegative and sum to 1")
        object.__setattr__(self, "mix", mix)

    def weights(self, rrh: int) -> tuple[float, float]:
        return self.mix[rrh % len(self.mix)]


def synthetic_profile(E_scale: float = 500.0, mix=None) -> EnergyProfile:
    """Smooth stand-in for a measured day: bell-shaped solar, slowly varying wind."""
    t = np.arange(1, SLOTS_PER_DAY + 1)
    hours = (t - 0.5) / 4.0
    solar = np.clip(np.sin(np.pi * (hours - 6.0) / 14.0), 0.0, None)
    solar[(hours < 6.0) | (hours > 20.0)] = 0.0
    wind = 0.55 + 0.25 * np.cos(2 * np.pi * (hours - 3.0) / 24.0) + 0.1 * np.sin(2 * np.pi * hours / 7.0)
    kwargs = {} if mix is None else {"mix": mix}
    return EnergyProfile(np.clip(wind, 0, 1), solar, E_scale, **kwargs)


def load_profile_csv(path, E_scale: float = 500.0, mix=None) -> EnergyProfile:
    """Read a CSV with columns ``slot, xi_wind, xi_solar`` (96 rows)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["slot"]), float(row["xi_wind"]), float(row["xi_solar"])))
    rows.sort()
    if [r[0] for r in rows] != list(range(1, SLOTS_PER_DAY + 1)):
        raise StructuralError("energy profile must list slots 1..96 exactly once")
    kwargs = {} if mix is None else {"mix": mix}
    return EnergyProfile(np.array([r[1] for r in rows]), np.array([r[2] for r in rows]), E_scale, **kwargs)


def harvest_at(profile: EnergyProfile, rrh: int, slot: int) -> float:
    """Energy (J/s) available from the harvesters of RRH ``rrh`` in 1-based ``slot``."""
    if not 1 <= slot <= SLOTS_PER_DAY:
        raise StructuralError(f"slot must be in 1..{SLOTS_PER_DAY}, got {slot}")
    ww, ws = profile.weights(rrh)
    return profile.E_scale * (ww * profile.xi_wind[slot - 1] + ws * profile.xi_solar[slot - 1])


@dataclass(frozen=True)
class SystemParams:
    """Counts, QoS targets and power budgets. dB/dBm values are converted at build time."""

    L: int = 3
    K: int = 3
    M: int = 2
    Nt: int = 2
    gamma_req_db: Sequence[float] = (6.0, 9.0, 12.0, 15.0, 18.0)
    gamma_tol_db: float = 0.0
    sigma_s_dbm: float = -23.0
    sigma_ir_dbm: float | None = None
    sigma_er_dbm: float | None = None
    P_c_cp_dbm: float = 40.0
    P_c_rrh_dbm: float = 30.0
    pa_efficiency: float = 0.38
    P_tx_max_dbm: float = 48.0
    P_min_dbm: float = -10.0
    mu: float = 0.5
    C_backhaul_max: float | Sequence[float] = 4.2
    sigma_est_sq: float = 0.05
    E_scale: float = 500.0
    slot: int = 48
    B: Sequence[Sequence[float]] | None = None
    energy_mix: Sequence[Sequence[float]] = ((0.5, 0.5), (0.9, 0.1), (0.1, 0.9))

    def __post_init__(self):
        if min(self.L, self.K, self.Nt) < 1 or self.M < 0:
            raise StructuralError("L, K, Nt must be >= 1 and M >= 0")
        if len(self.gamma_req_db) < self.K:
            raise StructuralError(f"need {self.K} SINR targets, got {len(self.gamma_req_db)}")


def backhaul_cap(gamma_req_db, gamma_tol_db: float = 0.0, fraction: float = TIGHT_CAP_FRACTION) -> float:
    """``fraction`` times the summed secrecy rate of the given SINR targets (bits/s/Hz)."""
    if fraction <= 0:
        raise StructuralError("cap fraction must be positive")
    rates = secrecy_rate(db_to_linear(np.asarray(gamma_req_db, float)), float(db_to_linear(gamma_tol_db)))
    return float(fraction * np.sum(rates))


def default_b_matrix(L: int, E_scale: float, loss_fraction: float = 0.05) -> np.ndarray:
    """b0 * (I + 0.1 (11^T - I)) with b0 such that supplying E_scale from every source loses ``loss_fraction``."""
    n = L + 1
    shape = np.eye(n) + 0.1 * (np.ones((n, n)) - np.eye(n))
    b0 = loss_fraction / (E_scale * (1.0 + 0.1 * L))
    return b0 * shape


def rrh_positions(L: int, inter_site_distance: float) -> np.ndarray:
    """Regular L-gon centred at the origin with the given side length (triangle for L=3)."""
    if L == 1:
        return np.zeros((1, 2))
    circumradius = inter_site_distance / (2 * np.sin(np.pi / L))
    ang = np.pi / 2 + 2 * np.pi * np.arange(L) / L
    return circumradius * np.column_stack([np.cos(ang), np.sin(ang)])


def _uniform_disc(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random())
    a = 2 * np.pi * rng.random()
    return np.array([r * np.cos(a), r * np.sin(a)])


def _fading(seed: int, stream: int, idx: int, L: int, Nt: int) -> np.ndarray:
    out = np.empty(L * Nt, complex)
    for l in range(L):
        rng = substream(seed, stream, idx, l)
        z = rng.standard_normal((Nt, 2))
        out[l * Nt:(l + 1) * Nt] = (z[:, 0] + 1j * z[:, 1]) / np.sqrt(2)
    return out


def generate_scenario(cfg: TopologyConfig, params: SystemParams, seed: int | None = None,
                      profile: EnergyProfile | None = None) -> Scenario:
    """Build a first-tier instance; second-tier interference is folded into the noise powers."""
    seed = cfg.seed if seed is None else int(seed)
    L, K, M, Nt = params.L, params.K, params.M, params.Nt
    rrh = rrh_positions(L, cfg.inter_site_distance)
    ir_pos = np.array([_uniform_disc(substream(seed, _STREAM_POSITION, 0, k), cfg.service_radius) for k in range(K)]).reshape(K, 2)
    er_pos = np.array([_uniform_disc(substream(seed, _STREAM_POSITION, 1, m), cfg.service_radius) for m in range(M)]).reshape(M, 2)
    ir_fad = np.array([_fading(seed, _STREAM_IR_FADING, k, L, Nt) for k in range(K)]).reshape(K, L * Nt)
    er_fad = np.array([_fading(seed, _STREAM_ER_FADING, m, L, Nt) for m in range(M)]).reshape(M, L * Nt)

    def channel(pos, fad):
        d = np.linalg.norm(rrh - pos, axis=1)
        amp = np.repeat(np.sqrt(cfg.path_gain(d)), Nt)
        return amp * fad

    h = np.array([channel(ir_pos[k], ir_fad[k]) for k in range(K)]).reshape(K, L * Nt)
    g = np.array([channel(er_pos[m], er_fad[m]) for m in range(M)]).reshape(M, L * Nt)

    gamma_req = db_to_linear(np.asarray(params.gamma_req_db[:K], float))
    gamma_tol = float(db_to_linear(params.gamma_tol_db))
    sigma_s = float(dbm_to_watt(params.sigma_s_dbm))
    sigma_ir = float(dbm_to_watt(params.sigma_ir_dbm)) if params.sigma_ir_dbm is not None else sigma_s
    sigma_er = float(dbm_to_watt(params.sigma_er_dbm)) if params.sigma_er_dbm is not None else sigma_s
    P_c_cp = float(dbm_to_watt(params.P_c_cp_dbm))
    if profile is None:
        profile = synthetic_profile(params.E_scale, params.energy_mix)
    E_max = np.array([harvest_at(profile, l, params.slot) for l in range(L)] + [P_c_cp])
    B = np.asarray(params.B, float) if params.B is not None else default_b_matrix(L, params.E_scale)
    scen = Scenario(
        L=L, K=K, M=M, Nt=Nt, h=h, g_hat=g,
        Xi=np.broadcast_to(np.eye(L * Nt), (M, L * Nt, L * Nt)), eps=np.zeros(M),
        gamma_req=gamma_req, gamma_tol=gamma_tol,
        sigma_ir_sq=np.full(K, sigma_ir), sigma_er_sq=np.full(M, sigma_er), sigma_s_sq=sigma_s,
        C_backhaul_max=np.broadcast_to(np.asarray(params.C_backhaul_max, float), (L,)),
        P_tx_max=np.full(L, float(dbm_to_watt(params.P_tx_max_dbm))),
        P_min_er=np.full(M, float(dbm_to_watt(params.P_min_dbm))),
        E_max=E_max, B=B, P_c_cp=P_c_cp, P_c_rrh=np.full(L, float(dbm_to_watt(params.P_c_rrh_dbm))),
        rho=1.0 / params.pa_efficiency, mu=params.mu,
        R_backhaul=secrecy_rate(gamma_req, gamma_tol),
        geometry=Geometry(rrh, ir_pos, er_pos, ir_fad, er_fad, cfg.reference_gain,
                          cfg.path_loss_exponent, cfg.min_distance),
        meta={"seed": seed, "slot": params.slot, "prng": "philox4x64"},
    )
    return apply_csi_error(scen, np.full(M, params.sigma_est_sq))


def apply_csi_error(scen: Scenario, sigma_est_sq) -> Scenario:
    """Spherical uncertainty with eps_m^2 = sigma_est_m^2 * ||g_m||^2.

    The stored ``g_hat`` is the channel known at the start of the slot; the
    channel during transmission may drift anywhere inside the ball.
    """
    s2 = np.broadcast_to(np.asarray(sigma_est_sq, float), (scen.M,))
    if np.any(s2 < 0):
        raise StructuralError("normalized estimation error must be nonnegative")
    eps = np.sqrt(s2 * np.sum(np.abs(scen.g_hat) ** 2, axis=1))
    Xi = np.broadcast_to(np.eye(scen.n), (scen.M, scen.n, scen.n))
    meta = {**scen.meta, "sigma_est_sq": [float(x) for x in s2]}
    return scen.replace(eps=eps, Xi=Xi, meta=meta)


# --- config and snapshot I/O -------------------------------------------------

def load_config(path) -> tuple[TopologyConfig, SystemParams, dict]:
    """Read a JSON config with optional ``topology``, ``system`` and ``run`` sections."""
    data = json.loads(Path(path).read_text())
    return config_from_dict(data)


def config_from_dict(data: dict) -> tuple[TopologyConfig, SystemParams, dict]:
    known = {"topology", "system", "run"}
    extra = set(data) - known
    if extra:
        raise StructuralError(f"unknown config sections: {sorted(extra)}")
    try:
        topo = TopologyConfig(**data.get("topology", {}))
        sys_ = SystemParams(**data.get("system", {}))
    except TypeError as exc:
        raise StructuralError(str(exc)) from exc
    return topo, sys_, dict(data.get("run", {}))


def _enc(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return a.tolist()


def _dec(v, dtype=float):
    if isinstance(v, dict) and "re" in v:
        return np.asarray(v["re"], float) + 1j * np.asarray(v["im"], float)
    return np.asarray(v, dtype)


_ARRAY_FIELDS = ("h", "g_hat", "Xi", "eps", "gamma_req", "sigma_ir_sq", "sigma_er_sq", "C_backhaul_max",
                 "P_tx_max", "P_min_er", "E_max", "B", "P_c_rrh", "R_backhaul")
_SCALAR_FIELDS = ("L", "K", "M", "Nt", "gamma_tol", "sigma_s_sq", "P_c_cp", "rho", "mu")


def scenario_to_dict(scen: Scenario) -> dict:
    out = {"format": "dasswipt-scenario/1"}
    for f in _SCALAR_FIELDS:
        out[f] = getattr(scen, f)
    for f in _ARRAY_FIELDS:
        out[f] = _enc(getattr(scen, f))
    if scen.geometry is not None:
        out["geometry"] = {k: (_enc(v) if isinstance(v, np.ndarray) else v) for k, v in asdict(scen.geometry).items()}
    out["meta"] = scen.meta
    return out


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("format") != "dasswipt-scenario/1":
        raise StructuralError("not a dasswipt scenario snapshot")
    kw = {f: d[f] for f in _SCALAR_FIELDS}
    kw.update({f: _dec(d[f]) for f in _ARRAY_FIELDS})
    geo = d.get("geometry")
    if geo is not None:
        geo = Geometry(**{k: (_dec(v) if isinstance(v, (list, dict)) else v) for k, v in geo.items()})
    return Scenario(**kw, geometry=geo, meta=d.get("meta", {}))


def write_snapshot(scen: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scen), indent=1))


def read_snapshot(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
