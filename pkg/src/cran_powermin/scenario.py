"""Problem instances: geometry, channel statistics, tasks, servers, radio.

A :class:`Scenario` is immutable once built. It is either sampled from a
:class:`ScenarioConfig` with a seed (:func:`generate_scenario`) or read back
from the JSON document written by :func:`save_scenario`.

Random variates are drawn in a fixed order as unit uniforms and only then
mapped onto the configured ranges, so two configs that differ only in a range
(e.g. the execution-efficiency regime) yield paired instances for the same
seed.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError, DomainError

SCENARIO_FORMAT = "cran-powermin/scenario"
SCENARIO_VERSION = 1
CONFIG_DIR_ENV = "CRAN_POWERMIN_CONFIG_DIR"


def path_loss_gain(distance_km):
    """Linear channel gain for the ``128.1 + 37.6 log10(d)`` dB path loss.

    ``distance_km`` may be a scalar or an array; every entry must be > 0.
    """
    d = np.asarray(distance_km, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("distance must be positive")
    loss_db = 128.1 + 37.6 * np.log10(d)
    gain = 10.0 ** (-loss_db / 10.0)
    return float(gain) if gain.ndim == 0 else gain


def noise_power(psd_dbm_per_hz, bandwidth_hz):
    """Noise power in watts for a PSD in dBm/Hz over ``bandwidth_hz``."""
    if not bandwidth_hz > 0:
        raise DomainError("bandwidth must be positive")
    return 10.0 ** (psd_dbm_per_hz / 10.0) * 1e-3 * bandwidth_hz


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TaskSpec:
    """One UE task: output bits ``D``, total delay ``tau`` and load ``L``.

    ``L`` is the execution time on a VM of unit capability. ``tau_ex`` and
    ``tau_tr`` are the budgets used when computation and transmission are
    solved on their own.
    """

    D: float
    tau: float
    L: float
    tau_ex: float
    tau_tr: float

    def __post_init__(self):
        if not (self.D >= 0 and self.L > 0 and self.tau > 0):
            raise ConfigError(f"invalid task {self}")
        if not (self.tau_ex > 0 and self.tau_tr > 0):
            raise ConfigError("tau_ex and tau_tr must be positive")
        if self.tau_ex + self.tau_tr > self.tau * (1 + 1e-12):
            raise ConfigError("tau_ex + tau_tr exceeds tau")


@dataclass(frozen=True)
class ServerSpec:
    """Server ``capacity`` (lambda), static power and per-task efficiency/weight."""

    capacity: float
    p_static: float
    efficiency: tuple
    chi: tuple

    def __post_init__(self):
        if not self.capacity > 0:
            raise ConfigError("server capacity must be positive")
        if any(v < 0 for v in self.efficiency):
            raise ConfigError("execution efficiency must be nonnegative")
        if any(not v > 0 for v in self.chi):
            raise ConfigError("chi must be positive")


@dataclass(frozen=True)
class RadioSpec:
    """Per-RRH radio and fronthaul parameters (identical for every RRH)."""

    N: int
    p_max: float
    C: float
    eta: float
    upsilon: float
    p_active: float
    p_sleep: float
    B: float
    sigma2: float

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not (self.p_max > 0 and self.C > 0 and self.sigma2 > 0 and self.B > 0):
            raise ConfigError("p_max, C, B and sigma2 must be positive")
        if not 0 < self.upsilon <= 1:
            raise ConfigError("upsilon must lie in (0, 1]")
        if not self.p_sleep < self.p_active:
            raise ConfigError("p_sleep must be below p_active")

    @property
    def delta_p(self):
        return self.p_active - self.p_sleep


@dataclass(frozen=True)
class ChannelStats:
    """Large-scale gains ``d`` (L x K) and power-scale factors ``xi2`` (L)."""

    d: np.ndarray
    xi2: np.ndarray

    @classmethod
    def from_gains(cls, d, N):
        d = np.asarray(d, dtype=float)
        if d.ndim != 2 or np.any(~(d > 0)):
            raise ConfigError("large-scale gains must be a positive L x K matrix")
        xi2 = 1.0 / (N * d.sum(axis=1))
        return cls(_freeze(d), _freeze(xi2))

    @property
    def L(self):
        return self.d.shape[0]

    @property
    def K(self):
        return self.d.shape[1]


@dataclass(frozen=True)
class Scenario:
    tasks: tuple
    servers: tuple
    radio: RadioSpec
    rrh_count: int
    stats: ChannelStats
    omega: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        K, S, L = len(self.tasks), len(self.servers), self.rrh_count
        if K == 0 or S == 0 or L == 0:
            raise ConfigError("tasks, servers and RRHs must be non-empty")
        if self.stats.d.shape != (L, K):
            raise ConfigError(f"gain matrix shape {self.stats.d.shape} != {(L, K)}")
        for s in self.servers:
            if len(s.efficiency) != K or len(s.chi) != K:
                raise ConfigError("server efficiency/chi length must equal K")
        if not self.omega > 0:
            raise ConfigError("omega must be positive")

    @property
    def K(self):
        return len(self.tasks)

    @property
    def S(self):
        return len(self.servers)

    @property
    def L(self):
        return self.rrh_count

    @property
    def N(self):
        return self.radio.N

    # vectorised views used by the solvers
    @property
    def D(self):
        return np.array([t.D for t in self.tasks])

    @property
    def tau(self):
        return np.array([t.tau for t in self.tasks])

    @property
    def loads(self):
        return np.array([t.L for t in self.tasks])

    @property
    def tau_ex(self):
        return np.array([t.tau_ex for t in self.tasks])

    @property
    def tau_tr(self):
        return np.array([t.tau_tr for t in self.tasks])

    @property
    def capacity(self):
        return np.array([s.capacity for s in self.servers])

    @property
    def efficiency(self):
        return np.array([s.efficiency for s in self.servers], dtype=float)

    @property
    def chi(self):
        return np.array([s.chi for s in self.servers], dtype=float)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_tasks(self, **fields):
        """Copy with the given TaskSpec fields overridden on every task.

        Values may be scalars or length-K sequences.
        """
        tasks = []
        for k, t in enumerate(self.tasks):
            upd = {name: (v[k] if np.ndim(v) else v) for name, v in fields.items()}
            tasks.append(dataclasses.replace(t, **{n: float(x) for n, x in upd.items()}))
        return dataclasses.replace(self, tasks=tuple(tasks))

    def fingerprint(self):
        """Short stable hash of the instance content."""
        import hashlib

        blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ScenarioConfig:
    """Sampling recipe for :func:`generate_scenario`.

    Ranges are ``[lo, hi]`` pairs sampled uniformly. ``tau_ex``/``tau_tr``
    default to half of ``tau`` each.
    """

    K: int = 6
    S: int = 4
    L: int = 4
    N: int = 5
    radius_km: float = 0.1
    min_distance_km: float = 0.01
    shadowing_db: float = 0.0
    p_max: float = 1.0
    C: float = 2.0
    eta: float = 0.5
    upsilon: float = 0.25
    p_active: float = 6.8
    p_sleep: float = 4.3
    bandwidth_hz: float = 20e6
    noise_psd_dbm_hz: float = -150.0
    D: float = 1.6e6
    tau: float = 1.0
    tau_ex: Optional[float] = None
    tau_tr: Optional[float] = None
    load_range: tuple = (0.01, 0.1)
    capacity_range: tuple = (1.0, 2.0)
    efficiency_range: tuple = (0.1, 0.5)
    chi: float = 1.0
    p_static: float = 2.0
    omega: float = 1.0

    def validate(self):
        for name in ("K", "S", "L", "N"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1 (empty task/server/RRH list)")
        for name in ("load_range", "capacity_range", "efficiency_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi")
        if self.load_range[0] <= 0 or self.capacity_range[0] <= 0:
            raise ConfigError("loads and capacities must be positive")
        if not (self.radius_km > 0 and 0 < self.min_distance_km):
            raise ConfigError("radius and min distance must be positive")
        if self.shadowing_db < 0:
            raise ConfigError("shadowing std must be nonnegative")
        return self

    @property
    def task_budgets(self):
        tau_ex = self.tau / 2 if self.tau_ex is None else self.tau_ex
        tau_tr = self.tau / 2 if self.tau_tr is None else self.tau_tr
        return tau_ex, tau_tr

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for name in ("load_range", "capacity_range", "efficiency_range"):
            if name in data:
                v = data[name]
                if not (isinstance(v, (list, tuple)) and len(v) == 2):
                    raise ConfigError(f"{name} must be a [lo, hi] pair")
                data[name] = (float(v[0]), float(v[1]))
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def to_dict(self):
        out = dataclasses.asdict(self)
        for name in ("load_range", "capacity_range", "efficiency_range"):
            out[name] = list(out[name])
        return out


def _uniform_disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def _scale(u, lo_hi):
    lo, hi = lo_hi
    return lo + (hi - lo) * u


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Sample an instance; deterministic given ``(config, seed)``."""
    config.validate()
    K, S, L, N = int(config.K), int(config.S), int(config.L), int(config.N)
    rng = np.random.default_rng(seed)
    # fixed draw order: geometry, loads, capacities, efficiencies, shadowing
    rrh_xy = _uniform_disk(rng, L, config.radius_km)
    ue_xy = _uniform_disk(rng, K, config.radius_km)
    u_load = rng.random(K)
    u_cap = rng.random(S)
    u_eff = rng.random((S, K))
    z_shadow = rng.standard_normal((L, K))

    dist = np.linalg.norm(rrh_xy[:, None, :] - ue_xy[None, :, :], axis=2)
    dist = np.maximum(dist, config.min_distance_km)
    gain = path_loss_gain(dist)
    if config.shadowing_db > 0:
        gain = gain * 10.0 ** (config.shadowing_db * z_shadow / 10.0)

    tau_ex, tau_tr = config.task_budgets
    loads = _scale(u_load, config.load_range)
    tasks = tuple(
        TaskSpec(D=float(config.D), tau=float(config.tau), L=float(loads[k]),
                 tau_ex=float(tau_ex), tau_tr=float(tau_tr))
        for k in range(K)
    )
    caps = _scale(u_cap, config.capacity_range)
    effs = _scale(u_eff, config.efficiency_range)
    servers = tuple(
        ServerSpec(capacity=float(caps[s]), p_static=float(config.p_static),
                   efficiency=tuple(float(v) for v in effs[s]),
                   chi=tuple(float(config.chi) for _ in range(K)))
        for s in range(S)
    )
    radio = RadioSpec(
        N=N, p_max=float(config.p_max), C=float(config.C), eta=float(config.eta),
        upsilon=float(config.upsilon), p_active=float(config.p_active),
        p_sleep=float(config.p_sleep), B=float(config.bandwidth_hz),
        sigma2=noise_power(config.noise_psd_dbm_hz, config.bandwidth_hz),
    )
    return Scenario(tasks=tasks, servers=servers, radio=radio, rrh_count=L,
                    stats=ChannelStats.from_gains(gain, N), omega=float(config.omega),
                    seed=int(seed))


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "seed": sc.seed,
        "omega": sc.omega,
        "rrh_count": sc.rrh_count,
        "radio": dataclasses.asdict(sc.radio),
        "tasks": [dataclasses.asdict(t) for t in sc.tasks],
        "servers": [
            {"capacity": s.capacity, "p_static": s.p_static,
             "efficiency": list(s.efficiency), "chi": list(s.chi)}
            for s in sc.servers
        ],
        "stats": {"d": sc.stats.d.tolist(), "xi2": sc.stats.xi2.tolist()},
    }


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("format") != SCENARIO_FORMAT:
        raise ConfigError("not a scenario document")
    try:
        radio = RadioSpec(**data["radio"])
        tasks = tuple(TaskSpec(**t) for t in data["tasks"])
        servers = tuple(
            ServerSpec(capacity=s["capacity"], p_static=s["p_static"],
                       efficiency=tuple(s["efficiency"]), chi=tuple(s["chi"]))
            for s in data["servers"]
        )
        d = np.array(data["stats"]["d"], dtype=float)
        stats = ChannelStats.from_gains(d, radio.N)
        if "xi2" in data["stats"]:
            xi2 = np.array(data["stats"]["xi2"], dtype=float)
            if not np.allclose(xi2 * radio.N * d.sum(axis=1), 1.0, rtol=1e-12, atol=0):
                raise ConfigError("xi2 inconsistent with gains")
            stats = ChannelStats(_freeze(d), _freeze(xi2))
        return Scenario(tasks=tasks, servers=servers, radio=radio,
                        rrh_count=int(data["rrh_count"]), stats=stats,
                        omega=float(data.get("omega", 1.0)), seed=data.get("seed"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario document: {exc}") from exc


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def resolve_path(path) -> Path:
    """Resolve a relative path against ``$CRAN_POWERMIN_CONFIG_DIR`` if unset locally."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(CONFIG_DIR_ENV):
        alt = Path(os.environ[CONFIG_DIR_ENV]) / p
        if alt.exists():
            return alt
    return p


def _read_json(path) -> Any:
    p = resolve_path(path)
    try:
        return json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ConfigError("config document must be an object")
    return ScenarioConfig.from_dict(data)


def load_scenario(path) -> Scenario:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ConfigError("scenario document must be an object")
    return scenario_from_dict(data)


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    return json.dumps(scenario_to_dict(a), sort_keys=True) == json.dumps(
        scenario_to_dict(b), sort_keys=True)


__all__ = [
    "TaskSpec", "ServerSpec", "RadioSpec", "ChannelStats", "Scenario",
    "ScenarioConfig", "path_loss_gain", "noise_power", "generate_scenario",
    "scenario_to_dict", "scenario_from_dict", "save_scenario", "load_scenario",
    "load_config", "scenarios_equal",
]
