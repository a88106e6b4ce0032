"""Experiment configuration: a strict JSON schema tying the whole pipeline
together, plus placement of the initial container fleet.

Unknown fields anywhere in the config are rejected with a diagnostic naming
the field, so typos never silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .cluster import BindState, ContainerInstance, NumaTopology, Server, ServiceProfile, build_topology
from .policy import PolicyConfig, ResourceDemand, select_numa_node
from .randomness import substream
from .sensitivity import DEFAULT_GRID
from .simulation import LoadCurve, SimConfig, SimState, builtin_load_curves, provision_container


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 1 territory)."""


def _check_unknown(data: dict, allowed, section: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field '{key}' in {section}")


def _dataclass_from(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    _check_unknown(data, allowed, section)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}: {exc}") from exc


@dataclass(frozen=True)
class TopologySpec:
    nodes: int = 2
    cores: int = 24
    mem_mib: float = 98304.0
    bw_gbs: float = 100.0
    local_latency_ns: float = 80.0
    remote_latency_ns: float = 138.0

    def build(self) -> NumaTopology:
        return build_topology(
            self.nodes,
            self.cores,
            self.mem_mib,
            self.bw_gbs,
            self.local_latency_ns,
            self.remote_latency_ns,
        )


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    cpu_quota: float
    mem_demand_mib: float
    rss_ratio: float
    bw_demand_peak_gbs: float
    compute_cpi: float
    mem_access_intensity: float
    burst_ms_range: tuple[float, float] = (0.4, 10.0)
    load_curve_id: str = "flat"
    instances: int = 1
    start_bound: bool = True

    def __post_init__(self):
        if self.instances < 0:
            raise ValueError(f"{self.service_id}: instances must be >= 0")

    def profile(self) -> ServiceProfile:
        return ServiceProfile(
            service_id=self.service_id,
            cpu_quota=self.cpu_quota,
            mem_demand_mib=self.mem_demand_mib,
            rss_ratio=self.rss_ratio,
            bw_demand_peak_gbs=self.bw_demand_peak_gbs,
            compute_cpi=self.compute_cpi,
            mem_access_intensity=self.mem_access_intensity,
            burst_ms_range=tuple(self.burst_ms_range),
            load_curve_id=self.load_curve_id,
        )


@dataclass(frozen=True)
class LabelGenSpec:
    """Randomized-profile ranges for the paired-simulation label generator.

    ``initial_local_share`` and ``thread_affinity`` spread the unbound twins
    over realistic locality regimes (fresh containers vs. ones whose memory
    drifted remote); ``saturation_exponent`` > 0 keeps the bandwidth
    saturation path into the label enabled.
    """

    cpu_quota: tuple[float, float] = (1.0, 8.0)
    mem_demand_mib: tuple[float, float] = (512.0, 8192.0)
    rss_ratio: tuple[float, float] = (0.5, 0.98)
    bw_demand_peak_gbs: tuple[float, float] = (1.0, 45.0)
    compute_cpi: tuple[float, float] = (0.8, 1.6)
    mem_access_intensity: tuple[float, float] = (0.004, 0.016)
    initial_local_share: tuple[float, float] = (0.0, 1.0)
    thread_affinity: tuple[float, float] = (0.0, 0.9)
    memory_gravity: tuple[float, float] = (0.1, 0.5)
    co_runner_count_max: int = 2
    co_bw_gbs: tuple[float, float] = (5.0, 35.0)
    co_cpu_quota: tuple[float, float] = (2.0, 8.0)
    warmup_s: float = 60.0
    measure_s: float = 300.0
    saturation_exponent: float = 2.0
    util_noise: float = 0.05


@dataclass
class ExperimentSpec:
    topology: TopologySpec = field(default_factory=TopologySpec)
    services: list[ServiceSpec] = field(default_factory=list)
    placement_seed: int = 7
    sim: SimConfig = field(default_factory=SimConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    label_batch: int = 2000
    label_gen: LabelGenSpec = field(default_factory=LabelGenSpec)
    model_grid: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRID.items()})
    load_curves: dict = field(default_factory=dict)
    output_dir: str = "out"


_TOP_LEVEL_FIELDS = (
    "topology",
    "services",
    "placement_seed",
    "sim",
    "policy",
    "label_batch",
    "label_gen",
    "model_grid",
    "load_curves",
    "output_dir",
)


def spec_from_dict(data: dict) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_unknown(data, _TOP_LEVEL_FIELDS, "config root")
    topology = _dataclass_from(TopologySpec, data.get("topology", {}), "topology")
    services = []
    for i, raw in enumerate(data.get("services", [])):
        raw = dict(raw)
        if "burst_ms_range" in raw:
            raw["burst_ms_range"] = tuple(raw["burst_ms_range"])
        services.append(_dataclass_from(ServiceSpec, raw, f"services[{i}]"))
    ids = [s.service_id for s in services]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate service_id in services")
    sim = _dataclass_from(SimConfig, data.get("sim", {}), "sim")
    policy = _dataclass_from(PolicyConfig, data.get("policy", {}), "policy")
    raw_gen = dict(data.get("label_gen", {}))
    for key, value in raw_gen.items():
        if isinstance(value, list):
            raw_gen[key] = tuple(value)
    label_gen = _dataclass_from(LabelGenSpec, raw_gen, "label_gen")
    grid = data.get("model_grid", {k: list(v) for k, v in DEFAULT_GRID.items()})
    _check_unknown(grid, set(DEFAULT_GRID), "model_grid")
    curves = data.get("load_curves", {})
    for name, samples in curves.items():
        LoadCurve(curve_id=name, samples=tuple(samples))  # validate early
    label_batch = int(data.get("label_batch", 2000))
    if label_batch < 1:
        raise ConfigError("label_batch must be >= 1")
    return ExperimentSpec(
        topology=topology,
        services=services,
        placement_seed=int(data.get("placement_seed", 7)),
        sim=sim,
        policy=policy,
        label_batch=label_batch,
        label_gen=label_gen,
        model_grid={k: list(v) for k, v in grid.items()},
        load_curves={k: list(v) for k, v in curves.items()},
        output_dir=str(data.get("output_dir", "out")),
    )


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return spec_from_dict(data)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "topology": {f.name: getattr(spec.topology, f.name) for f in fields(TopologySpec)},
        "services": [
            {
                f.name: (
                    list(getattr(s, f.name))
                    if isinstance(getattr(s, f.name), tuple)
                    else getattr(s, f.name)
                )
                for f in fields(ServiceSpec)
            }
            for s in spec.services
        ],
        "placement_seed": spec.placement_seed,
        "sim": {f.name: getattr(spec.sim, f.name) for f in fields(SimConfig)},
        "policy": {f.name: getattr(spec.policy, f.name) for f in fields(PolicyConfig)},
        "label_batch": spec.label_batch,
        "label_gen": {
            f.name: (
                list(getattr(spec.label_gen, f.name))
                if isinstance(getattr(spec.label_gen, f.name), tuple)
                else getattr(spec.label_gen, f.name)
            )
            for f in fields(LabelGenSpec)
        },
        "model_grid": spec.model_grid,
        "load_curves": spec.load_curves,
        "output_dir": spec.output_dir,
    }


def spec_sha256(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def curves_for(spec: ExperimentSpec) -> dict[str, LoadCurve]:
    curves = builtin_load_curves()
    for name, samples in spec.load_curves.items():
        curves[name] = LoadCurve(curve_id=name, samples=tuple(samples))
    return curves


def build_state(spec: ExperimentSpec) -> tuple[SimState, SimConfig]:
    """Materialize the initial fleet: one server, instances placed in spec
    order, bound via the allocator's node choice when ``start_bound``."""
    topology = spec.topology.build()
    server = Server(server_id="s0", topology=topology, hosted=[])
    curves = curves_for(spec)
    state = SimState(clock=0.0, servers=[server], containers={}, load_curves=curves)
    placement_rng = substream(spec.placement_seed, "placement")
    for service in spec.services:
        profile = service.profile()
        if profile.load_curve_id not in curves:
            raise ConfigError(
                f"{service.service_id}: unknown load_curve_id '{profile.load_curve_id}'"
            )
        for i in range(service.instances):
            cid = f"{service.service_id}-{i:03d}"
            placed = [state.containers[c] for c in server.hosted]
            node = None
            if service.start_bound:
                node = select_numa_node(
                    server,
                    ResourceDemand(
                        profile.cpu_quota, profile.mem_demand_mib, profile.bw_demand_peak_gbs
                    ),
                    placed,
                )
            if node is None:
                home_id = topology.node_ids[int(placement_rng.integers(0, topology.n_nodes))]
                bind = BindState.unbound()
            else:
                home_id = node
                bind = BindState.bound(node)
            container = ContainerInstance(
                container_id=cid,
                service_id=profile.service_id,
                server_id="s0",
                profile=profile,
                bind_state=bind,
                home_node=home_id,
                thread_node=home_id,
            )
            provision_container(state, container, spec.sim)
    return state, spec.sim


def reference_spec_dict() -> dict:
    """The shipped 2-node / 22-container / 24-hour reference experiment."""
    return {
        "topology": {
            "nodes": 2,
            "cores": 24,
            "mem_mib": 98304.0,
            "bw_gbs": 100.0,
            "local_latency_ns": 80.0,
            "remote_latency_ns": 138.0,
        },
        "services": [
            {
                "service_id": "frontend",
                "cpu_quota": 2.0,
                "mem_demand_mib": 2048.0,
                "rss_ratio": 0.9,
                "bw_demand_peak_gbs": 3.0,
                "compute_cpi": 1.0,
                "mem_access_intensity": 0.002,
                "load_curve_id": "diurnal",
                "instances": 10,
            },
            {
                "service_id": "ranker",
                "cpu_quota": 2.0,
                "mem_demand_mib": 4096.0,
                "rss_ratio": 0.7,
                "bw_demand_peak_gbs": 5.0,
                "compute_cpi": 0.9,
                "mem_access_intensity": 0.003,
                "load_curve_id": "diurnal",
                "instances": 6,
            },
            {
                "service_id": "batch",
                "cpu_quota": 2.0,
                "mem_demand_mib": 1024.0,
                "rss_ratio": 0.95,
                "bw_demand_peak_gbs": 2.0,
                "compute_cpi": 1.2,
                "mem_access_intensity": 0.002,
                "load_curve_id": "flat",
                "instances": 6,
            },
        ],
        "placement_seed": 7,
        "sim": {"tick": 1.0, "duration": 86400.0, "seed": 42},
        "policy": {"strategy": "B"},
        "label_batch": 2000,
        "output_dir": "out",
    }
