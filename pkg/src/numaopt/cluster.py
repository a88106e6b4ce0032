"""Static data model of NUMA hardware, services and container instances.

Everything here is a plain value type plus pure functions; nothing mutates
shared state, so these objects are safe to hand to parallel simulations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PAGE_SIZE_KIB = 4
PAGES_PER_MIB = 1024 // PAGE_SIZE_KIB

# Slack allowed when checking a container footprint against its declared
# memory demand (rounding of page counts during growth/turnover).
FOOTPRINT_TOLERANCE_PAGES = PAGES_PER_MIB


@dataclass(frozen=True)
class NumaNode:
    """One CPU socket plus its directly attached memory banks."""

    node_id: int
    cores: int
    mem_capacity_mib: float
    bw_capacity_gbs: float
    local_latency_ns: float

    def __post_init__(self):
        if self.cores < 1:
            raise ValueError(f"node {self.node_id}: cores must be >= 1")
        if self.mem_capacity_mib <= 0:
            raise ValueError(f"node {self.node_id}: mem_capacity_mib must be > 0")
        if self.bw_capacity_gbs <= 0:
            raise ValueError(f"node {self.node_id}: bw_capacity_gbs must be > 0")
        if self.local_latency_ns <= 0:
            raise ValueError(f"node {self.node_id}: local_latency_ns must be > 0")

    @property
    def mem_capacity_pages(self) -> int:
        return int(self.mem_capacity_mib * PAGES_PER_MIB)


@dataclass(frozen=True)
class NumaTopology:
    """A set of NUMA nodes with a single uniform cross-node latency.

    Multi-hop distance matrices are out of scope; remote access cost is one
    number regardless of which pair of nodes is involved.
    """

    nodes: tuple[NumaNode, ...]
    remote_latency_ns: float

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ValueError("topology needs at least 2 NUMA nodes")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids in topology")
        worst_local = max(n.local_latency_ns for n in self.nodes)
        if self.remote_latency_ns <= worst_local:
            raise ValueError(
                "remote latency must exceed every local latency "
                f"({self.remote_latency_ns} <= {worst_local})"
            )

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.node_id for n in self.nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> NumaNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(f"unknown node id {node_id}")


@dataclass
class Server:
    """A physical host: one topology plus the containers placed on it."""

    server_id: str
    topology: NumaTopology
    hosted: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.hosted)) != len(self.hosted):
            raise ValueError(f"server {self.server_id}: duplicate container ids")


@dataclass(frozen=True)
class ServiceProfile:
    """Workload demand parameters shared by all instances of one service.

    ``rss_ratio`` is the mapped-page share of the memory footprint; the
    remainder is page cache, whose placement the OS decides and NUMA binding
    cannot move.  ``burst_ms_range`` bounds how long a thread runs before the
    scheduler may re-place it.
    """

    service_id: str
    cpu_quota: float
    mem_demand_mib: float
    rss_ratio: float
    bw_demand_peak_gbs: float
    compute_cpi: float
    mem_access_intensity: float
    burst_ms_range: tuple[float, float] = (0.4, 10.0)
    load_curve_id: str = "flat"

    def __post_init__(self):
        sid = self.service_id
        if self.cpu_quota <= 0:
            raise ValueError(f"{sid}: cpu_quota must be > 0")
        if self.mem_demand_mib <= 0:
            raise ValueError(f"{sid}: mem_demand_mib must be > 0")
        if not 0.0 <= self.rss_ratio <= 1.0:
            raise ValueError(f"{sid}: rss_ratio must be in [0, 1]")
        if self.bw_demand_peak_gbs <= 0:
            raise ValueError(f"{sid}: bw_demand_peak_gbs must be > 0")
        if self.compute_cpi <= 0:
            raise ValueError(f"{sid}: compute_cpi must be > 0")
        # Zero intensity is the compute-bound degenerate case and is allowed.
        if self.mem_access_intensity < 0:
            raise ValueError(f"{sid}: mem_access_intensity must be >= 0")
        lo, hi = self.burst_ms_range
        if not 0 < lo <= hi:
            raise ValueError(f"{sid}: burst_ms_range must satisfy 0 < low <= high")

    @property
    def mem_demand_pages(self) -> int:
        return int(self.mem_demand_mib * PAGES_PER_MIB)


@dataclass(frozen=True)
class BindState:
    """Bound to one NUMA node, or unbound (threads may run anywhere)."""

    node_id: int | None = None

    @classmethod
    def bound(cls, node_id: int) -> "BindState":
        return cls(node_id=node_id)

    @classmethod
    def unbound(cls) -> "BindState":
        return cls(node_id=None)

    @property
    def is_bound(self) -> bool:
        return self.node_id is not None


@dataclass
class ContainerInstance:
    """One running instance of a service on one server.

    Page placement is tracked separately for mapped (RSS) and page-cache
    pages because binding only changes where future RSS pages land.
    ``thread_time`` is the per-node share of thread runtime in the most
    recent simulation tick and is maintained by the engine.
    """

    container_id: str
    service_id: str
    server_id: str
    profile: ServiceProfile
    bind_state: BindState = field(default_factory=BindState.unbound)
    rss_pages: dict[int, int] = field(default_factory=dict)
    cache_pages: dict[int, int] = field(default_factory=dict)
    current_util: float = 0.0
    thread_time: dict[int, float] = field(default_factory=dict)
    # Engine-owned runtime state.
    home_node: int = 0
    thread_node: int = 0
    thread_affinity: float = 0.0
    cache_rr_cursor: int = 0
    turnover_carry: float = 0.0

    @property
    def pages_per_node(self) -> dict[int, int]:
        merged = dict(self.rss_pages)
        for node, count in self.cache_pages.items():
            merged[node] = merged.get(node, 0) + count
        return merged

    @property
    def total_pages(self) -> int:
        return sum(self.rss_pages.values()) + sum(self.cache_pages.values())

    @property
    def total_rss_pages(self) -> int:
        return sum(self.rss_pages.values())

    def page_share(self, node_ids) -> dict[int, float]:
        """Fraction of the footprint on each node; uniform when empty."""
        total = self.total_pages
        if total == 0:
            return {n: 1.0 / len(node_ids) for n in node_ids}
        pages = self.pages_per_node
        return {n: pages.get(n, 0) / total for n in node_ids}


def validate_container(container: ContainerInstance, topology: NumaTopology) -> None:
    """Raise if a container violates its placement/footprint invariants."""
    if container.total_pages > container.profile.mem_demand_pages + FOOTPRINT_TOLERANCE_PAGES:
        raise ValueError(
            f"{container.container_id}: footprint {container.total_pages} pages "
            f"exceeds demand {container.profile.mem_demand_pages}"
        )
    if container.bind_state.is_bound and container.bind_state.node_id not in topology.node_ids:
        raise ValueError(
            f"{container.container_id}: bound to unknown node {container.bind_state.node_id}"
        )
    for node in list(container.rss_pages) + list(container.cache_pages):
        if node not in topology.node_ids:
            raise ValueError(f"{container.container_id}: pages on unknown node {node}")


def build_topology(
    node_count: int,
    cores: int,
    mem_mib: float,
    bw_gbs: float,
    local_lat_ns: float,
    remote_lat_ns: float,
) -> NumaTopology:
    """Build a homogeneous topology of ``node_count`` identical nodes."""
    if node_count < 2:
        raise ValueError("node_count must be >= 2")
    if remote_lat_ns <= local_lat_ns:
        raise ValueError("remote latency must exceed local latency")
    nodes = tuple(
        NumaNode(
            node_id=i,
            cores=cores,
            mem_capacity_mib=mem_mib,
            bw_capacity_gbs=bw_gbs,
            local_latency_ns=local_lat_ns,
        )
        for i in range(node_count)
    )
    return NumaTopology(nodes=nodes, remote_latency_ns=remote_lat_ns)


def node_utilization(server: Server, node_id: int, instances) -> float:
    """CPU utilization of one NUMA node as a fraction of its cores.

    Bound instances contribute ``current_util * cpu_quota`` cores to their
    bind node; unbound instances are attributed evenly across all nodes,
    approximating load-balanced kernel scheduling.
    """
    node = server.topology.node(node_id)
    n_nodes = server.topology.n_nodes
    used = 0.0
    for inst in instances:
        cores = inst.current_util * inst.profile.cpu_quota
        if inst.bind_state.is_bound:
            if inst.bind_state.node_id == node_id:
                used += cores
        else:
            used += cores / n_nodes
    return used / node.cores


def locality_ratio(container: ContainerInstance, access_weights: dict[int, float]) -> float:
    """Fraction of memory accesses served by the node the threads run on.

    ``access_weights`` is the per-node share of the container's accesses
    (normally its page distribution) and must sum to one.  The thread-time
    side comes from the container: a one-hot vector when bound, otherwise
    the engine-maintained ``thread_time`` weights.
    """
    total = sum(access_weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"access weights sum to {total}, expected 1")
    if container.bind_state.is_bound:
        thread_w = {container.bind_state.node_id: 1.0}
    elif container.thread_time:
        thread_w = container.thread_time
    else:
        thread_w = {n: 1.0 / len(access_weights) for n in access_weights}
    return sum(thread_w.get(n, 0.0) * w for n, w in access_weights.items())
