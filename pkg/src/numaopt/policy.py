"""Online control plane: node selection, unbind strategies A/B, the
optimizer loop, unbind-ratio accounting and the deployment client.

Strategy A unbinds a container when it runs over its CPU quota while its
bind node is hot.  Strategy B additionally requires cross-node imbalance and
the bind node exceeding its own P95 utilization history, so it fires far
less often.  Both use strict ``>`` comparisons throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .cluster import BindState, ContainerInstance, Server, node_utilization
from .metrics import FeatureVector
from .sensitivity import predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyConfig:
    strategy: str = "B"
    node_util_hot: float = 0.80
    imbalance_band: float = 0.10
    quota_over: float = 1.00
    p95_window_s: float = 86400.0
    rebind_cool: float = 0.60
    min_predicted_improvement: float = 0.02

    def __post_init__(self):
        if self.strategy not in ("A", "B"):
            raise ValueError(f"strategy must be 'A' or 'B', got {self.strategy!r}")
        if not 0.0 < self.node_util_hot <= 1.0:
            raise ValueError("node_util_hot must be in (0, 1]")
        if not 0.10 <= self.imbalance_band <= 0.15:
            raise ValueError("imbalance_band must be in [0.10, 0.15]")
        if self.quota_over <= 0:
            raise ValueError("quota_over must be > 0")
        if self.p95_window_s <= 0:
            raise ValueError("p95_window_s must be > 0")
        if self.rebind_cool >= self.node_util_hot:
            raise ValueError("rebind_cool must be below node_util_hot")
        if self.rebind_cool <= 0:
            raise ValueError("rebind_cool must be > 0")


class UtilizationHistory:
    """Time-bounded per-node utilization samples with nearest-rank P95."""

    def __init__(self, window_s: float):
        self.window_s = window_s
        self.entries: list[tuple[float, dict[int, float]]] = []

    def append(self, timestamp: float, utils: dict[int, float]) -> None:
        if self.entries and timestamp < self.entries[-1][0]:
            raise ValueError("history timestamps must be nondecreasing")
        self.entries.append((timestamp, dict(utils)))
        cutoff = timestamp - self.window_s
        drop = 0
        while drop < len(self.entries) and self.entries[drop][0] < cutoff:
            drop += 1
        if drop:
            self.entries = self.entries[drop:]

    def __len__(self):
        return len(self.entries)

    def p95(self, node_id: int) -> float:
        """Nearest-rank 95th percentile of this node's samples."""
        values = sorted(u[node_id] for _, u in self.entries if node_id in u)
        if not values:
            raise ValueError(f"no history for node {node_id}")
        rank = max(1, math.ceil(0.95 * len(values)))
        return values[rank - 1]


@dataclass(frozen=True)
class OptimizerAction:
    kind: str  # "bind" | "unbind" | "noop"
    container_id: str | None = None
    node_id: int | None = None
    reason: str = ""

    def __post_init__(self):
        if self.kind not in ("bind", "unbind", "noop"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == "bind" and self.node_id is None:
            raise ValueError("bind action needs a target node")


@dataclass(frozen=True)
class ActionRecord:
    timestamp: float
    server_id: str
    container_id: str
    kind: str
    reason: str = ""


@dataclass
class ActionLog:
    """Applied bind/unbind events plus the run span they cover."""

    run_start: float = 0.0
    run_end: float = 0.0
    instance_ids: list[str] = field(default_factory=list)
    events: list[ActionRecord] = field(default_factory=list)

    def append(self, record: ActionRecord) -> None:
        self.events.append(record)


@dataclass(frozen=True)
class ResourceDemand:
    cpu_cores: float
    mem_mib: float
    bw_gbs: float


def select_numa_node(server: Server, demand: ResourceDemand, instances) -> int | None:
    """Pick the bind node leaving the most slack for a new placement.

    Nodes must fit the demand on CPU, memory and bandwidth (against quota
    reservations of already-bound instances); among feasible nodes the one
    with the largest leftover CPU fraction wins, ties by leftover bandwidth
    fraction, then lowest node id.  Returns None when nothing fits, in which
    case the caller may place the container unbound.
    """
    reserved: dict[int, list[float]] = {
        n.node_id: [0.0, 0.0, 0.0] for n in server.topology.nodes
    }
    for inst in instances:
        if inst.bind_state.is_bound:
            node = inst.bind_state.node_id
            reserved[node][0] += inst.profile.cpu_quota
            reserved[node][1] += inst.profile.mem_demand_mib
            reserved[node][2] += inst.profile.bw_demand_peak_gbs
    best = None
    for node in server.topology.nodes:
        used_cpu, used_mem, used_bw = reserved[node.node_id]
        cpu_left = node.cores - used_cpu - demand.cpu_cores
        mem_left = node.mem_capacity_mib - used_mem - demand.mem_mib
        bw_left = node.bw_capacity_gbs - used_bw - demand.bw_gbs
        if cpu_left < 0 or mem_left < 0 or bw_left < 0:
            continue
        score = (cpu_left / node.cores, bw_left / node.bw_capacity_gbs, -node.node_id)
        if best is None or score > best[0]:
            best = (score, node.node_id)
    return None if best is None else best[1]


def should_unbind_a(
    container: ContainerInstance,
    server: Server,
    instances,
    history: UtilizationHistory | None,
    config: PolicyConfig,
) -> bool:
    """Over quota and bind node hot."""
    if not container.bind_state.is_bound:
        return False
    if container.current_util <= config.quota_over:
        return False
    node_util = node_utilization(server, container.bind_state.node_id, instances)
    return node_util > config.node_util_hot


def should_unbind_b(
    container: ContainerInstance,
    server: Server,
    instances,
    history: UtilizationHistory | None,
    config: PolicyConfig,
) -> bool:
    """Over quota, bind node imbalanced against the coolest node, and above
    its own P95 history.  Cold start (no history) never triggers."""
    if not container.bind_state.is_bound:
        return False
    if container.current_util <= config.quota_over:
        return False
    if history is None or len(history) == 0:
        return False
    bound_node = container.bind_state.node_id
    utils = {
        n.node_id: node_utilization(server, n.node_id, instances)
        for n in server.topology.nodes
    }
    others = [u for node, u in utils.items() if node != bound_node]
    if utils[bound_node] - min(others) <= config.imbalance_band:
        return False
    return utils[bound_node] > history.p95(bound_node)


_STRATEGIES = {"A": should_unbind_a, "B": should_unbind_b}


def optimizer_tick(
    server: Server,
    instances,
    history: UtilizationHistory | None,
    config: PolicyConfig,
    model=None,
    features: dict[str, FeatureVector] | None = None,
) -> list[OptimizerAction]:
    """One optimizer pass: unbind hotspots, else bind promising containers.

    Phase 1 repeatedly unbinds the least-CPU-consuming triggering container
    on the hottest node until nothing triggers.  Phase 2 runs only when
    phase 1 emitted nothing: unbound containers whose predicted improvement
    clears the threshold are bound, provided every node is cool (hysteresis
    against flapping).  The two phases never both act in one tick.
    """
    instances = list(instances)
    trigger = _STRATEGIES[config.strategy]
    actions: list[OptimizerAction] = []

    while True:
        triggering = [c for c in instances if trigger(c, server, instances, history, config)]
        if not triggering:
            break
        node_utils = {
            n.node_id: node_utilization(server, n.node_id, instances)
            for n in server.topology.nodes
        }
        hot_node = max(
            {c.bind_state.node_id for c in triggering},
            key=lambda node: (node_utils[node], -node),
        )
        on_hot = [c for c in triggering if c.bind_state.node_id == hot_node]
        victim = min(
            on_hot,
            key=lambda c: (c.current_util * c.profile.cpu_quota, c.container_id),
        )
        victim.bind_state = BindState.unbound()
        actions.append(
            OptimizerAction(
                kind="unbind",
                container_id=victim.container_id,
                reason=f"strategy {config.strategy}: node {hot_node} hot, least consumption",
            )
        )
    if actions:
        return actions

    candidates = [c for c in instances if not c.bind_state.is_bound]
    for container in sorted(candidates, key=lambda c: c.container_id):
        if model is None or features is None:
            break
        fv = features.get(container.container_id)
        if fv is None:
            continue
        try:
            improvement = predict(model, fv)
        except ValueError as exc:
            logger.warning("prediction failed for %s: %s", container.container_id, exc)
            continue
        if improvement <= config.min_predicted_improvement:
            continue
        node_utils = {
            n.node_id: node_utilization(server, n.node_id, instances)
            for n in server.topology.nodes
        }
        if any(u >= config.rebind_cool for u in node_utils.values()):
            continue
        profile = container.profile
        node = select_numa_node(
            server,
            ResourceDemand(profile.cpu_quota, profile.mem_demand_mib, profile.bw_demand_peak_gbs),
            instances,
        )
        if node is None:
            continue
        container.bind_state = BindState.bound(node)
        actions.append(
            OptimizerAction(
                kind="bind",
                container_id=container.container_id,
                node_id=node,
                reason=f"predicted improvement {improvement:.4f} above threshold",
            )
        )
    if not actions:
        actions.append(OptimizerAction(kind="noop", reason="no trigger, no bind candidate"))
    return actions


def unbind_ratio(action_log: ActionLog, total_instance_time: float) -> float:
    """Share of instance-time spent unbound after a first unbind action."""
    if total_instance_time <= 0:
        raise ValueError("total_instance_time must be > 0")
    per_container: dict[str, list[ActionRecord]] = {}
    for event in action_log.events:
        per_container.setdefault(event.container_id, []).append(event)
    unbound_time = 0.0
    for events in per_container.values():
        events = sorted(events, key=lambda e: e.timestamp)
        first_unbind = next((e.timestamp for e in events if e.kind == "unbind"), None)
        if first_unbind is None:
            continue
        t = first_unbind
        unbound = True
        for event in events:
            if event.timestamp <= first_unbind:
                continue
            if event.kind == "bind" and unbound:
                unbound_time += event.timestamp - t
                unbound = False
            elif event.kind == "unbind" and not unbound:
                t = event.timestamp
                unbound = True
        if unbound:
            unbound_time += action_log.run_end - t
    return min(1.0, max(0.0, unbound_time / total_instance_time))


@dataclass
class DeploymentPlan:
    """Ranked services selected for binding, with prior state for rollback."""

    entries: list[tuple[str, float]]
    applied: bool = False
    prior_states: dict[str, BindState] = field(default_factory=dict)


def select_top_services(
    predictions: dict[str, float], k: int, config: PolicyConfig
) -> DeploymentPlan:
    """Top-k services by predicted improvement, above the deployment threshold."""
    if not predictions:
        raise ValueError("predictions must be nonempty")
    ranked = sorted(predictions.items(), key=lambda item: (-item[1], item[0]))
    kept = [
        (sid, imp) for sid, imp in ranked if imp > config.min_predicted_improvement
    ][: max(0, k)]
    return DeploymentPlan(entries=kept)


def apply_plan(
    plan: DeploymentPlan,
    server: Server,
    instances: dict[str, ContainerInstance],
) -> list[OptimizerAction]:
    """Bind every instance of the plan's services, capturing prior state."""
    selected = {sid for sid, _ in plan.entries}
    actions = []
    live = list(instances.values())
    for container in sorted(live, key=lambda c: c.container_id):
        if container.service_id not in selected:
            continue
        plan.prior_states[container.container_id] = container.bind_state
        profile = container.profile
        node = select_numa_node(
            server,
            ResourceDemand(profile.cpu_quota, profile.mem_demand_mib, profile.bw_demand_peak_gbs),
            live,
        )
        if node is None:
            continue
        container.bind_state = BindState.bound(node)
        actions.append(
            OptimizerAction(kind="bind", container_id=container.container_id, node_id=node,
                            reason="deployment plan")
        )
    plan.applied = True
    return actions


def rollback(
    plan: DeploymentPlan, instances: dict[str, ContainerInstance]
) -> list[str]:
    """Restore every container in the plan to its recorded bind state.

    Idempotent; containers that exited are reported back, the rest restored.
    """
    if not plan.applied:
        logger.warning("rollback of an unapplied plan is a no-op")
        return []
    missing = []
    for cid, prior in plan.prior_states.items():
        container = instances.get(cid)
        if container is None:
            missing.append(cid)
            continue
        container.bind_state = prior
    if missing:
        logger.warning("rollback: %d containers no longer exist: %s", len(missing), missing)
    return missing
