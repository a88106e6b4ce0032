"""Deterministic discrete-time engine for container placement and performance.

Each tick the engine, per container:

* samples a load multiplier from the service's 24-hour curve (plus bounded
  uniform noise),
* resolves where thread time went: bound containers run 100% on their bind
  node; unbound threads are re-placed by the scheduler with
  ``migration_prob_per_burst`` at every burst boundary, landing on a node
  drawn from a mix of uniform choice and the container's current page
  distribution (``memory_gravity``), which stands in for kernel AutoNUMA
  balancing,
* turns over a slice of RSS pages (first touch at the node with the most
  thread time) and grows/shrinks the footprint with load,
* derives effective memory latency from locality and node bandwidth
  pressure, then accumulates cycle/bandwidth/page counters into per-window
  metrics samples.

Identical (config, seed, action sequence) produces a bit-identical metrics
log: every random draw comes from a named per-container substream.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import (
    ContainerInstance,
    NumaTopology,
    Server,
    ServiceProfile,
    locality_ratio,
)
from .metrics import FeatureVector, MetricsSample, compute_features
from .randomness import UniformBuffer, substream


class SimulationError(RuntimeError):
    """Raised when a run cannot proceed (e.g. memory exhausted on all nodes)."""


# Measured cost of migrating memory between nodes, (MiB, seconds).  The
# origin knot makes an empty migration free; beyond the last knot the final
# segment's slope extrapolates.
MIGRATION_COST_KNOTS = (
    (0.0, 0.0),
    (16.0, 0.007919),
    (32.0, 0.020367),
    (51.0, 0.033931),
    (64.0, 0.041946),
    (128.0, 0.083136),
    (256.0, 0.162868),
    (512.0, 0.322639),
    (1024.0, 0.644564),
    (2048.0, 1.272319),
    (2560.0, 1.583247),
)


@dataclass(frozen=True)
class SimConfig:
    tick: float = 1.0
    duration: float = 3600.0
    seed: int = 0
    migration_prob_per_burst: float = 0.5
    saturation_exponent: float = 1.0
    # Engine knobs beyond the core contract.
    memory_gravity: float = 0.3
    page_turnover_per_hour: float = 0.20
    util_noise: float = 0.15
    metrics_window: float = 60.0
    cpu_freq_ghz: float = 2.7
    mem_util_floor: float = 0.6
    event_burst_limit: int = 10_000

    def __post_init__(self):
        if self.tick <= 0:
            raise ValueError("tick must be > 0")
        if self.duration < self.tick:
            raise ValueError("duration must be >= tick")
        for name in ("migration_prob_per_burst", "memory_gravity", "util_noise"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.page_turnover_per_hour < 0:
            raise ValueError("page_turnover_per_hour must be >= 0")
        if self.metrics_window <= 0:
            raise ValueError("metrics_window must be > 0")
        if self.cpu_freq_ghz <= 0:
            raise ValueError("cpu_freq_ghz must be > 0")
        if not 0.0 <= self.mem_util_floor <= 1.0:
            raise ValueError("mem_util_floor must be in [0, 1]")


@dataclass(frozen=True)
class LoadCurve:
    """24 hourly load multipliers, peak-normalized to 1.0."""

    curve_id: str
    samples: tuple[float, ...]

    def __post_init__(self):
        if len(self.samples) != 24:
            raise ValueError(f"{self.curve_id}: need 24 hourly samples")
        if any(not 0.0 < s <= 1.0 for s in self.samples):
            raise ValueError(f"{self.curve_id}: samples must be in (0, 1]")
        if abs(max(self.samples) - 1.0) > 1e-9:
            raise ValueError(f"{self.curve_id}: curve must be peak-normalized (max == 1.0)")

    def multiplier_at(self, t_seconds: float) -> float:
        return self.samples[int(t_seconds // 3600) % 24]


def _cosine_curve(curve_id: str, peak_hour: int, valley: float) -> LoadCurve:
    half = (1.0 - valley) / 2.0
    mid = valley + half
    samples = tuple(
        min(1.0, mid + half * math.cos(2.0 * math.pi * (h - peak_hour) / 24.0))
        for h in range(24)
    )
    return LoadCurve(curve_id=curve_id, samples=samples)


def builtin_load_curves() -> dict[str, LoadCurve]:
    return {
        "flat": LoadCurve("flat", tuple([1.0] * 24)),
        "diurnal": _cosine_curve("diurnal", peak_hour=20, valley=0.35),
        "diurnal_day": _cosine_curve("diurnal_day", peak_hour=14, valley=0.35),
    }


class MetricsLog:
    """Append-only, time-ordered stream of per-window metrics samples."""

    def __init__(self):
        self.samples: list[MetricsSample] = []

    def append(self, sample: MetricsSample) -> None:
        if self.samples and sample.window_start < self.samples[-1].window_start:
            raise ValueError("metrics log timestamps must be nondecreasing")
        self.samples.append(sample)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


@dataclass
class SimState:
    clock: float
    servers: list[Server]
    containers: dict[str, ContainerInstance]
    load_curves: dict[str, LoadCurve]
    log: MetricsLog = field(default_factory=MetricsLog)
    free_pages: dict[str, dict[int, int]] = field(default_factory=dict)
    # Named substream buffers and window accumulators, keyed by container id.
    noise_streams: dict[str, UniformBuffer] = field(default_factory=dict)
    burst_streams: dict[str, UniformBuffer] = field(default_factory=dict)
    window_acc: dict[str, list[float]] = field(default_factory=dict)

    def server(self, server_id: str) -> Server:
        for s in self.servers:
            if s.server_id == server_id:
                return s
        raise KeyError(f"unknown server {server_id}")


# --- page accounting -------------------------------------------------------


def _apportion(total_to_take: int, counts: dict[int, int]) -> dict[int, int]:
    """Split ``total_to_take`` across buckets proportionally (largest remainder)."""
    pool = sum(counts.values())
    if pool <= 0 or total_to_take <= 0:
        return {k: 0 for k in counts}
    take = min(total_to_take, pool)
    quotas = {k: take * v / pool for k, v in counts.items()}
    base = {k: min(counts[k], int(quotas[k])) for k in counts}
    remainder = take - sum(base.values())
    order = sorted(counts, key=lambda k: (-(quotas[k] - base[k]), k))
    for k in order:
        if remainder <= 0:
            break
        room = counts[k] - base[k]
        add = min(room, remainder)
        base[k] += add
        remainder -= add
    return base


def _allocate_rss(
    container: ContainerInstance,
    pages: int,
    running_node: int,
    topology: NumaTopology,
    free_pages: dict[int, int],
) -> None:
    """First-touch placement: fill ``running_node``, spill in node-id order."""
    remaining = pages
    order = [running_node] + [n for n in topology.node_ids if n != running_node]
    for node in order:
        if remaining <= 0:
            break
        put = min(remaining, free_pages.get(node, 0))
        if put > 0:
            container.rss_pages[node] = container.rss_pages.get(node, 0) + put
            free_pages[node] -= put
            remaining -= put
    if remaining > 0:
        raise SimulationError(
            f"{container.container_id}: memory exhausted, {remaining} pages unplaced"
        )


def _allocate_cache(
    container: ContainerInstance,
    pages: int,
    topology: NumaTopology,
    free_pages: dict[int, int],
) -> None:
    """OS-decided placement: one page per node round-robin, skipping full nodes."""
    ids = list(topology.node_ids)
    n = len(ids)
    remaining = pages
    while remaining > 0:
        avail = [ids[(container.cache_rr_cursor + j) % n] for j in range(n)]
        avail = [node for node in avail if free_pages.get(node, 0) > 0]
        if not avail:
            raise SimulationError(
                f"{container.container_id}: memory exhausted, {remaining} cache pages unplaced"
            )
        m = len(avail)
        full_rounds = min(remaining // m, min(free_pages[node] for node in avail))
        if full_rounds > 0:
            for node in avail:
                container.cache_pages[node] = container.cache_pages.get(node, 0) + full_rounds
                free_pages[node] -= full_rounds
            remaining -= full_rounds * m
            continue
        # Fewer pages than available nodes (or a node is nearly full):
        # place one page at a time, advancing the cursor as the OS would.
        placed = False
        for node in avail:
            if remaining <= 0:
                break
            if free_pages.get(node, 0) <= 0:
                continue
            container.cache_pages[node] = container.cache_pages.get(node, 0) + 1
            free_pages[node] -= 1
            remaining -= 1
            container.cache_rr_cursor = (ids.index(node) + 1) % n
            placed = True
        if not placed:
            raise SimulationError(
                f"{container.container_id}: memory exhausted, {remaining} cache pages unplaced"
            )


def first_touch_allocate(
    container: ContainerInstance,
    pages: int,
    running_node: int,
    topology: NumaTopology,
    free_pages: dict[int, int] | None = None,
) -> dict[int, int]:
    """Allocate ``pages`` new footprint pages for a container.

    The mapped share (``rss_ratio``) lands on ``running_node`` while free
    capacity remains, spilling to other nodes when full; the page-cache
    remainder is placed round-robin across nodes.  ``free_pages`` carries the
    server-wide free-page budget and is mutated; when omitted, the topology's
    raw capacities are used (single-container accounting).

    Returns the updated combined pages-per-node map.
    """
    if pages < 0:
        raise ValueError("pages must be >= 0")
    if running_node not in topology.node_ids:
        raise KeyError(f"unknown node id {running_node}")
    if free_pages is None:
        occupied = container.pages_per_node
        free_pages = {
            n.node_id: n.mem_capacity_pages - occupied.get(n.node_id, 0)
            for n in topology.nodes
        }
    rss_add = int(round(pages * container.profile.rss_ratio))
    cache_add = pages - rss_add
    _allocate_rss(container, rss_add, running_node, topology, free_pages)
    _allocate_cache(container, cache_add, topology, free_pages)
    return container.pages_per_node


def _release(counts: dict[int, int], taken: dict[int, int], free_pages: dict[int, int]) -> None:
    for node, k in taken.items():
        if k > 0:
            counts[node] -= k
            if counts[node] == 0:
                del counts[node]
            free_pages[node] = free_pages.get(node, 0) + k


def _free_footprint(
    container: ContainerInstance, pages: int, free_pages: dict[int, int]
) -> None:
    """Free ``pages`` proportionally across RSS/cache and nodes."""
    total = container.total_pages
    if total == 0 or pages <= 0:
        return
    rss_total = container.total_rss_pages
    rss_k = min(rss_total, int(round(pages * rss_total / total)))
    cache_k = min(pages - rss_k, total - rss_total)
    _release(container.rss_pages, _apportion(rss_k, container.rss_pages), free_pages)
    _release(container.cache_pages, _apportion(cache_k, container.cache_pages), free_pages)


# --- performance primitives ------------------------------------------------


def effective_latency(
    locality: float,
    topology: NumaTopology,
    node_bw_pressure: float,
    saturation_exponent: float = 1.0,
) -> float:
    """Average memory access latency (ns) for a given locality and pressure.

    Pressure is aggregate node bandwidth demand over capacity; below
    saturation it has no effect, beyond it latency scales as
    ``pressure ** saturation_exponent``.
    """
    if not 0.0 <= locality <= 1.0 + 1e-12:
        raise ValueError(f"locality {locality} outside [0, 1]")
    if node_bw_pressure < 0:
        raise ValueError("node_bw_pressure must be >= 0")
    local = sum(n.local_latency_ns for n in topology.nodes) / topology.n_nodes
    base = locality * local + (1.0 - locality) * topology.remote_latency_ns
    return base * max(1.0, node_bw_pressure) ** saturation_exponent


def _cpi_parts(profile: ServiceProfile, avg_latency_ns: float, cpu_freq_ghz: float):
    stall = profile.mem_access_intensity * avg_latency_ns * cpu_freq_ghz
    return profile.compute_cpi, stall


def container_cpi(profile: ServiceProfile, avg_latency_ns: float, cpu_freq_ghz: float) -> float:
    """Cycles per instruction: compute CPI plus memory stall cycles.

    The stall term (accesses/instruction x latency x frequency) is what the
    engine books as memory stall cycles; the sum is total unhalted cycles
    per instruction.
    """
    if avg_latency_ns <= 0:
        raise ValueError("avg_latency_ns must be > 0")
    compute, stall = _cpi_parts(profile, avg_latency_ns, cpu_freq_ghz)
    return compute + stall


def migration_cost(mib: float) -> float:
    """Seconds needed to migrate ``mib`` MiB of pages between nodes."""
    if mib < 0:
        raise ValueError("migration size must be >= 0")
    xs = [k[0] for k in MIGRATION_COST_KNOTS]
    ys = [k[1] for k in MIGRATION_COST_KNOTS]
    if mib >= xs[-1]:
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return ys[-1] + (mib - xs[-1]) * slope
    hi = bisect_right(xs, mib)
    lo = hi - 1
    if xs[hi] == xs[lo]:
        return ys[lo]
    frac = (mib - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + frac * (ys[hi] - ys[lo])


# --- thread-time model ------------------------------------------------------


def _thread_time_weights(
    buf: UniformBuffer,
    start_pos: int,
    mix: np.ndarray,
    tick: float,
    burst_lo_s: float,
    burst_hi_s: float,
    reselect_prob: float,
    event_limit: int,
):
    """Per-node share of thread runtime within one tick.

    Bursts are uniform in the profile's range; at each burst boundary the
    scheduler re-places the thread with ``reselect_prob``, drawing the
    destination from ``mix`` (which may be the current node again).  Above
    ``event_limit`` expected bursts per tick the stationary distribution is
    used directly; the means agree, which is property-tested.

    Returns ``(weights, majority_pos, end_pos)``.
    """
    n = len(mix)
    mean_burst = (burst_lo_s + burst_hi_s) / 2.0
    expected_bursts = tick / mean_burst
    if expected_bursts > event_limit:
        weights = mix.copy()
        majority = int(np.argmax(weights))
        return weights, majority, majority
    k = int(expected_bursts * 1.3) + 8
    while True:
        lengths = burst_lo_s + (burst_hi_s - burst_lo_s) * buf.take(k)
        cum = np.cumsum(lengths)
        if cum[-1] >= tick:
            break
        k *= 2
    n_used = int(np.searchsorted(cum, tick, side="left")) + 1
    lengths = lengths[:n_used].copy()
    lengths[-1] -= cum[n_used - 1] - tick
    reselect = buf.take(n_used) < reselect_prob
    dest_u = buf.take(n_used)
    if n_used > 0:
        reselect = reselect.copy()
        reselect[0] = False
    mix_cum = np.cumsum(mix)
    mix_cum[-1] = 1.0
    dest = np.searchsorted(mix_cum, dest_u, side="right")
    sel = np.where(reselect, np.arange(n_used), -1)
    last = np.maximum.accumulate(sel)
    nodes = np.where(last < 0, start_pos, dest[np.maximum(last, 0)])
    weights = np.bincount(nodes, weights=lengths, minlength=n) / tick
    majority = int(np.argmax(weights))
    end_pos = int(nodes[-1])
    return weights, majority, end_pos


# --- the step ----------------------------------------------------------------


def _noise_stream(state: SimState, config: SimConfig, cid: str) -> UniformBuffer:
    buf = state.noise_streams.get(cid)
    if buf is None:
        buf = UniformBuffer(substream(config.seed, "noise", cid), block=4096)
        state.noise_streams[cid] = buf
    return buf


def _burst_stream(state: SimState, config: SimConfig, cid: str) -> UniformBuffer:
    buf = state.burst_streams.get(cid)
    if buf is None:
        buf = UniformBuffer(substream(config.seed, "bursts", cid), block=16384)
        state.burst_streams[cid] = buf
    return buf


# Window accumulator layout: [time, mbw, remote_bw, stall, cycles,
# instructions, cpu_util, mem_util, locality, node_bw]
_ACC_SLOTS = 10


def step(state: SimState, config: SimConfig) -> SimState:
    """Advance the simulation by one tick, mutating and returning ``state``."""
    if state.clock + config.tick > config.duration + 1e-9:
        raise SimulationError("step would exceed configured duration")
    tick = config.tick
    gravity = config.memory_gravity
    freq_hz = config.cpu_freq_ghz * 1e9

    scratch: dict[str, tuple] = {}
    node_bw: dict[str, dict[int, float]] = {}
    for server in state.servers:
        topo = server.topology
        ids = topo.node_ids
        n = len(ids)
        bw_acc = dict.fromkeys(ids, 0.0)
        node_bw[server.server_id] = bw_acc
        free = state.free_pages.setdefault(
            server.server_id,
            _initial_free_pages(server, (state.containers[c] for c in server.hosted)),
        )
        for cid in server.hosted:
            c = state.containers[cid]
            profile = c.profile
            curve = state.load_curves[profile.load_curve_id]
            mult = curve.multiplier_at(state.clock)
            util = mult
            if config.util_noise > 0:
                u = _noise_stream(state, config, cid).one()
                util = max(0.0, mult * (1.0 + config.util_noise * (2.0 * u - 1.0)))
            c.current_util = util

            q = c.page_share(ids)
            if c.bind_state.is_bound:
                bind = c.bind_state.node_id
                w = {node: (1.0 if node == bind else 0.0) for node in ids}
                majority = bind
            else:
                q_arr = np.array([q[node] for node in ids])
                mix = (1.0 - gravity) / n + gravity * q_arr
                if c.thread_affinity > 0.0:
                    home = np.zeros(n)
                    home[ids.index(c.home_node)] = 1.0
                    mix = c.thread_affinity * home + (1.0 - c.thread_affinity) * mix
                weights, maj_pos, end_pos = _thread_time_weights(
                    _burst_stream(state, config, cid),
                    ids.index(c.thread_node),
                    mix,
                    tick,
                    profile.burst_ms_range[0] / 1000.0,
                    profile.burst_ms_range[1] / 1000.0,
                    config.migration_prob_per_burst,
                    config.event_burst_limit,
                )
                w = {node: float(weights[i]) for i, node in enumerate(ids)}
                majority = ids[maj_pos]
                c.thread_node = ids[end_pos]
            c.thread_time = w

            # RSS pages slowly turn over, reallocated where threads now run.
            if config.page_turnover_per_hour > 0:
                churn = (
                    c.total_rss_pages * config.page_turnover_per_hour * tick / 3600.0
                    + c.turnover_carry
                )
                k = int(churn)
                c.turnover_carry = churn - k
                if k > 0:
                    _release(c.rss_pages, _apportion(k, c.rss_pages), free)
                    _allocate_rss(c, k, majority, topo, free)

            # Footprint follows load between a floor and the full demand.
            target = int(
                round(
                    profile.mem_demand_pages
                    * (config.mem_util_floor + (1.0 - config.mem_util_floor) * mult)
                )
            )
            current = c.total_pages
            if current < target:
                first_touch_allocate(c, target - current, majority, topo, free)
            elif current > target:
                _free_footprint(c, current - target, free)

            q = c.page_share(ids)
            loc = min(1.0, max(0.0, locality_ratio(c, q)))
            bw = profile.bw_demand_peak_gbs * util
            for node in ids:
                bw_acc[node] += bw * q[node]
            scratch[cid] = (server, q, loc, bw, util)

    boundary = int((state.clock + tick + 1e-9) // config.metrics_window) > int(
        (state.clock + 1e-9) // config.metrics_window
    )
    for cid, (server, q, loc, bw, util) in scratch.items():
        c = state.containers[cid]
        profile = c.profile
        topo = server.topology
        bw_acc = node_bw[server.server_id]
        pressure = {node: bw_acc[node] / topo.node(node).bw_capacity_gbs for node in bw_acc}
        container_pressure = sum(q[node] * pressure[node] for node in q)
        latency = effective_latency(loc, topo, container_pressure, config.saturation_exponent)
        compute_part, stall_part = _cpi_parts(profile, latency, config.cpu_freq_ghz)
        cpi = compute_part + stall_part
        cycles = util * profile.cpu_quota * freq_hz * tick
        instructions = cycles / cpi
        stall_cycles = stall_part * instructions

        acc = state.window_acc.get(cid)
        if acc is None:
            acc = [0.0] * _ACC_SLOTS
            state.window_acc[cid] = acc
        majority_node = max(q, key=lambda node: (q[node], -node))
        acc[0] += tick
        acc[1] += bw * tick
        acc[2] += bw * (1.0 - loc) * tick
        acc[3] += stall_cycles
        acc[4] += cycles
        acc[5] += instructions
        acc[6] += util * tick
        acc[7] += (c.total_pages / profile.mem_demand_pages) * tick
        acc[8] += loc * tick
        acc[9] += bw_acc[majority_node] * tick

    new_clock = state.clock + tick
    if boundary:
        window_index = int((new_clock + 1e-9) // config.metrics_window)
        window_start = (window_index - 1) * config.metrics_window
        for server in state.servers:
            for cid in server.hosted:
                acc = state.window_acc.get(cid)
                if acc is None or acc[0] <= 0:
                    continue
                c = state.containers[cid]
                t = acc[0]
                state.log.append(
                    MetricsSample(
                        window_start=window_start,
                        container_id=cid,
                        mbw_gbs=acc[1] / t,
                        remote_bw_gbs=min(acc[2] / t, acc[1] / t),
                        stall_cycles=acc[3],
                        total_cycles=acc[4],
                        rss_pages=c.total_rss_pages,
                        total_pages=c.total_pages,
                        cpu_util=acc[6] / t,
                        mem_util=acc[7] / t,
                        service_id=c.service_id,
                        bound_node=c.bind_state.node_id,
                        locality=acc[8] / t,
                        node_bw_gbs=acc[9] / t,
                        instructions=acc[5],
                    )
                )
                state.window_acc[cid] = [0.0] * _ACC_SLOTS
    state.clock = new_clock
    return state


def _initial_free_pages(server: Server, containers) -> dict[int, int]:
    free = {n.node_id: n.mem_capacity_pages for n in server.topology.nodes}
    for c in containers:
        for node, pages in c.pages_per_node.items():
            free[node] -= pages
    return free


def run_to(state: SimState, config: SimConfig, until: float) -> SimState:
    while state.clock + config.tick <= until + 1e-9:
        step(state, config)
    return state


# --- provisioning and paired improvement measurement ------------------------


def provision_container(
    state: SimState,
    container: ContainerInstance,
    config: SimConfig,
    initial_local_share: float = 1.0,
) -> None:
    """Place a container's initial footprint and register it with its server.

    RSS pages land on the home node in proportion ``initial_local_share``;
    the remainder spreads over the other nodes, modelling a container whose
    memory has drifted remote.  Page cache is placed round-robin.
    """
    server = state.server(container.server_id)
    topo = server.topology
    free = state.free_pages.setdefault(
        server.server_id,
        _initial_free_pages(server, (state.containers[c] for c in server.hosted)),
    )
    profile = container.profile
    curve = state.load_curves[profile.load_curve_id]
    mult = curve.multiplier_at(state.clock)
    target = int(
        round(
            profile.mem_demand_pages
            * (config.mem_util_floor + (1.0 - config.mem_util_floor) * mult)
        )
    )
    rss_total = int(round(target * profile.rss_ratio))
    cache_total = target - rss_total
    home = container.home_node
    local_rss = int(round(rss_total * initial_local_share))
    _allocate_rss(container, local_rss, home, topo, free)
    others = [n for n in topo.node_ids if n != home]
    spread = rss_total - local_rss
    for i, node in enumerate(others):
        share = spread // len(others) + (1 if i < spread % len(others) else 0)
        _allocate_rss(container, share, node, topo, free)
    _allocate_cache(container, cache_total, topo, free)
    state.containers[container.container_id] = container
    server.hosted.append(container.container_id)


@dataclass
class PlacementContext:
    """Server and co-runner context for a paired improvement measurement."""

    topology: NumaTopology
    co_runners: list[tuple[ServiceProfile, int]] = field(default_factory=list)
    target_node: int | None = None
    initial_local_share: float = 1.0
    thread_affinity: float = 0.0
    warmup_s: float = 60.0
    measure_s: float = 300.0


def _pick_target_node(context: PlacementContext) -> int:
    if context.target_node is not None:
        return context.target_node
    load = dict.fromkeys(context.topology.node_ids, 0.0)
    for profile, node in context.co_runners:
        load[node] += profile.cpu_quota
    return min(context.topology.node_ids, key=lambda n: (load[n], n))


def _twin_state(
    profile: ServiceProfile,
    context: PlacementContext,
    config: SimConfig,
    bound: bool,
    load_curves: dict[str, LoadCurve],
) -> SimState:
    from .cluster import BindState  # local import keeps module top light

    server = Server(server_id="twin", topology=context.topology, hosted=[])
    state = SimState(clock=0.0, servers=[server], containers={}, load_curves=load_curves)
    for i, (co_profile, node) in enumerate(context.co_runners):
        co = ContainerInstance(
            container_id=f"co{i}",
            service_id=co_profile.service_id,
            server_id="twin",
            profile=co_profile,
            bind_state=BindState.bound(node),
            home_node=node,
        )
        provision_container(state, co, config)
    target_node = _pick_target_node(context)
    target = ContainerInstance(
        container_id="target",
        service_id=profile.service_id,
        server_id="twin",
        profile=profile,
        bind_state=BindState.bound(target_node) if bound else BindState.unbound(),
        home_node=target_node,
        thread_node=target_node,
        thread_affinity=0.0 if bound else context.thread_affinity,
    )
    provision_container(
        state, target, config, initial_local_share=1.0 if bound else context.initial_local_share
    )
    return state


def paired_label(
    profile: ServiceProfile,
    context: PlacementContext,
    config: SimConfig,
) -> tuple[float, FeatureVector]:
    """Run the bound/unbound twin pair; return (improvement, unbound features).

    Both runs share the seed and co-runners; the improvement is the relative
    CPI reduction over the measurement windows, negative when binding hurts
    (bandwidth saturation on the bind node).
    """
    duration = context.warmup_s + context.measure_s
    run_config = replace(config, duration=duration)
    curves = builtin_load_curves()
    results = {}
    for bound in (False, True):
        state = _twin_state(profile, context, run_config, bound, curves)
        run_to(state, run_config, duration)
        cycles = 0.0
        instructions = 0.0
        feature_rows = []
        for sample in state.log:
            if sample.container_id != "target":
                continue
            if sample.window_start + 1e-9 < context.warmup_s:
                continue
            cycles += sample.total_cycles
            instructions += sample.instructions
            feature_rows.append(compute_features(sample))
        if instructions <= 0:
            raise SimulationError("target produced no instructions in measurement windows")
        results[bound] = (cycles / instructions, feature_rows)
    cpi_unbound, unbound_features = results[False]
    cpi_bound, _ = results[True]
    improvement = (cpi_unbound - cpi_bound) / cpi_unbound
    k = len(unbound_features)
    features = FeatureVector(
        mbw=sum(f.mbw for f in unbound_features) / k,
        msr=sum(f.msr for f in unbound_features) / k,
        npmr=sum(f.npmr for f in unbound_features) / k,
        rmbr=sum(f.rmbr for f in unbound_features) / k,
    )
    return improvement, features


def measure_improvement(
    profile: ServiceProfile,
    context: PlacementContext,
    config: SimConfig,
) -> float:
    """Relative latency improvement from binding, by paired simulation."""
    improvement, _ = paired_label(profile, context, config)
    return improvement
