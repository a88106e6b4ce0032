"""Counter windows and the four sensitivity features derived from them.

A :class:`MetricsSample` is one container's counters over one window; a
:class:`FeatureVector` is the derived (mbw, msr, npmr, rmbr) tuple the
sensitivity model consumes:

* ``mbw``  - total DRAM bandwidth the container consumed (GB/s)
* ``msr``  - memory stall cycles over total unhalted cycles
* ``npmr`` - mapped (RSS) pages over total pages; the bindable footprint share
* ``rmbr`` - remote bandwidth over total bandwidth
"""

from __future__ import annotations

import math
from dataclasses import dataclass

FEATURE_NAMES = ("mbw", "msr", "npmr", "rmbr")

_REL_EPS = 1e-9


@dataclass(frozen=True)
class MetricsSample:
    """One container's counters accumulated over one metrics window."""

    window_start: float
    container_id: str
    mbw_gbs: float
    remote_bw_gbs: float
    stall_cycles: float
    total_cycles: float
    rss_pages: int
    total_pages: int
    cpu_util: float
    mem_util: float
    # Export context, not part of the feature formulas.
    service_id: str = ""
    bound_node: int | None = None
    locality: float | None = None
    node_bw_gbs: float | None = None
    instructions: float = 0.0

    def __post_init__(self):
        cid = self.container_id
        if self.mbw_gbs < 0 or self.remote_bw_gbs < 0:
            raise ValueError(f"{cid}: bandwidth counters must be >= 0")
        if self.remote_bw_gbs > self.mbw_gbs * (1 + _REL_EPS) + _REL_EPS:
            raise ValueError(f"{cid}: remote_bw {self.remote_bw_gbs} exceeds mbw {self.mbw_gbs}")
        if self.stall_cycles < 0 or self.total_cycles < 0:
            raise ValueError(f"{cid}: cycle counters must be >= 0")
        if self.stall_cycles > self.total_cycles * (1 + _REL_EPS) + _REL_EPS:
            raise ValueError(
                f"{cid}: stall_cycles {self.stall_cycles} exceeds total {self.total_cycles}"
            )
        if self.rss_pages < 0 or self.total_pages < 0:
            raise ValueError(f"{cid}: page counters must be >= 0")
        if self.rss_pages > self.total_pages:
            raise ValueError(f"{cid}: rss_pages {self.rss_pages} exceeds total {self.total_pages}")
        if self.cpu_util < 0 or self.mem_util < 0:
            raise ValueError(f"{cid}: utilization must be >= 0")


@dataclass(frozen=True)
class FeatureVector:
    mbw: float
    msr: float
    npmr: float
    rmbr: float

    def __post_init__(self):
        if self.mbw < 0:
            raise ValueError("mbw must be >= 0")
        for name in ("msr", "npmr", "rmbr"):
            value = getattr(self, name)
            if not -_REL_EPS <= value <= 1 + _REL_EPS:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mbw, self.msr, self.npmr, self.rmbr)


@dataclass(frozen=True)
class ServiceFeatureRecord:
    service_id: str
    window: tuple[float, float]
    features: FeatureVector
    instance_count: int

    def __post_init__(self):
        if self.instance_count < 1:
            raise ValueError("instance_count must be >= 1")


def _ratio(num: float, den: float) -> float:
    # Idle denominators mean a NUMA-insensitive container; report 0 rather
    # than propagating NaN into training.
    if den <= 0:
        return 0.0
    return min(1.0, max(0.0, num / den))


def compute_features(sample: MetricsSample) -> FeatureVector:
    """Derive the four model features from one counter window."""
    return FeatureVector(
        mbw=sample.mbw_gbs,
        msr=_ratio(sample.stall_cycles, sample.total_cycles),
        npmr=_ratio(sample.rss_pages, sample.total_pages),
        rmbr=_ratio(sample.remote_bw_gbs, sample.mbw_gbs),
    )


def aggregate_windows(samples, window: float) -> list[MetricsSample]:
    """Coalesce per-container sub-samples into windows of ``window`` seconds.

    Cycle counters are summed, bandwidths and utilizations averaged (the
    sub-samples are assumed equal length), and page counts taken from the
    last sub-sample of each window.  Input must be time-sorted per container.
    """
    if window <= 0:
        raise ValueError("window must be > 0")
    groups: dict[tuple[str, int], list[MetricsSample]] = {}
    order: list[tuple[str, int]] = []
    for s in samples:
        key = (s.container_id, int(math.floor(s.window_start / window)))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(s)
    out = []
    for key in order:
        bucket = groups[key]
        n = len(bucket)
        last = bucket[-1]
        out.append(
            MetricsSample(
                window_start=key[1] * window,
                container_id=last.container_id,
                mbw_gbs=sum(s.mbw_gbs for s in bucket) / n,
                remote_bw_gbs=sum(s.remote_bw_gbs for s in bucket) / n,
                stall_cycles=sum(s.stall_cycles for s in bucket),
                total_cycles=sum(s.total_cycles for s in bucket),
                rss_pages=last.rss_pages,
                total_pages=last.total_pages,
                cpu_util=sum(s.cpu_util for s in bucket) / n,
                mem_util=sum(s.mem_util for s in bucket) / n,
                service_id=last.service_id,
                bound_node=last.bound_node,
                locality=(
                    sum(s.locality for s in bucket) / n
                    if all(s.locality is not None for s in bucket)
                    else None
                ),
                node_bw_gbs=last.node_bw_gbs,
            )
        )
    return out


def aggregate_service(records, weights, window: tuple[float, float]) -> ServiceFeatureRecord:
    """Aggregate per-container features to service granularity.

    ``records`` is a sequence of ``(service_id, FeatureVector)`` pairs and
    ``weights`` the matching per-instance cpu utilizations.  Ratio features
    are utilization-weighted so hot instances dominate; mbw is reported as
    the per-instance average.
    """
    records = list(records)
    weights = list(weights)
    if not records:
        raise ValueError("need at least one record")
    if len(weights) != len(records):
        raise ValueError("weights must match records")
    service_ids = {sid for sid, _ in records}
    if len(service_ids) != 1:
        raise ValueError(f"mixed service ids: {sorted(service_ids)}")
    total_w = sum(weights)
    if total_w <= 0:
        weights = [1.0] * len(records)
        total_w = float(len(records))
    feats = [fv for _, fv in records]
    n = len(feats)

    def wmean(attr: str) -> float:
        return sum(getattr(f, attr) * w for f, w in zip(feats, weights)) / total_w

    return ServiceFeatureRecord(
        service_id=next(iter(service_ids)),
        window=window,
        features=FeatureVector(
            mbw=sum(f.mbw for f in feats) / n,
            msr=wmean("msr"),
            npmr=wmean("npmr"),
            rmbr=wmean("rmbr"),
        ),
        instance_count=n,
    )
