"""Desk-scale NUMA optimization toolkit.

Simulates containerized services on multi-socket NUMA servers, extracts
bandwidth/stall/page-layout features from the simulated counters, trains
tree-ensemble regressors that predict the latency benefit of NUMA binding,
and drives an online bind/unbind policy loop over the simulated cluster.
"""

__version__ = "0.1.0"
