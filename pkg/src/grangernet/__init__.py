"""Sparse transducer-network inference and event-level forecasting.

Pipeline: raw event logs are discretized into Boolean tile/day streams,
pairwise probabilistic transducers are swept over all (source, target,
delay) combinations, useful edges are kept as a directed network, and a
per-target boosted combiner turns edge evaluations into risk scores.
Perturbation probes measure how the learned system responds to injected
rate changes.
"""

__version__ = "0.1.0"
