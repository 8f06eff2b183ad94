"""Deterministic graph collections shared by the unit and acceptance tests."""

from fpflow.designs import random_fixed_graph, random_float_graph


def pipeline_corpus(count=50):
    """Half fixed-point graphs (some with feedback loops), half floating-point DAGs."""
    out = []
    for s in range(count // 2):
        out.append(random_fixed_graph(s, 6 + s % 15))
        out.append(random_float_graph(s, 6 + s % 15))
    return out


def retiming_corpus(count=30, max_nodes=12):
    """Small graphs that carry at least one register to move."""
    out, seed = [], 0
    while len(out) < count:
        make = random_fixed_graph if seed % 2 else random_float_graph
        g = make(seed, 4 + seed % 5)
        seed += 1
        if len(g.nodes) <= max_nodes and sum(e.sample_delay for e in g.edges) > 0:
            out.append(g)
    return out
