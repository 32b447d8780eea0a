"""Independent reference computations used by the tests.

Nothing here imports the code under test; each oracle recomputes its answer
from first principles (quadrature, brute-force simulation, enumeration,
Bellman-Ford relaxation, scalar root finding).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad
from scipy.optimize import brentq


def bpr(c0, cap, f, alpha=0.15, beta=4.0):
    return c0 * (1.0 + alpha * (f / cap) ** beta)


def quad_potential(c0, cap, f, alpha=0.15, beta=4.0):
    value, _ = quad(lambda s: bpr(c0, cap, s, alpha, beta), 0.0, f, epsabs=0, epsrel=1e-13)
    return value


def segment_polynomial(c0, cap, f, g, alpha=0.15, beta=4.0) -> Polynomial:
    """Potential along ``f + x (g - f)`` as an explicit polynomial in ``x`` (integer beta)."""
    total = Polynomial([0.0])
    for c, k, a, b in zip(c0, cap, f, g):
        flow = Polynomial([a, b - a])
        total = total + c * flow * (1.0 + alpha / (beta + 1.0) * (flow / k) ** int(beta))
    return total


def grid_scan(func, step=1e-4):
    xs = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    values = func(xs)
    i = int(np.argmin(values))
    return xs[i], values[i]


def walk_stop(costs, dt):
    """Minute-by-minute walk along a route with integer link times.

    Returns how many links the vehicle has entered before minute ``dt`` ends
    its interval (entering the first link at minute 0 always counts).
    """
    entered = 0
    remaining = 0          # minutes left on the current link
    for minute in range(dt):
        if remaining == 0:
            if entered == len(costs):
                break
            remaining = costs[entered]
            entered += 1
        remaining -= 1
    return max(entered, 1 if costs else 0)


def bellman_ford(n_nodes, tails, heads, costs, source):
    dist = [math.inf] * n_nodes
    dist[source] = 0.0
    for _ in range(n_nodes - 1):
        changed = False
        for t, h, c in zip(tails, heads, costs):
            if dist[t] + c < dist[h]:
                dist[h] = dist[t] + c
                changed = True
        if not changed:
            break
    return dist


def simple_paths(out_links, heads, p, q, limit=10_000):
    """All simple paths from ``p`` to ``q`` as link-id tuples (depth-first)."""
    found = []
    stack = [(p, (), {p})]
    while stack and len(found) < limit:
        node, links, seen = stack.pop()
        if node == q:
            found.append(links)
            continue
        for a in out_links[node]:
            h = heads[a]
            if h not in seen:
                stack.append((h, links + (a,), seen | {h}))
    return found


def two_route_split(demand, route1, route2, alpha=0.15, beta=4.0):
    """Flow on route 1 equalizing the two single-link route costs."""
    def gap(x):
        return bpr(*route1, x, alpha, beta) - bpr(*route2, demand - x, alpha, beta)
    if gap(0.0) >= 0:
        return 0.0
    if gap(demand) <= 0:
        return demand
    return brentq(gap, 0.0, demand, xtol=1e-12, rtol=1e-14)


def walk_stops(cost_table, max_minutes):
    """Vectorized :func:`walk_stop` over the rows of ``cost_table`` (routes of equal length).

    Yields ``(dt, entered)`` for ``dt = 1..max_minutes``.
    """
    cost_table = np.asarray(cost_table)
    rows, length = cost_table.shape
    entered = np.zeros(rows, dtype=np.int64)
    remaining = np.zeros(rows, dtype=np.int64)
    for minute in range(max_minutes):
        active = ~((remaining == 0) & (entered == length))
        idx = np.flatnonzero(active & (remaining == 0))
        remaining[idx] = cost_table[idx, entered[idx]]
        entered[idx] += 1
        remaining[active] -= 1
        yield minute + 1, entered.copy()
