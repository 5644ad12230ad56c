"""Reproducible random network-system generators.

The main recipe builds networks of two-dimensional node subsystems with
Kronecker-structured coupling and spectral normalization; a scalar-node
variant backs the small illustrative example and the test ensembles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import networkx as nx
import numpy as np

from .numkit import DEFAULT_POLICY, RankPolicy, tolerant_rank
from .obsv import LinearPlant, model_criterion, observability_matrix

Topology = Literal["er", "ba"]


@dataclass(frozen=True)
class NetworkRecipe:
    """Parameters for one random network-system family.

    ``n_nodes`` counts nodes; with two-dimensional subsystems the state
    dimension is ``2 * n_nodes``.  For ER topologies ``p_edge`` is the
    independent directed-edge probability (defaults to
    ``k_avg / (n_nodes - 1)``); BA topologies use ``m0`` initial nodes
    and an attachment count derived from the target average degree.
    """

    n_nodes: int
    m: int
    p: int
    r: int
    topology: Topology = "er"
    p_edge: Optional[float] = None
    k_avg: float = 10.0
    m0: int = 20
    dedicated: bool = True
    directed: bool = True
    seed: int = 0
    stabilization: float = 1.01

    def __post_init__(self) -> None:
        if self.topology not in ("er", "ba"):
            raise ValueError("topology must be 'er' or 'ba'")
        if self.p_edge is not None and not (0 < self.p_edge < 1):
            raise ValueError("p_edge must lie in (0, 1)")
        if max(self.m, self.p, self.r) > self.n_nodes:
            raise ValueError("m, p, r cannot exceed the node count")
        if self.stabilization <= 1.0:
            raise ValueError("stabilization divisor must exceed 1")

    @property
    def n_states(self) -> int:
        return 2 * self.n_nodes

    def resolved_p_edge(self) -> float:
        if self.p_edge is not None:
            return self.p_edge
        return min(0.99, self.k_avg / max(1, self.n_nodes - 1))


def _adjacency(recipe: NetworkRecipe, rng: np.random.Generator) -> np.ndarray:
    """Weighted adjacency; weights uniform(0, 1), no self-loops."""
    n = recipe.n_nodes
    W = np.zeros((n, n))
    if recipe.topology == "er":
        pe = recipe.resolved_p_edge()
        if recipe.directed:
            mask = rng.random((n, n)) < pe
            np.fill_diagonal(mask, False)
            W[mask] = rng.uniform(0, 1, int(mask.sum()))
        else:
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < pe:
                        w = rng.uniform(0, 1)
                        W[i, j] = W[j, i] = w
        return W
    m_attach = max(1, int(round(recipe.k_avg / 2)))
    m0 = min(max(recipe.m0, m_attach + 1), n)
    g = nx.barabasi_albert_graph(
        n, m_attach, seed=int(rng.integers(2**32)),
        initial_graph=nx.star_graph(m0 - 1))
    for i, j in g.edges():
        w = rng.uniform(0, 1)
        if recipe.directed:
            if rng.random() < 0.5:
                i, j = j, i
            W[i, j] = w
        else:
            W[i, j] = W[j, i] = w
    return W


def sensor_connected_states(A: np.ndarray, sensor_states) -> list[int]:
    """States with a directed influence path to some sensed state.

    State a influences state b when A[b, a] is nonzero; a target is
    recoverable only if its value propagates into a sensor, so target
    (and partial-information) rows are drawn from this set.
    """
    n = A.shape[0]
    influenced_by = [np.nonzero(A[b, :])[0] for b in range(n)]
    # reverse reachability: walk influence edges backwards from sensors
    reach = set(int(s) for s in sensor_states)
    frontier = list(reach)
    while frontier:
        b = frontier.pop()
        for a in influenced_by[b]:
            a = int(a)
            if a not in reach:
                reach.add(a)
                frontier.append(a)
    return sorted(reach)


def generate(recipe: NetworkRecipe) -> LinearPlant:
    """Random network plant with two-dimensional node subsystems.

    Node blocks are ``[[*, *], [a21, 0]]`` with the lower-left entry
    nonzero with probability one half, inputs drive second states,
    sensors read first states, and the coupling enters through the
    second components (Kronecker factor with a single nonzero at (2,2)).
    The global state matrix is normalized by ``stabilization * rho(A)``.
    Target rows are sampled among non-sensor states that connect to a
    sensor through the influence graph, which makes realizations
    functionally observable with overwhelming probability.
    """
    rng = np.random.default_rng(recipe.seed)
    n = recipe.n_nodes
    W = _adjacency(recipe, rng)

    A = np.zeros((2 * n, 2 * n))
    for i in range(n):
        blk = np.array([[rng.uniform(0, 1), rng.uniform(0, 1)],
                        [rng.uniform(0, 1) if rng.random() < 0.5 else 0.0, 0.0]])
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = blk
    M = np.array([[0.0, 0.0], [0.0, 1.0]])  # B_node @ H
    A -= np.kron(W, M)
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    if rho > 0:
        A = A / (recipe.stabilization * rho)

    nodes = rng.permutation(n)
    input_nodes = nodes[:recipe.m]
    sensor_nodes = nodes[recipe.m:recipe.m + recipe.p] if recipe.m + recipe.p <= n \
        else rng.permutation(n)[:recipe.p]
    B = np.zeros((2 * n, recipe.m))
    for j, nd in enumerate(sorted(input_nodes)):
        B[2 * nd + 1, j] = 1.0
    C = np.zeros((recipe.p, 2 * n))
    for j, nd in enumerate(sorted(sensor_nodes)):
        C[j, 2 * nd] = 1.0
    sensor_states = {2 * nd for nd in sensor_nodes}
    connected = set(sensor_connected_states(A, sensor_states))
    candidates = [s for s in range(2 * n)
                  if s not in sensor_states and s in connected]
    if len(candidates) < recipe.r:
        candidates = [s for s in range(2 * n) if s not in sensor_states]
    target_states = rng.choice(len(candidates), size=recipe.r, replace=False)
    F = np.zeros((recipe.r, 2 * n))
    for j, idx in enumerate(sorted(target_states)):
        F[j, candidates[idx]] = 1.0
    return LinearPlant(A, B, C, F)


def scalar_network(
    seed: int,
    n: int,
    m: int,
    p: int,
    r: int,
    p_edge: float = 0.25,
    stabilization: float = 1.01,
) -> LinearPlant:
    """Directed scalar-node network with dedicated inputs/sensors/targets.

    One integrator per node, weighted edges uniform(0, 1), state matrix
    normalized by ``stabilization * rho(A)``.  Used by the illustrative
    example and the small test ensembles.
    """
    rng = np.random.default_rng(seed)
    A = (rng.random((n, n)) < p_edge) * rng.uniform(0, 1, (n, n))
    np.fill_diagonal(A, 0.0)
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    if rho > 0:
        A = A / (stabilization * rho)
    nodes = rng.permutation(n)
    B = np.zeros((n, m))
    for j, nd in enumerate(nodes[:m]):
        B[nd, j] = 1.0
    C = np.zeros((p, n))
    for j, nd in enumerate(nodes[m:m + p]):
        C[j, nd] = 1.0
    rest = [i for i in range(n) if i not in set(nodes[m:m + p])]
    F = np.zeros((r, n))
    picks = rng.choice(len(rest), size=r, replace=False)
    for j, idx in enumerate(picks):
        F[j, rest[idx]] = 1.0
    return LinearPlant(A, B, C, F)


def child_seed(master: int, *path: int) -> int:
    """Deterministic child-seed derivation: SeedSequence over (master, path)."""
    return int(np.random.SeedSequence((master,) + tuple(path)).generate_state(1)[0])


def fig1_example(seed: int = 0, policy: RankPolicy = DEFAULT_POLICY,
                 max_tries: int = 1000) -> tuple[LinearPlant, int]:
    """10-node scalar-network instance that is functionally observable but
    not fully observable (3 dedicated inputs, 2 outputs, 1 target).

    Retries derived seeds until the regime holds; returns the plant and
    the successful child seed so the instance can be regenerated.
    """
    for trial in range(max_tries):
        s = child_seed(seed, trial)
        plant = scalar_network(s, n=10, m=3, p=2, r=1, p_edge=0.2)
        O = observability_matrix(plant.A, plant.C)
        if tolerant_rank(O, policy) >= plant.n:
            continue
        if not model_criterion(plant, policy).functionally_observable:
            continue
        return plant, s
    raise RuntimeError(f"no suitable instance found in {max_tries} seeds")
