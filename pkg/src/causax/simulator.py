"""Synthetic causal-model data generation.

Samples random DAGs (Erdos-Renyi, scale-free, stochastic block model),
attaches per-node mechanisms (linear, neural-net additive/non-additive,
sigmoid, polynomial), and draws datasets by ancestral sampling with
single-node perfect interventions. Also computes the inverse-covariance
graph prior and handles the on-disk dataset bundle format.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MECHANISM_KINDS = ("linear", "nn_additive", "nn_nonadditive", "sigmoid_additive", "polynomial")
GRAPH_FAMILIES = ("er", "sf", "sbm")

_NN_HIDDEN = 16  # hidden width for the random-MLP mechanisms


class DegenerateColumnError(ValueError):
    """A variable has (near-)zero variance and cannot be standardized."""


class SingularPriorError(ValueError):
    """Covariance inversion failed even after ridge regularization."""


class BundleError(IOError):
    """Dataset bundle on disk is corrupt or inconsistent."""


@dataclass
class CausalGraph:
    """Ground-truth DAG; adjacency[i, j] == 1 means an edge i -> j."""

    n: int
    adjacency: np.ndarray
    family: str

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum())

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; raises if the graph has a cycle."""
        indeg = self.adjacency.sum(axis=0).astype(int)
        ready = [i for i in range(self.n) if indeg[i] == 0]
        order: list[int] = []
        while ready:
            v = ready.pop()
            order.append(v)
            for w in np.flatnonzero(self.adjacency[v]):
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(int(w))
        if len(order) != self.n:
            raise ValueError("graph contains a directed cycle")
        return order

    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
            return True
        except ValueError:
            return False

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, j])


@dataclass
class Mechanism:
    """Per-node structural equations plus noise scales."""

    kind: str
    weights: list  # per-node payload; layout depends on kind
    noise_scale: np.ndarray  # sigma per node, sigma^2 ~ Uniform(1, 2)


@dataclass
class Dataset:
    """Observations D (m x n) with the binary intervention mask I."""

    D: np.ndarray
    I: np.ndarray
    standardized: bool = False

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def n(self) -> int:
        return self.D.shape[1]


@dataclass
class GraphPrior:
    """Inverse empirical covariance of the observations."""

    rho: np.ndarray
    ridge: float = 0.0


# -- graph sampling -----------------------------------------------------------


def _orient_by_permutation(skeleton: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orient an undirected skeleton from lower to higher position in a
    random node permutation, which forces acyclicity."""
    n = skeleton.shape[0]
    perm = rng.permutation(n)
    pos = np.empty(n, dtype=int)
    pos[perm] = np.arange(n)
    adj = np.zeros((n, n), dtype=np.int8)
    us, vs = np.nonzero(np.triu(skeleton, 1))
    for u, v in zip(us, vs):
        if pos[u] < pos[v]:
            adj[u, v] = 1
        else:
            adj[v, u] = 1
    return adj


def sample_graph(family: str, n: int, e: int, seed: int) -> CausalGraph:
    """Draw a random DAG with (expected) edge count ``e``.

    er: each pair independently with probability e / C(n, 2).
    sf: preferential attachment targeting ~e edges.
    sbm: random block assignment, within-block density 5x between-block.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    max_edges = n * (n - 1) // 2
    if e < 0 or e > max_edges:
        raise ValueError(f"edge count {e} infeasible for {n} nodes (max {max_edges})")
    family = family.lower()
    rng = np.random.default_rng(seed)

    if family == "er":
        p = e / max_edges
        skel = np.triu(rng.random((n, n)) < p, 1).astype(np.int8)
        skel = skel + skel.T
    elif family == "sf":
        attach = max(1, round(e / max(1, n - 1)))
        skel = np.zeros((n, n), dtype=np.int8)
        degree = np.ones(n)  # +1 smoothing so isolated nodes stay reachable
        for v in range(1, n):
            k = min(attach, v)
            weights = degree[:v] / degree[:v].sum()
            targets = rng.choice(v, size=k, replace=False, p=weights)
            for t in targets:
                skel[v, t] = skel[t, v] = 1
                degree[t] += 1
            degree[v] += k
    elif family == "sbm":
        blocks = rng.integers(0, max(2, n // 10), size=n)
        same = blocks[:, None] == blocks[None, :]
        iu = np.triu_indices(n, 1)
        n_within = int(same[iu].sum())
        n_between = max_edges - n_within
        p_out = min(1.0, e / max(1e-12, 5.0 * n_within + n_between))
        p_in = min(1.0, 5.0 * p_out)
        probs = np.where(same, p_in, p_out)
        skel = np.triu(rng.random((n, n)) < probs, 1).astype(np.int8)
        skel = skel + skel.T
    else:
        raise ValueError(f"unknown graph family {family!r} (expected one of {GRAPH_FAMILIES})")

    return CausalGraph(n=n, adjacency=_orient_by_permutation(skel, rng), family=family)


# -- mechanisms ---------------------------------------------------------------


def sample_mechanism(graph: CausalGraph, kind: str, seed: int) -> Mechanism:
    """Draw random mechanism parameters for every node of ``graph``."""
    if kind not in MECHANISM_KINDS:
        raise ValueError(f"unknown mechanism kind {kind!r} (expected one of {MECHANISM_KINDS})")
    rng = np.random.default_rng(seed)
    sigma = np.sqrt(rng.uniform(1.0, 2.0, size=graph.n))
    weights: list = []
    for j in range(graph.n):
        p = len(graph.parents(j))
        if p == 0:
            weights.append(None)
            continue
        if kind == "linear":
            # keep |w| away from zero so edges stay statistically visible
            w = rng.uniform(0.5, 2.0, size=p) * rng.choice([-1.0, 1.0], size=p)
            weights.append(w)
        elif kind in ("nn_additive", "nn_nonadditive"):
            d_in = p + (1 if kind == "nn_nonadditive" else 0)
            weights.append({
                "w1": rng.uniform(-1.0, 1.0, size=(d_in, _NN_HIDDEN)),
                "w2": rng.uniform(-1.0, 1.0, size=_NN_HIDDEN),
                "slope": rng.uniform(0.1, 0.9),
            })
        elif kind == "sigmoid_additive":
            weights.append(rng.uniform(-1.0, 1.0, size=p))
        else:  # polynomial: per parent, coefficients for degrees 0..2
            weights.append(rng.uniform(-1.0, 1.0, size=(p, 3)))
    return Mechanism(kind=kind, weights=weights, noise_scale=sigma)


def _prelu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def _node_values(mech: Mechanism, j: int, pa: np.ndarray, noise: np.ndarray) -> np.ndarray:
    w = mech.weights[j]
    if mech.kind == "linear":
        return pa @ w + noise
    if mech.kind == "nn_additive":
        return _prelu(pa @ w["w1"], w["slope"]) @ w["w2"] + noise
    if mech.kind == "nn_nonadditive":
        full = np.concatenate([pa, noise[:, None]], axis=1)
        return _prelu(full @ w["w1"], w["slope"]) @ w["w2"]
    if mech.kind == "sigmoid_additive":
        return (1.0 / (1.0 + np.exp(-pa))) @ w + noise
    # polynomial
    out = noise.copy()
    for k in range(3):
        out += (pa ** k) @ w[:, k]
    return out


# -- dataset sampling ---------------------------------------------------------


def default_intervention_fraction(n: int, obs_dominant: bool = False) -> float:
    """Share of samples that carry a single-node intervention.

    The default reading makes interventional data dominate (n per 1
    observational sample, capped at 0.9); ``obs_dominant`` flips the ratio.
    """
    return 1.0 / (n + 1) if obs_dominant else min(0.9, n / (n + 1))


def sample_dataset(
    graph: CausalGraph,
    mechanism: Mechanism,
    m: int,
    interventional_fraction: float | None = None,
    seed: int = 0,
) -> Dataset:
    """Ancestral sampling of ``m`` rows; interventions cycle over nodes.

    Intervened variables are drawn Uniform(-1, 1) independent of their
    parents; root nodes are Uniform(-1, 1); additive noise is
    0.4 * Normal(0, sigma_j^2).
    """
    if m < 1:
        raise ValueError(f"need at least one sample, got m={m}")
    n = graph.n
    if len(mechanism.weights) != n:
        raise ValueError(f"mechanism covers {len(mechanism.weights)} nodes, graph has {n}")
    if interventional_fraction is None:
        interventional_fraction = default_intervention_fraction(n)
    if not 0.0 <= interventional_fraction <= 1.0:
        raise ValueError(f"interventional fraction must be in [0, 1], got {interventional_fraction}")

    rng = np.random.default_rng(seed)
    n_int = math.ceil(m * interventional_fraction)
    mask = np.zeros((m, n), dtype=np.uint8)
    if n_int > 0:
        mask[np.arange(n_int), np.arange(n_int) % n] = 1

    D = np.zeros((m, n), dtype=np.float64)
    for j in graph.topological_order():
        pa_idx = graph.parents(j)
        if len(pa_idx) == 0:
            D[:, j] = rng.uniform(-1.0, 1.0, size=m)
        else:
            noise = 0.4 * mechanism.noise_scale[j] * rng.standard_normal(m)
            D[:, j] = _node_values(mechanism, j, D[:, pa_idx], noise)
        hit = mask[:, j] == 1
        if hit.any():
            D[hit, j] = rng.uniform(-1.0, 1.0, size=int(hit.sum()))

    order = rng.permutation(m)
    return Dataset(D=D[order], I=mask[order], standardized=False)


def standardize(dataset: Dataset) -> Dataset:
    """Column-wise (x - mean) / std on the value channel; mask untouched."""
    mu = dataset.D.mean(axis=0)
    sd = dataset.D.std(axis=0)
    bad = np.flatnonzero(sd <= 1e-12)
    if len(bad):
        raise DegenerateColumnError(f"variable {int(bad[0])} is constant (std={sd[bad[0]]:.3g})")
    return Dataset(D=(dataset.D - mu) / sd, I=dataset.I.copy(), standardized=True)


def compute_prior(dataset: Dataset, ridge: float = 0.0) -> GraphPrior:
    """Inverse covariance of the standardized observations (1/m normalization).

    A singular covariance escalates the ridge to 1e-3 before giving up.
    """
    if not dataset.standardized:
        raise ValueError("prior must be computed on a standardized dataset")
    if dataset.m < 2:
        raise ValueError(f"need m >= 2 samples for a covariance, got {dataset.m}")
    centered = dataset.D - dataset.D.mean(axis=0)
    cov = centered.T @ centered / dataset.m

    for attempt_ridge in dict.fromkeys([ridge, max(ridge, 1e-3)]):
        reg = cov + attempt_ridge * np.eye(dataset.n)
        cond = np.linalg.cond(reg)
        if not np.isfinite(cond) or cond > 1e12:
            continue
        rho = np.linalg.inv(reg)
        rho = (rho + rho.T) / 2.0
        return GraphPrior(rho=rho, ridge=attempt_ridge)
    raise SingularPriorError(
        f"covariance is singular even with ridge 1e-3 (cond={np.linalg.cond(cov):.3g})"
    )


# -- dataset bundles ----------------------------------------------------------

_BUNDLE_FORMAT = "causax-bundle-v1"


def _crc(payload: bytes) -> str:
    return f"{zlib.crc32(payload) & 0xFFFFFFFF:08x}"


def write_dataset(dataset: Dataset, graph: CausalGraph, path, mechanism_kind: str = "linear",
                  seed: int = 0) -> None:
    """Write a dataset bundle directory: manifest + D.bin / I.bin / adj.bin."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    d_bytes = dataset.D.astype("<f4").tobytes(order="C")
    i_bytes = dataset.I.astype(np.uint8).tobytes(order="C")
    a_bytes = graph.adjacency.astype(np.uint8).tobytes(order="C")
    (path / "D.bin").write_bytes(d_bytes)
    (path / "I.bin").write_bytes(i_bytes)
    (path / "adj.bin").write_bytes(a_bytes)
    manifest = [
        f"format = {_BUNDLE_FORMAT}",
        f"n = {dataset.n}",
        f"m = {dataset.m}",
        f"family = {graph.family}",
        f"mechanism = {mechanism_kind}",
        f"seed = {seed}",
        f"standardized = {'true' if dataset.standardized else 'false'}",
        f"edges = {graph.edge_count}",
        f"checksum_d = {_crc(d_bytes)}",
        f"checksum_i = {_crc(i_bytes)}",
        f"checksum_adj = {_crc(a_bytes)}",
    ]
    (path / "manifest").write_text("".join(line + "\n" for line in manifest))


def _parse_manifest(path: Path) -> dict[str, str]:
    if not path.exists():
        raise BundleError(f"{path.parent}: missing manifest")
    fields: dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BundleError(f"{path}: malformed manifest line {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def read_dataset(path) -> tuple[Dataset, CausalGraph, dict]:
    """Read a bundle back; verifies extents and checksums field by field."""
    path = Path(path)
    fields = _parse_manifest(path / "manifest")
    for key in ("n", "m", "family", "mechanism", "seed", "standardized",
                "checksum_d", "checksum_i", "checksum_adj"):
        if key not in fields:
            raise BundleError(f"{path}: manifest missing field {key!r}")
    n, m = int(fields["n"]), int(fields["m"])

    payloads = {}
    for name, count, itemsize in (("D", m * n, 4), ("I", m * n, 1), ("adj", n * n, 1)):
        raw = (path / f"{name}.bin").read_bytes()
        if len(raw) != count * itemsize:
            raise BundleError(
                f"{path}/{name}.bin: expected {count * itemsize} bytes, found {len(raw)} (truncated or corrupt)"
            )
        key = f"checksum_{name.lower()}"
        if _crc(raw) != fields[key]:
            raise BundleError(f"{path}: {key} mismatch")
        payloads[name] = raw

    D = np.frombuffer(payloads["D"], dtype="<f4").reshape(m, n).astype(np.float64)
    I = np.frombuffer(payloads["I"], dtype=np.uint8).reshape(m, n).copy()
    adj = np.frombuffer(payloads["adj"], dtype=np.uint8).reshape(n, n).astype(np.int8)
    dataset = Dataset(D=D, I=I, standardized=fields["standardized"] == "true")
    graph = CausalGraph(n=n, adjacency=adj, family=fields["family"])
    info = {"seed": int(fields["seed"]), "mechanism": fields["mechanism"]}
    return dataset, graph, info
