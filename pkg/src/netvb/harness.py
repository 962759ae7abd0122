"""Experiment orchestration: synthetic data, ground truth, metrics, file IO.

The experiment pipeline is fully seeded and deterministic: a single
experiment seed derives independent streams for network placement, data
generation, and per-node initialization, so the same configuration always
produces byte-identical outputs (modulo wall-clock columns).

Synthetic data follows a finite Gaussian mixture with per-node component
proportions (imbalance patterns are configuration data, not code). Because
the generator's labels are known, the exact complete-data posterior is
available in closed form — the conjugate update with one-hot responsibilities
and no replication — and serves as the ground truth that run costs are
measured against.
"""

from __future__ import annotations

import json
import os
from typing import NamedTuple, Optional

import numpy as np

from . import algorithms as alg
from . import gmm
from .expfam import GlobalNaturalParams, flat_size, flatten, hyper_to_natural
from .gmm import GmmModelConfig, NodeDataset
from .network import Network, generate_geometric_graph, parse_edge_list

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "LabeledDataset",
    "SyntheticSpec",
    "bundled_config_path",
    "clustering_accuracy",
    "generate_synthetic",
    "ground_truth_posterior",
    "initial_states",
    "labels_by_node",
    "load_csv_dataset",
    "load_experiment_config",
    "make_synthetic_spec",
    "mean_kl_cost",
    "node_datasets",
    "partition_to_nodes",
    "read_dataset_csv",
    "read_states_csv",
    "run_experiment",
    "spec_from_config",
    "write_dataset_csv",
    "write_states_csv",
    "write_trace_csv",
]


class SyntheticSpec(NamedTuple):
    """Mixture ground truth plus the per-node sampling plan.

    weights (K,) on the simplex; means (K, D); covariances (K, D, D) SPD;
    node_counts (n,) sample counts; node_proportions (n, K) rows on the
    simplex, or None to draw every node's labels iid from ``weights``.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    node_counts: np.ndarray
    node_proportions: Optional[np.ndarray]
    seed: int


class LabeledDataset(NamedTuple):
    """Points with generator labels (when known) and their node assignment."""

    points: np.ndarray
    labels: Optional[np.ndarray]
    node_of: np.ndarray
    n_nodes: int


class ExperimentConfig(NamedTuple):
    """Parsed experiment description; see load_experiment_config for schema."""

    seed: int
    network: dict
    data: dict
    model: dict
    algorithms: tuple
    base_dir: str


class ExperimentResult(NamedTuple):
    """Everything a finished experiment produced, keyed by algorithm name."""

    net: Network
    dataset: LabeledDataset
    model: GmmModelConfig
    truth: Optional[GlobalNaturalParams]
    inits: tuple
    results: dict


def make_synthetic_spec(
    weights, means, covariances, node_counts, node_proportions=None, seed: int = 0
) -> SyntheticSpec:
    """Validating constructor for SyntheticSpec."""
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    covariances = np.asarray(covariances, dtype=np.float64)
    node_counts = np.asarray(node_counts, dtype=np.int64)
    K = weights.shape[0]
    if means.ndim != 2 or means.shape[0] != K:
        raise ValueError("means must be (K, D)")
    D = means.shape[1]
    if covariances.shape != (K, D, D):
        raise ValueError("covariances must be (K, D, D)")
    if np.any(weights <= 0.0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be positive and sum to 1")
    for k in range(K):
        try:
            np.linalg.cholesky(covariances[k])
        except np.linalg.LinAlgError:
            raise ValueError(f"covariance {k} is not positive definite") from None
    if node_counts.ndim != 1 or np.any(node_counts < 0):
        raise ValueError("node_counts must be non-negative per-node counts")
    if node_proportions is not None:
        node_proportions = np.asarray(node_proportions, dtype=np.float64)
        if node_proportions.shape != (node_counts.shape[0], K):
            raise ValueError("node_proportions must be (n, K)")
        if np.any(node_proportions < 0.0) or np.any(
            np.abs(node_proportions.sum(axis=1) - 1.0) > 1e-9
        ):
            raise ValueError("each node's proportions must be non-negative and sum to 1")
    return SyntheticSpec(weights, means, covariances, node_counts, node_proportions, int(seed))


def _exact_counts(total: int, proportions: np.ndarray) -> np.ndarray:
    """Split ``total`` into integer counts matching proportions exactly
    (largest-remainder rounding, ties to the lower index)."""
    ideal = total * proportions
    base = np.floor(ideal).astype(np.int64)
    short = int(total - base.sum())
    if short:
        order = np.argsort(-(ideal - base), kind="stable")
        base[order[:short]] += 1
    return base


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Draw the per-node mixture samples described by ``spec``.

    With a proportions table the per-node label counts are exact
    (largest-remainder rounding); without one labels are drawn iid from the
    mixing weights. Points are stored grouped by node.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(0,)))
    K, D = spec.means.shape
    chols = np.linalg.cholesky(spec.covariances)
    points, labels, node_of = [], [], []
    for i, n_i in enumerate(spec.node_counts):
        n_i = int(n_i)
        if spec.node_proportions is not None:
            counts = _exact_counts(n_i, spec.node_proportions[i])
        else:
            drawn = rng.choice(K, size=n_i, p=spec.weights)
            counts = np.bincount(drawn, minlength=K)
        for k in range(K):
            c = int(counts[k])
            if c == 0:
                continue
            z = rng.standard_normal((c, D))
            points.append(spec.means[k] + z @ chols[k].T)
            labels.append(np.full(c, k, dtype=np.int64))
            node_of.append(np.full(c, i, dtype=np.int64))
    n = spec.node_counts.shape[0]
    if points:
        return LabeledDataset(
            points=np.concatenate(points),
            labels=np.concatenate(labels),
            node_of=np.concatenate(node_of),
            n_nodes=n,
        )
    return LabeledDataset(
        points=np.zeros((0, D)),
        labels=np.zeros(0, dtype=np.int64),
        node_of=np.zeros(0, dtype=np.int64),
        n_nodes=n,
    )


def node_datasets(ds: LabeledDataset) -> list:
    """Split a LabeledDataset into per-node NodeDatasets (empty nodes kept)."""
    D = ds.points.shape[1]
    out = []
    for i in range(ds.n_nodes):
        mask = ds.node_of == i
        pts = ds.points[mask] if mask.any() else np.zeros((0, D))
        out.append(NodeDataset(points=pts, node_id=i))
    return out


def labels_by_node(ds: LabeledDataset) -> list:
    """Per-node true-label arrays, aligned with node_datasets order."""
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    return [ds.labels[ds.node_of == i] for i in range(ds.n_nodes)]


def ground_truth_posterior(ds: LabeledDataset, model: GmmModelConfig) -> GlobalNaturalParams:
    """Exact complete-data posterior under the model's priors.

    Uses the generator's labels as hard assignments with no replication: the
    conjugate update on the pooled data, the closed form the run costs are
    measured against.
    """
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    labels = np.asarray(ds.labels)
    if labels.size and (labels.min() < 0 or labels.max() >= model.K):
        raise ValueError(f"labels must lie in [0, {model.K})")
    r = np.zeros((ds.points.shape[0], model.K))
    if labels.size:
        r[np.arange(labels.size), labels] = 1.0
    return gmm.local_vbm_optimum(ds.points, r, model._replace(N=1))


def mean_kl_cost(states, truth: GlobalNaturalParams):
    """Population mean and std of per-node aligned KL costs to ``truth``.

    ``states`` may hold NodeStates, structured posteriors, or flattened
    vectors.
    """
    K, D = truth.num_components, truth.dim
    rows = []
    for st in states:
        phi = st.phi if isinstance(st, alg.NodeState) else st
        rows.append(flatten(phi) if isinstance(phi, GlobalNaturalParams) else np.asarray(phi))
    stack = np.stack(rows)
    costs = alg.aligned_kl_costs(stack, truth, K, D)
    return float(np.mean(costs)), float(np.std(costs))


def clustering_accuracy(resps, labels) -> float:
    """Fraction of points whose hard assignment matches the true label, after
    the best cluster-to-label matching on the pooled confusion matrix."""
    from scipy.optimize import linear_sum_assignment

    if isinstance(resps, gmm.Responsibilities) or (
        isinstance(resps, np.ndarray) and resps.ndim == 2
    ):
        resps, labels = [resps], [labels]
    if len(resps) != len(labels):
        raise ValueError("need one label array per responsibility block")
    K = None
    confusion = None
    total = 0
    for r, y in zip(resps, labels):
        rr = np.asarray(r.r if isinstance(r, gmm.Responsibilities) else r, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if rr.shape[0] != y.shape[0]:
            raise ValueError("responsibilities and labels disagree in length")
        if K is None:
            K = rr.shape[1]
            confusion = np.zeros((K, K), dtype=np.int64)
        elif rr.shape[1] != K:
            raise ValueError("responsibility blocks disagree in component count")
        if y.size and (y.min() < 0 or y.max() >= K):
            raise ValueError(f"labels must lie in [0, {K})")
        if rr.shape[0] == 0:
            continue
        assign = rr.argmax(axis=1)  # first index on exact ties
        np.add.at(confusion, (assign, y), 1)
        total += rr.shape[0]
    if total == 0:
        raise ValueError("no points to score")
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum()) / float(total)


def initial_states(model: GmmModelConfig, points: np.ndarray, n_nodes: int, seed: int):
    """Identical starting posterior for every node: the prior with the
    component locations m_k seeded at distinct randomly drawn data points
    (the standard mixture seeding); all other hyperparameters stay at the
    prior.

    Two properties matter here. Components must differ at data scale — a
    noise-free shared prior keeps them identical forever under exact
    arithmetic, and perturbations much smaller than the data spread leave
    the iteration in the merged-component basin, which the decaying
    step-size methods cannot escape. And the seeding must be shared across
    nodes: with independent per-node seeds, component identities clash from
    node to node, and averaging-based exchanges blend different mixture
    components into one slot. With fewer points than components the
    locations fall back to prior-plus-noise at 0.1 × the data standard
    deviation.
    """
    rng = np.random.default_rng(seed)
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] >= model.K:
        picks = rng.choice(points.shape[0], size=model.K, replace=False)
        locations = points[picks]
    else:
        scale = 0.1 * points.std(axis=0) if points.size else np.ones(model.D)
        scale = np.where(scale > 0.0, scale, 1.0)
        locations = model.priors.m + rng.normal(size=(model.K, model.D)) * scale
    shared = hyper_to_natural(model.priors._replace(m=locations))
    return tuple(shared for _ in range(n_nodes))


# ---------------------------------------------------------------------------
# CSV ingestion and partitioning
# ---------------------------------------------------------------------------


def load_csv_dataset(path, has_labels: bool = False):
    """Read a plain numeric CSV of points (one row per point).

    With ``has_labels`` the final column is an integer class label. Parse
    failures name the offending row and column. Returns (points, labels).
    """
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ValueError(
                    f"{path}: row {lineno} has {len(parts)} columns, expected {width}"
                )
            values = []
            for col, tok in enumerate(parts, start=1):
                try:
                    values.append(float(tok))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno}, column {col}: not a number: {tok!r}"
                    ) from None
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    matrix = np.asarray(rows, dtype=np.float64)
    if not has_labels:
        return matrix, None
    if matrix.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus labels")
    raw_labels = matrix[:, -1]
    labels = raw_labels.astype(np.int64)
    if np.any(labels != raw_labels) or labels.min() < 0:
        raise ValueError(f"{path}: label column must hold non-negative integers")
    return matrix[:, :-1], labels


def partition_to_nodes(
    points, labels, n_nodes: int, policy: str = "uniform", seed: int = 0
) -> LabeledDataset:
    """Assign points to nodes: 'uniform' shuffles then deals round-robin
    (sizes differ by at most one); 'contiguous' slices in file order. Nodes
    may end up empty when there are more nodes than points."""
    points = np.asarray(points, dtype=np.float64)
    P = points.shape[0]
    if n_nodes < 1:
        raise ValueError("n_nodes must be at least 1")
    node_of = np.empty(P, dtype=np.int64)
    if policy == "uniform":
        perm = np.random.default_rng(seed).permutation(P)
        node_of[perm] = np.arange(P) % n_nodes
    elif policy == "contiguous":
        splits = np.array_split(np.arange(P), n_nodes)
        for i, idx in enumerate(splits):
            node_of[idx] = i
    else:
        raise ValueError(f"unknown partition policy {policy!r}")
    return LabeledDataset(
        points=points,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        node_of=node_of,
        n_nodes=n_nodes,
    )


# ---------------------------------------------------------------------------
# file output (atomic, byte-stable)
# ---------------------------------------------------------------------------


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    return repr(float(v))


def write_trace_csv(path, named_traces) -> None:
    """Write per-iteration metrics: iter,algo,mean_kl,std_kl,consensus_disagreement,elapsed_ms."""
    lines = ["iter,algo,mean_kl,std_kl,consensus_disagreement,elapsed_ms"]
    for name, trace in named_traces:
        for row in range(trace.iterations.shape[0]):
            lines.append(
                ",".join(
                    [
                        str(int(trace.iterations[row])),
                        name,
                        _fmt(trace.mean_cost[row]),
                        _fmt(trace.std_cost[row]),
                        _fmt(trace.consensus_disagreement[row]),
                        _fmt(trace.elapsed_ms[row]),
                    ]
                )
            )
    _atomic_write(path, "\n".join(lines) + "\n")


def write_states_csv(path, states, K: int, D: int) -> None:
    """Write one row per node of flattened natural parameters."""
    L = flat_size(K, D)
    header = "node," + ",".join(f"phi_{j}" for j in range(L))
    lines = [header]
    for i, st in enumerate(states):
        phi = st.phi if isinstance(st, alg.NodeState) else st
        vec = flatten(phi) if isinstance(phi, GlobalNaturalParams) else np.asarray(phi)
        if vec.shape != (L,):
            raise ValueError(f"state {i} has length {vec.shape}, expected ({L},)")
        lines.append(str(i) + "," + ",".join(_fmt(v) for v in vec))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_states_csv(path) -> np.ndarray:
    """Read a states CSV back into an (n, L) array of flattened parameters."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "node":
            raise ValueError(f"{path}: not a states CSV")
        rows = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(parts)} columns")
            rows.append([float(tok) for tok in parts[1:]])
    return np.asarray(rows, dtype=np.float64)


def write_dataset_csv(path, ds: LabeledDataset) -> None:
    """Write points with their label and node columns (self-describing)."""
    D = ds.points.shape[1]
    cols = [f"x{j}" for j in range(D)]
    if ds.labels is not None:
        cols.append("label")
    cols.append("node")
    lines = [f"# columns: {','.join(cols)}", f"# nodes: {ds.n_nodes}"]
    for i in range(ds.points.shape[0]):
        parts = [_fmt(v) for v in ds.points[i]]
        if ds.labels is not None:
            parts.append(str(int(ds.labels[i])))
        parts.append(str(int(ds.node_of[i])))
        lines.append(",".join(parts))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_dataset_csv(path) -> LabeledDataset:
    """Inverse of :func:`write_dataset_csv`."""
    n_nodes = None
    has_labels = False
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("columns:"):
                    has_labels = "label" in body.split(":", 1)[1].split(",")
                elif body.startswith("nodes:"):
                    n_nodes = int(body.split(":", 1)[1])
                continue
            rows.append((lineno, line.split(",")))
    if n_nodes is None:
        raise ValueError(f"{path}: missing '# nodes:' header")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0][1])
    matrix = np.empty((len(rows), width))
    for r, (lineno, parts) in enumerate(rows):
        if len(parts) != width:
            raise ValueError(f"{path}: row {lineno} has {len(parts)} columns, expected {width}")
        for c, tok in enumerate(parts):
            try:
                matrix[r, c] = float(tok)
            except ValueError:
                raise ValueError(
                    f"{path}: row {lineno}, column {c + 1}: not a number: {tok!r}"
                ) from None
    trailing = 2 if has_labels else 1
    points = matrix[:, : width - trailing]
    labels = matrix[:, -2].astype(np.int64) if has_labels else None
    node_of = matrix[:, -1].astype(np.int64)
    if node_of.size and (node_of.min() < 0 or node_of.max() >= n_nodes):
        raise ValueError(f"{path}: node column out of range for {n_nodes} nodes")
    return LabeledDataset(points=points, labels=labels, node_of=node_of, n_nodes=n_nodes)


# ---------------------------------------------------------------------------
# experiment configuration and orchestration
# ---------------------------------------------------------------------------


def _derive_seeds(seed: int):
    """Independent child seeds for (network, data, init) from one root seed."""
    state = np.random.SeedSequence(entropy=int(seed)).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def bundled_config_path(name: str) -> str:
    """Resolve a bundled experiment config shipped inside the package.

    ``name`` may omit the ``.json`` suffix.  Raises ``ValueError`` naming
    the available configs when no bundled file matches.
    """
    from importlib import resources

    base = resources.files("netvb") / "configs"
    fname = name if name.endswith(".json") else name + ".json"
    candidate = base / fname
    if not candidate.is_file():
        available = sorted(p.name for p in base.iterdir() if p.name.endswith(".json"))
        raise ValueError(
            f"no bundled config named {name!r}; available: {', '.join(available)}"
        )
    return str(candidate)


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate an experiment JSON file.

    Schema (see the bundled configs for complete examples)::

        {
          "seed": 0,
          "network": {"n": 50, "side": 3.5, "radius": 0.8} | {"path": "net.txt"},
          "data": {synthetic mixture spec} | {"path": "points.csv", ...},
          "model": {"K": 3, "D": 2, ...prior overrides},
          "algorithms": [{"kind": "dsvb", ...}, ...],
          "max_iters": 3000,
          "eval_stride": 1
        }

    Per-algorithm entries may override max_iters/eval_stride and carry an
    optional unique "name" (defaults to the kind).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON: {err}") from None
    base_dir = os.path.dirname(os.path.abspath(path))
    for field in ("network", "data", "model", "algorithms"):
        if field not in raw:
            raise ValueError(f"{path}: missing required field {field!r}")
    if not isinstance(raw["algorithms"], list) or not raw["algorithms"]:
        raise ValueError(f"{path}: 'algorithms' must be a non-empty list")
    max_iters = int(raw.get("max_iters", 100))
    eval_stride = int(raw.get("eval_stride", 1))
    names = set()
    algo_entries = []
    for entry in raw["algorithms"]:
        if "kind" not in entry:
            raise ValueError(f"{path}: every algorithm entry needs a 'kind'")
        kind = entry["kind"]
        if kind not in alg.ALGORITHM_KINDS:
            raise ValueError(
                f"{path}: unknown algorithm kind {kind!r}; pick from {alg.ALGORITHM_KINDS}"
            )
        name = entry.get("name", kind)
        if name in names:
            raise ValueError(f"{path}: duplicate algorithm name {name!r}")
        names.add(name)
        cfg = alg.AlgoConfig(
            kind=kind,
            tau=float(entry.get("tau", 0.2)),
            d0=float(entry.get("d0", 1.0)),
            rho=float(entry.get("rho", 0.5)),
            xi=float(entry.get("xi", 0.05)),
            max_iters=int(entry.get("max_iters", max_iters)),
            weight_rule=entry.get("weight_rule", "nearest"),
            eval_stride=int(entry.get("eval_stride", eval_stride)),
        )
        algo_entries.append((name, cfg))
    for section in ("network", "data"):
        ref = raw[section].get("path")
        if ref is not None:
            resolved = os.path.join(base_dir, ref)
            if not os.path.exists(resolved):
                raise ValueError(f"{path}: {section} path does not exist: {resolved}")
    return ExperimentConfig(
        seed=int(raw.get("seed", 0)),
        network=raw["network"],
        data=raw["data"],
        model=raw["model"],
        algorithms=tuple(algo_entries),
        base_dir=base_dir,
    )


def spec_from_config(data_cfg: dict, n_nodes: int, seed: int) -> SyntheticSpec:
    """Build a SyntheticSpec from the config's 'data' section.

    node_counts may be a single integer, a per-node list, or
    {"low": a, "high": b} for per-node counts drawn uniformly from [a, b]
    (a dedicated stream, so counts never correlate with the sample draws).
    node_groups assigns proportions to half-open node ranges that must tile
    [0, n) exactly.
    """
    for field in ("weights", "means", "covariances"):
        if field not in data_cfg:
            raise ValueError(f"synthetic data config missing {field!r}")
    counts_cfg = data_cfg.get("node_counts", 100)
    if isinstance(counts_cfg, dict):
        low, high = int(counts_cfg["low"]), int(counts_cfg["high"])
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        node_counts = rng.integers(low, high, size=n_nodes, endpoint=True)
    elif isinstance(counts_cfg, (int, float)):
        node_counts = np.full(n_nodes, int(counts_cfg), dtype=np.int64)
    else:
        node_counts = np.asarray(counts_cfg, dtype=np.int64)
        if node_counts.shape != (n_nodes,):
            raise ValueError(f"node_counts must list {n_nodes} entries")
    K = len(data_cfg["weights"])
    proportions = None
    if "node_groups" in data_cfg:
        proportions = np.full((n_nodes, K), np.nan)
        for group in data_cfg["node_groups"]:
            start, end = (int(v) for v in group["nodes"])
            if not (0 <= start < end <= n_nodes):
                raise ValueError(f"node group range [{start}, {end}) out of bounds")
            if np.any(np.isfinite(proportions[start:end])):
                raise ValueError(f"node group range [{start}, {end}) overlaps another")
            proportions[start:end] = np.asarray(group["proportions"], dtype=np.float64)
        uncovered = np.nonzero(~np.isfinite(proportions[:, 0]))[0]
        if uncovered.size:
            raise ValueError(f"node {int(uncovered[0])} not covered by any node group")
    return make_synthetic_spec(
        data_cfg["weights"],
        data_cfg["means"],
        data_cfg["covariances"],
        node_counts,
        node_proportions=proportions,
        seed=seed,
    )


def _build_network(cfg: ExperimentConfig, net_seed: int) -> Network:
    spec = cfg.network
    if "path" in spec:
        with open(os.path.join(cfg.base_dir, spec["path"]), "r", encoding="utf-8") as fh:
            return parse_edge_list(fh.read())
    for field in ("n", "side", "radius"):
        if field not in spec:
            raise ValueError(f"network config missing {field!r}")
    return generate_geometric_graph(
        int(spec["n"]), float(spec["side"]), float(spec["radius"]), rng_seed=net_seed
    )


def _build_dataset(cfg: ExperimentConfig, net: Network, data_seed: int) -> LabeledDataset:
    spec = cfg.data
    if "path" in spec:
        resolved = os.path.join(cfg.base_dir, spec["path"])
        if spec.get("format") == "nodes":
            ds = read_dataset_csv(resolved)
            if ds.n_nodes != net.n:
                raise ValueError(
                    f"dataset has {ds.n_nodes} nodes but the network has {net.n}"
                )
            return ds
        points, labels = load_csv_dataset(resolved, has_labels=spec.get("has_labels", False))
        return partition_to_nodes(
            points, labels, net.n, policy=spec.get("partition", "uniform"), seed=data_seed
        )
    return generate_synthetic(spec_from_config(spec, net.n, data_seed))


def _build_model(cfg: ExperimentConfig, n_nodes: int) -> GmmModelConfig:
    spec = cfg.model
    for field in ("K", "D"):
        if field not in spec:
            raise ValueError(f"model config missing {field!r}")
    kwargs = {}
    for field in ("alpha0", "beta0", "nu0"):
        if field in spec:
            kwargs[field] = float(spec[field])
    if "m0" in spec:
        kwargs["m0"] = np.asarray(spec["m0"], dtype=np.float64)
    if "w0" in spec:
        kwargs["w0"] = np.asarray(spec["w0"], dtype=np.float64)
    return gmm.make_model(int(spec["K"]), int(spec["D"]), n_nodes, **kwargs)


def run_experiment(cfg: ExperimentConfig, kinds=None, seed=None) -> ExperimentResult:
    """Assemble the experiment and run its algorithms on shared inputs.

    Every algorithm sees the same network, data, initialization, and ground
    truth. ``kinds`` filters by algorithm name; ``seed`` overrides the
    config's seed (used by repeat trials).
    """
    root_seed = cfg.seed if seed is None else int(seed)
    net_seed, data_seed, init_seed = _derive_seeds(root_seed)
    net = _build_network(cfg, net_seed)
    ds = _build_dataset(cfg, net, data_seed)
    model = _build_model(cfg, net.n)
    truth = ground_truth_posterior(ds, model) if ds.labels is not None else None
    inits = initial_states(model, ds.points, net.n, init_seed)
    data = node_datasets(ds)
    results = {}
    for name, algo_cfg in cfg.algorithms:
        if kinds is not None and name not in kinds:
            continue
        trace, states = alg.run(algo_cfg, model, net, data, inits, truth=truth)
        results[name] = (trace, states)
    if kinds is not None and not results:
        raise ValueError(f"no configured algorithm matches {sorted(kinds)!r}")
    return ExperimentResult(
        net=net, dataset=ds, model=model, truth=truth, inits=inits, results=results
    )
