"""Command-line interface for running and recording experiments.

Subcommands::

    netvb gen-net   --n 50 --side 3.5 --radius 0.8 --seed 0 --out net.txt
    netvb gen-data  --config exp.json [--seed S] --out data.csv
    netvb run       --config exp.json --algo dsvb [--seed S] [--trials T] --out DIR
    netvb compare   --config exp.json [--algo A ...] [--seed S] [--trials T] --out DIR
    netvb eval      --config exp.json --states states.csv [--seed S]

``--trials T`` repeats run/compare with seeds S..S+T-1, writing each repeat
under ``DIR/trial_XXX/`` and printing the mean of the final costs.

``--config`` accepts a JSON file path or the name of a bundled config
(``netvb compare --config imbalanced50 ...``). Exit codes: 0 success,
1 runtime or numerical-domain failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import algorithms as alg
from . import gmm
from . import harness as hz
from .expfam import DomainError, flatten, unflatten
from .network import generate_geometric_graph, render_edge_list

__all__ = ["main"]


def _resolve_config(path: str) -> str:
    if os.path.exists(path):
        return path
    if os.sep not in path:
        try:
            return hz.bundled_config_path(path)
        except ValueError:
            pass
    raise ValueError(f"config file not found: {path}")


def _load(args) -> hz.ExperimentConfig:
    return hz.load_experiment_config(_resolve_config(args.config))


def _cmd_gen_net(args) -> int:
    net = generate_geometric_graph(args.n, args.side, args.radius, rng_seed=args.seed)
    hz._atomic_write(args.out, render_edge_list(net))
    print(f"wrote {args.out}: {net.n} nodes, {net.num_edges} edges")
    return 0


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    seed = cfg.seed if args.seed is None else args.seed
    _, data_seed, _ = hz._derive_seeds(seed)
    net = hz._build_network(cfg, hz._derive_seeds(seed)[0])
    spec = hz.spec_from_config(cfg.data, net.n, data_seed)
    ds = hz.generate_synthetic(spec)
    hz.write_dataset_csv(args.out, ds)
    print(f"wrote {args.out}: {ds.points.shape[0]} points on {ds.n_nodes} nodes")
    return 0


def _record_result(out_dir, res) -> None:
    os.makedirs(out_dir, exist_ok=True)
    named = sorted(res.results.items())
    trace_path = os.path.join(out_dir, "trace.csv")
    hz.write_trace_csv(trace_path, [(name, trace) for name, (trace, _) in named])
    K, D = res.model.K, res.model.D
    for name, (trace, states) in named:
        state_path = os.path.join(out_dir, f"states_{name}.csv")
        hz.write_states_csv(state_path, states, K, D)
        final = trace.mean_cost[-1] if trace.mean_cost.size else float("nan")
        print(f"{name}: final mean KL {final:.6g} ({trace.iterations[-1] if trace.iterations.size else 0} iters)")
    print(f"wrote {trace_path}")


def _run_and_record(args, kinds) -> int:
    cfg = _load(args)
    trials = getattr(args, "trials", 1)
    if trials < 1:
        raise ValueError(f"--trials must be at least 1, got {trials}")
    if trials == 1:
        _record_result(args.out, hz.run_experiment(cfg, kinds=kinds, seed=args.seed))
        return 0
    base = cfg.seed if args.seed is None else args.seed
    finals: dict = {}
    for t in range(trials):
        print(f"trial {t} (seed {base + t})")
        res = hz.run_experiment(cfg, kinds=kinds, seed=base + t)
        _record_result(os.path.join(args.out, f"trial_{t:03d}"), res)
        for name, (trace, _) in res.results.items():
            finals.setdefault(name, []).append(float(trace.mean_cost[-1]))
    for name in sorted(finals):
        vals = np.asarray(finals[name])
        print(
            f"{name}: mean of final KL over {trials} trials "
            f"{vals.mean():.6g} (std {vals.std():.6g})"
        )
    return 0


def _cmd_run(args) -> int:
    return _run_and_record(args, kinds=[args.algo])


def _cmd_compare(args) -> int:
    return _run_and_record(args, kinds=args.algo if args.algo else None)


def _cmd_eval(args) -> int:
    cfg = _load(args)
    seed = cfg.seed if args.seed is None else args.seed
    net_seed, data_seed, _ = hz._derive_seeds(seed)
    net = hz._build_network(cfg, net_seed)
    ds = hz._build_dataset(cfg, net, data_seed)
    model = hz._build_model(cfg, net.n)
    stack = hz.read_states_csv(args.states)
    if stack.shape[0] != net.n:
        raise ValueError(
            f"{args.states}: {stack.shape[0]} states for a {net.n}-node network"
        )
    if ds.labels is None:
        raise ValueError("evaluation needs labeled data (synthetic or labeled CSV)")
    truth = hz.ground_truth_posterior(ds, model)
    mean_kl, std_kl = hz.mean_kl_cost(stack, truth)
    resps = [
        gmm.vbe_step(part.points, unflatten(stack[i], model.K, model.D), model).r
        for i, part in enumerate(hz.node_datasets(ds))
    ]
    acc = hz.clustering_accuracy(resps, hz.labels_by_node(ds))
    print(f"mean_kl={mean_kl!r}")
    print(f"std_kl={std_kl!r}")
    print(f"accuracy={acc!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netvb",
        description="Distributed variational inference simulator for Gaussian mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-net", help="generate a connected geometric network")
    p.add_argument("--n", type=int, required=True, help="number of nodes")
    p.add_argument("--side", type=float, required=True, help="square side length")
    p.add_argument("--radius", type=float, required=True, help="connection radius")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="edge-list file to write")
    p.set_defaults(func=_cmd_gen_net)

    p = sub.add_parser("gen-data", help="generate the configured synthetic dataset")
    p.add_argument("--config", required=True, help="experiment JSON (path or bundled name)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True, help="dataset CSV to write")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("run", help="run one configured algorithm")
    p.add_argument("--config", required=True)
    p.add_argument("--algo", required=True, help="algorithm name from the config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=1, help="repeat with seeds seed..seed+T-1")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser(
        "compare", help="run several algorithms on shared data, topology, and init"
    )
    p.add_argument("--config", required=True)
    p.add_argument(
        "--algo",
        action="append",
        default=None,
        help="restrict to these algorithm names (repeatable; default: all)",
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=1, help="repeat with seeds seed..seed+T-1")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("eval", help="score saved states against the ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--states", required=True, help="states CSV produced by run/compare")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
