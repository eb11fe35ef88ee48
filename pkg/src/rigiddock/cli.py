"""Command-line interface.

Subcommands: dock, train, eval, gen-synthetic, features, check-equivariance.
Exit codes: 0 success, 1 usage or configuration error, 2 input parse
failure, 3 numerical or degenerate failure. Output files are written to a
temporary sibling and renamed, so failures never leave partial files.
The RIGIDDOCK_LOG_LEVEL environment variable (DEBUG/INFO/WARNING/ERROR)
controls logging; there is no verbosity flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from .checkpoint import CheckpointError, load_named_tensors
from .docking import (DegenerateKeypointsError, check_complex_invariance,
                      check_role_swap, check_transform_covariance, predict_dock)
from .graphs import DEFAULT_K, build_graph
from .model import DockingModel, ModelConfig, check_pairwise_equivariance
from .pdbio import PdbParseError, format_ca_pdb, parse_pdb_file, transform_atom_records
from .synthetic import GenerationError, generate_dataset, load_split
from .training import TrainConfig, evaluate, train, write_eval_csv

logger = logging.getLogger("rigiddock.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_NUMERICAL = 3

_EQUIVARIANCE_LIMIT = 1e-5


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse flavor whose usage failures exit with code 1, not 2."""

    def error(self, message):
        raise _UsageError(message)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _chain_set(arg: str | None):
    if arg is None:
        return None
    return {c.strip() for c in arg.split(",") if c.strip()}


def _load_model(path: str) -> DockingModel:
    tensors, extra = load_named_tensors(path)
    if not isinstance(extra, dict) or "config" not in extra:
        raise CheckpointError(f"{path}: missing model configuration")
    model = DockingModel(ModelConfig.from_dict(extra["config"]), seed=0)
    model.load_state_arrays(tensors)
    return model


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_dock(args) -> int:
    ligand = parse_pdb_file(args.ligand, _chain_set(args.chains_ligand))
    receptor = parse_pdb_file(args.receptor, _chain_set(args.chains_receptor))
    model = _load_model(args.model)
    g_lig = build_graph(ligand, model.config.neighbors)
    g_rec = build_graph(receptor, model.config.neighbors)
    tr = predict_dock(model, g_lig, g_rec)
    if args.out_pdb:
        if args.copy_full_atoms:
            with open(args.ligand) as fh:
                moved = transform_atom_records(fh.read(), tr.R, tr.t)
        else:
            moved = format_ca_pdb(ligand.transformed(tr.R, tr.t))
        _atomic_write(args.out_pdb, moved)
    if args.out_transform:
        _atomic_write(args.out_transform, tr.to_json() + "\n")
    logger.info("docked %s onto %s", args.ligand, args.receptor)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    """CLI flags beat the config file, which beats the defaults."""
    base = TrainConfig.fine_tune() if args.fine_tune else TrainConfig()
    values = base.__dict__.copy()
    if args.config:
        with open(args.config) as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(values)
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for flag in ("lr", "max_epochs", "patience", "seed"):
        override = getattr(args, flag)
        if override is not None:
            values[flag] = override
    return TrainConfig(**values)


def _cmd_train(args) -> int:
    train_pairs = load_split(args.data, "train")
    val_pairs = load_split(args.data, "val")
    config = _train_config(args)
    if args.init_model:
        model = _load_model(args.init_model)
    else:
        model = DockingModel(
            ModelConfig(hidden_dim=args.hidden_dim, layers=args.layers, heads=args.heads),
            seed=config.seed)
    result = train(model, train_pairs, val_pairs, config,
                   checkpoint_path=args.out_model, loss_csv_path=args.loss_csv)
    print(f"epochs {result.epochs_run}, steps {result.steps}, "
          f"best validation RMSD {result.best_val:.4f}")
    if result.skipped_pairs:
        print(f"skipped (no contacts): {', '.join(result.skipped_pairs)}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = _load_model(args.model)
    pairs = load_split(args.data, args.split)
    report = evaluate(model, pairs, seed=args.seed)
    if args.out_csv:
        directory = os.path.dirname(os.path.abspath(args.out_csv))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
        os.close(fd)
        try:
            write_eval_csv(report, tmp)
            os.replace(tmp, args.out_csv)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    for key, value in sorted(report.summary().items()):
        print(f"{key}: {value:.4f}")
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    ids = generate_dataset(args.out, args.pairs, seed=args.seed,
                           val_fraction=args.val_fraction,
                           test_fraction=args.test_fraction,
                           min_residues=args.min_residues,
                           max_residues=args.max_residues)
    print(f"wrote {len(ids)} pairs under {args.out}")
    return EXIT_OK


def _cmd_features(args) -> int:
    residues = parse_pdb_file(args.input, _chain_set(args.chains))
    graph = build_graph(residues, args.neighbors)
    payload = {
        "nodes": [
            {
                "index": i,
                "type": int(graph.types[i]),
                "x": graph.X[:, i].tolist(),
                "rho": graph.rho[i].tolist(),
            }
            for i in range(graph.n_nodes)
        ],
        "edges": [
            {
                "src": int(graph.src[e]),
                "dst": int(graph.dst[e]),
                "f": graph.edge_feats[:, e].tolist(),
            }
            for e in range(graph.n_edges)
        ],
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_check_equivariance(args) -> int:
    if args.model:
        model = _load_model(args.model)
    else:
        model = DockingModel(ModelConfig(hidden_dim=16, layers=3, heads=8), seed=args.seed)
    rng = np.random.default_rng(args.seed)
    from .synthetic import generate_pair

    pair = generate_pair(rng, "check", 20, 30)
    g1 = build_graph(pair.ligand, model.config.neighbors)
    g2 = build_graph(pair.receptor, model.config.neighbors)
    checks = {
        "pairwise equivariance": check_pairwise_equivariance(model, g1, g2, seed=args.seed,
                                                             trials=args.trials),
        "transform covariance": check_transform_covariance(model, g1, g2, seed=args.seed,
                                                           trials=args.trials),
        "complex invariance": check_complex_invariance(model, g1, g2, seed=args.seed,
                                                       trials=args.trials),
        "role-swap consistency": check_role_swap(model, g1, g2),
    }
    failed = False
    for name, deviation in checks.items():
        status = "ok" if deviation <= _EQUIVARIANCE_LIMIT else "FAIL"
        print(f"{name}: max deviation {deviation:.3e} [{status}]")
        failed = failed or deviation > _EQUIVARIANCE_LIMIT
    return EXIT_NUMERICAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="rigiddock",
                     description="Rigid protein-protein docking from backbone geometry.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("dock", help="predict a rigid motion docking a ligand onto a receptor")
    p.add_argument("--ligand", required=True)
    p.add_argument("--receptor", required=True)
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--out-pdb", help="write the moved ligand here")
    p.add_argument("--out-transform", help="write the rigid motion JSON here")
    p.add_argument("--chains-ligand", help="comma-separated chain IDs to keep")
    p.add_argument("--chains-receptor", help="comma-separated chain IDs to keep")
    p.add_argument("--copy-full-atoms", action="store_true",
                   help="move every original ligand atom instead of writing CA only")
    p.set_defaults(func=_cmd_dock)

    p = sub.add_parser("train", help="train a model on a generated dataset directory")
    p.add_argument("--data", required=True, help="dataset root with pairs/ and splits.json")
    p.add_argument("--out-model", required=True)
    p.add_argument("--loss-csv", help="per-step loss breakdown")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--init-model", help="start from this checkpoint instead of fresh weights")
    p.add_argument("--fine-tune", action="store_true",
                   help="use the low-rate, long-patience preset")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden-dim", type=int, default=ModelConfig.hidden_dim)
    p.add_argument("--layers", type=int, default=ModelConfig.layers)
    p.add_argument("--heads", type=int, default=ModelConfig.heads)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a model on one split of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out-csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic docking dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--test-fraction", type=float, default=0.15)
    p.add_argument("--min-residues", type=int, default=30)
    p.add_argument("--max-residues", type=int, default=80)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("features", help="dump graph node and edge features as JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="default: stdout")
    p.add_argument("--chains", help="comma-separated chain IDs to keep")
    p.add_argument("--neighbors", type=int, default=DEFAULT_K)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("check-equivariance",
                       help="verify the model's structural guarantees numerically")
    p.add_argument("--model", help="checkpoint to check (default: fresh random weights)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=_cmd_check_equivariance)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("RIGIDDOCK_LOG_LEVEL", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PdbParseError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (DegenerateKeypointsError, GenerationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
