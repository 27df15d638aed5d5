"""Experiment runner CLI.

Subcommands: run (one experiment, all folds), ablate (the seven flag
combinations), gen-data (write a synthetic CSV), cluster-debug (cluster a
CSV of points), pool-dump (write one round's center pool to CSV).

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import data as data_mod
from .config import ConfigError, ExperimentConfig
from .clusterpool import assemble_global_pool, compute_local_clusters
from .data import MODALITIES, PartitionSpec, SyntheticSpec
from .federation import (
    RoundMetrics,
    ServerState,
    TrainSettings,
    make_clients,
    run_round,
)
from .finch import finch_partition
from .losses import LossWeights
from .model import init_model, save_checkpoint
from .numkit import CosineSchedule

ROUNDS_HEADER = "fold,round,wall_ms,test_loss,accuracy,precision_w,recall_macro,f1_w,auc_w"
SUMMARY_HEADER = "method,alpha,beta,maa,ctr,mc,metric,mean,sd"
SUMMARY_METRICS = ("test_loss", "accuracy", "precision_w", "recall_macro", "f1_w", "auc_w")

# Ablation rows in their fixed reporting order.
ABLATION_COMBOS = (
    ("maa", (True, False, False)),
    ("ctr", (False, True, False)),
    ("mc", (False, False, True)),
    ("ctr_mc", (False, True, True)),
    ("maa_mc", (True, False, True)),
    ("maa_ctr", (True, True, False)),
    ("maa_ctr_mc", (True, True, True)),
)


def load_dataset(cfg: ExperimentConfig) -> list[data_mod.Instance]:
    if cfg.data_csv:
        return data_mod.load_csv(cfg.data_csv)
    seed = cfg.seed if cfg.data_seed < 0 else cfg.data_seed
    spec = SyntheticSpec(
        class_counts=tuple(cfg.class_counts),
        feature_dim=cfg.feature_dim,
        separation=cfg.separation,
        noise=cfg.noise,
        coupling=cfg.coupling,
        seed=seed,
    )
    return data_mod.generate_synthetic(spec)


def _metrics_row(m: RoundMetrics) -> str:
    values = [
        str(m.fold),
        str(m.round),
        str(m.wall_ms),
        repr(m.test_loss),
        repr(m.accuracy),
        repr(m.precision_weighted),
        repr(m.recall_macro),
        repr(m.f1_weighted),
        repr(m.auc_weighted),
    ]
    return ",".join(values)


def _final_metric_values(finals: list[RoundMetrics]) -> dict[str, list[float]]:
    return {
        "test_loss": [m.test_loss for m in finals],
        "accuracy": [m.accuracy for m in finals],
        "precision_w": [m.precision_weighted for m in finals],
        "recall_macro": [m.recall_macro for m in finals],
        "f1_w": [m.f1_weighted for m in finals],
        "auc_w": [m.auc_weighted for m in finals],
    }


def summary_rows(cfg: ExperimentConfig, finals: list[RoundMetrics]) -> list[str]:
    values = _final_metric_values(finals)
    rows = []
    flags = (int(cfg.maa), int(cfg.ctr), int(cfg.mc))
    for metric in SUMMARY_METRICS:
        arr = np.array(values[metric])
        rows.append(
            f"{cfg.method},{cfg.alpha},{cfg.beta},{flags[0]},{flags[1]},{flags[2]},"
            f"{metric},{arr.mean()!r},{arr.std()!r}"
        )
    return rows


def run_experiment(cfg: ExperimentConfig, log=print) -> list[RoundMetrics]:
    """All folds of one configuration; streams rounds.csv, writes summary.csv.

    Returns the final-round metrics of every fold.
    """
    os.makedirs(cfg.outdir, exist_ok=True)
    with open(os.path.join(cfg.outdir, "config.txt"), "w") as fh:
        fh.write(config_mod.echo(cfg))
    dataset = load_dataset(cfg)
    n_classes = data_mod.num_classes(dataset)
    finals: list[RoundMetrics] = []
    rounds_path = os.path.join(cfg.outdir, "rounds.csv")
    with open(rounds_path, "w") as rounds_file:
        rounds_file.write(ROUNDS_HEADER + "\n")
        rounds_file.flush()
        for fold in range(cfg.folds):
            metrics = _run_fold(cfg, dataset, n_classes, fold, rounds_file, log)
            finals.append(metrics[-1])
    with open(os.path.join(cfg.outdir, "summary.csv"), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for row in summary_rows(cfg, finals):
            fh.write(row + "\n")
    return finals


def _run_fold(cfg, dataset, n_classes, fold, rounds_file, log) -> list[RoundMetrics]:
    train, test = data_mod.split_train_test(
        dataset, cfg.seed, fold=fold, folds=cfg.folds, mode=cfg.split_mode
    )
    if cfg.test_mix:
        test = data_mod.apply_test_modality_mix(test, (cfg.seed, fold))
    spec = PartitionSpec(
        n_clients=cfg.clients,
        alpha1=cfg.alpha,
        alpha2=cfg.alpha,
        beta1=cfg.beta,
        beta2=cfg.beta,
    )
    shards = data_mod.partition_clients(train, spec, (cfg.seed, fold))
    clients = make_clients(shards)
    model = init_model(
        input_dim=_input_dim(dataset),
        n_classes=n_classes,
        embed_dim=cfg.embed_dim,
        enc_hidden=cfg.enc_hidden,
        clf_hidden=cfg.clf_hidden,
        seed=(cfg.seed, fold, 0x0D),
    )
    server = ServerState(
        model=model,
        schedule=CosineSchedule(cfg.lr, cfg.rounds, cfg.min_lr),
        method=cfg.method,
        use_maa=cfg.maa,
        use_ctr=cfg.ctr,
        use_mc=cfg.mc,
    )
    settings = TrainSettings(
        method=cfg.method,
        use_ctr=cfg.ctr,
        use_mc=cfg.mc,
        local_epochs=cfg.local_epochs,
        batch_size=cfg.batch_size,
        mu_prox=cfg.mu_prox,
        weights=LossWeights(cfg.lambda1, cfg.lambda2, cfg.tau),
    )
    out: list[RoundMetrics] = []
    for _ in range(cfg.rounds):
        metrics = run_round(
            server,
            clients,
            test,
            fold=fold,
            workers=cfg.workers,
            wall_clock=cfg.wall_clock,
            settings=settings,
            seed=cfg.seed,
        )
        rounds_file.write(_metrics_row(metrics) + "\n")
        rounds_file.flush()
        out.append(metrics)
        if cfg.checkpoint:
            ckpt_dir = os.path.join(cfg.outdir, "checkpoints")
            os.makedirs(ckpt_dir, exist_ok=True)
            save_checkpoint(
                server.model, os.path.join(ckpt_dir, f"fold{fold}_round{metrics.round}.npz")
            )
        if cfg.dump_pools and server.last_pool is not None:
            pool_dir = os.path.join(cfg.outdir, "pools")
            os.makedirs(pool_dir, exist_ok=True)
            _write_pool_csv(
                server.last_pool,
                os.path.join(pool_dir, f"fold{fold}_round{metrics.round}.csv"),
            )
    log(
        f"[{cfg.method}] fold {fold}: accuracy={out[-1].accuracy:.4f} "
        f"f1_w={out[-1].f1_weighted:.4f} loss={out[-1].test_loss:.4f}"
    )
    return out


def _input_dim(dataset) -> int:
    for inst in dataset:
        for modality in MODALITIES:
            if inst.has(modality):
                return len(inst.vector(modality))
    raise ConfigError("dataset has no feature vectors")


def run_ablation(cfg: ExperimentConfig, log=print) -> list[str]:
    """The seven component on/off combinations, one summary block each."""
    if cfg.method != "clusmfl":
        raise ConfigError("ablation requires method = clusmfl")
    os.makedirs(cfg.outdir, exist_ok=True)
    all_rows: list[str] = []
    for name, (maa, ctr, mc) in ABLATION_COMBOS:
        sub = replace(
            cfg, maa=maa, ctr=ctr, mc=mc, outdir=os.path.join(cfg.outdir, "ablate", name)
        )
        log(f"== ablation {name} ==")
        finals = run_experiment(sub, log=log)
        all_rows.extend(summary_rows(sub, finals))
    with open(os.path.join(cfg.outdir, "summary.csv"), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for row in all_rows:
            fh.write(row + "\n")
    return all_rows


def _write_pool_csv(pool, path) -> None:
    dim = 0
    for entry in pool.entries.values():
        dim = entry.centers.shape[1]
        break
    header = ["modality", "label", "client", "size"] + [f"c_{i}" for i in range(dim)]
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for modality in MODALITIES:
            for label in range(pool.n_classes):
                entry = pool.get(modality, label)
                if entry is None:
                    continue
                for center, size, owner in zip(entry.centers, entry.sizes, entry.client_ids):
                    writer.writerow(
                        [modality, label, int(owner), int(size)]
                        + [repr(float(v)) for v in center]
                    )


def cmd_gen_data(cfg: ExperimentConfig, out_path: str) -> None:
    dataset = load_dataset(cfg)
    data_mod.write_csv(dataset, out_path)
    print(f"wrote {len(dataset)} instances to {out_path}")


def cmd_cluster_debug(points_csv: str, level: int) -> None:
    points = np.loadtxt(points_csv, delimiter=",", ndmin=2)
    result = finch_partition(points, level=level)
    for i, cluster in enumerate(result.assignments):
        print(f"{i},{int(cluster)}")
    sizes = ",".join(str(int(s)) for s in result.sizes)
    print(f"# clusters={len(result.sizes)} sizes={sizes} levels={len(result.hierarchy)}")


def cmd_pool_dump(cfg: ExperimentConfig, out_path: str) -> None:
    """Build fold-0 clients and dump the first-round center pool to CSV."""
    dataset = load_dataset(cfg)
    n_classes = data_mod.num_classes(dataset)
    train, _ = data_mod.split_train_test(
        dataset, cfg.seed, fold=0, folds=cfg.folds, mode=cfg.split_mode
    )
    spec = PartitionSpec(cfg.clients, cfg.alpha, cfg.alpha, cfg.beta, cfg.beta)
    shards = data_mod.partition_clients(train, spec, (cfg.seed, 0))
    model = init_model(
        input_dim=_input_dim(dataset),
        n_classes=n_classes,
        embed_dim=cfg.embed_dim,
        enc_hidden=cfg.enc_hidden,
        clf_hidden=cfg.clf_hidden,
        seed=(cfg.seed, 0, 0x0D),
    )
    locals_ = [
        compute_local_clusters(model, shard, n_classes, level=cfg.finch_level)
        for shard in shards
    ]
    pool = assemble_global_pool(locals_, n_classes)
    _write_pool_csv(pool, out_path)
    total = sum(len(e.sizes) for e in pool.entries.values())
    print(f"wrote {total} centers to {out_path}")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--method", choices=("clusmfl", "fedavg", "fedprox"))
    for flag in ("maa", "ctr", "mc", "test-mix", "checkpoint", "dump-pools", "wall-clock"):
        parser.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    for flag in (
        "clients", "rounds", "local-epochs", "folds", "embed-dim", "batch-size",
        "feature-dim", "data-seed", "finch-level", "workers",
    ):
        parser.add_argument(f"--{flag}", type=int)
    for flag in (
        "lr", "min-lr", "tau", "lambda1", "lambda2", "mu-prox", "alpha", "beta",
        "separation", "noise", "coupling",
    ):
        parser.add_argument(f"--{flag}", type=float)
    parser.add_argument("--enc-hidden", type=_int_tuple)
    parser.add_argument("--clf-hidden", type=_int_tuple)
    parser.add_argument("--class-counts", type=_int_tuple)
    parser.add_argument("--data-csv")
    parser.add_argument("--split-mode", choices=("cv", "literal"))
    parser.add_argument("--outdir")


def _int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip() != "")


def _resolve_from_args(args: argparse.Namespace) -> ExperimentConfig:
    file_values = config_mod.load_config_file(args.config) if args.config else None
    overrides = {}
    for key, value in vars(args).items():
        name = key.replace("-", "_")
        if name in ("config", "command", "out", "points", "level"):
            continue
        overrides[name] = value
    return config_mod.resolve(file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusmfl",
        description="Multimodal federated learning simulator under modality incompleteness",
        exit_on_error=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment over all folds", exit_on_error=False)
    _add_config_flags(p_run)

    p_ablate = sub.add_parser("ablate", help="run the 7 component combinations", exit_on_error=False)
    _add_config_flags(p_ablate)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset CSV", exit_on_error=False)
    _add_config_flags(p_gen)
    p_gen.add_argument("--out", required=True, help="output CSV path")

    p_cluster = sub.add_parser("cluster-debug", help="cluster a CSV of points", exit_on_error=False)
    p_cluster.add_argument("--points", required=True, help="headerless CSV of point coordinates")
    p_cluster.add_argument("--level", type=int, default=0)

    p_pool = sub.add_parser("pool-dump", help="dump a round-0 center pool to CSV", exit_on_error=False)
    _add_config_flags(p_pool)
    p_pool.add_argument("--out", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    except argparse.ArgumentError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # argparse --help or hard parse failure
        code = err.code if isinstance(err.code, int) else 2
        return 0 if code == 0 else 1

    try:
        if args.command == "cluster-debug":
            cmd_cluster_debug(args.points, args.level)
            return 0
        cfg = _resolve_from_args(args)
        if args.command == "run":
            run_experiment(cfg)
        elif args.command == "ablate":
            run_ablation(cfg)
        elif args.command == "gen-data":
            cmd_gen_data(cfg, args.out)
        elif args.command == "pool-dump":
            cmd_pool_dump(cfg, args.out)
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
