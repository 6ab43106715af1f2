"""Command-line entry points: gen-world, train, eval, cluster.

Exit codes: 0 on success, 1 for configuration problems (bad flags, bad
files, impossible protocols), 2 for numeric failures during a run.
"""

import argparse
import dataclasses
import sys

import numpy as np

from .clustering import dbscan
from .encoder import encode_batch, load_checkpoint
from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    InvalidConfigError,
    NumericRuntimeError,
)
from .evaluation import (
    EvalProtocol,
    evaluate,
    write_ap_csv,
    write_metrics_report,
)
from .pipeline import (
    PipelineConfig,
    eval_records,
    parse_config_file,
    run_training,
    write_reports_csv,
)
from .world import (
    WorldConfig,
    export_csv,
    generate_world,
    read_dataset,
    write_dataset,
)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as config errors."""

    def error(self, message):
        raise InvalidConfigError(message)


def _build_parser():
    parser = _Parser(prog="ccreid", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = commands.add_parser("gen-world",
                              help="generate a synthetic dataset file")
    gen.add_argument("--out", required=True, help="output dataset path")
    gen.add_argument("--identities", type=int, default=50)
    gen.add_argument("--clothes", type=int, default=4,
                     help="clothing groups per identity")
    gen.add_argument("--samples", type=int, default=6,
                     help="samples per clothing group")
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--cameras", type=int, default=3)
    gen.add_argument("--identity-scale", type=float, default=1.0)
    gen.add_argument("--clothing-scale", type=float, default=0.5)
    gen.add_argument("--noise-scale", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--csv", default=None, help="also export a CSV copy here")
    gen.set_defaults(func=_cmd_gen_world)

    train = commands.add_parser("train",
                                help="train an encoder on a dataset's train split")
    train.add_argument("--data", required=True, help="dataset file from gen-world")
    train.add_argument("--config", default=None,
                       help="key=value config file; defaults used when omitted")
    train.add_argument("--epochs", type=int, default=None,
                       help="override the configured epoch count")
    train.add_argument("--checkpoint", default=None, help="write final model here")
    train.add_argument("--checkpoint-every", type=int, default=0,
                       help="also checkpoint every N epochs")
    train.add_argument("--reports", default=None, help="write per-epoch CSV here")
    train.set_defaults(func=_cmd_train)

    ev = commands.add_parser("eval",
                             help="score a trained encoder on the query/gallery split")
    ev.add_argument("--data", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--setting", default="clothing_change",
                    choices=("clothing_change", "same_clothing", "any"))
    ev.add_argument("--shot", default="all", choices=("all", "single"))
    ev.add_argument("--include-same-camera", action="store_true",
                    help="keep same-camera matches instead of junking them")
    ev.add_argument("--ranks", default="1,5,10,20",
                    help="comma-separated CMC ranks")
    ev.add_argument("--protocol-seed", type=int, default=0)
    ev.add_argument("--report", default=None, help="write metrics file here")
    ev.add_argument("--ap-csv", default=None, help="write per-query AP CSV here")
    ev.set_defaults(func=_cmd_eval)

    cluster = commands.add_parser("cluster",
                                  help="cluster the train split with a trained encoder")
    cluster.add_argument("--data", required=True)
    cluster.add_argument("--checkpoint", required=True)
    cluster.add_argument("--eps", type=float, default=0.4)
    cluster.add_argument("--min-samples", type=int, default=4)
    cluster.add_argument("--out", default=None,
                         help="write sample_index,identity_id,label CSV here")
    cluster.set_defaults(func=_cmd_cluster)

    return parser


def _load_model(path, world):
    params, optimizer = load_checkpoint(path)
    if params.widths[0] != world.config.dim:
        raise DimensionMismatchError(
            f"checkpoint expects {params.widths[0]}-d inputs, "
            f"dataset provides {world.config.dim}-d"
        )
    return params, optimizer


def _cmd_gen_world(args):
    config = WorldConfig(
        num_identities=args.identities,
        clothes_per_identity=args.clothes,
        samples_per_group=args.samples,
        dim=args.dim,
        num_cameras=args.cameras,
        identity_scale=args.identity_scale,
        clothing_scale=args.clothing_scale,
        noise_scale=args.noise_scale,
        seed=args.seed,
    )
    world = generate_world(config)
    write_dataset(world, args.out)
    if args.csv:
        export_csv(world, args.csv)
    print(
        f"wrote {len(world.samples)} samples "
        f"({world.train_indices.size} train, {world.query_indices.size} query, "
        f"{world.gallery_indices.size} gallery) to {args.out}"
    )
    return 0


def _cmd_train(args):
    world = read_dataset(args.data)
    config = parse_config_file(args.config) if args.config else PipelineConfig()
    if args.epochs is not None:
        config = dataclasses.replace(config, max_epochs=args.epochs)
    result = run_training(
        config,
        world,
        checkpoint_path=args.checkpoint,
        checkpoint_every=args.checkpoint_every,
    )
    if args.reports:
        write_reports_csv(args.reports, result.reports)
    last = result.reports[-1]
    print(
        f"epoch {last.epoch}: clusters={last.num_clusters} "
        f"noise={last.num_noise} contrastive={last.mean_contrastive:.6f} "
        f"consistency={last.mean_consistency:.6f}"
    )
    if args.checkpoint:
        print(f"checkpoint written to {args.checkpoint}")
    return 0


def _cmd_eval(args):
    world = read_dataset(args.data)
    params, _ = _load_model(args.checkpoint, world)
    try:
        ranks = tuple(int(r) for r in args.ranks.split(",") if r.strip())
    except ValueError as err:
        raise InvalidConfigError(f"--ranks must be integers, got {args.ranks!r}") from err
    protocol = EvalProtocol(
        setting=args.setting,
        shot=args.shot,
        exclude_same_camera=not args.include_same_camera,
        ranks=ranks,
        seed=args.protocol_seed,
    )
    result = evaluate(eval_records(params, world), protocol)
    for key, value in result.metrics.items():
        print(f"{key}={value:.6f}")
    if args.report:
        write_metrics_report(args.report, result)
    if args.ap_csv:
        write_ap_csv(args.ap_csv, result)
    return 0


def _cmd_cluster(args):
    world = read_dataset(args.data)
    params, _ = _load_model(args.checkpoint, world)
    indices = world.train_indices
    if indices.size == 0:
        raise InvalidConfigError("dataset has no train samples to cluster")
    features = encode_batch(
        params, np.stack([world.samples[i].raw for i in indices])
    )
    labeling = dbscan(features, args.eps, args.min_samples)
    print(f"clusters={labeling.num_clusters} noise={labeling.num_noise}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write("sample_index,identity_id,label\n")
            for row, index in enumerate(indices):
                identity = world.samples[index].identity_id
                handle.write(f"{index},{identity},{labeling.labels[row]}\n")
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericRuntimeError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
