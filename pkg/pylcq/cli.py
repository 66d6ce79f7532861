"""
Command-line interface: ``pylcq {gen,quantize,eval,gradcheck,inspect,oracle}``.

Exit codes: 0 on success, 1 on a numerical failure, 2 on bad usage, a
missing file, an invalid configuration or a malformed input file.
"""

import argparse
import logging
import os
import sys

import pandas as pd

from pylcq.classes.config import QuantConfig, V2_INITS, load_config, parse_group_size
from pylcq.classes.errors import ConfigError, FormatError, LCQError, ShapeError
from pylcq.modules import block, storage, trainer
from pylcq.utils import gradient_checker, oracle_fuzzer, scale_stats_dumper

logger = logging.getLogger("pylcq")

# Flag destination -> QuantConfig field
CONFIG_FLAGS = {
    "bits": "bits",
    "group_size": "group_size",
    "rank": "rank",
    "ng": "groups_per_subset",
    "epochs": "epochs",
    "lr": "lr",
    "batch": "batch_size",
    "dq_bits_s": "dq_bits_s",
    "dq_bits_v": "dq_bits_v",
    "dq_group": "dq_group",
    "seed": "seed",
    "v2_init": "v2_init",
    "weight_decay": "weight_decay",
}


def group_size_arg(text):
    try:
        return parse_group_size(text)
    except ConfigError as error:
        raise argparse.ArgumentTypeError(str(error))


def build_parser():
    parser = argparse.ArgumentParser(prog="pylcq", description="Low-rank codebook quantization of transformer blocks.",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("-q", "--quiet", action="store_true", help="Log warnings only")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Emit a synthetic model and calibration set")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--blocks", type=int, default=block.DEFAULT_SCALE["blocks"])
    gen.add_argument("--dim", type=int, default=block.DEFAULT_SCALE["dim"])
    gen.add_argument("--ff-dim", type=int, default=block.DEFAULT_SCALE["ff_dim"])
    gen.add_argument("--heads", type=int, default=block.DEFAULT_SCALE["heads"])
    gen.add_argument("--samples", type=int, default=block.DEFAULT_SCALE["samples"])
    gen.add_argument("--seq-len", type=int, default=block.DEFAULT_SCALE["seq_len"])
    gen.add_argument("--out", nargs=2, required=True, metavar=("MODEL", "CALIB"), help="Output LCQT files")

    quantize = commands.add_parser("quantize", help="Quantize a model block by block")
    quantize.add_argument("--model", required=True)
    quantize.add_argument("--calib", required=True)
    quantize.add_argument("--config", help="INI file with a [quantize] section; flags override it")
    quantize.add_argument("--bits", type=int)
    quantize.add_argument("--group-size", type=group_size_arg, help="Integer or 'channel'")
    quantize.add_argument("--rank", type=int)
    quantize.add_argument("--ng", type=int, help="Groups per subset")
    quantize.add_argument("--epochs", type=int)
    quantize.add_argument("--lr", type=float)
    quantize.add_argument("--batch", type=int)
    quantize.add_argument("--weight-decay", type=float)
    quantize.add_argument("--dq-bits-s", type=int)
    quantize.add_argument("--dq-bits-v", type=int)
    quantize.add_argument("--dq-group", type=int)
    quantize.add_argument("--seed", type=int)
    quantize.add_argument("--v2-init", choices=V2_INITS)
    quantize.add_argument("--fix-rank1", action="store_true", default=None, help="Freeze S1, V1 and the offsets")
    quantize.add_argument("--out", required=True, help="Output LCQ1 artifact")
    quantize.add_argument("--trace", help="Loss trace CSV")

    evaluate = commands.add_parser(
        "eval", help="Print initial and final loss per block as CSV",
        description="The initial loss replays the initialization of quantize. LCQ1 files do not record the seed "
                    "or the V2 initialization, so pass the --seed and --v2-init the artifact was quantized with.")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--calib", required=True)
    evaluate.add_argument("--artifact", required=True)
    evaluate.add_argument("--seed", type=int, default=0,
                          help="Seed given to quantize (not stored in the artifact, default 0)")
    evaluate.add_argument("--v2-init", choices=V2_INITS, default="normal", help="V2 initialization given to quantize")

    gradcheck = commands.add_parser("gradcheck", help="Run the finite-difference suite")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck.add_argument("--points", type=int, default=100)

    inspect = commands.add_parser("inspect", help="Describe an artifact")
    inspect.add_argument("--artifact", required=True)
    inspect.add_argument("--stats", help="Write scaling-vector statistics to this CSV")

    oracle = commands.add_parser("oracle", help="Fuzz the quantizer against the exhaustive oracle")
    oracle.add_argument("--cases", type=int, default=100000)
    oracle.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args):
    """QuantConfig from an optional INI file overridden by explicit flags."""
    values = load_config(args.config) if args.config else {}
    for flag, name in CONFIG_FLAGS.items():
        if getattr(args, flag) is not None:
            values[name] = getattr(args, flag)
    if args.fix_rank1:
        values["fix_rank1"] = True
    try:
        return QuantConfig(**values)
    except TypeError as error:
        raise ConfigError(str(error))


def run_gen(args):
    calib, stack = block.gen_calibration(seed=args.seed, samples=args.samples, seq_len=args.seq_len, dim=args.dim,
                                         ff_dim=args.ff_dim, heads=args.heads, blocks=args.blocks)
    model_path, calib_path = args.out
    block.save_model(model_path, stack)
    block.save_calibration(calib_path, calib)
    return 0


def run_quantize(args):
    config = config_from_args(args)
    stack = block.load_model(args.model)
    calib = block.load_calibration(args.calib)
    report = trainer.quantize_model(stack, calib, config)
    storage.write_artifact(args.out, report.artifact)
    if args.trace:
        report.trace.to_csv(args.trace, index=False)
    report.losses.to_csv(sys.stdout, index=False)
    return 0


def run_eval(args):
    stack = block.load_model(args.model)
    calib = block.load_calibration(args.calib)
    artifact = storage.read_artifact(args.artifact)
    losses = trainer.evaluate_artifact(stack, calib, artifact, seed=args.seed, v2_init=args.v2_init)
    losses.to_csv(sys.stdout, index=False)
    return 0


def run_gradcheck(args):
    results = gradient_checker.run_checks(args.seed, args.points, args.tolerance)
    results.to_csv(sys.stdout, index=False)
    failed = results[~results["passed"]]
    if len(failed):
        logger.error("%d of %d gradient checks exceed tolerance %g", len(failed), len(results), args.tolerance)
        return 1
    if len(results[results["check"].str.contains(r"\[")]) < args.points:
        logger.error("found fewer than %d STE-safe coordinates", args.points)
        return 1
    return 0


def run_inspect(args):
    artifact = storage.read_artifact(args.artifact)
    config = artifact.config
    print("bits,group_size,rank,groups_per_subset,n_q,dq_bits_s,dq_bits_v,dq_group,implicit_v,layers")
    print(",".join(str(item) for item in (config.bits, "channel" if config.group_size < 0 else config.group_size,
                                          config.rank, config.groups_per_subset, config.n_q, config.dq_bits_s,
                                          config.dq_bits_v, config.dq_group, config.implicit_v, len(artifact))))
    if len(artifact):
        shapes = [shape for _, shape in artifact.shapes()]
        print("retention_rate,{:.4f}".format(storage.retention_rate(config, shapes)))
    rows = [[name, shape[0], shape[1], artifact.layer(name).n_subsets, storage.layer_nbytes(config, name, shape)]
            for name, shape in artifact.shapes()]
    table = pd.DataFrame(rows, columns=["layer", "rows", "cols", "subsets", "bytes"])
    table.to_csv(sys.stdout, index=False)
    expected = storage.artifact_nbytes(config, artifact.shapes())
    actual = os.path.getsize(args.artifact)
    print("file_bytes,{}\naccounted_bytes,{}".format(actual, expected))
    if args.stats:
        scale_stats_dumper.dump_scale_stats(artifact, args.stats)
    return 0


def run_oracle(args):
    mismatches = oracle_fuzzer.fuzz(args.cases, args.seed)
    if mismatches:
        logger.error("first mismatch: %s", mismatches[0])
        return 1
    print("cases,mismatches\n{},0".format(args.cases))
    return 0


COMMANDS = {
    "gen": run_gen,
    "quantize": run_quantize,
    "eval": run_eval,
    "gradcheck": run_gradcheck,
    "inspect": run_inspect,
    "oracle": run_oracle,
}


def main(argv=None):
    """
    Entry point of the ``pylcq`` command.

    Returns
    -------
    code : int
        Process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return error.code
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ConfigError, FormatError, ShapeError) as error:
        print("pylcq {}: {}".format(args.command, error), file=sys.stderr)
        return 2
    except LCQError as error:
        print("pylcq {}: {}".format(args.command, error), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
