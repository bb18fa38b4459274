"""embexport CLI: make-checkpoint / export / reference."""
import argparse
import sys

from .checkpoint import (CheckpointConfig, DualEncoder, load_checkpoint,
                         save_checkpoint)
from .export import ExportError, export_archive, reference_zero_shot
from .lexicon_file import LexiconError, load_lexicon


def cmd_make_checkpoint(args):
    model = DualEncoder(CheckpointConfig(
        feature_dim=args.feature_dim, joint_dim=args.joint_dim,
        hidden_dim=args.hidden_dim, seed=args.seed))
    save_checkpoint(model, args.out)
    print(f"wrote checkpoint {args.out} "
          f"(D={args.feature_dim}, P={args.joint_dim}, seed={args.seed})")
    return 0


def cmd_export(args):
    model = load_checkpoint(args.checkpoint)
    lexicon = load_lexicon(args.lexicon)
    manifest = export_archive(model, args.dataset, lexicon, args.out,
                              dataset_name=args.name,
                              metric_kind=args.metric)
    print(f"exported {manifest['dataset_name']}: "
          f"{manifest['n_train']} train / {manifest['n_test']} test, "
          f"{len(manifest['variant_table'])} text variants -> {args.out}")
    return 0


def cmd_reference(args):
    model = load_checkpoint(args.checkpoint)
    preds = reference_zero_shot(model, args.archive)
    preds.astype("<u4").tofile(args.out)
    print(f"wrote {len(preds)} reference predictions to {args.out}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="embexport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-checkpoint",
                       help="create a seeded dual-encoder checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--joint-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_checkpoint)

    p = sub.add_parser("export", help="encode a dataset + lexicon into an archive")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True,
                   help="directory with train/ and test/ splits")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--metric", default="accuracy")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("reference",
                       help="recompute zero-shot predictions for an archive")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reference)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, LexiconError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
