#!/usr/bin/env python3
"""
cityscope - Command Line Interface

Commands:
    synth     Generate a hue-coded synthetic dataset
    scan      Catalog a <root>/<ClassName>/<images> tree into a manifest
    split     Assign stratified train/val/test splits
    train     Train the vanilla CNN or the frozen-backbone VGG16 head
    finetune  Two-stage VGG16 fine-tuning
    evaluate  Score a checkpoint on one split
    predict   Rank the classes for a single image
    plot      Accuracy and loss curves from a history file
    compare   Side-by-side table of finished runs

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import import_pretrained_weights, load_checkpoint, save_checkpoint
from .config import apply_overrides, load_train_config
from .dataset_pipeline import (DEFAULT_RATIOS, SPLITS, TEST, PreprocessConfig,
                               load_manifest, save_manifest, scan_dataset,
                               split_dataset)
from .errors import CityscopeError, MissingFileError
from .evaluation import ClassificationReport, compare_runs, evaluate_split
from .logging_config import ActivityLogger, refresh_console_level, setup_logging
from .model_zoo import (build_vanilla_cnn, build_vgg16_transfer, count_parameters,
                        full_mask, init_parameters)
from .reports import PLOT_FORMATS, plot_history, predict_image
from .synthetic import CITY_NAMES, generate_synthetic_dataset
from .training_engine import (TrainConfig, TrainingHistory, fine_tune_two_stage,
                              fit, unfreeze)

logger = setup_logging('cli')

CHECKPOINT_FILE = 'checkpoint.ckpt'
HISTORY_FILE = 'history.jsonl'
TEST_REPORT_FILE = 'report_test.json'


def _ratios(text):
    try:
        values = tuple(float(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got '{text}'")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three ratios (train,val,test), got '{text}'")
    return values


def _names(text):
    names = [part.strip() for part in text.split(',') if part.strip()]
    if not names:
        raise argparse.ArgumentTypeError("expected at least one name")
    return names


def _preprocess(args):
    return PreprocessConfig(args.size, args.size, args.scaling)


def _train_config(path, args, base=None):
    config = load_train_config(path, base)
    return apply_overrides(
        config,
        seed=args.seed,
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=getattr(args, 'lr', None),
        workers=args.workers,
    )


def _load_split_manifest(path):
    manifest = load_manifest(path)
    if not manifest.is_split:
        logger.warning(f"{path} has no split assignments; run 'split' first")
    return manifest


def _vgg16_with_weights(args, preprocess, num_classes, seed):
    arch, mask = build_vgg16_transfer(preprocess.input_shape, num_classes)
    params = init_parameters(arch, seed)
    if args.weights:
        params, report = import_pretrained_weights(args.weights, arch, params, strict=args.strict_weights)
        print(f"Weights: {report.summary()}")
    else:
        logger.warning("no --weights bundle given; the VGG16 backbone starts from random values")
    return arch, mask, params


def _finish_run(args, manifest, arch, result, mask, preprocess, config, activity):
    out_dir = Path(args.out_dir)
    history = result.history
    save_checkpoint(out_dir / CHECKPOINT_FILE, arch, result.best_params, mask, result.optimizer_state,
                    manifest.vocabulary, preprocess, label=history.label)
    history.save(out_dir / HISTORY_FILE)
    best = history.metrics_for(history.best_epoch)
    print(f"{history.label}: {len(history.epochs)} epochs ({history.stop_reason}), best epoch "
          f"{history.best_epoch} val_loss {best.val_loss:.4f} val_acc {best.val_accuracy * 100:.1f}%")
    activity.record('best_epoch', history.best_epoch)
    activity.record('val_accuracy', f"{best.val_accuracy:.4f}")
    if manifest.split_records(TEST):
        report = evaluate_split(arch, result.best_params, manifest, TEST, config.batch_size, preprocess,
                                config.workers, label=history.label)
        report.save(out_dir / TEST_REPORT_FILE)
        activity.record('test_accuracy', f"{report.accuracy:.4f}")
        print(report.headline())
    print(f"Run saved to: {out_dir}")
    return 0


def synth_command(args):
    names = args.classes or list(CITY_NAMES)
    with ActivityLogger('synth', f"synthetic dataset in {args.out}"):
        root = generate_synthetic_dataset(args.out, names, args.per_class, args.size, args.seed, args.noise)
    print(f"Generated {len(names)} x {args.per_class} images in {root}")
    return 0


def scan_command(args):
    manifest, report = scan_dataset(args.root)
    save_manifest(manifest, args.out)
    for name, count in report.per_class.items():
        print(f"  {name:<20} {count:>6}")
    print(f"{len(manifest.records)} images in {manifest.num_classes} classes "
          f"({len(report.skipped)} entries skipped)")
    print(f"Manifest saved to: {args.out}")
    return 0


def split_command(args):
    manifest = load_manifest(args.manifest)
    manifest = split_dataset(manifest, args.ratios, args.seed, overwrite=args.overwrite)
    out = args.out or args.manifest
    save_manifest(manifest, out)
    counts = manifest.split_counts()
    for split in SPLITS:
        print(f"  {split:<5} {sum(counts[split]):>6}  {counts[split]}")
    print(f"Manifest saved to: {out}")
    return 0


def train_command(args):
    manifest = _load_split_manifest(args.manifest)
    config = _train_config(args.config, args)
    preprocess = _preprocess(args)
    label = args.label or ('vanilla' if args.arch == 'vanilla' else 'vgg16_transfer')

    with ActivityLogger('train', f"{label} on {args.manifest}") as activity:
        if args.arch == 'vanilla':
            arch = build_vanilla_cnn(preprocess.input_shape, manifest.num_classes)
            params = init_parameters(arch, config.seed_init)
            mask = full_mask(arch)
        else:
            arch, mask, params = _vgg16_with_weights(args, preprocess, manifest.num_classes, config.seed_init)
        counts = count_parameters(arch, mask)
        print(f"{label}: {counts.total:,} parameters ({counts.trainable:,} trainable)")
        result = fit(arch, params, mask, manifest, config, preprocess, label)
        return _finish_run(args, manifest, arch, result, mask, preprocess, config, activity)


def finetune_command(args):
    manifest = _load_split_manifest(args.manifest)
    stage1 = _train_config(args.config_stage1, args)
    stage2 = _train_config(args.config_stage2, args, base=TrainConfig.stage2_defaults())
    preprocess = _preprocess(args)
    label = args.label or 'vgg16_finetune'
    scopes = args.unfreeze or ['block5']

    with ActivityLogger('finetune', f"{label} on {args.manifest}") as activity:
        arch, mask, params = _vgg16_with_weights(args, preprocess, manifest.num_classes, stage1.seed_init)
        result = fine_tune_two_stage(arch, params, mask, manifest, stage1, stage2,
                                     scopes, preprocess, label)
        # the final optimizer state belongs to the stage-2 mask
        final_mask = unfreeze(arch, mask, scopes)
        return _finish_run(args, manifest, arch, result, final_mask, preprocess, stage2, activity)


def evaluate_command(args):
    manifest = load_manifest(args.manifest)
    checkpoint = load_checkpoint(args.checkpoint)
    preprocess = checkpoint.preprocess or PreprocessConfig(*checkpoint.arch.input_shape[:2])
    with ActivityLogger('evaluate', f"{checkpoint.label} on {args.split}") as activity:
        report = evaluate_split(checkpoint.arch, checkpoint.params, manifest, args.split, args.batch_size,
                                preprocess, args.workers, label=checkpoint.label)
        activity.record('accuracy', f"{report.accuracy:.4f}")
    print(report.render())
    if args.out:
        report.save(args.out)
        print(f"\nReport saved to: {args.out}")
    return 0


def predict_command(args):
    with ActivityLogger('predict', f"{args.image}") as activity:
        result = predict_image(args.image, args.checkpoint, args.top_k)
        activity.record('top1', result.ranked[0][0])
    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        print(result.render())
    return 0


def plot_command(args):
    for path in plot_history(args.history, args.out_dir, args.format):
        print(f"Saved to: {path}")
    return 0


def compare_command(args):
    entries = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        paths = [run_dir / CHECKPOINT_FILE, run_dir / HISTORY_FILE, run_dir / TEST_REPORT_FILE]
        missing = [str(path) for path in paths if not path.is_file()]
        if missing:
            raise MissingFileError(f"run {run_dir} is incomplete: missing {', '.join(missing)}")
        checkpoint = load_checkpoint(paths[0])
        history = TrainingHistory.load(paths[1])
        report = ClassificationReport.load(paths[2])
        entries.append((history, report, count_parameters(checkpoint.arch, checkpoint.mask)))
    comparison = compare_runs(entries)
    print(comparison.render())
    if args.out:
        comparison.save(args.out)
        print(f"\nComparison saved to: {args.out}")
    return 0


COMMANDS = {
    'synth': synth_command,
    'scan': scan_command,
    'split': split_command,
    'train': train_command,
    'finetune': finetune_command,
    'evaluate': evaluate_command,
    'predict': predict_command,
    'plot': plot_command,
    'compare': compare_command,
}


def _add_training_flags(sub):
    sub.add_argument('--out-dir', required=True, help='Run directory for checkpoint, history and report')
    sub.add_argument('--weights', help='Pretrained VGG16 weight bundle directory')
    sub.add_argument('--strict-weights', action='store_true',
                     help='Fail if the bundle lacks any backbone conv weight')
    sub.add_argument('--label', help='Run label (names the plots and comparison row)')
    sub.add_argument('--seed', type=int, help='Seed for init, shuffling and dropout (overrides config)')
    sub.add_argument('--epochs', type=int, help='max_epochs override')
    sub.add_argument('--batch-size', type=int, help='batch_size override')
    sub.add_argument('--workers', type=int, help='Image decoding threads')
    sub.add_argument('--size', type=int, default=175, help='Input height and width (default: 175)')
    sub.add_argument('--scaling', choices=('unit', 'imagenet'), default='unit',
                     help='Pixel scaling (default: unit; imagenet matches pretrained VGG16 bundles)')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='cityscope',
        description='cityscope - City image classification with a vanilla CNN and VGG16 transfer learning',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  Generate a synthetic 5-city dataset:
    cityscope synth --out data/synthetic --per-class 100 --seed 0

  Catalog and split it:
    cityscope scan --root data/synthetic --out manifest.json
    cityscope split --manifest manifest.json --ratios 0.70,0.15,0.15 --seed 0

  Train the vanilla CNN and fine-tune VGG16:
    cityscope train --manifest manifest.json --arch vanilla --out-dir runs/vanilla
    cityscope finetune --manifest manifest.json --weights weights/vgg16 --out-dir runs/finetune

  Evaluate, plot and compare:
    cityscope evaluate --manifest manifest.json --checkpoint runs/vanilla/checkpoint.ckpt --split test
    cityscope plot --history runs/vanilla/history.jsonl --out-dir plots
    cityscope compare --runs runs/vanilla runs/finetune

Set CITYSCOPE_LOG=error|info|debug to control console logging.
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    synth = subparsers.add_parser('synth', help='Generate a synthetic hue-coded dataset')
    synth.add_argument('--out', required=True, help='Dataset root to create')
    synth.add_argument('--classes', type=_names, help='Comma-separated class names (default: five cities)')
    synth.add_argument('--per-class', type=int, default=100, help='Images per class (default: 100)')
    synth.add_argument('--size', type=int, default=175, help='Image side in pixels (default: 175)')
    synth.add_argument('--noise', type=float, default=0.25, help='Uniform noise half-width (default: 0.25)')
    synth.add_argument('--seed', type=int, default=0, help='Generator seed (default: 0)')

    scan = subparsers.add_parser('scan', help='Catalog a dataset directory')
    scan.add_argument('--root', required=True, help='Dataset root with one directory per class')
    scan.add_argument('--out', required=True, help='Manifest JSON to write')

    split = subparsers.add_parser('split', help='Assign stratified train/val/test splits')
    split.add_argument('--manifest', required=True, help='Manifest JSON')
    split.add_argument('--ratios', type=_ratios, default=DEFAULT_RATIOS,
                       help='train,val,test ratios (default: 0.70,0.15,0.15)')
    split.add_argument('--seed', type=int, default=0, help='Split seed (default: 0)')
    split.add_argument('--out', help='Output manifest (default: overwrite --manifest)')
    split.add_argument('--overwrite', action='store_true', help='Replace existing split assignments')

    train = subparsers.add_parser('train', help='Train the vanilla CNN or the VGG16 head')
    train.add_argument('--manifest', required=True, help='Split manifest JSON')
    train.add_argument('--config', help='Key-value config file')
    train.add_argument('--arch', choices=('vanilla', 'vgg16'), default='vanilla', help='Architecture')
    train.add_argument('--lr', type=float, help='learning_rate override')
    _add_training_flags(train)

    finetune = subparsers.add_parser('finetune', help='Two-stage VGG16 fine-tuning')
    finetune.add_argument('--manifest', required=True, help='Split manifest JSON')
    finetune.add_argument('--config-stage1', help='Stage-1 config file (head only)')
    finetune.add_argument('--config-stage2', help='Stage-2 config file (default learning rate 1e-5)')
    finetune.add_argument('--unfreeze', action='append',
                          help='Backbone block to unfreeze in stage 2; repeatable (default: block5)')
    _add_training_flags(finetune)

    evaluate = subparsers.add_parser('evaluate', help='Score a checkpoint on one split')
    evaluate.add_argument('--manifest', required=True, help='Split manifest JSON')
    evaluate.add_argument('--checkpoint', required=True, help='Checkpoint file')
    evaluate.add_argument('--split', choices=SPLITS, default=TEST, help='Split to score (default: test)')
    evaluate.add_argument('--batch-size', type=int, default=32, help='Batch size (default: 32)')
    evaluate.add_argument('--workers', type=int, default=1, help='Image decoding threads')
    evaluate.add_argument('--out', help='Write the report JSON here')

    predict = subparsers.add_parser('predict', help='Classify a single image')
    predict.add_argument('--image', required=True, help='JPEG or PNG file')
    predict.add_argument('--checkpoint', required=True, help='Checkpoint file')
    predict.add_argument('--top-k', type=int, default=5, help='Classes to list (default: 5)')
    predict.add_argument('--json', action='store_true', help='Print JSON instead of text')

    plot = subparsers.add_parser('plot', help='Plot accuracy and loss curves')
    plot.add_argument('--history', required=True, help='history.jsonl file')
    plot.add_argument('--out-dir', required=True, help='Directory for the images')
    plot.add_argument('--format', choices=PLOT_FORMATS, default='png', help='Image format (default: png)')

    compare = subparsers.add_parser('compare', help='Compare finished runs')
    compare.add_argument('--runs', nargs='+', required=True, help='Run directories')
    compare.add_argument('--out', help='Write the comparison JSON here')

    return parser


def main(argv=None):
    """Main CLI entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    if not args.command:
        parser.print_help(sys.stderr)
        return 2

    refresh_console_level()
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        return 1
    except CityscopeError as e:
        print(f"Error: {e.code}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
