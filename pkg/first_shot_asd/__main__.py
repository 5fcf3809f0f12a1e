import argparse
import logging
import sys
from pathlib import Path

from .config import Config
from .errors import AsdError, ConfigError
from .pipeline import MANIFEST_FILE, MODEL_FILE, Pipeline
from .toy_fixture import DEFAULT_TOY_MACHINE, TOY_MACHINES, make_toy_dataset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="first_shot_asd",
        description="First-shot anomalous sound detection with TWFR features tuned on synthetic clips"
    )
    parser.add_argument(
        "--config",
        help="Path to custom configuration file"
    )
    parser.add_argument(
        "--output",
        help="Output directory for models, scores and reports (overrides output_directory)"
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Enable verbose output"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    captions = sub.add_parser("captions", help="Export the caption manifest of a machine type")
    captions.add_argument("--dataset", help="DCASE-style dataset root (overrides dataset_root)")
    captions.add_argument("--machine", required=True, help="Target machine type")
    captions.add_argument("--out", help=f"Manifest path (default: <output>/models/<machine>/{MANIFEST_FILE})")

    stub = sub.add_parser("generate-stub", help="Write stand-in synthetic clips for a manifest")
    stub.add_argument("--manifest", required=True, help="Caption manifest")
    stub.add_argument("--out", required=True, help="Directory receiving the WAV files")

    tune = sub.add_parser("tune", help="Select the pooling exponent r on synthetic clips")
    tune.add_argument("--dataset", help="DCASE-style dataset root (overrides dataset_root)")
    tune.add_argument("--machine", required=True, help="Target machine type")
    tune.add_argument("--synth-dir", required=True, help="Directory of generated WAV files")
    tune.add_argument("--manifest", help=f"Manifest of the generated files (default: <synth-dir>/{MANIFEST_FILE})")
    tune.add_argument("--reference", action="store_true",
                      help="Also tune on labelled real test clips and report the difference")

    fit = sub.add_parser("fit", help="Fit the GMM on real normal training clips")
    fit.add_argument("--dataset", help="DCASE-style dataset root (overrides dataset_root)")
    fit.add_argument("--machine", required=True, help="Target machine type")
    fit.add_argument("--r", type=float, help="Pooling exponent (default: the tuned value)")

    score = sub.add_parser("score", help="Score every WAV file below a directory")
    score.add_argument("--model", required=True, help=f"Path to a {MODEL_FILE}")
    score.add_argument("--wav-dir", required=True, help="Directory of clips to score")
    score.add_argument("--out", required=True, help="Score CSV to write")

    evaluate = sub.add_parser("eval", help="Compute AUC/pAUC of score files against labels")
    evaluate.add_argument("--scores", required=True, nargs="+", help="Score CSV files")
    evaluate.add_argument("--labels", required=True, help="Label CSV (clip_id,machine_type,label)")
    evaluate.add_argument("--p", type=float, help="pAUC false-positive-rate limit (overrides evaluation.p)")
    evaluate.add_argument("--out-dir", help="Report directory (default: output directory)")
    evaluate.add_argument("--models-dir", help="Models directory whose tuning results are listed in the report")

    labels = sub.add_parser("labels", help="Write the label file of a dataset's test splits")
    labels.add_argument("--dataset", help="DCASE-style dataset root (overrides dataset_root)")
    labels.add_argument("--out", required=True, help="Label CSV to write")
    labels.add_argument("--machine", action="append", help="Restrict to a machine type (repeatable)")

    params = sub.add_parser("params", help="Report the parameter count of persisted models")
    params.add_argument("--models-dir", help="Models directory (default: <output>/models)")

    toy = sub.add_parser("make-toy", help="Write the bundled toy dataset")
    toy.add_argument("--out", required=True, help="Dataset root to create")
    toy.add_argument("--machine", action="append", choices=sorted(TOY_MACHINES),
                     help=f"Toy machine type (repeatable, default: {DEFAULT_TOY_MACHINE})")
    toy.add_argument("--n-train", type=int, default=50, help="Normal training clips per machine")
    toy.add_argument("--n-test", type=int, default=20, help="Test clips per condition per machine")

    run_toy = sub.add_parser("run-toy", help="Run the whole pipeline on the toy dataset")
    run_toy.add_argument("--machine", action="append", choices=sorted(TOY_MACHINES),
                         help=f"Toy machine type (repeatable, default: {DEFAULT_TOY_MACHINE})")
    run_toy.add_argument("--all-machines", action="store_true", help="Use every toy machine type")
    return parser


def _dataset(args: argparse.Namespace, config: Config) -> Path:
    dataset = args.dataset or config.get("dataset_root")
    if not dataset:
        raise ConfigError("Dataset root not specified. Use --dataset or dataset_root in the config file.")
    return Path(dataset)


def run(args: argparse.Namespace) -> None:
    config = Config(args.config)
    if args.output:
        config.set("output_directory", args.output)
    output_directory = Path(config.get("output_directory") or "output")

    if args.verbose:
        logging.basicConfig(
            level=logging.INFO,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[logging.StreamHandler(sys.stdout)]
        )
        print("Loaded configuration:")
        for key, value in config.to_dict().items():
            print(f"  {key}: {value}")

    if args.command == "make-toy":
        run_config = config.run_config()
        labels = make_toy_dataset(Path(args.out), args.machine or [DEFAULT_TOY_MACHINE],
                                  n_train=args.n_train, n_test=args.n_test,
                                  sample_rate=run_config.spectrogram.sample_rate,
                                  clip_seconds=run_config.clip_seconds, seed=run_config.seed)
        print(f"Toy dataset written to {args.out} (labels: {labels})")
        return

    pipeline = Pipeline(config, output_directory)

    if args.command == "captions":
        manifest = pipeline.cmd_captions(_dataset(args, config), args.machine, args.out)
        out = args.out or pipeline.model_dir(args.machine) / MANIFEST_FILE
        print(f"Manifest with {len(manifest)} entries "
              f"({manifest.requested('normal')} normal, {manifest.requested('anomaly')} anomaly clips) saved to: {out}")

    elif args.command == "generate-stub":
        written = pipeline.cmd_generate_stub(args.manifest, args.out)
        print(f"Generated {len(written)} stand-in clips in {args.out}")

    elif args.command == "tune":
        result = pipeline.cmd_tune(_dataset(args, config), args.machine, args.synth_dir,
                                   manifest_path=args.manifest, reference=args.reference)
        print(f"Selected r={result.r_selected:g} for {args.machine} (objective {result.best_objective:.4f})")
        for name, point in sorted(result.baselines.items()):
            print(f"  {name} (r={point.r:g}): objective {point.objective:.4f}")
        print(f"Tuning trace saved to: {pipeline.model_dir(args.machine)}")

    elif args.command == "fit":
        path = pipeline.cmd_fit(_dataset(args, config), args.machine, args.r)
        print(f"Model saved to: {path}")

    elif args.command == "score":
        path = pipeline.cmd_score(args.model, args.wav_dir, args.out)
        print(f"Scores saved to: {path}")

    elif args.command == "eval":
        reports = pipeline.cmd_eval(args.scores, args.labels, p=args.p, out_dir=args.out_dir,
                                    models_dir=args.models_dir)
        for report in reports:
            print(f"  {report.machine_type}: AUC {100 * report.auc:.2f}%, pAUC {100 * report.pauc:.2f}%")
        print(f"Report saved to: {args.out_dir or output_directory}")

    elif args.command == "labels":
        path = pipeline.cmd_labels(_dataset(args, config), args.out, args.machine)
        print(f"Labels saved to: {path}")

    elif args.command == "params":
        counts = pipeline.cmd_params(args.models_dir)
        for machine_type, count in counts.items():
            print(f"  {machine_type}: {count:,} parameters")
        print(f"Total: {sum(counts.values()):,} parameters across {len(counts)} models")

    elif args.command == "run-toy":
        machines = sorted(TOY_MACHINES) if args.all_machines else (args.machine or [DEFAULT_TOY_MACHINE])
        summary = pipeline.run_toy(machines)
        for report in summary["reports"]:
            tuned = summary["tuning"][report.machine_type]
            print(f"  {report.machine_type}: r={tuned.r_selected:g}, "
                  f"AUC {100 * report.auc:.2f}%, pAUC {100 * report.pauc:.2f}%")
        print(f"Toy run written to: {output_directory}")


def main(argv=None) -> int:
    """Main entry point for the anomalous sound detection pipeline."""
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except AsdError as e:
        print(f"error\t{type(e).__name__}\t{e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error\t{type(e).__name__}\t{e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
