"""
    Command-line entry point, installed as ``eeg-cdfusion``.

        eeg-cdfusion synth --spec synth.txt --out data/
        eeg-cdfusion preprocess --in data/ --out features/ --label arousal
        eeg-cdfusion train --features features/ --config train.txt --out ckpt/
        eeg-cdfusion eval --ckpt ckpt/ --features features/
        eeg-cdfusion loso --data data/ --config train.txt --report loso.tsv
        eeg-cdfusion ablate --data data/ --config train.txt --report ablation.tsv --labels valence,arousal
        eeg-cdfusion compare --data data/ --config train.txt --report encoders.tsv

    ##########################################################################
    This code is part of the eeg_cdfusion package.

    This program is free software: you can redistribute it and/or modify
    it under the terms of the GNU Affero General Public License as published
    by the Free Software Foundation, either version 3 of the License, or
    (at your option) any later version.

    This program is distributed in the hope that it will be useful,
    but WITHOUT ANY WARRANTY; without even the implied warranty of
    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
    GNU Affero General Public License for more details.

    You should have received a copy of the GNU Affero General Public License
    along with this program.  If not, see <https://www.gnu.org/licenses/>.
    ##########################################################################
"""

import argparse
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from eeg_cdfusion import __version__, config, dataset_io, model, reports, signal_pipeline, train_eval
from eeg_cdfusion.exceptions import EegFusionError

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
TRAIN_CONFIG_FILE = "train.txt"
LOSS_FILE = "loss.tsv"


def _train_config(path: Optional[str]) -> train_eval.TrainConfig:
    if path is None:
        return train_eval.TrainConfig()
    return train_eval.load_train_config(path)


def _label_list(text: Optional[str], cfg: train_eval.TrainConfig) -> List[str]:
    if not text:
        return [cfg.label_dim]
    return [signal_pipeline.validate_label_dim(item) for item in text.split(",") if item.strip()]


def run_synth(args: argparse.Namespace) -> int:
    spec = dataset_io.load_synthetic_spec(args.spec) if args.spec else dataset_io.SyntheticSpec()
    recordings = dataset_io.generate_synthetic(spec)
    paths = dataset_io.save_recordings(recordings, args.out)
    LOGGER.info("Wrote %d synthetic subjects to %s", len(paths), args.out)
    return 0


def run_preprocess(args: argparse.Namespace) -> int:
    cfg = _train_config(args.config)
    if args.label:
        cfg = cfg.replace(label_dim=args.label)
    samples = train_eval.featurize_recordings(dataset_io.load_recordings(args.input), cfg)
    signal_pipeline.save_features(samples, args.out)
    LOGGER.info("Wrote %d %s feature samples to %s", len(samples), cfg.label_dim, args.out)
    return 0


def run_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args.config)
    samples = signal_pipeline.load_features(args.features)
    params, loss_curve = train_eval.train(samples, cfg)
    out = Path(args.out)
    model.save_checkpoint(params, out)
    (out / TRAIN_CONFIG_FILE).write_text(
        config.format_key_values(config.dataclass_to_values(cfg)), encoding="utf-8"
    )
    lines = ["epoch\tmean_loss"] + [f"{epoch}\t{loss:.6f}" for epoch, loss in enumerate(loss_curve, start=1)]
    (out / LOSS_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    LOGGER.info("Trained on %d samples for %d epochs, checkpoint in %s", len(samples), cfg.max_epochs, out)
    return 0


def run_eval(args: argparse.Namespace) -> int:
    params = model.load_checkpoint(args.ckpt)
    samples = signal_pipeline.load_features(args.features)
    accuracy = train_eval.evaluate(params, samples)
    print(config.format_key_values({"n_samples": len(samples), "accuracy": f"{accuracy:.6f}"}), end="")
    return 0


def run_loso(args: argparse.Namespace) -> int:
    cfg = _train_config(args.config)
    fold_reports, mean_accuracy = train_eval.loso(dataset_io.load_recordings(args.data), cfg)
    reports.write_report(
        args.report,
        reports.format_fold_table(fold_reports),
        reports.loso_summary(fold_reports, mean_accuracy, cfg),
    )
    LOGGER.info("LOSO mean accuracy %.4f over %d folds", mean_accuracy, len(fold_reports))
    return 0


def run_ablate(args: argparse.Namespace) -> int:
    cfg = _train_config(args.config)
    label_dims = _label_list(args.labels, cfg)
    rows = train_eval.ablate(dataset_io.load_recordings(args.data), cfg, label_dims)
    reports.write_report(
        args.report,
        reports.format_ablation_table(rows, label_dims),
        reports.ablation_summary(rows, label_dims),
    )
    return 0


def run_compare(args: argparse.Namespace) -> int:
    cfg = _train_config(args.config)
    label_dims = _label_list(args.labels, cfg)
    rows = train_eval.compare_encoders(dataset_io.load_recordings(args.data), cfg, label_dims)
    reports.write_report(
        args.report,
        reports.format_encoder_table(rows, label_dims),
        reports.encoder_summary(rows, label_dims),
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eeg-cdfusion",
        description="EEG emotion recognition with cross-domain feature fusion.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate labeled synthetic recordings")
    synth.add_argument("--spec", help="key = value synthetic spec; defaults when omitted")
    synth.add_argument("--out", required=True, help="output directory of recording bundles")
    synth.set_defaults(handler=run_synth)

    preprocess = commands.add_parser("preprocess", help="window recordings into a feature cache")
    preprocess.add_argument("--in", dest="input", required=True, help="directory of recording bundles")
    preprocess.add_argument("--out", required=True, help="feature cache directory")
    preprocess.add_argument("--label", choices=tuple(signal_pipeline.LABEL_COLUMNS), help="label dimension")
    preprocess.add_argument("--config", help="train config supplying the window geometry")
    preprocess.set_defaults(handler=run_preprocess)

    train = commands.add_parser("train", help="train one model on a feature cache")
    train.add_argument("--features", required=True, help="feature cache directory")
    train.add_argument("--config", help="key = value train config")
    train.add_argument("--out", required=True, help="checkpoint directory")
    train.set_defaults(handler=run_train)

    evaluate = commands.add_parser("eval", help="accuracy of a checkpoint on a feature cache")
    evaluate.add_argument("--ckpt", required=True, help="checkpoint directory")
    evaluate.add_argument("--features", required=True, help="feature cache directory")
    evaluate.set_defaults(handler=run_eval)

    for name, handler, help_text, multi_label in (
        ("loso", run_loso, "leave-one-subject-out cross-validation", False),
        ("ablate", run_ablate, "LOSO for each block combination", True),
        ("compare", run_compare, "LOSO with the GAT and the GCN graph encoder", True),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--data", required=True, help="directory of recording bundles")
        command.add_argument("--config", help="key = value train config")
        command.add_argument("--report", required=True, help="tab-separated report file")
        if multi_label:
            command.add_argument("--labels", help="comma-separated label dimensions, e.g. valence,arousal")
        command.set_defaults(handler=handler)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except (EegFusionError, OSError) as exc:
        LOGGER.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
