"""
    Plain-text reports of LOSO runs, block ablations and encoder comparisons.

    Tables are tab separated with a header line; summaries are key = value
    lines readable by config.parse_key_values. Numbers use a fixed format and
    nothing time dependent is written, so identical runs give identical bytes.

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

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

from eeg_cdfusion.config import format_key_values
from eeg_cdfusion.train_eval import AblationRow, EncoderRow, FoldReport, TrainConfig

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

NUMBER_FORMAT = "{:.6f}"
SUMMARY_SUFFIX = ".summary.txt"
CHECK = "x"
BLANK = "-"


def _number(value: float) -> str:
    return NUMBER_FORMAT.format(value)


def _tsv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    return "\n".join("\t".join(line) for line in [header, *rows]) + "\n"


def _column_name(label_dim: str) -> str:
    return label_dim.capitalize()


def format_fold_table(reports: Sequence[FoldReport]) -> str:
    """One line per fold: subject, test windows, accuracy and final training loss."""
    rows = [
        (
            str(report.fold_subject),
            str(report.n_test),
            _number(report.accuracy),
            _number(report.loss_curve[-1]) if report.loss_curve else BLANK,
        )
        for report in reports
    ]
    return _tsv(("subject", "n_test", "accuracy", "final_loss"), rows)


def loso_summary(reports: Sequence[FoldReport], mean_accuracy: float, cfg: TrainConfig) -> Dict[str, str]:
    summary = {
        "label_dim": cfg.label_dim,
        "fusion_mode": cfg.fusion_mode,
        "encoder_kind": cfg.encoder_kind,
        "seed": str(cfg.seed),
        "n_folds": str(len(reports)),
        "mean_accuracy": _number(mean_accuracy),
    }
    for report in reports:
        summary[f"fold_{report.fold_subject}_accuracy"] = _number(report.accuracy)
    return summary


def format_ablation_table(rows: Sequence[AblationRow], label_dims: Sequence[str]) -> str:
    """Block switches and one accuracy column per label dim, one line per fusion mode."""
    header = ("Model", "SDEE", "TDEE", "CDA", "Fusion", *(_column_name(dim) for dim in label_dims))
    lines = [
        (
            row.name,
            *(CHECK if used else BLANK for used in row.blocks),
            *(_number(row.accuracies[dim]) for dim in label_dims),
        )
        for row in rows
    ]
    return _tsv(header, lines)


def ablation_summary(rows: Sequence[AblationRow], label_dims: Sequence[str]) -> Dict[str, str]:
    return {
        f"{row.fusion_mode}_{dim}_accuracy": _number(row.accuracies[dim])
        for row in rows
        for dim in label_dims
    }


def format_encoder_table(rows: Sequence[EncoderRow], label_dims: Sequence[str]) -> str:
    header = ("Method", *(_column_name(dim) for dim in label_dims))
    lines = [(row.method, *(_number(row.accuracies[dim]) for dim in label_dims)) for row in rows]
    return _tsv(header, lines)


def encoder_summary(rows: Sequence[EncoderRow], label_dims: Sequence[str]) -> Dict[str, str]:
    return {
        f"{row.encoder_kind}_{dim}_accuracy": _number(row.accuracies[dim])
        for row in rows
        for dim in label_dims
    }


def summary_path(report_path: PathLike) -> Path:
    """Where the key = value summary of a report goes: ``<report>.summary.txt``."""
    report_path = Path(report_path)
    return report_path.with_name(report_path.name + SUMMARY_SUFFIX)


def write_report(report_path: PathLike, table: str, summary: Dict[str, str]) -> Tuple[Path, Path]:
    """Write a table and its summary next to each other; returns both paths."""
    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(table, encoding="utf-8")
    summary_file = summary_path(report_path)
    summary_file.write_text(format_key_values(summary), encoding="utf-8")
    LOGGER.info("Report written to %s (summary %s)", report_path, summary_file)
    return report_path, summary_file


def read_table(report_path: PathLike) -> List[List[str]]:
    """Split a written table back into rows of fields, header first."""
    text = Path(report_path).read_text(encoding="utf-8")
    return [line.split("\t") for line in text.splitlines() if line]
