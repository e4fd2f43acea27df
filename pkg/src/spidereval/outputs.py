"""Serialization of analysis artifacts.

Every CSV is written with Unix line endings and floats rendered via
``%.9g`` so that identical results are identical bytes. JSON files use
sorted keys and Python's shortest-round-trip float repr. The run
manifest records the command, config snapshot, seed, library versions,
and SHA-256 digests of inputs and outputs; it deliberately contains no
timestamps or thread counts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .error_analysis import ErrorAnalysisReport
from .harness import PredictionSet
from .metrics import MetricReport
from .qc import QcReport
from .reliability import IccBootstrapReport

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "sha256_file",
    "write_qc_report",
    "write_qc_summary",
    "write_participant_split",
    "write_image_targets",
    "load_image_targets",
    "write_predictions",
    "load_predictions",
    "write_search_log",
    "write_metrics",
    "write_icc_reports",
    "write_fit_results",
    "write_overlap",
    "write_error_analysis",
    "write_manifest",
]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.9g" % float(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_qc_report(path, report: QcReport) -> None:
    rows = []
    for pid in sorted(report.mad):
        rows.append(
            [
                pid,
                report.rho[pid],
                report.mad[pid],
                pid in report.corr_flagged,
                pid in report.mad_flagged,
                pid in report.excluded,
            ]
        )
    write_csv(path, ["participant", "rho", "mad_score", "corr_flag", "mad_flag", "excluded"], rows)


def write_qc_summary(path, report: QcReport, counts: Mapping[str, int]) -> None:
    write_json(
        path,
        {
            "corr_threshold": report.corr_threshold,
            "mad_threshold": report.mad_threshold,
            "n_corr_flagged": len(report.corr_flagged),
            "n_mad_flagged": len(report.mad_flagged),
            "n_excluded": len(report.excluded),
            "excluded": sorted(report.excluded),
            **dict(counts),
        },
    )


def write_participant_split(path, split) -> None:
    write_json(
        path,
        {
            "seed": split.seed,
            "group_a": sorted(split.group_a),
            "group_b": sorted(split.group_b),
        },
    )


def write_image_targets(path, targets) -> None:
    rows = [
        [i, targets.mean_a[i], targets.mean_b[i], targets.n_a[i], targets.n_b[i]]
        for i in targets.image_ids
    ]
    write_csv(path, ["image_id", "mean_a", "mean_b", "n_a", "n_b"], rows)


def load_image_targets(path):
    from .errors import InputError
    from .partition import ImageTargets

    mean_a: dict[str, float] = {}
    mean_b: dict[str, float] = {}
    n_a: dict[str, int] = {}
    n_b: dict[str, int] = {}
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["image_id", "mean_a", "mean_b", "n_a", "n_b"]:
                raise InputError(f"{path}: unexpected image-targets header {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 5:
                    raise InputError(f"{path}:{lineno}: expected 5 fields")
                image_id = row[0]
                if image_id in mean_a:
                    raise InputError(f"{path}:{lineno}: duplicate image {image_id}")
                mean_a[image_id] = float(row[1])
                mean_b[image_id] = float(row[2])
                n_a[image_id] = int(row[3])
                n_b[image_id] = int(row[4])
    except OSError as exc:
        raise InputError(f"cannot read image targets {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: malformed numeric field: {exc}") from exc
    return ImageTargets(mean_a=mean_a, mean_b=mean_b, n_a=n_a, n_b=n_b, dropped=())


def write_predictions(path, ps: PredictionSet) -> None:
    entries = sorted(ps.entries, key=lambda p: (p.repetition, p.fold, p.image_id))
    rows = [[p.repetition, p.fold, p.image_id, p.raw, p.clipped] for p in entries]
    write_csv(path, ["rep", "fold", "image_id", "raw", "clipped"], rows)


def load_predictions(path) -> PredictionSet:
    from .errors import InputError
    from .harness import Prediction

    entries = []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["rep", "fold", "image_id", "raw", "clipped"]:
                raise InputError(f"{path}: unexpected predictions header {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 5:
                    raise InputError(f"{path}:{lineno}: expected 5 fields")
                entries.append(
                    Prediction(
                        repetition=int(row[0]),
                        fold=int(row[1]),
                        image_id=row[2],
                        raw=float(row[3]),
                        clipped=float(row[4]),
                    )
                )
    except OSError as exc:
        raise InputError(f"cannot read predictions {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: malformed numeric field: {exc}") from exc
    return PredictionSet(entries=tuple(entries))


def write_search_log(path, log: Sequence[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def write_metrics(path, report: MetricReport, by_rep_path=None) -> None:
    write_csv(
        path,
        ["r2", "mae", "rmse", "r2_ens", "mae_ens", "rmse_ens"],
        [
            [
                report.mean_r2,
                report.mean_mae,
                report.mean_rmse,
                report.ensemble_r2,
                report.ensemble_mae,
                report.ensemble_rmse,
            ]
        ],
    )
    if by_rep_path is not None:
        write_csv(
            by_rep_path,
            ["rep", "mae", "rmse", "r2"],
            [[rep, m, r_, q] for rep, m, r_, q in report.per_repetition],
        )


def write_icc_reports(report_path, summary_path, report: IccBootstrapReport) -> None:
    rows = [
        [size, rep, value]
        for size in report.sizes
        for rep, value in enumerate(report.values[size])
    ]
    write_csv(report_path, ["size", "rep", "icc"], rows)
    write_csv(
        summary_path,
        ["size", "mean", "sd"],
        [[size, report.means[size], report.sds[size]] for size in report.sizes],
    )


def write_fit_results(path, rows: Sequence[Mapping]) -> None:
    write_csv(
        path,
        ["model", "metric", "form", "a", "b", "c", "rss", "iterations", "converged"],
        [
            [
                r["model"],
                r["metric"],
                r["form"],
                r["a"],
                r["b"],
                r["c"],
                r["rss"],
                r["iterations"],
                r["converged"],
            ]
            for r in rows
        ],
    )


def write_overlap(path, records) -> None:
    write_csv(
        path,
        ["image_id", "mu_in", "mu_out", "delta", "mask_fraction"],
        [[r.image_id, r.mu_in, r.mu_out, r.delta, r.mask_fraction] for r in records],
    )


def _p_display(p: float) -> str:
    return "< .001" if p < 0.001 else "%.3f" % p


def write_error_analysis(out_dir, report: ErrorAnalysisReport) -> list[str]:
    """Write the four error-analysis artifacts; returns their paths."""
    descriptives = os.path.join(out_dir, "descriptives.csv")
    omnibus = os.path.join(out_dir, "omnibus.csv")
    posthoc = os.path.join(out_dir, "posthoc.csv")
    top = os.path.join(out_dir, "top_criteria.json")
    write_csv(
        descriptives,
        [
            "criterion", "category", "n", "freq", "mean_ae", "sd_ae", "median_ae",
            "iqr_ae", "share", "delta", "mean_ci_low", "mean_ci_high",
            "share_ci_low", "share_ci_high", "small",
        ],
        [
            [
                s.criterion, s.category, s.n, s.freq, s.mean_ae, s.sd_ae, s.median_ae,
                s.iqr_ae, s.share, s.delta,
                None if s.mean_ci is None else s.mean_ci[0],
                None if s.mean_ci is None else s.mean_ci[1],
                None if s.share_ci is None else s.share_ci[0],
                None if s.share_ci is None else s.share_ci[1],
                s.small,
            ]
            for s in report.summaries
        ],
    )
    write_csv(
        omnibus,
        ["criterion", "H", "epsilon_sq", "p", "p_fdr", "significant", "N", "k", "reason"],
        [
            [
                r.criterion, r.h, r.epsilon_sq, r.p, r.p_fdr,
                None if r.significant is None else r.significant,
                r.n_total, r.k, r.skip_reason or "",
            ]
            for r in report.omnibus
        ],
    )
    write_csv(
        posthoc,
        ["criterion", "category_a", "category_b", "z", "p", "p_fdr", "p_fdr_display"],
        [
            [r.criterion, r.category_a, r.category_b, r.z, r.p, r.p_fdr,
             _p_display(r.p_fdr)]
            for r in report.posthoc
        ],
    )
    write_json(top, {"top_criteria": list(report.top_criteria)})
    return [descriptives, omnibus, posthoc, top]


def write_manifest(out_dir, *, command: str, config: Mapping, seed: int | None,
                   inputs: Sequence[str], outputs: Sequence[str]) -> str:
    """Digest-based manifest; byte-identical for identical runs."""
    path = os.path.join(out_dir, "run_manifest.json")
    doc = {
        "command": command,
        "config": dict(config),
        "seed": seed,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "inputs": {
            os.path.basename(str(p)): sha256_file(p)
            for p in sorted(set(str(x) for x in inputs))
            if os.path.isfile(p)
        },
        "outputs": {
            os.path.basename(str(p)): sha256_file(p)
            for p in sorted(set(str(x) for x in outputs))
            if os.path.isfile(p)
        },
    }
    write_json(path, doc)
    return path
