"""Batch evaluation: score image pairs, compare checkpoints, emit reports.

Scores are always reduced in sorted-filename order so a report is a pure
function of its inputs regardless of directory listing order.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from cycleiq import imgio
from cycleiq.iqa import fsim, gmsd, ssim
from cycleiq.nets import CycleModel, translate_image

IMAGE_EXTS = (".png", ".ppm")

# serialization column order; parsers rely on it
COLUMNS = ("label", "ssim", "fsim", "gmsd", "count", "dataset", "checkpoint")

FORMATS = ("csv", "json", "markdown-table")


@dataclass(frozen=True)
class EvalRow:
    """Mean full-reference scores for one method over one image set."""

    label: str
    ssim: float
    fsim: float
    gmsd: float
    count: int
    dataset: str = ""
    checkpoint: str = ""


@dataclass
class EvalReport:
    """Rows meant to be compared against each other.

    Comparison only makes sense when every row averaged over the same
    number of images, so mixed sample counts are rejected up front.
    """

    rows: list = field(default_factory=list)

    def __post_init__(self):
        counts = {row.count for row in self.rows}
        if len(counts) > 1:
            raise ValueError(f"rows have mixed sample counts: {sorted(counts)}")

    def row(self, label: str) -> EvalRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _list_images(directory):
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    return {
        name
        for name in os.listdir(directory)
        if name.lower().endswith(IMAGE_EXTS)
    }


def _metric_means(pairs):
    """Mean ssim/fsim/gmsd over (reference, test) gray-array pairs."""
    scores = {"ssim": [], "fsim": [], "gmsd": []}
    for ref, test in pairs:
        scores["ssim"].append(ssim(ref, test).value)
        scores["fsim"].append(fsim(ref, test).value)
        scores["gmsd"].append(gmsd(ref, test).value)
    n = len(scores["ssim"])
    return {k: math.fsum(v) / n for k, v in scores.items()}, n


def score_pairs(
    generated_dir,
    truth_dir,
    label: str = "",
    dataset: str = "",
    checkpoint: str = "",
) -> EvalRow:
    """Score same-named images in two directories against each other.

    Files are matched by exact name; anything present on one side only is
    an error, named explicitly so the caller can see what went missing.
    """
    gen_names = _list_images(generated_dir)
    truth_names = _list_images(truth_dir)
    common = gen_names & truth_names
    if not common:
        raise ValueError(
            f"no shared image names between {generated_dir} and {truth_dir}"
        )
    missing = sorted(gen_names ^ truth_names)
    if missing:
        raise ValueError(
            "generated and ground-truth sets differ; unmatched files: "
            + ", ".join(missing)
        )

    pairs = []
    for name in sorted(common):
        truth = imgio.load_image(os.path.join(truth_dir, name)).gray()
        test = imgio.load_image(os.path.join(generated_dir, name)).gray()
        pairs.append((truth, test))
    means, n = _metric_means(pairs)
    return EvalRow(
        label=label,
        ssim=means["ssim"],
        fsim=means["fsim"],
        gmsd=means["gmsd"],
        count=n,
        dataset=dataset,
        checkpoint=checkpoint,
    )


def round_trip(model: CycleModel, image: np.ndarray, domain: str = "u") -> np.ndarray:
    """Map an image to the other domain and back.

    ``domain`` names where the input lives: "u" runs G_U then G_V.
    """
    if domain == "u":
        first, second = model.g_u, model.g_v
    elif domain == "v":
        first, second = model.g_v, model.g_u
    else:
        raise ValueError(f"domain must be 'u' or 'v', got {domain!r}")
    across = translate_image(first, model.gen_cfg, image)
    return translate_image(second, model.gen_cfg, across)


def _load_checkpoint(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model, meta = CycleModel.load(path)
    label = (meta or {}).get("variant", os.path.splitext(os.path.basename(path))[0])
    return model, label


def _score_round_trips(model, sources, inputs):
    """Mean scores of round-tripped ``inputs`` against clean ``sources``."""
    pairs = []
    for src, inp in zip(sources, inputs):
        out = round_trip(model, inp, domain="u")
        pairs.append((imgio.rgb_to_gray(src), imgio.rgb_to_gray(out)))
    return _metric_means(pairs)


def noise_experiment(
    checkpoint_a,
    checkpoint_c,
    eval_u: np.ndarray,
    noise_var: float,
    noise_seed: int = 0,
) -> EvalReport:
    """Probe noise robustness of two trained models on the same inputs.

    Each model round-trips the clean eval images and a noise-corrupted
    copy (zero-mean gaussian, variance ``noise_var`` of the full 255
    range). Scores always reference the clean source, so the drop from
    the clean row to the noisy row is the degradation caused by input
    noise alone. With ``noise_var`` 0 both rows are computed from
    identical inputs and match exactly.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    eval_u = np.asarray(eval_u, dtype=np.float64)
    if eval_u.ndim != 4:
        raise ValueError(f"expected (k, H, W, C) eval images, got {eval_u.shape}")

    rng = np.random.default_rng(noise_seed)
    noise = rng.normal(0.0, 255.0 * math.sqrt(noise_var), size=eval_u.shape)
    noisy = np.clip(eval_u + noise, 0.0, 255.0)

    loaded = [_load_checkpoint(p) for p in (checkpoint_a, checkpoint_c)]
    labels = [label for _, label in loaded]
    if labels[0] == labels[1]:
        # comparing two checkpoints of one variant; keep rows tellable apart
        labels = [f"{labels[0]}/a", f"{labels[1]}/c"]

    rows = []
    for (model, _), label, path in zip(
        loaded, labels, (checkpoint_a, checkpoint_c)
    ):
        ckpt_id = os.path.basename(str(path))
        for condition, inputs in (("clean", eval_u), ("noisy", noisy)):
            means, n = _score_round_trips(model, eval_u, inputs)
            dataset = condition if condition == "clean" else f"noisy(var={noise_var:g})"
            rows.append(
                EvalRow(
                    label=label,
                    ssim=means["ssim"],
                    fsim=means["fsim"],
                    gmsd=means["gmsd"],
                    count=n,
                    dataset=dataset,
                    checkpoint=ckpt_id,
                )
            )
    return EvalReport(rows)


def fsim_degradation(report: EvalReport) -> dict:
    """Per-label FSIM drop, clean minus noisy, from a noise report."""
    clean, noisy = {}, {}
    for row in report.rows:
        bucket = clean if row.dataset == "clean" else noisy
        bucket[row.label] = row.fsim
    if set(clean) != set(noisy):
        raise ValueError("report does not pair a clean and a noisy row per label")
    return {label: clean[label] - noisy[label] for label in sorted(clean)}


def _row_cells(row: EvalRow):
    return (
        row.label,
        repr(row.ssim),
        repr(row.fsim),
        repr(row.gmsd),
        str(row.count),
        row.dataset,
        row.checkpoint,
    )


def emit_report(report: EvalReport, fmt: str) -> str:
    """Render a report as text in one of the supported formats."""
    if fmt == "csv":
        lines = [",".join(COLUMNS)]
        for row in report.rows:
            lines.append(",".join(_row_cells(row)))
        return "\n".join(lines) + "\n"
    if fmt == "json":
        payload = [dataclasses.asdict(row) for row in report.rows]
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "markdown-table":
        header = "| Method | SSIM | FSIM | GMSD | n | Dataset | Checkpoint |"
        rule = "|---|---|---|---|---|---|---|"
        lines = [header, rule]
        for row in report.rows:
            lines.append(
                "| {} | {:.4f} | {:.4f} | {:.4f} | {} | {} | {} |".format(
                    row.label, row.ssim, row.fsim, row.gmsd,
                    row.count, row.dataset, row.checkpoint,
                )
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")


def report_from_json(text: str) -> EvalReport:
    rows = [EvalRow(**entry) for entry in json.loads(text)]
    return EvalReport(rows)


def write_report(report: EvalReport, fmt: str, path) -> None:
    text = emit_report(report, fmt)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
