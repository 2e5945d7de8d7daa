"""MSE / PCC metrics and the within-subject, cross-subject, and
fusion-strategy evaluation harnesses with CSV report rendering.

Metrics run on normalized signals, flattened over (channels x time),
then averaged over test images. All stds use the sample convention
(ddof = 1); rendering rounds half-up to 3 decimals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .conditioning import FusionMode
from .errors import DataError, ShapeError
from .sampler import generate
from .schedule import NoiseSchedule
from .store import Archive, NormalizationStats, average_repetitions, normalize


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def pcc(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of the flattened inputs."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"pcc: shapes {a.shape} vs {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0.0 or nb == 0.0:
        raise DataError("pcc: zero-variance input")
    return float(np.dot(da, db) / (na * nb))


def round_half_up(x: float, places: int = 3) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def aggregate(values) -> tuple[float, float]:
    """(mean, sample std) of a row/column of per-cell values."""
    arr = np.asarray(list(values), dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


@dataclass
class MetricReport:
    """Per-subject MSE/PCC with row averages."""

    mse_per_subject: dict[str, float]
    pcc_per_subject: dict[str, float]

    @property
    def mse_average(self) -> float:
        return aggregate(self.mse_per_subject.values())[0]

    @property
    def pcc_average(self) -> float:
        return aggregate(self.pcc_per_subject.values())[0]

    def to_csv(self) -> str:
        subjects = list(self.mse_per_subject)
        lines = ["metric," + ",".join(subjects) + ",average"]
        for name, row, avg in (
            ("MSE", self.mse_per_subject, self.mse_average),
            ("PCC", self.pcc_per_subject, self.pcc_average),
        ):
            cells = [f"{round_half_up(row[s]):.3f}" for s in subjects]
            lines.append(f"{name}," + ",".join(cells) + f",{round_half_up(avg):.3f}")
        return "\n".join(lines) + "\n"


@dataclass
class CrossSubjectMatrix:
    """values[source][target], diagonal absent."""

    values: dict[str, dict[str, float]]
    subjects: list[str] = field(default=None)

    def __post_init__(self):
        if self.subjects is None:
            self.subjects = list(self.values)
        for s, row in self.values.items():
            if s in row:
                raise DataError(f"cross-subject matrix has a diagonal entry for {s}")

    def source_stats(self, source: str) -> tuple[float, float]:
        return aggregate(self.values[source].values())

    def target_stats(self, target: str) -> tuple[float, float]:
        col = [row[target] for s, row in self.values.items() if target in row]
        return aggregate(col)

    @property
    def grand_mean(self) -> float:
        cells = [v for row in self.values.values() for v in row.values()]
        return aggregate(cells)[0]

    def to_csv(self) -> str:
        subs = self.subjects
        lines = ["train_subject," + ",".join(subs) + ",source_mean,source_std"]
        for s in subs:
            row = self.values.get(s, {})
            cells = ["" if t == s or t not in row else f"{round_half_up(row[t]):.3f}"
                     for t in subs]
            m, sd = self.source_stats(s)
            lines.append(f"{s}," + ",".join(cells)
                         + f",{round_half_up(m):.3f},{round_half_up(sd):.3f}")
        means = [f"{round_half_up(self.target_stats(t)[0]):.3f}" for t in subs]
        stds = [f"{round_half_up(self.target_stats(t)[1]):.3f}" for t in subs]
        lines.append("target_mean," + ",".join(means)
                     + f",{round_half_up(self.grand_mean):.3f},")
        lines.append("target_std," + ",".join(stds) + ",,")
        return "\n".join(lines) + "\n"


def _averaged_generation(model, stats: NormalizationStats, cond,
                         sched: NoiseSchedule, seed: int, n: int) -> np.ndarray:
    samples = generate(model, cond, sched, seed, n, stats, view="normalized")
    return np.mean(samples, axis=0)


def _eval_pair(model, stats: NormalizationStats, archive: Archive, provider,
               sched: NoiseSchedule, target_subject: str, seed: int,
               samples_per_image: int) -> tuple[float, float]:
    """Generate per test image and compare with the repetition-averaged target."""
    targets, _ = average_repetitions(archive, target_subject, "test")
    mses, pccs = [], []
    for image_id in sorted(targets):
        target = normalize(targets[image_id], stats)
        gen = _averaged_generation(model, stats, provider.get(image_id), sched,
                                   seed, samples_per_image)
        mses.append(mse(gen, target))
        pccs.append(pcc(gen, target))
    return float(np.mean(mses)), float(np.mean(pccs))


def within_subject_eval(models: dict[str, tuple], archive: Archive, provider,
                        sched: NoiseSchedule, seed: int = 0,
                        samples_per_image: int = 1) -> MetricReport:
    """`models` maps subject -> (model, normalization stats) for that subject."""
    mse_row, pcc_row = {}, {}
    for subject, (model, stats) in models.items():
        m, p = _eval_pair(model, stats, archive, provider, sched, subject, seed,
                          samples_per_image)
        mse_row[subject], pcc_row[subject] = m, p
    return MetricReport(mse_per_subject=mse_row, pcc_per_subject=pcc_row)


def cross_subject_eval(models: dict[str, tuple], archive: Archive, provider,
                       sched: NoiseSchedule, seed: int = 0,
                       samples_per_image: int = 1):
    """Each source model against every other subject's test split.

    Returns (mse matrix, pcc matrix).
    """
    n_c = archive.manifest.n_channels
    subjects = list(models)
    mse_vals = {s: {} for s in subjects}
    pcc_vals = {s: {} for s in subjects}
    for source, (model, stats) in models.items():
        if model.cfg.sample_shape[0] != n_c:
            raise DataError(
                f"model for {source} expects {model.cfg.sample_shape[0]} channels, "
                f"archive has {n_c}"
            )
        for target in subjects:
            if target == source:
                continue
            m, p = _eval_pair(model, stats, archive, provider, sched, target, seed,
                              samples_per_image)
            mse_vals[source][target] = m
            pcc_vals[source][target] = p
    return (CrossSubjectMatrix(mse_vals, subjects),
            CrossSubjectMatrix(pcc_vals, subjects))


def strategy_comparison(model_cfg, train_cfg, archive: Archive, provider,
                        sched: NoiseSchedule, subjects: list[str], out_dir,
                        samples_per_image: int = 1) -> dict[FusionMode, MetricReport]:
    """Train one checkpoint per fusion mode on identical data/seed, then
    run the within-subject evaluation for each mode."""
    from dataclasses import replace

    from .trainer import train
    from .unet import build_denoiser

    out_dir = Path(out_dir)
    results: dict[FusionMode, MetricReport] = {}
    for mode in FusionMode:
        models = {}
        for subject in subjects:
            cfg = replace(model_cfg, fusion=mode)
            model = build_denoiser(cfg, train_cfg.seed)
            run_dir = out_dir / f"{mode.value}_{subject}"
            train(train_cfg, model, archive, provider, sched, run_dir, subject)
            from .store import compute_stats

            models[subject] = (model, compute_stats(archive, subject, "train"))
        results[mode] = within_subject_eval(models, archive, provider, sched,
                                            seed=train_cfg.seed,
                                            samples_per_image=samples_per_image)
    return results


def strategy_table_csv(results: dict[FusionMode, MetricReport], metric: str) -> str:
    """One row per fusion mode, per-subject cells plus the average."""
    modes = list(results)
    subjects = list(next(iter(results.values())).mse_per_subject)
    lines = ["method," + ",".join(subjects) + ",average"]
    for mode in modes:
        rep = results[mode]
        row = rep.mse_per_subject if metric == "mse" else rep.pcc_per_subject
        avg = rep.mse_average if metric == "mse" else rep.pcc_average
        cells = [f"{round_half_up(row[s]):.3f}" for s in subjects]
        lines.append(f"{mode.value}," + ",".join(cells) + f",{round_half_up(avg):.3f}")
    return "\n".join(lines) + "\n"
