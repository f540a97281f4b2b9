"""Bad-tau disparity evaluation with All/Noc splits and checkpoint selection."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import EmptyEvaluationSet, EmptyInput, InconsistentSuite, SizeMismatch
from .formats import read_disparity_png16, read_mask_png, read_pfm
from .rasters import DisparityMap

Weighting = Literal["pair", "pixel"]

DATASET_TAU = {"eth3d": 1.0, "middlebury": 2.0, "kitti": 3.0}


@dataclass(frozen=True)
class EvalConfig:
    tau: float
    name: str = ""

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")

    @classmethod
    def for_family(cls, family: str) -> EvalConfig:
        """Default threshold for ``eth3d``, ``middlebury`` or ``kitti`` (prefix match, so ``kitti15`` works)."""
        key = family.strip().lower()
        for name, tau in DATASET_TAU.items():
            if key.startswith(name):
                return cls(tau, family)
        raise KeyError(f"unknown dataset family {family!r}; expected one of {sorted(DATASET_TAU)}")


@dataclass(frozen=True)
class PairResult:
    all_pct: float
    noc_pct: float
    evaluated_all: int
    evaluated_noc: int
    bad_all: int
    bad_noc: int
    name: str = ""

    def __post_init__(self):
        if not (0 <= self.evaluated_noc <= self.evaluated_all):
            raise ValueError("noc pixel count must not exceed the all pixel count")
        for pct in (self.all_pct, self.noc_pct):
            if not 0.0 <= pct <= 100.0:
                raise ValueError(f"percentage out of range: {pct}")


def _bad_count(pred: DisparityMap, gt: DisparityMap, mask, tau: float) -> tuple[int, int]:
    if pred.shape != gt.shape:
        raise SizeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if mask is None:
        mask = np.ones(gt.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise SizeMismatch(f"mask {mask.shape} vs ground truth {gt.shape}")
    if not tau > 0:
        raise ValueError("tau must be positive")
    evaluated = gt.valid & mask
    n = int(evaluated.sum())
    if n == 0:
        raise EmptyEvaluationSet("no ground-truth pixels inside the mask")
    err = np.abs(np.where(pred.valid, pred.values, 0.0) - gt.values)
    bad = evaluated & (~pred.valid | (err > tau))
    return int(bad.sum()), n


def bad_tau(pred: DisparityMap, gt: DisparityMap, mask, tau: float) -> float:
    """Percentage of evaluated pixels whose error strictly exceeds ``tau``.

    The evaluated set is ``gt.valid & mask``.  Pixels the prediction marks
    invalid count as errors.
    """
    bad, n = _bad_count(pred, gt, mask, tau)
    return 100.0 * bad / n


def evaluate_pair(pred: DisparityMap, gt: DisparityMap, noc_mask, config: EvalConfig,
                  name: str = "") -> PairResult:
    bad_all, n_all = _bad_count(pred, gt, None, config.tau)
    bad_noc, n_noc = _bad_count(pred, gt, noc_mask, config.tau)
    return PairResult(100.0 * bad_all / n_all, 100.0 * bad_noc / n_noc, n_all, n_noc, bad_all, bad_noc, name)


def aggregate(results, weighting: Weighting = "pair") -> tuple[float, float]:
    """Combine pair results into ``(all_pct, noc_pct)``.

    ``pair`` averages the percentages; ``pixel`` divides total bad pixels by
    total evaluated pixels.
    """
    results = list(results)
    if not results:
        raise EmptyInput("no pair results to aggregate")
    if weighting == "pair":
        return (math.fsum(r.all_pct for r in results) / len(results),
                math.fsum(r.noc_pct for r in results) / len(results))
    if weighting == "pixel":
        return (100.0 * sum(r.bad_all for r in results) / sum(r.evaluated_all for r in results),
                100.0 * sum(r.bad_noc for r in results) / sum(r.evaluated_noc for r in results))
    raise ValueError(f"unknown weighting {weighting!r}")


@dataclass
class EvalReport:
    """Per-pair results grouped by dataset, in insertion order."""

    datasets: dict[str, list[PairResult]] = field(default_factory=dict)
    weighting: Weighting = "pair"
    taus: dict[str, float] = field(default_factory=dict)

    def dataset_aggregate(self, name: str) -> tuple[float, float]:
        return aggregate(self.datasets[name], self.weighting)

    def suite_aggregate(self) -> tuple[float, float]:
        """Unweighted mean over datasets of the per-dataset aggregates."""
        if not self.datasets:
            raise EmptyInput("report has no datasets")
        aggs = [self.dataset_aggregate(n) for n in self.datasets]
        return (math.fsum(a for a, _ in aggs) / len(aggs), math.fsum(b for _, b in aggs) / len(aggs))

    def to_dict(self) -> dict:
        out = {"weighting": self.weighting, "datasets": {}}
        for name, pairs in self.datasets.items():
            all_pct, noc_pct = self.dataset_aggregate(name)
            out["datasets"][name] = {
                "tau": self.taus.get(name),
                "all_pct": all_pct,
                "noc_pct": noc_pct,
                "pairs": [asdict(p) for p in pairs],
            }
        if self.datasets:
            all_pct, noc_pct = self.suite_aggregate()
            out["suite"] = {"all_pct": all_pct, "noc_pct": noc_pct}
        return out


def select_best_checkpoint(reports):
    """Checkpoint with the lowest mean per-dataset All percentage.

    ``reports`` maps checkpoint id to :class:`EvalReport`.  Ties keep the
    checkpoint that appears first in the mapping.
    """
    items = list(reports.items())
    if not items:
        raise EmptyInput("no checkpoints given")
    suite = set(items[0][1].datasets)
    if not suite:
        raise InconsistentSuite("reports cover no datasets")
    best_id, best = None, math.inf
    for ckpt, report in items:
        if set(report.datasets) != suite:
            raise InconsistentSuite(f"checkpoint {ckpt!r} covers {sorted(report.datasets)}, expected {sorted(suite)}")
        score = math.fsum(report.dataset_aggregate(n)[0] for n in sorted(suite)) / len(suite)
        if score < best:
            best_id, best = ckpt, score
    return best_id


def render_report(report: EvalReport) -> str:
    name_w = max([len("Dataset"), len("Mean")] + [len(n) for n in report.datasets])
    lines = [f"{'Dataset':<{name_w}}  {'tau':>5}  {'Pairs':>5}  {'All':>7}  {'Noc':>7}"]
    lines.append("-" * len(lines[0]))
    for name, pairs in report.datasets.items():
        all_pct, noc_pct = report.dataset_aggregate(name)
        tau = report.taus.get(name)
        tau_s = f"{tau:g}" if tau is not None else "-"
        lines.append(f"{name:<{name_w}}  {tau_s:>5}  {len(pairs):>5}  {all_pct:>7.2f}  {noc_pct:>7.2f}")
    if report.datasets:
        all_pct, noc_pct = report.suite_aggregate()
        lines.append(f"{'Mean':<{name_w}}  {'':>5}  {'':>5}  {all_pct:>7.2f}  {noc_pct:>7.2f}")
    return "\n".join(lines) + "\n"


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


# ----------------------------------------------------------------- file loading

def load_disparity(path, valid_path=None) -> DisparityMap:
    """Read a disparity map from PFM or 16-bit PNG.

    PFM pixels are valid when finite and positive; a mask PNG at
    ``valid_path`` further restricts them.  PNG disparities use 0 for invalid.
    """
    path = Path(path)
    if path.suffix.lower() == ".png":
        values, valid = read_disparity_png16(path)
    else:
        values = read_pfm(path).astype(np.float64)
        valid = np.isfinite(values) & (values > 0)
        values = np.where(valid, values, 0.0)
    if valid_path is not None:
        extra = read_mask_png(valid_path)
        if extra.shape != valid.shape:
            raise SizeMismatch(f"{valid_path}: mask shape {extra.shape} vs {valid.shape}")
        valid = valid & extra
    return DisparityMap(values, valid)


def _find_prediction(pred_dir: Path, rel: str) -> Path:
    stem = Path(rel).stem
    for cand in (pred_dir / rel, pred_dir / f"{stem}.pfm", pred_dir / f"{stem}.png"):
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"no prediction for {rel} under {pred_dir}")


def evaluate_manifest(pred_dir, manifest_path, config: EvalConfig, jobs: int | None = None) -> list[PairResult]:
    """Evaluate every manifest entry against its prediction in ``pred_dir``.

    Predictions are looked up by the ground-truth disparity path relative to
    ``pred_dir`` or by its stem with a ``.pfm``/``.png`` extension.  Results are
    returned in manifest order.
    """
    from .stereo_synth import DatasetManifest

    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    pred_dir = Path(pred_dir)
    manifest = DatasetManifest.load(manifest_path)
    if not manifest.entries:
        raise EmptyInput(f"{manifest_path}: manifest has no entries")

    def one(entry):
        gt = load_disparity(root / entry.disparity, root / entry.valid if entry.valid else None)
        pred = load_disparity(_find_prediction(pred_dir, entry.disparity))
        noc = read_mask_png(root / entry.noc)
        return evaluate_pair(pred, gt, noc, config, name=Path(entry.disparity).stem)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, manifest.entries))
