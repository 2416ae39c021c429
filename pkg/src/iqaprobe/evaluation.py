"""Robustness metrics: rank correlation between predictions and reference
quality, the log stability ratio of a model under counterexamples, and the
intra/inter-model transfer grid built from selected counterexamples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import save_png, validate_image
from .quality import QualityModel


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ScorePair:
    """One scored image: reference quality and model prediction."""

    image_id: str
    mos: float
    prediction: float

    def __post_init__(self):
        if not (math.isfinite(self.mos) and math.isfinite(self.prediction)):
            raise EvaluationError(f"non-finite score for {self.image_id!r}")


def _fractional_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with average ranks assigned to ties."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(a, b) -> float:
    """Spearman rank correlation: Pearson over fractional ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("srcc needs two equal-length vectors")
    if len(a) < 2:
        raise EvaluationError("srcc needs at least two points")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise EvaluationError("srcc inputs must be finite")
    ra = _fractional_ranks(a)
    rb = _fractional_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    na = float(np.sqrt((da**2).sum()))
    nb = float(np.sqrt((db**2).sum()))
    if na == 0.0 or nb == 0.0:
        raise EvaluationError("rank correlation undefined for a constant vector")
    return float((da * db).sum() / (na * nb))


def stability_ratio(
    initial,
    attacked,
    beta1: float = 10.0,
    beta2: float = 0.0,
) -> tuple[float, int]:
    """Mean log ratio of the maximum allowable prediction change to the
    observed change. Items with zero observed change are undefined and are
    excluded; the count of exclusions is returned alongside R. When every
    item is excluded R is +inf (the unattacked limit). Natural logarithm.
    """
    f0 = np.asarray(initial, dtype=np.float64)
    f1 = np.asarray(attacked, dtype=np.float64)
    if f0.shape != f1.shape or f0.ndim != 1 or len(f0) < 1:
        raise EvaluationError("stability_ratio needs two equal-length vectors")
    if (f0 < beta2).any() or (f0 > beta1).any():
        raise EvaluationError(
            f"initial predictions must lie in [{beta2}, {beta1}]"
        )
    allowable = np.maximum(beta1 - f0, f0 - beta2)
    delta = np.abs(f0 - f1)
    keep = delta > 0.0
    excluded = int((~keep).sum())
    if not keep.any():
        return math.inf, excluded
    terms = np.log(allowable[keep] / delta[keep])
    return float(terms.mean()), excluded


@dataclass
class TransferCell:
    """One grid entry: the attacked model scored on counterexamples that
    were generated against the source model under one fidelity measure."""

    attacked: str
    source: str
    measure: str
    srcc: float | None = None
    r: float | None = None
    excluded: int = 0
    mean_abs_delta: float | None = None
    absent: bool = False

    @property
    def intra(self) -> bool:
        return self.attacked == self.source


def transfer_matrix(
    models: dict[str, QualityModel],
    measures: list[str],
    initials: dict[str, np.ndarray],
    counterexamples: dict[tuple[str, str, str], np.ndarray],
    proxy_mos: dict[str, float],
) -> list[TransferCell]:
    """Score every (attacked model, source model, measure) combination.

    `counterexamples` maps (source model id, measure id, image id) to the
    selected counterexample image. Each cell reports SRCC over the union of
    initial and counterexample points (a counterexample inherits its initial
    image's reference quality), the stability ratio R, and the mean absolute
    prediction change. A cell with no counterexamples at all is marked
    absent rather than zero.
    """
    if not initials:
        raise EvaluationError("no initial images")
    image_ids = sorted(initials)
    cells = []
    cache: dict[tuple[str, str], float] = {}

    def predict(model_key: str, image_key: str, img: np.ndarray) -> float:
        k = (model_key, image_key)
        if k not in cache:
            cache[k] = models[model_key].score(img)
        return cache[k]

    for attacked in sorted(models):
        for source in sorted(models):
            for measure in measures:
                pairs = [
                    (iid, counterexamples[(source, measure, iid)])
                    for iid in image_ids
                    if (source, measure, iid) in counterexamples
                ]
                if not pairs:
                    cells.append(
                        TransferCell(attacked, source, measure, absent=True)
                    )
                    continue
                mos, preds = [], []
                f_init, f_atk = [], []
                for iid, counter in pairs:
                    p0 = predict(attacked, iid, initials[iid])
                    p1 = predict(attacked, f"{source}/{measure}/{iid}", counter)
                    mos += [proxy_mos[iid], proxy_mos[iid]]
                    preds += [p0, p1]
                    f_init.append(p0)
                    f_atk.append(p1)
                r, excluded = stability_ratio(f_init, f_atk)
                cells.append(
                    TransferCell(
                        attacked=attacked,
                        source=source,
                        measure=measure,
                        srcc=srcc(mos, preds),
                        r=r,
                        excluded=excluded,
                        mean_abs_delta=float(
                            np.abs(np.array(f_init) - np.array(f_atk)).mean()
                        ),
                    )
                )
    return cells


def write_report(cells: list[TransferCell], path) -> None:
    """Tab-separated transfer report; one row per cell. R uses the natural
    logarithm; an all-excluded cell prints R as the literal "inf"."""
    lines = [
        "# stability ratio R uses the natural logarithm",
        "attacked\tsource\tmeasure\tsrcc\tR\texcluded\tmean_abs_delta",
    ]
    for c in cells:
        if c.absent:
            lines.append(f"{c.attacked}\t{c.source}\t{c.measure}\tabsent\tabsent\t0\tabsent")
            continue
        r_text = "inf" if math.isinf(c.r) else f"{c.r:.6f}"
        lines.append(
            f"{c.attacked}\t{c.source}\t{c.measure}\t{c.srcc:.6f}"
            f"\t{r_text}\t{c.excluded}\t{c.mean_abs_delta:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> list[TransferCell]:
    cells = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("attacked\t"):
            continue
        att, src, meas, s, r, exc, mad = line.split("\t")
        if s == "absent":
            cells.append(TransferCell(att, src, meas, absent=True))
            continue
        cells.append(
            TransferCell(
                attacked=att,
                source=src,
                measure=meas,
                srcc=float(s),
                r=float(r),
                excluded=int(exc),
                mean_abs_delta=float(mad),
            )
        )
    return cells


def residual_map(x0: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Absolute residual |x0 - y|, rescaled so the largest deviation maps to
    white. An identical pair yields an all-black map."""
    x0 = validate_image(x0)
    y = validate_image(y)
    if x0.shape != y.shape:
        raise EvaluationError("residual map needs same-shape images")
    r = np.abs(x0 - y)
    peak = r.max()
    return r / peak if peak > 0 else r


def save_residual_maps(
    initials: dict[str, np.ndarray],
    counterexamples: dict[tuple[str, str, str], np.ndarray],
    outdir,
) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for (source, measure, iid), counter in sorted(counterexamples.items()):
        path = outdir / f"residual_{source}_{measure}_{iid}.png"
        save_png(residual_map(initials[iid], counter), path)
        written.append(path)
    return written
