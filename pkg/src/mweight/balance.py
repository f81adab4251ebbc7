"""Balance diagnostics: sandwich-based balance tests, standardized differences, mirror histograms."""

from __future__ import annotations

import dataclasses
import warnings
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.stats import norm

from .data import ObservationalDataset
from .estimators import ColumnSelection, resolve_cfg, resolve_propensity, stacked_system
from .exceptions import MultipleTestingWarning, UnknownCovariate, ZeroVariance
from .mestimation import sandwich
from .trace import EstimationRecord, record, timed
from .weights import SmoothWeightConfig, effective_sample_sizes, matching_weights

Moment = Literal["mean", "second_moment", "cross_product"]
MOMENTS: tuple[str, ...] = ("mean", "second_moment", "cross_product")
LEVEL = 0.05


# ---------------------------------------------------------------------------
# Balance test
# ---------------------------------------------------------------------------

class BalanceResult(BaseModel):
    covariate: str
    moment:    str
    b_hat:     float
    se:        float
    z:         float
    p_value:   float

    @property
    def rejected(self) -> bool:
        return self.p_value < LEVEL


class BalanceReport(BaseModel):
    results:  list[BalanceResult]
    rejected: int
    flagged:  bool      # more than 1 test in 20 rejected at 0.05


def _moment_values(
    d: ObservationalDataset,
    target: str | Sequence[str],
    moment: str,
) -> tuple[str, np.ndarray]:
    names = [target] if isinstance(target, str) else list(target)
    if moment not in MOMENTS:
        raise ValueError(f"Unknown moment {moment!r}; valid: {list(MOMENTS)}")
    if moment == "cross_product":
        if len(names) != 2:
            raise ValueError("cross_product needs exactly two covariates")
        a = d.covariates[:, d.column_index(names[0])]
        b = d.covariates[:, d.column_index(names[1])]
        return f"{names[0]}*{names[1]}", a * b
    if len(names) != 1:
        raise ValueError(f"{moment} takes a single covariate")
    x = d.covariates[:, d.column_index(names[0])]
    return names[0], x if moment == "mean" else x ** 2


def balance_test(
    d: ObservationalDataset,
    ps_columns: ColumnSelection,
    target: str | Sequence[str],
    moment: Moment = "mean",
    cfg: SmoothWeightConfig | None = None,
    *,
    known_scores: Sequence[float] | np.ndarray | None = None,
    raw: bool = False,
) -> BalanceResult:
    """
    Difference of MW-weighted arm means of g(X), with g the identity, the
    square, or the product of two covariates.

    The SE comes from the sandwich of the stacked (mu_B1, mu_B0, beta)
    system so propensity estimation is accounted for. Under a correct
    propensity model the statistic has mean zero.
    """
    cfg = resolve_cfg(cfg, raw)
    label, g = _moment_values(d, target, moment)
    with timed() as box:
        ps = resolve_propensity(d, ps_columns, known_scores)
        z = d.treatments
        w = matching_weights(ps.scores, z, cfg)
        mu_b1 = float(np.sum(w * z * g) / np.sum(w * z))
        mu_b0 = float(np.sum(w * (1.0 - z) * g) / np.sum(w * (1.0 - z)))

        def head(theta: np.ndarray, e: np.ndarray) -> np.ndarray:
            wt = matching_weights(e, z, cfg)
            return np.column_stack([
                wt * z * (g - theta[0]),
                wt * (1.0 - z) * (g - theta[1]),
            ])

        system = stacked_system(d, 2, head, ps)
        sw = sandwich(system, np.concatenate([[mu_b1, mu_b0], ps.theta]),
                      iterations=ps.iterations)
        contrast = np.zeros(system.dim)
        contrast[:2] = (1.0, -1.0)
        se = sw.contrast_se(contrast)
    record(EstimationRecord(
        estimator="balance",
        n=d.n,
        q=system.dim,
        converged=True,
        iterations=ps.iterations,
        duration_ms=box["duration_ms"],
    ))

    b_hat = mu_b1 - mu_b0
    stat = b_hat / se if se > 0 else 0.0
    return BalanceResult(
        covariate=label,
        moment=moment,
        b_hat=b_hat,
        se=se,
        z=stat,
        p_value=float(2.0 * norm.sf(abs(stat))),
    )


def balance_report(
    d: ObservationalDataset,
    ps_columns: ColumnSelection,
    covariates: Sequence[str],
    moments: Sequence[Moment] = ("mean",),
    cfg: SmoothWeightConfig | None = None,
    *,
    raw: bool = False,
) -> BalanceReport:
    """
    Balance tests for every covariate and single-covariate moment.

    Raw p-values only. Warns when more than 1 test in 20 rejects at 0.05,
    which is more than chance alone would produce under a correct model.
    """
    for name in covariates:
        if name not in d.covariate_names:
            raise UnknownCovariate(name)
    results = [
        balance_test(d, ps_columns, name, moment, cfg, raw=raw)
        for name in covariates
        for moment in moments
        if moment != "cross_product"
    ]
    if "cross_product" in moments:
        for i, a in enumerate(covariates):
            for b in covariates[i + 1:]:
                results.append(balance_test(d, ps_columns, (a, b), "cross_product", cfg, raw=raw))
    rejected = sum(r.rejected for r in results)
    flagged = bool(results) and rejected / len(results) > LEVEL
    if flagged:
        warnings.warn(
            f"{rejected} of {len(results)} balance tests reject at {LEVEL:g}; "
            f"more than expected by chance. Consider revising the propensity model.",
            MultipleTestingWarning,
            stacklevel=2,
        )
    return BalanceReport(results=results, rejected=rejected, flagged=flagged)


# ---------------------------------------------------------------------------
# Standardized difference
# ---------------------------------------------------------------------------

def standardized_difference(
    d: ObservationalDataset,
    weights: Sequence[float] | np.ndarray | None,
    covariate: str,
) -> float:
    """
    |weighted mean difference| / sqrt((s1^2 + s0^2) / 2).

    Arm variances use frequency-weight semantics (divisor sum W). With
    weights=None every subject has weight 1.
    """
    x = d.covariates[:, d.column_index(covariate)]
    w = np.ones(d.n) if weights is None else np.asarray(weights, dtype=float)
    effective_sample_sizes(d, w)  # validates length and sign
    t = d.treated
    m1 = np.average(x[t], weights=w[t])
    m0 = np.average(x[~t], weights=w[~t])
    v1 = np.average((x[t] - m1) ** 2, weights=w[t])
    v0 = np.average((x[~t] - m0) ** 2, weights=w[~t])
    pooled = np.sqrt((v1 + v0) / 2.0)
    if pooled <= 0:
        raise ZeroVariance(covariate)
    return float(abs(m1 - m0) / pooled)


# ---------------------------------------------------------------------------
# Mirror histogram
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class MirrorHistogram:
    """
    Raw and weighted histograms of one variable for each arm.

    Drawn with controls above and treated below a zero line; weighted bars
    sit inside raw ones.
    """

    bin_edges:                np.ndarray
    raw_counts_treated:       np.ndarray
    raw_counts_control:       np.ndarray
    weighted_counts_treated:  np.ndarray
    weighted_counts_control:  np.ndarray

    @property
    def bins(self) -> int:
        return int(self.raw_counts_treated.size)

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "bin_edges": [float(v) for v in self.bin_edges],
            "raw_counts_treated": [int(v) for v in self.raw_counts_treated],
            "raw_counts_control": [int(v) for v in self.raw_counts_control],
            "weighted_counts_treated": [float(v) for v in self.weighted_counts_treated],
            "weighted_counts_control": [float(v) for v in self.weighted_counts_control],
        }


def mirror_histogram(
    d: ObservationalDataset,
    values: Sequence[float] | np.ndarray,
    weights: Sequence[float] | np.ndarray,
    bins: int = 20,
    value_range: tuple[float, float] | None = (0.0, 1.0),
) -> MirrorHistogram:
    """
    Equal-width histograms of ``values`` per arm, unweighted and weighted.

    value_range defaults to [0, 1] for propensity scores; pass None to use
    the observed range of a covariate. Raises ValueError when a value lies
    outside an explicit range.
    """
    if bins < 1:
        raise ValueError(f"bins must be at least 1, got {bins!r}")
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != (d.n,):
        raise ValueError(f"values has shape {v.shape}, expected ({d.n},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    effective_sample_sizes(d, w)

    if value_range is None:
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        value_range = (lo, hi)
    elif np.any((v < value_range[0]) | (v > value_range[1])):
        # every subject must land in a bin so totals reconcile with ESS
        raise ValueError(
            f"values fall outside value_range {tuple(value_range)}; "
            f"pass value_range=None to bin over the observed range"
        )

    t = d.treated
    edges = np.histogram_bin_edges(v, bins=bins, range=value_range)
    raw_t, _ = np.histogram(v[t], bins=edges)
    raw_c, _ = np.histogram(v[~t], bins=edges)
    wt_t, _ = np.histogram(v[t], bins=edges, weights=w[t])
    wt_c, _ = np.histogram(v[~t], bins=edges, weights=w[~t])
    return MirrorHistogram(
        bin_edges=edges,
        raw_counts_treated=raw_t,
        raw_counts_control=raw_c,
        weighted_counts_treated=wt_t,
        weighted_counts_control=wt_c,
    )


_SVG_NS = "http://www.w3.org/2000/svg"
_WIDTH = 640
_HEIGHT = 420
_MARGIN = 48


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_mirror_svg(
    h: MirrorHistogram,
    path: Path | str,
    labels: dict[str, str] | None = None,
) -> Path:
    """
    Write the mirror histogram as SVG.

    Controls are drawn above the horizontal zero line and treated subjects
    below it. Raw counts are outlined bars; weighted counts are filled bars
    inside them. Each (bin, arm) pair is one <g class="bar ..."> group.
    """
    labels = {"title": "", "control": "Z = 0", "treated": "Z = 1", **(labels or {})}
    svg = ET.Element("svg", {
        "xmlns": _SVG_NS,
        "width": str(_WIDTH),
        "height": str(_HEIGHT),
        "viewBox": f"0 0 {_WIDTH} {_HEIGHT}",
    })
    plot_w = _WIDTH - 2 * _MARGIN
    half_h = (_HEIGHT - 2 * _MARGIN) / 2.0
    zero_y = _MARGIN + half_h
    peak = float(max(h.raw_counts_treated.max(initial=0), h.raw_counts_control.max(initial=0), 1))
    bar_w = plot_w / h.bins

    if labels["title"]:
        title = ET.SubElement(svg, "text", {"x": _fmt(_WIDTH / 2), "y": "24", "text-anchor": "middle"})
        title.text = labels["title"]
    top = ET.SubElement(svg, "text", {"x": _fmt(_MARGIN), "y": _fmt(_MARGIN - 6)})
    top.text = labels["control"]
    bottom = ET.SubElement(svg, "text", {"x": _fmt(_MARGIN), "y": _fmt(_HEIGHT - _MARGIN + 16)})
    bottom.text = labels["treated"]

    arms = (
        ("control", h.raw_counts_control, h.weighted_counts_control, -1.0),
        ("treated", h.raw_counts_treated, h.weighted_counts_treated, 1.0),
    )
    for i in range(h.bins):
        x = _MARGIN + i * bar_w
        for arm, raw, weighted, sign in arms:
            group = ET.SubElement(svg, "g", {"class": f"bar {arm}", "data-bin": str(i)})
            for kind, count, style in (
                ("raw", float(raw[i]), {"fill": "none", "stroke": "#333333", "stroke-width": "1"}),
                ("weighted", float(weighted[i]), {"fill": "#7a9cc6", "stroke": "none"}),
            ):
                height = half_h * count / peak
                y = zero_y - height if sign < 0 else zero_y
                ET.SubElement(group, "rect", {
                    "class": kind,
                    "x": _fmt(x),
                    "y": _fmt(y),
                    "width": _fmt(bar_w),
                    "height": _fmt(height),
                    **style,
                })

    ET.SubElement(svg, "line", {
        "class": "zero",
        "x1": _fmt(_MARGIN), "y1": _fmt(zero_y),
        "x2": _fmt(_MARGIN + plot_w), "y2": _fmt(zero_y),
        "stroke": "#000000", "stroke-width": "1",
    })
    for edge_index in sorted({0, h.bins // 2, h.bins}):
        tick = ET.SubElement(svg, "text", {
            "class": "tick",
            "x": _fmt(_MARGIN + edge_index * bar_w),
            "y": _fmt(_HEIGHT - _MARGIN / 3),
            "text-anchor": "middle",
        })
        tick.text = f"{h.bin_edges[edge_index]:.2f}"

    out = Path(path)
    ET.ElementTree(svg).write(out, encoding="utf-8", xml_declaration=True)
    return out
