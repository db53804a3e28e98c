"""Transmission-efficiency statistics gathered at delivery sites.

ASA (accumulated subject attention) is the share of attention mass that lands
on subject-token columns. SLD (statistic latent difference) is the absolute
difference between the mean of the delivered subject hidden states and the
mean of the generation hidden states at the same site.

Sums are accumulated as exact fractions so regrouping never changes a result.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

SPLITS = ("all", "region", "background")


@dataclass
class SiteRecord:
    site: str
    t: int
    delivered: bool
    subject_sum: float  # sum over queries of head-averaged subject attention mass
    total_sum: float  # sum over queries of head-averaged total mass (= number of queries)
    mean_gen_hidden: float
    mean_subject_hidden: float  # nan when nothing was delivered
    region_subject_sum: float = 0.0
    region_total_sum: float = 0.0
    background_subject_sum: float = 0.0
    background_total_sum: float = 0.0

    @property
    def subject_mass(self) -> float:
        return self.subject_sum / self.total_sum if self.total_sum else 0.0

    @property
    def gen_mass(self) -> float:
        return 1.0 - self.subject_mass

    def sums(self, split: str = "all") -> tuple[float, float]:
        if split == "all":
            return self.subject_sum, self.total_sum
        if split == "region":
            return self.region_subject_sum, self.region_total_sum
        if split == "background":
            return self.background_subject_sum, self.background_total_sum
        raise ValueError(f"unknown split {split!r}")


@dataclass
class AttentionTrace:
    records: list[SiteRecord] = field(default_factory=list)

    def extend(self, other: "AttentionTrace") -> "AttentionTrace":
        self.records.extend(other.records)
        return self

    def delivered_sites(self) -> list[str]:
        seen = []
        for r in self.records:
            if r.delivered and r.site not in seen:
                seen.append(r.site)
        return seen

    def __len__(self):
        return len(self.records)


@dataclass
class ASACell:
    subject: Fraction
    total: Fraction

    @property
    def asa(self) -> float:
        return float(self.subject / self.total) if self.total else 0.0


def asa_accumulate(traces: Iterable[AttentionTrace], group_by: str = "layer",
                   split: str = "all") -> dict:
    """Aggregate ASA per site (``layer``) or per (site, t) (``layer_and_step``).

    Returns ``{key: ASACell}``; ``cell.asa`` is the ratio.
    """
    if group_by not in ("layer", "layer_and_step"):
        raise ValueError(f"unknown grouping {group_by!r}")
    records = [r for tr in traces for r in tr.records]
    if not records:
        raise ValueError("no trace records to aggregate")
    acc: dict = defaultdict(lambda: [Fraction(0), Fraction(0)])
    for r in records:
        key = r.site if group_by == "layer" else (r.site, r.t)
        s, n = r.sums(split)
        acc[key][0] += Fraction(s)
        acc[key][1] += Fraction(n)
    return {k: ASACell(v[0], v[1]) for k, v in acc.items()}


def asa_total(traces: Iterable[AttentionTrace], sites: Iterable[str] | None = None, split: str = "all") -> float:
    """ASA accumulated over the given sites (all sites when None)."""
    cells = asa_accumulate(traces, "layer", split)
    keep = set(cells) if sites is None else set(sites)
    num = sum((c.subject for k, c in cells.items() if k in keep), Fraction(0))
    den = sum((c.total for k, c in cells.items() if k in keep), Fraction(0))
    return float(num / den) if den else 0.0


def sld_from_states(subject_states, gen_states) -> float:
    """|mean(subject) - mean(generation)| over all tokens and channels."""
    return abs(float(subject_states.double().mean()) - float(gen_states.double().mean()))


def sld_compute(traces: Iterable[AttentionTrace]) -> dict[str, float]:
    """Mean per-record SLD at each site; sites that never received a delivery are absent."""
    per_site: dict[str, list[float]] = defaultdict(list)
    for tr in traces:
        for r in tr.records:
            if r.delivered and not math.isnan(r.mean_subject_hidden):
                per_site[r.site].append(abs(r.mean_subject_hidden - r.mean_gen_hidden))
    return {s: math.fsum(v) / len(v) for s, v in per_site.items()}


def write_trace_table(path: Path, rows: list[dict]) -> None:
    """One row per (system, site, step) with ASA splits and SLD."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ValueError("nothing to write")
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def trace_rows(system: str, traces: list[AttentionTrace]) -> list[dict]:
    rows = []
    by_step = {split: asa_accumulate(traces, "layer_and_step", split) for split in SPLITS}
    sld: dict = defaultdict(list)
    for tr in traces:
        for r in tr.records:
            if r.delivered:
                sld[(r.site, r.t)].append(abs(r.mean_subject_hidden - r.mean_gen_hidden))
    for key in sorted(by_step["all"], key=lambda k: (k[0], -k[1])):
        site, t = key
        vals = sld.get(key)
        rows.append({
            "system": system, "site": site, "t": t,
            "asa": by_step["all"][key].asa,
            "asa_region": by_step["region"][key].asa,
            "asa_background": by_step["background"][key].asa,
            "sld": math.fsum(vals) / len(vals) if vals else "",
        })
    return rows


def plot_transmission(path: Path, summary: dict[str, dict[str, dict[str, float]]], sites: list[str]) -> None:
    """Per-site ASA and SLD bars for each system (layout of a two-panel comparison).

    ``summary[system] = {"asa": {site: v}, "sld": {site: v}}``.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    width = 0.8 / max(len(summary), 1)
    for i, (name, stats) in enumerate(summary.items()):
        xs = [j + i * width for j in range(len(sites))]
        axes[0].bar(xs, [stats["asa"].get(s, 0.0) for s in sites], width, label=name)
        axes[1].bar(xs, [stats["sld"].get(s, float("nan")) for s in sites], width, label=name)
    for ax, title in zip(axes, ("accumulated subject attention", "statistic latent difference")):
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(sites))])
        ax.set_xticklabels(sites)
        ax.set_title(title)
    axes[0].legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_asa_heatmap(path: Path, traces: list[AttentionTrace], sites: list[str], split: str = "all") -> None:
    """ASA accumulated along sites (rows) and denoising steps (columns)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    cells = asa_accumulate(traces, "layer_and_step", split)
    steps = sorted({k[1] for k in cells}, reverse=True)
    grid = np.array([[cells[(s, t)].asa if (s, t) in cells else np.nan for t in steps] for s in sites])
    fig, ax = plt.subplots(figsize=(7, 2.6))
    im = ax.imshow(grid, aspect="auto", cmap="magma")
    ax.set_yticks(range(len(sites)))
    ax.set_yticklabels(sites)
    ax.set_xticks(range(len(steps)))
    ax.set_xticklabels(steps, rotation=90, fontsize=6)
    ax.set_xlabel("timestep")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def record_dicts(trace: AttentionTrace) -> list[dict]:
    return [asdict(r) for r in trace.records]
