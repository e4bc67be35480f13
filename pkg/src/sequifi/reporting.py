"""Cross-strategy comparison tables: markdown and CSV, best and zero-shot marks.

Rows are (stage, strategy, feature-tag) with per-dataset accuracy and macro-F1
in percent. Within one stage, the best value per (feature, dataset, metric) is
bolded; zero-shot cells (datasets not yet trained on) are italicized. Ties all
receive the best mark.
"""

from __future__ import annotations

from dataclasses import dataclass

STRATEGY_DISPLAY = {
    "initial": "IM",
    "vanilla": "FT",
    "sequifi": "SeQuiFi",
    "ewc": "EWC",
    "weight_avg": "WA",
    "replay": "Replay",
}


@dataclass(frozen=True)
class ComparisonRow:
    stage: str
    strategy: str  # display name, e.g. "SeQuiFi"
    feature: str  # e.g. "x-vector"
    accuracy: tuple[float, ...]  # per dataset, percent
    macro_f1: tuple[float, ...]  # per dataset, percent
    seen: tuple[bool, ...]

    @property
    def label(self) -> str:
        return f"{self.strategy} ({self.feature})"


def _best_mask(rows: list[ComparisonRow], num_datasets: int) -> dict[int, tuple[set, set]]:
    """Per row index: (dataset indices with best A, with best F1) in its
    (stage, feature) group."""
    groups: dict[tuple[str, str], list[int]] = {}
    for idx, row in enumerate(rows):
        groups.setdefault((row.stage, row.feature), []).append(idx)
    marks = {idx: (set(), set()) for idx in range(len(rows))}
    for indices in groups.values():
        for d in range(num_datasets):
            best_a = max(rows[i].accuracy[d] for i in indices)
            best_f = max(rows[i].macro_f1[d] for i in indices)
            for i in indices:
                if rows[i].accuracy[d] == best_a:
                    marks[i][0].add(d)
                if rows[i].macro_f1[d] == best_f:
                    marks[i][1].add(d)
    return marks


def _fmt(value: float, best: bool, zero_shot: bool) -> str:
    text = f"{value:.2f}"
    if best:
        text = f"**{text}**"
    if zero_shot:
        text = f"*{text}*"
    return text


def render_comparison_markdown(
    rows: list[ComparisonRow],
    datasets: tuple[str, ...],
    config_hashes: dict[str, str] | None = None,
) -> str:
    """Table grouped by stage; bold = best in stage for that feature and
    dataset, italic = zero-shot."""
    header = ["SD", "Model Type"]
    for name in datasets:
        header.extend([f"{name} A", f"{name} F1"])
    lines = []
    if config_hashes:
        for label, digest in config_hashes.items():
            lines.append(f"<!-- config {label}: {digest} -->")
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] * len(header)) + "|")

    marks = _best_mask(rows, len(datasets))
    stage_order = list(dict.fromkeys(row.stage for row in rows))
    for stage in stage_order:
        for idx, row in enumerate(rows):
            if row.stage != stage:
                continue
            best_a, best_f = marks[idx]
            cells = []
            for d in range(len(datasets)):
                zero_shot = not row.seen[d]
                cells.append(_fmt(row.accuracy[d], d in best_a, zero_shot))
                cells.append(_fmt(row.macro_f1[d], d in best_f, zero_shot))
            lines.append("| " + " | ".join([stage, row.label] + cells) + " |")
    return "\n".join(lines) + "\n"


def render_comparison_csv(rows: list[ComparisonRow], datasets: tuple[str, ...]) -> str:
    marks = _best_mask(rows, len(datasets))
    lines = ["stage,strategy,feature,dataset,zero_shot,accuracy,macro_f1,best_accuracy,best_f1"]
    for idx, row in enumerate(rows):
        best_a, best_f = marks[idx]
        for d, dataset in enumerate(datasets):
            lines.append(
                ",".join(
                    [
                        row.stage,
                        row.strategy,
                        row.feature,
                        dataset,
                        "true" if not row.seen[d] else "false",
                        f"{row.accuracy[d]:.2f}",
                        f"{row.macro_f1[d]:.2f}",
                        "true" if d in best_a else "false",
                        "true" if d in best_f else "false",
                    ]
                )
            )
    return "\n".join(lines) + "\n"
