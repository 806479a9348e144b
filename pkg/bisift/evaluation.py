"""Retrieval metrics: precision and recall at a cutoff, average precision and mAP.

Before any metric is computed the query's own image id is removed from both the
rank list and the relevant set. mAP is averaged per theme first and then over
themes; the flat per-query mean is reported alongside.
"""

import logging
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Set, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from .errors import FormatError, IncompleteResultsError, InvalidInputError, UndefinedRecallError
from .retrieval import RankList

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_CUTOFFS = (1, 5, 10, 30)


class GroundTruth(BaseModel):
    """Themes, each mapping its query ids to their relevant image ids."""

    themes: Dict[str, Dict[str, FrozenSet[str]]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_themes(self) -> "GroundTruth":
        seen: Dict[str, str] = {}
        for theme, queries in self.themes.items():
            for query_id, relevant in queries.items():
                if query_id in seen:
                    raise ValueError(
                        f"Query {query_id!r} appears in themes {seen[query_id]!r} and {theme!r}"
                    )
                if not relevant:
                    raise ValueError(f"Query {query_id!r} has no relevant images")
                seen[query_id] = theme
        return self

    @property
    def query_ids(self) -> List[str]:
        return [q for queries in self.themes.values() for q in queries]

    def relevant(self, query_id: str) -> FrozenSet[str]:
        for queries in self.themes.values():
            if query_id in queries:
                return queries[query_id]
        raise KeyError(query_id)


class MetricReport(BaseModel):
    """Evaluation results of one run."""

    cutoffs: Tuple[int, ...]
    per_query_ap: Dict[str, float]
    per_theme_map: Dict[str, float]
    mean_ap: float
    flat_mean_ap: float
    precision: Dict[int, float]
    recall: Dict[int, float]

    @field_validator("mean_ap", "flat_mean_ap")
    @classmethod
    def check_unit(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"Metric must lie in [0, 1], got: {v}")
        return v

    @field_validator("per_query_ap", "per_theme_map", "precision", "recall")
    @classmethod
    def check_unit_values(cls, v: Dict) -> Dict:
        for key, value in v.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"Metric for {key!r} must lie in [0, 1], got: {value}")
        return v


def _without_self(rank_list: RankList, relevant: Iterable[str]) -> Tuple[List[str], Set[str]]:
    ids = [image_id for image_id in rank_list.image_ids if image_id != rank_list.query_id]
    return ids, set(relevant) - {rank_list.query_id}


def _check_cutoff(k: int) -> None:
    if k < 1:
        raise InvalidInputError(f"Cutoff must be at least 1, got: {k}")


def precision_at(rank_list: RankList, relevant: Iterable[str], k: int) -> float:
    """Fraction of the top ``k`` results that are relevant."""
    _check_cutoff(k)
    ids, wanted = _without_self(rank_list, relevant)
    hits = sum(1 for image_id in ids[:k] if image_id in wanted)
    return hits / k


def recall_at(rank_list: RankList, relevant: Iterable[str], k: int) -> float:
    """Fraction of the relevant images found in the top ``k`` results.

    Raises:
        UndefinedRecallError: If the relevant set is empty
    """
    _check_cutoff(k)
    ids, wanted = _without_self(rank_list, relevant)
    if not wanted:
        raise UndefinedRecallError(f"No relevant images for query {rank_list.query_id!r}")
    hits = sum(1 for image_id in ids[:k] if image_id in wanted)
    return hits / len(wanted)


def average_precision(rank_list: RankList, relevant: Iterable[str]) -> float:
    """Mean precision at the rank of every relevant image; unretrieved ones count 0.

    Raises:
        UndefinedRecallError: If the relevant set is empty
    """
    ids, wanted = _without_self(rank_list, relevant)
    if not wanted:
        raise UndefinedRecallError(f"No relevant images for query {rank_list.query_id!r}")
    hits = 0
    total = 0.0
    for rank, image_id in enumerate(ids, start=1):
        if image_id in wanted:
            hits += 1
            total += hits / rank
    return total / len(wanted)


def theme_means(per_query_ap: Mapping[str, float], gt: GroundTruth) -> Dict[str, float]:
    """Mean AP of every theme's queries.

    Raises:
        IncompleteResultsError: If a ground-truth query has no AP
    """
    means: Dict[str, float] = {}
    for theme, queries in gt.themes.items():
        missing = [q for q in queries if q not in per_query_ap]
        if missing:
            raise IncompleteResultsError(f"No results for query {missing[0]!r} of theme {theme!r}")
        means[theme] = sum(per_query_ap[q] for q in queries) / len(queries)
    return means


def mean_average_precision(per_query_ap: Mapping[str, float], gt: GroundTruth) -> float:
    """Average of per-theme mean APs."""
    means = theme_means(per_query_ap, gt)
    if not means:
        return 0.0
    return sum(means.values()) / len(means)


def evaluate(
    rank_lists: Sequence[RankList], gt: GroundTruth, cutoffs: Sequence[int] = DEFAULT_CUTOFFS
) -> MetricReport:
    """Score every ground-truth query's rank list.

    Raises:
        IncompleteResultsError: If a ground-truth query has no rank list
    """
    cutoffs = tuple(cutoffs)
    for k in cutoffs:
        _check_cutoff(k)
    by_query = {rank_list.query_id: rank_list for rank_list in rank_lists}

    per_query: Dict[str, float] = {}
    precision = {k: 0.0 for k in cutoffs}
    recall = {k: 0.0 for k in cutoffs}
    for query_id in gt.query_ids:
        rank_list = by_query.get(query_id)
        if rank_list is None:
            raise IncompleteResultsError(f"No rank list for ground-truth query {query_id!r}")
        relevant = gt.relevant(query_id)
        per_query[query_id] = average_precision(rank_list, relevant)
        for k in cutoffs:
            precision[k] += precision_at(rank_list, relevant, k)
            recall[k] += recall_at(rank_list, relevant, k)

    count = len(per_query)
    if count:
        precision = {k: v / count for k, v in precision.items()}
        recall = {k: v / count for k, v in recall.items()}
    extra = len(set(by_query) - set(per_query))
    if extra:
        logger.debug(f"Ignored {extra} rank list(s) without ground truth")

    per_theme = theme_means(per_query, gt)
    report = MetricReport(
        cutoffs=cutoffs,
        per_query_ap=per_query,
        per_theme_map=per_theme,
        mean_ap=sum(per_theme.values()) / len(per_theme) if per_theme else 0.0,
        flat_mean_ap=sum(per_query.values()) / count if count else 0.0,
        precision=precision,
        recall=recall,
    )
    logger.info(f"mAP {report.mean_ap:.4f} (flat {report.flat_mean_ap:.4f}) over {count} queries")
    return report


def read_ground_truth(path: PathLike) -> GroundTruth:
    """Parse ``theme<TAB>query_id<TAB>relevant_id`` lines.

    Raises:
        FormatError: Malformed line, or a query listed under two themes
    """
    themes: Dict[str, Dict[str, Set[str]]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise FormatError(f"{path}:{number}: expected theme, query id and relevant id")
        theme, query_id, relevant_id = parts
        themes.setdefault(theme, {}).setdefault(query_id, set()).add(relevant_id)
    try:
        return GroundTruth(themes=themes)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_ground_truth(path: PathLike, gt: GroundTruth) -> None:
    lines = [
        f"{theme}\t{query_id}\t{relevant_id}"
        for theme, queries in gt.themes.items()
        for query_id, relevant in queries.items()
        for relevant_id in sorted(relevant)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def report_rows(report: MetricReport) -> List[Tuple[str, str, float]]:
    """Report as (metric, key, value) rows, headline numbers first."""
    rows: List[Tuple[str, str, float]] = [
        ("map", "all", report.mean_ap),
        ("flat_map", "all", report.flat_mean_ap),
    ]
    rows += [(f"precision@{k}", "all", report.precision[k]) for k in report.cutoffs]
    rows += [(f"recall@{k}", "all", report.recall[k]) for k in report.cutoffs]
    rows += [("theme_map", theme, value) for theme, value in report.per_theme_map.items()]
    rows += [("query_ap", query_id, value) for query_id, value in report.per_query_ap.items()]
    return rows


def write_report(path: PathLike, report: MetricReport) -> None:
    """Write the report as ``metric<TAB>key<TAB>value`` TSV."""
    lines = [f"{metric}\t{key}\t{value:.6f}" for metric, key, value in report_rows(report)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def format_table(report: MetricReport) -> str:
    """Human-readable summary table."""
    lines = [
        f"mAP (per theme, then over themes): {report.mean_ap:.4f}",
        f"mAP (flat over queries):           {report.flat_mean_ap:.4f}",
        "",
        f"{'cutoff':>8}  {'precision':>9}  {'recall':>9}",
    ]
    for k in report.cutoffs:
        lines.append(f"{k:>8}  {report.precision[k]:>9.4f}  {report.recall[k]:>9.4f}")
    lines += ["", f"{'theme':<24}  {'mAP':>7}"]
    for theme, value in report.per_theme_map.items():
        lines.append(f"{theme:<24}  {value:>7.4f}")
    return "\n".join(lines) + "\n"
