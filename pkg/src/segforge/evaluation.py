"""Evaluation protocol: random sampling, cell accuracy, Table-2 reports.

Gold labels are human-authored JSON; this module never invents truth. A
group pairs a filing sample with a cell sample; scoring compares model
classifications and extracted cell values against the gold labels, with
monetary normalization so "$3,300 million" and "3,300 million" agree.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CoverageError, SampleTooLargeError, SchemaError
from .extraction import ExtractionBundle, MULTI_SEGMENT
from .values import normalized_value_equal, render_amount

PanelKey = tuple[int, int]


@dataclass(frozen=True)
class GoldFiling:
    cik: int
    fiscal_year: int
    is_multi_segment: bool
    has_nested: bool

    @property
    def key(self) -> PanelKey:
        return (self.cik, self.fiscal_year)


@dataclass(frozen=True)
class GoldCell:
    cik: int
    fiscal_year: int
    segment: str
    measure: str  # measure kind or general field name
    gold_value: str
    tier: str = ""  # "reportable" | "nested" | "" (derive from bundle)
    correct: bool | None = None  # audit-workflow placeholder

    @property
    def key(self) -> PanelKey:
        return (self.cik, self.fiscal_year)


@dataclass
class GoldLabelSet:
    group_id: str
    filings: list[GoldFiling] = field(default_factory=list)
    cells: list[GoldCell] = field(default_factory=list)

    @classmethod
    def from_json(cls, path: str | Path) -> "GoldLabelSet":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "GoldLabelSet":
        filings = [
            GoldFiling(
                cik=int(row["cik"]),
                fiscal_year=int(row["fiscal_year"]),
                is_multi_segment=bool(row["is_multi_segment"]),
                has_nested=bool(row["has_nested"]),
            )
            for row in data.get("filings", [])
        ]
        cells = []
        for row in data.get("cells", []):
            if not str(row.get("gold_value", "")).strip():
                raise SchemaError(f"gold cell with empty gold_value: {row!r}")
            cells.append(
                GoldCell(
                    cik=int(row["cik"]),
                    fiscal_year=int(row["fiscal_year"]),
                    segment=row["segment"],
                    measure=row["measure"],
                    gold_value=str(row["gold_value"]),
                    tier=row.get("tier", ""),
                    correct=row.get("correct"),
                )
            )
        return cls(group_id=str(data.get("group_id", "group")), filings=filings, cells=cells)


@dataclass(frozen=True)
class CellVerdict:
    cik: int
    fiscal_year: int
    segment: str
    measure: str
    gold_value: str
    extracted_value: str
    correct: bool
    tier: str


@dataclass
class EvalReport:
    group_id: str
    n_filings: int
    n_multi_manual: int
    n_multi_model: int
    primary_accuracy: float
    n_nested_manual: int
    n_nested_model: int
    nested_accuracy: float
    primary_verdicts: list[CellVerdict] = field(default_factory=list)
    nested_verdicts: list[CellVerdict] = field(default_factory=list)

    def __post_init__(self):
        for value in (self.primary_accuracy, self.nested_accuracy):
            if not (0.0 <= value <= 100.0):
                raise ValueError(f"accuracy out of range: {value}")
        for count in (self.n_multi_manual, self.n_multi_model,
                      self.n_nested_manual, self.n_nested_model):
            if count > self.n_filings:
                raise ValueError("classification count exceeds n_filings")


# -- sampling ------------------------------------------------------------------


def sample_filings(corpus: list[PanelKey], n: int, seed: int) -> list[PanelKey]:
    """Uniform sample without replacement, deterministic under a fixed seed."""
    if n > len(corpus):
        raise SampleTooLargeError(f"asked for {n} of {len(corpus)} filings")
    ordered = sorted(corpus)
    return random.Random(seed).sample(ordered, n)


def sample_cells(bundles: list[ExtractionBundle], n: int, seed: int,
                 tier: str = "reportable") -> list[tuple[PanelKey, str, str]]:
    """Sample (firm-year, segment, measure) triples of the requested tier."""
    if tier not in ("reportable", "nested"):
        raise ValueError(f"tier must be reportable or nested, got {tier!r}")
    eligible: list[tuple[PanelKey, str, str]] = []
    for bundle in bundles:
        records = bundle.reportable if tier == "reportable" else bundle.nested
        for record in records:
            for measure in sorted(record.measures):
                eligible.append((bundle.key, record.name, measure))
    eligible.sort()
    if n > len(eligible):
        raise SampleTooLargeError(f"asked for {n} of {len(eligible)} eligible {tier} cells")
    return random.Random(seed).sample(eligible, n)


# -- scoring -------------------------------------------------------------------


def _extracted_cell_value(bundle: ExtractionBundle, cell: GoldCell) -> tuple[str, str]:
    """Returns (extracted string, tier). Missing values come back empty."""
    for tier, records in (("reportable", bundle.reportable), ("nested", bundle.nested)):
        if cell.tier and cell.tier != tier:
            continue
        for record in records:
            if record.name == cell.segment:
                money = record.measures.get(cell.measure)
                if money is None:
                    return "", tier
                return f"{render_amount(money.value)} {money.scale.value}", tier
    if cell.segment == "" and cell.measure in bundle.general_fields:
        return bundle.general_fields[cell.measure], cell.tier or "reportable"
    return "", cell.tier or "reportable"


def score(gold: GoldLabelSet, bundles: list[ExtractionBundle]) -> EvalReport:
    """Score classification agreement and cell accuracy against gold labels."""
    if not gold.cells:
        raise CoverageError("gold label set has no cells to score")
    by_key = {bundle.key: bundle for bundle in bundles}
    for filing in gold.filings:
        if filing.key not in by_key:
            raise CoverageError(f"no bundle for gold filing {filing.key}")

    n_multi_manual = sum(1 for f in gold.filings if f.is_multi_segment)
    n_multi_model = sum(
        1 for f in gold.filings
        if by_key[f.key].classification.kind == MULTI_SEGMENT
    )
    n_nested_manual = sum(1 for f in gold.filings if f.has_nested)
    n_nested_model = sum(1 for f in gold.filings if by_key[f.key].nested)

    primary: list[CellVerdict] = []
    nested: list[CellVerdict] = []
    for cell in gold.cells:
        bundle = by_key.get(cell.key)
        if bundle is None:
            raise CoverageError(f"no bundle for gold cell {cell.key}")
        extracted, tier = _extracted_cell_value(bundle, cell)
        correct = bool(extracted) and normalized_value_equal(extracted, cell.gold_value)
        verdict = CellVerdict(
            cik=cell.cik,
            fiscal_year=cell.fiscal_year,
            segment=cell.segment,
            measure=cell.measure,
            gold_value=cell.gold_value,
            extracted_value=extracted,
            correct=correct,
            tier=tier,
        )
        (primary if tier == "reportable" else nested).append(verdict)

    return EvalReport(
        group_id=gold.group_id,
        n_filings=len(gold.filings),
        n_multi_manual=n_multi_manual,
        n_multi_model=n_multi_model,
        primary_accuracy=_accuracy(primary),
        n_nested_manual=n_nested_manual,
        n_nested_model=n_nested_model,
        nested_accuracy=_accuracy(nested),
        primary_verdicts=primary,
        nested_verdicts=nested,
    )


def _accuracy(verdicts: list[CellVerdict]) -> float:
    if not verdicts:
        return 0.0
    return round(100.0 * sum(1 for v in verdicts if v.correct) / len(verdicts), 1)


# -- reporting -----------------------------------------------------------------


def report_to_json(report: EvalReport) -> dict:
    def verdict_dict(v: CellVerdict) -> dict:
        return {
            "cik": v.cik,
            "fiscal_year": v.fiscal_year,
            "segment": v.segment,
            "measure": v.measure,
            "gold_value": v.gold_value,
            "extracted_value": v.extracted_value,
            "correct": v.correct,
            "tier": v.tier,
        }

    return {
        "group_id": report.group_id,
        "n_filings": report.n_filings,
        "n_multi_manual": report.n_multi_manual,
        "n_multi_model": report.n_multi_model,
        "primary_accuracy": report.primary_accuracy,
        "n_nested_manual": report.n_nested_manual,
        "n_nested_model": report.n_nested_model,
        "nested_accuracy": report.nested_accuracy,
        "primary_verdicts": [verdict_dict(v) for v in report.primary_verdicts],
        "nested_verdicts": [verdict_dict(v) for v in report.nested_verdicts],
    }


_TABLE2_ROWS = [
    ("Num of 10-K Filings", lambda r: str(r.n_filings)),
    ("Num of Firms with Multi-Segment Disclosure", lambda r: str(r.n_multi_manual)),
    ("Model Identified Multi-Segment Filings", lambda r: str(r.n_multi_model)),
    ("Primary Segment Extraction Accuracy (%)", lambda r: f"{r.primary_accuracy}%"),
    ("Num of Observations with Nested Disclosure", lambda r: str(r.n_nested_manual)),
    ("Model Identified Nested Disclosure", lambda r: str(r.n_nested_model)),
    ("Nested Segment Extraction Accuracy (%)", lambda r: f"{r.nested_accuracy}%"),
]


def render_table2(reports: list[EvalReport]) -> str:
    """Text block shaped like the evaluation summary table."""
    header = [""] + [r.group_id for r in reports]
    lines = [header] + [
        [label] + [value_of(r) for r in reports] for label, value_of in _TABLE2_ROWS
    ]
    widths = [max(len(line[col]) for line in lines) for col in range(len(header))]
    rendered = []
    for line in lines:
        cells = [line[0].ljust(widths[0])]
        cells += [line[i].rjust(widths[i]) for i in range(1, len(line))]
        rendered.append("  ".join(cells).rstrip())
    rendered.insert(1, "-" * max(len(row) for row in rendered))
    return "\n".join(rendered) + "\n"
