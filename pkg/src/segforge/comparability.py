"""Longitudinal and cross-firm comparability of segment disclosures.

Two layers. A deterministic layer detects within-firm segment-name changes
by normalized set comparison and aggregates geographic components into
declared region schemes with exact arithmetic. A grounded layer asks the
gateway to interpret detected changes (reason, linkage, prior-to-current
mapping) against retrieved multi-year context, and to arbitrate geographic
labels the scheme does not list. Model answers are validated against
closed vocabularies; malformed answers degrade to "unknown".
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .errors import ScriptMissError, ValidationError
from .gateway import Gateway, PromptRequest
from .retrieval import ChunkIndex, assemble_context, retrieve
from .store import SegmentStore
from .templates import (
    CHANGE_FORMAT_RULES,
    SYSTEM_PREAMBLE,
    change_explanation_question,
    region_membership_question,
)
from .values import Money, Scale, collapse_ws, parse_monetary, percent_of, render_amount

REASON_CLASSES = {
    "internal_reorganization",
    "divestiture",
    "acquisition",
    "new_segment_added",
    "reporting_reclassification",
    "renaming_only",
    "unknown",
}
LINKAGE_CLASSES = {
    "continuation", "merged", "split", "added", "discontinued", "regrouped", "partial",
}

CHANGE_CONTEXT_QUERY = "reportable segments segment reporting change"
CHANGE_TABLE_HEADER = [
    "Year", "Reportable Segment Name(s)", "Change?", "Reason for Change",
    "Linked with Prior Segment?",
]

_STOPWORDS = {"and", "&", "of", "the"}


@dataclass
class ChangeRow:
    fiscal_year: int
    segment_names: list[str]
    changed: bool
    reason: str | None = None
    reason_text: str = ""
    linkage: str | None = None
    linkage_text: str = ""
    mapping: list[tuple[tuple[str, ...], str]] = field(default_factory=list)
    cites: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.changed and (self.reason is not None or self.linkage is not None):
            raise ValueError("unchanged year cannot carry reason or linkage")
        if self.reason is not None and self.reason not in REASON_CLASSES:
            raise ValueError(f"unknown reason class {self.reason!r}")
        if self.linkage is not None and self.linkage not in LINKAGE_CLASSES:
            raise ValueError(f"unknown linkage class {self.linkage!r}")


def normalize_segment_name(name: str) -> str:
    """Fold case/whitespace/conjunction variants for set comparison."""
    text = collapse_ws(name).casefold().replace("&", "and")
    text = re.sub(r"[.,]", "", text)
    return collapse_ws(text)


def initialism(name: str) -> str:
    words = [w for w in re.split(r"[\s\-]+", normalize_segment_name(name)) if w]
    return "".join(w[0] for w in words if w not in _STOPWORDS)


def name_matches(candidate: str, official: str) -> bool:
    """candidate names official either verbatim (normalized) or as initialism."""
    cand = normalize_segment_name(candidate)
    if cand == normalize_segment_name(official):
        return True
    return cand.replace(" ", "") == initialism(official)


def detect_changes(panel: list[tuple[int, list[str]]],
                   warnings: list[str] | None = None) -> list[ChangeRow]:
    """Deterministic layer: changed(y) iff the normalized name set moved.

    The first covered year is reported as unchanged by convention. If years
    are non-consecutive, a GapInYears warning is recorded and detection
    still compares each year against the nearest prior available year.
    """
    rows: list[ChangeRow] = []
    ordered = sorted(panel, key=lambda entry: entry[0])
    previous: set[str] | None = None
    previous_year: int | None = None
    for year, names in ordered:
        current = {normalize_segment_name(n) for n in names}
        if previous is None:
            changed = False
        else:
            if warnings is not None and year != previous_year + 1:
                warnings.append(f"GapInYears: no data between {previous_year} and {year}")
            changed = current != previous
        rows.append(ChangeRow(fiscal_year=year, segment_names=list(names), changed=changed))
        previous = current
        previous_year = year
    return rows


# -- grounded change explanation ---------------------------------------------


def _parse_change_response(text: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, value = line.split(":", 1)
        fields[key.strip().casefold()] = value.strip()
    for required in ("reason", "linkage", "cites"):
        if required not in fields:
            raise ValidationError(f"change answer missing {required!r} line: {text!r}")
    return fields


def _parse_mapping(raw: str, prior_names: list[str], current_names: list[str]):
    mapping: list[tuple[tuple[str, ...], str]] = []
    if not raw:
        return mapping
    for part in raw.split("|"):
        part = part.strip()
        if not part:
            continue
        if "->" not in part:
            raise ValidationError(f"mapping entry without '->': {part!r}")
        left, right = part.split("->", 1)
        sources = tuple(s.strip() for s in left.split("+") if s.strip())
        target = right.strip()
        if not sources or not target:
            raise ValidationError(f"incomplete mapping entry: {part!r}")
        for source in sources:
            if not any(name_matches(source, name) for name in prior_names):
                raise ValidationError(f"mapping source {source!r} not among prior segments")
        if target.casefold() != "discontinued" and not any(
            name_matches(target, name) for name in current_names
        ):
            raise ValidationError(f"mapping target {target!r} not among current segments")
        mapping.append((sources, target))
    return mapping


def explain_changes(cik: int, panel: list[tuple[int, list[str]]], index: ChunkIndex,
                    gateway: Gateway, k: int = 4, budget_chars: int = 12000,
                    warnings: list[str] | None = None) -> list[ChangeRow]:
    """Grounded layer: classify each detected change with retrieved context.

    For every changed year the adjacent years' chunks are retrieved,
    assembled into a provenance-headed context, uploaded as the grounding
    document, and the gateway must answer with one ReasonClass keyword, one
    LinkageClass keyword, a prior-to-current mapping, and chunk citations.
    Any validation failure degrades the row to reason="unknown".
    """
    warnings = warnings if warnings is not None else []
    rows = detect_changes(panel, warnings)
    by_year = {year: names for year, names in panel}
    years = sorted(by_year)
    for row in rows:
        if not row.changed:
            continue
        position = years.index(row.fiscal_year)
        prior_year = years[position - 1]
        results = [
            retrieve(index, CHANGE_CONTEXT_QUERY, k,
                     {"cik": cik, "fiscal_year": year})
            for year in (prior_year, row.fiscal_year)
        ]
        if not any(result.hits for result in results):
            warnings.append(f"RetrievalEmpty: no context for {cik} {row.fiscal_year}")
            row.reason = "unknown"
            row.reason_text = "no retrieved context"
            continue
        context = assemble_context(index, results, budget_chars)
        data = context.text.encode("utf-8")
        handle = gateway.upload_bytes(
            data,
            content_hash=hashlib.sha256(data).hexdigest(),
            display_name=f"context_{cik}_{row.fiscal_year}",
        )
        question = change_explanation_question(
            cik, prior_year, row.fiscal_year, by_year[prior_year], row.segment_names
        )
        request = PromptRequest(
            file=handle,
            question=question,
            request_id=f"chg-{cik}-{row.fiscal_year}-1",
            system_preamble=SYSTEM_PREAMBLE,
            format_rules=CHANGE_FORMAT_RULES,
        )
        try:
            completion = gateway.ask(request)
            fields = _parse_change_response(completion.text)
            reason = fields["reason"].casefold()
            linkage = fields["linkage"].casefold()
            if reason not in REASON_CLASSES:
                raise ValidationError(f"reason {reason!r} outside ReasonClass")
            if linkage not in LINKAGE_CLASSES:
                raise ValidationError(f"linkage {linkage!r} outside LinkageClass")
            cites = [c.strip() for c in fields["cites"].split(";") if c.strip()]
            valid_cites = [c for c in cites if c in context.chunk_ids]
            if not valid_cites:
                raise ValidationError(f"no cited chunk id is in the retrieved context: {cites!r}")
            mapping = _parse_mapping(fields.get("mapping", ""), by_year[prior_year],
                                     row.segment_names)
            explanation = fields.get("explanation", "")
            row.reason = reason
            row.linkage = linkage
            row.mapping = mapping
            row.cites = valid_cites
            row.reason_text = f"{explanation} [cites: {'; '.join(valid_cites)}]".strip()
            row.linkage_text = fields.get("mapping", "")
        except ScriptMissError:
            raise
        except ValidationError as exc:
            warnings.append(f"change explanation for {row.fiscal_year} invalid: {exc}")
            row.reason = "unknown"
            row.linkage = None
            row.reason_text = f"validation failed: {exc}"
    return rows


# -- regional alignment --------------------------------------------------------


@dataclass(frozen=True)
class RegionScheme:
    region_name: str
    member_labels: frozenset[str]  # normalized

    @classmethod
    def from_labels(cls, region_name: str, labels) -> "RegionScheme":
        members = frozenset(normalize_label(label) for label in labels)
        if not members:
            raise ValueError("region scheme needs at least one member label")
        return cls(region_name=region_name, member_labels=members)

    @classmethod
    def from_json(cls, path: str | Path) -> "RegionScheme":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_labels(data["region_name"], data["member_labels"])

    def contains(self, label: str) -> bool:
        return normalize_label(label) in self.member_labels


def normalize_label(label: str) -> str:
    return collapse_ws(label).casefold()


def _label_ambiguous(label: str, scheme: RegionScheme) -> bool:
    tokens = set(re.findall(r"[a-z]+", normalize_label(label)))
    for member in scheme.member_labels:
        if tokens & set(re.findall(r"[a-z]+", member)):
            return True
    return False


@dataclass
class AlignmentRow:
    fiscal_year: int
    firm_a_components: list[tuple[str, Decimal, Scale]]
    firm_b_components: list[tuple[str, Decimal, Scale]]
    firm_a_region_total: Decimal
    firm_b_region_total: Decimal
    firm_a_pct_of_total: Decimal | None
    firm_b_pct_of_total: Decimal | None
    warnings: list[str] = field(default_factory=list)


def _firm_components(store: SegmentStore, cik: int, year: int, scheme: RegionScheme,
                     index: ChunkIndex | None, gateway: Gateway | None,
                     warnings: list[str]) -> list[tuple[str, Decimal, Scale]]:
    components: list[tuple[str, Decimal, Scale]] = []
    for record in store.query_segments(cik, (year, year), axis="geographic"):
        if record.parent_name is not None:
            continue
        member = scheme.contains(record.name)
        if not member and _label_ambiguous(record.name, scheme):
            member = _arbitrate_label(record.name, cik, year, scheme, index, gateway, warnings)
        if not member:
            continue
        money = record.measures.get("revenue")
        if money is None:
            warnings.append(f"{record.name!r} ({cik}, {year}) has no revenue measure; skipped")
            continue
        components.append((record.name, money.value, money.scale))
    return components


def _arbitrate_label(label: str, cik: int, year: int, scheme: RegionScheme,
                     index: ChunkIndex | None, gateway: Gateway | None,
                     warnings: list[str]) -> bool:
    """Resolve a label absent from the scheme via grounded yes/no arbitration."""
    if index is None or gateway is None:
        warnings.append(f"LabelAmbiguity: {label!r} ({cik}, {year}) unresolved; excluded")
        return False
    result = retrieve(index, f"{label} geographic revenue", 4,
                      {"cik": cik, "fiscal_year": year})
    if not result.hits:
        warnings.append(f"LabelAmbiguity: no context for {label!r} ({cik}, {year}); excluded")
        return False
    context = assemble_context(index, [result], 8000)
    data = context.text.encode("utf-8")
    handle = gateway.upload_bytes(
        data, content_hash=hashlib.sha256(data).hexdigest(),
        display_name=f"region_{cik}_{year}",
    )
    request = PromptRequest(
        file=handle,
        question=region_membership_question(label, scheme.region_name, year),
        request_id=f"rgn-{cik}-{year}-{normalize_label(label).replace(' ', '_')}",
        system_preamble=SYSTEM_PREAMBLE,
        format_rules='Return exactly "Yes" or "No".',
    )
    try:
        answer = gateway.ask(request).text.strip().casefold()
        if answer not in ("yes", "no"):
            raise ValidationError(f"expected Yes or No, got {answer!r}")
        return answer == "yes"
    except ScriptMissError:
        raise
    except ValidationError as exc:
        warnings.append(f"LabelAmbiguity: arbitration for {label!r} invalid ({exc}); excluded")
        return False


def _region_total(components: list[tuple[str, Decimal, Scale]]) -> Decimal:
    if not components:
        return Decimal(0)
    return sum((value for _, value, _ in components), Decimal(0))


def _pct_of_revt(store: SegmentStore, cik: int, year: int,
                 components: list[tuple[str, Decimal, Scale]],
                 total: Decimal, warnings: list[str]) -> Decimal | None:
    bundle = store.get(cik, year)
    revt_text = (bundle.general_fields.get("revt", "") if bundle else "").strip()
    try:
        revt = parse_monetary(revt_text)
    except ValueError:
        warnings.append(f"MissingTotalRevenue: no usable revt for ({cik}, {year}); pct omitted")
        return None
    scale = components[0][2] if components else Scale.MILLIONS
    region_units = Money(total, scale).units
    if revt.units == 0:
        warnings.append(f"MissingTotalRevenue: zero revt for ({cik}, {year}); pct omitted")
        return None
    pct = percent_of(region_units, revt.units)
    if pct > 100:
        warnings.append(f"pct over 100 for ({cik}, {year}); possible scale mismatch")
    return pct


def align_regions(firm_a: int, firm_b: int, scheme: RegionScheme,
                  years: tuple[int, int], store: SegmentStore,
                  index: ChunkIndex | None = None,
                  gateway: Gateway | None = None) -> list[AlignmentRow]:
    """Aggregate each firm's in-region geographic components per year.

    Components come from stored geographic records whose normalized label
    is a scheme member; totals are exact Decimal sums, and percentages use
    the bundle's consolidated revt (never re-derived from segment sums).
    """
    rows: list[AlignmentRow] = []
    for year in range(years[0], years[1] + 1):
        warnings: list[str] = []
        parts_a = _firm_components(store, firm_a, year, scheme, index, gateway, warnings)
        parts_b = _firm_components(store, firm_b, year, scheme, index, gateway, warnings)
        if not parts_a and not parts_b and store.get(firm_a, year) is None \
                and store.get(firm_b, year) is None:
            continue
        total_a = _region_total(parts_a)
        total_b = _region_total(parts_b)
        mixed_a = len({s for _, _, s in parts_a}) > 1
        mixed_b = len({s for _, _, s in parts_b}) > 1
        if mixed_a or mixed_b:
            warnings.append(f"mixed component scales in {year}; totals kept at face value")
        pct_a = _pct_of_revt(store, firm_a, year, parts_a, total_a, warnings) if parts_a else Decimal("0.0")
        pct_b = _pct_of_revt(store, firm_b, year, parts_b, total_b, warnings) if parts_b else Decimal("0.0")
        rows.append(
            AlignmentRow(
                fiscal_year=year,
                firm_a_components=parts_a,
                firm_b_components=parts_b,
                firm_a_region_total=total_a,
                firm_b_region_total=total_b,
                firm_a_pct_of_total=pct_a,
                firm_b_pct_of_total=pct_b,
                warnings=warnings,
            )
        )
    return rows


# -- rendering -----------------------------------------------------------------


def _mapping_text(row: ChangeRow) -> str:
    if row.linkage_text:
        return f"{(row.linkage or '').capitalize()} ({row.linkage_text})" if row.linkage else row.linkage_text
    return ""


def render_change_csv(rows: list[ChangeRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CHANGE_TABLE_HEADER)
    for row in rows:
        writer.writerow([
            row.fiscal_year,
            "; ".join(row.segment_names),
            "Yes" if row.changed else "No",
            row.reason_text if row.changed else "",
            _mapping_text(row) if row.changed else "",
        ])
    return buffer.getvalue()


def render_change_text(rows: list[ChangeRow]) -> str:
    table = [CHANGE_TABLE_HEADER]
    for row in rows:
        table.append([
            str(row.fiscal_year),
            "; ".join(row.segment_names),
            "Yes" if row.changed else "No",
            (row.reason or "") if row.changed else "",
            (row.linkage or "") if row.changed else "",
        ])
    widths = [max(len(line[col]) for line in table) for col in range(len(table[0]))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip()
             for line in table]
    lines.insert(1, "-" * max(len(line) for line in lines))
    return "\n".join(lines) + "\n"


def alignment_table_header(firm_a: str, firm_b: str, region: str) -> list[str]:
    return [
        "Year",
        f"Segments in {region} for {firm_a}",
        f"Segments in {region} for {firm_b}",
        f"Detailed Segment Performance for {firm_a}",
        f"Detailed Segment Performance for {firm_b}",
        f"Sales for {firm_a} in {region}",
        f"Sales for {firm_b} in {region}",
        f"% {region} / Total {firm_a}",
        f"% {region} / Total {firm_b}",
    ]


def _detail_cell(components: list[tuple[str, Decimal, Scale]]) -> str:
    return "; ".join(f"{label}, {render_amount(value)}" for label, value, _ in components)


def _pct_cell(pct: Decimal | None) -> str:
    return "" if pct is None else f"{pct}%"


def render_alignment_csv(rows: list[AlignmentRow], firm_a: str, firm_b: str,
                         region: str) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(alignment_table_header(firm_a, firm_b, region))
    for row in rows:
        writer.writerow([
            row.fiscal_year,
            ", ".join(label for label, _, _ in row.firm_a_components),
            ", ".join(label for label, _, _ in row.firm_b_components),
            _detail_cell(row.firm_a_components),
            _detail_cell(row.firm_b_components),
            render_amount(row.firm_a_region_total),
            render_amount(row.firm_b_region_total),
            _pct_cell(row.firm_a_pct_of_total),
            _pct_cell(row.firm_b_pct_of_total),
        ])
    return buffer.getvalue()


def render_alignment_text(rows: list[AlignmentRow], firm_a: str, firm_b: str,
                          region: str) -> str:
    table = [alignment_table_header(firm_a, firm_b, region)]
    for row in rows:
        table.append([
            str(row.fiscal_year),
            ", ".join(label for label, _, _ in row.firm_a_components),
            ", ".join(label for label, _, _ in row.firm_b_components),
            _detail_cell(row.firm_a_components),
            _detail_cell(row.firm_b_components),
            render_amount(row.firm_a_region_total),
            render_amount(row.firm_b_region_total),
            _pct_cell(row.firm_a_pct_of_total),
            _pct_cell(row.firm_b_pct_of_total),
        ])
    widths = [max(len(line[col]) for line in table) for col in range(len(table[0]))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip()
             for line in table]
    lines.insert(1, "-" * max(len(line) for line in lines))
    return "\n".join(lines) + "\n"
