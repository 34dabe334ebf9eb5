"""Firm-year panel of extraction bundles with coverage-gap detection.

Bundles are upserted by (cik, fiscal_year) into an append-only JSON Lines
panel; the highest revision per key wins on read. A gap report compares
stored coverage against an external fundamentals roster: a roster key
counts as covered only when a stored bundle actually extracted something
(a non-empty reportable list, or a single-unit classification).
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaError
from .extraction import (
    ExtractionBundle,
    SINGLE_UNIT,
    SegmentRecord,
    bundle_from_json,
    bundle_to_json,
    validate_bundle,
)

PanelKey = tuple[int, int]  # (cik, fiscal_year)


@dataclass(frozen=True)
class GapReport:
    missing: dict[int, list[int]]  # fiscal_year -> sorted ciks
    total_missing: int

    def keys(self) -> set[PanelKey]:
        return {(cik, year) for year, ciks in self.missing.items() for cik in ciks}


@dataclass
class FundamentalsRoster:
    rows: set[PanelKey] = field(default_factory=set)

    @classmethod
    def from_csv(cls, path: str | Path) -> "FundamentalsRoster":
        rows: set[PanelKey] = set()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"cik", "fiscal_year"} <= set(reader.fieldnames):
                raise SchemaError(f"{path}: roster needs 'cik' and 'fiscal_year' columns")
            for line in reader:
                rows.add((int(line["cik"]), int(line["fiscal_year"])))
        return cls(rows=rows)


class SegmentStore:
    """Queryable panel of bundles, persisted as panel.jsonl."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path else None
        self._bundles: dict[PanelKey, ExtractionBundle] = {}
        self._revisions: dict[PanelKey, int] = {}
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            self._load()

    def _load(self) -> None:
        with open(self._path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    bundle = bundle_from_json(row["bundle"])
                    revision = int(row["revision"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise SchemaError(f"{self._path}:{line_no}: bad panel row: {exc}") from exc
                key = bundle.key
                if revision >= self._revisions.get(key, 0):
                    self._bundles[key] = bundle
                    self._revisions[key] = revision

    def put(self, bundle: ExtractionBundle) -> PanelKey:
        validate_bundle(bundle)
        with self._lock:
            key = bundle.key
            revision = self._revisions.get(key, 0) + 1
            self._bundles[key] = bundle
            self._revisions[key] = revision
            if self._path:
                self._path.parent.mkdir(parents=True, exist_ok=True)
                row = {"cik": key[0], "fiscal_year": key[1], "revision": revision,
                       "bundle": bundle_to_json(bundle)}
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
            return key

    def get(self, cik: int, fiscal_year: int) -> ExtractionBundle | None:
        return self._bundles.get((cik, fiscal_year))

    def revision(self, cik: int, fiscal_year: int) -> int:
        return self._revisions.get((cik, fiscal_year), 0)

    def keys(self) -> list[PanelKey]:
        return sorted(self._bundles)

    def __len__(self) -> int:
        return len(self._bundles)

    def query_segments(self, cik: int, years: tuple[int, int] | None = None,
                       axis: str | None = None) -> list[SegmentRecord]:
        """Records for a firm sorted by (year, reportable-first, name)."""
        out: list[tuple] = []
        for (key_cik, year), bundle in self._bundles.items():
            if key_cik != cik:
                continue
            if years is not None and not (years[0] <= year <= years[1]):
                continue
            for tier, records in ((0, bundle.reportable), (1, bundle.nested)):
                for record in records:
                    if axis is not None and record.axis != axis:
                        continue
                    out.append((year, tier, record.name, record))
        out.sort(key=lambda row: row[:3])
        return [row[3] for row in out]

    def segment_names_by_year(self, cik: int, years: tuple[int, int] | None = None) -> list[tuple[int, list[str]]]:
        """(year, reportable names in disclosure order) for each stored year."""
        panel = []
        for (key_cik, year), bundle in sorted(self._bundles.items()):
            if key_cik != cik:
                continue
            if years is not None and not (years[0] <= year <= years[1]):
                continue
            panel.append((year, [r.name for r in bundle.reportable]))
        return panel

    def gap_report(self, roster: FundamentalsRoster) -> GapReport:
        missing: dict[int, list[int]] = {}
        for cik, year in roster.rows:
            bundle = self._bundles.get((cik, year))
            covered = bundle is not None and (
                bool(bundle.reportable) or bundle.classification.kind == SINGLE_UNIT
            )
            if not covered:
                missing.setdefault(year, []).append(cik)
        for year in missing:
            missing[year].sort()
        ordered = {year: missing[year] for year in sorted(missing)}
        return GapReport(missing=ordered, total_missing=sum(len(v) for v in ordered.values()))

    def export_csv(self, path: str | Path) -> Path:
        """One row per (record, measure); measure columns empty when absent."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cik", "fiscal_year", "name", "axis", "parent_name",
                             "measure_kind", "value", "scale"])
            for key in sorted(self._bundles):
                bundle = self._bundles[key]
                for record in [*bundle.reportable, *bundle.nested]:
                    base = [record.cik, record.fiscal_year, record.name, record.axis,
                            record.parent_name or ""]
                    if not record.measures:
                        writer.writerow(base + ["", "", ""])
                        continue
                    for kind in sorted(record.measures):
                        money = record.measures[kind]
                        writer.writerow(base + [kind, str(money.value), money.scale.value])
        return path


def gap_report_to_json(report: GapReport) -> dict:
    return {
        "missing": {str(year): ciks for year, ciks in report.missing.items()},
        "total_missing": report.total_missing,
    }
