"""Cross-filing chunk index and lexical retrieval.

Filings are split into paragraph-aligned chunks with exact char ranges
back into the parsed text. Ranking is lexical: saturated term frequency
times inverse document frequency with length normalization. Two deliberate
departures from textbook BM25 keep scoring local to each chunk: idf is
ln(1 + 1/df) (no corpus-size term) and length normalization uses a fixed
reference length instead of the corpus average. Adding a chunk that shares
no terms with a query therefore cannot change any existing score, which
makes ranking stable as the corpus grows.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BudgetTooSmallError, SchemaError
from .parsing import FRONT_MATTER, ParsedFiling, locate_segment_regions

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_SEGMENT_BOOST = 1.5
DEFAULT_LEN_NORM_REF = 200
DEFAULT_MIN_CHARS = 800
DEFAULT_MAX_CHARS = 1600


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    cik: int
    fiscal_year: int
    item: str  # item number or "front_matter"
    char_range: tuple[int, int]
    text: str
    is_segment_region: bool

    @property
    def source(self) -> tuple[int, int]:
        return (self.cik, self.fiscal_year)


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    hits: list[tuple[str, float]]  # (chunk_id, score), scores non-increasing
    filter_used: dict | None


@dataclass
class ChunkIndex:
    chunks: list[Chunk]
    doc_freq: dict[str, int]
    chunk_terms: list[dict[str, int]]
    chunk_len: list[int]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    segment_boost: float = DEFAULT_SEGMENT_BOOST
    len_norm_ref: int = DEFAULT_LEN_NORM_REF
    _by_id: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._by_id:
            self._by_id = {chunk.chunk_id: i for i, chunk in enumerate(self.chunks)}

    def chunk(self, chunk_id: str) -> Chunk:
        return self.chunks[self._by_id[chunk_id]]

    def __len__(self) -> int:
        return len(self.chunks)

    def score(self, index: int, query_tokens: list[str]) -> float:
        """Score one chunk against deduplicated, sorted query tokens.

        Token order is the arithmetic order of the summation; callers must
        pass a sorted unique list so scores are bit-reproducible.
        """
        counts = self.chunk_terms[index]
        length = self.chunk_len[index]
        norm = 1.0 - self.b + self.b * (length / self.len_norm_ref)
        total = 0.0
        for token in query_tokens:
            tf = counts.get(token, 0)
            if tf == 0:
                continue
            df = self.doc_freq.get(token, 0)
            idf = math.log(1.0 + 1.0 / df)
            total += idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * norm)
        if total > 0.0 and self.chunks[index].is_segment_region:
            total *= self.segment_boost
        return total


def _paragraph_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    for block in text.split("\n\n"):
        if block.strip():
            spans.append((pos, pos + len(block)))
        pos += len(block) + 2
    return spans


def _pack_spans(spans: list[tuple[int, int]], min_chars: int, max_chars: int) -> list[tuple[int, int]]:
    """Greedy paragraph packing into [min_chars, max_chars] blocks.

    A block only stays under min_chars when it is the last of its section;
    blocks that a single long paragraph pushes past max_chars are split
    evenly so no slice exceeds max_chars.
    """
    blocks: list[tuple[int, int]] = []
    cur: tuple[int, int] | None = None
    for span in spans:
        if cur is None:
            cur = span
        elif (cur[1] - cur[0]) < min_chars or (span[1] - cur[0]) <= max_chars:
            cur = (cur[0], span[1])
        else:
            blocks.append(cur)
            cur = span
    if cur is not None:
        blocks.append(cur)
    out: list[tuple[int, int]] = []
    for start, end in blocks:
        length = end - start
        if length <= max_chars:
            out.append((start, end))
            continue
        slices = -(-length // max_chars)
        size = -(-length // slices)
        for i in range(slices):
            out.append((start + i * size, min(start + (i + 1) * size, end)))
    return out


def build_index(filings: list[ParsedFiling],
                min_chars: int = DEFAULT_MIN_CHARS,
                max_chars: int = DEFAULT_MAX_CHARS,
                k1: float = DEFAULT_K1,
                b: float = DEFAULT_B,
                segment_boost: float = DEFAULT_SEGMENT_BOOST,
                len_norm_ref: int = DEFAULT_LEN_NORM_REF) -> ChunkIndex:
    """Chunk the filings and compute term statistics."""
    chunks: list[Chunk] = []
    for parsed in filings:
        if parsed.ref is None:
            raise SchemaError("build_index needs filings with a FilingRef (cik and year)")
        cik = parsed.ref.cik
        fy = parsed.ref.fiscal_year
        regions = locate_segment_regions(parsed)
        seq = 0
        for section in parsed.sections():
            if not section.text.strip():
                continue
            local = _pack_spans(_paragraph_spans(section.text), min_chars, max_chars)
            item = section.item.number if section.item else FRONT_MATTER
            for start, end in local:
                g_start, g_end = section.start + start, section.start + end
                in_region = any(r.start < g_end and r.end > g_start for r in regions)
                chunks.append(
                    Chunk(
                        chunk_id=f"{cik}_{fy}_{seq:04d}",
                        cik=cik,
                        fiscal_year=fy,
                        item=item,
                        char_range=(g_start, g_end),
                        text=section.text[start:end],
                        is_segment_region=in_region,
                    )
                )
                seq += 1
    doc_freq: dict[str, int] = {}
    chunk_terms: list[dict[str, int]] = []
    chunk_len: list[int] = []
    for chunk in chunks:
        tokens = tokenize(chunk.text)
        counts = dict(Counter(tokens))
        chunk_terms.append(counts)
        chunk_len.append(len(tokens))
        for term in counts:
            doc_freq[term] = doc_freq.get(term, 0) + 1
    return ChunkIndex(
        chunks=chunks,
        doc_freq=doc_freq,
        chunk_terms=chunk_terms,
        chunk_len=chunk_len,
        k1=k1,
        b=b,
        segment_boost=segment_boost,
        len_norm_ref=len_norm_ref,
    )


def build_index_from_config(filings: list[ParsedFiling], config) -> ChunkIndex:
    return build_index(
        filings,
        min_chars=config.get_int("retrieval.min_chunk_chars"),
        max_chars=config.get_int("retrieval.max_chunk_chars"),
        k1=config.get_float("retrieval.k1"),
        b=config.get_float("retrieval.b"),
        segment_boost=config.get_float("retrieval.segment_boost"),
        len_norm_ref=config.get_int("retrieval.len_norm_ref"),
    )


def _matches(chunk: Chunk, metadata_filter: dict | None) -> bool:
    if not metadata_filter:
        return True
    if "cik" in metadata_filter and chunk.cik != metadata_filter["cik"]:
        return False
    if "fiscal_year" in metadata_filter:
        wanted = metadata_filter["fiscal_year"]
        years = wanted if isinstance(wanted, (set, list, tuple)) else {wanted}
        if chunk.fiscal_year not in years:
            return False
    if "item" in metadata_filter and chunk.item != metadata_filter["item"]:
        return False
    return True


def retrieve(index: ChunkIndex, query: str, k: int,
             metadata_filter: dict | None = None) -> RetrievalResult:
    """Top-k chunks by score; ties broken by (fiscal_year, chunk_id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_tokens = sorted(set(tokenize(query)))
    scored: list[tuple[float, int, str]] = []
    for i, chunk in enumerate(index.chunks):
        if not _matches(chunk, metadata_filter):
            continue
        score = index.score(i, query_tokens)
        if score > 0.0:
            scored.append((score, chunk.fiscal_year, chunk.chunk_id))
    scored.sort(key=lambda row: (-row[0], row[1], row[2]))
    hits = [(chunk_id, score) for score, _, chunk_id in scored[:k]]
    filter_copy = dict(metadata_filter) if metadata_filter else None
    return RetrievalResult(query=query, hits=hits, filter_used=filter_copy)


@dataclass(frozen=True)
class ContextBlock:
    text: str
    chunk_ids: list[str]
    spans: list[tuple[str, int, int]]  # every char of text belongs to one chunk

    def provenance_of(self, position: int) -> str:
        for chunk_id, start, end in self.spans:
            if start <= position < end:
                return chunk_id
        raise IndexError(position)


def assemble_context(index: ChunkIndex, results: list[RetrievalResult],
                     budget_chars: int) -> ContextBlock:
    """Merge retrieval results into one grounded context under a budget.

    Chunks are deduplicated, ordered by (fiscal_year, score desc, chunk_id),
    and included greedily; a chunk that does not fit is skipped whole, so
    truncation only happens at chunk boundaries.
    """
    if budget_chars <= 0:
        raise ValueError("budget_chars must be positive")
    best: dict[str, float] = {}
    for result in results:
        for chunk_id, score in result.hits:
            if score > best.get(chunk_id, float("-inf")):
                best[chunk_id] = score
    ordered = sorted(
        best,
        key=lambda cid: (index.chunk(cid).fiscal_year, -best[cid], cid),
    )
    parts: list[str] = []
    spans: list[tuple[str, int, int]] = []
    chunk_ids: list[str] = []
    used = 0
    for chunk_id in ordered:
        chunk = index.chunk(chunk_id)
        header = f"[cik={chunk.cik}, fy={chunk.fiscal_year}, item={chunk.item}, chunk={chunk.chunk_id}]"
        block = f"{header}\n{chunk.text}\n\n"
        if used + len(block) > budget_chars:
            continue
        spans.append((chunk_id, used, used + len(block)))
        parts.append(block)
        chunk_ids.append(chunk_id)
        used += len(block)
    if not chunk_ids:
        raise BudgetTooSmallError(
            f"no retrieved chunk fits in a {budget_chars}-char budget"
        )
    return ContextBlock(text="".join(parts), chunk_ids=chunk_ids, spans=spans)


# -- persistence ---------------------------------------------------------------


def save_index(index: ChunkIndex, directory: str | Path) -> None:
    """Write index.meta.json (chunk table) and index.bin (term statistics)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "params": {
            "k1": index.k1,
            "b": index.b,
            "segment_boost": index.segment_boost,
            "len_norm_ref": index.len_norm_ref,
        },
        "chunks": [
            {
                "chunk_id": c.chunk_id,
                "cik": c.cik,
                "fiscal_year": c.fiscal_year,
                "item": c.item,
                "char_range": list(c.char_range),
                "text": c.text,
                "is_segment_region": c.is_segment_region,
            }
            for c in index.chunks
        ],
    }
    (directory / "index.meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    stats = {
        "doc_freq": dict(sorted(index.doc_freq.items())),
        "chunk_terms": [dict(sorted(t.items())) for t in index.chunk_terms],
        "chunk_len": index.chunk_len,
    }
    (directory / "index.bin").write_text(
        json.dumps(stats, sort_keys=True), encoding="utf-8"
    )


def load_index(directory: str | Path) -> ChunkIndex:
    directory = Path(directory)
    meta = json.loads((directory / "index.meta.json").read_text(encoding="utf-8"))
    stats = json.loads((directory / "index.bin").read_text(encoding="utf-8"))
    chunks = [
        Chunk(
            chunk_id=c["chunk_id"],
            cik=c["cik"],
            fiscal_year=c["fiscal_year"],
            item=c["item"],
            char_range=tuple(c["char_range"]),
            text=c["text"],
            is_segment_region=c["is_segment_region"],
        )
        for c in meta["chunks"]
    ]
    return ChunkIndex(
        chunks=chunks,
        doc_freq=stats["doc_freq"],
        chunk_terms=stats["chunk_terms"],
        chunk_len=stats["chunk_len"],
        k1=meta["params"]["k1"],
        b=meta["params"]["b"],
        segment_boost=meta["params"]["segment_boost"],
        len_norm_ref=meta["params"]["len_norm_ref"],
    )
