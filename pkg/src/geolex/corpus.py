"""Corpus ingestion: OCR page dumps in, line-delimited entry dataset out.

Raw input is one UTF-8 text file per scanned page, laid out on disk as
``<raw_dir>/<volume>/<page>.txt``.  Segmentation walks each volume's
pages in order and starts a new entry at every line whose first token
looks like a headword: capitalized, and followed by a comma or period
within the first 40 characters of the line.  Lines that do not look
like a headword continue the current entry, across page breaks too.
Line-break hyphenation from the typesetting is undone while joining
(``Rhen-`` + ``provinsen`` becomes ``Rhenprovinsen``).

Each entry also stores a short definition: the first 200 characters of
the entry text, cut back to the last sentence boundary inside that
window.  Downstream stages (classification, linking) read only the
definition, never the full text.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DatasetError

logger = logging.getLogger(__name__)

# Definition budget: keep this many characters, then cut back to the
# last period inside the kept prefix (if any).
MAX_DEFINITION_CHARS = 200

# A headword line must show its comma/period this close to the start.
ENTRY_START_WINDOW = 40

# Punctuation stripped from the end of a headword token.
_HEADWORD_TRAILING = ",.:;"

# Serialized field order.  Optional fields are omitted until the stage
# that fills them has run, so freshly ingested records stay short.
_REQUIRED_FIELDS = ("id", "volume", "page", "headword", "definition", "raw_text")
_OPTIONAL_FIELDS = ("is_location", "qid", "similarity", "lat", "lon")
_ALL_FIELDS = _REQUIRED_FIELDS + _OPTIONAL_FIELDS


@dataclass(frozen=True)
class RawPage:
    """One scanned page: volume number, page number, OCR text."""

    volume: int
    page_no: int
    text: str

    def __post_init__(self) -> None:
        if self.volume < 1:
            raise ValueError(f"volume must be >= 1, got {self.volume}")
        if self.page_no < 1:
            raise ValueError(f"page_no must be >= 1, got {self.page_no}")
        if not self.text.strip():
            raise ValueError(f"page {self.volume}:{self.page_no} has no text")


@dataclass
class Entry:
    """One encyclopedia entry, with optional enrichment fields.

    ``is_location``, ``qid``, ``similarity``, ``lat`` and ``lon`` start
    unset and are filled in by the classify, link and coords stages.
    """

    id: str
    volume: int
    page: int
    headword: str
    definition: str
    raw_text: str
    is_location: bool | None = None
    qid: str | None = None
    similarity: float | None = None
    lat: float | None = None
    lon: float | None = None


@dataclass(frozen=True)
class CorpusStats:
    entry_count: int
    mean_words_per_entry: float
    mean_chars_per_entry: float


def truncate_definition(text: str) -> str:
    """Cut ``text`` to the definition budget.

    Keeps the first 200 characters, then drops everything after the
    last period inside that prefix.  A prefix with no period at all is
    kept whole.  Applying the cut twice changes nothing.
    """
    prefix = text[:MAX_DEFINITION_CHARS]
    last_period = prefix.rfind(".")
    if last_period == -1:
        return prefix
    return prefix[: last_period + 1]


def extract_headword(raw_text: str) -> str:
    """First token of the entry, minus trailing punctuation.

    Bracketed pronunciation hints (``Aachen [ak-]. ...``) never land in
    the headword: the bracket either starts a later token or, when the
    OCR glued it on, gets cut off the first one.
    """
    tokens = raw_text.split()
    if not tokens:
        raise ValueError("entry text is blank; no headword to extract")
    token = tokens[0]
    bracket = token.find("[")
    if bracket != -1:
        token = token[:bracket]
    token = token.rstrip(_HEADWORD_TRAILING)
    if not token:
        raise ValueError(f"no usable headword at {raw_text[:40]!r}")
    return token


def looks_like_entry_start(line: str) -> bool:
    """Headword heuristic for one raw line.

    True when the line starts with an uppercase letter and a comma or
    period appears within the first 40 characters.  Continuation lines
    in the source start lowercase (or with digits/parens), so this
    cheaply separates headword lines from wrapped text.
    """
    stripped = line.lstrip()
    if not stripped:
        return False
    first = stripped[0]
    if not (first.isalpha() and first.isupper()):
        return False
    window = stripped[:ENTRY_START_WINDOW]
    return "," in window or "." in window


def _join_lines(lines: list[str]) -> str:
    """Join wrapped lines, undoing line-break hyphenation.

    A trailing hyphen followed by a lowercase continuation is a
    typesetting artifact and the fragments are fused; anything else
    joins with a single space.  Whitespace is collapsed in the result.
    """
    text = ""
    for line in lines:
        if not text:
            text = line
        elif text.endswith("-") and line[:1].islower():
            text = text[:-1] + line
        else:
            text = text + " " + line
    return " ".join(text.split())


def segment_pages(pages: Iterable[RawPage]) -> list[Entry]:
    """Split a stream of pages into entries.

    Pages must arrive sorted by (volume, page_no) with no duplicates.
    Volumes are independent: an entry never continues across a volume
    boundary.  Text before the first headword line of a volume (front
    matter, running heads) has no entry to belong to and is dropped.

    Entry ids are ``volume:page:ordinal`` where page is the page the
    entry starts on and ordinal counts entries starting on that page,
    from 1.
    """
    entries: list[Entry] = []
    last_key: tuple[int, int] | None = None
    current_volume: int | None = None
    current_lines: list[str] = []
    current_start: tuple[int, int] | None = None  # (page_no, ordinal)
    starts_on_page = 0

    def flush() -> None:
        if current_start is None:
            return
        page_no, ordinal = current_start
        raw_text = _join_lines(current_lines)
        entries.append(
            Entry(
                id=f"{current_volume}:{page_no}:{ordinal}",
                volume=current_volume,
                page=page_no,
                headword=extract_headword(raw_text),
                definition=truncate_definition(raw_text),
                raw_text=raw_text,
            )
        )

    for page in pages:
        key = (page.volume, page.page_no)
        if last_key is not None and key <= last_key:
            raise ValueError(
                f"pages out of order: {key} after {last_key}; "
                "sort by (volume, page) and drop duplicates"
            )
        last_key = key
        if page.volume != current_volume:
            flush()
            current_volume = page.volume
            current_lines = []
            current_start = None
        starts_on_page = 0
        for raw_line in page.text.splitlines():
            line = raw_line.strip()
            if not line:
                continue
            if looks_like_entry_start(line):
                flush()
                starts_on_page += 1
                current_start = (page.page_no, starts_on_page)
                current_lines = [line]
            elif current_start is not None:
                current_lines.append(line)
            else:
                logger.debug(
                    "dropping pre-entry text on page %s:%s: %r",
                    page.volume, page.page_no, line[:60],
                )
    flush()
    return entries


def corpus_stats(entries: Iterable[Entry]) -> CorpusStats:
    """Entry count plus mean words/chars per entry (over full text)."""
    count = 0
    words = 0
    chars = 0
    for entry in entries:
        count += 1
        words += len(entry.raw_text.split())
        chars += len(entry.raw_text)
    if count == 0:
        return CorpusStats(0, 0.0, 0.0)
    return CorpusStats(count, words / count, chars / count)


def read_raw_pages(raw_dir: str | os.PathLike[str]) -> list[RawPage]:
    """Load ``<raw_dir>/<volume>/<page>.txt`` dumps, sorted by (volume, page).

    Directories and files whose names are not positive integers are
    skipped with a warning; pages that OCR'd to nothing are skipped
    silently.
    """
    root = Path(raw_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"raw corpus directory not found: {root}")
    pages: list[RawPage] = []
    for vol_dir in sorted(root.iterdir(), key=lambda p: p.name):
        if not vol_dir.is_dir():
            continue
        if not vol_dir.name.isdigit():
            logger.warning("skipping non-volume directory %s", vol_dir)
            continue
        volume = int(vol_dir.name)
        for page_file in sorted(vol_dir.glob("*.txt"), key=lambda p: p.name):
            if not page_file.stem.isdigit():
                logger.warning("skipping non-page file %s", page_file)
                continue
            text = page_file.read_text(encoding="utf-8")
            if not text.strip():
                continue
            pages.append(RawPage(volume, int(page_file.stem), text))
    pages.sort(key=lambda p: (p.volume, p.page_no))
    return pages


# ── Dataset serialization (JSON lines, fixed field order) ───────────────


def entry_to_record(entry: Entry) -> dict:
    record = {}
    for name in _ALL_FIELDS:
        value = getattr(entry, name)
        if value is not None:
            record[name] = value
    return record


def entry_from_record(record: dict, where: str = "dataset") -> Entry:
    if not isinstance(record, dict):
        raise DatasetError(f"{where}: record is not an object")
    unknown = set(record) - set(_ALL_FIELDS)
    if unknown:
        raise DatasetError(f"{where}: unknown fields {sorted(unknown)}")
    missing = [name for name in _REQUIRED_FIELDS if name not in record]
    if missing:
        raise DatasetError(f"{where}: missing fields {missing}")
    try:
        return Entry(**record)
    except TypeError as err:
        raise DatasetError(f"{where}: {err}") from err


def iter_dataset(path: str | os.PathLike[str]) -> Iterator[Entry]:
    """Stream entries from a JSON-lines dataset file.

    Malformed lines and duplicate ids raise DatasetError with the file
    and line number.  Streaming: memory use is one entry, not one file.
    """
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{where}: invalid JSON: {err}") from err
            entry = entry_from_record(record, where)
            if entry.id in seen:
                raise DatasetError(f"{where}: duplicate entry id {entry.id!r}")
            seen.add(entry.id)
            yield entry


def load_dataset(path: str | os.PathLike[str]) -> list[Entry]:
    return list(iter_dataset(path))


def save_dataset(entries: Iterable[Entry], path: str | os.PathLike[str]) -> int:
    """Write entries as JSON lines, atomically.

    The file appears complete or not at all: content goes to a
    temporary file in the same directory, then replaces the target.
    Returns the number of entries written.
    """
    path = Path(path)
    seen: set[str] = set()
    count = 0
    fd, tmp_name = tempfile.mkstemp(
        prefix=path.name + ".", suffix=".tmp", dir=path.parent or Path(".")
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            for entry in entries:
                if entry.id in seen:
                    raise DatasetError(f"duplicate entry id {entry.id!r}")
                seen.add(entry.id)
                handle.write(json.dumps(entry_to_record(entry), ensure_ascii=False))
                handle.write("\n")
                count += 1
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return count
