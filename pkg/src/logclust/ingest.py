"""Streaming ingestion of proxy-log files.

Canonical input is header-bearing TSV with the 28 columns of the log
schema; a line-delimited JSON reader with the same field names is also
provided. Files may be gzip-compressed (detected by magic bytes).
Parsing is strictly streaming: memory use is bounded by the longest
line, not the file size.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .log_model import (
    FIELD_ORDER,
    MISSING,
    NUMERIC_FIELDS,
    LogRecord,
    is_error,
)

log = logging.getLogger(__name__)

#: Malformed lines beyond this many are skipped silently (still counted).
MALFORMED_LOG_CAP = 20

#: Hosts need strictly more than this many error records to be clustered.
DEFAULT_HOST_THRESHOLD = 1000


@dataclass(frozen=True)
class Schema:
    """Column layout of a delimited log file."""

    column_names: Tuple[str, ...] = FIELD_ORDER
    delimiter: str = "\t"
    missing_token: str = ""

    def __post_init__(self):
        if sorted(self.column_names) != sorted(FIELD_ORDER):
            raise ValueError("schema columns must be a permutation of the canonical field set")
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character")
        if self.delimiter in self.missing_token:
            raise ValueError("missing token must not contain the delimiter")

    def header(self) -> str:
        return self.delimiter.join(self.column_names)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            column_names=tuple(doc.get("columns", FIELD_ORDER)),
            delimiter=doc.get("delimiter", "\t"),
            missing_token=doc.get("missing_token", ""),
        )

    def to_dict(self) -> dict:
        return {
            "columns": list(self.column_names),
            "delimiter": self.delimiter,
            "missing_token": self.missing_token,
        }


DEFAULT_SCHEMA = Schema()


@dataclass(frozen=True)
class ParseFailure:
    """Why one physical line could not become a LogRecord."""

    line_no: int
    reason: str


@dataclass
class CorpusStats:
    """Line-level accounting for one ingestion pass."""

    total_lines: int = 0
    parsed: int = 0
    rejected: int = 0
    error_lines: int = 0
    per_host_counts: Dict[str, int] = field(default_factory=dict)

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        merged = CorpusStats(
            total_lines=self.total_lines + other.total_lines,
            parsed=self.parsed + other.parsed,
            rejected=self.rejected + other.rejected,
            error_lines=self.error_lines + other.error_lines,
            per_host_counts=dict(self.per_host_counts),
        )
        for host, n in other.per_host_counts.items():
            merged.per_host_counts[host] = merged.per_host_counts.get(host, 0) + n
        return merged

    def to_dict(self) -> dict:
        return {
            "total_lines": self.total_lines,
            "parsed": self.parsed,
            "rejected": self.rejected,
            "error_lines": self.error_lines,
            "per_host_counts": dict(sorted(self.per_host_counts.items())),
        }


@dataclass
class HostPartition:
    """All error records of one host, with its status-code histogram."""

    host: str
    records: List[LogRecord]
    status_histogram: Dict[int, int]

    @property
    def size(self) -> int:
        return len(self.records)


class IngestError(RuntimeError):
    """I/O failure mid-stream; carries the stats accumulated so far."""

    def __init__(self, message: str, stats: CorpusStats):
        super().__init__(message)
        self.stats = stats


def parse_timestamp(token: str) -> Optional[datetime]:
    """RFC 3339 text or epoch seconds -> UTC instant, None if neither."""
    text = token.strip()
    if not text:
        return None
    try:
        # fromisoformat on 3.10 rejects a trailing Z
        ts = datetime.fromisoformat(text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text)
    except ValueError:
        try:
            ts = datetime.fromtimestamp(float(text), tz=timezone.utc)
        except (ValueError, OverflowError, OSError):
            return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_coordinates(token: str) -> Optional[Tuple[float, float]]:
    parts = token.split(",")
    if len(parts) != 2:
        return None
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        return None


def _build_record(values: Dict[str, str], schema: Schema, line_no: int):
    """Assemble a LogRecord from raw column text; shared by TSV and JSONL."""

    def missing(token: str) -> bool:
        return token == schema.missing_token or token == MISSING or token == ""

    raw_status = values.get("statuscode", "")
    try:
        statuscode = int(raw_status)
    except ValueError:
        return ParseFailure(line_no, f"non-integer statuscode: {raw_status!r}")
    if not 100 <= statuscode <= 599:
        return ParseFailure(line_no, f"statuscode out of range: {statuscode}")

    for name in ("host", "method"):
        if missing(values.get(name, "")):
            return ParseFailure(line_no, f"required field {name} is missing")

    ts = parse_timestamp(values.get("timestamp", ""))
    if ts is None:
        return ParseFailure(line_no, f"unparseable timestamp: {values.get('timestamp', '')!r}")

    kwargs: dict = {"statuscode": statuscode, "timestamp": ts}
    for name in NUMERIC_FIELDS:
        token = values.get(name, "")
        if missing(token):
            kwargs[name] = None
            continue
        try:
            number = int(token) if name == "contentlength" else float(token)
        except ValueError:
            kwargs[name] = None  # unmappable optional -> sentinel
            continue
        kwargs[name] = number if number >= 0 else None

    coords_token = values.get("coordinates", "")
    kwargs["coordinates"] = None if missing(coords_token) else _parse_coordinates(coords_token)

    for name in FIELD_ORDER:
        if name in kwargs:
            continue
        token = values.get(name, "")
        kwargs[name] = MISSING if missing(token) else token

    return LogRecord(**kwargs)


def parse_line(line: str, schema: Schema = DEFAULT_SCHEMA, line_no: int = 0):
    """Parse one delimited line into a LogRecord or a ParseFailure."""
    columns = line.split(schema.delimiter)
    if len(columns) != len(schema.column_names):
        return ParseFailure(
            line_no,
            f"expected {len(schema.column_names)} columns, got {len(columns)}",
        )
    return _build_record(dict(zip(schema.column_names, columns)), schema, line_no)


def parse_json_line(line: str, schema: Schema = DEFAULT_SCHEMA, line_no: int = 0):
    """Parse one JSON object line (same field names as the TSV schema)."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        return ParseFailure(line_no, f"invalid JSON: {exc.msg}")
    if not isinstance(doc, dict):
        return ParseFailure(line_no, "JSON line is not an object")
    values = {k: ("" if v is None else str(v)) for k, v in doc.items() if k in set(FIELD_ORDER)}
    return _build_record(values, schema, line_no)


def format_record(record: LogRecord, schema: Schema = DEFAULT_SCHEMA) -> str:
    """Serialize a record into one canonical line (inverse of parse_line)."""
    out = []
    for name in schema.column_names:
        value = record.get(name)
        if name == "timestamp":
            out.append(format_timestamp(value))
        elif name == "coordinates":
            out.append(schema.missing_token if value is None else f"{value[0]!r},{value[1]!r}")
        elif name in NUMERIC_FIELDS:
            out.append(schema.missing_token if value is None else repr(value))
        elif name == "statuscode":
            out.append(str(value))
        else:
            out.append(schema.missing_token if value == MISSING else value)
    return schema.delimiter.join(out)


def open_text(path: Union[str, Path]) -> io.TextIOBase:
    """Open a log file for reading, transparently un-gzipping by magic bytes."""
    path = Path(path)
    raw = open(path, "rb")
    magic = raw.read(2)
    raw.seek(0)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.GzipFile(fileobj=raw), encoding="utf-8")
    return io.TextIOWrapper(raw, encoding="utf-8")


def sniff_format(path: Union[str, Path]) -> str:
    """'jsonl' for .jsonl files (gzipped or not), else 'tsv'."""
    name = Path(path).name
    if name.endswith(".gz"):
        name = name[: -len(".gz")]
    return "jsonl" if name.endswith(".jsonl") else "tsv"


class ErrorStream:
    """Iterator of error LogRecords over a line source, accumulating stats.

    ``stats`` is updated as iteration proceeds and is complete once the
    iterator is exhausted. Malformed lines are counted and skipped; only
    I/O failures abort (raising IngestError with the partial stats).
    """

    def __init__(
        self,
        lines: Iterable[str],
        schema: Schema = DEFAULT_SCHEMA,
        fmt: str = "tsv",
        has_header: bool = True,
    ):
        if fmt not in ("tsv", "jsonl"):
            raise ValueError(f"unknown format: {fmt!r}")
        self._lines = lines
        self._schema = schema
        self._fmt = fmt
        self._has_header = has_header and fmt == "tsv"
        self.stats = CorpusStats()

    def __iter__(self) -> Iterator[LogRecord]:
        parse = parse_line if self._fmt == "tsv" else parse_json_line
        stats = self.stats
        logged = 0
        iterator = iter(self._lines)
        if self._has_header:
            try:
                next(iterator)
            except StopIteration:
                return
            except OSError as exc:
                raise IngestError(f"I/O failure reading header: {exc}", stats) from exc
        line_no = 1 if self._has_header else 0
        while True:
            try:
                line = next(iterator)
            except StopIteration:
                return
            except OSError as exc:
                raise IngestError(f"I/O failure at line {line_no + 1}: {exc}", stats) from exc
            line_no += 1
            stats.total_lines += 1
            result = parse(line.rstrip("\r\n"), self._schema, line_no)
            if isinstance(result, ParseFailure):
                stats.rejected += 1
                if logged < MALFORMED_LOG_CAP:
                    log.warning("skipping malformed line %d: %s", result.line_no, result.reason)
                    logged += 1
                elif logged == MALFORMED_LOG_CAP:
                    log.warning("further malformed lines suppressed")
                    logged += 1
                continue
            stats.parsed += 1
            if is_error(result.statuscode):
                stats.error_lines += 1
                host = result.host
                stats.per_host_counts[host] = stats.per_host_counts.get(host, 0) + 1
                yield result


def stream_errors(
    lines: Iterable[str],
    schema: Schema = DEFAULT_SCHEMA,
    fmt: str = "tsv",
    has_header: bool = True,
) -> ErrorStream:
    """Stream the parseable error records out of a line source."""
    return ErrorStream(lines, schema, fmt=fmt, has_header=has_header)


def stream_errors_from_path(path: Union[str, Path], schema: Schema = DEFAULT_SCHEMA) -> ErrorStream:
    return stream_errors(open_text(path), schema, fmt=sniff_format(path))


def partition_by_host(
    records: Iterable[LogRecord],
    min_count: int = DEFAULT_HOST_THRESHOLD,
    allowlist: Optional[Sequence[str]] = None,
) -> Tuple[List[HostPartition], List[Tuple[str, int]]]:
    """Group error records per host, keeping hosts with more than min_count records.

    Returns (partitions sorted by host, excluded hosts with their counts).
    Hosts at or below the threshold are cheap to inspect by hand, so they
    are reported rather than clustered. An allowlist, when given, drops
    records of unlisted hosts entirely (they appear in neither output).
    """
    allowed = None if allowlist is None else set(allowlist)
    buckets: Dict[str, HostPartition] = {}
    for record in records:
        if allowed is not None and record.host not in allowed:
            continue
        bucket = buckets.get(record.host)
        if bucket is None:
            bucket = buckets[record.host] = HostPartition(record.host, [], {})
        bucket.records.append(record)
        hist = bucket.status_histogram
        hist[record.statuscode] = hist.get(record.statuscode, 0) + 1
    partitions = []
    excluded = []
    for host in sorted(buckets):
        bucket = buckets[host]
        if bucket.size > min_count:
            partitions.append(bucket)
        else:
            excluded.append((host, bucket.size))
    return partitions, excluded


def host_status_report(partitions: Sequence[HostPartition]) -> List[Tuple[str, int, int]]:
    """(host, statuscode, count) rows, sorted by host then code, zero rows omitted."""
    rows = []
    for partition in sorted(partitions, key=lambda p: p.host):
        for code in sorted(partition.status_histogram):
            count = partition.status_histogram[code]
            if count > 0:
                rows.append((partition.host, code, count))
    return rows


def write_partition(
    partition: HostPartition, path: Union[str, Path], schema: Schema = DEFAULT_SCHEMA
) -> None:
    """Write one host partition back out in the canonical TSV format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(schema.header() + "\n")
        for record in partition.records:
            fh.write(format_record(record, schema) + "\n")


def read_partition(path: Union[str, Path], schema: Schema = DEFAULT_SCHEMA) -> List[LogRecord]:
    """Load a partition file written by write_partition."""
    records = []
    with open_text(path) as fh:
        header = fh.readline()
        if not header:
            return records
        for line_no, line in enumerate(fh, start=2):
            result = parse_line(line.rstrip("\r\n"), schema, line_no)
            if isinstance(result, ParseFailure):
                raise ValueError(f"{path}: line {result.line_no}: {result.reason}")
            records.append(result)
    return records
