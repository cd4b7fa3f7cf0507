"""Canonical domain types for CDN proxy-log records.

A proxy-log line carries 28 columns (``coordinates`` packs longitude and
latitude into one column). Every other module speaks in terms of
:class:`LogRecord` and the HTTP status taxonomy defined here.

Missing values are first-class: categorical fields use the ``MISSING``
sentinel category, optional numeric fields use ``None``. Empty strings
never alias a real value.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dataclass_fields
from datetime import datetime, timezone
from enum import Enum
from typing import Optional, Tuple

#: Sentinel category for absent categorical values.
MISSING = "__missing__"

#: Canonical column order of the proxy-log schema.
FIELD_ORDER: Tuple[str, ...] = (
    "statuscode",
    "contenttype",
    "protocol",
    "contentlength",
    "timefirstbyte",
    "timetoserv",
    "osfamily",
    "sid",
    "cachecontrol",
    "uamajor",
    "uafamily",
    "devicefamily",
    "fragment",
    "path",
    "timestamp",
    "contentpackage",
    "coordinates",
    "livechannel",
    "devicemodel",
    "devicebrand",
    "host",
    "method",
    "manifest",
    "assetnumber",
    "hit",
    "cachename",
    "popname",
    "uid",
)

#: Optional numeric columns (absent is ``None``, never zero).
NUMERIC_FIELDS: Tuple[str, ...] = ("contentlength", "timefirstbyte", "timetoserv")

#: Plain categorical columns; all may be missing.
CATEGORICAL_FIELDS: Tuple[str, ...] = tuple(
    f
    for f in FIELD_ORDER
    if f not in NUMERIC_FIELDS and f not in ("statuscode", "timestamp", "coordinates")
)

#: Columns that must be present in every record.
REQUIRED_FIELDS: Tuple[str, ...] = ("statuscode", "host", "timestamp", "method")


class StatusClass(Enum):
    """The five HTTP status-code groups."""

    INFORMATIONAL = "informational"
    SUCCESS = "success"
    REDIRECT = "redirect"
    CLIENT_ERROR = "client_error"
    SERVER_ERROR = "server_error"


def _check_code(code: int) -> None:
    if not isinstance(code, int) or isinstance(code, bool) or not 100 <= code <= 599:
        raise ValueError(f"status code out of range [100, 599]: {code!r}")


def classify_status(code: int) -> StatusClass:
    """Map a status code to its group: 1xx informational through 5xx server error."""
    _check_code(code)
    return (
        StatusClass.INFORMATIONAL,
        StatusClass.SUCCESS,
        StatusClass.REDIRECT,
        StatusClass.CLIENT_ERROR,
        StatusClass.SERVER_ERROR,
    )[code // 100 - 1]


def is_error(code: int) -> bool:
    """True iff the status code marks an error line (>= 400)."""
    _check_code(code)
    return code >= 400


@dataclass(frozen=True)
class LogRecord:
    """One parsed proxy-log line.

    Immutable; safe to share between workers. Categorical fields hold the
    ``MISSING`` sentinel when absent, numeric fields hold ``None``.
    ``timestamp`` is always a UTC instant.
    """

    statuscode: int
    contenttype: str
    protocol: str
    contentlength: Optional[int]
    timefirstbyte: Optional[float]
    timetoserv: Optional[float]
    osfamily: str
    sid: str
    cachecontrol: str
    uamajor: str
    uafamily: str
    devicefamily: str
    fragment: str
    path: str
    timestamp: datetime
    contentpackage: str
    coordinates: Optional[Tuple[float, float]]
    livechannel: str
    devicemodel: str
    devicebrand: str
    host: str
    method: str
    manifest: str
    assetnumber: str
    hit: str
    cachename: str
    popname: str
    uid: str

    def __post_init__(self):
        _check_code(self.statuscode)
        if self.contentlength is not None and self.contentlength < 0:
            raise ValueError(f"negative contentlength: {self.contentlength}")
        for name in ("timefirstbyte", "timetoserv"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"negative {name}: {value}")
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))
        else:
            object.__setattr__(self, "timestamp", self.timestamp.astimezone(timezone.utc))
        for name in ("host", "method"):
            if getattr(self, name) == MISSING:
                raise ValueError(f"required field {name} is missing")

    @property
    def status_class(self) -> StatusClass:
        return classify_status(self.statuscode)

    def get(self, field: str):
        """Field access by schema name (raises on unknown names)."""
        if field not in _FIELD_SET:
            raise ValueError(f"unknown log field: {field!r}")
        return getattr(self, field)


_FIELD_SET = frozenset(FIELD_ORDER)

# The dataclass must stay in lockstep with the canonical column order.
assert tuple(f.name for f in dataclass_fields(LogRecord)) == FIELD_ORDER
