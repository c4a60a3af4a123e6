"""NMEA-0183 sentence parsing, generation and serial delivery modelling.

Only the time-bearing sentences a timing receiver needs are interpreted:
RMC (time of day, date, validity), GGA (time of day, fix quality,
satellite count) and ZDA (time of day, date). Position fields are carried
verbatim but never interpreted.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from enum import Enum

NS_PER_S = 1_000_000_000
NS_PER_DAY = 86_400 * NS_PER_S

_TALKER_TO_MASK = {
    "GP": frozenset({"GPS"}),
    "GL": frozenset({"GLONASS"}),
    "GB": frozenset({"BEIDOU"}),
    "BD": frozenset({"BEIDOU"}),
    "GA": frozenset({"GALILEO"}),
    "GN": frozenset({"GPS", "GLONASS", "BEIDOU", "GALILEO"}),
}
_MASK_TO_TALKER = {
    frozenset({"GPS"}): "GP",
    frozenset({"GLONASS"}): "GL",
    frozenset({"BEIDOU"}): "GB",
    frozenset({"GALILEO"}): "GA",
}

# Minimum field counts for structural validation per sentence type.
_MIN_FIELDS = {"RMC": 9, "GGA": 7, "ZDA": 4}


class BadChecksum(ValueError):
    pass


class Truncated(ValueError):
    pass


class MalformedField(ValueError):
    pass


class NoTimeField(ValueError):
    pass


class MissingField(ValueError):
    pass


class SentenceKind(str, Enum):
    RMC = "RMC"
    GGA = "GGA"
    ZDA = "ZDA"
    OTHER = "OTHER"


def checksum(payload: str | bytes) -> str:
    """XOR fold of the payload bytes as two uppercase hex digits.

    The payload is everything between '$' and '*', exclusive; those
    delimiters must not appear inside it.
    """
    data = payload.encode("ascii") if isinstance(payload, str) else payload
    if b"$" in data or b"*" in data:
        raise ValueError("payload must exclude '$' and '*'")
    acc = 0
    for b in data:
        acc ^= b
    return f"{acc:02X}"


@dataclass(frozen=True)
class NmeaSentence:
    """One parsed sentence: talker, type, raw fields and checksum."""

    talker: str
    kind: SentenceKind
    fields: tuple[str, ...]
    checksum: str
    type_code: str = ""

    @property
    def payload(self) -> str:
        code = self.type_code or self.kind.value
        return ",".join((self.talker + code, *self.fields))

    @property
    def line(self) -> str:
        return f"${self.payload}*{self.checksum}"

    def wire(self) -> str:
        return self.line + "\r\n"


def parse_sentence(line: str) -> NmeaSentence:
    """Parse and checksum-verify one sentence.

    Unknown sentence types are accepted with kind OTHER; structural
    problems raise Truncated / MalformedField, checksum mismatches raise
    BadChecksum.
    """
    text = line.rstrip("\r\n")
    if not text.startswith("$"):
        raise Truncated(f"sentence does not start with '$': {text[:20]!r}")
    star = text.rfind("*")
    if star < 0 or len(text) - star != 3:
        raise Truncated(f"missing or short checksum: {text[-6:]!r}")
    payload, given = text[1:star], text[star + 1:]
    try:
        int(given, 16)
    except ValueError:
        raise Truncated(f"non-hex checksum {given!r}") from None
    want = checksum(payload)
    if given.upper() != want:
        raise BadChecksum(f"checksum {given} != computed {want}")
    parts = payload.split(",")
    address = parts[0]
    if len(address) < 5:
        raise MalformedField(f"short address field {address!r}")
    talker, code = address[:2], address[2:]
    try:
        kind = SentenceKind(code)
    except ValueError:
        kind = SentenceKind.OTHER
    fields = tuple(parts[1:])
    if kind is not SentenceKind.OTHER and len(fields) < _MIN_FIELDS[kind.value]:
        raise MalformedField(
            f"{code} carries {len(fields)} fields, needs {_MIN_FIELDS[kind.value]}")
    return NmeaSentence(talker, kind, fields, want, code)


@dataclass(frozen=True)
class GnssFix:
    """Time-of-day fix extracted from a sentence.

    tod_ns is nanoseconds since UTC midnight; nsat is None when the
    sentence type does not report satellite counts. fix_valid mirrors the
    receiver's position-fix validity flag, not time validity.
    """

    tod_ns: int | None = None
    date: datetime.date | None = None
    fix_valid: bool = False
    nsat: int | None = None
    constellation_mask: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.tod_ns is not None and not 0 <= self.tod_ns < NS_PER_DAY:
            raise ValueError("tod_ns outside one day")
        if self.fix_valid and self.tod_ns is None:
            raise ValueError("a valid fix must carry a time of day")
        if self.nsat is not None:
            if self.nsat < 0:
                raise ValueError("nsat must be >= 0")
            if self.nsat == 0 and self.fix_valid:
                raise ValueError("zero satellites cannot give a valid fix")


def _parse_tod(text: str) -> int:
    if len(text) < 6:
        raise MalformedField(f"bad time-of-day field {text!r}")
    try:
        h, m = int(text[0:2]), int(text[2:4])
        s = float(text[4:])
    except ValueError:
        raise MalformedField(f"bad time-of-day field {text!r}") from None
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 61):
        raise MalformedField(f"time-of-day out of range {text!r}")
    return (h * 3600 + m * 60) * NS_PER_S + round(s * NS_PER_S)


def _format_tod(tod_ns: int) -> str:
    s, frac = divmod(tod_ns, NS_PER_S)
    h, rem = divmod(s, 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}{m:02d}{s:02d}.{round(frac / 1e6) % 1000:03d}"


def extract_fix(s: NmeaSentence, last_date: datetime.date | None = None) -> GnssFix:
    """Pull the timing content out of an RMC, GGA or ZDA sentence.

    GGA carries no date, so the caller's last known date is attached.
    """
    if s.kind not in (SentenceKind.RMC, SentenceKind.GGA, SentenceKind.ZDA):
        raise ValueError(f"no timing content in {s.kind} sentences")
    mask = _TALKER_TO_MASK.get(s.talker, frozenset())
    if not s.fields[0]:
        raise NoTimeField(f"{s.kind.value} sentence with empty time field")
    tod = _parse_tod(s.fields[0])
    if s.kind is SentenceKind.RMC:
        status = s.fields[1]
        raw = s.fields[8]
        if len(raw) != 6 or not raw.isdigit():
            raise MalformedField(f"bad RMC date {raw!r}")
        date = datetime.date(2000 + int(raw[4:6]), int(raw[2:4]), int(raw[0:2]))
        return GnssFix(tod, date, status == "A", None, mask)
    if s.kind is SentenceKind.GGA:
        try:
            quality = int(s.fields[5])
            nsat = int(s.fields[6])
        except ValueError:
            raise MalformedField("bad GGA quality/satellite fields") from None
        return GnssFix(tod, last_date, quality > 0 and nsat > 0, nsat, mask)
    try:
        date = datetime.date(int(s.fields[3]), int(s.fields[2]), int(s.fields[1]))
    except ValueError:
        raise MalformedField("bad ZDA date fields") from None
    return GnssFix(tod, date, True, None, mask)


def generate(fix: GnssFix, kind: SentenceKind) -> str:
    """Render a fix as a sentence line (no line terminator).

    Sub-millisecond time of day is rounded; position fields are emitted
    blank. parse_sentence + extract_fix round-trips the carried fields.
    """
    if fix.tod_ns is None:
        raise MissingField("fix has no time of day")
    talker = _MASK_TO_TALKER.get(fix.constellation_mask, "GN")
    tod = _format_tod(fix.tod_ns)
    if kind is SentenceKind.RMC:
        if fix.date is None:
            raise MissingField("RMC needs a date")
        date = f"{fix.date.day:02d}{fix.date.month:02d}{fix.date.year % 100:02d}"
        status = "A" if fix.fix_valid else "V"
        fields = [tod, status, "", "", "", "", "", "", date, "", ""]
    elif kind is SentenceKind.GGA:
        if fix.nsat is None:
            raise MissingField("GGA needs a satellite count")
        quality = "1" if fix.fix_valid else "0"
        fields = [tod, "", "", "", "", quality, f"{fix.nsat:02d}",
                  "", "", "M", "", "M"]
    elif kind is SentenceKind.ZDA:
        if fix.date is None:
            raise MissingField("ZDA needs a date")
        fields = [tod, f"{fix.date.day:02d}", f"{fix.date.month:02d}",
                  f"{fix.date.year:04d}", "00", "00"]
    else:
        raise ValueError(f"cannot generate {kind} sentences")
    payload = ",".join((talker + kind.value, *fields))
    return f"${payload}*{checksum(payload)}"


def absolute_second_ns(fix: GnssFix, epoch_date: datetime.date) -> int:
    """Absolute time named by the fix, in ns since epoch_date midnight."""
    if fix.tod_ns is None:
        raise NoTimeField("fix has no time of day")
    if fix.date is None:
        raise MissingField("fix has no date to anchor the time of day")
    days = (fix.date - epoch_date).days
    return days * NS_PER_DAY + fix.tod_ns


@dataclass(frozen=True)
class SerialDeliveryModel:
    """Latency model for the RS232 sentence stream.

    Arrival = second boundary + base latency + uniform jitter; a draw may
    be dropped with drop_prob.
    """

    base_latency_ms: float = 80.0
    jitter_ms: float = 10.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.base_latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be >= 0")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")

    def delivery_delay_ns(self, rng) -> int | None:
        """Latency draw in ns, or None when the sentence is lost."""
        if self.drop_prob and rng.random() < self.drop_prob:
            return None
        jitter = rng.uniform(-self.jitter_ms, self.jitter_ms) if self.jitter_ms else 0.0
        return round((self.base_latency_ms + jitter) * 1e6)


def read_nmea_log(path) -> list[tuple[int | None, str]]:
    """Read a sentence log; lines may carry a '<true_rx_ns> ' prefix."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.rstrip("\r\n")
            if not line:
                continue
            head, _, rest = line.partition(" ")
            if rest.startswith("$"):
                out.append((int(head), rest))
            else:
                out.append((None, line))
    return out
