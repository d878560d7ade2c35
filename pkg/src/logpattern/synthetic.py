"""Seeded generator of labeled synthetic execution logs.

Every log draws a handful of ordinary behaviors (document I/O, DLL loads,
registry reads, web traffic, ...). Planted motifs, each an event-type set
sharing an argument built from a distinctive token shape, are added with
a per-class probability. Each log is generated from its own derived seed,
so any index range can be produced independently and concatenated.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from typing import IO, Callable, Iterator

from .errors import InvalidSpec
from .log_ingest import Label, Log, SystemEvent, serialize_log

USERS = ["alice", "bob", "admin", "jsmith", "user", "dev", "maria", "li"]
WORDS = ["report", "invoice", "budget", "notes", "photo", "draft", "plan", "letter", "summary",
         "contract", "resume", "backup", "data", "config", "readme", "agenda", "memo", "scan"]
DOC_EXT = ["doc", "docx", "xls", "xlsx", "pdf", "txt", "jpg", "png", "csv", "ppt"]
VENDORS = [("Microsoft", "Office"), ("Google", "Chrome"), ("Mozilla", "Firefox"), ("Adobe", "Reader"),
           ("Oracle", "Java"), ("Valve", "Steam"), ("VideoLAN", "VLC"), ("Zoom", "Meetings")]
DLLS = ["kernel32", "user32", "advapi32", "ws2_32", "wininet", "shell32", "ole32", "gdi32",
        "crypt32", "ntdll", "msvcrt", "comctl32"]
HOSTS = ["www.google.com", "update.microsoft.com", "cdn.mozilla.net", "api.github.com",
         "www.wikipedia.org", "download.adobe.com", "ocsp.digicert.com", "www.bing.com"]
BAD_TLDS = ["ru", "xyz", "top", "cn", "info"]
INJECT_TARGETS = ["explorer.exe", "svchost.exe", "lsass.exe", "winlogon.exe"]

CORE_EVENT_TYPES = [
    "CloseHandle", "Connect", "CreateFile", "CreateMutex", "CreateProcess", "CreateRemoteThread",
    "DeleteFile", "DnsQuery", "DownloadFile", "HttpRequest", "LoadLibrary", "OpenProcess",
    "ReadFile", "RegOpenKey", "RegQueryValue", "SetRegistry", "Sleep", "VirtualAlloc",
    "VirtualProtect", "WriteFile", "WriteProcessMemory",
]


def _rand_name(r: random.Random, lo=5, hi=10) -> str:
    return "".join(r.choice("abcdefghijklmnopqrstuvwxyz0123456789") for _ in range(r.randint(lo, hi)))


# argument grammars: path-like, URL-like, numeric

def doc_path(r):
    return f"C:\\Users\\{r.choice(USERS)}\\Documents\\{r.choice(WORDS)}{r.randint(1, 99)}.{r.choice(DOC_EXT)}"


def dll_path(r):
    return f"C:\\Windows\\System32\\{r.choice(DLLS)}.dll"


def program_path(r):
    v, p = r.choice(VENDORS)
    return f"C:\\Program Files\\{v}\\{p}\\{p.lower()}.{r.choice(['exe', 'dll'])}"


def reg_key(r):
    v, p = r.choice(VENDORS)
    return f"HKLM\\Software\\{v}\\{p}\\{r.choice(['Version', 'InstallPath', 'Settings', 'Language'])}"


def temp_path(r):
    return f"C:\\Users\\{r.choice(USERS)}\\AppData\\Local\\Temp\\{_rand_name(r)}.tmp"


def host(r):
    return r.choice(HOSTS)


def host_port(r):
    return f"{r.choice(HOSTS)}:{r.choice([80, 443, 443, 8080])}"


def url(r):
    scheme = r.choice(["http", "https"])
    return f"{scheme}://{r.choice(HOSTS)}/{r.choice(WORDS)}/{r.randint(1, 9999)}.{r.choice(['html', 'js', 'css', 'png', 'json'])}"


def address(r):
    return f"0x{r.randrange(0x10000, 0x7fffffff):08x}"


def millis(r):
    return str(r.choice([10, 50, 100, 250, 500, 1000, 3960, 3964, 5000]))


def mutex_name(r):
    return f"Global\\{r.choice(WORDS)}_{r.randint(100, 9999)}"


def roaming_exe(r):
    return f"C:\\Users\\{r.choice(USERS)}\\AppData\\Roaming\\{_rand_name(r)}\\{_rand_name(r)}.exe"


def inject_target(r):
    return f"C:\\Windows\\{r.choice(INJECT_TARGETS)}"


def locked_doc(r):
    return doc_path(r) + ".locked"


def bad_download(r):
    return f"C:\\Users\\{r.choice(USERS)}\\AppData\\Local\\Temp\\{_rand_name(r)}.{r.choice(BAD_TLDS)}.exe"


GRAMMARS: dict[str, Callable[[random.Random], str]] = {
    f.__name__: f
    for f in (doc_path, dll_path, program_path, reg_key, temp_path, host, host_port, url, address,
              millis, mutex_name, roaming_exe, inject_target, locked_doc, bad_download)
}

# (event types sharing each argument, grammar, max args per occurrence)
BENIGN_BEHAVIORS = [
    (("CreateFile", "ReadFile", "CloseHandle"), "doc_path", 4),
    (("CreateFile", "WriteFile", "CloseHandle"), "doc_path", 2),
    (("LoadLibrary",), "dll_path", 5),
    (("RegOpenKey", "RegQueryValue"), "reg_key", 4),
    (("RegOpenKey", "SetRegistry"), "reg_key", 2),
    (("CreateProcess",), "program_path", 2),
    (("CreateFile", "WriteFile", "CloseHandle"), "program_path", 2),
    (("CreateFile", "WriteFile", "DeleteFile"), "temp_path", 3),
    (("DnsQuery",), "host", 3),
    (("Connect",), "host_port", 3),
    (("HttpRequest",), "url", 4),
    (("VirtualAlloc", "VirtualProtect"), "address", 3),
    (("Sleep",), "millis", 2),
    (("CreateMutex",), "mutex_name", 1),
]


@dataclass(frozen=True)
class MotifSpec:
    name: str
    event_types: tuple[str, ...]
    grammar: str
    p_malicious: float = 0.6
    p_benign: float = 0.02
    max_args: int = 2


DEFAULT_MOTIFS = (
    MotifSpec("dropper_persistence", ("WriteFile", "SetRegistry"), "roaming_exe"),
    MotifSpec("process_injection", ("OpenProcess", "WriteProcessMemory", "CreateRemoteThread"), "inject_target", max_args=1),
    MotifSpec("ransom_encrypt", ("ReadFile", "WriteFile", "DeleteFile"), "locked_doc", max_args=4),
    MotifSpec("download_execute", ("DownloadFile", "CreateProcess"), "bad_download", max_args=1),
)


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    n_benign: int
    n_malicious: int
    n_event_types: int = len(CORE_EVENT_TYPES)
    behaviors_per_log: tuple[int, int] = (4, 12)
    motifs: tuple[MotifSpec, ...] = DEFAULT_MOTIFS
    id_prefix: str = "log"

    def validate(self) -> None:
        if not isinstance(self.seed, int):
            raise InvalidSpec("seed is mandatory and must be an integer")
        if self.n_benign < 0 or self.n_malicious < 0:
            raise InvalidSpec("log counts must be non-negative")
        lo, hi = self.behaviors_per_log
        if not 0 <= lo <= hi:
            raise InvalidSpec("behaviors_per_log must satisfy 0 <= lo <= hi")
        if self.n_event_types < len(CORE_EVENT_TYPES):
            raise InvalidSpec(f"n_event_types must be >= {len(CORE_EVENT_TYPES)}")
        names = set()
        for m in self.motifs:
            if m.name in names:
                raise InvalidSpec(f"duplicate motif name {m.name!r}")
            names.add(m.name)
            if not (0.0 <= m.p_malicious <= 1.0 and 0.0 <= m.p_benign <= 1.0):
                raise InvalidSpec(f"motif {m.name!r}: probabilities must lie in [0, 1]")
            if m.grammar not in GRAMMARS:
                raise InvalidSpec(f"motif {m.name!r}: unknown grammar {m.grammar!r}")
            if not m.event_types or m.max_args < 1:
                raise InvalidSpec(f"motif {m.name!r}: needs event types and max_args >= 1")

    @property
    def n_logs(self) -> int:
        return self.n_benign + self.n_malicious

    def event_alphabet(self) -> list[str]:
        extra = [f"NtApi{i:03d}" for i in range(self.n_event_types - len(CORE_EVENT_TYPES))]
        return CORE_EVENT_TYPES + extra

    def to_dict(self):
        d = asdict(self)
        d["behaviors_per_log"] = list(self.behaviors_per_log)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        try:
            d = dict(d)
            if "motifs" in d:
                d["motifs"] = tuple(
                    MotifSpec(**{**m, "event_types": tuple(m["event_types"])}) for m in d["motifs"]
                )
            if "behaviors_per_log" in d:
                d["behaviors_per_log"] = tuple(d["behaviors_per_log"])
            spec = cls(**d)
        except (TypeError, KeyError) as exc:
            raise InvalidSpec(f"bad generator spec: {exc}") from None
        spec.validate()
        return spec


def _labels(spec: GeneratorSpec) -> list[Label]:
    labels = [Label.MALICIOUS] * spec.n_malicious + [Label.BENIGN] * spec.n_benign
    random.Random(f"labels:{spec.seed}").shuffle(labels)
    return labels


def _behaviors(spec: GeneratorSpec):
    extra = [((e,), "address", 2) for e in spec.event_alphabet()[len(CORE_EVENT_TYPES):]]
    return BENIGN_BEHAVIORS + extra


def generate_log(spec: GeneratorSpec, i: int, label: Label) -> tuple[Log, list[str]]:
    """Build log number `i`; returns it with the names of the motifs planted in it."""
    r = random.Random(f"log:{spec.seed}:{i}")
    behaviors = _behaviors(spec)
    events: list[SystemEvent] = []

    def emit(event_types, grammar, max_args):
        gen = GRAMMARS[grammar]
        args = [gen(r) for _ in range(r.randint(1, max_args))]
        for a in args:
            for e in event_types:
                events.append(SystemEvent(e, (a,)))

    for _ in range(r.randint(*spec.behaviors_per_log)):
        emit(*behaviors[r.randrange(len(behaviors))])
    planted = []
    for m in spec.motifs:
        p = m.p_malicious if label is Label.MALICIOUS else m.p_benign
        if r.random() < p:
            emit(m.event_types, m.grammar, m.max_args)
            planted.append(m.name)
    r.shuffle(events)
    return Log(f"{spec.id_prefix}{i:07d}", tuple(events), label), planted


def iter_logs(spec: GeneratorSpec, start: int = 0, stop: int | None = None) -> Iterator[tuple[Log, list[str]]]:
    spec.validate()
    labels = _labels(spec)
    stop = spec.n_logs if stop is None else min(stop, spec.n_logs)
    for i in range(start, stop):
        yield generate_log(spec, i, labels[i])


def generate(spec: GeneratorSpec, fp: IO[str]) -> dict:
    """Write the corpus in the canonical log format; returns planting statistics."""
    stats = {"logs": 0, "malicious": 0, "benign": 0, "planted": {m.name: {"malicious": 0, "benign": 0} for m in spec.motifs}}
    for lg, planted in iter_logs(spec):
        fp.write(serialize_log(lg))
        fp.write("\n")
        stats["logs"] += 1
        stats[lg.label.value] += 1
        for name in planted:
            stats["planted"][name][lg.label.value] += 1
    return stats


def has_motif(patterns, motif: MotifSpec) -> bool:
    """True if some argument of the log co-occurs with every event type of the motif."""
    need = set(motif.event_types)
    return any(need.issubset(p.event_types) for p in patterns)


def load_spec(path) -> GeneratorSpec:
    with open(path, encoding="utf-8") as fp:
        return GeneratorSpec.from_dict(json.load(fp))
