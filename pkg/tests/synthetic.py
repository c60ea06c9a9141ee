"""
Planted-truth synthetic corpus.

Ten families, each with a known BEH and PLAT tag and, for half of them, a
PACK tag. Engines in one correlation group copy each other's label, one
engine misspells BEH tokens with a trailing "s", and a share of the labels
carries a wrong BEH or PLAT token.
"""

import hashlib
import random
import string
from dataclasses import dataclass
from typing import Dict, List, Optional, Set, Tuple

from core.scan_ingest import ScanReport
from utils.helpers import write_jsonl

ENGINES = tuple(f"av{index:02d}" for index in range(1, 13))
CORRELATED = (("av01", "av02", "av03"), ("av04", "av05"))
MISSPELLERS = ("av12",)

BEH = ("ransomware", "backdoor", "downloader", "keylogger", "spambot", "miner")
PLAT = ("win32", "android", "linux", "macos", "html")
PACK = ("upx", "aspack", "themida")
FAMILY_NAMES = ("kelvo", "zarbot", "quimera", "fenrik", "vortal", "mistral", "grendel", "obrin", "talmak", "yserra")


def sha(seed) -> str:
    """Deterministic 64-digit hex file id."""
    return hashlib.sha256(str(seed).encode()).hexdigest()


@dataclass(frozen=True)
class Family:
    name: str
    beh: str
    plat: str
    pack: Optional[str] = None

    def tags(self) -> Set[str]:
        planted = {self.beh, self.plat}
        if self.pack:
            planted.add(self.pack)
        return planted


FAMILIES = tuple(
    Family(
        name=name,
        beh=BEH[index % len(BEH)],
        plat=PLAT[index % len(PLAT)],
        pack=PACK[index % len(PACK)] if index % 2 == 0 else None,
    )
    for index, name in enumerate(FAMILY_NAMES)
)


def voting_groups() -> List[Tuple[str, ...]]:
    grouped = {engine for group in CORRELATED for engine in group}
    return list(CORRELATED) + [(engine,) for engine in ENGINES if engine not in grouped]


def rules_text() -> str:
    lines = []
    for engine in ENGINES:
        lines.append(f"{engine}\tTOK:TOK/TOK.TOK\tFIXED:BEH;FIXED:PLAT;FIXED:FAM;FIXED:SUF")
        lines.append(f"{engine}\tTOK:TOK/TOK.TOK!TOK\tFIXED:BEH;FIXED:PLAT;FIXED:FAM;FIXED:PACK;FIXED:SUF")
    return "\n".join(lines) + "\n"


def correlations_text() -> str:
    return "".join(",".join(group) + "\n" for group in CORRELATED)


def _label(beh: str, plat: str, family: Family, pack: Optional[str], suffix: str) -> str:
    head = f"{beh.capitalize()}:{plat.capitalize()}/{family.name.capitalize()}"
    if pack:
        return f"{head}.{pack}!{suffix}"
    return f"{head}.{suffix}"


def generate(count: int, seed: int = 0, noise: float = 0.2, detect: float = 0.9) -> Tuple[List[dict], Dict[str, Set[str]]]:
    """
    Build ``count`` scan-report records and the planted tags of each file.

    Returns:
        (records in Scan Report File shape, file_id -> planted tags)
    """
    rng = random.Random(seed)
    records = []
    truth: Dict[str, Set[str]] = {}
    groups = voting_groups()
    for index in range(count):
        family = FAMILIES[index % len(FAMILIES)]
        file_id = sha(f"{seed}:{index}")
        scans = {}
        for group in groups:
            if rng.random() >= detect:
                continue
            beh, plat = family.beh, family.plat
            if rng.random() < noise:
                if rng.random() < 0.5:
                    beh = rng.choice([token for token in BEH if token != family.beh])
                else:
                    plat = rng.choice([token for token in PLAT if token != family.plat])
            pack = family.pack if family.pack and rng.random() < 0.5 else None
            suffix = f"{rng.choice(string.ascii_lowercase)}{rng.randrange(100):02d}"
            for engine in group:
                spelled = beh + "s" if engine in MISSPELLERS else beh
                scans[engine] = _label(spelled, plat, family, pack, suffix)
        records.append({"sha256": file_id, "scans": scans, "chunk": index % 4})
        truth[file_id] = family.tags()
    return records, truth


def write_reports(path: str, records: List[dict]) -> str:
    with open(path, "wb") as handle:
        write_jsonl(records, handle)
    return path


def scan_reports(records: List[dict]) -> List[ScanReport]:
    return [
        ScanReport(
            file_id=record["sha256"],
            detections=tuple(record["scans"].items()),
            source_chunk=record.get("chunk"),
        )
        for record in records
    ]
