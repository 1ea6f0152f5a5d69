"""Turning model replies into decisions and ranking them against gold labels."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .backend import ChatBackend, system, user
from .domain import (
    MAX_DIAGNOSES,
    DecisionDiagnosis,
    DecisionTreatment,
    DrugCatalog,
    normalize_label,
)
from .errors import NoDiagnosisBlock

_WORD = r"[^\W_]"


@lru_cache(maxsize=64)
def _name_pattern(name: str) -> re.Pattern[str]:
    tokens = name.split()
    body = r"\s+".join(re.escape(t) for t in tokens)
    return re.compile(rf"(?<!{_WORD}){body}(?!{_WORD})", re.IGNORECASE)


def find_names(text: str, names: Iterable[str]) -> list[tuple[int, int, str]]:
    """Locate non-overlapping whole-token occurrences of ``names`` in ``text``.

    Matching is case-insensitive and tolerates any run of whitespace between
    the words of a name. Where candidate occurrences overlap, the longest one
    is kept (earliest start on equal length). Returns ``(start, end, name)``
    sorted by position.
    """
    candidates = []
    for name in dict.fromkeys(names):
        if not name.strip():
            continue
        pat = _name_pattern(name)
        pos = 0
        while True:
            m = pat.search(text, pos)
            if m is None:
                break
            candidates.append((m.start(), m.end(), name))
            pos = m.start() + 1
    candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0], c[2]))
    taken: list[tuple[int, int, str]] = []
    for start, end, name in candidates:
        if all(end <= s or start >= e for s, e, _ in taken):
            taken.append((start, end, name))
    return sorted(taken)


_TREATMENT_HEADER = re.compile(r"^[\s*#_]*TREATMENT[\s*_]*:", re.IGNORECASE | re.MULTILINE)


def extract_medications(text: str, catalog: DrugCatalog) -> DecisionTreatment:
    """Catalog drugs named in ``text``.

    When the reply contains a ``TREATMENT:`` block only the text after the
    last such header is scanned.
    """
    headers = list(_TREATMENT_HEADER.finditer(text))
    if headers:
        text = text[headers[-1].end():]
    found = find_names(text, catalog.names)
    return DecisionTreatment(frozenset(name for _, _, name in found))


_DIAGNOSIS_HEADER = re.compile(r"^[\s*#_]*DIAGNOSIS[\s*_]*:[\s*_]*$", re.IGNORECASE | re.MULTILINE)
_ITEM = re.compile(r"^\s*(?:[-*]\s+)?[*_]*(\d{1,2})[*_]*[.)]\s*(.*?)\s*$")
_BOLD = re.compile(r"^(\*\*|__)(.+?)\1")


def _clean_diagnosis(raw: str) -> str:
    m = _BOLD.match(raw)
    if m:
        name = m.group(2)
    else:
        name = raw.replace("**", "").replace("__", "")
        name = name.split(" - ", 1)[0]
    prev = None
    while prev != name:
        prev = name
        name = name.strip().strip("*_").rstrip(".:;,")
    return name


def extract_diagnoses(text: str) -> DecisionDiagnosis:
    headers = list(_DIAGNOSIS_HEADER.finditer(text))
    if not headers:
        raise NoDiagnosisBlock("reply has no 'DIAGNOSIS:' block")
    lines = text[headers[-1].end():].splitlines()
    ranked: list[str] = []
    seen: set[str] = set()
    expected = 1
    for line in lines:
        if not line.strip():
            continue
        m = _ITEM.match(line)
        if m is None or int(m.group(1)) != expected:
            if expected == 1 and m is None:
                continue
            break
        expected += 1
        name = _clean_diagnosis(m.group(2))
        key = normalize_label(name)
        if name and key not in seen:
            seen.add(key)
            ranked.append(name)
        if expected > MAX_DIAGNOSES:
            break
    return DecisionDiagnosis(tuple(ranked))


def rank_exact(predictions: DecisionDiagnosis | Sequence[str], golds: Iterable[str]) -> int | None:
    """1-based position of the best-ranked prediction that equals a gold label."""
    ranked = predictions.ranked if isinstance(predictions, DecisionDiagnosis) else predictions
    gold_keys = {normalize_label(g) for g in golds}
    for i, p in enumerate(ranked, 1):
        if normalize_label(p) in gold_keys:
            return i
    return None


@dataclass(frozen=True)
class JudgeVerdict:
    rank: int | None
    raw: str


JUDGE_AGENT = "judge"


def judge_template() -> str:
    return resources.files("mdtconsult.data").joinpath("judge_prompt.txt").read_text(encoding="utf-8")


def parse_judge_reply(raw: str) -> JudgeVerdict:
    token = raw.strip()
    if re.fullmatch(r"\d{1,2}", token) and 1 <= int(token) <= MAX_DIAGNOSES:
        return JudgeVerdict(int(token), raw)
    return JudgeVerdict(None, raw)


def rank_judge(
    predictions: DecisionDiagnosis,
    golds: Sequence[str],
    judge_backend: ChatBackend,
    agent_id: str = JUDGE_AGENT,
) -> JudgeVerdict:
    """Ask an external model whether, and where, a gold diagnosis was predicted."""
    filled = (
        judge_template()
        .replace("{{predict_diagnosis_list}}", "; ".join(f"{i}. {d}" for i, d in enumerate(predictions.ranked, 1)))
        .replace("{{golden_diagnosis}}", "; ".join(golds))
    )
    persona, _, task = filled.partition("\n\n")
    reply = judge_backend.complete(agent_id, [system(persona.strip()), user(task.strip())])
    return parse_judge_reply(reply)
