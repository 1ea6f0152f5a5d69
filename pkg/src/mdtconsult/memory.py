"""Long-term memory: similar-case retrieval, prior-visit retrieval, write-back.

Diagnosis memories are ranked by cosine similarity of hashed bag-of-symptom
embeddings; treatment memories are the patient's earlier admissions.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .domain import (
    DecisionDiagnosis,
    DecisionTreatment,
    DiagnosisCase,
    SymptomCode,
    VisitRecord,
    normalize_label,
)
from .errors import DuplicateRecordId, EmptyProfile, ParseError, ValidationError

DEFAULT_DIM = 256
KINDS = ("diagnosis_case", "visit")
SOURCES = ("seed_corpus", "self_generated")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    # signed bucket counts from the hashing embedder; None for external vectors
    counts: tuple[int, ...] | None = None

    @property
    def dimension(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def _hash64(token: str, salt: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=salt).digest(), "big")


def bucket_of(token: str, dimension: int = DEFAULT_DIM) -> tuple[int, int]:
    """(bucket index, sign) a token hashes to."""
    index = _hash64(token, b"mdt-bucket") % dimension
    sign = 1 if _hash64(token, b"mdt-sign") & 1 else -1
    return index, sign


def _tokens(profile: DiagnosisCase | str | Iterable[SymptomCode]) -> list[str]:
    if isinstance(profile, DiagnosisCase):
        return list(profile.symptom_ids)
    if isinstance(profile, str):
        return re.findall(r"[^\W_]+", normalize_label(profile))
    return list(dict.fromkeys(s.id for s in profile))


def embed(profile: DiagnosisCase | str | Iterable[SymptomCode], dimension: int = DEFAULT_DIM) -> EmbeddingVector:
    """Feature-hash a case's symptom ids (or a text's word tokens) and L2-normalize."""
    tokens = _tokens(profile)
    if not tokens:
        raise EmptyProfile("cannot embed an empty profile")
    counts = [0] * dimension
    for tok in tokens:
        i, sign = bucket_of(tok, dimension)
        counts[i] += sign
    norm = math.sqrt(sum(c * c for c in counts))
    values = tuple(c / norm for c in counts) if norm else tuple(0.0 for _ in counts)
    return EmbeddingVector(values, tuple(counts))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise ValidationError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    na, nb = a.norm, b.norm
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a.values, b.values)) / (na * nb)


def _exact_key(a: EmbeddingVector, b: EmbeddingVector) -> Fraction | float:
    # sign(cos) * cos^2 as a rational: ranks identically to cosine, without rounding
    if a.counts is None or b.counts is None:
        return cosine(a, b)
    dot = sum(x * y for x, y in zip(a.counts, b.counts))
    sa = sum(x * x for x in a.counts)
    sb = sum(x * x for x in b.counts)
    if sa == 0 or sb == 0:
        return Fraction(0)
    return Fraction(dot * abs(dot), sa * sb)


@dataclass(frozen=True)
class MemoryRecord:
    record_id: str
    kind: str
    profile_snapshot: DiagnosisCase | VisitRecord
    decision: DecisionDiagnosis | DecisionTreatment
    source: str = "seed_corpus"
    # owning agent for self-generated memories; None means visible to every agent
    agent: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown memory kind {self.kind!r}")
        if self.source not in SOURCES:
            raise ValidationError(f"unknown memory source {self.source!r}")
        if self.kind == "diagnosis_case":
            ok = isinstance(self.profile_snapshot, DiagnosisCase) and isinstance(self.decision, DecisionDiagnosis)
        else:
            ok = isinstance(self.profile_snapshot, VisitRecord) and isinstance(self.decision, DecisionTreatment)
        if not ok:
            raise ValidationError(f"record {self.record_id}: snapshot/decision types do not match kind {self.kind}")

    def visible_to(self, agent: str | None) -> bool:
        return agent is None or self.agent is None or self.agent == agent

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "kind": self.kind,
            "profile_snapshot": self.profile_snapshot.to_dict(),
            "decision": self.decision.to_dict(),
            "source": self.source,
            "agent": self.agent,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MemoryRecord":
        if d["kind"] == "diagnosis_case":
            snap = DiagnosisCase.from_dict(d["profile_snapshot"])
            dec = DecisionDiagnosis(tuple(d["decision"]["ranked"]))
        else:
            snap = VisitRecord.from_dict(d["profile_snapshot"])
            dec = DecisionTreatment(frozenset(d["decision"]["medications"]))
        return cls(d["record_id"], d["kind"], snap, dec, d.get("source", "seed_corpus"), d.get("agent"))

    @classmethod
    def seed_case(cls, case: DiagnosisCase) -> "MemoryRecord":
        golds = {normalize_label(g): g for g in reversed(case.gold_diagnoses)}
        ranked = [golds[k] for k in dict.fromkeys(normalize_label(g) for g in case.gold_diagnoses)]
        return cls(f"case:{case.case_id}", "diagnosis_case", case, DecisionDiagnosis(tuple(ranked[:10])))

    @classmethod
    def seed_visit(cls, visit: VisitRecord) -> "MemoryRecord":
        return cls(f"visit:{visit.key}", "visit", visit, DecisionTreatment(visit.gold_medications))


class _RWLock:
    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


Embedder = Callable[[DiagnosisCase], EmbeddingVector]


class MemoryStore:
    def __init__(self, dimension: int = DEFAULT_DIM, embedder: Embedder | None = None):
        self.dimension = dimension
        self._embedder = embedder or (lambda p: embed(p, dimension))
        self.records: dict[str, MemoryRecord] = {}
        self.index: dict[str, EmbeddingVector] = {}
        self.visit_index: dict[str, list[str]] = {}
        self._lock = _RWLock()

    def __len__(self) -> int:
        return len(self.records)

    def embed(self, profile: DiagnosisCase) -> EmbeddingVector:
        vec = self._embedder(profile)
        if vec.dimension != self.dimension:
            raise ValidationError(f"embedder returned dimension {vec.dimension}, store uses {self.dimension}")
        return vec

    def update(self, record: MemoryRecord) -> None:
        vec = self.embed(record.profile_snapshot) if record.kind == "diagnosis_case" else None
        with self._lock.write():
            if record.record_id in self.records:
                raise DuplicateRecordId(record.record_id)
            self.records[record.record_id] = record
            if vec is not None:
                self.index[record.record_id] = vec
            else:
                visits = self.visit_index.setdefault(record.profile_snapshot.patient_id, [])
                visits.append(record.record_id)
                visits.sort(key=lambda rid: (self.records[rid].profile_snapshot.visit_index, rid))

    def extend(self, records: Iterable[MemoryRecord]) -> None:
        for r in records:
            self.update(r)

    def retrieve_similar_scored(
        self, profile: DiagnosisCase, k: int, agent: str | None = None
    ) -> list[tuple[MemoryRecord, float]]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        query = self.embed(profile)
        with self._lock.read():
            scored = []
            for rid, vec in self.index.items():
                rec = self.records[rid]
                if rec.profile_snapshot.case_id == profile.case_id or not rec.visible_to(agent):
                    continue
                scored.append((_exact_key(query, vec), rid, cosine(query, vec)))
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [(self.records[rid], sim) for _, rid, sim in scored[:k]]

    def retrieve_similar(self, profile: DiagnosisCase, k: int, agent: str | None = None) -> list[MemoryRecord]:
        """Top-k most similar stored diagnosis cases, excluding the query case itself."""
        return [r for r, _ in self.retrieve_similar_scored(profile, k, agent)]

    def retrieve_history(self, patient_id: str, visit_index: int, agent: str | None = None) -> list[MemoryRecord]:
        """Records of visits 1..n-1, one per visit, preferring ground-truth seed records."""
        if visit_index < 1:
            raise ValidationError("visit_index must be >= 1")
        with self._lock.read():
            chosen: dict[int, MemoryRecord] = {}
            for rid in self.visit_index.get(patient_id, []):
                rec = self.records[rid]
                v = rec.profile_snapshot.visit_index
                if v >= visit_index or not rec.visible_to(agent):
                    continue
                current = chosen.get(v)
                if current is None or (current.source != "seed_corpus" and rec.source == "seed_corpus"):
                    chosen[v] = rec
                elif current.source == rec.source == "self_generated":
                    chosen[v] = rec
        return [chosen[v] for v in sorted(chosen)]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with self._lock.read():
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps({"format": "mdt-memory", "dimension": self.dimension}) + "\n")
                for rid in sorted(self.records):
                    fh.write(json.dumps(self.records[rid].to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            vectors = {rid: list(self.index[rid].values) for rid in sorted(self.index)}
            with open(vectors_path(path), "w", encoding="utf-8") as fh:
                json.dump({"dimension": self.dimension, "vectors": vectors}, fh)

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder | None = None) -> "MemoryStore":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
            header = json.loads(lines[0])
            dimension = int(header["dimension"])
            store = cls(dimension, embedder)
            for lineno, line in enumerate(lines[1:], 2):
                if line.strip():
                    store.update(MemoryRecord.from_dict(json.loads(line)))
        except (IndexError, ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: {exc}") from exc
        side = vectors_path(path)
        if side.exists():
            stamped = json.loads(side.read_text(encoding="utf-8")).get("dimension")
            if stamped != dimension:
                raise ParseError(f"{side}: dimension {stamped} does not match store dimension {dimension}")
        return store


def vectors_path(path: Path) -> Path:
    return path.with_name(path.name + ".vectors.json")


def seed_store(items: Iterable[DiagnosisCase | VisitRecord], dimension: int = DEFAULT_DIM) -> MemoryStore:
    store = MemoryStore(dimension)
    for item in items:
        rec = MemoryRecord.seed_case(item) if isinstance(item, DiagnosisCase) else MemoryRecord.seed_visit(item)
        store.update(rec)
    return store


_ORDINALS = ("First", "Second", "Third", "Fourth", "Fifth", "Sixth", "Seventh", "Eighth", "Ninth", "Tenth")


def format_similar_cases(records: Sequence[MemoryRecord]) -> str:
    if not records:
        return ""
    lines = ["Consider these previous cases for reference:"]
    for i, rec in enumerate(records, 1):
        symptoms = ", ".join(s.label for s in rec.profile_snapshot.symptoms)
        if rec.source == "seed_corpus":
            outcome = f"was diagnosed with {'; '.join(rec.decision.ranked)}"
        else:
            outcome = f"was previously assessed with the differential: {'; '.join(rec.decision.ranked)}"
        lines.append(f"{i}. Patient with symptoms: {symptoms} {outcome}.")
    return "\n".join(lines)


def format_history(records: Sequence[MemoryRecord]) -> str:
    if not records:
        return ""
    lines = ["Consider these previous visits for reference:"]
    for i, rec in enumerate(records):
        visit = rec.profile_snapshot
        label = f"{_ORDINALS[i]} admission" if i < len(_ORDINALS) else f"Admission {i + 1}"
        text = f"{label}: Patient with a diagnosis of {'; '.join(visit.diseases)}"
        if visit.procedures:
            text += f" and a history of procedures including {'; '.join(visit.procedures)}"
        meds = sorted(rec.decision.medications, key=normalize_label)
        lines.append(f"{text} has a prior medication record of: {meds!r}.")
    return "\n".join(lines)
