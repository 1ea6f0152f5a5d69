"""Core value types and patient-profile rendering."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .errors import ValidationError

MAX_DIAGNOSES = 10
# dataset-level floor; enforced by the loaders, not the type
MIN_SYMPTOMS = 3


def normalize_label(s: str) -> str:
    """Fold case and whitespace so labels from different sources compare equal."""
    s = unicodedata.normalize("NFC", s).lower()
    s = unicodedata.normalize("NFC", s)
    return " ".join(s.split())


@dataclass(frozen=True)
class SymptomCode:
    id: str
    label: str

    def __post_init__(self) -> None:
        if not self.id or not self.id.strip():
            raise ValidationError("symptom id must be non-empty")
        if not self.label or not self.label.strip():
            raise ValidationError(f"symptom {self.id} has an empty label")

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SymptomCode":
        return cls(id=str(d["id"]), label=str(d["label"]))


@dataclass(frozen=True)
class DiagnosisCase:
    case_id: str
    symptoms: tuple[SymptomCode, ...]
    gold_diagnoses: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "symptoms", tuple(self.symptoms))
        object.__setattr__(self, "gold_diagnoses", tuple(self.gold_diagnoses))
        if not self.case_id:
            raise ValidationError("case_id must be non-empty")
        ids = [s.id for s in self.symptoms]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"case {self.case_id}: duplicate symptom ids")
        if not ids:
            raise ValidationError(f"case {self.case_id}: no symptoms")
        if not self.gold_diagnoses:
            raise ValidationError(f"case {self.case_id}: no gold diagnoses")

    @property
    def symptom_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.symptoms)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "symptoms": [s.to_dict() for s in self.symptoms],
            "gold_diagnoses": list(self.gold_diagnoses),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DiagnosisCase":
        return cls(
            case_id=str(d["case_id"]),
            symptoms=tuple(SymptomCode.from_dict(s) for s in d["symptoms"]),
            gold_diagnoses=tuple(str(g) for g in d["gold_diagnoses"]),
        )


@dataclass(frozen=True)
class VisitRecord:
    patient_id: str
    visit_index: int
    diseases: tuple[str, ...]
    procedures: tuple[str, ...] = ()
    gold_medications: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "diseases", tuple(self.diseases))
        object.__setattr__(self, "procedures", tuple(self.procedures))
        object.__setattr__(self, "gold_medications", frozenset(self.gold_medications))
        if not self.patient_id:
            raise ValidationError("patient_id must be non-empty")
        if not isinstance(self.visit_index, int) or self.visit_index < 1:
            raise ValidationError(f"patient {self.patient_id}: visit_index must be >= 1")
        if not self.diseases:
            raise ValidationError(
                f"patient {self.patient_id} visit {self.visit_index}: no diseases"
            )

    @property
    def key(self) -> str:
        return f"{self.patient_id}#{self.visit_index}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "patient_id": self.patient_id,
            "visit_index": self.visit_index,
            "diseases": list(self.diseases),
            "procedures": list(self.procedures),
            "gold_medications": sorted(self.gold_medications, key=normalize_label),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VisitRecord":
        return cls(
            patient_id=str(d["patient_id"]),
            visit_index=int(d["visit_index"]),
            diseases=tuple(d["diseases"]),
            procedures=tuple(d.get("procedures", ())),
            gold_medications=frozenset(d.get("gold_medications", ())),
        )


class DrugCatalog:
    """The medication space a treatment decision may draw from."""

    def __init__(self, names: Iterable[str]):
        self.names: tuple[str, ...] = tuple(names)
        if not self.names:
            raise ValidationError("drug catalog is empty")
        self._by_norm: dict[str, str] = {}
        for name in self.names:
            key = normalize_label(name)
            if not key:
                raise ValidationError("drug catalog contains a blank name")
            if key in self._by_norm:
                raise ValidationError(f"duplicate drug in catalog: {name!r}")
            self._by_norm[key] = name

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and normalize_label(name) in self._by_norm

    def canonical(self, name: str) -> str | None:
        """Catalog spelling of ``name``, or None if it is not in the catalog."""
        return self._by_norm.get(normalize_label(name))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DrugCatalog) and self.names == other.names

    def __repr__(self) -> str:
        return f"DrugCatalog({len(self.names)} drugs)"


@dataclass(frozen=True)
class DecisionDiagnosis:
    ranked: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranked", tuple(self.ranked))
        if len(self.ranked) > MAX_DIAGNOSES:
            raise ValidationError(f"at most {MAX_DIAGNOSES} diagnoses allowed")
        norm = [normalize_label(d) for d in self.ranked]
        if len(set(norm)) != len(norm):
            raise ValidationError("duplicate diagnoses in ranked list")

    def to_dict(self) -> dict[str, Any]:
        return {"ranked": list(self.ranked)}


@dataclass(frozen=True)
class DecisionTreatment:
    medications: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "medications", frozenset(self.medications))

    def check_against(self, catalog: DrugCatalog) -> None:
        missing = sorted(m for m in self.medications if m not in catalog)
        if missing:
            raise ValidationError(f"medications outside the catalog: {missing}")

    def normalized(self) -> frozenset[str]:
        return frozenset(normalize_label(m) for m in self.medications)

    def to_dict(self) -> dict[str, Any]:
        return {"medications": sorted(self.medications, key=normalize_label)}


Case = DiagnosisCase | VisitRecord
Decision = DecisionDiagnosis | DecisionTreatment


def render_profile(case: Case, history: Sequence[VisitRecord] = ()) -> str:
    """Render a case as the patient's opening utterance.

    ``history`` lists earlier visits of the same patient; when empty no
    prior-visit section is produced.
    """
    if isinstance(case, DiagnosisCase):
        labels = ", ".join(s.label for s in case.symptoms)
        return (
            f"I am experiencing the following symptoms: {labels}. "
            "I would like to request you to diagnose the cause of my illness."
        )
    parts = [f"I was diagnosed the following diseases: {'; '.join(case.diseases)}"]
    if case.procedures:
        parts.append(f"and I have received the following procedures: {'; '.join(case.procedures)}")
    text = ", ".join(parts) + "."
    if history:
        lines = ["My previous admissions were:"]
        for prior in history:
            line = f"Admission {prior.visit_index}: diseases {'; '.join(prior.diseases)}"
            if prior.procedures:
                line += f"; procedures {'; '.join(prior.procedures)}"
            lines.append(line + ".")
        text += " " + " ".join(lines)
    return text + " I would like to request you to provide the most appropriate combination of medications for me."
