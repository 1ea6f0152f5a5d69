"""Dataset loaders and rare-disease cohort extraction from admission tables.

Cohort extraction works on CSV exports shaped like MIMIC-IV:

    diagnoses.csv      patient_id, visit_id, icd_version, icd_code
    procedures.csv     patient_id, visit_id, code
    prescriptions.csv  patient_id, visit_id, drug_name
    admissions.csv     patient_id, visit_id, admit_time      (optional)

and an exact-mapping CSV ``icd_version, icd_code, rare_id`` (an optional
``mapping`` column keeps only rows labelled exact, i.e. starting with "E").
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .domain import MIN_SYMPTOMS, DiagnosisCase, VisitRecord
from .errors import EmptyInput, ParseError, ValidationError

log = logging.getLogger(__name__)


def _read_jsonl(path: str | Path) -> list[tuple[int, dict[str, Any]]]:
    rows = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(row, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            rows.append((lineno, row))
    return rows


def load_diagnosis_cases(path: str | Path) -> list[DiagnosisCase]:
    cases: list[DiagnosisCase] = []
    seen: dict[str, int] = {}
    for lineno, row in _read_jsonl(path):
        try:
            case = DiagnosisCase.from_dict(row)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}:{lineno}: missing or malformed field ({exc})") from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        if len(case.symptoms) < MIN_SYMPTOMS:
            raise ValidationError(
                f"{path}:{lineno}: case {case.case_id} has {len(case.symptoms)} symptoms, "
                f"at least {MIN_SYMPTOMS} required"
            )
        if case.case_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate case_id {case.case_id!r} (first on line {seen[case.case_id]})")
        seen[case.case_id] = lineno
        cases.append(case)
    return cases


def load_visits(path: str | Path) -> list[VisitRecord]:
    visits: list[VisitRecord] = []
    for lineno, row in _read_jsonl(path):
        try:
            visits.append(VisitRecord.from_dict(row))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: missing or malformed field ({exc})") from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    check_visit_indices(visits)
    return visits


def check_visit_indices(visits: Iterable[VisitRecord]) -> None:
    by_patient: dict[str, list[int]] = defaultdict(list)
    for v in visits:
        by_patient[v.patient_id].append(v.visit_index)
    for pid, idx in by_patient.items():
        if sorted(idx) != list(range(1, len(idx) + 1)):
            raise ValidationError(f"patient {pid}: visit indices {sorted(idx)} are not contiguous from 1")


def write_jsonl(path: str | Path, items: Iterable[DiagnosisCase | VisitRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False) + "\n")


def load_catalog_names(path: str | Path) -> list[str]:
    """A catalog file is a JSON array of names or one name per line."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        try:
            return [str(x) for x in json.loads(text)]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    return [line.strip() for line in text.splitlines() if line.strip()]


def disease_code(version: int, code: str) -> str:
    return f"ICD{version}:{code}"


def split_disease_code(s: str) -> tuple[int, str]:
    head, _, code = s.partition(":")
    if not head.startswith("ICD") or not code:
        raise ValidationError(f"not a versioned ICD code: {s!r}")
    return int(head[3:]), code


def _norm_code(code: str) -> str:
    return code.strip().replace(".", "").upper()


@dataclass
class ICDMapping:
    entries: dict[tuple[int, str], set[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def is_rare(self, version: int, code: str) -> bool:
        return (version, _norm_code(code)) in self.entries

    @classmethod
    def load_csv(cls, path: str | Path) -> "ICDMapping":
        mapping = cls()
        for lineno, row in _read_csv(path, {"icd_version", "icd_code", "rare_id"}):
            label = (row.get("mapping") or "E").strip()
            if not label.upper().startswith("E"):
                continue
            version = _icd_version(row["icd_version"], path, lineno)
            mapping.entries.setdefault((version, _norm_code(row["icd_code"])), set()).add(row["rare_id"].strip())
        return mapping


def _icd_version(raw: str, path, lineno: int) -> int:
    try:
        v = int(str(raw).strip())
    except ValueError:
        v = -1
    if v not in (9, 10):
        raise ParseError(f"{path}:{lineno}: icd_version must be 9 or 10, got {raw!r}")
    return v


def _read_csv(path: str | Path, required: set[str]) -> list[tuple[int, dict[str, str]]]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if not required <= fields:
            raise ParseError(f"{path}: missing columns {sorted(required - fields)}")
        rows = []
        for row in reader:
            if None in row or any(row[c] is None for c in required):
                raise ParseError(f"{path}:{reader.line_num}: wrong number of fields")
            rows.append((reader.line_num, row))
        return rows


@dataclass
class RawAdmissionTables:
    diagnoses: list[tuple[str, str, int, str]] = field(default_factory=list)
    procedures: list[tuple[str, str, str]] = field(default_factory=list)
    prescriptions: list[tuple[str, str, str]] = field(default_factory=list)
    admit_times: dict[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def load_dir(cls, directory: str | Path) -> "RawAdmissionTables":
        d = Path(directory)
        t = cls()
        path = d / "diagnoses.csv"
        for lineno, row in _read_csv(path, {"patient_id", "visit_id", "icd_version", "icd_code"}):
            t.diagnoses.append(
                (row["patient_id"].strip(), row["visit_id"].strip(), _icd_version(row["icd_version"], path, lineno), row["icd_code"].strip())
            )
        for _, row in _read_csv(d / "procedures.csv", {"patient_id", "visit_id", "code"}):
            t.procedures.append((row["patient_id"].strip(), row["visit_id"].strip(), row["code"].strip()))
        for _, row in _read_csv(d / "prescriptions.csv", {"patient_id", "visit_id", "drug_name"}):
            t.prescriptions.append((row["patient_id"].strip(), row["visit_id"].strip(), row["drug_name"].strip()))
        if (d / "admissions.csv").exists():
            for _, row in _read_csv(d / "admissions.csv", {"patient_id", "visit_id", "admit_time"}):
                t.admit_times[(row["patient_id"].strip(), row["visit_id"].strip())] = row["admit_time"].strip()
        return t

    def write_dir(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        tables = {
            "diagnoses.csv": (["patient_id", "visit_id", "icd_version", "icd_code"], self.diagnoses),
            "procedures.csv": (["patient_id", "visit_id", "code"], self.procedures),
            "prescriptions.csv": (["patient_id", "visit_id", "drug_name"], self.prescriptions),
        }
        if self.admit_times:
            rows = [(p, v, t) for (p, v), t in self.admit_times.items()]
            tables["admissions.csv"] = (["patient_id", "visit_id", "admit_time"], rows)
        for name, (header, rows) in tables.items():
            with open(d / name, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)


def extract_rare_cohort(tables: RawAdmissionTables, mapping: ICDMapping) -> list[VisitRecord]:
    """Visits of rare-disease patients with at least two complete admissions.

    Admissions lacking diagnoses or prescriptions are dropped first, so every
    emitted patient keeps two or more visits and a rare code on at least one
    of them.
    """
    diag: dict[tuple[str, str], list[tuple[int, str]]] = defaultdict(list)
    for pid, vid, version, code in tables.diagnoses:
        if (version, code) not in diag[(pid, vid)]:
            diag[(pid, vid)].append((version, code))
    procs: dict[tuple[str, str], list[str]] = defaultdict(list)
    for pid, vid, code in tables.procedures:
        if code and code not in procs[(pid, vid)]:
            procs[(pid, vid)].append(code)
    meds: dict[tuple[str, str], set[str]] = defaultdict(set)
    for pid, vid, name in tables.prescriptions:
        if name:
            meds[(pid, vid)].add(name)

    complete = [key for key in diag if diag[key] and meds.get(key)]
    by_patient: dict[str, list[str]] = defaultdict(list)
    for pid, vid in complete:
        by_patient[pid].append(vid)

    out: list[VisitRecord] = []
    for pid in sorted(by_patient):
        vids = by_patient[pid]
        rare = any(mapping.is_rare(v, c) for vid in vids for v, c in diag[(pid, vid)])
        if not rare or len(vids) < 2:
            continue
        vids.sort(key=lambda vid: (tables.admit_times.get((pid, vid), ""), vid))
        for i, vid in enumerate(vids, 1):
            out.append(
                VisitRecord(
                    patient_id=pid,
                    visit_index=i,
                    diseases=tuple(disease_code(v, c) for v, c in diag[(pid, vid)]),
                    procedures=tuple(procs.get((pid, vid), ())),
                    gold_medications=frozenset(meds[(pid, vid)]),
                )
            )
    return out


def records_to_tables(records: Sequence[VisitRecord]) -> RawAdmissionTables:
    """Re-encode visit records as admission tables (visit ids sort in visit order)."""
    t = RawAdmissionTables()
    for r in records:
        vid = f"{r.visit_index:06d}"
        for d in r.diseases:
            version, code = split_disease_code(d)
            t.diagnoses.append((r.patient_id, vid, version, code))
        for p in r.procedures:
            t.procedures.append((r.patient_id, vid, p))
        for m in sorted(r.gold_medications):
            t.prescriptions.append((r.patient_id, vid, m))
    return t


@dataclass(frozen=True)
class CohortStats:
    n_patients: int
    n_visits: int
    n_diseases: int
    n_procedures: int
    n_medications: int
    avg_diseases: float
    avg_procedures: float
    avg_medications: float
    max_diseases: int
    max_procedures: int
    max_medications: int

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def cohort_stats(records: Sequence[VisitRecord]) -> CohortStats:
    if not records:
        raise EmptyInput("no visit records")
    n = len(records)
    dl = [len(r.diseases) for r in records]
    pl = [len(r.procedures) for r in records]
    ml = [len(r.gold_medications) for r in records]
    return CohortStats(
        n_patients=len({r.patient_id for r in records}),
        n_visits=n,
        n_diseases=len({d for r in records for d in r.diseases}),
        n_procedures=len({p for r in records for p in r.procedures}),
        n_medications=len({m for r in records for m in r.gold_medications}),
        avg_diseases=sum(dl) / n,
        avg_procedures=sum(pl) / n,
        avg_medications=sum(ml) / n,
        max_diseases=max(dl),
        max_procedures=max(pl),
        max_medications=max(ml),
    )
