"""Multi-agent team consultation for rare-disease diagnosis and medication recommendation."""

__version__ = "0.1.0"

from .backend import BackendConfig, ReplayBackend, ReplayScript, make_backend
from .domain import DecisionDiagnosis, DecisionTreatment, DiagnosisCase, DrugCatalog, SymptomCode, VisitRecord
from .engine import ConsultConfig, Transcript, consult
from .memory import MemoryRecord, MemoryStore
from .roster import RoleStrategy, SpecialistPool, load_pool

__all__ = [
    "BackendConfig", "ReplayBackend", "ReplayScript", "make_backend",
    "DecisionDiagnosis", "DecisionTreatment", "DiagnosisCase", "DrugCatalog", "SymptomCode", "VisitRecord",
    "ConsultConfig", "Transcript", "consult", "MemoryRecord", "MemoryStore",
    "RoleStrategy", "SpecialistPool", "load_pool",
]
