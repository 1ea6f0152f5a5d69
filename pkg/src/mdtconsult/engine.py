"""The consultation protocol.

An attending agent forms a team from the specialist pool; each specialist
states an opinion (drawing on its own memory and tools) and the rest of the
team reviews it. A specialist whose opinion draws no revision requests has
converged. Rounds continue until every specialist has converged or the
round budget runs out, after which the attending agent summarizes the
discussion and issues the final decision.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import prompts
from .backend import ChatBackend, ChatMessage, assistant, system, user
from .domain import (
    DecisionDiagnosis,
    DecisionTreatment,
    DiagnosisCase,
    DrugCatalog,
    VisitRecord,
    render_profile,
)
from .errors import DuplicateRecordId, NoDiagnosisBlock, UnparseableDecision, ValidationError
from .memory import MemoryRecord, MemoryStore, format_history, format_similar_cases
from .parsing import extract_diagnoses, extract_medications, find_names
from .roster import ATTENDING, RoleStrategy, SpecialistPool, SpecialistRole, form_mdt
from .toolkit import ToolContext, ToolRegistry, aggregate_tool_feedback

log = logging.getLogger(__name__)

ABLATIONS = frozenset({"no_mdt", "no_memory", "no_tools"})
TASKS = ("diagnosis", "treatment")


def meeting_agent(department: str) -> str:
    return f"{department}@meeting"


@dataclass(frozen=True)
class Opinion:
    specialist: str
    round: int
    text: str

    def to_dict(self) -> dict[str, Any]:
        return {"specialist": self.specialist, "round": self.round, "text": self.text}


@dataclass(frozen=True)
class MeetingDelta:
    target: str
    round: int
    feedback_items: tuple[tuple[str, str], ...] = ()

    @property
    def converged(self) -> bool:
        return not self.feedback_items

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "round": self.round,
            "feedback_items": [{"from": src, "text": text} for src, text in self.feedback_items],
        }


@dataclass
class RoundRecord:
    opinions: list[Opinion] = field(default_factory=list)
    deltas: list[MeetingDelta] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"opinions": [o.to_dict() for o in self.opinions], "deltas": [d.to_dict() for d in self.deltas]}


@dataclass
class Transcript:
    case_id: str
    task: str
    team: list[str] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    report: str = ""
    memory_text: str = ""
    tool_text: str = ""
    decision_raw: str = ""
    decision: list[str] | None = None
    error: str | None = None

    def opinions(self) -> list[Opinion]:
        return [o for r in self.rounds for o in r.opinions]

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "task": self.task,
            "team": list(self.team),
            "rounds": [r.to_dict() for r in self.rounds],
            "report": self.report,
            "memory_text": self.memory_text,
            "tool_text": self.tool_text,
            "decision_raw": self.decision_raw,
            "decision": self.decision,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)


@dataclass(frozen=True)
class ConsultConfig:
    task: str = "diagnosis"
    max_rounds: int = 3
    ablations: frozenset[str] = frozenset()
    role_strategy: RoleStrategy = field(default_factory=RoleStrategy)
    memory_k: int = 5
    write_back: bool = False
    tools_per_round: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "ablations", frozenset(self.ablations))
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        if self.memory_k < 0:
            raise ValidationError("memory_k must be >= 0")
        unknown = self.ablations - ABLATIONS
        if unknown:
            raise ValidationError(f"unknown ablations: {sorted(unknown)}")


def parse_meeting_reply(reply: str) -> str | None:
    """None for agreement, otherwise the revision request text."""
    stripped = reply.strip()
    first = stripped.splitlines()[0].strip() if stripped else ""
    if first.startswith("AGREE"):
        return None
    if first.startswith("REVISE:"):
        return stripped[len("REVISE:"):].strip() or stripped
    return stripped or reply


def meeting(
    opinion: Opinion,
    team: Sequence[SpecialistRole],
    backend: ChatBackend,
    profile: str = "",
) -> MeetingDelta:
    """Broadcast an opinion to the rest of the team and collect revision requests."""
    items = []
    for member in team:
        if member.department == opinion.specialist:
            continue
        request = prompts.meeting_review(opinion.specialist, profile, opinion.text)
        reply = backend.complete(meeting_agent(member.department), [system(member.system_message), user(request)])
        feedback = parse_meeting_reply(reply)
        if feedback is not None:
            items.append((member.department, feedback))
    return MeetingDelta(opinion.specialist, opinion.round, tuple(items))


def summarize(opinions: Sequence[Opinion], backend: ChatBackend, profile: str = "") -> str:
    if not opinions:
        return ""
    ordered = sorted(opinions, key=lambda o: o.round)
    request = prompts.summary_request(profile, [(o.round, o.specialist, o.text) for o in ordered])
    return backend.complete(ATTENDING, [system(prompts.ATTENDING_SYSTEM), user(request)])


class _Consultation:
    """State for one run; strictly sequential."""

    def __init__(self, case, config, pool, store, registry, backend, catalog):
        self.case = case
        self.config = config
        self.pool = pool
        self.store = store
        self.registry = registry
        self.backend = backend
        self.catalog = catalog
        self.profile = render_profile(case)
        self.extra = prompts.candidate_list(catalog.names) if config.task == "treatment" else ""
        self.tool_cache: dict[tuple[str, str], str] = {}
        self.use_memory = "no_memory" not in config.ablations and store is not None
        self.use_tools = "no_tools" not in config.ablations and registry is not None

    def memory_records(self, agent: str) -> list[MemoryRecord]:
        if not self.use_memory:
            return []
        if isinstance(self.case, DiagnosisCase):
            if self.config.memory_k == 0:
                return []
            return self.store.retrieve_similar(self.case, self.config.memory_k, agent=agent)
        return self.store.retrieve_history(self.case.patient_id, self.case.visit_index, agent=agent)

    def memory_text(self, agent: str) -> str:
        records = self.memory_records(agent)
        if isinstance(self.case, DiagnosisCase):
            return format_similar_cases(records)
        return format_history(records)

    def drugs_in(self, *texts: str) -> frozenset[str]:
        if self.catalog is None:
            return frozenset()
        return frozenset(name for t in texts for _, _, name in find_names(t, self.catalog.names))

    def tool_text(self, *context_texts: str) -> str:
        if not self.use_tools:
            return ""
        ctx = ToolContext(self.case, self.drugs_in(*context_texts))
        return aggregate_tool_feedback(self.registry.run(self.config.task, ctx, self.tool_cache)).rstrip("\n")

    def run(self) -> tuple[DecisionDiagnosis | DecisionTreatment | None, Transcript]:
        cfg = self.config
        tr = Transcript(case_id=_case_id(self.case), task=cfg.task)
        team: list[SpecialistRole] = []
        if "no_mdt" not in cfg.ablations:
            team = form_mdt(self.profile, self.pool, cfg.role_strategy, self.backend)
        tr.team = [r.department for r in team]

        histories: dict[str, list[ChatMessage]] = {r.department: [system(r.system_message)] for r in team}
        memory_of: dict[str, str] = {}
        tools_of: dict[str, str] = {}
        feedback: dict[str, tuple[tuple[str, str], ...]] = {}
        converged = {r.department: False for r in team}
        all_converged = not team
        r = 0
        while not all_converged and r < cfg.max_rounds:
            all_converged = True
            record = RoundRecord()
            for role in team:
                dept = role.department
                if converged[dept]:
                    continue
                if dept not in memory_of:
                    memory_of[dept] = self.memory_text(dept)
                delta_text = "\n".join(t for _, t in feedback.get(dept, ()))
                if dept not in tools_of or cfg.tools_per_round:
                    tools_of[dept] = self.tool_text(memory_of[dept], delta_text)
                if dept not in feedback:
                    prompt = prompts.specialist_opening(self.profile, cfg.task, memory_of[dept], tools_of[dept], self.extra)
                else:
                    # memory and one-shot tool output are already in this agent's history
                    fresh_tools = tools_of[dept] if cfg.tools_per_round else ""
                    prompt = prompts.specialist_followup(feedback[dept], "", fresh_tools)
                histories[dept].append(user(prompt))
                text = self.backend.complete(dept, list(histories[dept]))
                histories[dept].append(assistant(text))
                opinion = Opinion(dept, r, text)
                delta = meeting(opinion, team, self.backend, self.profile)
                record.opinions.append(opinion)
                record.deltas.append(delta)
                if delta.converged:
                    converged[dept] = True
                else:
                    feedback[dept] = delta.feedback_items
                    all_converged = False
            tr.rounds.append(record)
            r += 1

        tr.report = summarize(tr.opinions(), self.backend, self.profile) if team else ""
        tr.memory_text = self.memory_text(ATTENDING)
        tr.tool_text = self.tool_text(tr.report, tr.memory_text)
        request = prompts.final_decision(self.profile, tr.report, tr.memory_text, tr.tool_text, cfg.task, self.extra)
        tr.decision_raw = self.backend.complete(ATTENDING, [system(prompts.ATTENDING_SYSTEM), user(request)])

        decision: DecisionDiagnosis | DecisionTreatment
        if cfg.task == "diagnosis":
            try:
                decision = extract_diagnoses(tr.decision_raw)
            except NoDiagnosisBlock as exc:
                tr.error = f"UnparseableDecision: {exc}"
                raise UnparseableDecision(str(exc), transcript=tr) from exc
            tr.decision = list(decision.ranked)
        else:
            decision = extract_medications(tr.decision_raw, self.catalog)
            tr.decision = decision.to_dict()["medications"]

        if cfg.write_back and self.store is not None:
            self.write_back(decision, [ATTENDING] + tr.team)
        return decision, tr

    def write_back(self, decision, agents: Sequence[str]) -> None:
        kind = "diagnosis_case" if isinstance(self.case, DiagnosisCase) else "visit"
        for agent in agents:
            rec = MemoryRecord(f"{agent}::{_case_id(self.case)}", kind, self.case, decision, "self_generated", agent)
            try:
                self.store.update(rec)
            except DuplicateRecordId:
                log.warning("memory record %s already exists; not overwritten", rec.record_id)


def _case_id(case: DiagnosisCase | VisitRecord) -> str:
    return case.case_id if isinstance(case, DiagnosisCase) else case.key


def consult(
    case: DiagnosisCase | VisitRecord,
    config: ConsultConfig,
    pool: SpecialistPool,
    store: MemoryStore | None,
    registry: ToolRegistry | None,
    backend: ChatBackend,
    catalog: DrugCatalog | None = None,
) -> tuple[DecisionDiagnosis | DecisionTreatment, Transcript]:
    """Run one full consultation and return the decision with its transcript."""
    expected = DiagnosisCase if config.task == "diagnosis" else VisitRecord
    if not isinstance(case, expected):
        raise ValidationError(f"task {config.task!r} needs a {expected.__name__}")
    if config.task == "treatment" and catalog is None:
        raise ValidationError("treatment consultations need a drug catalog")
    return _Consultation(case, config, pool, store, registry, backend, catalog).run()
