"""Medical tools: diagnostic predictors, drug monographs and the DDI graph.

Diagnostic predictors are external services. In ``fixture`` mode their
recorded outputs are looked up by (tool name, sorted symptom ids) and no
network access happens; in ``live`` mode a thin HTTP shim posts the symptom
ids and expects the same JSON shape back.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import httpx

from .domain import DiagnosisCase, DrugCatalog, SymptomCode, VisitRecord, normalize_label
from .errors import (
    FixtureMiss,
    MalformedToolOutput,
    NotFound,
    ParseError,
    TransportError,
    UnknownDrug,
    ValidationError,
)

log = logging.getLogger(__name__)

INPUT_KINDS = ("symptom_set", "drug_set", "drug_name")
MODES = ("live", "fixture")
SCORE_KINDS = ("p_value", "posterior", "score")
MAX_PREDICTIONS = 10


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    input_kind: str
    mode: str = "fixture"

    def __post_init__(self) -> None:
        if self.input_kind not in INPUT_KINDS:
            raise ValidationError(f"tool {self.name}: unknown input kind {self.input_kind!r}")
        if self.mode not in MODES:
            raise ValidationError(f"tool {self.name}: unknown mode {self.mode!r}")


@dataclass(frozen=True)
class RankedPrediction:
    disease: str
    score: float
    score_kind: str

    def render(self) -> str:
        if self.score_kind == "p_value":
            return f"{self.disease}, p-value: {self.score:.4f}"
        if self.score_kind == "posterior":
            return f"{self.disease}, posterior probability: {self.score * 100:.2f} %"
        return f"{self.disease}, score: {self.score!r}"


@dataclass(frozen=True)
class LabeledOutput:
    tool: str
    text: str


def symptom_key(symptoms: Iterable[SymptomCode]) -> str:
    return ",".join(sorted({s.id for s in symptoms}))


def drug_key(drugs: Iterable[str]) -> str:
    return "|".join(sorted({normalize_label(d) for d in drugs}))


class FixtureStore:
    """Recorded tool outputs keyed by (tool, input_key)."""

    def __init__(self, entries: dict[tuple[str, str], Any] | None = None):
        self.entries = dict(entries or {})

    @classmethod
    def load(cls, path: str | Path) -> "FixtureStore":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    entries[(str(d["tool"]), str(d["input_key"]))] = d["output"]
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad fixture entry ({exc})") from exc
        return cls(entries)

    def add(self, tool: str, input_key: str, output: Any) -> None:
        self.entries[(tool, input_key)] = output

    def lookup(self, tool: str, input_key: str) -> Any:
        try:
            return self.entries[(tool, input_key)]
        except KeyError:
            raise FixtureMiss(f"no fixture for tool {tool!r} and input {input_key!r}") from None


def _parse_predictions(tool: str, raw: Any) -> list[RankedPrediction]:
    if not isinstance(raw, list):
        raise MalformedToolOutput(f"{tool}: expected a list of predictions")
    out = []
    for item in raw[:MAX_PREDICTIONS]:
        try:
            pred = RankedPrediction(str(item["disease"]), float(item["score"]), str(item["score_kind"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedToolOutput(f"{tool}: bad prediction entry {item!r}") from exc
        if pred.score_kind not in SCORE_KINDS or not pred.disease:
            raise MalformedToolOutput(f"{tool}: bad prediction entry {item!r}")
        out.append(pred)
    return out


class DiagnosticTool:
    def __init__(
        self,
        spec: ToolSpec,
        fixtures: FixtureStore | None = None,
        endpoint_url: str | None = None,
        client: httpx.Client | None = None,
    ):
        if spec.input_kind != "symptom_set":
            raise ValidationError(f"{spec.name}: diagnostic tools take symptom sets")
        if spec.mode == "fixture" and fixtures is None:
            raise ValidationError(f"{spec.name}: fixture mode needs a fixture store")
        if spec.mode == "live" and not endpoint_url:
            raise ValidationError(f"{spec.name}: live mode needs an endpoint")
        self.spec = spec
        self.fixtures = fixtures
        self.endpoint_url = endpoint_url
        self._client = client

    def predict(self, symptoms: Sequence[SymptomCode]) -> list[RankedPrediction]:
        if not symptoms:
            raise ValidationError("diagnostic tools need at least one symptom")
        key = symptom_key(symptoms)
        if self.spec.mode == "fixture":
            return _parse_predictions(self.spec.name, self.fixtures.lookup(self.spec.name, key))
        client = self._client or httpx.Client(timeout=60.0)
        try:
            resp = client.post(self.endpoint_url, json={"symptoms": sorted({s.id for s in symptoms})})
        except httpx.HTTPError as exc:
            raise TransportError(f"{self.spec.name}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"{self.spec.name}: HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise MalformedToolOutput(f"{self.spec.name}: response is not JSON") from exc
        return _parse_predictions(self.spec.name, payload)


def invoke_diagnostic(tool: DiagnosticTool, symptoms: Sequence[SymptomCode]) -> list[RankedPrediction]:
    return tool.predict(symptoms)


def render_predictions(preds: Sequence[RankedPrediction]) -> str:
    return "\n".join(f"{i}. {p.render()}" for i, p in enumerate(preds, 1))


@dataclass
class DDIGraph:
    drugs: DrugCatalog
    edges: dict[frozenset[str], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean: dict[frozenset[str], str] = {}
        for pair, ann in self.edges.items():
            a, b = self._endpoints(pair)
            clean[frozenset((a, b))] = ann
        self.edges = clean

    def _endpoints(self, pair: Iterable[str]) -> tuple[str, str]:
        names = [self._canon(x) for x in pair]
        if len(set(names)) != 2:
            raise ValidationError(f"DDI edge {sorted(pair)} is a self-loop or malformed")
        return names[0], names[1]

    def _canon(self, name: str) -> str:
        canon = self.drugs.canonical(name)
        if canon is None:
            raise UnknownDrug(f"drug {name!r} is not in the catalog")
        return canon

    def add_edge(self, a: str, b: str, annotation: str = "") -> None:
        x, y = self._endpoints((a, b))
        self.edges[frozenset((x, y))] = annotation

    def has_edge(self, a: str, b: str) -> bool:
        return frozenset((self._canon(a), self._canon(b))) in self.edges

    @classmethod
    def load_csv(cls, path: str | Path, catalog: DrugCatalog) -> "DDIGraph":
        graph = cls(catalog)
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or not {"drug_a", "drug_b"} <= set(reader.fieldnames):
                raise ParseError(f"{path}: expected columns drug_a,drug_b[,annotation]")
            for row in reader:
                graph.add_edge(row["drug_a"], row["drug_b"], row.get("annotation") or "")
        return graph


def ddi_pairs(graph: DDIGraph, meds: Iterable[str]) -> list[tuple[str, str, str]]:
    """Interacting pairs within ``meds`` as (drug, drug, annotation), sorted."""
    canon = sorted({graph._canon(m) for m in meds}, key=normalize_label)
    out = []
    for i, a in enumerate(canon):
        for b in canon[i + 1:]:
            ann = graph.edges.get(frozenset((a, b)))
            if ann is not None:
                out.append((a, b, ann))
    return out


@dataclass(frozen=True)
class DrugMonograph:
    name: str
    description: str


class DrugInfoDB:
    def __init__(self, catalog: DrugCatalog, monographs: dict[str, str] | None = None):
        self.catalog = catalog
        self._mono: dict[str, str] = {}
        for name, desc in (monographs or {}).items():
            canon = catalog.canonical(name)
            if canon is None:
                raise UnknownDrug(f"monograph for {name!r} which is not in the catalog")
            self._mono[canon] = desc

    @classmethod
    def load_jsonl(cls, path: str | Path, catalog: DrugCatalog) -> "DrugInfoDB":
        monos = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    monos[str(d["name"])] = str(d["description"])
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad monograph entry ({exc})") from exc
        return cls(catalog, monos)

    def get(self, name: str) -> DrugMonograph:
        canon = self.catalog.canonical(name)
        if canon is None:
            raise UnknownDrug(f"drug {name!r} is not in the catalog")
        if canon not in self._mono:
            raise NotFound(f"no monograph for {canon!r}")
        return DrugMonograph(canon, self._mono[canon])


def drug_info(db: DrugInfoDB, name: str) -> DrugMonograph:
    return db.get(name)


def aggregate_tool_feedback(results: Sequence[LabeledOutput]) -> str:
    """Concatenate tool outputs, each under a header naming its tool."""
    return "".join(f"{r.tool}:\n{r.text}\n\n" for r in results)


@dataclass
class ToolContext:
    """What a tool sees: the case plus the drugs currently under discussion."""

    case: DiagnosisCase | VisitRecord
    drugs: frozenset[str] = frozenset()


class _Tool:
    spec: ToolSpec

    def task(self) -> str:
        return "diagnosis" if self.spec.input_kind == "symptom_set" else "treatment"

    def input_key(self, ctx: ToolContext) -> str:
        raise NotImplementedError

    def run(self, ctx: ToolContext) -> str:
        raise NotImplementedError


class PredictorTool(_Tool):
    def __init__(self, predictor: DiagnosticTool):
        self.predictor = predictor
        self.spec = predictor.spec

    def input_key(self, ctx: ToolContext) -> str:
        return symptom_key(ctx.case.symptoms)

    def run(self, ctx: ToolContext) -> str:
        return render_predictions(self.predictor.predict(ctx.case.symptoms))


class DrugInfoTool(_Tool):
    def __init__(self, db: DrugInfoDB, name: str = "DrugBank"):
        self.db = db
        self.spec = ToolSpec(name, "detailed information on candidate drugs", "drug_set", "live")

    def input_key(self, ctx: ToolContext) -> str:
        return drug_key(ctx.drugs)

    def run(self, ctx: ToolContext) -> str:
        lines = []
        for name in sorted(ctx.drugs, key=normalize_label):
            try:
                mono = self.db.get(name)
            except NotFound:
                continue
            lines.append(f"{mono.name}: {mono.description}")
        if not lines:
            return ""
        return "More detailed drug information is provided below:\n" + "\n".join(lines)


class DDITool(_Tool):
    def __init__(self, graph: DDIGraph, name: str = "DDI-graph"):
        self.graph = graph
        self.spec = ToolSpec(name, "pairwise drug-drug interactions", "drug_set", "live")

    def input_key(self, ctx: ToolContext) -> str:
        return drug_key(ctx.drugs)

    def run(self, ctx: ToolContext) -> str:
        pairs = ddi_pairs(self.graph, ctx.drugs)
        if not pairs:
            return ""
        lines = [f"{a} and {b} may cause {ann}." if ann else f"{a} and {b} interact." for a, b, ann in pairs]
        return "The following are potential drug interactions:\n" + "\n".join(lines)


class ToolRegistry:
    """Ordered, immutable set of tools; output order follows registration order."""

    def __init__(self, tools: Sequence[_Tool] = ()):
        self.tools: tuple[_Tool, ...] = tuple(tools)
        names = [t.spec.name for t in self.tools]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate tool names in registry: {names}")

    def __len__(self) -> int:
        return len(self.tools)

    def specs(self) -> list[ToolSpec]:
        return [t.spec for t in self.tools]

    def run(self, task: str, ctx: ToolContext, cache: dict[tuple[str, str], str] | None = None) -> list[LabeledOutput]:
        """Run every tool for ``task``; ``cache`` dedupes calls by (tool, input key)."""
        out = []
        for tool in self.tools:
            if tool.task() != task:
                continue
            if tool.spec.input_kind == "drug_set" and not ctx.drugs:
                continue
            key = (tool.spec.name, tool.input_key(ctx))
            if cache is not None and key in cache:
                text = cache[key]
            else:
                text = tool.run(ctx)
                if cache is not None:
                    cache[key] = text
            if text:
                out.append(LabeledOutput(tool.spec.name, text))
        return out
