"""Command-line entry point: single consultation, batch evaluation, cohort extraction.

Exit codes: 0 success, 1 hard error, 2 unparseable model output (or, for
``eval``, at least one case recorded an error while the batch completed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backend import BackendConfig, ChatBackend, ReplayBackend, make_backend
from .datasets import (
    ICDMapping,
    RawAdmissionTables,
    cohort_stats,
    extract_rare_cohort,
    load_catalog_names,
    load_diagnosis_cases,
    load_visits,
    write_jsonl,
)
from .domain import DiagnosisCase, DrugCatalog, VisitRecord
from .engine import ConsultConfig, Transcript, consult
from .errors import MDTError, UnparseableDecision, ValidationError
from .memory import MemoryRecord, MemoryStore
from .metrics import CaseResult, aggregate, participation_csv, participation_rates
from .parsing import rank_exact, rank_judge
from .roster import RoleStrategy, SpecialistPool, load_pool
from .toolkit import (
    DDIGraph,
    DDITool,
    DiagnosticTool,
    DrugInfoDB,
    DrugInfoTool,
    FixtureStore,
    PredictorTool,
    ToolRegistry,
    ToolSpec,
)

log = logging.getLogger("mdtconsult")

EXIT_OK, EXIT_HARD, EXIT_SOFT = 0, 1, 2
DEFAULT_DIAGNOSTIC_TOOLS = ("Phenomizer", "LIRICAL", "Phenobrain")


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    input_hashes: dict[str, str]
    seed: int
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


_INPUT_FLAGS = (
    "case", "dataset", "pool", "script", "memory", "memory_seed", "tool_fixtures",
    "catalog", "ddi", "drug_info", "tables", "mapping",
)


def _manifest(args: argparse.Namespace) -> RunManifest:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    hashes: dict[str, str] = {}
    for flag in _INPUT_FLAGS:
        value = getattr(args, flag, None)
        for p in value if isinstance(value, list) else [value]:
            if p and Path(p).is_file():
                hashes[str(p)] = sha256_file(p)
            elif p and Path(p).is_dir():
                for f in sorted(Path(p).iterdir()):
                    if f.is_file():
                        hashes[str(f)] = sha256_file(f)
    script_dir = getattr(args, "script_dir", None)
    if script_dir and Path(script_dir).is_dir():
        for f in sorted(Path(script_dir).glob("*.jsonl")):
            hashes[str(f)] = sha256_file(f)
    return RunManifest(args.command, config, hashes, getattr(args, "seed", 0))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---- shared setup -----------------------------------------------------------


def _read_cases(path: str, task: str) -> list[DiagnosisCase] | list[VisitRecord]:
    return load_diagnosis_cases(path) if task == "diagnosis" else load_visits(path)


def _case_id(case: DiagnosisCase | VisitRecord) -> str:
    return case.case_id if isinstance(case, DiagnosisCase) else case.key


def _pool(args) -> SpecialistPool:
    if args.pool and not Path(args.pool).exists():
        raise MDTError(f"pool file not found: {args.pool}")
    return load_pool(args.pool)


def _store(args, task: str, cases: Sequence[DiagnosisCase | VisitRecord]) -> MemoryStore | None:
    if args.memory:
        store = MemoryStore.load(args.memory)
    else:
        store = MemoryStore()
    seeds: list[DiagnosisCase | VisitRecord] = []
    for path in args.memory_seed or ():
        seeds.extend(_read_cases(path, task))
    if task == "treatment":
        # earlier visits of the patients under evaluation are their admission history
        seeds.extend(cases)
    for item in seeds:
        rec = MemoryRecord.seed_case(item) if isinstance(item, DiagnosisCase) else MemoryRecord.seed_visit(item)
        if rec.record_id not in store.records:
            store.update(rec)
    return store if len(store) or args.memory else None


def _catalog(args) -> DrugCatalog | None:
    return DrugCatalog(load_catalog_names(args.catalog)) if args.catalog else None


def _registry(args, catalog: DrugCatalog | None) -> ToolRegistry | None:
    tools = []
    if args.tool_fixtures or args.tool_endpoint:
        fixtures = FixtureStore.load(args.tool_fixtures) if args.tool_fixtures else None
        endpoints = dict(e.split("=", 1) for e in args.tool_endpoint or ())
        names = [n for n in args.diagnostic_tools.split(",") if n]
        for name in names:
            if fixtures is not None and not any(t == name for t, _ in fixtures.entries):
                continue
            mode = "fixture" if fixtures is not None and name not in endpoints else "live"
            spec = ToolSpec(name, f"{name} phenotype-driven disease ranking", "symptom_set", mode)
            tools.append(PredictorTool(DiagnosticTool(spec, fixtures, endpoints.get(name))))
    if catalog is not None and args.drug_info:
        tools.append(DrugInfoTool(DrugInfoDB.load_jsonl(args.drug_info, catalog)))
    if catalog is not None and args.ddi:
        tools.append(DDITool(DDIGraph.load_csv(args.ddi, catalog)))
    return ToolRegistry(tools) if tools else None


def _consult_config(args) -> ConsultConfig:
    ablations = {name for name in ("no_mdt", "no_memory", "no_tools") if getattr(args, name)}
    return ConsultConfig(
        task=args.task,
        max_rounds=args.max_rounds,
        ablations=frozenset(ablations),
        role_strategy=RoleStrategy(args.roles, args.team_size, args.seed),
        memory_k=args.k,
        write_back=args.write_back,
        tools_per_round=args.tools_per_round,
    )


def _backend_config(args, script_path: str | None) -> BackendConfig:
    return BackendConfig(
        kind=args.backend,
        model_name=args.model,
        endpoint_url=args.endpoint if args.backend != "replay" else None,
        temperature=args.temperature,
        seed=args.seed,
        timeout=args.timeout,
        retry=args.retry,
        script_path=script_path,
    )


# ---- consult ----------------------------------------------------------------


def _pick_case(cases, case_id: str | None):
    if case_id is None:
        if len(cases) != 1:
            raise ValidationError(f"case file holds {len(cases)} cases; choose one with --case-id")
        return cases[0]
    for c in cases:
        if _case_id(c) == case_id:
            return c
    raise ValidationError(f"case {case_id!r} not found")


def cmd_consult(args) -> int:
    out = Path(args.out)
    manifest = _manifest(args)
    cases = _read_cases(args.case, args.task)
    case = _pick_case(cases, args.case_id)
    pool = _pool(args)
    catalog = _catalog(args)
    store = _store(args, args.task, cases)
    registry = _registry(args, catalog)
    backend = make_backend(_backend_config(args, args.script))
    _write(out / "manifest.json", manifest.to_json() + "\n")
    try:
        decision, transcript = consult(case, _consult_config(args), pool, store, registry, backend, catalog)
    except UnparseableDecision as exc:
        if exc.transcript is not None:
            _write(out / "transcript.json", exc.transcript.to_json() + "\n")
        print(f"error: unparseable decision: {exc}", file=sys.stderr)
        return EXIT_SOFT
    _write(out / "decision.json", json.dumps(decision.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n")
    _write(out / "transcript.json", transcript.to_json() + "\n")
    if args.save_memory and store is not None:
        store.save(args.save_memory)
    print(json.dumps(decision.to_dict(), ensure_ascii=False))
    return EXIT_OK


# ---- eval -------------------------------------------------------------------


def _script_for(args, case_id: str) -> str | None:
    if args.backend == "http":
        return None
    if args.script_dir:
        return str(Path(args.script_dir) / f"{case_id}.jsonl")
    return args.script


def _evaluate_one(args, case, config, pool, store, registry, catalog, shared: ChatBackend | None):
    cid = _case_id(case)
    try:
        backend = shared or make_backend(_backend_config(args, _script_for(args, cid)))
    except (MDTError, OSError) as exc:
        return _failed(case, args.task, f"{type(exc).__name__}: {exc}"), None
    transcript: Transcript | None = None
    try:
        decision, transcript = consult(case, config, pool, store, registry, backend, catalog)
    except UnparseableDecision as exc:
        return _failed(case, args.task, f"UnparseableDecision: {exc}"), exc.transcript
    except MDTError as exc:
        return _failed(case, args.task, f"{type(exc).__name__}: {exc}"), None
    if args.task == "treatment":
        meds = frozenset(decision.medications)
        return CaseResult(cid, "treatment", predicted_meds=meds, gold_meds=case.gold_medications, team=tuple(transcript.team)), transcript
    if args.judge:
        try:
            rank = rank_judge(decision, case.gold_diagnoses, backend, agent_id=f"judge:{cid}").rank
        except MDTError as exc:
            return CaseResult(cid, "diagnosis", team=tuple(transcript.team), error=f"{type(exc).__name__}: {exc}"), transcript
    else:
        rank = rank_exact(decision, case.gold_diagnoses)
    return CaseResult(cid, "diagnosis", rank=rank, team=tuple(transcript.team)), transcript


def _failed(case, task: str, error: str) -> CaseResult:
    if task == "treatment":
        return CaseResult(case.key, task, predicted_meds=frozenset(), gold_meds=case.gold_medications, error=error)
    return CaseResult(case.case_id, task, error=error)


def cmd_eval(args) -> int:
    out = Path(args.out)
    manifest = _manifest(args)
    if args.parallel < 1:
        raise ValidationError("--parallel must be >= 1")
    if args.parallel > 1 and args.write_back:
        raise ValidationError("--parallel > 1 requires memory write-back to be off")
    if args.backend != "http" and not (args.script_dir or args.script):
        raise ValidationError(f"{args.backend} backend needs --script-dir or --script")
    if args.backend == "record" and args.parallel > 1 and not args.script_dir:
        raise ValidationError("recording in parallel needs --script-dir")
    cases = _read_cases(args.dataset, args.task)
    pool = _pool(args)
    catalog = _catalog(args)
    if args.task == "treatment" and catalog is None:
        raise ValidationError("treatment evaluation needs --catalog")
    store = _store(args, args.task, cases)
    registry = _registry(args, catalog)
    config = _consult_config(args)
    shared = None
    if args.backend == "http":
        shared = make_backend(_backend_config(args, None))
    elif not args.script_dir:
        shared = make_backend(_backend_config(args, args.script))
        if args.parallel > 1 and isinstance(shared, ReplayBackend):
            raise ValidationError("a single replay script cannot be shared across parallel cases; use --script-dir")

    run = lambda c: _evaluate_one(args, c, config, pool, store, registry, catalog, shared)
    if args.parallel == 1:
        outcomes = [run(c) for c in cases]
    else:
        with ThreadPoolExecutor(max_workers=args.parallel) as ex:
            outcomes = list(ex.map(run, cases))

    results = [r for r, _ in outcomes]
    graph = DDIGraph.load_csv(args.ddi, catalog) if args.ddi and catalog is not None else None
    report = aggregate(results, graph)
    _write(out / "manifest.json", manifest.to_json() + "\n")
    _write(out / "report.json", report.to_json() + "\n")
    _write(out / "report.txt", report.table())
    _write(out / "cases.jsonl", "".join(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for r in results))
    _write(out / "participation.csv", participation_csv(participation_rates(results, pool.departments)))
    _write(
        out / "transcripts.jsonl",
        "".join(json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for _, t in outcomes if t is not None),
    )
    if args.save_memory and store is not None:
        store.save(args.save_memory)
    print(report.table(), end="")
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"warning: case {r.case_id}: {r.error}", file=sys.stderr)
    return EXIT_SOFT if failed else EXIT_OK


# ---- extract-cohort ---------------------------------------------------------


def cmd_extract_cohort(args) -> int:
    manifest = _manifest(args)
    mapping = ICDMapping.load_csv(args.mapping)
    tables = RawAdmissionTables.load_dir(args.tables)
    if not len(mapping):
        print("warning: mapping has no exact entries; cohort is empty", file=sys.stderr)
    records = extract_rare_cohort(tables, mapping) if len(mapping) else []
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, records)
    _write(out.with_name(out.name + ".manifest.json"), manifest.to_json() + "\n")
    if records:
        print(json.dumps(cohort_stats(records).to_dict(), indent=2))
    else:
        print(json.dumps({"n_patients": 0, "n_visits": 0}))
    return EXIT_OK


# ---- parser -----------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=("diagnosis", "treatment"), default="diagnosis")
    p.add_argument("--pool", help="specialist pool JSON (default: built-in 41 departments)")
    p.add_argument("--backend", choices=("replay", "http", "record"), default="replay")
    p.add_argument("--endpoint", help="OpenAI-compatible base URL (http/record)")
    p.add_argument("--model", default="llama-3.1-70b-instruct")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--retry", action="store_true", help="retry a failed request once")
    p.add_argument("--seed", type=int, default=42, help="LLM sampling seed and random-role seed")
    p.add_argument("--max-rounds", type=int, default=3)
    p.add_argument("--k", type=int, default=5, help="similar cases retrieved from memory")
    p.add_argument("--roles", choices=("llm", "random", "relevance"), default="llm")
    p.add_argument("--team-size", type=int)
    p.add_argument("--no-mdt", action="store_true")
    p.add_argument("--no-memory", action="store_true")
    p.add_argument("--no-tools", action="store_true")
    p.add_argument("--tools-per-round", action="store_true", help="re-run tools on every round")
    p.add_argument("--memory", help="saved memory store to load")
    p.add_argument("--memory-seed", action="append", help="JSONL of cases/visits to seed memory (repeatable)")
    p.add_argument("--save-memory", help="write the memory store here after the run")
    p.add_argument("--tool-fixtures", help="JSONL of recorded diagnostic tool outputs")
    p.add_argument("--tool-endpoint", action="append", metavar="NAME=URL", help="live diagnostic tool endpoint")
    p.add_argument("--diagnostic-tools", default=",".join(DEFAULT_DIAGNOSTIC_TOOLS))
    p.add_argument("--catalog", help="drug catalog (JSON array or one name per line)")
    p.add_argument("--ddi", help="drug interaction CSV (drug_a, drug_b, annotation)")
    p.add_argument("--drug-info", help="drug monograph JSONL (name, description)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdtconsult", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("consult", help="run one consultation")
    p.add_argument("--case", required=True, help="JSONL file of cases (diagnosis) or visits (treatment)")
    p.add_argument("--case-id", help="case_id, or patient#visit for treatment")
    p.add_argument("--script", help="replay/record script")
    p.add_argument("--no-write-back", dest="write_back", action="store_false", help="do not store the decision in memory")
    _add_run_flags(p)
    p.set_defaults(func=cmd_consult)

    p = sub.add_parser("eval", help="evaluate a batch of cases")
    p.add_argument("--dataset", required=True)
    p.add_argument("--script", help="single replay/record script for the whole batch")
    p.add_argument("--script-dir", help="directory of per-case scripts named <case id>.jsonl")
    p.add_argument("--judge", action="store_true", help="rank diagnoses with the judge prompt")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--write-back", action="store_true", help="store each decision back into memory")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract-cohort", help="extract the rare-disease visit cohort")
    p.add_argument("--tables", required=True, help="directory with diagnoses/procedures/prescriptions CSVs")
    p.add_argument("--mapping", required=True, help="CSV icd_version, icd_code, rare_id")
    p.add_argument("--out", required=True, help="visit JSONL to write")
    p.set_defaults(func=cmd_extract_cohort, seed=0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MDTError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_HARD


if __name__ == "__main__":
    sys.exit(main())
