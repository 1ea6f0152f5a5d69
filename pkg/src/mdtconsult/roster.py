"""Specialist pool loading and team formation."""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator

from . import prompts
from .backend import ChatBackend, system, user
from .domain import normalize_label
from .errors import (
    DuplicateDepartment,
    EmptyPool,
    MissingTeamSize,
    NoRecognizedDepartment,
    ParseError,
    ValidationError,
)
from .parsing import find_names

log = logging.getLogger(__name__)

ATTENDING = "attending"
STRATEGIES = ("llm", "random", "relevance")


@dataclass(frozen=True)
class SpecialistRole:
    department: str
    description: str
    system_message: str

    def __post_init__(self) -> None:
        for name in ("department", "description", "system_message"):
            if not str(getattr(self, name)).strip():
                raise ValidationError(f"specialist role field {name!r} is empty")


class SpecialistPool:
    def __init__(self, roles):
        self.roles: tuple[SpecialistRole, ...] = tuple(roles)
        if not self.roles:
            raise EmptyPool("specialist pool is empty")
        self._by_norm: dict[str, SpecialistRole] = {}
        for role in self.roles:
            key = normalize_label(role.department)
            if key in self._by_norm:
                raise DuplicateDepartment(f"department {role.department!r} appears twice")
            self._by_norm[key] = role

    def __len__(self) -> int:
        return len(self.roles)

    def __iter__(self) -> Iterator[SpecialistRole]:
        return iter(self.roles)

    @property
    def departments(self) -> list[str]:
        return [r.department for r in self.roles]

    def get(self, department: str) -> SpecialistRole | None:
        return self._by_norm.get(normalize_label(department))


def load_pool(path: str | Path | None = None) -> SpecialistPool:
    """Load a pool file; without a path the shipped 41-department pool is used."""
    if path is None:
        text = resources.files("mdtconsult.data").joinpath("specialists.json").read_text(encoding="utf-8")
        source = "<default pool>"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)
    try:
        raw = json.loads(text)
        if not isinstance(raw, list):
            raise TypeError("top level must be a JSON array")
        roles = [
            SpecialistRole(str(r["department"]).strip(), str(r["description"]), str(r["system_message"]))
            for r in raw
        ]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{source}: {exc}") from exc
    return SpecialistPool(roles)


@dataclass(frozen=True)
class RoleStrategy:
    kind: str = "llm"
    team_size: int | None = None
    seed: int = 42

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise ValidationError(f"unknown role strategy {self.kind!r}")
        if self.team_size is not None and self.team_size < 1:
            raise ValidationError("team size must be >= 1")


def parse_team_reply(reply: str, pool: SpecialistPool) -> list[SpecialistRole]:
    """Departments named in ``reply``, in order of first mention, without repeats."""
    hits = find_names(reply, pool.departments)
    team: list[SpecialistRole] = []
    for _, _, name in hits:
        role = pool.get(name)
        if role not in team:
            team.append(role)
    leftover = reply
    for start, end, _ in reversed(hits):
        leftover = leftover[:start] + leftover[end:]
    dropped = [t.strip() for t in re.split(r"[,;\n]", leftover) if t.strip(" .:-*\t")]
    if dropped:
        log.debug("unmatched tokens in team reply: %s", dropped)
    return team


def _team_size(strategy: RoleStrategy, pool: SpecialistPool) -> int:
    if strategy.team_size is None:
        raise MissingTeamSize(f"role strategy {strategy.kind!r} needs an explicit team size")
    if strategy.team_size > len(pool):
        raise ValidationError(f"team size {strategy.team_size} exceeds pool size {len(pool)}")
    return strategy.team_size


def form_mdt(
    profile_text: str,
    pool: SpecialistPool,
    strategy: RoleStrategy,
    backend: ChatBackend | None = None,
    attending_prompt: str = prompts.ATTENDING_SYSTEM,
) -> list[SpecialistRole]:
    if strategy.kind == "llm":
        if backend is None:
            raise ValidationError("llm role strategy needs a backend")
        request = prompts.mdt_formation(profile_text, [(r.department, r.description) for r in pool])
        reply = backend.complete(ATTENDING, [system(attending_prompt), user(request)])
        team = parse_team_reply(reply, pool)
        if not team:
            raise NoRecognizedDepartment(f"no pool department named in reply: {reply[:200]!r}")
        if strategy.team_size is not None:
            team = team[: strategy.team_size]
        return team

    n = _team_size(strategy, pool)
    if strategy.kind == "random":
        return random.Random(strategy.seed).sample(list(pool.roles), n)

    from .memory import cosine, embed

    query = embed(profile_text)
    scored = [(cosine(query, embed(r.description)), i) for i, r in enumerate(pool.roles)]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [pool.roles[i] for _, i in scored[:n]]
