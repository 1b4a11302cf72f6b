"""Domain-agent registry and keyword-overlap sub-query enhancement.

An agent is a named vocabulary of domain phrases. Scoring is matched
phrases over vocabulary size, so broad vocabularies cannot win on
breadth alone; the argmax agent's keywords extend the sub-query before
retrieval.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class DomainAgent:
    name: str
    domain_keywords: tuple[str, ...]
    description: str = ""

    def __post_init__(self):
        if not self.domain_keywords:
            raise ValueError(f"agent {self.name} has no keywords")


@dataclass
class AgentRegistry:
    agents: list[DomainAgent]
    default_agent_name: str | None = None

    def __post_init__(self):
        if not self.agents:
            raise ConfigError("agent registry must contain at least one agent")
        names = [a.name for a in self.agents]
        if len(names) != len(set(names)):
            raise ConfigError("agent names must be unique")

    @property
    def default_agent(self) -> DomainAgent:
        if self.default_agent_name:
            for agent in self.agents:
                if agent.name == self.default_agent_name:
                    return agent
        return min(self.agents, key=lambda a: a.name)


# The four example specialisms the catalogue ships with; fully
# user-editable through the catalogue file.
BUILTIN_AGENTS = [
    {
        "name": "crop_specialist",
        "description": "Crop selection, varieties, sowing and harvest practice",
        "keywords": [
            "crop", "variety", "sowing", "harvest", "yield", "seed",
            "paddy", "wheat", "kharif", "rabi",
        ],
    },
    {
        "name": "soil_expert",
        "description": "Soil health, nutrients and fertilization",
        "keywords": [
            "soil", "nitrogen", "phosphorus", "potassium", "ph",
            "fertilizer", "compost", "nutrient", "organic matter",
        ],
    },
    {
        "name": "pest_manager",
        "description": "Pest and disease identification and control",
        "keywords": [
            "pest", "insect", "disease", "fungus", "pesticide",
            "blight", "infestation", "weed", "ipm",
        ],
    },
    {
        "name": "sustainability_advisor",
        "description": "Water, climate and sustainable practice",
        "keywords": [
            "irrigation", "water", "climate", "drought", "sustainable",
            "conservation", "rainfall", "monsoon", "carbon",
        ],
    },
]


def load_registry(
    path: str | Path | None = None, default_agent_name: str | None = None
) -> AgentRegistry:
    """Load the agent catalogue ({name, description, keywords} records);
    a missing path falls back to the built-in catalogue."""
    records = BUILTIN_AGENTS
    if path is not None and Path(path).exists():
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed agent catalogue {path}: {exc}") from exc
        if not isinstance(loaded, list):
            raise ConfigError(f"agent catalogue {path} must be a list of records")
        records = loaded
    agents = []
    for record in records:
        try:
            agents.append(
                DomainAgent(
                    name=record["name"],
                    domain_keywords=tuple(
                        kw.lower().strip() for kw in record["keywords"]
                    ),
                    description=record.get("description", ""),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad agent record {record!r}: {exc}") from exc
    return AgentRegistry(agents=agents, default_agent_name=default_agent_name)


def write_default_catalogue(path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(BUILTIN_AGENTS, sort_keys=False), encoding="utf-8"
    )


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _phrase_in(phrase: str, normalized_query: str) -> bool:
    return re.search(rf"\b{re.escape(phrase)}\b", normalized_query) is not None


def keyword_score(agent: DomainAgent, sub_query: str) -> float:
    """Matched fraction of the agent's vocabulary: case-insensitive
    whole-phrase containment after whitespace normalization."""
    if not sub_query.strip():
        raise ValueError("sub_query must be non-empty")
    normalized = _normalize(sub_query)
    matched = sum(1 for kw in agent.domain_keywords if _phrase_in(kw, normalized))
    return matched / len(agent.domain_keywords)


def select_agent(registry: AgentRegistry, sub_query: str) -> DomainAgent:
    """Argmax by keyword score, ties by agent name ascending; a query
    matching nothing routes to the configured default agent."""
    scored = [(keyword_score(agent, sub_query), agent) for agent in registry.agents]
    best_score = max(score for score, _ in scored)
    if best_score == 0.0:
        return registry.default_agent
    return min(
        (agent for score, agent in scored if score == best_score),
        key=lambda a: a.name,
    )


def enhance_subquery(sub_query: str, agent: DomainAgent, max_added: int) -> str:
    """Append up to ``max_added`` vocabulary terms not already present.
    The original text is preserved as a prefix; idempotent."""
    normalized = _normalize(sub_query)
    added = []
    for kw in agent.domain_keywords:
        if len(added) >= max_added:
            break
        if not _phrase_in(kw, normalized):
            added.append(kw)
            normalized = f"{normalized} {kw}"
    if not added:
        return sub_query
    return f"{sub_query} {' '.join(added)}"
