"""Interventional prompt construction: catalogs, rendering, and k-prompt plans.

Catalogs ship as versioned JSON data files under ``data/catalogs``. Raw
template strings are kept verbatim; they are normalized to a single-``{CLASS}``
placeholder form at load time, with the compose mode deciding how the class
word is inserted (with an article, as a bare keyword, or not at all for
attribute-only pools).
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path
from typing import Protocol

from .corpus import DatasetIndex
from .errors import MissingTemplate, PartialResult, PlanInfeasible

STRATEGIES = ("M", "H", "LE_C", "LE_M")
COMPOSE_MODES = ("class_with_article", "keyword", "attribute_only")
PLAN_MODES = ("sdg_one_per_target", "sdg_leave_one_out", "rrsf_random")

# Words whose spoken onset disagrees with their first letter.
_AN_EXCEPTIONS = {"hour", "heir", "honest", "honour", "honor"}
_A_EXCEPTIONS = {"university", "unicorn", "uniform", "unit", "user", "utensil",
                 "european", "one", "once", "ukulele"}


def article(noun: str) -> str:
    """a/an by initial-letter vowel heuristic plus an exceptions list."""
    word = noun.strip().split()[0].lower()
    if word in _AN_EXCEPTIONS:
        return "an"
    if word in _A_EXCEPTIONS:
        return "a"
    return "an" if word[:1] in "aeiou" else "a"


@dataclass(frozen=True)
class PromptTemplate:
    domain_label: str
    template: str
    strategy: str
    compose: str = "class_with_article"

    def __post_init__(self):
        if not self.domain_label:
            raise ValueError("domain_label must be non-empty")
        count = self.template.count("{CLASS}")
        if self.compose == "attribute_only":
            if count != 0:
                raise ValueError("attribute-only templates must not carry a {CLASS} placeholder")
        elif count != 1:
            raise ValueError("template must contain exactly one {CLASS} placeholder")

    def render(self, class_label: str) -> str:
        if self.compose == "attribute_only":
            return self.template
        if self.compose == "class_with_article":
            return self.template.replace("{CLASS}", f"{article(class_label)} {class_label}")
        return self.template.replace("{CLASS}", class_label)


def normalize_template(raw: str, compose: str) -> str:
    """Turn a verbatim catalog string into placeholder form.

    Leading-space templates are suffixes appended to the class word; others
    are prefixes. Strings already carrying a placeholder pass through.
    """
    if compose == "attribute_only":
        return raw
    if "{CLASS}" in raw:
        return raw
    if raw.startswith(" "):
        return "{CLASS}" + raw
    if compose == "class_with_article":
        return raw.rstrip() + " {CLASS}"
    return raw + " {CLASS}"


@dataclass(frozen=True)
class InterventionalPrompt:
    id: str
    text: str
    target_domain: str
    class_label: str
    strategy: str

    @classmethod
    def create(cls, text: str, target_domain: str, class_label: str,
               strategy: str, id_suffix: str = "") -> InterventionalPrompt:
        if not text:
            raise ValueError("prompt text must be non-empty")
        digest = hashlib.sha256(f"{text}\x00{target_domain}".encode("utf-8")).hexdigest()[:16]
        return cls(id=digest + id_suffix, text=text, target_domain=target_domain,
                   class_label=class_label, strategy=strategy)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> InterventionalPrompt:
        return cls(**d)


class PromptSource(Protocol):
    """Anything that can supply candidate prompts for a (target, class) pair."""

    def pool(self, target_key: str, class_label: str) -> list[InterventionalPrompt]: ...


@dataclass
class PromptCatalog:
    dataset: str
    version: str
    strategy: str
    compose: str
    keyed_by: str  # domain | class
    templates: dict[str, list[PromptTemplate]]

    def keys(self) -> list[str]:
        return sorted(self.templates)

    def pool(self, target_key: str, class_label: str) -> list[InterventionalPrompt]:
        entries = self.templates.get(target_key)
        if not entries:
            raise MissingTemplate(f"no {self.strategy} templates for {target_key!r} in {self.dataset}")
        return [InterventionalPrompt.create(t.render(class_label), target_key, class_label,
                                            self.strategy)
                for t in entries]

    def raw_templates(self) -> dict[str, list[str]]:
        return {k: [t.template for t in v] for k, v in self.templates.items()}

    @classmethod
    def from_raw(cls, dataset: str, version: str, strategy: str, compose: str,
                 keyed_by: str, raw: dict[str, list[str]]) -> PromptCatalog:
        if compose not in COMPOSE_MODES:
            raise ValueError(f"compose must be one of {COMPOSE_MODES}")
        templates = {
            key: [PromptTemplate(key, normalize_template(t, compose), strategy, compose)
                  for t in values]
            for key, values in raw.items()
        }
        return cls(dataset=dataset, version=version, strategy=strategy, compose=compose,
                   keyed_by=keyed_by, templates=templates)


def _catalog_payloads() -> dict[str, dict]:
    out = {}
    for entry in resources.files("idapipe.data.catalogs").iterdir():
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = json.loads(entry.read_text(encoding="utf-8"))
    return out


def available_catalogs() -> list[str]:
    return sorted(_catalog_payloads())


def load_catalog(name_or_path: str, strategy: str) -> PromptCatalog:
    """Load one strategy's catalog from a shipped data file or a path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        payload = json.loads(path.read_text(encoding="utf-8"))
    else:
        payloads = _catalog_payloads()
        if name_or_path not in payloads:
            raise MissingTemplate(f"unknown catalog {name_or_path!r}; have {sorted(payloads)}")
        payload = payloads[name_or_path]
    strategies = payload.get("strategies", {})
    if strategy not in strategies:
        raise MissingTemplate(f"catalog {name_or_path!r} has no strategy {strategy!r}")
    section = strategies[strategy]
    return PromptCatalog.from_raw(
        dataset=payload.get("dataset", name_or_path),
        version=str(payload.get("version", "1")),
        strategy=strategy,
        compose=section.get("compose", "class_with_article"),
        keyed_by=section.get("keyed_by", "domain"),
        raw=section["templates"],
    )


def render_minimal(domain_label: str, class_label: str, catalog: PromptCatalog) -> InterventionalPrompt:
    """Single minimal prompt for a (domain, class) pair."""
    pool = catalog.pool(domain_label, class_label)
    return pool[0]


def expand_handcrafted(domain_label: str, class_label: str, catalog: PromptCatalog,
                       n: int) -> list[InterventionalPrompt]:
    """First n handcrafted prompts in catalog order.

    When n exceeds the pool the pool is cycled, with a distinct suffix on the
    repeated ids so downstream keys stay unique.
    """
    pool = catalog.pool(domain_label, class_label)
    out: list[InterventionalPrompt] = []
    for i in range(n):
        base = pool[i % len(pool)]
        cycle = i // len(pool)
        if cycle == 0:
            out.append(base)
        else:
            out.append(InterventionalPrompt.create(base.text, base.target_domain,
                                                   base.class_label, base.strategy,
                                                   id_suffix=f"-r{cycle}"))
    return out


class TextGenBackend(Protocol):
    def generate_text(self, input_text: str, mode: str, n: int,
                      beam_width: int | None = None, top_k: int | None = None,
                      top_p: float | None = None, seed: int | None = None) -> list[str]: ...


LE_RETRY_CAP = 5
LE_TOP_K = 50
LE_TOP_P = 0.95


def generate_language_enhanced(domain_label: str, class_label: str, n: int, mode: str,
                               textgen: TextGenBackend, seed: int = 0,
                               retry_cap: int = LE_RETRY_CAP) -> list[InterventionalPrompt]:
    """Language-model prompts for a (domain, class) pair.

    LE_C sends one deterministic beam request (4n beams, top n by score);
    LE_M samples with top-k/top-p under a caller seed. Returned texts are
    deduplicated preserving order and padded by re-requests until n unique
    or the retry cap is hit.
    """
    if mode not in ("LE_C", "LE_M"):
        raise ValueError("mode must be LE_C or LE_M")
    if n <= 0:
        return []
    input_text = f"{domain_label} {class_label}"
    unique: list[str] = []
    seen: set[str] = set()
    for attempt in range(retry_cap + 1):
        if mode == "LE_C":
            want = n * (attempt + 1)
            texts = textgen.generate_text(input_text, mode="beam", n=want, beam_width=4 * want)
        else:
            texts = textgen.generate_text(input_text, mode="sample", n=n,
                                          top_k=LE_TOP_K, top_p=LE_TOP_P, seed=seed + attempt)
        for t in texts:
            if t and t not in seen:
                seen.add(t)
                unique.append(t)
        if len(unique) >= n:
            break
    prompts = [InterventionalPrompt.create(t, domain_label, class_label, mode)
               for t in unique[:n]]
    if len(prompts) < n:
        raise PartialResult(f"only {len(prompts)}/{n} unique prompts after {retry_cap} retries",
                            obtained=prompts)
    return prompts


@dataclass
class LECache:
    """Pre-generated language-enhanced prompts keyed by (domain, class)."""

    strategy: str
    entries: dict[tuple[str, str], list[InterventionalPrompt]] = field(default_factory=dict)

    def pool(self, target_key: str, class_label: str) -> list[InterventionalPrompt]:
        pool = self.entries.get((target_key, class_label))
        if not pool:
            raise MissingTemplate(f"no cached {self.strategy} prompts for "
                                  f"({target_key!r}, {class_label!r})")
        return list(pool)

    def keys(self) -> list[str]:
        return sorted({d for d, _ in self.entries})

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "entries": {f"{d}\x00{c}": [p.to_dict() for p in pool]
                        for (d, c), pool in sorted(self.entries.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> LECache:
        cache = cls(strategy=d["strategy"])
        for key, pool in d["entries"].items():
            domain, class_label = key.split("\x00")
            cache.entries[(domain, class_label)] = [InterventionalPrompt.from_dict(p) for p in pool]
        return cache

    @classmethod
    def build(cls, domains: list[str], classes: list[str], n: int, mode: str,
              textgen: TextGenBackend, seed: int = 0) -> LECache:
        cache = cls(strategy=mode)
        for domain in domains:
            for class_label in classes:
                cache.entries[(domain, class_label)] = generate_language_enhanced(
                    domain, class_label, n, mode, textgen, seed=seed)
        return cache


@dataclass
class PromptPlan:
    mode: str
    k: int
    excluded_domains: tuple[str, ...]
    assignments: dict[str, list[InterventionalPrompt]]

    def n_pairs(self) -> int:
        return sum(len(v) for v in self.assignments.values())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "k": self.k,
            "excluded_domains": sorted(self.excluded_domains),
            "assignments": {sid: [p.to_dict() for p in prompts]
                            for sid, prompts in sorted(self.assignments.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> PromptPlan:
        return cls(mode=d["mode"], k=d["k"], excluded_domains=tuple(d["excluded_domains"]),
                   assignments={sid: [InterventionalPrompt.from_dict(p) for p in prompts]
                                for sid, prompts in d["assignments"].items()})


def build_plan(index: DatasetIndex, source_domain: str | None, catalog: PromptSource,
               k: int, mode: str, excluded_domains: set[str] | None = None,
               rng_seed: int = 0) -> PromptPlan:
    """Assign k prompts to every train sample of the source domain.

    sdg_one_per_target covers k distinct target domains per sample (all
    eligible ones when k equals their count); sdg_leave_one_out additionally
    drops the excluded domains from eligibility; rrsf_random draws from the
    attribute pool, without replacement whenever the pool holds >= k entries.
    """
    if mode not in PLAN_MODES:
        raise ValueError(f"mode must be one of {PLAN_MODES}")
    excluded = set(excluded_domains or ())
    samples = [s for s in index.samples if s.split == "train"
               and (source_domain is None or s.domain_label == source_domain)]
    samples.sort(key=lambda s: s.id)
    rng = random.Random(rng_seed)
    assignments: dict[str, list[InterventionalPrompt]] = {}

    if k == 0:
        return PromptPlan(mode=mode, k=0, excluded_domains=tuple(sorted(excluded)), assignments={})

    if mode in ("sdg_one_per_target", "sdg_leave_one_out"):
        if mode == "sdg_one_per_target":
            excluded = set()
        for sample in samples:
            eligible = [d for d in index.domains
                        if d != sample.domain_label and d not in excluded]
            if k > len(eligible):
                raise PlanInfeasible(f"k={k} exceeds {len(eligible)} eligible target domains "
                                     f"for source {sample.domain_label!r}")
            targets = list(eligible) if k == len(eligible) else rng.sample(eligible, k)
            chosen = []
            for target in targets:
                pool = catalog.pool(target, sample.class_label)
                chosen.append(pool[rng.randrange(len(pool))])
            assignments[sample.id] = chosen
    else:
        for sample in samples:
            pool = _rrsf_pool(catalog, sample.class_label)
            if len(pool) >= k:
                chosen = rng.sample(pool, k)
            else:
                chosen = [pool[rng.randrange(len(pool))] for _ in range(k)]
            assignments[sample.id] = chosen

    return PromptPlan(mode=mode, k=k, excluded_domains=tuple(sorted(excluded)),
                      assignments=assignments)


def _rrsf_pool(catalog: PromptSource, class_label: str) -> list[InterventionalPrompt]:
    keyed_by = getattr(catalog, "keyed_by", "domain")
    if keyed_by == "class":
        return catalog.pool(class_label, class_label)
    pool: list[InterventionalPrompt] = []
    for key in catalog.keys():  # type: ignore[attr-defined]
        pool.extend(catalog.pool(key, class_label))
    if not pool:
        raise MissingTemplate("attribute pool is empty")
    return pool
