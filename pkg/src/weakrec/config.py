"""Run configuration: dataclasses mirrored by a sectioned INI file."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def _opt(default, help: str, choices: tuple | None = None):
    return field(default=default, metadata={"help": help, "choices": choices})


@dataclass
class DatasetSpec:
    format: str = _opt("fixture", "input kind", ("fixture", "movielens", "amazon", "split"))
    path: str = _opt("", "ratings file (movielens/amazon) or prepared split directory (split)")
    titles: str = _opt("", "item title source: item,title CSV, ML movies.dat or Amazon metadata JSONL; "
                           "empty = bundled titles for the fixture, 'Item <id>' otherwise")
    kcore: int = _opt(5, "k-core threshold applied to users and items before splitting")
    user_field: str = _opt("user", "Amazon JSONL user field")
    item_field: str = _opt("item", "Amazon JSONL item field")
    rating_field: str = _opt("rating", "Amazon JSONL rating field")
    time_field: str = _opt("ts", "Amazon JSONL timestamp field")
    title_item_field: str = _opt("parent_asin", "Amazon metadata item field")
    title_field: str = _opt("title", "Amazon metadata title field")


@dataclass
class RecommenderSpec:
    model: str = _opt("itemknn", "recommender", ("itemknn", "bpr", "mostpop", "import"))
    k: int = _opt(100, "ItemKNN neighbours kept per item")
    shrink: float = _opt(0.5, "ItemKNN similarity shrinkage")
    binarize: bool = _opt(False, "ItemKNN on 0/1 interactions instead of ratings")
    dim: int = _opt(64, "BPR latent dimension")
    lr: float = _opt(7e-3, "BPR learning rate")
    reg: float = _opt(0.01, "BPR L2 coefficient")
    epochs: int = _opt(30, "BPR epochs (one epoch = |train| sampled triples)")
    scores: str = _opt("", "user,item,score CSV for model=import")
    checkpoint: str = _opt("", "load a trained checkpoint directory instead of fitting")


@dataclass
class GateSpec:
    t_p: float = _opt(0.5, "performance threshold: weak needs AUC <= t_p")
    t_s: str = _opt("auto", "sparsity threshold: weak needs sparsity > t_s; 'auto' = mean user sparsity")
    target: str = _opt("test", "held-out item used for the gating AUC", ("test", "valid"))


@dataclass
class PromptSpec:
    candidates: int = _opt(20, "candidate set size j (held-out item + j-1 RS items)")
    history_cap: int = _opt(50, "most recent train items shown in the prompt")
    fuzzy: bool = _opt(False, "accept titles within Levenshtein distance 2 when parsing")
    plural: str = _opt("movies", "item noun (plural) used in the template")
    singular: str = _opt("movie", "item noun (singular) used in the template")


@dataclass
class BackendSpec:
    name: str = _opt("mock-oracle", "LLM backend", ("mock-oracle", "mock-identity", "mock-random", "http"))
    seed: int = _opt(0, "mock-random seed")
    url: str = _opt("", "base URL of an OpenAI-compatible API (http backend)")
    model: str = _opt("", "model name sent to the API")
    api_key_env: str = _opt("WEAKREC_API_KEY", "environment variable holding the API key")
    temperature: float = _opt(0.0, "sampling temperature")
    top_p: float = _opt(0.1, "nucleus sampling threshold")
    max_tokens: int = _opt(512, "max completion tokens")
    system_prompt: str = _opt("", "optional system message")
    max_in_flight: int = _opt(4, "concurrent requests")
    max_requests: int = _opt(0, "request budget (0 = unlimited)")
    max_prompt_chars: int = _opt(0, "total prompt characters budget (0 = unlimited)")
    cache_dir: str = _opt("", "response cache; empty = <output>/llm_cache, 'none' disables")
    attempts: int = _opt(3, "attempts per request on 429/5xx/transport errors")
    backoff: float = _opt(1.0, "base backoff in seconds, doubled per retry")
    timeout: float = _opt(60.0, "request timeout in seconds")


@dataclass
class RunSpec:
    seed: int = _opt(0, "seed for candidate shuffling")
    guard: str = _opt("off", "accept the LLM list only if it beats the RS list", ("off", "on"))
    guard_target: str = _opt("test", "held-out item the guard scores against", ("test", "valid"))
    output: str = _opt("runs/latest", "run directory")


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    recommender: RecommenderSpec = field(default_factory=RecommenderSpec)
    gate: GateSpec = field(default_factory=GateSpec)
    prompt: PromptSpec = field(default_factory=PromptSpec)
    backend: BackendSpec = field(default_factory=BackendSpec)
    run: RunSpec = field(default_factory=RunSpec)

    # -- access ---------------------------------------------------------

    def sections(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def set(self, section: str, key: str, value: str) -> None:
        spec = self.sections().get(section)
        if spec is None:
            raise ConfigError(f"unknown config section [{section}]")
        fields = {f.name: f for f in dataclasses.fields(spec)}
        if key not in fields:
            raise ConfigError(f"unknown config key {section}.{key}")
        setattr(spec, key, _coerce(fields[key], value, f"{section}.{key}"))

    def override(self, assignment: str) -> None:
        """Apply ``section.key=value``."""
        lhs, sep, value = assignment.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {assignment!r}")
        self.set(section, key.strip(), value.strip())

    # -- serialization --------------------------------------------------

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(section, key, value)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for name, spec in self.sections().items():
            parser[name] = {f.name: _render(getattr(spec, f.name)) for f in dataclasses.fields(spec)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def fingerprint(self) -> str:
        """Hash of the effective config, ignoring where the output goes."""
        snapshot = dataclasses.replace(self, run=dataclasses.replace(self.run, output=""))
        return hashlib.sha256(snapshot.to_ini().encode("utf-8")).hexdigest()[:16]

    # -- checks ---------------------------------------------------------

    def validate(self) -> None:
        d, r, g, p, b, run = (self.dataset, self.recommender, self.gate, self.prompt, self.backend, self.run)
        for name, spec in self.sections().items():
            for f in dataclasses.fields(spec):
                choices = f.metadata.get("choices")
                if choices and getattr(spec, f.name) not in choices:
                    raise ConfigError(f"{name}.{f.name} must be one of {', '.join(choices)}")
        if d.format != "fixture":
            _must_exist(d.path, "dataset.path")
        if d.titles:
            _must_exist(d.titles, "dataset.titles")
        if d.kcore < 1:
            raise ConfigError("dataset.kcore must be >= 1")
        if r.model == "import":
            _must_exist(r.scores, "recommender.scores")
        if r.checkpoint:
            _must_exist(r.checkpoint, "recommender.checkpoint")
        if r.k < 1 or r.shrink < 0 or r.dim < 1 or r.lr <= 0 or r.epochs < 0:
            raise ConfigError("recommender hyperparameters out of range")
        if not 0.0 <= g.t_p <= 1.0:
            raise ConfigError("gate.t_p must lie in [0, 1]")
        if g.t_s != "auto":
            try:
                ts = float(g.t_s)
            except ValueError:
                raise ConfigError("gate.t_s must be 'auto' or a number") from None
            if not 0.0 <= ts <= 1.0:
                raise ConfigError("gate.t_s must lie in [0, 1]")
        if p.candidates < 2:
            raise ConfigError("prompt.candidates must be >= 2 to evaluate a ranking")
        if p.history_cap < 1:
            raise ConfigError("prompt.history_cap must be >= 1")
        if b.max_in_flight < 1 or b.attempts < 1:
            raise ConfigError("backend.max_in_flight and backend.attempts must be >= 1")
        if not run.output:
            raise ConfigError("run.output must be set")

    def gate_threshold_s(self) -> float | str:
        return "auto" if self.gate.t_s == "auto" else float(self.gate.t_s)


def _must_exist(path: str, key: str) -> None:
    if not path:
        raise ConfigError(f"{key} is required")
    if not Path(path).exists():
        raise ConfigError(f"{key}: {path} does not exist")


def _coerce(f: dataclasses.Field, value: str, name: str):
    kind = type(f.default)
    try:
        if kind is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {value!r} as {kind.__name__}") from None


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def describe_keys() -> str:
    """One line per config key, for ``--help``."""
    lines = []
    for name, spec in RunConfig().sections().items():
        lines.append(f"[{name}]")
        for f in dataclasses.fields(spec):
            choices = f.metadata.get("choices")
            extra = f" ({'|'.join(choices)})" if choices else ""
            lines.append(f"  {f.name} = {_render(f.default)}{extra}: {f.metadata['help']}")
    return "\n".join(lines)
