"""Run orchestration: config, datasets, parallel fuzzing, replay, ablation.

Seeds are fuzzed independently, each with an rng derived from the master
seed and the seed id (so adding or removing seeds never perturbs the
others) and with its own cache/ledger wrapper over the shared threat
backend (so per-seed query accounting is independent of scheduling).
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import metrics
from .metrics import BigramScorer, FuzzReport, RunSummary
from .objective import BleuConfig, CriterionKind, Smoothing, SuccessCriterion, loss as eval_loss, is_success
from .perturb import EmbeddingTable, Lexicon, candidate_set, load_embeddings, load_lexicon, substitute
from .search import SearchParams, fuzz
from .threat import Backend, CachingThreat, HttpThreat, load_mock_spec
from .tokens import (
    FuzzInput,
    StopwordSet,
    bundled_stopwords,
    make_fuzz_input,
    perturbable_indices,
    render,
)


class ConfigError(Exception):
    """Configuration or input-file problem (exit code 1 territory)."""


@dataclass(frozen=True)
class SeedRecord:
    id: str
    prompt: str
    example: str
    reference: str | None = None
    label: str | None = None


ABLATION_MODES = {
    "full": {},
    "no_sa": {"disable_sa": True},
    "no_ep": {"disable_entropy_pruning": True},
    "no_sa_ep": {"disable_sa": True, "disable_entropy_pruning": True},
    "greedy": {"greedy": True},
}


@dataclass
class RunConfig:
    """Everything one run needs, resolvable from a flat JSON config file."""

    dataset: Path
    lexicon: Path
    embeddings: Path
    stopwords: list[Path]
    objective: str = "generation"
    bleu_threshold: float = 0.2
    bleu_max_n: int = 4
    bleu_smoothing: str = "floor"
    bleu_floor_eps: float = 1e-9
    candidates_per_word: int = 10
    params: SearchParams = field(default_factory=SearchParams)
    ablation: str = "full"
    threat_endpoint: str | None = None
    threat_mock: Path | None = None
    threat_timeout_s: float = 60.0
    threat_retries: int = 2
    threat_cache: bool = True
    threat_auth_env: str | None = None
    master_seed: int = 0
    parallelism: int = 1
    output_dir: Path = Path("out")
    ppl_corpus: Path | None = None
    grammar_command: str | None = None
    query_metric: str = "logical"

    def criterion(self) -> SuccessCriterion:
        if self.objective == "generation":
            return SuccessCriterion(CriterionKind.BLEU_BELOW, self.bleu_threshold)
        if self.objective == "classification":
            return SuccessCriterion(CriterionKind.LABEL_FLIPPED, self.bleu_threshold)
        raise ConfigError(f"unknown objective {self.objective!r}")

    def bleu_config(self) -> BleuConfig:
        return BleuConfig(
            max_n=self.bleu_max_n,
            smoothing=Smoothing(self.bleu_smoothing),
            floor_eps=self.bleu_floor_eps,
        )

    def search_params(self) -> SearchParams:
        flags = ABLATION_MODES.get(self.ablation)
        if flags is None:
            raise ConfigError(f"unknown ablation mode {self.ablation!r}")
        return replace(self.params, **flags)


_PARAM_KEYS = {
    "gamma": "gamma",
    "entropy_epsilon": "epsilon",
    "beam_init": "b0",
    "beam_min": "b_min",
    "beam_max": "b_max",
    "beam_increment": "sigma",
    "elite_base_probability": "p0_elite",
    "initial_temperature": "tem0",
}

_KNOWN_KEYS = set(_PARAM_KEYS) | {
    "dataset", "lexicon", "embeddings", "stopwords", "objective",
    "bleu_threshold", "bleu_max_n", "bleu_smoothing", "bleu_floor_eps",
    "candidates_per_word", "ablation", "threat_endpoint", "threat_mock",
    "threat_timeout_s", "threat_retries", "threat_cache", "threat_auth_env",
    "master_seed", "parallelism", "output_dir", "ppl_corpus",
    "grammar_command", "query_metric",
}


def load_config(path: str | Path) -> RunConfig:
    """Load and validate a flat JSON config; paths resolve against it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {sorted(unknown)}")
    base = path.parent

    def _path(key: str, required: bool = True) -> Path | None:
        value = raw.get(key)
        if value is None:
            if required:
                raise ConfigError(f"{path}: missing required key {key!r}")
            return None
        return (base / value).resolve() if not Path(value).is_absolute() else Path(value)

    params_kwargs = {
        dest: raw[src] for src, dest in _PARAM_KEYS.items() if src in raw
    }
    try:
        params = SearchParams(**params_kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: bad search parameters: {exc}")

    stopword_paths = []
    for p in raw.get("stopwords", []):
        if isinstance(p, str) and p.startswith("builtin:"):
            stopword_paths.append(bundled_stopwords(p.split(":", 1)[1]))
        elif Path(p).is_absolute():
            stopword_paths.append(Path(p))
        else:
            stopword_paths.append((base / p).resolve())
    config = RunConfig(
        dataset=_path("dataset"),
        lexicon=_path("lexicon"),
        embeddings=_path("embeddings"),
        stopwords=stopword_paths,
        objective=raw.get("objective", "generation"),
        bleu_threshold=float(raw.get("bleu_threshold", 0.2)),
        bleu_max_n=int(raw.get("bleu_max_n", 4)),
        bleu_smoothing=raw.get("bleu_smoothing", "floor"),
        bleu_floor_eps=float(raw.get("bleu_floor_eps", 1e-9)),
        candidates_per_word=int(raw.get("candidates_per_word", 10)),
        params=params,
        ablation=raw.get("ablation", "full"),
        threat_endpoint=raw.get("threat_endpoint"),
        threat_mock=_path("threat_mock", required=False),
        threat_timeout_s=float(raw.get("threat_timeout_s", 60.0)),
        threat_retries=int(raw.get("threat_retries", 2)),
        threat_cache=bool(raw.get("threat_cache", True)),
        threat_auth_env=raw.get("threat_auth_env"),
        master_seed=int(raw.get("master_seed", 0)),
        parallelism=int(raw.get("parallelism", 1)),
        output_dir=_path("output_dir", required=False) or (base / "out"),
        ppl_corpus=_path("ppl_corpus", required=False),
        grammar_command=raw.get("grammar_command"),
        query_metric=raw.get("query_metric", "logical"),
    )
    validate_config(config)
    return config


def validate_config(config: RunConfig):
    for label, p in (
        ("dataset", config.dataset),
        ("lexicon", config.lexicon),
        ("embeddings", config.embeddings),
    ):
        if not Path(p).exists():
            raise ConfigError(f"{label} file not found: {p}")
    for p in config.stopwords:
        if not Path(p).exists():
            raise ConfigError(f"stopword file not found: {p}")
    if config.ppl_corpus and not Path(config.ppl_corpus).exists():
        raise ConfigError(f"ppl_corpus file not found: {config.ppl_corpus}")
    if not 0.0 < config.bleu_threshold < 1.0:
        raise ConfigError("bleu_threshold must lie in (0, 1)")
    if config.threat_endpoint is None and config.threat_mock is None:
        raise ConfigError("config needs threat_endpoint or threat_mock")
    if config.threat_endpoint is not None and config.threat_mock is not None:
        raise ConfigError("threat_endpoint and threat_mock are mutually exclusive")
    if config.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if config.ablation not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {config.ablation!r}")


def load_dataset(path: str | Path) -> list[SeedRecord]:
    """Parse a JSON Lines dataset of generation or classification seeds.

    Every record carries id/prompt/example plus reference (generation) or
    label (classification); kinds must not mix and ids must be unique.
    """
    records: list[SeedRecord] = []
    kinds: set[str] = set()
    ids: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}")
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}:{lineno}: record must be an object")
            for key in ("id", "prompt", "example"):
                if key not in raw:
                    raise ConfigError(f"{path}:{lineno}: missing field {key!r}")
            has_ref = "reference" in raw
            has_label = "label" in raw
            if has_ref == has_label:
                raise ConfigError(
                    f"{path}:{lineno}: need exactly one of 'reference' or 'label'"
                )
            kinds.add("generation" if has_ref else "classification")
            if len(kinds) > 1:
                raise ConfigError(f"{path}:{lineno}: mixed record kinds in dataset")
            seed_id = str(raw["id"])
            if seed_id in ids:
                raise ConfigError(f"{path}:{lineno}: duplicate id {seed_id!r}")
            ids.add(seed_id)
            records.append(
                SeedRecord(
                    id=seed_id,
                    prompt=str(raw["prompt"]),
                    example=str(raw["example"]),
                    reference=str(raw["reference"]) if has_ref else None,
                    label=str(raw["label"]) if has_label else None,
                )
            )
    return records


def derive_rng_seed(master_seed: int, seed_id: str) -> int:
    """Stable 64-bit per-seed stream id from (master seed, seed id)."""
    digest = hashlib.blake2b(
        f"{master_seed}:{seed_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def build_backend(config: RunConfig) -> Backend:
    if config.threat_mock is not None:
        return load_mock_spec(config.threat_mock)
    return HttpThreat(
        config.threat_endpoint,
        timeout_s=config.threat_timeout_s,
        retries=config.threat_retries,
        auth_env=config.threat_auth_env,
    )


def seed_input(record: SeedRecord, stops: StopwordSet) -> FuzzInput:
    expected = record.reference if record.reference is not None else record.label
    return make_fuzz_input(record.prompt, record.example, expected or "", record.id, stops)


@dataclass
class RunArtifacts:
    summary: RunSummary
    reports: list[FuzzReport]
    report_path: Path | None
    summary_path: Path | None
    all_aborted: bool


def run(config: RunConfig, backend: Backend | None = None, write: bool = True) -> RunArtifacts:
    """Fuzz every dataset seed; write JSONL reports and a JSON summary.

    Reports are always emitted sorted by seed id, so output bytes do not
    depend on the parallelism degree.
    """
    records = load_dataset(config.dataset)
    stops = StopwordSet.from_files(config.stopwords) if config.stopwords else StopwordSet("none", [])
    lexicon = load_lexicon(config.lexicon)
    table = load_embeddings(config.embeddings)
    if backend is None:
        backend = build_backend(config)
    criterion = config.criterion()
    cfg = config.bleu_config()
    params = config.search_params()

    def run_one(record: SeedRecord) -> FuzzReport:
        rng = random.Random(derive_rng_seed(config.master_seed, record.id))
        client = CachingThreat(backend, cache_enabled=config.threat_cache)
        inp = seed_input(record, stops)
        return fuzz(
            inp, lexicon, table, client, criterion, cfg, params,
            rng=rng, k=config.candidates_per_word,
        )

    if config.parallelism == 1:
        reports = [run_one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            reports = list(pool.map(run_one, records))
    reports.sort(key=lambda r: r.seed_id)

    scorer = BigramScorer.from_file(config.ppl_corpus) if config.ppl_corpus else None
    summary = metrics.summarize(
        reports, scorer=scorer,
        query_metric=config.query_metric,
        grammar_command=config.grammar_command,
    )
    report_path = summary_path = None
    if write:
        outdir = Path(config.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        report_path = outdir / "reports.jsonl"
        summary_path = outdir / "summary.json"
        metrics.write_reports(reports, report_path)
        metrics.write_summary(summary, summary_path)
    all_aborted = bool(reports) and all(r.aborted for r in reports)
    return RunArtifacts(summary, reports, report_path, summary_path, all_aborted)


def replay(
    report_path: str | Path,
    backend: Backend,
    config: RunConfig,
) -> RunSummary:
    """Re-evaluate a run's successful variants against another target.

    Success is recomputed from scratch (one query per variant); old flags
    are never reused, and the input report file is not modified.
    """
    originals = metrics.read_reports(report_path)
    successes = [r for r in originals if r.success]
    criterion = config.criterion()
    cfg = config.bleu_config()
    client = CachingThreat(backend, cache_enabled=config.threat_cache)
    replayed: list[FuzzReport] = []
    for original in successes:
        probe = make_fuzz_input("", original.final_variant, original.reference, original.seed_id)
        response = client.query(original.final_variant)
        still = is_success(response, probe, criterion, cfg)
        new_loss = eval_loss(response, probe, criterion, cfg).value
        replayed.append(
            dataclasses.replace(original, success=still, final_loss=new_loss)
        )
    return metrics.summarize(replayed, query_metric=config.query_metric)


def ablate(
    config: RunConfig,
    modes: Sequence[str] = ("full", "no_sa", "no_ep", "no_sa_ep", "greedy"),
    backend: Backend | None = None,
    write: bool = True,
) -> dict[str, RunSummary]:
    """Run the same dataset under each ablation mode with paired rng seeds."""
    if backend is None:
        backend = build_backend(config)
    results: dict[str, RunSummary] = {}
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {mode!r}")
        mode_config = replace(
            config,
            ablation=mode,
            output_dir=Path(config.output_dir) / mode,
        )
        results[mode] = run(mode_config, backend=backend, write=write).summary
    if write:
        outdir = Path(config.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        metrics.write_summary_csv(results, outdir / "ablation.csv")
        (outdir / "ablation.json").write_text(
            json.dumps({m: s.to_dict() for m, s in results.items()}, sort_keys=True, indent=2)
            + "\n",
            encoding="utf-8",
        )
    return results


class OracleCapExceeded(Exception):
    """The exhaustive enumeration would exceed the configured cap."""


@dataclass
class OracleResult:
    """Exhaustive ground truth over a bounded substitution budget."""

    best_text: str
    best_loss: float
    best_substitutions: tuple[tuple[int, str, str], ...]
    successes: tuple[tuple[tuple[int, str, str], ...], ...]
    evaluated: int

    @property
    def any_success(self) -> bool:
        return bool(self.successes)


def brute_force_oracle(
    record: SeedRecord,
    config: RunConfig,
    backend: Backend | None = None,
    max_subs: int = 2,
    cap: int = 10**6,
    stops: StopwordSet | None = None,
    lexicon: Lexicon | None = None,
    table: EmbeddingTable | None = None,
) -> OracleResult:
    """Enumerate every variant with at most max_subs substitutions.

    Ground-truth oracle for fixture-scale inputs: evaluates each variant
    against the threat model and returns the max-loss variant plus every
    successful substitution combination. Refuses enumerations larger than
    ``cap``.
    """
    if max_subs > 2:
        raise ValueError("max_subs is capped at 2")
    if stops is None:
        stops = StopwordSet.from_files(config.stopwords) if config.stopwords else StopwordSet("none", [])
    if lexicon is None:
        lexicon = load_lexicon(config.lexicon)
    if table is None:
        table = load_embeddings(config.embeddings)
    if backend is None:
        backend = build_backend(config)
    inp = seed_input(record, stops)
    criterion = config.criterion()
    cfg = config.bleu_config()
    client = CachingThreat(backend, cache_enabled=config.threat_cache)
    positions = perturbable_indices(inp)
    candidates = {
        pos: candidate_set(
            inp.tokens[pos].surface, lexicon, table, config.candidates_per_word
        )
        for pos in positions
    }

    combos = 1  # the unperturbed seed
    for r in range(1, max_subs + 1):
        for chosen in itertools.combinations(positions, r):
            product = 1
            for pos in chosen:
                product *= len(candidates[pos])
            combos += product
    if combos > cap:
        raise OracleCapExceeded(f"{combos} variants exceed the cap of {cap}")

    best_text = render(inp.tokens)
    best_loss = -1.0
    best_subs: tuple[tuple[int, str, str], ...] = ()
    successes: list[tuple[tuple[int, str, str], ...]] = []
    evaluated = 0

    def consider(tokens, subs):
        nonlocal best_text, best_loss, best_subs, evaluated
        evaluated += 1
        text = render(tokens)
        response = client.query(text)
        value = eval_loss(response, inp, criterion, cfg).value
        if value > best_loss:
            best_text, best_loss, best_subs = text, value, subs
        if is_success(response, inp, criterion, cfg):
            successes.append(subs)

    consider(inp.tokens, ())
    for r in range(1, max_subs + 1):
        for chosen in itertools.combinations(positions, r):
            pools = [candidates[pos].words() for pos in chosen]
            if any(not pool for pool in pools):
                continue
            for words in itertools.product(*pools):
                tokens = inp.tokens
                subs = []
                for pos, word in zip(chosen, words):
                    before = tokens[pos].surface
                    tokens = substitute(tokens, pos, word)
                    subs.append((pos, before, tokens[pos].surface))
                consider(tokens, tuple(subs))
    return OracleResult(
        best_text=best_text,
        best_loss=best_loss,
        best_substitutions=best_subs,
        successes=tuple(successes),
        evaluated=evaluated,
    )
