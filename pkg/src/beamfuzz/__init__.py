"""Mutation-based robustness fuzzing for black-box text systems.

Seeds (prompt + example) are perturbed word-by-word through lexicon- and
embedding-constrained substitutions; an annealed beam search over the
perturbation space hunts for minimally perturbed variants that push the
target's output below a quality threshold.
"""

from .harness import (
    RunConfig,
    SeedRecord,
    ablate,
    brute_force_oracle,
    load_config,
    load_dataset,
    replay,
    run,
)
from .importance import ImportanceRanking, rank
from .metrics import BigramScorer, FuzzReport, RunSummary, perplexity, summarize
from .objective import (
    BleuConfig,
    CriterionKind,
    Loss,
    Smoothing,
    SuccessCriterion,
    bleu,
    is_success,
    loss,
)
from .perturb import (
    CandidateSet,
    EmbeddingTable,
    Lexicon,
    candidate_set,
    cosine,
    load_embeddings,
    load_lexicon,
    substitute,
)
from .search import SearchParams, Variant, fuzz
from .threat import (
    CachingThreat,
    HttpThreat,
    MockClassifier,
    MockTranslator,
    QueryLedger,
    ThreatError,
    ThreatResponse,
    TriggerRule,
)
from .tokens import (
    FuzzInput,
    StopwordSet,
    Token,
    filter_perturbable,
    make_fuzz_input,
    render,
    tokenize,
)

__version__ = "0.1.0"
