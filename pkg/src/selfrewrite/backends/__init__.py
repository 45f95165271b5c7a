from .base import (
    REWRITE_PARAMS,
    SAMPLE_PARAMS,
    TEST_PARAMS,
    UNLIMITED,
    Backend,
    ContextDescriptor,
    GenerationMode,
    GenerationResult,
    SamplingParams,
    derive_seed,
)
from .http import ChatCompletionsBackend, ChatEndpoint
from .scripted import ScriptedBackend, ToyWithRewriter, dedupe_consecutive
from .toy import PolicyParameters, ToyPolicy, logprob_gradient

__all__ = [
    "REWRITE_PARAMS",
    "SAMPLE_PARAMS",
    "TEST_PARAMS",
    "UNLIMITED",
    "Backend",
    "ChatCompletionsBackend",
    "ChatEndpoint",
    "ContextDescriptor",
    "GenerationMode",
    "GenerationResult",
    "PolicyParameters",
    "SamplingParams",
    "ScriptedBackend",
    "ToyPolicy",
    "ToyWithRewriter",
    "dedupe_consecutive",
    "derive_seed",
    "logprob_gradient",
]
