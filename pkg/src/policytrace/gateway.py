"""Uniform access to chat/reasoning model providers.

Handles retries with exponential backoff, per-provider concurrency bounds,
content-addressed response caching on disk, raw chain-of-thought capture,
and a deterministic scripted mock provider for offline runs and tests.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .tokens import Tokenizer, estimate_tokens


class GatewayError(Exception):
    pass


class RateLimitedError(GatewayError):
    pass


class ProviderError(GatewayError):
    pass


class ContextOverflowError(GatewayError):
    pass


class UnmatchedPromptError(GatewayError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.7
    top_p: float = 1.0
    max_new_tokens: int = 8192
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p out of range: {self.top_p}")
        if self.max_new_tokens <= 0:
            raise ValueError(f"max_new_tokens must be positive: {self.max_new_tokens}")


# Named sampling profiles: trace generation is capped at 2048 new tokens to
# avoid runaway traces; every other call gets the full 8192 budget.
PRT_GEN_PROFILE = SamplingConfig(temperature=0.7, max_new_tokens=2048)
ASSESS_PROFILE = SamplingConfig(temperature=0.7, max_new_tokens=8192)


@dataclass(frozen=True)
class RetryPolicy:
    base_delay_s: float = 1.0
    factor: float = 2.0
    max_attempts: int = 5
    timeout_s: float = 120.0


@dataclass
class ModelResponse:
    text: str
    raw_cot: Optional[str] = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    cache_hit: bool = False


class Provider:
    """One backend. generate() returns (text, raw_cot, prompt_tokens, completion_tokens)."""

    def generate(self, model_id: str, prompt: str, cfg: SamplingConfig):
        raise NotImplementedError


@dataclass
class ModelHandle:
    provider_id: str
    model_id: str
    supports_raw_cot: bool = False
    price_in_usd_per_1m: float = 0.0
    price_out_usd_per_1m: float = 0.0
    context_window: int = 131072
    provider: Optional[Provider] = None
    tokenizer: Tokenizer = estimate_tokens
    cache_dir: Optional[Path] = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    max_in_flight: int = 4
    _semaphore: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.price_in_usd_per_1m < 0 or self.price_out_usd_per_1m < 0:
            raise ValueError("prices must be >= 0")
        self._semaphore = threading.BoundedSemaphore(self.max_in_flight)

    def default_config(self) -> SamplingConfig:
        return ASSESS_PROFILE


def cache_key(handle: ModelHandle, prompt: str, cfg: SamplingConfig) -> str:
    """Stable content hash over the fields that determine a response."""
    payload = json.dumps(
        [
            handle.provider_id,
            handle.model_id,
            prompt,
            cfg.temperature,
            cfg.top_p,
            cfg.max_new_tokens,
            cfg.seed,
        ],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


_cache_write_locks: dict[str, threading.Lock] = {}
_cache_locks_guard = threading.Lock()


def _key_lock(key: str) -> threading.Lock:
    with _cache_locks_guard:
        return _cache_write_locks.setdefault(key, threading.Lock())


def _cache_path(cache_dir: Path, key: str) -> Path:
    return cache_dir / key[:2] / f"{key}.json"


def _cache_read(cache_dir: Path, key: str) -> Optional[ModelResponse]:
    path = _cache_path(cache_dir, key)
    if not path.exists():
        return None
    data = json.loads(path.read_text(encoding="utf-8"))
    return ModelResponse(
        text=data["text"],
        raw_cot=data.get("raw_cot"),
        prompt_tokens=data["prompt_tokens"],
        completion_tokens=data["completion_tokens"],
        latency_ms=data.get("latency_ms", 0),
        cache_hit=True,
    )


def _cache_write(cache_dir: Path, key: str, response: ModelResponse) -> None:
    path = _cache_path(cache_dir, key)
    with _key_lock(key):
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {
                    "text": response.text,
                    "raw_cot": response.raw_cot,
                    "prompt_tokens": response.prompt_tokens,
                    "completion_tokens": response.completion_tokens,
                    "latency_ms": response.latency_ms,
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        tmp.replace(path)


def complete(handle: ModelHandle, prompt: str, cfg: SamplingConfig) -> ModelResponse:
    """Send one prompt, honoring cache, context window, and retry policy.

    Context overflow is never retried; rate limiting is retried with
    exponential backoff up to the configured attempt bound.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if handle.provider is None:
        raise ProviderError(f"no provider bound for {handle.provider_id}/{handle.model_id}")

    prompt_estimate = handle.tokenizer(prompt)
    if prompt_estimate + cfg.max_new_tokens > handle.context_window:
        raise ContextOverflowError(
            f"prompt ({prompt_estimate} tokens) + max_new_tokens ({cfg.max_new_tokens}) "
            f"exceeds context window ({handle.context_window})"
        )

    key = cache_key(handle, prompt, cfg)
    if handle.cache_dir is not None:
        cached = _cache_read(handle.cache_dir, key)
        if cached is not None:
            return cached

    delay = handle.retry.base_delay_s
    last_err: Optional[Exception] = None
    for attempt in range(handle.retry.max_attempts):
        try:
            with handle._semaphore:
                start = time.monotonic()
                text, raw_cot, in_tok, out_tok = handle.provider.generate(
                    handle.model_id, prompt, cfg
                )
                latency_ms = int((time.monotonic() - start) * 1000)
            if not handle.supports_raw_cot:
                raw_cot = None
            response = ModelResponse(
                text=text,
                raw_cot=raw_cot,
                prompt_tokens=in_tok,
                completion_tokens=out_tok,
                latency_ms=latency_ms,
            )
            if handle.cache_dir is not None:
                _cache_write(handle.cache_dir, key, response)
            return response
        except RateLimitedError as err:
            last_err = err
            if attempt + 1 < handle.retry.max_attempts:
                time.sleep(delay)
                delay *= handle.retry.factor
    raise RateLimitedError(f"exhausted {handle.retry.max_attempts} attempts") from last_err


@dataclass
class MockScriptEntry:
    pattern: str
    text: str
    raw_cot: Optional[str] = None


class MockProvider(Provider):
    """Fully offline provider. First matching substring pattern wins, in
    declared order; unmatched prompts fail loudly rather than fabricating
    output."""

    def __init__(self, script: list[MockScriptEntry], tokenizer: Tokenizer = estimate_tokens):
        self.script = list(script)
        self.tokenizer = tokenizer
        self.call_count = 0

    def generate(self, model_id: str, prompt: str, cfg: SamplingConfig):
        self.call_count += 1
        for entry in self.script:
            if entry.pattern in prompt:
                return (
                    entry.text,
                    entry.raw_cot,
                    self.tokenizer(prompt),
                    self.tokenizer(entry.text),
                )
        head = prompt[:120].replace("\n", "\\n")
        raise UnmatchedPromptError(f"no script pattern matches prompt: {head!r}...")


def mock_provider(
    script: list[MockScriptEntry] | dict[str, str],
    model_id: str = "mock-model",
    supports_raw_cot: bool = False,
    cache_dir: Optional[Path] = None,
    tokenizer: Tokenizer = estimate_tokens,
    price_in_usd_per_1m: float = 0.0,
    price_out_usd_per_1m: float = 0.0,
) -> ModelHandle:
    """Build a scripted offline handle for tests and dry runs."""
    if isinstance(script, dict):
        script = [MockScriptEntry(pattern=k, text=v) for k, v in script.items()]
    provider = MockProvider(script, tokenizer=tokenizer)
    return ModelHandle(
        provider_id="mock",
        model_id=model_id,
        supports_raw_cot=supports_raw_cot,
        price_in_usd_per_1m=price_in_usd_per_1m,
        price_out_usd_per_1m=price_out_usd_per_1m,
        provider=provider,
        tokenizer=tokenizer,
        cache_dir=cache_dir,
    )


class OpenAICompatProvider(Provider):
    """Minimal OpenAI-compatible chat completions backend.

    API key is read from the named environment variable only; raw CoT is
    taken from `reasoning_content` when the endpoint exposes it.
    """

    def __init__(self, base_url: str, api_key_env: str, timeout_s: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def generate(self, model_id: str, prompt: str, cfg: SamplingConfig):
        import requests

        api_key = os.environ.get(self.api_key_env, "")
        body = {
            "model": model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_new_tokens,
        }
        if cfg.seed is not None:
            body["seed"] = cfg.seed
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as err:
            raise ProviderError(str(err)) from err
        if resp.status_code == 429:
            raise RateLimitedError(resp.text[:500])
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        data = resp.json()
        message = data["choices"][0]["message"]
        usage = data.get("usage", {})
        return (
            message.get("content") or "",
            message.get("reasoning_content"),
            usage.get("prompt_tokens", 0),
            usage.get("completion_tokens", 0),
        )


def load_provider_config(path: str | Path, cache_dir: Optional[Path] = None) -> dict[str, ModelHandle]:
    """Load a provider config file into a model_id -> ModelHandle map.

    Schema: {"provider_id", "base_url", "api_key_env", "models": [...]}, or a
    list of such objects. provider_id "mock" takes a "script" list of
    {"pattern", "text", "raw_cot"?} entries instead of base_url.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    configs = data if isinstance(data, list) else [data]
    handles: dict[str, ModelHandle] = {}
    for config in configs:
        provider_id = config["provider_id"]
        if provider_id == "mock":
            script = [
                MockScriptEntry(
                    pattern=entry["pattern"],
                    text=entry["text"],
                    raw_cot=entry.get("raw_cot"),
                )
                for entry in config.get("script", [])
            ]
            provider: Provider = MockProvider(script)
        else:
            provider = OpenAICompatProvider(
                base_url=config["base_url"],
                api_key_env=config["api_key_env"],
            )
        for model in config.get("models", []):
            handle = ModelHandle(
                provider_id=provider_id,
                model_id=model["model_id"],
                supports_raw_cot=model.get("supports_raw_cot", False),
                price_in_usd_per_1m=model.get("price_in_usd_per_1m", 0.0),
                price_out_usd_per_1m=model.get("price_out_usd_per_1m", 0.0),
                context_window=model.get("context_window", 131072),
                provider=provider,
                cache_dir=cache_dir,
            )
            handles[model["model_id"]] = handle
    return handles


def with_cache_dir(handle: ModelHandle, cache_dir: Optional[Path]) -> ModelHandle:
    new = replace(handle, cache_dir=cache_dir)
    return new
