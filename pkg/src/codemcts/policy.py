"""Token policies.

The search asks a policy for two things: the top-k next tokens after a
prefix (whose raw probabilities become expansion priors) and full
completions from a prefix (simulations). Two implementations live here:

* ToyPolicy: a table-driven model loaded from JSON, deterministic under a
  seeded RNG. Used by the test suite and offline demos.
* RemotePolicy: a client for OpenAI-compatible /v1/completions servers
  (vLLM and friends). top-k is fetched as a one-token completion with
  logprobs=k.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import requests


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.7
    top_p: float = 0.8
    repetition_penalty: float = 1.05
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ()


@dataclass
class Completion:
    text: str
    finish_reason: str = "stop"  # stop | eos | length


RETRYABLE_KINDS = ("timeout", "transport")


class PolicyError(RuntimeError):
    """A policy could not produce a result.

    kind is one of timeout, transport, malformed_response, unsupported.
    The first two are transient and worth retrying; the others are not.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind

    @property
    def retryable(self) -> bool:
        return self.kind in RETRYABLE_KINDS


@runtime_checkable
class Policy(Protocol):
    eos_token: str | None

    def top_k(self, prompt: str, prefix: list[str], k: int) -> list[tuple[str, float]]:
        """Top k next tokens after prompt+prefix as (token, probability),
        descending by probability. Probabilities are the model's own and
        are not renormalized over the returned set."""

    def sample(
        self,
        prompt: str,
        prefix: list[str],
        params: SamplingParams,
        rng: random.Random | None = None,
    ) -> Completion:
        """One sampled continuation of prompt+prefix. The returned text
        does not include the prefix."""


def _normalize(dist: dict[str, float]) -> dict[str, float]:
    if not dist:
        raise ValueError("empty token distribution")
    for tok, w in dist.items():
        if not (w > 0):
            raise ValueError(f"non-positive weight for token {tok!r}")
    total = float(sum(dist.values()))
    return {tok: w / total for tok, w in dist.items()}


class ToyPolicy:
    """Table-driven policy.

    The table maps a joined token prefix (the concatenation of tokens
    generated so far, prompt ignored) to a next-token distribution;
    prefixes missing from the table fall back to `default`. Distributions
    are normalized once at construction.
    """

    def __init__(
        self,
        table: dict[str, dict[str, float]],
        default: dict[str, float] | None = None,
        eos_token: str = "<eos>",
    ):
        self.eos_token = eos_token
        self._table = {key: _normalize(dist) for key, dist in table.items()}
        self._default = _normalize(default) if default else {eos_token: 1.0}

    @classmethod
    def from_file(cls, path: str | Path) -> "ToyPolicy":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        eos = obj.get("eos_token", "<eos>")
        return cls(table=obj["table"], default=obj.get("default"), eos_token=eos)

    def _dist(self, prefix: list[str]) -> dict[str, float]:
        return self._table.get("".join(prefix), self._default)

    def top_k(self, prompt: str, prefix: list[str], k: int) -> list[tuple[str, float]]:
        dist = self._dist(prefix)
        ranked = sorted(dist.items(), key=lambda kv: -kv[1])
        return ranked[:k]

    def sample(
        self,
        prompt: str,
        prefix: list[str],
        params: SamplingParams,
        rng: random.Random | None = None,
    ) -> Completion:
        rng = rng if rng is not None else random.Random()
        context = list(prefix)
        generated: list[str] = []
        finish = "length"
        for _ in range(params.max_tokens):
            token = _draw(self._dist(context), context, params, rng)
            if token == self.eos_token:
                finish = "eos"
                break
            generated.append(token)
            context.append(token)
            cut = _earliest_stop("".join(generated), params.stop_sequences)
            if cut is not None:
                return Completion(text="".join(generated)[:cut], finish_reason="stop")
        return Completion(text="".join(generated), finish_reason=finish)


def _earliest_stop(text: str, stops: tuple[str, ...]) -> int | None:
    """Index where the earliest stop sequence begins, or None. The stop
    marker itself is excluded from returned text, like completion servers do."""
    best = None
    for stop in stops:
        i = text.find(stop)
        if i >= 0 and (best is None or i < best):
            best = i
    return best


def _draw(dist: dict[str, float], seen: list[str], params: SamplingParams, rng: random.Random) -> str:
    tokens = list(dist.keys())
    weights = [dist[t] for t in tokens]

    if params.repetition_penalty != 1.0:
        seen_set = set(seen)
        weights = [
            w / params.repetition_penalty if t in seen_set else w
            for t, w in zip(tokens, weights)
        ]

    # Temperature 0 is greedy; ties go to the first (highest base prob) entry.
    if params.temperature <= 0.0:
        return tokens[max(range(len(tokens)), key=lambda i: weights[i])]

    if params.temperature != 1.0:
        inv = 1.0 / params.temperature
        weights = [w ** inv for w in weights]
    total = sum(weights)
    probs = [w / total for w in weights]

    if params.top_p < 1.0:
        order = sorted(range(len(tokens)), key=lambda i: -probs[i])
        kept: list[int] = []
        cum = 0.0
        for i in order:
            kept.append(i)
            cum += probs[i]
            if cum >= params.top_p:
                break
        tokens = [tokens[i] for i in kept]
        probs = [probs[i] for i in kept]
        total = sum(probs)
        probs = [p / total for p in probs]

    x = rng.random()
    cum = 0.0
    for token, p in zip(tokens, probs):
        cum += p
        if x < cum:
            return token
    return tokens[-1]


class RemotePolicy:
    """Client for an OpenAI-compatible /v1/completions endpoint.

    top_k asks for a one-token completion with logprobs=k and converts the
    returned top_logprobs to probabilities with exp(). sample forwards the
    sampling parameters as-is; a seed derived from the caller's RNG is
    passed when one is given, for servers that honor it.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        eos_token: str | None = None,
        session: requests.Session | None = None,
        max_in_flight: int = 8,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key or os.environ.get("CODEMCTS_API_KEY") or os.environ.get("OPENAI_API_KEY")
        self.timeout = timeout
        self.eos_token = eos_token
        self._session = session if session is not None else requests.Session()
        # Cap on concurrent requests; parallel child simulations share one client.
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _post(self, payload: dict) -> dict:
        url = f"{self.base_url}/v1/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            with self._gate:
                resp = self._session.post(url, json=payload, headers=headers, timeout=self.timeout)
        except requests.Timeout as exc:
            raise PolicyError("timeout", f"policy server timed out after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise PolicyError("transport", f"policy server unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise PolicyError("transport", f"policy server error {resp.status_code}")
        if resp.status_code != 200:
            raise PolicyError(
                "unsupported",
                f"policy server rejected request ({resp.status_code}): {resp.text[:200]}",
            )
        try:
            data = resp.json()
        except ValueError as exc:
            raise PolicyError("malformed_response", "policy server returned a non-JSON body") from exc
        if not isinstance(data, dict):
            raise PolicyError("malformed_response", "completion response is not an object")
        return data

    def top_k(self, prompt: str, prefix: list[str], k: int) -> list[tuple[str, float]]:
        payload = {
            "model": self.model,
            "prompt": prompt + "".join(prefix),
            "max_tokens": 1,
            "temperature": 1.0,
            "logprobs": k,
        }
        data = self._post(payload)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError("malformed_response", "completion response has no choices") from exc
        lp = choice.get("logprobs") if isinstance(choice, dict) else None
        if lp is None:
            # Server accepted the request but ignored the logprobs knob.
            raise PolicyError("unsupported", "server returned no logprobs; enable logprobs")
        try:
            top = lp["top_logprobs"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError("malformed_response", "completion response missing top_logprobs") from exc
        if top is None:
            raise PolicyError("unsupported", "server returned no top_logprobs; enable logprobs")
        ranked = sorted(((tok, math.exp(lp)) for tok, lp in top.items()), key=lambda kv: -kv[1])
        return ranked[:k]

    def sample(
        self,
        prompt: str,
        prefix: list[str],
        params: SamplingParams,
        rng: random.Random | None = None,
    ) -> Completion:
        payload = {
            "model": self.model,
            "prompt": prompt + "".join(prefix),
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "repetition_penalty": params.repetition_penalty,
        }
        if params.stop_sequences:
            payload["stop"] = list(params.stop_sequences)
        if rng is not None:
            payload["seed"] = rng.randrange(2**31)
        data = self._post(payload)
        try:
            choice = data["choices"][0]
            text = choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError("malformed_response", "completion response missing text") from exc
        if not isinstance(text, str):
            raise PolicyError("malformed_response", "completion text is not a string")
        finish = str(choice.get("finish_reason") or "stop")
        if finish not in ("stop", "length", "eos"):
            finish = "stop"  # servers report richer reasons; collapse onto ours
        return Completion(text=text, finish_reason=finish)
