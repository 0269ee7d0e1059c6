"""Client for a chat-completion style generation endpoint.

Builds decompilation prompts from assembly, sends them with a fixed
decoding policy, and pulls clean code out of the raw completions.
"""

from __future__ import annotations

import dataclasses
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import requests

DEFAULT_MARKERS = ("<think>", "</think>")
SOURCE_TAGS = {"dart", "swift"}


class InferenceError(RuntimeError):
    """Terminal failure talking to the endpoint."""


class AuthError(InferenceError):
    pass


class ProtocolError(InferenceError):
    pass


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class DecodingPolicy:
    temperature: float = 0.2
    top_p: float = 0.99
    beam: int = 1
    max_tokens: int = 2048
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def with_beam(self, beam: int) -> "DecodingPolicy":
        return dataclasses.replace(self, beam=beam)

    def with_seed(self, seed: int | None) -> "DecodingPolicy":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecodingPolicy":
        return cls(**{k: d[k] for k in ("temperature", "top_p", "beam", "max_tokens", "seed") if k in d})


PARITY_POLICY = DecodingPolicy(temperature=0.2, top_p=0.99, beam=1)


# -- prompts ----------------------------------------------------------------

def default_template() -> str:
    return resources.files("decompeval.data").joinpath("prompt_template.txt").read_text(encoding="utf-8")


def build_prompt(record, template: str | None = None) -> str:
    """Substitute ``{{language}}`` and ``{{assembly}}``; the assembly goes in verbatim."""
    template = default_template() if template is None else template
    for ph in ("{{assembly}}", "{{language}}"):
        if ph not in template:
            raise TemplateError(f"template lacks the {ph} placeholder")
    # single pass so placeholder-like text inside the assembly stays put
    subs = {"assembly": record.assembly, "language": record.language}
    return re.sub(r"\{\{(assembly|language)\}\}", lambda m: subs[m.group(1)], template)


# -- extraction -------------------------------------------------------------

_FENCE = re.compile(r"^([ \t]*)(`{3,}|~{3,})[ \t]*([^\s`]*)[^\n]*\n", re.M)


def _strip_reasoning(text: str, markers: tuple[str, str]) -> tuple[str, bool]:
    open_m, close_m = markers
    changed = False
    while True:
        start = text.find(open_m)
        end = text.find(close_m)
        if end != -1 and (start == -1 or end < start):
            # closing marker with no opener: everything before it is trace
            text = text[end + len(close_m):]
        elif start != -1:
            end = text.find(close_m, start + len(open_m))
            text = text[:start] if end == -1 else text[:start] + text[end + len(close_m):]
        else:
            return text, changed
        changed = True


def _fences(text: str) -> list[tuple[str, str]]:
    """Top-level fenced blocks as (info tag, body), in order of appearance."""
    found = []
    pos = 0
    while True:
        m = _FENCE.search(text, pos)
        if m is None:
            return found
        fence = m.group(2)
        closer = re.compile(rf"^[ \t]*{re.escape(fence[0])}{{{len(fence)},}}[ \t]*$", re.M)
        c = closer.search(text, m.end())
        if c is None:
            found.append((m.group(3), text[m.end():]))
            return found
        body = text[m.end():c.start()]
        found.append((m.group(3), body))
        pos = c.end()


def _extract_once(raw: str, markers: tuple[str, str]) -> str:
    text, stripped = _strip_reasoning(raw, markers)
    blocks = _fences(text)
    if blocks:
        # a source-language tag beats any other tag, which beats no tag
        ranked = sorted(blocks, key=lambda b: 0 if b[0].lower() in SOURCE_TAGS else 1 if b[0] else 2)
        return ranked[0][1]
    return text.strip() if stripped else text


def strip_and_extract(raw: str, markers: tuple[str, str] = DEFAULT_MARKERS) -> str:
    """Drop reasoning spans, then return the first fenced block, preferring tagged ones.

    Text with neither markers nor fences comes back unchanged. Applied
    until nothing changes, so the result is a fixed point.
    """
    current = raw
    for _ in range(32):
        nxt = _extract_once(current, markers)
        if nxt == current:
            return nxt
        current = nxt
    return current


# -- transport --------------------------------------------------------------

@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str
    api_key_env: str | None = None
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    rate_per_sec: float | None = None  # token-bucket refill, None: unpaced
    markers: tuple[str, str] = DEFAULT_MARKERS

    def api_key(self) -> str | None:
        if not self.api_key_env:
            return None
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key


class TokenBucket:
    def __init__(self, rate: float | None, capacity: int = 1):
        self.rate = rate
        self.capacity = capacity
        self.tokens = float(capacity)
        self.stamp = time.monotonic()
        self.lock = threading.Lock()

    def take(self) -> None:
        if not self.rate:
            return
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            time.sleep(wait)


_buckets: dict[tuple, TokenBucket] = {}
_buckets_lock = threading.Lock()


def _bucket(endpoint: EndpointConfig) -> TokenBucket:
    key = (endpoint.url, endpoint.rate_per_sec)
    with _buckets_lock:
        if key not in _buckets:
            _buckets[key] = TokenBucket(endpoint.rate_per_sec)
        return _buckets[key]


def request_body(prompt: str, policy: DecodingPolicy, model: str, send_beam: bool = True) -> dict:
    body = {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": policy.temperature,
        "top_p": policy.top_p,
        "max_tokens": policy.max_tokens,
    }
    if policy.seed is not None:
        body["seed"] = policy.seed
    if send_beam and policy.beam > 1:
        body["beam_width"] = policy.beam
    return body


def _parse_completion(resp: requests.Response) -> str:
    try:
        data = resp.json()
    except ValueError:
        raise ProtocolError(f"response is not JSON: {resp.text[:200]!r}") from None
    if not isinstance(data, dict) or "choices" not in data:
        raise ProtocolError("response lacks field 'choices'")
    choices = data["choices"]
    if not isinstance(choices, list) or not choices:
        raise ProtocolError("field 'choices' is empty or not a list")
    msg = choices[0].get("message") if isinstance(choices[0], dict) else None
    if not isinstance(msg, dict):
        raise ProtocolError("response lacks field 'choices[0].message'")
    content = msg.get("content")
    if not isinstance(content, str):
        raise ProtocolError("response lacks field 'choices[0].message.content'")
    return content


def _beam_rejected(resp: requests.Response) -> bool:
    return resp.status_code in (400, 422) and "beam" in resp.text.lower()


def generate_detailed(prompt: str, policy: DecodingPolicy, endpoint: EndpointConfig,
                      session: requests.Session | None = None) -> tuple[str, dict]:
    """One completion plus metadata about how it was obtained."""
    headers = {"Content-Type": "application/json"}
    key = endpoint.api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    http = session or requests
    meta: dict = {"retries": 0}
    send_beam = True
    attempt = 0
    while True:
        body = request_body(prompt, policy, endpoint.model, send_beam)
        _bucket(endpoint).take()
        try:
            resp = http.post(endpoint.url, json=body, headers=headers, timeout=endpoint.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            resp, err = None, f"transport: {exc}"
        else:
            err = None
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint refused credentials ({resp.status_code}): {resp.text[:200]}")
            if send_beam and policy.beam > 1 and _beam_rejected(resp):
                # fall back to sampling; a distinct seed per attempt stands in for beam diversity
                send_beam = False
                if policy.seed is None:
                    policy = policy.with_seed(policy.beam)
                meta["beam_fallback"] = {"beam": policy.beam, "seed": policy.seed}
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                err = f"HTTP {resp.status_code}: {resp.text[:200]}"
            elif resp.status_code >= 400:
                raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            else:
                return _parse_completion(resp), meta
        if attempt >= endpoint.max_retries:
            raise InferenceError(f"gave up after {attempt} retries: {err}")
        time.sleep(endpoint.backoff * (2 ** attempt))
        attempt += 1
        meta["retries"] = attempt


def generate(prompt: str, policy: DecodingPolicy, endpoint: EndpointConfig) -> str:
    return generate_detailed(prompt, policy, endpoint)[0]


# -- hypotheses -------------------------------------------------------------

@dataclass(frozen=True)
class Hypothesis:
    item_id: str
    attempt_index: int
    raw: str
    code: str
    policy: DecodingPolicy
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_raw(cls, item_id: str, attempt_index: int, raw: str, policy: DecodingPolicy,
                 meta: dict | None = None, markers: tuple[str, str] = DEFAULT_MARKERS) -> "Hypothesis":
        return cls(item_id, attempt_index, raw, strip_and_extract(raw, markers), policy, meta or {})

    def to_json(self) -> str:
        return json.dumps({"item_id": self.item_id, "attempt_index": self.attempt_index,
                           "policy": self.policy.to_dict(), "raw": self.raw, "code": self.code,
                           "meta": self.meta}, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str, markers: tuple[str, str] = DEFAULT_MARKERS) -> "Hypothesis":
        d = json.loads(line)
        h = cls(d["item_id"], int(d["attempt_index"]), d["raw"], d["code"],
                DecodingPolicy.from_dict(d["policy"]), d.get("meta", {}))
        if h.code != strip_and_extract(h.raw, markers):
            raise ValueError(f"hypothesis {h.item_id}#{h.attempt_index}: code does not match raw")
        return h


def write_hypotheses(hyps: Iterable[Hypothesis], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for h in hyps:
            fh.write(h.to_json() + "\n")


def read_hypotheses(path: Path) -> list[Hypothesis]:
    with open(path, encoding="utf-8") as fh:
        return [Hypothesis.from_json(line) for line in fh if line.strip()]


def generate_for_record(record, plan, endpoint: EndpointConfig, template: str | None = None,
                        session: requests.Session | None = None) -> list[Hypothesis]:
    """Run every attempt of the plan for one record, in attempt order."""
    prompt = build_prompt(record, template)
    out = []
    for i, policy in enumerate(plan):
        raw, meta = generate_detailed(prompt, policy, endpoint, session)
        out.append(Hypothesis.from_raw(record.id, i, raw, policy, meta, endpoint.markers))
    return out
