"""Multimodal prompt construction and chat-style classification.

A prompt bundles the test dCIR image with the per-class retrieved exemplars
and their distances. Providers are pluggable: a generic chat-completions
HTTP client for real endpoints, and deterministic mocks so the whole
pipeline runs offline.
"""

import base64
import io
import os
import re
import string
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from PIL import Image

from .labels import CATEGORIES, canonical_label

DEFAULT_API_KEY_ENV = "CIR_LLM_API_KEY"

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)


class ProviderError(RuntimeError):
    """Provider misconfiguration (unknown name, missing API key)."""


class TransportError(RuntimeError):
    """Request could not be completed after retries."""


@dataclass(frozen=True)
class PromptImage:
    role: str  # "test" or "exemplar"
    raster: np.ndarray
    caption: str
    gesture_label: str = ""
    distance: float = 0.0


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    images: tuple
    category: str

    def __post_init__(self):
        roles = [im.role for im in self.images]
        if roles.count("test") != 1 or roles.count("exemplar") != 5:
            raise ValueError("prompt needs exactly 1 test and 5 exemplar images")


@dataclass(frozen=True)
class ProviderConfig:
    name: str = "mock:nearest"
    endpoint_url: str = ""
    model_name: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_tokens: int = 4096
    temperature: float = 0.2
    timeout_s: float = 60.0
    max_retries: int = 3
    min_interval_s: float = 0.0

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ClassificationOutcome:
    predicted_label: object  # str when status == "ok", else None
    reasoning_text: str
    raw_response: str
    status: str  # ok | parse_failed | transport_error


def _load_template() -> tuple:
    text = (
        resources.files("cirgest")
        .joinpath("assets/prompt_template.txt")
        .read_text(encoding="utf-8")
    )
    system_part, user_part = text.split("[user]", 1)
    system_text = system_part.replace("[system]", "", 1).strip()
    return system_text, user_part.strip()


def format_distance(d: float) -> str:
    return f"{float(d):.4g}"


def build_prompt(
    test_image: np.ndarray, retrieved, category: str, exemplar_images=None
) -> PromptBundle:
    """Assemble the multimodal prompt: 5 per-class exemplars plus the test
    image, with caption lines carrying each exemplar's label and distance.

    exemplar_images: rasters aligned with `retrieved`; when omitted each
    sample's image_path is read from disk.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown category: {category!r}")
    retrieved = list(retrieved)
    wanted = set(CATEGORIES[category])
    got = [r.gesture_label for r in retrieved]
    if sorted(got) != sorted(wanted):
        raise ValueError(
            f"retrieved exemplars must cover all labels of {category!r}; got {sorted(got)}"
        )
    if exemplar_images is None:
        from .dataset import read_image

        exemplar_images = []
        for r in retrieved:
            if not r.image_path:
                raise ValueError(f"sample {r.sample_id} has no image_path to load")
            exemplar_images.append(read_image(r.image_path))
    if len(exemplar_images) != len(retrieved):
        raise ValueError("exemplar_images must align with retrieved samples")
    system_text, user_template = _load_template()
    label_list = ", ".join(CATEGORIES[category])
    lines = []
    images = []
    for i, (r, raster) in enumerate(zip(retrieved, exemplar_images), start=1):
        caption = (
            f'Reference {i}: gesture label "{r.gesture_label}", '
            f"Euclidean distance {format_distance(r.distance)}"
        )
        lines.append(f"- {caption}")
        images.append(
            PromptImage(
                role="exemplar",
                raster=np.asarray(raster),
                caption=caption,
                gesture_label=r.gesture_label,
                distance=float(r.distance),
            )
        )
    images.append(PromptImage(role="test", raster=np.asarray(test_image), caption="Test image"))
    user_text = string.Template(user_template).substitute(
        category=category, label_list=label_list, exemplar_lines="\n".join(lines)
    )
    return PromptBundle(
        system_text=system_text,
        user_text=user_text,
        images=tuple(images),
        category=category,
    )


def parse_answer(text: str, valid_labels) -> tuple:
    """First <answer> span -> (canonical label | None, reasoning text)."""
    m = _ANSWER_RE.search(text or "")
    if m is None:
        return None, (text or "").strip()
    reasoning = (text[: m.start()] + text[m.end() :]).strip()
    label = canonical_label(m.group(1), valid_labels)
    return label, reasoning


def png_bytes(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(raster, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------- providers


class _RateLimiter:
    def __init__(self, min_interval_s: float):
        self.min_interval_s = min_interval_s
        self._lock = threading.Lock()
        self._next_at = 0.0
        self.request_count = 0

    def wait(self):
        with self._lock:
            self.request_count += 1
            if self.min_interval_s <= 0:
                return
            now = time.monotonic()
            delay = self._next_at - now
            self._next_at = max(now, self._next_at) + self.min_interval_s
        if delay > 0:
            time.sleep(delay)


class MockProvider:
    """Deterministic offline providers.

    nearest: answers with the minimum-distance exemplar's label.
    fixed:<label>: always answers <label>.
    malformed: returns text without answer tags.
    flaky: every `period`-th request fails with a transport error.
    """

    def __init__(self, mode: str, fixed_label: str = "", period: int = 3):
        self.mode = mode
        self.fixed_label = fixed_label
        self.period = period
        self._lock = threading.Lock()
        self._calls = 0

    def complete(self, bundle: PromptBundle) -> str:
        with self._lock:
            self._calls += 1
            call_index = self._calls
        if self.mode == "flaky" and call_index % self.period == 0:
            raise TransportError("injected transport failure")
        if self.mode == "malformed":
            return "The ridge pattern is ambiguous and no label is given."
        if self.mode == "fixed":
            return (
                f"<answer>{self.fixed_label}</answer> Fixed-label mock response."
            )
        exemplars = [im for im in bundle.images if im.role == "exemplar"]
        best = exemplars[int(np.argmin([im.distance for im in exemplars]))]
        return (
            f"<answer>{best.gesture_label}</answer> The test image's ridge shape "
            f"most closely matches the reference at distance "
            f"{format_distance(best.distance)}."
        )


class HttpProvider:
    """Generic chat-completions client: base64 PNG images inline, retries
    with exponential backoff. The API key is read from the configured
    environment variable and is never logged or echoed in errors."""

    def __init__(self, config: ProviderConfig):
        if not config.endpoint_url:
            raise ProviderError("http provider needs endpoint_url")
        key = os.environ.get(config.api_key_env, "")
        if not key:
            raise ProviderError(
                f"API key not found in environment variable {config.api_key_env}"
            )
        self.config = config
        self._headers = {"Authorization": f"Bearer {key}"}

    def _body(self, bundle: PromptBundle) -> dict:
        content = [{"type": "text", "text": bundle.user_text}]
        for im in bundle.images:
            content.append({"type": "text", "text": im.caption})
            data = base64.b64encode(png_bytes(im.raster)).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{data}"},
                }
            )
        return {
            "model": self.config.model_name,
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": content},
            ],
        }

    def complete(self, bundle: PromptBundle) -> str:
        import httpx

        body = self._body(bundle)
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(0.5 * 2 ** (attempt - 1))
            try:
                resp = httpx.post(
                    self.config.endpoint_url,
                    json=body,
                    headers=self._headers,
                    timeout=self.config.timeout_s,
                )
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise TransportError(f"unexpected response shape: {exc}") from exc
            last_error = f"HTTP {resp.status_code}"
            if 400 <= resp.status_code < 500 and resp.status_code != 429:
                break  # client errors other than rate limiting will not heal
        raise TransportError(f"request failed after retries: {last_error}")


def make_provider(config: ProviderConfig):
    name = config.name
    if name == "http":
        return HttpProvider(config)
    if name.startswith("mock:"):
        parts = name.split(":", 2)
        mode = parts[1]
        if mode == "nearest":
            return MockProvider("nearest")
        if mode == "fixed":
            if len(parts) < 3 or not parts[2]:
                raise ProviderError("mock:fixed needs a label, e.g. mock:fixed:circle")
            return MockProvider("fixed", fixed_label=parts[2])
        if mode == "malformed":
            return MockProvider("malformed")
        if mode == "flaky":
            return MockProvider("flaky")
    raise ProviderError(f"unknown provider: {name!r}")


def _classify_with(provider, bundle: PromptBundle, limiter=None) -> ClassificationOutcome:
    try:
        if limiter is not None:
            limiter.wait()
        raw = provider.complete(bundle)
    except TransportError as exc:
        return ClassificationOutcome(
            predicted_label=None,
            reasoning_text="",
            raw_response=str(exc),
            status="transport_error",
        )
    label, reasoning = parse_answer(raw, CATEGORIES[bundle.category])
    if label is None:
        return ClassificationOutcome(
            predicted_label=None,
            reasoning_text=reasoning,
            raw_response=raw,
            status="parse_failed",
        )
    return ClassificationOutcome(
        predicted_label=label, reasoning_text=reasoning, raw_response=raw, status="ok"
    )


def classify(bundle: PromptBundle, provider_config: ProviderConfig) -> ClassificationOutcome:
    provider = make_provider(provider_config)
    return _classify_with(provider, bundle)


def classify_batch(
    bundles, provider_config: ProviderConfig, concurrency: int = 4
) -> list:
    """All outcomes returned in input order; individual failures become
    transport_error outcomes, never exceptions."""
    bundles = list(bundles)
    provider = make_provider(provider_config)
    limiter = _RateLimiter(provider_config.min_interval_s)
    if concurrency <= 1:
        return [_classify_with(provider, b, limiter) for b in bundles]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(_classify_with, provider, b, limiter) for b in bundles]
        return [f.result() for f in futures]
