"""Clients for text-to-image generation, retrieval, and text generation.

The stub backend is a pure function of (request, seed, embedded source
parameters): it decodes the generative parameters carried by synthetic
images and re-renders them under the style the prompt asks for, which makes
it a ground-truth intervention oracle for desk-scale runs.
"""
from __future__ import annotations

import base64
import hashlib
import random
import threading
import time
from dataclasses import dataclass, field, asdict

import httpx

from . import synthetic
from .errors import BackendTimeout, BackendUnavailable, InvalidRequest

GENERATION_MODES = ("text2image", "sdedit", "controlnet_canny", "instructpix2pix", "inpaint")
ALL_MODES = GENERATION_MODES + ("retrieval",)

DEFAULT_STRENGTH = 0.75
DEFAULT_GUIDANCE = 7.5
DEFAULT_STEPS = 30


@dataclass
class GenerationRequest:
    mode: str
    prompt: str
    source_image: bytes | None = None
    mask: bytes | None = None
    strength: float = DEFAULT_STRENGTH
    guidance_scale: float = DEFAULT_GUIDANCE
    steps: int = DEFAULT_STEPS
    seed: int = 0
    n_results: int = 1

    def validate(self) -> None:
        """Mode-total validation: every mode has an explicit accept/reject rule."""
        if self.mode not in ALL_MODES:
            raise InvalidRequest(f"unknown mode {self.mode!r}")
        if not self.prompt:
            raise InvalidRequest("prompt must be non-empty")
        if not 0.0 <= self.strength <= 1.0:
            raise InvalidRequest("strength must lie in [0, 1]")
        if self.guidance_scale <= 0:
            raise InvalidRequest("guidance_scale must be positive")
        if self.steps <= 0:
            raise InvalidRequest("steps must be positive")
        if self.seed < 0:
            raise InvalidRequest("seed must be unsigned")
        if self.n_results < 1:
            raise InvalidRequest("n_results must be >= 1")
        needs_source = self.mode in ("sdedit", "controlnet_canny", "instructpix2pix", "inpaint")
        if needs_source and self.source_image is None:
            raise InvalidRequest(f"{self.mode} requires a source_image")
        if not needs_source and self.source_image is not None:
            raise InvalidRequest(f"{self.mode} must not carry a source_image")
        if self.mode == "inpaint" and self.mask is None:
            raise InvalidRequest("inpaint requires a mask")
        if self.mode != "inpaint" and self.mask is not None:
            raise InvalidRequest(f"{self.mode} must not carry a mask")

    def echo(self) -> dict:
        """Request minus image payloads, for provenance."""
        return {
            "mode": self.mode,
            "prompt": self.prompt,
            "strength": self.strength,
            "guidance_scale": self.guidance_scale,
            "steps": self.steps,
            "seed": self.seed,
            "n_results": self.n_results,
        }


@dataclass
class GenerationResult:
    images: list[bytes]
    provenance: dict
    scores: list[float] = field(default_factory=list)
    truncated: bool = False


def _provenance(backend_id: str, model_id: str, started: float, request: GenerationRequest) -> dict:
    return {
        "backend_id": backend_id,
        "model_id": model_id,
        "latency_ms": round((time.monotonic() - started) * 1000, 3),
        "request_echo": request.echo(),
    }


def _tokens(text: str) -> list[str]:
    return [t for t in "".join(c if c.isalnum() else " " for c in text.lower()).split() if t]


def style_from_prompt(prompt: str, default: str = "photo") -> str:
    """Longest known style token present in the prompt, else the default."""
    low = prompt.lower()
    hits = [name for name in synthetic.DOMAIN_STYLES if name in low]
    return max(hits, key=len) if hits else default


def backdrop_from_prompt(prompt: str) -> str | None:
    low = prompt.lower()
    for color in synthetic.BACKDROPS:
        if f"{color} backdrop" in low:
            return color
    return None


def texture_from_prompt(prompt: str) -> str | None:
    low = prompt.lower()
    for tex in synthetic.TEXTURES:
        if f"{tex} texture" in low:
            return tex
    return None


class StubGenerationBackend:
    """Deterministic procedural generator over the synthetic renderer.

    Editing modes keep the class-determining parameters of the source image
    and rewrite the environmental ones named in the prompt; text2image draws
    fresh class parameters seeded by (prompt, seed).
    """

    backend_id = "stub"
    model_id = synthetic.RENDERER_ID

    def __init__(self, classes: list[str] | None = None):
        self.classes = list(classes) if classes else list(synthetic.SHAPES)

    def _class_from_prompt(self, prompt: str) -> str:
        low = prompt.lower()
        hits = [c for c in self.classes if c.lower() in low]
        if hits:
            return max(hits, key=len)
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        return self.classes[digest[0] % len(self.classes)]

    def _shape_for(self, class_label: str) -> str:
        if class_label in synthetic.SHAPES:
            return class_label
        digest = hashlib.sha256(class_label.encode("utf-8")).digest()
        return synthetic.SHAPES[digest[0] % len(synthetic.SHAPES)]

    def generate(self, request: GenerationRequest) -> GenerationResult:
        started = time.monotonic()
        request.validate()
        if request.mode == "retrieval":
            raise InvalidRequest("retrieval requests go through retrieve()")

        style = style_from_prompt(request.prompt)
        backdrop = backdrop_from_prompt(request.prompt)
        texture = texture_from_prompt(request.prompt)

        if request.mode == "text2image":
            rng = random.Random(f"{request.prompt}\x00{request.seed}")
            shape = self._shape_for(self._class_from_prompt(request.prompt))
            params = synthetic.random_params(rng, shape, style,
                                             texture=texture, backdrop=backdrop)
        else:
            source = synthetic.decode_params(request.source_image)
            if source is None:
                raise InvalidRequest("stub editing modes need a source image with embedded parameters")
            if request.mode == "inpaint":
                # The mask marks the foreground; only the backdrop may change.
                params = synthetic.restyle(source, backdrop=backdrop)
            else:
                params = synthetic.restyle(source, style=style, texture=texture,
                                           backdrop=backdrop)
        image = synthetic.render(params)
        return GenerationResult(images=[image],
                                provenance=_provenance(self.backend_id, self.model_id,
                                                       started, request))


@dataclass
class RetrievalEntry:
    caption: str
    image: bytes


class StubRetrievalBackend:
    """Frozen nearest-neighbour index scored by token overlap with the query."""

    backend_id = "stub-retrieval"
    model_id = "token-overlap-v1"

    def __init__(self, entries: list[RetrievalEntry]):
        self.entries = list(entries)

    def retrieve(self, query: str, n: int) -> GenerationResult:
        if n < 1:
            raise InvalidRequest("n must be >= 1")
        started = time.monotonic()
        q = set(_tokens(query))
        scored = []
        for i, entry in enumerate(self.entries):
            c = set(_tokens(entry.caption))
            union = q | c
            score = len(q & c) / len(union) if union else 0.0
            scored.append((-score, entry.caption, i))
        scored.sort()
        top = scored[:n]
        request = GenerationRequest(mode="retrieval", prompt=query, n_results=n)
        return GenerationResult(
            images=[self.entries[i].image for _, _, i in top],
            scores=[-neg for neg, _, _ in top],
            truncated=len(top) < n,
            provenance=_provenance(self.backend_id, self.model_id, started, request),
        )


def retrieve(backend, query: str, n: int) -> GenerationResult:
    """n nearest neighbours for a text query, best first."""
    return backend.retrieve(query, n)


class StubTextGenBackend:
    """Deterministic stand-in for a constrained-generation language model.

    Every output sentence contains the full input text, mirroring the
    keep-all-input-words contract of the real service.
    """

    _FORMS = ("an image of {x}", "a picture of {x}", "a scene showing {x}",
              "{x} in high detail", "a close-up of {x}", "a depiction of {x}",
              "a view of {x}", "a study of {x}")

    def _enumerate(self, input_text: str, count: int) -> list[str]:
        out = []
        for i in range(count):
            form = self._FORMS[i % len(self._FORMS)]
            text = form.format(x=input_text)
            cycle = i // len(self._FORMS)
            if cycle:
                text = f"{text}, take {cycle + 1}"
            out.append(text)
        return out

    def generate_text(self, input_text: str, mode: str, n: int,
                      beam_width: int | None = None, top_k: int | None = None,
                      top_p: float | None = None, seed: int | None = None) -> list[str]:
        if mode == "beam":
            return self._enumerate(input_text, n)
        if mode == "sample":
            pool = self._enumerate(input_text, top_k or 50)
            rng = random.Random(seed or 0)
            return [pool[rng.randrange(len(pool))] for _ in range(n)]
        raise InvalidRequest(f"unknown decoding mode {mode!r}")


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(data: str) -> bytes:
    return base64.b64decode(data)


class HttpGenerationBackend:
    """Client for the generation wire protocol.

    POST /generate {mode, prompt, image_b64?, mask_b64?, strength,
    guidance_scale, steps, seed} -> {image_b64, model_id} and
    POST /retrieve {query, n} -> {hits: [{image_b64, score}]}.
    Timeouts retry with exponential backoff, at most three attempts.
    """

    backend_id = "http"
    MAX_ATTEMPTS = 3
    BACKOFF_S = 0.5

    def __init__(self, base_url: str, timeout_s: float = 60.0, max_concurrency: int = 4,
                 client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._client = client or httpx.Client(timeout=timeout_s)
        self._semaphore = threading.Semaphore(max_concurrency)

    def _post(self, path: str, payload: dict) -> dict:
        last_timeout: Exception | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                time.sleep(self.BACKOFF_S * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = self._client.post(self.base_url + path, json=payload)
            except httpx.TimeoutException as exc:
                last_timeout = exc
                continue
            except httpx.HTTPError as exc:
                raise BackendUnavailable(f"{self.base_url}{path}: {exc}") from exc
            if response.status_code >= 500:
                raise BackendUnavailable(f"{self.base_url}{path}: HTTP {response.status_code}")
            if response.status_code >= 400:
                raise InvalidRequest(f"{self.base_url}{path}: HTTP {response.status_code} "
                                     f"{response.text[:200]}")
            return response.json()
        raise BackendTimeout(f"{self.base_url}{path}: no answer after "
                             f"{self.MAX_ATTEMPTS} attempts") from last_timeout

    def generate(self, request: GenerationRequest) -> GenerationResult:
        started = time.monotonic()
        request.validate()
        if request.mode == "retrieval":
            raise InvalidRequest("retrieval requests go through retrieve()")
        payload = {
            "mode": request.mode,
            "prompt": request.prompt,
            "strength": request.strength,
            "guidance_scale": request.guidance_scale,
            "steps": request.steps,
            "seed": request.seed,
        }
        if request.source_image is not None:
            payload["image_b64"] = _b64(request.source_image)
        if request.mask is not None:
            payload["mask_b64"] = _b64(request.mask)
        body = self._post("/generate", payload)
        return GenerationResult(
            images=[_unb64(body["image_b64"])],
            provenance=_provenance(self.backend_id, body.get("model_id", "unknown"),
                                   started, request),
        )

    def retrieve(self, query: str, n: int) -> GenerationResult:
        if n < 1:
            raise InvalidRequest("n must be >= 1")
        started = time.monotonic()
        body = self._post("/retrieve", {"query": query, "n": n})
        hits = body.get("hits", [])
        request = GenerationRequest(mode="retrieval", prompt=query, n_results=n)
        return GenerationResult(
            images=[_unb64(h["image_b64"]) for h in hits],
            scores=[float(h["score"]) for h in hits],
            truncated=len(hits) < n,
            provenance=_provenance(self.backend_id, body.get("model_id", "unknown"),
                                   started, request),
        )


class HttpTextGenBackend:
    """Client for POST /generate-text {input, mode, n, beam_width?, top_k?, top_p?, seed?}."""

    def __init__(self, base_url: str, timeout_s: float = 60.0,
                 client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout_s)

    def generate_text(self, input_text: str, mode: str, n: int,
                      beam_width: int | None = None, top_k: int | None = None,
                      top_p: float | None = None, seed: int | None = None) -> list[str]:
        payload: dict = {"input": input_text, "mode": mode, "n": n}
        if beam_width is not None:
            payload["beam_width"] = beam_width
        if top_k is not None:
            payload["top_k"] = top_k
        if top_p is not None:
            payload["top_p"] = top_p
        if seed is not None:
            payload["seed"] = seed
        try:
            response = self._client.post(self.base_url + "/generate-text", json=payload)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"{self.base_url}/generate-text: {exc}") from exc
        if response.status_code >= 400:
            raise BackendUnavailable(f"{self.base_url}/generate-text: "
                                     f"HTTP {response.status_code}")
        return list(response.json()["texts"])
