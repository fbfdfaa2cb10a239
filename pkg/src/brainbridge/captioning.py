"""Detail-enhanced captions: pluggable captioning backends plus a store.

The caption store is a line-delimited JSON file, one record per line::

    {"stimulus_id": "...", "original_caption": "...",
     "enhanced_caption": "...", "backend_id": "...", "prompt_id": "...",
     "status": "enhanced" | "failed", "error": null | "..."}

Appends are atomic per line; a later record for the same stimulus
supersedes earlier ones, which makes failed stimuli retryable on rerun.
A truncated trailing line (interrupted write) is detected and dropped on
resume; corruption anywhere else is an error.

Remote backends speak a minimal JSON-over-HTTP contract: POST
{"image_base64": ..., "prompt": ...} and receive {"text": ...} back, so
any vision-language serving stack can be wrapped.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .data import DatasetManifest, decode_word_bands, vocab_palette
from .errors import BackendError, DataError
from .images import encode_png_bytes, load_image

DEFAULT_PROMPT = (
    "Outline the main content of the image. Describe the color, shape, and "
    "size of an object. Use plain language to accurately describe key visual "
    "information."
)

STATUS_ENHANCED = "enhanced"
STATUS_FAILED = "failed"


def prompt_id(prompt: str) -> str:
    return "sha256:" + hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class CaptionRecord:
    stimulus_id: str
    original_caption: str
    enhanced_caption: str
    backend_id: str
    prompt_id: str
    status: str = STATUS_ENHANCED
    error: str | None = None

    def __post_init__(self):
        if self.status == STATUS_ENHANCED and not self.enhanced_caption:
            raise DataError(
                f"{self.stimulus_id}: enhanced record must carry a nonempty caption"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "stimulus_id": self.stimulus_id,
                "original_caption": self.original_caption,
                "enhanced_caption": self.enhanced_caption,
                "backend_id": self.backend_id,
                "prompt_id": self.prompt_id,
                "status": self.status,
                "error": self.error,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "CaptionRecord":
        obj = json.loads(line)
        return cls(
            stimulus_id=obj["stimulus_id"],
            original_caption=obj["original_caption"],
            enhanced_caption=obj["enhanced_caption"],
            backend_id=obj["backend_id"],
            prompt_id=obj["prompt_id"],
            status=obj.get("status", STATUS_ENHANCED),
            error=obj.get("error"),
        )


class CaptioningBackend(Protocol):
    """Anything that can describe an image under a prompt."""

    identifier: str

    def describe(self, image: np.ndarray, prompt: str) -> str: ...


class EchoCaptionBackend:
    """Deterministic mock: returns a fixed text (or text built by a callable)."""

    def __init__(self, text: str | Callable[[np.ndarray, str], str] = "a red cube"):
        self.identifier = "echo"
        self._text = text
        self.calls = 0

    def describe(self, image: np.ndarray, prompt: str) -> str:
        self.calls += 1
        if callable(self._text):
            return self._text(image, prompt)
        return self._text


class PaletteSceneCaptionBackend:
    """Deterministic mock paired with the synthetic generator.

    Synthetic stimuli encode their salient objects as horizontal color
    bands; this backend decodes the bands back to vocabulary words and
    phrases them as a detail-enhanced caption. It plays the role of a
    vision-language model for desk-scale runs.
    """

    def __init__(self, vocab: list[str], words_per_stimulus: int = 3):
        self.identifier = "synthetic"
        self.vocab = list(vocab)
        self.words_per_stimulus = words_per_stimulus
        self.palette = vocab_palette(len(self.vocab))
        self.calls = 0

    def describe(self, image: np.ndarray, prompt: str) -> str:
        self.calls += 1
        indices = decode_word_bands(image, self.palette, self.words_per_stimulus)
        words = [self.vocab[i] for i in indices]
        if len(words) == 1:
            return f"The image shows a {words[0]}."
        listed = ", a ".join(words[:-1])
        return f"The image shows a {listed} and a {words[-1]}."


class HttpCaptionBackend:
    """Client for the documented JSON-over-HTTP captioning contract."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 60.0):
        self.identifier = f"http:{endpoint}"
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def describe(self, image: np.ndarray, prompt: str) -> str:
        import requests

        payload = {
            "image_base64": base64.b64encode(encode_png_bytes(image)).decode("ascii"),
            "prompt": prompt,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise BackendError(f"captioning endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(
                f"captioning endpoint returned {resp.status_code}: {resp.text[:200]}"
            )
        try:
            return resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise BackendError(f"malformed captioning response: {exc}") from exc


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def truncate_at_sentence(text: str, max_tokens: int, count_tokens=_whitespace_tokens) -> str:
    """Cut text at the last sentence boundary that fits within max_tokens.

    Falls back to a plain token cut when even the first sentence is over
    the limit.
    """
    if count_tokens(text) <= max_tokens:
        return text
    kept: list[str] = []
    total = 0
    for sentence in _SENTENCE_SPLIT.split(text):
        n = count_tokens(sentence)
        if total + n > max_tokens:
            break
        kept.append(sentence)
        total += n
    if kept:
        return " ".join(kept)
    return " ".join(text.split()[:max_tokens])


def enhance_caption(
    backend: CaptioningBackend,
    image: np.ndarray,
    prompt: str = DEFAULT_PROMPT,
    max_tokens: int = 77,
    count_tokens=_whitespace_tokens,
    retries: int = 3,
    backoff: float = 0.5,
) -> str:
    """One backend call with bounded retries and length enforcement.

    The default token budget (77) matches the text-encoder limit used
    downstream so stored captions are never silently cut when embedded.
    """
    if not prompt:
        raise DataError("enhance_caption: prompt must be nonempty")
    if retries < 1:
        raise DataError("enhance_caption: retries must be >= 1")
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"enhance_caption: expected (H, W, 3) image, got {image.shape}")

    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            text = backend.describe(image, prompt)
            break
        except BackendError as exc:
            last_error = exc
            if attempt + 1 < retries:
                time.sleep(backoff * (2**attempt))
    else:
        raise BackendError(
            f"captioning backend {backend.identifier!r} failed after "
            f"{retries} attempts: {last_error}"
        ) from last_error

    return truncate_at_sentence(text.strip(), max_tokens, count_tokens)


# ---------------------------------------------------------------------------
# caption store


class CaptionStore:
    """Append-safe line-delimited caption store. Last record per id wins."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self, repair: bool = False) -> dict[str, CaptionRecord]:
        """Read all records. With repair=True a partially written trailing
        line is dropped (and removed from the file); otherwise it raises."""
        records: dict[str, CaptionRecord] = {}
        if not self.path.exists():
            return records
        raw = self.path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        # a well-formed store ends with a newline, leaving one trailing ""
        trailing = lines.pop() if lines else ""
        good_chars = 0
        for i, line in enumerate(lines):
            if not line.strip():
                good_chars += len(line) + 1
                continue
            try:
                rec = CaptionRecord.from_json(line)
            except (json.JSONDecodeError, KeyError, DataError) as exc:
                raise DataError(
                    f"{self.path}: corrupt record on line {i + 1}: {exc}"
                ) from exc
            records[rec.stimulus_id] = rec
            good_chars += len(line) + 1
        if trailing.strip():
            # interrupted append: no terminating newline
            try:
                rec = CaptionRecord.from_json(trailing)
            except (json.JSONDecodeError, KeyError, DataError):
                if not repair:
                    raise DataError(
                        f"{self.path}: partially written trailing record "
                        "(resume drops it, or remove it by hand)"
                    )
                self.path.write_text(raw[:good_chars], encoding="utf-8")
                return records
            records[rec.stimulus_id] = rec
        return records

    def append(self, record: CaptionRecord) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            lead = ""
            if self.path.exists():
                with open(self.path, "rb") as fh:
                    fh.seek(0, 2)
                    if fh.tell() > 0:
                        fh.seek(-1, 2)
                        if fh.read(1) != b"\n":
                            lead = "\n"
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(lead + record.to_json() + "\n")

    def enhanced_captions(self) -> dict[str, str]:
        """stimulus_id -> enhanced caption, for records that succeeded."""
        return {
            sid: rec.enhanced_caption
            for sid, rec in self.load().items()
            if rec.status == STATUS_ENHANCED
        }


def build_caption_store(
    manifest: DatasetManifest,
    backend: CaptioningBackend,
    store_path: str | Path,
    prompt: str = DEFAULT_PROMPT,
    max_tokens: int = 77,
    retries: int = 3,
    backoff: float = 0.5,
    parallelism: int = 1,
) -> CaptionStore:
    """Enhance every stimulus in the manifest into the store, resumably.

    Already-enhanced stimuli are skipped; failed ones are retried on rerun.
    Backend failures for individual stimuli are recorded, not fatal.
    With parallelism > 1 backend calls overlap across stimuli; the store
    writer serializes appends (record order then depends on completion
    order, so keep parallelism at 1 when byte-stable output matters).
    """
    store = CaptionStore(store_path)
    existing = store.load(repair=True)
    done = {sid for sid, rec in existing.items() if rec.status == STATUS_ENHANCED}
    pid = prompt_id(prompt)

    def process(stim_id: str) -> None:
        entry = manifest.stimuli[stim_id]
        original = manifest.original_caption(stim_id)
        try:
            image = load_image(entry.image_path)
            enhanced = enhance_caption(
                backend, image, prompt, max_tokens, retries=retries, backoff=backoff
            )
            store.append(
                CaptionRecord(
                    stimulus_id=stim_id,
                    original_caption=original,
                    enhanced_caption=enhanced,
                    backend_id=backend.identifier,
                    prompt_id=pid,
                )
            )
        except (BackendError, DataError) as exc:
            store.append(
                CaptionRecord(
                    stimulus_id=stim_id,
                    original_caption=original,
                    enhanced_caption="",
                    backend_id=backend.identifier,
                    prompt_id=pid,
                    status=STATUS_FAILED,
                    error=str(exc),
                )
            )

    pending = [sid for sid in sorted(manifest.stimuli) if sid not in done]
    if parallelism <= 1:
        for sid in pending:
            process(sid)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(process, pending))
    return store
