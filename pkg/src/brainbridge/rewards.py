"""The three decoding rewards: object accuracy, text-image, image-image.

Object accuracy compares the noun set of a decoded text against the noun
set of the reference caption with the Jaccard index. Noun extraction sits
behind a small interface: the built-in tagger is a hermetic
lexicon-plus-suffix heuristic (unknown words count as nouns, known
function words / adjectives / verbs are filtered, plurals are reduced to
singulars); a full POS tagger can be slotted in via the same interface.

The two similarity rewards are cosine similarities in a joint text-image
embedding space, supplied by a pluggable EmbeddingBackend. The bundled
mock hashes words and pixels through seeded random projections, which is
deterministic across processes and platforms.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import BackendError, ConfigError, DataError
from .images import to_grayscale

DEFAULT_STOPLIST = frozenset(
    {"image", "photo", "picture", "view", "scene", "background", "foreground"}
)

_FUNCTION_WORDS = frozenset("""
a an the and or but nor so yet with without of in on at by for from to into
onto over under above below between behind beside near through across around
up down off out is are was were be been being am has have had having do does
did doing will would can could shall should may might must it its this that
these those there here he she they them him his her hers their theirs we us
our ours you your yours i me my mine who whom whose what which when where why
how while as if than then also not no none some any all both each every few
many much more most other another such only own same very too just against
during before after about along among next onto per via
one two three four five six seven eight nine ten
""".split())

_ADJECTIVES = frozenset("""
red orange yellow green blue purple pink brown black white gray grey golden
silver dark light bright pale colorful colourful big large small little tiny
huge tall short long wide narrow thin thick high low old new young clean
dirty empty full open closed round square rectangular flat sharp soft hard
wooden metallic beautiful nice pretty good bad modern plain main key visual
accurate several wet dry hot cold warm sunny cloudy left right upper lower
striped spotted shiny fresh ripe folded stacked painted colored coloured
wooden glass ceramic plastic leather furry fluffy cute happy sad busy quiet
""".split())

_VERBS = frozenset("""
show shows showing shown sit sits sitting stand stands standing walk walks
walking run runs running hold holds holding wear wears wearing eat eats
eating ride rides riding play plays playing look looks looking fly flies
flying hang hangs hanging lie lies lying contain contains containing include
includes including go goes going come comes coming make makes making take
takes taking get gets getting put puts see sees seen describe describes
outline outlines use uses using appear appears appearing depict depicts
depicting feature features featuring rest rests resting lean leans leaning
face faces facing
""".split())

# protects real nouns from the suffix heuristics (-ly, -ing, -ed, -s)
_NOUN_LEXICON = frozenset("""
person man woman child boy girl dog cat horse sheep cow elephant bear zebra
giraffe bird fish car bus truck train bicycle motorcycle boat airplane street
road sidewalk sign tree grass sky cloud mountain beach water river building
house window door wall roof room kitchen bathroom bedroom table chair couch
sofa bench desk shelf cabinet counter sink mirror toilet towel rack lamp
clock vase plant flower bowl cup bottle plate fork knife spoon food pizza
sandwich cake apple banana broccoli carrot phone laptop computer keyboard
mouse remote book ball frisbee kite glove skateboard surfboard racket
umbrella bag backpack suitcase hat shirt shoe dress jacket painting ceiling
family belly jelly lily butterfly thing string spring morning evening
clothing lighting speed bed shed wing ring king
""".split())


class NounTagger(Protocol):
    """Adapter slot for noun extraction; see LexiconNounTagger for the default."""

    def nouns(self, text: str) -> list[str]: ...


def singularize(word: str) -> str:
    """Naive English plural -> singular reduction; fixed point on singulars."""
    if len(word) <= 3 or word.endswith("ss"):
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith(("sses", "xes", "zes", "ches", "shes")):
        return word[:-2]
    if word.endswith("s"):
        return word[:-1]
    return word


class LexiconNounTagger:
    """Hermetic noun tagger: curated non-noun lists plus suffix heuristics.

    Unknown words are treated as nouns (the open-world default), which is
    what makes desk-scale vocabularies work without a model download.
    """

    _TOKEN = re.compile(r"[a-zA-Z]+(?:'[a-z]+)?")

    def nouns(self, text: str) -> list[str]:
        out = []
        for raw in self._TOKEN.findall(text.lower()):
            token = raw.split("'")[0]
            if not token:
                continue
            lemma = singularize(token)
            if token in _NOUN_LEXICON or lemma in _NOUN_LEXICON:
                out.append(lemma)
                continue
            if token in _FUNCTION_WORDS or lemma in _FUNCTION_WORDS:
                continue
            if token in _ADJECTIVES or lemma in _ADJECTIVES:
                continue
            if token in _VERBS or lemma in _VERBS:
                continue
            if token.endswith("ly") and len(token) > 3:
                continue
            if token.endswith("ing") and len(token) > 4:
                continue
            if token.endswith("ed") and len(token) > 4:
                continue
            out.append(lemma)
        return out


_DEFAULT_TAGGER = LexiconNounTagger()


def load_stoplist(path: str | Path) -> frozenset[str]:
    """Read a stoplist file: one lemma per line, blank lines ignored."""
    words = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word:
            words.append(word)
    return frozenset(words)


def extract_objects(
    text: str,
    stoplist: frozenset[str] = DEFAULT_STOPLIST,
    tagger: NounTagger | None = None,
) -> frozenset[str]:
    """Lowercased, lemmatized noun set of `text`, minus the abstract-noun
    stoplist. Empty text yields the empty set."""
    tagger = tagger or _DEFAULT_TAGGER
    return frozenset(n for n in tagger.nouns(text) if n and n not in stoplist)


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    """|A n B| / |A u B|. Two empty sets are identical, hence 1.0; exactly
    one empty set shares nothing, hence 0.0."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


# ---------------------------------------------------------------------------
# embedding backends and cosine rewards


class EmbeddingBackend(Protocol):
    """Joint text-image embedding space (CLIP-style in real deployments)."""

    identifier: str
    dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...


def _seeded_vector(tag: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.normal(size=dim)


class HashedEmbeddingBackend:
    """Deterministic mock: hashed bag-of-words text vectors and a hashed
    pixel projection for images. Stable across processes and platforms."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.identifier = f"hashed:{dim}:{seed}"
        self.dim = dim
        self.seed = seed
        self._word_cache: dict[str, np.ndarray] = {}
        self._proj = _seeded_vector(f"{seed}:image-proj", dim * 64).reshape(dim, 64)

    def _word_vector(self, word: str) -> np.ndarray:
        vec = self._word_cache.get(word)
        if vec is None:
            vec = _seeded_vector(f"{self.seed}:word:{word}", self.dim)
            self._word_cache[word] = vec
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim)
        for word in text.lower().split():
            out += self._word_vector(word.strip(".,!?;:'\""))
        return out

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        gray = to_grayscale(np.asarray(image))
        h, w = gray.shape
        # block-mean pool to 8x8 regardless of input size
        hs, ws = max(1, h // 8), max(1, w // 8)
        pooled = np.zeros((8, 8))
        for i in range(8):
            for j in range(8):
                block = gray[i * hs : min((i + 1) * hs, h), j * ws : min((j + 1) * ws, w)]
                pooled[i, j] = block.mean() if block.size else 0.0
        return self._proj @ pooled.reshape(64)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DataError(f"cosine: dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine: zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def text_image_reward(
    backend: EmbeddingBackend, text: str, image_embedding: np.ndarray
) -> float:
    """Cosine similarity between the text's embedding and an image embedding."""
    image_embedding = np.asarray(image_embedding, dtype=np.float64)
    if np.linalg.norm(image_embedding) == 0.0:
        raise DataError("text_image_reward: image embedding has zero norm")
    text_embedding = np.asarray(backend.embed_text(text), dtype=np.float64)
    if np.linalg.norm(text_embedding) == 0.0:
        raise BackendError(
            f"embedding backend {backend.identifier!r} returned a zero-norm "
            f"text embedding (degenerate backend or empty text)"
        )
    return cosine_similarity(text_embedding, image_embedding)


def image_image_reward(
    reconstructor,
    backend: EmbeddingBackend,
    decoded_text: str,
    ground_truth_image_embedding: np.ndarray,
    low_level_latent=None,
    settings: dict | None = None,
) -> float:
    """Reconstruct an image from the decoded text (reduced fidelity), embed
    it, and score cosine similarity against the ground-truth embedding."""
    settings = dict(settings or {"fidelity": "low"})
    text_embedding = np.asarray(backend.embed_text(decoded_text), dtype=np.float64)
    try:
        image = reconstructor.reconstruct(low_level_latent, [text_embedding], settings)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(
            f"reconstruction adapter {getattr(reconstructor, 'identifier', '?')!r} "
            f"failed during reward computation: {exc}"
        ) from exc
    recon_embedding = np.asarray(backend.embed_image(image), dtype=np.float64)
    if np.linalg.norm(recon_embedding) == 0.0:
        raise BackendError(
            f"embedding backend {backend.identifier!r} returned a zero-norm "
            f"embedding for the reconstructed image"
        )
    return cosine_similarity(recon_embedding, ground_truth_image_embedding)


# ---------------------------------------------------------------------------
# reward breakdown


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-sequence reward values plus the factor-weighted composite.

    The trainer couples each raw reward to its own loss term; the
    composite is recorded for logging, never pre-summed into a single
    reward signal.
    """

    object_accuracy: float
    text_image: float
    image_image: float
    composite: float
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.object_accuracy <= 1.0):
            raise DataError(f"object_accuracy out of [0,1]: {self.object_accuracy}")
        for name in ("text_image", "image_image"):
            v = getattr(self, name)
            if not (-1.0 <= v <= 1.0):
                raise DataError(f"{name} out of [-1,1]: {v}")


def _clamp_cosine(value: float) -> float:
    return min(1.0, max(-1.0, value))


def composite_reward(
    object_accuracy: float, text_image: float, image_image: float, config
) -> RewardBreakdown:
    """Assemble a RewardBreakdown under config's trade-off factors.

    `config` needs alpha/beta/gamma attributes (>= 0 each). Cosine values
    are clamped to [-1, 1] to absorb last-bit float overshoot.
    """
    alpha = float(config.alpha)
    beta = float(config.beta)
    gamma = float(config.gamma)
    for name, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if v < 0:
            raise ConfigError(f"trade-off factor {name} must be >= 0, got {v}")
    text_image = _clamp_cosine(text_image)
    image_image = _clamp_cosine(image_image)
    return RewardBreakdown(
        object_accuracy=object_accuracy,
        text_image=text_image,
        image_image=image_image,
        composite=alpha * object_accuracy + beta * text_image + gamma * image_image,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
    )


# ---------------------------------------------------------------------------
# trainer-facing reward computer


class StandardRewardComputer:
    """Wires the three rewards for the co-training loop.

    Ground-truth image embeddings are precomputed and cached; reference
    noun sets come from the enhanced captions. The image-image reward is
    refreshed every `image_reward_every`-th batch (diffusion calls are
    expensive); other batches reuse the last value per stimulus, 0.0
    before the first computation.
    """

    def __init__(
        self,
        config,
        embedding_backend: EmbeddingBackend,
        reference_captions: dict[str, str],
        image_embeddings: dict[str, np.ndarray],
        reconstructor=None,
        stoplist: frozenset[str] = DEFAULT_STOPLIST,
        tagger: NounTagger | None = None,
        image_reward_every: int = 4,
        reconstruction_settings: dict | None = None,
    ):
        if float(config.gamma) > 0 and reconstructor is None:
            raise ConfigError(
                "image-image reward requested (gamma > 0) but no reconstruction "
                "adapter was provided"
            )
        self.config = config
        self.backend = embedding_backend
        self.reconstructor = reconstructor
        self.stoplist = stoplist
        self.tagger = tagger
        self.image_reward_every = max(1, int(image_reward_every))
        self.reconstruction_settings = reconstruction_settings or {"fidelity": "low"}
        self.image_embeddings = {k: np.asarray(v) for k, v in image_embeddings.items()}
        self.reference_objects = {
            sid: extract_objects(text, stoplist, tagger)
            for sid, text in reference_captions.items()
        }
        self._image_reward_cache: dict[str, float] = {}

    def breakdown(self, stimulus_id: str, sampled_text: str, batch_index: int) -> RewardBreakdown:
        reference = self.reference_objects.get(stimulus_id)
        gt_embedding = self.image_embeddings.get(stimulus_id)
        if reference is None or gt_embedding is None:
            raise DataError(f"no reward references for stimulus {stimulus_id!r}")

        decoded = extract_objects(sampled_text, self.stoplist, self.tagger)
        r1 = jaccard(decoded, reference)
        r2 = text_image_reward(self.backend, sampled_text, gt_embedding)

        r3 = self._image_reward_cache.get(stimulus_id, 0.0)
        if float(self.config.gamma) > 0 and batch_index % self.image_reward_every == 0:
            r3 = image_image_reward(
                self.reconstructor,
                self.backend,
                sampled_text,
                gt_embedding,
                settings=self.reconstruction_settings,
            )
            self._image_reward_cache[stimulus_id] = r3
        return composite_reward(r1, r2, r3, self.config)

    def cache_state(self) -> dict[str, float]:
        return dict(self._image_reward_cache)

    def restore_cache(self, state: dict[str, float]) -> None:
        self._image_reward_cache = dict(state)
