"""Dataset ingestion: manifests, voxel containers, splits, synthetic data.

Manifest format (JSON, one file per dataset)
--------------------------------------------
::

    {
      "schema_version": 1,
      "subjects": [
        {"subject_id": "subj01", "voxel_count": 50, "mask_name": "nsdgeneral"}
      ],
      "stimuli": {
        "stim00000": {"caption": "captions/stim00000.txt",
                      "image":   "images/stim00000.png"}
      },
      "splits": {
        "train": {"subj01": ["stim00000", ...]},   # per-subject train ids
        "test":  ["stim00004", ...]                # shared across subjects
      },
      "recordings": {
        "subj01": {"stim00000": ["voxels/subj01/stim00000_t0.vox", ...]}
      }
    }

All paths are relative to the manifest's directory. Every referenced file
must exist at load time; test ids must have recordings for every subject.

Voxel container format (one recording per file)
-----------------------------------------------
::

    bytes 0..4    magic b"VOX1"
    bytes 4..8    uint32 little-endian header length N
    bytes 8..8+N  UTF-8 JSON: {"subject_id", "stimulus_id",
                               "trial_index", "length"}
    rest          length * 4 bytes of little-endian float32 voxel values

Values are assumed z-scored upstream; ingestion validates finiteness and
length only. Averaged test samples carry trial_index == -1.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

AVERAGED_TRIAL = -1

VOX_MAGIC = b"VOX1"

MANIFEST_SCHEMA_VERSION = 1

_MANIFEST_KEYS = {"schema_version", "subjects", "stimuli", "splits", "recordings"}

DEFAULT_VOCAB = [
    "dog", "cat", "car", "tree", "house", "boat", "bird", "fish",
    "chair", "table", "flower", "horse", "train", "apple", "ball", "book",
]


@dataclass(frozen=True)
class SubjectConfig:
    """One scanned participant: id plus the voxel count under its mask."""

    subject_id: str
    voxel_count: int
    mask_name: str = "nsdgeneral"

    def __post_init__(self):
        if self.voxel_count <= 0:
            raise DataError(f"subject {self.subject_id!r}: voxel_count must be > 0")
        if "." in self.subject_id or not self.subject_id:
            raise DataError(f"invalid subject_id {self.subject_id!r}")


@dataclass(frozen=True)
class FmriSample:
    """One voxel vector for one subject viewing one stimulus."""

    subject_id: str
    stimulus_id: str
    trial_index: int
    voxels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.voxels, dtype=np.float32)
        if arr.ndim != 1:
            raise DataError(f"voxels must be a 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError(
                f"non-finite voxel values for {self.subject_id}/{self.stimulus_id}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "voxels", arr)


@dataclass(frozen=True)
class StimulusEntry:
    stimulus_id: str
    caption_path: Path
    image_path: Path


@dataclass(frozen=True)
class DatasetManifest:
    """Validated view of a dataset on disk. Immutable and thread-safe."""

    root: Path
    subjects: tuple[SubjectConfig, ...]
    stimuli: dict[str, StimulusEntry]
    train_ids: dict[str, tuple[str, ...]]
    test_ids: tuple[str, ...]
    recordings: dict[str, dict[str, tuple[Path, ...]]]

    def subject(self, subject_id: str) -> SubjectConfig:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise DataError(f"unknown subject {subject_id!r}")

    def original_caption(self, stimulus_id: str) -> str:
        entry = self.stimuli.get(stimulus_id)
        if entry is None:
            raise DataError(f"unknown stimulus {stimulus_id!r}")
        return entry.caption_path.read_text(encoding="utf-8").strip()


@dataclass(frozen=True)
class DatasetSplits:
    """Output of build_splits: raw train trials, trial-averaged test samples."""

    train: tuple[FmriSample, ...]
    test: tuple[FmriSample, ...]


# ---------------------------------------------------------------------------
# voxel container I/O


def write_voxel_file(path: str | Path, sample: FmriSample) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {
            "length": int(sample.voxels.shape[0]),
            "stimulus_id": sample.stimulus_id,
            "subject_id": sample.subject_id,
            "trial_index": int(sample.trial_index),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VOX_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(np.asarray(sample.voxels, dtype="<f4").tobytes())


def read_voxel_file(path: str | Path) -> FmriSample:
    path = Path(path)
    if not path.exists():
        raise DataError(f"voxel file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != VOX_MAGIC:
        raise DataError(f"{path}: not a voxel container (bad magic)")
    n = int.from_bytes(raw[4:8], "little")
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable voxel header: {exc}") from exc
    payload = raw[8 + n :]
    length = int(header["length"])
    if len(payload) != 4 * length:
        raise DataError(f"{path}: expected {4 * length} payload bytes, found {len(payload)}")
    voxels = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return FmriSample(
        subject_id=header["subject_id"],
        stimulus_id=header["stimulus_id"],
        trial_index=int(header["trial_index"]),
        voxels=voxels,
    )


# ---------------------------------------------------------------------------
# manifest loading


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and fully validate a dataset manifest.

    Raises DataError naming the offending key for missing files, schema
    violations, or dangling stimulus references.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError(f"{path}: manifest must be a JSON object")

    unknown = set(raw) - _MANIFEST_KEYS
    if unknown:
        raise DataError(f"{path}: unknown manifest keys: {sorted(unknown)}")
    missing = _MANIFEST_KEYS - set(raw)
    if missing:
        raise DataError(f"{path}: missing manifest keys: {sorted(missing)}")
    if raw["schema_version"] != MANIFEST_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema_version {raw['schema_version']!r}")

    root = path.parent

    subjects = []
    seen = set()
    for entry in raw["subjects"]:
        cfg = SubjectConfig(
            subject_id=entry["subject_id"],
            voxel_count=int(entry["voxel_count"]),
            mask_name=entry.get("mask_name", "nsdgeneral"),
        )
        if cfg.subject_id in seen:
            raise DataError(f"duplicate subject_id {cfg.subject_id!r} in manifest")
        seen.add(cfg.subject_id)
        subjects.append(cfg)

    stimuli = {}
    for stim_id, files in raw["stimuli"].items():
        caption = root / files["caption"]
        image = root / files["image"]
        if not caption.exists():
            raise DataError(f"stimulus {stim_id!r}: caption file missing: {caption}")
        if not image.exists():
            raise DataError(f"stimulus {stim_id!r}: image file missing: {image}")
        stimuli[stim_id] = StimulusEntry(stim_id, caption, image)

    test_ids = tuple(raw["splits"]["test"])
    for stim_id in test_ids:
        if stim_id not in stimuli:
            raise DataError(f"test split references unknown stimulus {stim_id!r}")

    train_ids = {}
    for subject_id, ids in raw["splits"]["train"].items():
        if subject_id not in seen:
            raise DataError(f"train split references unknown subject {subject_id!r}")
        for stim_id in ids:
            if stim_id not in stimuli:
                raise DataError(
                    f"train split ({subject_id}) references unknown stimulus {stim_id!r}"
                )
        train_ids[subject_id] = tuple(ids)

    recordings: dict[str, dict[str, tuple[Path, ...]]] = {}
    for subject_id, by_stim in raw["recordings"].items():
        if subject_id not in seen:
            raise DataError(f"recordings reference unknown subject {subject_id!r}")
        recordings[subject_id] = {}
        for stim_id, rel_paths in by_stim.items():
            if stim_id not in stimuli:
                raise DataError(
                    f"recordings ({subject_id}) reference unknown stimulus {stim_id!r}"
                )
            paths = tuple(root / p for p in rel_paths)
            for p in paths:
                if not p.exists():
                    raise DataError(
                        f"recording file missing for {subject_id}/{stim_id}: {p}"
                    )
            recordings[subject_id][stim_id] = paths

    # test ids must be common to every subject
    for cfg in subjects:
        for stim_id in test_ids:
            if stim_id not in recordings.get(cfg.subject_id, {}):
                raise DataError(
                    f"test stimulus {stim_id!r} has no recordings for subject "
                    f"{cfg.subject_id!r} (test ids must be shared by all subjects)"
                )

    return DatasetManifest(
        root=root,
        subjects=tuple(subjects),
        stimuli=stimuli,
        train_ids=train_ids,
        test_ids=test_ids,
        recordings=recordings,
    )


# ---------------------------------------------------------------------------
# splits


def average_test_trials(samples: list[FmriSample]) -> FmriSample:
    """Element-wise mean across repeated trials of one subject+stimulus.

    The result carries trial_index == AVERAGED_TRIAL. Input order does not
    matter: trials are canonically sorted before the reduction, so any
    permutation of the same trials produces bit-identical output.
    """
    if not samples:
        raise DataError("average_test_trials: empty input")
    subject_ids = {s.subject_id for s in samples}
    stimulus_ids = {s.stimulus_id for s in samples}
    if len(subject_ids) != 1:
        raise DataError(f"mixed subject ids in trial group: {sorted(subject_ids)}")
    if len(stimulus_ids) != 1:
        raise DataError(f"mixed stimulus ids in trial group: {sorted(stimulus_ids)}")
    lengths = {s.voxels.shape[0] for s in samples}
    if len(lengths) != 1:
        raise DataError(f"mixed voxel lengths in trial group: {sorted(lengths)}")

    ordered = sorted(samples, key=lambda s: (s.trial_index, s.voxels.tobytes()))
    stacked = np.stack([s.voxels for s in ordered]).astype(np.float64)
    mean = stacked.mean(axis=0).astype(np.float32)
    return FmriSample(
        subject_id=samples[0].subject_id,
        stimulus_id=samples[0].stimulus_id,
        trial_index=AVERAGED_TRIAL,
        voxels=mean,
    )


def _load_trials(
    manifest: DatasetManifest, subject: SubjectConfig, stimulus_id: str
) -> list[FmriSample]:
    paths = manifest.recordings.get(subject.subject_id, {}).get(stimulus_id)
    if not paths:
        raise DataError(
            f"no recordings for {subject.subject_id}/{stimulus_id} in manifest"
        )
    out = []
    for p in paths:
        sample = read_voxel_file(p)
        if sample.subject_id != subject.subject_id or sample.stimulus_id != stimulus_id:
            raise DataError(
                f"{p}: header says {sample.subject_id}/{sample.stimulus_id}, "
                f"manifest expects {subject.subject_id}/{stimulus_id}"
            )
        if sample.voxels.shape[0] != subject.voxel_count:
            raise DataError(
                f"{p}: voxel length {sample.voxels.shape[0]} != subject "
                f"{subject.subject_id} voxel_count {subject.voxel_count}"
            )
        out.append(sample)
    return out


def build_splits(manifest: DatasetManifest) -> DatasetSplits:
    """Materialize train (raw trials) and test (trial-averaged) samples.

    Train and test ids must be disjoint per subject. Every test stimulus
    yields exactly one averaged sample per subject.
    """
    test_set = set(manifest.test_ids)
    train = []
    test = []
    for subject in manifest.subjects:
        declared = manifest.train_ids.get(subject.subject_id, ())
        overlap = test_set.intersection(declared)
        if overlap:
            raise DataError(
                f"subject {subject.subject_id!r}: stimuli declared in both train "
                f"and test: {sorted(overlap)}"
            )
        for stim_id in declared:
            train.extend(_load_trials(manifest, subject, stim_id))
        for stim_id in manifest.test_ids:
            trials = _load_trials(manifest, subject, stim_id)
            test.append(average_test_trials(trials))
    return DatasetSplits(train=tuple(train), test=tuple(test))


# ---------------------------------------------------------------------------
# synthetic data


def vocab_palette(n: int) -> np.ndarray:
    """n visually distinct RGB colors (uint8), stable across runs."""
    colors = []
    for i in range(n):
        hue = (i * 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return np.asarray(colors, dtype=np.uint8)


def render_word_bands(word_indices: list[int], palette: np.ndarray, size: int = 64) -> np.ndarray:
    """Stimulus image: one horizontal color band per word, top to bottom."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    k = len(word_indices)
    band = size // k
    for i, w in enumerate(word_indices):
        top = i * band
        bottom = size if i == k - 1 else (i + 1) * band
        img[top:bottom, :, :] = palette[w]
    return img


def decode_word_bands(image: np.ndarray, palette: np.ndarray, k: int) -> list[int]:
    """Inverse of render_word_bands: nearest-palette lookup per band."""
    arr = np.asarray(image, dtype=np.float64)
    size = arr.shape[0]
    band = size // k
    out = []
    for i in range(k):
        top = i * band
        bottom = size if i == k - 1 else (i + 1) * band
        mean_color = arr[top:bottom].reshape(-1, 3).mean(axis=0)
        dists = np.linalg.norm(palette.astype(np.float64) - mean_color, axis=1)
        out.append(int(np.argmin(dists)))
    return out


def _original_caption(words: list[str]) -> str:
    # deliberately terse: mentions only the first two objects
    if len(words) == 1:
        return f"a photo of a {words[0]}"
    return f"a photo of a {words[0]} and a {words[1]}"


def generate_synthetic_dataset(
    out_dir: str | Path,
    seed: int,
    subjects: int,
    voxel_counts: list[int],
    stimuli: int,
    vocab: list[str] | None = None,
    trials_per_stimulus: int = 3,
    test_count: int | None = None,
    words_per_stimulus: int = 3,
    noise_scale: float = 0.01,
    image_size: int = 64,
) -> Path:
    """Write a desk-scale dataset under out_dir; returns the manifest path.

    Each stimulus draws an ordered word tuple from `vocab`; its latent code
    is the concatenation of the words' one-hot vectors. Voxel vectors are a
    fixed random linear map of that code plus per-trial noise, and captions
    name the drawn words, so brain-to-text decoding is learnable in
    principle. Identical seeds produce byte-identical trees.
    """
    from .images import save_png

    if subjects <= 0:
        raise DataError("generate_synthetic_dataset: subjects must be >= 1")
    if stimuli <= 0:
        raise DataError("generate_synthetic_dataset: stimuli must be >= 1")
    if len(voxel_counts) != subjects:
        raise DataError(
            f"voxel_counts has {len(voxel_counts)} entries for {subjects} subjects"
        )
    vocab = list(DEFAULT_VOCAB if vocab is None else vocab)
    if len(set(vocab)) != len(vocab):
        raise DataError("vocab words must be unique")
    if words_per_stimulus > len(vocab):
        raise DataError("words_per_stimulus exceeds vocab size")
    if test_count is None:
        test_count = max(1, stimuli // 5)
    if test_count >= stimuli and stimuli > 1:
        raise DataError(f"test_count {test_count} leaves no training stimuli")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    palette = vocab_palette(len(vocab))
    vsize = len(vocab)
    code_dim = words_per_stimulus * vsize

    stim_ids = [f"stim{k:05d}" for k in range(stimuli)]
    subject_ids = [f"subj{k + 1:02d}" for k in range(subjects)]

    # draw ordered word tuples per stimulus, then the per-subject maps
    stim_words: dict[str, list[int]] = {}
    for stim_id in stim_ids:
        idx = rng.choice(vsize, size=words_per_stimulus, replace=False)
        stim_words[stim_id] = [int(i) for i in idx]

    codes: dict[str, np.ndarray] = {}
    for stim_id in stim_ids:
        code = np.zeros(code_dim, dtype=np.float64)
        for slot, w in enumerate(stim_words[stim_id]):
            code[slot * vsize + w] = 1.0
        codes[stim_id] = code

    stimuli_block = {}
    for stim_id in stim_ids:
        words = [vocab[w] for w in stim_words[stim_id]]
        caption_rel = f"captions/{stim_id}.txt"
        image_rel = f"images/{stim_id}.png"
        caption_path = out_dir / caption_rel
        caption_path.parent.mkdir(parents=True, exist_ok=True)
        caption_path.write_text(_original_caption(words) + "\n", encoding="utf-8")
        save_png(out_dir / image_rel, render_word_bands(stim_words[stim_id], palette, image_size))
        stimuli_block[stim_id] = {"caption": caption_rel, "image": image_rel}

    recordings_block: dict[str, dict[str, list[str]]] = {}
    for s_idx, subject_id in enumerate(subject_ids):
        n_s = int(voxel_counts[s_idx])
        if n_s <= 0:
            raise DataError(f"voxel count for {subject_id} must be > 0")
        mapping = rng.normal(size=(n_s, code_dim)) / np.sqrt(code_dim)
        recordings_block[subject_id] = {}
        for stim_id in stim_ids:
            base = mapping @ codes[stim_id]
            rels = []
            for t in range(trials_per_stimulus):
                noise = rng.normal(size=n_s) * noise_scale
                voxels = (base + noise).astype(np.float32)
                rel = f"voxels/{subject_id}/{stim_id}_t{t}.vox"
                write_voxel_file(
                    out_dir / rel,
                    FmriSample(subject_id, stim_id, t, voxels),
                )
                rels.append(rel)
            recordings_block[subject_id][stim_id] = rels

    test_ids = stim_ids[stimuli - test_count :]
    train_ids = stim_ids[: stimuli - test_count]

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "subjects": [
            {"mask_name": "nsdgeneral", "subject_id": sid, "voxel_count": int(voxel_counts[i])}
            for i, sid in enumerate(subject_ids)
        ],
        "stimuli": stimuli_block,
        "splits": {
            "train": {sid: train_ids for sid in subject_ids},
            "test": test_ids,
        },
        "recordings": recordings_block,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest_path
