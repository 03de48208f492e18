"""Synthetic benchmark generation, feature-space augmentation, and the
embedding-bundle container format.

The synthetic task draws class-conditional Gaussian raw features and builds a
grid of per-class attributes. Informative attributes are token sequences
fitted (by a deterministic, seeded gradient descent through the frozen text
encoder) to match embeddings of class prototypes, so matching an image
against them carries real class signal; noise attributes are fitted to
class-independent targets and carry none. That contrast is what the
entropy-selection benchmark measures.

Image-space augmentations are replaced by feature-space analogues at this
scale: weak adds small Gaussian noise, strong adds larger noise plus random
coordinate masking. Imported (bundle-backed) datasets reuse their fixed
precomputed views instead.

The bundle container ("BVLB") is a self-describing little-endian binary file:
magic, version, JSON manifest with a section directory (offsets, lengths,
CRC32), then raw section payloads. See docs/format.md for the byte-level
layout.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import rng
from .encoders import (EncoderConfig, EncoderRegime, FrozenImageEncoder,
                       FrozenTextEncoder, build_encoders)
from .errors import ConfigError, DataError
from .promptbank import PromptBank, Prompt, stack_attributes

BUNDLE_MAGIC = b"BVLB"
BUNDLE_VERSION = 1
EMBED_SECTIONS = ("IMG_ORIG", "IMG_WEAK", "IMG_STRONG", "ATTR")


# ---------------------------------------------------------------------------
# Task specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTask:
    """Generative recipe for a desk-scale classification benchmark."""

    name: str = "synthetic"
    num_classes: int = 8
    raw_dim: int = 32
    class_std: float = 0.06
    mean_scale: float = 1.0
    train_per_class: int = 32
    test_per_class: int = 50
    seed: int = 0
    informative_attributes: int = 3
    noise_attributes: int = 7
    attribute_noise: float = 0.1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.class_std < 0.0:
            raise ConfigError("class_std must be >= 0")
        if self.informative_attributes + self.noise_attributes < 1:
            raise ConfigError("need at least one attribute per class")
        if min(self.raw_dim, self.train_per_class, self.test_per_class) < 1:
            raise ConfigError("dimensions and pool sizes must be positive")

    @property
    def attributes_per_class(self) -> int:
        return self.informative_attributes + self.noise_attributes

    def with_attribute_count(self, total: int) -> "SyntheticTask":
        """Same task with a rescaled attribute grid, preserving the
        informative fraction (at least one informative attribute)."""
        if total < 1:
            raise ConfigError("attribute count must be >= 1")
        frac = self.informative_attributes / self.attributes_per_class
        informative = max(1, round(frac * total))
        informative = min(informative, total)
        return replace(self, informative_attributes=informative,
                       noise_attributes=total - informative)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "num_classes": self.num_classes,
            "raw_dim": self.raw_dim, "class_std": self.class_std,
            "mean_scale": self.mean_scale,
            "train_per_class": self.train_per_class,
            "test_per_class": self.test_per_class, "seed": self.seed,
            "informative_attributes": self.informative_attributes,
            "noise_attributes": self.noise_attributes,
            "attribute_noise": self.attribute_noise,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticTask":
        known = set(SyntheticTask().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown task fields: {sorted(unknown)}")
        return SyntheticTask(**d)


@dataclass(frozen=True)
class AugmentationPolicy:
    """Feature-space augmentation strengths, relative to the data scale."""

    weak_std: float
    strong_std: float
    mask_prob: float = 0.1

    @staticmethod
    def from_feature_scale(scale: float) -> "AugmentationPolicy":
        return AugmentationPolicy(weak_std=0.05 * scale,
                                  strong_std=0.2 * scale)

    def to_dict(self) -> dict:
        return {"weak_std": self.weak_std, "strong_std": self.strong_std,
                "mask_prob": self.mask_prob}


def class_means(task: SyntheticTask) -> np.ndarray:
    """Deterministic per-class mean vectors, orthonormalized (scaled) when the
    raw dimension allows, otherwise unit random directions."""
    draws = rng.normals(task.seed, (task.raw_dim, task.num_classes),
                        "class_means")
    if task.raw_dim >= task.num_classes:
        q, r = np.linalg.qr(draws)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        means = (q * signs).T[:task.num_classes]
    else:
        means = draws.T[:task.num_classes].copy()
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    means = means * task.mean_scale
    for i in range(task.num_classes):
        for j in range(i + 1, task.num_classes):
            if np.allclose(means[i], means[j], atol=1e-12):
                raise DataError(f"duplicate class means for classes {i}, {j}")
    return means


def augment(sample: np.ndarray, policy: AugmentationPolicy, kind: str,
            seed_ctx: tuple[int, int, int]) -> np.ndarray:
    """One augmented view, deterministic in (seed, sample index, epoch, kind)."""
    root, sample_index, epoch = seed_ctx
    g = rng.generator(root, "aug", kind, epoch, sample_index)
    x = np.asarray(sample, dtype=np.float64)
    if kind == "weak":
        return x + policy.weak_std * g.standard_normal(x.shape)
    if kind == "strong":
        noisy = x + policy.strong_std * g.standard_normal(x.shape)
        mask = g.random(x.shape) >= policy.mask_prob
        return noisy * mask
    raise ConfigError(f"unknown augmentation kind {kind!r}")


def _augment_batch(raw: np.ndarray, indices: np.ndarray,
                   policy: AugmentationPolicy, kind: str, root: int,
                   epoch: int) -> np.ndarray:
    out = np.empty_like(raw[indices])
    for row, idx in enumerate(indices):
        out[row] = augment(raw[idx], policy, kind, (root, int(idx), epoch))
    return out


# ---------------------------------------------------------------------------
# Attribute construction
# ---------------------------------------------------------------------------

def _fit_attribute_tokens(targets: np.ndarray, encoder: FrozenTextEncoder,
                          seed: int, rows_per_seq: int, steps: int = 400,
                          lr: float = 5.0, momentum: float = 0.9) -> np.ndarray:
    """Fit token sequences so the text encoder maps them near the targets.

    One batched gradient-descent run over all sequences at once; pure
    function of (targets, seed). Returns (count, rows_per_seq, token_dim).
    """
    count = targets.shape[0]
    init = rng.normals(seed, (count * rows_per_seq, encoder.token_dim),
                       "attr_tokens", std=0.02)
    tokens = ad.parameter(init)
    anchor = ad.constant(targets)
    velocity = np.zeros_like(tokens.data)
    for _ in range(steps):
        feats = encoder.encode_batch(tokens, count, rows_per_seq)
        loss = ad.neg(ad.sum_(ad.mul(feats, anchor)))
        loss.backward()
        velocity = momentum * velocity + tokens.grad
        tokens.data -= lr * velocity
        tokens.zero_grad()
    return tokens.data.reshape(count, rows_per_seq, encoder.token_dim)


def build_attributes(task: SyntheticTask, text_encoder: FrozenTextEncoder,
                     image_encoder: FrozenImageEncoder,
                     token_rows: int = 5):
    """Attribute token grid, embeddings, and provenance strings.

    Informative attribute targets are image-encoder embeddings of jittered
    class prototypes, so matching against them carries class signal. Noise
    attribute targets are drawn independently of class: one target per noise
    column, shared by every class, which makes those columns exactly
    uninformative. Token sequences are fitted to the targets through the
    frozen text encoder by a seeded batched gradient descent.
    """
    k = task.num_classes
    n_info, n_noise = task.informative_attributes, task.noise_attributes
    n = n_info + n_noise
    d = image_encoder.embed_dim
    means = class_means(task)

    info_targets = np.empty((k, n_info, d))
    for i in range(k):
        for j in range(n_info):
            jitter = rng.normals(task.seed, (task.raw_dim,), "attr_proto",
                                 i, j, std=task.attribute_noise)
            info_targets[i, j] = image_encoder.encode(means[i] + jitter)
    noise_targets = np.empty((n_noise, d))
    for j in range(n_noise):
        unrelated = rng.normals(task.seed, (task.raw_dim,), "attr_noise", j,
                                std=task.mean_scale)
        noise_targets[j] = image_encoder.encode(unrelated)

    flat_targets = np.concatenate([info_targets.reshape(k * n_info, d),
                                   noise_targets], axis=0)
    fitted = _fit_attribute_tokens(flat_targets, text_encoder, task.seed,
                                   token_rows)
    count = flat_targets.shape[0]
    stacked = ad.constant(fitted.reshape(count * token_rows, -1))
    embedded = text_encoder.encode_batch(stacked, count, token_rows).data

    tokens = np.empty((k, n, token_rows, text_encoder.token_dim))
    embeddings = np.empty((k, n, d))
    texts: list[list[str]] = []
    info_tok = fitted[:k * n_info].reshape(k, n_info, token_rows, -1)
    info_emb = embedded[:k * n_info].reshape(k, n_info, d)
    for i in range(k):
        row_texts = []
        for j in range(n):
            if j < n_info:
                tokens[i, j] = info_tok[i, j]
                embeddings[i, j] = info_emb[i, j]
                row_texts.append(f"{task.name}/class-{i}: distinguishing "
                                 f"trait {j}")
            else:
                tokens[i, j] = fitted[k * n_info + (j - n_info)]
                embeddings[i, j] = embedded[k * n_info + (j - n_info)]
                row_texts.append(f"{task.name}: generic trait {j} "
                                 "(class-independent)")
        texts.append(row_texts)
    return tokens, embeddings, texts


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

class SyntheticDataset:
    """In-memory dataset with live (per-epoch) augmentation."""

    def __init__(self, task: SyntheticTask, encoder_cfg: EncoderConfig):
        if encoder_cfg.image_dim != task.raw_dim:
            encoder_cfg = EncoderConfig(seed=encoder_cfg.seed,
                                        token_dim=encoder_cfg.token_dim,
                                        embed_dim=encoder_cfg.embed_dim,
                                        image_dim=task.raw_dim,
                                        hidden_dim=encoder_cfg.hidden_dim,
                                        text_gain=encoder_cfg.text_gain)
        self.task = task
        self.encoder_cfg = encoder_cfg
        self.text_encoder, self.image_encoder = build_encoders(encoder_cfg)

        means = class_means(task)
        k = task.num_classes
        tr, te = task.train_per_class, task.test_per_class
        train_noise = rng.normals(task.seed, (k, tr, task.raw_dim), "train")
        test_noise = rng.normals(task.seed, (k, te, task.raw_dim), "test")
        self.train_raw = (means[:, None, :] + task.class_std * train_noise
                          ).reshape(k * tr, task.raw_dim)
        self.test_raw = (means[:, None, :] + task.class_std * test_noise
                         ).reshape(k * te, task.raw_dim)
        self.train_labels = np.repeat(np.arange(k), tr).astype(np.int64)
        self.test_labels = np.repeat(np.arange(k), te).astype(np.int64)

        scale = float(np.sqrt(np.mean(self.train_raw ** 2)))
        self.policy = AugmentationPolicy.from_feature_scale(scale)

        (self.attribute_tokens, self.attribute_embeddings,
         self.attribute_texts) = build_attributes(task, self.text_encoder,
                                                  self.image_encoder)
        self._v_train = self.image_encoder.encode_batch(self.train_raw)
        self._v_test = self.image_encoder.encode_batch(self.test_raw)

    # dataset protocol ------------------------------------------------------
    @property
    def name(self) -> str:
        return self.task.name

    @property
    def num_classes(self) -> int:
        return self.task.num_classes

    @property
    def embed_dim(self) -> int:
        return self.encoder_cfg.embed_dim

    def class_names(self) -> list[str]:
        return [f"class-{i}" for i in range(self.num_classes)]

    def original_class_ids(self) -> list[int]:
        return list(range(self.num_classes))

    def fingerprint(self) -> tuple:
        return ("synthetic", self.task.to_dict().__repr__(),
                self.encoder_cfg.to_dict().__repr__())

    def train_indices_for_class(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.train_labels == class_id)

    def training_views(self, indices: np.ndarray, epoch: int):
        """(V_orig, V_weak, V_strong) for the given train rows; weak and
        strong views are resampled each epoch from seeded noise."""
        indices = np.asarray(indices, dtype=np.int64)
        weak_raw = _augment_batch(self.train_raw, indices, self.policy,
                                  "weak", self.task.seed, epoch)
        strong_raw = _augment_batch(self.train_raw, indices, self.policy,
                                    "strong", self.task.seed, epoch)
        return (self._v_train[indices],
                self.image_encoder.encode_batch(weak_raw),
                self.image_encoder.encode_batch(strong_raw))

    def test_set(self):
        return self._v_test.copy(), self.test_labels.copy()


class ImportedDataset:
    """Bundle-backed dataset; precomputed views are reused every epoch."""

    def __init__(self, bundle: "EmbeddingBundle"):
        self.bundle = bundle
        m = bundle.manifest
        self._n_train = int(m["counts"]["train"])
        self._n_test = int(m["counts"]["test"])
        self.train_labels = bundle.labels[:self._n_train].astype(np.int64)
        self.test_labels = bundle.labels[self._n_train:].astype(np.int64)
        self.attribute_embeddings = stack_attributes(bundle.attributes)
        self.attribute_texts = m.get("attribute_texts") or [
            [f"attribute {j} of {c}" for j in range(self.attribute_embeddings.shape[1])]
            for c in m["class_names"]]

    @property
    def name(self) -> str:
        return self.bundle.manifest["dataset"]

    @property
    def num_classes(self) -> int:
        return int(self.bundle.manifest["num_classes"])

    @property
    def embed_dim(self) -> int:
        return int(self.bundle.manifest["embed_dim"])

    def class_names(self) -> list[str]:
        return list(self.bundle.manifest["class_names"])

    def original_class_ids(self) -> list[int]:
        return list(range(self.num_classes))

    def fingerprint(self) -> tuple:
        return ("imported", self.name, self._n_train, self._n_test,
                self.num_classes)

    def train_indices_for_class(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.train_labels == class_id)

    def training_views(self, indices: np.ndarray, epoch: int):
        del epoch  # fixed precomputed views
        idx = np.asarray(indices, dtype=np.int64)
        return (self.bundle.img_orig[idx], self.bundle.img_weak[idx],
                self.bundle.img_strong[idx])

    def test_set(self):
        return (self.bundle.img_orig[self._n_train:].copy(),
                self.test_labels.copy())


def generate_task(task: SyntheticTask,
                  encoder_cfg: EncoderConfig | None = None) -> SyntheticDataset:
    """Materialize a synthetic dataset; identical (task, encoders) give
    identical datasets."""
    return SyntheticDataset(task, encoder_cfg or EncoderConfig())


class ClassSubsetDataset:
    """A dataset restricted to a subset of classes, labels remapped to
    0..len(class_ids)-1. Augmentation stays keyed by the parent's global
    sample indices, so views are identical to the parent's."""

    def __init__(self, parent, class_ids):
        self.parent = parent
        self.class_ids = [int(c) for c in class_ids]
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ConfigError("duplicate class ids in subset")
        if not self.class_ids:
            raise ConfigError("class subset must be nonempty")
        remap = {orig: new for new, orig in enumerate(self.class_ids)}

        tr_mask = np.isin(parent.train_labels, self.class_ids)
        self._train_idx = np.flatnonzero(tr_mask)
        self.train_labels = np.array(
            [remap[int(y)] for y in parent.train_labels[self._train_idx]],
            dtype=np.int64)
        v_test, te_labels = parent.test_set()
        te_mask = np.isin(te_labels, self.class_ids)
        self._v_test = v_test[te_mask]
        self.test_labels = np.array(
            [remap[int(y)] for y in te_labels[te_mask]], dtype=np.int64)
        self.attribute_embeddings = parent.attribute_embeddings[self.class_ids]
        self.attribute_texts = [parent.attribute_texts[c]
                                for c in self.class_ids]

    @property
    def name(self) -> str:
        return f"{self.parent.name}[{','.join(map(str, self.class_ids))}]"

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    @property
    def embed_dim(self) -> int:
        return self.parent.embed_dim

    def class_names(self) -> list[str]:
        names = self.parent.class_names()
        return [names[c] for c in self.class_ids]

    def original_class_ids(self) -> list[int]:
        return list(self.class_ids)

    def fingerprint(self) -> tuple:
        return self.parent.fingerprint() + ("subset", tuple(self.class_ids))

    def train_indices_for_class(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.train_labels == class_id)

    def training_views(self, indices: np.ndarray, epoch: int):
        idx = np.asarray(indices, dtype=np.int64)
        return self.parent.training_views(self._train_idx[idx], epoch)

    def test_set(self):
        return self._v_test.copy(), self.test_labels.copy()


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def attribute_label_mutual_information(dataset, attribute_index: int) -> float:
    """Plug-in mutual information (nats) between true labels and the
    predictions of a single attribute column used as a nearest-attribute
    classifier over the test split."""
    v, labels = dataset.test_set()
    attrs = dataset.attribute_embeddings[:, attribute_index, :]  # (K, d)
    preds = np.argmax(v @ attrs.T, axis=1)
    k = dataset.num_classes
    joint = np.zeros((k, k))
    for y, p in zip(labels, preds):
        joint[y, p] += 1.0
    joint /= joint.sum()
    py = joint.sum(axis=1, keepdims=True)
    pp = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(joint > 0, joint / (py @ pp), 1.0)
        mi = float(np.sum(np.where(joint > 0, joint * np.log(ratio), 0.0)))
    return mi


# ---------------------------------------------------------------------------
# Bundle container
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingBundle:
    manifest: dict
    img_orig: np.ndarray          # (samples, d) float64 in memory
    img_weak: np.ndarray
    img_strong: np.ndarray
    attributes: np.ndarray        # (K, N, d) float64
    labels: np.ndarray            # (samples,) int64
    bank_bytes: bytes | None = None


def _section_bytes(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr).astype(dtype).tobytes()


def save_bundle(bundle: EmbeddingBundle, path) -> None:
    """Write a BVLB file. Deterministic: identical bundles give identical
    bytes (manifest keys sorted, sections in fixed order)."""
    m = dict(bundle.manifest)
    sections: list[tuple[str, bytes, str, list[int]]] = []
    samples = bundle.img_orig.shape[0]
    d = bundle.img_orig.shape[1]
    k, n, _ = bundle.attributes.shape
    sections.append(("IMG_ORIG", _section_bytes(bundle.img_orig, "<f4"),
                     "float32", [samples, d]))
    sections.append(("IMG_WEAK", _section_bytes(bundle.img_weak, "<f4"),
                     "float32", [samples, d]))
    sections.append(("IMG_STRONG", _section_bytes(bundle.img_strong, "<f4"),
                     "float32", [samples, d]))
    sections.append(("ATTR", _section_bytes(bundle.attributes, "<f4"),
                     "float32", [k, n, d]))
    sections.append(("LABELS", _section_bytes(bundle.labels[:, None], "<i4"),
                     "int32", [samples, 1]))
    if bundle.bank_bytes:
        sections.append(("BANK", bundle.bank_bytes, "bytes",
                         [len(bundle.bank_bytes)]))

    directory = []
    offset = 0
    for name, payload, dtype, shape in sections:
        directory.append({"name": name, "dtype": dtype, "shape": shape,
                          "offset": offset, "length": len(payload),
                          "crc32": zlib.crc32(payload)})
        offset += len(payload)
    m["sections"] = directory
    m["format_version"] = BUNDLE_VERSION
    manifest_bytes = json.dumps(m, sort_keys=True,
                                separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as f:
        f.write(BUNDLE_MAGIC)
        f.write(struct.pack("<I", BUNDLE_VERSION))
        f.write(struct.pack("<Q", len(manifest_bytes)))
        f.write(manifest_bytes)
        for _, payload, _, _ in sections:
            f.write(payload)


def load_bundle(path) -> EmbeddingBundle:
    """Read and fully validate a BVLB file.

    Rejects wrong magic/version, truncated or checksum-failing sections,
    non-unit embedding rows, and out-of-range labels, each with a precise
    diagnostic.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise DataError(f"cannot read bundle {path}: {exc}") from exc
    if len(blob) < 16 or blob[:4] != BUNDLE_MAGIC:
        raise DataError(f"not a bundle: {path}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != BUNDLE_VERSION:
        raise DataError(f"unsupported bundle version {version}")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + mlen > len(blob):
        raise DataError("corrupt manifest (truncated)")
    try:
        manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt manifest: {exc}") from exc

    payload = blob[16 + mlen:]
    arrays: dict[str, np.ndarray] = {}
    bank_bytes: bytes | None = None
    for sec in manifest.get("sections", []):
        name = sec["name"]
        start, length = int(sec["offset"]), int(sec["length"])
        if start + length > len(payload):
            raise DataError(f"corrupt section {name} (truncated)")
        raw = payload[start:start + length]
        if zlib.crc32(raw) != sec["crc32"]:
            raise DataError(f"corrupt section {name} (checksum mismatch)")
        if sec["dtype"] == "bytes":
            bank_bytes = raw if length > 0 else None
            continue
        dtype = {"float32": "<f4", "int32": "<i4"}.get(sec["dtype"])
        if dtype is None:
            raise DataError(f"corrupt section {name} (unknown dtype)")
        shape = tuple(int(s) for s in sec["shape"])
        expect = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if expect != length:
            raise DataError(f"corrupt section {name} (size mismatch)")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape)

    for required in ("IMG_ORIG", "IMG_WEAK", "IMG_STRONG", "ATTR", "LABELS"):
        if required not in arrays:
            raise DataError(f"missing section {required}")

    for name in EMBED_SECTIONS:
        rows = arrays[name].reshape(-1, arrays[name].shape[-1])
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-5)
        if bad.size:
            raise DataError(f"invalid embedding row {int(bad[0])} in "
                            f"section {name}")

    labels = arrays["LABELS"].reshape(-1).astype(np.int64)
    k = int(manifest["num_classes"])
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError("labels out of range for declared class count")
    counts = manifest["counts"]
    if int(counts["train"]) + int(counts["test"]) != labels.size:
        raise DataError("declared split counts do not match label rows")

    return EmbeddingBundle(
        manifest=manifest,
        img_orig=arrays["IMG_ORIG"].astype(np.float64),
        img_weak=arrays["IMG_WEAK"].astype(np.float64),
        img_strong=arrays["IMG_STRONG"].astype(np.float64),
        attributes=arrays["ATTR"].astype(np.float64),
        labels=labels, bank_bytes=bank_bytes)


def bundle_from_synthetic(dataset: SyntheticDataset,
                          view_epoch: int = 0) -> EmbeddingBundle:
    """Freeze a synthetic dataset (one fixed pair of augmented views) into a
    bundle. Test rows reuse the original embedding for the view sections."""
    n_train = dataset.train_raw.shape[0]
    all_idx = np.arange(n_train)
    v_orig, v_weak, v_strong = dataset.training_views(all_idx, view_epoch)
    v_test, test_labels = dataset.test_set()
    img_orig = np.concatenate([v_orig, v_test], axis=0)
    img_weak = np.concatenate([v_weak, v_test], axis=0)
    img_strong = np.concatenate([v_strong, v_test], axis=0)
    labels = np.concatenate([dataset.train_labels, test_labels])
    manifest = {
        "dataset": dataset.name,
        "embed_dim": dataset.embed_dim,
        "num_classes": dataset.num_classes,
        "attributes_per_class": dataset.attribute_embeddings.shape[1],
        "class_names": dataset.class_names(),
        "counts": {"train": int(n_train), "test": int(len(test_labels))},
        "attribute_texts": dataset.attribute_texts,
        "task": dataset.task.to_dict(),
        "encoder": dataset.encoder_cfg.to_dict(),
        "augmentation": dataset.policy.to_dict(),
    }
    return EmbeddingBundle(manifest=manifest, img_orig=img_orig,
                           img_weak=img_weak, img_strong=img_strong,
                           attributes=dataset.attribute_embeddings.copy(),
                           labels=labels)


# ---------------------------------------------------------------------------
# Bank checkpoints (BANK section payload)
# ---------------------------------------------------------------------------

def serialize_bank(bank: PromptBank) -> bytes:
    """Bit-exact float64 encoding of a bank's full state."""
    header = {
        "regime": bank.regime.value,
        "num_classes": bank.num_classes,
        "prompts_per_class": bank.prompts_per_class,
        "context_length": bank.context_length,
        "seed": bank.seed,
        "trained_epochs": bank.trained_epochs,
        "attribute_texts": bank.attribute_texts,
        "embed_dim": int(bank.attribute_embeddings.shape[2]),
        "token_dim": (None if bank.class_tokens is None
                      else int(bank.class_tokens.shape[1])),
    }
    hbytes = json.dumps(header, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    chunks = [struct.pack("<Q", len(hbytes)), hbytes]
    chunks.append(bank.attribute_embeddings.astype("<f8").tobytes())
    if bank.regime is EncoderRegime.SYNTHETIC:
        chunks.append(bank.class_tokens.astype("<f8").tobytes())
        for i in range(bank.num_classes):
            for j in range(bank.prompts_per_class):
                chunks.append(bank.prompts[i][j].context.data
                              .astype("<f8").tobytes())
    else:
        for i in range(bank.num_classes):
            for j in range(bank.prompts_per_class):
                chunks.append(bank.prompts[i][j].direct_embedding.data
                              .astype("<f8").tobytes())
    return b"".join(chunks)


def deserialize_bank(blob: bytes) -> PromptBank:
    if len(blob) < 8:
        raise DataError("corrupt checkpoint (truncated header length)")
    (hlen,) = struct.unpack("<Q", blob[:8])
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from exc
    k = int(header["num_classes"])
    n = int(header["prompts_per_class"])
    d = int(header["embed_dim"])
    m = int(header["context_length"])
    regime = EncoderRegime(header["regime"])

    pos = 8 + hlen

    def take(count: int) -> np.ndarray:
        nonlocal pos
        nbytes = count * 8
        if pos + nbytes > len(blob):
            raise DataError("corrupt checkpoint (truncated array data)")
        arr = np.frombuffer(blob[pos:pos + nbytes], dtype="<f8").copy()
        pos += nbytes
        return arr

    attrs = take(k * n * d).reshape(k, n, d)
    prompts: list[list[Prompt]] = []
    class_tokens = None
    if regime is EncoderRegime.SYNTHETIC:
        token_dim = int(header["token_dim"])
        class_tokens = take(k * token_dim).reshape(k, token_dim)
        for i in range(k):
            row = []
            for j in range(n):
                ctx = take(m * token_dim).reshape(m, token_dim)
                row.append(Prompt(context=ad.parameter(ctx),
                                  class_token=ad.constant(class_tokens[i])))
            prompts.append(row)
    else:
        for i in range(k):
            row = []
            for j in range(n):
                emb = take(d)
                row.append(Prompt(direct_embedding=ad.parameter(emb)))
            prompts.append(row)
    if pos != len(blob):
        raise DataError("corrupt checkpoint (trailing bytes)")

    return PromptBank(num_classes=k, prompts_per_class=n, context_length=m,
                      regime=regime, prompts=prompts,
                      attribute_embeddings=attrs,
                      attribute_texts=header["attribute_texts"],
                      class_tokens=class_tokens, seed=int(header["seed"]),
                      trained_epochs=int(header["trained_epochs"]))


def save_checkpoint(bank: PromptBank, path) -> None:
    """Checkpoint = a bundle whose only payload is the BANK section."""
    d = int(bank.attribute_embeddings.shape[2])
    empty = np.zeros((0, d))
    manifest = {
        "dataset": "checkpoint",
        "embed_dim": d,
        "num_classes": bank.num_classes,
        "attributes_per_class": bank.prompts_per_class,
        "class_names": [f"class-{i}" for i in range(bank.num_classes)],
        "counts": {"train": 0, "test": 0},
    }
    bundle = EmbeddingBundle(manifest=manifest, img_orig=empty,
                             img_weak=empty, img_strong=empty,
                             attributes=bank.attribute_embeddings.copy(),
                             labels=np.zeros(0, dtype=np.int64),
                             bank_bytes=serialize_bank(bank))
    save_bundle(bundle, path)


def load_checkpoint(path) -> PromptBank:
    bundle = load_bundle(path)
    if bundle.bank_bytes is None:
        raise DataError(f"bundle {path} carries no checkpoint")
    return deserialize_bank(bundle.bank_bytes)
