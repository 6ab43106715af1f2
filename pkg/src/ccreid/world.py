"""Synthetic person world: latent-factor samples and clothing-swap synthesis.

Every sample is a raw vector built from three parts: a per-identity latent
pushed through a fixed mixing map, a per-(identity, clothing) latent pushed
through a second map, and additive noise.  Because the generator knows the
latents, it can replace the clothing part of any original sample exactly,
which stands in for an image-space clothing-transfer model.

Datasets persist to a small self-describing binary format.  The header
carries the generating config and seed, so a reader can rebuild the latent
maps deterministically; records round-trip bit for bit.
"""

import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DatasetFormatError,
    EmptyTemplateBankError,
    InvalidConfigError,
    SyntheticInputError,
)

SPLIT_TRAIN = 0
SPLIT_QUERY = 1
SPLIT_GALLERY = 2
SPLIT_NAMES = {SPLIT_TRAIN: "train", SPLIT_QUERY: "query", SPLIT_GALLERY: "gallery"}

_MAGIC = b"CCRD"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIIqdddQ")
_RECORD_FIXED = struct.Struct("<iiiBBi")


@dataclass(frozen=True)
class WorldConfig:
    """Shape and scale of the generated world."""

    num_identities: int
    clothes_per_identity: int
    samples_per_group: int
    dim: int
    num_cameras: int = 3
    identity_scale: float = 1.0
    clothing_scale: float = 0.5
    noise_scale: float = 0.1
    seed: int = 0

    def validate(self):
        for name in ("num_identities", "clothes_per_identity", "samples_per_group",
                     "dim", "num_cameras"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("identity_scale", "clothing_scale", "noise_scale"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0.0:
                raise InvalidConfigError(f"{name} must be a finite non-negative float")
        if not (self.identity_scale > self.clothing_scale >= self.noise_scale):
            warnings.warn(
                "expected identity_scale > clothing_scale >= noise_scale; "
                "identity structure may not dominate",
                stacklevel=2,
            )

    @property
    def num_samples(self):
        return self.num_identities * self.clothes_per_identity * self.samples_per_group


@dataclass
class Sample:
    """One observation: a raw vector plus its generating metadata.

    For synthetic samples, clothing_id still names the source group the
    sample was derived from; the clothing content is the template named by
    template_id (-1 for originals).
    """

    raw: np.ndarray
    identity_id: int
    clothing_id: int
    camera_id: int
    is_synthetic: bool = False
    template_id: int = -1


@dataclass(frozen=True)
class StyleTemplate:
    """A clothing style latent used to synthesize new outfits."""

    template_id: int
    style_vector: np.ndarray


@dataclass
class World:
    """A generated dataset together with its latent generating state."""

    config: WorldConfig
    identity_mix: np.ndarray        # (dim, dim) map for identity latents
    clothing_mix: np.ndarray        # (dim, dim) map for clothing latents
    identity_latents: np.ndarray    # (num_identities, dim)
    clothing_latents: np.ndarray    # (num_identities, clothes_per_identity, dim)
    samples: list = field(default_factory=list)
    split: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    def indices_of_split(self, which):
        return np.nonzero(self.split == which)[0]

    @property
    def train_indices(self):
        return self.indices_of_split(SPLIT_TRAIN)

    @property
    def query_indices(self):
        return self.indices_of_split(SPLIT_QUERY)

    @property
    def gallery_indices(self):
        return self.indices_of_split(SPLIT_GALLERY)


def _random_rotation(rng, dim):
    # Haar-distributed orthonormal map: norm- and angle-preserving, so the
    # configured scales translate directly into feature-space geometry.
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _draw_latents(config, rng):
    dim = config.dim
    identity_mix = _random_rotation(rng, dim)
    clothing_mix = _random_rotation(rng, dim)
    identity_latents = rng.standard_normal((config.num_identities, dim))
    clothing_latents = rng.standard_normal(
        (config.num_identities, config.clothes_per_identity, dim)
    )
    return identity_mix, clothing_mix, identity_latents, clothing_latents


def generate_world(config):
    """Build a full world from a config: latents, samples, and the split.

    Deterministic: the same config (seed included) produces bit-identical
    output.  Each (identity, clothing) group lands in exactly one of
    train / query / gallery; with at least three groups per identity one
    group goes to query, one to gallery, and the rest to train.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    identity_mix, clothing_mix, identity_latents, clothing_latents = _draw_latents(
        config, rng
    )

    noise = rng.standard_normal((config.num_samples, config.dim)) * config.noise_scale
    samples = []
    row = 0
    for identity in range(config.num_identities):
        identity_part = config.identity_scale * (identity_mix @ identity_latents[identity])
        for clothing in range(config.clothes_per_identity):
            clothing_part = config.clothing_scale * (
                clothing_mix @ clothing_latents[identity, clothing]
            )
            base = identity_part + clothing_part
            for shot in range(config.samples_per_group):
                samples.append(
                    Sample(
                        raw=base + noise[row],
                        identity_id=identity,
                        clothing_id=clothing,
                        camera_id=shot % config.num_cameras,
                    )
                )
                row += 1

    split = np.zeros(config.num_samples, dtype=np.uint8)
    group_size = config.samples_per_group
    clothes = config.clothes_per_identity
    if clothes < 3:
        warnings.warn(
            "fewer than 3 clothing groups per identity: the train split "
            "will be empty" if clothes == 2 else
            "single clothing group per identity: no query/gallery split",
            stacklevel=2,
        )
    for identity in range(config.num_identities):
        order = rng.permutation(clothes)
        base = identity * clothes * group_size
        if clothes >= 2:
            query_group, gallery_group = int(order[0]), int(order[1])
            start = base + query_group * group_size
            split[start:start + group_size] = SPLIT_QUERY
            start = base + gallery_group * group_size
            split[start:start + group_size] = SPLIT_GALLERY

    return World(
        config=config,
        identity_mix=identity_mix,
        clothing_mix=clothing_mix,
        identity_latents=identity_latents,
        clothing_latents=clothing_latents,
        samples=samples,
        split=split,
    )


def make_style_templates(world, count, rng):
    """Draw a bank of fresh clothing-style latents.

    Styles come from the same distribution as dataset clothing latents but
    are drawn independently, so they never coincide with a dataset outfit.
    """
    if count < 1:
        raise InvalidConfigError(f"template count must be >= 1, got {count}")
    return [
        StyleTemplate(template_id=i, style_vector=rng.standard_normal(world.config.dim))
        for i in range(count)
    ]


def generate_sync(world, sample, templates):
    """Clothing-swap a real sample against every template in the bank.

    The output keeps the sample's identity part and noise untouched and
    replaces the clothing part with the template's style pushed through the
    clothing mixing map.  Deterministic given (sample, templates).
    """
    if sample.is_synthetic:
        raise SyntheticInputError("refusing to re-synthesize a synthetic sample")
    if not templates:
        raise EmptyTemplateBankError("template bank is empty")
    config = world.config
    own_latent = world.clothing_latents[sample.identity_id, sample.clothing_id]
    outputs = []
    for template in templates:
        shift = config.clothing_scale * (
            world.clothing_mix @ (template.style_vector - own_latent)
        )
        outputs.append(
            Sample(
                raw=sample.raw + shift,
                identity_id=sample.identity_id,
                clothing_id=sample.clothing_id,
                camera_id=sample.camera_id,
                is_synthetic=True,
                template_id=template.template_id,
            )
        )
    return outputs


def write_dataset(world, path):
    """Write the world's samples to the binary dataset format."""
    config = world.config
    header = _HEADER.pack(
        _MAGIC,
        _FORMAT_VERSION,
        config.dim,
        config.num_identities,
        config.clothes_per_identity,
        config.samples_per_group,
        config.num_cameras,
        config.seed,
        config.identity_scale,
        config.clothing_scale,
        config.noise_scale,
        len(world.samples),
    )
    with open(path, "wb") as handle:
        handle.write(header)
        for index, sample in enumerate(world.samples):
            raw = np.ascontiguousarray(sample.raw, dtype="<f8")
            if raw.shape != (config.dim,):
                raise DatasetFormatError(
                    f"record {index} has shape {raw.shape}, expected ({config.dim},)"
                )
            handle.write(
                _RECORD_FIXED.pack(
                    sample.identity_id,
                    sample.clothing_id,
                    sample.camera_id,
                    1 if sample.is_synthetic else 0,
                    int(world.split[index]) if index < len(world.split) else SPLIT_TRAIN,
                    sample.template_id,
                )
            )
            handle.write(raw.tobytes())


def read_dataset(path):
    """Read a dataset file back into a World.

    Latent state is regenerated from the header's config and seed; sample
    records are taken verbatim from the file.
    """
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < _HEADER.size:
        raise DatasetFormatError("file too short for a dataset header")
    (magic, version, dim, num_identities, clothes, per_group, cameras,
     seed, identity_scale, clothing_scale, noise_scale, num_records) = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != _FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    config = WorldConfig(
        num_identities=num_identities,
        clothes_per_identity=clothes,
        samples_per_group=per_group,
        dim=dim,
        num_cameras=cameras,
        identity_scale=identity_scale,
        clothing_scale=clothing_scale,
        noise_scale=noise_scale,
        seed=seed,
    )
    config.validate()
    rng = np.random.default_rng(config.seed)
    identity_mix, clothing_mix, identity_latents, clothing_latents = _draw_latents(
        config, rng
    )

    record_size = _RECORD_FIXED.size + 8 * dim
    expected = _HEADER.size + record_size * num_records
    if len(blob) != expected:
        raise DatasetFormatError(
            f"expected {expected} bytes for {num_records} records, got {len(blob)}"
        )
    samples = []
    split = np.zeros(num_records, dtype=np.uint8)
    offset = _HEADER.size
    for index in range(num_records):
        identity, clothing, camera, synthetic, split_code, template = (
            _RECORD_FIXED.unpack_from(blob, offset)
        )
        offset += _RECORD_FIXED.size
        raw = np.frombuffer(blob[offset:offset + 8 * dim], dtype="<f8").astype(
            np.float64, copy=True
        )
        offset += 8 * dim
        if split_code not in SPLIT_NAMES:
            raise DatasetFormatError(f"record {index} has bad split code {split_code}")
        samples.append(
            Sample(
                raw=raw,
                identity_id=identity,
                clothing_id=clothing,
                camera_id=camera,
                is_synthetic=bool(synthetic),
                template_id=template,
            )
        )
        split[index] = split_code
    return World(
        config=config,
        identity_mix=identity_mix,
        clothing_mix=clothing_mix,
        identity_latents=identity_latents,
        clothing_latents=clothing_latents,
        samples=samples,
        split=split,
    )


def export_csv(world, path):
    """Debug export: one row per sample with metadata and raw coordinates."""
    dim = world.config.dim
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["identity_id", "clothing_id", "camera_id", "is_synthetic", "split"]
            + [f"v{i}" for i in range(dim)]
        )
        for index, sample in enumerate(world.samples):
            split_code = int(world.split[index]) if index < len(world.split) else SPLIT_TRAIN
            writer.writerow(
                [
                    sample.identity_id,
                    sample.clothing_id,
                    sample.camera_id,
                    int(sample.is_synthetic),
                    SPLIT_NAMES[split_code],
                ]
                + [repr(float(v)) for v in sample.raw]
            )
