"""Dataset types, synthetic generation, modality-incompleteness partitioning.

Instances carry up to two region-feature vectors (pet, mri) and a class
label. Every operation here is a pure function of its inputs and a seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

PET = "pet"
MRI = "mri"
MODALITIES = (PET, MRI)

PET_ONLY = "pet_only"
MRI_ONLY = "mri_only"
MULTIMODAL = "multimodal"


@dataclass
class Instance:
    pet: np.ndarray | None
    mri: np.ndarray | None
    label: int

    def __post_init__(self):
        if self.pet is None and self.mri is None:
            raise ValueError("an instance needs at least one modality")
        for name in ("pet", "mri"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64)
            if v.ndim != 1:
                raise ValueError(f"{name} vector must be 1-D")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} vector has non-finite entries")
            setattr(self, name, v)
        self.label = int(self.label)
        if self.label < 0:
            raise ValueError("label must be nonnegative")

    def has(self, modality: str) -> bool:
        return getattr(self, modality) is not None

    def vector(self, modality: str) -> np.ndarray:
        v = getattr(self, modality)
        if v is None:
            raise ValueError(f"instance has no {modality} data")
        return v

    @property
    def kind(self) -> str:
        if self.pet is not None and self.mri is not None:
            return MULTIMODAL
        return PET_ONLY if self.pet is not None else MRI_ONLY


def num_classes(data: list[Instance]) -> int:
    return max(inst.label for inst in data) + 1


@dataclass
class SyntheticSpec:
    """Knobs of the synthetic region-feature generator.

    Class structure lives in a low-dimensional latent space; both modalities
    are affine views of the same class latent, so each modality alone carries
    class signal and the pair carries more. `coupling` sets how much of the
    per-instance noise is shared across modalities (correlation given the
    class); `noise` -> 0 collapses every class onto its mean.
    """

    class_counts: tuple[int, ...] = (297, 451, 167)
    feature_dim: int = 90
    separation: float = 2.0
    noise: float = 1.0
    coupling: float = 0.7
    latent_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.class_counts or any(c <= 0 for c in self.class_counts):
            raise ValueError("class counts must be positive")
        if self.feature_dim <= 0 or self.latent_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.latent_dim < len(self.class_counts):
            raise ValueError("latent_dim must be at least the class count")
        if self.noise < 0 or self.separation < 0:
            raise ValueError("noise and separation must be nonnegative")
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")


# Latent-unit gain applied to separation; calibrated so the default spec is
# learnable to high multimodal accuracy while single-modality zero-fill
# accuracy stays clearly lower.
_CLASS_MEAN_GAIN = 1.0 / 3.0


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))  # fix the sign convention for determinism


def generate_synthetic(spec: SyntheticSpec) -> list[Instance]:
    """Draw a fully multimodal dataset with the configured class histogram."""
    rng = np.random.default_rng(spec.seed)
    n_classes = len(spec.class_counts)
    latents = _orthonormal_columns(rng, spec.latent_dim, n_classes)
    latents *= np.sqrt(spec.latent_dim)  # pairwise class distance sqrt(2 * latent_dim)
    proj_pet = _orthonormal_columns(rng, spec.feature_dim, spec.latent_dim)
    proj_mri = _orthonormal_columns(rng, spec.feature_dim, spec.latent_dim)
    gain = spec.separation * _CLASS_MEAN_GAIN
    shared_scale = spec.coupling
    own_scale = np.sqrt(max(0.0, 1.0 - spec.coupling**2))

    instances: list[Instance] = []
    for label, count in enumerate(spec.class_counts):
        mean_pet = gain * (proj_pet @ latents[:, label])
        mean_mri = gain * (proj_mri @ latents[:, label])
        shared = rng.standard_normal((count, spec.feature_dim))
        eps_pet = rng.standard_normal((count, spec.feature_dim))
        eps_mri = rng.standard_normal((count, spec.feature_dim))
        pet = mean_pet + spec.noise * (shared_scale * shared + own_scale * eps_pet)
        mri = mean_mri + spec.noise * (shared_scale * shared + own_scale * eps_mri)
        for i in range(count):
            instances.append(Instance(pet[i], mri[i], label))
    return instances


# ---------------------------------------------------------------------------
# CSV schema: header id,label,p_0..p_{F-1},m_0..m_{F-1}; a missing modality
# leaves all of its cells empty; labels are 0-based ints.
# ---------------------------------------------------------------------------


def write_csv(data: list[Instance], path) -> None:
    if not data:
        raise ValueError("refusing to write an empty dataset")
    dim_p = _modality_dim(data, PET)
    dim_m = _modality_dim(data, MRI)
    header = (
        ["id", "label"]
        + [f"p_{i}" for i in range(dim_p)]
        + [f"m_{i}" for i in range(dim_m)]
    )
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, inst in enumerate(data):
            p = [repr(float(v)) for v in inst.pet] if inst.pet is not None else [""] * dim_p
            m = [repr(float(v)) for v in inst.mri] if inst.mri is not None else [""] * dim_m
            writer.writerow([i, inst.label] + p + m)


def load_csv(path) -> list[Instance]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        dim_p = sum(1 for h in header if h.startswith("p_"))
        dim_m = sum(1 for h in header if h.startswith("m_"))
        expected = ["id", "label"] + [f"p_{i}" for i in range(dim_p)] + [
            f"m_{i}" for i in range(dim_m)
        ]
        if header != expected:
            raise ValueError(f"{path}: unexpected header {header[:4]}...")
        data: list[Instance] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValueError(f"{path} line {lineno}: expected {len(expected)} cells")
            try:
                label = int(row[1])
                pet = _parse_block(row[2 : 2 + dim_p], lineno, "pet")
                mri = _parse_block(row[2 + dim_p :], lineno, "mri")
            except ValueError as err:
                raise ValueError(f"{path} line {lineno}: {err}") from None
            if pet is None and mri is None:
                raise ValueError(f"{path} line {lineno}: both modalities absent")
            data.append(Instance(pet, mri, label))
    if not data:
        raise ValueError(f"{path}: no data rows")
    return data


def _parse_block(cells: list[str], lineno: int, name: str) -> np.ndarray | None:
    empties = sum(1 for c in cells if c == "")
    if empties == len(cells):
        return None
    if empties:
        raise ValueError(f"{name} block is partially empty")
    return np.array([float(c) for c in cells])


def _modality_dim(data: list[Instance], modality: str) -> int:
    for inst in data:
        if inst.has(modality):
            return len(inst.vector(modality))
    return 0


# ---------------------------------------------------------------------------
# Splits and partitioning
# ---------------------------------------------------------------------------


def stratified_folds(
    data: list[Instance], folds: int, seed
) -> list[tuple[list[Instance], list[Instance]]]:
    """Label-stratified k-fold splits; fold f serves once as the test set."""
    if not data:
        raise ValueError("dataset is empty")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.default_rng(_seed_seq(seed, 0x5F01))
    by_label = _indices_by_label(data)
    for label, idx in by_label.items():
        if len(idx) < folds:
            raise ValueError(
                f"class {label} has {len(idx)} members, fewer than {folds} folds"
            )
    fold_members: list[list[int]] = [[] for _ in range(folds)]
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        rng.shuffle(idx)
        for f in range(folds):
            fold_members[f].extend(int(i) for i in idx[f::folds])
    out = []
    for f in range(folds):
        test_set = set(fold_members[f])
        train = [data[i] for i in range(len(data)) if i not in test_set]
        test = [data[i] for i in sorted(test_set)]
        out.append((train, test))
    return out


def split_train_test(
    data: list[Instance], seed, fold: int = 0, folds: int = 5, mode: str = "cv"
) -> tuple[list[Instance], list[Instance]]:
    """One cross-validation split.

    mode "cv": train on folds-1 parts, test on one (test = 1/folds).
    mode "literal": the small part trains and the rest tests.
    """
    if mode not in ("cv", "literal"):
        raise ValueError(f"unknown split mode {mode!r}")
    train, test = stratified_folds(data, folds, seed)[fold]
    if mode == "literal":
        train, test = test, train
    return train, test


def apply_test_modality_mix(test: list[Instance], seed) -> list[Instance]:
    """Make the three instance types each a third of the test set.

    floor(n/3) instances drop MRI, floor(n/3) drop PET, the remainder stays
    multimodal; assignment is label-stratified.
    """
    for inst in test:
        if inst.kind != MULTIMODAL:
            raise ValueError("the test modality mix requires multimodal instances")
    n = len(test)
    rng = np.random.default_rng(_seed_seq(seed, 0x5F02))
    by_label = _indices_by_label(test)
    labels = sorted(by_label)
    sizes = {c: len(by_label[c]) for c in labels}
    pet_only = _apportion(sizes, n // 3)
    remaining = {c: sizes[c] - pet_only[c] for c in labels}
    mri_only = _apportion(remaining, n // 3)
    out: list[Instance] = list(test)
    for c in labels:
        idx = np.array(by_label[c])
        rng.shuffle(idx)
        cut1, cut2 = pet_only[c], pet_only[c] + mri_only[c]
        for i in idx[:cut1]:
            out[i] = Instance(test[i].pet, None, test[i].label)
        for i in idx[cut1:cut2]:
            out[i] = Instance(None, test[i].mri, test[i].label)
    return out


@dataclass
class PartitionSpec:
    """Client count plus the unimodal-client and unimodal-instance shares."""

    n_clients: int
    alpha1: float = 0.0  # share of clients holding only PET data
    alpha2: float = 0.0  # share of clients holding only MRI data
    beta1: float = 0.0  # share of PET-only instances on multimodal clients
    beta2: float = 0.0  # share of MRI-only instances on multimodal clients

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("need at least one client")
        for name in ("alpha1", "alpha2", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.alpha1 + self.alpha2 > 1.0 + 1e-12:
            raise ValueError("alpha1 + alpha2 must not exceed 1")
        if self.beta1 + self.beta2 > 1.0 + 1e-12:
            raise ValueError("beta1 + beta2 must not exceed 1")


def partition_clients(
    train: list[Instance], spec: PartitionSpec, seed
) -> list[list[Instance]]:
    """Equal, label-stratified client shards with modality incompleteness.

    The first floor(alpha1*N) clients keep only PET, the next floor(alpha2*N)
    only MRI; on the remaining multimodal clients floor(beta1*n) instances
    drop MRI and floor(beta2*n) drop PET (label-stratified choices).
    """
    if not train:
        raise ValueError("training set is empty")
    n_clients = spec.n_clients
    n_pet_clients = _floor_share(spec.alpha1, n_clients)
    n_mri_clients = _floor_share(spec.alpha2, n_clients)
    if n_pet_clients + n_mri_clients > n_clients:
        raise ValueError("unimodal client counts exceed the client count")

    rng = np.random.default_rng(_seed_seq(seed, 0x5F03))
    by_label = _indices_by_label(train)
    shards: list[list[Instance]] = [[] for _ in range(n_clients)]
    cursor = 0
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        rng.shuffle(idx)
        for i in idx:
            shards[cursor % n_clients].append(train[int(i)])
            cursor += 1

    for k in range(n_pet_clients):
        shards[k] = [_drop(inst, MRI) for inst in shards[k]]
    for k in range(n_pet_clients, n_pet_clients + n_mri_clients):
        shards[k] = [_drop(inst, PET) for inst in shards[k]]
    for k in range(n_pet_clients + n_mri_clients, n_clients):
        shards[k] = _mix_instances(shards[k], spec.beta1, spec.beta2, rng)
    return shards


def _mix_instances(
    shard: list[Instance], beta1: float, beta2: float, rng: np.random.Generator
) -> list[Instance]:
    n = len(shard)
    drop_mri_total = _floor_share(beta1, n)
    drop_pet_total = _floor_share(beta2, n)
    by_label = _indices_by_label(shard)
    labels = sorted(by_label)
    sizes = {c: len(by_label[c]) for c in labels}
    drop_mri = _apportion(sizes, drop_mri_total)
    remaining = {c: sizes[c] - drop_mri[c] for c in labels}
    drop_pet = _apportion(remaining, drop_pet_total)
    out = list(shard)
    for c in labels:
        idx = np.array(by_label[c])
        rng.shuffle(idx)
        cut1, cut2 = drop_mri[c], drop_mri[c] + drop_pet[c]
        for i in idx[:cut1]:
            out[i] = _drop(shard[i], MRI)
        for i in idx[cut1:cut2]:
            out[i] = _drop(shard[i], PET)
    return out


def _drop(inst: Instance, modality: str) -> Instance:
    if modality == MRI:
        if inst.pet is None:
            raise ValueError("cannot drop mri from an instance without pet data")
        return Instance(inst.pet, None, inst.label) if inst.mri is not None else inst
    if inst.mri is None:
        raise ValueError("cannot drop pet from an instance without mri data")
    return Instance(None, inst.mri, inst.label) if inst.pet is not None else inst


def _apportion(sizes: dict[int, int], total: int) -> dict[int, int]:
    """Largest-remainder allocation of `total` slots proportional to sizes.

    Integer arithmetic throughout, so the allocation is exact and stable.
    """
    pool = sum(sizes.values())
    if total > pool:
        raise ValueError("cannot allocate more slots than available items")
    if pool == 0 or total == 0:
        return {c: 0 for c in sizes}
    alloc = {c: (sizes[c] * total) // pool for c in sizes}
    rem = {c: (sizes[c] * total) % pool for c in sizes}
    leftover = total - sum(alloc.values())
    order = sorted(sizes, key=lambda c: (-rem[c], c))
    for c in order[:leftover]:
        alloc[c] += 1
    return alloc


def _floor_share(fraction: float, n: int) -> int:
    """floor(fraction * n), robust to float noise like 0.3 * 10 = 2.9999..."""
    return int(math.floor(fraction * n + 1e-9))


def _indices_by_label(data: list[Instance]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i, inst in enumerate(data):
        out.setdefault(inst.label, []).append(i)
    return out


def _seed_seq(seed, stream: int):
    """Build a SeedSequence-friendly entropy tuple from an int or tuple seed."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed) + (stream,)
    return (int(seed), stream)
