"""Per-round cluster-center pools.

Each client clusters its own embeddings per (modality, label) and uploads
only centers and integer sizes; the server concatenates them in ascending
client order. Pools are rebuilt from scratch every round; raw embeddings
never leave a client.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import MODALITIES, Instance
from .finch import finch_partition
from .model import MultimodalModel, encode_batch


@dataclass
class LocalClusters:
    """A client's centers and sizes, keyed by (modality, label).

    Pairs the client has no data for are simply absent.
    """

    entries: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.entries


@dataclass
class PoolEntry:
    centers: np.ndarray  # [K, d]
    sizes: np.ndarray  # [K] ints
    client_ids: np.ndarray  # [K] contributing client per center


@dataclass
class ClusterPool:
    entries: dict[tuple[str, int], PoolEntry]
    n_classes: int

    def get(self, modality: str, label: int) -> PoolEntry | None:
        return self.entries.get((modality, label))

    def centers_with_labels(self, modality: str) -> tuple[np.ndarray, np.ndarray]:
        """All centers for one modality, label-major, pool order within labels."""
        blocks, labels = [], []
        for label in range(self.n_classes):
            entry = self.entries.get((modality, label))
            if entry is not None and len(entry.sizes):
                blocks.append(entry.centers)
                labels.append(np.full(len(entry.sizes), label))
        if not blocks:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        return np.concatenate(blocks, axis=0), np.concatenate(labels).astype(np.int64)

    def total_instances(self, modality: str, label: int) -> int:
        entry = self.entries.get((modality, label))
        return int(entry.sizes.sum()) if entry is not None else 0


def compute_local_clusters(
    model: MultimodalModel,
    dataset: list[Instance],
    n_classes: int,
    level: int = 0,
) -> LocalClusters:
    """Cluster the client's embeddings for every (modality, label) it holds.

    Embeddings come from the model the client just received for this round.
    """
    clusters = LocalClusters()
    for modality in MODALITIES:
        holders = [inst for inst in dataset if inst.has(modality)]
        if not holders:
            continue
        x = np.stack([inst.vector(modality) for inst in holders])
        z, _ = encode_batch(model, modality, x)
        labels = np.array([inst.label for inst in holders])
        for label in range(n_classes):
            members = z[labels == label]
            if len(members) == 0:
                continue
            result = finch_partition(members, level=level)
            clusters.entries[(modality, label)] = (result.centers, result.sizes)
    return clusters


def assemble_global_pool(local_clusters: list[LocalClusters], n_classes: int) -> ClusterPool:
    """Concatenate every client's centers per (modality, label), client-ordered."""
    entries: dict[tuple[str, int], PoolEntry] = {}
    dims: dict[str, int] = {}
    for modality in MODALITIES:
        for label in range(n_classes):
            centers_parts, sizes_parts, owner_parts = [], [], []
            for client_id, local in enumerate(local_clusters):
                item = local.entries.get((modality, label))
                if item is None:
                    continue
                centers, sizes = item
                if centers.ndim != 2 or len(centers) != len(sizes):
                    raise ValueError(f"client {client_id}: malformed cluster upload")
                d = centers.shape[1]
                if dims.setdefault(modality, d) != d:
                    raise ValueError(
                        f"client {client_id}: center dimension {d} conflicts with "
                        f"{dims[modality]} for modality {modality}"
                    )
                centers_parts.append(centers)
                sizes_parts.append(np.asarray(sizes, dtype=np.int64))
                owner_parts.append(np.full(len(sizes), client_id, dtype=np.int64))
            if centers_parts:
                entries[(modality, label)] = PoolEntry(
                    centers=np.concatenate(centers_parts, axis=0),
                    sizes=np.concatenate(sizes_parts),
                    client_ids=np.concatenate(owner_parts),
                )
    return ClusterPool(entries, n_classes)
