"""Training objectives with exact gradients.

Components: softmax cross-entropy over zero-fill predictions, a supervised
contrastive alignment term over embeddings augmented with global cluster
centers, and a completion term that substitutes size-weighted cluster
centers for a missing modality. Appended centers are constants: they shape
the loss but never receive gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .clusterpool import ClusterPool
from .data import MRI, PET, Instance
from .model import MultimodalModel, encode_batch, model_arrays
from .numkit import mlp_arrays, mlp_backward, mlp_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # contrastive alignment weight
    lambda2: float = 1.0  # modality completion weight
    tau: float = 0.1  # contrastive temperature

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be strictly positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class AugmentedBatch:
    """Local embeddings with global centers appended as non-trainable rows."""

    embeddings: np.ndarray  # [(b + G), d]
    labels: np.ndarray  # [(b + G)]
    trainable: np.ndarray  # bool mask, True for the b local rows


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean negative log-likelihood and its gradient wrt the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != len(logits):
        raise ValueError("logits must be [batch, classes] aligned with labels")
    if len(logits) == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    losses, grads = _cross_entropy_rows(logits, labels)
    return float(losses.mean()), grads / len(logits)


def _cross_entropy_rows(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss values and per-row (unreduced) gradients."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(logits))
    losses = logsumexp - shifted[rows, labels]
    grads = softmax(logits)
    grads[rows, labels] -= 1.0
    return losses, grads


def build_augmented_batch(
    embeddings: np.ndarray, labels: np.ndarray, pool: ClusterPool | None, modality: str
) -> AugmentedBatch:
    """Append every global center for `modality` across labels, label-major."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b = len(embeddings)
    if pool is None:
        return AugmentedBatch(embeddings, labels, np.ones(b, dtype=bool))
    centers, center_labels = pool.centers_with_labels(modality)
    if len(centers) == 0:
        return AugmentedBatch(embeddings, labels, np.ones(b, dtype=bool))
    if b and centers.shape[1] != embeddings.shape[1]:
        raise ValueError("pool center dimension does not match the embeddings")
    return AugmentedBatch(
        embeddings=np.concatenate([embeddings, centers], axis=0) if b else centers,
        labels=np.concatenate([labels, center_labels]),
        trainable=np.concatenate([np.ones(b, dtype=bool), np.zeros(len(centers), dtype=bool)]),
    )


def supervised_contrastive(batch: AugmentedBatch, tau: float) -> tuple[float, np.ndarray]:
    """Temperature-scaled cosine supervised contrastive loss.

    Anchors are rows with at least one same-label partner; each anchor's
    positives are averaged, and the loss is the mean over anchors. Returns
    the loss and a gradient of the batch's shape whose non-trainable rows
    are exactly zero.
    """
    if tau <= 0:
        raise ValueError("tau must be strictly positive")
    z = np.asarray(batch.embeddings, dtype=np.float64)
    n = len(z)
    grad = np.zeros_like(z)
    if n < 2:
        return 0.0, grad

    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    u = z / safe[:, None]  # zero rows stay zero: cos(0, .) = 0 by convention
    sim = u @ u.T
    s = sim / tau

    same = batch.labels[:, None] == batch.labels[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    positives = same & off_diag
    n_pos = positives.sum(axis=1)
    anchors = n_pos > 0
    n_anchors = int(anchors.sum())
    if n_anchors == 0:
        return 0.0, grad

    # Row-stable log-sum-exp over a != i.
    s_masked = np.where(off_diag, s, -np.inf)
    row_max = s_masked.max(axis=1)
    exp_shift = np.exp(s_masked - row_max[:, None])
    denom = exp_shift.sum(axis=1)
    log_denom = row_max + np.log(denom)

    pos_mean_s = np.where(anchors, (s * positives).sum(axis=1) / np.maximum(n_pos, 1), 0.0)
    loss = float((log_denom[anchors] - pos_mean_s[anchors]).sum() / n_anchors)

    # d loss / d s[i, j] for anchor rows: softmax weight minus positive share.
    w = exp_shift / denom[:, None]
    g_s = np.where(
        anchors[:, None],
        (w - positives / np.maximum(n_pos, 1)[:, None]) / n_anchors,
        0.0,
    )
    g_s[~off_diag] = 0.0

    # Through sim = u_i . u_j / tau, then through the row normalization.
    g_u = (g_s + g_s.T) @ u / tau
    radial = (g_u * u).sum(axis=1, keepdims=True)
    g_z = (g_u - radial * u) / safe[:, None]
    g_z[norms == 0.0] = 0.0
    g_z[~batch.trainable] = 0.0
    return loss, g_z


def contrastive_combined(
    z_pet: np.ndarray,
    y_pet: np.ndarray,
    z_mri: np.ndarray,
    y_mri: np.ndarray,
    pool: ClusterPool | None,
    tau: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Size-weighted mean of the two per-modality contrastive losses.

    A modality with no local embeddings simply drops out of the average.
    Returns (loss, grad wrt z_pet, grad wrt z_mri); gradients carry the
    combination weights.
    """
    b_pet, b_mri = len(z_pet), len(z_mri)
    if b_pet == 0 and b_mri == 0:
        raise ValueError("no embeddings in either modality")
    total = b_pet + b_mri
    loss = 0.0
    g_pet = np.zeros_like(np.asarray(z_pet, dtype=np.float64))
    g_mri = np.zeros_like(np.asarray(z_mri, dtype=np.float64))
    if b_pet:
        batch = build_augmented_batch(z_pet, y_pet, pool, PET)
        part, grad = supervised_contrastive(batch, tau)
        loss += b_pet * part / total
        g_pet = (b_pet / total) * grad[:b_pet]
    if b_mri:
        batch = build_augmented_batch(z_mri, y_mri, pool, MRI)
        part, grad = supervised_contrastive(batch, tau)
        loss += b_mri * part / total
        g_mri = (b_mri / total) * grad[:b_mri]
    return loss, g_pet, g_mri


def modality_completion(
    model: MultimodalModel, instance: Instance, pool: ClusterPool
) -> tuple[float, list[np.ndarray]]:
    """Size-weighted cross-entropy over proxy completions for one instance.

    The missing modality's slot is filled by each global center of that
    modality at the instance's own label; per-center losses are averaged
    with cluster-size weights. Gradients flow through the available encoder
    and the classifier; centers are constants. Returns zero loss and zero
    gradients when the pool has no centers for the needed (modality, label).
    """
    kind = instance.kind
    if kind == "multimodal":
        raise ValueError("completion loss is defined for single-modality instances")
    available = PET if kind == "pet_only" else MRI
    missing = MRI if available == PET else PET
    entry = pool.get(missing, instance.label)
    grads = [np.zeros_like(a) for a in model_arrays(model)]
    if entry is None or len(entry.sizes) == 0:
        log.warning(
            "no %s centers for label %d; completion term skipped", missing, instance.label
        )
        return 0.0, grads

    x = instance.vector(available)[None, :]
    z, enc_cache = encode_batch(model, available, x)
    loss, d_z, clf_grads = _completion_group(
        model, z, np.array([instance.label]), available, entry.centers, entry.sizes
    )
    enc = model.pet_encoder if available == PET else model.mri_encoder
    enc_grads, _ = mlp_backward(enc, enc_cache, d_z)

    offset_pet = 2 * model.pet_encoder.n_layers
    offset_clf = offset_pet + 2 * model.mri_encoder.n_layers
    enc_offset = 0 if available == PET else offset_pet
    for k, g in enumerate(enc_grads):
        grads[enc_offset + k] = g
    for k, g in enumerate(clf_grads):
        grads[offset_clf + k] = g
    return loss, grads


def _completion_group(
    model: MultimodalModel,
    z: np.ndarray,
    labels: np.ndarray,
    available: str,
    centers: np.ndarray,
    sizes: np.ndarray,
) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """Mean completion loss for instances sharing (available modality, label).

    z is [m, d] embeddings of the available modality; every instance is
    paired with all K centers. Returns (sum of per-instance losses, gradient
    wrt z of that sum, classifier gradients of that sum).
    """
    m, d = z.shape
    k = len(sizes)
    weights = sizes / sizes.sum()  # uniform scaling of sizes cancels here
    tiled_z = np.repeat(z, k, axis=0)
    tiled_c = np.tile(centers, (m, 1))
    if available == PET:
        fused = np.concatenate([tiled_z, tiled_c], axis=1)
    else:
        fused = np.concatenate([tiled_c, tiled_z], axis=1)
    logits, cache = mlp_forward(model.classifier, fused)
    row_labels = np.repeat(labels, k)
    losses, row_grads = _cross_entropy_rows(logits, row_labels)
    row_weights = np.tile(weights, m)
    total = float((row_weights * losses).sum())
    clf_grads, d_fused = mlp_backward(model.classifier, cache, row_grads * row_weights[:, None])
    slot = slice(0, d) if available == PET else slice(d, 2 * d)
    d_z = d_fused[:, slot].reshape(m, k, d).sum(axis=1)
    return total, d_z, clf_grads


def overall_loss(
    model: MultimodalModel,
    instances: list[Instance],
    pool: ClusterPool | None,
    weights: LossWeights,
    use_ctr: bool = True,
    use_mc: bool = True,
) -> tuple[float, list[np.ndarray], dict[str, float]]:
    """Full local objective: cross-entropy + alignment + completion.

    Returns (loss, gradients aligned with model_arrays(model), per-component
    values). Terms with a zero weight or a disabled flag are skipped
    entirely, so a run with both extras off computes exactly the plain
    cross-entropy objective.
    """
    if not instances:
        raise ValueError("empty batch")
    n = len(instances)
    d = model.embed_dim
    labels = np.array([inst.label for inst in instances], dtype=np.int64)
    idx_pet = np.array([i for i, inst in enumerate(instances) if inst.has(PET)], dtype=np.int64)
    idx_mri = np.array([i for i, inst in enumerate(instances) if inst.has(MRI)], dtype=np.int64)

    z_pet = cache_pet = z_mri = cache_mri = None
    if len(idx_pet):
        x = np.stack([instances[i].vector(PET) for i in idx_pet])
        z_pet, cache_pet = encode_batch(model, PET, x)
    if len(idx_mri):
        x = np.stack([instances[i].vector(MRI) for i in idx_mri])
        z_mri, cache_mri = encode_batch(model, MRI, x)

    fused = np.zeros((n, 2 * d))
    if z_pet is not None:
        fused[idx_pet, :d] = z_pet
    if z_mri is not None:
        fused[idx_mri, d:] = z_mri
    logits, clf_cache = mlp_forward(model.classifier, fused)
    ce, d_logits = cross_entropy(logits, labels)
    clf_grads, d_fused = mlp_backward(model.classifier, clf_cache, d_logits)

    d_zpet = d_fused[idx_pet, :d] if z_pet is not None else None
    d_zmri = d_fused[idx_mri, d:] if z_mri is not None else None
    components = {"ce": ce, "ctr": 0.0, "mc": 0.0}
    loss = ce

    if use_ctr and weights.lambda1 > 0.0:
        ctr, g_pet, g_mri = contrastive_combined(
            z_pet if z_pet is not None else np.zeros((0, d)),
            labels[idx_pet],
            z_mri if z_mri is not None else np.zeros((0, d)),
            labels[idx_mri],
            pool,
            weights.tau,
        )
        components["ctr"] = ctr
        loss += weights.lambda1 * ctr
        if d_zpet is not None:
            d_zpet = d_zpet + weights.lambda1 * g_pet
        if d_zmri is not None:
            d_zmri = d_zmri + weights.lambda1 * g_mri

    if use_mc and weights.lambda2 > 0.0:
        mc, d_zpet, d_zmri = _completion_term(
            model, instances, pool, idx_pet, idx_mri, z_pet, z_mri, d_zpet, d_zmri,
            clf_grads, weights.lambda2,
        )
        components["mc"] = mc
        loss += weights.lambda2 * mc

    grads: list[np.ndarray] = []
    for modality, z, cache, upstream in (
        (PET, z_pet, cache_pet, d_zpet),
        (MRI, z_mri, cache_mri, d_zmri),
    ):
        enc = model.pet_encoder if modality == PET else model.mri_encoder
        if z is None:
            grads.extend(np.zeros_like(a) for a in mlp_arrays(enc))
        else:
            enc_grads, _ = mlp_backward(enc, cache, upstream)
            grads.extend(enc_grads)
    grads.extend(clf_grads)
    return loss, grads, components


def _completion_term(
    model, instances, pool, idx_pet, idx_mri, z_pet, z_mri, d_zpet, d_zmri, clf_grads, lam2
):
    """Accumulate the completion term over single-modality instances.

    Instances without pool coverage for their missing (modality, label) are
    skipped and the mean renormalizes over the covered ones. Gradients are
    added in place into d_z* and clf_grads at weight lam2.
    """
    pet_row = {int(i): r for r, i in enumerate(idx_pet)}
    mri_row = {int(i): r for r, i in enumerate(idx_mri)}
    groups: dict[tuple[str, int], list[int]] = {}
    n_single = 0
    for i, inst in enumerate(instances):
        kind = inst.kind
        if kind == "multimodal":
            continue
        n_single += 1
        available = PET if kind == "pet_only" else MRI
        groups.setdefault((available, inst.label), []).append(i)
    if n_single == 0:
        return 0.0, d_zpet, d_zmri

    covered: list[tuple[str, int, list[int]]] = []
    n_covered = 0
    for (available, label), members in sorted(groups.items()):
        missing = MRI if available == PET else PET
        entry = pool.get(missing, label) if pool is not None else None
        if entry is None or len(entry.sizes) == 0:
            log.warning(
                "completion term skipped for %d instance(s): no %s centers for label %d",
                len(members), missing, label,
            )
            continue
        covered.append((available, label, members))
        n_covered += len(members)
    if n_covered == 0:
        return 0.0, d_zpet, d_zmri

    mc_total = 0.0
    for available, label, members in covered:
        entry = pool.get(MRI if available == PET else PET, label)
        rows = [pet_row[i] if available == PET else mri_row[i] for i in members]
        z = (z_pet if available == PET else z_mri)[rows]
        part, d_z, part_clf = _completion_group(
            model, z, np.full(len(rows), label), available, entry.centers, entry.sizes
        )
        mc_total += part
        scale = lam2 / n_covered
        target = d_zpet if available == PET else d_zmri
        target[rows] += scale * d_z
        for k, g in enumerate(part_clf):
            clf_grads[k] += scale * g
    return mc_total / n_covered, d_zpet, d_zmri
