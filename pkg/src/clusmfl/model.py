"""Two modality encoders plus a fusion classifier with zero-fill inference.

The classifier always consumes [pet_embedding, mri_embedding] in that slot
order; a missing modality contributes a zero block (or a proxy center when
one is supplied).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MRI, PET, Instance
from .numkit import MlpCache, MlpParams, init_mlp, mlp_arrays, mlp_forward, mlp_from_arrays

CHECKPOINT_VERSION = 1


@dataclass
class MultimodalModel:
    pet_encoder: MlpParams
    mri_encoder: MlpParams
    classifier: MlpParams
    embed_dim: int

    @property
    def n_classes(self) -> int:
        return self.classifier.out_dim

    def copy(self) -> "MultimodalModel":
        return MultimodalModel(
            self.pet_encoder.copy(),
            self.mri_encoder.copy(),
            self.classifier.copy(),
            self.embed_dim,
        )


def init_model(
    input_dim: int,
    n_classes: int,
    embed_dim: int = 32,
    enc_hidden=(64,),
    clf_hidden=(32,),
    seed=0,
) -> MultimodalModel:
    rng = np.random.default_rng(seed)
    enc_dims = [input_dim, *enc_hidden, embed_dim]
    clf_dims = [2 * embed_dim, *clf_hidden, n_classes]
    return MultimodalModel(
        pet_encoder=init_mlp(enc_dims, rng),
        mri_encoder=init_mlp(enc_dims, rng),
        classifier=init_mlp(clf_dims, rng),
        embed_dim=embed_dim,
    )


def encoder_for(model: MultimodalModel, modality: str) -> MlpParams:
    if modality == PET:
        return model.pet_encoder
    if modality == MRI:
        return model.mri_encoder
    raise ValueError(f"unknown modality {modality!r}")


def encode_batch(
    model: MultimodalModel, modality: str, x: np.ndarray
) -> tuple[np.ndarray, MlpCache]:
    return mlp_forward(encoder_for(model, modality), x)


def encode(model: MultimodalModel, modality: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("encode expects a single 1-D feature vector")
    z, _ = encode_batch(model, modality, x[None, :])
    return z[0]


def fuse(pet_embedding: np.ndarray | None, mri_embedding: np.ndarray | None, embed_dim: int) -> np.ndarray:
    """Concatenate [pet, mri] embeddings, zero-filling an absent slot."""
    pet = np.zeros(embed_dim) if pet_embedding is None else np.asarray(pet_embedding, dtype=np.float64)
    mri = np.zeros(embed_dim) if mri_embedding is None else np.asarray(mri_embedding, dtype=np.float64)
    if pet.shape != (embed_dim,) or mri.shape != (embed_dim,):
        raise ValueError("embedding slot dimensions do not match the model")
    return np.concatenate([pet, mri])


def zero_fill_logits(model: MultimodalModel, instances: list[Instance]) -> np.ndarray:
    """Batched logits with zero-filled slots for missing modalities."""
    if not instances:
        raise ValueError("no instances to score")
    n = len(instances)
    fused = np.zeros((n, 2 * model.embed_dim))
    idx_pet = [i for i, inst in enumerate(instances) if inst.has(PET)]
    idx_mri = [i for i, inst in enumerate(instances) if inst.has(MRI)]
    if idx_pet:
        x = np.stack([instances[i].vector(PET) for i in idx_pet])
        fused[idx_pet, : model.embed_dim] = encode_batch(model, PET, x)[0]
    if idx_mri:
        x = np.stack([instances[i].vector(MRI) for i in idx_mri])
        fused[idx_mri, model.embed_dim :] = encode_batch(model, MRI, x)[0]
    logits, _ = mlp_forward(model.classifier, fused)
    return logits


def predict(model: MultimodalModel, instance: Instance) -> np.ndarray:
    """Logits for one instance, zero-filling whichever modality is absent."""
    return zero_fill_logits(model, [instance])[0]


def predict_with_proxy(
    model: MultimodalModel,
    available_embedding: np.ndarray,
    available_modality: str,
    proxy_center: np.ndarray,
) -> np.ndarray:
    """Logits with the missing modality's slot filled by a proxy center."""
    proxy = np.asarray(proxy_center, dtype=np.float64)
    if proxy.shape != (model.embed_dim,):
        raise ValueError("proxy center dimension does not match the model")
    if available_modality == PET:
        fused = fuse(available_embedding, proxy, model.embed_dim)
    elif available_modality == MRI:
        fused = fuse(proxy, available_embedding, model.embed_dim)
    else:
        raise ValueError(f"unknown modality {available_modality!r}")
    logits, _ = mlp_forward(model.classifier, fused[None, :])
    return logits[0]


def model_arrays(model: MultimodalModel) -> list[np.ndarray]:
    """All parameters as one flat list: pet encoder, mri encoder, classifier."""
    return (
        mlp_arrays(model.pet_encoder)
        + mlp_arrays(model.mri_encoder)
        + mlp_arrays(model.classifier)
    )


def with_arrays(model: MultimodalModel, arrays) -> MultimodalModel:
    arrays = list(arrays)
    n_pet = 2 * model.pet_encoder.n_layers
    n_mri = 2 * model.mri_encoder.n_layers
    return MultimodalModel(
        pet_encoder=mlp_from_arrays(model.pet_encoder, arrays[:n_pet]),
        mri_encoder=mlp_from_arrays(model.mri_encoder, arrays[n_pet : n_pet + n_mri]),
        classifier=mlp_from_arrays(model.classifier, arrays[n_pet + n_mri :]),
        embed_dim=model.embed_dim,
    )


def save_checkpoint(model: MultimodalModel, path) -> None:
    """Versioned flat record of layer shapes, activations and weights."""
    payload: dict[str, np.ndarray] = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "embed_dim": np.array(model.embed_dim),
    }
    for name, mlp in _named_mlps(model):
        payload[f"{name}/n_layers"] = np.array(mlp.n_layers)
        payload[f"{name}/activations"] = np.array(mlp.activations)
        for k in range(mlp.n_layers):
            payload[f"{name}/w{k}"] = mlp.weights[k]
            payload[f"{name}/b{k}"] = mlp.biases[k]
    np.savez(path, **payload)


def load_checkpoint(path) -> MultimodalModel:
    with np.load(path, allow_pickle=False) as record:
        version = int(record["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        parts = {}
        for name in ("pet_encoder", "mri_encoder", "classifier"):
            n_layers = int(record[f"{name}/n_layers"])
            acts = [str(a) for a in record[f"{name}/activations"]]
            weights = [record[f"{name}/w{k}"] for k in range(n_layers)]
            biases = [record[f"{name}/b{k}"] for k in range(n_layers)]
            parts[name] = MlpParams(weights, biases, acts)
        return MultimodalModel(
            parts["pet_encoder"],
            parts["mri_encoder"],
            parts["classifier"],
            int(record["embed_dim"]),
        )


def _named_mlps(model: MultimodalModel):
    return (
        ("pet_encoder", model.pet_encoder),
        ("mri_encoder", model.mri_encoder),
        ("classifier", model.classifier),
    )
