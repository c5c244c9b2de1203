"""Encoders, component prototypes, and the composition scoring head.

The pipeline: a general per-frame encoder lifts raw frames to a sequence of
general features; a static branch (temporal mean + two fully connected
layers) extracts object-sided features, a dynamic branch (two temporal
convolutions + temporal mean) extracts verb-sided features. Components are
scored by cosine similarity against learnable prototype tables. Composition
scores combine component scores with conditional scores produced by fusing
a visual reference with the conditioning component's prototype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidInput
from . import numerics as nm
from .numerics import Tensor

INFERENCE_MODES = ("independent", "knowledge_agnostic", "dynamic_only", "static_only", "full")


@dataclass
class ModelConfig:
    num_verbs: int
    num_objects: int
    frame_dim: int              # flattened H * W * channels
    hidden_dim: int = 64        # general per-frame feature width
    feature_dim: int = 32       # component feature / prototype width
    share_reference_encoders: bool = False
    dtype: object = np.float64

    def validate(self):
        for name in ("num_verbs", "num_objects", "frame_dim", "hidden_dim", "feature_dim"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")


class Linear:
    def __init__(self, rng, fan_in, fan_out, dtype):
        scale = 1.0 / np.sqrt(fan_in)
        self.weight = Tensor(rng.normal(0.0, scale, size=(fan_in, fan_out)).astype(dtype),
                             requires_grad=True)
        # small nonzero bias: keeps features off the exact zero vector even
        # when a relu wipes the whole row, so cosine scores stay defined
        self.bias = Tensor(rng.normal(0.0, 0.01, size=fan_out).astype(dtype),
                           requires_grad=True)

    def __call__(self, x):
        return nm.matmul(x, self.weight) + self.bias

    def params(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class StaticEncoder:
    """Temporal mean is taken by the caller; this is the two-layer head."""

    def __init__(self, rng, in_dim, out_dim, dtype):
        self.fc1 = Linear(rng, in_dim, out_dim, dtype)
        self.fc2 = Linear(rng, out_dim, out_dim, dtype)

    def __call__(self, pooled):
        return self.fc2(nm.relu(self.fc1(pooled)))

    def params(self, prefix):
        return {**self.fc1.params(f"{prefix}.fc1"), **self.fc2.params(f"{prefix}.fc2")}


class DynamicEncoder:
    """Two temporal convolutions (kernel 3), then temporal mean."""

    def __init__(self, rng, in_dim, out_dim, dtype, kernel=3):
        scale1 = 1.0 / np.sqrt(kernel * in_dim)
        scale2 = 1.0 / np.sqrt(kernel * out_dim)
        self.conv1_weight = Tensor(
            rng.normal(0.0, scale1, size=(kernel, in_dim, out_dim)).astype(dtype),
            requires_grad=True)
        self.conv1_bias = Tensor(rng.normal(0.0, 0.01, size=out_dim).astype(dtype),
                                 requires_grad=True)
        self.conv2_weight = Tensor(
            rng.normal(0.0, scale2, size=(kernel, out_dim, out_dim)).astype(dtype),
            requires_grad=True)
        self.conv2_bias = Tensor(rng.normal(0.0, 0.01, size=out_dim).astype(dtype),
                                 requires_grad=True)

    def __call__(self, frames):
        h = nm.relu(nm.conv1d_temporal(frames, self.conv1_weight, self.conv1_bias))
        h = nm.conv1d_temporal(h, self.conv2_weight, self.conv2_bias)
        return nm.mean_over_axis(h, 1)

    def params(self, prefix):
        return {
            f"{prefix}.conv1.weight": self.conv1_weight,
            f"{prefix}.conv1.bias": self.conv1_bias,
            f"{prefix}.conv2.weight": self.conv2_weight,
            f"{prefix}.conv2.bias": self.conv2_bias,
        }


@dataclass
class ScoreBundle:
    """All per-batch scores the composition head can produce.

    verb_scores: (B, N_v) cosines; object_scores: (B, N_o) cosines;
    cond_object_given_verb: (B, N_v, N_o) in [0, 1];
    cond_verb_given_object: (B, N_o, N_v) in [0, 1].
    """

    verb_scores: Tensor
    object_scores: Tensor
    cond_object_given_verb: Tensor
    cond_verb_given_object: Tensor


class C2CModel:
    def __init__(self, config, seed=0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.dtype
        d, c = config.hidden_dim, config.feature_dim

        self.general_fc1 = Linear(rng, config.frame_dim, d, dt)
        self.general_fc2 = Linear(rng, d, d, dt)
        self.static_encoder = StaticEncoder(rng, d, c, dt)
        self.dynamic_encoder = DynamicEncoder(rng, d, c, dt)
        if config.share_reference_encoders:
            self.static_reference = self.static_encoder
            self.dynamic_reference = self.dynamic_encoder
        else:
            self.static_reference = StaticEncoder(rng, d, c, dt)
            self.dynamic_reference = DynamicEncoder(rng, d, c, dt)
        self.dynamic_path_fuser = Linear(rng, 2 * c, c, dt)
        self.static_path_fuser = Linear(rng, 2 * c, c, dt)

        protos_v = rng.normal(size=(config.num_verbs, c)).astype(dt)
        protos_o = rng.normal(size=(config.num_objects, c)).astype(dt)
        protos_v /= np.linalg.norm(protos_v, axis=1, keepdims=True)
        protos_o /= np.linalg.norm(protos_o, axis=1, keepdims=True)
        self.verb_prototypes = Tensor(protos_v, requires_grad=True)
        self.object_prototypes = Tensor(protos_o, requires_grad=True)

    # ---- parameters / checkpoints -------------------------------------
    def parameters(self):
        out = {}
        out.update(self.general_fc1.params("general.fc1"))
        out.update(self.general_fc2.params("general.fc2"))
        out.update(self.static_encoder.params("static"))
        out.update(self.dynamic_encoder.params("dynamic"))
        if not self.config.share_reference_encoders:
            out.update(self.static_reference.params("static_ref"))
            out.update(self.dynamic_reference.params("dynamic_ref"))
        out.update(self.dynamic_path_fuser.params("dynamic_fuser"))
        out.update(self.static_path_fuser.params("static_fuser"))
        out["verb_prototypes"] = self.verb_prototypes
        out["object_prototypes"] = self.object_prototypes
        return dict(sorted(out.items()))

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, state):
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise InvalidInput(f"parameter names mismatch: missing {missing}, extra {extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=self.config.dtype)
            if arr.shape != p.data.shape:
                raise InvalidInput(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr

    def seed_prototypes_for_space(self, space, verb_vectors=None, object_vectors=None):
        """Replace prototype rows with externally supplied word embeddings.

        Takes {label name: vector} dicts; labels absent from the mapping keep
        their random initialization. Vectors must match the feature width and
        are unit-normalized on import.
        """
        c = self.config.feature_dim
        for table, vectors, names in (
            (self.verb_prototypes, verb_vectors, space.verbs),
            (self.object_prototypes, object_vectors, space.objects),
        ):
            if not vectors:
                continue
            for i, name in enumerate(names):
                if name not in vectors:
                    continue
                vec = np.asarray(vectors[name], dtype=self.config.dtype)
                if vec.shape != (c,):
                    raise InvalidInput(
                        f"embedding for {name!r} has shape {vec.shape}, expected ({c},)")
                norm = np.linalg.norm(vec)
                if norm == 0:
                    raise InvalidInput(f"embedding for {name!r} is all zeros")
                table.data[i] = vec / norm

    # ---- forward -------------------------------------------------------
    def encode(self, videos):
        """(B, T, H, W, C_in) -> general frame features, pooled feature,
        dynamic (verb-sided) feature, static (object-sided) feature.

        The pooled feature uses a sorted reduction, so reordering frames
        leaves it (and everything downstream of it) bit-for-bit unchanged.
        """
        videos = nm.as_tensor(videos)
        if videos.ndim != 5:
            raise InvalidInput(f"expected (B, T, H, W, C) videos, got {videos.shape}")
        b, t = videos.shape[0], videos.shape[1]
        if t < 2:
            raise InvalidInput("temporal convolution needs at least 2 frames")
        frame_dim = int(np.prod(videos.shape[2:]))
        if frame_dim != self.config.frame_dim:
            raise InvalidInput(f"frame dim {frame_dim} != configured {self.config.frame_dim}")
        flat = nm.reshape(videos, (b * t, frame_dim))
        hidden = nm.relu(self.general_fc1(flat))
        rows = self.general_fc2(hidden)
        frames = nm.reshape(rows, (b, t, self.config.hidden_dim))
        pooled = nm.mean_over_axis(frames, 1, sorted_reduce=True)
        static_feat = self.static_encoder(pooled)
        dynamic_feat = self.dynamic_encoder(frames)
        return frames, pooled, dynamic_feat, static_feat

    def component_scores(self, dynamic_feat, static_feat):
        verb_scores = nm.cosine_similarity(dynamic_feat, self.verb_prototypes)
        object_scores = nm.cosine_similarity(static_feat, self.object_prototypes)
        return verb_scores, object_scores

    def _conditional_path(self, reference, cond_prototypes, fuser, target_prototypes):
        """(cos(fuse(reference, prototype), target prototype) + 1) / 2."""
        b = reference.shape[0]
        p = cond_prototypes.shape[0]
        q = target_prototypes.shape[0]
        c = reference.shape[1]
        # rows ordered (sample 0: all conditions), (sample 1: ...), ...
        rep = nm.reshape(nm.concat([nm.reshape(reference, (b, 1, c))] * p, axis=1), (b * p, c))
        tiled = nm.concat([cond_prototypes] * b, axis=0)
        fused = fuser(nm.concat([rep, tiled], axis=1))
        cond = (nm.cosine_similarity(fused, target_prototypes) + 1.0) * 0.5
        return nm.reshape(cond, (b, p, q))

    def conditional_scores(self, frames, pooled):
        static_ref = self.static_reference(pooled)
        dynamic_ref = self.dynamic_reference(frames)
        cond_ov = self._conditional_path(
            static_ref, self.verb_prototypes, self.dynamic_path_fuser, self.object_prototypes)
        cond_vo = self._conditional_path(
            dynamic_ref, self.object_prototypes, self.static_path_fuser, self.verb_prototypes)
        return cond_ov, cond_vo

    def forward(self, videos):
        frames, pooled, dynamic_feat, static_feat = self.encode(videos)
        verb_scores, object_scores = self.component_scores(dynamic_feat, static_feat)
        cond_ov, cond_vo = self.conditional_scores(frames, pooled)
        bundle = ScoreBundle(verb_scores, object_scores, cond_ov, cond_vo)
        return bundle, pooled, dynamic_feat, static_feat

    @classmethod
    def from_checkpoint_state(cls, state, share_reference_encoders=None, dtype=np.float64):
        """Rebuild a model whose dimensions are implied by saved shapes."""
        try:
            frame_dim, hidden = state["general.fc1.weight"].shape
            feature = state["static.fc2.weight"].shape[1]
            num_verbs = state["verb_prototypes"].shape[0]
            num_objects = state["object_prototypes"].shape[0]
        except KeyError as err:
            raise InvalidInput(f"checkpoint missing parameter {err}")
        if share_reference_encoders is None:
            share_reference_encoders = "static_ref.fc1.weight" not in state
        cfg = ModelConfig(num_verbs=num_verbs, num_objects=num_objects,
                          frame_dim=frame_dim, hidden_dim=hidden, feature_dim=feature,
                          share_reference_encoders=share_reference_encoders, dtype=dtype)
        model = cls(cfg, seed=0)
        model.load_state(state)
        return model


def pair_score_matrix(bundle, mode):
    """Composition scores for every (verb, object) cell: (B, N_v, N_o)."""
    if mode not in INFERENCE_MODES:
        raise InvalidConfig(f"unknown inference mode {mode!r}; expected one of {INFERENCE_MODES}")
    b, n_v = bundle.verb_scores.shape
    n_o = bundle.object_scores.shape[1]
    sv = nm.reshape(bundle.verb_scores, (b, n_v, 1))
    so = nm.reshape(bundle.object_scores, (b, 1, n_o))
    if mode == "independent":
        return nm.mul(sv, so)
    if mode == "knowledge_agnostic":
        return nm.add(sv, so)
    dynamic = nm.mul(sv, bundle.cond_object_given_verb)
    if mode == "dynamic_only":
        return dynamic
    static = nm.mul(so, nm.transpose(bundle.cond_verb_given_object, (0, 2, 1)))
    if mode == "static_only":
        return static
    return (dynamic + static) * 0.5


def compose_scores(bundle, space, mode):
    """Scores for the admitted compositions only: (B, N_a)."""
    verb_of, obj_of = space.composition_pairs()
    matrix = pair_score_matrix(bundle, mode)
    return nm.gather_pairs(matrix, verb_of, obj_of)
