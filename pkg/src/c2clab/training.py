"""Loss terms, CutMix augmentation, and the training loop.

Two objectives share one code path. The plain branch optimizes
composition + component + independence + condition terms; the CutMix
branch replaces the condition term with the novel-composition term and
mixes every per-sample loss by the pasted-area fraction. A per-batch
Bernoulli draw with the configured probability picks the branch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import InvalidConfig, InvalidInput, InvalidState, NumericalError
from . import numerics as nm
from .numerics import Adam, Tensor, hsic, median_bandwidth
from .labelspace import composition_mask
from .model import C2CModel, ModelConfig, compose_scores, pair_score_matrix

LOG_EPS = 1e-12  # inside logs, keeps the condition loss finite
ROW_EPS = 1e-8   # row-sum normalizer


@dataclass
class TrainConfig:
    temperature: float = 0.05         # softmax sharpening for cosine logits
    specific_fraction: float = 0.5    # leading channel share treated as component-specific
    component_weight: float = 0.2
    independence_weight: float = 0.1
    balance_weight: float = 0.1       # shared by condition and novel terms
    cutmix_prob: float = 0.7
    epochs: int = 80
    batch_size: int = 32
    learning_rate: float = 0.005
    seed: int = 0
    hidden_dim: int = 64
    feature_dim: int = 32
    share_reference_encoders: bool = False
    precision: str = "f64"

    def validate(self):
        if self.temperature <= 0:
            raise InvalidConfig("temperature must be positive")
        if not 0.0 <= self.specific_fraction <= 1.0:
            raise InvalidConfig("specific_fraction must lie in [0, 1]")
        for name in ("component_weight", "independence_weight", "balance_weight"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be nonnegative")
        if not 0.0 <= self.cutmix_prob <= 1.0:
            raise InvalidConfig("cutmix_prob must lie in [0, 1]")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise InvalidConfig("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.precision not in ("f64", "f32"):
            raise InvalidConfig("precision must be 'f64' or 'f32'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def vanilla(self):
        """Composition + component terms only."""
        return replace(self, independence_weight=0.0, balance_weight=0.0, cutmix_prob=0.0)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data, **overrides):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {unknown}")
        merged = {**data}
        merged.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path, **overrides):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), **overrides)


LOSS_TERMS = ("verb", "object", "component", "composition",
              "verb_bottleneck", "object_bottleneck", "independence",
              "condition", "novel", "total")


@dataclass
class LossReport:
    verb: float = None
    object: float = None
    component: float = None
    composition: float = None
    verb_bottleneck: float = None
    object_bottleneck: float = None
    independence: float = None
    condition: float = None
    novel: float = None
    total: float = None

    def as_dict(self):
        return {name: getattr(self, name) for name in LOSS_TERMS}


@dataclass
class EmpiricalConditionals:
    object_given_verb: np.ndarray  # (N_v, N_o), rows sum to 1 where the verb occurs
    verb_given_object: np.ndarray  # (N_o, N_v)


@dataclass(frozen=True)
class CutMixRecord:
    partner_index: int
    top: int
    left: int
    height: int
    width: int
    area_fraction: float


@dataclass(frozen=True)
class IndependenceBandwidths:
    """Frozen gaussian widths, needed when finite differences probe the loss."""

    pooled: float
    dynamic: float
    static: float
    dynamic_slice: float
    static_slice: float


def component_loss(verb_scores, object_scores, verb_targets, object_targets,
                   temperature, weights=None):
    """Temperature softmax cross entropy over cosine score rows.

    ``weights`` (per-sample) replaces the plain mean by sum(w * loss) / B,
    which is what the CutMix mixing needs.
    """
    if weights is None:
        l_verb = nm.softmax_cross_entropy_with_temperature(
            verb_scores, verb_targets, temperature)
        l_obj = nm.softmax_cross_entropy_with_temperature(
            object_scores, object_targets, temperature)
    else:
        w = np.asarray(weights, dtype=np.float64)
        n = verb_scores.shape[0]
        per_v = nm.softmax_cross_entropy_with_temperature(
            verb_scores, verb_targets, temperature, reduction="none")
        per_o = nm.softmax_cross_entropy_with_temperature(
            object_scores, object_targets, temperature, reduction="none")
        l_verb = nm.tensor_sum(nm.mul(per_v, Tensor(w))) * (1.0 / n)
        l_obj = nm.tensor_sum(nm.mul(per_o, Tensor(w))) * (1.0 / n)
    return l_verb, l_obj, l_verb + l_obj


def composition_loss(comp_scores, targets, train_mask, temperature, weights=None):
    """Cross entropy over trainable compositions only."""
    train_cols = np.flatnonzero(np.asarray(train_mask))
    position = {int(c): i for i, c in enumerate(train_cols)}
    targets = np.asarray(targets, dtype=np.intp)
    try:
        local = np.array([position[int(t)] for t in targets], dtype=np.intp)
    except KeyError as err:
        raise InvalidInput(f"composition target {err} is not trainable")
    logits = nm.gather_columns(comp_scores, train_cols)
    if weights is None:
        return nm.softmax_cross_entropy_with_temperature(logits, local, temperature)
    per = nm.softmax_cross_entropy_with_temperature(
        logits, local, temperature, reduction="none")
    n = comp_scores.shape[0]
    return nm.tensor_sum(nm.mul(per, Tensor(np.asarray(weights, dtype=np.float64)))) * (1.0 / n)


def compute_independence_bandwidths(pooled, dynamic_feat, static_feat, specific_fraction):
    k = _specific_channels(dynamic_feat.shape[1], specific_fraction)
    return IndependenceBandwidths(
        pooled=median_bandwidth(pooled.data),
        dynamic=median_bandwidth(dynamic_feat.data),
        static=median_bandwidth(static_feat.data),
        dynamic_slice=median_bandwidth(dynamic_feat.data[:, :k]) if k else 1.0,
        static_slice=median_bandwidth(static_feat.data[:, :k]) if k else 1.0,
    )


def _specific_channels(width, fraction):
    return int(round(fraction * width))


def independence_loss(pooled, dynamic_feat, static_feat, verb_onehot, object_onehot,
                      specific_fraction, bandwidths=None):
    """Compress-but-retain penalties plus cross-feature independence.

    Each bottleneck term is HSIC(general, component feature) minus
    HSIC(component feature, labels); the third term penalizes dependence
    between the leading component-specific channel slices.
    """
    n = pooled.shape[0]
    if n < 2:
        raise InvalidInput("independence loss needs a batch of at least 2")
    bw = bandwidths
    sup_verb = hsic(pooled, dynamic_feat,
                    bandwidth_x=bw.pooled if bw else None,
                    bandwidth_y=bw.dynamic if bw else None) - \
        hsic(dynamic_feat, Tensor(verb_onehot), kernel_x="gaussian_median",
             kernel_y="linear", bandwidth_x=bw.dynamic if bw else None)
    sup_obj = hsic(pooled, static_feat,
                   bandwidth_x=bw.pooled if bw else None,
                   bandwidth_y=bw.static if bw else None) - \
        hsic(static_feat, Tensor(object_onehot), kernel_x="gaussian_median",
             kernel_y="linear", bandwidth_x=bw.static if bw else None)
    k = _specific_channels(dynamic_feat.shape[1], specific_fraction)
    if k == 0:
        cross = Tensor(0.0)
    else:
        cross = hsic(nm.slice_channels(dynamic_feat, 0, k),
                     nm.slice_channels(static_feat, 0, k),
                     bandwidth_x=bw.dynamic_slice if bw else None,
                     bandwidth_y=bw.static_slice if bw else None)
    return sup_verb + sup_obj + cross, sup_verb, sup_obj


def empirical_conditionals(train_samples, space):
    """Observed conditional frequencies over the training sample list."""
    if not train_samples:
        raise InvalidInput("empirical conditionals need a non-empty training split")
    verb_of, obj_of = space.composition_pairs()
    counts = np.zeros((space.num_verbs, space.num_objects))
    for _, comp in train_samples:
        counts[verb_of[comp], obj_of[comp]] += 1.0
    verb_totals = counts.sum(axis=1, keepdims=True)
    object_totals = counts.sum(axis=0, keepdims=True)
    with np.errstate(invalid="ignore"):
        ogv = np.where(verb_totals > 0, counts / np.where(verb_totals > 0, verb_totals, 1.0), 0.0)
        vgo = np.where(object_totals > 0,
                       counts / np.where(object_totals > 0, object_totals, 1.0), 0.0).T
    return EmpiricalConditionals(object_given_verb=ogv, verb_given_object=vgo)


def condition_loss(cond_object_given_verb, cond_verb_given_object, empirical):
    """Cross entropy from batch-mean conditional rows to the observed ones.

    The per-sample conditionals depend on the input, the observed table is
    global, so matching happens on the batch aggregate; rows of unobserved
    components carry zero weight and drop out on their own.
    """
    def one_side(cond, target):
        n_rows = target.shape[0]
        mean_rows = nm.mean_over_axis(cond, 0)                      # (rows, cols)
        row_sums = nm.tensor_sum(mean_rows, axis=1, keepdims=True)
        normalized = nm.div(mean_rows, row_sums + ROW_EPS)
        logs = nm.log(normalized + LOG_EPS)
        return nm.tensor_sum(nm.mul(logs, Tensor(target))) * (-1.0 / n_rows)

    l_verb_side = one_side(cond_object_given_verb, empirical.object_given_verb)
    l_object_side = one_side(cond_verb_given_object, empirical.verb_given_object)
    return l_verb_side + l_object_side, l_verb_side, l_object_side


def cutmix(video_a, video_b, rng):
    """Paste a random rectangle of b into a, at the same spot in every frame."""
    if video_a.shape != video_b.shape:
        raise InvalidInput(f"cutmix shapes differ: {video_a.shape} vs {video_b.shape}")
    h, w = video_a.shape[1], video_a.shape[2]
    rect_h = int(rng.integers(1, h + 1))
    rect_w = int(rng.integers(1, w + 1))
    top = int(rng.integers(0, h - rect_h + 1))
    left = int(rng.integers(0, w - rect_w + 1))
    mixed = video_a.copy()
    mixed[:, top:top + rect_h, left:left + rect_w] = \
        video_b[:, top:top + rect_h, left:left + rect_w]
    lam = (rect_h * rect_w) / (h * w)
    record = CutMixRecord(partner_index=-1, top=top, left=left,
                          height=rect_h, width=rect_w, area_fraction=lam)
    return mixed, record


def _novel_composition_loss(pair_matrix, comp_scores, train_mask, space,
                            novel_verbs, novel_objects, temperature):
    """Cross entropy whose candidate set is the trainable compositions plus
    the (possibly counterfactual) novel pair, appended as a temporary logit
    when it is not already trainable."""
    train_cols = np.flatnonzero(np.asarray(train_mask))
    position = {int(c): i for i, c in enumerate(train_cols)}
    logits = nm.gather_columns(comp_scores, train_cols)
    n, n_train = logits.shape
    pieces = []
    for b in range(n):
        v, o = int(novel_verbs[b]), int(novel_objects[b])
        comp = space.composition_index(v, o) if space.has_composition(v, o) else None
        row = logits[b]
        if comp is not None and comp in position:
            target = position[comp]
            row2d = nm.reshape(row, (1, n_train))
        else:
            extra = nm.reshape(pair_matrix[(b, v, o)], (1,))
            row2d = nm.reshape(nm.concat([row, extra], axis=0), (1, n_train + 1))
            target = n_train
        pieces.append(nm.softmax_cross_entropy_with_temperature(
            row2d, [target], temperature, reduction="none"))
    return nm.tensor_sum(nm.concat(pieces, axis=0)) * (1.0 / n)


def mixed_losses(bundle, pooled, dynamic_feat, static_feat, space, train_mask,
                 verbs_a, objects_a, verbs_b, objects_b, lams, temperature,
                 specific_fraction, with_independence=True, bandwidths=None):
    """All CutMix-branch terms for a mixed batch.

    Labels a are the host samples, labels b the pasted partners, ``lams``
    the per-sample pasted-area fractions.
    """
    lams = np.asarray(lams, dtype=np.float64)
    keep = 1.0 - lams

    comp_scores = compose_scores(bundle, space, "full")
    targets_a = np.array([space.composition_index(int(v), int(o))
                          for v, o in zip(verbs_a, objects_a)], dtype=np.intp)
    targets_b = np.array([space.composition_index(int(v), int(o))
                          for v, o in zip(verbs_b, objects_b)], dtype=np.intp)
    l_com = composition_loss(comp_scores, targets_a, train_mask, temperature, weights=keep) + \
        composition_loss(comp_scores, targets_b, train_mask, temperature, weights=lams)

    lv_a, lo_a, _ = component_loss(bundle.verb_scores, bundle.object_scores,
                                   verbs_a, objects_a, temperature, weights=keep)
    lv_b, lo_b, _ = component_loss(bundle.verb_scores, bundle.object_scores,
                                   verbs_b, objects_b, temperature, weights=lams)
    l_verb = lv_a + lv_b
    l_object = lo_a + lo_b
    l_comp = l_verb + l_object

    terms = {"verb": l_verb, "object": l_object, "component": l_comp,
             "composition": l_com}
    if with_independence:
        n_v, n_o = space.num_verbs, space.num_objects
        soft_verbs = keep[:, None] * nm.one_hot(verbs_a, n_v) + \
            lams[:, None] * nm.one_hot(verbs_b, n_v)
        soft_objects = keep[:, None] * nm.one_hot(objects_a, n_o) + \
            lams[:, None] * nm.one_hot(objects_b, n_o)
        l_ind, sup_v, sup_o = independence_loss(
            pooled, dynamic_feat, static_feat, soft_verbs, soft_objects,
            specific_fraction, bandwidths=bandwidths)
        terms.update(independence=l_ind, verb_bottleneck=sup_v, object_bottleneck=sup_o)

    matrix = pair_score_matrix(bundle, "full")
    l_new = _novel_composition_loss(matrix, comp_scores, train_mask, space,
                                    verbs_a, objects_b, temperature) + \
        _novel_composition_loss(matrix, comp_scores, train_mask, space,
                                verbs_b, objects_a, temperature)
    terms["novel"] = l_new
    return terms


def plain_losses(bundle, pooled, dynamic_feat, static_feat, space, train_mask,
                 verbs, objects, empirical, temperature, specific_fraction,
                 with_independence=True, with_condition=True, bandwidths=None):
    comp_scores = compose_scores(bundle, space, "full")
    targets = np.array([space.composition_index(int(v), int(o))
                        for v, o in zip(verbs, objects)], dtype=np.intp)
    l_com = composition_loss(comp_scores, targets, train_mask, temperature)
    l_verb, l_object, l_comp = component_loss(
        bundle.verb_scores, bundle.object_scores, verbs, objects, temperature)
    terms = {"verb": l_verb, "object": l_object, "component": l_comp,
             "composition": l_com}
    if with_independence:
        l_ind, sup_v, sup_o = independence_loss(
            pooled, dynamic_feat, static_feat,
            nm.one_hot(verbs, space.num_verbs), nm.one_hot(objects, space.num_objects),
            specific_fraction, bandwidths=bandwidths)
        terms.update(independence=l_ind, verb_bottleneck=sup_v, object_bottleneck=sup_o)
    if with_condition:
        l_con, _, _ = condition_loss(bundle.cond_object_given_verb,
                                     bundle.cond_verb_given_object, empirical)
        terms["condition"] = l_con
    return terms


def total_loss(terms, config, cutmix_applied):
    """Weighted sum of the active branch's terms.

    Terms with zero weight may be absent (they are skipped for speed);
    a missing weighted term is an error.
    """
    balance_key = "novel" if cutmix_applied else "condition"
    needed = [("composition", 1.0), ("component", config.component_weight),
              ("independence", config.independence_weight),
              (balance_key, config.balance_weight)]
    total = None
    for key, weight in needed:
        if weight == 0.0:
            continue
        if key not in terms:
            raise InvalidState(f"missing loss term {key!r} for the active branch")
        piece = terms[key] if weight == 1.0 else terms[key] * weight
        total = piece if total is None else total + piece
    return total


class TrainingDiverged(NumericalError):
    def __init__(self, message, last_good_state, history):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.history = history


def train(dataset, space, split, config, progress=None):
    """Run the configured objective over the training split.

    Returns (model, per-epoch LossReport history). The trajectory is fully
    determined by config.seed. On a non-finite loss the run aborts with
    TrainingDiverged carrying the last completed epoch's parameters.
    """
    config.validate()
    dtype = config.dtype

    ids = [sid for sid, _ in split.train_samples]
    rows = dataset.rows_for(ids)
    videos = dataset.videos[rows].astype(dtype)
    verbs = dataset.verb_indices[rows]
    objects = dataset.object_indices[rows]
    n = len(rows)
    if n == 0:
        raise InvalidInput("empty training split")

    frame_dim = int(np.prod(dataset.videos.shape[2:]))
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    model = C2CModel(ModelConfig(
        num_verbs=space.num_verbs, num_objects=space.num_objects,
        frame_dim=frame_dim, hidden_dim=config.hidden_dim,
        feature_dim=config.feature_dim,
        share_reference_encoders=config.share_reference_encoders,
        dtype=dtype), seed=seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    cutmix_rng = np.random.default_rng(seeds[2])

    params = model.parameters()
    optimizer = Adam(params.values(), learning_rate=config.learning_rate)
    empirical = empirical_conditionals(split.train_samples, space)
    train_mask = composition_mask(space, split, "train")

    need_independence = config.independence_weight > 0
    need_condition = config.balance_weight > 0

    history = []
    last_good = model.state_dict()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        sums, counts = {}, {}
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            if batch.size < 2:
                continue  # independence terms need paired samples
            use_cutmix = bool(cutmix_rng.random() < config.cutmix_prob)
            batch_videos = videos[batch]
            batch_verbs = verbs[batch]
            batch_objects = objects[batch]
            if use_cutmix:
                partners = cutmix_rng.permutation(batch.size)
                mixed = np.empty_like(batch_videos)
                lams = np.empty(batch.size)
                for i, j in enumerate(partners):
                    mixed[i], record = cutmix(batch_videos[i], batch_videos[j], cutmix_rng)
                    lams[i] = record.area_fraction
                bundle, pooled, dyn, stat = model.forward(mixed)
                terms = mixed_losses(
                    bundle, pooled, dyn, stat, space, train_mask,
                    batch_verbs, batch_objects,
                    verbs[batch[partners]], objects[batch[partners]], lams,
                    config.temperature, config.specific_fraction,
                    with_independence=need_independence)
            else:
                bundle, pooled, dyn, stat = model.forward(batch_videos)
                terms = plain_losses(
                    bundle, pooled, dyn, stat, space, train_mask,
                    batch_verbs, batch_objects, empirical,
                    config.temperature, config.specific_fraction,
                    with_independence=need_independence,
                    with_condition=need_condition)
            loss = total_loss(terms, config, use_cutmix)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good, history)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for key, value in terms.items():
                sums[key] = sums.get(key, 0.0) + value.item()
                counts[key] = counts.get(key, 0) + 1
            sums["total"] = sums.get("total", 0.0) + loss.item()
            counts["total"] = counts.get("total", 0) + 1
        report = LossReport(**{key: sums[key] / counts[key] for key in sums})
        history.append(report)
        last_good = model.state_dict()
        if progress is not None:
            progress(epoch, report)
    return model, history
