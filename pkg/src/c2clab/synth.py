"""Synthetic compositional video generator.

Objects are painted as static patches; verbs are realised purely in time:
every verb visits the same set of anchor positions but in its own order,
so the per-frame multiset of appearances is identical across verbs and an
order-invariant feature cannot tell them apart. A verb-conditioned
perturbation of the object patch models appearance shift across
compositions, and gaussian pixel noise controls difficulty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import VideoDataset, implicit_sample_id
from .errors import ConstructionFailed, InvalidInput
from .labelspace import LabelSpace, SplitSpec, check_split


@dataclass
class SyntheticSpec:
    num_verbs: int = 6
    num_objects: int = 6
    frames: int = 6
    height: int = 16
    width: int = 16
    channels: int = 3
    samples_per_composition: int = 15
    noise_sigma: float = 0.1
    variation_delta: float = 0.2   # verb-conditioned object appearance shift
    unseen_fraction: float = 1 / 3
    train_fraction: float = 0.6    # of a seen composition's samples
    val_fraction: float = 0.2      # of a seen composition's samples
    seed: int = 0

    def validate(self):
        for name in ("num_verbs", "num_objects", "frames", "height", "width", "channels"):
            if getattr(self, name) <= 0:
                raise InvalidInput(f"{name} must be positive")
        if self.frames < 2:
            raise InvalidInput("needs at least 2 frames")
        if self.samples_per_composition < 5:
            raise InvalidInput("needs at least 5 samples per composition "
                               "(the split floor)")
        if self.noise_sigma < 0 or self.variation_delta < 0:
            raise InvalidInput("noise and variation strengths must be nonnegative")
        if not 0.0 <= self.unseen_fraction < 1.0:
            raise InvalidInput("unseen_fraction must lie in [0, 1)")
        if self.train_fraction <= 0 or self.val_fraction < 0 or \
                self.train_fraction + self.val_fraction >= 1.0:
            raise InvalidInput("seen-sample fractions must leave room for test")


def _anchor_positions(rng, frames, height, width, patch_h, patch_w):
    """Distinct patch positions, one per frame slot."""
    max_top = height - patch_h
    max_left = width - patch_w
    cells = [(t, l) for t in range(max_top + 1) for l in range(max_left + 1)]
    if len(cells) < frames:
        raise InvalidInput("frame grid too small for distinct anchor positions")
    chosen = rng.choice(len(cells), size=frames, replace=False)
    return [cells[i] for i in sorted(chosen)]


def _verb_orders(rng, num_verbs, frames):
    """Distinct visit orders; order is the only thing a verb changes."""
    orders, seen = [], set()
    attempts = 0
    while len(orders) < num_verbs:
        perm = tuple(int(x) for x in rng.permutation(frames))
        attempts += 1
        if perm in seen:
            if attempts > 1000 * num_verbs:
                raise ConstructionFailed(
                    f"cannot find {num_verbs} distinct orders over {frames} frames",
                    stage="verb-orders")
            continue
        seen.add(perm)
        orders.append(perm)
    return orders


def _select_unseen(rng, space, target):
    """Pick unseen compositions while every component stays trainable."""
    verb_left = {v: 0 for v in range(space.num_verbs)}
    object_left = {o: 0 for o in range(space.num_objects)}
    for v, o in space.compositions:
        verb_left[v] += 1
        object_left[o] += 1
    order = rng.permutation(space.num_compositions)
    unseen = []
    for idx in order:
        if len(unseen) == target:
            break
        v, o = space.compositions[int(idx)]
        if verb_left[v] > 1 and object_left[o] > 1:
            unseen.append(int(idx))
            verb_left[v] -= 1
            object_left[o] -= 1
    if len(unseen) < target:
        raise ConstructionFailed(
            f"could only hold out {len(unseen)} of {target} compositions without "
            "orphaning a component", stage="holdout")
    return sorted(unseen)


def generate_synthetic(spec):
    """Render the dataset and build its generalized zero-shot split.

    Seen compositions spread samples over train/val/test; unseen
    compositions split theirs between val and test. Returns
    (VideoDataset, LabelSpace, SplitSpec).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    space = LabelSpace(
        verbs=tuple(f"verb{i:02d}" for i in range(spec.num_verbs)),
        objects=tuple(f"object{j:02d}" for j in range(spec.num_objects)),
        compositions=tuple((v, o) for v in range(spec.num_verbs)
                           for o in range(spec.num_objects)),
    )

    patch_h, patch_w = max(1, spec.height // 2), max(1, spec.width // 2)
    anchors = _anchor_positions(rng, spec.frames, spec.height, spec.width, patch_h, patch_w)
    orders = _verb_orders(rng, spec.num_verbs, spec.frames)
    object_patches = rng.normal(size=(spec.num_objects, patch_h, patch_w, spec.channels))
    pair_shifts = rng.normal(size=(spec.num_verbs, spec.num_objects,
                                   patch_h, patch_w, spec.channels))

    target_unseen = int(round(spec.unseen_fraction * space.num_compositions))
    unseen = set(_select_unseen(rng, space, target_unseen))

    videos, verb_idx, object_idx = [], [], []
    assignment = {"train": [], "val": [], "test": []}
    n = spec.samples_per_composition
    for comp, (v, o) in enumerate(space.compositions):
        patch = object_patches[o] + spec.variation_delta * pair_shifts[v, o]
        base = np.zeros((spec.frames, spec.height, spec.width, spec.channels))
        for t in range(spec.frames):
            top, left = anchors[orders[v][t]]
            base[t, top:top + patch_h, left:left + patch_w] = patch
        if comp in unseen:
            counts = {"train": 0, "val": n // 2, "test": n - n // 2}
        else:
            n_train = int(round(spec.train_fraction * n))
            n_val = int(round(spec.val_fraction * n))
            n_train = max(1, min(n_train, n - 2))
            n_val = max(1, min(n_val, n - n_train - 1))
            counts = {"train": n_train, "val": n_val, "test": n - n_train - n_val}
        for part in ("train", "val", "test"):
            for _ in range(counts[part]):
                sample = base + spec.noise_sigma * rng.normal(size=base.shape)
                sid = implicit_sample_id(len(videos))
                videos.append(sample)
                verb_idx.append(v)
                object_idx.append(o)
                assignment[part].append((sid, comp))

    dataset = VideoDataset(np.array(videos), np.array(verb_idx), np.array(object_idx))
    split = SplitSpec(
        train_compositions=frozenset(c for _, c in assignment["train"]),
        val_compositions=frozenset(c for _, c in assignment["val"]),
        test_compositions=frozenset(c for _, c in assignment["test"]),
        train_samples=tuple(sorted(assignment["train"])),
        val_samples=tuple(sorted(assignment["val"])),
        test_samples=tuple(sorted(assignment["test"])),
    )
    problems = check_split(space, split, min_samples=min(5, spec.samples_per_composition))
    if problems:
        raise ConstructionFailed("; ".join(problems), stage="synthetic-split")
    return dataset, space, split
