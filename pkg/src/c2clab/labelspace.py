"""Verb-object label domain, dataset split semantics, and the benchmark
split construction procedure.

A composition is a (verb, object) pair; a split is valid when every
component seen at evaluation time was trainable, when both seen and unseen
compositions occur in val and test, and when no surviving composition is
starved of samples. Everything here is a pure function over immutable
inputs, deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionFailed, InvalidInput

VALID_SOURCE_SPLITS = ("train", "test")


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    verb: str
    object: str
    split: str  # starting membership, "train" or "test"

    def __post_init__(self):
        if not self.sample_id or not self.verb or not self.object:
            raise InvalidInput("annotation fields must be non-empty")
        if self.split not in VALID_SOURCE_SPLITS:
            raise InvalidInput(f"unknown source split {self.split!r}")


@dataclass(frozen=True)
class LabelSpace:
    verbs: tuple
    objects: tuple
    compositions: tuple  # (verb_index, object_index) pairs

    @property
    def num_verbs(self):
        return len(self.verbs)

    @property
    def num_objects(self):
        return len(self.objects)

    @property
    def num_compositions(self):
        return len(self.compositions)

    def composition_index(self, verb_idx, object_idx):
        return self._pair_lookup[(verb_idx, object_idx)]

    def has_composition(self, verb_idx, object_idx):
        return (verb_idx, object_idx) in self._pair_lookup

    @property
    def _pair_lookup(self):
        cached = getattr(self, "_lookup_cache", None)
        if cached is None:
            cached = {pair: i for i, pair in enumerate(self.compositions)}
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def composition_pairs(self):
        """Verb/object index arrays aligned with composition order."""
        pairs = np.asarray(self.compositions, dtype=np.intp).reshape(-1, 2)
        return pairs[:, 0], pairs[:, 1]

    def validate(self):
        if len(set(self.verbs)) != len(self.verbs):
            raise InvalidInput("duplicate verb names")
        if len(set(self.objects)) != len(self.objects):
            raise InvalidInput("duplicate object names")
        if len(set(self.compositions)) != len(self.compositions):
            raise InvalidInput("duplicate composition pairs")
        for v, o in self.compositions:
            if not (0 <= v < len(self.verbs) and 0 <= o < len(self.objects)):
                raise InvalidInput(f"composition ({v}, {o}) out of range")


@dataclass(frozen=True)
class SplitSpec:
    train_compositions: frozenset
    val_compositions: frozenset
    test_compositions: frozenset
    train_samples: tuple  # (sample_id, composition_index) pairs
    val_samples: tuple
    test_samples: tuple

    def samples(self, part):
        return {"train": self.train_samples,
                "val": self.val_samples,
                "test": self.test_samples}[part]

    def compositions(self, part):
        return {"train": self.train_compositions,
                "val": self.val_compositions,
                "test": self.test_compositions}[part]


def build_label_space(records):
    """Vocabularies and observed compositions, lexicographically indexed."""
    records = list(records)
    if not records:
        raise InvalidInput("cannot build a label space from zero records")
    seen_ids = set()
    for r in records:
        if r.sample_id in seen_ids:
            raise InvalidInput(f"duplicate sample_id {r.sample_id!r}")
        seen_ids.add(r.sample_id)
    verbs = tuple(sorted({r.verb for r in records}))
    objects = tuple(sorted({r.object for r in records}))
    v_index = {name: i for i, name in enumerate(verbs)}
    o_index = {name: i for i, name in enumerate(objects)}
    pairs = tuple(sorted({(v_index[r.verb], o_index[r.object]) for r in records}))
    space = LabelSpace(verbs=verbs, objects=objects, compositions=pairs)
    space.validate()
    return space


def _clean_pools(pools, min_samples):
    """Iteratively drop starved compositions and test compositions whose
    components never occur in the training pool, until nothing changes."""
    train, test = dict(pools["train"]), dict(pools["test"])
    changed = True
    while changed:
        changed = False
        for name, pool in (("train", train), ("test", test)):
            starved = [c for c, ids in pool.items() if len(ids) < min_samples]
            for c in starved:
                del pool[c]
                changed = True
        train_verbs = {pair[0] for pair in train}
        train_objects = {pair[1] for pair in train}
        uncovered = [pair for pair in test
                     if pair[0] not in train_verbs or pair[1] not in train_objects]
        for pair in uncovered:
            del test[pair]
            changed = True
        if not train:
            raise ConstructionFailed("training pool emptied", stage="cleaning")
        if not test:
            raise ConstructionFailed("test pool emptied", stage="cleaning")
    return train, test


def _interchange(train, test, rng, select_fraction, interchange_fraction):
    """Move a fraction of each selected composition's samples across pools.

    Moving whole compositions would keep the pools label-disjoint and leave
    the evaluation pools without any seen composition, so the exchange works
    at sample granularity: each selected composition keeps a foothold on its
    original side and gains one on the other, which is exactly what makes a
    composition "seen" at evaluation time.
    """
    plans = []
    for source, target in ((train, test), (test, train)):
        comps = sorted(source)  # selection over the pools as they stand now
        k = int(round(select_fraction * len(comps)))
        if k == 0:
            continue
        chosen = rng.choice(len(comps), size=k, replace=False)
        plans.append((source, target, [comps[i] for i in sorted(chosen)]))
    for source, target, selected in plans:
        for comp in selected:
            ids = source.get(comp, [])
            n_move = int(round(interchange_fraction * len(ids)))
            if 0 < interchange_fraction < 1:
                n_move = min(max(n_move, 1), len(ids) - 1)
            if n_move <= 0:
                continue
            moved_idx = rng.choice(len(ids), size=n_move, replace=False)
            moved = {ids[i] for i in moved_idx}
            source[comp] = sorted(set(ids) - moved)
            if not source[comp]:
                del source[comp]
            target.setdefault(comp, [])
            target[comp] = sorted(set(target[comp]) | moved)


def _divide_pool(pool, seen_pairs, ratio):
    """Assign whole compositions to val/test, greedily tracking the target
    sample-count ratio, separately for seen and unseen compositions so both
    kinds land on both sides."""
    val_ratio, test_ratio = ratio
    val, test = {}, {}
    for kind in ("seen", "unseen"):
        group = [pair for pair in pool
                 if (pair in seen_pairs) == (kind == "seen")]
        if not group:
            raise ConstructionFailed(
                f"no {kind} compositions available for the val/test division",
                stage="division")
        group.sort(key=lambda pair: (-len(pool[pair]), pair))
        n_val = n_test = 0
        for pair in group:
            size = len(pool[pair])
            dev_val = abs((n_val + size) * test_ratio - n_test * val_ratio)
            dev_test = abs(n_val * test_ratio - (n_test + size) * val_ratio)
            if dev_val <= dev_test:
                val[pair] = pool[pair]
                n_val += size
            else:
                test[pair] = pool[pair]
                n_test += size
        if not any((p in seen_pairs) == (kind == "seen") for p in val) or \
           not any((p in seen_pairs) == (kind == "seen") for p in test):
            raise ConstructionFailed(
                f"{kind} compositions collapsed onto one side of the division",
                stage="division")
    return val, test


def build_sthcom_split(records, seed, min_samples=5, select_fraction=1 / 3,
                       interchange_fraction=0.5, val_test_ratio=(3, 4), space=None):
    """Construct a generalized zero-shot split from annotated samples.

    Stages: fixed-point cleaning (starved compositions and evaluation
    compositions with untrainable components are dropped), a seeded
    cross-pool sample interchange that plants seen compositions in the
    evaluation pool, and a greedy composition-level division of that pool
    into val and test approximating the requested sample ratio.
    """
    records = list(records)
    if space is None:
        space = build_label_space(records)
    v_idx = {name: i for i, name in enumerate(space.verbs)}
    o_idx = {name: i for i, name in enumerate(space.objects)}

    pools = {"train": {}, "test": {}}
    seen_ids = set()
    for r in records:
        if r.sample_id in seen_ids:
            raise InvalidInput(f"duplicate sample_id {r.sample_id!r}")
        seen_ids.add(r.sample_id)
        if r.verb not in v_idx or r.object not in o_idx:
            raise InvalidInput(f"record {r.sample_id!r} names components "
                               "outside the label space")
        pair = (v_idx[r.verb], o_idx[r.object])
        pools[r.split].setdefault(pair, []).append(r.sample_id)
    for pool in pools.values():
        for ids in pool.values():
            ids.sort()

    train, eval_pool = _clean_pools(pools, min_samples)

    rng = np.random.default_rng(seed)
    _interchange(train, eval_pool, rng, select_fraction, interchange_fraction)
    if not train:
        raise ConstructionFailed("training pool emptied", stage="interchange")
    if not eval_pool:
        raise ConstructionFailed("evaluation pool emptied", stage="interchange")

    seen_pairs = set(train)
    val, test = _divide_pool(eval_pool, seen_pairs, val_test_ratio)

    def to_samples(pool):
        out = []
        for pair in sorted(pool):
            comp = space.composition_index(*pair)
            out.extend((sid, comp) for sid in pool[pair])
        out.sort()
        return tuple(out)

    split = SplitSpec(
        train_compositions=frozenset(space.composition_index(*p) for p in train),
        val_compositions=frozenset(space.composition_index(*p) for p in val),
        test_compositions=frozenset(space.composition_index(*p) for p in test),
        train_samples=to_samples(train),
        val_samples=to_samples(val),
        test_samples=to_samples(test),
    )
    violations = check_split(space, split, min_samples=min_samples)
    if violations:
        raise ConstructionFailed("; ".join(violations), stage="validation")
    return split


def composition_mask(space, split, which):
    """Boolean vector over compositions: trainable or feasible-at-eval."""
    if which not in ("train", "feasible"):
        raise InvalidInput(f"unknown mask kind {which!r}")
    mask = np.zeros(space.num_compositions, dtype=bool)
    indices = set(split.train_compositions)
    if which == "feasible":
        indices |= set(split.val_compositions) | set(split.test_compositions)
    mask[sorted(indices)] = True
    return mask


def check_split(space, split, min_samples=5):
    """Return a list of invariant violations (empty when the split is valid).

    The sample floor is checked per composition across all splits: the
    interchange deliberately spreads a seen composition's samples over
    several splits, so a per-split floor would reject every valid split.
    """
    problems = []
    n_a = space.num_compositions
    for part in ("train", "val", "test"):
        for comp in split.compositions(part):
            if not (0 <= comp < n_a):
                problems.append(f"{part}: composition index {comp} out of range")
    all_ids = {}
    counts = {}
    for part in ("train", "val", "test"):
        listed = set()
        for sid, comp in split.samples(part):
            if sid in all_ids:
                problems.append(f"sample {sid!r} appears in {all_ids[sid]} and {part}")
            all_ids[sid] = part
            counts[comp] = counts.get(comp, 0) + 1
            listed.add(comp)
        declared = set(split.compositions(part))
        if listed != declared:
            problems.append(f"{part}: sample list covers {sorted(listed)} "
                            f"but declares {sorted(declared)}")
    for comp, count in sorted(counts.items()):
        if count < min_samples:
            problems.append(f"composition {comp} has {count} samples (< {min_samples})")

    verb_of, obj_of = space.composition_pairs()
    train_verbs = {int(verb_of[c]) for c in split.train_compositions}
    train_objects = {int(obj_of[c]) for c in split.train_compositions}
    for part in ("val", "test"):
        comps = split.compositions(part)
        if not comps:
            problems.append(f"{part} split is empty")
            continue
        for comp in sorted(comps):
            if int(verb_of[comp]) not in train_verbs:
                problems.append(f"{part}: verb of composition {comp} never trained")
            if int(obj_of[comp]) not in train_objects:
                problems.append(f"{part}: object of composition {comp} never trained")
        seen = comps & split.train_compositions
        unseen = comps - split.train_compositions
        if not seen:
            problems.append(f"{part} split contains no seen composition")
        if not unseen:
            problems.append(f"{part} split contains no unseen composition")
    return problems
