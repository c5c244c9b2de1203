import numpy as np
import pytest

from c2clab.errors import InvalidConfig, InvalidInput
from c2clab import numerics as nm
from c2clab.labelspace import LabelSpace
from c2clab.model import (
    C2CModel,
    INFERENCE_MODES,
    ModelConfig,
    ScoreBundle,
    compose_scores,
    pair_score_matrix,
)
from c2clab.numerics import Tensor


def tiny_model(seed=0, **kw):
    cfg = ModelConfig(num_verbs=3, num_objects=4, frame_dim=2 * 3 * 1,
                      hidden_dim=5, feature_dim=6, **kw)
    return C2CModel(cfg, seed=seed)


def full_space(n_v, n_o):
    return LabelSpace(
        verbs=tuple(f"v{i}" for i in range(n_v)),
        objects=tuple(f"o{j}" for j in range(n_o)),
        compositions=tuple((i, j) for i in range(n_v) for j in range(n_o)),
    )


def test_encode_output_shapes():
    model = tiny_model()
    videos = np.random.default_rng(0).normal(size=(2, 4, 2, 3, 1))
    frames, pooled, dyn, stat = model.encode(videos)
    assert frames.shape == (2, 4, 5)
    assert pooled.shape == (2, 5)
    assert dyn.shape == (2, 6)
    assert stat.shape == (2, 6)


def test_encode_rejects_single_frame():
    model = tiny_model()
    with pytest.raises(InvalidInput):
        model.encode(np.zeros((1, 1, 2, 3, 1)))


def test_static_feature_is_exactly_order_invariant():
    model = tiny_model(seed=3)
    rng = np.random.default_rng(1)
    video = rng.normal(size=(1, 6, 2, 3, 1))
    perm = rng.permutation(6)
    _, pooled_a, dyn_a, stat_a = model.encode(video)
    _, pooled_b, dyn_b, stat_b = model.encode(video[:, perm])
    assert np.array_equal(stat_a.data, stat_b.data)
    assert np.array_equal(pooled_a.data, pooled_b.data)
    assert not np.array_equal(dyn_a.data, dyn_b.data)


def test_identical_frames_give_frame_invariant_dynamic_response():
    model = tiny_model(seed=4)
    frame = np.random.default_rng(2).normal(size=(1, 1, 2, 3, 1))
    video = np.repeat(frame, 5, axis=1)
    frames, _, _, _ = model.encode(video)
    h = nm.relu(nm.conv1d_temporal(frames, model.dynamic_encoder.conv1_weight,
                                   model.dynamic_encoder.conv1_bias))
    h = nm.conv1d_temporal(h, model.dynamic_encoder.conv2_weight,
                           model.dynamic_encoder.conv2_bias)
    assert np.allclose(h.data, h.data[:, :1, :], rtol=0, atol=0)


def test_component_scores_match_direct_cosine():
    model = tiny_model(seed=5)
    rng = np.random.default_rng(3)
    dyn = Tensor(rng.normal(size=(4, 6)))
    stat = Tensor(rng.normal(size=(4, 6)))
    sv, so = model.component_scores(dyn, stat)
    ev = model.verb_prototypes.data
    for b in range(4):
        for i in range(3):
            want = dyn.data[b] @ ev[i] / (np.linalg.norm(dyn.data[b]) * np.linalg.norm(ev[i]))
            assert abs(sv.data[b, i] - want) < 1e-12
    assert sv.shape == (4, 3) and so.shape == (4, 4)


def test_component_score_extremes():
    model = tiny_model(seed=6)
    proto = model.verb_prototypes.data[1]
    # orthogonal complement of prototype row 1 within the prototype span
    other = model.verb_prototypes.data[2] - (model.verb_prototypes.data[2] @ proto) * proto \
        / (proto @ proto)
    sv, _ = model.component_scores(Tensor(np.stack([proto, other])),
                                   Tensor(np.ones((2, 6))))
    assert sv.data[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert sv.data[1, 1] == pytest.approx(0.0, abs=1e-12)


def test_conditional_scores_shapes_and_range():
    model = tiny_model(seed=7)
    videos = np.random.default_rng(4).normal(size=(2, 4, 2, 3, 1))
    bundle, *_ = model.forward(videos)
    assert bundle.cond_object_given_verb.shape == (2, 3, 4)
    assert bundle.cond_verb_given_object.shape == (2, 4, 3)
    for cond in (bundle.cond_object_given_verb, bundle.cond_verb_given_object):
        assert np.all(cond.data >= 0.0) and np.all(cond.data <= 1.0)


def test_conditional_affine_endpoints():
    # cos 1 -> 1, cos -1 -> 0, cos 0 -> 0.5
    for cos, want in ((1.0, 1.0), (-1.0, 0.0), (0.0, 0.5)):
        assert (cos + 1.0) * 0.5 == want


def test_single_pair_conditional_matches_manual_forward():
    cfg = ModelConfig(num_verbs=1, num_objects=1, frame_dim=4, hidden_dim=3, feature_dim=2)
    model = C2CModel(cfg, seed=8)
    video = np.random.default_rng(5).normal(size=(1, 3, 2, 2, 1))
    bundle, pooled, _, _ = model.forward(video)

    ref = model.static_reference(pooled).data[0]
    fused = np.concatenate([ref, model.verb_prototypes.data[0]]) @ \
        model.dynamic_path_fuser.weight.data + model.dynamic_path_fuser.bias.data
    proto_o = model.object_prototypes.data[0]
    cos = fused @ proto_o / (np.linalg.norm(fused) * np.linalg.norm(proto_o))
    want = (cos + 1.0) * 0.5
    assert bundle.cond_object_given_verb.data[0, 0, 0] == pytest.approx(want, abs=1e-12)


def manual_bundle(sv, so, cov, cvo):
    return ScoreBundle(Tensor(sv), Tensor(so), Tensor(cov), Tensor(cvo))


def test_compose_modes_hand_values():
    sv = np.zeros((1, 2)); sv[0, 0] = 1.0
    so = np.zeros((1, 2)); so[0, 1] = 1.0
    cov = np.zeros((1, 2, 2)); cov[0, 0, 1] = 0.8
    cvo = np.zeros((1, 2, 2)); cvo[0, 1, 0] = 0.6
    space = full_space(2, 2)
    bundle = manual_bundle(sv, so, cov, cvo)
    comp = space.composition_index(0, 1)

    full = compose_scores(bundle, space, "full").data[0, comp]
    assert full == pytest.approx(0.7, abs=1e-12)  # (1*0.8 + 1*0.6) / 2
    dyn = compose_scores(bundle, space, "dynamic_only").data[0, comp]
    assert dyn == pytest.approx(0.8, abs=1e-12)
    stat = compose_scores(bundle, space, "static_only").data[0, comp]
    assert stat == pytest.approx(0.6, abs=1e-12)
    ka = compose_scores(bundle, space, "knowledge_agnostic").data[0, comp]
    assert ka == pytest.approx(2.0, abs=1e-12)  # 1 + 1
    ind = compose_scores(bundle, space, "independent").data[0, comp]
    assert ind == pytest.approx(1.0, abs=1e-12)
    # independent annihilates when a component score is zero
    other = space.composition_index(1, 1)
    assert compose_scores(bundle, space, "independent").data[0, other] == 0.0


def test_unknown_mode_raises():
    bundle = manual_bundle(np.ones((1, 2)), np.ones((1, 2)),
                           np.ones((1, 2, 2)), np.ones((1, 2, 2)))
    with pytest.raises(InvalidConfig):
        pair_score_matrix(bundle, "both")


def test_full_is_mean_of_paths():
    rng = np.random.default_rng(6)
    bundle = manual_bundle(rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (3, 5)),
                           rng.uniform(0, 1, (3, 4, 5)), rng.uniform(0, 1, (3, 5, 4)))
    space = full_space(4, 5)
    full = compose_scores(bundle, space, "full").data
    dyn = compose_scores(bundle, space, "dynamic_only").data
    stat = compose_scores(bundle, space, "static_only").data
    assert np.array_equal(full, (dyn + stat) * 0.5)


def test_all_ones_conditionals_collapse_paths():
    rng = np.random.default_rng(7)
    sv = rng.uniform(0.05, 1.0, (2, 3))
    so = rng.uniform(0.05, 1.0, (2, 4))
    bundle = manual_bundle(sv, so, np.ones((2, 3, 4)), np.ones((2, 4, 3)))
    space = full_space(3, 4)
    verb_of, obj_of = space.composition_pairs()
    dyn = compose_scores(bundle, space, "dynamic_only").data
    stat = compose_scores(bundle, space, "static_only").data
    full = compose_scores(bundle, space, "full").data
    ka = compose_scores(bundle, space, "knowledge_agnostic").data
    assert np.array_equal(dyn, sv[:, verb_of])
    assert np.array_equal(stat, so[:, obj_of])
    # full becomes the knowledge-agnostic score halved: identical ranking
    assert np.array_equal(full * 2.0, ka)
    assert np.array_equal(np.argsort(full, axis=1), np.argsort(ka, axis=1))


def test_relabeling_permutation_invariance():
    model = tiny_model(seed=9)
    space = full_space(3, 4)
    videos = np.random.default_rng(8).normal(size=(2, 4, 2, 3, 1))
    bundle, *_ = model.forward(videos)
    base = compose_scores(bundle, space, "full").data

    perm = np.array([2, 0, 1])  # relabel verbs
    model_p = tiny_model(seed=9)
    model_p.verb_prototypes.data = model.verb_prototypes.data[perm]
    space_p = LabelSpace(
        verbs=tuple(space.verbs[i] for i in perm),
        objects=space.objects,
        compositions=tuple((int(np.argsort(perm)[v]), o) for v, o in space.compositions),
    )
    bundle_p, *_ = model_p.forward(videos)
    permuted = compose_scores(bundle_p, space_p, "full").data
    assert np.allclose(base, permuted, atol=1e-12)
    assert np.array_equal(np.argmax(base, axis=1), np.argmax(permuted, axis=1))


def test_checkpoint_roundtrip_state():
    model = tiny_model(seed=10)
    state = model.state_dict()
    rebuilt = C2CModel.from_checkpoint_state(state)
    for name, arr in rebuilt.state_dict().items():
        assert np.array_equal(arr, state[name])


def test_forward_gradcheck_small():
    cfg = ModelConfig(num_verbs=2, num_objects=2, frame_dim=4, hidden_dim=3, feature_dim=2)
    model = C2CModel(cfg, seed=11)
    videos = np.random.default_rng(9).normal(size=(2, 3, 2, 2, 1))
    space = full_space(2, 2)
    w = np.random.default_rng(10).normal(size=(2, 4))

    def build():
        bundle, *_ = model.forward(videos)
        return nm.tensor_sum(nm.mul(compose_scores(bundle, space, "full"), Tensor(w)))

    report = nm.gradcheck(build, model.parameters(), eps=1e-5, tol=1e-6)
    assert report.passed, report.as_dict()
