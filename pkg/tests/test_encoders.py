import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import point_grad_check, unit_rows
from jointspace import numcore as nc
from jointspace.encoders import (
    AlignmentModel,
    AnchorEncoder,
    ModelConfig,
    PointEncoderParams,
    ProjectionParams,
    anchor_encode,
    build_anchor_encoders,
    encode_points,
    encode_text_templates,
    project,
)
from jointspace.errors import ConfigInvalid, DimMismatch, EmptyTemplateSet, NearZeroNorm, TooFewPoints
from jointspace.numcore import Tensor

GOLDEN_HEAD = [0.07668051969190687, 0.26125038082590546, -0.0230141109274604, 0.05227366013123272,
               0.08135830477171169, 0.10809776319333164, -0.01249567310051054, -0.02234127175488193]
GOLDEN_NORM = 0.8156003403990884


@pytest.fixture(scope="module")
def encoder():
    return PointEncoderParams.init(64, 64, nc.derive(0, "model.init"))


def test_golden_feature(encoder):
    cloud = nc.derive(0, "test.cloud").uniform(-1, 1, (32, 3))
    feat = encode_points(encoder, cloud).data
    assert feat.shape == (64,)
    np.testing.assert_allclose(feat[:8], GOLDEN_HEAD, rtol=0, atol=1e-13)
    assert np.linalg.norm(feat) == pytest.approx(GOLDEN_NORM, abs=1e-13)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_point_order_invariance(encoder, seed):
    rng = np.random.default_rng(seed)
    cloud = rng.uniform(-1, 1, (rng.integers(8, 40), 3))
    perm = rng.permutation(len(cloud))
    assert np.array_equal(encode_points(encoder, cloud).data, encode_points(encoder, cloud[perm]).data)


def test_batched_matches_single(encoder, rng):
    clouds = rng.uniform(-1, 1, (3, 16, 3))
    batched = encode_points(encoder, clouds).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], encode_points(encoder, clouds[i]).data, atol=1e-14)


def test_zero_weights_give_zero_feature(rng):
    params = PointEncoderParams.init(8, 5, rng)
    for _, t in params.named():
        t.data[...] = 0.0
    assert np.array_equal(encode_points(params, rng.uniform(-1, 1, (10, 3))).data, np.zeros(5))


def test_too_few_points(encoder):
    with pytest.raises(TooFewPoints):
        encode_points(encoder, np.zeros((7, 3)))


def test_wrong_coordinate_width(encoder):
    with pytest.raises(DimMismatch):
        encode_points(encoder, np.zeros((10, 2)))


def test_identity_projection_passes_input_through():
    proj = ProjectionParams.init(4, 4, 2, np.random.default_rng(0), eps=0.0)
    for w, b in proj.linears:
        w.data[...] = np.eye(4)
        b.data[...] = 0.0
    x = np.array([1.0, -1.0, 1.0, -1.0])
    np.testing.assert_allclose(project(proj, x).data, x, atol=1e-15)


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_depth_controls_linear_count(depth):
    proj = ProjectionParams.init(6, 4, depth, np.random.default_rng(0))
    names = [n for n, _ in proj.named()]
    assert sum(n.endswith(".w") for n in names) == depth
    assert sum(n.endswith(".gamma") for n in names) == depth - 1
    assert proj.depth == depth


def test_depth_one_is_affine():
    proj = ProjectionParams.init(6, 4, 1, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal(6)
    w, b = proj.linears[0]
    np.testing.assert_allclose(project(proj, x).data, x @ w.data + b.data, atol=1e-15)
    # affine: f(2x) - f(x) = f(x) - f(0)
    f = lambda v: project(proj, v).data  # noqa: E731
    np.testing.assert_allclose(f(2 * x) - f(x), f(x) - f(np.zeros(6)), atol=1e-14)


def test_projection_dim_mismatch():
    proj = ProjectionParams.init(6, 4, 2, np.random.default_rng(0))
    with pytest.raises(DimMismatch):
        project(proj, np.zeros(5))


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_projection_gradients(depth, rng):
    model = AlignmentModel.init(ModelConfig(hidden=6, raw_dim=5, joint_dim=4, proj_depth=depth), {}, seed=2)
    clouds = rng.uniform(-1, 1, (3, 9, 3))
    target = Tensor(rng.standard_normal((3, 4)))
    errs = point_grad_check(model, lambda: nc.sum_(nc.mul(model.embed_points(clouds), target)))
    assert max(errs.values()) < 1e-5, errs


@pytest.fixture
def anchors(rng):
    basis = np.linalg.qr(rng.standard_normal((12, 4)))[0]
    return basis, build_anchor_encoders(12, basis, {"image": 6, "text": 5, "audio": 8}, rng)


def test_anchor_determinism(anchors, rng):
    _, enc = anchors
    x = rng.standard_normal(6)
    assert anchor_encode(enc["image"], x).tobytes() == anchor_encode(enc["image"], x).tobytes()


def test_anchor_zero_input(anchors):
    with pytest.raises(NearZeroNorm):
        anchor_encode(anchors[1]["image"], np.zeros(6))


def test_anchor_dim_mismatch(anchors):
    with pytest.raises(DimMismatch):
        anchor_encode(anchors[1]["image"], np.zeros(5))


def test_anchor_preserves_cosine(anchors, rng):
    enc = anchors[1]["audio"]
    for _ in range(20):
        a, b = rng.standard_normal((2, 8))
        cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
        assert anchor_encode(enc, a) @ anchor_encode(enc, b) == pytest.approx(cos, abs=1e-12)


def test_anchors_agree_on_shared_latent(anchors, rng):
    basis, enc = anchors
    z = rng.standard_normal(4)
    target = basis @ z / np.linalg.norm(basis @ z)
    for m, e in enc.items():
        np.testing.assert_allclose(anchor_encode(e, e.weight.T @ basis @ z), target, atol=1e-12)


def test_anchor_is_read_only(anchors):
    with pytest.raises(ValueError):
        anchors[1]["image"].weight[0, 0] = 1.0


def test_anchor_width_validated(rng):
    basis = np.linalg.qr(rng.standard_normal((12, 4)))[0]
    with pytest.raises(ConfigInvalid):
        build_anchor_encoders(12, basis, {"image": 3, "text": 5, "audio": 8}, rng)


class TestTemplates:
    def test_single_template(self, anchors, rng):
        enc = anchors[1]["text"]
        t = rng.standard_normal((1, 5))
        np.testing.assert_allclose(encode_text_templates(enc, t), anchor_encode(enc, t[0]), atol=1e-15)

    def test_cancellation(self):
        enc = AnchorEncoder("text", np.eye(3), np.zeros(3))
        with pytest.raises(NearZeroNorm):
            encode_text_templates(enc, np.array([[1.0, 2.0, 0.0], [-1.0, -2.0, 0.0]]))

    def test_empty(self, anchors):
        with pytest.raises(EmptyTemplateSet):
            encode_text_templates(anchors[1]["text"], np.zeros((0, 5)))

    def test_matches_brute_force_mean(self, anchors, rng):
        enc = anchors[1]["text"]
        t = rng.standard_normal((64, 5))
        acc = np.zeros(12)
        for row in t:
            e = enc.weight @ row + enc.bias
            acc += e / np.sqrt(sum(v * v for v in e))
        acc /= 64
        expected = acc / np.sqrt(sum(v * v for v in acc))
        np.testing.assert_allclose(encode_text_templates(enc, t), expected, atol=1e-12)

    def test_order_independent(self, anchors, rng):
        enc = anchors[1]["text"]
        t = rng.standard_normal((10, 5))
        np.testing.assert_allclose(encode_text_templates(enc, t), encode_text_templates(enc, t[::-1]), atol=1e-15)


def test_every_modality_shares_joint_dim(small_corpus, small_model):
    f3d = small_model.embed_points(small_corpus.points[:2]).data
    for m, enc in small_corpus.anchors.items():
        assert enc.joint_dim == f3d.shape[1]


def test_embeddings_are_unit(small_corpus, small_model):
    f3d = small_model.embed_points(small_corpus.points[:5]).data
    np.testing.assert_allclose(np.linalg.norm(f3d, axis=1), 1.0, atol=1e-10)
