#
# Copyright 2026 ERI Toolkit Developers
#
# The source code of this program is made available
# under the terms of the GNU Affero General Public License version 3
# (GNU AGPL V3) as published by the Free Software Foundation.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public
# License along with this program; if not, see
# <http://www.gnu.org/licenses/>.

import numpy as np
import pytest

from affective.eri.toolkit import diffcore as dc
from affective.eri.toolkit.encoders import (
    Architecture,
    Checkpoint,
    FusionMode,
    Hyperparams,
    ModelParams,
    decode_checkpoint,
    encode_checkpoint,
    forward_batch,
    fuse_forward,
    init_params,
    load_checkpoint,
    merge_visual,
    pad_batch,
    prepare_inputs,
    resnet1d_forward,
    resnet_block_count,
    save_checkpoint,
    te_forward,
)
from affective.eri.toolkit.exceptions import (
    FeatureCorruptionError,
    IncompatibleCheckpoint,
    InvalidHyperparams,
    ManifestError,
    ShapeError,
)
from affective.eri.toolkit.featstore import FeatureSequence
from affective.eri.toolkit.objectives import mse_loss

MASK_TOL = 1e-6


def _stream(modality_id, data, step=0.2):
    data = np.asarray(data)
    return FeatureSequence(modality_id, np.arange(data.shape[0]) * step, data)


def _padded(x, extra, rng):
    junk = 100.0 * rng.standard_normal((extra, x.shape[1]))
    mask = np.r_[np.ones(x.shape[0], dtype=bool), np.zeros(extra, dtype=bool)]
    return np.vstack([x, junk]), mask


def test_init_is_deterministic(tiny_hp):
    hp = tiny_hp()
    a = init_params(hp, {"visual": 4}, seed=3)
    assert a.equals(init_params(hp, {"visual": 4}, seed=3))
    assert not a.equals(init_params(hp, {"visual": 4}, seed=4))
    assert a.dtype == np.float32


def test_attention_shapes():
    hp = Hyperparams(hidden_dim=512, num_heads=8, num_layers=1)
    params = init_params(hp, {"visual": 6}, seed=0)
    assert hp.head_dim == 64
    assert params["encoder.0.attn.wq"].shape == (512, 512)
    assert params["front.conv.weight"].shape == (3, 6, 512)
    assert params["head.fc2.weight"].shape == (512, 7)


@pytest.mark.parametrize(
    "changes,field",
    [
        pytest.param(dict(hidden_dim=510, num_heads=8), "hidden_dim", id="divisibility"),
        pytest.param(dict(learning_rate=0.0), "learning_rate", id="learning_rate"),
        pytest.param(dict(batch_size=0), "batch_size", id="batch_size"),
        pytest.param(dict(conv_kernel=4), "conv_kernel", id="even_kernel"),
        pytest.param(dict(dropout=1.0), "dropout", id="dropout"),
        pytest.param(dict(loss_kind="pcc", batch_size=1), "batch_size", id="pcc_batch_of_one"),
        pytest.param(
            dict(architecture="resnet1d", fusion_mode="cross_attention"),
            "fusion_mode",
            id="resnet_cross_attention",
        ),
        pytest.param(dict(fusion_mode="late"), "fusion_mode", id="unknown_mode"),
    ],
)
def test_invalid_hyperparams(changes, field):
    with pytest.raises(InvalidHyperparams) as exc_info:
        Hyperparams(**changes)
    assert exc_info.value.field == field


def test_hyperparams_dict_round_trip(tiny_hp):
    hp = tiny_hp(loss_kind="pcc", fusion_mode="concat")
    assert Hyperparams.from_dict(hp.as_dict()) == hp
    with pytest.raises(InvalidHyperparams) as exc_info:
        Hyperparams.from_dict({**hp.as_dict(), "momentum": 0.9})
    assert exc_info.value.field == "momentum"


def test_missing_modality_rejected(tiny_hp):
    with pytest.raises(InvalidHyperparams):
        init_params(tiny_hp(fusion_mode="concat"), {"visual": 4}, seed=0)


def test_te_forward_output(tiny_hp):
    params = init_params(tiny_hp(dropout=0.3), {"visual": 4}, seed=0)
    x = np.random.default_rng(0).standard_normal((6, 4))
    out = te_forward(params, x)
    assert len(out) == 7
    assert all(0.0 < v < 1.0 for v in out.intensities)
    assert te_forward(params, x).intensities == out.intensities


def test_te_forward_mask_invariance(tiny_hp):
    rng = np.random.default_rng(1)
    for seed in range(50):
        hp = tiny_hp(num_layers=int(rng.integers(1, 3)), positional_encoding=bool(seed % 2))
        params = init_params(hp, {"visual": 4}, seed=seed)
        x = rng.standard_normal((int(rng.integers(1, 8)), 4))
        padded, mask = _padded(x, 3, rng)
        np.testing.assert_allclose(
            te_forward(params, padded, mask).as_array(),
            te_forward(params, x).as_array(),
            atol=MASK_TOL,
        )


def test_te_forward_errors(tiny_hp):
    params = init_params(tiny_hp(), {"visual": 4}, seed=0)
    with pytest.raises(ShapeError):
        te_forward(params, np.zeros((5, 4)), np.zeros(4, dtype=bool))
    with pytest.raises(ShapeError):
        te_forward(params, np.zeros(4))
    with pytest.raises(ShapeError):
        te_forward(params, np.zeros((5, 3)))
    resnet = init_params(tiny_hp(architecture="resnet1d"), {"visual": 4}, seed=0)
    with pytest.raises(ShapeError) as exc_info:
        te_forward(resnet, np.zeros((5, 4)))
    assert exc_info.value.field == "architecture"


def test_resnet_has_seven_blocks(tiny_hp):
    params = init_params(tiny_hp(architecture="resnet1d"), {"visual": 4}, seed=0)
    assert resnet_block_count(params) == 7
    assert params.architecture is Architecture.RESNET1D
    widths = (4, 4, 6, 6, 8, 8, 8)
    projected = init_params(
        tiny_hp(architecture="resnet1d", resnet_widths=widths), {"visual": 4}, seed=0
    )
    assert resnet_block_count(projected) == 7
    assert [n for n in projected.names if n.endswith("proj.weight")] == [
        "blocks.2.proj.weight",
        "blocks.4.proj.weight",
    ]


def test_resnet_forward(tiny_hp):
    params = init_params(tiny_hp(architecture="resnet1d"), {"visual": 4}, seed=0)
    x = np.random.default_rng(2).standard_normal((9, 4))
    out = resnet1d_forward(params, x)
    assert len(out) == 7
    padded, mask = _padded(x, 3, np.random.default_rng(3))
    np.testing.assert_allclose(
        resnet1d_forward(params, padded, mask=mask).as_array(), out.as_array(), atol=MASK_TOL
    )
    with pytest.raises(ShapeError):
        resnet1d_forward(init_params(tiny_hp(), {"visual": 4}, seed=0), x)


def test_resnet_zero_branches_reduce_to_stem(tiny_hp):
    params = init_params(tiny_hp(architecture="resnet1d"), {"visual": 4}, seed=0)
    params = params.with_tensors(
        {
            name: np.zeros_like(arr) if name.startswith("blocks.") else arr
            for name, arr in params.tensors.items()
        }
    )
    x = np.random.default_rng(4).standard_normal((6, 4)).astype(np.float32)
    stem = dc.relu(dc.conv1d(dc.Tensor(x), params["stem.conv.weight"], params["stem.conv.bias"]))
    pooled = stem.data.mean(axis=0)
    hidden = dc.gelu(dc.Tensor(pooled @ params["head.fc1.weight"] + params["head.fc1.bias"]))
    expected = dc.sigmoid(
        dc.Tensor(hidden.data @ params["head.fc2.weight"] + params["head.fc2.bias"])
    )
    np.testing.assert_allclose(resnet1d_forward(params, x).as_array(), expected.data, atol=1e-6)


def test_fuse_visual_only_equals_te(tiny_hp):
    params = init_params(tiny_hp(), {"visual": 4}, seed=5)
    visual = _stream("visual", np.random.default_rng(5).standard_normal((7, 4)))
    np.testing.assert_allclose(
        fuse_forward(params, visual, None).as_array(),
        te_forward(params, visual.data).as_array(),
        atol=1e-7,
    )


@pytest.mark.parametrize(
    "mode", [pytest.param(m, id=m.value) for m in FusionMode],
)
def test_fuse_output_length(tiny_hp, mode):
    rng = np.random.default_rng(6)
    params = init_params(tiny_hp(fusion_mode=mode), {"visual": 4, "audio": 3}, seed=0)
    visual = _stream("visual", rng.standard_normal((5, 4)))
    audio = _stream("audio", rng.standard_normal((8, 3)), step=0.1)
    out = fuse_forward(params, visual, audio)
    assert len(out) == 7
    assert np.all(np.isfinite(out.as_array()))


def test_fuse_concat_ablation_matches_visual_only(tiny_hp):
    rng = np.random.default_rng(7)
    hp = tiny_hp(fusion_mode="concat")
    for seed in range(5):
        concat_params = init_params(hp, {"visual": 4, "audio": 3}, seed=seed)
        front = concat_params["front.conv.weight"].copy()
        front[:, 4:, :] = 0.0
        concat_params = concat_params.with_tensors(
            {**concat_params.tensors, "front.conv.weight": front}
        )
        visual_params = ModelParams(
            Architecture.TE,
            hp.replace(fusion_mode="visual_only"),
            {**concat_params.tensors, "front.conv.weight": front[:, :4, :]},
        )
        visual = _stream("visual", rng.standard_normal((6, 4)))
        audio = _stream("audio", np.zeros((6, 3)))
        np.testing.assert_allclose(
            fuse_forward(concat_params, visual, audio).as_array(),
            fuse_forward(visual_params, visual, None).as_array(),
            atol=MASK_TOL,
        )


def test_fuse_errors(tiny_hp):
    params = init_params(tiny_hp(fusion_mode="concat"), {"visual": 4, "audio": 3}, seed=0)
    visual = _stream("visual", np.ones((3, 4)))
    with pytest.raises(ManifestError):
        fuse_forward(params, visual, None)
    with pytest.raises(ShapeError) as exc_info:
        fuse_forward(params, visual, None, mode="cross_attention")
    assert exc_info.value.field == "fusion_mode"


def test_cross_attention_mask_invariance(tiny_hp):
    rng = np.random.default_rng(8)
    params = init_params(tiny_hp(fusion_mode="cross_attention"), {"visual": 4, "audio": 3}, 0)
    assert "visual.encoder.0.ln_kv.gamma" in params
    assert "audio.front.conv.weight" in params
    for _ in range(10):
        xv = rng.standard_normal((int(rng.integers(1, 7)), 4))
        xa = rng.standard_normal((int(rng.integers(1, 7)), 3))
        plain = pad_batch([{"visual": xv, "audio": xa}])
        pv, mv = _padded(xv, 3, rng)
        pa, ma = _padded(xa, 2, rng)
        padded = {"visual": (pv[None], mv[None]), "audio": (pa[None], ma[None])}
        np.testing.assert_allclose(
            forward_batch(params, padded).data,
            forward_batch(params, plain).data,
            atol=MASK_TOL,
        )


def test_batch_matches_single_predictions(tiny_hp):
    rng = np.random.default_rng(9)
    params = init_params(tiny_hp(), {"visual": 4}, seed=1)
    xs = [rng.standard_normal((n, 4)) for n in (3, 7, 5)]
    batched = forward_batch(params, pad_batch([{"x": x} for x in xs])).data
    for row, x in zip(batched, xs):
        np.testing.assert_allclose(row, te_forward(params, x).as_array(), atol=MASK_TOL)


def test_prepare_inputs(tiny_hp):
    hp = tiny_hp(visual_streams=("face", "pose"), fusion_mode="concat")
    streams = {
        "face": FeatureSequence.empty("face", 3),
        "pose": _stream("pose", np.ones((4, 2))),
        "audio": _stream("audio", np.ones((6, 5))),
    }
    inputs = prepare_inputs(hp, streams)
    assert inputs["x"].shape == (1, 10)
    with pytest.raises(ManifestError):
        prepare_inputs(hp, {"face": streams["face"]})


def test_merge_visual_empty_stream_becomes_zero_frame():
    merged = merge_visual([FeatureSequence.empty("visual", 3)])
    assert merged.frames == 1
    assert merged.data.tolist() == [[0.0, 0.0, 0.0]]


@pytest.mark.parametrize(
    "changes,dims",
    [
        pytest.param({}, {"visual": 3}, id="te"),
        pytest.param({"fusion_mode": "cross_attention"}, {"visual": 3, "audio": 2}, id="cross"),
        pytest.param(
            {"architecture": "resnet1d", "resnet_widths": (4, 4, 4, 6, 6, 6, 6)},
            {"visual": 3},
            id="resnet1d",
        ),
    ],
)
def test_end_to_end_gradient(tiny_hp, changes, dims):
    hp = tiny_hp(dropout=0.0, **changes)
    model_dims = _model_dims(hp, dims)
    rng = np.random.default_rng(12)
    for seed in range(10):
        params = init_params(hp, dims, seed=seed, dtype=np.float64)
        lengths = rng.integers(1, 6, size=2)
        items = [
            {k: rng.standard_normal((int(t), d)) for k, d in model_dims.items()} for t in lengths
        ]
        batch = pad_batch(items, dtype=np.float64)
        loss = _batch_loss(params, batch, rng.random((2, 7)))
        assert dc.grad_check(loss, [params[n] for n in params.names], seed=seed) < 1e-4, seed


def _batch_loss(params, batch, target):
    names = params.names

    def loss(*leaves):
        out = forward_batch(params, batch, weights=dict(zip(names, leaves)))
        return mse_loss(out, target)

    return loss


def _model_dims(hp, dims):
    if hp.fusion_mode is FusionMode.CROSS_ATTENTION:
        return dims
    return {"x": dims["visual"]}


@pytest.fixture
def checkpoint(tiny_hp):
    params = init_params(tiny_hp(fusion_mode="concat"), {"visual": 4, "audio": 3}, seed=2)
    return Checkpoint(params, {"visual": 4, "audio": 3}, 2, {"run_id": "abc"})


def test_checkpoint_round_trip(tmp_path, checkpoint):
    path = tmp_path / "model.eric"
    save_checkpoint(checkpoint, path)
    loaded = load_checkpoint(path)
    assert loaded.params.equals(checkpoint.params)
    assert loaded.header() == checkpoint.header()
    assert loaded.hp == checkpoint.hp
    assert loaded.metadata == {"run_id": "abc"}
    assert path.read_bytes()[:4] == b"ERIC"
    save_checkpoint(loaded, tmp_path / "again.eric")
    assert (tmp_path / "again.eric").read_bytes() == path.read_bytes()


def test_checkpoint_stores_32_bit(tiny_hp):
    params = init_params(tiny_hp(), {"visual": 4}, seed=0, dtype=np.float64)
    loaded = decode_checkpoint(encode_checkpoint(Checkpoint(params, {"visual": 4}, 0)))
    assert loaded.params.dtype == np.float32
    assert loaded.params.equals(params.astype(np.float32))


def test_checkpoint_corruption(checkpoint):
    raw = encode_checkpoint(checkpoint)
    with pytest.raises(FeatureCorruptionError):
        decode_checkpoint(raw[:-2])
    with pytest.raises(FeatureCorruptionError):
        decode_checkpoint(raw + b"\0")
    with pytest.raises(IncompatibleCheckpoint):
        decode_checkpoint(b"XXXX" + raw[4:])


def test_checkpoint_compatibility(checkpoint):
    checkpoint.check_compatible({"visual": 4, "audio": 3, "other": 9})
    with pytest.raises(IncompatibleCheckpoint) as exc_info:
        checkpoint.check_compatible({"visual": 4, "audio": 5})
    assert exc_info.value.field == "audio"
