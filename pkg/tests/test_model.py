"""Model stack: encoders, column interaction, decoders, structural invariants."""

import numpy as np
import pytest

from tabframe import (
    EmbedderRegistry,
    EmbedderSpec,
    HashStubEmbedder,
    ModelConfig,
    RawTable,
    Schema,
    SemanticType,
    TabularModel,
    TaskType,
    frame_row_select,
    materialize,
    model_from_checkpoint,
    save_checkpoint,
)
from tabframe import autodiff as ad
from tabframe.errors import SchemaError, ShapeMismatchError
from tabframe.model import (
    decode,
    encode_categorical,
    encode_multicategorical,
    encode_numerical,
    interaction_layer,
)
from tabframe.train import bce_with_logits


def mixed_frame(n=4, seed=0, missing=False):
    """Five columns, five semantic types (plus binary target)."""
    rng = np.random.default_rng(seed)
    num = [None if missing and i == 0 else str(rng.uniform(-2, 2)) for i in range(n)]
    cat = [None if missing and i == 1 else rng.choice(["a", "b", "c"]) for i in range(n)]
    mc = [None if missing and i == 2 else "|".join(rng.choice(["u", "v", "w"], rng.integers(1, 3), replace=False)) for i in range(n)]
    ts = [None if missing and i == 3 else "2023-07-0%dT0%d:30:00Z" % (rng.integers(1, 9), rng.integers(0, 9)) for i in range(n)]
    txt = [None if missing and i == 0 else rng.choice(["lorem ipsum", "dolor sit"]) for i in range(n)]
    table = RawTable(
        columns=[
            ("x", num), ("c", cat), ("m", mc), ("t", ts), ("d", txt),
            ("y", [str(int(rng.random() > 0.5)) for _ in range(n)]),
        ],
        num_rows=n,
    )
    schema = Schema(
        columns=(
            ("x", SemanticType.numerical),
            ("c", SemanticType.categorical),
            ("m", SemanticType.multicategorical),
            ("t", SemanticType.timestamp),
            ("d", SemanticType.text_embedded),
            ("y", SemanticType.numerical),
        ),
        target="y",
        task=TaskType.binary_classification,
    )
    reg = EmbedderRegistry(default=HashStubEmbedder(EmbedderSpec(kind="hash_stub", dim=5)))
    return materialize(table, schema, reg)


def small_config(**kw):
    base = dict(channels=8, num_layers=1, num_heads=2, out_channels=6)
    base.update(kw)
    return ModelConfig(**base)


class TestModelConfig:
    def test_divisibility(self):
        with pytest.raises(SchemaError):
            ModelConfig(channels=10, num_heads=4)

    def test_cls_needs_interaction(self):
        with pytest.raises(SchemaError):
            ModelConfig(interaction="none", num_layers=0, decoder="cls")

    def test_none_interaction_forbids_layers(self):
        with pytest.raises(SchemaError):
            ModelConfig(interaction="none", num_layers=2)

    def test_unknown_key_rejected(self):
        with pytest.raises(SchemaError):
            ModelConfig.from_dict({"channels": 8, "bogus": 1})

    def test_round_trip(self):
        cfg = small_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestNumericalEncoder:
    def test_missing_value_embeds_to_bias(self):
        frame = mixed_frame(missing=True)
        model = TabularModel.build(small_config(), frame, seed=0)
        out = encode_numerical(frame, model.params, model.layout, model.config)
        bias = model.params["enc.numerical.x.b"].data
        assert np.allclose(out.data[0, 0], bias)  # row 0 is the NaN row

    def test_constant_column_identical_embeddings(self):
        table = RawTable(columns=[("x", ["5", "5", "5"])], num_rows=3)
        schema = Schema(columns=(("x", SemanticType.numerical),))
        frame = materialize(table, schema)
        model = TabularModel.build(small_config(), frame, seed=0)
        out = encode_numerical(frame, model.params, model.layout, model.config)
        assert np.array_equal(out.data[0], out.data[1])
        assert np.array_equal(out.data[1], out.data[2])

    def test_normalization_value(self):
        # x=12, mean 10, std 2 -> z = 1.0, so output = w + b exactly
        table = RawTable(columns=[("x", ["8", "12"])], num_rows=2)
        schema = Schema(columns=(("x", SemanticType.numerical),))
        frame = materialize(table, schema)  # mean 10, population std 2
        assert frame.stats["x"].mean == 10.0 and frame.stats["x"].std == 2.0
        model = TabularModel.build(small_config(), frame, seed=1)
        out = encode_numerical(frame, model.params, model.layout, model.config)
        w = model.params["enc.numerical.x.w"].data
        b = model.params["enc.numerical.x.b"].data
        assert np.allclose(out.data[1, 0], w + b)

    def test_periodic_mode_shapes_and_grads(self):
        frame = mixed_frame()
        cfg = small_config(numerical_encoder="periodic")
        model = TabularModel.build(cfg, frame, seed=0)
        out = encode_numerical(frame, model.params, model.layout, cfg)
        assert out.shape == (frame.num_rows, 1, cfg.channels)
        tensors = [
            model.params["enc.numerical.x.freq"],
            model.params["enc.numerical.x.w"],
        ]
        err = ad.grad_check_tensors(
            lambda: _sum_all(encode_numerical(frame, model.params, model.layout, cfg)),
            tensors,
        )
        assert err <= 1e-4


def _sum_all(t):
    out = t
    while out.ndim > 0:
        out = ad.mean_axis(out, 0)
    return out


class TestCategoricalEncoder:
    def test_lookup_and_sentinel(self):
        frame = mixed_frame(missing=True)
        model = TabularModel.build(small_config(), frame, seed=0)
        out = encode_categorical(frame, model.params, model.layout, model.config)
        table = model.params["enc.categorical.c.table"].data
        cat_block = frame.blocks[SemanticType.categorical][:, 0]
        k = frame.stats["c"].num_categories
        for i, idx in enumerate(cat_block):
            expected = table[k] if idx < 0 else table[idx]
            assert np.array_equal(out.data[i, 0], expected)

    def test_equal_indices_equal_embeddings(self):
        table = RawTable(columns=[("c", ["p", "q", "p"])], num_rows=3)
        schema = Schema(columns=(("c", SemanticType.categorical),))
        frame = materialize(table, schema)
        model = TabularModel.build(small_config(), frame, seed=0)
        out = encode_categorical(frame, model.params, model.layout, model.config)
        assert np.array_equal(out.data[0], out.data[2])
        assert not np.array_equal(out.data[0], out.data[1])


class TestMulticategoricalEncoder:
    def build(self, cells):
        table = RawTable(columns=[("m", cells)], num_rows=len(cells))
        schema = Schema(columns=(("m", SemanticType.multicategorical),))
        frame = materialize(table, schema)
        model = TabularModel.build(small_config(), frame, seed=3)
        out = encode_multicategorical(frame, model.params, model.layout, model.config)
        return frame, model.params["enc.multicategorical.m.table"].data, out.data

    def test_singleton_pair_empty(self):
        frame, table, out = self.build(["a", "a|b", None])
        assert np.array_equal(out[0, 0], table[0])  # singleton -> row
        assert np.allclose(out[1, 0], (table[0] + table[1]) / 2.0)  # direct row-mean oracle
        assert np.array_equal(out[2, 0], np.zeros(8))  # empty -> zero vector


class TestTimestampEncoder:
    def test_equal_and_missing(self):
        cells = ["2021-05-04T10:00:00Z", "2021-05-04T10:00:00Z", None, None]
        table = RawTable(columns=[("t", cells)], num_rows=4)
        schema = Schema(columns=(("t", SemanticType.timestamp),))
        frame = materialize(table, schema)
        model = TabularModel.build(small_config(), frame, seed=0)
        _, _ = model.forward(frame)
        from tabframe.model import encode_timestamp

        out = encode_timestamp(frame, model.params, model.layout, model.config).data
        assert np.array_equal(out[0], out[1])  # equal timestamps
        assert np.array_equal(out[2], out[3])  # both missing hit sentinel rows
        assert not np.array_equal(out[0], out[2])

    def test_pinned_parameter_fixture(self):
        # single present timestamp; compare against a by-hand composition
        cells = ["2024-03-15T10:30:00Z", "2024-04-01T00:00:00Z"]
        table = RawTable(columns=[("t", cells)], num_rows=2)
        schema = Schema(columns=(("t", SemanticType.timestamp),))
        frame = materialize(table, schema)
        model = TabularModel.build(small_config(), frame, seed=9)
        from tabframe.model import _TS_NUMERIC_COMPONENTS, encode_timestamp

        out = encode_timestamp(frame, model.params, model.layout, model.config).data
        comps = frame.blocks[SemanticType.timestamp][0, 0]
        st = frame.stats["t"]
        expected = (
            model.params["enc.timestamp.t.month"].data[comps[1] - 1]
            + model.params["enc.timestamp.t.dow"].data[comps[3]]
        )
        for idx, name in _TS_NUMERIC_COMPONENTS:
            z = (comps[idx] - st.mean[idx]) / max(st.std[idx], 1e-12)
            expected = expected + (
                z * model.params[f"enc.timestamp.t.{name}.w"].data
                + model.params[f"enc.timestamp.t.{name}.b"].data
            )
        assert np.allclose(out[0, 0], expected, atol=1e-12)


class TestEmbeddingEncoder:
    def build_frame(self, vectors):
        table = RawTable(columns=[("v", vectors)], num_rows=len(vectors))
        schema = Schema(columns=(("v", SemanticType.embedding),))
        return materialize(table, schema)

    def test_zero_in_bias_out(self):
        frame = self.build_frame([np.zeros(3), np.ones(3)])
        model = TabularModel.build(small_config(), frame, seed=0)
        from tabframe.model import encode_embedding_block

        out = encode_embedding_block(frame, model.params, model.layout, model.config)
        assert np.allclose(out.data[0, 0], model.params["enc.embedding.v.b"].data)

    def test_identity_passthrough(self):
        frame = self.build_frame([np.arange(8.0), -np.arange(8.0)])
        model = TabularModel.build(small_config(), frame, seed=0)
        model.params["enc.embedding.v.w"].data = np.eye(8)
        model.params["enc.embedding.v.b"].data = np.zeros(8)
        from tabframe.model import encode_embedding_block

        out = encode_embedding_block(frame, model.params, model.layout, model.config)
        assert np.array_equal(out.data[:, 0, :], frame.blocks[SemanticType.embedding].values)

    def test_matmul_oracle(self):
        rng = np.random.default_rng(5)
        vecs = [rng.standard_normal(3) for _ in range(2)]
        frame = self.build_frame(vecs)
        model = TabularModel.build(small_config(), frame, seed=2)
        from tabframe.model import encode_embedding_block

        out = encode_embedding_block(frame, model.params, model.layout, model.config)
        w = model.params["enc.embedding.v.w"].data
        b = model.params["enc.embedding.v.b"].data
        expected = np.stack(vecs) @ w + b
        assert np.allclose(out.data[:, 0, :], expected, atol=1e-12)


def _manual_layer_norm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


class TestInteractionLayer:
    def test_single_column_reduces_to_value_path(self):
        # with C=1 the attention softmax is 1.0, so the attention sublayer is
        # exactly the value projection followed by the output projection
        frame = mixed_frame()
        cfg = small_config()
        model = TabularModel.build(cfg, frame, seed=4)
        p = {k: v.data for k, v in model.params.items()}
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 1, cfg.channels))

        out = interaction_layer(ad.constant(x), model.params, 0, cfg).data

        h = _manual_layer_norm(x) * p["layers.0.ln1.gain"] + p["layers.0.ln1.bias"]
        v = h @ p["layers.0.attn.wv"] + p["layers.0.attn.bv"]
        x1 = x + (v @ p["layers.0.attn.wo"] + p["layers.0.attn.bo"])
        h2 = _manual_layer_norm(x1) * p["layers.0.ln2.gain"] + p["layers.0.ln2.bias"]
        ff = np.maximum(h2 @ p["layers.0.ff.w1"] + p["layers.0.ff.b1"], 0.0)
        expected = x1 + (ff @ p["layers.0.ff.w2"] + p["layers.0.ff.b2"])
        assert np.allclose(out, expected, atol=1e-12)

    def test_permutation_equivariance(self):
        frame = mixed_frame()
        cfg = small_config()
        model = TabularModel.build(cfg, frame, seed=5)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 6, cfg.channels))
        perm = rng.permutation(6)
        out = interaction_layer(ad.constant(x), model.params, 0, cfg).data
        out_perm = interaction_layer(ad.constant(x[:, perm]), model.params, 0, cfg).data
        assert np.max(np.abs(out_perm - out[:, perm])) <= 1e-10

    def test_positional_distinguishes_equal_columns(self):
        frame = mixed_frame()
        cfg = small_config(interaction="self_attention_positional")
        model = TabularModel.build(cfg, frame, seed=6)
        # two identical columns; distinct position vectors must separate them
        x = np.tile(np.random.default_rng(2).standard_normal((3, 1, cfg.channels)), (1, 5, 1))
        out = interaction_layer(ad.constant(x), model.params, 0, cfg).data
        assert not np.allclose(out[:, 0], out[:, 1])

    def test_rows_never_attend_across_rows(self):
        frame = mixed_frame()
        cfg = small_config()
        model = TabularModel.build(cfg, frame, seed=7)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 5, cfg.channels))
        out = interaction_layer(ad.constant(x), model.params, 0, cfg).data
        x2 = x.copy()
        x2[2] = rng.standard_normal((5, cfg.channels))
        out2 = interaction_layer(ad.constant(x2), model.params, 0, cfg).data
        assert np.array_equal(out[0], out2[0])
        assert np.array_equal(out[3], out2[3])


class TestDecode:
    def test_mean_pool_of_constant_columns_is_identity(self):
        cfg = ModelConfig(channels=4, num_layers=0, num_heads=1, out_channels=4,
                          interaction="none", decoder="mean_pool", head="none")
        frame = mixed_frame()
        model = TabularModel.build(cfg, frame, seed=0)
        model.params["dec.w"].data = np.eye(4)
        model.params["dec.b"].data = np.zeros(4)
        v = np.array([1.0, -2.0, 3.0, 0.5])
        x = np.tile(v, (2, 5, 1))
        z = decode(ad.constant(x), model.params, cfg).data
        assert np.allclose(z, np.tile(v, (2, 1)), atol=1e-12)

    def test_cls_with_no_layers_ignores_features(self):
        cfg = small_config(num_layers=0, decoder="cls", head="none")
        f1 = mixed_frame(seed=0)
        f2 = mixed_frame(seed=42)  # different feature values, same columns
        model = TabularModel.build(cfg, f1, seed=0)
        z1, _ = model.forward(f1)
        z2, _ = model.forward(f2)
        assert np.array_equal(z1.data, z2.data)

    def test_attention_pool_with_uniform_logits_equals_mean_pool(self):
        frame = mixed_frame()
        cfg_attn = small_config(decoder="attention_pool", head="none")
        cfg_mean = small_config(decoder="mean_pool", head="none")
        m_attn = TabularModel.build(cfg_attn, frame, seed=8)
        m_mean = TabularModel.build(cfg_mean, frame, seed=8)
        m_attn.params["dec.query"].data = np.zeros(cfg_attn.channels)  # uniform weights
        m_mean.params["dec.w"].data = m_attn.params["dec.w"].data.copy()
        m_mean.params["dec.b"].data = m_attn.params["dec.b"].data.copy()
        z_attn, _ = m_attn.forward(frame)
        z_mean, _ = m_mean.forward(frame)
        assert np.allclose(z_attn.data, z_mean.data, atol=1e-12)

    def test_flatten_mlp_shape(self):
        frame = mixed_frame()
        cfg = ModelConfig(channels=8, num_layers=0, num_heads=2, out_channels=3,
                          interaction="none", decoder="flatten_mlp", head="none")
        model = TabularModel.build(cfg, frame, seed=0)
        z, pred = model.forward(frame)
        assert z.shape == (frame.num_rows, 3)
        assert pred is None


class TestModelForward:
    def test_batch_of_one_equals_full_batch(self):
        frame = mixed_frame(n=6, seed=10)
        for decoder in ("mean_pool", "attention_pool", "cls", "flatten_mlp"):
            model = TabularModel.build(small_config(decoder=decoder), frame, seed=11)
            z_full, pred_full = model.forward(frame)
            for i in range(frame.num_rows):
                single = frame_row_select(frame, [i])
                z_one, pred_one = model.forward(single)
                assert np.array_equal(z_full.data[i], z_one.data[0]), decoder
                assert pred_full.data[i] == pred_one.data[0], decoder

    def test_row_independence(self):
        frame = mixed_frame(n=5, seed=12)
        model = TabularModel.build(small_config(), frame, seed=13)
        z, _ = model.forward(frame)
        # alter row 2 by swapping in a different row's content
        altered = frame_row_select(frame, [0, 1, 4, 3, 4])
        z2, _ = model.forward(altered)
        for i in (0, 1, 3):
            assert np.array_equal(z.data[i], z2.data[i])

    def test_no_nan_with_all_sentinels(self):
        frame = mixed_frame(n=4, seed=14, missing=True)
        for decoder in ("mean_pool", "attention_pool", "cls", "flatten_mlp"):
            for interaction in ("self_attention", "self_attention_positional"):
                model = TabularModel.build(
                    small_config(decoder=decoder, interaction=interaction),
                    frame, seed=15,
                )
                z, pred = model.forward(frame)
                assert np.isfinite(z.data).all()
                assert np.isfinite(pred.data).all()

    def test_zeroing_column_shifts_mean_pool_by_its_mean_contribution(self):
        frame = mixed_frame(n=4, seed=16)
        cfg = ModelConfig(channels=8, num_layers=0, num_heads=2, out_channels=4,
                          interaction="none", decoder="mean_pool", head="none")
        model = TabularModel.build(cfg, frame, seed=17)
        contribution = encode_categorical(frame, model.params, model.layout, cfg).data[:, 0, :]
        z1, _ = model.forward(frame)
        k = frame.stats["c"].num_categories
        table = model.params["enc.categorical.c.table"]
        table.data = np.zeros_like(table.data)
        z2, _ = model.forward(frame)
        c = frame.num_feature_columns
        delta = (contribution / c) @ model.params["dec.w"].data
        assert np.allclose(z1.data - z2.data, delta, atol=1e-12)

    def test_gradients_flow_through_whole_model(self):
        frame = mixed_frame(n=4, seed=18)
        model = TabularModel.build(small_config(), frame, seed=19)

        def f():
            _, pred = model.forward(frame)
            return bce_with_logits(pred, frame.target)

        err = ad.grad_check_tensors(f, list(model.params.values()), eps=1e-4)
        assert err <= 1e-4

    def test_wrong_frame_rejected(self):
        f1 = mixed_frame(n=4, seed=20)
        model = TabularModel.build(small_config(), f1, seed=0)
        table = RawTable(columns=[("x", ["1", "2"])], num_rows=2)
        other = materialize(table, Schema(columns=(("x", SemanticType.numerical),)))
        with pytest.raises(ShapeMismatchError):
            model.forward(other)


def permuted_within_types(frame, rng):
    """A copy of the frame with columns shuffled inside each semantic type,
    plus the permutation of the type-major encode order."""
    from tabframe.frame import TensorFrame
    from tabframe.ragged import MultiEmbeddingTensor, MultiNestedTensor

    new_blocks, new_names = {}, {}
    for stype, block in frame.blocks.items():
        names = frame.column_names_by_stype[stype]
        perm = rng.permutation(len(names))
        new_names[stype] = [names[p] for p in perm]
        if isinstance(block, MultiNestedTensor):
            nested = block.to_nested()
            new_blocks[stype] = MultiNestedTensor.from_nested(
                [[row[p] for p in perm] for row in nested], num_cols=len(names)
            )
        elif isinstance(block, MultiEmbeddingTensor):
            new_blocks[stype] = MultiEmbeddingTensor.from_columns(
                [block.column(p) for p in perm]
            )
        else:
            new_blocks[stype] = block[:, perm] if block.ndim == 2 else block[:, perm, :]
    # schema with feature columns reordered to match the new within-type order
    order = {name: i for i, name in enumerate(n for ns in new_names.values() for n in ns)}
    feature_cols = sorted(
        frame.schema.feature_columns,
        key=lambda pair: order.get(pair[0], 0),
    )
    target_cols = [(n, s) for n, s in frame.schema.columns if n == frame.schema.target]
    schema = type(frame.schema)(
        columns=tuple(feature_cols) + tuple(target_cols),
        target=frame.schema.target,
        task=frame.schema.task,
    )
    return TensorFrame(
        num_rows=frame.num_rows,
        blocks=new_blocks,
        column_names_by_stype=new_names,
        stats=frame.stats,
        schema=schema,
        category_maps=frame.category_maps,
        target=frame.target,
    )


class TestPermutationHarness:
    @pytest.mark.parametrize("interaction", ["self_attention", "self_attention_positional"])
    def test_permuting_columns_and_parameters_preserves_z(self, interaction):
        rng = np.random.default_rng(21)
        table = RawTable(
            columns=[
                ("x1", ["0.5", "1.0", "-1.0"]),
                ("x2", ["2.0", "0.0", "1.5"]),
                ("x3", ["-0.25", "0.75", "0.1"]),
                ("c1", ["a", "b", "a"]),
                ("c2", ["p", "p", "q"]),
            ],
            num_rows=3,
        )
        schema = Schema(
            columns=(
                ("x1", SemanticType.numerical),
                ("x2", SemanticType.numerical),
                ("x3", SemanticType.numerical),
                ("c1", SemanticType.categorical),
                ("c2", SemanticType.categorical),
            )
        )
        frame = materialize(table, schema)
        cfg = small_config(interaction=interaction, decoder="mean_pool", head="none")
        model = TabularModel.build(cfg, frame, seed=22)
        z, _ = model.forward(frame)

        pframe = permuted_within_types(frame, rng)
        pmodel = TabularModel.build(cfg, pframe, seed=22)
        # copy parameters across: per-column params match by name; positional
        # vectors follow the column permutation of the encode order
        old_order = model.layout.encode_order
        new_order = pmodel.layout.encode_order
        perm = [old_order.index(name) for name in new_order]
        for name, p in model.params.items():
            if name.endswith(".pos"):
                pmodel.params[name].data = p.data[perm].copy()
            else:
                pmodel.params[name].data = p.data.copy()
        z_perm, _ = pmodel.forward(pframe)
        assert np.max(np.abs(z_perm.data - z.data)) <= 1e-10


class TestCheckpoints:
    def test_round_trip_preserves_forward(self, tmp_path):
        frame = mixed_frame(n=5, seed=23)
        model = TabularModel.build(small_config(), frame, seed=24)
        z1, p1 = model.forward(frame)
        path = tmp_path / "model.tfpm"
        save_checkpoint(model, path)
        restored = model_from_checkpoint(path, frame)
        z2, p2 = restored.forward(frame)
        assert np.array_equal(z1.data, z2.data)
        assert np.array_equal(p1.data, p2.data)

    def test_checkpoint_rejects_different_frame(self, tmp_path):
        frame = mixed_frame(n=4, seed=25)
        model = TabularModel.build(small_config(), frame, seed=0)
        path = tmp_path / "model.tfpm"
        save_checkpoint(model, path)
        table = RawTable(columns=[("x", ["1", "2"])], num_rows=2)
        other = materialize(table, Schema(columns=(("x", SemanticType.numerical),)))
        with pytest.raises(ShapeMismatchError):
            model_from_checkpoint(path, other)
