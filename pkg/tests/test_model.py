"""Transformer forward/backward correctness.

Two independent oracles: a straight-line per-position recomputation of the
whole forward pass (explicit loops, no shared code paths), and central
finite differences for every gradient.
"""

import numpy as np
import pytest

from patchforge import model as m
from patchforge.checkpoint import load_checkpoint, save_checkpoint
from patchforge.codec import BOS, EOS, PAD
from patchforge.errors import DataError, NumericsError


def micro_config(**overrides):
    defaults = dict(
        vocab_size=16, d_model=8, n_heads=2, n_layers=1, d_ff=16,
        max_positions=32, dtype="float64",
    )
    defaults.update(overrides)
    return m.ModelConfig(**defaults)


def micro_params(cfg, seed=0):
    return m.init_params(cfg, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Straight-line oracle: one batch row, explicit loops everywhere.
# ---------------------------------------------------------------------------


def _oracle_softmax_row(row):
    e = [np.exp(v - max(row)) for v in row]
    return [v / sum(e) for v in e]


def _oracle_ln(vec, g, b, eps=1e-5):
    mu = sum(vec) / len(vec)
    var = sum((v - mu) ** 2 for v in vec) / len(vec)
    return [(v - mu) / np.sqrt(var + eps) * gi + bi for v, gi, bi in zip(vec, g, b)]


def _oracle_attention(query_rows, key_rows, value_rows, p, prefix, n_heads, allowed):
    d = len(query_rows[0])
    dh = d // n_heads
    wq, bq = p[f"{prefix}.wq"], p[f"{prefix}.bq"]
    wk, bk = p[f"{prefix}.wk"], p[f"{prefix}.bk"]
    wv, bv = p[f"{prefix}.wv"], p[f"{prefix}.bv"]
    wo, bo = p[f"{prefix}.wo"], p[f"{prefix}.bo"]

    def lin(rows, w, b):
        return [[sum(r[i] * w[i][j] for i in range(len(r))) + b[j] for j in range(w.shape[1])] for r in rows]

    q, k, v = lin(query_rows, wq, bq), lin(key_rows, wk, bk), lin(value_rows, wv, bv)
    out_rows = []
    for qi, row in enumerate(q):
        merged = [0.0] * d
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = []
            for ki, krow in enumerate(k):
                if allowed(qi, ki):
                    scores.append(sum(a * b for a, b in zip(row[sl], krow[sl])) / np.sqrt(dh))
                else:
                    scores.append(-np.inf)
            weights = _oracle_softmax_row(scores)
            for d_i in range(dh):
                merged[h * dh + d_i] = sum(w * v[ki][h * dh + d_i] for ki, w in enumerate(weights))
        out_rows.append(merged)
    return lin(out_rows, wo, bo)


def _oracle_ffn(rows, p, prefix):
    w1, b1, w2, b2 = p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"]
    out = []
    for r in rows:
        h = [max(0.0, sum(r[i] * w1[i][j] for i in range(len(r))) + b1[j]) for j in range(w1.shape[1])]
        out.append([sum(h[i] * w2[i][j] for i in range(len(h))) + b2[j] for j in range(w2.shape[1])])
    return out


def oracle_forward(params, cfg, src_ids, tgt_ids):
    """Probabilities [T, vocab] recomputed with scalar arithmetic only."""
    d = cfg.d_model
    pe = m.positional_encoding(cfg.max_positions, d, np.float64)
    scale = np.sqrt(d)

    def embed(ids, table):
        return [[table[t][j] * scale + pe[pos][j] for j in range(d)] for pos, t in enumerate(ids)]

    def add(a, b):
        return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]

    x = embed(src_ids, params["src_embed"])
    for layer in range(cfg.n_layers):
        pre = f"enc.{layer}"
        attn = _oracle_attention(x, x, x, params, f"{pre}.self", cfg.n_heads, lambda q, k: True)
        x1 = [_oracle_ln(r, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"]) for r in add(x, attn)]
        ffn = _oracle_ffn(x1, params, f"{pre}.ffn")
        x = [_oracle_ln(r, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"]) for r in add(x1, ffn)]
    memory = x

    y = embed(tgt_ids, params["tgt_embed"])
    for layer in range(cfg.n_layers):
        pre = f"dec.{layer}"
        self_attn = _oracle_attention(y, y, y, params, f"{pre}.self", cfg.n_heads, lambda q, k: k <= q)
        y1 = [_oracle_ln(r, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"]) for r in add(y, self_attn)]
        cross = _oracle_attention(y1, memory, memory, params, f"{pre}.cross", cfg.n_heads, lambda q, k: True)
        y2 = [_oracle_ln(r, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"]) for r in add(y1, cross)]
        ffn = _oracle_ffn(y2, params, f"{pre}.ffn")
        y = [_oracle_ln(r, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"]) for r in add(y2, ffn)]

    w, b = params["out.w"], params["out.b"]
    probs = []
    for r in y:
        logits = [sum(r[i] * w[i][j] for i in range(d)) + b[j] for j in range(cfg.vocab_size)]
        probs.append(_oracle_softmax_row(logits))
    return np.array(probs)


class TestForward:
    def test_zero_output_projection_is_uniform(self):
        cfg = micro_config()
        params = micro_params(cfg)
        params["out.w"][:] = 0.0
        params["out.b"][:] = 0.0
        probs = m.forward(params, cfg, np.array([[3, 4, 5]]), np.array([[BOS, 6, 7]]))
        assert np.allclose(probs, 1.0 / cfg.vocab_size, atol=1e-12)

    def test_matches_scalar_oracle(self):
        cfg = m.ModelConfig(
            vocab_size=4, d_model=4, n_heads=1, n_layers=1, d_ff=8,
            max_positions=16, dtype="float64",
        )
        params = micro_params(cfg, seed=3)
        src, tgt = [3, 2, 1], [1, 3, 3, 2]
        got = m.forward(params, cfg, np.array([src]), np.array([tgt]))[0]
        want = oracle_forward(params, cfg, src, tgt)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_rows_sum_to_one(self):
        cfg = micro_config(dtype="float32")
        params = micro_params(cfg)
        probs = m.forward(params, cfg, np.array([[3, 4, 5, 6]]), np.array([[BOS, 7, 8]]))
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_causality_bit_exact(self):
        cfg = micro_config(dtype="float32", n_layers=2)
        params = micro_params(cfg, seed=1)
        rng = np.random.default_rng(7)
        src = np.array([[3, 4, 5, 6]])
        base_tgt = rng.integers(3, cfg.vocab_size, size=(1, 6))
        base = m.forward(params, cfg, src, base_tgt)
        for _ in range(25):
            j = int(rng.integers(1, 6))
            perturbed = base_tgt.copy()
            perturbed[0, j] = int(rng.integers(3, cfg.vocab_size))
            out = m.forward(params, cfg, src, perturbed)
            assert np.array_equal(base[0, :j], out[0, :j])

    def test_id_out_of_range(self):
        cfg = micro_config()
        params = micro_params(cfg)
        with pytest.raises(DataError):
            m.forward(params, cfg, np.array([[99]]), np.array([[BOS]]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_activation_names_layer(self):
        cfg = micro_config()
        params = micro_params(cfg)
        params["enc.0.ffn.w1"][0, 0] = np.inf
        with pytest.raises(NumericsError, match="encoder layer 0"):
            m.forward(params, cfg, np.array([[3, 4]]), np.array([[BOS, 5]]))

    def test_too_long_sequence_rejected(self):
        cfg = micro_config(max_positions=4)
        params = micro_params(cfg)
        with pytest.raises(DataError):
            m.forward(params, cfg, np.array([[3] * 9]), np.array([[BOS]]))


class TestLossAndGradients:
    def test_perfect_prediction_zero_loss(self):
        cfg = micro_config(dtype="float32")
        params = {k: np.zeros_like(v) for k, v in micro_params(cfg).items()}
        for k in params:
            if k.endswith("ln1.g") or k.endswith("ln2.g") or k.endswith("ln3.g"):
                params[k][:] = 1.0
        target_tok = 5
        params["out.b"][target_tok] = 60.0  # saturates softmax to exactly 1.0
        batch = m.make_batch([([3, 4], [target_tok, target_tok])])
        batch.target_out[0, -1] = target_tok  # replace EOS so every position is the token
        loss, _ = m.loss_and_gradients(params, cfg, batch)
        assert loss == 0.0

    def test_finite_difference_spot_check(self):
        cfg = micro_config()
        params = micro_params(cfg, seed=2)
        batch = m.make_batch([([3, 4, 5], [6, 7]), ([8, 9], [10, 11, 12])])
        loss, grads = m.loss_and_gradients(params, cfg, batch)
        rng = np.random.default_rng(0)
        eps = 1e-4
        for name in ("src_embed", "enc.0.self.wq", "dec.0.cross.wv", "out.w", "dec.0.ln2.g"):
            flat = params[name].reshape(-1)
            gflat = grads[name].reshape(-1)
            for i in rng.choice(flat.size, size=5, replace=False):
                old = flat[i]
                flat[i] = old + eps
                up, _ = m.nll_and_dlogits(
                    m.forward_train(params, cfg, batch.source, batch.target_in)[0], batch.target_out
                )
                flat[i] = old - eps
                down, _ = m.nll_and_dlogits(
                    m.forward_train(params, cfg, batch.source, batch.target_in)[0], batch.target_out
                )
                flat[i] = old
                fd = (up - down) / (2 * eps)
                assert abs(fd - gflat[i]) <= 1e-3 * max(abs(fd), abs(gflat[i]), 1e-6)

    def test_pad_content_does_not_affect_loss(self):
        cfg = micro_config(dtype="float32")
        params = micro_params(cfg, seed=4)
        batch = m.make_batch([([3, 4, 5], [6, 7]), ([8, 9], [10, 11, 12, 13])])
        loss_a, _ = m.loss_and_gradients(params, cfg, batch)
        # overwrite decoder inputs at positions whose outputs are pad-masked
        tampered = m.TrainingBatch(batch.source.copy(), batch.target_in.copy(), batch.target_out.copy())
        row_pads = np.nonzero(batch.target_out[0] == PAD)[0]
        tampered.target_in[0, row_pads[row_pads > 0]] = 15
        loss_b, _ = m.loss_and_gradients(params, cfg, tampered)
        assert loss_a == loss_b

    def test_batch_composition_invariance(self):
        cfg = micro_config(dtype="float32")
        params = micro_params(cfg, seed=5)
        ex1 = ([3, 4, 5], [6, 7])
        ex2 = ([8, 9, 10, 11], [12, 13, 14])
        joint = m.per_position_nll(params, cfg, m.make_batch([ex1, ex2]))
        solo1 = m.per_position_nll(params, cfg, m.make_batch([ex1]))
        solo2 = m.per_position_nll(params, cfg, m.make_batch([ex2]))
        np.testing.assert_allclose(joint[0, : solo1.shape[1]], solo1[0], atol=1e-6)
        np.testing.assert_allclose(joint[1, : solo2.shape[1]], solo2[0], atol=1e-6)

    def test_nan_loss_raises(self):
        cfg = micro_config()
        params = micro_params(cfg)
        params["out.w"][:] = np.nan
        batch = m.make_batch([([3], [4])])
        with pytest.raises(NumericsError):
            m.loss_and_gradients(params, cfg, batch)


class TestIncrementalDecoder:
    def test_matches_full_forward(self):
        cfg = micro_config(dtype="float32", n_layers=2)
        params = micro_params(cfg, seed=6)
        src = np.array([[3, 4, 5]])
        dec = m.IncrementalDecoder(params, cfg, src)
        ids = [BOS]
        for _ in range(5):
            step_logp = dec.step(np.array([ids[-1]]))
            probs = m.forward(params, cfg, src, np.array([ids]))
            np.testing.assert_allclose(step_logp[0], np.log(probs[0, -1]), atol=1e-5)
            ids.append(int(np.argmax(step_logp[0])))

    def test_reorder_gathers_rows(self):
        cfg = micro_config(dtype="float32")
        params = micro_params(cfg, seed=8)
        dec = m.IncrementalDecoder(params, cfg, np.array([[3, 4], [3, 4]]))
        first = dec.step(np.array([BOS, BOS]))
        np.testing.assert_allclose(first[0], first[1], atol=1e-6)
        dec.reorder(np.array([1, 1]))
        nxt = dec.step(np.array([5, 5]))
        np.testing.assert_allclose(nxt[0], nxt[1], atol=1e-6)


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        cfg = micro_config(dtype="float32")
        params = micro_params(cfg, seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg, "bpe", ["<pad>", "<bos>", "<eos>", "x"], {"note": 1})
        loaded, cfg2, header = load_checkpoint(path)
        assert cfg2 == cfg
        assert header["vocab_mode"] == "bpe"
        assert header["id_table"][3] == "x"
        assert set(loaded) == set(params)
        for k in params:
            assert loaded[k].dtype == params[k].dtype
            assert np.array_equal(loaded[k], params[k])
        path2 = tmp_path / "again.ckpt"
        save_checkpoint(path2, loaded, cfg2, "bpe", header["id_table"], {"note": 1})
        assert path.read_bytes() == path2.read_bytes()

    def test_corruption_detected(self, tmp_path):
        cfg = micro_config(dtype="float32")
        params = micro_params(cfg)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg, "bpe", [])
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="checksum"):
            load_checkpoint(path)
