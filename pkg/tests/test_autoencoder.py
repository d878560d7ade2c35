import math

import numpy as np
import pytest

from logpattern import autoencoder as ae
from logpattern.encoder import SparseBinaryVector
from logpattern.errors import DimensionMismatch, IndexOutOfRange, NonFiniteLoss


def random_model(rng, M=2, K=3, D=3, scale=1.0):
    n = M + K
    return ae.AutoencoderModel(
        rng.normal(0, scale, (n, D)), rng.normal(0, scale, (n, D)),
        rng.normal(0, scale, D), rng.normal(0, scale, n), M, K,
    )


def zero_model(M=2, K=3, D=3):
    n = M + K
    return ae.AutoencoderModel(np.zeros((n, D)), np.zeros((n, D)), np.zeros(D), np.zeros(n), M, K)


def random_vec(rng, dim, min_on=1):
    k = int(rng.integers(min_on, max(min_on, dim - 1) + 1))
    return SparseBinaryVector(dim, tuple(sorted(rng.choice(dim, size=k, replace=False).tolist())))


# --- independent oracles -------------------------------------------------------


def dense_forward(model, v):
    """Textbook dense evaluation: encoder matrix is D x (M+K), i.e. W transposed."""
    x = v.dense()
    a = model.W.T @ x + model.b
    phi = np.maximum(a, 0)
    vhat = 1.0 / (1.0 + np.exp(-(model.V @ phi + model.c)))
    return a, phi, vhat


def loss_oracle(model, v, N):
    _, _, vhat = dense_forward(model, v)
    P = list(v.on_indices)
    pos = -sum(math.log(vhat[i]) for i in P) / len(P)
    neg = -sum(math.log(1 - vhat[i]) for i in N) / len(N) if len(N) else 0.0
    return pos + neg


def fd_gradients(model, v, N, h=1e-5):
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = ae.loss_given(model, v, N).value
            p[idx] = old - h
            down = ae.loss_given(model, v, N).value
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def assert_grad_close(analytic, numeric, rel=1e-4, floor=1e-7):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (diff <= floor) | (diff <= rel * scale)
    assert ok.all(), (analytic[~ok], numeric[~ok])


# --- forward ------------------------------------------------------------------


def test_zero_model_outputs_half():
    m = zero_model()
    fr = ae.forward(m, SparseBinaryVector(5, (0, 3)), indices=range(5))
    assert np.all(fr.a == 0) and np.all(fr.phi == 0)
    assert np.all(fr.vhat == 0.5)


def test_empty_vector_gives_bias(rng):
    m = random_model(rng)
    assert np.array_equal(ae.forward(m, SparseBinaryVector(5, ())).a, m.b)


@pytest.mark.parametrize("seed", range(20))
def test_forward_matches_dense(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, M=2, K=3, D=3)
    v = random_vec(rng, 5)
    a, phi, vhat = dense_forward(m, v)
    fr = ae.forward(m, v, indices=range(5))
    np.testing.assert_allclose(fr.a, a, rtol=0, atol=1e-12)
    np.testing.assert_allclose(fr.phi, phi, rtol=0, atol=1e-12)
    np.testing.assert_allclose(fr.vhat, vhat, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ae.embed_pattern(m, v), a, rtol=0, atol=1e-12)


def test_dimension_mismatch(rng):
    m = random_model(rng)
    with pytest.raises(DimensionMismatch):
        ae.forward(m, SparseBinaryVector(6, (0,)))
    with pytest.raises(DimensionMismatch):
        ae.embed_pattern(m, SparseBinaryVector(4, (0,)))
    with pytest.raises(DimensionMismatch):
        ae.AutoencoderModel(np.zeros((5, 3)), np.zeros((4, 3)), np.zeros(3), np.zeros(5), 2, 3)


def test_encoder_linearity(rng):
    m = random_model(rng, M=3, K=5, D=4)
    m.b[:] = 0
    x = SparseBinaryVector(8, (0, 4))
    y = SparseBinaryVector(8, (2, 5, 7))
    xy = SparseBinaryVector(8, (0, 2, 4, 5, 7))
    np.testing.assert_allclose(ae.embed_pattern(m, xy), ae.embed_pattern(m, x) + ae.embed_pattern(m, y), atol=1e-12)


def test_embed_is_pure(rng):
    m = random_model(rng)
    v = SparseBinaryVector(5, (1, 2))
    assert np.array_equal(ae.embed_pattern(m, v), ae.embed_pattern(m, v))
    assert np.array_equal(ae.embed_pattern(zero_model(), v), np.zeros(3))


def test_token_embedding(rng):
    m = random_model(rng, M=2, K=3, D=4)
    m.b[:] = 0
    for i in range(5):
        assert np.array_equal(ae.embed_pattern(m, SparseBinaryVector(5, (i,))), ae.token_embedding(m, i))
    assert np.array_equal(np.vstack([ae.token_embedding(m, i) for i in range(5)]), m.W)
    # slot M + j is vocabulary token j
    assert np.array_equal(ae.token_embedding(m, 2 + 1), m.W[3])
    for bad in (-1, 5):
        with pytest.raises(IndexOutOfRange):
            ae.token_embedding(m, bad)


# --- loss ---------------------------------------------------------------------


def test_loss_zero_model_single_pair():
    m = zero_model()
    ls = ae.loss_given(m, SparseBinaryVector(5, (1,)), [3])
    assert ls.value == pytest.approx(1.3862944, abs=1e-7)
    assert ls.value == pytest.approx(2 * math.log(2), abs=1e-15)


def test_loss_perfect_reconstruction_limit():
    m = zero_model()
    v = SparseBinaryVector(5, (0, 2))
    N = [1, 4]
    values = []
    for big in (1.0, 5.0, 20.0, 40.0):
        m.c[:] = -big
        m.c[[0, 2]] = big
        values.append(ae.loss_given(m, v, N).value)
    assert values == sorted(values, reverse=True)
    assert values[-1] < 1e-15


@pytest.mark.parametrize("seed", range(20))
def test_loss_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, M=3, K=4, D=3)
    v = random_vec(rng, 7)
    sampler = ae.NegativeSampler(7, 2, rng)
    ls = ae.loss(m, v, sampler)
    assert set(ls.P.tolist()) == set(v.on_indices)
    assert not set(ls.N.tolist()) & set(ls.P.tolist())
    assert len(ls.N) == min(2 * len(ls.P), 7 - len(ls.P))
    assert ls.value >= 0
    assert ls.value == pytest.approx(loss_oracle(m, v, ls.N.tolist()), abs=1e-12)


def test_empty_vector_loss_is_zero(rng):
    ls = ae.loss(random_model(rng), SparseBinaryVector(5, ()), ae.NegativeSampler(5, 5, rng))
    assert ls.value == 0.0 and len(ls.N) == 0


def test_overlapping_negatives_rejected(rng):
    with pytest.raises(ValueError):
        ae.loss_given(random_model(rng), SparseBinaryVector(5, (1,)), [1])


# --- negative sampling ------------------------------------------------------------


def test_sampler_size_and_disjointness(rng):
    s = ae.NegativeSampler(50, 5, rng)
    for k in (1, 3, 8, 9, 20, 49, 50):
        P = np.sort(rng.choice(50, size=k, replace=False))
        N = s(P)
        assert len(N) == min(5 * k, 50 - k)
        assert len(set(N.tolist())) == len(N)
        assert not set(N.tolist()) & set(P.tolist())


def test_sampler_batch_matches_contract(rng):
    s = ae.NegativeSampler(30, 3, rng)
    P_list = [np.array([0, 1]), np.array([5]), np.arange(20), np.array([29])]
    lens = [len(p) for p in P_list]
    P_cat = np.concatenate(P_list)
    seg_p = np.repeat(np.arange(4), lens)
    N_cat, seg_n = s.sample_batch(P_cat, seg_p, 4)
    for j, p in enumerate(P_list):
        n = N_cat[seg_n == j]
        assert len(n) == min(3 * len(p), 30 - len(p))
        assert np.all(np.diff(n) > 0)
        assert not set(n.tolist()) & set(p.tolist())


def test_sampler_is_uniform_over_zeros():
    rng = np.random.default_rng(0)
    s = ae.NegativeSampler(12, 1, rng)
    P = np.array([0, 5])
    counts = np.zeros(12)
    trials = 20000
    for _ in range(trials):
        counts[s(P)] += 1
    assert counts[0] == 0 and counts[5] == 0
    zeros = np.delete(counts, [0, 5])
    expected = trials * 2 / 10
    # chi-square with 9 dof, 99.9% quantile is about 27.9
    assert ((zeros - expected) ** 2 / expected).sum() < 27.9


# --- gradients ----------------------------------------------------------------


def test_gradient_sparsity(rng):
    m = random_model(rng, M=4, K=6, D=3)
    v = SparseBinaryVector(10, (1, 6))
    N = [0, 3]
    g = ae.gradients(m, v, ae.loss_given(m, v, N))
    off_w = [i for i in range(10) if i not in v.on_indices]
    assert np.all(g.W[off_w] == 0)
    off_out = [i for i in range(10) if i not in (1, 6, 0, 3)]
    assert np.all(g.V[off_out] == 0)
    assert np.all(g.c[off_out] == 0)


def test_zero_model_bias_gradient():
    m = zero_model()
    v = SparseBinaryVector(5, (2,))
    g = ae.gradients(m, v, ae.loss_given(m, v, [4]))
    assert g.c[2] == pytest.approx(-0.5)
    assert g.c[4] == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(15))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    m = random_model(rng, M=2, K=4, D=3, scale=0.7)
    v = random_vec(rng, 6)
    ls = ae.loss(m, v, ae.NegativeSampler(6, 2, rng))
    g = ae.gradients(m, v, ls)
    for analytic, numeric in zip((g.W, g.V, g.b, g.c), fd_gradients(m, v, ls.N)):
        assert_grad_close(analytic, numeric)


def test_batch_gradient_is_mean_of_example_gradients(rng):
    m = random_model(rng, M=3, K=5, D=4)
    vs = [random_vec(rng, 8) for _ in range(5)]
    Ns = [ae.NegativeSampler(8, 1, rng)(np.asarray(v.on_indices)) for v in vs]
    P_cat, seg_p = ae._flatten([np.asarray(v.on_indices) for v in vs])
    N_cat, seg_n = ae._flatten(Ns)
    total, gb = ae._batch_grad(m, P_cat, seg_p, N_cat, seg_n, 5, 1 / 5)
    singles = [ae.gradients(m, v, ae.loss_given(m, v, N)) for v, N in zip(vs, Ns)]
    assert total == pytest.approx(sum(ae.loss_given(m, v, N).value for v, N in zip(vs, Ns)), abs=1e-12)
    for name in ("W", "V", "b", "c"):
        np.testing.assert_allclose(getattr(gb, name), sum(getattr(s, name) for s in singles) / 5, atol=1e-12)


# --- training -----------------------------------------------------------------


def small_corpus(rng, n=60, dim=20):
    return [random_vec(rng, dim) for _ in range(n)]


def test_zero_epochs_returns_initialisation(rng):
    cfg = ae.TrainConfig(D=4, epochs=0, seed=3)
    m = ae.train(small_corpus(rng), cfg, M=5, K=15)
    init = ae.init_model(5, 15, 4, 3)
    for p, q in zip(m.params(), init.params()):
        assert np.array_equal(p, q)


def test_init_scale():
    m = ae.init_model(30, 70, 16, 0)
    s = math.sqrt(6 / (100 + 16))
    assert np.abs(m.W).max() <= s and np.abs(m.V).max() <= s
    assert np.all(m.b == 0) and np.all(m.c == 0)


def test_same_seed_same_bytes(rng):
    corpus = small_corpus(rng)
    cfg = ae.TrainConfig(D=6, epochs=3, batch_size=16, seed=11)
    b1 = ae.model_to_bytes(ae.train(corpus, cfg, M=5, K=15))
    b2 = ae.model_to_bytes(ae.train(corpus, cfg, M=5, K=15))
    assert b1 == b2
    b3 = ae.model_to_bytes(ae.train(corpus, ae.TrainConfig(D=6, epochs=3, batch_size=16, seed=12), M=5, K=15))
    assert b3 != b1


def test_loss_decreases(rng):
    corpus = small_corpus(rng, n=200, dim=30)
    m = ae.train(corpus, ae.TrainConfig(D=8, epochs=15, batch_size=32, learning_rate=5e-3, seed=1), M=6, K=24)
    hist = m.meta["epoch_losses"]
    assert len(hist) == 15
    assert hist[-1] < hist[0]
    assert m.all_finite()


def test_memorises_single_pattern():
    v = SparseBinaryVector(40, (1, 7, 8, 20, 33))
    cfg = ae.TrainConfig(D=8, epochs=200, batch_size=16, learning_rate=1e-2, seed=0)
    m = ae.train([v] * 64, cfg, M=10, K=30)
    assert m.meta["epoch_losses"][-1] < 0.05


def test_empty_vectors_are_skipped(rng):
    corpus = small_corpus(rng, n=20) + [SparseBinaryVector(20, ())] * 3
    m = ae.train(corpus, ae.TrainConfig(D=4, epochs=1, seed=0), M=5, K=15)
    assert m.meta["skipped_empty"] == 3


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_non_finite_loss_aborts(rng):
    init = ae.init_model(5, 15, 4, 0)
    init.c[:] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        ae.train(small_corpus(rng), ae.TrainConfig(D=4, epochs=1, seed=0), init=init)
    assert info.value.step == 1


def test_multi_worker_differs_only_in_rounding(rng):
    corpus = small_corpus(rng, n=128, dim=20)
    one = ae.train(corpus, ae.TrainConfig(D=6, epochs=2, batch_size=32, seed=5), M=5, K=15)
    four = ae.train(corpus, ae.TrainConfig(D=6, epochs=2, batch_size=32, seed=5, workers=4), M=5, K=15)
    for p, q in zip(one.params(), four.params()):
        np.testing.assert_allclose(p, q, rtol=1e-9, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ae.TrainConfig(D=0)
    with pytest.raises(ValueError):
        ae.TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        ae.TrainConfig(learning_rate=0)


# --- serialisation --------------------------------------------------------------


def test_save_load_round_trip(tmp_path, rng):
    m = ae.train(small_corpus(rng), ae.TrainConfig(D=5, epochs=1, seed=2), M=5, K=15,
                 meta={"vocab_sha256": "abc", "tokenizer": {"lowercase": True}})
    path = tmp_path / "m.bin"
    ae.save_model(m, path)
    back = ae.load_model(path)
    for p, q in zip(m.params(), back.params()):
        assert np.array_equal(p, q)
    v = SparseBinaryVector(20, (0, 3, 19))
    assert np.array_equal(ae.forward(m, v, range(20)).vhat, ae.forward(back, v, range(20)).vhat)
    head = ae.read_model_header(path)
    assert (head["M"], head["K"], head["D"]) == (5, 15, 5)
    assert head["endianness"] == "little" and head["vocab_sha256"] == "abc"
    assert ae.model_to_bytes(back) == path.read_bytes()


def test_load_rejects_garbage(tmp_path):
    from logpattern.errors import ArtifactIOError

    (tmp_path / "x.bin").write_bytes(b"not a model")
    with pytest.raises(ArtifactIOError):
        ae.load_model(tmp_path / "x.bin")
