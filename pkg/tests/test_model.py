import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from conftest import make, random_graphs
from qaoa_transfer import model as M
from qaoa_transfer.dataset import TransferTriple
from qaoa_transfer.errors import ValidationError

SMALL = M.ModelDims(d_graph=8, d_cop=3, gnn_hidden=5, gnn_blocks=2, fcn_hidden=6, fcn_blocks=2)


def fresh(variant="GCN", dims=M.ModelDims(), dropout=0.2, seed=0, **kw):
    torch.manual_seed(seed)
    return M.TransferModel(variant, dims, dropout, **kw)


@pytest.mark.parametrize("variant", M.GNN_ENCODERS)
def test_encoder_width(variant, c5):
    m = fresh(variant)
    assert M.gnn_encode(m, c5).shape == (128,)


@pytest.mark.parametrize("variant", M.GNN_ENCODERS)
@given(seed=st.integers(0, 1000))
def test_permutation_invariant(variant, seed):
    (g,) = random_graphs(1, seed, n_range=(4, 9))
    m = fresh(variant)
    perm = np.random.default_rng(seed).permutation(g.n)
    h = g.relabel(perm)
    h = type(h)(id=g.id + "-perm", n=h.n, edges=h.edges)
    np.testing.assert_allclose(M.gnn_encode(m, g), M.gnn_encode(m, h), atol=1e-9)


def test_graphconv_single_node_by_hand():
    layer = M.GraphConvLayer(2, 1)
    with torch.no_grad():
        layer.root.weight.copy_(torch.tensor([[1.0, 2.0]]))
        layer.root.bias.fill_(0.5)
        layer.nbr.weight.copy_(torch.tensor([[3.0, 4.0]]))
    batch = M.collate([make(1, [])], [np.array([[1.0, 1.0]])])
    assert float(layer(batch.x, batch).detach()[0, 0]) == pytest.approx(3.5)
    batch = M.collate([make(2, [(0, 1)])], [np.array([[1.0, 1.0], [2.0, 0.0]])])
    out = layer(batch.x, batch)[:, 0].detach().numpy()
    np.testing.assert_allclose(out, [1 + 2 + 0.5 + 6, 2 + 0.5 + 7])


def test_gcn_layer_matches_dense():
    g = make(4, [(0, 1), (1, 2), (1, 3)])
    layer = M.GCNLayer(3, 2)
    x = np.random.default_rng(0).normal(size=(4, 3))
    batch = M.collate([g], [x])
    a = g.adjacency() + np.eye(4)
    d = np.diag(a.sum(1) ** -0.5)
    w = layer.lin.weight.detach().numpy()
    np.testing.assert_allclose(layer(batch.x, batch).detach().numpy(), d @ a @ d @ x @ w.T, atol=1e-12)


def test_cheb_layer_matches_dense():
    g = make(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)])
    layer = M.ChebLayer(3, 2, order=2)
    x = np.random.default_rng(1).normal(size=(4, 3))
    batch = M.collate([g], [x])
    a = g.adjacency()
    d = np.diag(a.sum(1) ** -0.5)
    lap = np.eye(4) - d @ a @ d
    lt = 2 * lap / 2.0 - np.eye(4)
    ts = [x, lt @ x, 2 * lt @ (lt @ x) - x]
    expect = sum(t @ lin.weight.detach().numpy().T for t, lin in zip(ts, layer.lins))
    np.testing.assert_allclose(layer(batch.x, batch).detach().numpy(), expect, atol=1e-12)


def test_zero_output_layer_gives_zero(c5, p3):
    m = fresh("ChebConv")
    with torch.no_grad():
        m.head.out.weight.zero_()
        m.head.out.bias.zero_()
    np.testing.assert_array_equal(M.predict_scores(m, c5, [p3, c5]), [0.0, 0.0])


def test_head_matches_numpy():
    m = fresh("GCN", SMALL)
    m.eval()
    rng = np.random.default_rng(2)
    z_acc, z_don = rng.normal(size=11), rng.normal(size=11)
    p = {k: v.detach().numpy() for k, v in m.head.state_dict().items()}
    x = np.concatenate([z_acc, z_don]) @ p["inp.weight"].T + p["inp.bias"]
    for i in range(2):
        y = x @ p[f"lins.{i}.weight"].T + p[f"lins.{i}.bias"]
        y = (y - y.mean()) / np.sqrt(y.var() + 1e-5) * p[f"norms.{i}.weight"] + p[f"norms.{i}.bias"]
        x = x + np.maximum(y, 0.0)
    expect = float(x @ p["out.weight"][0] + p["out.bias"][0])
    assert M.predictor_forward(m, z_acc, z_don) == pytest.approx(expect, abs=1e-9)


def test_context_rows_used(c5, p3):
    m = fresh("GCN", SMALL)
    m.eval()
    with torch.no_grad():
        e = m.encode([c5, p3])
        base = m.score(e[:1], e[1:])
        m.context[M.MIS_ROW] += 1.0
        assert float(m.score(e[:1], e[1:])) != float(base)


class TestLoss:
    def test_values(self):
        assert float(M.mse_loss([0.5], [0.5])) == 0.0
        assert float(M.mse_loss([1.0, 0.0], [0.0, 0.0])) == pytest.approx(0.5)

    def test_gradient(self):
        p = torch.tensor([0.2, 0.9, 0.4], requires_grad=True)
        t = torch.tensor([0.0, 1.0, 1.0])
        M.mse_loss(p, t).backward()
        np.testing.assert_allclose(p.grad.numpy(), 2 * (p.detach() - t).numpy() / 3)

    def test_errors(self):
        with pytest.raises(ValidationError):
            M.mse_loss([], [])
        with pytest.raises(ValidationError):
            M.mse_loss([1.0, 2.0], [1.0])


class TestAdamW:
    def test_zero_grad_pure_decay(self):
        p = torch.tensor([1.0, -2.0])
        M.adamw_step(p, torch.zeros(2), {}, lr=0.1, weight_decay=0.01)
        np.testing.assert_allclose(p.numpy(), np.array([1.0, -2.0]) * (1 - 0.1 * 0.01))

    def test_single_step_by_hand(self):
        p = torch.tensor([0.5])
        g = torch.tensor([0.2])
        M.adamw_step(p, g, {}, lr=0.01, weight_decay=0.1)
        m = 0.1 * 0.2 / (1 - 0.9)
        v = 0.001 * 0.04 / (1 - 0.999)
        expect = 0.5 * (1 - 0.001) - 0.01 * m / (np.sqrt(v) + 1e-8)
        assert float(p[0]) == pytest.approx(expect, abs=1e-14)

    def test_matches_torch(self):
        rng = np.random.default_rng(3)
        p1 = torch.tensor(rng.normal(size=5))
        p2 = p1.clone().requires_grad_(True)
        ref = torch.optim.AdamW([p2], lr=0.03, weight_decay=0.01)
        st = {}
        for _ in range(25):
            g = torch.tensor(rng.normal(size=5))
            M.adamw_step(p1, g, st, lr=0.03, weight_decay=0.01)
            p2.grad = g.clone()
            ref.step()
        np.testing.assert_allclose(p1.numpy(), p2.detach().numpy(), atol=1e-12)


class TestPlateau:
    def test_drop_and_monotone(self):
        opt = M.AdamW([torch.zeros(1, requires_grad=True)], lr=1e-3)
        sched = M.PlateauScheduler(opt, factor=0.05, patience=2)
        lrs = [sched.step(v) for v in [1.0, 0.9, 0.95, 0.95, 0.8, 0.9, 0.9, 0.9, 0.9]]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert lrs[2] == 1e-3 and lrs[3] == pytest.approx(5e-5)
        assert lrs[6] == pytest.approx(2.5e-6)


def test_dropout_fraction():
    torch.manual_seed(0)
    drop = torch.nn.Dropout(0.2)
    frac = float((drop(torch.ones(100_000)) == 0).double().mean())
    assert 0.17 <= frac <= 0.23


def test_eval_mode_deterministic(c5, p3):
    m = fresh("GraphConv")
    m.train()
    m.encode([c5, p3])  # updates batch-norm running stats
    a, b = M.predict_scores(m, c5, [p3]), M.predict_scores(m, c5, [p3])
    np.testing.assert_array_equal(a, b)
    assert not m.training


@pytest.mark.parametrize("variant", M.GNN_ENCODERS)
def test_gradient_check(variant):
    graphs = [make(4, [(0, 1), (1, 2), (2, 3)], "a"), make(3, [(0, 1), (1, 2), (0, 2)], "b"),
              make(5, [(0, 1), (0, 2), (0, 3), (3, 4)], "c")]
    m = fresh(variant, SMALL, dropout=0.2)
    m.train()
    acc, don, y = [0, 1, 2], [1, 2, 0], torch.tensor([0.3, 0.6, 0.1])

    def loss():
        torch.manual_seed(11)
        return M.mse_loss(m(graphs, acc, don), y)

    m.zero_grad()
    loss().backward()
    h = 1e-5
    for name, p in m.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        idx = np.random.default_rng(0).choice(flat.numel(), size=min(4, flat.numel()), replace=False)
        for i in idx:
            orig = float(flat[i])
            flat[i] = orig + h
            up = loss().item()
            flat[i] = orig - h
            down = loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = abs(numeric - float(analytic[i])) / max(1e-6, abs(numeric) + abs(float(analytic[i])))
            assert err < 1e-4, (name, i, numeric, float(analytic[i]))


def _linear_task(n_graphs=24):
    graphs = random_graphs(n_graphs, seed=9, n_range=(5, 9))
    by_id = {g.id: g for g in graphs}
    dens = {g.id: g.num_edges / (g.n * (g.n - 1) / 2) for g in graphs}
    triples = [TransferTriple(a.id, d.id, 0.5 * dens[a.id] + 0.3 * dens[d.id])
               for a in graphs for d in graphs]
    return graphs, by_id, triples


def test_learns_synthetic_target():
    graphs, by_id, triples = _linear_task()
    rng = np.random.default_rng(0)
    rng.shuffle(triples)
    train, val = triples[:450], triples[450:]
    cfg = M.TrainConfig(epochs=20, batch_size=32, lr=1e-3, seed=0)
    res = M.train_model(train, val, by_id, "GraphConv", cfg, dims=M.ModelDims(
        d_graph=32, d_cop=4, gnn_hidden=16, gnn_blocks=2, fcn_hidden=32, fcn_blocks=2))
    assert len(res.val_mse) == 20 and len(res.lrs) == 20
    assert res.best_val_mse < 1e-3
    assert res.best_val_mse == min(res.val_mse)
    assert M.evaluate_mse(res.model, val, by_id) == pytest.approx(res.best_val_mse, abs=1e-12)


def test_training_deterministic_and_checkpoint(tmp_path):
    graphs, by_id, triples = _linear_task(8)
    cfg = M.TrainConfig(epochs=3, batch_size=16, lr=1e-3, seed=4)
    paths = []
    for name in ("a", "b"):
        res = M.train_model(triples[:48], triples[48:], by_id, "ChebConv", cfg, dims=SMALL)
        paths.append(tmp_path / f"{name}.ckpt")
        M.save_checkpoint(res.model, paths[-1], cfg)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    loaded, meta = M.load_checkpoint(paths[0])
    assert meta["variant"] == "ChebConv"
    np.testing.assert_array_equal(M.predict_scores(loaded, graphs[0], graphs[1:]),
                                  M.predict_scores(res.model, graphs[0], graphs[1:]))


def test_g2v_model_and_checkpoint(tmp_path, c5, p3):
    embs = {"C5": np.arange(8.0) / 8, "P3": -np.arange(8.0) / 8}
    m = fresh("G2V", SMALL, embeddings=embs)
    s = M.predict_scores(m, c5, [p3, c5])
    M.save_checkpoint(m, tmp_path / "g.ckpt")
    loaded, _ = M.load_checkpoint(tmp_path / "g.ckpt")
    np.testing.assert_array_equal(M.predict_scores(loaded, c5, [p3, c5]), s)
    with pytest.raises(ValidationError):
        fresh("G2V", SMALL, embeddings={"x": np.zeros(4)})


def test_duplicate_donors_equal_scores(c5, p3):
    m = fresh("GCN")
    s = M.predict_scores(m, c5, [p3, c5, p3])
    assert s[0] == s[2]


def test_bad_checkpoint(tmp_path):
    (tmp_path / "x").write_bytes(b"nope 1\n{}\n")
    with pytest.raises(ValidationError):
        M.load_checkpoint(tmp_path / "x")


def test_bad_config():
    with pytest.raises(ValidationError):
        M.TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        M.TransferModel("GAT")
