"""Transfer-score predictor: graph encoder + problem context + residual MLP head."""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import NumericalError, ValidationError
from .graphs import Graph, compute_node_features

torch.set_default_dtype(torch.float64)

ENCODERS = ("GCN", "GraphConv", "ChebConv", "G2V")
GNN_ENCODERS = ENCODERS[:3]
MAXCUT_ROW, MIS_ROW = 0, 1
CHECKPOINT_MAGIC = b"QTRANSFER-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    d_graph: int = 128
    d_cop: int = 16
    gnn_hidden: int = 64
    gnn_blocks: int = 5
    fcn_hidden: int = 256
    fcn_blocks: int = 4
    in_features: int = 6
    cheb_order: int = 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-4
    plateau_factor: float = 0.05
    plateau_patience: int = 2
    weight_decay: float = 0.01
    dropout: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.plateau_patience < 1:
            raise ValidationError(f"invalid training configuration {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")


# --------------------------------------------------------------------------
# node features
# --------------------------------------------------------------------------

@dataclass
class FeatureScaler:
    """Column-wise z-score with statistics from the training graphs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feature_mats: Sequence[np.ndarray]) -> "FeatureScaler":
        stacked = np.vstack(feature_mats)
        std = stacked.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(stacked.mean(axis=0), std)

    @classmethod
    def identity(cls, width: int = 6) -> "FeatureScaler":
        return cls(np.zeros(width), np.ones(width))

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean) / self.std


# --------------------------------------------------------------------------
# graph batching and layers
# --------------------------------------------------------------------------

@dataclass
class GraphBatch:
    """Disjoint union of graphs; ``edge_src -> edge_dst`` lists both directions."""

    x: torch.Tensor
    edge_src: torch.Tensor
    edge_dst: torch.Tensor
    node_graph: torch.Tensor
    n_graphs: int
    degree: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.degree = torch.zeros(self.x.shape[0]).index_add_(
            0, self.edge_dst, torch.ones(self.edge_dst.shape[0]))

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]


def collate(graphs: Sequence[Graph], features: Sequence[np.ndarray]) -> GraphBatch:
    xs, src, dst, owner = [], [], [], []
    offset = 0
    for gi, (g, f) in enumerate(zip(graphs, features)):
        if f.shape[0] != g.n:
            raise ValidationError(f"graph {g.id}: {f.shape[0]} feature rows for {g.n} nodes")
        xs.append(f)
        for u, v in g.edges:
            src += [u + offset, v + offset]
            dst += [v + offset, u + offset]
        owner += [gi] * g.n
        offset += g.n
    return GraphBatch(torch.as_tensor(np.vstack(xs)), torch.tensor(src, dtype=torch.long),
                      torch.tensor(dst, dtype=torch.long), torch.tensor(owner, dtype=torch.long), len(graphs))


def _aggregate(h: torch.Tensor, batch: GraphBatch, weight: torch.Tensor | None = None) -> torch.Tensor:
    msg = h[batch.edge_src]
    if weight is not None:
        msg = msg * weight[:, None]
    return torch.zeros_like(h).index_add_(0, batch.edge_dst, msg)


class GCNLayer(nn.Module):
    """Symmetric-normalized propagation with self-loops."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.lin = nn.Linear(d_in, d_out, bias=False)
        self.bias = nn.Parameter(torch.zeros(d_out))

    def forward(self, h, batch: GraphBatch):
        hw = self.lin(h)
        deg = batch.degree + 1.0
        inv = deg.rsqrt()
        norm = inv[batch.edge_src] * inv[batch.edge_dst]
        return hw / deg[:, None] + _aggregate(hw, batch, norm) + self.bias


class GraphConvLayer(nn.Module):
    """``W1 h_v + W2 * sum of neighbor h_u``."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.root = nn.Linear(d_in, d_out)
        self.nbr = nn.Linear(d_in, d_out, bias=False)

    def forward(self, h, batch: GraphBatch):
        return self.root(h) + self.nbr(_aggregate(h, batch))


class ChebLayer(nn.Module):
    """Chebyshev filter on the scaled Laplacian ``2L/lambda_max - I`` with lambda_max = 2."""

    def __init__(self, d_in: int, d_out: int, order: int = 2):
        super().__init__()
        self.lins = nn.ModuleList([nn.Linear(d_in, d_out, bias=False) for _ in range(order + 1)])
        self.bias = nn.Parameter(torch.zeros(d_out))

    def forward(self, h, batch: GraphBatch):
        # with lambda_max = 2 the scaled Laplacian is -D^{-1/2} A D^{-1/2}
        inv = torch.where(batch.degree > 0, batch.degree.clamp(min=1.0).rsqrt(), torch.zeros_like(batch.degree))
        norm = -inv[batch.edge_src] * inv[batch.edge_dst]
        t_prev, t_cur = h, _aggregate(h, batch, norm)
        out = self.lins[0](t_prev)
        if len(self.lins) > 1:
            out = out + self.lins[1](t_cur)
        for lin in self.lins[2:]:
            t_prev, t_cur = t_cur, 2.0 * _aggregate(t_cur, batch, norm) - t_prev
            out = out + lin(t_cur)
        return out + self.bias


_LAYERS = {"GCN": GCNLayer, "GraphConv": GraphConvLayer, "ChebConv": ChebLayer}


class GNNEncoder(nn.Module):
    """Blocks of conv -> batch norm -> ReLU -> dropout, mean pooling, projection."""

    def __init__(self, variant: str, dims: ModelDims = ModelDims(), dropout: float = 0.2):
        super().__init__()
        if variant not in _LAYERS:
            raise ValidationError(f"unknown GNN variant {variant!r}")
        self.variant = variant
        widths = [dims.in_features] + [dims.gnn_hidden] * dims.gnn_blocks
        kw = {"order": dims.cheb_order} if variant == "ChebConv" else {}
        self.convs = nn.ModuleList([_LAYERS[variant](a, b, **kw) for a, b in zip(widths, widths[1:])])
        self.norms = nn.ModuleList([nn.BatchNorm1d(dims.gnn_hidden, momentum=0.1) for _ in self.convs])
        self.dropout = nn.Dropout(dropout)
        self.proj = nn.Linear(dims.gnn_hidden, dims.d_graph)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        h = batch.x
        for conv, bn in zip(self.convs, self.norms):
            h = self.dropout(torch.relu(bn(conv(h, batch))))
        pooled = torch.zeros(batch.n_graphs, h.shape[1]).index_add_(0, batch.node_graph, h)
        counts = torch.bincount(batch.node_graph, minlength=batch.n_graphs).to(h.dtype)
        return self.proj(pooled / counts[:, None])


class FixedEmbeddingEncoder(nn.Module):
    """Looks up precomputed (frozen) graph embeddings by id."""

    def __init__(self, embeddings: dict[str, np.ndarray]):
        super().__init__()
        self.ids = sorted(embeddings)
        self.row = {gid: i for i, gid in enumerate(self.ids)}
        self.register_buffer("table", torch.as_tensor(np.array([embeddings[g] for g in self.ids])))

    def forward(self, graph_ids: Sequence[str]) -> torch.Tensor:
        try:
            return self.table[[self.row[g] for g in graph_ids]]
        except KeyError as exc:
            raise ValidationError(f"no embedding for graph {exc.args[0]}") from None


class ScoreHead(nn.Module):
    """Input projection, residual ``x + ReLU(LayerNorm(Wx + b))`` blocks, scalar output."""

    def __init__(self, d_in: int, hidden: int, n_blocks: int):
        super().__init__()
        self.inp = nn.Linear(d_in, hidden)
        self.lins = nn.ModuleList([nn.Linear(hidden, hidden) for _ in range(n_blocks)])
        self.norms = nn.ModuleList([nn.LayerNorm(hidden) for _ in range(n_blocks)])
        self.out = nn.Linear(hidden, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.inp(z)
        for lin, ln in zip(self.lins, self.norms):
            x = x + torch.relu(ln(lin(x)))
        return self.out(x).squeeze(-1)


class TransferModel(nn.Module):
    def __init__(self, variant: str, dims: ModelDims = ModelDims(), dropout: float = 0.2,
                 embeddings: dict[str, np.ndarray] | None = None,
                 scaler: FeatureScaler | None = None):
        super().__init__()
        if variant not in ENCODERS:
            raise ValidationError(f"unknown encoder {variant!r}")
        self.variant = variant
        self.dims = dims
        self.scaler = scaler or FeatureScaler.identity(dims.in_features)
        if variant == "G2V":
            if embeddings is None:
                raise ValidationError("G2V encoder needs precomputed embeddings")
            self.encoder = FixedEmbeddingEncoder(embeddings)
            dims_in = self.encoder.table.shape[1]
            if dims_in != dims.d_graph:
                raise ValidationError(f"embedding width {dims_in} != d_graph {dims.d_graph}")
        else:
            self.encoder = GNNEncoder(variant, dims, dropout)
        self.context = nn.Parameter(torch.randn(2, dims.d_cop) * 0.1)
        self.head = ScoreHead(2 * (dims.d_graph + dims.d_cop), dims.fcn_hidden, dims.fcn_blocks)
        self._features: dict[str, np.ndarray] = {}

    def features(self, g: Graph) -> np.ndarray:
        if g.id not in self._features:
            self._features[g.id] = compute_node_features(g)
        return self._features[g.id]

    def encode(self, graphs: Sequence[Graph]) -> torch.Tensor:
        if self.variant == "G2V":
            return self.encoder([g.id for g in graphs])
        batch = collate(graphs, [self.scaler(self.features(g)) for g in graphs])
        return self.encoder(batch)

    def score(self, acc_emb: torch.Tensor, don_emb: torch.Tensor) -> torch.Tensor:
        rows = acc_emb.shape[0]
        z_acc = torch.cat([acc_emb, self.context[MIS_ROW].expand(rows, -1)], dim=1)
        z_don = torch.cat([don_emb, self.context[MAXCUT_ROW].expand(rows, -1)], dim=1)
        return self.head(torch.cat([z_acc, z_don], dim=1))

    def forward(self, graphs: Sequence[Graph], acc_idx, don_idx) -> torch.Tensor:
        """Scores for pairs ``(graphs[acc_idx[i]], graphs[don_idx[i]])``."""
        emb = self.encode(graphs)
        return self.score(emb[torch.as_tensor(acc_idx)], emb[torch.as_tensor(don_idx)])


def gnn_encode(model: TransferModel, g: Graph, train: bool = False) -> np.ndarray:
    model.train(train)
    with torch.no_grad():
        return model.encode([g])[0].numpy()


def predictor_forward(model: TransferModel, z_acc, z_don, train: bool = False) -> float:
    """Head output for already-concatenated ``[embedding || context]`` vectors."""
    model.train(train)
    with torch.no_grad():
        z = torch.cat([torch.as_tensor(z_acc), torch.as_tensor(z_don)])[None, :]
        return float(model.head(z)[0])


# --------------------------------------------------------------------------
# loss, optimizer, scheduler
# --------------------------------------------------------------------------

def mse_loss(preds, targets):
    preds = torch.as_tensor(preds)
    targets = torch.as_tensor(targets)
    if preds.numel() == 0:
        raise ValidationError("mse of empty batch")
    if preds.shape != targets.shape:
        raise ValidationError(f"shape mismatch {tuple(preds.shape)} vs {tuple(targets.shape)}")
    return ((preds - targets) ** 2).mean()


def adamw_step(param: torch.Tensor, grad: torch.Tensor, state: dict, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01) -> dict:
    """In-place AdamW update with decoupled weight decay and bias correction."""
    if param.shape != grad.shape:
        raise ValidationError("parameter and gradient shapes differ")
    b1, b2 = betas
    if not state:
        state.update(step=0, exp_avg=torch.zeros_like(param), exp_avg_sq=torch.zeros_like(param))
    state["step"] += 1
    t = state["step"]
    with torch.no_grad():
        param.mul_(1.0 - lr * weight_decay)
        state["exp_avg"].mul_(b1).add_(grad, alpha=1.0 - b1)
        state["exp_avg_sq"].mul_(b2).addcmul_(grad, grad, value=1.0 - b2)
        denom = (state["exp_avg_sq"].sqrt() / math.sqrt(1.0 - b2 ** t)).add_(eps)
        param.addcdiv_(state["exp_avg"], denom, value=-lr / (1.0 - b1 ** t))
    return state


class AdamW:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = [p for p in params if p.requires_grad]
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.state = [dict() for _ in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, st in zip(self.params, self.state):
            if p.grad is not None:
                adamw_step(p.data, p.grad, st, self.lr, self.betas, self.eps, self.weight_decay)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer: AdamW, factor: float = 0.05, patience: int = 2):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.optimizer.lr = self.optimizer.lr * self.factor
                self.bad_epochs = 0
        return self.optimizer.lr


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: TransferModel
    val_mse: list[float]
    train_mse: list[float]
    lrs: list[float]
    initial_val_mse: float
    best_epoch: int

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch]


def _pairs(triples, graphs: dict[str, Graph]):
    ids = sorted({t.acceptor_id for t in triples} | {t.donor_id for t in triples})
    pos = {g: i for i, g in enumerate(ids)}
    acc = [pos[t.acceptor_id] for t in triples]
    don = [pos[t.donor_id] for t in triples]
    y = torch.tensor([t.y for t in triples])
    return [graphs[g] for g in ids], acc, don, y


def evaluate_mse(model: TransferModel, triples, graphs: dict[str, Graph]) -> float:
    model.eval()
    with torch.no_grad():
        gs, acc, don, y = _pairs(triples, graphs)
        return float(mse_loss(model(gs, acc, don), y))


def fit_scaler(graphs: Sequence[Graph]) -> FeatureScaler:
    return FeatureScaler.fit([compute_node_features(g) for g in graphs])


def build_model(variant: str, cfg: TrainConfig, train_graphs: Sequence[Graph] = (),
                embeddings: dict[str, np.ndarray] | None = None,
                dims: ModelDims = ModelDims()) -> TransferModel:
    torch.manual_seed(cfg.seed)
    scaler = fit_scaler(train_graphs) if (variant != "G2V" and train_graphs) else None
    return TransferModel(variant, dims, cfg.dropout, embeddings, scaler)


def train_model(train, val, graphs: dict[str, Graph], variant: str, cfg: TrainConfig = TrainConfig(),
                embeddings: dict[str, np.ndarray] | None = None, dims: ModelDims = ModelDims(),
                model: TransferModel | None = None) -> TrainResult:
    """Minibatch AdamW on MSE; returns the checkpoint with the lowest validation MSE."""
    if not train or not val:
        raise ValidationError("train and validation splits must be nonempty")
    if model is None:
        train_ids = sorted({t.acceptor_id for t in train} | {t.donor_id for t in train})
        model = build_model(variant, cfg, [graphs[g] for g in train_ids], embeddings, dims)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(opt, cfg.plateau_factor, cfg.plateau_patience)

    initial = evaluate_mse(model, val, graphs)
    val_hist, train_hist, lrs = [], [], []
    best_state, best_epoch = None, -1
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            gs, acc, don, y = _pairs(batch, graphs)
            opt.zero_grad()
            loss = mse_loss(model(gs, acc, don), y)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, step {start // cfg.batch_size}")
            loss.backward()
            opt.step()
            losses.append(loss.item() * len(batch))
        train_hist.append(sum(losses) / len(train))
        val_mse = evaluate_mse(model, val, graphs)
        if not math.isfinite(val_mse):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        val_hist.append(val_mse)
        lrs.append(opt.lr)
        if best_state is None or val_mse < val_hist[best_epoch]:
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        sched.step(val_mse)
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, val_hist, train_hist, lrs, initial, best_epoch)


def predict_scores(model: TransferModel, acceptor: Graph, donors: Sequence[Graph]) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        graphs = [acceptor] + list(donors)
        idx = list(range(1, len(graphs)))
        return model(graphs, [0] * len(idx), idx).numpy().copy()


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model: TransferModel, path: str | Path, train_cfg: TrainConfig | None = None,
                    extra: dict | None = None) -> None:
    """Header line, JSON metadata line, then raw little-endian arrays in listed order."""
    arrays = []
    blobs = io.BytesIO()
    for name, tensor in sorted(model.state_dict().items()):
        arr = tensor.detach().cpu().numpy()
        dtype = "<i8" if arr.dtype.kind in "iu" else "<f8"
        arr = np.ascontiguousarray(arr, dtype=dtype)
        arrays.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": blobs.tell()})
        blobs.write(arr.tobytes())
    meta = {
        "variant": model.variant,
        "dims": asdict(model.dims),
        "scaler": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "train_config": asdict(train_cfg) if train_cfg else None,
        "graph_ids": getattr(model.encoder, "ids", None),
        "arrays": arrays,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        fh.write(blobs.getvalue())


def load_checkpoint(path: str | Path) -> tuple[TransferModel, dict]:
    with open(path, "rb") as fh:
        header = fh.readline().split()
        if header[0] != CHECKPOINT_MAGIC or int(header[1]) != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
        meta = json.loads(fh.readline())
        blob = fh.read()
    tensors = {}
    for a in meta["arrays"]:
        dt = np.dtype(a["dtype"])
        count = int(np.prod(a["shape"])) if a["shape"] else 1
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=a["offset"]).reshape(a["shape"])
        tensors[a["name"]] = torch.as_tensor(arr.copy())
    dims = ModelDims(**meta["dims"])
    embeddings = None
    if meta["variant"] == "G2V":
        table = tensors["encoder.table"].numpy()
        embeddings = {g: table[i] for i, g in enumerate(meta["graph_ids"])}
    scaler = FeatureScaler(np.array(meta["scaler"]["mean"]), np.array(meta["scaler"]["std"]))
    model = TransferModel(meta["variant"], dims, (meta["train_config"] or {}).get("dropout", 0.2),
                          embeddings, scaler)
    model.load_state_dict(tensors)
    model.eval()
    return model, meta
