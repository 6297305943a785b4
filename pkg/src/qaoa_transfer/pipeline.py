"""Experiment orchestration: retrieval, transfer evaluation, warm starts and reports."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataset as ds
from .embeddings import G2VConfig, closeness_topk, embed_graphs, read_embeddings, write_embeddings
from .errors import ValidationError
from .graphs import Graph, SolverResult, read_graph_bank, set_sizes, solve_maxcut_exact, solve_mis_exact, \
    write_graph_bank
from .model import GNN_ENCODERS, TrainConfig, load_checkpoint, predict_scores, save_checkpoint, train_model
from .qaoa import OptConfig, random_init, warm_start
from .seeding import derive_seed
from .simulator import CircuitSpec, ParamSet, Problem, expectation, run_circuit, sample

log = logging.getLogger(__name__)

DESK_TRAIN = TrainConfig(lr=1e-3, batch_size=32)

METHODS = ("GCN", "GraphConv", "ChebConv", "G2V", "Closeness", "RandomDonor")
ML_METHODS = GNN_ENCODERS + ("G2V",)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


# --------------------------------------------------------------------------
# retrieval
# --------------------------------------------------------------------------

def retrieve_topk(scores: Sequence[float], donor_ids: Sequence[str], k: int) -> list[str]:
    """Ids of the ``k`` highest scores, descending; ties by lexicographic id."""
    if len(scores) != len(donor_ids):
        raise ValidationError("scores and donor ids differ in length")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(donor_ids)), key=lambda i: (-float(scores[i]), donor_ids[i]))
    return [donor_ids[i] for i in order[:k]]


def random_donors(donor_ids: Sequence[str], k: int, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    ids = sorted(donor_ids)
    picks = rng.choice(len(ids), size=min(k, len(ids)), replace=False)
    return [ids[i] for i in picks]


# --------------------------------------------------------------------------
# transfer evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    donor_id: str
    param_index: int
    params: ParamSet


@dataclass
class EvalRecord:
    acceptor_id: str
    method: str
    best_r: float
    best_prob_opt: float
    best_donor_id: str
    best_param_index: int
    shots: int
    prob_donor_id: str = ""
    prob_param_index: int = -1
    exact_r: float = float("nan")

    def __post_init__(self):
        for name in ("best_r", "best_prob_opt"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValidationError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class SampledMetrics:
    r: float
    prob_opt: float
    exact_r: float


def measure(acceptor: Graph, params: ParamSet, mis: SolverResult, shots: int, seed: int) -> SampledMetrics:
    """Sampled approximation ratio and hit rate of the optimum for one angle set."""
    spec = CircuitSpec(Problem.MIS, acceptor, params.p)
    state = run_circuit(spec, params)
    dist = sample(state, shots, seed)
    idx, counts = dist.indices_and_counts()
    sizes = set_sizes(acceptor.n, idx) * spec.feasible[idx]
    r = float(counts @ sizes) / shots / mis.optimum
    optimal = np.isin(idx, np.array(mis.optimal_configs, dtype=np.int64))
    prob = float(counts[optimal].sum()) / shots
    return SampledMetrics(r, prob, expectation(state, spec) / mis.optimum)


def candidate_seed(seed: int, acceptor_id: str, donor_id: str, param_index: int) -> int:
    """Shot seed tied to the candidate, so a candidate scores identically in every method."""
    return derive_seed(seed, "shots", acceptor_id, donor_id, param_index)


def evaluate_transfer(acceptor: Graph, candidates: Sequence[Candidate], shots: int, seed: int,
                      mis: SolverResult | None = None, method: str = "") -> EvalRecord:
    """Best sampled ratio and best optimum-hit probability over the candidate angle sets."""
    if not candidates:
        raise ValidationError("no candidate parameters")
    mis = mis or solve_mis_exact(acceptor)
    metrics = [measure(acceptor, c.params, mis, shots, candidate_seed(seed, acceptor.id, c.donor_id, c.param_index))
               for c in candidates]
    i_r = int(np.argmax([m.r for m in metrics]))
    i_p = int(np.argmax([m.prob_opt for m in metrics]))
    return EvalRecord(acceptor.id, method, metrics[i_r].r, metrics[i_p].prob_opt,
                      candidates[i_r].donor_id, candidates[i_r].param_index, shots,
                      candidates[i_p].donor_id, candidates[i_p].param_index, metrics[i_r].exact_r)


def candidates_for(donor_ids: Sequence[str], bank: ds.DonorBank) -> list[Candidate]:
    return [Candidate(d, j, x) for d in donor_ids for j, x in enumerate(bank[d].params)]


@dataclass
class WarmStartResult:
    pre: EvalRecord
    post: EvalRecord
    trace: list[float]


def warm_start_eval(acceptor: Graph, params: ParamSet, steps: int, shots: int, seed: int,
                    mis: SolverResult | None = None, opt: OptConfig | None = None,
                    method: str = "", donor_id: str = "", param_index: int = -1) -> WarmStartResult:
    """Short MIS optimization from ``params``; before/after measured with the same shot seed."""
    mis = mis or solve_mis_exact(acceptor)
    spec = CircuitSpec(Problem.MIS, acceptor, params.p)
    trace = warm_start(spec, params, steps, opt)
    shot_seed = derive_seed(seed, "warm", acceptor.id)
    records = []
    for x in (params, trace.final_params):
        m = measure(acceptor, x, mis, shots, shot_seed)
        records.append(EvalRecord(acceptor.id, method, m.r, m.prob_opt, donor_id, param_index,
                                  shots, donor_id, param_index, m.exact_r))
    return WarmStartResult(records[0], records[1], trace.objective_per_step)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: ds.DatasetConfig = field(default_factory=ds.DatasetConfig)
    train: TrainConfig = DESK_TRAIN
    g2v: G2VConfig = field(default_factory=G2VConfig)
    methods: tuple = METHODS
    depths: tuple = (1,)
    k: int = 5
    shots: int = 1000
    warmstart_steps: int = 10
    warmstart_threshold: float = 0.8
    warmstart_method: str = "ChebConv"
    out_dir: str = "runs/desk"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.shots < 1:
            raise ValidationError("k and shots must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValidationError(f"unknown methods {sorted(unknown)}")
        self.methods = tuple(self.methods)
        self.depths = tuple(int(p) for p in self.depths)

    @classmethod
    def preset(cls, name: str, **kw) -> "ExperimentConfig":
        if name == "desk":
            # 30 acceptors give ~700 training triples; batch 256 at lr 1e-4 would
            # take only ~60 AdamW steps in 20 epochs
            kw.setdefault("train", DESK_TRAIN)
            # p = 1 transfer leaves almost no room for warm-start gains; p = 2 is where they show
            kw.setdefault("depths", (1, 2))
            return cls(**kw)
        if name == "paper":
            kw.setdefault("dataset", ds.DatasetConfig.paper())
            kw.setdefault("train", TrainConfig())
            kw.setdefault("depths", (1, 2))
            kw.setdefault("out_dir", "runs/paper")
            return cls(**kw)
        raise ValidationError(f"unknown preset {name!r}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["dataset"] = self.dataset.to_dict()
        d["train"] = asdict(self.train)
        d["g2v"] = asdict(self.g2v)
        d["methods"] = list(self.methods)
        d["depths"] = list(self.depths)
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        base = base or cls()
        kw = {f.name: getattr(base, f.name) for f in fields(cls)}
        for key, val in d.items():
            if key == "dataset":
                merged = {**base.dataset.to_dict(), **val}
                kw[key] = ds.DatasetConfig.from_dict(merged)
            elif key == "train":
                kw[key] = TrainConfig(**{**asdict(base.train), **val})
            elif key == "g2v":
                kw[key] = G2VConfig(**{**asdict(base.g2v), **val})
            elif key in kw:
                kw[key] = tuple(val) if key in ("methods", "depths") else val
            else:
                raise ValidationError(f"unknown config key {key!r}")
        return cls(**kw)

    def resolved(self) -> "ExperimentConfig":
        """Copy whose component seeds are derived from the master seed."""
        return replace(
            self,
            dataset=replace(self.dataset, seed=derive_seed(self.seed, "dataset")),
            train=replace(self.train, seed=derive_seed(self.seed, "train")),
            g2v=replace(self.g2v, seed=derive_seed(self.seed, "g2v")),
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path: str | Path, preset: str = "desk") -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh), ExperimentConfig.preset(preset))


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

class Experiment:
    """File-backed stages; each reads its inputs from ``out_dir``."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.run = cfg.resolved()
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)

    # paths -----------------------------------------------------------------
    def path(self, name: str) -> Path:
        return self.out / name

    def dcfg(self, p: int) -> ds.DatasetConfig:
        return replace(self.run.dataset, p=p)

    # loaders ---------------------------------------------------------------
    def donors(self) -> list[Graph]:
        return read_graph_bank(self.path("graphs_donors.jsonl"))

    def acceptors(self) -> list[Graph]:
        return read_graph_bank(self.path("graphs_acceptors.jsonl"))

    def graph_index(self) -> dict[str, Graph]:
        return {g.id: g for g in self.donors() + self.acceptors()}

    def mis_solutions(self) -> dict[str, SolverResult]:
        return ds.read_solutions(self.path("solutions_mis.jsonl"))

    def maxcut_solutions(self) -> dict[str, SolverResult]:
        return ds.read_solutions(self.path("solutions_maxcut.jsonl"))

    def bank(self, p: int) -> ds.DonorBank:
        return ds.read_donor_bank(self.path(f"donor_bank_p{p}.jsonl"))

    def split(self) -> ds.SplitSpec:
        return ds.read_split(self.path("splits.json"))

    # stages ----------------------------------------------------------------
    def gen_graphs(self):
        d = self.run.dataset
        write_graph_bank(ds.generate_graph_set(d.donors, "donor", d), self.path("graphs_donors.jsonl"))
        acceptors = ds.generate_graph_set(d.acceptors, "acceptor", d)
        write_graph_bank(acceptors, self.path("graphs_acceptors.jsonl"))
        ds.write_split(ds.make_split(acceptors, d.splits), self.path("splits.json"))

    def solve_exact(self):
        ds.write_solutions({g.id: solve_maxcut_exact(g) for g in self.donors()}, self.path("solutions_maxcut.jsonl"))
        ds.write_solutions({g.id: solve_mis_exact(g) for g in self.acceptors()}, self.path("solutions_mis.jsonl"))

    def build_donor_bank(self):
        opt = {k: v.optimum for k, v in self.maxcut_solutions().items()}
        for p in self.run.depths:
            bank = ds.build_donor_bank(self.donors(), self.dcfg(p), opt, path=self.path(f"donor_bank_p{p}.jsonl"))
            if bank.errors:
                log.warning("p=%d: %d donors failed", p, len(bank.errors))

    def build_dataset(self):
        opt = {k: v.optimum for k, v in self.mis_solutions().items()}
        for p in self.run.depths:
            data = ds.build_dataset(self.acceptors(), self.bank(p), self.split(), opt)
            ds.write_triples(data.triples, self.path(f"triples_p{p}.csv"))

    def embed_g2v(self):
        embs = embed_graphs(self.donors() + self.acceptors(), self.run.g2v)
        write_embeddings(embs, self.path("embeddings_g2v.txt"))

    def _dataset(self, p: int) -> ds.Dataset:
        return ds.Dataset(ds.read_triples(self.path(f"triples_p{p}.csv")), self.split())

    def train_models(self):
        graphs = self.graph_index()
        ckdir = self.path("checkpoints")
        ckdir.mkdir(exist_ok=True)
        for p in self.run.depths:
            data = self._dataset(p)
            for method in self.run.methods:
                if method not in ML_METHODS:
                    continue
                embs = read_embeddings(self.path("embeddings_g2v.txt")) if method == "G2V" else None
                res = train_model(data.subset("train"), data.subset("val"), graphs, method, self.run.train, embs)
                save_checkpoint(res.model, ckdir / f"{method}_p{p}.ckpt", self.run.train,
                                {"best_epoch": res.best_epoch, "p": p})
                with open(self.path(f"training_{method}_p{p}.csv"), "w") as fh:
                    fh.write("epoch,train_mse,val_mse,lr\n")
                    fh.write(f"0,,{res.initial_val_mse:.12g},{self.run.train.lr:.12g}\n")
                    for e, (tr, va, lr) in enumerate(zip(res.train_mse, res.val_mse, res.lrs), start=1):
                        fh.write(f"{e},{tr:.12g},{va:.12g},{lr:.12g}\n")

    def retrieve(self):
        graphs = self.graph_index()
        split = self.split()
        k = self.run.k
        embs = read_embeddings(self.path("embeddings_g2v.txt")) if "Closeness" in self.run.methods else None
        for p in self.run.depths:
            bank = self.bank(p)
            donor_ids = list(bank.entries)
            donor_graphs = [graphs[d] for d in donor_ids]
            rows = []
            for method in self.run.methods:
                model = None
                if method in ML_METHODS:
                    model, _ = load_checkpoint(self.path("checkpoints") / f"{method}_p{p}.ckpt")
                for acc in split.test:
                    if model is not None:
                        scores = predict_scores(model, graphs[acc], donor_graphs)
                        top = retrieve_topk(scores, donor_ids, k)
                        score_of = dict(zip(donor_ids, scores))
                    elif method == "Closeness":
                        top = closeness_topk(embs[acc], {d: embs[d] for d in donor_ids}, k)
                        score_of = {d: -float(np.linalg.norm(embs[d] - embs[acc])) for d in top}
                    else:
                        top = random_donors(donor_ids, k, derive_seed(self.cfg.seed, "random-donor", p, acc))
                        score_of = {d: float("nan") for d in top}
                    rows += [(method, acc, rank, d, score_of[d]) for rank, d in enumerate(top, start=1)]
            with open(self.path(f"retrieval_p{p}.csv"), "w") as fh:
                fh.write("method,acceptor_id,rank,donor_id,score\n")
                for method, acc, rank, d, s in rows:
                    fh.write(f"{method},{acc},{rank},{d},{s:.9g}\n")

    def read_retrieval(self, p: int) -> dict[tuple[str, str], list[str]]:
        out = defaultdict(list)
        with open(self.path(f"retrieval_p{p}.csv")) as fh:
            for r in csv.DictReader(fh):
                out[(r["method"], r["acceptor_id"])].append(r["donor_id"])
        return dict(out)

    def evaluate(self):
        graphs = self.graph_index()
        mis = self.mis_solutions()
        for p in self.run.depths:
            bank = self.bank(p)
            retrieved = self.read_retrieval(p)
            records = []
            for (method, acc), donors in retrieved.items():
                records.append(evaluate_transfer(graphs[acc], candidates_for(donors, bank), self.run.shots,
                                                 self.cfg.seed, mis[acc], method))
            write_records(records, self.path(f"eval_records_p{p}.csv"))

    def warmstart(self):
        graphs = self.graph_index()
        mis = self.mis_solutions()
        method = self.run.warmstart_method
        opt = self.run.dataset.opt
        steps = self.run.warmstart_steps
        for p in self.run.depths:
            bank = self.bank(p)
            records = [r for r in read_records(self.path(f"eval_records_p{p}.csv")) if r.method == method]
            rows = []
            for rec in records:
                acc = graphs[rec.acceptor_id]
                params = bank[rec.best_donor_id].params[rec.best_param_index]
                transfer = warm_start_eval(acc, params, steps, self.run.shots, self.cfg.seed, mis[acc.id], opt,
                                           method, rec.best_donor_id, rec.best_param_index)
                rand = random_init(p, derive_seed(self.cfg.seed, "random-init", p, acc.id))
                rnd = warm_start_eval(acc, rand, steps, self.run.shots, self.cfg.seed, mis[acc.id], opt, "random")
                rows.append({
                    "acceptor_id": acc.id, "family": acc.family, "n": acc.n,
                    "passes_threshold": int(transfer.pre.exact_r >= self.run.warmstart_threshold),
                    "transfer_exact_r": transfer.pre.exact_r,
                    "direct_r": transfer.pre.best_r, "transfer_10_r": transfer.post.best_r,
                    "random_r": rnd.pre.best_r, "random_10_r": rnd.post.best_r,
                    "direct_prob": transfer.pre.best_prob_opt, "transfer_10_prob": transfer.post.best_prob_opt,
                    "random_prob": rnd.pre.best_prob_opt, "random_10_prob": rnd.post.best_prob_opt,
                })
            _write_dicts(rows, self.path(f"warmstart_p{p}.csv"))

    def report(self):
        graphs = self.graph_index()
        table, long_rows, ws_rows = [], [], []
        for p in self.run.depths:
            records = read_records(self.path(f"eval_records_p{p}.csv"))
            by_method = defaultdict(list)
            for r in records:
                by_method[r.method].append(r)
            for method in self.run.methods:
                recs = by_method.get(method, [])
                if not recs:
                    continue
                table.append({"method": method, "p": p,
                              "mean_best_r": float(np.mean([r.best_r for r in recs])),
                              "mean_best_prob": float(np.mean([r.best_prob_opt for r in recs])),
                              "n_acceptors": len(recs)})
                groups = defaultdict(list)
                for r in recs:
                    g = graphs[r.acceptor_id]
                    groups[(g.family, g.n)].append(r)
                for (fam, n), rs in sorted(groups.items()):
                    for metric, vals in (("best_r", [x.best_r for x in rs]), ("best_prob", [x.best_prob_opt for x in rs])):
                        long_rows.append({"method": method, "p": p, "family": fam, "n": n, "metric": metric,
                                          "value": float(np.mean(vals)), "count": len(rs)})
            ws_path = self.path(f"warmstart_p{p}.csv")
            if ws_path.exists():
                ws_rows += warmstart_summary(_read_dicts(ws_path), p)
        _write_dicts(table, self.path("table1.csv"))
        _write_dicts(long_rows, self.path("breakdown_long.csv"))
        _write_dicts(ws_rows, self.path("warmstart_summary.csv"))
        self.write_manifest()

    def write_manifest(self):
        files = sorted(x.name for x in self.out.iterdir() if x.is_file() and x.name != "manifest.json")
        files += sorted(f"checkpoints/{x.name}" for x in (self.out / "checkpoints").glob("*.ckpt"))
        manifest = {
            "master_seed": self.cfg.seed,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            "derived_seeds": {"dataset": self.run.dataset.seed, "train": self.run.train.seed,
                              "g2v": self.run.g2v.seed},
            "files": {f: hashlib.sha256((self.out / f).read_bytes()).hexdigest() for f in files},
        }
        manifest["config"].pop("out_dir")
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")

    STAGES = ("gen_graphs", "solve_exact", "build_donor_bank", "build_dataset", "embed_g2v",
              "train_models", "retrieve", "evaluate", "warmstart", "report")

    def run_stage(self, stage: str):
        try:
            getattr(self, stage)()
        except Exception as exc:
            raise StageError(stage, exc) from exc

    def run_all(self):
        for stage in self.STAGES:
            log.info("stage %s", stage)
            self.run_stage(stage)


def run_experiment(cfg: ExperimentConfig) -> Path:
    exp = Experiment(cfg)
    with open(exp.path("config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    exp.run_all()
    return exp.out


def warmstart_summary(rows: list[dict], p: int) -> list[dict]:
    """Mean ratio per condition, over all acceptors and over those passing the threshold."""
    out = []
    pops = {"all": rows, "threshold": [r for r in rows if int(r["passes_threshold"])]}
    for pop, rs in pops.items():
        for cond in ("direct", "transfer_10", "random", "random_10"):
            vals = [float(r[f"{cond}_r"]) for r in rs]
            out.append({"p": p, "population": pop, "condition": cond, "count": len(vals),
                        "mean_r": float(np.mean(vals)) if vals else float("nan")})
    return out


# --------------------------------------------------------------------------
# csv helpers
# --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _write_dicts(rows: list[dict], path: Path) -> None:
    with open(path, "w") as fh:
        if not rows:
            return
        cols = list(rows[0])
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def _read_dicts(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_records(records: list[EvalRecord], path: Path) -> None:
    _write_dicts([asdict(r) for r in records], path)


def read_records(path: Path) -> list[EvalRecord]:
    out = []
    for r in _read_dicts(path):
        out.append(EvalRecord(r["acceptor_id"], r["method"], float(r["best_r"]), float(r["best_prob_opt"]),
                              r["best_donor_id"], int(r["best_param_index"]), int(r["shots"]),
                              r["prob_donor_id"], int(r["prob_param_index"]), float(r["exact_r"])))
    return out
