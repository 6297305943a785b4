"""Donor bank, ground-truth transfer scores and acceptor/donor triples."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import NumericalError, ValidationError
from .graphs import FAMILIES, Graph, SolverResult, generate_graph, solve_maxcut_exact, solve_mis_exact
from .qaoa import OptConfig, multistart
from .seeding import derive_seed
from .simulator import CircuitSpec, ParamSet, Problem, expectation, run_circuit_batch

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class FamilySpec:
    """How many graphs of one family to draw and the parameter ranges.

    ``ranges`` maps parameter name to either a fixed value or ``[lo, hi]``
    (uniform for floats, inclusive integer range for ints).
    """

    count: int
    ranges: dict


PAPER_DONORS = {
    "ER": FamilySpec(250, {"p": [0.4, 0.75]}),
    "RR": FamilySpec(250, {"d": [3, 7]}),
    "WS": FamilySpec(250, {"k": 3, "p_r": [0.4, 0.75]}),
    "BA": FamilySpec(250, {"m": [2, 4]}),
}
PAPER_ACCEPTORS = {
    "ER": FamilySpec(200, {"p": [0.1, 0.5]}),
    "RR": FamilySpec(150, {"d": [2, 5]}),
    "WS": FamilySpec(50, {"k": 3, "p_r": [0.01, 0.1]}),
    "BA": FamilySpec(100, {"m": [2, 4]}),
}
PAPER_SPLITS = {"ER": (100, 50, 50), "RR": (50, 50, 50), "WS": (20, 10, 20), "BA": (40, 20, 40)}


def _scaled(specs: dict, counts: dict) -> dict:
    return {f: FamilySpec(counts[f], s.ranges) for f, s in specs.items()}


DESK_DONORS = _scaled(PAPER_DONORS, {"ER": 15, "RR": 15, "WS": 15, "BA": 15})
DESK_ACCEPTORS = _scaled(PAPER_ACCEPTORS, {"ER": 12, "RR": 9, "WS": 3, "BA": 6})
DESK_SPLITS = {"ER": (6, 3, 3), "RR": (3, 3, 3), "WS": (1, 1, 1), "BA": (2, 2, 2)}


@dataclass
class DatasetConfig:
    donors: dict = field(default_factory=lambda: dict(DESK_DONORS))
    acceptors: dict = field(default_factory=lambda: dict(DESK_ACCEPTORS))
    splits: dict = field(default_factory=lambda: dict(DESK_SPLITS))
    n_min: int = 8
    n_max: int = 12
    n_starts: int = 4
    p: int = 1
    seed: int = 0
    opt: OptConfig = field(default_factory=OptConfig)

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise ValidationError("n_min must not exceed n_max")
        if self.n_starts < 1:
            raise ValidationError("n_starts must be >= 1")
        for role in (self.donors, self.acceptors):
            for fam, spec in role.items():
                if fam not in FAMILIES or spec.count < 0:
                    raise ValidationError(f"bad family spec {fam}: {spec}")
        for fam, counts in self.splits.items():
            if sum(counts) != self.acceptors[fam].count:
                raise ValidationError(f"split counts for {fam} do not sum to acceptor count")

    @classmethod
    def paper(cls, **kw) -> "DatasetConfig":
        base = dict(donors=dict(PAPER_DONORS), acceptors=dict(PAPER_ACCEPTORS),
                    splits=dict(PAPER_SPLITS), n_starts=16)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, **kw) -> "DatasetConfig":
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "donors": {f: asdict(s) for f, s in self.donors.items()},
            "acceptors": {f: asdict(s) for f, s in self.acceptors.items()},
            "splits": {f: list(c) for f, c in self.splits.items()},
            "n_min": self.n_min, "n_max": self.n_max, "n_starts": self.n_starts,
            "p": self.p, "seed": self.seed, "opt": asdict(self.opt),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        for role in ("donors", "acceptors"):
            if role in d:
                d[role] = {f: FamilySpec(**s) for f, s in d[role].items()}
        if "splits" in d:
            d["splits"] = {f: tuple(c) for f, c in d["splits"].items()}
        if "opt" in d:
            d["opt"] = OptConfig(**d["opt"])
        return cls(**d)


# --------------------------------------------------------------------------
# graph sampling
# --------------------------------------------------------------------------

def _draw(value, rng: np.random.Generator):
    if not isinstance(value, (list, tuple)):
        return value
    lo, hi = value
    if isinstance(lo, int) and isinstance(hi, int):
        return int(rng.integers(lo, hi + 1))
    return float(rng.uniform(lo, hi))


def sample_family_params(family: str, ranges: dict, n: int, rng: np.random.Generator) -> dict:
    if family == "RR":
        lo, hi = ranges["d"] if isinstance(ranges["d"], (list, tuple)) else (ranges["d"],) * 2
        choices = [d for d in range(lo, hi + 1) if (n * d) % 2 == 0 and d < n]
        return {"d": int(rng.choice(choices))}
    return {name: _draw(val, rng) for name, val in sorted(ranges.items())}


def generate_graph_set(specs: dict, role: str, cfg: DatasetConfig) -> list[Graph]:
    """Draw every graph for ``role`` ("donor"/"acceptor"), in family order."""
    prefix = "D" if role == "donor" else "A"
    graphs = []
    for fam in FAMILIES:
        if fam not in specs:
            continue
        for i in range(specs[fam].count):
            rng = np.random.default_rng(derive_seed(cfg.seed, role, fam, i))
            n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
            params = sample_family_params(fam, specs[fam].ranges, n, rng)
            gseed = int(rng.integers(0, 2**31 - 1))
            graphs.append(generate_graph(fam, params, n, gseed, graph_id=f"{prefix}-{fam}-{i:04d}"))
    return graphs


# --------------------------------------------------------------------------
# donor bank
# --------------------------------------------------------------------------

@dataclass
class DonorBankEntry:
    graph_id: str
    p: int
    params: list[ParamSet]
    final_objectives: list[float]
    c_opt: float
    ratios: list[float]
    steps: list[int] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"id": self.graph_id, "p": self.p, "params": [x.to_record() for x in self.params],
                "final_objectives": self.final_objectives, "c_opt": self.c_opt,
                "ratios": self.ratios, "steps": self.steps}

    @classmethod
    def from_record(cls, rec: dict) -> "DonorBankEntry":
        return cls(rec["id"], int(rec["p"]), [ParamSet.from_record(x) for x in rec["params"]],
                   list(rec["final_objectives"]), float(rec["c_opt"]), list(rec["ratios"]),
                   list(rec.get("steps", [])))


@dataclass
class DonorBank:
    entries: dict[str, DonorBankEntry]
    errors: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, graph_id: str) -> DonorBankEntry:
        return self.entries[graph_id]

    @property
    def n_param_sets(self) -> int:
        return sum(len(e.params) for e in self.entries.values())


def optimize_donor(g: Graph, cfg: DatasetConfig, c_opt: float | None = None) -> DonorBankEntry:
    spec = CircuitSpec(Problem.MAXCUT, g, cfg.p)
    ocfg = OptConfig(**{**asdict(cfg.opt), "seed": derive_seed(cfg.seed, "opt", g.id, cfg.p)})
    traces = multistart(spec, cfg.n_starts, ocfg)
    if c_opt is None:
        c_opt = solve_maxcut_exact(g).optimum
    finals = [t.final_objective for t in traces]
    return DonorBankEntry(g.id, cfg.p, [t.final_params for t in traces], finals, c_opt,
                          [f / c_opt for f in finals], [t.steps_taken for t in traces])


def build_donor_bank(donors: list[Graph], cfg: DatasetConfig, maxcut_opt: dict | None = None,
                     path: str | Path | None = None) -> DonorBank:
    """Multistart MaxCut optimization for every donor.

    With ``path`` set, entries are appended as they finish and donors already
    present in the file are reused, so an interrupted build resumes.
    """
    if not donors:
        raise ValidationError("donor list is empty")
    entries: dict[str, DonorBankEntry] = {}
    if path is not None and Path(path).exists():
        for e in read_donor_bank(path).entries.values():
            if e.p == cfg.p:
                entries[e.graph_id] = e
    bank = DonorBank({})
    fh = open(path, "a") if path is not None else None
    try:
        for g in donors:
            if g.id in entries:
                bank.entries[g.id] = entries[g.id]
                continue
            try:
                entry = optimize_donor(g, cfg, (maxcut_opt or {}).get(g.id))
            except NumericalError as exc:
                log.warning("donor %s failed: %s", g.id, exc)
                bank.errors[g.id] = str(exc)
                continue
            bank.entries[g.id] = entry
            if fh is not None:
                fh.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    if path is not None:
        # rewrite in donor order so the file is canonical regardless of resume history
        write_donor_bank(bank, path)
    return bank


def write_donor_bank(bank: DonorBank, path: str | Path) -> None:
    with open(path, "w") as fh:
        for e in bank.entries.values():
            fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")


def read_donor_bank(path: str | Path) -> DonorBank:
    entries = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                e = DonorBankEntry.from_record(json.loads(line))
                entries[e.graph_id] = e
    return DonorBank(entries)


# --------------------------------------------------------------------------
# transfer scores and triples
# --------------------------------------------------------------------------

def param_matrix(params: Iterable[ParamSet]) -> np.ndarray:
    return np.array([x.to_vector() for x in params])


def transfer_score(acceptor: Graph, entry: DonorBankEntry, p: int | None = None,
                   mis_opt: float | None = None) -> float:
    """Mean MIS approximation ratio of the donor's optimized angles on ``acceptor``."""
    p = p or entry.p
    if any(x.p != p for x in entry.params):
        raise ValidationError(f"donor {entry.graph_id} parameters are not depth {p}")
    if mis_opt is None:
        mis_opt = solve_mis_exact(acceptor).optimum
    spec = CircuitSpec(Problem.MIS, acceptor, p)
    vals = expectation(run_circuit_batch(spec, param_matrix(entry.params)), spec)
    y = float(np.mean(vals / mis_opt))
    return min(max(y, 0.0), 1.0)


@dataclass(frozen=True)
class TransferTriple:
    acceptor_id: str
    donor_id: str
    y: float


@dataclass
class SplitSpec:
    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        seen = set()
        for name in SPLITS:
            for a in getattr(self, name):
                if a in seen:
                    raise ValidationError(f"acceptor {a} appears in more than one split")
                seen.add(a)

    def split_of(self, acceptor_id: str) -> str:
        for name in SPLITS:
            if acceptor_id in getattr(self, name):
                return name
        raise KeyError(acceptor_id)

    def to_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in SPLITS}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(list(d["train"]), list(d["val"]), list(d["test"]))


def make_split(acceptors: list[Graph], counts: dict) -> SplitSpec:
    """Assign acceptors per family, in generation order, to train/val/test."""
    out = {name: [] for name in SPLITS}
    for fam in FAMILIES:
        members = [g.id for g in acceptors if g.family == fam]
        if fam not in counts:
            continue
        n_tr, n_va, n_te = counts[fam]
        if n_tr + n_va + n_te != len(members):
            raise ValidationError(f"split counts for {fam} cover {n_tr + n_va + n_te} of {len(members)}")
        out["train"] += members[:n_tr]
        out["val"] += members[n_tr:n_tr + n_va]
        out["test"] += members[n_tr + n_va:]
    return SplitSpec(**out)


@dataclass
class Dataset:
    triples: list[TransferTriple]
    split: SplitSpec

    def subset(self, name: str) -> list[TransferTriple]:
        ids = set(getattr(self.split, name))
        return [t for t in self.triples if t.acceptor_id in ids]


def _check_unique(ids: list[str], what: str) -> None:
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate {what} ids")


def build_dataset(acceptors: list[Graph], bank: DonorBank, split: SplitSpec,
                  mis_opt: dict | None = None) -> Dataset:
    """All acceptor x donor triples with their ground-truth scores."""
    _check_unique([g.id for g in acceptors], "acceptor")
    acc_ids = {g.id for g in acceptors}
    split_ids = set(split.train) | set(split.val) | set(split.test)
    if split_ids != acc_ids:
        raise ValidationError("split does not cover exactly the acceptor set")
    triples = []
    for g in acceptors:
        opt = (mis_opt or {}).get(g.id) or solve_mis_exact(g).optimum
        for donor_id, entry in bank.entries.items():
            triples.append(TransferTriple(g.id, donor_id, transfer_score(g, entry, mis_opt=opt)))
    return Dataset(triples, split)


def write_triples(triples: Iterable[TransferTriple], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("acceptor_id,donor_id,y\n")
        for t in triples:
            fh.write(f"{t.acceptor_id},{t.donor_id},{t.y:.9f}\n")


def read_triples(path: str | Path) -> list[TransferTriple]:
    with open(path, newline="") as fh:
        return [TransferTriple(r["acceptor_id"], r["donor_id"], float(r["y"])) for r in csv.DictReader(fh)]


def write_split(split: SplitSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(split.to_dict(), fh, indent=1)
        fh.write("\n")


def read_split(path: str | Path) -> SplitSpec:
    with open(path) as fh:
        return SplitSpec.from_dict(json.load(fh))


def write_solutions(results: dict[str, SolverResult], path: str | Path) -> None:
    with open(path, "w") as fh:
        for gid, res in results.items():
            fh.write(json.dumps(res.to_record(gid), sort_keys=True) + "\n")


def read_solutions(path: str | Path) -> dict[str, SolverResult]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["id"]] = SolverResult.from_record(rec)
    return out
