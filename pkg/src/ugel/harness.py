"""Experiment orchestration: method presets, plan execution, reports.

A plan names a dataset file, a list of methods (full configs or presets
with overrides), seeds and a round budget.  Every (method, seed) cell runs
independently and deterministically; results are persisted incrementally as
one JSON-lines file per cell so an interrupted plan can resume.  Reports
are delimited-text files: per-round RMSE curves, pairwise signed-rank
p-value tables at checkpoint rounds, and pass-count / runtime tables.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .loop import UgelConfig, run_ugel
from .stats import mean_and_std, wilcoxon_signed_rank
from .synthdata import DatasetSplits, load_dataset

__all__ = [
    "PRESETS",
    "MethodSpec",
    "ExperimentPlan",
    "CellResult",
    "ResultsMatrix",
    "method_spec_from_dict",
    "run_plan",
    "load_matrix",
    "summarize",
    "emit_report",
]

# Named reductions of the round engine.  "ugel" is the full algorithm;
# the others disable parts of it (uncertainty-ranked pseudo-labelling,
# the twin, or both) to reproduce the comparison baselines.
PRESETS = {
    "ugel": {"b_c_policy": "equal_d", "tau": 2.0, "twin_enabled": True},
    # The AL baselines are reductions of the round engine (b_c = 0, tau = 0,
    # no twin): the model family stays the same and only the acquisition
    # changes.  BALD needs the dropout-scalar head for its variance scores.
    "al_random": {
        "estimator": "ran",
        "b_c_policy": "zero",
        "tau": 0.0,
        "twin_enabled": False,
    },
    "al_bald": {
        "estimator": "mcd",
        "b_c_policy": "zero",
        "tau": 0.0,
        "twin_enabled": False,
    },
    "ssl": {
        "b_u": 0,
        "b_c_policy": "all_remaining",
        "tau": 2.0,
        "twin_enabled": True,
        "rounds": 1,
    },
    "assl": {"b_c_policy": "all_remaining", "tau": 2.0, "twin_enabled": True},
}

# JSON keys accepted in method dicts, mapped onto UgelConfig fields.
_KEY_ALIASES = {
    "lambda": "nll_weight",
    "lr": "learning_rate",
    "m": "m_init",
    "p": "mcd_passes",
}
_CONFIG_FIELDS = {
    "m_init",
    "b_u",
    "b_c_policy",
    "b_c_fixed",
    "tau",
    "nll_weight",
    "epochs",
    "learning_rate",
    "batch_size",
    "estimator",
    "mcd_passes",
    "rounds",
    "twin_enabled",
    "hidden_dims",
    "dropout_rate",
    "eps_clamp",
    "head_kind",
    "consistency_mode",
}


@dataclass(frozen=True)
class MethodSpec:
    name: str
    config: UgelConfig


def method_spec_from_dict(d: dict, plan_rounds: int) -> MethodSpec:
    d = dict(d)
    name = d.pop("name", None)
    if not name:
        raise ValueError("every method needs a name")
    preset = d.pop("preset", None)
    kwargs: dict = {"rounds": plan_rounds}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
        kwargs.update(PRESETS[preset])
    for key, value in d.items():
        fieldname = _KEY_ALIASES.get(key, key)
        if fieldname not in _CONFIG_FIELDS:
            raise ValueError(f"unknown method option {key!r}")
        if fieldname == "hidden_dims":
            value = tuple(int(v) for v in value)
        kwargs[fieldname] = value
    return MethodSpec(name, UgelConfig(**kwargs))


@dataclass
class ExperimentPlan:
    dataset_path: str
    methods: list
    seeds: list
    rounds: int
    checkpoints: list = field(default_factory=lambda: [2, 4, 6, 8])

    def __post_init__(self):
        if not self.methods:
            raise ValueError("plan needs at least one method")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("method names must be unique")
        if not self.seeds:
            raise ValueError("plan needs at least one seed")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentPlan":
        rounds = int(d.get("rounds", 10))
        methods = [
            method_spec_from_dict(m, rounds) for m in d.get("methods", [])
        ]
        dataset = d["dataset"]
        if base_dir is not None and not os.path.isabs(dataset):
            dataset = str(Path(base_dir) / dataset)
        return cls(
            dataset_path=dataset,
            methods=methods,
            seeds=[int(s) for s in d.get("seeds", list(range(10)))],
            rounds=rounds,
            checkpoints=[int(c) for c in d.get("checkpoints", [2, 4, 6, 8])],
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset_path,
            "rounds": self.rounds,
            "seeds": list(self.seeds),
            "checkpoints": list(self.checkpoints),
            "methods": [
                {"name": m.name, **_config_to_dict(m.config)} for m in self.methods
            ],
        }


def _config_to_dict(cfg: UgelConfig) -> dict:
    return {
        "m_init": cfg.m_init,
        "b_u": cfg.b_u,
        "b_c_policy": cfg.b_c_policy,
        "b_c_fixed": cfg.b_c_fixed,
        "tau": cfg.tau,
        "lambda": cfg.nll_weight,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "estimator": cfg.estimator,
        "mcd_passes": cfg.mcd_passes,
        "rounds": cfg.rounds,
        "twin_enabled": cfg.twin_enabled,
        "hidden_dims": list(cfg.hidden_dims),
        "dropout_rate": cfg.dropout_rate,
        "eps_clamp": cfg.eps_clamp,
        "head_kind": cfg.head_kind,
        "consistency_mode": cfg.consistency_mode,
    }


@dataclass
class CellResult:
    method: str
    seed: int
    records: list
    terminated_early: bool = False
    error: str | None = None


class ResultsMatrix:
    def __init__(self, methods, seeds, rounds, checkpoints):
        self.methods = list(methods)
        self.seeds = list(seeds)
        self.rounds = rounds
        self.checkpoints = list(checkpoints)
        self.cells: dict = {}

    def add(self, cell: CellResult):
        self.cells[(cell.method, cell.seed)] = cell

    def cell(self, method: str, seed: int) -> CellResult:
        return self.cells[(method, seed)]

    def failed_cells(self):
        return [c for c in self.cells.values() if c.error is not None]

    def rmse_at(self, method: str, round_index: int) -> dict:
        """seed -> test RMSE for seeds whose run truly reached the round."""
        out = {}
        for seed in self.seeds:
            cell = self.cells.get((method, seed))
            if cell is None or cell.error is not None:
                continue
            for rec in cell.records:
                if rec["round_index"] == round_index:
                    out[seed] = rec["test_rmse"]
                    break
        return out


def summarize(matrix: ResultsMatrix, method: str, round_index: int):
    """Mean and population std of test RMSE across seeds at one round."""
    values = matrix.rmse_at(method, round_index)
    if not values:
        raise ValueError(f"no results for {method!r} at round {round_index}")
    return mean_and_std([values[s] for s in sorted(values)])


# ---------------------------------------------------------------------------
# Plan execution with incremental persistence.

_dataset_cache: dict = {}


def _load_dataset_cached(path: str) -> DatasetSplits:
    if path not in _dataset_cache:
        _dataset_cache[path] = load_dataset(path)
    return _dataset_cache[path]


def resplit(splits: DatasetSplits, m_init: int) -> DatasetSplits:
    """Move the labelled/pool boundary to ``m_init`` initial labels."""
    combined = list(splits.labelled) + list(splits.pool)
    if m_init > len(combined):
        raise ValueError("m_init exceeds the pool")
    return DatasetSplits(
        labelled=combined[:m_init],
        pool=combined[m_init:],
        test=list(splits.test),
        meta=dict(splits.meta),
    )


def _cell_filename(method: str, seed: int) -> str:
    return f"{method}__seed{seed:04d}.jsonl"


def _execute_cell(dataset_path: str, spec: MethodSpec, seed: int):
    """Run one (method, seed) cell; returns a CellResult."""
    try:
        splits = _load_dataset_cached(dataset_path)
        cfg = replace(spec.config, base_seed=seed)
        data = resplit(splits, cfg.m_init)
        records = run_ugel(cfg, data)
        terminated_early = len(records) - 1 < cfg.rounds
        return CellResult(
            spec.name,
            seed,
            [r.to_dict(include_timing=True) for r in records],
            terminated_early,
            None,
        )
    except Exception as exc:  # noqa: BLE001 - per-run failures must not kill the plan
        return CellResult(spec.name, seed, [], False, f"{type(exc).__name__}: {exc}")


def _write_cell(records_dir: Path, cell: CellResult) -> None:
    path = records_dir / _cell_filename(cell.method, cell.seed)
    tmp = path.with_suffix(".jsonl.tmp")
    with open(tmp, "w") as fh:
        fh.write(
            json.dumps(
                {"method": cell.method, "seed": cell.seed}, sort_keys=True
            )
            + "\n"
        )
        for rec in cell.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.write(
            json.dumps(
                {
                    "complete": True,
                    "terminated_early": cell.terminated_early,
                    "error": cell.error,
                },
                sort_keys=True,
            )
            + "\n"
        )
    os.replace(tmp, path)


def _read_cell(path: Path) -> CellResult | None:
    try:
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError):
        return None
    if len(lines) < 2 or not lines[-1].get("complete"):
        return None
    head, tail = lines[0], lines[-1]
    return CellResult(
        head["method"],
        head["seed"],
        lines[1:-1],
        tail.get("terminated_early", False),
        tail.get("error"),
    )


def run_plan(
    plan: ExperimentPlan,
    out_dir,
    workers: int = 1,
    resume: bool = False,
) -> ResultsMatrix:
    """Execute every (method, seed) cell of the plan.

    Per-cell results are written to ``out_dir/records`` as they complete;
    with ``resume=True``, cells whose record files are already complete are
    loaded instead of re-run.  Failures are recorded and do not stop the
    plan.
    """
    out = Path(out_dir)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    with open(out / "plan.json", "w") as fh:
        json.dump(plan.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")

    matrix = ResultsMatrix(
        [m.name for m in plan.methods], plan.seeds, plan.rounds, plan.checkpoints
    )
    pending = []
    for spec in plan.methods:
        for seed in plan.seeds:
            path = records_dir / _cell_filename(spec.name, seed)
            if resume and path.exists():
                cell = _read_cell(path)
                if cell is not None and cell.error is None:
                    matrix.add(cell)
                    continue
            pending.append((spec, seed))

    if workers <= 1:
        for spec, seed in pending:
            cell = _execute_cell(plan.dataset_path, spec, seed)
            _write_cell(records_dir, cell)
            matrix.add(cell)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_execute_cell, plan.dataset_path, spec, seed): (spec, seed)
                for spec, seed in pending
            }
            for fut in concurrent.futures.as_completed(futures):
                cell = fut.result()
                _write_cell(records_dir, cell)
                matrix.add(cell)
    return matrix


def load_matrix(out_dir) -> ResultsMatrix:
    """Rebuild a results matrix from a plan directory."""
    out = Path(out_dir)
    with open(out / "plan.json") as fh:
        plan_dict = json.load(fh)
    plan = ExperimentPlan.from_dict(plan_dict, base_dir=out)
    matrix = ResultsMatrix(
        [m.name for m in plan.methods], plan.seeds, plan.rounds, plan.checkpoints
    )
    for spec in plan.methods:
        for seed in plan.seeds:
            cell = _read_cell(out / "records" / _cell_filename(spec.name, seed))
            if cell is not None:
                matrix.add(cell)
    return matrix


# ---------------------------------------------------------------------------
# Report emission.


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_table(path: Path, header, rows, fmt: str) -> None:
    delim = "\t" if fmt == "tsv" else ","
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delim, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def emit_report(matrix: ResultsMatrix, out_dir, checkpoints=None, fmt: str = "csv"):
    """Write curve, p-value, pass-count and runtime tables.

    Returns the list of written paths.  All tables except ``runtimes`` are
    deterministic functions of the matrix contents.
    """
    if fmt not in ("csv", "tsv"):
        raise ValueError("format must be csv or tsv")
    checkpoints = list(matrix.checkpoints if checkpoints is None else checkpoints)
    if checkpoints and len(matrix.seeds) < 2:
        raise ValueError("significance tables need at least 2 seeds")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = fmt
    paths = []

    # Per-round curves, forward-filling early-terminated runs with a flag.
    curve_rows = []
    for method in matrix.methods:
        for seed in matrix.seeds:
            cell = matrix.cells.get((method, seed))
            if cell is None or cell.error is not None:
                continue
            by_round = {r["round_index"]: r for r in cell.records}
            last = None
            for rnd in range(0, matrix.rounds + 1):
                rec = by_round.get(rnd)
                if rec is not None:
                    curve_rows.append((method, seed, rnd, rec["test_rmse"], 0))
                    last = rec
                elif last is not None:
                    curve_rows.append((method, seed, rnd, last["test_rmse"], 1))
    curves_path = out / f"curves.{ext}"
    _write_table(
        curves_path,
        ["method", "seed", "round", "test_rmse", "forward_filled"],
        curve_rows,
        fmt,
    )
    paths.append(curves_path)

    # Pairwise signed-rank tables at the checkpoint rounds.
    pv_rows = []
    for rnd in checkpoints:
        for i, m_a in enumerate(matrix.methods):
            for m_b in matrix.methods[i + 1 :]:
                a = matrix.rmse_at(m_a, rnd)
                b = matrix.rmse_at(m_b, rnd)
                shared = sorted(set(a) & set(b))
                note = ""
                missing = [s for s in matrix.seeds if s not in shared]
                if missing:
                    note = f"excluded_seeds={len(missing)}"
                if len(shared) >= 5:
                    res = wilcoxon_signed_rank(
                        [a[s] for s in shared], [b[s] for s in shared]
                    )
                    p_txt = repr(res.p_value)
                    if res.degenerate:
                        note = (note + ";" if note else "") + "degenerate"
                else:
                    p_txt = ""
                    note = (note + ";" if note else "") + "insufficient_pairs"
                pv_rows.append((rnd, m_a, m_b, len(shared), p_txt, note))
    pv_path = out / f"pvalues.{ext}"
    _write_table(
        pv_path,
        ["round", "method_a", "method_b", "n_pairs", "p_value", "note"],
        pv_rows,
        fmt,
    )
    paths.append(pv_path)

    # Pass counts and wall times, min-max across rounds >= 1 and seeds.
    def _collect(method, key_fn):
        values = []
        for seed in matrix.seeds:
            cell = matrix.cells.get((method, seed))
            if cell is None or cell.error is not None:
                continue
            for rec in cell.records:
                if rec["round_index"] >= 1:
                    values.append(key_fn(rec))
        return values

    pass_rows = []
    time_rows = []
    for method in matrix.methods:
        scoring = _collect(method, lambda r: r["passes"]["scoring"])
        pseudo = _collect(method, lambda r: r["passes"]["pseudo_label"])
        tr_primary = _collect(method, lambda r: r["passes"]["training_primary"])
        tr_total = _collect(method, lambda r: r["passes"]["training_total"])
        evaluation = _collect(method, lambda r: r["passes"]["evaluation"])
        if not scoring:
            continue
        pass_rows.append(
            (
                method,
                min(scoring),
                max(scoring),
                min(pseudo),
                max(pseudo),
                min(tr_primary),
                max(tr_primary),
                min(tr_total),
                max(tr_total),
                min(evaluation),
                max(evaluation),
            )
        )
        sc_t = _collect(method, lambda r: r["wall_times"]["scoring"])
        tr_t = _collect(method, lambda r: r["wall_times"]["training"])
        time_rows.append(
            (
                method,
                f"{min(sc_t):.6f}",
                f"{max(sc_t):.6f}",
                f"{min(tr_t):.6f}",
                f"{max(tr_t):.6f}",
            )
        )
    passes_path = out / f"passes.{ext}"
    _write_table(
        passes_path,
        [
            "method",
            "scoring_min",
            "scoring_max",
            "pseudo_label_min",
            "pseudo_label_max",
            "training_primary_min",
            "training_primary_max",
            "training_total_min",
            "training_total_max",
            "evaluation_min",
            "evaluation_max",
        ],
        pass_rows,
        fmt,
    )
    paths.append(passes_path)
    times_path = out / f"runtimes.{ext}"
    _write_table(
        times_path,
        [
            "method",
            "scoring_s_min",
            "scoring_s_max",
            "training_s_min",
            "training_s_max",
        ],
        time_rows,
        fmt,
    )
    paths.append(times_path)
    return paths
