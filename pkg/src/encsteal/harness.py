"""End-to-end experiments: pretrain -> steal -> probe -> evaluate, plus grids.

A run is a fixed sequence of phases. Each phase writes its artifacts into the
run directory and the report (``report.json``) records which phases have
completed, so a later invocation with ``resume=True`` and the same config hash
picks up from there instead of recomputing. That is what lets the CLI expose
the phases as separate subcommands.

Run directory layout::

    config.yaml            the resolved config
    report.json            ExperimentReport, rewritten after every phase
    target/                encoder checkpoint (backbone, frozen)
    target_probe/          linear probe head on target embeddings
    surrogate/             surrogate backbone
    surrogate_head/        classifier head or adapter, when the attack has one
    surrogate_probe/       linear probe head on surrogate embeddings
    target_losses.csv      epoch,loss
    attack_losses.csv      epoch,loss
    metrics.csv            run_id,attack,response_type,surrogate_ds,agreement,accuracy,queries,seed
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import save_config
from .data import gen_synthetic, load_cifar_binary, shifted_variant, subsample, train_test_split
from .evaluation import EvalResult, LinearProbe, accuracy, agreement, train_probe
from .exceptions import BudgetExhaustedError, ConfigurationError, EncStealError, ExperimentError
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .pretrain import pretrain_encoder
from .steal import StealResult, TargetOracle, run_attack

log = logging.getLogger(__name__)

PHASES = ("data", "pretrain", "probe-target", "attack", "probe-surrogate", "eval")
METRICS_HEADER = ["run_id", "attack", "response_type", "surrogate_ds", "agreement", "accuracy", "queries", "seed"]
# surrogate datasets drawn from a separate generator get ids in their own range
SURROGATE_ID_OFFSET = 1_000_000_000
PROBE_DATA_FLAG = "surrogate probe trained on the surrogate dataset instead of the target training set"


@dataclass
class ExperimentReport:
    run_id: str
    config_hash: str
    seed: int
    attack: str
    response_type: str
    surrogate_ds: str
    completed: list = field(default_factory=list)
    query_count: int = 0
    query_budget: int | None = None
    budget_exhausted: bool = False
    target_losses: list = field(default_factory=list)
    attack_losses: list = field(default_factory=list)
    target_eval: EvalResult | None = None
    surrogate_eval: EvalResult | None = None
    gap: float | None = None
    target_hash: str = ""
    target_hash_after: str = ""
    leaked_ids: int = 0
    flags: list = field(default_factory=list)
    wall_time: dict = field(default_factory=dict)
    error: str | None = None

    def metrics(self):
        """Everything determined by (config, seed): the report minus wall-clock timings."""
        d = asdict(self)
        d.pop("wall_time")
        return d

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("target_eval", "surrogate_eval"):
            if d.get(key) is not None:
                d[key] = EvalResult(**d[key])
        return cls(**d)

    def metrics_row(self):
        ev = self.surrogate_eval
        return [
            self.run_id,
            self.attack,
            self.response_type,
            self.surrogate_ds,
            "" if ev is None else repr(ev.agreement),
            "" if ev is None else repr(ev.accuracy),
            self.query_count,
            self.seed,
        ]


def write_losses(path, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, value in enumerate(values):
            writer.writerow([epoch, repr(float(value))])
    return path


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerows(rows)
    return path


def surrogate_label(cfg):
    sd = cfg.attack.surrogate_data
    name = "target-train" if sd.source == "target-train" else f"synthetic:{sd.shift}"
    return name if sd.fraction == 1.0 else f"{name}@{sd.fraction:g}"


def load_target_data(cfg):
    """(train, test) for the target; test ids never overlap train ids."""
    ds_cfg = cfg.target.dataset
    if ds_cfg.source == "cifar":
        train = load_cifar_binary(ds_cfg.cifar_train, split="train")
        test = load_cifar_binary(ds_cfg.cifar_test, split="test")
        test.ids = test.ids + len(train)
        return train, test
    full = gen_synthetic(ds_cfg.synthetic)
    return train_test_split(full, ds_cfg.test_fraction, ds_cfg.split_seed)


def load_surrogate_data(cfg, train):
    sd = cfg.attack.surrogate_data
    if sd.source == "target-train":
        ds = train
    else:
        if cfg.target.dataset.source != "synthetic" and sd.spec is None:
            raise ConfigurationError("a synthetic surrogate for a cifar target needs an explicit spec")
        ds = shifted_variant(sd.spec or cfg.target.dataset.synthetic, sd.shift)
        ds.ids = ds.ids + SURROGATE_ID_OFFSET
        ds.split = "surrogate"
    return subsample(ds, sd.fraction, sd.seed) if sd.fraction < 1.0 else ds


def check_budget(attack, n_surrogate):
    """A budget must cover one full epoch of queries unless partial runs are allowed."""
    if attack.budget is not None and attack.budget < n_surrogate and not attack.allow_partial:
        raise BudgetExhaustedError(n_surrogate, 0, attack.budget)


class Experiment:
    """One run of the pipeline. Call :meth:`run` (optionally up to a phase)."""

    def __init__(self, cfg, out_dir=None, cache=None, resume=False):
        self.cfg = cfg
        self.out_dir = out_dir
        self.cache = cache
        self.report = ExperimentReport(
            run_id=cfg.run_id,
            config_hash=cfg.hash(),
            seed=cfg.target.seed,
            attack=cfg.attack.steal.attack,
            response_type=cfg.attack.response_type,
            surrogate_ds=surrogate_label(cfg),
            query_budget=cfg.attack.budget,
        )
        if cfg.eval.probe_data != "target-train":
            self.report.flags.append(PROBE_DATA_FLAG)
        if resume and out_dir and os.path.exists(self._path("report.json")):
            with open(self._path("report.json")) as fh:
                previous = ExperimentReport.from_dict(json.load(fh))
            if previous.config_hash != self.report.config_hash:
                raise ConfigurationError(
                    f"{out_dir} holds a run with config hash {previous.config_hash[:12]}, "
                    f"not {self.report.config_hash[:12]}"
                )
            previous.error = None
            self.report = previous

    def _path(self, *parts):
        return os.path.join(self.out_dir, *parts)

    def _save(self, module, name, meta=None):
        if self.out_dir:
            save_checkpoint(module, self._path(name), meta)

    def write_report(self):
        if self.out_dir:
            with open(self._path("report.json"), "w") as fh:
                json.dump(self.report.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")

    # phases ------------------------------------------------------------

    def _data(self, done):
        self.train, self.test = load_target_data(self.cfg)
        self.surrogate_ds = load_surrogate_data(self.cfg, self.train)

    def _pretrain(self, done):
        cfg, report = self.cfg, self.report
        key = ("target", json.dumps(cfg.target.to_dict(), sort_keys=True))
        if done:
            self.target = load_checkpoint(self._path("target")).set_trainable(False)
        elif self.cache is not None and key in self.cache:
            self.target, report.target_losses = self.cache[key]
        else:
            if cfg.target.checkpoint:
                self.target, report.target_losses = load_checkpoint(cfg.target.checkpoint).set_trainable(False), []
            else:
                res = pretrain_encoder(cfg.target.method, self.train, cfg.target.arch, cfg.target.hyper, cfg.target.seed)
                self.target, report.target_losses = res.model, res.losses
            if self.cache is not None:
                self.cache[key] = (self.target, report.target_losses)
        report.target_hash = self.target.param_hash()
        if not done:
            self._save(self.target, "target", {"seed": cfg.target.seed, "method": cfg.target.method})
            if self.out_dir:
                write_losses(self._path("target_losses.csv"), report.target_losses)

    def _probe_target(self, done):
        cfg = self.cfg
        key = ("probe", json.dumps([cfg.target.to_dict(), cfg.eval.to_dict()], sort_keys=True))
        if done:
            self.target_probe = LinearProbe.from_head(load_checkpoint(self._path("target_probe")))
        elif self.cache is not None and key in self.cache:
            self.target_probe = self.cache[key]
        else:
            self.target_probe = train_probe(self.target, self.train, cfg.eval.probe, cfg.eval.seed)
            if self.cache is not None:
                self.cache[key] = self.target_probe
        if not done:
            self._save(self.target_probe.head_, "target_probe")

    def _attack(self, done):
        cfg, report = self.cfg, self.report
        attack = cfg.attack
        if done:
            head = None
            if os.path.exists(self._path("surrogate_head")):
                head = load_checkpoint(self._path("surrogate_head"))
            self.result = StealResult(
                load_checkpoint(self._path("surrogate")).set_trainable(False),
                report.attack_losses,
                report.query_count,
                report.budget_exhausted,
                head,
            )
            return
        check_budget(attack, len(self.surrogate_ds))
        probe = self.target_probe if attack.response_type != "Embedding" else None
        oracle = TargetOracle(self.target, attack.response_type, probe, attack.budget)
        self.result = run_attack(oracle, self.surrogate_ds, attack.surrogate_arch or cfg.target.arch, attack.steal)
        report.query_count = oracle.query_count
        report.budget_exhausted = self.result.exhausted
        report.attack_losses = self.result.losses
        report.target_hash_after = self.target.param_hash()
        report.leaked_ids = int(np.intersect1d(oracle.queried_ids(), self.test.ids).size)
        if report.leaked_ids:
            raise ExperimentError("attack", RuntimeError(f"{report.leaked_ids} evaluation samples were queried"))
        self._save(self.result.surrogate, "surrogate", {"seed": attack.steal.seed, "attack": attack.steal.attack})
        if self.result.head is not None:
            self._save(self.result.head, "surrogate_head")
        if self.out_dir:
            write_losses(self._path("attack_losses.csv"), self.result.losses)

    def _probe_surrogate(self, done):
        cfg = self.cfg
        self.surrogate_probe = None
        if cfg.attack.steal.attack == "ConvClassifier":
            return  # the stolen classifier head is used directly
        if done:
            self.surrogate_probe = LinearProbe.from_head(load_checkpoint(self._path("surrogate_probe")))
            return
        probe_ds = self.train if cfg.eval.probe_data == "target-train" else self.surrogate_ds
        self.surrogate_probe = train_probe(self.result.surrogate, probe_ds, cfg.eval.probe, cfg.eval.seed)
        self._save(self.surrogate_probe.head_, "surrogate_probe")

    def _eval(self, done):
        report, test = self.report, self.test
        if self.surrogate_probe is None:
            preds_s = self.result.predict(test.images)
        else:
            preds_s = self.surrogate_probe.predict(self.result.surrogate.embed(test.images))
        preds_t = self.target_probe.predict(self.target.embed(test.images))
        report.target_eval = EvalResult(agreement(preds_t, preds_t), accuracy(preds_t, test.labels), len(test))
        report.surrogate_eval = EvalResult(agreement(preds_s, preds_t), accuracy(preds_s, test.labels), len(test))
        report.gap = report.surrogate_eval.gap
        log.info(
            "%s: agreement=%.4f accuracy=%.4f gap=%.4f queries=%d",
            report.run_id,
            report.surrogate_eval.agreement,
            report.surrogate_eval.accuracy,
            report.gap,
            report.query_count,
        )
        if self.out_dir:
            write_metrics_csv(self._path("metrics.csv"), [report.metrics_row()])

    # driver -------------------------------------------------------------

    def run(self, until="eval"):
        if until not in PHASES:
            raise ConfigurationError(f"unknown phase {until!r}; expected one of {PHASES}")
        report = self.report
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            save_config(self.cfg, self._path("config.yaml"))
        for name in PHASES[: PHASES.index(until) + 1]:
            done = name in report.completed
            start = time.perf_counter()
            try:
                getattr(self, "_" + name.replace("-", "_"))(done)
            except Exception as exc:
                cause = exc.cause if isinstance(exc, ExperimentError) else exc
                err = ExperimentError(name, cause)
                report.error = str(err)
                self.write_report()
                raise err from cause
            finally:
                if not done:
                    report.wall_time[name] = time.perf_counter() - start
            if not done:
                report.completed.append(name)
            self.write_report()
        return report


def run_experiment(cfg, out_dir=None, cache=None, until="eval", resume=False):
    """Run the pipeline for ``cfg`` and return its ExperimentReport.

    ``cache`` (a dict) reuses trained targets and target probes across calls
    with identical target/eval sections; both are deterministic in the config.
    Failures raise ExperimentError tagged with the phase; artifacts of the
    phases that finished stay on disk and ``report.json`` records the error.
    """
    return Experiment(cfg, out_dir, cache, resume).run(until)


def grid_cells(axes):
    """Cartesian product of ``{dotted.key: [values]}`` as override dicts, in axis order."""
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def _run_cell(job):
    cfg, cell_dir, cache = job
    try:
        return run_experiment(cfg, cell_dir, cache), None
    except EncStealError as exc:
        return None, str(exc)


def run_grid(base_cfg, axes=None, out_dir=None, workers=1, cache=None):
    """Run every cell of the grid; a failed cell is recorded and the grid moves on.

    Returns ``(reports, errors)``: one report per cell (``None`` for failures)
    and a mapping from cell index to error message. ``summary.csv`` has one
    row per cell, with empty metric fields for failed cells.
    """
    axes = base_cfg.grid if axes is None else axes
    jobs = []
    for i, overrides in enumerate(grid_cells(axes)):
        cfg = base_cfg.with_overrides({**overrides, "run_id": f"{base_cfg.run_id}-{i:03d}", "grid": {}})
        jobs.append((cfg, os.path.join(out_dir, f"cell{i:03d}") if out_dir else None, cache))

    if workers > 1:
        # the cache is per process there, so it is not shared between cells
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, [(c, d, None) for c, d, _ in jobs]))
    else:
        outcomes = [_run_cell(job) for job in jobs]

    reports = [r for r, _ in outcomes]
    errors = {i: err for i, (_, err) in enumerate(outcomes) if err is not None}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        rows = []
        for (cfg, _, _), report in zip(jobs, reports):
            if report is not None:
                rows.append(report.metrics_row())
            else:
                rows.append([cfg.run_id, cfg.attack.steal.attack, cfg.attack.response_type,
                             surrogate_label(cfg), "", "", "", cfg.target.seed])
        write_metrics_csv(os.path.join(out_dir, "summary.csv"), rows)
        if errors:
            with open(os.path.join(out_dir, "grid_errors.csv"), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["cell", "run_id", "error"])
                for i, err in errors.items():
                    writer.writerow([i, jobs[i][0].run_id, err])
    return reports, errors
