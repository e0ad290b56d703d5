"""Experiment pipeline: data splits, training, estimator, calibration, audit, plots.

All stages read and write plain files under one output directory, so each CLI
verb can run on its own and ``pipeline`` simply chains them. Config files are
INI files whose sections mirror the config dataclasses::

    [auction]            n_bidders, n_items
    [data]               n_train, n_est, n_cal, n_test, train_seed, cal_seed, test_seed
    [train]              TrainConfig fields
    [train.misreport]    MisreportSearchConfig used inside training
    [train.architecture] ArchitectureSpec fields (shared_trunk follows the mode)
    [estimator]          mode plus EstimatorConfig fields
    [eval.misreport]     MisreportSearchConfig for labels, calibration and audit
    [conformal]          alpha, epsilon, epsilon_grid, search_seed
"""

import configparser
import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import auction, conformal, estimator, mechanism, regret, training
from .auction import AuctionConfig
from .estimator import BLACK_BOX, SHARED_BACKBONE, EstimatorConfig
from .mechanism import ArchitectureSpec
from .regret import EVAL_SEARCH, MisreportSearchConfig
from .training import TrainConfig

log = logging.getLogger(__name__)

SPLITS = ("train", "cal", "test")
DEFAULT_EPSILON_GRID = (0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.04, 0.05, 0.075, 0.1, 1.0)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


class GuardError(RuntimeError):
    """A statistical or size guard refused to run (CLI exit code 3)."""


@dataclass
class ExperimentConfig:
    auction: AuctionConfig = field(default_factory=lambda: AuctionConfig(2, 2))
    train: TrainConfig = field(default_factory=TrainConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    mode: str = BLACK_BOX
    eval_search: MisreportSearchConfig = EVAL_SEARCH
    alpha: float = 0.01
    epsilon: float = 0.025
    epsilon_grid: tuple = DEFAULT_EPSILON_GRID
    n_train: int = 100_000
    n_est: int = 10_000
    n_cal: int = 10_000
    n_test: int = 10_000
    train_seed: int = 101
    cal_seed: int = 202
    test_seed: int = 303
    search_seed: int = 0
    out: str = "runs/default"

    def validate(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.n_cal < 1 or self.n_test < 1:
            raise ConfigError("n_cal and n_test must be >= 1")
        if not 1 <= self.n_est <= self.n_train:
            raise ConfigError("n_est must lie in [1, n_train]")
        if self.mode not in (BLACK_BOX, SHARED_BACKBONE):
            raise ConfigError(f"unknown estimator mode {self.mode!r}")
        seeds = (self.train_seed, self.cal_seed, self.test_seed)
        if len(set(seeds)) != 3:
            raise ConfigError(f"train/cal/test splits must use distinct seeds, got {seeds}")
        if self.train.architecture.shared_trunk != (self.mode == SHARED_BACKBONE):
            raise ConfigError("shared_trunk must be set exactly for the shared-backbone mode")
        return self

    def split_size(self, split):
        return {"train": self.n_train, "cal": self.n_cal, "test": self.n_test}[split]

    def split_seed(self, split):
        return {"train": self.train_seed, "cal": self.cal_seed, "test": self.test_seed}[split]

    def fingerprint(self):
        d = dataclasses.asdict(self)
        d.pop("out")
        return json.dumps(d, sort_keys=True, default=list)


# -- config files ------------------------------------------------------------

_MODE_ALIASES = {"shared": SHARED_BACKBONE, "shared-backbone": SHARED_BACKBONE,
                 "blackbox": BLACK_BOX, "black-box": BLACK_BOX}


def _convert(raw, kind, key):
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def _build(cls, section, name, base=None):
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in kinds or kinds[key] not in (int, float, bool, str):
            raise ConfigError(f"[{name}] has unknown key {key!r}")
        values[key] = _convert(raw, kinds[key], f"{name}.{key}")
    try:
        return dataclasses.replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}]: {e}") from None


def parse_config(text, **overrides):
    """Build an :class:`ExperimentConfig` from INI text plus CLI overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    known = {"auction", "data", "train", "train.misreport", "train.architecture", "estimator",
             "eval.misreport", "conformal"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sec = {s: dict(cp[s]) if cp.has_section(s) else {} for s in known}

    auc = _build(AuctionConfig, {k: v for k, v in sec["auction"].items()}, "auction",
                 AuctionConfig(2, 2))
    est_sec = dict(sec["estimator"])
    mode = _MODE_ALIASES.get(est_sec.pop("mode", BLACK_BOX))
    if overrides.get("mode"):
        mode = _MODE_ALIASES.get(overrides["mode"])
    if mode is None:
        raise ConfigError("estimator mode must be shared or blackbox")

    misreport = _build(MisreportSearchConfig, sec["train.misreport"], "train.misreport",
                       MisreportSearchConfig())
    arch_sec = dict(sec["train.architecture"])
    arch_sec.setdefault("shared_trunk", str(mode == SHARED_BACKBONE))
    arch = _build(ArchitectureSpec, arch_sec, "train.architecture", ArchitectureSpec())
    train_base = training.reference_config(auc.n_bidders, auc.n_items)
    train_base = dataclasses.replace(train_base, misreport=misreport, architecture=arch)
    if overrides.get("seed") is not None:
        train_base = dataclasses.replace(train_base, seed=int(overrides["seed"]))
    tr = _build(TrainConfig, sec["train"], "train", train_base)
    if overrides.get("seed") is not None:
        tr = dataclasses.replace(tr, seed=int(overrides["seed"]))
    est = _build(EstimatorConfig, est_sec, "estimator", EstimatorConfig())
    ev = _build(MisreportSearchConfig, sec["eval.misreport"], "eval.misreport", EVAL_SEARCH)

    top = {}
    data_kinds = {"n_train": int, "n_est": int, "n_cal": int, "n_test": int,
                  "train_seed": int, "cal_seed": int, "test_seed": int}
    for key, raw in sec["data"].items():
        if key not in data_kinds:
            raise ConfigError(f"[data] has unknown key {key!r}")
        top[key] = _convert(raw, data_kinds[key], f"data.{key}")
    conf = dict(sec["conformal"])
    for key, raw in conf.items():
        if key in ("alpha", "epsilon"):
            top[key] = _convert(raw, float, f"conformal.{key}")
        elif key == "search_seed":
            top[key] = _convert(raw, int, "conformal.search_seed")
        elif key == "epsilon_grid":
            top[key] = tuple(_convert(x.strip(), float, "conformal.epsilon_grid")
                             for x in raw.split(",") if x.strip())
        else:
            raise ConfigError(f"[conformal] has unknown key {key!r}")
    for key in ("alpha", "epsilon", "out"):
        if overrides.get(key) is not None:
            top[key] = overrides[key]
    if "n_train" in top:
        tr = dataclasses.replace(tr, n_train_samples=top["n_train"])
    else:
        top["n_train"] = tr.n_train_samples
    cfg = ExperimentConfig(auction=auc, train=tr, estimator=est, mode=mode, eval_search=ev, **top)
    return cfg.validate()


def load_config(path=None, **overrides):
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, **overrides)


# -- artifacts -----------------------------------------------------------------

class Artifacts:
    """File layout of one experiment directory."""

    def __init__(self, out):
        self.out = out

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def data(self, split):
        return self.path("data", f"{split}.csv")

    mechanism = property(lambda self: self.path("mechanism.ckpt"))
    train_log = property(lambda self: self.path("train_log.jsonl"))
    estimator = property(lambda self: self.path("estimator.ckpt"))
    est_regrets = property(lambda self: self.path("estimator_regrets.csv"))
    cal_regrets = property(lambda self: self.path("cal_regrets.csv"))
    calibration = property(lambda self: self.path("calibration.json"))
    residuals = property(lambda self: self.path("calibration_residuals.csv"))
    test_regrets = property(lambda self: self.path("test_regrets.csv"))
    audit_json = property(lambda self: self.path("audit.json"))
    audit_csv = property(lambda self: self.path("audit.csv"))
    report = property(lambda self: self.path("report.json"))
    sweep = property(lambda self: self.path("sweep.csv"))
    plots = property(lambda self: self.path("plots"))


def _require(path, what):
    if not os.path.exists(path):
        raise ConfigError(f"missing {what}: {path}")


def _read_regret_csv(path, n_bidders):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    count = len(rows) // n_bidders
    out = np.zeros((count, n_bidders))
    for r in rows:
        out[int(r["auction_id"]), int(r["bidder"])] = float(r["regret"])
    return out


def _load_split(cfg, art, split):
    _require(art.data(split), f"{split} dataset")
    return auction.read_valuations_csv(art.data(split), cfg.auction)


def _regrets_cached(cfg, art, path, mech, values, seed, resume):
    if resume and os.path.exists(path):
        cached = _read_regret_csv(path, cfg.auction.n_bidders)
        if cached.shape[0] == values.shape[0]:
            return cached
    per_bidder = regret.regret_batch(mech, values, cfg.eval_search, seed).per_bidder
    regret.write_regret_csv(path, per_bidder)
    return per_bidder


# -- commands ------------------------------------------------------------------

def cmd_generate(cfg, split="all"):
    art = Artifacts(cfg.out)
    os.makedirs(art.path("data"), exist_ok=True)
    splits = SPLITS if split == "all" else (split,)
    written = []
    for s in splits:
        if s not in SPLITS:
            raise ConfigError(f"unknown split {s!r}")
        values = auction.sample_values(cfg.auction, cfg.split_size(s), cfg.split_seed(s))
        auction.write_valuations_csv(art.data(s), values)
        written.append(art.data(s))
    return written


def cmd_train(cfg, mechanism_override=None):
    art = Artifacts(cfg.out)
    data = _load_split(cfg, art, "train")
    params, trainlog = training.train(cfg.train, data)
    mechanism.save_mechanism(art.mechanism, params)
    trainlog.write_jsonl(art.train_log)
    return params, trainlog


def _load_mechanism(art):
    _require(art.mechanism, "mechanism checkpoint")
    return mechanism.load_mechanism(art.mechanism)


def cmd_fit_estimator(cfg, mech=None, resume=False):
    art = Artifacts(cfg.out)
    mech = mech if mech is not None else _load_mechanism(art)
    values = _load_split(cfg, art, "train")[:cfg.n_est]
    labels = _regrets_cached(cfg, art, art.est_regrets, mech, values, cfg.search_seed,
                             resume).max(axis=1)
    est, history = estimator.fit_estimator(mech, values, labels, cfg.mode, cfg.estimator)
    estimator.save_estimator(art.estimator, est)
    return est, history


def cmd_calibrate(cfg, mech=None, est=None, resume=False):
    art = Artifacts(cfg.out)
    mech = mech if mech is not None else _load_mechanism(art)
    if est is None:
        _require(art.estimator, "estimator checkpoint")
        est = estimator.load_estimator(art.estimator)
    values = _load_split(cfg, art, "cal")
    if conformal.conformal_index(values.shape[0], cfg.alpha) > values.shape[0]:
        raise GuardError(f"{values.shape[0]} calibration profiles cannot support alpha={cfg.alpha}")
    per_bidder = _regrets_cached(cfg, art, art.cal_regrets, mech, values, cfg.search_seed + 1,
                                 resume)
    cal = conformal.calibrate(mech, est, values, cfg.alpha, regrets=per_bidder.max(axis=1))
    conformal.write_json(art.calibration, cal.to_json())
    conformal.write_residuals_csv(art.residuals, cal)
    return cal


def _stats(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return {"mean": 0.0, "std": 0.0}
    return {"mean": float(x.mean()), "std": float(x.std())}


def cmd_audit(cfg, mech=None, est=None, q_alpha=None, resume=False):
    """Audit the gate on the test split; writes audit and report files, returns the report."""
    art = Artifacts(cfg.out)
    mech = mech if mech is not None else _load_mechanism(art)
    if est is None:
        _require(art.estimator, "estimator checkpoint")
        est = estimator.load_estimator(art.estimator)
    if q_alpha is None:
        _require(art.calibration, "calibration result")
        with open(art.calibration) as fh:
            q_alpha = json.load(fh)["q_alpha"]
    values = _load_split(cfg, art, "test")
    per_bidder = _regrets_cached(cfg, art, art.test_regrets, mech, values, cfg.search_seed + 2,
                                 resume)
    rgt = per_bidder.max(axis=1)
    rule = conformal.AcceptanceRule(mech, est, cfg.epsilon, q_alpha, cfg.alpha)
    result = conformal.audit_coverage(rule, values, regrets=rgt)
    conformal.write_json(art.audit_json, result.summary(cfg.alpha, cfg.epsilon, q_alpha))
    result.write_csv(art.audit_csv)
    ok = result.accepted
    report = {
        "auction": f"{cfg.auction.n_bidders}x{cfg.auction.n_items}",
        "mode": cfg.mode,
        "alpha": cfg.alpha,
        "n_test": int(rgt.size),
        "baseline": {
            "revenue": _stats(result.revenue),
            "regret": _stats(rgt),
            "max_regret": float(rgt.max()),
        },
        "gated": {
            "requested_epsilon": cfg.epsilon,
            "q_alpha": q_alpha,
            "acceptance_rate": result.acceptance_rate,
            "n_accepted": int(ok.sum()),
            "violation_rate": result.violation_rate,
            "revenue": _stats(result.revenue[ok]),
            "regret": _stats(rgt[ok]),
            "max_accepted_regret": result.max_accepted_regret,
        },
    }
    conformal.write_json(art.report, report)
    return report


def _read_audit_csv(path):
    _require(path, "per-auction audit CSV")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    regrets = np.array([float(r["regret"]) for r in rows])
    predicted = np.array([float(r["predicted_regret"]) for r in rows])
    accepted = np.array([r["accepted"] == "1" for r in rows], dtype=bool)
    return regrets, predicted, accepted


def sweep_table(predictions, q_alpha, grid):
    """Rows ``(epsilon, rejections, acceptance_rate)``; only the threshold moves with epsilon."""
    p = np.asarray(predictions)
    rows = []
    for eps in grid:
        accepted = int(np.count_nonzero(p < eps - q_alpha))
        rows.append((float(eps), p.size - accepted, accepted / p.size if p.size else 0.0))
    return rows


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def cmd_sweep_epsilon(cfg, grid=None):
    art = Artifacts(cfg.out)
    grid = tuple(grid) if grid is not None else cfg.epsilon_grid
    _, predicted, _ = _read_audit_csv(art.audit_csv)
    _require(art.calibration, "calibration result")
    with open(art.calibration) as fh:
        q_alpha = json.load(fh)["q_alpha"]
    rows = sweep_table(predicted, q_alpha, grid)
    _write_rows(art.sweep, ("epsilon", "rejections", "acceptance_rate"), rows)
    return rows


def histogram_rows(regrets, bins=50):
    counts, edges = np.histogram(regrets, bins=bins)
    return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def running_max_rows(regrets):
    return [(k + 1, float(x)) for k, x in enumerate(np.maximum.accumulate(regrets))]


def cmd_emit_plots(cfg, bins=50):
    """Figure data from the per-auction audit CSV (plus q_alpha for the sweep)."""
    art = Artifacts(cfg.out)
    regrets, predicted, accepted = _read_audit_csv(art.audit_csv)
    os.makedirs(art.plots, exist_ok=True)
    out = {}
    out["histogram"] = art.path("plots", "regret_histogram.csv")
    _write_rows(out["histogram"], ("bin_lo", "bin_hi", "count"), histogram_rows(regrets, bins))
    out["running_max"] = art.path("plots", "running_max.csv")
    _write_rows(out["running_max"], ("n_auctions", "max_regret"), running_max_rows(regrets))
    out["accept_reject"] = art.path("plots", "accept_reject.csv")
    _write_rows(out["accept_reject"], ("auction_id", "group", "regret"),
                [(a, "accepted" if ok else "rejected", float(r))
                 for a, (r, ok) in enumerate(zip(regrets, accepted))])
    out["joint"] = art.path("plots", "regret_vs_predicted.csv")
    _write_rows(out["joint"], ("auction_id", "regret", "predicted_regret"),
                [(a, float(r), float(p)) for a, (r, p) in enumerate(zip(regrets, predicted))])
    if os.path.exists(art.calibration):
        with open(art.calibration) as fh:
            q_alpha = json.load(fh)["q_alpha"]
        out["sweep"] = art.path("plots", "epsilon_sweep.csv")
        _write_rows(out["sweep"], ("epsilon", "rejections", "acceptance_rate"),
                    sweep_table(predicted, q_alpha, cfg.epsilon_grid))
    return out


def cmd_pipeline(cfg, resume=False):
    """Run every stage; with ``resume`` existing artifacts of the same config are reused."""
    cfg.validate()
    art = Artifacts(cfg.out)
    os.makedirs(cfg.out, exist_ok=True)
    stamp = art.path("config.json")
    if resume and os.path.exists(stamp):
        with open(stamp) as fh:
            if fh.read() != cfg.fingerprint():
                raise ConfigError(f"{cfg.out} holds artifacts of a different configuration")
    with open(stamp, "w") as fh:
        fh.write(cfg.fingerprint())

    if not (resume and all(os.path.exists(art.data(s)) for s in SPLITS)):
        cmd_generate(cfg, "all")
    if resume and os.path.exists(art.mechanism):
        mech = mechanism.load_mechanism(art.mechanism)
    else:
        mech, _ = cmd_train(cfg)
    if resume and os.path.exists(art.estimator):
        est = estimator.load_estimator(art.estimator)
    else:
        est, _ = cmd_fit_estimator(cfg, mech, resume)
    cal = cmd_calibrate(cfg, mech, est, resume)
    report = cmd_audit(cfg, mech, est, cal.q_alpha, resume)
    cmd_sweep_epsilon(cfg)
    cmd_emit_plots(cfg)
    return report
