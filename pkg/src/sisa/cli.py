"""``sisa`` command line: generate data, plan, train, unlearn, evaluate, analyse, simulate.

Every command reads an optional ``--config`` file of ``key = value`` lines
(``#`` starts a comment). Keys are the long option names with dashes or
underscores; options given on the command line win over the file.

Exit status is 0 on success, 1 on a usage error and 2 when the data, plan
or checkpoint store is rejected.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import analytics, montecarlo
from .dataset import gen_synthetic, load_csv, assign_probs, split_train_test, three_group_scenario, write_csv
from .errors import SisaError
from .learner import Arch, TrainConfig
from .orchestrator import (MAJORITY, MEAN, RequestStream, evaluate_report, load_model, sisa_train,
                           save_model, unlearn)
from .partition import ShardBudget, distribution_aware_shard, load_plan, save_plan, uniform_partition

__all__ = ["RunConfig", "UsageError", "read_config", "main"]


class UsageError(Exception):
    """Bad command line or config file (exit status 1)."""


@dataclass
class RunConfig:
    # dataset source: a CSV path, or synthetic blobs when ``data`` is empty
    data: str = ""
    N: int = 2000
    dim: int = 10
    classes: int = 4
    data_seed: int = 0
    test_fraction: float = 0.2
    scenario: str = "none"
    prob_scale: float = 1.0
    # partition
    plan_kind: str = "uniform"
    S: int = 5
    C: float = 1.0
    R: int = 4
    plan_seed: int = 0
    # training
    arch: str = "logistic"
    hidden: int = 16
    epochs: int = 10
    lr: float = 0.1
    batch_size: int = 32
    seed: int = 0
    aggregation: str = MAJORITY
    workers: int = 1
    # locations
    store: str = "store"
    out: str = "out"
    # unlearning
    requests: str = ""
    requests_file: str = ""
    mode: str = "sequential"
    # analysis / simulation
    K: int = 1
    Ks: str = "1,2,5,10,20,50,100"
    shard_grid: str = ""  # simulate: comma-separated S values (default: S)
    slice_grid: str = ""  # simulate: comma-separated R values (default: R)
    trials: int = 100
    sim_seed: int = 0
    validate: bool = False
    horizon: int = 15

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.lr, self.batch_size, self.seed)

    def architecture(self) -> Arch:
        if self.arch == "logistic":
            return Arch.logistic()
        if self.arch == "mlp":
            return Arch.mlp(self.hidden)
        raise UsageError(f"unknown arch {self.arch!r} (logistic or mlp)")

    @property
    def out_dir(self) -> Path:
        path = Path(self.out)
        path.mkdir(parents=True, exist_ok=True)
        return path


_FIELDS = {f.name: f for f in fields(RunConfig)}
_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    text = raw.strip()
    try:
        if kind == "bool":
            return _BOOL_WORDS[text.lower()]
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except (KeyError, ValueError):
        raise UsageError(f"config key {name!r}: cannot read {raw!r} as {kind}") from None
    return text


def _key(name: str) -> str:
    key = name.strip().replace("-", "_")
    if key not in _FIELDS:
        # keys are case-insensitive except where case is the whole name (S, R, K, N, C)
        lowered = {k.lower(): k for k in _FIELDS}
        key = lowered.get(key.lower(), key)
    return key


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file into RunConfig field values."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        name, raw = line.split("=", 1)
        key = _key(name)
        if key not in _FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown key {name.strip()!r}")
        values[key] = _coerce(key, raw)
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sisa", description="Sharded, sliced training with exact unlearning.")
    common = _Parser(add_help=False)
    _add(common, "--config", help="key = value file; command-line options override it")
    _add(common, "--out", help="output directory for JSON/CSV reports")
    data = _Parser(add_help=False)
    _add(data, "--data", help="CSV with id,label,erase_prob,f_1..f_d (default: synthetic blobs)")
    _add(data, "--N", type=int, help="synthetic dataset size")
    _add(data, "--dim", type=int)
    _add(data, "--classes", type=int)
    _add(data, "--data-seed", type=int)
    _add(data, "--test-fraction", type=float)
    train = _Parser(add_help=False)
    _add(train, "--store", help="checkpoint store directory")
    _add(train, "--arch", choices=["logistic", "mlp"])
    _add(train, "--hidden", type=int)
    _add(train, "--epochs", type=int, help="base epoch count e'")
    _add(train, "--lr", type=float)
    _add(train, "--batch-size", type=int)
    _add(train, "--seed", type=int)
    _add(train, "--aggregation", choices=[MAJORITY, MEAN])
    _add(train, "--workers", type=int)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common, data], help="write a synthetic dataset CSV")
    _add(p, "--scenario", choices=["none", "three_group"])
    _add(p, "--prob-scale", type=float)

    p = sub.add_parser("plan", parents=[common, data], help="build a partition plan")
    _add(p, "--plan-kind", choices=["uniform", "distribution_aware"])
    _add(p, "--S", type=int)
    _add(p, "--R", type=int)
    _add(p, "--C", type=float, help="expected-request cap per shard (distribution_aware)")
    _add(p, "--plan-seed", type=int)

    sub.add_parser("train", parents=[common, data, train], help="train every shard from the plan")

    p = sub.add_parser("unlearn", parents=[common, data, train], help="forget points and retrain")
    _add(p, "--requests", help="comma-separated point ids")
    _add(p, "--requests-file", help="file of point ids (comma or whitespace separated)")
    _add(p, "--mode", choices=["sequential", "batch"])

    sub.add_parser("eval", parents=[common, data, train], help="score the aggregate on the test split")

    p = sub.add_parser("analyze", parents=[common], help="closed-form expected costs")
    for name in ("--N", "--S", "--R", "--K", "--epochs"):
        _add(p, name, type=int)
    _add(p, "--mode", choices=["sequential", "batch"])

    p = sub.add_parser("simulate", parents=[common, data], help="Monte Carlo cost curves")
    _add(p, "--validate", action="store_const", const=True,
         help="check every closed form against simulation and print the table")
    _add(p, "--S", dest="shard_grid", help="shard counts, comma-separated")
    _add(p, "--R", dest="slice_grid", help="slice counts, comma-separated")
    _add(p, "--Ks", help="request counts, comma-separated")
    _add(p, "--epochs", type=int)
    _add(p, "--mode", choices=["sequential", "batch"])
    _add(p, "--trials", type=int)
    _add(p, "--sim-seed", type=int)
    _add(p, "--scenario", choices=["none", "three_group"],
         help="three_group: uniform vs distribution-aware on the data's erase probabilities")
    _add(p, "--prob-scale", type=float)
    _add(p, "--C", type=float)
    _add(p, "--horizon", type=int)
    return parser


def _int_list(text, what) -> list[int]:
    try:
        vals = [int(t) for t in str(text).replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{what}: expected integers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{what}: empty list")
    return vals


def _resolve(ns: argparse.Namespace) -> RunConfig:
    values = read_config(ns.config) if ns.config else {}
    values.update({k: v for k, v in vars(ns).items()
                   if k not in ("command", "config") and v is not None})
    return RunConfig(**values)


def _load_data(cfg: RunConfig):
    if cfg.data:
        ds = load_csv(cfg.data)
    else:
        ds = gen_synthetic(cfg.N, cfg.dim, cfg.classes, cfg.data_seed)
    if cfg.scenario == "three_group":
        ds = assign_probs(ds, three_group_scenario(cfg.data_seed, cfg.prob_scale))
    return ds


def _split(cfg: RunConfig):
    return split_train_test(_load_data(cfg), cfg.test_fraction, cfg.data_seed)


def _plan_path(cfg: RunConfig) -> Path:
    return cfg.out_dir / "plan.json"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen_data(cfg: RunConfig) -> int:
    ds = gen_synthetic(cfg.N, cfg.dim, cfg.classes, cfg.data_seed)
    if cfg.scenario == "three_group":
        ds = assign_probs(ds, three_group_scenario(cfg.data_seed, cfg.prob_scale))
    path = Path(cfg.data) if cfg.data else cfg.out_dir / "data.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, path)
    print(f"wrote {len(ds)} points to {path}")
    return 0


def cmd_plan(cfg: RunConfig) -> int:
    train, _ = _split(cfg)
    if cfg.plan_kind == "uniform":
        plan = uniform_partition(train, cfg.S, cfg.R, cfg.plan_seed)
    elif cfg.plan_kind == "distribution_aware":
        plan = distribution_aware_shard(train, ShardBudget(cfg.C), cfg.R, cfg.plan_seed)
    else:
        raise UsageError(f"unknown plan kind {cfg.plan_kind!r}")
    save_plan(plan, _plan_path(cfg))
    print(f"plan: {plan.num_shards} shards x {plan.num_slices} slices -> {_plan_path(cfg)}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    train, _ = _split(cfg)
    plan = load_plan(_plan_path(cfg))
    model = sisa_train(train, plan, cfg.train_config(), cfg.aggregation, cfg.architecture(),
                       workers=cfg.workers)
    save_model(model, cfg.store)
    print(f"trained {model.num_shards} constituents -> {cfg.store}")
    return 0


def _requests(cfg: RunConfig) -> list[int]:
    ids = []
    if cfg.requests:
        ids += _int_list(cfg.requests, "--requests")
    if cfg.requests_file:
        try:
            text = Path(cfg.requests_file).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read {cfg.requests_file}: {exc.strerror or exc}") from None
        ids += _int_list(text, cfg.requests_file)
    if not ids:
        raise UsageError("unlearn needs --requests or --requests-file")
    return ids


def cmd_unlearn(cfg: RunConfig) -> int:
    ids = _requests(cfg)
    try:
        stream = RequestStream(ids, cfg.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train, _ = _split(cfg)
    model = load_model(cfg.store, train)
    model, ledger = unlearn(model, stream, workers=cfg.workers)
    save_model(model, cfg.store)
    save_plan(model.plan, _plan_path(cfg))
    ledger.to_csv(cfg.out_dir / "ledger.csv")
    print(f"unlearned {len(ids)} points; {ledger.total_samples} samples retrained")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    train, test = _split(cfg)
    model = load_model(cfg.store, train)
    report = evaluate_report(model, test)
    _write_json(cfg.out_dir / "eval.json", report)
    print(f"accuracy {report['accuracy']:.4f} (S={report['S']}, R={report['R']}, {report['aggregation']})")
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    params = analytics.ExperimentParams(cfg.N, cfg.S, cfg.R, cfg.K, cfg.epochs)
    rows = analytics.formula_rows(params)
    path = cfg.out_dir / "analyze.csv"
    analytics.write_report_csv(rows, path)
    head = analytics.combined_report(params, cfg.mode)
    print(f"{cfg.mode}: expected {head.expected_cost:.1f} samples, baseline "
          f"{head.baseline_cost:.1f}, speed-up {head.speedup:.4f}"
          + ("" if head.regime_flag else "  (K >= 3S: sharding gains largely gone)"))
    print(f"wrote {path}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    out = cfg.out_dir
    if cfg.validate:
        rows = montecarlo.validate_formulas(trials=cfg.trials, seed=cfg.sim_seed)
        print(montecarlo.format_table(rows))
        failed = sum(not r.passed for r in rows)
        print(f"{len(rows) - failed}/{len(rows)} rows pass")
        return 0
    Rs = _int_list(cfg.slice_grid or cfg.R, "--R")
    if cfg.scenario == "three_group":
        if len(Rs) != 1:
            raise UsageError("--scenario takes a single --R value")
        ds = _load_data(cfg)
        res = montecarlo.simulate_scenario(ds, ShardBudget(cfg.C), cfg.horizon, cfg.trials,
                                           cfg.sim_seed, R=Rs[0], base_epochs=cfg.epochs)
        for kind, summary in res.summaries.items():
            montecarlo.write_curve_csv(summary, out / f"scenario_{kind}.csv")
            print(f"{kind}: {res.plans[kind].num_shards} shards, mean cost at horizon "
                  f"{summary.mean_cost:.1f}")
        return 0
    Ss = _int_list(cfg.shard_grid or cfg.S, "--S")
    Ks = _int_list(cfg.Ks, "--Ks")
    for S in Ss:
        for R in Rs:
            summary = montecarlo.simulate_curve(cfg.N, S, R, Ks, cfg.mode, cfg.trials,
                                                cfg.sim_seed, cfg.epochs)
            path = out / f"curve_S{S}_R{R}_{cfg.mode}.csv"
            montecarlo.write_curve_csv(summary, path)
            print(f"wrote {path}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "plan": cmd_plan,
    "train": cmd_train,
    "unlearn": cmd_unlearn,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
}


def _one_line(exc: BaseException) -> str:
    text = str(exc) or type(exc).__name__
    return " ".join(text.split())


def main(argv=None) -> int:
    parser = _build_parser()
    command = "sisa"
    try:
        ns = parser.parse_args(argv)
        command = f"sisa {ns.command}"
        cfg = _resolve(ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"{command}: usage error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except (SisaError, ValueError, KeyError, OSError) as exc:
        print(f"{command}: error: {_one_line(exc)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
