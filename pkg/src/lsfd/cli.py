"""``lsfd-sim``: experiment runner.

Commands
--------
convergence        per-iteration sum SE of methods ii and iv
sweep-correlation  mean sum SE per cell of methods i-iv versus correlation magnitude
cdf                per-drop sum SE per cell for MRC/RZF, single vs two-layer
validate           closed-form vs Monte Carlo oracle suite; exit status 1 on failure
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .experiments import (
    FAIL,
    INCONCLUSIVE,
    METHODS,
    evaluate_cdf_drop,
    evaluate_drop,
    run_validation,
)
from .optimizer import OptimizerConfig
from .scenario import NetworkConfig

log = logging.getLogger("lsfd")

PROFILES = {
    "desk": {"network": {"M": 64, "K": 5}, "drops": 20, "blocks": 10_000},
    "paper": {"network": {"M": 200, "K": 5}, "drops": 300, "blocks": 100_000},
}
VALIDATE_DESK = {"network": {"M": 32, "K": 2}, "drops": 3, "blocks": 10_000}
COMMAND_VARSIGMA = {"convergence": 0.8, "cdf": 0.5, "validate": 0.5}
DEFAULT_VARSIGMA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 0.95)

CONVERGENCE_HEADER = ["iteration", "method", "sum_se_per_cell"]
SWEEP_HEADER = ["varsigma", "method", "mean_sum_se_per_cell"]
CDF_HEADER = ["scheme", "layers", "drop", "sum_se_per_cell", "cdf"]


@dataclass
class ExperimentSpec:
    command: str
    config: NetworkConfig
    n_drops: int
    n_mc_blocks: int
    methods: tuple = METHODS
    out: Path | None = None
    workers: int = 1
    varsigmas: tuple = DEFAULT_VARSIGMA_GRID
    opt_config: OptimizerConfig = field(default_factory=OptimizerConfig)
    corrupt_c: bool = False

    def __post_init__(self):
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_csv(path, header, rows):
    text = _csv_text(header, rows)
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _csv_text(header, rows):
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def run_convergence(spec: ExperimentSpec) -> str:
    """Average (over drops) sum SE per cell per iteration for methods ii and iv.

    Traces start from uniformly random powers; shorter traces are extended
    with their final value.  Per-drop traces go to ``<out>_per_drop.csv``.
    """
    methods = tuple(m for m in ("ii", "iv") if m in spec.methods) or ("ii", "iv")
    fn = partial(evaluate_drop, spec.config, methods=methods, opt_config=spec.opt_config,
                 multistart=False)
    results = _map(fn, range(spec.n_drops), spec.workers)
    rows, per_drop = [], []
    for m in methods:
        traces = [r.histories[m] for r in results]
        n = max(len(t) for t in traces)
        padded = np.array([np.concatenate([t, np.full(n - len(t), t[-1])]) for t in traces])
        mean = padded.mean(axis=0)
        rows.extend((it, m, float(v)) for it, v in enumerate(mean))
        for r, t in zip(results, traces):
            per_drop.extend((r.drop, it, m, float(v)) for it, v in enumerate(t))
    text = _write_csv(spec.out, CONVERGENCE_HEADER, rows)
    if spec.out is not None:
        out = Path(spec.out)
        _write_csv(out.with_name(out.stem + "_per_drop.csv"),
                   ["drop"] + CONVERGENCE_HEADER, per_drop)
    return text


def run_sweep_correlation(spec: ExperimentSpec) -> str:
    rows = []
    for vs in spec.varsigmas:
        cfg = spec.config.with_overrides(varsigma=float(vs))
        fn = partial(evaluate_drop, cfg, methods=spec.methods, opt_config=spec.opt_config)
        results = _map(fn, range(spec.n_drops), spec.workers)
        for m in METHODS:
            if m in spec.methods:
                rows.append((float(vs), m, float(np.mean([r.sum_se[m] for r in results]))))
        log.info("varsigma=%.2f done", vs)
    return _write_csv(spec.out, SWEEP_HEADER, rows)


def run_cdf(spec: ExperimentSpec) -> str:
    fn = partial(evaluate_cdf_drop, spec.config, n_blocks=spec.n_mc_blocks)
    results = _map(fn, range(spec.n_drops), spec.workers)
    rows = []
    for key in results[0]:
        vals = np.array([r[key] for r in results])
        order = np.argsort(vals, kind="stable")
        for rank, idx in enumerate(order, start=1):
            rows.append((key[0], key[1], int(idx), float(vals[idx]), rank / len(vals)))
    return _write_csv(spec.out, CDF_HEADER, rows)


def run_validate(spec: ExperimentSpec) -> tuple[int, list]:
    checks = run_validation(spec.config, spec.n_drops, spec.n_mc_blocks,
                            corrupt_c=spec.corrupt_c)
    for c in checks:
        print(c.line())
    if spec.out is not None:
        Path(spec.out).write_text(json.dumps([c.__dict__ for c in checks], indent=2))
    failed = any(c.status == FAIL for c in checks)
    if any(c.status == INCONCLUSIVE for c in checks):
        print("some checks are inconclusive: standard errors too large for the block count")
    return (1 if failed else 0), checks


COMMANDS = {
    "convergence": run_convergence,
    "sweep-correlation": run_sweep_correlation,
    "cdf": run_cdf,
    "validate": run_validate,
}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsfd-sim", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file with NetworkConfig fields")
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
        p.add_argument("--seed", type=int)
        p.add_argument("--drops", type=int)
        p.add_argument("--blocks", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--methods", default=",".join(METHODS),
                       help="comma-separated subset of i,ii,iii,iv")
        p.add_argument("--eps", type=float, default=OptimizerConfig.eps)
        p.add_argument("--max-iters", type=int, default=OptimizerConfig.max_iters)
        p.add_argument("--init", choices=("random", "random-sqrt", "full"),
                       default=OptimizerConfig.init,
                       help="optimizer start: powers uniform on [0, P_max], "
                            "amplitudes uniform on [0, sqrt(P_max)], or full power")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep-correlation":
            p.add_argument("--grid", default=",".join(str(v) for v in DEFAULT_VARSIGMA_GRID),
                           help="comma-separated correlation magnitudes")
        if name == "validate":
            p.add_argument("--corrupt-c", action="store_true", help=argparse.SUPPRESS)
    return parser


def spec_from_args(args) -> ExperimentSpec:
    profile = PROFILES[args.profile]
    if args.command == "validate" and args.profile == "desk":
        profile = VALIDATE_DESK
    file_data = json.loads(args.config.read_text()) if args.config else {}
    network = dict(profile["network"])
    if args.command in COMMAND_VARSIGMA:
        network["varsigma"] = COMMAND_VARSIGMA[args.command]
    network.update(file_data)
    if args.seed is not None:
        network["seed"] = args.seed
    config = NetworkConfig.from_dict(network)
    kwargs = {}
    if args.command == "sweep-correlation":
        kwargs["varsigmas"] = tuple(float(v) for v in args.grid.split(",") if v)
    return ExperimentSpec(
        command=args.command,
        config=config,
        n_drops=args.drops if args.drops is not None else profile["drops"],
        n_mc_blocks=args.blocks if args.blocks is not None else profile["blocks"],
        methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
        out=args.out,
        workers=args.workers,
        opt_config=OptimizerConfig(eps=args.eps, max_iters=args.max_iters, init=args.init),
        corrupt_c=getattr(args, "corrupt_c", False),
        **kwargs,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    spec = spec_from_args(args)
    log.info("backend=%s config=%s", BACKEND, spec.config)
    if spec.command == "validate":
        status, _ = run_validate(spec)
        return status
    COMMANDS[spec.command](spec)
    return 0


if __name__ == "__main__":
    sys.exit(main())
