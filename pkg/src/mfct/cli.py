"""Command-line entry point: single runs, protocol comparisons, rate sweeps.

Exit status is 0 on success, 2 for configuration/parse errors and 1 for
runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import config as config_mod
from . import engine, grey, network, protocols
from .config import ScenarioConfig
from .errors import ConfigError, InvalidMatrix, ParseError

log = logging.getLogger("mfct")

COMPARE_HEADER = ["protocol", "seed", "rate", "fnd", "hnd", "lnd", "pdr",
                  "mean_response_s", "mean_delay_s", "energy_j"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _run_one(cfg: ScenarioConfig):
    try:
        return engine.run(cfg), None
    except Exception as exc:  # a failed pair must not abort the batch
        return None, f"{type(exc).__name__}: {exc}"


def _series_name(protocol: str, rate: int, seed: int) -> str:
    return f"{protocol}_rate{rate}_seed{seed}.csv"


def compare(cfg: ScenarioConfig, protocols_: Sequence[str], seeds: Sequence[int],
            rates: Optional[Sequence[int]] = None, out_dir=None, jobs: int = 1) -> list[dict]:
    """Run every (protocol, rate, seed) combination.

    Returns one row per combination, sorted by key.  With ``out_dir`` set,
    writes ``compare.csv``, per-run series under ``series/`` and any failures
    to ``failures.csv``.
    """
    if not protocols_:
        raise ConfigError("protocols", "need at least one protocol")
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    for p in protocols_:
        if p not in config_mod.PROTOCOLS:
            raise ConfigError("protocols", f"unknown protocol {p!r}")
    rates = list(rates) if rates is not None else [cfg.protocol_params.rate]
    keys = sorted({(p, r, s) for p in protocols_ for r in rates for s in seeds})
    run_cfgs = [cfg.replace({"protocol": p, "seed": s, "protocol_params.rate": r}) for p, r, s in keys]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, run_cfgs))
    else:
        results = [_run_one(c) for c in run_cfgs]

    rows = []
    for (p, r, s), (report, error) in zip(keys, results):
        row = {"protocol": p, "seed": s, "rate": r, "error": error, "report": report}
        if report is not None:
            row.update(fnd=report.fnd, hnd=report.hnd, lnd=report.lnd, pdr=report.pdr_total,
                       mean_response_s=report.mean_response_s, mean_delay_s=report.mean_delay_s,
                       energy_j=report.energy_total_j)
        else:
            log.error("run %s rate=%s seed=%s failed: %s", p, r, s, error)
        rows.append(row)
    if out_dir is not None:
        write_compare(rows, Path(out_dir))
    return rows


def compare_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_HEADER)
    for row in rows:
        w.writerow([_cell(row.get(k)) for k in COMPARE_HEADER])
    return buf.getvalue()


def write_compare(rows: Sequence[dict], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(compare_csv(rows))
    series = out / "series"
    series.mkdir(exist_ok=True)
    failures = [r for r in rows if r["error"]]
    for row in rows:
        if row["report"] is not None:
            (series / _series_name(row["protocol"], row["rate"], row["seed"])).write_text(row["report"].to_csv())
    fail_path = out / "failures.csv"
    if failures:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["protocol", "seed", "rate", "error"])
        for r in failures:
            w.writerow([r["protocol"], r["seed"], r["rate"], r["error"]])
        fail_path.write_text(buf.getvalue())
    elif fail_path.exists():
        fail_path.unlink()


def median_table(rows: Sequence[dict]) -> str:
    """Median over seeds per (protocol, rate); unreached lifetimes count as ``rounds``."""
    groups = {}
    for row in rows:
        if row["report"] is not None:
            groups.setdefault((row["protocol"], row["rate"]), []).append(row["report"])
    lines = [f"{'protocol':<12} {'rate':>4} {'runs':>4} {'FND':>7} {'HND':>7} {'LND':>7} "
             f"{'PDR':>6} {'resp_s':>8} {'delay_s':>8} {'energy_J':>9}"]
    for (p, r), reps in sorted(groups.items()):
        def med(f):
            vals = [v for v in map(f, reps) if v is not None]
            return statistics.median(vals) if vals else float("nan")
        lines.append(
            f"{p:<12} {r:>4} {len(reps):>4} {med(lambda x: x.lifetime('fnd')):>7.1f} "
            f"{med(lambda x: x.lifetime('hnd')):>7.1f} {med(lambda x: x.lifetime('lnd')):>7.1f} "
            f"{med(lambda x: x.pdr_total):>6.3f} {med(lambda x: x.mean_response_s):>8.4f} "
            f"{med(lambda x: x.mean_delay_s):>8.4f} {med(lambda x: x.energy_total_j):>9.3f}"
        )
    return "\n".join(lines)


def sweep_rate(cfg: ScenarioConfig, protocols_=None, seeds=None, out_dir=None, jobs: int = 1) -> dict:
    """One comparison per entry of ``rate_scenarios``; outputs land in ``rate_<r>/``."""
    if not cfg.rate_scenarios:
        raise ConfigError("rate_scenarios", "needs at least one rate")
    protocols_ = protocols_ or cfg.protocols
    seeds = seeds or cfg.seeds
    out = {}
    for rate in cfg.rate_scenarios:
        sub = Path(out_dir) / f"rate_{rate}" if out_dir is not None else None
        out[rate] = compare(cfg, protocols_, seeds, rates=[rate], out_dir=sub, jobs=jobs)
    if out_dir is not None:
        all_rows = [row for rate in sorted(out) for row in out[rate]]
        (Path(out_dir) / "sweep.csv").write_text(compare_csv(all_rows))
    return out


def dump_topology(cfg: ScenarioConfig) -> dict:
    """Deployment plus the first election, as plain JSON-able data."""
    state = engine.deploy(cfg)
    state.round = 0
    if cfg.protocol in ("mfct", "mfct_random"):
        protocols._new_epoch(state, cfg)
        protocols.mfct_elect(state, cfg, "random" if cfg.protocol == "mfct_random" else "grey")
    elif cfg.protocol == "eecrp":
        protocols._new_epoch(state, cfg)
        protocols._eecrp_elect(state, cfg)
    snap = network.topology_snapshot(state.nodes, state.fogs, list(state.clusters.values()))
    snap["tree"] = json.loads(state.tree.to_json())
    snap["cloud"] = list(state.cloud.pos)
    return snap


def _parse_list(text: str, conv=int) -> list:
    items = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if conv is int and "-" in part[1:]:
            lo, hi = part.split("-", 1)
            items.extend(range(int(lo), int(hi) + 1))
        else:
            items.append(conv(part))
    return items


def _load(args) -> ScenarioConfig:
    cfg = config_mod.load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out_dir", None) is not None:
        changes["output_dir"] = args.out_dir
    return cfg.replace(changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfct", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="override the config output directory")
    common.add_argument("--quiet", action="store_true", help="suppress the printed summary")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="simulate one scenario")
    p.add_argument("config")

    p = sub.add_parser("compare", parents=[common], help="run protocols x seeds")
    p.add_argument("config")
    p.add_argument("--protocols", help="comma list, default from config")
    p.add_argument("--seeds", help="comma list or ranges like 1-20, default from config")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("sweep-rate", parents=[common], help="compare at every rate scenario")
    p.add_argument("config")
    p.add_argument("--protocols")
    p.add_argument("--seeds")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("rank", parents=[common], help="grey-rank a CSV decision matrix")
    p.add_argument("csv")
    p.add_argument("--rho", type=float, default=0.5)

    p = sub.add_parser("dump-topology", parents=[common], help="print deployment and first election as JSON")
    p.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, ParseError, InvalidMatrix) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    out = sys.stdout
    if args.command == "rank":
        try:
            text = Path(args.csv).read_text()
        except OSError as exc:
            raise ParseError(str(exc)) from None
        matrix, labels = grey.read_matrix_csv(text)
        order, grades = grey.grey_rank(matrix, grey.GreyParams(args.rho))
        out.write(grey.format_ranking_csv(order, grades, labels))
        return 0

    cfg = _load(args)
    if args.command == "run":
        report = engine.run(cfg)
        dest = Path(cfg.output_dir)
        dest.mkdir(parents=True, exist_ok=True)
        (dest / "series.csv").write_text(report.to_csv())
        (dest / "summary.json").write_text(report.summary_json() + "\n")
        if not args.quiet:
            out.write(report.summary_json() + "\n")
        return 0

    if args.command == "dump-topology":
        out.write(json.dumps(dump_topology(cfg), indent=2, sort_keys=True) + "\n")
        return 0

    protos = _parse_list(args.protocols, str) if args.protocols else cfg.protocols
    seeds = _parse_list(args.seeds) if args.seeds else cfg.seeds
    if args.command == "compare":
        rows = compare(cfg, protos, seeds, out_dir=cfg.output_dir, jobs=args.jobs)
    else:
        results = sweep_rate(cfg, protos, seeds, out_dir=cfg.output_dir, jobs=args.jobs)
        rows = [row for rate in sorted(results) for row in results[rate]]
    if not args.quiet:
        out.write(median_table(rows) + "\n")
    return 1 if any(r["error"] for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
