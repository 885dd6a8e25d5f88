"""Command-line interface.

``zazou correct``   tree-aware correction of a p-value table
``zazou test``      per-taxon Wilcoxon tests of a two-group abundance table
``zazou simulate``  synthetic benchmark campaign

Exit codes: 0 on success, 1 on a numerical failure, 2 on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import InputError, NumericalError
from .inference import CorrectionConfig, correct
from .simbench import (CSV_COLUMNS, METHODS, BaseConfig, SimScenario, run_campaign,
                       wilcoxon_rows)
from .tree import parse_newick, random_ultrametric_tree

log = logging.getLogger("zazou")

FLOAT_FMT = "%.15g"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NA"
        if math.isinf(x):
            return "Inf" if x > 0 else "-Inf"
        return FLOAT_FMT % x
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _write_json(path: Path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _report_path(out: Path, report: str | None) -> Path:
    return Path(report) if report else out.with_suffix(".json")


# --------------------------------------------------------------------------
# input readers


def _read_rows(path: Path):
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        rows = [(reader.line_num, row) for row in reader if row and any(c.strip() for c in row)]
    if not rows:
        raise InputError(f"{path}: file is empty")
    return rows


def read_tree(path) -> object:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from None
    try:
        return parse_newick(text)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_pvalues(path):
    """``feature_id,p_value`` table; returns labels and values in file order."""
    path = Path(path)
    rows = _read_rows(path)
    line, header = rows[0]
    header = [h.strip() for h in header]
    if header[:2] != ["feature_id", "p_value"]:
        raise InputError(f"{path}:{line}: header must start with feature_id,p_value")
    labels, values, seen = [], [], {}
    for line, row in rows[1:]:
        if len(row) < 2:
            raise InputError(f"{path}:{line}: expected 2 columns, got {len(row)}")
        fid, raw = row[0].strip(), row[1].strip()
        if not fid:
            raise InputError(f"{path}:{line}: empty feature_id")
        if fid in seen:
            raise InputError(f"{path}:{line}: duplicate feature_id {fid!r} (first on line {seen[fid]})")
        try:
            v = float(raw)
        except ValueError:
            raise InputError(f"{path}:{line}: p_value {raw!r} is not a number") from None
        if not 0.0 <= v <= 1.0:
            raise InputError(f"{path}:{line}: p_value {raw} outside [0, 1]")
        seen[fid] = line
        labels.append(fid)
        values.append(v)
    if not labels:
        raise InputError(f"{path}: no data rows")
    return labels, np.array(values)


def read_abundance(path):
    """Taxa x samples table with header ``feature_id,<sample ids>``."""
    path = Path(path)
    rows = _read_rows(path)
    line, header = rows[0]
    header = [h.strip() for h in header]
    samples = header[1:]
    if not samples:
        raise InputError(f"{path}:{line}: header needs at least one sample column")
    if len(set(samples)) != len(samples):
        raise InputError(f"{path}:{line}: duplicate sample ids in header")
    labels, values, seen = [], [], set()
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise InputError(f"{path}:{line}: expected {len(header)} columns, got {len(row)}")
        fid = row[0].strip()
        if fid in seen:
            raise InputError(f"{path}:{line}: duplicate feature_id {fid!r}")
        seen.add(fid)
        vals = []
        for col, cell in zip(samples, row[1:]):
            try:
                x = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}:{line}: abundance {cell.strip()!r} for sample {col!r} is not numeric") from None
            if not math.isfinite(x) or x < 0:
                raise InputError(f"{path}:{line}: abundance {cell.strip()} must be finite and >= 0")
            vals.append(x)
        labels.append(fid)
        values.append(vals)
    if not labels:
        raise InputError(f"{path}: no data rows")
    return labels, samples, np.array(values)


def read_groups(path, samples):
    """``sample_id,group`` table with exactly two levels; returns a 0/1 vector
    aligned with ``samples`` (levels sorted, the first is 0)."""
    path = Path(path)
    rows = _read_rows(path)
    line, header = rows[0]
    if [h.strip() for h in header[:2]] != ["sample_id", "group"]:
        raise InputError(f"{path}:{line}: header must start with sample_id,group")
    grp = {}
    for line, row in rows[1:]:
        if len(row) < 2:
            raise InputError(f"{path}:{line}: expected 2 columns, got {len(row)}")
        sid, g = row[0].strip(), row[1].strip()
        if sid in grp:
            raise InputError(f"{path}:{line}: duplicate sample_id {sid!r}")
        grp[sid] = g
    missing = [s for s in samples if s not in grp]
    if missing:
        raise InputError(f"{path}: no group for sample {missing[0]!r}"
                         + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    levels = sorted({grp[s] for s in samples})
    if len(levels) != 2:
        raise InputError(f"{path}: need exactly 2 groups among the samples, found {len(levels)}")
    return np.array([levels.index(grp[s]) for s in samples], dtype=np.intp), levels


def _grid(text, name):
    if text is None:
        return None
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not (math.isfinite(v) and v > 0) for v in vals):
        raise InputError(f"--{name}: values must be positive and finite")
    return vals


def _config(args) -> CorrectionConfig:
    if not 0.0 < args.fdr < 1.0:
        raise InputError(f"--fdr must lie in (0, 1), got {args.fdr}")
    if args.gamma is not None and not args.gamma > 0:
        raise InputError(f"--gamma must be positive, got {args.gamma}")
    return CorrectionConfig(fdr=args.fdr, method=args.method,
                            alpha_grid=_grid(args.alpha_grid, "alpha-grid"),
                            lambda_grid=_grid(args.lambda_grid, "lambda-grid"),
                            gamma=args.gamma)


# --------------------------------------------------------------------------
# commands


def cmd_correct(args) -> int:
    cfg = _config(args)
    tree = read_tree(args.tree)
    labels, p = read_pvalues(args.pvalues)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = correct(tree, p, labels=labels, config=cfg)
    out = Path(args.out)
    pos = {lab: i for i, lab in enumerate(res.labels)}
    rows = []
    for lab in labels:
        i = pos[lab]
        rows.append((lab, res.p_raw[i], res.z[i], res.p_ss[i], res.q_ss[i], bool(res.rejected[i])))
    _write_csv(out, ("feature_id", "p_raw", "z", "p_ss", "q_ss", "rejected"), rows)
    tr = res.trace
    report = {
        "command": "correct",
        "version": __version__,
        "backend": BACKEND,
        "inputs": {"tree": str(args.tree), "pvalues": str(args.pvalues)},
        "config": {"fdr": cfg.fdr, "method": cfg.method, "gamma": cfg.gamma,
                   "alpha_grid": tr.alphas, "lambda_fractions": tr.fractions},
        "n_features": len(labels),
        "n_rejected": int(res.rejected.sum()),
        "alpha_hat": res.alpha_hat,
        "lambda_hat": res.lambda_hat,
        "lambda0_hat": res.lambda0_hat,
        "sigma_hat": tr.sigma_hat,
        "t_star": res.t_star,
        "t_max": res.t_max,
        "gamma_used": res.gamma,
        "gamma_requested": res.gamma_requested,
        "n_clamped": res.n_clamped,
        "bic_trace": {"selected": list(tr.selected), "lambda_max": tr.lambda_max,
                      "lambda": tr.lam, "bic": tr.bic, "support": tr.support,
                      "sigma": tr.sigma, "rss": tr.rss, "logdet": tr.logdet,
                      "converged": tr.converged, "errors": list(tr.errors)},
        "warnings": list(res.warnings),
    }
    _write_json(_report_path(out, args.report), report)
    log.info("%d of %d features rejected at FDR %g (t* = %.6g)",
             int(res.rejected.sum()), len(labels), cfg.fdr, res.t_star)
    return 0


def cmd_test(args) -> int:
    labels, samples, values = read_abundance(args.abundance)
    groups, levels = read_groups(args.groups, samples)
    p = wilcoxon_rows(values, groups)
    _write_csv(Path(args.out), ("feature_id", "p_value"), zip(labels, p))
    log.info("tested %d features, groups %s (n=%d) vs %s (n=%d)", len(labels), levels[0],
             int((groups == 0).sum()), levels[1], int((groups == 1).sum()))
    return 0


def cmd_simulate(args) -> int:
    if args.replicates < 1:
        raise InputError("--replicates must be at least 1")
    if not 0.0 < args.fdr < 1.0:
        raise InputError(f"--fdr must lie in (0, 1), got {args.fdr}")
    if args.tree:
        tree = read_tree(args.tree)
    else:
        if args.n_taxa < 3:
            raise InputError("--n-taxa must be at least 3")
        tree = random_ultrametric_tree(args.n_taxa, np.random.default_rng([args.seed, 1]))
    if args.n_samples < 2:
        raise InputError("--n-samples must be at least 2")
    scenarios = [SimScenario(fc=fc, variant=v, prop_da=pd, k=args.k)
                 for fc, v, pd in itertools.product(args.fc, args.variant, args.prop_da)]
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    cfg = CorrectionConfig(fdr=args.fdr, alpha_grid=_grid(args.alpha_grid, "alpha-grid"),
                           lambda_grid=_grid(args.lambda_grid, "lambda-grid"), gamma=args.gamma)

    def progress(done, total):
        log.debug("replicate %d/%d", done, total)

    res = run_campaign(tree, scenarios, args.replicates, methods=methods, seed=args.seed,
                       base_config=BaseConfig(n_samples=args.n_samples), fdr=args.fdr,
                       config=cfg, n_jobs=args.jobs, progress=progress)
    out = Path(args.out)
    _write_csv(out, CSV_COLUMNS, ([r[c] for c in CSV_COLUMNS] for r in res.rows))
    report = {
        "command": "simulate",
        "version": __version__,
        "backend": BACKEND,
        "seed": args.seed,
        "tree": str(args.tree) if args.tree else f"random coalescent, {tree.n_leaves} taxa",
        "n_taxa": tree.n_leaves,
        "n_samples": args.n_samples,
        "replicates": args.replicates,
        "fdr": args.fdr,
        "methods": list(methods),
        "scenarios": [{"fc": s.fc, "variant": s.variant, "prop_da": s.prop_da, "k": s.k}
                      for s in scenarios],
        "alpha_grid": cfg.alpha_grid,
        "lambda_fractions": cfg.lambda_grid,
        "gamma": cfg.gamma,
        "fpr_grid_size": 101,
        "summary": res.summary(),
        "failures": [{"replicate": r["replicate"], "method": r["method"], "status": r["status"]}
                     for r in res.rows if r["status"] != "ok"],
    }
    _write_json(_report_path(out, args.report), report)
    log.info("wrote %d rows to %s", len(res.rows), out)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_zazou_options(p, fdr_required=False):
    # q-values depend on the target level, so correct asks for it explicitly
    if fdr_required:
        p.add_argument("--fdr", type=float, required=True, help="target FDR level")
    else:
        p.add_argument("--fdr", type=float, default=0.05, help="target FDR level (default 0.05)")
    p.add_argument("--alpha-grid", help="comma-separated OU selection strengths")
    p.add_argument("--lambda-grid", help="comma-separated penalty fractions of lambda_max")
    p.add_argument("--gamma", type=float, help="initial slack of the colwise inverse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zazou", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("correct", help="correct p-values along a tree")
    pc.add_argument("--tree", required=True, help="Newick file")
    pc.add_argument("--pvalues", required=True, help="CSV with feature_id,p_value")
    pc.add_argument("--out", required=True, help="output q-value CSV")
    pc.add_argument("--report", help="JSON report path (default: --out with .json)")
    pc.add_argument("--method", choices=("ss", "ci"), default="ss")
    _add_zazou_options(pc, fdr_required=True)
    pc.set_defaults(func=cmd_correct)

    pt = sub.add_parser("test", help="Wilcoxon rank-sum test per feature")
    pt.add_argument("--abundance", required=True, help="CSV: feature_id,<sample ids>")
    pt.add_argument("--groups", required=True, help="CSV: sample_id,group (two levels)")
    pt.add_argument("--out", required=True, help="output CSV with feature_id,p_value")
    pt.set_defaults(func=cmd_test)

    ps = sub.add_parser("simulate", help="run a simulation campaign")
    ps.add_argument("--tree", help="Newick file (default: random coalescent tree)")
    ps.add_argument("--n-taxa", type=int, default=50)
    ps.add_argument("--n-samples", type=int, default=100)
    ps.add_argument("--fc", type=float, nargs="+", default=[10.0])
    ps.add_argument("--variant", nargs="+", choices=("positive", "negative"),
                    default=["positive"])
    ps.add_argument("--prop-da", type=float, nargs="+", default=[0.1])
    ps.add_argument("--k", type=int, help="PAM cluster count (default round(m/10))")
    ps.add_argument("--replicates", type=int, default=10)
    ps.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--jobs", type=int, default=1, help="worker processes")
    ps.add_argument("--out", required=True, help="campaign CSV")
    ps.add_argument("--report", help="JSON report path (default: --out with .json)")
    _add_zazou_options(ps)
    ps.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"zazou {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"zazou {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
