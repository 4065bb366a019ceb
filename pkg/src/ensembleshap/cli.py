"""Command-line entry point.

    ensembleshap predict   --data D.jsonl --model M.json [--rho 0.8 -N 1000 --seed 0] --out runs/
    ensembleshap attribute ...
    ensembleshap certify   ... --beta 0.01 --e 1,3,5 --T 1,2,3
    ensembleshap attack    ... --attack backdoor --triggers cf --count 3
    ensembleshap evaluate  ... --e 1,3,5 [--T 1,2,3]
    ensembleshap compare   ... --e 5
    ensembleshap sweep     --d 100 --rho 0.8,0.9 -N 1000,10000 --delta 0.2,0.4 --e 5 --T 1,5

Outputs go to ``<out>/<command>-seed<seed>/`` together with ``manifest.json``.
Everything is staged in a temporary directory and moved into place only on
success, so a failed run leaves nothing behind.

Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numeric / model failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .attacks import build_model, greedy_substitute, insert_triggers, load_synonyms
from .attribution import attribute_run, top_e
from .bounds import bound_set, exact_bound_set
from .certify import (
    CURVE_COLUMNS,
    CertificationInput,
    certified_detection_size,
    synthetic_detection_rate,
)
from .core import (
    AblationRule,
    ClassificationError,
    ConfigurationError,
    EnumerationTooLargeError,
    PredictionCache,
    TokenSequence,
    check_special_value,
)
from .ensemble import EnsembleConfig, derive_seed, k_from_rho, predictor, run_ensemble
from .metrics import AttackRecord, EvaluationReport, evaluate_sample, filter_dstar, keyword_prf
from .shapley import BaselineValueFunction, permutations_for_budget, shapley_permutation_estimate

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
CACHE_ENV = "ENSEMBLESHAP_CACHE_DIR"
COMMANDS = ("predict", "attribute", "certify", "attack", "evaluate", "compare", "sweep")


class CLIError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------- parsing


def _int_list(s) -> list[int]:
    if isinstance(s, list):
        return [int(v) for v in s]
    return [int(v) for v in str(s).split(",") if v.strip()]


def _float_list(s) -> list[float]:
    if isinstance(s, list):
        return [float(v) for v in s]
    return [float(v) for v in str(s).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensembleshap", description="Attribution and certified detection for random-subspace ensembles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of defaults; flags take precedence")
        p.add_argument("--out", default="runs", help="parent directory of the run directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
        p.add_argument("--e", type=_int_list, default=[5], help="comma-separated top-e sizes")
        p.add_argument("--T", type=_int_list, default=[1, 2, 3], help="comma-separated attack budgets")
        if name == "sweep":
            p.add_argument("--d", type=int, default=100)
            p.add_argument("--k", type=int, default=None, help="fixed group size (default: from rho)")
            p.add_argument("--rho", type=_float_list, default=[0.8])
            p.add_argument("-N", type=_int_list, default=[10000])
            p.add_argument("--beta", type=_float_list, default=[0.01])
            p.add_argument("--delta", type=_float_list, default=[0.4])
            p.add_argument("--samples", type=int, default=200)
            continue
        p.add_argument("--data", required=False, help="JSONL dataset")
        p.add_argument("--model", required=False, help="model spec: JSON string or path to a JSON file")
        p.add_argument("--rho", type=float, default=0.8)
        p.add_argument("--k", type=int, default=None)
        default_N = 10000 if name == "certify" else 1000
        p.add_argument("-N", type=int, default=default_N)
        p.add_argument("--beta", type=float, default=0.01)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--mode", choices=("mc", "exact"), default="mc")
        p.add_argument("--exact-bounds", action="store_true", help="certify with enumerated values (needs --mode exact)")
        p.add_argument("--mask", default="[MASK]", help="special value substituted for dropped features")
        p.add_argument("--cache", action="store_true", help=f"persist base-model predictions under ${CACHE_ENV}")
        if name == "attack":
            p.add_argument("--attack", choices=("backdoor", "substitute"), default="backdoor")
            p.add_argument("--triggers", default="cf")
            p.add_argument("--count", type=int, default=3)
            p.add_argument("--target", type=int, default=2)
            p.add_argument("--synonyms", help="JSON word -> substitutes map")
            p.add_argument("--max-T", dest="max_T", type=int, default=5)
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CLIError(f"config {args.config} is not valid JSON: {exc}", EXIT_CONFIG) from exc
        if not isinstance(cfg, dict):
            raise CLIError("config file must hold a JSON object", EXIT_CONFIG)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise CLIError(f"unknown config keys: {', '.join(unknown)}", EXIT_CONFIG)
        # re-parse with the file as defaults so explicit flags still win
        for key, val in cfg.items():
            action = next(a for a in sub._actions if a.dest == key)
            if action.type is not None and not isinstance(val, bool):
                val = action.type(val if isinstance(val, list) else str(val))
            sub.set_defaults(**{key: val})
        args = parser.parse_args(argv)
    validate(args)
    return args


def validate(args: argparse.Namespace) -> None:
    """Fail fast on anything a later stage would reject."""
    def bad(msg):
        raise CLIError(msg, EXIT_CONFIG)

    if args.jobs is not None and args.jobs < 1:
        bad("--jobs must be >= 1")
    if any(e < 1 for e in args.e):
        bad("--e values must be >= 1")
    if any(T < 1 for T in args.T):
        bad("--T values must be >= 1")
    if args.command == "sweep":
        if args.d < 1:
            bad("--d must be >= 1")
        if args.k is not None and not 1 <= args.k <= args.d:
            bad("--k must lie in 1..d")
        for rho in args.rho:
            if not 0.0 <= rho < 1.0:
                bad("--rho values must lie in [0, 1)")
        if any(n < 1 for n in args.N) or any(not 0 < b < 1 for b in args.beta):
            bad("-N must be >= 1 and --beta must lie in (0, 1)")
        if any(not 0 <= dl <= 1 for dl in args.delta):
            bad("--delta values must lie in [0, 1]")
        return
    if not args.data:
        bad("--data is required")
    if not args.model:
        bad("--model is required")
    if not 0 < args.beta < 1:
        bad("--beta must lie in (0, 1)")
    if args.exact_bounds and args.mode != "exact":
        bad("--exact-bounds needs --mode exact")
    try:
        ensemble_config(args)
        args.model_spec = load_model_spec(args.model)
        model = build_model(args.model_spec)
    except (ConfigurationError, ValueError, KeyError, TypeError) as exc:
        bad(f"invalid configuration: {exc}")
    if args.tau is not None and model.num_labels != 2:
        bad("--tau needs a binary model")
    if args.command == "attack" and args.attack == "substitute" and not args.synonyms:
        bad("--attack substitute needs --synonyms")


def load_model_spec(text: str) -> dict:
    s = text.strip()
    if not s.startswith("{"):
        try:
            s = Path(text).read_text(encoding="utf-8")
        except OSError as exc:
            raise CLIError(f"cannot read model spec {text}: {exc}", EXIT_IO) from exc
    spec = json.loads(s)
    if not isinstance(spec, dict):
        raise ValueError("model spec must be a JSON object")
    return spec


def ensemble_config(args) -> EnsembleConfig:
    return EnsembleConfig(rho=args.rho, k=args.k, N=args.N, tau=args.tau, seed=args.seed)


def run_config(args) -> dict:
    """The manifest's config block: every parsed option, in a stable order."""
    skip = {"config", "out", "jobs", "model_spec"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    if hasattr(args, "model_spec"):
        cfg["model"] = args.model_spec
    return cfg


# ---------------------------------------------------------------- data


def read_records(path: str) -> list[dict]:
    """Raw JSONL records with ``tokens`` normalized to a list of strings."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "tokens" not in rec:
                if "text" not in rec:
                    raise ValueError(f"{path}:{lineno}: record has neither 'tokens' nor 'text'")
                rec["tokens"] = rec["text"].split()
            rec["id"] = str(rec.get("id", lineno))
            out.append(rec)
    if not out:
        raise ValueError(f"{path}: dataset is empty")
    return out


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


# ---------------------------------------------------------------- per-sample work


def _cfg_for(args, j: int) -> EnsembleConfig:
    return ensemble_config(args).with_seed(derive_seed(args.seed, j))


def _work(args: argparse.Namespace, j: int, rec: dict, cache: PredictionCache | None = None):
    """One sample's output for ``args.command``; runs in a worker process."""
    model = build_model(args.model_spec)
    rule = AblationRule(args.mask)
    x = TokenSequence(rec["tokens"])
    check_special_value(x, rule)
    cfg = _cfg_for(args, j)
    exact = args.mode == "exact"
    sid = rec["id"]
    L = [int(i) for i in rec.get("edits", [])]

    if args.command == "predict":
        run = run_ensemble(x, model, cfg, rule, cache, exact=exact)
        return {"id": sid, "label": run.prediction, "counts": [int(n) for n in run.counts.counts], "N": run.groups.N, "k": run.k}

    if args.command == "attribute":
        run = run_ensemble(x, model, cfg, rule, cache, exact=exact)
        out = {"id": sid, "prediction": run.prediction}
        out.update(attribute_run(run).to_dict())
        return out

    if args.command == "certify":
        run = run_ensemble(x, model, cfg, rule, cache, exact=exact)
        attr = attribute_run(run)
        bounds = exact_bound_set(attr, run.counts) if args.exact_bounds else bound_set(attr, run.counts, args.beta)
        rows = []
        for e in args.e:
            for T in args.T:
                ee, TT = min(e, x.d), min(T, x.d)
                res = certified_detection_size(CertificationInput.from_bounds(bounds, run.k, ee, TT, run.prediction))
                rows.append([sid, e, T, res.D, f"{res.D / TT:.6f}", res.binding_branch])
        return rows

    if args.command == "attack":
        H = predictor(model, cfg, rule, exact)
        y_clean = H(x)
        if args.attack == "backdoor":
            x2, pos = insert_triggers(x, args.triggers.split(","), args.count, derive_seed(args.seed, j, 1))
            y = H(x2)
            kind, target = "backdoor", args.target
            success = y == target
            edits = pos
        else:
            outcome = greedy_substitute(x, H, model, load_synonyms(args.synonyms), args.max_T)
            x2, edits, y, success = outcome.x, outcome.edits, outcome.final_label, outcome.success
            kind, target = "adversarial", None
        return {
            "id": sid, "tokens": list(x2.tokens), "edits": edits, "kind": kind, "target": target,
            "label": rec.get("label", y_clean), "clean_prediction": y_clean, "ensemble_label": y, "success": success,
        }

    if args.command == "evaluate":
        kind = rec.get("kind")
        if kind is not None:
            ens_label = rec.get("ensemble_label")
            if ens_label is None:
                ens_label = run_ensemble(x, model, cfg, rule, exact=exact).prediction
            r = AttackRecord(sid, x, L, kind, int(ens_label), rec.get("label"), rec.get("target"))
            in_dstar = bool(filter_dstar([r]))
        else:
            in_dstar = bool(L)
        ev = evaluate_sample(sid, x, model, cfg, args.e, args.T, args.beta, L, in_dstar, rule, args.exact_bounds)
        return ev

    if args.command == "compare":
        run = run_ensemble(x, model, cfg, rule, cache, exact=exact)
        attr = attribute_run(run)
        vf = BaselineValueFunction(x, model, run.prediction, rule)
        perms = permutations_for_budget(run.groups.N, x.d)
        phi = shapley_permutation_estimate(vf, perms, derive_seed(args.seed, j, 2))
        rows = []
        for e in args.e:
            ee = min(e, x.d)
            r_ens = keyword_prf(top_e(attr, ee), L)[1] if L else None
            r_shap = keyword_prf(top_e(phi.values, ee), L)[1] if L else None
            rows.append([sid, e, _fmt(r_ens), _fmt(r_shap), perms, phi.queries])
        return rows

    raise CLIError(f"unknown command {args.command}", EXIT_CONFIG)


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def _sweep_point(args, rho, N, beta, delta, e, T) -> list:
    k = args.k if args.k is not None else k_from_rho(rho, args.d)
    rate = synthetic_detection_rate(args.d, k, rho, N, delta, beta, e, T, args.samples, args.seed)
    return [args.d, k, rho, N, beta, delta, e, T, f"{rate:.6f}"]


def _map(fn, items: list[tuple], jobs: int) -> list:
    """Ordered map, in-process when ``jobs == 1``; results never depend on ``jobs``."""
    if jobs == 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


# ---------------------------------------------------------------- commands


def _cache_path(args) -> Path:
    root = Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "ensembleshap")
    key = hashlib.sha256(json.dumps([args.model_spec, args.mask], sort_keys=True).encode()).hexdigest()[:16]
    return root / f"predictions-{key}.jsonl"


def execute(args: argparse.Namespace, stage: Path) -> list[str]:
    """Run the command, writing outputs into ``stage``; returns the file names."""
    jobs = args.jobs or os.cpu_count() or 1

    if args.command == "sweep":
        grid = [(args, rho, N, beta, delta, e, T)
                for rho in args.rho for N in args.N for beta in args.beta
                for delta in args.delta for e in args.e for T in args.T]
        rows = _map(_sweep_point, grid, jobs)
        _write_csv(stage / "sweep.csv", ["d", "k", "rho", "N", "beta", "delta", "e", "T", "rate"], rows)
        return ["sweep.csv"]

    try:
        records = read_records(args.data)
    except OSError as exc:
        raise CLIError(f"cannot read dataset {args.data}: {exc}", EXIT_IO) from exc
    except (json.JSONDecodeError, ValueError) as exc:
        raise CLIError(f"malformed dataset {args.data}: {exc}", EXIT_IO) from exc
    args.data_sha256 = _file_digest(args.data)

    cache = None
    if args.cache:
        # a shared in-memory cache needs a single process
        jobs = 1
        path = _cache_path(args)
        cache = PredictionCache.load(path) if path.exists() else PredictionCache()
    if cache is not None:
        results = [_work(args, j, rec, cache) for j, rec in enumerate(records)]
    else:
        results = _map(_work, [(args, j, rec) for j, rec in enumerate(records)], jobs)

    c = args.command
    if c == "predict":
        _write_lines(stage / "labels.jsonl", results)
        files = ["labels.jsonl"]
    elif c == "attribute":
        _write_lines(stage / "attributions.jsonl", results)
        files = ["attributions.jsonl"]
    elif c == "certify":
        _write_csv(stage / "detection.csv", list(CURVE_COLUMNS), [row for rows in results for row in rows])
        files = ["detection.csv"]
    elif c == "attack":
        _write_lines(stage / "transcripts.jsonl", results)
        files = ["transcripts.jsonl"]
    elif c == "evaluate":
        report = EvaluationReport(results, run_config(args))
        (stage / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        report.write_csv(stage / "report.csv")
        files = ["report.json", "report.csv"]
    else:
        _write_csv(stage / "compare.csv", ["sample_id", "e", "ensembleshap_recall", "shapley_recall", "permutations", "queries"],
                   [row for rows in results for row in rows])
        files = ["compare.csv"]

    if cache is not None:
        path = _cache_path(args)
        path.parent.mkdir(parents=True, exist_ok=True)
        cache.save(path)
    return files


def _write_lines(path: Path, objs) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for o in objs:
            fh.write(_json_line(o))


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def run_dir_name(args) -> str:
    return f"{args.command}-seed{args.seed}"


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
        out_root = Path(args.out)
        try:
            out_root.mkdir(parents=True, exist_ok=True)
            stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_root))
        except OSError as exc:
            raise CLIError(f"cannot create output directory {out_root}: {exc}", EXIT_IO) from exc
        try:
            files = execute(args, stage)
            manifest = {
                "command": args.command,
                "config": run_config(args),
                "seed": args.seed,
                "version": __version__,
                "outputs": files,
            }
            (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            final = out_root / run_dir_name(args)
            if final.exists():
                shutil.rmtree(final)
            stage.rename(final)
        except BaseException:
            shutil.rmtree(stage, ignore_errors=True)
            raise
    except CLIError as exc:
        print(f"ensembleshap: error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, EnumerationTooLargeError) as exc:
        print(f"ensembleshap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"ensembleshap: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ClassificationError, ArithmeticError, FloatingPointError) as exc:
        print(f"ensembleshap: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(str(Path(args.out) / run_dir_name(args)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
