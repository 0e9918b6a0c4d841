"""Command-line interface: ``permreg <command> [flags]``.

Commands: ``candidates``, ``test``, ``confset``, ``tune``, ``simulate`` and
``counterexample``.  Reports are JSON (``--format csv`` is available for
``candidates``; ``simulate`` always writes its per-replication CSV).  Files
are written atomically.  Exit codes: 0 success, 1 flag/precondition error,
2 runtime error (message on stderr, no output file).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .candidates import DesignVariant, ReproConfig, draw_stream, generate_candidates
from .errors import DegenerateColumn, FileError, PermregError, SchemaError
from .inference import SparsityTestConfig, coef_region, partial_coef_region, sparsity_test
from .numerics import gaussian_vector
from .simulate import ScenarioConfig, run_scenario
from .tuning import counterexample, select_lambdas

NA_MARKERS = frozenset({"", "NA", "NaN"})
SD_GUARD = 1e-12


class UsageError(Exception):
    """Bad or missing flags (exit code 1)."""


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class Dataset:
    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None
    response: str
    covariates: tuple[str, ...]
    nuisance: tuple[str, ...]
    rows_read: int
    rows_dropped: int


def ingest_csv(path, response_col: str, covariate_cols, standardize: bool = True, nuisance_cols=()) -> Dataset:
    """Read a comma-separated file with a header row.

    Rows with a missing cell (``""``, ``NA`` or ``NaN``) in any requested
    column are dropped; the remaining columns are optionally standardised to
    mean 0 and population standard deviation 1.
    """
    covariate_cols, nuisance_cols = tuple(covariate_cols), tuple(nuisance_cols)
    wanted = (response_col, *covariate_cols, *nuisance_cols)
    if not covariate_cols:
        raise SchemaError("at least one covariate column is required")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except (OSError, UnicodeDecodeError) as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
    if header is None:
        raise SchemaError("file is empty (header row required)")
    header = [h.strip() for h in header]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"columns not found: {missing}")
    idx = [header.index(c) for c in wanted]

    kept = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        cells = [row[i].strip() for i in idx]
        if any(c in NA_MARKERS for c in cells):
            continue
        try:
            kept.append([float(c) for c in cells])
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: non-numeric cell ({exc})") from exc
    data = np.array(kept, dtype=float).reshape(len(kept), len(wanted))
    p = len(covariate_cols) + len(nuisance_cols)
    if data.shape[0] < p + 2:
        raise SchemaError(f"only {data.shape[0]} complete rows; need at least {p + 2}")
    if not np.all(np.isfinite(data)):
        raise SchemaError("non-finite values in data")
    if standardize:
        sd = data.std(axis=0)
        bad = [wanted[j] for j in np.flatnonzero(sd < SD_GUARD)]
        if bad:
            raise DegenerateColumn(f"zero-variance columns cannot be standardised: {bad}")
        data = (data - data.mean(axis=0)) / sd
    q = 1 + len(covariate_cols)
    Z = data[:, q:] if nuisance_cols else None
    return Dataset(
        data[:, 0], data[:, 1:q], Z, response_col, covariate_cols, nuisance_cols, len(rows), len(rows) - len(kept)
    )


# ---------------------------------------------------------------------------
# output


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".permreg-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _metadata(command: str) -> dict:
    return {
        "command": command,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _dumps(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def _emit(args, text: str) -> None:
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# flag parsing


def _parse_lambda(raw: str) -> tuple[float | None, float | None]:
    if raw == "auto":
        return None, None
    try:
        lam1, lam2 = (float(v) for v in raw.split(","))
    except ValueError as exc:
        raise UsageError(f"--lambda must be 'auto' or 'v1,v2', got {raw!r}") from exc
    if lam1 < 0 or lam2 < 0 or not (math.isfinite(lam1) and math.isfinite(lam2)):
        raise UsageError("--lambda values must be finite and non-negative")
    return lam1, lam2


def _columns(raw: str | None) -> tuple[str, ...]:
    if not raw:
        return ()
    return tuple(c.strip() for c in raw.split(",") if c.strip())


def _require(args, *names: str) -> None:
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


def _load(args) -> Dataset:
    _require(args, "input", "response", "covariates")
    return ingest_csv(
        args.input,
        args.response,
        _columns(args.covariates),
        standardize=not args.no_standardize,
        nuisance_cols=_columns(args.nuisance_covariates),
    )


def _variant(args, data: Dataset) -> DesignVariant:
    if args.ridge is not None and data.Z is not None:
        raise UsageError("--ridge cannot be combined with --nuisance-covariates")
    if args.ridge is not None:
        return DesignVariant.ridge(args.ridge)
    if data.Z is not None:
        return DesignVariant.partial(data.Z)
    return DesignVariant.plain()


def _config(factory, **kwargs):
    """Build a config object, reporting invalid values as flag errors."""
    try:
        return factory(**kwargs)
    except PermregError as exc:
        raise UsageError(str(exc)) from exc


def _repro_config(args) -> ReproConfig:
    _require(args, "k")
    lam1, lam2 = _parse_lambda(args.lambda_)
    return _config(ReproConfig, L=args.L, k=args.k, lam1=lam1, lam2=lam2, solver=args.solver, seed=args.seed)


def _candidates(args, data: Dataset):
    return generate_candidates(data.Y, data.X, _variant(args, data), _repro_config(args))


def _dataset_echo(data: Dataset) -> dict:
    return {
        "response": data.response,
        "covariates": list(data.covariates),
        "nuisance_covariates": list(data.nuisance),
        "rows_read": data.rows_read,
        "rows_dropped": data.rows_dropped,
        "n": int(data.Y.shape[0]),
    }


def _check_format(args, allowed: tuple[str, ...]) -> None:
    if args.format not in allowed:
        raise UsageError(f"{args.command} supports --format {' or '.join(allowed)}")


# ---------------------------------------------------------------------------
# commands


def cmd_candidates(args) -> int:
    _check_format(args, ("json", "csv"))
    _repro_config(args)  # validate flags before reading data
    data = _load(args)
    cs = _candidates(args, data)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "distance", "multiplicity", "min_objective", "moved"])
        for j, (pi, mult) in enumerate(zip(cs.uniques, cs.multiplicity)):
            w.writerow([j, pi.distance, mult, repr(cs.min_objective(j)), json.dumps(pi.to_json()["moved"])])
        _emit(args, buf.getvalue())
    else:
        payload = {"kind": "candidate_set", "dataset": _dataset_echo(data), **cs.to_json()}
        payload["metadata"] = _metadata(args.command)
        _emit(args, _dumps(payload))
    return 0


def cmd_test(args) -> int:
    _check_format(args, ("json",))
    _repro_config(args)
    alpha = args.alpha if args.alpha is not None else 0.05
    test_cfg = _config(SparsityTestConfig, k0=args.k0, alpha=alpha, M=args.M, seed=args.seed)
    data = _load(args)
    if data.Z is not None or args.ridge is not None:
        raise UsageError("the sparsity test uses the plain design; drop --nuisance-covariates/--ridge")
    cs = _candidates(args, data)
    report = sparsity_test(data.Y, data.X, cs, test_cfg)
    payload = {
        "kind": "sparsity_test",
        "dataset": _dataset_echo(data),
        "candidate_set_size": len(cs),
        "report": report.to_json(),
        "metadata": _metadata(args.command),
    }
    _emit(args, _dumps(payload))
    return 0


def cmd_confset(args) -> int:
    _check_format(args, ("json",))
    _repro_config(args)
    alpha = args.alpha if args.alpha is not None else 0.95
    if not 0 < alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    data = _load(args)
    if args.ridge is not None:
        raise UsageError("confset is defined for the plain and partial designs only")
    cs = _candidates(args, data)
    if data.Z is None:
        region = coef_region(data.Y, data.X, cs, alpha)
    else:
        region = partial_coef_region(data.Y, data.X, data.Z, cs, alpha, args.mode)
    payload = {
        "kind": "confidence_region",
        "dataset": _dataset_echo(data),
        "candidate_set_size": len(cs),
        "region": region.to_json(),
        "metadata": _metadata(args.command),
    }
    _emit(args, _dumps(payload))
    return 0


def cmd_tune(args) -> int:
    _check_format(args, ("json",))
    _require(args, "k")
    data = _load(args)
    u = gaussian_vector(draw_stream(args.seed, 0), data.Y.shape[0])
    report = select_lambdas(data.Y, data.X, u, args.k, rng=draw_stream(args.seed, 0).child(1), Z=data.Z)
    payload = {
        "kind": "tuning_report",
        "dataset": _dataset_echo(data),
        "report": report.to_json(),
        "metadata": _metadata(args.command),
    }
    _emit(args, _dumps(payload))
    return 0


def cmd_simulate(args) -> int:
    _check_format(args, ("json", "csv"))
    lam1, lam2 = _parse_lambda(args.lambda_)
    cfg = _config(
        ScenarioConfig,
        n=args.n,
        p=args.p,
        k_true=args.k_true,
        k_search=args.k if args.k is not None else max(args.k_true, 2),
        sigma0=args.sigma,
        L=args.L,
        M=args.M,
        alpha_test=args.alpha if args.alpha is not None else 0.05,
        alpha_coef=args.alpha_coef,
        reps=args.reps,
        seed=args.seed,
        k0=args.k0,
        lam1=lam1,
        lam2=lam2,
    )
    n_jobs = -1 if args.threads == 0 else args.threads
    result = run_scenario(cfg, n_jobs=n_jobs)
    table = result.to_csv()
    summary = _dumps(result.to_json(metadata=_metadata(args.command)))
    if args.format == "csv":
        _emit(args, table)
        if args.summary:
            atomic_write(args.summary, summary)
    else:
        _emit(args, summary)
        if args.csv:
            atomic_write(args.csv, table)
    return 0


def cmd_counterexample(args) -> int:
    _check_format(args, ("json",))
    _require(args, "n", "p", "k")
    X, beta0, beta1, pi1 = counterexample(args.n, args.p, args.k)
    gap = float(np.max(np.abs(pi1.apply(X @ beta1) - X @ beta0)))
    payload = {
        "kind": "counterexample",
        "n": args.n,
        "p": args.p,
        "k": args.k,
        "X": X,
        "beta0": beta0,
        "beta1": beta1,
        "pi1": pi1.to_json(),
        "max_abs_gap": gap,
        "rank": int(np.linalg.matrix_rank(X)),
        "metadata": _metadata(args.command),
    }
    _emit(args, _dumps(payload))
    return 0


COMMANDS = {
    "candidates": cmd_candidates,
    "test": cmd_test,
    "confset": cmd_confset,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "counterexample": cmd_counterexample,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="permreg", description="Inference for sparsely permuted linear regression.")
    parser.add_argument("--version", action="version", version=f"permreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, data: bool = True) -> None:
        if data:
            p.add_argument("--input", help="CSV file with a header row")
            p.add_argument("--response", help="response column")
            p.add_argument("--covariates", help="comma-separated permuted covariate columns")
            p.add_argument("--nuisance-covariates", help="comma-separated unpermuted covariate columns (Z)")
            p.add_argument("--no-standardize", action="store_true", help="skip per-column standardisation")
            p.add_argument("--ridge", type=float, help="ridge penalty (augmented design)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1, help="worker count, 0 = all cores")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="output path (default: stdout)")

    def repro(p: argparse.ArgumentParser) -> None:
        p.add_argument("--k", type=int, help="sparsity budget of the search")
        p.add_argument("--L", type=int, default=100, help="number of repro draws")
        p.add_argument("--lambda", dest="lambda_", default="auto", help="'auto' or 'lam1,lam2'")
        p.add_argument("--solver", choices=("surrogate-lap", "brute-force"), default="surrogate-lap")

    p = sub.add_parser("candidates", help="repro-sample candidate set")
    common(p)
    repro(p)

    p = sub.add_parser("test", help="conditional Monte Carlo sparsity test")
    common(p)
    repro(p)
    p.add_argument("--k0", type=int, default=0, help="null sparsity")
    p.add_argument("--M", type=int, default=200, help="Monte Carlo draws per null permutation")
    p.add_argument("--alpha", type=float, help="test level (default 0.05)")

    p = sub.add_parser("confset", help="union confidence region for the coefficients")
    common(p)
    repro(p)
    p.add_argument("--alpha", type=float, help="coverage level (default 0.95)")
    p.add_argument("--mode", choices=("joint", "beta1_only"), default="beta1_only", help="with nuisance covariates")

    p = sub.add_parser("tune", help="penalty selection for one repro draw")
    common(p)
    p.add_argument("--k", type=int, help="sparsity budget")

    p = sub.add_parser("simulate", help="Monte Carlo scenario")
    common(p, data=False)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--k-true", type=int, default=2)
    p.add_argument("--k", type=int, help="search sparsity (default max(k_true, 2))")
    p.add_argument("--k0", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--L", type=int, default=50)
    p.add_argument("--M", type=int, default=200)
    p.add_argument("--alpha", type=float, help="test level (default 0.05)")
    p.add_argument("--alpha-coef", type=float, default=0.95)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--lambda", dest="lambda_", default="auto")
    p.add_argument("--csv", help="per-replication CSV path (with --format json)")
    p.add_argument("--summary", help="JSON summary path (with --format csv)")

    p = sub.add_parser("counterexample", help="non-identifiable design for n - 2k < p")
    common(p, data=False)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--k", type=int)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"permreg: error: {exc}", file=sys.stderr)
        return 1
    except PermregError as exc:
        print(f"permreg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, OverflowError, RuntimeError) as exc:
        print(f"permreg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
