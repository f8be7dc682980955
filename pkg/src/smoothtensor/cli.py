"""Command-line front end.

Exit codes: 0 ok, 1 acceptance criteria failed (``repro``), 2 algorithmic
failure, 3 precondition or rank failure, 64 usage error, 74 I/O failure.

Every output file starts with comment lines recording the seed, the build id
and the parsed configuration; the wall-clock timestamp sits on its own
``# timestamp:`` line so bodies stay byte-identical across runs.
"""
import argparse
import csv
import datetime
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, gaussians, multiview, smoothed_lab
from .decompose import DecomposeConfig, decompose, decompose_overcomplete
from .exceptions import AlgorithmicFailure, PreconditionError
from .tensor_core import read_tensor, write_factors

EXIT_OK = 0
EXIT_CRITERIA = 1
EXIT_ALGORITHMIC = 2
EXIT_PRECONDITION = 3
EXIT_USAGE = 64
EXIT_IO = 74

#: environment variable overriding the worker thread count
THREADS_ENV = "SMOOTHTENSOR_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_id():
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def thread_count(requested=None):
    """``--threads`` if given, else the env override, else 1."""
    if requested:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV, "").strip()
    if env == "auto":
        return os.cpu_count() or 1
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer or 'auto', got {env!r}") from exc
    return 1


def _config_echo(args):
    skip = {"func", "handler"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _header_lines(args, seed):
    return [
        f"# seed: {seed}",
        f"# build: {build_id()}",
        f"# config: {json.dumps(_config_echo(args), sort_keys=True, default=str)}",
        f"# timestamp: {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
    ]


def _meta(args, seed):
    return {
        "seed": seed,
        "build": build_id(),
        "config": _config_echo(args),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _write_text(path, text):
    if path == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise OSError(f"{path}: invalid JSON ({exc})") from exc


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


# decompose -----------------------------------------------------------------

def cmd_decompose(args):
    T = read_tensor(args.input)
    cfg = DecomposeConfig(rng_seed=args.seed, noise_floor=args.noise_floor, max_retries=args.max_retries)
    if T.order == 3:
        fs, report = decompose(T, args.rank, cfg)
    else:
        fs, report = decompose_overcomplete(T, args.rank, cfg, return_report=True)
    buf = io.StringIO()
    buf.write("\n".join(_header_lines(args, args.seed)) + "\n")
    write_factors(buf, fs)
    _write_text(args.output, buf.getvalue())
    if args.report:
        _write_json(args.report, {"meta": _meta(args, args.seed), "condition_report": report.to_dict()})
    return EXIT_OK


# krrank / orthosys ---------------------------------------------------------

KR_COLUMNS = ["n", "R", "ell", "rho", "base", "trial", "sigma_min", "wall_ms"]


def cmd_krrank(args):
    results = smoothed_lab.kr_sigma_min_sweep(
        args.n_list, args.r_list, [args.order], args.rho_list, args.trials, args.seed,
        base=args.base, n_jobs=thread_count(args.threads),
    )
    buf = io.StringIO()
    buf.write("\n".join(_header_lines(args, args.seed)) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(KR_COLUMNS)
    for res in results:
        for t, (s, ms) in enumerate(zip(res.sigma_min, res.wall_ms)):
            writer.writerow([res.n, res.R, res.ell, repr(res.rho), res.base, t, repr(s),
                             f"{ms:.3f}" if args.timing else "0"])
        if res.skipped:
            buf.write(f"# skipped n={res.n} R={res.R} ell={res.ell} rho={res.rho}: {res.skipped}\n")
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_orthosys_build(args):
    basis = read_tensor(args.basis).array
    if basis.ndim != 2:
        raise PreconditionError("basis file must hold an order-2 tensor (n*m rows, one column per basis vector)")
    sys_ = smoothed_lab.build_orthogonal_system(basis, args.n, args.m, args.r, args.s, seed=args.seed)
    ok, worst = smoothed_lab.verify_orthogonal_system(sys_)
    _write_json(args.out, {
        "meta": _meta(args, args.seed),
        "n": sys_.n,
        "m": sys_.m,
        "r": sys_.r,
        "theta": sys_.theta,
        "delta_prime": sys_.delta_prime,
        "column_order": [int(c) for c in sys_.column_order],
        "stage_robust_dims": sys_.stage_robust_dims,
        "matrices": sys_.matrices,
        "verified": ok,
        "worst_residual": worst,
    })
    return EXIT_OK


def _load_system(path):
    obj = _read_json(path)
    try:
        return smoothed_lab.OrthogonalSystem(
            np.asarray(obj["matrices"], dtype=float), list(obj["column_order"]), float(obj["theta"]),
            float(obj.get("delta_prime", len(obj["column_order"]) / np.shape(obj["matrices"])[2])),
        )
    except (KeyError, IndexError) as exc:
        raise PreconditionError(f"{path}: missing field {exc}") from exc


def cmd_orthosys_verify(args):
    sys_ = _load_system(args.system)
    theta = args.theta if args.theta is not None else sys_.theta
    sys_.theta = theta
    ok, worst = smoothed_lab.verify_orthogonal_system(sys_)
    print(json.dumps({"ok": ok, "worst_residual": worst, "theta": theta}))
    return EXIT_OK if ok else EXIT_ALGORITHMIC


# multiview -----------------------------------------------------------------

def cmd_multiview_gen(args):
    model = multiview.MultiViewModel.from_json(_read_json(args.model))
    X = multiview.sample(model, args.n_samples, args.seed)
    buf = io.StringIO()
    buf.write("\n".join(_header_lines(args, args.seed)) + "\n")
    buf.write(f"# n: {model.n}\n")
    np.savetxt(buf, X, fmt="%d")
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def _comment_value(path, key):
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            if line.startswith(f"# {key}:"):
                return line.split(":", 1)[1].strip()
    return None


def cmd_multiview_learn(args):
    X = np.loadtxt(args.samples, dtype=np.int64, comments="#", ndmin=2)
    if X.shape[1] != args.views:
        raise PreconditionError(f"samples have {X.shape[1]} views, --views says {args.views}")
    n = args.n or (int(_comment_value(args.samples, "n")) if _comment_value(args.samples, "n") else None)
    cfg = DecomposeConfig(rng_seed=args.seed)
    w, means, diag = multiview.learn(X, args.rank, cfg, n=n)
    _write_json(args.out, {
        "meta": _meta(args, args.seed),
        "n": means[0].shape[0],
        "ell": len(means),
        "R": args.rank,
        "weights": w,
        "means": [M.T for M in means],
        "diagnostics": diag,
    })
    return EXIT_OK


# gmm -----------------------------------------------------------------------

def cmd_gmm_gen(args):
    model = gaussians.AxisAlignedGMM.from_json(_read_json(args.model))
    X = gaussians.sample(model, args.n_samples, args.seed)
    buf = io.StringIO()
    buf.write("\n".join(_header_lines(args, args.seed)) + "\n")
    np.savetxt(buf, X, fmt="%.17g")
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_gmm_learn(args):
    X = np.loadtxt(args.samples, dtype=float, comments="#", ndmin=2)
    cfg = gaussians.GaussianLearnConfig(decompose=DecomposeConfig(rng_seed=args.seed))
    model, diag = gaussians.learn(X, args.k, args.groups, cfg)
    out = model.to_json()
    out["meta"] = _meta(args, args.seed)
    out["diagnostics"] = diag
    _write_json(args.out, out)
    return EXIT_OK


# repro ---------------------------------------------------------------------

def cmd_repro(args):
    from . import repro

    results = repro.run_suite(quick=args.quick, seed=args.seed, n_jobs=thread_count(args.threads),
                              only=args.only, echo=lambda r: print(r.line(), flush=True))
    ok = all(r.passed for r in results)
    summary = f"SUMMARY {'PASS' if ok else 'FAIL'} {sum(r.passed for r in results)}/{len(results)}"
    print(summary)
    if args.out:
        lines = _header_lines(args, args.seed) + [r.line() for r in results] + [summary]
        _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_CRITERIA


# parser --------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="smoothtensor", description="Overcomplete tensor decomposition and moment-based learning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    d = sub.add_parser("decompose", help="CP-decompose a tensor file")
    d.add_argument("--input", required=True)
    d.add_argument("--rank", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--output", required=True)
    d.add_argument("--noise-floor", type=float, default=0.0)
    d.add_argument("--max-retries", type=int, default=5)
    d.add_argument("--report", help="write the condition report as JSON here")
    d.set_defaults(func=cmd_decompose)

    k = sub.add_parser("krrank", help="smallest singular value sweep of perturbed Khatri-Rao products")
    k.add_argument("--n-list", type=_ints, required=True)
    k.add_argument("--r-list", type=_ints, required=True)
    k.add_argument("--order", type=int, default=2)
    k.add_argument("--rho-list", type=_floats, required=True)
    k.add_argument("--trials", type=int, default=50)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--base", choices=smoothed_lab.BASE_FAMILIES, default="zero")
    k.add_argument("--out", required=True)
    k.add_argument("--timing", action="store_true", help="fill wall_ms (otherwise 0, keeping output deterministic)")
    k.add_argument("--threads", type=int)
    k.set_defaults(func=cmd_krrank)

    o = sub.add_parser("orthosys", help="ordered orthogonal systems")
    osub = o.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    osub.required = True
    ob = osub.add_parser("build")
    ob.add_argument("--basis", required=True, help="order-2 tensor file, n*m rows")
    ob.add_argument("--n", type=int, required=True)
    ob.add_argument("--m", type=int, required=True)
    ob.add_argument("--r", type=int, required=True)
    ob.add_argument("--s", type=int, required=True)
    ob.add_argument("--seed", type=int, default=0)
    ob.add_argument("--out", required=True)
    ob.set_defaults(func=cmd_orthosys_build)
    ov = osub.add_parser("verify")
    ov.add_argument("--system", required=True)
    ov.add_argument("--theta", type=float)
    ov.set_defaults(func=cmd_orthosys_verify)

    for name, gen, learn in (("multiview", cmd_multiview_gen, cmd_multiview_learn),
                             ("gmm", cmd_gmm_gen, cmd_gmm_learn)):
        m = sub.add_parser(name, help=f"{name} mixture: sample or learn")
        msub = m.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
        msub.required = True
        g = msub.add_parser("gen")
        g.add_argument("--model", required=True)
        g.add_argument("--n-samples", type=int, required=True)
        g.add_argument("--seed", type=int, default=0)
        g.add_argument("--out", required=True)
        g.set_defaults(func=gen)
        lp = msub.add_parser("learn")
        lp.add_argument("--samples", required=True)
        lp.add_argument("--seed", type=int, default=0)
        lp.add_argument("--out", required=True)
        if name == "multiview":
            lp.add_argument("--rank", type=int, required=True)
            lp.add_argument("--views", type=int, required=True)
            lp.add_argument("--n", type=int, help="alphabet size (default: from the samples header)")
        else:
            lp.add_argument("--k", type=int, required=True)
            lp.add_argument("--groups", type=int, default=3)
        lp.set_defaults(func=learn)

    r = sub.add_parser("repro", help="run the acceptance suite")
    r.add_argument("--quick", action="store_true", help="desk-scale trial counts")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="also write the report here")
    r.add_argument("--only", type=_ints, help="comma-separated criterion numbers")
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0)
    except AlgorithmicFailure as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ALGORITHMIC
    except PreconditionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
