"""Command-line entry point: ``flowexp <command> [options]``.

Exit codes: 0 success, 1 usage, 2 numeric failure, 3 invariant violation.
The default solver tolerance comes from FLOWEXP_TOL (1e-12 if unset).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3
DEFAULT_SEED = 20240611


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def default_tol() -> float:
    raw = os.environ.get("FLOWEXP_TOL", "1e-12")
    try:
        tol = float(raw)
    except ValueError:
        raise UsageError(f"FLOWEXP_TOL is not a number: {raw!r}") from None
    if not tol > 0:
        raise UsageError("FLOWEXP_TOL must be positive")
    return tol


@dataclass
class RunConfig:
    command: str
    basis: Dict[str, object] = field(default_factory=dict)
    field_file: Optional[str] = None
    control_file: Optional[str] = None
    grid: List[Fraction] = field(default_factory=list)
    tol: float = 1e-12
    output: Optional[str] = None
    fmt: str = "json"

    def validate(self):
        for path in (self.field_file, self.control_file):
            if path and not os.path.exists(path):
                raise UsageError(f"file not found: {path}")
        if self.command == "sweep" and not self.grid:
            raise UsageError("sweep grid is empty")
        if not self.tol > 0:
            raise UsageError("tolerance must be positive")


# rendering ------------------------------------------------------------------

def render_value(v):
    """Rationals appear exact and decimal; everything else JSON-native."""
    if isinstance(v, Fraction):
        return {"exact": str(v), "decimal": float(v)}
    if isinstance(v, dict):
        return {str(k): render_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [render_value(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def report_writer(report, fmt: str, path: Optional[str] = None) -> str:
    """Serialize a report (an object with to_dict/to_csv, or rows) and
    write it to ``path`` when given.  Keys keep insertion order."""
    if fmt == "json":
        data = report.to_dict() if hasattr(report, "to_dict") else report
        text = json.dumps(render_value(data), indent=1) + "\n"
    elif fmt == "csv":
        if hasattr(report, "to_csv"):
            text = report.to_csv()
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            for row in report:
                w.writerow(row)
            text = buf.getvalue()
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if path:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {path}: {exc}") from None
    return text


def read_report(text: str):
    return json.loads(text)


def _frac(s: str) -> Fraction:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a rational number: {s!r}") from None


def _point(s: str) -> List[Fraction]:
    return [_frac(x) for x in s.split(",") if x.strip()]


# inputs -------------------------------------------------------------------------

def load_fields(name: str):
    from .fields import VField
    from .fixtures import FIELD_FIXTURES, load_fields as fixture
    if name in FIELD_FIXTURES:
        return fixture(name)
    if not os.path.exists(name):
        raise UsageError(f"unknown field fixture or file: {name}")
    with open(name) as fh:
        d = json.load(fh)
    try:
        return {int(k): VField.from_dict(v) for k, v in d["fields"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed field file: {exc}") from None


def load_controls(path: Optional[str], letters: Sequence[int], T: Fraction, seed: int):
    from .signals import Control, ControlTuple, random_piecewise_linear
    if path:
        if not os.path.exists(path):
            raise UsageError(f"control file not found: {path}")
        with open(path) as fh:
            try:
                return ControlTuple.from_json(fh.read())
            except (KeyError, ValueError) as exc:
                raise UsageError(f"malformed control file: {exc}") from None
    rng = random.Random(seed)
    ctrls = [Control.constant(1, T) if l == 0 else random_piecewise_linear(rng, T=T) for l in letters]
    return ControlTuple(tuple(letters), tuple(ctrls))


# commands -----------------------------------------------------------------------

def cmd_hall(args) -> int:
    from .hall import build_hall_basis
    b = build_hall_basis(args.q, args.maxlen, drift=args.drift)
    if args.format == "json":
        text = b.to_json() + "\n"
    else:
        text = "".join(f"{i}\t{e!r}\n" for i, e in enumerate(b.elements))
    _emit(text, args.out)
    return EXIT_OK


def cbhd_table_csv(n_args: int, order: int) -> str:
    from .coords import cbhd_coeffs
    from .hall import build_hall_basis
    basis = build_hall_basis(n_args, order)
    tab = cbhd_coeffs(n_args, basis, order)
    return tab.to_csv(basis)


def cmd_cbhd(args) -> int:
    from .coords import cbhd_coeffs
    from .hall import build_hall_basis
    if args.args < 2 or args.order < 1:
        raise UsageError("--args must be >= 2 and --order >= 1")
    if args.format == "csv":
        text = cbhd_table_csv(args.args, args.order)
    else:
        basis = build_hall_basis(args.args, args.order)
        tab = cbhd_coeffs(args.args, basis, args.order)
        rows = [{"bracket": repr(b), "value": v} for b, v in tab.items_sorted(basis)]
        text = json.dumps(render_value({"n_args": args.args, "order": args.order, "rows": rows}),
                          indent=1) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_coords(args) -> int:
    from .coords import coord_first_kind, coord_pseudo_first_kind, coord_second_kind
    from .hall import build_hall_basis
    t = _frac(args.t)
    letters = ([0] if args.drift or args.kind == "pseudo" else []) + list(range(1, args.q + 1))
    a = load_controls(args.controls, letters, max(t, Fraction(1)), args.seed)
    print(f"# seed {args.seed}", file=sys.stderr)
    q = len([l for l in a.letters if l != 0])
    drift = 0 in a.letters
    if args.kind == "first":
        basis = build_hall_basis(q, args.M, drift=drift)
        tab = coord_first_kind(basis, a, t, args.M)
    elif args.kind == "second":
        basis = build_hall_basis(q, args.M, drift=drift)
        tab = coord_second_kind(basis.elements, a, t)
    else:
        if not drift:
            raise UsageError("pseudo-first-kind coordinates need a drift channel")
        basis = build_hall_basis(q, args.M + args.N0, drift=True,
                                 keep=lambda b: b.n <= args.M and b.n0 <= args.N0)
        tab = coord_pseudo_first_kind(basis, a, t, args.M, args.N0)
    if args.format == "csv":
        text = tab.to_csv(basis)
    else:
        rows = [{"bracket": repr(b), "value": v} for b, v in tab.items_sorted(basis)]
        text = json.dumps(render_value({"kind": tab.kind, "t": t, "rows": rows}), indent=1) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import expansions as ex
    from .hall import build_hall_basis
    tol = args.tol or default_tol()
    fields = load_fields(args.fields)
    t = _frac(args.t)
    p = _point(args.p)
    dim = next(iter(fields.values())).dim
    if len(p) != dim:
        raise UsageError(f"point has {len(p)} coordinates, fields live in dimension {dim}")
    letters = sorted(fields)
    a = load_controls(args.controls, letters, max(t, Fraction(1)), args.seed)
    print(f"# seed {args.seed}", file=sys.stderr)
    a = a.restrict(t) if t < a.T else a
    m = args.method
    if m == "cf":
        rep = ex.ErrorReport("cf", {"M": args.M, "t": t}, "t")
        rep.add(float(t), ex.chen_fliess_eval(fields, a, p, t, args.M), ex.oracle_endpoint(fields, a, p, t, tol))
    elif m == "magnus":
        rep = ex.magnus_eval(fields, a, p, t, args.M, tol=tol).report
    elif m == "cbhd":
        fs = [fields[l] for l in letters]
        rep = ex.cbhd_eval(fs, _frac(args.eps), p, args.M, tol)
    elif m == "interaction":
        if 0 not in fields:
            raise UsageError("interaction method needs a drift field (letter 0)")
        rep = ex.interaction_magnus_eval(fields[0], {l: f for l, f in fields.items() if l}, a, p, t,
                                         args.M, args.N0, tol)
    elif m == "sussmann":
        q = len([l for l in letters if l != 0])
        drift = 0 in letters
        if drift:
            basis = build_hall_basis(q, args.M + args.N0, drift=True,
                                     keep=lambda b: b.n <= args.M and b.n0 <= args.N0)
            filt = ("S", args.M, args.N0)
        else:
            basis = build_hall_basis(q, args.M)
            filt = ("length", args.M)
        rep = ex.sussmann_eval(basis, fields, a, p, t, filt, tol)
    else:
        raise UsageError(f"unknown method {m!r}")
    report_writer(rep, "json", args.out) if args.out else None
    _emit(report_writer(rep, "json"), None)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .expansions import order_sweep
    tol = args.tol or default_tol()
    grid = [Fraction(1, 2 ** j) for j in range(args.jmin, args.jmax + 1)]
    cfg = RunConfig("sweep", {"M": args.M}, grid=grid, tol=tol, output=args.out, fmt=args.format)
    cfg.validate()
    rep = order_sweep(args.method, args.system, args.M, grid, tol, args.N0, fit=False)
    try:
        rep.fit_order(100 * tol)
    except ValueError as exc:
        print(f"# fit failed: {exc}", file=sys.stderr)
    text = report_writer(rep, args.format, args.out)
    if args.format == "csv" and rep.fit is not None:
        text += f"# slope {rep.fit.slope:.6f}\n"
        if args.out:
            with open(args.out, "a") as fh:
                fh.write(f"# slope {rep.fit.slope:.6f}\n")
    _emit(text, None)
    return EXIT_OK


def cmd_counterexample(args) -> int:
    from . import expansions as ex
    name = args.name
    if name == "cbh-divergence":
        scan = ex.cbh_divergence(_frac(args.eps), args.mmax)
        rows = [{"M_prime": m, "theta": th, "flow_x2": fv} for m, th, fv in scan.rows]
        out = {"eps": scan.eps, "k_star": scan.k_star, "rows": rows}
    elif name == "magnus-control":
        norms = ex.usual_magnus_control_counterexample(_frac(args.eps), _frac(args.t), args.kmax)
        out = {"t": _frac(args.t), "rows": [{"k": k, "norm": v} for k, v in norms]}
    elif name == "matrix-sussmann":
        d = ex.matrix_divergence()
        out = {"gamma": d["gamma"], "t": d["t"],
               "coefficients": [{"k": k, "length": n, "c": c} for k, n, c in d["coefficients"]],
               "pattern": [{"k": k, "A1_ok": a, "A2_ok": b} for k, a, b in d["pattern"]],
               "norms": [{"k": k, "xi": x, "norm": (v if np.isfinite(v) else "inf"),
                          "log_growth": g} for k, x, v, g in d["norms"]]}
    elif name == "multi-input-failure":
        from .fixtures import (multi_input_controls, multi_input_fields, multi_input_primitive_sups,
                               multi_input_x2)
        from .flows import OdeProblem, solve_reference
        f1, f2 = multi_input_fields()
        rows = []
        for n in (4, 8, 16):
            u, v = multi_input_controls(n, 1.0)
            res = solve_reference(OdeProblem(None, ((u, f1), (v, f2)), [0, 0], 1.0, 1e-10))
            rows.append({"n": n, "x2": float(res.endpoint[1]), "closed_form": multi_input_x2(n, 1.0),
                         "U_sup_plus_V_sup": sum(multi_input_primitive_sups(n, 1.0))})
        out = {"T": 1.0, "rows": rows}
    else:
        raise UsageError(f"unknown counterexample {name!r}")
    text = json.dumps(render_value(out), indent=1) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_identity(args) -> int:
    from .expansions import formal_zm_cbh_identity
    from .signals import random_piecewise_linear
    rng = random.Random(args.seed)
    print(f"# seed {args.seed}", file=sys.stderr)
    rows = []
    ok_all = True
    for i in range(args.controls):
        u = random_piecewise_linear(rng)
        for r in range(1, args.r + 1):
            for nu in range(args.nu + 1):
                ok = formal_zm_cbh_identity(u, 1, r, nu)
                ok_all &= ok
                rows.append({"control": i, "r": r, "nu": nu, "equal": ok})
    _emit(json.dumps({"seed": args.seed, "all_equal": ok_all, "rows": rows}, indent=1) + "\n", args.out)
    if not ok_all:
        raise InvariantViolation("formal identity fails")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_suites
    print(f"# seed {args.seed}")
    results = run_suites(args.seed)
    failed = []
    for i, name, fails, sec in results:
        status = "ok" if not fails else "FAIL"
        print(f"[{i}] {name:<11} {status}  ({sec:.2f} s)")
        for f in fails:
            print(f"    - {f}")
        if fails:
            failed.append(i)
    if failed:
        print(f"failing suites: {','.join(map(str, failed))}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _emit(text: str, path: Optional[str]):
    if path:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {path}: {exc}") from None
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowexp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("hall", help="export a Hall basis")
    s.add_argument("--q", type=int, default=2)
    s.add_argument("--maxlen", type=int, default=4)
    s.add_argument("--drift", action="store_true")
    s.add_argument("--format", choices=["json", "text"], default="text")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_hall)

    s = sub.add_parser("cbhd", help="CBHD coefficient table")
    s.add_argument("--args", type=int, default=2)
    s.add_argument("--order", type=int, default=4)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_cbhd)

    s = sub.add_parser("coords", help="coordinate tables (first, second, pseudo)")
    s.add_argument("--kind", choices=["first", "second", "pseudo"], default="first")
    s.add_argument("--q", type=int, default=1)
    s.add_argument("--drift", action="store_true")
    s.add_argument("--controls")
    s.add_argument("--t", default="1")
    s.add_argument("--M", type=int, default=3)
    s.add_argument("--N0", type=int, default=4)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_coords)

    s = sub.add_parser("eval", help="evaluate one expansion at one point")
    s.add_argument("--method", choices=["cf", "magnus", "cbhd", "interaction", "sussmann"], required=True)
    s.add_argument("--fields", default="normal-form-3d")
    s.add_argument("--controls")
    s.add_argument("--p", default="0,0,0")
    s.add_argument("--t", default="1/4")
    s.add_argument("--eps", default="1/8")
    s.add_argument("--M", type=int, default=2)
    s.add_argument("--N0", type=int, default=8)
    s.add_argument("--tol", type=float)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="order study over a geometric grid")
    s.add_argument("--method", choices=["cf", "magnus", "cbhd", "interaction", "sussmann"], required=True)
    s.add_argument("--system", choices=["normal-form-3d", "optimal-pair"], default="normal-form-3d")
    s.add_argument("--M", type=int, default=2)
    s.add_argument("--N0", type=int, default=8)
    s.add_argument("--jmin", type=int, default=3)
    s.add_argument("--jmax", type=int, default=8)
    s.add_argument("--tol", type=float)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("counterexample", help="named divergence fixtures")
    s.add_argument("name", choices=["cbh-divergence", "magnus-control", "matrix-sussmann",
                                    "multi-input-failure"])
    s.add_argument("--eps", default="1/10")
    s.add_argument("--mmax", type=int, default=60)
    s.add_argument("--t", default="1")
    s.add_argument("--kmax", type=int, default=40)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_counterexample)

    s = sub.add_parser("identity", help="check Z = CBHD(Y, U X1) per bidegree")
    s.add_argument("--r", type=int, default=2)
    s.add_argument("--nu", type=int, default=3)
    s.add_argument("--controls", type=int, default=10)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_identity)

    s = sub.add_parser("selftest", help="run every invariant suite")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .flows import SolverError
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError("missing command")
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (SolverError, ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
