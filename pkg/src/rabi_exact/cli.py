"""Command-line front end: ``spectrum``, ``evolve``, ``gaps`` and ``validate``.

Settings come from flags and optionally from a ``key = value`` config file; flags win.
Output is CSV (LF line endings) or JSON with a metadata header embedding the full
effective configuration, so every artifact can be regenerated from itself.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .dynamics import (
    T0,
    WEIGHT_TARGET,
    InitialKind,
    InitialState,
    decompose,
    default_x_max,
    evolve,
    gap_report,
)
from .eigenbasis import build_eigenstate, coherent_overlap, norm_squared, reflection_matrix_element
from .errors import InsufficientWeight, NonConvergence, RabiError
from .numerics import PrecisionContext
from .oracle import norm_squared_quadrature, truncated_fock_reference
from .spectrum import ModelParams, Parity, find_spectrum, k_sequence, scan_spectrum

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NONCONVERGED = 2
EXIT_WEIGHT = 3
EXIT_USAGE = 64

EVOLVE_COLUMNS = ("t_over_T0", "sigma_z", "sigma_x", "captured_weight_plus", "captured_weight_minus")
SPECTRUM_COLUMNS = ("parity", "m", "x_m", "E_m", "residual", "delta_achieved", "juddian_flag")
GAP_COLUMNS = ("n", "gap", "x_plus_minus_n", "x_minus_minus_n")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with 64 (EX_USAGE) on bad input."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment; keys may use - or _."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value file; flags override it")
    p.add_argument("--g", type=float, default=0.7, help="coupling g (default 0.7)")
    p.add_argument("--delta", type=float, default=0.25, help="qubit splitting Delta = omega_0/2 (default 0.25)")
    p.add_argument("--omega", type=float, default=1.0, help="oscillator frequency (default 1)")
    p.add_argument("--x-max", type=float, default=None, help="enumerate spectral parameters x = E + g^2 below this")
    p.add_argument("--bits", type=int, default=200, help="mantissa bits (default 200)")
    p.add_argument("--root-tol", type=float, default=1e-30, help="eigenvalue bracket width (default 1e-30)")
    p.add_argument("--series-tol", type=float, default=1e-15, help="series truncation target (default 1e-15)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", metavar="PATH", default=None, help="output file (default stdout)")
    p.add_argument("--digits", type=int, default=17, help="significant digits in output (default 17)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rabi-exact", description="Exact quantum Rabi model spectra and spin dynamics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("spectrum", help="eigenvalues of one or both parity sectors")
    _common(sp)
    sp.add_argument("--parity", default="both", help="+, - or both (default both)")
    sp.set_defaults(func=cmd_spectrum)

    ev = sub.add_parser("evolve", help="<sigma_z(t)> and/or <sigma_x(t)>")
    _common(ev)
    ev.add_argument("--alpha", type=float, default=0.0, help="real coherent amplitude (default 0)")
    ev.add_argument("--observable", choices=("sz", "sx", "both"), default="sz")
    ev.add_argument("--initial", choices=("product", "cat"), default="product",
                    help="cat: superposition of the two cat states, forces alpha = g/omega")
    ev.add_argument("--t-max", type=float, default=3.0, help="window length in units of T0 = 2 pi/omega")
    ev.add_argument("--samples", type=int, default=2000, help="time samples (default 2000)")
    ev.add_argument("--raw-time", action="store_true", help="also emit t in units of 1/omega")
    ev.set_defaults(func=cmd_evolve)

    gp = sub.add_parser("gaps", help="parity gaps E_n^+ - E_n^-")
    _common(gp)
    gp.add_argument("--n-max", type=int, default=10, help="highest level index (default 10)")
    gp.set_defaults(func=cmd_gaps)

    va = sub.add_parser("validate", help="run the self-consistency checks")
    _common(va)
    va.add_argument("--levels", type=int, default=5, help="levels per sector to check (default 5)")
    va.set_defaults(func=cmd_validate)
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Two passes: find ``--config`` and the subcommand, load file defaults, then parse for real."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    first = parser.parse_args(argv)
    if first.config:
        try:
            values = read_config(first.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        sub = _subparser(parser, first.command)
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for action in sub._actions:
            if action.dest in values and isinstance(action, argparse._StoreTrueAction):
                values[action.dest] = values[action.dest].lower() in ("1", "true", "yes", "on")
        sub.set_defaults(**values)
        return parser.parse_args(argv)
    return first


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _params(args) -> ModelParams:
    return ModelParams(args.g, args.delta, args.omega)


def _context(args) -> PrecisionContext:
    return PrecisionContext(args.bits, args.root_tol, args.series_tol)


def effective_config(args) -> dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def fmt(value, digits: int) -> str:
    """Round-trippable text for floats and mp numbers; bools and ints as-is."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if digits > 17 and hasattr(value, "_mpf_"):
        from mpmath import mp, nstr

        with mp.workprec(max(mp.prec, int(digits * 3.33) + 8)):
            return nstr(value, digits, min_fixed=-4, max_fixed=digits)
    return format(float(value), f".{digits}g")


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple]
    metadata: dict[str, Any]

    def render(self, kind: str, digits: int) -> str:
        if kind == "csv":
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([fmt(v, digits) for v in row])
            return buf.getvalue()
        records = [
            {c: _json_value(v, digits) for c, v in zip(self.columns, row)} for row in self.rows
        ]
        return json.dumps({"metadata": self.metadata, "columns": list(self.columns), "rows": records},
                          indent=2) + "\n"


def _json_value(value, digits: int):
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    f = float(value)
    if digits > 17 and hasattr(value, "_mpf_"):
        return fmt(value, digits)
    return float(format(f, f".{digits}g")) if math.isfinite(f) else None


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _metadata(args, **extra) -> dict[str, Any]:
    ctx = _context(args)
    params = _params(args)
    meta = {
        "tool": "rabi-exact",
        "version": __version__,
        "command": args.command,
        "params": {"g": params.g, "delta": params.delta, "omega": params.omega},
        "precision": {"mantissa_bits": ctx.mantissa_bits, "root_tol": ctx.root_tol, "series_tol": ctx.series_tol},
        "config": effective_config(args),
    }
    meta.update(extra)
    return meta


def _parities(text: str) -> list[Parity]:
    if str(text).strip().lower() in ("both", "all", "+-", "+/-"):
        return [Parity.PLUS, Parity.MINUS]
    return [Parity.parse(text)]


def cmd_spectrum(args) -> int:
    params, ctx = _params(args), _context(args)
    x_max = args.x_max if args.x_max is not None else 10.0
    try:
        parities = _parities(args.parity)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows, warnings = [], []
    for parity in parities:
        scan = scan_spectrum(params, parity, x_max, ctx)
        warnings.extend(scan.warnings)
        for p in scan.points:
            rows.append((parity.symbol, p.index, p.x, p.energy * params.omega, p.residual,
                         p.delta_achieved, p.juddian_flag))
    meta = _metadata(args, cutoffs={"x_max": x_max}, warnings=list(warnings))
    _emit(args, Table(SPECTRUM_COLUMNS, rows, meta).render(args.format, args.digits))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_NONCONVERGED if warnings else EXIT_OK


def cmd_evolve(args) -> int:
    params, ctx = _params(args), _context(args)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if not args.t_max >= 0:
        raise UsageError("--t-max must be non-negative")
    alpha = params.g_norm if args.initial == "cat" else args.alpha
    x_max = args.x_max if args.x_max is not None else default_x_max(alpha, params)
    times = np.linspace(0.0, args.t_max * T0, args.samples)  # units of 1/omega
    wanted = ("sz", "sx") if args.observable == "both" else (args.observable,)
    columns: dict[str, np.ndarray] = {}
    weights = {Parity.PLUS: 1.0, Parity.MINUS: 1.0}
    for obs in wanted:
        if obs == "sz":
            state = InitialState(InitialKind.SIGMA_Z_PRODUCT, alpha)
        else:
            state = InitialState(InitialKind.CAT if args.initial == "cat" else InitialKind.SIGMA_X_PRODUCT, alpha)
        series = evolve(params, state, times, x_max, ctx)
        columns[obs] = series.values
        weights[Parity.PLUS] = min(weights[Parity.PLUS], series.captured_weight_plus)
        weights[Parity.MINUS] = min(weights[Parity.MINUS], series.captured_weight_minus)
    header = EVOLVE_COLUMNS + (("t",) if args.raw_time else ())
    rows = []
    for i, t in enumerate(times):
        row = [t / T0, _col(columns, "sz", i), _col(columns, "sx", i), weights[Parity.PLUS], weights[Parity.MINUS]]
        if args.raw_time:
            row.append(t)
        rows.append(tuple(row))
    meta = _metadata(
        args,
        initial_state={"kind": args.initial, "alpha": alpha},
        cutoffs={"x_max": x_max, "weight_target": WEIGHT_TARGET},
        time_unit="T0 = 2*pi/omega",
    )
    _emit(args, Table(header, rows, meta).render(args.format, args.digits))
    return EXIT_OK


def _col(columns: dict[str, np.ndarray], key: str, i: int):
    return float(columns[key][i]) if key in columns else None


def cmd_gaps(args) -> int:
    params, ctx = _params(args), _context(args)
    if args.n_max < 0:
        raise UsageError("--n-max must be >= 0")
    x_max = args.x_max if args.x_max is not None else args.n_max + 2 + 2 * abs(params.delta_norm)
    spectra = tuple(find_spectrum(params, p, x_max, ctx) for p in (Parity.PLUS, Parity.MINUS))
    rows = [(n, gap * params.omega, dp, dm) for n, gap, dp, dm in gap_report(spectra, args.n_max)]
    meta = _metadata(args, cutoffs={"x_max": x_max})
    _emit(args, Table(GAP_COLUMNS, rows, meta).render(args.format, args.digits))
    return EXIT_OK


# ---------------------------------------------------------------- validate


@dataclass
class Check:
    name: str
    status: str  # PASS, FAIL or SKIP
    detail: str


def _rel(a, b) -> float:
    a, b = float(a), float(b)
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _check_closed_forms(params, ctx, x_max, levels) -> Check:
    if not params.decoupled:
        return Check("closed forms (delta = 0)", "SKIP", "delta != 0")
    mp = ctx.mp
    g, _ = params.mp_couplings(ctx)
    worst = 0.0
    pts = find_spectrum(params, Parity.PLUS, x_max, ctx)
    for p in pts:
        worst = max(worst, float(abs(p.x - p.index)))
    K = k_sequence(mp.mpf(0), 10, params, ctx).coeffs
    k_err = max(float(abs(K[n] / ((2 * g) ** n / mp.factorial(n)) - 1)) for n in range(len(K)))
    ground = build_eigenstate(pts[0], params)
    n_err = _rel(ground.norm_sq, mp.exp(5 * g * g))
    ok = worst <= 1e-25 and k_err <= 1e-20 and n_err <= 1e-15
    return Check("closed forms (delta = 0)", "PASS" if ok else "FAIL",
                 f"|x_n - n| <= {worst:.2e}, K_n(0) rel {k_err:.2e}, norm rel {n_err:.2e}")


def _sector_states(params, ctx, x_max, levels, escalations=3):
    out = {}
    for parity in Parity:
        pts = [p for p in find_spectrum(params, parity, x_max, ctx) if not p.pole_collision]
        out[parity] = [build_eigenstate(p, params, escalations) for p in pts[:levels]]
    return out


def _check_dual_rep(states, ctx) -> Check:
    tol = max(10 * ctx.series_tol, 1e-12)
    worst = 0.0
    for group in states.values():
        for s in group:
            worst = max(worst, _rel(norm_squared(s, "minus")[0], norm_squared(s, "plus")[0]))
            if not s.params.decoupled:
                for alpha in (0.0, 2.0):
                    worst = max(worst, _rel(coherent_overlap(s, alpha, "minus")[0],
                                            coherent_overlap(s, alpha, "plus")[0]))
    return Check("dual-representation agreement", "PASS" if worst <= tol else "FAIL",
                 f"max rel diff {worst:.2e} (tol {tol:.0e})")


def _check_eps_rel(params, ctx, x_max) -> Check:
    bad = []
    count = 0
    for parity in Parity:
        for p in find_spectrum(params, parity, x_max, ctx):
            if p.pole_collision:
                continue
            state = build_eigenstate(p, params, max_escalations=0)
            _, rep = norm_squared(state, "minus", max_escalations=0)
            count += 1
            if rep.kink_hit or rep.eps_rel_achieved > ctx.series_tol:
                bad.append(f"{parity.symbol}{p.index}(x={float(p.x):.4g}, eps {rep.eps_rel_achieved:.1e})")
    if not bad:
        return Check("eps_rel reached without escalation", "PASS", f"{count} levels")
    shown = ", ".join(bad[:6]) + (" ..." if len(bad) > 6 else "")
    return Check("eps_rel reached without escalation", "FAIL", f"{len(bad)}/{count} levels: {shown}")


def _check_quadrature(states, params, ctx) -> Check:
    if params.decoupled:
        return Check("quadrature vs series norm", "SKIP", "x sits on a pole when delta = 0")
    worst = 0.0
    for parity, group in states.items():
        for s in group[:3]:
            q = norm_squared_quadrature(s.point.x, params, ctx=ctx, parity=parity)
            worst = max(worst, _rel(q, s.norm_sq))
    return Check("quadrature vs series norm", "PASS" if worst <= 1e-8 else "FAIL",
                 f"max rel diff {worst:.2e} (tol 1e-8, grid doubling 1e-10)")


def _check_parseval(params, ctx, x_max) -> Check:
    total = 0.0
    worst = 0.0
    for parity in Parity:
        pts = [p for p in find_spectrum(params, parity, x_max, ctx) if not p.pole_collision]
        total = math.fsum(float(coherent_overlap(s, 0.0)[0] ** 2 / s.norm_sq)
                          for s in (build_eigenstate(p, params) for p in pts))
        worst = max(worst, abs(1 - total))
    return Check("Parseval (alpha = 0)", "PASS" if worst <= 1e-10 else "FAIL",
                 f"max |1 - sum| {worst:.2e} over x < {x_max:g} (tol 1e-10)")


def _check_fock(params, ctx, x_max, levels) -> Check:
    n_max = 200 if params.g_norm <= 2.5 else 400
    ref = truncated_fock_reference(params, n_max)
    worst = 0.0
    for parity in Parity:
        xs = [float(p.x) for p in find_spectrum(params, parity, x_max, ctx)][:levels]
        fock = ref.x_values(parity)[: len(xs)]
        if len(xs):
            worst = max(worst, float(np.max(np.abs(np.array(xs) - fock))))
    return Check("truncated-Fock spectrum", "PASS" if worst <= 1e-8 else "FAIL",
                 f"max |dx| {worst:.2e} vs n_max={n_max} (tol 1e-8)")


def _check_reflection(states) -> Check:
    worst = 0.0
    for group in states.values():
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                worst = max(worst, _rel(reflection_matrix_element(a, b), reflection_matrix_element(b, a)))
    return Check("reflection symmetry", "PASS" if worst < 1e-10 else "FAIL", f"max rel diff {worst:.2e}")


def run_validation(params: ModelParams, ctx: PrecisionContext, x_max: float, levels: int) -> list[Check]:
    """Every check guarded individually: a solver failure turns into a FAIL line."""
    states: dict | None = None

    def guarded(name: str, fn: Callable[[], Check]) -> Check:
        try:
            return fn()
        except (RabiError, ArithmeticError, ValueError, IndexError) as exc:
            return Check(name, "FAIL", f"{type(exc).__name__}: {exc}")

    def get_states():
        nonlocal states
        if states is None:
            states = _sector_states(params, ctx, x_max, levels)
        return states

    return [
        guarded("closed forms (delta = 0)", lambda: _check_closed_forms(params, ctx, x_max, levels)),
        guarded("dual-representation agreement", lambda: _check_dual_rep(get_states(), ctx)),
        guarded("eps_rel reached without escalation", lambda: _check_eps_rel(params, ctx, x_max)),
        guarded("quadrature vs series norm", lambda: _check_quadrature(get_states(), params, ctx)),
        guarded("Parseval (alpha = 0)", lambda: _check_parseval(params, ctx, max(x_max, default_x_max(0, params)))),
        guarded("truncated-Fock spectrum", lambda: _check_fock(params, ctx, x_max, levels)),
        guarded("reflection symmetry", lambda: _check_reflection(get_states())),
    ]


def cmd_validate(args) -> int:
    params, ctx = _params(args), _context(args)
    x_max = args.x_max if args.x_max is not None else 10.0
    checks = run_validation(params, ctx, x_max, args.levels)
    failed = any(c.status == "FAIL" for c in checks)
    if args.format == "json":
        report = {
            "metadata": _metadata(args, cutoffs={"x_max": x_max}),
            "checks": [vars(c) for c in checks],
            "passed": not failed,
        }
        _emit(args, json.dumps(report, indent=2) + "\n")
    else:
        width = max(len(c.name) for c in checks)
        lines = [f"{c.status:<4}  {c.name:<{width}}  {c.detail}" for c in checks]
        lines.append(f"{'FAIL' if failed else 'PASS'}  overall")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_FAIL if failed else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"rabi-exact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientWeight as exc:
        print(f"rabi-exact: {exc}. Pass a larger --x-max.", file=sys.stderr)
        return EXIT_WEIGHT
    except (NonConvergence, RabiError) as exc:
        print(f"rabi-exact: did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
