"""Command-line front end.

Every table goes to stdout (or ``--out``) as CSV preceded by ``# key=value``
lines echoing the resolved configuration. Exit codes: 0 success, 1 usage
error, 2 data error (unreadable or malformed series file), 3 numerical
failure (quadrature non-convergence or a failed ``--check`` self-test).

Options can also come from ``--config FILE`` holding ``key=value`` lines
(``#`` comments allowed); keys are the long option names without dashes,
e.g. ``sigma=0.17,0.28`` or ``trials=100000``. Command-line flags win.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import re
import sys
from dataclasses import replace

from . import __version__, analytics, montecarlo, timeseries_io
from .analytics import NumericalConvergenceError, ProtocolParams
from .gaussian_core import SqueezedModeParams
from .montecarlo import SimulationConfig
from .phase_noise import PhaseProcessConfig
from .sweeps import SweepPointError, SweepSpec, self_check_failures, sweep, write_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_Q = 1.0
DEFAULT_SIGMAS = "0.17,0.28,0.40"
DEFAULT_THETAS = "0,pi/2"

log = logging.getLogger("phasedistill")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_ANGLE = re.compile(r"^\s*([-+]?[0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def parse_number(text: str) -> float:
    """Parse a float, ``inf``, or a multiple of pi such as ``pi/2`` or ``-0.5*pi``."""
    text = text.strip()
    m = _ANGLE.match(text)
    if m:
        coeff = m.group(1)
        if coeff in ("", "+"):
            value = math.pi
        elif coeff == "-":
            value = -math.pi
        else:
            value = float(coeff) * math.pi
        if m.group(2):
            value /= float(m.group(2))
        return value
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def parse_list(text: str) -> tuple[float, ...]:
    values = tuple(parse_number(t) for t in text.split(",") if t.strip())
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def linspace_spec(text: str) -> tuple[float, ...]:
    """``start:stop:count`` (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected start:stop:count, got {text!r}")
        start, stop = parse_number(parts[0]), parse_number(parts[1])
        count = int(parts[2])
        if count < 1:
            raise argparse.ArgumentTypeError("count must be >= 1")
        if count == 1:
            return (start,)
        return tuple(start + (stop - start) * i / (count - 1) for i in range(count))
    return parse_list(text)


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


# -- parser -----------------------------------------------------------------


def _state_flags(p):
    g = p.add_argument_group("state and protocol")
    g.add_argument("--vx", type=parse_number, default=0.32, help="squeezed variance (default 0.32)")
    g.add_argument("--vp", type=parse_number, default=8.5, help="anti-squeezed variance (default 8.5)")
    g.add_argument("--eta", type=parse_number, default=1.0, help="detection efficiency (default 1)")


def _mc_flags(p, default_engine="analytic"):
    g = p.add_argument_group("engine")
    g.add_argument("--engine", choices=("analytic", "montecarlo", "both"), default=default_engine)
    g.add_argument("--trials", type=int, default=1_000_000, help="MC trials per point")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shards", type=int, default=1, help="MC shards (part of the result's identity)")
    g.add_argument("--jobs", type=int, default=1, help="grid points evaluated concurrently")
    g.add_argument("--check", action="store_true", help="with --engine both: exit 3 if any |z| > 3")


def _common(p):
    p.add_argument("--out", help="write the table here instead of stdout")
    p.add_argument("--config", help="key=value file with defaults for these options")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phasedistill", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep-sigma", help="output variance versus phase-noise strength")
    p.add_argument("--grid", type=linspace_spec, default=DEFAULT_SIGMAS, help="sigma values")
    p.add_argument("--q", type=parse_list, default=str(DEFAULT_Q))
    p.add_argument("--theta", type=parse_list, default=DEFAULT_THETAS)
    p.add_argument("--nqcp", type=parse_int_list, default="1")
    p.add_argument("--uproduct", action="store_true", help="add uncertainty-product columns")
    _state_flags(p)
    _mc_flags(p)
    _common(p)
    p.set_defaults(param="sigma", phase_model="iid")

    p = sub.add_parser("sweep-threshold", help="output variance versus trigger threshold Q")
    p.add_argument("--grid", type=linspace_spec, default="0.2,0.4,0.7,1.0,1.5,2.0,3.0")
    p.add_argument("--sigma", type=parse_list, default=DEFAULT_SIGMAS)
    p.add_argument("--theta", type=parse_list, default=DEFAULT_THETAS)
    p.add_argument("--nqcp", type=parse_int_list, default="1")
    p.add_argument("--uproduct", action="store_true")
    _state_flags(p)
    _mc_flags(p)
    _common(p)
    p.set_defaults(param="q_threshold", phase_model="iid")

    p = sub.add_parser("sweep-theta", help="output variance versus trigger quadrature angle")
    p.add_argument("--grid", type=linspace_spec, default="0:pi:65")
    p.add_argument("--sigma", type=parse_list, default="0.202")
    p.add_argument("--q", type=parse_list, default="0.7")
    p.add_argument("--nqcp", type=parse_int_list, default="1")
    p.add_argument("--uproduct", action="store_true")
    _state_flags(p)
    _mc_flags(p)
    _common(p)
    p.set_defaults(param="theta", phase_model="iid")

    p = sub.add_parser("qcp", help="channel probing: output variance versus Q for several N")
    p.add_argument("--grid", type=linspace_spec, default="0.3,0.5,0.7,1.0,1.5,2.0")
    p.add_argument("--sigma", type=parse_list, default="0.28")
    p.add_argument("--theta", type=parse_list, default="0")
    p.add_argument("--nqcp", type=parse_int_list, default="1,2,4")
    p.add_argument(
        "--phase-model",
        choices=montecarlo.PHASE_MODELS,
        default="bandlimited",
        help="MC phase model (held = perfectly correlated limit)",
    )
    p.add_argument("--uproduct", action="store_true")
    _state_flags(p)
    _mc_flags(p)
    _common(p)
    p.set_defaults(param="q_threshold")

    p = sub.add_parser("tradeoff", help="output variance versus success probability")
    p.add_argument(
        "--grid", type=linspace_spec, default="0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        help="target success probabilities",
    )
    p.add_argument("--sigma", type=parse_list, default=DEFAULT_SIGMAS)
    p.add_argument("--theta", type=parse_list, default=DEFAULT_THETAS)
    p.add_argument("--nqcp", type=int, default=1)
    _state_flags(p)
    _mc_flags(p)
    _common(p)

    p = sub.add_parser("povm", help="Fock-diagonal coefficients of the threshold POVM")
    p.add_argument("--q", type=parse_number, default=str(DEFAULT_Q))
    p.add_argument("--n-max", type=int, default=20)
    _common(p)

    p = sub.add_parser("postprocess", help="condition a recorded series file")
    p.add_argument("file")
    p.add_argument("--q", type=parse_number, default=None, help=f"threshold (default {DEFAULT_Q}; 'inf' = none)")
    p.add_argument("--nqcp", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.add_argument("--bootstrap", type=int, default=montecarlo.DEFAULT_BOOTSTRAP)
    _common(p)

    p = sub.add_parser("gen-series", help="export a simulated two-detector time series")
    p.add_argument("--sigma", type=parse_number, default=0.28)
    p.add_argument("--theta", type=parse_number, default=0.0)
    p.add_argument("--psi", type=parse_number, default=0.0, help="verified quadrature angle")
    p.add_argument("--trials", type=int, default=100_000, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phase-model", choices=("iid", "bandlimited"), default="bandlimited")
    p.add_argument("--sample-rate", type=parse_number, default=100e3)
    p.add_argument("--band", type=parse_list, default="1000,5000", help="pass band low,high in Hz")
    p.add_argument(
        "--raw-variance", type=parse_number, default=1.0,
        help="stamp this vacuum variance and scale values into raw units",
    )
    _state_flags(p)
    _common(p)
    return parser


# -- commands ---------------------------------------------------------------


def _baseline(args) -> ProtocolParams:
    return ProtocolParams(state=SqueezedModeParams(args.vx, args.vp), eta=args.eta)


def _header(args, extra: dict | None = None) -> dict:
    skip = {"config", "out", "verbose", "func", "jobs"}
    head = {"tool": f"phasedistill {__version__}"}
    for key, value in sorted(vars(args).items()):
        if key in skip or value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in value)
        head[key] = value
    head.update(extra or {})
    return head


def _validate_mc(args):
    if args.engine != "analytic":
        if args.trials < 1:
            raise UsageError(f"--trials must be >= 1 for Monte Carlo, got {args.trials}")
        if args.shards < 1 or args.shards > args.trials:
            raise UsageError(f"--shards must lie in [1, trials], got {args.shards}")
    if args.check and args.engine != "both":
        raise UsageError("--check needs --engine both")


def cmd_sweep(args, out) -> int:
    _validate_mc(args)
    axes = {}
    for flag, name in (("sigma", "sigma"), ("q", "q_threshold"), ("theta", "theta"), ("nqcp", "n_qcp")):
        if name != args.param and getattr(args, flag, None) is not None:
            axes[name] = getattr(args, flag)
    try:
        spec = SweepSpec(
            param=args.param,
            grid=tuple(int(g) for g in args.grid) if args.param == "n_qcp" else args.grid,
            baseline=_baseline(args),
            engine=args.engine,
            axes=axes,
            n_trials=args.trials,
            seed=args.seed,
            phase_model=args.phase_model,
            uproduct=args.uproduct,
            shards=args.shards,
            jobs=args.jobs,
        )
        spec.points()  # every point validates before any computation starts
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = sweep(spec)
    write_table(rows, spec.columns(), out, _header(args))
    return _check(args, rows)


def _check(args, rows) -> int:
    if getattr(args, "check", False):
        bad = self_check_failures(rows)
        if bad:
            print(
                f"phasedistill: self-check failed at {len(bad)} of {len(rows)} rows (|z| > 3)",
                file=sys.stderr,
            )
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_tradeoff(args, out) -> int:
    _validate_mc(args)
    base = _baseline(args)
    try:
        base = replace(base, n_qcp=args.nqcp)
        for p in args.grid:
            if not 0 < p < 1:
                raise ValueError(f"target success probability must lie in (0, 1), got {p}")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = []
    columns = ["sigma", "theta", "n_qcp", "p_target", "q_threshold"]
    for sigma in args.sigma:
        for theta in args.theta:
            params = replace(base, sigma=sigma, theta=theta)
            for target in args.grid:
                try:
                    q = analytics.threshold_for_success(params, target)
                except NumericalConvergenceError as exc:
                    raise NumericalConvergenceError(
                        f"at sigma={sigma:g}, theta={theta:g}, p={target:g}: {exc}"
                    ) from exc
                spec = SweepSpec(
                    "q_threshold", (q,), replace(params, q_threshold=q), args.engine,
                    n_trials=args.trials, seed=args.seed, shards=args.shards,
                )
                row = sweep(spec)[0]
                row.update(p_target=target)
                rows.append(row)
    rest = [c for c in spec.columns() if c not in columns]
    # success probability ahead of variance: this table is read as V(P)
    rest = [c for c in ("p_success", "v_out", "v_in") if c in rest] + [
        c for c in rest if c not in ("p_success", "v_out", "v_in")
    ]
    write_table(rows, columns + rest, out, _header(args))
    return _check(args, rows)


def cmd_povm(args, out) -> int:
    if not args.q > 0:
        raise UsageError(f"--q must be > 0, got {args.q}")
    if args.n_max < 0:
        raise UsageError(f"--n-max must be >= 0, got {args.n_max}")
    coeffs = analytics.povm_coefficients(args.q, args.n_max)
    head = _header(
        args,
        {"units": "x scaled so the vacuum variance is 1/2 (Q_here = Q_shotnoise / sqrt(2))"},
    )
    write_table([{"n": n, "P_n": float(p)} for n, p in enumerate(coeffs)], ["n", "P_n"], out, head)
    return EXIT_OK


def cmd_postprocess(args, out) -> int:
    q_default = args.q is None
    q = DEFAULT_Q if q_default else args.q
    if not q > 0:
        raise UsageError(f"--q must be > 0, got {q}")
    if args.nqcp < 1:
        raise UsageError(f"--nqcp must be >= 1, got {args.nqcp}")
    series, meta = timeseries_io.load_series(args.file)
    series = timeseries_io.calibrate(series, meta)
    if len(series) < args.nqcp:
        raise timeseries_io.SeriesFormatError(
            f"series has {len(series)} samples, fewer than --nqcp {args.nqcp}", 0, args.file
        )
    _, est = timeseries_io.condition_series(
        series, q, args.nqcp, seed=args.seed, n_bootstrap=args.bootstrap
    )
    head = _header(args, {"q": f"{q:g}" + (" (default)" if q_default else "")})
    head.update(
        sample_rate_hz=meta.sample_rate,
        trigger_angle_rad=meta.trigger_angle,
        verify_angle_rad=meta.verify_angle,
        shot_noise_variance_raw=meta.shot_noise_variance_raw,
        units="shot noise",
    )
    row = {
        "n_candidates": est.n_trials,
        "n_accepted": est.n_accepted,
        "p_hat": est.p_hat,
        "se_p": est.se_p,
        "v_out_hat": est.v_out_hat,
        "se_v": est.se_v,
    }
    write_table([row], list(row), out, head)
    if est.is_empty:
        log.warning("no sample passed the trigger condition")
    return EXIT_OK


def cmd_gen_series(args, out) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    if len(args.band) != 2:
        raise UsageError("--band takes exactly two values: low,high")
    try:
        params = replace(_baseline(args), sigma=args.sigma, theta=args.theta)
        process = PhaseProcessConfig(
            sample_rate=args.sample_rate, band_low=args.band[0], band_high=args.band[1]
        )
        meta = timeseries_io.SeriesMetadata(
            sample_rate=args.sample_rate,
            trigger_angle=args.theta,
            verify_angle=args.psi,
            shot_noise_variance_raw=args.raw_variance,
            description=(
                f"simulated vx={args.vx:g} vp={args.vp:g} eta={args.eta:g} sigma={args.sigma:g} "
                f"phase_model={args.phase_model} seed={args.seed}"
            ),
        )
        cfg = SimulationConfig(
            params, n_trials=args.trials, phase_model=args.phase_model, process=process,
            seed=args.seed, psi=args.psi,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    q1, q2 = montecarlo.simulate_stream(cfg)
    scale = math.sqrt(args.raw_variance)
    series = timeseries_io.QuadratureSeries.from_arrays(q1 * scale, q2 * scale)
    timeseries_io.write_series(series, meta, out)
    return EXIT_OK


COMMANDS = {
    "sweep-sigma": cmd_sweep,
    "sweep-threshold": cmd_sweep,
    "sweep-theta": cmd_sweep,
    "qcp": cmd_sweep,
    "tradeoff": cmd_tradeoff,
    "povm": cmd_povm,
    "postprocess": cmd_postprocess,
    "gen-series": cmd_gen_series,
}


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {', '.join(unknown)}")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:
        # argparse exits for --help, --version and bad flags
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"phasedistill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"phasedistill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(levelname)s: %(message)s",
    )
    try:
        with _output(args) as out:
            return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"phasedistill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except timeseries_io.SeriesFormatError as exc:
        print(f"phasedistill: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"phasedistill: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SweepPointError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, NumericalConvergenceError) else EXIT_USAGE
        print(f"phasedistill: error: {exc}", file=sys.stderr)
        return code
    except NumericalConvergenceError as exc:
        print(f"phasedistill: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


@contextlib.contextmanager
def _output(args):
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
    else:
        yield sys.stdout


if __name__ == "__main__":
    sys.exit(main())
