"""Command-line entry point ``cpgf``.

Exit codes: 0 on success, 1 on a module error, 2 on a usage error and 3
when ``pareto``, ``compare`` or ``oracle-check`` runs cleanly but the check fails.

The thread count of the linear-algebra backend can be set with the
``CPGF_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys

EXIT_MODULE_ERROR = 1
EXIT_USAGE = 2
EXIT_CHECK_FAILED = 3


class UsageError(Exception):
    pass


def _apply_thread_env() -> None:
    n = os.environ.get("CPGF_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _window(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("a window is 'start,end'")
    return vals[0], vals[1]


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpgf", description=(
        "Loss expansion, closed forms and simulation of gradient flow on CP decompositions."))
    ap.add_argument("--timestamp", choices=("off", "on"), default="off",
                    help="prefix outputs with a '# generated' line")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_args(p, concrete=False):
        p.add_argument("--nu", type=int, required=True)
        p.add_argument("--scenario", choices=("sym", "asym"), required=True)
        if concrete:
            p.add_argument("--p", type=int, required=True)
            p.add_argument("--H", type=int, required=True)

    p = sub.add_parser("expand", help="exact loss-expansion table Y_0..Y_smax")
    model_args(p)
    p.add_argument("--smax", type=int)
    p.add_argument("--zero-target", action="store_true")
    p.add_argument("--dump-diagrams", action="store_true",
                   help="also print the merged diagram sums")
    p.add_argument("--out")

    p = sub.add_parser("pareto", help="Pareto fronts and polygon summary")
    model_args(p)
    p.add_argument("--smax", type=int)
    p.add_argument("--out")

    p = sub.add_parser("classify", help="learning regime of a power-law scaling")
    model_args(p)
    p.add_argument("--alpha", type=_floats, required=True, help="alpha_p,alpha_H,alpha_sigma")
    p.add_argument("--out")

    p = sub.add_parser("theory", help="closed-form loss curves as CSV")
    p.add_argument("which", nargs="?", choices=("free-under", "free-over", "sym2", "ntk", "nu4"))
    p.add_argument("--which", dest="which_opt", choices=("free-under", "free-over", "sym2", "ntk", "nu4"))
    p.add_argument("--nu", type=int, default=2)
    p.add_argument("--scenario", choices=("sym", "asym"), default="asym")
    p.add_argument("--p", type=float)
    p.add_argument("--H", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--psigma2", type=float, help="p sigma^2, alternative to --sigma")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--eta", type=float, help="rate of the ntk curve")
    p.add_argument("--t-start", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--n-points", type=int, default=101)
    p.add_argument("--boundary", action="store_true", help="nu4: rho*(theta) as CSV")
    p.add_argument("--thetas", type=_floats, help="nu4 --boundary: theta values")
    p.add_argument("--out")

    p = sub.add_parser("simulate", help="Monte-Carlo gradient flow")
    p.add_argument("--config", required=True, help="JSON file mirroring SimConfig")
    p.add_argument("--out")

    p = sub.add_parser("compare", help="theory versus simulation report")
    p.add_argument("--theory", required=True, choices=("free-under", "free-over", "sym2", "nu4"))
    p.add_argument("--config", required=True)
    p.add_argument("--sim-csv", help="reuse a trajectory written by 'simulate'")
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--abs-floor", type=float, default=0.0)
    p.add_argument("--window", type=_window)
    p.add_argument("--fit", choices=("powerlaw", "exponential"))
    p.add_argument("--out")

    p = sub.add_parser("oracle-check", help="engine versus brute-force oracle")
    model_args(p, concrete=True)
    p.add_argument("--smax", type=int, default=2)
    p.add_argument("--zero-target", action="store_true")
    p.add_argument("--out")
    return ap


def _emit(text: str, out: str | None, timestamp: str) -> None:
    if timestamp == "on":
        text = f"# generated {datetime.datetime.now(datetime.timezone.utc).isoformat()}\n" + text
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_expand(args) -> tuple[str, int]:
    from cpgf.config import ModelConfig
    from cpgf.series import compute_series

    table = compute_series(ModelConfig(args.nu, args.scenario), args.smax,
                           zero_target=args.zero_target, keep_sums=args.dump_diagrams)
    text = table.dump()
    if args.dump_diagrams:
        for s, S in enumerate(table.sums):
            text += f"# diagrams s={s}\n" + S.dump() + "\n"
    return text, 0


def cmd_pareto(args) -> tuple[str, int]:
    from cpgf.config import ModelConfig
    from cpgf.pareto import compare_front, pareto_front, planarity_check, plane_normal
    from cpgf.series import compute_series

    table = compute_series(ModelConfig(args.nu, args.scenario), args.smax)
    lines = []
    fronts = {}
    ok = True
    for s, row in enumerate(table.rows):
        front = pareto_front(row, args.nu, s)
        fronts[s] = front
        cmp = compare_front(row, args.nu, args.scenario, s)
        ok &= cmp.ok
        lines.append(f"# s={s} front ({'matches' if cmp.ok else 'differs from'} prediction)")
        lines.append("q n l s_D coeff")
        for term in front:
            lines.append(f"{term.q} {term.n} {term.l} {term.s_D} {row[(term.q, term.n, term.l)]}")
        if not cmp.ok:
            lines.append(f"# missing={sorted(cmp.missing)} unexpected={sorted(cmp.unexpected)} "
                         f"cancelled={sorted(cmp.cancelled)}")
    rep = planarity_check(fronts, args.nu, args.scenario)
    normal = ",".join(str(x) for x in plane_normal(args.nu, args.scenario))
    lines.append(f"# polygon: normal=({normal}) residual={rep.residual} planar={'yes' if rep.ok else 'no'}")
    return "\n".join(lines) + "\n", 0 if ok and rep.ok else EXIT_CHECK_FAILED


def cmd_classify(args) -> tuple[str, int]:
    from cpgf.pareto import classify_regime

    if len(args.alpha) != 3:
        raise UsageError("--alpha takes three numbers: alpha_p,alpha_H,alpha_sigma")
    return classify_regime(tuple(args.alpha), args.nu, args.scenario).report() + "\n", 0


def _time_grid(args, default_start, default_end):
    import numpy as np

    start = default_start if args.t_start is None else args.t_start
    end = default_end if args.t_end is None else args.t_end
    if args.n_points < 1:
        raise UsageError("--n-points must be positive")
    return np.linspace(start, end, args.n_points)


def _sigma(args):
    if args.sigma is not None:
        return args.sigma
    if args.psigma2 is not None:
        if args.p is None:
            raise UsageError("--psigma2 needs --p")
        return (args.psigma2 / args.p) ** 0.5
    raise UsageError("give --sigma or --psigma2")


def _csv(header, columns) -> str:
    from cpgf.simulator import format_float

    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def cmd_theory(args) -> tuple[str, int]:
    from cpgf import closed_forms as cf
    from cpgf.config import ModelConfig

    which = args.which or args.which_opt
    if which is None:
        raise UsageError("choose a curve: free-under, free-over, sym2, ntk or nu4")
    if which == "ntk":
        if args.eta is None:
            raise UsageError("ntk needs --eta")
        t = _time_grid(args, 0.0, 5.0 / args.eta)
        return _csv(["t", "value", "offdiag"], [t, cf.ntk_entry(args.eta, t), cf.ntk_entry(args.eta, t, False)]), 0
    if which == "nu4" and args.boundary:
        thetas = args.thetas or [1 + 0.5 * k for k in range(19)]
        return _csv(["theta", "rho_star"], [thetas, cf.nu4_boundary(thetas)]), 0
    if args.p is None:
        raise UsageError(f"{which} needs --p")
    sigma = _sigma(args)
    if which in ("free-under", "free-over"):
        regime = which.split("-")[1]
        H = None if args.H is None else int(args.H)
        cfg = ModelConfig(args.nu, args.scenario, int(args.p), H, sigma, args.T)
        c = cf.free_rate(regime, cfg)
        t = _time_grid(args, 0.0, 10.0 / c)
        return _csv(["t", "value"], [t, cf.free_loss(regime, cfg, t)]), 0
    if args.H is None:
        raise UsageError(f"{which} needs --H")
    if which == "sym2":
        t = _time_grid(args, 0.0, 3.0 * args.T)
        return _csv(["t", "value"], [t, cf.sym2_loss(args.p, args.H, sigma, args.T, t)]), 0
    t = _time_grid(args, 0.0, -10.0 * args.T)
    tr = cf.nu4_loss(args.p, args.H, sigma, args.T, t)
    text = _csv(["t", "value", "g", "phi", "psi", "residual"], [tr.t, tr.loss, tr.g, tr.phi, tr.psi, tr.residual])
    if tr.tau_crit is not None:
        text += f"# blow-up at t={tr.tau_crit!r}\n"
    return text, 0


def _theory_for(kind: str, sim, t):
    from cpgf import closed_forms as cf

    cfg = sim.model
    if kind in ("free-under", "free-over"):
        regime = kind.split("-")[1]
        return cf.free_initial_loss(regime, cfg) * cf.free_loss(regime, cfg, t), t
    if kind == "sym2":
        return cf.sym2_loss(cfg.p, cfg.H, cfg.sigma, cfg.T, t), t
    tr = cf.nu4_loss(cfg.p, cfg.H, cfg.sigma, cfg.T, t)
    return tr.loss, tr.t


def _read_trajectory_csv(path):
    import numpy as np

    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=(0, 1, 2), comments="#", ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def cmd_simulate(args) -> tuple[str, int]:
    from cpgf.simulator import SimConfig, monte_carlo

    with open(args.config, encoding="utf-8") as fh:
        sim = SimConfig.from_json(fh.read())
    return monte_carlo(sim).to_csv(), 0


def cmd_compare(args) -> tuple[str, int]:
    from cpgf.compare import compare_curves, fit_exponential, fit_powerlaw
    from cpgf.simulator import SimConfig, monte_carlo

    with open(args.config, encoding="utf-8") as fh:
        sim = SimConfig.from_json(fh.read())
    if args.sim_csv:
        t_sim, mean, err = _read_trajectory_csv(args.sim_csv)
    else:
        tr = monte_carlo(sim)
        t_sim, mean, err = tr.times, tr.loss_mean, tr.loss_stderr
    theory, t = _theory_for(args.theory, sim, t_sim)
    report = compare_curves(t, theory, t_sim, mean, err, args.tol, args.window, args.abs_floor)
    if args.fit:
        w = report.in_window
        fit = fit_powerlaw if args.fit == "powerlaw" else fit_exponential
        key = "exponent" if args.fit == "powerlaw" else "rate"
        report.fit[f"sim_{key}"] = fit(report.t[w], report.mean[w])
        report.fit[f"theory_{key}"] = fit(report.t[w], report.theory[w])
    return report.to_csv(), 0 if report.passed else EXIT_CHECK_FAILED


def cmd_oracle_check(args) -> tuple[str, int]:
    from cpgf.config import ModelConfig
    from cpgf.oracle import oracle_Ys
    from cpgf.series import compute_series

    cfg = ModelConfig(args.nu, args.scenario, args.p, args.H)
    table = compute_series(cfg, args.smax, zero_target=args.zero_target)
    lines = ["s,engine_equals_oracle"]
    ok = True
    for s in range(args.smax + 1):
        engine = {l: c for l, c in table.rows[s].in_sigma2(args.p, args.H).items() if c}
        oracle = oracle_Ys(cfg, s, zero_target=args.zero_target)
        same = engine == oracle
        ok &= same
        lines.append(f"{s},{'yes' if same else 'no'}")
    return "\n".join(lines) + "\n", 0 if ok else EXIT_CHECK_FAILED


COMMANDS = {
    "expand": cmd_expand,
    "pareto": cmd_pareto,
    "classify": cmd_classify,
    "theory": cmd_theory,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    _apply_thread_env()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    from cpgf.errors import CpgfError

    try:
        text, code = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CpgfError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODULE_ERROR
    _emit(text, getattr(args, "out", None), args.timestamp)
    return code


if __name__ == "__main__":
    sys.exit(main())
