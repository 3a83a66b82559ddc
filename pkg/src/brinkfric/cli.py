"""Batch driver: ``brinkfric run|steady|verify|sweep <config>``.

Exit codes: 0 clean, 1 configuration or I/O error, 2 solver flags (run,
steady) or failed checks (verify, sweep).
"""
import argparse
import csv
from concurrent.futures import ProcessPoolExecutor
import logging
import math
import os
import sys

import numpy as np

from . import analysis, friction
from .config import ConfigError, load_config, parse_config
from .core import ForcingSpec, InitSpec, State, build_grid, make_initial, make_partition
from .operators import compute_lambda_min, get_ops, trace_tangential
from .steady import SteadyConfig, solve_steady, steady_oracle
from .transient import Problem, StepConfig, run_transient

__all__ = ["main", "write_csv", "emit_svg", "cmd_run", "cmd_steady", "cmd_verify", "cmd_sweep",
           "run_verification", "thread_cap"]

log = logging.getLogger("brinkfric")

TRAJECTORY_COLUMNS = ["t", "l2_u", "h1_u", "lp_u_alpha2", "l2_p", "max_div", "picard_iters", "uzawa_iters"]
LEDGER_COLUMNS = ["t", "ddt_kinetic", "grad", "darcy", "forch", "friction", "source", "slack"]


# --- output ---------------------------------------------------------------

def _fmt(x, precision):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.{precision}g}"
    return str(x)


def write_csv(header, rows, path, precision=17):
    """Header plus rows, numbers at ``precision`` significant digits."""
    rows = list(rows)
    if not rows:
        raise ValueError("table is empty")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            if len(r) != len(header):
                raise ValueError("row length does not match header")
            w.writerow([_fmt(x, precision) for x in r])


def emit_svg(series, path, log_y=False, title="", width=640, height=400):
    """Standalone line plot, one ``<polyline>`` per entry of ``series``.

    ``series`` is a list of ``(label, x, y)``. With ``log_y`` nonpositive
    values are dropped.
    """
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    pad_l, pad_r, pad_t, pad_b = 70, 20, 30, 40
    clean = []
    for label, x, y in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        if log_y:
            keep &= y > 0
        x, y = x[keep], y[keep]
        clean.append((label, x, np.log10(y) if log_y else y))
    xs = np.concatenate([c[1] for c in clean]) if clean else np.zeros(0)
    ys = np.concatenate([c[2] for c in clean]) if clean else np.zeros(0)
    if xs.size == 0:
        xs = ys = np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(v):
        return pad_l + (v - x0) / (x1 - x0) * pw

    def py(v):
        return pad_t + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    ylab = (lambda v: f"1e{v:.2g}") if log_y else (lambda v: f"{v:.3g}")
    out.append(f'<text x="{pad_l - 5}" y="{pad_t + 10}" text-anchor="end" font-size="11">{ylab(y1)}</text>')
    out.append(f'<text x="{pad_l - 5}" y="{pad_t + ph}" text-anchor="end" font-size="11">{ylab(y0)}</text>')
    out.append(f'<text x="{pad_l}" y="{height - 20}" text-anchor="middle" font-size="11">{x0:.3g}</text>')
    out.append(f'<text x="{pad_l + pw}" y="{height - 20}" text-anchor="middle" font-size="11">{x1:.3g}</text>')
    for k, (label, x, y) in enumerate(clean):
        color = palette[k % len(palette)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pad_l + 10}" y="{pad_t + 16 + 14 * k}" font-size="11" fill="{color}">{_esc(label)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _prepare_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path!r} is not writable")


# --- run ------------------------------------------------------------------

def trajectory_table(traj):
    ops = get_ops(traj.problem.grid)
    pr = traj.problem.params
    area = traj.problem.grid.cell_area
    rows = []
    for n, s in enumerate(traj.states):
        info = s.info or {}
        rows.append([
            s.t,
            math.sqrt(max(ops.inner(s.u, s.u), 0.0)),
            math.sqrt(max(ops.grad_norm_sq(s.u), 0.0)),
            ops.lp_norm(s.u, pr.alpha + 2.0),
            math.sqrt(area * float(s.p @ s.p)),
            float(np.abs(ops.div @ s.u).max()),
            int(info.get("picard_iters", 0)),
            int(info.get("uzawa_iters", 0)),
        ])
    return rows


def ledger_table(traj):
    return [[e.t, e.ddt_kinetic, e.grad, e.darcy, e.forch, e.friction, e.source, e.slack] for e in traj.ledger]


def cmd_run(cfg):
    out = cfg.output
    try:
        _prepare_dir(out.directory)
        traj = run_transient(cfg.initial_state(), cfg.problem, cfg.stepping)
        write_csv(TRAJECTORY_COLUMNS, trajectory_table(traj), os.path.join(out.directory, "trajectory.csv"),
                  out.precision)
        write_csv(LEDGER_COLUMNS, ledger_table(traj), os.path.join(out.directory, "ledger.csv"), out.precision)
        if out.emit_svg:
            t = traj.times
            kin = [get_ops(cfg.grid).inner(s.u, s.u) for s in traj.states]
            emit_svg([("kinetic |u|^2", t, kin)], os.path.join(out.directory, "energy.svg"),
                     title="kinetic energy")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not traj.ok:
        print(f"solver flags on {sum(traj.flags)} of {len(traj.flags)} steps", file=sys.stderr)
        return 2
    return 0


def cmd_steady(cfg):
    out = cfg.output
    if cfg.forcing.time_dependent:
        print("error: steady problem needs time-independent forcing", file=sys.stderr)
        return 1
    st = cfg.stepping
    scfg = SteadyConfig(st.picard_tol, st.picard_max, st.uzawa_tol, st.uzawa_max, st.predictor)
    try:
        _prepare_dir(out.directory)
        part = cfg.partition
        sol = solve_steady(cfg.params, cfg.forcing, cfg.grid, part, scfg)
        ops = get_ops(cfg.grid)
        pr = cfg.params
        area = cfg.grid.cell_area
        info = sol.info
        summary = [[
            math.sqrt(ops.inner(sol.u, sol.u)),
            math.sqrt(max(ops.grad_norm_sq(sol.u), 0.0)),
            ops.lp_norm(sol.u, pr.alpha + 2.0),
            math.sqrt(area * float(sol.p @ sol.p)),
            info["max_div"], info["picard_iters"], info["picard_diff"], bool(info["converged"]),
        ]]
        write_csv(["l2_u", "h1_u", "lp_u_alpha2", "l2_p", "max_div", "picard_iters", "picard_diff", "converged"],
                  summary, os.path.join(out.directory, "steady.csv"), out.precision)
        tau, w = trace_tangential(sol.u, cfg.grid, part)
        fa = friction.assemble_friction(part)
        lam = friction.eval_K_eps(tau, fa, pr.eps) if not part.frictionless else np.zeros_like(tau)
        slip = np.abs(lam) >= fa.g * (1.0 - friction.TOL_ACTIVE)
        nx = cfg.grid.nx
        x = (np.arange(nx) + 0.5) * cfg.grid.dx
        rows = []
        for k in range(2 * nx):
            rows.append([x[k % nx], "bottom" if k < nx else "top", tau[k], lam[k], fa.g[k],
                         "frictionless" if part.frictionless else ("slip" if slip[k] else "stick")])
        write_csv(["x", "wall", "u_tau", "lambda", "g", "class"], rows,
                  os.path.join(out.directory, "slip.csv"), out.precision)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if sol.info["converged"] else 2


# --- verify ---------------------------------------------------------------

def _capped(stepping, n_max=100):
    n = min(stepping.n_steps, n_max)
    return StepConfig(dt=stepping.dt, t_end=n * stepping.dt, picard_tol=stepping.picard_tol,
                      picard_max=stepping.picard_max, uzawa_tol=stepping.uzawa_tol,
                      uzawa_max=stepping.uzawa_max, lag_mode=stepping.lag_mode, predictor=stepping.predictor)


def _with_dt(stepping, dt, n):
    return StepConfig(dt=dt, t_end=n * dt, picard_tol=stepping.picard_tol, picard_max=stepping.picard_max,
                      uzawa_tol=stepping.uzawa_tol, uzawa_max=stepping.uzawa_max,
                      lag_mode=stepping.lag_mode, predictor=stepping.predictor)


def _steady_config(stepping):
    return SteadyConfig(stepping.picard_tol, stepping.picard_max, stepping.uzawa_tol, stepping.uzawa_max,
                        stepping.predictor)


def _perturbed_forcing(f):
    if f.preset == "zero":
        return ForcingSpec("sine-y", 0.1)
    return ForcingSpec(f.preset, f.amplitude * 1.1 if f.amplitude else 0.1, f.amplitude_y, f.rate)


def run_verification(cfg):
    """Every certified check the config supports, in a fixed order."""
    grid, pr, prob = cfg.grid, cfg.params, cfg.problem
    part = prob.partition
    st = cfg.stepping
    ops = get_ops(grid)
    # the hash covers the problem, not where the files land
    inputs = sorted((k, v) for k, v in cfg.values.items() if not k.startswith("output."))
    rep = analysis.CertReport(analysis.inputs_hash(inputs))
    init = cfg.initial_state()

    def add_all(sub, prefix=""):
        for r in sub.rows:
            rep.rows.append(analysis.CheckRow(prefix + r.name, r.status, r.slack, r.tolerance, r.detail))

    # main run: ledger, u' bound, divergence
    traj = run_transient(init, prob, st)
    n_flag = sum(traj.flags)
    rep.add("run_converged", 0.0 - n_flag, 0.0, f"{n_flag} flagged steps" if n_flag else "")
    max_div = max(float(np.abs(ops.div @ s.u).max()) for s in traj.states[1:])
    rep.add("max_div", (st.uzawa_tol - max_div) / st.uzawa_tol, 0.0, f"max_div={max_div:.3e}")
    add_all(analysis.check_energy_ledger(traj))
    add_all(analysis.check_uprime_bound(traj))

    # operators and the Stokes eigenvalue
    lam = compute_lambda_min(grid)
    add_all(analysis.check_operator_algebra(grid, lam=lam.value))
    other = (2 * grid.nx, 2 * grid.ny) if 4 * grid.n_cells <= 64 * 64 else (grid.nx // 2, grid.ny // 2)
    lam2 = compute_lambda_min(build_grid(other[0], other[1], grid.lx, grid.ly)).value
    rel = abs(lam2 - lam.value) / max(lam.value, lam2)
    rep.add("lambda_refinement", 0.05 - rel, 0.0, f"lambda={lam.value:.10g} vs {lam2:.10g} on {other[0]}x{other[1]}")

    # backward Euler eigen decay with f = 0, g = 0, b = 0
    eprob = Problem(grid, make_partition(grid, 0.0), pr.replace(b=0.0), ForcingSpec("zero"))
    etraj = run_transient(make_initial(InitSpec("eigenmode", 1.0), grid), eprob, _with_dt(st, st.dt, 50))
    add_all(analysis.check_eigen_decay(etraj, lam.value))

    # stationary problem: oracle cross-check on 8x8, decay toward the steady state
    scfg = _steady_config(st)
    if cfg.forcing.time_dependent:
        rep.add("steady_oracle", 0.0, 0.0, status="skipped: time-dependent forcing")
        rep.add("decay_rate", 0.0, 0.0, status="skipped: time-dependent forcing")
        steady = None
    else:
        g8 = build_grid(8, 8, grid.lx, grid.ly)
        p8 = make_partition(g8, cfg.g)
        s8 = solve_steady(pr, cfg.forcing, g8, p8, scfg)
        oracle_tol = st.picard_tol * pr.a
        orc = steady_oracle(pr, cfg.forcing, g8, p8, oracle_tol)
        o8 = get_ops(g8)
        d = math.sqrt(o8.inner(s8.u - orc.u, s8.u - orc.u))
        tol = 10.0 * max(st.picard_tol, oracle_tol)
        ok = s8.info["converged"] and orc.converged
        rep.add("steady_oracle", (tol - d) / tol if ok else -1.0, 0.0,
                f"L2 diff={d:.3e} oracle iters={orc.iterations} converged={orc.converged}")
        steady = solve_steady(pr, cfg.forcing, grid, part, scfg)
        rep.add("steady_converged", 0.0 if steady.info["converged"] else -1.0, 0.0)
        n_dec = 1000
        dt_dec = max(st.dt, 3.0 / (pr.a * n_dec))
        n_dec = int(math.ceil(3.0 / (pr.a * dt_dec)))
        dtraj = run_transient(init, prob, _with_dt(st, dt_dec, n_dec))
        try:
            sub, _ = analysis.check_decay(dtraj, steady, lam=lam.value)
            add_all(sub)
        except ValueError as exc:
            rep.add("decay_rate", -1.0, 0.0, str(exc))

    # continuous dependence on u0 and f, continuity in b and nu
    short = _capped(st)
    base = run_transient(init, prob, short)
    mode = make_initial(InitSpec("eigenmode", 1e-3), grid)
    r_u0 = run_transient(State(init.u + mode.u, init.p), prob, short)
    add_all(analysis.structural_stability(base, r_u0, "u0"))
    r_f = run_transient(init, Problem(grid, part, pr, _perturbed_forcing(cfg.forcing)), short)
    add_all(analysis.structural_stability(base, r_f, "f"))
    for name in ("b", "nu"):
        v = getattr(pr, name)
        steps = (v * 1e-2, v * 2e-2) if v > 0 else (1e-2, 2e-2)
        runs = [run_transient(init, Problem(grid, part, pr.replace(**{name: v + s}), cfg.forcing), short)
                for s in steps]
        if not np.any(base.states[-1].u) and not any(np.any(r.states[-1].u) for r in runs):
            rep.add(f"order_{name}", 0.0, 0.0, status="skipped: zero solution")
            continue
        add_all(analysis.structural_stability(base, runs[0], name, run3=runs[1]))

    # threshold law on the steady state, plus stick and slip probes
    if part.frictionless:
        for name in ("slip_trichotomy", "stick_probe", "slip_probe"):
            rep.add(name, 0.0, 0.0, status=analysis.FRICTIONLESS)
    elif steady is None:
        rep.add("slip_trichotomy", 0.0, 0.0, status="skipped: time-dependent forcing")
    else:
        sub, _ = analysis.check_slip(steady, prob)
        add_all(sub)
        g0 = max(float(np.max(part.g_values)), 0.1)
        stick_rep = None
        for k in range(8):
            gp = make_partition(grid, g0 * 4.0 ** k)
            sol = solve_steady(pr, cfg.forcing, grid, gp, scfg)
            stick_rep, _ = analysis.check_slip(sol, Problem(grid, gp, pr, cfg.forcing), expect="stick")
            if stick_rep.ok:
                break
        add_all(stick_rep, "probe_")
        gp = make_partition(grid, np.asarray(part.g_values) / 100.0)
        sol = solve_steady(pr, cfg.forcing, grid, gp, scfg)
        slip_rep, _ = analysis.check_slip(sol, Problem(grid, gp, pr, cfg.forcing), expect="slip")
        if any(r.detail.startswith("no slipping face") for r in slip_rep.rows):
            rep.add("probe_slip_direction", 0.0, 0.0, status="skipped: no face reaches 100 eps")
            add_all(analysis.CertReport(rows=[r for r in slip_rep.rows if r.name == "slip_bound"]), "probe_")
        else:
            add_all(slip_rep, "probe_")

    # eps schedule
    sub, _ = analysis.eps_convergence_study(prob, init, short)
    add_all(sub)
    return rep


def cmd_verify(cfg):
    out = cfg.output
    try:
        _prepare_dir(out.directory)
        rep = run_verification(cfg)
        head, body = rep.table()
        write_csv(head, body, os.path.join(out.directory, "cert_report.csv"), out.precision)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failed = rep.failed()
    for r in failed:
        print(f"FAILED {r.name}: slack {r.slack:.3e} tolerance {r.tolerance:.1e} {r.detail}", file=sys.stderr)
    return 0 if not failed else 2


# --- sweep ----------------------------------------------------------------

def thread_cap(env=None):
    env = os.environ if env is None else env
    raw = env.get("BRINKFRIC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BRINKFRIC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("BRINKFRIC_THREADS must be >= 1")
    return n


def _sweep_member(args):
    text, overrides, directory = args
    cfg = parse_config(text, dict(overrides, **{"output.directory": directory}))
    return cmd_run(cfg)


def cmd_sweep(text, vary, base_dir=None):
    """Run the config once per value of ``vary = (key, [values])``.

    Member outputs go to ``<output.directory>/run_000`` and so on; a
    ``sweep.csv`` table lists the members and their exit codes.
    """
    key, values = vary
    cfg = parse_config(text)
    base_dir = base_dir or cfg.output.directory
    jobs = []
    for k, v in enumerate(values):
        parse_config(text, {key: v})  # validate every member up front
        jobs.append((text, {key: v}, os.path.join(base_dir, f"run_{k:03d}")))
    try:
        _prepare_dir(base_dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    n = min(thread_cap(), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            codes = list(pool.map(_sweep_member, jobs))
    else:
        codes = [_sweep_member(j) for j in jobs]
    rows = [[k, key, v, c] for k, (v, c) in enumerate(zip(values, codes))]
    try:
        write_csv(["run", "key", "value", "exit_code"], rows, os.path.join(base_dir, "sweep.csv"))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return max(codes)


def _parse_vary(spec):
    if "=" not in spec:
        raise ConfigError(f"--vary expects key=v1,v2,..., got {spec!r}")
    key, vals = spec.split("=", 1)
    values = [v.strip() for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError("--vary needs at least one value")
    return key.strip(), values


def main(argv=None):
    ap = argparse.ArgumentParser(prog="brinkfric", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "steady", "verify"):
        p = sub.add_parser(name)
        p.add_argument("config")
    p = sub.add_parser("sweep")
    p.add_argument("config")
    p.add_argument("--vary", required=True, help="key=v1,v2,... with key like params.b")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sweep":
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
            return cmd_sweep(text, _parse_vary(args.vary))
        cfg = load_config(args.config)
        return {"run": cmd_run, "steady": cmd_steady, "verify": cmd_verify}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
