"""Certified checks on computed trajectories and steady states.

Every check produces rows of a CertReport. A row passes when its measured
slack is at least ``-tolerance``; slacks are signed so that positive means
the inequality holds with room to spare.
"""
from dataclasses import dataclass, field, fields, is_dataclass
import hashlib

import numpy as np

from . import forchheimer, friction
from .core import State, eval_forcing
from .operators import get_ops, trace_tangential
from .transient import LedgerEntry, Problem, StepConfig, Trajectory, _ledger_entry, run_transient

__all__ = [
    "LedgerEntry",
    "CheckRow",
    "CertReport",
    "inputs_hash",
    "recompute_ledger",
    "check_energy_ledger",
    "check_uprime_bound",
    "DecayFit",
    "fit_decay_rate",
    "check_decay",
    "eigen_decay_factors",
    "check_eigen_decay",
    "structural_stability",
    "eps_convergence_study",
    "check_slip",
    "check_operator_algebra",
    "FRICTIONLESS",
]

FRICTIONLESS = "degenerate: frictionless"
NOTE = "note: not implied"
LEDGER_TOL = 1e-8
GRONWALL_TOL = 1e-10


@dataclass
class CheckRow:
    name: str
    status: str
    slack: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self):
        return self.status in ("pass", FRICTIONLESS, NOTE) or self.status.startswith("skipped")


@dataclass
class CertReport:
    inputs_hash: str = ""
    rows: list = field(default_factory=list)

    def add(self, name, slack, tolerance, detail="", status=None):
        slack = float(slack)
        if status is None:
            status = "pass" if slack >= -tolerance else "fail"
        row = CheckRow(name, status, slack, float(tolerance), detail)
        self.rows.append(row)
        return row

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    @property
    def ok(self):
        return all(r.passed for r in self.rows)

    def failed(self):
        return [r for r in self.rows if not r.passed]

    def table(self):
        head = ["check", "status", "slack", "tolerance", "inputs_hash", "detail"]
        body = [[r.name, r.status, r.slack, r.tolerance, self.inputs_hash, r.detail] for r in self.rows]
        return head, body

    def __getitem__(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _canon(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return "(" + type(obj).__name__ + ",".join(
            f"{f.name}={_canon(getattr(obj, f.name))}" for f in fields(obj) if f.name != "info"
        ) + ")"
    if isinstance(obj, np.ndarray):
        return hashlib.sha256(np.ascontiguousarray(obj, dtype=float).tobytes()).hexdigest()
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canon(o) for o in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(f"{k}:{_canon(obj[k])}" for k in sorted(obj)) + "}"
    if isinstance(obj, float):
        return repr(float(obj))
    if hasattr(obj, "nx") and hasattr(obj, "lx"):
        return f"grid({obj.nx},{obj.ny},{obj.lx!r},{obj.ly!r})"
    return repr(obj)


def inputs_hash(*parts):
    """Short stable digest of the inputs behind a report."""
    return hashlib.sha256("|".join(_canon(p) for p in parts).encode()).hexdigest()[:16]


def _problem_hash(traj):
    prob = traj.problem
    return inputs_hash(prob.grid, prob.partition.g_values, prob.params, prob.forcing,
                       traj.config, traj.states[0].u)


# --- energy ledger -------------------------------------------------------

def recompute_ledger(traj):
    """Ledger entries evaluated from the stored states alone."""
    prob, cfg = traj.problem, traj.config
    out = []
    for n in range(1, len(traj.states)):
        new, old = traj.states[n], traj.states[n - 1]
        diff = new.info.get("picard_diff", 0.0) if new.info else 0.0
        out.append(_ledger_entry(new.u, old.u, traj.forcing_sq[n], new.t, prob, cfg, diff))
    return out


def check_energy_ledger(traj, tol=LEDGER_TOL):
    """Per-step energy inequality and its summed forms.

    Rows:
      ledger_per_step   min over steps of (slack + allowance) / scale
      ledger_nonneg     every dissipation and source term is >= 0
      cumulative_bound  ||u^m||^2 + dt sum_{n<=m} D_n <= ||u^0||^2 + dt sum_{n<=m} S_n
                        for every m, D_n the four dissipation terms (what summing
                        the per-step inequality gives)
      cumulative_max_sum
                        max_n ||u^n||^2 + dt sum_n (2 nu ||grad u^n||^2 + a ||u^n||^2)
                        <= ||u^0||^2 + dt sum_n ||f^n||^2 / a
                        This combined form does not follow from the per-step
                        inequality (the max and the full sum can each use up
                        the right side), so a violation is reported as a note
                        and does not fail the report.
    The detail of a failing per-step row lists the offending step indices
    (1-based, step n produces state n).
    """
    if len(traj.states) < 2:
        raise ValueError("trajectory needs at least 2 states")
    rep = CertReport(_problem_hash(traj))
    dt = traj.config.dt
    ledger = recompute_ledger(traj)
    rel = np.array([(e.slack + e.allowance) / e.scale for e in ledger])
    bad = [i + 1 for i in np.flatnonzero(rel < -tol)]
    rep.add("ledger_per_step", rel.min(), tol,
            "violations at steps " + " ".join(map(str, bad)) if bad else f"{len(ledger)} steps")

    neg = min(min(e.grad, e.darcy, e.forch, e.friction, e.source) for e in ledger)
    scale = max(1.0, max(e.scale for e in ledger))
    rep.add("ledger_nonneg", neg / scale, 1e-14)

    k0 = get_ops(traj.problem.grid).inner(traj.states[0].u, traj.states[0].u)
    diss = np.array([e.grad + e.darcy + e.forch + e.friction for e in ledger])
    src = np.array([e.source for e in ledger])
    allow = np.array([e.allowance for e in ledger])
    kin = np.array([e.kinetic for e in ledger])
    lhs = kin + dt * np.cumsum(diss)
    rhs = k0 + dt * np.cumsum(src + allow)
    cscale = np.maximum(1.0, rhs)
    margin = (rhs - lhs) / cscale
    bad = [i + 1 for i in np.flatnonzero(margin < -tol)]
    rep.add("cumulative_bound", margin.min(), tol,
            "violations at steps " + " ".join(map(str, bad)) if bad else "")

    lhs_lit = max(k0, kin.max()) + dt * sum(e.grad + e.darcy for e in ledger)
    rhs_lit = k0 + dt * float(np.sum(src + allow))
    m = (rhs_lit - lhs_lit) / max(1.0, rhs_lit)
    rep.add("cumulative_max_sum", m, tol, f"lhs={lhs_lit:.6e} rhs={rhs_lit:.6e}",
            status="pass" if m >= -tol else NOTE)
    return rep


def _phi(u, prob):
    """nu ||grad u||^2 + a ||u||^2 + 2b/(alpha+2) ||u||^{alpha+2} + 2 J_eps(u)."""
    pr = prob.params
    ops = get_ops(prob.grid)
    out = pr.nu * ops.grad_norm_sq(u) + pr.a * ops.inner(u, u)
    out += 2.0 * pr.b * forchheimer.forchheimer_potential(u, prob.grid, pr.alpha)
    if not prob.partition.frictionless:
        tau, _ = trace_tangential(u, prob.grid, prob.partition)
        out += 2.0 * friction.eval_J_eps(tau, prob.fa, pr.eps)
    return out


def check_uprime_bound(traj, params=None, tol=LEDGER_TOL):
    """dt sum ||du/dt||^2 + Phi(u^N) <= dt sum ||f^n||^2 + Phi(u^0).

    Phi(v) = nu ||grad v||^2 + a ||v||^2 + 2b/(alpha+2) ||v||^{alpha+2} + 2 J_eps(v).
    Also reports the same inequality at every intermediate N.
    """
    if len(traj.states) < 2:
        raise ValueError("trajectory needs at least 2 states")
    prob = traj.problem
    if params is not None and params != prob.params:
        prob = Problem(prob.grid, prob.partition, params, prob.forcing)
    ops = get_ops(prob.grid)
    dt = traj.config.dt
    rep = CertReport(_problem_hash(traj))
    phi0 = _phi(traj.states[0].u, prob)
    acc_u = acc_f = 0.0
    worst = np.inf
    final = None
    for n in range(1, len(traj.states)):
        d = (traj.states[n].u - traj.states[n - 1].u) / dt
        acc_u += dt * ops.inner(d, d)
        acc_f += dt * traj.forcing_sq[n]
        lhs = acc_u + _phi(traj.states[n].u, prob)
        rhs = acc_f + phi0
        m = (rhs - lhs) / max(1.0, rhs)
        worst = min(worst, m)
        final = (lhs, rhs, m)
    lhs, rhs, m = final
    rep.add("uprime_bound", m, tol, f"lhs={lhs:.6e} rhs={rhs:.6e}")
    rep.add("uprime_bound_all_n", worst, tol)
    return rep


# --- decay to the steady state --------------------------------------------

@dataclass
class DecayFit:
    rate: float
    residual: float
    n_points: int
    status: str
    window: tuple = ()


def fit_decay_rate(traj, steady, skip=5, noise_floor=None):
    """Least-squares slope of log ||u^n - u_s||^2 against t.

    The window drops the first ``skip`` steps and every point whose distance
    to ``steady`` is within the floor: the larger of 1e3 machine epsilons of
    the initial distance and ``noise_floor`` (by default 100 times the
    accumulated solver tolerance, ``picard_tol * (1 + 1/(a dt))``). Returns a
    fit with status "skipped: ..." when the start is already at the floor.
    """
    prob, cfg = traj.problem, traj.config
    if getattr(prob.forcing, "time_dependent", False):
        raise ValueError("decay fit needs time-independent forcing")
    ops = get_ops(prob.grid)
    us = steady.u if isinstance(steady, State) else np.asarray(steady)
    dist = np.array([np.sqrt(max(ops.inner(s.u - us, s.u - us), 0.0)) for s in traj.states])
    t = traj.times
    if noise_floor is None:
        noise_floor = 100.0 * cfg.picard_tol * (1.0 + 1.0 / (prob.params.a * cfg.dt))
    floor = max(1e3 * np.finfo(float).eps * dist[0], noise_floor)
    if dist[0] <= floor:
        return DecayFit(np.nan, np.nan, 0, "skipped: initial state at the steady state")
    idx = [n for n in range(skip, len(dist)) if dist[n] > floor]
    # the window ends at the first point that falls to the floor
    cut = next((n for n in range(skip, len(dist)) if dist[n] <= floor), len(dist))
    idx = [n for n in idx if n < cut]
    if len(idx) < 3 or dist[idx[0]] / dist[idx[-1]] < np.e ** 2:
        raise ValueError("insufficient decay window: distance does not drop by e^2 above the floor")
    x = t[idx]
    y = np.log(dist[idx] ** 2)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return DecayFit(float(-slope), resid, len(idx), "pass", (idx[0], idx[-1]))


def check_decay(traj, steady, lam=None, skip=5):
    """Rate >= 2a (1 - 0.05); the rate is also reported against 2(a + nu) and 2(a + nu lam)."""
    pr = traj.problem.params
    rep = CertReport(_problem_hash(traj))
    fit = fit_decay_rate(traj, steady, skip=skip)
    if fit.status != "pass":
        rep.add("decay_rate", 0.0, 0.0, fit.status, status=fit.status)
        return rep, fit
    target = 2.0 * pr.a * 0.95
    detail = f"rate={fit.rate:.6g} 2(a+nu)={2 * (pr.a + pr.nu):.6g}"
    if lam is not None:
        detail += f" 2(a+nu*lam)={2 * (pr.a + pr.nu * lam):.6g}"
    rep.add("decay_rate", (fit.rate - target) / target, 0.0, detail)
    return rep, fit


def eigen_decay_factors(traj):
    ops = get_ops(traj.problem.grid)
    norms = np.array([np.sqrt(ops.inner(s.u, s.u)) for s in traj.states])
    return norms[1:] / norms[:-1]


def check_eigen_decay(traj, lam, tol=1e-6):
    """Per-step ratio ||u^{n+1}|| / ||u^n|| against 1 / (1 + dt (a + nu lam))."""
    pr = traj.problem.params
    dt = traj.config.dt
    expected = 1.0 / (1.0 + dt * (pr.a + pr.nu * lam))
    err = np.abs(eigen_decay_factors(traj) / expected - 1.0)
    rep = CertReport(_problem_hash(traj))
    rep.add("eigen_decay", -float(err.max()) + tol, 0.0, f"max rel err={err.max():.3e} expected={expected:.12g}")
    return rep


# --- structural stability -------------------------------------------------

_PARAM_NAMES = ("nu", "a", "b", "alpha", "eps")


def _same_setup(r1, r2, which):
    p1, p2 = r1.problem, r2.problem
    g1, g2 = p1.grid, p2.grid
    if (g1.nx, g1.ny, g1.lx, g1.ly) != (g2.nx, g2.ny, g2.lx, g2.ly):
        raise ValueError("runs use different grids")
    if r1.config.dt != r2.config.dt or len(r1.states) != len(r2.states):
        raise ValueError("runs use different time steps or lengths")
    if not np.array_equal(p1.partition.g_values, p2.partition.g_values):
        raise ValueError("runs use different barriers g")
    varied = [n for n in _PARAM_NAMES if getattr(p1.params, n) != getattr(p2.params, n)]
    if which in ("u0", "f"):
        if varied:
            raise ValueError(f"runs differ in {varied}, expected only {which}")
    elif varied != [which]:
        raise ValueError(f"runs differ in {varied}, expected only {which}")
    if which != "u0" and not np.array_equal(r1.states[0].u, r2.states[0].u):
        raise ValueError("runs start from different initial states")
    if which != "f" and p1.forcing != p2.forcing:
        raise ValueError("runs use different forcing")


def structural_stability(run1, run2, which, params=None, run3=None):
    """Continuous dependence on u0, f, b or nu.

    For ``which`` in {u0, f} the difference w = u1 - u2 must obey the
    discrete Gronwall bound with C = a:

        ||w^n||^2 <= (1 + dt a)^-n ||w^0||^2 + (dt/a) sum_k (1 + dt a)^-(n-k) ||df^k||^2

    For ``which`` in {b, nu} a third run at twice the perturbation (``run3``)
    gives the Richardson order log2(|u1 - u3| / |u1 - u2|) at the final
    time, which must lie in [0.9, 1.1], and the Lipschitz estimate
    L = |u1 - u3| / |d3| must cover the first pair: |u1 - u2| <= 1.1 L |d2|.
    """
    if which not in ("u0", "f", "b", "nu"):
        raise ValueError(f"unknown perturbation {which!r}")
    _same_setup(run1, run2, which)
    prob = run1.problem
    pr = params or prob.params
    ops = get_ops(prob.grid)
    dt = run1.config.dt
    rep = CertReport(inputs_hash(_problem_hash(run1), _problem_hash(run2), which))
    if which in ("u0", "f"):
        q = 1.0 / (1.0 + dt * pr.a)
        w0 = run1.states[0].u - run2.states[0].u
        bound = ops.inner(w0, w0)
        worst = np.inf
        worst_n = 0
        for n in range(1, len(run1.states)):
            t = run1.states[n].t
            df = eval_forcing(run1.problem.forcing, prob.grid, t) - eval_forcing(run2.problem.forcing, prob.grid, t)
            # recursion form of the closed sum: B_n = q B_{n-1} + (dt/a) ||df^n||^2
            bound = q * bound + (dt / pr.a) * ops.inner(df, df)
            w = run1.states[n].u - run2.states[n].u
            lhs = ops.inner(w, w)
            scale = max(bound, ops.inner(w0, w0), 1e-300)
            m = (bound - lhs) / scale
            if m < worst:
                worst, worst_n = m, n
        rep.add(f"gronwall_{which}", worst, GRONWALL_TOL, f"worst step {worst_n}")
        return rep

    if run3 is None:
        raise ValueError("coefficient continuity needs a third run")
    _same_setup(run1, run3, which)
    p1 = getattr(run1.problem.params, which)
    d2 = abs(getattr(run2.problem.params, which) - p1)
    d3 = abs(getattr(run3.problem.params, which) - p1)
    uT = run1.states[-1].u
    e2 = np.sqrt(ops.inner(uT - run2.states[-1].u, uT - run2.states[-1].u))
    e3 = np.sqrt(ops.inner(uT - run3.states[-1].u, uT - run3.states[-1].u))
    if e2 == 0.0 or e3 == 0.0:
        rep.add(f"order_{which}", -1.0, 0.0, "no measurable dependence")
        return rep
    order = np.log(e3 / e2) / np.log(d3 / d2)
    rep.add(f"order_{which}", min(order - 0.9, 1.1 - order), 0.0, f"order={order:.6f}")
    L = e3 / d3
    rep.add(f"lipschitz_{which}", (1.1 * L * d2 - e2) / (L * d2), 0.0, f"L={L:.6e}")
    return rep


# --- epsilon schedule -----------------------------------------------------

def eps_convergence_study(problem, init, config, schedule=(1e-1, 1e-2, 1e-3)):
    """Runs the same transient problem for each eps in ``schedule``.

    Rows: J_eps gap on every stored state of every run, Cauchy contraction of
    the final states along the schedule, and the ratio of consecutive
    pressure time-sums (at most 2). With g = 0 the friction row reports the
    frictionless status. Returns the report and the runs.
    """
    schedule = tuple(schedule)
    if len(schedule) < 3 or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must hold at least 3 strictly decreasing eps values")
    runs = []
    for eps in schedule:
        prob = Problem(problem.grid, problem.partition, problem.params.replace(eps=eps), problem.forcing)
        runs.append(run_transient(init, prob, config))
    ops = get_ops(problem.grid)
    rep = CertReport(inputs_hash(problem.grid, problem.partition.g_values, problem.params,
                                 problem.forcing, config, init.u, schedule))
    fa = problem.fa
    if problem.partition.frictionless:
        rep.add("jeps_gap", 0.0, 0.0, status=FRICTIONLESS)
    else:
        worst = np.inf
        for eps, run in zip(schedule, runs):
            cap = eps * fa.barrier_mass
            for s in run.states:
                tau, _ = trace_tangential(s.u, problem.grid, problem.partition)
                gap = friction.eval_J_eps(tau, fa, eps) - friction.eval_J(tau, fa)
                worst = min(worst, gap / cap, (cap - gap) / cap)
        rep.add("jeps_gap", worst, 1e-12)

    finals = [r.states[-1].u for r in runs]
    diffs = [np.sqrt(ops.inner(a - b, a - b)) for a, b in zip(finals, finals[1:])]
    worst = min(d0 - d1 for d0, d1 in zip(diffs, diffs[1:]))
    scale = max(max(diffs), 1e-300)
    rep.add("eps_cauchy", worst / scale, 1e-12, " ".join(f"{d:.6e}" for d in diffs))

    sums = [r.pressure_time_sum() for r in runs]
    ratios = [b / a if a > 0 else (1.0 if b == 0 else np.inf) for a, b in zip(sums, sums[1:])]
    rep.add("pressure_time_sum", 2.0 - max(ratios), 0.0, " ".join(f"{s:.6e}" for s in sums))
    flags = [i for i, r in enumerate(runs) if not r.ok]
    rep.add("eps_runs_converged", 0.0 - len(flags), 0.0,
            f"flagged runs {flags}" if flags else "")
    return rep, runs


# --- slip trichotomy ------------------------------------------------------

def check_slip(state, problem, expect=None, min_slip_speed=None):
    """Threshold law on the S faces of ``state``.

    ``expect="stick"`` requires every face to stick with ``|u_tau| <= 100 eps``.
    ``expect="slip"`` requires ``|lam| <= g`` everywhere and a unit direction
    residual at most TOL_DIR on faces moving at least ``min_slip_speed``
    (default 100 eps). Without ``expect`` the generic report is checked.
    """
    pr = problem.params
    rep = CertReport(inputs_hash(problem.grid, problem.partition.g_values, pr, state.u))
    if problem.partition.frictionless:
        rep.add("slip_trichotomy", 0.0, 0.0, status=FRICTIONLESS)
        return rep, None
    tau, w = trace_tangential(state.u, problem.grid, problem.partition)
    fa = problem.fa
    lam = friction.eval_K_eps(tau, fa, pr.eps)
    g = fa.g
    speed = 100.0 * pr.eps if min_slip_speed is None else min_slip_speed
    report = friction.slip_residual(tau, lam, g, w, pr.eps)
    bound = float(np.max(np.abs(lam) - g))
    if expect == "stick":
        rep.add("stick_all", -float(report.n_slip), 0.0, f"{report.n_stick} stick / {report.n_slip} slip")
        rep.add("stick_speed", float(speed - np.abs(tau).max()) / speed, 0.0,
                f"max |u_tau|={np.abs(tau).max():.3e}")
    elif expect == "slip":
        moving = report.slip & (np.abs(tau) >= speed)
        rep.add("slip_bound", -max(bound, 0.0), 0.0, f"max |lam|-g={bound:.3e}")
        if not moving.any():
            rep.add("slip_direction", -1.0, 0.0, "no slipping face moves faster than the threshold")
        else:
            dres = float(np.abs(np.sign(lam[moving]) - np.sign(tau[moving])).max())
            rep.add("slip_direction", friction.TOL_DIR - dres, 0.0, f"{int(moving.sum())} faces")
    else:
        rep.add("slip_bound", -report.bound_violation, 0.0)
        rep.add("slip_sign", -report.sign_violation, 0.0)
        rep.add("slip_direction", friction.TOL_DIR - report.direction_residual, 0.0)
    return rep, report


# --- operator algebra -----------------------------------------------------

def check_operator_algebra(grid, n=100, seed=0, lam=None, tol=1e-13):
    """Adjointness, symmetry, semidefiniteness and Poincare on ``n`` random fields."""
    from .operators import apply_divergence, apply_gradient, apply_laplacian, compute_lambda_min, inner

    ops = get_ops(grid)
    rng = np.random.default_rng(seed)
    if lam is None:
        lam = compute_lambda_min(grid).value
    adj = sym = 0.0
    semi = poinc = -np.inf
    for _ in range(n):
        v = ops.extend(rng.standard_normal(ops.free.size))
        w = ops.extend(rng.standard_normal(ops.free.size))
        q = rng.standard_normal(grid.n_cells)
        nv = np.sqrt(inner(v, v, grid))
        nq = np.sqrt(grid.cell_area * q @ q)
        d = grid.cell_area * apply_divergence(v, grid) @ q + inner(v, apply_gradient(q, grid), grid)
        adj = max(adj, abs(d) / (nv * nq))
        Lv, Lw = apply_laplacian(v, grid), apply_laplacian(w, grid)
        s = inner(Lv, w, grid) - inner(v, Lw, grid)
        nw = np.sqrt(inner(w, w, grid))
        sym = max(sym, abs(s) / (np.sqrt(inner(Lv, Lv, grid)) * nw + np.sqrt(inner(Lw, Lw, grid)) * nv))
        semi = max(semi, inner(Lv, v, grid) / (np.sqrt(inner(Lv, Lv, grid)) * nv))
        u = ops.project_divfree(v)
        g2 = ops.grad_norm_sq(u)
        poinc = max(poinc, (inner(u, u, grid) - g2 / lam) / max(g2 / lam, 1e-300))
    rep = CertReport(inputs_hash(grid, n, seed))
    rep.add("adjointness", -adj, tol)
    rep.add("laplacian_symmetry", -sym, tol)
    rep.add("laplacian_semidefinite", -semi, 0.0)
    # inverse iteration stops at a 1e-11 step, so lam carries ~1e-12 relative error
    rep.add("poincare", -poinc, 1e-10, f"lambda_min={lam:.12g}")
    return rep
