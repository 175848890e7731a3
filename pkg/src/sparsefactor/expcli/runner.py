"""Experiment runners: task planning, execution with a worker pool, and report files.

Each task draws from its own RngHandle stream, named by its position in
the full (unfiltered) plan, so results do not depend on worker count or on
which other tasks were selected.
"""
import fnmatch
import math
import multiprocessing
import os
import traceback
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import stats

from .. import __version__
from .. import conclab as cl
from ..distributions import RngHandle
from ..inference import FactorPrior, SamplerConfig, geweke_joint_test, posterior_loss_summary, run_chain
from ..inference.samplers import gibbs_step, gibbs_step_ps
from ..model import (
    TruthSpec,
    frobenius_truth,
    generate_truth,
    orthogonal_sparse_loadings,
    simulate_dataset,
)
from ..testfns import (
    CSV_COLUMNS as TESTFNS_COLUMNS,
    ErrorRateCase,
    FrobTestSpec,
    ProjTestSpec,
    error_rate_curve,
    log_error_trend,
    shifted_alternative,
    spiked_alternative,
)
from ..matlin import LowRankPlusScalar
from .config import REGIMES, eps_n
from .manifest import RunManifest, write_csv

RATES_COLUMNS = (
    "cell", "regime", "n", "p", "k", "s", "replicate", "metric",
    "mean", "median", "q05", "q95", "eps_n", "M", "exceedance", "seed",
)
RATES_SUMMARY_COLUMNS = ("regime", "n", "p", "k", "s", "metric", "replicates", "mean_loss", "sd_loss")
RATES_FIT_COLUMNS = ("fit", "regime", "metric", "fixed", "slope", "stderr", "t", "ratio")
TREND_COLUMNS = ("regime", "slope", "t")
FIT_COLUMNS = ("lemma", "quantity", "value")
GEWEKE_COLUMNS = ("regime", "variant", "statistic", "z", "marginal_mean", "successive_mean", "seed")


@dataclass(frozen=True)
class Task:
    task_id: str
    params: tuple
    stream: tuple

    @property
    def args(self):
        return dict(self.params)


def _task(task_id, stream, **params):
    return Task(task_id, tuple(sorted(params.items())), tuple(stream))


def select(tasks, cell_filter):
    if not cell_filter:
        return list(tasks)
    return [t for t in tasks if fnmatch.fnmatchcase(t.task_id, cell_filter)]


def execute(cfg, tasks, fn, manifest, workers=1):
    """Run ``fn(cfg, task)`` per task in plan order; failures are recorded, not raised."""
    results = {}
    call = partial(_guarded, fn, cfg)
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            for task, (ok, out) in zip(tasks, pool.imap(call, tasks)):
                _record(manifest, results, task, ok, out)
    else:
        for task in tasks:
            _record(manifest, results, task, *call(task))
    return results


def _guarded(fn, cfg, task):
    try:
        return True, fn(cfg, task)
    except Exception as exc:  # recorded in the manifest; other tasks proceed
        return False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def _record(manifest, results, task, ok, out):
    if ok:
        results[task.task_id] = out
        manifest.mark(task.task_id, "done")
    else:
        manifest.mark(task.task_id, "failed", error=out)


def _prior(regime, p, k, pc):
    return FactorPrior(
        regime, p, k, alpha=pc.alpha, a_tau=pc.a_tau, b_tau=pc.b_tau, kappa=pc.kappa, slab=pc.slab,
        df=pc.df, sigma2_a=pc.sigma2_a, sigma2_b=pc.sigma2_b, sigma2_upper=pc.sigma2_upper,
    )


# ---------------------------------------------------------------- rates


def rates_sparsity(rc, p):
    return rc.s if rc.s is not None else math.ceil(math.log(p))


def plan_rates(cfg):
    rc = cfg.rates
    tasks = []
    for regime in rc.regimes:
        for p in rc.p:
            for n in rc.n:
                s = rates_sparsity(rc, p)
                cell = f"rates/regime={regime}/n={n}/p={p}/k={rc.k}/s={s}"
                for rep in range(rc.replicates):
                    tasks.append(_task(f"{cell}/rep={rep}", (3, REGIMES.index(regime), n, p, rep), regime=regime, n=n, p=p, s=s, rep=rep))
    return tasks


def _rates_truth(cfg, p, s, rep):
    rc = cfg.rates
    root = RngHandle(cfg.seed)
    if cfg.kind == "rates-frobenius":
        # dense truth; the variance must clear 1 / log n at the smallest n of the grid
        return frobenius_truth(p, rc.k, rc.truth.sigma2, min(rc.n), root.split(1, p, rep).derive_int())
    spec = TruthSpec(
        p, rc.k, s, sigma2_true=rc.truth.sigma2, seed=root.split(1, p, rep).derive_int(),
        a3_constant=rc.truth.a3_constant, max_retries=rc.truth.max_retries,
    )
    return generate_truth(spec)[0]


def run_rates_task(cfg, task):
    rc = cfg.rates
    a = task.args
    regime, n, p, s, rep = a["regime"], a["n"], a["p"], a["s"], a["rep"]
    truth = _rates_truth(cfg, p, s, rep)
    # datasets for different n share a stream and are nested prefixes of one draw
    data = simulate_dataset(truth, max(rc.n), RngHandle(cfg.seed).split(2, p, rep).generator)[:n]
    ch = rc.chain
    config = SamplerConfig(regime, ch.iterations, ch.burnin, ch.thin, seed=cfg.seed, init=ch.init)
    chain = run_chain(config, data, _prior(regime, p, rc.k, rc.prior), truth, RngHandle(cfg.seed).split(*task.stream))
    eps = eps_n(rc.eps_tag, n, p)
    summaries = posterior_loss_summary(chain, [m * eps for m in rc.m_grid])
    cell = task.task_id.rsplit("/", 1)[0]
    rows = []
    for metric, summ in summaries.items():
        for m, (_, frac) in zip(rc.m_grid, summ.exceedance):
            rows.append({
                "cell": cell, "regime": regime, "n": n, "p": p, "k": rc.k, "s": s, "replicate": rep,
                "metric": metric, "mean": summ.mean, "median": summ.median, "q05": summ.q05, "q95": summ.q95,
                "eps_n": eps, "M": m, "exceedance": frac, "seed": cfg.seed,
            })
    return {"rows": rows, "diagnostics": chain.diagnostics}


def _loglog_fit(x, y):
    if len(x) < 2:
        return math.nan, math.nan, math.nan
    if len(x) == 2:
        slope = (math.log(y[1]) - math.log(y[0])) / (math.log(x[1]) - math.log(x[0]))
        return slope, math.nan, math.nan
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr), float(fit.slope / fit.stderr) if fit.stderr > 0 else math.nan


def rates_reports(cfg, rows):
    """Aggregate per-replicate posterior-mean losses into cell summaries and log-log fits."""
    first_m = cfg.rates.m_grid[0]
    base = [r for r in rows if r["M"] == first_m]
    cells = {}
    for r in base:
        cells.setdefault((r["regime"], r["n"], r["p"], r["k"], r["s"], r["metric"]), []).append(r["mean"])
    summary = []
    for (regime, n, p, k, s, metric), vals in sorted(cells.items()):
        summary.append({
            "regime": regime, "n": n, "p": p, "k": k, "s": s, "metric": metric, "replicates": len(vals),
            "mean_loss": float(np.mean(vals)), "sd_loss": float(np.std(vals, ddof=1)) if len(vals) > 1 else math.nan,
        })
    fits = []
    keyed = {(r["regime"], r["metric"], r["n"], r["p"]): r["mean_loss"] for r in summary}
    for regime in sorted({r["regime"] for r in summary}):
        for metric in sorted({r["metric"] for r in summary}):
            ps = sorted({k[3] for k in keyed if k[0] == regime and k[1] == metric})
            ns = sorted({k[2] for k in keyed if k[0] == regime and k[1] == metric})
            for p in ps:
                xs = [n for n in ns if (regime, metric, n, p) in keyed]
                if len(xs) >= 2:
                    ys = [keyed[(regime, metric, n, p)] for n in xs]
                    slope, se, t = _loglog_fit(xs, ys)
                    fits.append({"fit": "n-slope", "regime": regime, "metric": metric, "fixed": p,
                                 "slope": slope, "stderr": se, "t": t, "ratio": ys[-1] / ys[0]})
            for n in ns:
                xs = [p for p in ps if (regime, metric, n, p) in keyed]
                if len(xs) >= 2:
                    ys = [keyed[(regime, metric, n, p)] for p in xs]
                    # polylog factor: regress on log log p
                    slope, se, t = _loglog_fit([math.log(p) for p in xs], ys)
                    fits.append({"fit": "p-polylog", "regime": regime, "metric": metric, "fixed": n,
                                 "slope": slope, "stderr": se, "t": t, "ratio": ys[-1] / ys[0]})
    return summary, fits


def cmd_rates(cfg, out_dir, workers=1, cell_filter=None):
    tasks = select(plan_rates(cfg), cell_filter)
    manifest = _manifest(cfg, out_dir, tasks)
    results = execute(cfg, tasks, run_rates_task, manifest, workers)
    rows = [r for t in tasks if t.task_id in results for r in results[t.task_id]["rows"]]
    summary, fits = rates_reports(cfg, rows)
    outputs = {
        "rates_long.csv": (RATES_COLUMNS, rows),
        "rates_summary.csv": (RATES_SUMMARY_COLUMNS, summary),
        "rates_fit.csv": (RATES_FIT_COLUMNS, fits),
    }
    return _finish(manifest, out_dir, outputs)


# ---------------------------------------------------------------- test functions


def testfns_cases(tc, seed):
    """The Frobenius and projection cases for a testfns config."""
    lam = orthogonal_sparse_loadings(tc.p, tc.k, tc.s, tc.c, RngHandle(seed).split(1).generator)
    null = LowRankPlusScalar(lam, tc.sigma2)
    cases = {}
    if "frobenius" in tc.tests:
        alt = shifted_alternative(null, tc.j * tc.frob_eps)
        cases["frobenius"] = ErrorRateCase("frobenius", FrobTestSpec(null.to_dense(), alt.to_dense()), null, alt, tc.j)
    if "projection" in tc.tests:
        spike = tc.j * math.sqrt(math.log(tc.p) ** 3 / tc.n_ref)
        spec = ProjTestSpec(lam, tc.c, tc.sigma2, tc.j, tc.n_ref)
        cases["projection"] = ErrorRateCase("projection", spec, null, spiked_alternative(null, spike), tc.j)
    return cases


def plan_testfns(cfg):
    tc = cfg.testfns
    tasks = []
    for ti, test in enumerate(tc.tests):
        for gi, n in enumerate(tc.n):
            tasks.append(_task(f"testfns/test={test}/n={n}", (4, ti, gi), test=test, n=n))
    return tasks


def run_testfns_task(cfg, task):
    tc = cfg.testfns
    a = task.args
    case = testfns_cases(tc, cfg.seed)[a["test"]]
    return {"rows": error_rate_curve([case], [a["n"]], tc.replicates, RngHandle(cfg.seed).split(*task.stream))}


def cmd_testfns(cfg, out_dir, workers=1, cell_filter=None):
    tasks = select(plan_testfns(cfg), cell_filter)
    manifest = _manifest(cfg, out_dir, tasks)
    results = execute(cfg, tasks, run_testfns_task, manifest, workers)
    rows = [r for t in tasks if t.task_id in results for r in results[t.task_id]["rows"]]
    for r in rows:
        r["seed"] = cfg.seed
    trend = []
    for test in cfg.testfns.tests:
        sub = [r for r in rows if r["regime"] == test]
        if len(sub) >= 3:
            slope, t = log_error_trend(sub, cfg.testfns.replicates)
            trend.append({"regime": test, "slope": slope, "t": t})
    outputs = {"testfns.csv": (TESTFNS_COLUMNS, rows), "testfns_trend.csv": (TREND_COLUMNS, trend)}
    return _finish(manifest, out_dir, outputs)


# ---------------------------------------------------------------- concentration checks


def plan_conclab(cfg):
    return [_task(f"conclab/{name}", (5, i), name=name) for i, name in enumerate(cfg.conclab.tasks)]


def _row(lemma, p, s, x, est, lo, hi, bound, seed):
    return cl.conclab_row(lemma, p, s, x, est, lo, hi, bound, seed)


def run_conclab_task(cfg, task):
    c = cfg.conclab
    name = task.args["name"]
    gen = RngHandle(cfg.seed).split(*task.stream).generator
    seed = cfg.seed
    rows, fits = [], []
    nan = math.nan
    if name == "smallball":
        theta0 = np.zeros(c.smallball_p)
        theta0[: len(c.smallball_theta0)] = c.smallball_theta0
        q = cl.SmallBallQuery("ps", theta0, c.smallball_eps, c.smallball_replicates)
        res = cl.smallball_mc(q, gen)
        exact = cl.normal_smallball_logprob(theta0, c.smallball_eps)
        rows.append(_row("smallball-ps-log", q.p, q.s, q.epsilon, res.log_prob, res.log_ci_lo, res.log_ci_hi, nan, seed))
        rows.append(_row("smallball-normal-log", q.p, q.s, q.epsilon, exact, exact, exact, nan, seed))
        fits += [
            {"lemma": "smallball", "quantity": "log_gap_ps_minus_normal", "value": res.log_prob - exact},
            {"lemma": "smallball", "quantity": "l1_ratio", "value": q.l1_ratio},
            {"lemma": "smallball", "quantity": "upper_bound_only", "value": int(res.upper_bound_only)},
        ]
    elif name in ("suppdim", "l1"):
        if name == "suppdim":
            tail = cl.suppdim_tail_mc(c.tail_p, c.tail_a, c.tail_replicates, gen, epsilon=c.tail_eps)
            contrast = cl.suppdim_tail_mc(c.tail_p, c.tail_a, 2000, gen, epsilon=c.tail_eps, prior="laplace")
            for r in contrast:
                rows.append(_row("suppdim-laplace-log", r.p, None, r.threshold, r.log_prob, r.log_ci_lo, r.log_ci_hi, nan, seed))
        else:
            tail = cl.l1_tail_mc(c.tail_p, c.tail_replicates, gen)
        for r in tail:
            rows.append(_row(f"{name}-log", r.p, None, r.threshold, r.log_prob, r.log_ci_lo, r.log_ci_hi, nan, seed))
        slope, t = cl.tail_slope(tail)
        fits += [{"lemma": name, "quantity": "slope_vs_log_p", "value": slope},
                 {"lemma": name, "quantity": "t", "value": t}]
    elif name == "quadform":
        p, n = c.quadform_p, c.quadform_n
        for r in cl.quadform_tail_mc(np.eye(p), n, c.quadform_t, c.quadform_replicates, gen):
            rows.append(_row("quadform-identity", p, None, r.t, r.prob, r.ci_lo, r.ci_hi, r.bound, seed))
            exact = cl.chisquare_tail(p, n, r.t)
            rows.append(_row("quadform-identity-exact", p, None, r.t, exact, exact, exact, r.bound, seed))
        a = gen.standard_normal((p, p))
        a = 0.5 * (a + a.T)
        w = np.linalg.eigvalsh(a)
        fro, op = float(np.sqrt(np.sum(w * w))), float(np.max(np.abs(w)))
        t_grid = np.linspace(0.05, 0.4, 8) * op * math.sqrt(p)
        qrows = cl.quadform_tail_mc(a, n, t_grid, c.quadform_replicates, gen)
        for r in qrows:
            rows.append(_row("quadform-random", p, None, r.t, r.prob, r.ci_lo, r.ci_hi, r.bound, seed))
        fits.append({"lemma": "quadform", "quantity": "C_fit_K4", "value": cl.fit_quadform_constant(qrows, n, fro, op)})
    elif name == "ftau":
        for r in cl.ftau_tail_quadrature(c.ftau_p):
            lp = math.log(r["p"])
            for kind in ("tail", "interval", "small"):
                v = r[f"log_{kind}"]
                rows.append(_row(f"ftau-{kind}-log", r["p"], None, lp, v, v, v, nan, seed))
        for kind in ("tail", "interval", "small"):
            rates = [r[f"{kind}_rate"] for r in cl.ftau_tail_quadrature(c.ftau_p)]
            fits.append({"lemma": "ftau", "quantity": f"{kind}_rate_max_over_min", "value": max(rates) / min(rates)})
    elif name == "de-smallball":
        s = c.de_s
        eta0 = np.linspace(0.0, 1.0, s)
        chk = cl.de_smallball_bound_check(tuple(c.de_psi_bounds), s, c.de_delta, eta0, c.de_replicates, gen)
        rows.append(_row("de-smallball", None, s, c.de_delta, chk.estimate, chk.ci_lo, chk.ci_hi, chk.bound, seed))
        fits.append({"lemma": "de-smallball", "quantity": "holds", "value": int(chk.holds)})
    elif name == "frob-prior-conc":
        lam0 = 0.3 * RngHandle(cfg.seed).split(6).generator.standard_normal((c.frob_p, c.frob_k))
        spec = cl.FrobConcSpec(lam0, max(c.frob_kappa2, float(np.linalg.norm(lam0, 2))))
        chk = cl.frob_prior_conc_check(spec, c.frob_eps, c.frob_replicates, gen)
        rows.append(_row("frob-prior-conc", c.frob_p, None, c.frob_eps, chk.estimate, chk.ci_lo, chk.ci_hi, chk.bound, seed))
        fits.append({"lemma": "frob-prior-conc", "quantity": "holds", "value": int(chk.holds)})
    elif name == "euler":
        xs = np.linspace(0.5 / c.euler_points, 0.5, c.euler_points)
        for x, g in zip(xs, cl.euler_g(xs)):
            rows.append(_row("euler-g", None, None, float(x), float(g), float(g), float(g), cl.EULER_GAMMA, seed))
        fits.append({"lemma": "euler", "quantity": "monotone_decreasing", "value": int(np.all(np.diff(cl.euler_g(xs)) < 0))})
    else:
        raise ValueError(f"unknown conclab task {name!r}")
    return {"rows": rows, "fits": fits}


def cmd_conclab(cfg, out_dir, workers=1, cell_filter=None):
    tasks = select(plan_conclab(cfg), cell_filter)
    manifest = _manifest(cfg, out_dir, tasks)
    results = execute(cfg, tasks, run_conclab_task, manifest, workers)
    rows = [r for t in tasks if t.task_id in results for r in results[t.task_id]["rows"]]
    fits = [r for t in tasks if t.task_id in results for r in results[t.task_id]["fits"]]
    outputs = {"conclab.csv": (cl.CSV_COLUMNS, rows), "conclab_fits.csv": (FIT_COLUMNS, fits)}
    return _finish(manifest, out_dir, outputs)


# ---------------------------------------------------------------- Geweke


def plan_geweke(cfg):
    g = cfg.geweke
    tasks = []
    for regime in g.regimes:
        ri = REGIMES.index(regime)
        tasks.append(_task(f"geweke/regime={regime}/variant=sampler", (7, ri, 0), regime=regime, variant="sampler"))
        if g.mutation and regime == "ps":
            tasks.append(_task(f"geweke/regime={regime}/variant=frozen_tau", (7, ri, 1), regime=regime, variant="frozen_tau"))
    return tasks


def run_geweke_task(cfg, task):
    g = cfg.geweke
    a = task.args
    prior = _prior(a["regime"], g.p, g.k, g.prior)
    step = partial(gibbs_step_ps, freeze_tau=True) if a["variant"] == "frozen_tau" else gibbs_step
    res = geweke_joint_test(prior, g.n, g.iterations, RngHandle(cfg.seed).split(*task.stream).generator, step=step)
    rows = [
        {"regime": a["regime"], "variant": a["variant"], "statistic": name, "z": float(z),
         "marginal_mean": float(mm), "successive_mean": float(sm), "seed": cfg.seed}
        for name, z, mm, sm in zip(res.names, res.z, res.marginal_mean, res.successive_mean)
    ]
    return {"rows": rows}


def cmd_geweke(cfg, out_dir, workers=1, cell_filter=None):
    tasks = select(plan_geweke(cfg), cell_filter)
    manifest = _manifest(cfg, out_dir, tasks)
    results = execute(cfg, tasks, run_geweke_task, manifest, workers)
    rows = [r for t in tasks if t.task_id in results for r in results[t.task_id]["rows"]]
    return _finish(manifest, out_dir, {"geweke.csv": (GEWEKE_COLUMNS, rows)})


# ---------------------------------------------------------------- shared


@dataclass(frozen=True)
class RunResult:
    out_dir: str
    outputs: tuple
    failed: tuple

    @property
    def ok(self):
        return not self.failed


def _manifest(cfg, out_dir, tasks):
    os.makedirs(out_dir, exist_ok=True)
    return RunManifest(os.path.join(out_dir, "manifest.json"), cfg.snapshot(), cfg.seed, __version__, tasks)


def _finish(manifest, out_dir, outputs):
    for fname, (columns, rows) in outputs.items():
        write_csv(os.path.join(out_dir, fname), columns, rows)
    manifest.finish(list(outputs))
    return RunResult(out_dir, tuple(sorted(outputs)), tuple(manifest.failed))


COMMANDS = {
    "rates": cmd_rates,
    "testfns": cmd_testfns,
    "conclab": cmd_conclab,
    "geweke": cmd_geweke,
}
