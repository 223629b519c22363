"""Experiment runners behind the command line.

Every runner takes a validated config and returns an ExperimentResult:
rows for the CSV file (run, iteration, metric, value, se), a summary
dict for the JSON file and optional extra tables.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .._rng import as_generator
from ..attention import HeadBank, predictor_forward
from ..errors import ConfigurationError
from ..metrics import minimal_rmse
from ..mixtures import MixtureSpec, make_orthonormal_centroids, sample_batch
from ..moments import (
    MCEstimate, MomentContext, gaussian_sampler, isserlis_identity, isserlis_integrand, mc_estimate,
    p0, p1, p1_0, p2, p2_0, p2_1, p3, p3_1, p_integrand,
)
from ..optimize import OptimizerConfig, manifold_init, psgd_run, psgd_soft_run, sphere_init
from ..risk import (
    closed_form_risk_gaussian_general, closed_form_risk_gaussian_manifold, critical_points_dirac,
    ctx_statistics, dirac_coords_embedding, dirac_risk_gradient, empirical_risk, enumerate_risk_dirac,
    exact_risk_dirac, first_row_sampler, lambda_star_degenerate, oracle_asymptotics, oracle_mean_factor,
    oracle_variance,
)
from .config import config_hash

WORKERS_ENV = "ATTNCLUST_WORKERS"


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer") from None
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be at least 1")
    return n


def _map(fn, items):
    """Ordered map, fanned out over processes when workers > 1."""
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _band(values):
    v = np.asarray(values, float)
    if np.all(np.isnan(v)):
        return {"p2.5": None, "median": None, "p97.5": None}
    lo, med, hi = np.nanpercentile(v, [2.5, 50, 97.5])
    return {"p2.5": float(lo), "median": float(med), "p97.5": float(hi)}


# building blocks ------------------------------------------------------------------

def build_centroids(mix: dict, rng=None):
    if mix["kind"] == "incontext":
        return None
    cents = mix["centroids"]
    if isinstance(cents, str):
        return make_orthonormal_centroids(mix["d"], mix["K"], rng, mode=cents)
    return np.asarray(cents, float)


def build_spec(mix: dict, centroids) -> MixtureSpec:
    if mix["kind"] == "dirac":
        return MixtureSpec.dirac(centroids)
    if mix["kind"] == "gaussian":
        return MixtureSpec.gaussian(centroids, mix["sigma"])
    return MixtureSpec.incontext(mix["d"], mix["sigma"])


def optimizer_config(cfg: dict) -> OptimizerConfig:
    opt = dict(cfg["optimizer"])
    if opt["init_heads"] is not None:
        opt["init_heads"] = np.asarray(opt["init_heads"], float)
    return OptimizerConfig(**opt)


# training ------------------------------------------------------------------------

def train_once(cfg: dict, run: int):
    """One training run with seed base + run. Returns (rows, run record)."""
    seed = cfg["seed"] + run
    rng = as_generator(seed)
    mix = cfg["mixture"]
    if mix["kind"] == "incontext":
        raise ConfigurationError("training needs a mixture with fixed centroids")
    C = build_centroids(mix, rng)
    spec = build_spec(mix, C)
    opt = optimizer_config(cfg)
    pred = cfg["predictor"]
    if pred["kind"] == "softmax":
        trace = psgd_soft_run(spec, cfg["L"], opt, rng, lam=pred["lam"], psi=pred["psi"])
        extra = ("psi", "lambda")
    elif pred["kind"] == "linear":
        trace = psgd_run(spec, cfg["L"], pred["lam"], opt, rng)
        extra = ()
    else:
        raise ConfigurationError("the in-context layer has no trainable parameters")
    d = spec.d
    series = trace.metrics()
    series["minimal_rmse"] = series["distance"] / math.sqrt(d)
    names = ("distance", "signed_distance", "minimal_rmse", "objective") + extra
    rows = []
    for i, it in enumerate(trace.iterations):
        for name in names:
            rows.append((run, it, name, float(series[name][i]), None))
    finite = all(np.all(np.isfinite(series[n][1:])) for n in names) and np.all(np.isfinite(trace.final_heads))
    record = {
        "run": run,
        "seed": seed,
        "flagged": bool(trace.diverged or not finite),
        "final_iteration": trace.iterations[-1],
        "final_distance": float(trace.final_distance),
        "final_signed_distance": float(trace.final_signed_distance),
        "final_minimal_rmse": float(trace.final_distance / math.sqrt(d)),
        "final_heads": np.asarray(trace.final_heads).tolist(),
    }
    if extra:
        record["final_psi"] = trace.psi[-1]
        record["final_lambda"] = trace.lam[-1]
    return rows, record


def _train_job(args):
    return train_once(*args)


def run_train(cfg: dict) -> ExperimentResult:
    outs = _map(_train_job, [(cfg, i) for i in range(cfg["n_runs"])])
    rows = [r for out in outs for r in out[0]]
    records = [out[1] for out in outs]
    # per-iteration percentile bands across runs
    by_metric = {}
    for run, it, name, value, _ in rows:
        by_metric.setdefault(name, {}).setdefault(it, {})[run] = value
    bands = {}
    for name, per_it in by_metric.items():
        its = sorted(per_it)
        vals = [[per_it[it].get(r["run"], float("nan")) for r in records if not r["flagged"]] for it in its]
        b = [_band(v) if v else _band([float("nan")]) for v in vals]
        bands[name] = {"iteration": its, **{k: [x[k] for x in b] for k in ("p2.5", "median", "p97.5")}}
    ok = [r for r in records if not r["flagged"]]
    final = {
        key: _band([r[key] for r in ok]) if ok else _band([float("nan")])
        for key in ("final_distance", "final_signed_distance", "final_minimal_rmse")
    }
    summary = {"runs": records, "flagged_runs": [r["run"] for r in records if r["flagged"]],
               "final": final, "bands": bands}
    return ExperimentResult(rows, summary)


def run_sweep(cfg: dict) -> ExperimentResult:
    sw = cfg["sweep"]
    param = sw["param"]
    jobs = []
    for j, v in enumerate(sw["values"]):
        sub = {**cfg, "optimizer": dict(cfg["optimizer"]), "mixture": dict(cfg["mixture"])}
        if param == "rho":
            sub["optimizer"]["rho"] = float(v)
        else:
            sub["mixture"]["d"] = int(v)
            if not isinstance(sub["mixture"]["centroids"], str):
                raise ConfigurationError("a dimension sweep needs generated centroids")
        for i in range(cfg["n_runs"]):
            jobs.append((j, v, sub, i))
    outs = _map(_sweep_job, jobs)
    metric = "final_minimal_rmse" if param == "d" else "final_distance"
    rows, table = [], []
    per_value = {}
    for (j, v, _, i), rec in zip(jobs, outs):
        rows.append((i, rec["final_iteration"], f"{metric}@{param}={v!r}", rec[metric], None))
        if not rec["flagged"]:
            per_value.setdefault(j, []).append(rec[metric])
    for j, v in enumerate(sw["values"]):
        table.append({"value": v, **_band(per_value.get(j, [float("nan")]))})
    meds = [t["median"] if t["median"] is not None else math.inf for t in table]
    best = sw["values"][int(np.argmin(meds))]
    flagged = [{"value": v, "run": i} for (j, v, _, i), rec in zip(jobs, outs) if rec["flagged"]]
    return ExperimentResult(rows, {"metric": metric, "param": param, "sweep": table,
                                   "best_value": best, "flagged_runs": flagged})


def _sweep_job(args):
    _, _, sub, i = args
    return train_once(sub, i)[1]


# verification suites --------------------------------------------------------------

def dirac_grid_check(Ls=(2, 3, 5), n_kappa=5, n_eta=3):
    """Max |enumeration - closed form| on a coordinate grid, per (L, lambda) cell."""
    gk, ge = np.linspace(-1, 1, n_kappa), np.linspace(-1, 1, n_eta)
    cells = []
    for L in Ls:
        for lam in (0.3, lambda_star_degenerate(L)):
            worst = 0.0
            for c in itertools.product(gk, gk, ge, ge):
                H, C = dirac_coords_embedding(c)
                worst = max(worst, abs(enumerate_risk_dirac(H, C, lam, L) - exact_risk_dirac(c, lam, L)))
            cells.append({"L": L, "lam": lam, "max_abs_error": worst})
    return cells


def gaussian_cells():
    """Twelve (sigma, d, L, placement) cells for the MC check of the closed form."""
    cells = [(s, d, L, "off") for s in (0.3, 1.0) for d in (3, 5) for L in (5, 30)]
    cells += [(s, 5, L, "on") for s in (0.3, 1.0) for L in (5, 30)]
    return cells


def gaussian_mc_check(n_samples: int, rng=None, cells=None):
    rng = as_generator(rng)
    out = []
    for sigma, d, L, place in cells or gaussian_cells():
        lam = 0.6 if sigma < 1 else 0.2
        C = make_orthonormal_centroids(d, 2)
        H = manifold_init(C, rng) if place == "on" else sphere_init(2, d, rng)
        exact = closed_form_risk_gaussian_general(H, C, sigma, L, lam)
        est = empirical_risk(HeadBank.linear(H, lam), MixtureSpec.gaussian(C, sigma), L, n_samples, rng)
        out.append({"sigma": sigma, "d": d, "L": L, "placement": place, "lam": lam, "closed_form": exact,
                    "mc": est.mean, "se": est.se, "z": float(est.zscore(exact))})
    return out


def manifold_consistency_check(n: int = 20, rng=None, sigma=0.3, d=5, L=30, lam=0.6):
    rng = as_generator(rng)
    C = make_orthonormal_centroids(d, 2)  # e_{d-1}, -e_0
    E = np.eye(d)
    worst = 0.0
    for _ in range(n):
        k0, k1 = rng.uniform(-1, 1, 2)
        H = np.array([k0 * C[0] + math.sqrt(1 - k0**2) * E[1], k1 * C[1] + math.sqrt(1 - k1**2) * E[2]])
        a = closed_form_risk_gaussian_general(H, C, sigma, L, lam)
        b = closed_form_risk_gaussian_manifold(k0, k1, sigma, d, L, lam)
        worst = max(worst, abs(a - b))
    return worst


def run_verify_risk(cfg: dict) -> ExperimentResult:
    rng = as_generator(cfg["seed"])
    rows = []
    dirac = dirac_grid_check()
    for i, c in enumerate(dirac):
        rows.append((0, i, "dirac_abs_error", c["max_abs_error"], None))
    gauss = gaussian_mc_check(cfg["verify"]["n_samples"], rng)
    for i, c in enumerate(gauss):
        rows.append((0, i, "gaussian_mc_minus_closed_form", c["mc"] - c["closed_form"], c["se"]))
    man = manifold_consistency_check(rng=rng)
    rows.append((0, 0, "manifold_vs_general_abs_error", man, None))
    worst_g = max(gauss, key=lambda c: abs(c["z"]))
    summary = {
        "dirac": {"max_abs_error": max(c["max_abs_error"] for c in dirac), "cells": dirac,
                  "pass": all(c["max_abs_error"] <= 1e-12 for c in dirac)},
        "gaussian": {"max_abs_z": abs(worst_g["z"]), "worst_cell": worst_g, "cells": gauss,
                     "pass": all(abs(c["z"]) <= 4 for c in gauss)},
        "manifold_vs_general": {"max_abs_error": man, "pass": man <= 1e-10},
    }
    return ExperimentResult(rows, summary)


ISSERLIS = tuple(range(1, 9))
P_FUNCTIONS = ("p0", "p1_0", "p1", "p2_0", "p2_1", "p2", "p3_1", "p3")


def random_moment_config(rng, d=None, sigma=None):
    """Random vectors a, b, c and orthonormal centres s1, s2, s3 in R^d."""
    d = int(rng.integers(3, 7)) if d is None else d
    sigma = float(rng.choice([0.3, 0.5, 1.0])) if sigma is None else sigma
    a, b, c = rng.standard_normal((3, d))
    S = np.linalg.qr(rng.standard_normal((d, 3)))[0].T
    return {"d": d, "sigma": sigma, "a": a, "b": b, "c": c, "s1": S[0], "s2": S[1], "s3": S[2]}


def moment_exact(conf):
    d, s = conf["d"], conf["sigma"]
    a, b, c, s1, s2, s3 = (conf[k] for k in ("a", "b", "c", "s1", "s2", "s3"))
    ctx = MomentContext(s, d, a, b, c)
    out = {}
    for i in ISSERLIS:
        v = np.atleast_1d(isserlis_identity(i, ctx))
        for j, x in enumerate(v):
            out[f"isserlis{i}" + (f"[{j}]" if len(v) > 1 else "")] = float(x)
    out["p0"] = p0(a, b, s1, s, d)
    out["p1_0"] = p1_0(a, b, s1, c, s)
    out["p1"] = p1(a, b, s1, s2, s)
    out["p2_0"] = p2_0(a, b, s1, s)
    out["p2_1"] = p2_1(a, b, s2, s, d)
    out["p2"] = p2(a, b, s1, s2, s, d)
    out["p3_1"] = p3_1(a, b, s2, s3, s)
    out["p3"] = p3(a, b, s1, s2, s3, s)
    return out


def _moment_sampler(conf):
    """One draw of G and of X1, X2, X3 feeds every integrand."""
    d, s = conf["d"], conf["sigma"]
    ctx = MomentContext(s, d, conf["a"], conf["b"], conf["c"])
    vecs = {"a": conf["a"], "b": conf["b"], "c": conf["c"]}
    centre_of = {"s": "s1", "s1": "s1", "s2": "s2", "s3": "s3"}
    p_fns = []
    for name in P_FUNCTIONS:
        fn, centres = p_integrand(name, vecs)
        if name == "p2_1":  # evaluated around s2, matching moment_exact
            centres = ["s2"]
        p_fns.append((fn, [centre_of[c] for c in centres]))

    def draw(rng, m):
        G = s * rng.standard_normal((m, d))
        cols = []
        for i in ISSERLIS:
            v = isserlis_integrand(i, ctx, G)
            cols.extend(v.T if v.ndim == 2 else [v])
        X = {k: conf[k] + s * rng.standard_normal((m, d)) for k in ("s1", "s2", "s3")}
        for fn, centres in p_fns:
            cols.append(fn(*[X[c] for c in centres]))
        return np.stack(cols, axis=1)

    return draw


def moment_mc_check(conf, n_samples, rng=None):
    """MC estimates of all identities and p-functions for one configuration."""
    exact = moment_exact(conf)
    est = mc_estimate(_moment_sampler(conf), n_samples, rng, chunk=min(n_samples, 200_000))
    out = []
    for j, (name, value) in enumerate(exact.items()):
        mean, se = float(est.mean[j]), float(est.se[j])
        z = (mean - value) / se if se > 0 else (0.0 if mean == value else math.inf)
        out.append({"name": name, "exact": value, "mc": mean, "se": se, "z": z})
    return out


def run_verify_moments(cfg: dict) -> ExperimentResult:
    rng = as_generator(cfg["seed"])
    rows, worst = [], None
    for k in range(cfg["verify"]["n_configs"]):
        conf = random_moment_config(rng)
        for item in moment_mc_check(conf, cfg["verify"]["n_samples"], rng):
            rows.append((k, 0, item["name"], item["mc"] - item["exact"], item["se"]))
            if worst is None or abs(item["z"]) > abs(worst["z"]):
                worst = {**item, "config": k}
    zs = [abs(r[3] / r[4]) if r[4] else (0.0 if r[3] == 0 else math.inf) for r in rows]
    summary = {"n_checks": len(rows), "max_abs_z": max(zs), "worst": worst, "pass": max(zs) <= 4}
    return ExperimentResult(rows, summary)


# statistics of the embeddings ------------------------------------------------------

def oracle_conditional_stats(sigma, d, L, lam, n_samples, rng=None, label=0):
    """MC of E[T_1 | Z_1 = c] (vector) and of E|T_1 - m|^2 for oracle heads.

    m is the closed-form conditional mean, so the second estimate is the
    trace of the conditional covariance.
    """
    C = make_orthonormal_centroids(d, 2)
    spec = MixtureSpec.gaussian(C, sigma)
    bank = HeadBank.linear(C, lam)
    m = oracle_mean_factor(L, sigma, lam) * C[label]

    def fn(x1, t1, _):
        r = t1 - m
        return np.concatenate([t1, np.einsum("nd,nd->n", r, r)[:, None]], axis=1)

    est = mc_estimate(first_row_sampler(bank, spec, L, fn, first_label=label), n_samples, rng,
                      chunk=max(1, 4_000_000 // (L * d)))
    mean = MCEstimate(est.mean[:d], est.se[:d], est.n)
    var = MCEstimate(float(est.mean[d]), float(est.se[d]), est.n)
    return mean, var, C[label]


def ctx_conditional_stats(sigma, d, L, lam, n_samples, rng=None):
    """MC of the mean factor <T_1, mu*_{Z1}> and of E|T_1 - f mu*_{Z1}|^2 on in-context data."""
    spec = MixtureSpec.incontext(d, sigma)
    bank = HeadBank.incontext(lam)
    f = ctx_statistics(sigma, d, L, lam).mean_factor

    def fn(x1, t1, batch):
        idx = np.arange(len(batch))
        mu = batch.centroids[idx, batch.labels[:, 0]]
        r = t1 - f * mu
        return np.stack([np.einsum("nd,nd->n", t1, mu), np.einsum("nd,nd->n", r, r)], axis=1)

    est = mc_estimate(first_row_sampler(bank, spec, L, fn), n_samples, rng, chunk=max(1, 4_000_000 // (L * d)))
    return (MCEstimate(float(est.mean[0]), float(est.se[0]), est.n),
            MCEstimate(float(est.mean[1]), float(est.se[1]), est.n))


def run_ctx_stats(cfg: dict) -> ExperimentResult:
    mix, lam, L = cfg["mixture"], cfg["predictor"]["lam"], cfg["L"]
    sigma, d = mix["sigma"], mix["d"]
    st = ctx_statistics(sigma, d, L, lam)
    rng = as_generator(cfg["seed"])
    mean, var = ctx_conditional_stats(sigma, d, L, lam, cfg["verify"]["n_samples"], rng)
    rows = [
        (0, 0, "mean_factor_mc", mean.mean, mean.se),
        (0, 0, "mean_factor_formula", st.mean_factor, None),
        (0, 0, "variance_mc", var.mean, var.se),
        (0, 0, "variance_formula", st.variance, None),
        (0, 0, "asymptotic_variance", st.asymptotic_variance, None),
        (0, 0, "asymptotic_risk", st.asymptotic_risk, None),
        (0, 0, "optimal_lambda", st.optimal_lambda, None),
        (0, 0, "optimal_asymptotic_risk", st.optimal_asymptotic_risk, None),
    ]
    summary = {
        "statistics": vars(st),
        "mean_factor": {"mc": mean.mean, "se": mean.se, "z": float(mean.zscore(st.mean_factor))},
        "variance": {"mc": var.mean, "se": var.se, "z": float(var.zscore(st.variance))},
        "input_variance": d * sigma**2,
        "quantizer_bound": sigma**2 * (d - 2),
    }
    return ExperimentResult(rows, summary)


def pca_project(inputs, outputs):
    """Project both clouds on the top two principal directions of the inputs."""
    centre = inputs.mean(axis=0)
    cov = np.cov(inputs - centre, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    W = vecs[:, ::-1][:, :2]
    # fix the sign of each direction so output does not depend on the eigensolver
    W = W * np.where(W[np.argmax(np.abs(W), axis=0), [0, 1]] < 0, -1.0, 1.0)
    return (inputs - centre) @ W, (outputs - centre) @ W


def embed_once(cfg: dict, run: int):
    rng = as_generator(cfg["seed"] + run)
    mix, pred, L = cfg["mixture"], cfg["predictor"], cfg["L"]
    C = build_centroids(mix, rng)
    spec = build_spec(mix, C)
    seq = sample_batch(spec, L, 1, rng).sequence(0)
    if pred["kind"] == "incontext":
        bank = HeadBank.incontext(pred["lam"])
    elif pred["kind"] == "linear":
        if C is None:
            raise ConfigurationError("oracle heads need fixed centroids")
        bank = HeadBank.linear(C, pred["lam"])
    else:
        raise ConfigurationError("embed supports the linear oracle and the in-context layer")
    out = predictor_forward(bank, seq.tokens)
    pin, pout = pca_project(seq.tokens, out)
    var_in = float(np.sum(np.var(pin, axis=0)))
    var_out = float(np.sum(np.var(pout, axis=0)))
    points = [(run, i, int(seq.labels[i]), *map(float, pin[i]), *map(float, pout[i])) for i in range(L)]
    return var_in, var_out, points


def _embed_job(args):
    return embed_once(*args)


def run_embed(cfg: dict) -> ExperimentResult:
    outs = _map(_embed_job, [(cfg, i) for i in range(cfg["n_runs"])])
    rows, points, runs = [], [], []
    for i, (vin, vout, pts) in enumerate(outs):
        rows.append((i, 0, "input_variance", vin, None))
        rows.append((i, 0, "output_variance", vout, None))
        points.extend(pts)
        runs.append({"run": i, "seed": cfg["seed"] + i, "input_variance": vin, "output_variance": vout,
                     "reduced": vout < vin})
    summary = {"runs": runs, "n_reduced": sum(r["reduced"] for r in runs), "n_runs": len(runs)}
    header = ("run", "index", "label", "x_in", "y_in", "x_out", "y_out")
    return ExperimentResult(rows, summary, {"points.csv": (header, points)})


def run_critical_points(cfg: dict) -> ExperimentResult:
    L = cfg["L"]
    lam = lambda_star_degenerate(L)
    rows, fams = [], []
    for fam in critical_points_dirac(L):
        grads = [float(np.linalg.norm(dirac_risk_gradient(p, lam, L))) for p in fam.points]
        for i, (r, g) in enumerate(zip(fam.risk, grads)):
            rows.append((0, i, f"{fam.name}:risk", float(r), None))
            rows.append((0, i, f"{fam.name}:grad_norm", g, None))
        fams.append({"name": fam.name, "kind": fam.kind, "description": fam.description,
                     "risk_min": float(fam.risk.min()), "risk_max": float(fam.risk.max()),
                     "max_grad_norm": max(grads), "points": fam.points.tolist()})
    level = {f["kind"]: f["risk_max"] for f in fams}
    saddle_lo = min(f["risk_min"] for f in fams if "saddle" in f["kind"])
    saddle_hi = max(f["risk_max"] for f in fams if "saddle" in f["kind"])
    ordered = level["local max"] > saddle_hi and saddle_lo > level["global min"]
    return ExperimentResult(rows, {"L": L, "lambda": lam, "families": fams, "ordering_holds": bool(ordered)})


RUNNERS = {
    "train": run_train,
    "sweep-reg": run_sweep,
    "sweep-dim": run_sweep,
    "verify-risk": run_verify_risk,
    "verify-moments": run_verify_moments,
    "ctx-stats": run_ctx_stats,
    "embed": run_embed,
    "critical-points": run_critical_points,
}


def run_experiment(cfg: dict) -> ExperimentResult:
    if cfg["experiment"] == "sweep-reg" and cfg["sweep"]["param"] != "rho":
        raise ConfigurationError("sweep-reg sweeps rho")
    if cfg["experiment"] == "sweep-dim" and cfg["sweep"]["param"] != "d":
        raise ConfigurationError("sweep-dim sweeps d")
    res = RUNNERS[cfg["experiment"]](cfg)
    # the output location is not part of the provenance
    recorded = {k: v for k, v in cfg.items() if k != "output"}
    res.summary = {"experiment": cfg["experiment"], "config": recorded, "config_hash": config_hash(recorded),
                   "kernel_backend": kernels.BACKEND, **res.summary}
    return res
