"""Simulation settings, data generation, error metrics and the replication harness."""

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidInput, InvalidSpec, MDFAError, NotPsd
from .estimator import FitOptions, fit_mdfa, fit_mdfa_cov, fit_ols, fit_pca
from .linalg import procrustes
from .model import Denominator, center_columns, covariance

LOADING_RANGES = ((0.90, 0.95), (0.85, 0.90), (0.80, 0.85), (0.45, 0.50), (0.40, 0.45))
SETTING_IDS = ("S1", "S2", "S3", "S4")
ESTIMATORS = ("mdfa", "mdfa_cov", "mdfa_sparse", "pca", "ols")
CSV_HEADER = ("setting", "n", "rep", "estimator", "se_lambda", "se_total", "iters", "runtime_s", "converged")


@dataclass(frozen=True)
class MinorFactorSpec:
    pi: float = 0.2
    epsilon: float = 0.1
    q: int = 150


@dataclass(frozen=True)
class SettingSpec:
    id: str
    p: int
    m: int
    loadings_per_factor: int
    loading_ranges: tuple
    model_error: Optional[MinorFactorSpec] = None

    def validate(self):
        if self.m < 1 or self.p <= self.m:
            raise InvalidSpec(f"{self.id}: need 1 <= m < p")
        if self.loadings_per_factor < 1 or self.loadings_per_factor * self.m > self.p:
            raise InvalidSpec(f"{self.id}: {self.m} factors x {self.loadings_per_factor} loadings exceed p={self.p}")
        if len(self.loading_ranges) != self.m:
            raise InvalidSpec(f"{self.id}: need one loading range per factor")
        for lo, hi in self.loading_ranges:
            if not 0 <= lo <= hi < 1:
                raise InvalidSpec(f"{self.id}: loading range [{lo}, {hi}] must lie in [0, 1)")
        return self


def full_setting(setting_id):
    """The four settings at the sizes used in the published experiments."""
    sid = _norm_id(setting_id)
    wide = sid in ("S3", "S4")
    err = MinorFactorSpec() if sid in ("S2", "S4") else None
    return SettingSpec(sid, 50 if wide else 20, 5, 10 if wide else 4, LOADING_RANGES, err).validate()


def desk_setting(setting_id):
    """Scaled-down settings: two factors (the two strongest ranges), same loadings-per-factor ratio."""
    sid = _norm_id(setting_id)
    wide = sid in ("S3", "S4")
    err = MinorFactorSpec() if sid in ("S2", "S4") else None
    return SettingSpec(sid, 20 if wide else 8, 2, 10 if wide else 4, LOADING_RANGES[:2], err).validate()


def get_setting(setting_id, full_scale=False):
    return full_setting(setting_id) if full_scale else desk_setting(setting_id)


def _norm_id(setting_id):
    sid = str(setting_id).upper()
    sid = sid if sid.startswith("S") else "S" + sid
    if sid not in SETTING_IDS:
        raise InvalidSpec(f"unknown setting {setting_id!r}")
    return sid


class TrueParams(NamedTuple):
    loadings: np.ndarray
    psi2: np.ndarray
    sigma: np.ndarray
    # unique variances used when scoring estimates: I - diag(Lambda Lambda^T)
    psi2_eval: np.ndarray
    minor: Optional[np.ndarray] = None


def gen_minor_factors(p, pi, epsilon, q, seed=None, unique_variances=None):
    """Minor-factor loadings ``W`` (p x q) for an approximate factor model.

    Column ``k`` of a standard normal matrix is scaled by ``(1 - epsilon)^k``
    and each row is then rescaled so that ``(W W^T)_jj = pi * u_j``, where
    ``u_j`` is the unique variance of variable ``j`` (default 1).
    """
    if not 0 < pi < 1:
        raise InvalidSpec("pi must lie in (0, 1)")
    if not 0 < epsilon < 1:
        raise InvalidSpec("epsilon must lie in (0, 1)")
    if q < 1:
        raise InvalidSpec("q must be positive")
    u = np.ones(p) if unique_variances is None else np.asarray(unique_variances, dtype=float)
    if u.shape != (p,) or np.any(u < 0):
        raise InvalidSpec("unique variances must be a nonnegative length-p vector")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((p, q)) * (1.0 - epsilon) ** np.arange(q)
    return W * np.sqrt(pi * u / np.sum(W**2, axis=1))[:, None]


def gen_true_params(spec, seed=None):
    """Draw a perfect-simple-structure truth with unit-diagonal covariance."""
    spec.validate()
    rng = np.random.default_rng(seed)
    p, m, k = spec.p, spec.m, spec.loadings_per_factor
    Lam = np.zeros((p, m))
    for j, (lo, hi) in enumerate(spec.loading_ranges):
        Lam[j * k:(j + 1) * k, j] = rng.uniform(lo, hi, k)
    u = 1.0 - np.sum(Lam**2, axis=1)
    W = None
    if spec.model_error is None:
        psi2 = u
        sigma = Lam @ Lam.T + np.diag(psi2)
    else:
        me = spec.model_error
        W = gen_minor_factors(p, me.pi, me.epsilon, me.q, rng, unique_variances=u)
        psi2 = (1.0 - me.pi) * u
        sigma = Lam @ Lam.T + np.diag(psi2) + W @ W.T
    sigma = (sigma + sigma.T) / 2
    if np.abs(np.diag(sigma) - 1.0).max() > 1e-12:
        raise InvalidSpec("generated covariance does not have unit diagonal")
    if np.linalg.eigvalsh(sigma)[0] <= 0:
        raise InvalidSpec("generated covariance is not positive definite")
    return TrueParams(Lam, psi2, sigma, u, W)


def gen_dataset(sigma, n, seed=None):
    """``n`` i.i.d. rows from ``N(0, sigma)`` via the Cholesky factor of ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if n < 2:
        raise InvalidInput("need n >= 2")
    try:
        C = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh((sigma + sigma.T) / 2)
        if w[0] < -1e-10 * max(1.0, abs(w[-1])):
            raise NotPsd("sigma is not positive semidefinite") from None
        C = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, sigma.shape[0])) @ C.T


def se_lambda(lambda_hat, lambda_star):
    """``min_P ||Lambda_hat P - Lambda_star||_F^2`` over orthogonal ``P``."""
    A, B = np.asarray(lambda_hat, float), np.asarray(lambda_star, float)
    if A.shape != B.shape:
        raise InvalidInput(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.sum((A @ procrustes(A, B) - B) ** 2))


def se_total(lambda_hat, psi2_hat, lambda_star, psi2_star):
    psi2_hat, psi2_star = np.ravel(psi2_hat), np.ravel(psi2_star)
    if psi2_hat.shape != psi2_star.shape:
        raise InvalidInput("unique variance vectors differ in length")
    return se_lambda(lambda_hat, lambda_star) + float(np.sum((psi2_hat - psi2_star) ** 2))


@dataclass(frozen=True)
class ReplicationRecord:
    setting: str
    n: int
    rep: int
    estimator: str
    se_lambda: float
    se_total: Optional[float]
    iters: int
    runtime_s: float
    converged: bool

    def csv_row(self):
        def num(x):
            return "" if x is None else repr(float(x))

        return [self.setting, str(self.n), str(self.rep), self.estimator, num(self.se_lambda),
                num(self.se_total), str(self.iters), num(self.runtime_s), "true" if self.converged else "false"]


def _parse_estimator(name):
    base, _, arg = name.partition(":")
    if base not in ESTIMATORS:
        raise InvalidInput(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")
    if arg and base != "mdfa_sparse":
        raise InvalidInput(f"estimator {base} takes no argument")
    try:
        k = int(arg) if arg else None
    except ValueError:
        raise InvalidInput(f"bad sparsity budget in {name!r}") from None
    return base, k


def _setting_index(sid):
    return SETTING_IDS.index(sid) + 1


def replication_streams(seed, setting_id, n, rep):
    """Independent seed sequences for the truth and the data of one replication."""
    base = [int(seed), _setting_index(setting_id), int(n), int(rep)]
    return np.random.SeedSequence(base + [0]), np.random.SeedSequence(base + [1])


def _fit_one(name, X, S, m, truth, options):
    base, k = _parse_estimator(name)
    if base == "pca":
        lam, _ = fit_pca(X, m, options.denominator)
        return se_lambda(lam, truth.loadings), None, 0, True
    if base == "ols":
        res = fit_ols(S, m, options)
    elif base == "mdfa_cov":
        res = fit_mdfa_cov(S, m, options)
    elif base == "mdfa_sparse":
        support = int(np.count_nonzero(truth.loadings))
        res = fit_mdfa(X, m, replace(options, sparsity_k=k or support, keep_scores=False))
    else:
        res = fit_mdfa(X, m, replace(options, keep_scores=False))
    lam, psi2 = res.params.loadings, res.params.psi2
    return (se_lambda(lam, truth.loadings), se_total(lam, psi2, truth.loadings, truth.psi2_eval),
            res.iterations, res.converged)


def run_one_replication(spec, n, rep, estimators, seed, options=None, timing=False):
    options = options or FitOptions()
    truth_ss, data_ss = replication_streams(seed, spec.id, n, rep)
    truth = gen_true_params(spec, truth_ss)
    X = center_columns(gen_dataset(truth.sigma, n, data_ss))
    S = covariance(X, options.denominator)
    out = []
    for name in estimators:
        t0 = time.perf_counter()
        try:
            se_l, se_t, iters, conv = _fit_one(name, X, S, spec.m, truth, options)
        except (MDFAError, np.linalg.LinAlgError, FloatingPointError):
            se_l, se_t, iters, conv = math.nan, (None if name == "pca" else math.nan), 0, False
        elapsed = time.perf_counter() - t0 if timing else 0.0
        out.append(ReplicationRecord(spec.id, n, rep, name, se_l, se_t, iters, elapsed, conv))
    return out


def _run_task(args):
    return run_one_replication(*args)


def run_replications(settings: Sequence[SettingSpec], n_grid, reps, estimators, seed,
                     workers=1, options=None, timing=False):
    """Run every (setting, n, replication) cell and return the records in grid order.

    Each replication draws a fresh truth and dataset from streams derived
    from ``(seed, setting, n, rep)``, so the table does not depend on
    ``workers``. Runtimes are recorded only when ``timing`` is set (they are
    0.0 otherwise, which keeps the output byte-reproducible).
    """
    for name in estimators:
        _parse_estimator(name)
    estimators = tuple(estimators)
    for spec in settings:
        spec.validate()
        for n in n_grid:
            if n <= spec.m + spec.p:
                raise InvalidInput(f"n={n} too small for {spec.id} (p={spec.p}, m={spec.m})")
    tasks = [(spec, int(n), r, estimators, seed, options, timing)
             for spec in settings for n in n_grid for r in range(reps)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
            results = list(chunks)
    else:
        results = [_run_task(t) for t in tasks]
    return [rec for chunk in results for rec in chunk]


def records_to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow(rec.csv_row())
    return buf.getvalue()


def records_to_jsonl(records):
    lines = []
    for rec in records:
        d = asdict(rec)
        for key in ("se_lambda", "se_total"):
            if d[key] is not None and not math.isfinite(d[key]):
                d[key] = None
        lines.append(json.dumps(d, sort_keys=False))
    return "\n".join(lines) + ("\n" if lines else "")


def read_records_csv(text):
    """Inverse of :func:`records_to_csv`."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise InvalidInput("not a replication table: unexpected header")
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(CSV_HEADER):
            raise InvalidInput(f"line {i}: expected {len(CSV_HEADER)} fields")
        try:
            out.append(ReplicationRecord(
                r[0], int(r[1]), int(r[2]), r[3], float(r[4]),
                float(r[5]) if r[5] else None, int(r[6]), float(r[7]), r[8] == "true",
            ))
        except ValueError as exc:
            raise InvalidInput(f"line {i}: {exc}") from None
    return out


SUMMARY_HEADER = ("setting", "n", "estimator", "reps", "failures",
                  "mean_se_lambda", "mean_se_total", "median_se_lambda")


def summarize(records):
    """Mean and median errors per (setting, n, estimator), in first-seen order."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.setting, rec.n, rec.estimator), []).append(rec)
    rows = []
    for (sid, n, est), recs in groups.items():
        sl = np.array([r.se_lambda for r in recs], dtype=float)
        st = np.array([np.nan if r.se_total is None else r.se_total for r in recs], dtype=float)
        ok = np.isfinite(sl)
        rows.append({
            "setting": sid, "n": n, "estimator": est, "reps": len(recs),
            "failures": int(np.sum(~ok)),
            "mean_se_lambda": float(np.mean(sl[ok])) if ok.any() else math.nan,
            "mean_se_total": float(np.mean(st[np.isfinite(st)])) if np.isfinite(st).any() else None,
            "median_se_lambda": float(np.median(sl[ok])) if ok.any() else math.nan,
        })
    return rows


def summary_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                    for k in SUMMARY_HEADER])
    return buf.getvalue()
