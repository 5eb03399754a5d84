"""Monte-Carlo experiments, CSV tables and run manifests.

Every experiment is a loop over independent trials. Trial ``t`` draws all
of its randomness from ``trial_seed(cfg.seed, t)``, so any subset of
trials can be replayed on its own. Within a trial the same channel, data
and unit-variance noise draw are reused at every SNR point (common random
numbers), which keeps sweep curves smooth at modest trial counts.

Trials run inline unless ``OTFS_SBL_WORKERS`` asks for a process pool;
results are always reassembled in trial order, so the CSV bytes do not
depend on the worker count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..dd_channel import (apply_channel, channel_to_grid, data_mask, gen_channel,
                          make_pilot_frame, noise_var_from_snr)
from ..detector import EffectiveChannel, detect_lmmse, detect_mp, qam4
from ..errors import DivergenceError, InfeasibleError
from ..estimator import (SOLVERS, build_measurement, measurement_from_arrays,
                         nmse, omp_default_sparsity)
from .config import ExperimentConfig

__all__ = [
    "WORKERS_ENV",
    "trial_seed",
    "generic_cs_problem",
    "ExperimentResult",
    "run_experiment",
    "run_nmse_sweep",
    "run_ber_sweep",
    "run_convergence",
    "run_success_rate",
    "write_csv",
    "emit_manifest",
    "load_manifest",
    "rerun_from_manifest",
]

WORKERS_ENV = "OTFS_SBL_WORKERS"
_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
CSV_HEADER = ("experiment", "algorithm", "{x}", "stat", "value", "n_trials")
# solver failures that are recorded per cell instead of aborting the run
_RECOVERABLE = (DivergenceError, InfeasibleError, np.linalg.LinAlgError,
                FloatingPointError)


def trial_seed(base, t):
    """Seed of trial ``t``: ``base XOR (t * golden-ratio constant) mod 2**64``."""
    return (int(base) ^ ((int(t) * _GOLDEN) & _MASK)) & _MASK


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def generic_cs_problem(rng, Q, R, K, snr_db=None, dictionary="gaussian"):
    """Random ``K``-sparse recovery problem with a dense dictionary.

    ``Phi`` has i.i.d. circular Gaussian entries and unit-norm columns;
    the nonzero coefficients are CN(0, 1). The noise variance is set from
    the mean received power per entry, ``mean |Phi h|^2 / 10^(snr/10)``.
    Returns ``(Measurement, h_true)``.
    """
    if dictionary != "gaussian":
        raise ValueError(f"unknown dictionary {dictionary!r}")
    if K > R:
        raise InfeasibleError(f"sparsity {K} exceeds length {R}")
    Phi = _cn(rng, (Q, R))
    Phi /= np.linalg.norm(Phi, axis=0)
    h = np.zeros(R, dtype=complex)
    support = rng.choice(R, K, replace=False)
    h[support] = _cn(rng, K)
    y = Phi @ h
    noise_var = 0.0
    if snr_db is not None:
        noise_var = float(np.mean(np.abs(y) ** 2) / 10.0 ** (snr_db / 10.0))
        y = y + np.sqrt(noise_var) * _cn(rng, Q)
    return measurement_from_arrays(y, Phi, noise_var), h


def _hyper_for(cfg, noise_var):
    if cfg.noise_model == "known" and noise_var > 0:
        return replace(cfg.hyper, noise_precision=1.0 / noise_var)
    return cfg.hyper


def _estimate(cfg, algo, m, noise_var, budget, h_true=None):
    """Run one solver; ``budget`` is the OMP atom count when not residual-stopped."""
    if algo == "omp":
        if cfg.omp_stop == "residual" and noise_var > 0:
            return SOLVERS["omp"](m, residual_tol=np.sqrt(m.Q * noise_var),
                                  h_true=h_true)
        return SOLVERS["omp"](m, sparsity=min(budget, m.Q), h_true=h_true)
    return SOLVERS[algo](m, _hyper_for(cfg, noise_var), h_true=h_true)


def _record(x, algo, res, value, seconds):
    return {
        "x": x, "algo": algo, "value": value,
        "iterations": res.iterations, "converged": bool(res.converged),
        "guard_hits": res.guard_hits, "rho_saturations": res.rho_saturations,
        "fallbacks": res.fallbacks, "seconds": seconds, "error": None,
    }


def _failure(x, algo, exc, seconds):
    return {
        "x": x, "algo": algo, "value": np.nan, "iterations": 0,
        "converged": False, "guard_hits": 0, "rho_saturations": 0,
        "fallbacks": 0, "seconds": seconds,
        "error": f"{type(exc).__name__}: {exc}",
    }


def _timed_estimate(cfg, algo, m, noise_var, budget, h_true, x, score):
    t0 = time.perf_counter()
    try:
        res = _estimate(cfg, algo, m, noise_var, budget, h_true)
        value = score(res)
    except _RECOVERABLE as exc:
        return None, _failure(x, algo, exc, time.perf_counter() - t0)
    return res, _record(x, algo, res, value, time.perf_counter() - t0)


# trial bodies (top level so a process pool can pickle them)

def _otfs_draw(cfg, t, with_data):
    rng = np.random.default_rng(trial_seed(cfg.seed, t))
    params, layout = cfg.params, cfg.layout()
    channel = gen_channel(params, cfg.paths, cfg.fractional, cfg.pdp, rng)
    pilot = make_pilot_frame(params, layout)
    bits = None
    tx = pilot
    if with_data:
        const = qam4()
        n_data = int(data_mask(params, layout).sum())
        bits = rng.integers(0, 2, n_data * const.bits_per_symbol).astype(np.int8)
        tx = make_pilot_frame(params, layout, const.modulate(bits))
    noise = _cn(rng, (params.N, params.M))
    clean = apply_channel(tx, channel.paths, params)
    return channel, pilot, tx, bits, noise, clean


def _nmse_trial(cfg, t):
    params, layout = cfg.params, cfg.layout()
    channel, pilot, _, _, noise, clean = _otfs_draw(cfg, t, with_data=False)
    h_true = channel_to_grid(channel, params, layout)
    budget = omp_default_sparsity(cfg.paths, params.eta)
    out = []
    for snr in cfg.snr_db:
        nv = noise_var_from_snr(snr)
        rx = clean + np.sqrt(nv) * noise
        m = build_measurement(rx, pilot, layout, params, nv)
        for algo in cfg.algorithms:
            _, rec = _timed_estimate(cfg, algo, m, nv, budget, None, snr,
                                     lambda r: nmse(h_true, r.h_hat))
            out.append(rec)
    return out


def _detect(cfg, rx, chan, nv, pilot, bits):
    det = cfg.detector
    if det.kind == "mp":
        return detect_mp(rx, chan, nv, cfg.params, cfg.layout(), pilot, bits,
                         max_iter=det.max_iter, damping=det.damping)
    return detect_lmmse(rx, chan, nv, cfg.params, cfg.layout(), pilot, bits)


def _ber_trial(cfg, t):
    params, layout = cfg.params, cfg.layout()
    channel, pilot, _, bits, noise, clean = _otfs_draw(cfg, t, with_data=True)
    budget = omp_default_sparsity(cfg.paths, params.eta)
    out = []
    for snr in cfg.snr_db:
        nv = noise_var_from_snr(snr)
        rx = clean + np.sqrt(nv) * noise
        t0 = time.perf_counter()
        rep = _detect(cfg, rx, EffectiveChannel.from_channel(channel), nv, pilot, bits)
        rec = {"x": snr, "algo": "perfect", "value": float(round(rep.ber * bits.size)),
               "iterations": rep.iterations, "converged": rep.converged,
               "guard_hits": 0, "rho_saturations": 0, "fallbacks": rep.fallbacks,
               "seconds": time.perf_counter() - t0, "error": None,
               "bits": int(bits.size)}
        out.append(rec)
        m = build_measurement(rx, pilot, layout, params, nv)
        for algo in cfg.algorithms:
            t0 = time.perf_counter()
            res, rec = _timed_estimate(cfg, algo, m, nv, budget, None, snr,
                                       lambda r: np.nan)
            if res is not None:
                chan = EffectiveChannel.from_estimate(res.h_hat, params, layout,
                                                      cfg.detector.prune)
                rep = _detect(cfg, rx, chan, nv, pilot, bits)
                rec["value"] = float(round(rep.ber * bits.size))
                rec["fallbacks"] += rep.fallbacks
                rec["seconds"] = time.perf_counter() - t0
            rec["bits"] = int(bits.size)
            out.append(rec)
    return out


def _cs_trial(cfg, t, Q=None):
    cs = cfg.cs
    Q = cs.measurements if Q is None else Q
    seq = np.random.SeedSequence([trial_seed(cfg.seed, t), Q])
    return generic_cs_problem(np.random.default_rng(seq), Q, cs.length,
                              cs.sparsity, cs.snr_db, cs.dictionary)


def _convergence_trial(cfg, t):
    m, h = _cs_trial(cfg, t)
    out = []
    for algo in cfg.algorithms:
        res, rec = _timed_estimate(cfg, algo, m, m.noise_var, cfg.cs.sparsity, h,
                                   "all", lambda r: nmse(h, r.h_hat))
        if res is not None:
            rec["trace_nmse"] = list(res.trace.nmse_db)
            rec["trace_rel"] = list(res.trace.rel_change)
        out.append(rec)
    return out


def _success_trial(cfg, t):
    out = []
    for Q in cfg.cs.m_grid:
        m, h = _cs_trial(cfg, t, Q)
        for algo in cfg.algorithms:
            _, rec = _timed_estimate(
                cfg, algo, m, m.noise_var, cfg.cs.sparsity, None, int(Q),
                lambda r: float(nmse(h, r.h_hat) <= cfg.cs.success_db))
            out.append(rec)
    return out


_TRIALS = {
    "nmse_sweep": _nmse_trial,
    "ber_sweep": _ber_trial,
    "convergence": _convergence_trial,
    "success_rate": _success_trial,
}
_X_NAME = {"nmse_sweep": "snr_db", "ber_sweep": "snr_db",
           "convergence": "iteration", "success_rate": "m_count"}


def _workers():
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer")
    return n


def _run_trials(cfg, body):
    fn = partial(body, cfg)
    trials = range(cfg.trials)
    n = min(_workers(), cfg.trials)
    if n == 1:
        return [fn(t) for t in trials]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, trials))


@dataclass
class ExperimentResult:
    """Rows of the CSV plus the per-trial records behind them."""

    config: ExperimentConfig
    rows: list
    records: list
    seeds: list
    wall_clock: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    failures: int = 0
    fatal_cells: list = field(default_factory=list)

    @property
    def x_name(self):
        return _X_NAME[self.config.experiment]

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([h.format(x=self.x_name) for h in CSV_HEADER])
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def table(self):
        """Rows keyed by ``(algorithm, x, stat)``."""
        return {(r[1], r[2], r[3]): r[4] for r in self.rows}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _cells(records):
    cells = {}
    for trial in records:
        for rec in trial:
            cells.setdefault((rec["x"], rec["algo"]), []).append(rec)
    return cells


def _series_order(cfg, extra=()):
    return list(extra) + list(cfg.algorithms)


def _mean_db(values):
    return float(10.0 * np.log10(np.mean(10.0 ** (np.asarray(values) / 10.0))))


def _aggregate(cfg, records):
    exp = cfg.experiment
    cells = _cells(records)
    rows, clock, fatal = [], {}, []
    counters = {"guard_hits": 0, "rho_saturations": 0, "fallbacks": 0}
    failures = 0
    extra = ("perfect",) if exp == "ber_sweep" else ()
    xs = {"nmse_sweep": cfg.snr_db, "ber_sweep": cfg.snr_db,
          "convergence": ("all",),
          "success_rate": tuple(int(q) for q in cfg.cs.m_grid)}[exp]
    for x in xs:
        for algo in _series_order(cfg, extra):
            recs = cells.get((x, algo), [])
            ok = [r for r in recs if r["error"] is None]
            for r in recs:
                for key in counters:
                    counters[key] += int(r[key])
            n_fail = len(recs) - len(ok)
            failures += n_fail
            clock[f"{algo}@{x}"] = float(sum(r["seconds"] for r in recs))
            if not ok:
                fatal.append(f"{algo}@{x}")
                rows.append((exp, algo, x, "failures", n_fail, 0))
                continue
            n = len(ok)
            vals = np.array([r["value"] for r in ok], dtype=float)
            iters = np.array([r["iterations"] for r in ok], dtype=float)
            if exp == "nmse_sweep":
                stats = [("mean_nmse_db", _mean_db(vals)),
                         ("median_nmse_db", float(np.median(vals))),
                         ("std_nmse_db", float(np.std(vals))),
                         ("median_iterations", float(np.median(iters)))]
            elif exp == "ber_sweep":
                bits = sum(r["bits"] for r in ok)
                stats = [("ber", float(vals.sum() / bits)),
                         ("bit_errors", float(vals.sum())),
                         ("bits", float(bits))]
            elif exp == "success_rate":
                stats = [("success_rate", float(vals.mean()))]
            else:
                stats = _convergence_stats(ok, vals, iters)
            stats.append(("failures", float(n_fail)))
            rows.extend((exp, algo, x, s, v, n) for s, v in stats)
            if exp == "convergence":
                rows.extend(_trace_rows(exp, algo, ok))
    return rows, clock, counters, failures, fatal


def _monotone_after(rel, start=5):
    tail = np.asarray(rel[start:], dtype=float)
    if tail.size < 2:
        return True
    return bool(np.all(tail[1:] <= tail[:-1]))


def _convergence_stats(ok, vals, iters):
    conv = np.array([r["converged"] for r in ok], dtype=float)
    mono = np.array([_monotone_after(r["trace_rel"]) for r in ok], dtype=float)
    return [("median_iterations", float(np.median(iters))),
            ("mean_iterations", float(np.mean(iters))),
            ("median_final_nmse_db", float(np.median(vals))),
            ("mean_final_nmse_db", _mean_db(vals)),
            ("converged_fraction", float(conv.mean())),
            ("monotone_rel_change_fraction", float(mono.mean()))]


def _trace_rows(exp, algo, ok):
    """Per-iteration medians; finished traces hold their final value."""
    n_it = max(len(r["trace_nmse"]) for r in ok)
    grid = np.full((len(ok), n_it), np.nan)
    for i, r in enumerate(ok):
        tr = np.asarray(r["trace_nmse"], dtype=float)
        if tr.size:
            grid[i, :tr.size] = tr
            grid[i, tr.size:] = tr[-1]
    rows = []
    running = np.array([[len(r["trace_nmse"]) > j for j in range(n_it)] for r in ok])
    for j in range(n_it):
        col = grid[:, j]
        rows.append((exp, algo, j + 1, "median_nmse_db", float(np.median(col)), len(ok)))
        rows.append((exp, algo, j + 1, "running_fraction",
                     float(running[:, j].mean()), len(ok)))
    return rows


def run_experiment(cfg):
    """Run ``cfg.experiment`` and return an :class:`ExperimentResult`."""
    body = _TRIALS[cfg.experiment]
    t0 = time.perf_counter()
    records = _run_trials(cfg, body)
    rows, clock, counters, failures, fatal = _aggregate(cfg, records)
    clock["total"] = time.perf_counter() - t0
    seeds = [trial_seed(cfg.seed, t) for t in range(cfg.trials)]
    return ExperimentResult(cfg, rows, records, seeds, clock, counters,
                            failures, fatal)


def _checked(cfg, kind):
    if cfg.experiment != kind:
        cfg = cfg.replace(experiment=kind)
    return run_experiment(cfg)


def run_nmse_sweep(cfg):
    """Channel-estimation NMSE versus SNR for every configured solver."""
    return _checked(cfg, "nmse_sweep")


def run_ber_sweep(cfg):
    """Detection BER versus SNR with estimated CSI and a perfect-CSI reference."""
    return _checked(cfg, "ber_sweep")


def run_convergence(cfg):
    """Per-iteration NMSE traces on the generic compressed-sensing problem."""
    return _checked(cfg, "convergence")


def run_success_rate(cfg):
    """Fraction of trials with NMSE below the success gate, per measurement count."""
    return _checked(cfg, "success_rate")


def write_csv(result, out_dir):
    """Write ``<experiment>.csv`` into ``out_dir`` and return its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{result.config.experiment}.csv"
    path.write_bytes(result.csv_text().encode())
    return path


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def emit_manifest(cfg, result, out_dir, csv_path=None):
    """Write ``<experiment>_manifest.json`` beside the CSV.

    The manifest echoes the full config and records trial seeds, software
    versions, wall-clock per cell, guard counters and the CSV digest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if csv_path is None:
        csv_path = write_csv(result, out_dir)
    manifest = {
        "config": cfg.to_dict(),
        "trial_seeds": [str(s) for s in result.seeds],
        "software": {"otfs_sbl": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_clock_s": result.wall_clock,
        "counters": result.counters,
        "failures": result.failures,
        "fatal_cells": result.fatal_cells,
        "csv": {"file": Path(csv_path).name, "sha256": _sha256(csv_path)},
    }
    path = out_dir / f"{cfg.experiment}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path):
    data = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(data["config"]), data


def rerun_from_manifest(path, out_dir):
    """Replay a manifest into ``out_dir``.

    Returns ``(csv_path, matches)`` where ``matches`` says whether the new
    CSV digest equals the recorded one.
    """
    cfg, data = load_manifest(path)
    result = run_experiment(cfg)
    csv_path = write_csv(result, out_dir)
    return csv_path, _sha256(csv_path) == data["csv"]["sha256"]
