"""Command line experiment runner.

``srdlab <experiment> --config FILE`` validates the configuration, runs one
experiment and writes ``results.json``, ``summary.txt`` and CSV traces into the
output directory.  ``srdlab replay results.json`` re-runs a stored experiment
and compares every record bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig, format_validation_error, load_raw, parse_config
from .coupling import CouplingSchedule, run_coupling_batch
from .drift import check_dimension_condition, compute_lambda, validate_dissipativity, validate_growth
from .ergodic import ErgodicRunSpec, NormFunctional, kb_average, tightness_functionals, tv_decay_profile, \
    two_chain_convergence
from .errors import BlowUpError, ConfigurationError, DomainError, SafeguardError, UnreplayableError
from .integrator import Model, pair_distance_batch, simulate_batch
from .montecarlo import (VIOLATED, ObservableSpec, check_entropy_bound, check_gradient_estimate,
                         check_log_harnack, check_power_harnack, check_power_moment, default_menu)
from .noise import (gamma_series_integrated, g_inverse_norm, ou_moment_estimate, ou_stationary_variance,
                    ou_transition_check, sample_ou_marginal, sobolev_moment_estimate)
from .spectral import lp_norm_array
from .stats import Estimate, RunningStats

ENV_OUT = "SRDLAB_OUT"
VOLATILE = ("wall_clock_s", "timestamp")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_UNREPLAYABLE = 0, 1, 2, 3


class Recorder:
    """Collects output records and columnar tables for one run."""

    def __init__(self, cfg: ExperimentConfig, experiment: str):
        self.cfg = cfg
        self.experiment = experiment
        self.hash = cfg.config_hash()
        self.records: list[dict] = []
        self.tables: dict[str, tuple[list[str], list[list]]] = {}
        self.failed = False
        self._t = time.perf_counter()

    def add(self, quantity: str, passed: bool | None = None, verdict: str | None = None, **payload) -> dict:
        now = time.perf_counter()
        rec = {
            "quantity": quantity,
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "version": __version__,
            "wall_clock_s": round(now - self._t, 3),
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        self._t = now
        if verdict is not None:
            rec["verdict"] = verdict
            if verdict == VIOLATED:
                self.failed = True
        if passed is not None:
            rec["passed"] = bool(passed)
            if not passed:
                self.failed = True
        rec.update(_plain(payload))
        self.records.append(rec)
        return rec

    def report(self, r) -> dict:
        body = r.as_dict()
        body.pop("quantity")
        return self.add(r.quantity, verdict=body.pop("verdict"), **body)

    def table(self, name: str, columns: list[str], rows) -> None:
        self.tables[name] = (columns, [list(r) for r in rows])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Estimate):
        return obj.as_dict()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ----------------------------------------------------------------------
# experiments


def run_simulate(cfg: ExperimentConfig, rec: Recorder) -> None:
    prm = cfg.experiment("simulate")
    model, scheme = cfg.build_model(), cfg.build_scheme()
    x0 = cfg.field(prm.x0)
    times = sorted(prm.observe_times)
    kw = dict(n_workers=cfg.n_workers, block_size=cfg.block_size)
    states = simulate_batch(model, scheme, x0, prm.T, prm.n_paths, role="main", record_times=times, **kw)
    rows = []
    for j, t in enumerate(times):
        est = RunningStats.from_values(model.norm(states[:, j])).estimate()
        rec.add("lp_norm_mean", t=t, p=model.p, estimate=est)
        rows.append([t, est.mean, est.stderr])
    cols = ["t", "mean_norm", "stderr"]
    if prm.y0 is not None:
        y0 = cfg.field(prm.y0)
        d0 = float(lp_norm_array(x0.coeffs - y0.coeffs, model.p, model.grid.n_quad))
        dist = pair_distance_batch(model, scheme, x0, y0, prm.T, prm.n_paths, times, role="main", **kw)
        lam = model.lam
        tol = prm.contraction_tol_factor * scheme.dt
        for j, t in enumerate(times):
            bound = (1 + tol) * math.exp(-lam * t) * d0
            violations = int(np.count_nonzero(dist[:, j] > bound))
            rec.add("contraction", passed=violations == 0, t=t, bound=bound, rate=lam,
                    max_distance=float(dist[:, j].max()), violations=violations, n_paths=prm.n_paths)
            rows[j] += [float(dist[:, j].max()), bound, violations]
        cols += ["max_distance", "bound", "violations"]
    rec.table("simulate", cols, rows)


def _coupling_records(rec: Recorder, model: Model, batch, x0, y0, T: float) -> None:
    rec.add("coupling_success", passed=batch.success_rate == 1.0, success_rate=batch.success_rate,
            n_paths=batch.n_paths, eps_couple=batch.eps_couple, dt=batch.dt,
            safeguard_trips=batch.safeguard_trips, max_tau=float(np.nanmax(batch.tau)) if
            np.any(batch.coupled) else None)
    viol = int(np.count_nonzero(batch.margin < 0))
    rec.add("pathwise_certificate", passed=viol == 0, min_margin=float(batch.margin.min()),
            rhs=batch.cert_rhs, violations=viol)
    for s in batch.record_times:
        est = RunningStats.from_values(np.exp(batch.log_m_at(s))).estimate()
        rec.add("girsanov_martingale", passed=abs(est.mean - 1) <= 4 * est.stderr, s=s, estimate=est)
    g = g_inverse_norm(model.noise)
    d0 = float(lp_norm_array(x0.coeffs - y0.coeffs, model.p, model.grid.n_quad))
    sched = CouplingSchedule(model.lam, T)
    nov = 0.5 * g**2 * batch.cert_rhs
    rec.add("novikov_energy", passed=bool(batch.v_energy.max() <= nov), max_v_energy=float(batch.v_energy.max()),
            bound=nov, closed_form=0.5 * g**2 * d0**2 / sched.gamma0)


def run_couple(cfg: ExperimentConfig, rec: Recorder) -> None:
    prm = cfg.experiment("couple")
    model, scheme = cfg.build_model(), cfg.build_scheme()
    x0, y0 = cfg.field(prm.x0), cfg.field(prm.y0)
    batch = run_coupling_batch(model, scheme, x0, y0, prm.T, prm.n_paths, eps=prm.eps_couple,
                               n_workers=cfg.n_workers, block_size=cfg.block_size)
    _coupling_records(rec, model, batch, x0, y0, prm.T)
    for r in (check_entropy_bound(x0, y0, prm.T, model, scheme, coupling=batch),
              check_power_moment(x0, y0, prm.T, 2.0, model, scheme, coupling=batch)):
        rec.report(r)
    rec.table("couple_paths", ["path", "coupled", "tau", "log_m_T", "v_energy", "margin"],
              [[i, int(batch.coupled[i]), batch.tau[i], batch.log_m_final[i], batch.v_energy[i], batch.margin[i]]
               for i in range(batch.n_paths)])


def run_harnack(cfg: ExperimentConfig, rec: Recorder) -> None:
    prm = cfg.experiment("harnack")
    model, scheme = cfg.build_model(), cfg.build_scheme()
    x0, y0 = cfg.field(prm.x0), cfg.field(prm.y0)
    kw = dict(n_workers=cfg.n_workers, block_size=cfg.block_size)
    batch = run_coupling_batch(model, scheme, x0, y0, prm.T, prm.n_paths_coupling, **kw)
    _coupling_records(rec, model, batch, x0, y0, prm.T)
    reports = [check_entropy_bound(x0, y0, prm.T, model, scheme, coupling=batch)]
    reports += [check_power_moment(x0, y0, prm.T, s, model, scheme, coupling=batch) for s in prm.s_values]
    menu = default_menu(model, scheme, x0, prm.T, prm.ball_radius, prm.ball_floor)
    for phi in menu:
        for a, b, roles in ((x0, y0, ("x", "y")), (y0, x0, ("y", "x"))):
            reports.append(check_log_harnack(phi, a, b, prm.T, model, scheme, prm.n_paths, roles=roles, **kw))
            for s in prm.s_values:
                reports.append(check_power_harnack(phi, a, b, prm.T, s, model, scheme, prm.n_paths,
                                                   roles=roles, **kw))
    if prm.gradient is not None:
        gp = prm.gradient
        reports.append(check_gradient_estimate(menu[0], x0, cfg.field(gp.direction), gp.eps, prm.T, model,
                                               scheme, gp.n_paths, **kw))
    rows = []
    for r in reports:
        rec.report(r)
        rows.append([r.quantity, r.details.get("observable", ""), r.details.get("s", ""), r.lhs.mean,
                     r.lhs.stderr, r.rhs.mean, r.rhs.stderr, r.bound_constant, r.verdict])
    rec.table("harnack", ["quantity", "observable", "s", "lhs", "lhs_stderr", "rhs", "rhs_stderr",
                          "constant", "verdict"], rows)


def _ergodic_observables(model: Model) -> list:
    n = model.grid.n_modes
    from .spectral import SpectralField

    return [ObservableSpec("linear_mode"), ObservableSpec("bounded_trig"),
            ObservableSpec("clipped_exponential"), ObservableSpec.ball(SpectralField.zeros(n), 0.3, 0.1),
            NormFunctional("lp_power", model.p)] + tightness_functionals(model)


def run_ergodic(cfg: ExperimentConfig, rec: Recorder) -> None:
    from dataclasses import replace

    from .drift import DriftSpec

    prm = cfg.experiment("ergodic")
    model, scheme = cfg.build_model(), cfg.build_scheme()
    obs = _ergodic_observables(model)
    spec = ErgodicRunSpec(prm.horizon, prm.observation_stride, obs, prm.burn_in,
                          tuple(prm.horizons), prm.n_batches)
    kb = kb_average(spec, model, scheme)
    for f in tightness_functionals(model):
        rec.add("kb_tightness", passed=kb.bounded(f.label), functional=f.label,
                horizons=list(kb.horizons), estimates=list(kb.values[f.label]), growth_sigma=kb.growth(f.label))
    x0, y0 = cfg.field(prm.x0), cfg.field(prm.y0)
    tc = two_chain_convergence(x0, y0, spec, model, scheme)
    rows = []
    for label in tc.z_scores:
        a, b = tc.chain_x.at(label), tc.chain_y.at(label)
        rec.add("two_chain_agreement", passed=tc.agree[label], observable=label, chain_x=a, chain_y=b,
                z=tc.z_scores[label])
        rows.append([label, a.mean, a.stderr, b.mean, b.stderr, tc.z_scores[label]])
    rec.add("contraction_envelope", passed=tc.envelope_ok, ratio_max=tc.envelope_ratio_max, rate=tc.lam)
    rec.table("two_chain", ["observable", "mean_x", "stderr_x", "mean_y", "stderr_y", "z"], rows)
    rec.table("envelope", ["t", "distance"], zip(tc.envelope_times.tolist(), tc.envelope_distance.tolist()))
    if prm.control:
        lin = replace(model, drift=DriftSpec.zero())
        ctl_spec = ErgodicRunSpec(prm.horizon, prm.observation_stride, [NormFunctional("lp_power", 2)],
                                  prm.burn_in, (), prm.n_batches)
        est = kb_average(ctl_spec, lin, scheme, role="control").at("lp_power(2)")
        full = gamma_series_integrated(model.noise.theta_noise, model.grid.n_modes)
        tail = model.noise.amplitude**2 * (full.value - full.partial_sum)
        corrected = Estimate(est.mean + tail, est.stderr, est.n_samples)
        ok = abs(corrected.mean - model.noise.amplitude**2 * full.value) <= 3 * est.stderr
        rec.add("linear_control", passed=ok, estimate=est, tail=tail, corrected=corrected,
                target=model.noise.amplitude**2 * full.value)
    if prm.tv_times:
        tv = tv_decay_profile(cfg.field(prm.tv_x0), cfg.field(prm.tv_y0), prm.tv_times, model, scheme, prm.tv_paths,
                              n_workers=cfg.n_workers, block_size=cfg.block_size)
        body = tv.as_dict()
        rec.add("tv_decay", passed=body.pop("envelope_ok"), **body)
        rec.table("tv", ["t", "coupling_bound", "coupling_stderr", "entropy_bound"],
                  [[t, c.mean, c.stderr, e] for t, c, e in zip(tv.times, tv.coupling_bound, tv.entropy_bound)])


def run_noise_diag(cfg: ExperimentConfig, rec: Recorder) -> None:
    prm = cfg.experiment("noise-diag")
    model = cfg.build_model()
    noise = model.noise
    kw = dict(n_workers=cfg.n_workers, block_size=cfg.block_size)
    series = gamma_series_integrated(noise.theta_noise, noise.n_modes)
    rec.add("gamma_series", value=series.value, partial_sum=series.partial_sum, tail_bound=series.tail_bound,
            n_terms=series.n_terms)
    x0 = cfg.field({1: 1.0, 2: -0.5})
    chk = ou_transition_check(noise, x0, prm.dt_transition, prm.n_paths, **kw)
    rec.add("ou_transition", passed=chk.passed(4.0), max_abs_z=chk.max_abs_z, n_samples=chk.n_samples,
            dt=prm.dt_transition)
    w = sample_ou_marginal(noise, prm.t, prm.n_paths, role="reference", **kw)
    raw = RunningStats.from_values(np.sum(w * w, axis=-1)).estimate()
    trunc = float(np.sum(ou_stationary_variance(noise) * -np.expm1(-2 * model.grid.eigenvalues * prm.t)))
    tail = noise.amplitude**2 * (series.value - series.partial_sum)
    target = noise.amplitude**2 * series.value
    rec.add("stationary_l2_truncated", passed=abs(raw.mean - trunc) <= 3 * raw.stderr, estimate=raw,
            target=trunc, t=prm.t)
    rec.add("stationary_l2", passed=abs(raw.mean + tail - target) <= 3 * raw.stderr, estimate=raw, tail=tail,
            target=target, t=prm.t)
    mom = ou_moment_estimate(noise, prm.t, prm.p_norm, prm.moment, prm.n_paths, model.grid.n_quad, **kw)
    rec.add("ou_moment", p_norm=prm.p_norm, moment=prm.moment, estimate=mom, t=prm.t)
    if prm.beta0 is not None:
        sob = sobolev_moment_estimate(noise, prm.beta0, prm.t, min(prm.n_paths, 5000), model.p,
                                      model.grid.n_quad, **kw)
        rec.add("sobolev_moment", beta0=prm.beta0, estimate=sob, t=prm.t)
    rec.table("ou_transition", ["mode", "mean_z", "var_z"],
              [[k + 1, chk.mean_z[k], chk.var_z[k]] for k in range(noise.n_modes)])


def run_validate_drift(cfg: ExperimentConfig, rec: Recorder) -> None:
    prm = cfg.experiment("validate-drift")
    d = cfg.drift_spec(validate=False)
    diss = validate_dissipativity(d, prm.grid_radius, prm.grid_step)
    grow = validate_growth(d, prm.grid_radius, prm.grid_step)
    for tag, cert in (("dissipativity_certificate", diss), ("growth_certificate", grow)):
        body = cert.as_dict()
        rec.add(tag, passed=body.pop("passed"), **body)
    lam = compute_lambda(d.L_f, d.theta_diss, d.q, cfg.model.p)
    dim = check_dimension_condition(1, cfg.model.p, d.q)
    rec.add("contraction_rate", rate=lam, p=cfg.model.p)
    rec.add("dimension_condition", passed=dim.passed, bound=dim.bound, note=dim.note)


RUNNERS = {
    "simulate": run_simulate,
    "couple": run_couple,
    "harnack": run_harnack,
    "ergodic": run_ergodic,
    "noise-diag": run_noise_diag,
    "validate-drift": run_validate_drift,
}


# ----------------------------------------------------------------------
# persistence


def execute(cfg: ExperimentConfig, experiment: str) -> tuple[Recorder, str | None]:
    """Run one experiment; failures are captured as an error string."""
    rec = Recorder(cfg, experiment)
    error = None
    try:
        RUNNERS[experiment](cfg, rec)
    except (BlowUpError, SafeguardError, FloatingPointError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        rec.failed = True
    return rec, error


def results_document(rec: Recorder, raw_config: dict, error: str | None, started: str, elapsed: float) -> dict:
    cfg = rec.cfg
    return {
        "meta": {
            "experiment": rec.experiment,
            "config": raw_config,
            "config_hash": rec.hash,
            "seed": cfg.seed,
            "n_workers": cfg.n_workers,
            "block_size": cfg.block_size,
            "version": __version__,
            "started": started,
            "wall_clock_s": round(elapsed, 3),
        },
        "status": "failed" if rec.failed else "ok",
        "error": error,
        "records": rec.records,
    }


def _summary(doc: dict) -> str:
    out = io.StringIO()
    m = doc["meta"]
    out.write(f"experiment {m['experiment']}  seed {m['seed']}  config {m['config_hash'][:12]}  "
              f"version {m['version']}\n")
    out.write(f"status: {doc['status']}\n")
    if doc.get("error"):
        out.write(f"error: {doc['error']}\n")
    for r in doc["records"]:
        flag = r.get("verdict") or ({True: "pass", False: "FAIL"}[r["passed"]] if "passed" in r else "info")
        extra = ""
        if "lhs" in r and "rhs" in r:
            extra = f"  lhs={r['lhs']['mean']:.6g}±{r['lhs']['stderr']:.2g}  rhs={r['rhs']['mean']:.6g}"
        elif "estimate" in r and isinstance(r["estimate"], dict):
            extra = f"  {r['estimate']['mean']:.6g}±{r['estimate']['stderr']:.2g}"
        label = r.get("observable") or r.get("functional") or ""
        out.write(f"  {r['quantity']:<28} {label:<34} {flag}{extra}\n")
    return out.getvalue()


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(out_dir: Path, doc: dict, tables: dict) -> None:
    """Build the run directory next to its destination and move it into place."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_dir.with_name(f".{out_dir.name}.tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    for name, (cols, rows) in tables.items():
        (tmp / f"{name}.csv").write_text(_csv(cols, rows))
    (tmp / "summary.txt").write_text(_summary(doc))
    (tmp / "results.json").write_text(json.dumps(doc, indent=1, allow_nan=False))
    old = None
    if out_dir.exists():
        old = out_dir.with_name(f".{out_dir.name}.old-{os.getpid()}")
        os.replace(out_dir, old)
    os.replace(tmp, out_dir)
    if old is not None:
        shutil.rmtree(old)


def default_out(cfg: ExperimentConfig, experiment: str) -> Path:
    return Path(os.environ.get(ENV_OUT, "srdlab-out")) / f"{cfg.name}-{experiment}"


def run(raw: dict, experiment: str, out_dir: Path | None = None, seed: int | None = None,
        n_workers: int | None = None) -> tuple[int, dict, Path]:
    cfg = parse_config(raw, seed, n_workers)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    rec, error = execute(cfg, experiment)
    stored = dict(raw)
    stored["seed"] = cfg.seed
    doc = results_document(rec, stored, error, started, time.perf_counter() - t0)
    out = Path(out_dir) if out_dir is not None else default_out(cfg, experiment)
    write_outputs(out, doc, rec.tables)
    return (EXIT_FAIL if rec.failed else EXIT_OK), doc, out


def _strip(records: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k not in VOLATILE} for r in records]


def replay(results_file: Path, n_workers: int | None = None) -> tuple[bool, list[str]]:
    """Re-run the experiment stored in ``results_file``; returns (match, differences)."""
    try:
        doc = json.loads(Path(results_file).read_text())
        meta = doc["meta"]
        raw, experiment, seed = meta["config"], meta["experiment"], meta["seed"]
        stored = doc["records"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UnreplayableError(f"{results_file}: missing replay metadata ({exc})") from None
    if seed is None or experiment not in RUNNERS:
        raise UnreplayableError(f"{results_file}: missing seed or unknown experiment")
    cfg = parse_config(raw, seed, n_workers if n_workers is not None else meta.get("n_workers"))
    rec, error = execute(cfg, experiment)
    if error is not None:
        return False, [f"replay failed: {error}"]
    fresh = _strip(json.loads(json.dumps(rec.records)))
    old = _strip(stored)
    diffs = []
    if len(fresh) != len(old):
        diffs.append(f"record count {len(old)} -> {len(fresh)}")
    for i, (a, b) in enumerate(zip(old, fresh)):
        if a != b:
            keys = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
            diffs.append(f"record {i} ({a.get('quantity')}): fields {keys} differ")
    return not diffs, diffs


# ----------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srdlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"srdlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="config file or bundled name "
                       "(allen-cahn-p2, linear-ou, allen-cahn-p4)")
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", type=Path, help=f"output directory (default ${ENV_OUT}/<name>-<experiment>)")
    p = sub.add_parser("replay", help="re-run a results.json and compare")
    p.add_argument("results", type=Path)
    p.add_argument("--workers", type=int)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "replay":
        try:
            ok, diffs = replay(args.results, args.workers)
        except UnreplayableError as exc:
            print(f"unreplayable: {exc}", file=sys.stderr)
            return EXIT_UNREPLAYABLE
        except (ValidationError, ConfigurationError, DomainError) as exc:
            print(f"unreplayable: stored config invalid: {exc}", file=sys.stderr)
            return EXIT_UNREPLAYABLE
        print("match" if ok else "mismatch")
        for d in diffs:
            print(f"  {d}")
        return EXIT_OK if ok else EXIT_FAIL
    try:
        raw = load_raw(args.config)
        code, doc, out = run(raw, args.command, args.out, args.seed, args.workers)
    except ValidationError as exc:
        print("invalid configuration:\n" + format_validation_error(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, DomainError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(_summary(doc))
    print(f"outputs: {out}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
