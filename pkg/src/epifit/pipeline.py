"""End-to-end commands: simulate, fit, select, phase, elicit-ifr,
smooth-proportion.

Each command reads a RunConfig, writes its artifacts under the output
directory, and returns the artifact paths. Artifacts are deterministic for a
fixed config and seed except for the wall-time entries, which live under a
single `timing` key (JSON) or the time column (scores CSV).
"""

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core, data
from .cutfeedback import observed_proportion
from .diagnostics import DiagnosticsResult, diagnostics
from .errors import EstimationError, ParameterError
from .observation import DeathCountPosterior, PriorSpec, AgeCaseMatrix, elicit_ifr
from .phaseplane import (
    SirField,
    Trajectory,
    conserved_q,
    course_from_paths,
    daily_course,
    effectiveness_displacement,
    effectiveness_work,
    speed_series,
)
from .runconfig import RunConfig
from .sampling import SamplerConfig, hmc_sample
from .selection import bridge_log_ml, information_criteria

COMMANDS = ("simulate", "fit", "select", "phase", "elicit-ifr",
            "smooth-proportion")


# ------------------------------------------------------------- construction

def build_model_config(model: dict, n_days) -> core.ModelConfig:
    flags = core.ModelFlags.from_name(model.get("variant", "seir"))
    kwargs = dict(
        flags=flags,
        likelihood=model.get("likelihood", "negbin"),
        infectious_period=int(model.get("infectious_period", 6)),
        exposed_period=int(model.get("exposed_period", 2)),
        immunity_prob_first=float(model.get("immunity_prob_first", 0.4)),
        immunity_prob_second=float(model.get("immunity_prob_second", 0.1)),
    )
    births = model.get("births_per_day", 0.0)
    if isinstance(births, dict):
        births = core.births_per_day(float(births["youngest_count"]),
                                     float(births["width_years"]))
    kwargs["births_per_day"] = float(births)
    if flags.seirs:
        kwargs["waning_delay"] = int(model.get("waning_delay", 0))
        recovery = model.get("recovery_delay")
        if recovery is not None:
            kwargs["recovery_delay"] = tuple(float(v) for v in recovery)
    if "death_delay" in model:
        kwargs["death_delay"] = tuple(tuple(float(v) for v in comp)
                                      for comp in model["death_delay"])
    return core.ModelConfig.build(
        n_days=n_days,
        population=float(model["population"]),
        interior_changepoints=tuple(int(v) for v in model.get("changepoints", ())),
        interior_ifr_breaks=tuple(int(v) for v in model.get("ifr_breaks", ())),
        **kwargs)


def build_priors(model: dict, dataset=None) -> PriorSpec:
    means = model.get("ifr_prior_means", "elicit")
    if means == "elicit":
        if dataset is None or dataset.cases_by_age is None:
            raise ParameterError(
                "ifr_prior_means: elicit needs an age-split case file")
        group_ifr = model.get("group_ifr")
        if group_ifr is None:
            raise ParameterError("eliciting IFR priors needs model.group_ifr")
        acm = AgeCaseMatrix(counts=dataset.cases_by_age,
                            group_ifr=np.asarray(group_ifr, dtype=float))
        n = dataset.n_days
        breaks = (1, *(int(v) for v in model.get("ifr_breaks", ())), n + 1)
        means = elicit_ifr(acm, breaks)
    kwargs = {}
    for key in ("rate_logmean", "rate_logsd", "dispersion_shape",
                "dispersion_rate", "init_cases_shape", "init_cases_rate",
                "mix_scale_logmean", "mix_scale_logsd"):
        if key in model:
            kwargs[key] = float(model[key])
    return PriorSpec(ifr_means=tuple(float(v) for v in means),
                     ifr_sd=float(model.get("ifr_prior_sd", 1e-4)), **kwargs)


def build_sampler_config(sampler: dict, seed) -> SamplerConfig:
    return SamplerConfig(
        warmup=int(sampler.get("warmup", 1000)),
        draws=int(sampler.get("draws", 1000)),
        target_accept=float(sampler.get("target_accept", 0.8)),
        min_leapfrog=int(sampler.get("min_leapfrog", 1)),
        max_leapfrog=int(sampler.get("max_leapfrog", 32)),
        initial_step_size=float(sampler.get("initial_step_size", 0.0)),
        thin=int(sampler.get("thin", 1)),
        seed=int(seed),
    )


# --------------------------------------------------------------------- fit

@dataclass
class FitResult:
    chains: list
    posterior: DeathCountPosterior
    diag: DiagnosticsResult
    model_name: str
    wall_time: float


def fit_posterior(posterior: DeathCountPosterior, sampler_cfg: SamplerConfig,
                  n_chains, model_name="model") -> FitResult:
    """Run the chains and attach log-likelihood matrices and diagnostics."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(sampler_cfg.seed)
    init = posterior.initial_points(rng, n_chains)
    chains = hmc_sample(posterior.log_posterior, None, sampler_cfg,
                        chains=n_chains, init=init,
                        constrain=posterior.constrained_array)
    for chain in chains:
        loglik = np.empty((chain.n_draws, posterior.config.n_days))
        for i, row in enumerate(chain.unconstrained):
            lp, ll = posterior.log_posterior_with_loglik(row)
            loglik[i] = ll
        chain.loglik = loglik
    diag = diagnostics(chains, names=posterior.param_names)
    return FitResult(chains=chains, posterior=posterior, diag=diag,
                     model_name=model_name,
                     wall_time=time.perf_counter() - t0)


def _load_dataset(rc: RunConfig, need_cases=False, need_age=False):
    kwargs = {"deaths": rc.require_data_path("deaths")}
    for key in ("cases", "cases_by_age", "vaccinations"):
        p = rc.data_path(key)
        if p is not None:
            if not p.exists():
                raise ParameterError(f"data file {p} does not exist")
            kwargs[key] = p
    if need_cases and "cases" not in kwargs:
        raise ParameterError("this command needs a recorded-cases file")
    if need_age and "cases_by_age" not in kwargs:
        raise ParameterError("this command needs an age-split case file")
    policy = rc.section("data").get("policy", "strict")
    return data.load_dataset(policy=policy, **kwargs)


def _posterior_for(rc: RunConfig, dataset, model_dict=None):
    model = model_dict if model_dict is not None else rc.section("model")
    cfg = build_model_config(model, dataset.n_days)
    priors = build_priors(model, dataset)
    doses = dataset.vaccinations if cfg.flags.vaccination else None
    if cfg.flags.vaccination and doses is None:
        raise ParameterError("model variant needs a vaccination series")
    return DeathCountPosterior(dataset.deaths, cfg, priors, doses=doses), cfg


FLOAT_FMT = "%.17g"


def _write_draws_csv(path, fit: FitResult, rc: RunConfig):
    names = fit.posterior.param_names
    with open(path, "w", newline="") as handle:
        handle.write(f"# produced-by: epifit fit; model={fit.model_name}; "
                     f"likelihood={fit.posterior.config.likelihood}; "
                     f"seed={rc.seed}; constrained units: rates/day, "
                     "probabilities, counts\n")
        writer = csv.writer(handle)
        writer.writerow(("chain", "draw", "lp") + names)
        for c_idx, chain in enumerate(fit.chains):
            for d_idx in range(chain.n_draws):
                row = [c_idx, d_idx, FLOAT_FMT % chain.lp[d_idx]]
                row += [FLOAT_FMT % v for v in chain.constrained[d_idx]]
                writer.writerow(row)


def load_draws_csv(path):
    """Read a draws CSV back; returns (names, constrained matrix, lp, chain ids)."""
    with open(path, newline="") as handle:
        reader = csv.reader(r for r in handle if not r.startswith("#"))
        header = next(reader)
        names = tuple(header[3:])
        chains, lp, rows = [], [], []
        for raw in reader:
            chains.append(int(raw[0]))
            lp.append(float(raw[2]))
            rows.append([float(v) for v in raw[3:]])
    return names, np.asarray(rows), np.asarray(lp), np.asarray(chains)


def _summary_payload(fit: FitResult, rc: RunConfig, command):
    diag = fit.diag
    names = fit.posterior.param_names
    return {
        "produced_by": f"epifit {command}",
        "command": command,
        "model": fit.model_name,
        "likelihood": fit.posterior.config.likelihood,
        "seed": rc.seed,
        "n_days": fit.posterior.config.n_days,
        "n_chains": len(fit.chains),
        "draws_per_chain": fit.chains[0].n_draws,
        "acceptance": [round(c.meta["accept_rate"], 6) for c in fit.chains],
        "divergences": [c.meta["divergences"] for c in fit.chains],
        "warmup_divergences": [c.meta["warmup_divergences"] for c in fit.chains],
        "step_size": [c.meta["step_size"] for c in fit.chains],
        "rhat": {n: _num(diag.rhat[i]) for i, n in enumerate(names)},
        "ess": {n: _num(diag.ess[i]) for i, n in enumerate(names)},
        "undefined_parameters": [n for i, n in enumerate(names)
                                 if diag.undefined[i]],
        "timing": {"wall_time_sec": fit.wall_time},
    }


def _num(v):
    return None if (v is None or not math.isfinite(v)) else float(v)


def cmd_fit(rc: RunConfig):
    dataset = _load_dataset(rc)
    posterior, cfg = _posterior_for(rc, dataset)
    sampler_cfg = build_sampler_config(rc.section("sampler"), rc.seed)
    n_chains = int(rc.section("sampler").get("chains", 4))
    fit = fit_posterior(posterior, sampler_cfg, n_chains,
                        model_name=cfg.flags.name)
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    draws_path = rc.output_dir / "draws.csv"
    _write_draws_csv(draws_path, fit, rc)
    summary_path = rc.output_dir / "summary.json"
    with open(summary_path, "w") as handle:
        json.dump(_summary_payload(fit, rc, "fit"), handle, indent=2,
                  sort_keys=True)
        handle.write("\n")
    return {"draws": draws_path, "summary": summary_path}


# ---------------------------------------------------------------- simulate

def _synthetic_doses(synth: dict, n):
    per_day = float(synth.get("doses_per_day", 0.0))
    if per_day <= 0:
        return None
    start = int(synth.get("doses_start", 1))
    doses = np.zeros(n)
    doses[start - 1:] = per_day
    return doses


def cmd_simulate(rc: RunConfig):
    synth = rc.section("synthetic")
    if "days" not in synth:
        raise ParameterError("config synthetic.days is required")
    n = int(synth["days"])
    model = rc.section("model")
    cfg = build_model_config(model, n)
    params = core.ParamVector(
        rates=np.asarray(synth["true_rates"], dtype=float),
        ifrs=np.asarray(synth["true_ifrs"], dtype=float),
        dispersion=float(synth.get("true_dispersion", 10.0)),
        init_cases=float(synth.get("true_init_cases", 20.0)),
        mix_scale=float(synth.get("true_mix_scale", 1.0)))
    doses = _synthetic_doses(synth, n)
    if cfg.flags.vaccination and doses is None:
        raise ParameterError("variant has vaccination: set synthetic.doses_per_day")
    from datetime import date as _date
    start = synth.get("start_date", "2020-03-01")
    start = start if isinstance(start, _date) else _date.fromisoformat(str(start))
    dataset, truth = data.generate_synthetic(
        cfg, params, seed=rc.seed,
        reporting_prob=float(synth.get("reporting_prob", 0.25)),
        doses=doses, start=start)
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    written = data.export_dataset(dataset, rc.output_dir,
                                  producer="epifit simulate")
    truth_path = rc.output_dir / "truth.json"
    with open(truth_path, "w") as handle:
        json.dump(truth, handle, indent=2, sort_keys=True)
        handle.write("\n")
    written["truth"] = truth_path
    return written


# ------------------------------------------------------------------ select

def cmd_select(rc: RunConfig):
    select = rc.section("select")
    variants = select.get("variants", ["sir", "sir.dem", "seir", "seir.vacc"])
    if len(variants) < 2:
        raise ParameterError("select needs at least two model variants")
    want_evidence = bool(select.get("evidence", True))
    dataset = _load_dataset(rc)
    sampler_cfg = build_sampler_config(rc.section("sampler"), rc.seed)
    n_chains = int(rc.section("sampler").get("chains", 4))

    scores = []
    for variant in variants:
        model = dict(rc.section("model"))
        model["variant"] = variant
        posterior, cfg = _posterior_for(rc, dataset, model_dict=model)
        fit = fit_posterior(posterior, sampler_cfg, n_chains,
                            model_name=variant)
        score = information_criteria(fit.chains, k=posterior.n_params,
                                     loglik_fn=posterior.per_obs_loglik)
        score.name = variant
        score.wall_time_days = fit.wall_time / 86400.0
        if want_evidence:
            pooled = np.concatenate([c.unconstrained for c in fit.chains])
            try:
                log_ml, err = bridge_log_ml(
                    pooled, posterior.log_posterior, seed=rc.seed,
                    min_draws=int(select.get("evidence_min_draws", 1000)))
                score.log_ml = log_ml
                score.log_ml_mc_error = err
            except EstimationError as exc:
                # an unconverged fit (e.g. chains in different modes) has no
                # usable bridge; leave the evidence blank rather than abort
                warnings.warn(f"evidence for {variant} unavailable: {exc}")
        scores.append(score)

    rc.output_dir.mkdir(parents=True, exist_ok=True)
    path = rc.output_dir / "scores.csv"
    with open(path, "w", newline="") as handle:
        handle.write("# produced-by: epifit select; information criteria per "
                     "model variant; time in days\n")
        writer = csv.writer(handle)
        writer.writerow(("model", "aic", "bic", "dic", "dic2", "waic",
                         "time_days", "log_ml", "log_ml_mc_error"))
        for s in scores:
            writer.writerow((s.name, *(f"{v:.6f}" for v in
                                       (s.aic, s.bic, s.dic, s.dic2, s.waic)),
                             f"{s.wall_time_days:.8f}",
                             "" if math.isnan(s.log_ml) else f"{s.log_ml:.6f}",
                             "" if math.isnan(s.log_ml_mc_error)
                             else f"{s.log_ml_mc_error:.6f}"))
    return {"scores": path}


# ------------------------------------------------------------------- phase

def _median_params(names, matrix, posterior):
    return _params_from_row(names, np.median(matrix, axis=0), posterior)


def cmd_phase(rc: RunConfig):
    phase = rc.section("phase")
    draws_path = Path(phase.get("draws", rc.output_dir / "draws.csv"))
    if not draws_path.exists():
        raise ParameterError(f"phase needs a draws file; {draws_path} is missing")
    dataset = _load_dataset(rc)
    posterior, cfg = _posterior_for(rc, dataset)
    names, matrix, _, _ = load_draws_csv(draws_path)
    params = _median_params(names, matrix, posterior)
    doses = dataset.vaccinations if cfg.flags.vaccination else None
    paths = core.simulate_paths(params, cfg, doses=doses)
    if not paths.valid:
        raise ParameterError("median parameters produce an infeasible trajectory")

    a = int(phase.get("start_day", 1))
    b = int(phase.get("end_day", cfg.n_days))
    if not 1 <= a < b <= cfg.n_days:
        raise ParameterError(f"phase interval [{a}, {b}] outside 1..{cfg.n_days}")
    actual = course_from_paths(paths, cfg.population, label="actual")

    nat_rate = phase.get("natural_rate")
    if nat_rate is None:
        nat_rate = core.rate_at(a, params.rates, cfg.changepoints)
    nat_rate = float(nat_rate)
    field = SirField(rate=nat_rate, infectious_period=float(cfg.tau))
    ia = actual.index_of(float(a))
    natural = daily_course(field, (actual.s[ia], actual.i[ia]), days=b - a,
                           dt=float(phase.get("dt", 0.01)))
    natural = Trajectory(times=natural.times + a, s=natural.s, i=natural.i,
                         label="natural")

    measures = {
        "produced_by": "epifit phase",
        "interval": [a, b],
        "natural_rate": nat_rate,
        "displacement_L": effectiveness_displacement(natural, actual, a, b),
        "work_reduction_M": effectiveness_work(natural, actual, a, b),
    }
    scenario_rates = phase.get("scenario_rates")
    if scenario_rates is not None:
        scen_params = core.ParamVector(
            rates=np.asarray(scenario_rates, dtype=float), ifrs=params.ifrs,
            dispersion=params.dispersion, init_cases=params.init_cases,
            mix_scale=params.mix_scale)
        scen_paths = core.simulate_paths(scen_params, cfg, doses=doses)
        if not scen_paths.valid:
            raise ParameterError("scenario rates produce an infeasible trajectory")
        scenario = course_from_paths(scen_paths, cfg.population, label="scenario")
        measures["scenario_displacement_L"] = effectiveness_displacement(
            natural, scenario, a, b)
        measures["scenario_work_reduction_M"] = effectiveness_work(
            natural, scenario, a, b)

    rate_day = core.rate_series(params.rates, cfg.changepoints, cfg.n_days)
    q = conserved_q(actual, rate_day, cfg.tau)
    measures["q_ergodic_mean"] = float(q.ergodic_mean[-1])
    measures["q_departure_day"] = q.departure_day

    rc.output_dir.mkdir(parents=True, exist_ok=True)
    traj_path = rc.output_dir / "trajectory.csv"
    _write_trajectory_csv(traj_path, actual, q.values, "actual course")
    nat_q = conserved_q(natural, nat_rate, cfg.tau)
    nat_path = rc.output_dir / "natural_course.csv"
    _write_trajectory_csv(nat_path, natural, nat_q.values, "natural course")
    measures_path = rc.output_dir / "measures.json"
    with open(measures_path, "w") as handle:
        json.dump(measures, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return {"trajectory": traj_path, "natural": nat_path,
            "measures": measures_path}


def _write_trajectory_csv(path, traj, q_values, what):
    v = speed_series(traj)
    with open(path, "w", newline="") as handle:
        handle.write(f"# produced-by: epifit phase; {what}; S and I are "
                     "proportions of the population; v is per-day speed\n")
        writer = csv.writer(handle)
        writer.writerow(("t", "S", "I", "v", "Q"))
        for k in range(len(traj)):
            writer.writerow((FLOAT_FMT % traj.times[k], FLOAT_FMT % traj.s[k],
                             FLOAT_FMT % traj.i[k],
                             FLOAT_FMT % v[k] if k < v.size else "",
                             FLOAT_FMT % q_values[k]))


# -------------------------------------------------------------- elicit-ifr

def cmd_elicit_ifr(rc: RunConfig):
    dataset = _load_dataset(rc, need_age=True)
    model = rc.section("model")
    group_ifr = model.get("group_ifr")
    if group_ifr is None:
        raise ParameterError("eliciting IFR priors needs model.group_ifr")
    acm = AgeCaseMatrix(counts=dataset.cases_by_age,
                        group_ifr=np.asarray(group_ifr, dtype=float))
    breaks = (1, *(int(v) for v in model.get("ifr_breaks", ())),
              dataset.n_days + 1)
    means = elicit_ifr(acm, breaks)
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    path = rc.output_dir / "ifr_priors.csv"
    with open(path, "w", newline="") as handle:
        handle.write("# produced-by: epifit elicit-ifr; prior means of the "
                     "piecewise-constant IFR (probabilities)\n")
        writer = csv.writer(handle)
        writer.writerow(("segment", "start_day", "end_day", "prior_mean"))
        for b, mean in enumerate(means):
            writer.writerow((b + 1, breaks[b], breaks[b + 1] - 1,
                             FLOAT_FMT % mean))
    return {"ifr_priors": path}


# -------------------------------------------------------- smooth-proportion

def cmd_smooth_proportion(rc: RunConfig):
    smooth = rc.section("smooth")
    draws_path = Path(smooth.get("draws", rc.output_dir / "draws.csv"))
    if not draws_path.exists():
        raise ParameterError(f"smoothing needs a draws file; {draws_path} is missing")
    dataset = _load_dataset(rc, need_cases=True)
    posterior, cfg = _posterior_for(rc, dataset)
    names, matrix, _, _ = load_draws_csv(draws_path)
    doses = dataset.vaccinations if cfg.flags.vaccination else None

    case_draws = np.empty((matrix.shape[0], cfg.n_days))
    for i in range(matrix.shape[0]):
        params = _params_from_row(names, matrix[i], posterior)
        paths = core.simulate_paths(params, cfg, doses=doses)
        case_draws[i] = paths.cases if paths.valid else np.nan
    result = observed_proportion(dataset.cases, case_draws,
                                 span=float(smooth.get("span", 0.3)))

    rc.output_dir.mkdir(parents=True, exist_ok=True)
    path = rc.output_dir / "proportion.csv"
    dates = dataset.dates
    with open(path, "w", newline="") as handle:
        handle.write("# produced-by: epifit smooth-proportion; recorded share "
                     "of daily infections; smoothed by degree-1 local "
                     f"regression, span={float(smooth.get('span', 0.3))}\n")
        writer = csv.writer(handle)
        writer.writerow(("t", "date", "median", "smoothed", "excluded_draws"))
        for k in range(cfg.n_days):
            writer.writerow((k + 1, dates[k].isoformat(),
                             _fmt_or_blank(result.median[k]),
                             _fmt_or_blank(result.smoothed[k]),
                             int(result.excluded[k])))
    return {"proportion": path}


def _fmt_or_blank(v):
    return "" if not math.isfinite(v) else FLOAT_FMT % v


def _params_from_row(names, row, posterior):
    by_name = dict(zip(names, row))
    J = posterior.config.n_rate_segments
    B = posterior.config.n_ifr_segments
    rates = np.array([by_name[f"rate_{j + 1}"] for j in range(J)])
    if "ifr_1" in by_name:
        ifrs = np.array([by_name[f"ifr_{b + 1}"] for b in range(B)])
    else:
        ifrs = np.asarray(posterior.priors.ifr_means)
    return core.ParamVector(rates=rates, ifrs=ifrs,
                            dispersion=float(by_name.get("dispersion", 1.0)),
                            init_cases=float(by_name["init_cases"]),
                            mix_scale=float(by_name.get("mix_scale", 1.0)))


# ---------------------------------------------------------------- dispatch

_DISPATCH = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "phase": cmd_phase,
    "elicit-ifr": cmd_elicit_ifr,
    "smooth-proportion": cmd_smooth_proportion,
}


def run_pipeline(rc: RunConfig, command: str):
    """Run one command; returns the artifact path mapping."""
    if command not in _DISPATCH:
        raise ParameterError(
            f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    return _DISPATCH[command](rc)
