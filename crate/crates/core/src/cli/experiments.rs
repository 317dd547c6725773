use serde::Serialize;
use serde_json::json;

use super::{config_err, CliError, Loaded, Outcome, Outputs};
use super::config::*;
use crate::coefficients::{
    check_kinetic_c, check_monotonicity_a, check_partial_dissipativity_h, BuiltinModel,
    CheckOptions, CoefficientModel,
};
use crate::error::Error;
use crate::inequalities::{
    entropy_decay_experiment, harnack_coupling, harnack_p0, semigroup_lsi_gap,
    test_function_bank, w2_decay_experiment, HarnackParams, LsiSetup, SeriesPoint,
};
use crate::invariant::{self, contraction_estimate, default_burn_in, mc_floor, picard_fixed_point};
use crate::kinetic::{c_psi, entropy_trace, gradient_case_density, simulate_kinetic};
use crate::measures::{moment_match, write_cloud_csv, GaussianLaw, EXACT_CAP};
use crate::simulator::{
    regularization_convergence, simulate_frozen, simulate_mean_field, Mollifier, RegLevel,
    SimConfig,
};

/// Seed offset separating a reference cloud from the initial one.
const REFERENCE_SALT: u64 = 0x5EED_0F_BA5E;

type Run = Result<Outcome, CliError>;

fn build_model(spec: &BuiltinModel) -> Result<CoefficientModel, CliError> {
    spec.build().map_err(config_err)
}

/// Validates `sim` (after the optional top-level seed override) with field paths.
fn sim_config(sim: &SimConfig, seed: Option<u64>) -> Result<SimConfig, CliError> {
    let sim = SimConfig {
        seed: seed.unwrap_or(sim.seed),
        ..sim.clone()
    };
    sim.validate().map_err(|e| match e {
        Error::Parameter(msg) => {
            let field = msg.split_whitespace().next().unwrap_or_default();
            CliError::config(format!("config error at sim.{field}: {msg}"))
        }
        other => config_err(other),
    })?;
    Ok(sim)
}

/// Bad inputs detected by the library map to the configuration exit code.
fn input_err(e: Error) -> CliError {
    match e {
        Error::Parameter(_) | Error::Dimension(_) | Error::InvalidInput(_) => config_err(e),
        other => other.into(),
    }
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::config(format!("config error at {name}: required for this experiment")))
}

fn burn_in_for(given: Option<f64>, sim: &SimConfig, c: Option<&crate::coefficients::DissipativityConstants>) -> f64 {
    given.unwrap_or_else(|| {
        let b = default_burn_in(c);
        if b < sim.t_end {
            b
        } else {
            sim.t_end / 2.0
        }
    })
}

fn gaussian_summary(g: &GaussianLaw) -> serde_json::Value {
    let d = g.dim();
    let cov: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| g.cov()[(i, j)]).collect()).collect();
    json!({ "mean": g.mean().as_slice(), "cov": cov })
}

fn trace_rows(trace: &[(f64, f64)]) -> Vec<SeriesPoint> {
    trace.iter().map(|&(t, v)| SeriesPoint::exact(t, v)).collect()
}

pub(super) fn check(l: &Loaded<CheckConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let mut opts = CheckOptions::new(c.n_pairs, c.radius, c.seed);
    if let Some(t) = c.tolerance {
        opts = opts.with_tolerance(t);
    }
    if let Some(s) = c.cloud_size {
        opts.cloud_size = s;
    }
    let report = match c.condition {
        Condition::MonotonicityA => {
            check_monotonicity_a(&model, required(&c.constants, "constants")?, &opts)
        }
        Condition::PartialDissipativityH => {
            check_partial_dissipativity_h(&model, required(&c.constants, "constants")?, &opts)
        }
        Condition::KineticC => check_kinetic_c(
            &model,
            required(&c.kinetic_constants, "kinetic_constants")?,
            c.ki,
            &opts,
        ),
    }
    .map_err(input_err)?;
    out.json("report.json", &report)?;
    Ok(if report.satisfied {
        Outcome::Passed
    } else {
        Outcome::Finding(format!(
            "condition violated: worst violation {:e} over {} samples",
            report.worst_violation, report.n_samples
        ))
    })
}

pub(super) fn simulate(l: &Loaded<SimulateConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let sim = sim_config(&c.sim, c.seed)?;
    let init = c
        .init
        .build(model.dim(), sim.n_particles, sim.seed, &l.base)
        .map_err(config_err)?;
    let run = if c.frozen {
        simulate_frozen(&model, &init, &init, &sim)?
    } else {
        simulate_mean_field(&model, &init, &sim)?
    };
    run.export(&out.dir.join("trajectory"), &l.raw, sim.seed)?;
    out.path("trajectory/");
    let moments: Vec<SeriesPoint> = run
        .times
        .iter()
        .zip(run.second_moments())
        .map(|(t, m)| SeriesPoint::exact(*t, m))
        .collect();
    out.series("series.csv", &moments)?;
    let terminal = moment_match(run.terminal()).ok().map(|g| gaussian_summary(&g));
    out.json("summary.json", &json!({ "steps": sim.n_steps(), "terminal": terminal }))?;
    Ok(Outcome::Passed)
}

pub(super) fn phi(l: &Loaded<PhiConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let sim = sim_config(&c.sim, c.seed)?;
    let mu = c
        .mu
        .build(model.dim(), sim.n_particles, sim.seed ^ REFERENCE_SALT, &l.base)
        .map_err(config_err)?;
    let burn_in = burn_in_for(c.burn_in, &sim, c.constants.as_ref());
    let r = invariant::phi(&model, &mu, &sim, burn_in, c.constants.as_ref()).map_err(input_err)?;
    write_cloud_csv(&r.cloud, &out.path("cloud.csv"))?;
    out.series("series.csv", &trace_rows(&r.second_moment_trace))?;
    if let Some(tr) = &r.exp_moment_trace {
        out.series("exp_moment.csv", &trace_rows(tr))?;
    }
    out.json("phi.json", &r)?;
    Ok(if r.stabilized {
        Outcome::Passed
    } else {
        Outcome::Finding(format!(
            "second moment still drifting ({:.3}% over the last half)",
            100.0 * r.second_moment_drift
        ))
    })
}

pub(super) fn fixed_point(l: &Loaded<FixedPointConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let sim = sim_config(&c.sim, c.seed)?;
    let mu0 = c
        .mu0
        .build(model.dim(), sim.n_particles, sim.seed ^ REFERENCE_SALT, &l.base)
        .map_err(config_err)?;
    let burn_in = burn_in_for(c.burn_in, &sim, None);
    if !(burn_in >= 0.0 && burn_in < sim.t_end) {
        return Err(CliError::config("config error at burn_in: must lie in [0, t_end)"));
    }
    let (tol, floor) = match c.tol {
        Some(t) => (t, None),
        None => {
            let f = mc_floor(&model, &mu0, &sim, burn_in, EXACT_CAP)?;
            (c.floor_factor * f, Some(f))
        }
    };
    let r = picard_fixed_point(&model, &mu0, &sim, burn_in, tol, c.max_iter)?;
    r.write_gap_csv(&out.path("gaps.csv"))?;
    write_cloud_csv(&r.cloud, &out.path("cloud.csv"))?;
    let contraction = match &c.contraction_partner {
        Some(spec) => {
            let mu2 = spec
                .build(model.dim(), sim.n_particles, sim.seed ^ REFERENCE_SALT.rotate_left(7), &l.base)
                .map_err(config_err)?;
            Some(contraction_estimate(&model, &mu0, &mu2, &sim, burn_in)?)
        }
        None => None,
    };
    let law = moment_match(&r.cloud)?;
    out.json(
        "fixed_point.json",
        &json!({
            "iterates": r.iterates,
            "floor": r.floor,
            "initial_floor": floor,
            "tolerance": r.tolerance,
            "converged": r.converged,
            "law": gaussian_summary(&law),
            "contraction": contraction,
        }),
    )?;
    Ok(if r.converged {
        Outcome::Passed
    } else {
        Outcome::Finding(format!("no convergence within {} iterations", c.max_iter))
    })
}

pub(super) fn w2_decay(l: &Loaded<W2DecayConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let sim = sim_config(&c.sim, c.seed)?;
    let n = sim.n_particles;
    let mu0 = c.mu0.build(model.dim(), n, sim.seed, &l.base).map_err(config_err)?;
    let reference = c
        .reference
        .build(model.dim(), n, sim.seed ^ REFERENCE_SALT, &l.base)
        .map_err(config_err)?;
    let r = w2_decay_experiment(&model, &mu0, &reference, &sim, &c.sample_times, c.cap).map_err(input_err)?;
    out.series("series.csv", &r.series)?;
    #[derive(Serialize)]
    struct FitFile<'a> {
        fit: &'a Option<crate::inequalities::DecayFit>,
        floor: f64,
        fit_skipped: bool,
    }
    out.json(
        "fit.json",
        &FitFile {
            fit: &r.fit,
            floor: r.floor,
            fit_skipped: r.fit_skipped,
        },
    )?;
    Ok(Outcome::Passed)
}

pub(super) fn entropy_decay(l: &Loaded<EntropyDecayConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let sde = c.linear.build().map_err(config_err)?;
    let mu0 = c.mu0.build().map_err(config_err)?;
    let invariant = match &c.invariant {
        Some(g) => g.build().map_err(config_err)?,
        None => sde.stationary_law().map_err(config_err)?,
    };
    let r = entropy_decay_experiment(&sde, &mu0, &invariant, &c.sample_times)?;
    out.series("series.csv", &r.entropy)?;
    out.series("w2_series.csv", &r.w2)?;
    out.json(
        "fit.json",
        &json!({
            "entropy_fit": r.entropy_fit,
            "w2_fit": r.w2_fit,
            "rate_ratio": r.rate_ratio,
            "consistent": r.consistent,
        }),
    )?;
    Ok(match r.consistent {
        Some(false) => Outcome::Finding(format!(
            "entropy rate is not twice the W2 rate (ratio {:?})",
            r.rate_ratio
        )),
        _ => Outcome::Passed,
    })
}

pub(super) fn lsi_gap(l: &Loaded<LsiGapConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let frozen = c
        .frozen
        .build(model.dim(), c.frozen_size, c.seed ^ REFERENCE_SALT, &l.base)
        .map_err(config_err)?;
    let mut reports = Vec::new();
    for &t in &c.times {
        for f in test_function_bank() {
            let setup = LsiSetup {
                x: c.x.clone(),
                t,
                n_mc: c.n_mc,
                seed: c.seed,
            };
            reports.push(semigroup_lsi_gap(&model, &frozen, &f, &c.constants, &setup).map_err(input_err)?);
        }
    }
    let path = out.path("lsi.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["function", "t", "lhs", "rhs", "stderr_lhs", "stderr_rhs", "holds"])
        .map_err(Error::from)?;
    for r in &reports {
        w.write_record([
            r.function.clone(),
            crate::numeric::fmt17(r.t),
            crate::numeric::fmt17(r.lhs),
            crate::numeric::fmt17(r.rhs),
            crate::numeric::fmt17(r.mc_stderr_lhs),
            crate::numeric::fmt17(r.mc_stderr_rhs),
            r.holds_within(3.0).to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    out.json("report.json", &reports)?;
    let failed = reports.iter().filter(|r| !r.holds_within(3.0)).count();
    Ok(if failed == 0 {
        Outcome::Passed
    } else {
        Outcome::Finding(format!("{failed} log-Sobolev checks exceed 3 standard errors"))
    })
}

pub(super) fn harnack(l: &Loaded<HarnackConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let frozen = c
        .frozen
        .build(model.dim(), c.frozen_size, c.seed ^ REFERENCE_SALT, &l.base)
        .map_err(config_err)?;
    let params = HarnackParams {
        x: c.x.clone(),
        y: c.y.clone(),
        t0: c.t0,
        p: c.p.unwrap_or_else(|| harnack_p0(&c.constants)),
        delta_stop: c.delta_stop,
    };
    let sim = SimConfig::new(c.dt, c.t0, 1, c.seed);
    let r = harnack_coupling(&model, &frozen, &c.constants, &params, &sim, c.n_paths).map_err(input_err)?;
    out.series("series.csv", &trace_rows(&r.gap_series))?;
    out.json(
        "harnack.json",
        &json!({
            "terminal_gap": r.terminal_gap,
            "r_moment_estimate": r.r_moment_estimate,
            "r_moment_stderr": r.r_moment_stderr,
            "r_moment_bound": r.r_moment_bound,
            "margin": r.r_moment_bound - r.r_moment_estimate,
            "p_used": r.p_used,
            "p0": r.p0,
            "n_paths": r.n_paths,
            "clipped_paths": r.clipped_paths,
            "excluded_paths": r.excluded_paths,
            "steps": r.steps,
        }),
    )?;
    Ok(
        if r.r_moment_estimate - 3.0 * r.r_moment_stderr > r.r_moment_bound {
            Outcome::Finding(format!(
                "moment estimate {} exceeds the bound {}",
                r.r_moment_estimate, r.r_moment_bound
            ))
        } else {
            Outcome::Passed
        },
    )
}

pub(super) fn kinetic(l: &Loaded<KineticConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let BuiltinModel::KineticGradient(spec) = &c.model else {
        return Err(CliError::config("config error at model.name: expected kinetic_gradient"));
    };
    let model = build_model(&c.model)?;
    let sim = sim_config(&c.sim, c.seed)?;
    let init = c
        .init
        .build(model.dim(), sim.n_particles, sim.seed, &l.base)
        .map_err(config_err)?;
    c.grid.validate().map_err(config_err)?;
    let run = simulate_kinetic(&model, &init, &sim)?;
    let terminal = run.terminal();
    let density = gradient_case_density(spec, terminal, &c.grid).map_err(input_err)?;
    density.write_csv(&out.path("density.csv"))?;
    out.json("density.json", &density.header())?;
    let trace = entropy_trace(&run, &density)?;
    out.series("series.csv", &trace_rows(&trace))?;
    let c_psi_value = match &c.kinetic_constants {
        Some(kc) => Some(c_psi(kc).map_err(config_err)?),
        None => None,
    };
    out.json(
        "kinetic.json",
        &json!({
            "terminal": gaussian_summary(&moment_match(terminal)?),
            "density_moments": gaussian_summary(&density.gaussian_moments()?),
            "log_partition": density.log_partition,
            "c_psi": c_psi_value,
        }),
    )?;
    Ok(Outcome::Passed)
}

/// True when `values` does not increase.
fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

pub(super) fn regularization(l: &Loaded<RegularizationConfig>, out: &mut Outputs) -> Run {
    let c = &l.cfg;
    let model = build_model(&c.model)?;
    let sim = sim_config(&c.sim, c.seed)?;
    let init = c
        .init
        .build(model.dim(), sim.n_particles, sim.seed, &l.base)
        .map_err(config_err)?;
    let mut yosida = c.yosida.clone();
    yosida.sort_unstable();
    let mut levels: Vec<RegLevel> = yosida
        .iter()
        .map(|&n| RegLevel::Yosida { n, k: c.yosida_k })
        .collect();
    if let Some(sweep) = &c.mollifier {
        let mut ms = sweep.m.clone();
        ms.sort_unstable();
        let rho = match sweep.kind {
            MollifierKind::Uniform => Mollifier::Uniform,
            MollifierKind::Bump => Mollifier::Bump,
        };
        levels.extend(ms.into_iter().map(|m| RegLevel::Mollified {
            m,
            rho: rho.clone(),
            quad: sweep.quadrature,
        }));
    }
    if levels.is_empty() {
        return Err(CliError::config("config error at yosida: no regularization levels given"));
    }
    let rows = regularization_convergence(&model, &levels, &init, &sim)?;
    let path = out.path("regularization.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["kind", "level", "ms_gap", "rms_gap"]).map_err(Error::from)?;
    for r in &rows {
        w.write_record([
            r.kind.to_string(),
            crate::numeric::fmt17(r.level),
            crate::numeric::fmt17(r.ms_gap),
            crate::numeric::fmt17(r.rms_gap),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let gaps = |kind: &str| -> Vec<f64> {
        rows.iter().filter(|r| r.kind == kind).map(|r| r.ms_gap).collect()
    };
    let yosida_monotone = non_increasing(&gaps("yosida"));
    let mollifier_monotone = non_increasing(&gaps("mollified"));
    out.json(
        "report.json",
        &json!({
            "rows": rows,
            "yosida_monotone": yosida_monotone,
            "mollifier_monotone": mollifier_monotone,
        }),
    )?;
    Ok(if yosida_monotone && mollifier_monotone {
        Outcome::Passed
    } else {
        Outcome::Finding("regularization gaps are not monotone in the level".into())
    })
}
