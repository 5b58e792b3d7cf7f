use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wfh::fock::{fidelity, make_state, truncation_fidelity, DenseOperator, StateSpec};
use wfh::mle::{reconstruct, ReconstructionParams};
use wfh::optics::PartitionSpec;
use wfh::probes::{design_gamma, feasibility, Configuration, Detector, ProbeFreedom};
use wfh::rng::derive_seed;
use wfh::sim::{expected_dataset, simulate_dataset, Dataset};
use wfh::stats::parametric_bootstrap;
use wfh::twirl::{twirl_analytic, twirl_oracle_mc};
use wfh::BlockOperatorF64;

use crate::io::{apply_overrides, read_json, split_samples, ContextFile, StateFile};

/// What a command produced: the artifact and a few headline fields for the
/// summary line.
pub struct Outcome {
    pub artifact: Value,
    pub summary: Value,
}

fn params_from(path: &Option<PathBuf>, overrides: &[String]) -> Result<ReconstructionParams> {
    let base = match path {
        Some(p) => read_json::<Value>(p)?,
        None => json!({}),
    };
    let params: ReconstructionParams = serde_json::from_value(apply_overrides(base, overrides)?)
        .map_err(|e| wfh::Error::invalid(format!("reconstruction params: {e}")))?;
    params.validate()?;
    Ok(params)
}

pub struct FeasibilityArgs {
    pub k: usize,
    pub s1_multi: bool,
    pub counters: u8,
    pub fixed_magnitude: bool,
    pub click: bool,
    pub balanced: bool,
    pub n: usize,
}

pub fn feasibility_cmd(a: &FeasibilityArgs) -> Result<Outcome> {
    let config = Configuration {
        k: a.k,
        s1_multi: a.s1_multi,
        counters: a.counters,
        probe_freedom: if a.fixed_magnitude { ProbeFreedom::FixedMagnitude } else { ProbeFreedom::Full },
        detector: if a.click { Detector::Click } else { Detector::Counting },
        bs_balanced: a.balanced,
        n: a.n,
    };
    let v = feasibility(&config)?;
    let summary = json!({"determinable": v.determinable, "established": v.established, "theorem": v.theorem});
    Ok(Outcome { artifact: json!({"configuration": config, "verdict": v}), summary })
}

pub fn design_gamma_cmd(n: usize, max_tries: usize, seed: u64) -> Result<Outcome> {
    let d = design_gamma(n, seed, max_tries)?;
    let summary = json!({"probes": d.probes.gammas.len(), "rank": d.rank, "attempts": d.attempts});
    Ok(Outcome { artifact: serde_json::to_value(&d)?, summary })
}

pub fn ic_check_cmd(context: &Path) -> Result<Outcome> {
    let ctx = read_json::<ContextFile>(context)?.build()?;
    let r = ctx.ic_check()?;
    Ok(Outcome { artifact: serde_json::to_value(r)?, summary: serde_json::to_value(r)? })
}

pub fn povm_dump_cmd(context: &Path, setting: Option<usize>) -> Result<Outcome> {
    let ctx = read_json::<ContextFile>(context)?.build()?;
    let povms: Vec<_> = match setting {
        Some(i) => vec![ctx.povms.get(i).ok_or_else(|| wfh::Error::invalid(format!("no setting {i}")))?.clone()],
        None => ctx.povms.clone(),
    };
    let worst = povms.iter().map(|p| p.completeness_error()).fold(0.0, f64::max);
    let summary = json!({"povms": povms.len(), "elements": povms.iter().map(|p| p.len()).sum::<usize>(), "completeness_error": worst});
    Ok(Outcome { artifact: serde_json::to_value(&povms)?, summary })
}

pub fn simulate_cmd(state: &Path, context: &Path, m: u64, expected: bool, seed: u64) -> Result<Outcome> {
    let ctx = read_json::<ContextFile>(context)?.build()?;
    let rho = read_json::<StateFile>(state)?.twirled(&ctx.partition)?;
    let split = split_samples(m, ctx.settings.len());
    let data = if expected {
        expected_dataset(&rho, &ctx, &split.iter().map(|&x| x as f64).collect::<Vec<_>>())?
    } else {
        simulate_dataset(&rho, &ctx, &split, seed)?
    };
    let summary = json!({"settings": data.settings.len(), "total": data.total(), "seed": data.seed});
    Ok(Outcome { artifact: serde_json::to_value(&data)?, summary })
}

pub struct ReconstructArgs {
    pub context: PathBuf,
    pub data: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub truth: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub m: Option<u64>,
    pub trials: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TrialRecord {
    trial: usize,
    seed: u64,
    fidelity: f64,
    iterations: usize,
    termination: wfh::mle::Termination,
    final_loglik: f64,
    final_rk: f64,
}

pub fn reconstruct_cmd(a: &ReconstructArgs, seed: u64) -> Result<Outcome> {
    let ctx = read_json::<ContextFile>(&a.context)?.build()?;
    let params = params_from(&a.params, &a.overrides)?;
    if let Some(trials) = a.trials {
        let (Some(state), Some(m)) = (&a.state, a.m) else {
            bail!(wfh::Error::invalid("--trials needs --state and --m"));
        };
        if trials == 0 {
            bail!(wfh::Error::invalid("--trials must be positive"));
        }
        let truth = read_json::<StateFile>(state)?.twirled(&ctx.partition)?;
        let split = split_samples(m, ctx.settings.len());
        let records = (0..trials)
            .into_par_iter()
            .map(|t| {
                let s = derive_seed(seed, t as u64);
                let data = simulate_dataset(&truth, &ctx, &split, s)?;
                let rep = reconstruct(&ctx, &data, &params)?;
                Ok(TrialRecord {
                    trial: t,
                    seed: s,
                    fidelity: fidelity(&rep.estimate, &truth)?,
                    iterations: rep.iterations,
                    termination: rep.termination,
                    final_loglik: rep.final_loglik(),
                    final_rk: rep.final_rk(),
                })
            })
            .collect::<wfh::Result<Vec<_>>>()?;
        let mean = records.iter().map(|r| r.fidelity).sum::<f64>() / trials as f64;
        let summary = json!({"trials": trials, "M": m, "mean_fidelity": mean});
        return Ok(Outcome { artifact: json!({"M": m, "mean_fidelity": mean, "trials": records}), summary });
    }
    let data_path = a.data.as_ref().ok_or_else(|| wfh::Error::invalid("reconstruct needs --data or --trials"))?;
    let data: Dataset = read_json(data_path)?;
    let mut rep = reconstruct(&ctx, &data, &params)?;
    if let Some(t) = &a.truth {
        let truth = read_json::<StateFile>(t)?.twirled(&ctx.partition)?;
        rep.fidelity = Some(fidelity(&rep.estimate, &truth)?);
    }
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let summary = json!({
        "termination": rep.termination,
        "iterations": rep.iterations,
        "final_loglik": rep.final_loglik(),
        "final_rk": rep.final_rk(),
        "fidelity": rep.fidelity,
        "warnings": rep.warnings.len(),
    });
    Ok(Outcome { artifact: serde_json::to_value(&rep)?, summary })
}

pub struct BootstrapArgs {
    pub context: PathBuf,
    pub data: PathBuf,
    pub estimate: Option<PathBuf>,
    pub n_boot: usize,
    pub params: Option<PathBuf>,
    pub overrides: Vec<String>,
}

pub fn bootstrap_cmd(a: &BootstrapArgs, seed: u64) -> Result<Outcome> {
    let ctx = read_json::<ContextFile>(&a.context)?.build()?;
    let params = params_from(&a.params, &a.overrides)?;
    let data: Dataset = read_json(&a.data)?;
    let estimate = match &a.estimate {
        Some(p) => read_json::<StateFile>(p)?.twirled(&ctx.partition)?,
        None => reconstruct(&ctx, &data, &params)?.estimate,
    };
    let m: Vec<u64> = data
        .setting_totals()
        .iter()
        .map(|&t| if t.fract() == 0.0 && t >= 0.0 { Ok(t as u64) } else { Err(anyhow!(wfh::Error::invalid("bootstrap needs integer counts"))) })
        .collect::<Result<_>>()?;
    let report = parametric_bootstrap(&estimate, &ctx, &data, &m, a.n_boot, &params, seed)?;
    let summary = json!({"original_lr": report.original_lr, "sigma_deviation": report.sigma_deviation, "n_boot": report.boot_lrs.len()});
    Ok(Outcome { artifact: serde_json::to_value(&report)?, summary })
}

pub fn fidelity_cmd(a: Option<&PathBuf>, b: Option<&PathBuf>, truncation: Option<&PathBuf>) -> Result<Outcome> {
    if let Some(p) = truncation {
        let spec: StateSpec = read_json(p)?;
        let f = truncation_fidelity(&spec)?;
        return Ok(Outcome { artifact: json!({"truncation_fidelity": f}), summary: json!({"truncation_fidelity": f}) });
    }
    let (Some(a), Some(b)) = (a, b) else {
        bail!(wfh::Error::invalid("fidelity needs --a and --b, or --truncation"));
    };
    let x: BlockOperatorF64 = match read_json::<StateFile>(a)? {
        StateFile::Block(s) | StateFile::Report { estimate: s } => s,
        StateFile::Spec(_) => bail!(wfh::Error::invalid("--a must be a block operator or report")),
    };
    let y = read_json::<StateFile>(b)?.twirled(x.partition())?;
    let f = fidelity(&x, &y)?;
    Ok(Outcome { artifact: json!({"fidelity": f}), summary: json!({"fidelity": f}) })
}

pub fn twirl_cmd(state: &Path, partition: &Path, assignment: Option<Vec<usize>>, mc_samples: Option<usize>, seed: u64) -> Result<Outcome> {
    let spec: StateSpec = read_json(state)?;
    let partition: PartitionSpec = read_json(partition)?;
    let (basis, psi) = make_state::<f64>(&spec)?;
    let rho = DenseOperator::from_pure(&basis, &psi)?;
    let assignment = assignment.unwrap_or_else(|| {
        let aux = if partition.s1_multi() { 0 } else { 1 };
        (0..spec.num_modes()).map(|i| if i == 0 { 0 } else { aux }).collect()
    });
    let analytic = twirl_analytic(&rho, &assignment, &partition, spec.n())?;
    let mut artifact = json!({"assignment": assignment, "twirled": analytic});
    let mut summary = json!({"blocks": analytic.blocks().len(), "trace": analytic.trace()});
    if let Some(samples) = mc_samples {
        let mc = twirl_oracle_mc(&rho, &assignment, &partition, samples, seed)?;
        let embedded = analytic.embed_twirled(&assignment)?;
        let diff = wfh::linalg::max_abs_diff(&mc.entries, &embedded.entries);
        artifact["mc_samples"] = json!(samples);
        artifact["mc_max_abs_diff"] = json!(diff);
        summary["mc_max_abs_diff"] = json!(diff);
    }
    Ok(Outcome { artifact, summary })
}
