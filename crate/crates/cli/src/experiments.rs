//! The eight named experiments. Each consumes a validated config, runs the
//! relevant estimators against their exact references, and emits rows,
//! distribution snapshots, and optional plots through [`RunOutput`].

use qsd_core::bpg::RootedTree;
use qsd_core::brw::{simulate_brw, LatticeConfig};
use qsd_core::montecarlo::{
    fleming_viot_grid, tv_distance, BpgProcess, BrwProcess, EmpiricalDistribution, FvEstimate,
    GEventGenerator, PhasedSizeProcess,
};
use qsd_core::spectral::{SpectralData, TruncatedKernel};
use qsd_core::OffspringDistribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::output::{DistributionSnapshot, RunOutput};
use crate::CliError;

pub fn run(config: &ExperimentConfig, out_dir: &Path, plots: bool) -> Result<(), CliError> {
    let mut out = RunOutput::new(out_dir, config, plots);
    match config.experiment.as_str() {
        "spectral" => spectral(config, &mut out)?,
        "family" => family(config, &mut out)?,
        "yaglom" => yaglom(config, &mut out)?,
        "uniqueness-bpg" => uniqueness_bpg(config, &mut out)?,
        "uniqueness-brw" => uniqueness_brw(config, &mut out)?,
        "gevents" => gevents(config, &mut out)?,
        "walker" => walker(config, &mut out)?,
        "qprocess" => qprocess(config, &mut out)?,
        other => return Err(CliError::Config(format!("unknown experiment {other:?}"))),
    }
    out.write()
}

fn runtime(e: impl std::fmt::Display, context: &str) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn spectral_data(
    offspring: &OffspringDistribution,
    n: usize,
) -> Result<(TruncatedKernel, SpectralData), CliError> {
    let kernel = TruncatedKernel::build_kernel(offspring, n)
        .map_err(|e| runtime(e, "building the truncated generator"))?;
    let s = kernel
        .compute_spectral()
        .map_err(|e| runtime(e, "solving the spectral problem"))?;
    Ok((kernel, s))
}

fn probs_by_state(v: &[f64]) -> BTreeMap<String, f64> {
    v.iter().enumerate().map(|(j, &p)| ((j + 1).to_string(), p)).collect()
}

/// Delta-method standard error of the plug-in TV against a fixed reference.
fn tv_se_vs_probs(d: &EmpiricalDistribution, probs: &BTreeMap<String, f64>) -> f64 {
    let n = d.total() as f64;
    let mut signed = 0.0;
    for (k, &c) in d.counts() {
        let p = c as f64 / n;
        let q = probs.get(k).copied().unwrap_or(0.0);
        signed += if p > q { p } else { -p };
    }
    ((1.0 - signed * signed).max(0.0) / (4.0 * n)).sqrt()
}

/// Standard error of the plug-in TV between two empirical laws.
fn tv_se_two_sample(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let to_probs = |d: &EmpiricalDistribution| -> BTreeMap<String, f64> {
        d.counts()
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / d.total() as f64))
            .collect()
    };
    let sa = tv_se_vs_probs(a, &to_probs(b));
    let sb = tv_se_vs_probs(b, &to_probs(a));
    (sa * sa + sb * sb).sqrt()
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn leaf_marginal(d: &EmpiricalDistribution) -> EmpiricalDistribution {
    let mut out = EmpiricalDistribution::new();
    for (key, &c) in d.counts() {
        let tree = RootedTree::from_encoding(key).expect("keys are canonical encodings");
        out.add_count(tree.num_leaves().to_string(), c);
    }
    out
}

fn spectral(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let offspring = config.offspring.as_ref().unwrap();
    let n = config.truncation.unwrap();
    let (_, s) = spectral_data(offspring, n)?;
    out.row("alpha", None, s.alpha, None, None);
    out.row("residual_nu_l1", None, s.residuals.nu_l1, None, None);
    out.row("residual_h_inf", None, s.residuals.h_inf, None, None);
    let nu_mean: f64 = s.nu.iter().enumerate().map(|(j, &p)| (j + 1) as f64 * p).sum();
    out.row("qsd_mean_size", None, nu_mean, None, None);
    out.snapshot(DistributionSnapshot::exact("qsd", None, &probs_by_state(&s.nu)));
    out.snapshot(DistributionSnapshot::exact("harmonic", None, &probs_by_state(&s.h)));
    let shown = n.min(30);
    let nu_pts: Vec<(f64, f64)> =
        (0..shown).map(|j| ((j + 1) as f64, s.nu[j])).collect();
    let h_pts: Vec<(f64, f64)> = (0..shown).map(|j| ((j + 1) as f64, s.h[j])).collect();
    out.plot("qsd", "Minimal QSD weights by state", &[("nu".to_string(), nu_pts)]);
    out.plot("harmonic", "Harmonic function by state", &[("h".to_string(), h_pts)]);
    Ok(())
}

fn family(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let offspring = config.offspring.as_ref().unwrap();
    let n = config.truncation.unwrap();
    let (kernel, s) = spectral_data(offspring, n)?;
    let mut plot_series = Vec::new();
    for &theta in &config.thetas {
        let member = kernel
            .qsd_family(theta)
            .map_err(|e| runtime(e, "evaluating the absorption-rate family"))?;
        out.row("family_valid", Some(theta), f64::from(u8::from(member.valid)), None, None);
        if member.valid {
            let tv = 0.5
                * member
                    .weights
                    .iter()
                    .zip(&s.nu)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            out.row("family_tv_vs_minimal", Some(theta), tv, None, None);
            out.snapshot(DistributionSnapshot::exact(
                format!("family_theta_{theta}"),
                None,
                &probs_by_state(&member.weights),
            ));
            let pts: Vec<(f64, f64)> = (0..n.min(25))
                .map(|j| ((j + 1) as f64, member.weights[j]))
                .collect();
            plot_series.push((format!("theta={theta}"), pts));
        }
    }
    out.plot("family", "QSD family members by state", &plot_series);
    Ok(())
}

fn yaglom(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let offspring = config.offspring.as_ref().unwrap();
    let n = config.truncation.unwrap();
    let particles = config.particles.unwrap();
    let seed = config.seed.unwrap();
    let (kernel, s) = spectral_data(offspring, n)?;
    let qsd = probs_by_state(&s.nu);
    let process = BpgProcess { offspring: offspring.clone() };
    let snaps = fleming_viot_grid(&process, &RootedTree::single(), &config.time_grid, particles, seed);
    let mut delta = vec![0.0; n];
    delta[0] = 1.0;
    let mut vs_qsd = Vec::new();
    let mut vs_law = Vec::new();
    for snap in &snaps {
        let marginal = leaf_marginal(&snap.distribution);
        let exact = kernel
            .conditioned_law(&delta, snap.time)
            .map_err(|e| runtime(e, "evaluating the exact conditioned law"))?;
        let law = probs_by_state(&exact);
        let tv_qsd = marginal.tv_to_probs(&qsd).map_err(|e| runtime(e, "comparing laws"))?;
        let tv_law = marginal.tv_to_probs(&law).map_err(|e| runtime(e, "comparing laws"))?;
        out.row(
            "leaf_marginal_tv_vs_qsd",
            Some(snap.time),
            tv_qsd,
            Some(tv_se_vs_probs(&marginal, &qsd)),
            Some(snap.distribution.total()),
        );
        out.row(
            "leaf_marginal_tv_vs_exact_law",
            Some(snap.time),
            tv_law,
            Some(tv_se_vs_probs(&marginal, &law)),
            Some(snap.distribution.total()),
        );
        out.snapshot(DistributionSnapshot::empirical(
            format!("leaf_marginal_t{}", snap.time),
            Some(snap.time),
            &marginal,
        ));
        vs_qsd.push((snap.time, tv_qsd));
        vs_law.push((snap.time, tv_law));
    }
    if let Some(last) = snaps.last() {
        out.snapshot(DistributionSnapshot::empirical(
            "tree_law_final",
            Some(last.time),
            &last.distribution,
        ));
    }
    out.snapshot(DistributionSnapshot::exact("qsd", None, &qsd));
    out.plot(
        "yaglom",
        "Leaf-count marginal convergence",
        &[("tv vs qsd".to_string(), vs_qsd), ("tv vs exact law".to_string(), vs_law)],
    );
    Ok(())
}

/// Shared tail of the two uniqueness experiments: per-time TV between two
/// ensemble laws started from different states.
fn uniqueness_rows(
    out: &mut RunOutput,
    metric: &str,
    grid: &[f64],
    a: &[FvEstimate],
    b: &[FvEstimate],
    plot_name: &str,
) -> Result<(), CliError> {
    let mut pts = Vec::new();
    for ((&t, ea), eb) in grid.iter().zip(a).zip(b) {
        let tv = tv_distance(&ea.distribution, &eb.distribution)
            .map_err(|e| runtime(e, "comparing ensemble laws"))?;
        let se = tv_se_two_sample(&ea.distribution, &eb.distribution);
        let ess = ea.distribution.total().min(eb.distribution.total());
        out.row(metric, Some(t), tv, Some(se), Some(ess));
        pts.push((t, tv));
    }
    if let (Some(ea), Some(eb)) = (a.last(), b.last()) {
        out.snapshot(DistributionSnapshot::empirical(
            "law_from_first_initial",
            Some(ea.time),
            &ea.distribution,
        ));
        out.snapshot(DistributionSnapshot::empirical(
            "law_from_second_initial",
            Some(eb.time),
            &eb.distribution,
        ));
    }
    out.plot(plot_name, "Forgetting the initial state", &[("tv".to_string(), pts)]);
    Ok(())
}

fn uniqueness_bpg(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let offspring = config.offspring.as_ref().unwrap();
    let particles = config.particles.unwrap();
    let seed = config.seed.unwrap();
    let process = BpgProcess { offspring: offspring.clone() };
    let trees: Vec<RootedTree> = config
        .initial_encodings
        .iter()
        .map(|enc| RootedTree::from_encoding(enc).expect("validated"))
        .collect();
    // The two ensembles use consecutive seeds so their noise is independent.
    let a = fleming_viot_grid(&process, &trees[0], &config.time_grid, particles, seed);
    let b = fleming_viot_grid(&process, &trees[1], &config.time_grid, particles, seed.wrapping_add(1));
    uniqueness_rows(out, "tree_law_tv", &config.time_grid, &a, &b, "uniqueness_bpg")
}

fn uniqueness_brw(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let lambda = config.lambda.unwrap();
    let d = config.d.unwrap();
    let particles = config.particles.unwrap();
    let seed = config.seed.unwrap();
    let process = BrwProcess { lambda, d };
    let configs: Vec<LatticeConfig> = config
        .initial_configs
        .iter()
        .map(|sites| LatticeConfig::new(d, sites).expect("validated"))
        .collect();
    let a = fleming_viot_grid(&process, &configs[0], &config.time_grid, particles, seed);
    let b =
        fleming_viot_grid(&process, &configs[1], &config.time_grid, particles, seed.wrapping_add(1));
    uniqueness_rows(out, "config_law_tv", &config.time_grid, &a, &b, "uniqueness_brw")
}

fn gevents(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let offspring = config.offspring.as_ref().unwrap();
    let particles = config.particles.unwrap();
    let n = config.truncation.unwrap();
    let cap = config.alternations.unwrap_or(3);
    let seed = config.seed.unwrap();
    let process = PhasedSizeProcess { offspring: offspring.clone(), cap };
    let init = process.initial_state(1);
    let snaps = fleming_viot_grid(&process, &init, &config.time_grid, particles, seed);
    let oracle = GEventGenerator::build(offspring, n, cap);
    let done_suffix = format!("|{}", process.done_phase());
    let mut fv_pts = Vec::new();
    let mut exact_pts = Vec::new();
    for snap in &snaps {
        let done: u64 = snap
            .distribution
            .counts()
            .iter()
            .filter(|(k, _)| k.ends_with(&done_suffix))
            .map(|(_, &c)| c)
            .sum();
        let total = snap.distribution.total();
        let fv = done as f64 / total as f64;
        let (done_mass, alive_mass) = oracle.probabilities_from(1, snap.time);
        let exact = done_mass / alive_mass;
        out.row(
            "alternation_saturation_fv",
            Some(snap.time),
            fv,
            Some(binomial_se(fv, total)),
            Some(total),
        );
        out.row("alternation_saturation_exact", Some(snap.time), exact, None, None);
        fv_pts.push((snap.time, fv));
        exact_pts.push((snap.time, exact));
    }
    if let Some(last) = snaps.last() {
        let mut phases = EmpiricalDistribution::new();
        for (key, &c) in last.distribution.counts() {
            let phase = key.split('|').nth(1).unwrap_or("?");
            phases.add_count(phase.to_string(), c);
        }
        out.snapshot(DistributionSnapshot::empirical(
            "phase_marginal_final",
            Some(last.time),
            &phases,
        ));
    }
    out.plot(
        "gevents",
        "Alternation saturation, ensemble vs exact",
        &[("ensemble".to_string(), fv_pts), ("exact".to_string(), exact_pts)],
    );
    Ok(())
}

fn walker(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let lambda = config.lambda.unwrap();
    let d = config.d.unwrap();
    let replicas = config.replicas.unwrap();
    let min_jumps = config.min_jumps.unwrap_or(3) as usize;
    let seed = config.seed.unwrap();
    let start = LatticeConfig::single(d);
    let mut tail_pts = Vec::new();
    let mut surv_pts = Vec::new();
    for (ti, &t) in config.time_grid.iter().enumerate() {
        let (survivors, jumpy, jump_counts) = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ti as u64 * replicas + r);
                let (end, genealogy) = simulate_brw(&start, lambda, t, &mut rng);
                if end.is_empty() {
                    return (0u64, 0u64, BTreeMap::new());
                }
                let x = genealogy.initial[0].0;
                let path = genealogy.walker_path(x, t).expect("survivor has a walker path");
                let mut counts = BTreeMap::new();
                counts.insert(path.jumps.len().to_string(), 1u64);
                (1, u64::from(path.jumps.len() >= min_jumps), counts)
            })
            .reduce(
                || (0, 0, BTreeMap::new()),
                |mut a, b| {
                    a.0 += b.0;
                    a.1 += b.1;
                    for (k, c) in b.2 {
                        *a.2.entry(k).or_insert(0) += c;
                    }
                    a
                },
            );
        if survivors == 0 {
            return Err(CliError::Runtime(format!(
                "no replica survived to t={t}; increase replicas or shorten the grid"
            )));
        }
        let tail = jumpy as f64 / survivors as f64;
        let surv = survivors as f64 / replicas as f64;
        out.row(
            "walker_tail_prob",
            Some(t),
            tail,
            Some(binomial_se(tail, survivors)),
            Some(survivors),
        );
        out.row(
            "survival_prob",
            Some(t),
            surv,
            Some(binomial_se(surv, replicas)),
            Some(replicas),
        );
        tail_pts.push((t, tail));
        surv_pts.push((t, surv));
        if ti + 1 == config.time_grid.len() {
            out.snapshot(DistributionSnapshot::empirical(
                "walker_jump_counts_final",
                Some(t),
                &EmpiricalDistribution::from_counts(jump_counts),
            ));
        }
    }
    out.plot(
        "walker",
        "Walker jump tail and survival",
        &[
            (format!("P(jumps >= {min_jumps} | alive)"), tail_pts),
            ("P(alive)".to_string(), surv_pts),
        ],
    );
    Ok(())
}

fn qprocess(config: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let offspring = config.offspring.as_ref().unwrap();
    let n = config.truncation.unwrap();
    let total_time = config.total_time.unwrap();
    let seed = config.seed.unwrap();
    let (kernel, s) = spectral_data(offspring, n)?;
    let qp = kernel.q_process_kernel(&s);
    let pi = qp.stationary().map_err(|e| runtime(e, "solving the stationary law"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = qp
        .simulate_occupation(1, total_time, &mut rng)
        .map_err(|e| runtime(e, "simulating the conditioned chain"))?;
    let tv = 0.5
        * stats
            .occupation
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    out.row("occupation_tv_vs_stationary", None, tv, None, Some(stats.cycles));
    out.row("mean_return_to_one", None, stats.mean_return_to_one, None, Some(stats.cycles));
    out.row("events", None, stats.events as f64, None, None);
    out.snapshot(DistributionSnapshot::exact(
        "occupation",
        None,
        &probs_by_state(&stats.occupation),
    ));
    out.snapshot(DistributionSnapshot::exact("stationary", None, &probs_by_state(&pi)));
    let shown = n.min(30);
    let occ_pts: Vec<(f64, f64)> =
        (0..shown).map(|j| ((j + 1) as f64, stats.occupation[j])).collect();
    let pi_pts: Vec<(f64, f64)> = (0..shown).map(|j| ((j + 1) as f64, pi[j])).collect();
    out.plot(
        "qprocess",
        "Occupation vs stationary law",
        &[("occupation".to_string(), occ_pts), ("stationary".to_string(), pi_pts)],
    );
    Ok(())
}
