//! Monte-Carlo pipelines behind each experiment id.
//!
//! Every trial draws its scenario and fading from a generator keyed by
//! `(seed, N_R, trial)`, so a trial's channels do not depend on how many other
//! trials run or in which order, and all methods and estimators of a trial see
//! the same channels. Trials run on the rayon pool; rows are sorted before
//! they are returned.

use std::collections::BTreeMap;

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ris_core::channel::{generate_scenario_with, noise_power, sample_fading, ChannelSet};
use ris_core::estimation::{build_prior_covariance, estimate_links, nmse, EstimatorKind, TrainingParams};
use ris_core::multi_user::{allocate, associate_users, evaluate_sinr, geometric_mean, AllocationParams};
use ris_core::scalar::inner;
use ris_core::single_user::{no_optimization, optimize_am, optimize_lb, optimize_ub, AmOptions, SingleUserMethod};
use ris_core::{LinkSet, RisConfig, Scenario, SystemConstants};

use crate::config::{AmInit, Csi, ExperimentConfig, ExperimentId, Method, ResolvedConfig};
use crate::results::{ResultTable, Row};
use crate::stats::{compute_cdf, db_grid, mean, mean_linear_db, median, to_db};

const TAG_SCENARIO: u64 = 0;
const TAG_ESTIMATION: u64 = 10;
const TAG_RANDOM_PHASES: u64 = 100;
const TAG_AM_INIT: u64 = 101;

/// Generator for one purpose (`tag`) of one trial; independent of all others.
pub fn trial_rng(seed: u64, n_ris: usize, trial: usize, tag: u64) -> ChaCha8Rng {
    let key = seed
        ^ (n_ris as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tag.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(trial as u64);
    rng
}

pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ResultTable> {
    let resolved = cfg.resolved()?;
    run_resolved(&resolved)
}

pub fn run_resolved(r: &ResolvedConfig) -> anyhow::Result<ResultTable> {
    let mut rows = Vec::new();
    for &nr in &r.ris_sweep {
        let mut constants = r.constants.clone();
        constants.ris_elements = nr;
        let per_trial: Vec<Vec<Row>> = (0..r.trials)
            .into_par_iter()
            .map(|t| run_trial(r, &constants, t).with_context(|| format!("trial {t} at N_R = {nr}")))
            .collect::<anyhow::Result<_>>()?;
        rows.extend(per_trial.into_iter().flatten());
    }
    let summary = summarize(r, &rows)?;
    rows.extend(summary);
    Ok(ResultTable::new(rows))
}

struct TrialChannels {
    scenario: Scenario<f64>,
    channels: ChannelSet<f64>,
}

fn draw_channels(r: &ResolvedConfig, c: &SystemConstants, trial: usize) -> anyhow::Result<TrialChannels> {
    let mut rng = trial_rng(r.seed, c.ris_elements, trial, TAG_SCENARIO);
    let scenario = generate_scenario_with::<f64, _>(c, &mut rng)?;
    let channels = sample_fading(&scenario, c, &mut rng);
    Ok(TrialChannels { scenario, channels })
}

fn estimator_tag(kind: EstimatorKind) -> u64 {
    TAG_ESTIMATION + EstimatorKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64
}

/// Channel knowledge of the listed BSs under `csi`.
fn channel_knowledge(
    r: &ResolvedConfig,
    c: &SystemConstants,
    tc: &TrialChannels,
    csi: Csi,
    trial: usize,
    bss: &[usize],
) -> anyhow::Result<Vec<LinkSet<f64>>> {
    match csi {
        Csi::Perfect => Ok(bss.iter().map(|&i| tc.channels.links[i].clone()).collect()),
        Csi::Estimated(kind) => {
            let params = TrainingParams {
                pilot_power_w: r.pilot_power_w,
                pilot_length: None,
                noise_var: noise_power::<f64>(c) * r.training_noise_scale,
                rho: c.ris_amplitude,
            };
            let mut rng = trial_rng(r.seed, c.ris_elements, trial, estimator_tag(kind));
            bss.iter()
                .map(|&i| {
                    let prior = build_prior_covariance(&tc.scenario, i)?;
                    Ok(estimate_links(&tc.channels.links[i], &prior, kind, &params, &mut rng)?.links)
                })
                .collect()
        }
    }
}

fn row<'a>(r: &'a ResolvedConfig, method: Method, csi: &str, nr: usize, p_jt: Option<f64>, trial: usize) -> impl Fn(Option<usize>, &str, f64) -> Row + 'a {
    let method = method.label().to_owned();
    let csi = csi.to_owned();
    move |user, metric, value| Row {
        experiment: r.experiment.as_str().to_owned(),
        method: method.clone(),
        estimator: csi.clone(),
        n_ris: nr,
        p_jt,
        trial: Some(trial),
        user,
        metric: metric.to_owned(),
        value,
    }
}

fn run_trial(r: &ResolvedConfig, c: &SystemConstants, trial: usize) -> anyhow::Result<Vec<Row>> {
    match r.experiment {
        ExperimentId::NmseVsNr => nmse_trial(r, c, trial),
        ExperimentId::SuCdf | ExperimentId::SuVsNr => single_user_trial(r, c, trial),
        ExperimentId::MuCdf | ExperimentId::MuSinrVsNr | ExperimentId::JtSweep => multi_user_trial(r, c, trial),
    }
}

fn nmse_trial(r: &ResolvedConfig, c: &SystemConstants, trial: usize) -> anyhow::Result<Vec<Row>> {
    let tc = draw_channels(r, c, trial)?;
    let bss: Vec<usize> = (0..tc.scenario.num_bs()).collect();
    let mut out = Vec::new();
    for &csi in &r.csi {
        let est = channel_knowledge(r, c, &tc, csi, trial, &bss)?;
        let mk = row(r, Method::Estimation, csi.label(), c.ris_elements, None, trial);
        for (i, e) in est.iter().enumerate() {
            out.push(mk(None, &format!("nmse_bs{i}"), nmse(&tc.channels.links[i], e)?));
        }
    }
    Ok(out)
}

fn single_user_trial(r: &ResolvedConfig, c: &SystemConstants, trial: usize) -> anyhow::Result<Vec<Row>> {
    let nr = c.ris_elements;
    let tc = draw_channels(r, c, trial)?;
    let truth = &tc.channels.links[0];
    let noise = noise_power::<f64>(c);
    let rho = c.ris_amplitude;
    let random_cfg = RisConfig::random(nr, rho, &mut trial_rng(r.seed, nr, trial, TAG_RANDOM_PHASES));
    let am_init = match r.am_init {
        AmInit::Zero => RisConfig::zeros(nr, rho),
        AmInit::Random => RisConfig::random(nr, rho, &mut trial_rng(r.seed, nr, trial, TAG_AM_INIT)),
    };

    let mut out = Vec::new();
    for &csi in &r.csi {
        let known = channel_knowledge(r, c, &tc, csi, trial, &[0])?.remove(0);
        let (d, h) = (&known.cascade[0], &known.direct[0]);
        for &method in &r.methods {
            let Method::Single(m) = method else { continue };
            let sol = match m {
                SingleUserMethod::UpperBound => optimize_ub(d, h, rho)?,
                SingleUserMethod::LowerBound => optimize_lb(d, h, rho)?,
                SingleUserMethod::Alternating => optimize_am(d, h, &am_init, &AmOptions::default())?,
                SingleUserMethod::NoOpt => no_optimization(d, h, &random_cfg)?,
            };
            // performance is always measured on the true channel
            let c_true = truth.composite(0, &sol.config)?;
            let snr = r.bs_power_w * inner(&sol.beamformer, &c_true).norm_sqr() / noise;
            out.push(row(r, method, csi.label(), nr, None, trial)(None, "snr_db", to_db(snr)));
        }
    }
    Ok(out)
}

fn multi_user_trial(r: &ResolvedConfig, c: &SystemConstants, trial: usize) -> anyhow::Result<Vec<Row>> {
    let nr = c.ris_elements;
    let tc = draw_channels(r, c, trial)?;
    let noise = noise_power::<f64>(c);
    let num_bs = tc.scenario.num_bs();
    let bss: Vec<usize> = (0..num_bs).collect();
    let mut out = Vec::new();
    for &csi in &r.csi {
        let known = channel_knowledge(r, c, &tc, csi, trial, &bss)?;
        for &p in &r.p_jt {
            let assoc = associate_users(&tc.scenario, p)?;
            for &method in &r.methods {
                let Method::Multi(strategy) = method else { continue };
                let params = AllocationParams::new(strategy, vec![r.bs_power_w; num_bs], noise, c.ris_amplitude);
                // strategies without phase optimization share the same random phases
                let mut rng = trial_rng(r.seed, nr, trial, TAG_RANDOM_PHASES);
                let res = allocate(&known, &assoc, &params, &mut rng)?;
                let sinr = evaluate_sinr(&tc.channels.links, &res.beamformers, &res.powers, &res.config, &assoc, noise)?;
                let mk = row(r, method, csi.label(), nr, Some(p), trial);
                for (k, &s) in sinr.iter().enumerate() {
                    out.push(mk(Some(k), "sinr_db", to_db(s)));
                }
                out.push(mk(None, "geomean_sinr_db", to_db(geometric_mean(&sinr))));
            }
        }
    }
    Ok(out)
}

type GroupKey = (String, String, usize, Option<u64>);

fn group_values<'a>(rows: &'a [Row], metric: &str) -> BTreeMap<GroupKey, (Option<f64>, Vec<f64>)> {
    let mut groups: BTreeMap<GroupKey, (Option<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows.iter().filter(|row: &&'a Row| row.trial.is_some() && row.metric == metric) {
        let key = (row.method.clone(), row.estimator.clone(), row.n_ris, row.p_jt.map(f64::to_bits));
        groups.entry(key).or_insert_with(|| (row.p_jt, Vec::new())).1.push(row.value);
    }
    groups
}

fn summary_row(r: &ResolvedConfig, key: &GroupKey, p_jt: Option<f64>, metric: String, value: f64) -> Row {
    Row {
        experiment: r.experiment.as_str().to_owned(),
        method: key.0.clone(),
        estimator: key.1.clone(),
        n_ris: key.2,
        p_jt,
        trial: None,
        user: None,
        metric,
        value,
    }
}

/// Means, medians and CDF points per (method, estimator, N_R, p_JT) group.
///
/// "Average" dB figures are `10 log10` of the mean of linear values.
fn summarize(r: &ResolvedConfig, rows: &[Row]) -> anyhow::Result<Vec<Row>> {
    let mut out = Vec::new();
    let with_cdf = matches!(r.experiment, ExperimentId::SuCdf | ExperimentId::MuCdf | ExperimentId::JtSweep);
    match r.experiment {
        ExperimentId::NmseVsNr => {
            let bs_metrics: Vec<String> = {
                let mut m: Vec<String> = rows.iter().map(|row| row.metric.clone()).collect();
                m.sort();
                m.dedup();
                m
            };
            let mut overall: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
            for metric in &bs_metrics {
                for (key, (p, vals)) in group_values(rows, metric) {
                    let m = mean(&vals).context("empty NMSE group")?;
                    overall.entry(key.clone()).or_default().push(m);
                    out.push(summary_row(r, &key, p, metric.clone(), m));
                }
            }
            for (key, per_bs) in overall {
                let m = mean(&per_bs).context("empty NMSE group")?;
                out.push(summary_row(r, &key, None, "nmse".into(), m));
                out.push(summary_row(r, &key, None, "nmse_db".into(), to_db(m)));
            }
        }
        ExperimentId::SuCdf | ExperimentId::SuVsNr => {
            for (key, (p, vals)) in group_values(rows, "snr_db") {
                out.push(summary_row(r, &key, p, "avg_snr_db".into(), mean_linear_db(&vals).context("empty group")?));
                out.push(summary_row(r, &key, p, "median_snr_db".into(), median(&vals).context("empty group")?));
                if with_cdf {
                    out.extend(cdf_rows(r, &key, p, "snr_db", &vals)?);
                }
            }
        }
        ExperimentId::MuCdf | ExperimentId::MuSinrVsNr | ExperimentId::JtSweep => {
            for (key, (p, vals)) in group_values(rows, "sinr_db") {
                out.push(summary_row(r, &key, p, "avg_sinr_db".into(), mean_linear_db(&vals).context("empty group")?));
            }
            for (key, (p, vals)) in group_values(rows, "geomean_sinr_db") {
                out.push(summary_row(r, &key, p, "median_geomean_sinr_db".into(), median(&vals).context("empty group")?));
                out.push(summary_row(r, &key, p, "avg_geomean_sinr_db".into(), mean_linear_db(&vals).context("empty group")?));
                if with_cdf {
                    out.extend(cdf_rows(r, &key, p, "geomean_sinr_db", &vals)?);
                }
            }
        }
    }
    Ok(out)
}

fn cdf_rows(r: &ResolvedConfig, key: &GroupKey, p: Option<f64>, base: &str, vals: &[f64]) -> anyhow::Result<Vec<Row>> {
    let grid = db_grid(vals, r.cdf_step_db);
    Ok(compute_cdf(vals, &grid)?
        .into_iter()
        .map(|(x, f)| summary_row(r, key, p, format!("{base}_cdf@{x}"), f))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::Selector;

    fn small(e: ExperimentId) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(e);
        cfg.trials = 3;
        cfg.bs_antennas = Some(4);
        cfg.ris_elements = Some(4);
        if !e.is_single_user() {
            cfg.users = Some(2);
        }
        if e.sweeps_ris() {
            cfg.ris_sweep = Some(vec![2, 4]);
        }
        cfg
    }

    #[test]
    fn trial_streams_are_independent_of_trial_count() {
        let a = run_experiment(&small(ExperimentId::SuCdf)).unwrap();
        let mut more = small(ExperimentId::SuCdf);
        more.trials = 5;
        let b = run_experiment(&more).unwrap();
        let sel = Selector { method: Some("AM"), ..Default::default() };
        let first = a.trial_values(&sel, "snr_db");
        assert_eq!(first[..], b.trial_values(&sel, "snr_db")[..3]);
    }

    #[test]
    fn every_experiment_runs_at_toy_scale() {
        for e in ExperimentId::ALL {
            let t = run_experiment(&small(e)).unwrap();
            assert!(!t.is_empty(), "{e}");
            assert!(t.rows.iter().all(|r| r.experiment == e.as_str()));
            for row in &t.rows {
                assert!(!row.value.is_nan(), "{e}: {row:?}");
            }
        }
    }

    #[test]
    fn cdf_rows_are_monotone() {
        let t = run_experiment(&small(ExperimentId::MuCdf)).unwrap();
        let cdf = t.cdf(&Selector { method: Some("Joint-Opt"), ..Default::default() }, "geomean_sinr_db");
        assert!(!cdf.is_empty());
        assert!(cdf.windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn optimized_phases_beat_random_phases_with_perfect_csi() {
        let mut cfg = small(ExperimentId::SuVsNr);
        cfg.trials = 20;
        let t = run_experiment(&cfg).unwrap();
        for nr in [2, 4] {
            let sel = |m| Selector { method: Some(m), n_ris: Some(nr), ..Default::default() };
            let am = t.summary(&sel("AM"), "avg_snr_db").unwrap();
            let random = t.summary(&sel("No-Opt"), "avg_snr_db").unwrap();
            assert!(am > random, "N_R = {nr}: {am} vs {random}");
        }
    }
}
