//! End-to-end synthetic experiment: counterfactual-trained vs uniformly
//! trained termination classifiers, with fixed-budget and oracle references.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stopgate::cfgen::{build_manifest, uniform_manifest, BalanceParams, DatasetManifest};
use stopgate::domain::{Action, EvalReport};
use stopgate::eval::evaluate;
use stopgate::labeling::{BernoulliSampler, SynthEnv, SynthPerturber};
use stopgate::policy::{train_logistic, FeatureMode, FeatureSpec, FixedBudget, OraclePolicy, Policy};
use stopgate::segment::marker_list_hash;

use crate::commands::{markers, summary_header, summary_row};
use crate::config::RunConfig;
use crate::io::{self, CheckpointFile, ReportFile, Stamp};
use crate::CliError;

/// Minimum seed-averaged OTR advantage of the counterfactual policy.
pub const MIN_OTR_GAP: f64 = 0.1;
/// Allowed |diff_from_mean| of the fixed-budget baseline.
pub const FIXED_DIFF_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub cf_manifest_hash: String,
    pub sft_manifest_hash: String,
    pub n_cf_examples: usize,
    pub n_pairs: usize,
    pub fixed_budget: usize,
    pub cf: EvalReport,
    pub sft: EvalReport,
    pub fixed: EvalReport,
    /// Oracle at gamma = 1, used for the OTR check.
    pub oracle: EvalReport,
    /// Oracle at the configured gamma, when that differs from 1.
    pub oracle_gamma: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproSummary {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub seeds: Vec<SeedResult>,
    pub mean_otr_gap: f64,
    pub mean_cf_diff_from_mean: f64,
    pub checks: Vec<Check>,
}

impl ReproSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{} config_hash={}\n", self.stamp.version, self.stamp.config_hash);
        for s in &self.seeds {
            out.push_str(&format!(
                "\nseed {} ({} pairs, {} CF examples, fixed budget {})\n",
                s.seed, s.n_pairs, s.n_cf_examples, s.fixed_budget
            ));
            out.push_str(&summary_header(s.cf.gamma));
            for r in [&s.cf, &s.sft, &s.fixed, &s.oracle] {
                out.push_str(&summary_row(r));
            }
            if let Some(r) = &s.oracle_gamma {
                out.push_str(&summary_row(r));
            }
        }
        out.push_str(&format!(
            "\nmean OTR gap (cf - sft): {:+.3}\nmean cf diff-from-mean: {:+.3}\n\n",
            self.mean_otr_gap, self.mean_cf_diff_from_mean
        ));
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out
    }
}

fn run_seed(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<SeedResult, CliError> {
    let usage = |e: stopgate::labeling::LabelingError| CliError::Usage(e.to_string());
    let exact_env = SynthEnv::new(cfg.synth_config(seed)).map_err(usage)?;
    let sampled_env = SynthEnv::new(stopgate::labeling::SynthConfig {
        label_noise_samples: cfg.n_label_samples,
        ..cfg.synth_config(seed)
    })
    .map_err(usage)?;

    // Train labels are sampled like real grader labels; eval labels are the
    // exact curve so the metrics measure the policies, not label noise.
    let train = sampled_env.label(&exact_env.generate_from(0, cfg.n_train), seed)?;
    let eval = exact_env.label(&exact_env.generate_from(cfg.n_train, cfg.n_eval), seed)?;

    let spec = FeatureSpec {
        mode: FeatureMode::Features,
        horizon: cfg.horizon_t,
        observation_dim: cfg.feature_dim,
    };
    let params = cfg.build_params(seed, marker_list_hash(&markers(cfg)?), Some(spec.clone()));
    let provider = BernoulliSampler(exact_env.oracle());
    let perturber = SynthPerturber { env: exact_env.clone() };
    let built = build_manifest(&train, &provider, Some(&perturber), None, &params)?;
    let mut cf_manifest = built.manifest;
    cf_manifest.header.config_hash = Some(cfg.hash());

    let n_term = cf_manifest
        .examples
        .iter()
        .filter(|e| e.decision == Action::Terminate)
        .count();
    let balance = BalanceParams {
        continue_ratio: cfg.continue_ratio,
        seed,
        jump_threshold: cfg.jump_threshold,
        low_threshold: cfg.low_threshold,
        marker_list_hash: params.marker_list_hash.clone(),
        feature_spec: Some(spec),
        n_pairs: 0,
        skipped: Vec::new(),
    };
    let mut sft_manifest: DatasetManifest =
        uniform_manifest(&train, n_term, cf_manifest.examples.len() - n_term, &balance)?;
    sft_manifest.header.config_hash = Some(cfg.hash());

    let hyper = cfg.train_hyper(seed);
    let mut cf_policy = train_logistic(&cf_manifest, &hyper)?;
    cf_policy.name = "cf-logistic".into();
    let mut sft_policy = train_logistic(&sft_manifest, &hyper)?;
    sft_policy.name = "sft-logistic".into();

    let opts = cfg.eval_options(seed);
    let cf = evaluate(&cf_policy, &eval, &opts)?;
    let sft = evaluate(&sft_policy, &eval, &opts)?;
    let k = cfg
        .fixed_budget
        .unwrap_or_else(|| (cf.mean_stop_index.round() as usize).clamp(1, cfg.horizon_t));
    let fixed = evaluate(&FixedBudget::new(k)?, &eval, &opts)?;
    let oracle_policy = OraclePolicy::new(&eval, 1.0)?;
    let oracle = evaluate(&oracle_policy, &eval, &stopgate::eval::EvalOptions { gamma: 1.0, ..opts.clone() })?;
    let oracle_gamma = if cfg.gamma != 1.0 {
        let p = OraclePolicy::new(&eval, cfg.gamma)?;
        Some(evaluate(&p as &dyn Policy, &eval, &opts)?)
    } else {
        None
    };

    let dir = out_dir.join(format!("seed-{seed}"));
    let stamp = Stamp::new(cfg);
    io::write_manifest(&dir.join("cf_manifest.jsonl"), &cf_manifest)?;
    io::write_manifest(&dir.join("sft_manifest.jsonl"), &sft_manifest)?;
    io::write_json(&dir.join("cf_policy.json"), &CheckpointFile { stamp: stamp.clone(), policy: cf_policy })?;
    io::write_json(&dir.join("sft_policy.json"), &CheckpointFile { stamp: stamp.clone(), policy: sft_policy })?;
    for (name, r) in [("cf", &cf), ("sft", &sft), ("fixed", &fixed), ("oracle", &oracle)]
        .into_iter()
        .chain(oracle_gamma.as_ref().map(|r| ("oracle_gamma", r)))
    {
        io::write_json(
            &dir.join(format!("report_{name}.json")),
            &ReportFile { stamp: stamp.clone(), report: r.clone() },
        )?;
    }

    Ok(SeedResult {
        seed,
        cf_manifest_hash: cf_manifest.hash(),
        sft_manifest_hash: sft_manifest.hash(),
        n_cf_examples: cf_manifest.examples.len(),
        n_pairs: built.pairs.len(),
        fixed_budget: k,
        cf,
        sft,
        fixed,
        oracle,
        oracle_gamma,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs every seed and writes all artifacts; ordering failures are reported
/// in the summary, not as errors.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<ReproSummary, CliError> {
    cfg.validate()?;
    let seeds = (0..cfg.n_seeds as u64)
        .map(|i| run_seed(cfg, cfg.seed + i, out_dir))
        .collect::<Result<Vec<_>, _>>()?;

    let gaps: Vec<f64> = seeds
        .iter()
        .map(|s| s.cf.otr.unwrap_or(f64::NAN) - s.sft.otr.unwrap_or(f64::NAN))
        .collect();
    let mean_otr_gap = mean(&gaps);
    let cf_diffs: Vec<f64> = seeds.iter().map(|s| s.cf.frq_sr_diff_from_mean).collect();
    let mean_cf_diff = mean(&cf_diffs);
    let worst_fixed = seeds
        .iter()
        .map(|s| s.fixed.frq_sr_diff_from_mean.abs())
        .fold(0.0, f64::max);
    let oracle_otrs: Vec<String> = seeds
        .iter()
        .map(|s| s.oracle.otr.map_or("n/a".into(), |v| format!("{v:.3}")))
        .collect();

    let checks = vec![
        Check {
            name: "oracle OTR = 1 at gamma 1".into(),
            passed: seeds.iter().all(|s| s.oracle.otr == Some(1.0)),
            detail: format!("per seed: {}", oracle_otrs.join(", ")),
        },
        Check {
            name: format!("mean OTR gap cf - sft >= {MIN_OTR_GAP}"),
            passed: mean_otr_gap >= MIN_OTR_GAP,
            detail: format!("gaps {gaps:.3?}, mean {mean_otr_gap:.3}"),
        },
        Check {
            name: "cf diff-from-mean > 0".into(),
            passed: mean_cf_diff > 0.0,
            detail: format!("per seed {cf_diffs:.3?}, mean {mean_cf_diff:.3}"),
        },
        Check {
            name: format!("fixed-budget |diff-from-mean| <= {FIXED_DIFF_TOL}"),
            passed: worst_fixed <= FIXED_DIFF_TOL,
            detail: format!("worst {worst_fixed:.4}"),
        },
    ];
    let summary = ReproSummary {
        stamp: Stamp::new(cfg),
        seeds,
        mean_otr_gap,
        mean_cf_diff_from_mean: mean_cf_diff,
        checks,
    };
    io::write_json(&out_dir.join("comparison.json"), &summary)?;
    io::write_text(&out_dir.join("comparison.txt"), &summary.table())?;
    Ok(summary)
}

pub fn cmd_repro(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let summary = run(cfg, out_dir)?;
    print!("{}", summary.table());
    if summary.passed() {
        return Ok(());
    }
    let failed: Vec<String> = summary
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    Err(CliError::Ordering(format!("ordering check failed: {}", failed.join("; "))))
}
