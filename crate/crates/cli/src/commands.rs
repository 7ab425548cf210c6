use std::path::Path;

use serde::Serialize;
use stopgate::cfgen::{
    build_manifest, export_chat, LlmRationale, Perturber, RationaleProvider, RemotePerturber,
    TemplateRationale,
};
use stopgate::domain::{Action, Domain, EvalReport, Trajectory};
use stopgate::eval::{evaluate, export_rl_dataset, probe_split_lr, term_rate_curve};
use stopgate::labeling::{
    label_trajectory, BernoulliSampler, GraderProvider, LabelPlan, PromptTemplates,
    SuccessProvider, SynthEnv, SynthPerturber,
};
use stopgate::policy::{train_logistic, FeatureMode, FeatureSpec, LogisticPolicy};
use stopgate::segment::{default_markers, load_markers, marker_list_hash, segment_episodes};
use stopgate::transport::HttpClient;

use crate::config::{RationaleMode, RunConfig};
use crate::io::{self, CheckpointFile, ReportFile, Stamp};
use crate::policy_spec::{build_policy, parse_policy_spec};
use crate::CliError;

pub fn markers(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    match &cfg.marker_file {
        Some(p) => Ok(load_markers(p)?),
        None => Ok(default_markers()),
    }
}

fn templates(cfg: &RunConfig) -> Result<PromptTemplates, CliError> {
    match &cfg.prompt_dir {
        Some(dir) => Ok(PromptTemplates::load_dir(dir)?),
        None => Ok(PromptTemplates::default()),
    }
}

/// Feature layout of a trajectory set, when every observation has a vector.
pub fn infer_feature_spec(trajectories: &[Trajectory], horizon: usize) -> Option<FeatureSpec> {
    let first = trajectories.first()?.observations.first()?.features.as_ref()?.len();
    let uniform = trajectories
        .iter()
        .flat_map(|t| &t.observations)
        .all(|o| o.features.as_ref().is_some_and(|f| f.len() == first));
    uniform.then_some(FeatureSpec {
        mode: FeatureMode::Features,
        horizon,
        observation_dim: first,
    })
}

fn single_domain(trajectories: &[Trajectory]) -> Result<Domain, CliError> {
    let d = trajectories
        .first()
        .ok_or_else(|| CliError::Runtime("no trajectories in input".into()))?
        .domain;
    if let Some(t) = trajectories.iter().find(|t| t.domain != d) {
        return Err(CliError::Runtime(format!(
            "mixed domains: {} is {} but the input starts with {d}",
            t.problem_id, t.domain
        )));
    }
    Ok(d)
}

/// Success provider for a domain: the synthetic oracle (optionally sampled)
/// or the LLM grader.
pub fn provider_for(domain: Domain, cfg: &RunConfig) -> Result<Box<dyn SuccessProvider>, CliError> {
    if domain == Domain::Synthetic {
        let oracle = SynthEnv::new(cfg.synth_config(cfg.seed))
            .map_err(|e| CliError::Usage(e.to_string()))?
            .oracle();
        return Ok(if cfg.label_noise_samples == 0 {
            Box::new(oracle)
        } else {
            Box::new(BernoulliSampler(oracle))
        });
    }
    let endpoint = cfg.endpoint(None);
    if endpoint.url.is_none() {
        return Err(CliError::Usage(format!(
            "labeling {domain} trajectories needs a grader endpoint (endpoint_url or STOPGATE_LLM_URL)"
        )));
    }
    Ok(Box::new(GraderProvider {
        client: HttpClient::new(endpoint)?,
        templates: templates(cfg)?,
    }))
}

/// Writes trajectories `start..start + n` of the seed's environment. Disjoint
/// ranges of one seed share the hidden key direction, so they make train and
/// held-out sets; a different seed is a different environment.
pub fn cmd_synth(cfg: &RunConfig, n: usize, start: usize, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let env = SynthEnv::new(cfg.synth_config(cfg.seed)).map_err(|e| CliError::Usage(e.to_string()))?;
    let labeled = env.label(&env.generate_from(start, n), cfg.seed)?;
    io::write_trajectories(out, &labeled, &Stamp::new(cfg))?;
    println!("wrote {n} trajectories to {}", out.display());
    Ok(())
}

pub fn cmd_label(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let trajectories = io::read_trajectories(input)?;
    let domain = single_domain(&trajectories)?;
    let provider = provider_for(domain, cfg)?;
    let samples = if domain == Domain::Synthetic && cfg.label_noise_samples > 0 {
        cfg.label_noise_samples
    } else {
        cfg.n_label_samples
    };
    let mut plan = LabelPlan::for_domain(domain, samples, cfg.seed);
    plan.label_baseline = domain != Domain::Math;
    let labeled = trajectories
        .iter()
        .map(|t| label_trajectory(provider.as_ref(), t, &plan))
        .collect::<Result<Vec<_>, _>>()?;
    io::write_trajectories(out, &labeled, &Stamp::new(cfg))?;
    println!("labeled {} trajectories", labeled.len());
    Ok(())
}

pub fn cmd_build(cfg: &RunConfig, input: &Path, out: &Path, chat_out: Option<&Path>) -> Result<(), CliError> {
    cfg.validate()?;
    let trajectories = io::read_trajectories(input)?;
    let domain = single_domain(&trajectories)?;
    let provider = provider_for(domain, cfg)?;
    let perturber: Option<Box<dyn Perturber>> = match (domain, &cfg.perturber_url) {
        (Domain::Synthetic, _) => Some(Box::new(SynthPerturber {
            env: SynthEnv::new(cfg.synth_config(cfg.seed)).map_err(|e| CliError::Usage(e.to_string()))?,
        })),
        (Domain::Medical, Some(url)) => Some(Box::new(RemotePerturber::new(url.clone(), cfg.endpoint(Some(url)))?)),
        (Domain::Medical, None) => {
            return Err(CliError::Usage("medical builds need perturber_url in the config".into()))
        }
        (Domain::Math, _) => None,
    };
    let rationale: Option<Box<dyn RationaleProvider>> = match cfg.rationale {
        RationaleMode::None => None,
        RationaleMode::Template => Some(Box::new(TemplateRationale)),
        RationaleMode::Llm => Some(Box::new(LlmRationale {
            client: HttpClient::new(cfg.endpoint(None))?,
            templates: templates(cfg)?,
        })),
    };
    let params = cfg.build_params(
        cfg.seed,
        marker_list_hash(&markers(cfg)?),
        infer_feature_spec(&trajectories, cfg.horizon_t),
    );
    let outcome = build_manifest(
        &trajectories,
        provider.as_ref(),
        perturber.as_deref(),
        rationale.as_deref(),
        &params,
    )?;
    let mut manifest = outcome.manifest;
    manifest.header.config_hash = Some(cfg.hash());
    io::write_manifest(out, &manifest)?;

    println!(
        "{} pairs, {} without breakpoint, {} skipped",
        outcome.pairs.len(),
        outcome.no_breakpoint.len(),
        manifest.header.skipped.len()
    );
    for id in &manifest.header.skipped {
        println!("  skipped {id}");
    }
    for (prov, n) in &manifest.header.counts {
        println!("  {:<26} {n}", serde_json::to_string(prov).unwrap_or_default().trim_matches('"'));
    }
    println!(
        "{} examples, {:.1}% terminate -> {}",
        manifest.examples.len(),
        100.0 * manifest.terminate_fraction(),
        out.display()
    );
    if let Some(path) = chat_out {
        let records = export_chat(&manifest, &trajectories, &templates(cfg)?)?;
        io::write_jsonl(path, &records, &Stamp::new(cfg))?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, manifest_path: &Path, name: &str) -> Result<LogisticPolicy, CliError> {
    let manifest = io::read_manifest(manifest_path)?;
    let mut model = train_logistic(&manifest, &cfg.train_hyper(cfg.seed))?;
    model.name = name.to_string();
    Ok(model)
}

pub fn cmd_train(cfg: &RunConfig, manifest: &Path, out: &Path, name: &str) -> Result<(), CliError> {
    cfg.validate()?;
    let policy = train(cfg, manifest, name)?;
    io::write_json(out, &CheckpointFile { stamp: Stamp::new(cfg), policy })?;
    println!("checkpoint -> {}", out.display());
    Ok(())
}

pub fn summary_header(gamma: f64) -> String {
    format!(
        "{:<28} {:>8} {:>10} {:>8} {:>10} {:>14}\n",
        "policy",
        "FRQ SR",
        "diff-mean",
        "OTR",
        "mean stop",
        format!("return(g={gamma})")
    )
}

pub fn summary_row(r: &EvalReport) -> String {
    let otr = r.otr.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    format!(
        "{:<28} {:>8.3} {:>+10.3} {:>8} {:>10.2} {:>14.3}\n",
        r.policy, r.frq_sr, r.frq_sr_diff_from_mean, otr, r.mean_stop_index, r.discounted_return
    )
}

pub fn cmd_eval(
    cfg: &RunConfig,
    policy: &str,
    input: &Path,
    out: &Path,
    confidence: Option<&Path>,
) -> Result<(), CliError> {
    cfg.validate()?;
    let spec = parse_policy_spec(policy)?;
    let trajectories = io::read_trajectories(input)?;
    let policy = build_policy(&spec, cfg, &trajectories, confidence)?;
    let report = evaluate(policy.as_ref(), &trajectories, &cfg.eval_options(cfg.seed))?;
    print!("{}{}", summary_header(cfg.gamma), summary_row(&report));
    if report.otr.is_none() {
        println!("OTR undefined: no trajectory has a breakpoint");
    }
    io::write_json(out, &ReportFile { stamp: Stamp::new(cfg), report })
}

pub fn cmd_curve(
    cfg: &RunConfig,
    policy: &str,
    input: &Path,
    out: &Path,
    problem_id: Option<&str>,
    confidence: Option<&Path>,
) -> Result<(), CliError> {
    cfg.validate()?;
    let spec = parse_policy_spec(policy)?;
    let trajectories = io::read_trajectories(input)?;
    let t = match problem_id {
        Some(id) => trajectories
            .iter()
            .find(|t| t.problem_id == id)
            .ok_or_else(|| CliError::Runtime(format!("no trajectory {id} in {}", input.display())))?,
        None => trajectories
            .first()
            .ok_or_else(|| CliError::Runtime("no trajectories in input".into()))?,
    };
    let policy = build_policy(&spec, cfg, &trajectories, confidence)?;
    let curve = term_rate_curve(policy.as_ref(), t);
    if let Some((step, msg)) = &curve.fault {
        log::warn!("{}: policy failed at prefix {step}: {msg}", t.problem_id);
    }
    let stamp = format!("# {} config_hash={} problem_id={}\n", stopgate::VERSION, cfg.hash(), t.problem_id);
    io::write_text(out, &(stamp + &curve.to_csv()))
}

pub fn cmd_export_rl(cfg: &RunConfig, manifest: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let manifest = io::read_manifest(manifest)?;
    let trajectories = io::read_trajectories(input)?;
    let records = export_rl_dataset(&manifest, &trajectories)?;
    let flagged = records.iter().filter(|r| r.inconsistent).count();
    io::write_jsonl(out, &records, &Stamp::new(cfg))?;
    println!("{} records, {flagged} with reward -1", records.len());
    Ok(())
}

#[derive(Serialize)]
struct EpisodeOut<'a> {
    start: usize,
    end: usize,
    text: &'a str,
}

#[derive(Serialize)]
struct SegmentOut<'a> {
    #[serde(flatten)]
    stamp: Stamp,
    marker_list_hash: String,
    markers_hit: Vec<(String, usize)>,
    episodes: Vec<EpisodeOut<'a>>,
}

pub fn cmd_segment(cfg: &RunConfig, trace: &Path, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let text = std::fs::read_to_string(trace)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", trace.display())))?;
    let markers = markers(cfg)?;
    let split = segment_episodes(&text, &markers)?;
    let episodes = split
        .episodes
        .iter()
        .map(|&(start, end)| EpisodeOut {
            start,
            end,
            text: &text[start..end],
        })
        .collect();
    println!("{} episodes", split.len());
    io::write_json(
        out,
        &SegmentOut {
            stamp: Stamp::new(cfg),
            marker_list_hash: marker_list_hash(&markers),
            markers_hit: split.markers_hit.clone(),
            episodes,
        },
    )
}

pub fn cmd_probe(cfg: &RunConfig, manifest: &Path, out: &Path, train_fraction: f64) -> Result<(), CliError> {
    cfg.validate()?;
    let manifest = io::read_manifest(manifest)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for e in &manifest.examples {
        let x = e.features.clone().ok_or_else(|| {
            CliError::Runtime(format!("example {}@{} has no features", e.problem_id, e.prefix_len))
        })?;
        xs.push(x);
        ys.push(e.decision == Action::Terminate);
    }
    let report = probe_split_lr(&xs, &ys, train_fraction, cfg.seed)?;
    println!(
        "train acc {:.3} (n={}), test acc {:.3} (n={})",
        report.train_acc, report.n_train, report.test_acc, report.n_test
    );
    #[derive(Serialize)]
    struct ProbeOut {
        #[serde(flatten)]
        stamp: Stamp,
        probe: stopgate::eval::ProbeReport,
    }
    io::write_json(out, &ProbeOut { stamp: Stamp::new(cfg), probe: report })
}
