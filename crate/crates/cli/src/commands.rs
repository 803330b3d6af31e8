//! One function per subcommand. Every command is deterministic for a fixed
//! seed: randomness comes from seeded ChaCha streams and parallel work is
//! reduced in a fixed order.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use mosaic_core::curriculum::SamplerState;
use mosaic_core::fld::{clip_states, fit_gmm, fit_segments, segments, synthesize, FldLibrary};
use mosaic_core::motion_bank::{ingest_clip, list_clip_files, MotionBank, MotionClip, SourceId};
use mosaic_core::policy::adapt::{adapt_strategy, behavior_clone, AdaptConfig, AdaptData, ImitationConfig, Strategy};
use mosaic_core::policy::agent::{NetPolicy, ReferenceFeed};
use mosaic_core::policy::checkpoint::{load_policy, save_policy};
use mosaic_core::policy::ppo::{CurvePoint, TrainConfig, Trainer};
use mosaic_core::reward::{compute_rewards, FrameState, RewardSpec};
use mosaic_core::sim::demo::{adaptation_clips, DemoMotion};
use mosaic_core::sim::env::reference_state;
use mosaic_core::sim::{evaluate_clips, EnvConfig, Metrics, OraclePolicy, RandomizationConfig, RobotModel};
use mosaic_core::teleop::{
    measure_delay, packet_log, packetize, packetize_clip, stream_clip, transmit_pipeline, ChannelConfig, ChannelPreset,
    DelayStats,
};
use mosaic_core::Quatd;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::artifacts::{csv_string, read_csv, write_csv, Manifest};
use crate::config::{load_toml, validate_stages, ConfigError, ExperimentConfig, TrainMethod};

/// A report was asked for run directories that hold no metrics.
#[derive(Debug, thiserror::Error)]
#[error("missing artifacts: {0}")]
pub struct MissingArtifacts(pub String);

/// State shared by every subcommand.
pub struct Ctx {
    pub seed: u64,
    pub cfg: ExperimentConfig,
    pub out: Option<PathBuf>,
    pub args: Vec<String>,
}

impl Ctx {
    fn out_dir(&self, default: &str) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn out_file(&self, default: &str) -> Result<PathBuf> {
        let file = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(file)
    }

    fn manifest(&self, command: &str) -> Result<Manifest> {
        Manifest::new(command, self.args.clone(), self.seed, &self.cfg)
    }

    fn eval_env(&self) -> EnvConfig {
        let mut env = self.cfg.train.env.clone();
        if !self.cfg.eval.randomize {
            env.randomization = RandomizationConfig::disabled();
        }
        env
    }
}

/// Writes text to `--out` when given, otherwise to stdout. Files get a
/// sidecar manifest.
fn emit(ctx: &Ctx, command: &str, text: &str, inputs: &[&Path]) -> Result<()> {
    match &ctx.out {
        Some(path) => {
            let path = ctx.out_file(&path.display().to_string())?;
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            sidecar_manifest(ctx, command, &path, inputs)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sidecar_manifest(ctx: &Ctx, command: &str, file: &Path, inputs: &[&Path]) -> Result<()> {
    let mut m = ctx.manifest(command)?;
    for i in inputs {
        m.input(i)?;
    }
    let dir = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = file.file_name().ok_or_else(|| anyhow!("output path has no file name"))?.to_string_lossy().to_string();
    m.outputs_in(dir, &[&name])?;
    m.write(&dir.join(format!("{name}.manifest.json")))
}

/// Loads one clip file or every `.mbank` in a directory, checked against the
/// toy robot.
pub fn load_clips(path: &Path) -> Result<Vec<Arc<MotionClip>>> {
    let files = if path.is_dir() { list_clip_files(path)? } else { vec![path.to_path_buf()] };
    if files.is_empty() {
        bail!("no .mbank files in {}", path.display());
    }
    let model = RobotModel::<f64>::toy_biped();
    files
        .iter()
        .map(|f| {
            let clip = ingest_clip(f).with_context(|| format!("reading {}", f.display()))?;
            if clip.dof != model.dof() || clip.bodies != model.body_count() {
                bail!(
                    "{}: clip has {} joints and {} bodies, the toy robot {} and {}",
                    f.display(),
                    clip.dof,
                    clip.bodies,
                    model.dof(),
                    model.body_count()
                );
            }
            Ok(Arc::new(clip))
        })
        .collect()
}

fn require<'a>(flag: Option<&'a PathBuf>, from_config: Option<&'a PathBuf>, name: &str) -> Result<&'a PathBuf> {
    flag.or(from_config).ok_or_else(|| ConfigError::new(name, "no path given on the command line or in the config").into())
}

fn metrics_csv(m: &Metrics) -> String {
    format!("{}\n{}\n", Metrics::CSV_HEADER, m.csv_row())
}

fn source_name(s: SourceId) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn ingest(ctx: &Ctx, dir: &Path) -> Result<()> {
    let files = list_clip_files(dir)?;
    let clips = load_clips(dir)?;
    let owned: Vec<MotionClip> = clips.iter().map(|c| (**c).clone()).collect();
    let bank = MotionBank::build(&owned)?;
    let out = ctx.out_dir("bank")?;
    let mut rows = Vec::new();
    for (m, (clip, file)) in owned.iter().zip(&files).enumerate() {
        let name = file.file_name().expect("listed file").to_string_lossy().to_string();
        clip.save(&out.join(&name))?;
        rows.push(vec![
            m.to_string(),
            name,
            clip.label.clone(),
            source_name(clip.source_id),
            clip.frames().to_string(),
            clip.fps.to_string(),
            bank.offsets()[m].to_string(),
        ]);
    }
    write_csv(&out.join("bank_index.csv"), &["motion", "file", "label", "source_id", "frames", "fps", "offset"], &rows)?;
    let mut man = ctx.manifest("ingest")?;
    man.input(dir)?;
    let mut names: Vec<String> = rows.iter().map(|r| r[1].clone()).collect();
    names.push("bank_index.csv".into());
    man.outputs_in(&out, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    man.write(&out.join("manifest.json"))?;
    log::info!("ingested {} clips, {} frames", bank.motion_count(), bank.total_frames());
    Ok(())
}

pub fn validate(ctx: &Ctx, path: &Path) -> Result<()> {
    let files = if path.is_dir() { list_clip_files(path)? } else { vec![path.to_path_buf()] };
    let mut rows = Vec::new();
    let mut failures = 0;
    for f in &files {
        let name = f.display().to_string();
        match ingest_clip(f) {
            Ok(c) => rows.push(vec![
                name,
                "ok".into(),
                c.frames().to_string(),
                c.fps.to_string(),
                c.dof.to_string(),
                c.bodies.to_string(),
                c.label.clone(),
                String::new(),
            ]),
            Err(e) => {
                failures += 1;
                rows.push(vec![name, "invalid".into(), String::new(), String::new(), String::new(), String::new(), String::new(), e.to_string()]);
            }
        }
    }
    let text = csv_string(&["file", "status", "frames", "fps", "dof", "bodies", "label", "error"], &rows)?;
    emit(ctx, "validate", &text, &[path])?;
    if failures > 0 {
        bail!("{failures} of {} clips failed validation", files.len());
    }
    if files.is_empty() {
        bail!("no .mbank files in {}", path.display());
    }
    Ok(())
}

pub fn sample_stats(ctx: &Ctx, bank: Option<&PathBuf>, draws: Option<usize>, state: Option<&PathBuf>, step: Option<u64>) -> Result<()> {
    let bank_path = require(bank, ctx.cfg.bank.as_ref(), "bank")?;
    let clips = load_clips(bank_path)?;
    let lengths: Vec<usize> = clips.iter().map(|c| c.frames()).collect();
    let mut st = match state {
        Some(p) => {
            let s: SamplerState = serde_json::from_str(&std::fs::read_to_string(p)?)
                .map_err(|e| ConfigError::new(p.display().to_string(), e.to_string()))?;
            if s.lengths != lengths {
                return Err(ConfigError::new(p.display().to_string(), "sampler state does not match the bank's motion lengths").into());
            }
            s
        }
        None => SamplerState::new(ctx.cfg.train.sampler.clone(), &lengths).map_err(|e| ConfigError::new("train.sampler", e.to_string()))?,
    };
    if let Some(s) = step {
        st.step = s;
    }
    let draws = draws.unwrap_or(ctx.cfg.stats.draws);
    let text = sampler_stats_csv(&st, &clips, draws, ctx.seed)?;
    let mut inputs: Vec<&Path> = vec![bank_path];
    if let Some(p) = state {
        inputs.push(p);
    }
    emit(ctx, "sample-stats", &text, &inputs)
}

fn sampler_stats_csv(st: &SamplerState, clips: &[Arc<MotionClip>], draws: usize, seed: u64) -> Result<String> {
    let p = st.motion_probabilities();
    let fail = st.failure_rates();
    let novel = st.novelty_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; p.len()];
    for _ in 0..draws {
        counts[st.sample_motion(&mut rng)] += 1;
    }
    let rows: Vec<Vec<String>> = (0..p.len())
        .map(|m| {
            let emp = counts[m] as f64 / draws as f64;
            vec![
                m.to_string(),
                clips[m].label.clone(),
                clips[m].frames().to_string(),
                fail[m].to_string(),
                novel[m].to_string(),
                p[m].to_string(),
                emp.to_string(),
                (emp - p[m]).abs().to_string(),
            ]
        })
        .collect();
    let l1: f64 = rows.iter().map(|r| r[7].parse::<f64>().unwrap_or(0.0)).sum();
    log::info!("sampler L1 distance over {draws} draws: {l1:.5}");
    csv_string(&["motion", "label", "frames", "failure_rate", "novelty_weight", "analytic_p", "empirical_p", "abs_diff"], &rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatePair {
    robot: FrameState<f64>,
    reference: FrameState<f64>,
}

fn reward_spec(ctx: &Ctx, flag: Option<&PathBuf>) -> Result<(RewardSpec, Option<PathBuf>)> {
    match flag.or(ctx.cfg.rewards.as_ref()) {
        Some(p) => {
            let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let spec = RewardSpec::from_toml(&src).map_err(|e| ConfigError::new(p.display().to_string(), e.to_string()))?;
            Ok((spec, Some(p.clone())))
        }
        None => Ok((RewardSpec::default(), None)),
    }
}

pub fn reward_eval(ctx: &Ctx, pair: &Path, rewards: Option<&PathBuf>) -> Result<()> {
    let src = std::fs::read_to_string(pair).with_context(|| format!("reading {}", pair.display()))?;
    let pair_v: StatePair = serde_json::from_str(&src).with_context(|| format!("parsing {}", pair.display()))?;
    let (spec, spec_path) = reward_spec(ctx, rewards)?;
    let model = RobotModel::toy_biped();
    let r = compute_rewards(&pair_v.robot, &pair_v.reference, &spec, &model)?;
    let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    let mut rows: Vec<Vec<String>> = r
        .terms
        .iter()
        .zip(&spec.terms)
        .map(|(t, s)| {
            vec![
                name(serde_json::to_value(t.id).unwrap_or_default()),
                name(serde_json::to_value(s.kind).unwrap_or_default()),
                s.weight.to_string(),
                t.value.to_string(),
                (t.weighted + 0.0).to_string(),
            ]
        })
        .collect();
    rows.push(vec!["total".into(), String::new(), String::new(), String::new(), r.total.to_string()]);
    let text = csv_string(&["term", "kind", "weight", "value", "weighted"], &rows)?;
    let mut inputs: Vec<&Path> = vec![pair];
    if let Some(p) = &spec_path {
        inputs.push(p);
    }
    emit(ctx, "reward-eval", &text, &inputs)
}

fn write_policy_run(
    ctx: &Ctx,
    command: &str,
    out: &Path,
    policy: &NetPolicy,
    metrics: &Metrics,
    extra: &[&str],
    inputs: &[&Path],
) -> Result<()> {
    let model = RobotModel::<f64>::toy_biped();
    save_policy(policy, model.dof(), model.body_count(), &out.join("policy.ckpt"))?;
    std::fs::write(out.join("metrics.csv"), metrics_csv(metrics))?;
    let mut man = ctx.manifest(command)?;
    for i in inputs {
        man.input(i)?;
    }
    let mut names = vec!["policy.ckpt", "metrics.csv"];
    names.extend_from_slice(extra);
    man.outputs_in(out, &names)?;
    man.write(&out.join("manifest.json"))
}

fn train_policy(ctx: &Ctx, clips: &[Arc<MotionClip>], method: TrainMethod, train: &TrainConfig, imitation: &ImitationConfig, out: &Path) -> Result<NetPolicy> {
    match method {
        TrainMethod::Ppo => {
            let outcome = Trainer::new(clips.to_vec(), train.clone())?.run()?;
            let rows: Vec<String> = outcome.curve.iter().map(CurvePoint::csv_row).collect();
            std::fs::write(out.join("reward_curve.csv"), format!("{}\n{}", CurvePoint::CSV_HEADER, rows.iter().map(|r| format!("{r}\n")).collect::<String>()))?;
            log::info!("ppo: {} env steps, target reached: {}", outcome.env_steps, outcome.reached_target);
            Ok(outcome.policy)
        }
        TrainMethod::Clone => {
            let outcome = behavior_clone(clips, imitation)?;
            let rows: Vec<Vec<String>> = outcome.losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
            write_csv(&out.join("reward_curve.csv"), &["round", "loss"], &rows)?;
            let _ = ctx;
            Ok(outcome.policy)
        }
    }
}

pub fn train(ctx: &Ctx, bank: Option<&PathBuf>, cfg_file: Option<&PathBuf>, method: Option<TrainMethod>, max_steps: Option<u64>) -> Result<()> {
    let bank_path = require(bank, ctx.cfg.bank.as_ref(), "bank")?;
    let clips = load_clips(bank_path)?;
    let method = method.unwrap_or(ctx.cfg.method);
    let mut train = ctx.cfg.train.clone();
    let mut imitation = ctx.cfg.imitation.clone();
    if let Some(p) = cfg_file {
        match method {
            TrainMethod::Ppo => train = load_toml(p)?,
            TrainMethod::Clone => imitation = load_toml(p)?,
        }
    }
    train.seed = ctx.seed;
    imitation.seed = ctx.seed;
    if let Some(s) = max_steps {
        train.max_env_steps = s;
    }
    let out = ctx.out_dir("run")?;
    let policy = train_policy(ctx, &clips, method, &train, &imitation, &out)?;
    let metrics = evaluate_clips(&policy, &clips, &ctx.eval_env(), ctx.cfg.eval.episodes, ctx.seed)?;
    let mut inputs: Vec<&Path> = vec![bank_path];
    if let Some(p) = cfg_file {
        inputs.push(p);
    }
    write_policy_run(ctx, "train", &out, &policy, &metrics, &["reward_curve.csv"], &inputs)
}

#[allow(clippy::too_many_arguments)]
pub fn adapt(
    ctx: &Ctx,
    strategy: Option<Strategy>,
    base: &Path,
    adapt_data: Option<&PathBuf>,
    bank: Option<&PathBuf>,
    cfg_file: Option<&PathBuf>,
) -> Result<()> {
    let mut cfg: AdaptConfig = match cfg_file {
        Some(p) => load_toml(p)?,
        None => ctx.cfg.adapt.clone(),
    };
    if let Some(s) = strategy {
        cfg.strategy = s;
    }
    cfg.budget.seed = ctx.seed;
    validate_stages("adapt.shift.stages", &cfg.shift.stages)?;
    let adapt_path = require(adapt_data, ctx.cfg.adapt_data.as_ref(), "adapt_data")?;
    let data = AdaptData {
        general: match bank.or(ctx.cfg.bank.as_ref()) {
            Some(p) => load_clips(p)?,
            None => Vec::new(),
        },
        adapt: load_clips(adapt_path)?,
    };
    let base_policy = load_policy(base).with_context(|| format!("loading {}", base.display()))?;
    let outcome = adapt_strategy(&base_policy, &data, &cfg)?;
    let out = ctx.out_dir("adapt")?;
    let env = ctx.eval_env();
    let episodes = ctx.cfg.eval.episodes;
    let streamed = outcome.policy.clone().with_feed(ReferenceFeed::Streamed(cfg.shift.clone()));
    let adapt_metrics = evaluate_clips(&streamed, &data.adapt, &env, episodes, ctx.seed)?;
    let mut extra = vec!["loss_curve.csv"];
    if !data.general.is_empty() {
        let general = evaluate_clips(&outcome.policy, &data.general, &env, episodes, ctx.seed)?;
        std::fs::write(out.join("general_metrics.csv"), metrics_csv(&general))?;
        extra.push("general_metrics.csv");
    }
    let rows: Vec<Vec<String>> = outcome.losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
    write_csv(&out.join("loss_curve.csv"), &["round", "loss"], &rows)?;
    let mut inputs: Vec<&Path> = vec![base, adapt_path];
    if let Some(p) = bank.or(ctx.cfg.bank.as_ref()) {
        inputs.push(p);
    }
    if let Some(p) = cfg_file {
        inputs.push(p);
    }
    write_policy_run(ctx, "adapt", &out, &outcome.policy, &adapt_metrics, &extra, &inputs)
}

/// Which reference feed `eval` puts between the clips and the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalFeed {
    /// The clip itself.
    Direct,
    /// The configured interface shift (`adapt.shift`).
    Stream,
}

pub fn eval(ctx: &Ctx, bank: Option<&PathBuf>, policy: &str, episodes: Option<usize>, feed: EvalFeed) -> Result<()> {
    let bank_path = require(bank, ctx.cfg.bank.as_ref(), "bank")?;
    let clips = load_clips(bank_path)?;
    let episodes = episodes.unwrap_or(ctx.cfg.eval.episodes);
    if episodes == 0 {
        return Err(ConfigError::new("episodes", "must be at least 1").into());
    }
    let env = ctx.eval_env();
    let (metrics, policy_path) = if policy == "oracle" {
        (evaluate_clips(&OraclePolicy, &clips, &env, episodes, ctx.seed)?, None)
    } else {
        let path = PathBuf::from(policy);
        let mut p = load_policy(&path).with_context(|| format!("loading {policy}"))?;
        if feed == EvalFeed::Stream {
            validate_stages("adapt.shift.stages", &ctx.cfg.adapt.shift.stages)?;
            p = p.with_feed(ReferenceFeed::Streamed(ctx.cfg.adapt.shift.clone()));
        }
        (evaluate_clips(&p, &clips, &env, episodes, ctx.seed)?, Some(path))
    };
    let file = ctx.out_file("metrics.csv")?;
    std::fs::write(&file, metrics_csv(&metrics))?;
    let mut inputs: Vec<&Path> = vec![bank_path];
    if let Some(p) = &policy_path {
        inputs.push(p);
    }
    sidecar_manifest(ctx, "eval", &file, &inputs)
}

#[derive(Debug, Clone, Default)]
pub struct StreamArgs {
    pub clip: PathBuf,
    pub preset: Option<ChannelPreset>,
    pub latency: Option<f64>,
    pub jitter: f64,
    pub drop: f64,
    pub reorder: bool,
    pub stats: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

fn delay_csv(stats: &DelayStats) -> Result<String> {
    let mut rows = vec![vec![
        "end_to_end".to_string(),
        stats.count.to_string(),
        stats.mean.to_string(),
        stats.std.to_string(),
        stats.p95.to_string(),
    ]];
    for (i, s) in stats.stages.iter().enumerate() {
        rows.push(vec![format!("stage_{i}"), stats.count.to_string(), s.mean.to_string(), s.std.to_string(), String::new()]);
    }
    csv_string(&["scope", "packets", "mean_s", "std_s", "p95_s"], &rows)
}

fn stream_stages(ctx: &Ctx, a: &StreamArgs) -> Result<Vec<ChannelConfig>, ConfigError> {
    let stages = match (a.preset, a.latency) {
        (Some(p), None) => p.stages(),
        (Some(_), Some(_)) => return Err(ConfigError::new("latency", "give either --preset or --latency, not both")),
        (None, Some(l)) => vec![ChannelConfig { base_latency: l, jitter_std: a.jitter, drop_rate: a.drop, reorder: a.reorder }],
        (None, None) => return Ok(ctx.cfg.channel.stages.clone()),
    };
    for (flag, v) in [("latency", stages[0].base_latency), ("jitter", stages[0].jitter_std)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ConfigError::new(flag, format!("{v} must be finite and >= 0")));
        }
    }
    if !(0.0..1.0).contains(&a.drop) {
        return Err(ConfigError::new("drop", format!("{} is outside [0, 1)", a.drop)));
    }
    Ok(stages)
}

pub fn stream_sim(ctx: &Ctx, a: &StreamArgs) -> Result<()> {
    let stages = stream_stages(ctx, a)?;
    validate_stages("channel.stages", &stages)?;
    let clip = load_clips(&a.clip)?.remove(0);
    let model = RobotModel::<f64>::toy_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let (delayed, delivered) = stream_clip(&clip, model.anchor, &stages, &ctx.cfg.channel.receiver, &mut rng)?;
    let sent = packetize_clip(&clip, model.anchor);
    let out = ctx.out_file("delayed.mbank")?;
    delayed.save(&out)?;
    let stats = measure_delay(&sent, &delivered)?;
    log::info!("delivered {}/{} packets, mean delay {:.4} s", delivered.len(), sent.len(), stats.mean);
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let mut names = vec![out.file_name().expect("file").to_string_lossy().to_string()];
    for (path, text) in [(&a.stats, delay_csv(&stats)?), (&a.log, packet_log(&delivered))] {
        if let Some(p) = path {
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            if p.parent().unwrap_or(Path::new("")) == dir.as_path() || (p.parent().is_some_and(|q| q.as_os_str().is_empty()) && dir == Path::new(".")) {
                names.push(p.file_name().expect("file").to_string_lossy().to_string());
            }
        }
    }
    let mut man = ctx.manifest("stream-sim")?;
    man.input(&a.clip)?;
    man.outputs_in(&dir, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    man.write(&dir.join(format!("{}.manifest.json", names[0])))
}

pub fn fld_fit(ctx: &Ctx, clips_dir: &Path, harmonics: Option<usize>, components: Option<usize>) -> Result<()> {
    let f = &ctx.cfg.fld;
    let harmonics = harmonics.unwrap_or(f.harmonics);
    let components = components.unwrap_or(f.components);
    if harmonics == 0 {
        return Err(ConfigError::new("harmonics", "must be at least 1").into());
    }
    let clips = load_clips(clips_dir)?;
    let model = RobotModel::<f64>::toy_biped();
    let dt = 1.0 / clips[0].fps as f64;
    let mut segs = Vec::new();
    for c in &clips {
        if (1.0 / c.fps as f64 - dt).abs() > 1e-9 {
            bail!("clips must share one frame rate ({} vs {})", c.fps, clips[0].fps);
        }
        segs.extend(segments(&clip_states(c, &model), f.segment_frames));
    }
    let (fits, skipped) = fit_segments(&segs, dt, harmonics)?;
    log::info!("fitted {} segments, {skipped} without a periodic component", fits.len());
    let styles: Vec<Vec<f64>> = fits.iter().map(|f| f.model.style()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let gmm = fit_gmm(&styles, components, &mut rng)?;
    let lib = FldLibrary { dt, n_harmonics: harmonics, channels: fits[0].model.channels, gmm, segments: fits.len() };
    let file = ctx.out_file("fld.json")?;
    std::fs::write(&file, serde_json::to_string_pretty(&lib)? + "\n")?;
    sidecar_manifest(ctx, "fld fit", &file, &[clips_dir])
}

pub fn fld_gen(ctx: &Ctx, model_path: &Path, hours: f64, clip_seconds: Option<f64>) -> Result<()> {
    let clip_seconds = clip_seconds.unwrap_or(ctx.cfg.fld.clip_seconds);
    if !(hours > 0.0) {
        return Err(ConfigError::new("hours", "must be positive").into());
    }
    if !(clip_seconds > 0.0) {
        return Err(ConfigError::new("clip-seconds", "must be positive").into());
    }
    let lib: FldLibrary = serde_json::from_str(&std::fs::read_to_string(model_path)?)
        .with_context(|| format!("parsing {}", model_path.display()))?;
    let robot = RobotModel::toy_biped();
    let count = (hours * 3600.0 / clip_seconds).ceil() as usize;
    let out = ctx.out_dir("fld_clips")?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut names = Vec::new();
    let mut rows = Vec::new();
    for i in 0..count {
        let s = synthesize(&lib, &robot, clip_seconds, &format!("fld {i}"), &mut rng)?;
        let name = format!("fld_{i:05}.mbank");
        s.clip.save(&out.join(&name))?;
        rows.push(vec![name.clone(), s.clip.frames().to_string(), s.model.frequency.to_string(), s.phase0.to_string()]);
        names.push(name);
    }
    write_csv(&out.join("fld_index.csv"), &["file", "frames", "frequency_hz", "phase0_rad"], &rows)?;
    names.push("fld_index.csv".into());
    let mut man = ctx.manifest("fld gen")?;
    man.input(model_path)?;
    man.outputs_in(&out, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    man.write(&out.join("manifest.json"))
}

/// Directories holding a `metrics.csv`: each given directory itself, or
/// else its immediate subdirectories.
fn run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join("metrics.csv").is_file() {
            runs.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = match std::fs::read_dir(p) {
            Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|s| s.join("metrics.csv").is_file()).collect(),
            Err(_) => Vec::new(),
        };
        if subs.is_empty() {
            return Err(MissingArtifacts(format!("{} holds no metrics.csv", p.display())).into());
        }
        subs.sort();
        runs.extend(subs);
    }
    if runs.is_empty() {
        return Err(MissingArtifacts("no run directories given".into()).into());
    }
    Ok(runs)
}

pub fn report(ctx: &Ctx, paths: &[PathBuf]) -> Result<()> {
    let runs = run_dirs(paths)?;
    let mut table: Vec<(String, Vec<f64>)> = Vec::new();
    let columns: Vec<&str> = Metrics::CSV_HEADER.split(',').collect();
    for r in &runs {
        let (header, rows) = read_csv(&r.join("metrics.csv"))?;
        if header != columns || rows.len() != 1 {
            return Err(MissingArtifacts(format!("{} does not follow the metrics schema", r.join("metrics.csv").display())).into());
        }
        let values = rows[0].iter().map(|v| v.parse::<f64>()).collect::<Result<Vec<_>, _>>()?;
        let name = r.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_else(|| r.display().to_string());
        table.push((name, values));
    }
    let base_ap = table[0].1[0];
    let mut header = vec!["run"];
    header.extend(&columns);
    header.push("delta_E_AP_pct");
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(name, v)| {
            let mut row = vec![name.clone()];
            row.extend(v.iter().map(f64::to_string));
            let delta = if base_ap != 0.0 { 100.0 * (v[0] - base_ap) / base_ap } else { 0.0 };
            row.push(delta.to_string());
            row
        })
        .collect();
    // Plot data: every column scaled by its largest magnitude across runs.
    let radar: Vec<Vec<String>> = table
        .iter()
        .map(|(name, v)| {
            let mut row = vec![name.clone()];
            for (j, x) in v.iter().enumerate() {
                let max = table.iter().map(|(_, w)| w[j].abs()).fold(0.0, f64::max);
                row.push(if max > 0.0 { (x / max).to_string() } else { "0".into() });
            }
            row
        })
        .collect();
    let out = ctx.out_dir("report")?;
    write_csv(&out.join("summary.csv"), &header, &rows)?;
    let mut radar_header = vec!["run"];
    radar_header.extend(&columns);
    write_csv(&out.join("radar.csv"), &radar_header, &radar)?;
    let mut man = ctx.manifest("report")?;
    for r in &runs {
        man.input(&r.join("metrics.csv"))?;
    }
    man.outputs_in(&out, &["summary.csv", "radar.csv"])?;
    man.write(&out.join("manifest.json"))?;
    print!("{}", csv_string(&header, &rows)?);
    Ok(())
}

/// Banks shipped by `make-demo`: general motions and interface-recorded ones.
pub fn demo_bank(model: &RobotModel<f64>) -> Vec<(String, MotionClip)> {
    vec![
        ("squat.mbank".into(), DemoMotion::Squat { depth: 0.6, freq: 0.5 }.clip(model, 50.0, 6.0, "slow squats", SourceId::OpticalMocap)),
        ("wave.mbank".into(), DemoMotion::Wave { amp: 0.8, freq: 1.0 }.clip(model, 50.0, 5.0, "wave both arms", SourceId::InertialMocap)),
        (
            "squat_wave.mbank".into(),
            DemoMotion::SquatWave { depth: 0.4, amp: 0.6, freq: 0.75 }.clip(model, 50.0, 6.0, "squat while waving", SourceId::Public),
        ),
    ]
}

pub fn make_demo(ctx: &Ctx) -> Result<()> {
    let out = ctx.out_dir("demo")?;
    let model = RobotModel::toy_biped();
    let mut names = Vec::new();
    std::fs::create_dir_all(out.join("bank"))?;
    for (name, clip) in demo_bank(&model) {
        clip.save(&out.join("bank").join(&name))?;
        names.push(format!("bank/{name}"));
    }
    std::fs::create_dir_all(out.join("adapt"))?;
    for (i, clip) in adaptation_clips(&model).into_iter().enumerate() {
        let name = format!("adapt/teleop_{i}.mbank");
        clip.save(&out.join(&name))?;
        names.push(name);
    }
    // A state pair for reward-eval: the robot lags the reference by 5 frames.
    let clip = &demo_bank(&model)[0].1;
    let pair = serde_json::json!({ "robot": reference_state(clip, 40), "reference": reference_state(clip, 45) });
    std::fs::write(out.join("pair.json"), serde_json::to_string_pretty(&pair)? + "\n")?;
    names.push("pair.json".into());
    let mut man = ctx.manifest("make-demo")?;
    man.outputs_in(&out, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    man.write(&out.join("manifest.json"))
}

/// Delay statistics of the configured channel over synthetic packets.
fn channel_delay(ctx: &Ctx) -> Result<DelayStats> {
    let n = ctx.cfg.channel.packets;
    let frames = vec![vec![0.0]; n];
    let roots = vec![Quatd::identity(); n];
    let sent = packetize(&frames, &roots, 50.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0xDE1A);
    let delivered = transmit_pipeline(&sent, &ctx.cfg.channel.stages, &mut rng)?;
    Ok(measure_delay(&sent, &delivered)?)
}

/// Runs a whole experiment from the config: sampler statistics, training,
/// evaluation and channel delay.
pub fn run(ctx: &Ctx) -> Result<()> {
    let model = RobotModel::toy_biped();
    let clips: Vec<Arc<MotionClip>> = match &ctx.cfg.bank {
        Some(p) => load_clips(p)?,
        None => demo_bank(&model).into_iter().map(|(_, c)| Arc::new(c)).collect(),
    };
    let out = ctx.out_dir("run")?;
    let lengths: Vec<usize> = clips.iter().map(|c| c.frames()).collect();
    let st = SamplerState::new(ctx.cfg.train.sampler.clone(), &lengths).map_err(|e| ConfigError::new("train.sampler", e.to_string()))?;
    std::fs::write(out.join("sampler_stats.csv"), sampler_stats_csv(&st, &clips, ctx.cfg.stats.draws, ctx.seed)?)?;
    let policy = train_policy(ctx, &clips, ctx.cfg.method, &ctx.cfg.train, &ctx.cfg.imitation, &out)?;
    let metrics = evaluate_clips(&policy, &clips, &ctx.eval_env(), ctx.cfg.eval.episodes, ctx.seed)?;
    std::fs::write(out.join("delay.csv"), delay_csv(&channel_delay(ctx)?)?)?;
    let mut inputs: Vec<&Path> = Vec::new();
    for p in [&ctx.cfg.bank, &ctx.cfg.rewards].into_iter().flatten() {
        inputs.push(p);
    }
    write_policy_run(ctx, "run", &out, &policy, &metrics, &["reward_curve.csv", "sampler_stats.csv", "delay.csv"], &inputs)
}
