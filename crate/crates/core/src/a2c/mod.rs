//! Advantage actor-critic with full-episode Monte Carlo returns.
//!
//! One optimizer step per episode. Each training episode draws its instance
//! seed and action samples from a ChaCha stream keyed by the episode index,
//! so a run resumed from a checkpoint replays exactly.

mod checkpoint;
mod loss;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionSet, EnvConfig, EnvError, EnvState};
use crate::harness::{routes_svg, MetricsRecord, RouteLog};
use crate::policy::{
    candidate_mask, sample_actions, Policy, PolicyError, PolicySpec, SampleMode, Variant,
};
use crate::tensor::optim::{clip_global_norm, optimizer_step, AdamW};
use crate::tensor::{Graph, TensorError};

pub use checkpoint::{Checkpoint, OptimizerState};
pub use loss::{
    a2c_loss, discounted_returns, entropy_coef_schedule, step_terms, LossReport, StepTerms,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("episode {episode}: non-finite {what}")]
    NonFinite { episode: usize, what: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub value_coef: f64,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    /// Instance seed of the held-out greedy evaluation episode.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Cpn)
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let (episodes, lr, entropy_start, entropy_end) = match variant {
            Variant::Cpn => (1000, 1e-5, 0.1, 0.01),
            Variant::Hqp | Variant::Fqp => (500, 1e-6, 0.5, 0.03),
        };
        Self {
            episodes,
            lr,
            gamma: 0.97,
            entropy_start,
            entropy_end,
            value_coef: 0.5,
            eval_every: 50,
            seeds: (0..10).collect(),
            grad_clip_norm: 1.0,
            weight_decay: 0.01,
            eval_seed: 1_000_003,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0, 1)");
        }
        if !(self.entropy_end <= self.entropy_start) {
            return fail("entropy_end must not exceed entropy_start");
        }
        if self.episodes == 0 || self.eval_every == 0 {
            return fail("episodes and eval_every must be positive");
        }
        if !(self.lr > 0.0)
            || !(self.grad_clip_norm > 0.0)
            || !(self.weight_decay >= 0.0)
            || !(self.value_coef >= 0.0)
        {
            return fail(
                "lr and grad_clip_norm must be positive; weight_decay and value_coef non-negative",
            );
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: Vec<f64>,
    /// Masks in candidate order, one row per vehicle.
    pub masks: Vec<Vec<bool>>,
    pub candidates: Vec<usize>,
    pub actions: ActionSet,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Sum of the per-vehicle reward totals.
    pub reward: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance_seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Graph handles recorded per step when collecting for an update.
struct Recorder<'g> {
    graph: &'g mut Graph<f64>,
    terms: Vec<StepTerms>,
}

fn run_episode<R: Rng + ?Sized>(
    mut state: EnvState,
    policy: &Policy,
    rng: &mut R,
    mode: SampleMode,
    mut recorder: Option<&mut Recorder<'_>>,
) -> Result<(Trajectory, EnvState), TrainError> {
    if state.agent_step != 0 {
        return Err(TrainError::Contract(
            "episodes must start from a fresh state".into(),
        ));
    }
    let n_clients = state.n_clients();
    let mut traj = Trajectory {
        instance_seed: state.seed,
        steps: Vec::new(),
    };
    while !state.is_terminal() {
        let observation = state.observe();
        let masks: Vec<Vec<bool>> = (0..state.n_vehicles())
            .map(|v| candidate_mask(&state.valid_action_mask(v)))
            .collect();
        let (output, vars) = match recorder.as_deref_mut() {
            Some(rec) => {
                let vars = policy.forward(rec.graph, &observation)?;
                (policy.output(rec.graph, &vars), Some(vars))
            }
            None => (policy.evaluate(&observation)?, None),
        };
        let sampled = sample_actions(&output.logits, &masks, mode, rng)?;
        if let (Some(rec), Some(vars)) = (recorder.as_deref_mut(), vars) {
            let t = step_terms(
                rec.graph,
                vars.logits,
                vars.value,
                &masks,
                &sampled.candidates,
            )?;
            rec.terms.push(t);
        }
        let actions = sampled.action_set(n_clients);
        let outcome = state.step(&actions)?;
        traj.steps.push(TrajectoryStep {
            observation,
            masks,
            candidates: sampled.candidates,
            actions,
            log_probs: sampled.log_probs,
            entropies: sampled.entropies,
            reward: outcome.total_reward(),
            value: output.value,
        });
    }
    Ok((traj, state))
}

/// Rolls out one episode from a fresh state without recording gradients.
pub fn collect_episode<R: Rng + ?Sized>(
    state: EnvState,
    policy: &Policy,
    rng: &mut R,
    mode: SampleMode,
) -> Result<(Trajectory, EnvState), TrainError> {
    run_episode(state, policy, rng, mode, None)
}

/// Greedy rollout on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsRecord,
    pub routes: RouteLog,
    pub trajectory: Trajectory,
}

pub fn evaluate_deterministic(
    env: &EnvConfig,
    policy: &Policy,
    eval_seed: u64,
    run_seed: u64,
    episode: usize,
) -> Result<Evaluation, TrainError> {
    let state = EnvState::reset(env, eval_seed)?;
    evaluate_state(state, policy, run_seed, episode)
}

/// Greedy rollout from an explicit initial state.
pub fn evaluate_state(
    state: EnvState,
    policy: &Policy,
    run_seed: u64,
    episode: usize,
) -> Result<Evaluation, TrainError> {
    // greedy selection never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (trajectory, end) = collect_episode(state, policy, &mut rng, SampleMode::Greedy)?;
    let routes = RouteLog::from_state(&end);
    let metrics = MetricsRecord::measure(
        policy.spec().variant.name(),
        run_seed,
        episode,
        trajectory.total_reward(),
        &routes,
    );
    Ok(Evaluation {
        metrics,
        routes,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Episode {
        episode: usize,
        instance_seed: u64,
        steps: usize,
        reward: f64,
        loss: f64,
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
        entropy_coef: f64,
        grad_norm: f64,
    },
    Eval {
        episode: usize,
        reward: f64,
        distance: f64,
        compactness: Option<f64>,
        crossings: usize,
        served: usize,
    },
    Abort {
        episode: usize,
        reason: String,
        loss: f64,
        grad_norm: f64,
    },
}

/// Where and how a run persists its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Output directory for `log.jsonl`, checkpoints and SVG renders.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
    /// Stop after this many episodes have been trained (exclusive bound).
    pub stop_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub policy: Policy,
    pub log: Vec<LogRecord>,
    pub evaluations: Vec<Evaluation>,
}

impl RunArtifacts {
    pub fn final_evaluation(&self) -> Option<&Evaluation> {
        self.evaluations.last()
    }

    pub fn initial_evaluation(&self) -> Option<&Evaluation> {
        self.evaluations.first()
    }
}

struct Sink {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
}

impl Sink {
    fn open(dir: Option<&Path>, append: bool) -> Result<Self, TrainError> {
        let Some(dir) = dir else {
            return Ok(Self {
                dir: None,
                log: None,
            });
        };
        for sub in ["", "checkpoints", "routes"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let path = dir.join("log.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            log: Some(BufWriter::new(file)),
        })
    }

    fn record(&mut self, rec: &LogRecord) -> Result<(), TrainError> {
        if let Some(w) = &mut self.log {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| TrainError::Io {
                    path: "log.jsonl".into(),
                    source: e,
                })?;
        }
        Ok(())
    }

    fn write(&self, rel: &str, contents: &str) -> Result<(), TrainError> {
        if let Some(dir) = &self.dir {
            let p = dir.join(rel);
            fs::write(&p, contents).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

/// RNG for training episode `episode` of run `seed`.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 1);
    rng
}

/// Initial policy of run `seed`.
pub fn init_policy(spec: &PolicySpec, seed: u64) -> Result<Policy, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Policy::init(spec, &mut rng)?)
}

/// Trains one policy. Greedy evaluations run on the fixed evaluation
/// instance before every `eval_every`-th episode and once after the last;
/// each evaluation also writes a checkpoint and an SVG render when an output
/// directory is given.
pub fn train(
    env: &EnvConfig,
    spec: &PolicySpec,
    cfg: &TrainConfig,
    seed: u64,
    options: &TrainOptions,
) -> Result<RunArtifacts, TrainError> {
    env.validate()?;
    spec.validate()?;
    cfg.validate()?;
    if spec.n_clients != env.n_clients || spec.n_vehicles != env.n_vehicles {
        return Err(TrainError::Config(format!(
            "policy sized for {}x{} but environment is {}x{}",
            spec.n_clients, spec.n_vehicles, env.n_clients, env.n_vehicles
        )));
    }

    let (mut policy, start) = match &options.resume {
        Some(ck) => {
            if ck.spec != *spec || ck.seed != seed {
                return Err(TrainError::Config(
                    "checkpoint does not belong to this run".into(),
                ));
            }
            (ck.restore()?, ck.episode)
        }
        None => (init_policy(spec, seed)?, 0),
    };
    let end = options.stop_at.unwrap_or(cfg.episodes).min(cfg.episodes);
    let mut sink = Sink::open(options.out_dir.as_deref(), options.resume.is_some())?;
    let eval_instance = EnvState::reset(env, cfg.eval_seed)?;
    sink.write("eval_instance.json", &eval_instance.to_instance().to_json())?;
    let optimizer = cfg.optimizer();
    let mut log = Vec::new();
    let mut evaluations = Vec::new();

    let evaluate = |policy: &Policy,
                    episode: usize,
                    sink: &mut Sink,
                    log: &mut Vec<LogRecord>|
     -> Result<Evaluation, TrainError> {
        let ev = evaluate_state(eval_instance.clone(), policy, seed, episode)?;
        let m = &ev.metrics;
        let rec = LogRecord::Eval {
            episode,
            reward: m.reward,
            distance: m.distance,
            compactness: m.compactness,
            crossings: m.crossings,
            served: m.served,
        };
        sink.record(&rec)?;
        log.push(rec);
        let ck = Checkpoint::capture(policy, env, cfg, episode, seed);
        let text = ck.to_json()?;
        sink.write(&format!("checkpoints/episode_{episode:06}.json"), &text)?;
        sink.write("checkpoint.json", &text)?;
        sink.write(
            &format!("routes/episode_{episode:06}.svg"),
            &routes_svg(&eval_instance.to_instance(), &ev.routes),
        )?;
        Ok(ev)
    };

    for episode in start..end {
        if episode % cfg.eval_every == 0 {
            evaluations.push(evaluate(&policy, episode, &mut sink, &mut log)?);
        }
        let rec = match train_episode(env, &mut policy, cfg, &optimizer, seed, episode) {
            Ok(rec) => rec,
            Err(EpisodeFailure::NonFinite {
                what,
                loss,
                grad_norm,
            }) => {
                let rec = LogRecord::Abort {
                    episode,
                    reason: format!("non-finite {what}"),
                    loss,
                    grad_norm,
                };
                sink.record(&rec)?;
                return Err(TrainError::NonFinite { episode, what });
            }
            Err(EpisodeFailure::Other(e)) => return Err(e),
        };
        sink.record(&rec)?;
        log.push(rec);
    }
    if end == cfg.episodes {
        evaluations.push(evaluate(&policy, cfg.episodes, &mut sink, &mut log)?);
    }
    Ok(RunArtifacts {
        policy,
        log,
        evaluations,
    })
}

enum EpisodeFailure {
    NonFinite {
        what: &'static str,
        loss: f64,
        grad_norm: f64,
    },
    Other(TrainError),
}

impl<E: Into<TrainError>> From<E> for EpisodeFailure {
    fn from(e: E) -> Self {
        EpisodeFailure::Other(e.into())
    }
}

fn train_episode(
    env: &EnvConfig,
    policy: &mut Policy,
    cfg: &TrainConfig,
    optimizer: &AdamW,
    seed: u64,
    episode: usize,
) -> Result<LogRecord, EpisodeFailure> {
    let mut rng = episode_rng(seed, episode);
    let instance_seed: u64 = rng.gen();
    let state = EnvState::reset(env, instance_seed)?;
    let mut graph = Graph::new();
    let mut rec = Recorder {
        graph: &mut graph,
        terms: Vec::new(),
    };
    let (traj, _) = run_episode(
        state,
        policy,
        &mut rng,
        SampleMode::Stochastic,
        Some(&mut rec),
    )?;
    let terms = rec.terms;
    let returns = discounted_returns(&traj.rewards(), cfg.gamma)?;
    let entropy_coef = entropy_coef_schedule(episode, cfg);
    let (loss, report) = a2c_loss(&mut graph, &terms, &returns, entropy_coef, cfg.value_coef)?;
    if !report.total.is_finite() {
        return Err(EpisodeFailure::NonFinite {
            what: "loss",
            loss: report.total,
            grad_norm: f64::NAN,
        });
    }
    let mut grads = policy.store().zero_grads();
    grads.extend(graph.backward(loss)?.named(&graph));
    let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
    if !grad_norm.is_finite() {
        return Err(EpisodeFailure::NonFinite {
            what: "gradient",
            loss: report.total,
            grad_norm,
        });
    }
    optimizer_step(policy.store_mut(), &grads, optimizer)?;
    Ok(LogRecord::Episode {
        episode,
        instance_seed,
        steps: traj.len(),
        reward: traj.total_reward(),
        loss: report.total,
        policy_loss: report.policy,
        value_loss: report.value,
        entropy: report.entropy,
        entropy_coef,
        grad_norm,
    })
}
