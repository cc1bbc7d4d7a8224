//! Two-phase training: experiential attention and predictor first, then the
//! fusion network alone with everything else frozen.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{
    experiential_on_tape, experiential_scores, generalized_scores, object_matrix, AffinityQuery, ExperientialParams,
    GeneralizedTable,
};
use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};
use crate::nn::{Checkpoint, Module, Optimizer, OptimizerKind, Tape, Tensor, Var};
use crate::policy::predictor::COORD_CHANNELS;
use crate::policy::{FusionNet, TargetPredictor};
use crate::sim::agent::{Action, AgentState};
use crate::sim::path::{bfs, descend, UNREACHABLE};
use crate::sim::{generate_scene, SceneConfig};

/// splitmix64 finalizer used to derive independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerChoice,
}

impl PhaseConfig {
    fn optimizer(&self) -> Optimizer {
        let kind = match self.optimizer {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Adam => OptimizerKind::adam(),
        };
        Optimizer::new(kind, self.learning_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub batch_size: usize,
    pub d_k: usize,
    pub predictor_hidden: usize,
    /// Longest exploration prefix before a snapshot.
    pub max_prefix: usize,
    /// Step budget used to normalise the elapsed-steps feature.
    pub step_budget: usize,
    /// Gaussian label smoothing in cells; 0 keeps one-hot labels.
    pub label_sigma: f64,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_scenes: 200,
            val_scenes: 50,
            batch_size: 8,
            d_k: crate::affinity::DEFAULT_DK,
            predictor_hidden: 4,
            max_prefix: 150,
            step_budget: 200,
            label_sigma: 0.0,
            phase1: PhaseConfig {
                learning_rate: 1e-3,
                epochs: 5,
                optimizer: OptimizerChoice::Adam,
            },
            phase2: PhaseConfig {
                learning_rate: 1e-3,
                epochs: 5,
                optimizer: OptimizerChoice::Adam,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_scenes", self.train_scenes),
            ("batch_size", self.batch_size),
            ("d_k", self.d_k),
            ("predictor_hidden", self.predictor_hidden),
            ("step_budget", self.step_budget),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(LoatError::config(field, "must be positive"));
            }
        }
        for (name, p) in [("phase1", &self.phase1), ("phase2", &self.phase2)] {
            if !(p.learning_rate >= 0.0 && p.learning_rate.is_finite()) {
                return Err(LoatError::config(format!("{name}.learning_rate"), "must be finite and >= 0"));
            }
        }
        if !(self.label_sigma >= 0.0 && self.label_sigma.is_finite()) {
            return Err(LoatError::config("label_sigma", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| LoatError::config("<train config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One partial-exploration snapshot with its target label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene_seed: u64,
    pub target: String,
    /// Flat index of the true target cell.
    pub label: usize,
    /// Nonzero map entries as `(channel, flat cell)`.
    pub map_cells: Vec<(u16, u32)>,
    pub observed: Vec<bool>,
    pub obstacles: Vec<bool>,
    pub temporal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid_size: usize,
    pub vocabulary: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn map_tensor(&self, s: &Sample) -> Tensor {
        let plane = self.grid_size * self.grid_size;
        let mut data = vec![0.0; self.vocabulary.len() * plane];
        for &(c, i) in &s.map_cells {
            data[c as usize * plane + i as usize] = 1.0;
        }
        Tensor::new(vec![self.vocabulary.len(), self.grid_size, self.grid_size], data).expect("consistent sizes")
    }

    pub fn mask_tensor(&self, s: &Sample) -> Tensor {
        let data = s.observed.iter().map(|&o| o as u8 as f64).collect();
        Tensor::new(vec![1, self.grid_size, self.grid_size], data).expect("consistent sizes")
    }

    pub fn env_tensor(&self, s: &Sample) -> Tensor {
        let data = s
            .observed
            .iter()
            .chain(&s.obstacles)
            .map(|&o| o as u8 as f64)
            .collect();
        Tensor::new(vec![2, self.grid_size, self.grid_size], data).expect("consistent sizes")
    }

    fn label_dist(&self, s: &Sample, sigma: f64) -> Vec<f64> {
        let n = self.grid_size;
        let (lr, lc) = ((s.label / n) as f64, (s.label % n) as f64);
        let mut d: Vec<f64> = (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as f64, (i % n) as f64);
                (-((r - lr).powi(2) + (c - lc).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|v| *v /= total);
        d
    }
}

/// Randomized frontier exploration: heads for one of the nearest unobserved
/// cells (on the known map), re-choosing every few steps or once it is seen.
fn explore_walk(
    scene: &crate::sim::Scene,
    agent: &mut AgentState,
    steps: usize,
    rng: &mut ChaCha8Rng,
    stop: impl Fn(&AgentState) -> bool,
) {
    const CANDIDATES: usize = 16;
    const REPLAN: usize = 5;
    let n = scene.size;
    let mut goal: Option<usize> = None;
    let mut since = 0;
    for _ in 0..steps {
        if stop(agent) {
            break;
        }
        let passable = |i: usize| !agent.known_obstacles[i];
        if goal.is_none_or(|g| agent.observed[g] || since >= REPLAN) {
            let reach = bfs(n, passable, &[scene.index(agent.position)]);
            let mut open: Vec<usize> = (0..n * n).filter(|&i| !agent.observed[i] && reach[i] != UNREACHABLE).collect();
            open.sort_by_key(|&i| (reach[i], i));
            open.truncate(CANDIDATES);
            goal = open.choose(rng).copied();
            since = 0;
        }
        let Some(g) = goal else { break };
        let dist = bfs(n, passable, &[g]);
        let Some(next) = descend(n, &dist, scene.index(agent.position)) else {
            goal = None;
            continue;
        };
        let action = Action::between(agent.position, scene.cell(next)).expect("descend yields a neighbour");
        agent.step(scene, action);
        since += 1;
    }
}

/// Snapshots an exploration prefix for every (scene, target) pair.
///
/// `targets` restricts the sampled targets (default: all config targets).
pub fn make_dataset(
    cfg: &SceneConfig,
    scene_seeds: &[u64],
    targets: Option<&[String]>,
    max_prefix: usize,
    step_budget: usize,
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    let targets: Vec<String> = targets.map(<[String]>::to_vec).unwrap_or_else(|| cfg.targets.clone());
    let per_scene: Vec<Result<Vec<Sample>>> = scene_seeds
        .par_iter()
        .map(|&ss| {
            let scene = generate_scene(cfg, ss)?;
            let free = scene.free_cells();
            let mut out = Vec::with_capacity(targets.len());
            for (ti, target) in targets.iter().enumerate() {
                let cells = scene.cells_of(target);
                let &cell = cells
                    .first()
                    .ok_or_else(|| LoatError::InvalidArgument(format!("target `{target}` not placed in scene {ss}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, ss, ti as u64]));
                let start = *free.choose(&mut rng).expect("scene has free cells");
                let mut agent = AgentState::spawn(&scene, start, cfg.perception(), rng.gen())?;
                let prefix = rng.gen_range(0..=max_prefix);
                // the policy only queries the predictor while the target is unfound
                explore_walk(&scene, &mut agent, prefix, &mut rng, |a| !a.detected(&scene, target).is_empty());
                let plane = scene.size * scene.size;
                let mut map_cells = Vec::new();
                for c in 0..scene.vocabulary_len {
                    for (i, &v) in agent.semantic_map.channel(c).iter().enumerate() {
                        if v != 0.0 {
                            map_cells.push((c as u16, i as u32));
                        }
                    }
                }
                debug_assert!(map_cells.iter().all(|&(_, i)| (i as usize) < plane));
                let temporal = agent.fusion_context(step_budget).temporal;
                out.push(Sample {
                    scene_seed: ss,
                    target: target.clone(),
                    label: scene.index(cell),
                    map_cells,
                    observed: agent.observed.clone(),
                    obstacles: agent.known_obstacles.clone(),
                    temporal,
                });
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::new();
    for s in per_scene {
        samples.extend(s?);
    }
    Ok(Dataset {
        grid_size: cfg.grid_size,
        vocabulary: cfg.vocabulary.clone(),
        samples,
    })
}

/// First seed of the validation scenes; disjoint from training and benchmark seeds.
pub const VALIDATION_SEED_BASE: u64 = 500_000;

/// Training snapshots over scenes `0..train_scenes`.
pub fn training_dataset(scene_cfg: &SceneConfig, cfg: &TrainConfig) -> Result<Dataset> {
    let seeds: Vec<u64> = (0..cfg.train_scenes as u64).collect();
    make_dataset(scene_cfg, &seeds, None, cfg.max_prefix, cfg.step_budget, cfg.seed)
}

/// Held-in validation snapshots; `None` when `val_scenes` is 0.
pub fn validation_dataset(scene_cfg: &SceneConfig, cfg: &TrainConfig) -> Result<Option<Dataset>> {
    if cfg.val_scenes == 0 {
        return Ok(None);
    }
    let seeds: Vec<u64> = (0..cfg.val_scenes as u64).map(|k| VALIDATION_SEED_BASE + k).collect();
    make_dataset(scene_cfg, &seeds, None, cfg.max_prefix, cfg.step_budget, mix_seed(&[cfg.seed, 0x7a1]))
        .map(Some)
}

/// All trainable modules of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub experiential: ExperientialParams,
    pub predictor: TargetPredictor,
    pub fusion: FusionNet,
}

impl ModelBundle {
    pub fn init(cfg: &TrainConfig, embed_dim: usize, map_channels: usize, grid_size: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            experiential: ExperientialParams::random(embed_dim, cfg.d_k, &mut rng),
            predictor: TargetPredictor::new(map_channels, cfg.predictor_hidden, &mut rng),
            fusion: FusionNet::new(grid_size, &mut rng)?,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_module("experiential", &self.experiential);
        ck.add_module("predictor", &self.predictor);
        ck.add_module("fusion", &self.fusion);
        ck
    }

    /// Rebuilds modules from tensor shapes; `grid_size` fixes the fusion encoder.
    pub fn from_checkpoint(ck: &Checkpoint, grid_size: usize) -> Result<Self> {
        let w_q = ck.get("experiential.w_q")?;
        let stem = ck.get("predictor.stem.0.kernel")?;
        let (d_k, dim) = (w_q.shape()[0], w_q.shape()[1]);
        let (hidden, channels) = (stem.shape()[0], stem.shape()[1] - 1 - COORD_CHANNELS);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Self {
            experiential: ExperientialParams::random(dim, d_k, &mut rng),
            predictor: TargetPredictor::new(channels, hidden, &mut rng),
            fusion: FusionNet::new(grid_size, &mut rng)?,
        };
        ck.restore_module("experiential", &mut b.experiential)?;
        ck.restore_module("predictor", &mut b.predictor)?;
        ck.restore_module("fusion", &mut b.fusion)?;
        Ok(b)
    }

    /// Content hash of everything except the fusion network.
    pub fn frozen_hash(&self) -> String {
        let mut ck = Checkpoint::new();
        ck.add_module("experiential", &self.experiential);
        ck.add_module("predictor", &self.predictor);
        ck.content_hash()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("step,phase,loss\n");
    for r in records {
        writeln!(s, "{},{},{}", r.step, r.phase, r.loss).expect("string write");
    }
    s
}

/// Per-sample loss on a fresh tape; returns loss value and gradients of `params` leaves.
fn sample_grads<F>(params: &[&Tensor], build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf((*t).clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), vars.iter().map(|v| grads.wrt(*v)).collect()))
}

fn sample_loss(tape: &mut Tape, logits: Var, data: &Dataset, s: &Sample, sigma: f64) -> Result<Var> {
    if sigma > 0.0 {
        tape.cross_entropy(logits, data.label_dist(s, sigma))
    } else {
        tape.cross_entropy_index(logits, s.label)
    }
}

/// Phase-1 composite loss for one sample, built on `tape` from parameter leaves
/// `[w_q, w_k, predictor...]`.
pub fn phase1_loss(
    tape: &mut Tape,
    vars: &[Var],
    predictor: &TargetPredictor,
    table: &EmbeddingTable,
    data: &Dataset,
    s: &Sample,
    sigma: f64,
) -> Result<Var> {
    let e_t = tape.leaf(Tensor::from_vec(table.embed(&s.target).vector));
    let objs = tape.leaf(object_matrix(table, &data.vocabulary).0);
    let a_e = experiential_on_tape(tape, vars[0], vars[1], e_t, objs)?;
    let map = tape.leaf(data.map_tensor(s));
    let activated = tape.channel_scale(map, a_e)?;
    let mask = tape.leaf(data.mask_tensor(s));
    let input = tape.concat(&[activated, mask])?;
    let logits = predictor.apply(tape, &vars[2..], input)?;
    sample_loss(tape, logits, data, s, sigma)
}

/// Scores held constant during phase 2, per target.
pub struct FrozenScores {
    pub a_e: BTreeMap<String, Vec<f64>>,
    pub a_g: BTreeMap<String, Vec<f64>>,
}

impl FrozenScores {
    pub fn compute(
        data: &Dataset,
        experiential: &ExperientialParams,
        table: &EmbeddingTable,
        gtable: &GeneralizedTable,
    ) -> Result<Self> {
        let mut a_e = BTreeMap::new();
        let mut a_g = BTreeMap::new();
        for s in &data.samples {
            if a_e.contains_key(&s.target) {
                continue;
            }
            let q = AffinityQuery::new(s.target.clone(), data.vocabulary.clone())?;
            a_e.insert(s.target.clone(), experiential_scores(experiential, table, &q)?.0);
            a_g.insert(s.target.clone(), generalized_scores(gtable, &q).0);
        }
        Ok(Self { a_e, a_g })
    }
}

/// Phase-2 loss for one sample from fusion parameter leaves; the predictor enters as constants.
pub fn phase2_loss(
    tape: &mut Tape,
    fusion_vars: &[Var],
    fusion: &FusionNet,
    predictor: &TargetPredictor,
    scores: &FrozenScores,
    data: &Dataset,
    s: &Sample,
    sigma: f64,
) -> Result<Var> {
    let temporal = tape.leaf(Tensor::from_vec(s.temporal.clone()));
    let env = tape.leaf(data.env_tensor(s));
    let gamma = fusion.apply(tape, fusion_vars, temporal, env)?;
    let a_g = tape.leaf(Tensor::from_vec(scores.a_g[&s.target].clone()));
    let a_e = tape.leaf(Tensor::from_vec(scores.a_e[&s.target].clone()));
    let fused = tape.lerp(gamma, a_g, a_e)?;
    let map = tape.leaf(data.map_tensor(s));
    let activated = tape.channel_scale(map, fused)?;
    let mask = tape.leaf(data.mask_tensor(s));
    let input = tape.concat(&[activated, mask])?;
    let pvars = predictor.bind(tape);
    let logits = predictor.apply(tape, &pvars, input)?;
    sample_loss(tape, logits, data, s, sigma)
}

/// Minibatch loop shared by both phases. `grad_fn` yields (loss, grads) for one sample
/// given current parameter values.
fn optimize<M, F>(
    module: &mut M,
    data: &Dataset,
    phase: &PhaseConfig,
    batch_size: usize,
    shuffle_seed: u64,
    phase_id: u8,
    grad_fn: F,
) -> Result<Vec<LossRecord>>
where
    M: ParamSet,
    F: Fn(&[&Tensor], &Sample) -> Result<(f64, Vec<Tensor>)> + Sync,
{
    if data.is_empty() {
        return Err(LoatError::InvalidArgument("training dataset is empty".into()));
    }
    let mut opt = phase.optimizer();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut records = Vec::new();
    let mut step = 0;
    for _ in 0..phase.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let current: Vec<Tensor> = module.tensors().into_iter().cloned().collect();
            let refs: Vec<&Tensor> = current.iter().collect();
            let results: Vec<Result<(f64, Vec<Tensor>)>> =
                batch.par_iter().map(|&i| grad_fn(&refs, &data.samples[i])).collect();
            let mut total = 0.0;
            let mut sum: Option<Vec<Tensor>> = None;
            for r in results {
                let (l, g) = r?;
                total += l;
                match &mut sum {
                    None => sum = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let k = batch.len() as f64;
            let loss = total / k;
            if !loss.is_finite() {
                return Err(LoatError::NonFinite(format!("phase {phase_id} loss at step {step}: {loss}")));
            }
            let mut grads = sum.expect("batch nonempty");
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v /= k);
            }
            let mut params = module.tensors_mut();
            opt.step(&mut params, &grads)?;
            records.push(LossRecord { step, phase: phase_id, loss });
            step += 1;
        }
    }
    Ok(records)
}

/// Ordered trainable tensors of a phase.
trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

struct Phase1Params<'a> {
    experiential: &'a mut ExperientialParams,
    predictor: &'a mut TargetPredictor,
}

impl ParamSet for Phase1Params<'_> {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.experiential.w_q, &self.experiential.w_k];
        v.extend(self.predictor.named_params().into_iter().map(|(_, t)| t));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.experiential.w_q, &mut self.experiential.w_k];
        v.extend(self.predictor.params_mut());
        v
    }
}

struct FusionParams<'a>(&'a mut FusionNet);

impl ParamSet for FusionParams<'_> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.0.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.0.params_mut()
    }
}

fn with_predictor_params(template: &TargetPredictor, values: &[&Tensor]) -> TargetPredictor {
    let mut p = template.clone();
    for (slot, v) in p.params_mut().into_iter().zip(values) {
        *slot = (*v).clone();
    }
    p
}

/// Trains `w_q`, `w_k` and the predictor through the activation on the dataset.
pub fn train_phase1(
    data: &Dataset,
    table: &EmbeddingTable,
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let template = bundle.predictor.clone();
    let sigma = cfg.label_sigma;
    let mut params = Phase1Params {
        experiential: &mut bundle.experiential,
        predictor: &mut bundle.predictor,
    };
    optimize(
        &mut params,
        data,
        &cfg.phase1,
        cfg.batch_size,
        mix_seed(&[cfg.seed, 1]),
        1,
        |values, s| {
            let pred = with_predictor_params(&template, &values[2..]);
            sample_grads(values, |tape, vars| phase1_loss(tape, vars, &pred, table, data, s, sigma))
        },
    )
}

/// Trains only the fusion network; experiential parameters and predictor are read-only.
pub fn train_phase2(
    data: &Dataset,
    table: &EmbeddingTable,
    gtable: &GeneralizedTable,
    experiential: &ExperientialParams,
    predictor: &TargetPredictor,
    fusion: &mut FusionNet,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let scores = FrozenScores::compute(data, experiential, table, gtable)?;
    let template = fusion.clone();
    let sigma = cfg.label_sigma;
    let mut params = FusionParams(fusion);
    optimize(
        &mut params,
        data,
        &cfg.phase2,
        cfg.batch_size,
        mix_seed(&[cfg.seed, 2]),
        2,
        |values, s| {
            let mut net = template.clone();
            for (slot, v) in net.params_mut().into_iter().zip(values) {
                *slot = (*v).clone();
            }
            sample_grads(values, |tape, vars| phase2_loss(tape, vars, &net, predictor, &scores, data, s, sigma))
        },
    )
}

/// Mean guidance ratio of `fusion` over the dataset's contexts.
pub fn mean_gamma(data: &Dataset, fusion: &FusionNet) -> Result<f64> {
    let gammas: Vec<Result<f64>> = data
        .samples
        .par_iter()
        .map(|s| {
            let ctx = crate::sim::FusionContext {
                temporal: s.temporal.clone(),
                environmental: data.env_tensor(s),
            };
            crate::policy::guidance_ratio(fusion, &ctx)
        })
        .collect();
    let mut total = 0.0;
    for g in &gammas {
        total += g.as_ref().map_err(|e| LoatError::InvalidArgument(e.to_string()))?;
    }
    Ok(total / gammas.len().max(1) as f64)
}

/// Mean phase-1 loss over a dataset with the current parameters.
pub fn mean_phase1_loss(data: &Dataset, table: &EmbeddingTable, bundle: &ModelBundle, sigma: f64) -> Result<f64> {
    let mut params: Vec<&Tensor> = vec![&bundle.experiential.w_q, &bundle.experiential.w_k];
    params.extend(bundle.predictor.named_params().into_iter().map(|(_, t)| t));
    let losses: Vec<Result<f64>> = data
        .samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|t| tape.leaf((*t).clone())).collect();
            let l = phase1_loss(&mut tape, &vars, &bundle.predictor, table, data, s, sigma)?;
            Ok(tape.value(l).item())
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::household;

    #[test]
    fn mix_seed_separates_streams() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[5, 6, 7]), mix_seed(&[5, 6, 7]));
    }

    #[test]
    fn dataset_is_deterministic_and_labelled() {
        let cfg = household::train_config();
        let a = make_dataset(&cfg, &[0, 1], None, 10, 100, 3).unwrap();
        let b = make_dataset(&cfg, &[0, 1], None, 10, 100, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * cfg.targets.len());
        for s in &a.samples {
            let scene = generate_scene(&cfg, s.scene_seed).unwrap();
            assert_eq!(scene.object_at(scene.cell(s.label)), Some(s.target.as_str()));
        }
    }

    #[test]
    fn zero_prefix_shows_only_initial_view() {
        let cfg = household::train_config();
        let d = make_dataset(&cfg, &[4], None, 0, 100, 1).unwrap();
        for s in &d.samples {
            assert_eq!(s.temporal[0], 0.0);
            let seen = s.observed.iter().filter(|&&o| o).count();
            assert!(seen <= 11 * 11);
        }
    }

    #[test]
    fn config_rejects_zero_batch() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(LoatError::Config { field, .. }) if field == "batch_size"));
    }
}
