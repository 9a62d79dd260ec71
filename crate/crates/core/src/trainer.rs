//! Alternating max-min training of a potential `V` and a transport map `T`
//! on a smoothed source.
//!
//! Each outer iteration `k` draws fresh source and target batches, smooths
//! the source at the schedule level for `k`, takes one ascent step on the
//! potential objective
//!
//! ```text
//! L_phi = mean[-V(T(x~))] + mean[V(y)] - lambda * mean[|grad_y V(y)|^2]
//! ```
//!
//! and then `inner_steps` descent steps on the map objective
//!
//! ```text
//! L_theta = mean[alpha |x~ - T(x~)|^2 - V(T(x~))]
//! ```
//!
//! each on a freshly drawn and smoothed source batch. The unsmoothed
//! baseline is the same loop with a zero constant schedule, and the
//! stochastic-generator baseline additionally feeds Gaussian noise to `T`
//! next to the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::autodiff::{Tape, Var};
use crate::datasets::DatasetPair;
use crate::error::{Error, Result};
use crate::nn::{Activation, IcnnParams, MlpParams, Potential, PotentialVars};
use crate::scalar::Scalar;
use crate::smoothing::{perturb, standard_normal, NoiseSchedule, Perturbation, ScheduleKind};
use crate::tensor::Tensor;

/// Losses whose magnitude exceeds this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Deterministic,
    /// `T` reads `[x, xi]` with `xi ~ N(0, I)` of the given width.
    NoiseConcat { noise_dim: usize },
}

impl GeneratorKind {
    pub fn noise_dim(self) -> usize {
        match self {
            GeneratorKind::Deterministic => 0,
            GeneratorKind::NoiseConcat { noise_dim } => noise_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Mlp,
    Icnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// `alpha` in the cost `alpha * |x - y|^2`.
    pub cost_alpha: f64,
    pub lambda_r1: f64,
    pub inner_steps: usize,
    pub total_iters: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub generator: GeneratorKind,
    pub potential: PotentialKind,
    pub schedule: NoiseSchedule,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// A history row is kept every `log_every` iterations and at the end.
    pub log_every: usize,
}

impl TrainerConfig {
    /// The smoothed-source method with the synthetic-benchmark settings:
    /// one hidden ReLU layer of 256 units up to `d = 4` and 1024 beyond,
    /// batch 128, Adam(1e-4, 0, 0.9), 20k outer iterations with 20 map
    /// updates each, and a linear noise schedule from 0.2 to 0.05 stepped
    /// every 2k iterations.
    pub fn smoothed(dim: usize) -> Self {
        let total_iters = 20_000;
        let (cost_alpha, lambda_r1) = if dim >= 256 { (0.01, 1.0) } else { (1.0, 0.0) };
        Self {
            cost_alpha,
            lambda_r1,
            inner_steps: 20,
            total_iters,
            batch: 128,
            adam: AdamConfig::default(),
            generator: GeneratorKind::Deterministic,
            potential: PotentialKind::Mlp,
            schedule: NoiseSchedule {
                kind: ScheduleKind::GaussianConv,
                sigma_max: 0.2,
                sigma_min: 0.05,
                period: 2000,
                total: total_iters,
            },
            hidden: if dim <= 4 { 256 } else { 1024 },
            hidden_layers: 1,
            activation: Activation::Relu,
            log_every: 100,
        }
    }

    /// Same settings without smoothing.
    pub fn unsmoothed(dim: usize) -> Self {
        let mut c = Self::smoothed(dim);
        c.schedule = NoiseSchedule::none(c.total_iters);
        c
    }

    /// Unsmoothed, with noise concatenated to the generator input.
    pub fn unsmoothed_stochastic(dim: usize) -> Self {
        let mut c = Self::unsmoothed(dim);
        c.generator = GeneratorKind::NoiseConcat { noise_dim: dim };
        c
    }

    /// Sets the iteration count, keeping the schedule length in sync.
    pub fn with_total_iters(mut self, k: usize) -> Self {
        self.total_iters = k;
        self.schedule.total = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.cost_alpha > 0.0) || !self.cost_alpha.is_finite() {
            return fail(format!("cost_alpha must be positive, got {}", self.cost_alpha));
        }
        if !(self.lambda_r1 >= 0.0) || !self.lambda_r1.is_finite() {
            return fail(format!("lambda_r1 must be >= 0, got {}", self.lambda_r1));
        }
        if self.inner_steps == 0 {
            return fail("inner_steps must be at least 1".into());
        }
        if self.batch == 0 {
            return fail("batch must be at least 1".into());
        }
        if self.hidden == 0 || self.hidden_layers == 0 {
            return fail("networks need at least one hidden layer of positive width".into());
        }
        if self.log_every == 0 {
            return fail("log_every must be positive".into());
        }
        let a = self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return fail(format!("invalid Adam settings {a:?}"));
        }
        if let GeneratorKind::NoiseConcat { noise_dim: 0 } = self.generator {
            return fail("noise_dim must be positive".into());
        }
        if self.potential == PotentialKind::Icnn && !(0.0..1.0).contains(&self.activation.slope()) {
            return fail("ICNN potential needs a convex activation".into());
        }
        if self.total_iters > 0 {
            if self.schedule.total != self.total_iters {
                return fail(format!(
                    "schedule length {} differs from total_iters {}",
                    self.schedule.total, self.total_iters
                ));
            }
            self.schedule.validate()?;
        }
        Ok(())
    }

    fn hidden_widths(&self) -> Vec<usize> {
        vec![self.hidden; self.hidden_layers]
    }
}

/// Transport network, potential network and their optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair<S = f64> {
    pub transport: MlpParams<S>,
    pub potential: Potential<S>,
    pub adam_transport: AdamState<S>,
    pub adam_potential: AdamState<S>,
    pub generator: GeneratorKind,
    /// Smoothing applied in front of `T` at evaluation time.
    pub perturbation: Perturbation,
    pub cost_alpha: f64,
}

impl<S: Scalar> ModelPair<S> {
    /// Freshly initialized networks for data of width `dim`.
    pub fn init<R: Rng + ?Sized>(cfg: &TrainerConfig, dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        let hidden = cfg.hidden_widths();
        let mut t_dims = vec![dim + cfg.generator.noise_dim()];
        t_dims.extend(&hidden);
        t_dims.push(dim);
        let transport = MlpParams::init(&t_dims, cfg.activation, rng)?;
        let potential = match cfg.potential {
            PotentialKind::Mlp => {
                let mut v_dims = vec![dim];
                v_dims.extend(&hidden);
                v_dims.push(1);
                Potential::Mlp(MlpParams::init(&v_dims, cfg.activation, rng)?)
            }
            PotentialKind::Icnn => Potential::Icnn(IcnnParams::init(
                dim,
                &hidden,
                cfg.activation,
                S::of(cfg.cost_alpha),
                rng,
            )?),
        };
        Self::from_parts(transport, potential, cfg.generator, cfg.schedule.perturbation(), cfg.cost_alpha, cfg.adam)
    }

    pub fn from_parts(
        transport: MlpParams<S>,
        potential: Potential<S>,
        generator: GeneratorKind,
        perturbation: Perturbation,
        cost_alpha: f64,
        adam: AdamConfig,
    ) -> Result<Self> {
        let dim = transport.out_dim();
        if transport.in_dim() != dim + generator.noise_dim() {
            return Err(Error::Config(format!(
                "transport reads {} inputs, expected {dim} data + {} noise",
                transport.in_dim(),
                generator.noise_dim()
            )));
        }
        if potential.in_dim() != dim {
            return Err(Error::Config(format!(
                "potential reads width {}, transport emits {dim}",
                potential.in_dim()
            )));
        }
        Ok(Self {
            adam_transport: AdamState::new(&transport, adam),
            adam_potential: AdamState::new(&potential, adam),
            transport,
            potential,
            generator,
            perturbation,
            cost_alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.transport.out_dim()
    }

    /// Generator input for a smoothed batch: the batch itself, or the batch
    /// with fresh noise columns appended.
    pub fn generator_input<R: Rng + ?Sized>(&self, x_tilde: &Tensor<S>, rng: &mut R) -> Result<Tensor<S>> {
        match self.generator {
            GeneratorKind::Deterministic => Ok(x_tilde.clone()),
            GeneratorKind::NoiseConcat { noise_dim } => {
                let xi = standard_normal(x_tilde.rows(), noise_dim, rng);
                x_tilde.hcat(&xi)
            }
        }
    }

    /// One ascent step on the potential objective; `T` is left untouched.
    /// Returns the objective before the step.
    pub fn potential_step(&mut self, t_input: &Tensor<S>, y: &Tensor<S>, lambda_r1: f64) -> Result<S> {
        let (value, grads) = potential_loss_grad(&self.potential, &self.transport, t_input, y, lambda_r1)?;
        let descent: Vec<_> = grads.iter().map(|g| g.scale(-S::one())).collect();
        self.adam_potential.step(&mut self.potential, &descent)?;
        Ok(value)
    }

    /// One descent step on the map objective; `V` is left untouched.
    pub fn transport_step(&mut self, x_tilde: &Tensor<S>, t_input: &Tensor<S>) -> Result<S> {
        let (value, grads) = map_loss_grad(&self.potential, &self.transport, x_tilde, t_input, self.cost_alpha)?;
        self.adam_transport.step(&mut self.transport, &grads)?;
        Ok(value)
    }
}

/// Smooths `x` at level `eps_eval` (under the model's perturbation kind) and
/// pushes it through `T`, with fresh generator noise when `T` is stochastic.
pub fn transport<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    x: &Tensor<S>,
    rng: &mut R,
    eps_eval: f64,
) -> Result<Tensor<S>> {
    if !(eps_eval >= 0.0) {
        return Err(Error::Contract(format!("eps_eval must be >= 0, got {eps_eval}")));
    }
    let x_tilde = perturb(x, model.perturbation, eps_eval, rng)?;
    let input = model.generator_input(&x_tilde, rng)?;
    model.transport.forward(&input)
}

fn check_batches<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    let (ra, ca) = a.require_matrix(what)?;
    let (rb, cb) = b.require_matrix(what)?;
    if ra == 0 || rb == 0 {
        return Err(Error::Contract(format!("{what}: empty batch")));
    }
    if ca != cb {
        return Err(Error::Shape(format!("{what}: widths {ca} and {cb}")));
    }
    Ok(())
}

fn finite<S: Scalar>(v: S, what: &str) -> Result<S> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

struct PotentialGraph<S: Scalar> {
    tape: Tape<S>,
    vars: PotentialVars,
    objective: Var,
}

fn potential_graph<S: Scalar>(
    potential: &Potential<S>,
    transported: Tensor<S>,
    y: &Tensor<S>,
    lambda_r1: f64,
) -> Result<PotentialGraph<S>> {
    check_batches(&transported, y, "potential objective")?;
    if !(lambda_r1 >= 0.0) {
        return Err(Error::Config(format!("lambda_r1 must be >= 0, got {lambda_r1}")));
    }
    let mut tape = Tape::new();
    let vars = potential.register(&mut tape, true);
    let tx = tape.constant(transported);
    let yv = tape.constant(y.clone());
    let v_fake = potential.evaluate_taped(&mut tape, &vars, tx)?;
    let v_real = potential.evaluate_taped(&mut tape, &vars, yv)?;
    let fake = tape.mean(v_fake.value);
    let real = tape.mean(v_real.value);
    let mut objective = tape.sub(real, fake)?;
    if lambda_r1 > 0.0 {
        let g = potential.input_grad_taped(&mut tape, &vars, yv, &v_real)?;
        let sq = tape.row_norm_sq(g)?;
        let penalty = tape.mean(sq);
        let penalty = tape.scale(penalty, S::of(lambda_r1));
        objective = tape.sub(objective, penalty)?;
    }
    Ok(PotentialGraph { tape, vars, objective })
}

/// `L_phi = mean[-V(T(x~))] + mean[V(y)] - lambda * mean[|grad_y V(y)|^2]`,
/// the objective the potential ascends. `t_input` is the generator input.
pub fn potential_loss<S: Scalar>(
    potential: &Potential<S>,
    transport: &MlpParams<S>,
    t_input: &Tensor<S>,
    y: &Tensor<S>,
    lambda_r1: f64,
) -> Result<S> {
    let tx = transport.forward(t_input)?;
    let g = potential_graph(potential, tx, y, lambda_r1)?;
    finite(g.tape.value(g.objective).item()?, "potential objective")
}

/// [`potential_loss`] and its gradient with respect to the potential
/// parameters, in [`Parametrized::params`] order.
pub fn potential_loss_grad<S: Scalar>(
    potential: &Potential<S>,
    transport: &MlpParams<S>,
    t_input: &Tensor<S>,
    y: &Tensor<S>,
    lambda_r1: f64,
) -> Result<(S, Vec<Tensor<S>>)> {
    let tx = transport.forward(t_input)?;
    let g = potential_graph(potential, tx, y, lambda_r1)?;
    let value = finite(g.tape.value(g.objective).item()?, "potential objective")?;
    let mut grads = g.tape.backward(g.objective)?;
    let out = g.vars.flat().into_iter().map(|v| grads.take(&g.tape, v)).collect();
    Ok((value, out))
}

struct MapGraph<S: Scalar> {
    tape: Tape<S>,
    vars: Vec<Var>,
    loss: Var,
}

fn map_graph<S: Scalar>(
    potential: &Potential<S>,
    transport: &MlpParams<S>,
    x_tilde: &Tensor<S>,
    t_input: &Tensor<S>,
    alpha: f64,
) -> Result<MapGraph<S>> {
    check_batches(x_tilde, x_tilde, "map objective")?;
    if x_tilde.rows() != t_input.rows() {
        return Err(Error::Shape("generator input and smoothed batch differ in size".into()));
    }
    let mut tape = Tape::new();
    let t_vars = transport.register(&mut tape, true);
    let v_vars = potential.register(&mut tape, false);
    let input = tape.constant(t_input.clone());
    let xv = tape.constant(x_tilde.clone());
    let out = transport.forward_taped(&mut tape, &t_vars, input)?.output;
    let diff = tape.sub(xv, out)?;
    let cost = tape.row_norm_sq(diff)?;
    let cost = tape.scale(cost, S::of(alpha));
    let v = potential.evaluate_taped(&mut tape, &v_vars, out)?;
    let per_sample = tape.sub(cost, v.value)?;
    let loss = tape.mean(per_sample);
    Ok(MapGraph {
        tape,
        vars: t_vars.flat(),
        loss,
    })
}

/// `mean[alpha |x~ - T(x~)|^2 - V(T(x~))]`, the objective the map descends.
///
/// The `mean[V(y)]` term of the full max-min objective does not depend on
/// `T` and is left out.
pub fn map_loss<S: Scalar>(
    potential: &Potential<S>,
    transport: &MlpParams<S>,
    x_tilde: &Tensor<S>,
    t_input: &Tensor<S>,
    alpha: f64,
) -> Result<S> {
    let g = map_graph(potential, transport, x_tilde, t_input, alpha)?;
    finite(g.tape.value(g.loss).item()?, "map objective")
}

/// [`map_loss`] and its gradient with respect to the transport parameters.
pub fn map_loss_grad<S: Scalar>(
    potential: &Potential<S>,
    transport: &MlpParams<S>,
    x_tilde: &Tensor<S>,
    t_input: &Tensor<S>,
    alpha: f64,
) -> Result<(S, Vec<Tensor<S>>)> {
    let g = map_graph(potential, transport, x_tilde, t_input, alpha)?;
    let value = finite(g.tape.value(g.loss).item()?, "map objective")?;
    let mut grads = g.tape.backward(g.loss)?;
    let out = g.vars.iter().map(|&v| grads.take(&g.tape, v)).collect();
    Ok((value, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub level: f64,
    pub loss_phi: f64,
    /// Mean map objective over the inner steps of this iteration.
    pub loss_theta: f64,
    pub d_cost: Option<f64>,
    pub d_target: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, r: TrainRecord) {
        debug_assert!(self.records.last().is_none_or(|p| p.iter < r.iter));
        self.records.push(r);
    }
}

/// Training stopped early; carries everything logged so far.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub iter: usize,
    pub error: Error,
    pub history: TrainHistory,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted at iteration {}: {}", self.iter, self.error)
    }
}

impl std::error::Error for TrainAbort {}

/// Stepwise driver of the training loop.
pub struct Trainer<'a, S: Scalar = f64> {
    cfg: TrainerConfig,
    pair: &'a DatasetPair,
    model: ModelPair<S>,
    rng: ChaCha8Rng,
    iter: usize,
    history: TrainHistory,
}

/// RNG for stream `stream` of a seed; training uses stream 0.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(cfg: TrainerConfig, pair: &'a DatasetPair, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed, 0);
        let model = ModelPair::init(&cfg, pair.dim(), &mut rng)?;
        Ok(Self {
            cfg,
            pair,
            model,
            rng,
            iter: 0,
            history: TrainHistory::default(),
        })
    }

    /// Continues from an existing model (its optimizer state included).
    pub fn resume(cfg: TrainerConfig, pair: &'a DatasetPair, model: ModelPair<S>, seed: u64, iter: usize) -> Result<Self> {
        cfg.validate()?;
        if model.dim() != pair.dim() {
            return Err(Error::Config(format!(
                "model dimension {} differs from data dimension {}",
                model.dim(),
                pair.dim()
            )));
        }
        Ok(Self {
            cfg,
            pair,
            model,
            rng: seeded_rng(seed, 0),
            iter,
            history: TrainHistory::default(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelPair<S> {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.total_iters
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn history_mut(&mut self) -> &mut TrainHistory {
        &mut self.history
    }

    fn smoothed_source(&mut self, level: f64) -> Result<(Tensor<S>, Tensor<S>)> {
        let x = self.pair.source.sample(self.cfg.batch, &mut self.rng)?;
        let x_tilde = perturb(&x, self.cfg.schedule.perturbation(), level, &mut self.rng)?;
        let input = self.model.generator_input(&x_tilde, &mut self.rng)?;
        Ok((x_tilde, input))
    }

    /// Runs one outer iteration and returns its record. The record is also
    /// appended to the history when it falls on the logging grid.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let k = self.iter;
        if self.is_done() {
            return Err(Error::Contract(format!("training already finished at iteration {k}")));
        }
        let level = self.cfg.schedule.level_at(k)?;

        let (_, input) = self.smoothed_source(level)?;
        let y = self.pair.target.sample(self.cfg.batch, &mut self.rng)?;
        let loss_phi = self.model.potential_step(&input, &y, self.cfg.lambda_r1)?.as_f64();

        let mut theta_sum = 0.0;
        for _ in 0..self.cfg.inner_steps {
            let (x_tilde, input) = self.smoothed_source(level)?;
            theta_sum += self.model.transport_step(&x_tilde, &input)?.as_f64();
        }
        let loss_theta = theta_sum / self.cfg.inner_steps as f64;

        for (name, v) in [("loss_phi", loss_phi), ("loss_theta", loss_theta)] {
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    iter: k,
                    reason: format!("{name} = {v:e}"),
                });
            }
        }

        self.iter += 1;
        let record = TrainRecord {
            iter: k,
            level,
            loss_phi,
            loss_theta,
            d_cost: None,
            d_target: None,
        };
        if k % self.cfg.log_every == 0 || self.is_done() {
            self.history.push(record.clone());
        }
        Ok(record)
    }

    /// Runs the remaining iterations.
    pub fn run(mut self) -> std::result::Result<(ModelPair<S>, TrainHistory), TrainAbort> {
        while !self.is_done() {
            if let Err(error) = self.step() {
                return Err(TrainAbort {
                    iter: self.iter,
                    error,
                    history: self.history,
                });
            }
        }
        Ok((self.model, self.history))
    }

    pub fn into_parts(self) -> (ModelPair<S>, TrainHistory) {
        (self.model, self.history)
    }
}

/// Trains a fresh model for `cfg.total_iters` outer iterations.
pub fn train<S: Scalar>(
    cfg: &TrainerConfig,
    pair: &DatasetPair,
    seed: u64,
) -> std::result::Result<(ModelPair<S>, TrainHistory), TrainAbort> {
    let trainer = Trainer::new(cfg.clone(), pair, seed).map_err(|error| TrainAbort {
        iter: 0,
        error,
        history: TrainHistory::default(),
    })?;
    trainer.run()
}
