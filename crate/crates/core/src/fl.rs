//! Federated round engine: FedAvg, FedProx and Scaffold.
//!
//! A round sends the global parameters to every participant, runs local SGD
//! through the strategy's gradient modifier, and aggregates the returned
//! models (FedAvg/FedProx) or deltas plus control-variate changes
//! (Scaffold). Client steps are independent and may run on a thread pool;
//! aggregation always consumes updates in ascending client-id order, so
//! parallel and serial runs agree bit for bit.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    evaluate, local_train, Evaluation, GradientModifier, Identity, LocalObjective, MlpConfig,
    ParameterVector, TrainSpec,
};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum Strategy {
    #[default]
    FedAvg,
    FedProx {
        mu: f64,
    },
    Scaffold,
}

impl Strategy {
    /// Configuration-level check: FedProx needs a strictly positive `mu`.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::FedProx { mu } if !(mu > 0.0 && mu.is_finite()) => Err(Error::config(
                "mu",
                format!("FedProx needs a finite mu > 0, got {mu}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::FedAvg => "fedavg".into(),
            Strategy::FedProx { mu } => format!("fedprox(mu={mu})"),
            Strategy::Scaffold => "scaffold".into(),
        }
    }
}

/// One federated participant.
#[derive(Debug, Clone)]
pub struct ClientState<O> {
    pub id: usize,
    pub objective: O,
    /// `|D_i|`
    pub sample_count: usize,
    /// Scaffold's `c_i`; zero until the client's first Scaffold round.
    pub control: ParameterVector,
}

impl<O: LocalObjective> ClientState<O> {
    pub fn new(id: usize, objective: O) -> Result<Self> {
        let sample_count = objective.sample_count();
        if sample_count == 0 {
            return Err(Error::config(
                "clients",
                format!("client {id} has no samples"),
            ));
        }
        let control = ParameterVector::zeros(objective.param_count());
        Ok(ClientState {
            id,
            objective,
            sample_count,
            control,
        })
    }
}

/// Builds clients `0..n` from objectives.
pub fn make_clients<O: LocalObjective>(objectives: Vec<O>) -> Result<Vec<ClientState<O>>> {
    objectives
        .into_iter()
        .enumerate()
        .map(|(id, o)| ClientState::new(id, o))
        .collect()
}

/// Stepwise learning-rate decay: `lr0 × decay^⌊t / interval⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub decay_interval: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr0: 0.01,
            decay: 0.8,
            decay_interval: 10,
        }
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            lr0: lr,
            decay: 1.0,
            decay_interval: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("lr0", "must be finite and > 0"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("decay", "must lie in (0, 1]"));
        }
        if self.decay_interval == 0 {
            return Err(Error::config("decay_interval", "must be >= 1"));
        }
        Ok(())
    }

    /// Rate for zero-based round `t`.
    pub fn lr(&self, t: usize) -> f64 {
        let exponent = i32::try_from(t / self.decay_interval).unwrap_or(i32::MAX);
        self.lr0 * self.decay.powi(exponent)
    }
}

/// Server-side state: `w_t`, Scaffold's `c`, the round counter and the
/// learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_params: ParameterVector,
    pub control: ParameterVector,
    /// Completed rounds.
    pub round: usize,
    pub schedule: LrSchedule,
}

impl ServerState {
    pub fn new(global_params: ParameterVector, schedule: LrSchedule) -> Self {
        let control = ParameterVector::zeros(global_params.len());
        ServerState {
            global_params,
            control,
            round: 0,
            schedule,
        }
    }

    /// Learning rate of the round about to run.
    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.round)
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// `w_t^i`
    pub params_after: ParameterVector,
    /// `w_t^i − w_t`
    pub delta: ParameterVector,
    /// Aggregation weight: `|D_i|` for FedAvg/FedProx, 1 for Scaffold.
    pub weight: f64,
    /// Scaffold only: `c_i⁺`.
    pub new_control: Option<ParameterVector>,
    /// Scaffold only: `c_i⁺ − c_i`.
    pub control_delta: Option<ParameterVector>,
    pub local_loss: f64,
    /// Local SGD steps `K`.
    pub steps: usize,
}

/// Participants of one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub participants: Vec<usize>,
    pub round: usize,
}

impl RoundPlan {
    pub fn full(round: usize, clients: usize) -> Self {
        RoundPlan {
            participants: (0..clients).collect(),
            round,
        }
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.participants.is_empty() {
            return Err(Error::config("participants", "round plan is empty"));
        }
        let mut seen = BTreeSet::new();
        for &p in &self.participants {
            if p >= clients {
                return Err(Error::config(
                    "participants",
                    format!("client {p} does not exist ({clients} clients)"),
                ));
            }
            if !seen.insert(p) {
                return Err(Error::config(
                    "participants",
                    format!("client {p} listed twice"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-round hyperparameters apart from the learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Scaffold's global step size.
    pub server_lr: f64,
    /// Client-step worker threads; 0 runs serially.
    pub threads: usize,
}

impl Default for RoundOptions {
    fn default() -> Self {
        RoundOptions {
            epochs: 10,
            batch_size: 256,
            server_lr: 1.0,
            threads: 0,
        }
    }
}

/// Random stream of client `client` in zero-based round `round`. A function
/// of the root seed only, so execution order cannot change results.
pub fn client_stream(root: &SeededRng, round: usize, client: usize) -> SeededRng {
    root.split(round as u64).split(client as u64)
}

fn with_context(e: Error, prefix: impl FnOnce() -> String) -> Error {
    match e {
        Error::Divergence { context, loss } => Error::Divergence {
            context: format!("{}, {context}", prefix()),
            loss,
        },
        other => other,
    }
}

fn finish_update<O: LocalObjective>(
    client: &ClientState<O>,
    w_global: &ParameterVector,
    outcome: crate::model::LocalTrainOutcome,
    weight: f64,
) -> ClientUpdate {
    ClientUpdate {
        client_id: client.id,
        delta: outcome.params.sub(w_global),
        params_after: outcome.params,
        weight,
        new_control: None,
        control_delta: None,
        local_loss: outcome.mean_loss,
        steps: outcome.steps,
    }
}

/// Plain local SGD from `w_global`.
pub fn client_step_fedavg<O: LocalObjective>(
    client: &ClientState<O>,
    w_global: &ParameterVector,
    spec: &TrainSpec,
    rng: &mut SeededRng,
) -> Result<ClientUpdate> {
    let outcome = local_train(&client.objective, w_global, spec, &mut Identity, rng)
        .map_err(|e| with_context(e, || format!("client {}", client.id)))?;
    Ok(finish_update(
        client,
        w_global,
        outcome,
        client.sample_count as f64,
    ))
}

/// Gradient of the proximal term `μ/2 ‖w − w_global‖²` added to each step.
pub struct ProximalModifier<'a> {
    pub mu: f64,
    pub anchor: &'a ParameterVector,
}

impl GradientModifier for ProximalModifier<'_> {
    fn modify(&mut self, grad: &mut ParameterVector, params: &ParameterVector) {
        for ((g, w), a) in grad
            .as_mut_slice()
            .iter_mut()
            .zip(params.as_slice())
            .zip(self.anchor.as_slice())
        {
            *g += self.mu * (w - a);
        }
    }
}

/// Local SGD on the proximal objective. `mu = 0` degenerates to FedAvg.
pub fn client_step_fedprox<O: LocalObjective>(
    client: &ClientState<O>,
    w_global: &ParameterVector,
    mu: f64,
    spec: &TrainSpec,
    rng: &mut SeededRng,
) -> Result<ClientUpdate> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::config(
            "mu",
            format!("must be finite and >= 0, got {mu}"),
        ));
    }
    let mut modifier = ProximalModifier {
        mu,
        anchor: w_global,
    };
    let outcome = local_train(&client.objective, w_global, spec, &mut modifier, rng)
        .map_err(|e| with_context(e, || format!("client {}", client.id)))?;
    Ok(finish_update(
        client,
        w_global,
        outcome,
        client.sample_count as f64,
    ))
}

/// Adds the fixed drift correction `c − c_i` to every gradient.
pub struct ControlVariateModifier {
    pub correction: ParameterVector,
}

impl GradientModifier for ControlVariateModifier {
    fn modify(&mut self, grad: &mut ParameterVector, _params: &ParameterVector) {
        grad.axpy(1.0, &self.correction);
    }
}

/// Scaffold client step with the difference-quotient control update
/// `c_i⁺ = c_i − c + (w_global − w_after) / (K · lr)`.
pub fn client_step_scaffold<O: LocalObjective>(
    client: &ClientState<O>,
    w_global: &ParameterVector,
    c_server: &ParameterVector,
    spec: &TrainSpec,
    rng: &mut SeededRng,
) -> Result<ClientUpdate> {
    if client.control.len() != w_global.len() || c_server.len() != w_global.len() {
        return Err(Error::Internal(format!(
            "control variate lengths {} / {} do not match parameters {}",
            client.control.len(),
            c_server.len(),
            w_global.len()
        )));
    }
    let mut modifier = ControlVariateModifier {
        correction: c_server.sub(&client.control),
    };
    let outcome = local_train(&client.objective, w_global, spec, &mut modifier, rng)
        .map_err(|e| with_context(e, || format!("client {}", client.id)))?;
    let k = outcome.steps;
    if k == 0 || spec.lr == 0.0 {
        return Err(Error::Internal(format!(
            "client {}: cannot form control update with K = {k}, lr = {}",
            client.id, spec.lr
        )));
    }
    let inv = 1.0 / (k as f64 * spec.lr);
    let mut new_control = client.control.sub(c_server);
    for ((c, g), w) in new_control
        .as_mut_slice()
        .iter_mut()
        .zip(w_global.as_slice())
        .zip(outcome.params.as_slice())
    {
        *c += (g - w) * inv;
    }
    let control_delta = new_control.sub(&client.control);
    let mut update = finish_update(client, w_global, outcome, 1.0);
    update.new_control = Some(new_control);
    update.control_delta = Some(control_delta);
    Ok(update)
}

/// Sample-weighted model average `Σ (|D_i| / n) w_t^i`, `n = Σ |D_i|`.
pub fn aggregate_fedavg(
    updates: &[ClientUpdate],
    w_global: &ParameterVector,
) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(Error::config("updates", "nothing to aggregate"));
    }
    let total: f64 = updates.iter().map(|u| u.weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::config(
            "weights",
            format!("total weight {total} is not positive"),
        ));
    }
    let mut out = ParameterVector::zeros(w_global.len());
    for u in updates {
        if u.params_after.len() != w_global.len() {
            return Err(Error::Internal(format!(
                "client {} sent {} parameters, expected {}",
                u.client_id,
                u.params_after.len(),
                w_global.len()
            )));
        }
        out.axpy(u.weight / total, &u.params_after);
    }
    Ok(out)
}

/// Scaffold server step:
/// `w ← w + server_lr · mean(Δw_i)`, `c ← c + (1/N) Σ (c_i⁺ − c_i)`.
pub fn aggregate_scaffold(
    updates: &[ClientUpdate],
    server: &ServerState,
    total_clients: usize,
    server_lr: f64,
) -> Result<(ParameterVector, ParameterVector)> {
    if updates.is_empty() {
        return Err(Error::config("updates", "nothing to aggregate"));
    }
    if total_clients == 0 {
        return Err(Error::config("clients", "total client count is zero"));
    }
    let len = server.global_params.len();
    let mut mean_delta = ParameterVector::zeros(len);
    let mut control_sum = ParameterVector::zeros(len);
    let inv_p = 1.0 / updates.len() as f64;
    for u in updates {
        let dc = u.control_delta.as_ref().ok_or_else(|| {
            Error::Internal(format!("client {} sent no control update", u.client_id))
        })?;
        if u.delta.len() != len || dc.len() != len {
            return Err(Error::Internal(format!(
                "client {} sent mismatched lengths",
                u.client_id
            )));
        }
        mean_delta.axpy(inv_p, &u.delta);
        control_sum.axpy(1.0, dc);
    }
    let mut w = server.global_params.clone();
    w.axpy(server_lr, &mean_delta);
    let mut c = server.control.clone();
    c.axpy(1.0 / total_clients as f64, &control_sum);
    Ok((w, c))
}

/// Scores global parameters after aggregation.
pub trait Evaluator: Sync {
    fn evaluate(&self, params: &ParameterVector) -> Result<Evaluation>;
}

impl<F> Evaluator for F
where
    F: Fn(&ParameterVector) -> Result<Evaluation> + Sync,
{
    fn evaluate(&self, params: &ParameterVector) -> Result<Evaluation> {
        self(params)
    }
}

/// Accuracy and loss of an MLP on a held-out dataset.
pub struct DatasetEvaluator<'a> {
    pub cfg: &'a MlpConfig,
    pub test: &'a Dataset,
}

impl Evaluator for DatasetEvaluator<'_> {
    fn evaluate(&self, params: &ParameterVector) -> Result<Evaluation> {
        evaluate(self.cfg, params, self.test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// One-based round index.
    pub round: usize,
    pub lr: f64,
    /// `(client id, mean local loss)` in participant order.
    pub client_losses: Vec<(usize, f64)>,
    pub mean_client_loss: f64,
    pub global: Option<Evaluation>,
}

enum Executor {
    Serial,
    Pool(rayon::ThreadPool),
}

impl Executor {
    fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Ok(Executor::Serial);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Executor::Pool)
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))
    }

    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Executor::Pool(pool) if items.len() > 1 => {
                pool.install(|| items.par_iter().map(f).collect())
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Runs one round and returns the next server state. Client controls are
/// replaced in place for Scaffold. `rng` is the run's root stream; each
/// client draws from [`client_stream`].
pub fn run_round<O: LocalObjective + Sync>(
    server: &ServerState,
    clients: &mut [ClientState<O>],
    plan: &RoundPlan,
    strategy: &Strategy,
    opts: &RoundOptions,
    rng: &SeededRng,
    evaluator: Option<&dyn Evaluator>,
) -> Result<(ServerState, RoundReport)> {
    let exec = Executor::new(opts.threads)?;
    run_round_on(&exec, server, clients, plan, strategy, opts, rng, evaluator)
}

#[allow(clippy::too_many_arguments)]
fn run_round_on<O: LocalObjective + Sync>(
    exec: &Executor,
    server: &ServerState,
    clients: &mut [ClientState<O>],
    plan: &RoundPlan,
    strategy: &Strategy,
    opts: &RoundOptions,
    rng: &SeededRng,
    evaluator: Option<&dyn Evaluator>,
) -> Result<(ServerState, RoundReport)> {
    plan.validate(clients.len())?;
    if let Strategy::FedProx { mu } = strategy {
        if !(*mu >= 0.0 && mu.is_finite()) {
            return Err(Error::config(
                "mu",
                format!("must be finite and >= 0, got {mu}"),
            ));
        }
    }
    let t = server.round;
    let lr = server.lr();
    let spec = TrainSpec {
        epochs: opts.epochs,
        lr,
        batch_size: opts.batch_size,
    };
    let w = &server.global_params;

    let mut participants = plan.participants.clone();
    participants.sort_unstable();
    let shared: &[ClientState<O>] = clients;
    let results = exec.map(&participants, |&id| {
        let client = &shared[id];
        let mut crng = client_stream(rng, t, id);
        match strategy {
            Strategy::FedAvg => client_step_fedavg(client, w, &spec, &mut crng),
            Strategy::FedProx { mu } => client_step_fedprox(client, w, *mu, &spec, &mut crng),
            Strategy::Scaffold => {
                client_step_scaffold(client, w, &server.control, &spec, &mut crng)
            }
        }
        .map_err(|e| with_context(e, || format!("round {}", t + 1)))
    });
    let updates = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut next = server.clone();
    match strategy {
        Strategy::FedAvg | Strategy::FedProx { .. } => {
            next.global_params = aggregate_fedavg(&updates, w)?;
        }
        Strategy::Scaffold => {
            let (w_new, c_new) =
                aggregate_scaffold(&updates, server, clients.len(), opts.server_lr)?;
            next.global_params = w_new;
            next.control = c_new;
            for u in &updates {
                clients[u.client_id].control = u
                    .new_control
                    .clone()
                    .expect("scaffold update carries control");
            }
        }
    }
    if !next.global_params.is_finite() {
        return Err(Error::Divergence {
            context: format!("round {}: aggregated parameters are not finite", t + 1),
            loss: f64::NAN,
        });
    }
    next.round = t + 1;

    let global = evaluator
        .map(|e| e.evaluate(&next.global_params))
        .transpose()?;
    if let Some(g) = &global {
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                context: format!("round {}: global loss", t + 1),
                loss: g.loss,
            });
        }
    }
    let client_losses: Vec<(usize, f64)> = updates
        .iter()
        .map(|u| (u.client_id, u.local_loss))
        .collect();
    let mean_client_loss =
        client_losses.iter().map(|(_, l)| l).sum::<f64>() / client_losses.len() as f64;
    Ok((
        next,
        RoundReport {
            round: t + 1,
            lr,
            client_losses,
            mean_client_loss,
            global,
        },
    ))
}

/// Full-participation training for `rounds` rounds.
pub fn run_training<O: LocalObjective + Sync>(
    server: ServerState,
    clients: &mut [ClientState<O>],
    strategy: &Strategy,
    rounds: usize,
    opts: &RoundOptions,
    evaluator: Option<&dyn Evaluator>,
    rng: &SeededRng,
) -> Result<(ServerState, Vec<RoundReport>)> {
    let mut reports = Vec::with_capacity(rounds);
    let server = run_training_with(
        server,
        clients,
        strategy,
        rounds,
        opts,
        evaluator,
        rng,
        &mut |_, _, r| {
            reports.push(r.clone());
            Ok(())
        },
    )?;
    Ok((server, reports))
}

/// Observer invoked after every round with the new server state.
pub type RoundObserver<'a, O> =
    dyn FnMut(&ServerState, &[ClientState<O>], &RoundReport) -> Result<()> + 'a;

/// [`run_training`] with a per-round callback (metrics, checkpoints).
#[allow(clippy::too_many_arguments)]
pub fn run_training_with<O: LocalObjective + Sync>(
    mut server: ServerState,
    clients: &mut [ClientState<O>],
    strategy: &Strategy,
    rounds: usize,
    opts: &RoundOptions,
    evaluator: Option<&dyn Evaluator>,
    rng: &SeededRng,
    observer: &mut RoundObserver<'_, O>,
) -> Result<ServerState> {
    if rounds == 0 {
        return Err(Error::config("rounds", "must be >= 1"));
    }
    if clients.is_empty() {
        return Err(Error::config("clients", "no clients"));
    }
    let exec = Executor::new(opts.threads)?;
    for _ in 0..rounds {
        let plan = RoundPlan::full(server.round, clients.len());
        let (next, report) = run_round_on(
            &exec, &server, clients, &plan, strategy, opts, rng, evaluator,
        )?;
        server = next;
        observer(&server, clients, &report)?;
    }
    Ok(server)
}
