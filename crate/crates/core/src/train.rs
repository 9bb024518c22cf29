//! Supervised value learning: `|V*(S) − V(S)|` loss, value-stratified
//! batching, and multi-seed training with selection on validation loss.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AdamConfig, ParameterSet};
use crate::net::{Model, ModelKind, NetError, NetInput, RgnnConfig};
use crate::state::Vocabulary;
use crate::statespace::LabeledState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("the loss is undefined for dead-end labels")]
    InfiniteLabel,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("every seed diverged: {0}")]
    AllSeedsDiverged(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// `|V* − V|`.
pub fn loss(vstar: Option<u32>, v: f64) -> Result<f64, TrainError> {
    let vs = vstar.ok_or(TrainError::InfiniteLabel)?;
    Ok((vs as f64 - v).abs())
}

/// Subgradient of [`loss`] with respect to `V`, zero at the kink.
pub fn loss_grad(vstar: Option<u32>, v: f64) -> Result<f64, TrainError> {
    let vs = vstar.ok_or(TrainError::InfiniteLabel)? as f64;
    Ok(if v > vs {
        1.0
    } else if v < vs {
        -1.0
    } else {
        0.0
    })
}

/// Splits an epoch into batches that cover as many distinct values as
/// possible: indices are grouped by value, shuffled within each group, laid
/// out round-robin over groups in increasing value order, and cut into
/// consecutive batches. A batch repeats a value only once the groups not
/// yet represented in it are exhausted. Every index appears exactly once.
pub fn make_batches(values: &[u32], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut strata: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &v) in values.iter().enumerate() {
        strata.entry(v).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<std::vec::IntoIter<usize>> = strata
        .into_values()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g.into_iter()
        })
        .collect();
    let mut order = Vec::with_capacity(values.len());
    while order.len() < values.len() {
        for g in groups.iter_mut() {
            if let Some(i) = g.next() {
                order.push(i);
            }
        }
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// A labeled state with its precomputed network input.
#[derive(Clone, Debug)]
pub struct Example {
    pub instance: String,
    pub vstar: u32,
    pub input: NetInput,
}

/// Builds inputs for every finite-valued state. Inputs depend only on the
/// model kind, never on parameter values.
pub fn prepare_examples(model: &Model, states: &[LabeledState]) -> Result<Vec<Example>, TrainError> {
    states
        .iter()
        .map(|ls| {
            let vstar = ls.vstar.ok_or(TrainError::InfiniteLabel)?;
            Ok(Example {
                instance: ls.instance.clone(),
                vstar,
                input: model.input(&ls.state)?,
            })
        })
        .collect()
}

/// Deterministic split: the first `round(fraction · n)` items of a seeded
/// shuffle (at least one, never all) go to validation; both parts keep input order.
pub fn split_validation<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    if fraction <= 0.0 || items.len() < 2 {
        return (items.to_vec(), Vec::new());
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len() - 1);
    let (val, train) = idx.split_at(n_val);
    let pick = |ix: &[usize]| -> Vec<T> {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| items[i].clone()).collect()
    };
    (pick(train), pick(val))
}

const EVAL_CHUNK: usize = 64;

/// Mean `|V − V*|` over examples under the given parameters.
pub fn mean_loss(model: &Model, params: &ParameterSet, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let inputs: Vec<&NetInput> = chunk.iter().map(|e| &e.input).collect();
        let values = model.values_with(params, &inputs)?;
        total += chunk
            .iter()
            .zip(values)
            .map(|(e, v)| (e.vstar as f64 - v).abs())
            .sum::<f64>();
    }
    Ok(total / examples.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub net: RgnnConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seeds: Vec<u64>,
    /// Steps between evaluations of the validation (and training) loss.
    pub eval_every: usize,
    /// Stop a seed once its mean training loss falls below this value.
    pub target_loss: Option<f64>,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, embed_dim: usize, layers: usize) -> Self {
        Self {
            kind,
            net: RgnnConfig::new(kind, embed_dim, layers),
            adam: AdamConfig::default(),
            batch_size: 16,
            max_steps: 1000,
            seeds: vec![0, 1, 2],
            eval_every: 100,
            target_loss: None,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("at least one seed is required".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainError::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub seed: u64,
    pub step: usize,
    /// Mean loss over the whole training set at this step.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub final_train_loss: f64,
    pub steps: usize,
    /// Set when the seed was aborted on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub seeds: Vec<SeedResult>,
    pub selected_seed: u64,
    pub model: Model,
}

impl TrainReport {
    /// `step,train_loss,val_loss,seed` rows.
    pub fn write_metrics_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,train_loss,val_loss,seed")?;
        for p in &self.curve {
            writeln!(out, "{},{},{},{}", p.step, p.train_loss, p.val_loss, p.seed)?;
        }
        Ok(())
    }
}

struct SeedRun {
    result: SeedResult,
    curve: Vec<CurvePoint>,
    best: Model,
}

fn batch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch
}

fn train_seed(
    cfg: &TrainConfig,
    domain: &Vocabulary,
    seed: u64,
    train: &[Example],
    val: &[Example],
    progress: &(dyn Fn(&CurvePoint) + Sync),
) -> Result<SeedRun, TrainError> {
    let mut model = Model::new(cfg.kind, cfg.net, domain, seed)?;
    let val_set = if val.is_empty() { train } else { val };
    let values: Vec<u32> = train.iter().map(|e| e.vstar).collect();
    let mut curve = Vec::new();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_step = 0;
    let mut step = 0usize;
    let mut epoch = 0u64;
    let mut aborted = None;
    let mut last_train = f64::NAN;

    let evaluate = |model: &Model, step: usize, curve: &mut Vec<CurvePoint>| -> Result<(f64, f64), TrainError> {
        let train_loss = mean_loss(model, model.params(), train)?;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(model, model.params(), val_set)?
        };
        let p = CurvePoint {
            seed,
            step,
            train_loss,
            val_loss,
        };
        progress(&p);
        curve.push(p);
        Ok((train_loss, val_loss))
    };

    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    loop {
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let (tl, vl) = evaluate(&model, step, &mut curve)?;
            last_train = tl;
            if !tl.is_finite() || !vl.is_finite() {
                aborted = Some(format!("non-finite loss at step {step}"));
                break;
            }
            if vl < best_val {
                best_val = vl;
                best_step = step;
                best = model.clone();
            }
            if cfg.target_loss.is_some_and(|t| tl < t) || step >= cfg.max_steps {
                break;
            }
        }
        if queue.is_empty() {
            queue.extend(make_batches(&values, cfg.batch_size, batch_seed(seed, epoch)));
            epoch += 1;
        }
        let batch = queue.pop_front().expect("refilled above");
        let inputs: Vec<&NetInput> = batch.iter().map(|&i| &train[i].input).collect();
        let targets: Vec<f64> = batch.iter().map(|&i| train[i].vstar as f64).collect();
        let (l, grads) = model.loss_and_grad(model.params(), &inputs, &targets)?;
        if !l.is_finite() || !grads.is_finite() {
            aborted = Some(format!("non-finite loss or gradient at step {step}"));
            break;
        }
        model
            .params_mut()
            .adam_step(&grads, cfg.adam)
            .map_err(NetError::from)?;
        step += 1;
    }
    Ok(SeedRun {
        result: SeedResult {
            seed,
            best_val_loss: best_val,
            best_step,
            final_train_loss: last_train,
            steps: step,
            aborted,
        },
        curve,
        best,
    })
}

/// Trains one model per seed and keeps, for each seed, the parameters with the
/// lowest validation loss seen at an evaluation point. The selected seed has
/// the lowest such loss overall (ties go to the earlier seed). An empty
/// validation set falls back to the training loss.
pub fn train(
    cfg: &TrainConfig,
    domain: &Vocabulary,
    train_set: &[Example],
    val_set: &[Example],
    progress: &(dyn Fn(&CurvePoint) + Sync),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let runs: Vec<Result<SeedRun, TrainError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_seed(cfg, domain, seed, train_set, val_set, progress))
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut curve = Vec::new();
    let mut seeds = Vec::new();
    let mut selected: Option<(f64, usize)> = None;
    for (i, run) in runs.iter().enumerate() {
        curve.extend(run.curve.iter().cloned());
        seeds.push(run.result.clone());
        let v = run.result.best_val_loss;
        if v.is_finite() && selected.is_none_or(|(b, _)| v < b) {
            selected = Some((v, i));
        }
    }
    let (_, i) = selected.ok_or_else(|| {
        TrainError::AllSeedsDiverged(
            seeds
                .iter()
                .filter_map(|s| s.aborted.clone())
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    Ok(TrainReport {
        curve,
        seeds,
        selected_seed: runs[i].result.seed,
        model: runs.into_iter().nth(i).expect("index in range").best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{parse_domain, parse_problem};
    use crate::statespace::{expand, LabeledSpace};
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn loss_values() {
        assert_eq!(loss(Some(3), 3.0).unwrap(), 0.0);
        assert_eq!(loss(Some(4), 2.5).unwrap(), 1.5);
        assert_eq!(loss(None, 1.0), Err(TrainError::InfiniteLabel));
        assert_eq!(loss_grad(Some(4), 2.5).unwrap(), -1.0);
        assert_eq!(loss_grad(Some(4), 6.0).unwrap(), 1.0);
        assert_eq!(loss_grad(Some(4), 4.0).unwrap(), 0.0);
    }

    #[test]
    fn batches_of_distinct_values() {
        let values: Vec<u32> = (0..16).collect();
        let b = make_batches(&values, 16, 3);
        assert_eq!(b.len(), 1);
        let distinct: HashSet<u32> = b[0].iter().map(|&i| values[i]).collect();
        assert_eq!(distinct.len(), 16);
    }

    #[test]
    fn two_value_batches_mix_values() {
        let values: Vec<u32> = (0..32).map(|i| 1 + (i % 2)).collect();
        for batch in make_batches(&values, 16, 5) {
            let d: HashSet<u32> = batch.iter().map(|&i| values[i]).collect();
            assert_eq!(d.len(), 2);
        }
        assert_eq!(make_batches(&values, 16, 5), make_batches(&values, 16, 5));
    }

    proptest! {
        #[test]
        fn batches_cover_epoch_and_maximize_distinct_values(
            values in proptest::collection::vec(0u32..6, 1..60),
            bs in 1usize..10,
            seed in 0u64..50,
        ) {
            let batches = make_batches(&values, bs, seed);
            let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..values.len()).collect::<Vec<_>>());
            let strata: HashSet<u32> = values.iter().copied().collect();
            let first: HashSet<u32> = batches[0].iter().map(|&i| values[i]).collect();
            prop_assert_eq!(first.len(), strata.len().min(batches[0].len()));
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let items: Vec<u32> = (0..20).collect();
        let (a, b) = split_validation(&items, 0.2, 4);
        assert_eq!(b.len(), 4);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_eq!(split_validation(&items, 0.2, 4), (a, b));
        assert_eq!(split_validation(&items, 0.0, 4).1.len(), 0);
    }

    const LINE: &str = "(define (domain line) (:predicates (at ?x) (next ?x ?y))
        (:action step :parameters (?x ?y) :precondition (and (at ?x) (next ?x ?y))
           :effect (and (at ?y) (not (at ?x)))))";

    fn line_data() -> (Arc<Vocabulary>, Vec<LabeledState>) {
        let d = Arc::new(parse_domain(LINE).unwrap());
        let p = parse_problem(
            "(define (problem p) (:domain line) (:objects a b c)
               (:init (at a) (next a b) (next b a) (next b c) (next c b)) (:goal (at c)))",
            &d,
        )
        .unwrap();
        let ls = LabeledSpace::new("p", expand(&p, 100).unwrap());
        (Arc::clone(&d.vocab), ls.labeled_states().collect())
    }

    fn cfg(steps: usize) -> TrainConfig {
        let mut c = TrainConfig::new(ModelKind::RgnnT { t: 1, cumulative: false }, 4, 2);
        c.max_steps = steps;
        c.eval_every = 10;
        c.adam.lr = 1e-2;
        c
    }

    #[test]
    fn zero_budget_returns_initial_model() {
        let (vocab, states) = line_data();
        let c = cfg(0);
        let template = Model::new(c.kind, c.net, &vocab, 0).unwrap();
        let ex = prepare_examples(&template, &states).unwrap();
        let r = train(&c, &vocab, &ex, &[], &|_| {}).unwrap();
        assert!(r.seeds.iter().all(|s| s.steps == 0));
        let fresh = Model::new(c.kind, c.net, &vocab, r.selected_seed).unwrap();
        assert_eq!(r.model.params(), fresh.params());
        assert_eq!(r.curve.len(), 3);
    }

    #[test]
    fn training_reduces_loss_selects_argmin_and_repeats_exactly() {
        let (vocab, states) = line_data();
        let c = cfg(60);
        let template = Model::new(c.kind, c.net, &vocab, 0).unwrap();
        let ex = prepare_examples(&template, &states).unwrap();
        let r = train(&c, &vocab, &ex, &ex, &|_| {}).unwrap();
        for s in &r.seeds {
            let first = r.curve.iter().find(|p| p.seed == s.seed).unwrap();
            assert!(s.best_val_loss < first.val_loss);
        }
        let best = r
            .seeds
            .iter()
            .min_by(|a, b| a.best_val_loss.total_cmp(&b.best_val_loss))
            .unwrap();
        assert_eq!(r.selected_seed, best.seed);
        let again = train(&c, &vocab, &ex, &ex, &|_| {}).unwrap();
        assert_eq!(again.model.params(), r.model.params());
        let mut csv = Vec::new();
        r.write_metrics_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("step,train_loss,val_loss,seed\n0,"));
    }

    #[test]
    fn dead_end_labels_are_rejected() {
        let (vocab, mut states) = line_data();
        states[0].vstar = None;
        let c = cfg(1);
        let template = Model::new(c.kind, c.net, &vocab, 0).unwrap();
        assert!(matches!(
            prepare_examples(&template, &states),
            Err(TrainError::InfiniteLabel)
        ));
    }
}
