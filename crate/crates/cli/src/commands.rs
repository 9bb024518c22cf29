use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rgnn::autodiff::{grad_check, ParameterSet};
use rgnn::baselines::{build_2gnn_input, DEFAULT_SIZE_CAP};
use rgnn::checkpoint;
use rgnn::domains::{load_dir, DomainKind, GeneratedSet, GeneratorSpec};
use rgnn::net::{Model, ModelKind, RgnnConfig};
use rgnn::pddl::{parse_domain, parse_problem, DomainModel, Problem};
use rgnn::policy::{evaluate_suite, write_records_csv, OracleValues, PolicyOptions, ValueFunction};
use rgnn::state::RelationalState;
use rgnn::statespace::{
    expand, optimal_values, sample_training_set, DatasetRecord, LabeledSpace, SampleOptions, DEFAULT_STATE_CAP,
};
use rgnn::train::{prepare_examples, split_validation, train, CurvePoint, TrainConfig};
use rgnn::wl::{coloring, distinguishes, Algo, Graph};

use crate::manifest::{beside, Recorder};
use crate::{CmdResult, Command, EvalArgs, Failure, GenArgs, GradcheckArgs, ModelArg, ModelSpec};
use crate::{OracleArgs, TrainArgs, TransformArgs, WlArgs};

pub fn run(cmd: &Command) -> CmdResult {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Oracle(a) => oracle(a),
        Command::Transform(a) => transform(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Wl(a) => wl(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn model_kind(spec: &ModelSpec) -> ModelKind {
    match spec.model {
        ModelArg::Rgnn => ModelKind::Rgnn,
        ModelArg::RgnnT => ModelKind::RgnnT {
            t: spec.t,
            cumulative: spec.cumulative,
        },
        ModelArg::Rgnn2 => ModelKind::Rgnn2,
        ModelArg::TwoGnn => ModelKind::TwoGnn,
    }
}

fn domain_kind(tag: &str) -> Result<DomainKind, Failure> {
    DomainKind::from_tag(tag).map_err(|e| usage(e.to_string()))
}

fn load(dir: &Path) -> anyhow::Result<(Arc<DomainModel>, Vec<(String, Problem)>)> {
    let (domain, problems) = load_dir(dir).with_context(|| format!("loading {}", dir.display()))?;
    if problems.is_empty() {
        anyhow::bail!("{}: no problem files", dir.display());
    }
    Ok((domain, problems))
}

fn label(problems: &[(String, Problem)], cap: usize) -> anyhow::Result<Vec<LabeledSpace>> {
    problems
        .iter()
        .map(|(name, p)| {
            let space = expand(p, cap).with_context(|| format!("expanding {name}"))?;
            Ok(LabeledSpace::new(name.clone(), space))
        })
        .collect()
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn gen(a: &GenArgs) -> CmdResult {
    let rec = Recorder::new("gen", a);
    let domain = domain_kind(&a.domain)?;
    if a.count == 0 {
        return Err(usage("--count must be positive"));
    }
    let spec = GeneratorSpec {
        domain,
        n: a.n,
        m: a.m,
        targets: a.targets,
        density: a.density,
        seed: a.seed,
    };
    let set = GeneratedSet::generate(&spec, a.count)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let written = set.write_dir(&a.out)?;
    println!("wrote {} instances to {}", a.count, a.out.display());
    rec.finish(&a.out.join("run.manifest.json"), vec![a.seed], &written)?;
    Ok(())
}

fn oracle(a: &OracleArgs) -> CmdResult {
    let rec = Recorder::new("oracle", a);
    let (_, problems) = load(&a.data)?;
    let spaces = label(&problems, a.state_cap)?;
    for s in &spaces {
        let vstar = optimal_values(&s.space)[0].map_or("inf".to_string(), |v| v.to_string());
        println!("{}: {} states, V*(init) = {vstar}", s.instance, s.space.len());
    }
    let opts = SampleOptions {
        per_value_cap: a.per_value_cap.unwrap_or(usize::MAX),
        seed: a.seed,
        dead_end_surrogate: a.dead_end_value,
    };
    let states = sample_training_set(&spaces, opts)?;
    let mut out = create(&a.out)?;
    rgnn::statespace::write_dataset(&mut out, &states)?;
    out.flush()?;
    println!("wrote {} labeled states to {}", states.len(), a.out.display());
    rec.finish(&beside(&a.out), vec![a.seed], &[a.out.clone()])?;
    Ok(())
}

/// Atoms of the network input of one state, as text.
fn describe_input(model: &Model, state: &RelationalState) -> anyhow::Result<Vec<String>> {
    let names = state.objects();
    Ok(match model.kind() {
        ModelKind::Rgnn => state.augment_goal().atom_strings(),
        ModelKind::RgnnT { .. } | ModelKind::Rgnn2 => model
            .transformed(state)?
            .expect("pair models transform")
            .atom_strings(names),
        ModelKind::TwoGnn => {
            let n = state.num_objects();
            let g = build_2gnn_input(n, DEFAULT_SIZE_CAP)?;
            let pair = |first: usize, second: usize| format!("<{},{}>", names[first], names[second]);
            let mut out = Vec::with_capacity(g.num_atoms());
            for (pred, atoms) in [("p1", &g.p1), ("p2", &g.p2)] {
                for [x, y] in atoms {
                    out.push(format!(
                        "{pred}({},{})",
                        pair(x.first as usize, x.second as usize),
                        pair(y.first as usize, y.second as usize)
                    ));
                }
            }
            for (node, row) in model.input(state)?.init {
                let node = node as usize;
                out.push(format!("init({},{})", pair(node / n, node % n), model.embed_rows()[row as usize]));
            }
            out
        }
    })
}

fn transform(a: &TransformArgs) -> CmdResult {
    let rec = Recorder::new("transform", a);
    let kind = model_kind(&a.model);
    let (domain, problems) = load(&a.data)?;
    let model = Model::new(kind, RgnnConfig::new(kind, 1, 1), &domain.vocab, 0)?;
    let mut out = create(&a.out)?;
    let mut count = 0;
    for space in label(&problems, a.state_cap)? {
        let states: Vec<_> = space.labeled_states().collect();
        let take = if a.init_only { 1 } else { states.len() };
        for ls in states.into_iter().take(take) {
            let record = DatasetRecord {
                instance: ls.instance,
                vstar: ls.vstar,
                atoms: describe_input(&model, &ls.state)?,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            count += 1;
        }
    }
    out.flush()?;
    println!("wrote {count} {kind} inputs to {}", a.out.display());
    rec.finish(&beside(&a.out), Vec::new(), &[a.out.clone()])?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> CmdResult {
    let rec = Recorder::new("train", a);
    if a.dim == 0 || a.layers == 0 || a.batch == 0 || a.eval_every == 0 {
        return Err(usage("--dim, --layers, --batch and --eval-every must be positive"));
    }
    if a.seeds.is_empty() {
        return Err(usage("--seeds needs at least one seed"));
    }
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(usage("--val-fraction must lie in [0, 1)"));
    }
    if a.val.is_some() && a.val_fraction > 0.0 {
        return Err(usage("--val and --val-fraction are exclusive"));
    }
    let kind = model_kind(&a.model);
    let mut cfg = TrainConfig::new(kind, a.dim, a.layers);
    cfg.adam.lr = a.lr;
    cfg.batch_size = a.batch;
    cfg.max_steps = a.steps;
    cfg.seeds = a.seeds.clone();
    cfg.eval_every = a.eval_every;
    cfg.target_loss = a.target_loss;

    let opts = SampleOptions::new(a.per_value_cap.unwrap_or(usize::MAX), a.data_seed);
    let (domain, problems) = load(&a.data)?;
    let states = sample_training_set(&label(&problems, a.state_cap)?, opts)?;
    let shape = Model::new(kind, cfg.net, &domain.vocab, 0)?;
    let examples = prepare_examples(&shape, &states)?;
    let (train_set, val_set) = match &a.val {
        Some(dir) => {
            let (_, vp) = load(dir)?;
            let vstates = sample_training_set(&label(&vp, a.state_cap)?, opts)?;
            (examples, prepare_examples(&shape, &vstates)?)
        }
        None => split_validation(&examples, a.val_fraction, a.data_seed),
    };
    if train_set.is_empty() {
        return Err(Failure::Domain(anyhow::anyhow!("no solvable training states")));
    }
    eprintln!(
        "training {kind} (k={}, L={}) on {} states, validating on {}",
        a.dim,
        a.layers,
        train_set.len(),
        val_set.len()
    );
    let progress = |p: &CurvePoint| {
        eprintln!(
            "seed {} step {}: train {:.4} val {:.4}",
            p.seed, p.step, p.train_loss, p.val_loss
        )
    };
    let report = train(&cfg, &domain.vocab, &train_set, &val_set, &progress)?;
    for s in &report.seeds {
        let status = s.aborted.as_deref().unwrap_or("ok");
        println!(
            "seed {}: best val loss {:.4} at step {} ({} steps, {status})",
            s.seed, s.best_val_loss, s.best_step, s.steps
        );
    }
    println!("selected seed {}", report.selected_seed);

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    checkpoint::save(&report.model, &a.out)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("metrics.csv"));
    let mut out = create(&metrics)?;
    report.write_metrics_csv(&mut out)?;
    out.flush()?;
    rec.finish(&beside(&a.out), a.seeds.clone(), &[a.out.clone(), metrics])?;
    Ok(())
}

fn eval(a: &EvalArgs) -> CmdResult {
    let rec = Recorder::new("eval", a);
    let (_, problems) = load(&a.data)?;
    let vf: Box<dyn ValueFunction> = match &a.checkpoint {
        Some(path) => Box::new(checkpoint::load(path)?),
        None => {
            let mut table = OracleValues::new();
            for s in label(&problems, a.oracle_cap)? {
                table.add_space(&s.space);
            }
            Box::new(table)
        }
    };
    let opts = PolicyOptions {
        step_cap: a.step_cap,
        tie_seed: a.tie_seed,
        oracle_cap: Some(a.oracle_cap),
    };
    let (summary, records) = evaluate_suite(&problems, vf.as_ref(), opts);
    let mut out = create(&a.out)?;
    write_records_csv(&mut out, &records)?;
    out.flush()?;
    println!("{summary}");
    let seeds = a.tie_seed.into_iter().collect();
    rec.finish(&beside(&a.out), seeds, &[a.out.clone()])?;
    Ok(())
}

fn read_graph(path: &Path) -> anyhow::Result<Graph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Graph::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn wl(a: &WlArgs) -> CmdResult {
    let rec = Recorder::new("wl", a);
    let algo = Algo::from_tag(&a.algo).map_err(|e| usage(e.to_string()))?;
    let (ga, gb) = (read_graph(&a.a)?, read_graph(&a.b)?);
    let cmp = distinguishes(&ga, &gb, algo)?;
    let (ra, rb) = (coloring(algo, &ga)?.rounds, coloring(algo, &gb)?.rounds);
    println!("{}", if cmp.distinguished { "DISTINGUISHED" } else { "NOT-DISTINGUISHED" });
    println!("rounds: joint {} a {ra} b {rb}", cmp.rounds);
    if let Some(path) = &a.manifest {
        rec.finish(path, Vec::new(), &[])?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> CmdResult {
    let rec = Recorder::new("gradcheck", a);
    let dk = domain_kind(&a.domain)?;
    if a.dim == 0 || a.layers == 0 || a.samples == 0 || !(a.step > 0.0) {
        return Err(usage("--dim, --layers, --samples and --step must be positive"));
    }
    let spec = GeneratorSpec {
        domain: dk,
        n: a.n,
        m: a.m,
        targets: None,
        density: a.density,
        seed: a.seed,
    };
    let domain = Arc::new(parse_domain(dk.domain_pddl())?);
    let problem = parse_problem(&spec.instance(0, "gradcheck")?, &domain)?;
    let space = expand(&problem, DEFAULT_STATE_CAP)?;
    let labeled: Vec<(usize, u32)> = optimal_values(&space)
        .into_iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let &(index, vstar) = labeled.choose(&mut rng).expect("generated instances are solvable");
    let state = &space.states[index];

    let kind = model_kind(&a.model);
    let model = Model::new(kind, RgnnConfig::new(kind, a.dim, a.layers), &domain.vocab, a.seed)?;
    let input = model.input(state)?;
    let target = vstar as f64;
    model.loss_and_grad(model.params(), &[&input], &[target])?;
    let f = |p: &ParameterSet| {
        model
            .loss_and_grad(p, &[&input], &[target])
            .expect("evaluated once above")
    };
    let report = grad_check(f, model.params(), a.step, a.samples, a.seed);
    println!(
        "{kind} on a {} state with V* = {vstar}: max relative error {:.3e} over {} coordinates",
        dk.tag(),
        report.max_rel_error,
        report.checked
    );
    if let Some((name, j)) = &report.worst {
        println!("worst coordinate: {name}[{j}]");
    }
    if let Some(path) = &a.manifest {
        rec.finish(path, vec![a.seed], &[])?;
    }
    if report.max_rel_error <= a.tol {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL (tolerance {:.1e})", a.tol);
        Err(Failure::Domain(anyhow::anyhow!("gradient check failed")))
    }
}
