use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde_json::json;

use support_adapt::adapter::{load_adapter, save_adapter, AdapterParams};
use support_adapt::harness::{
    self, synthetic, time_variant, DatasetEntry, ExperimentSpec, LoadedDataset, Shots,
};
use support_adapt::predictor::{Predictor, PredictorConfig};
use support_adapt::store::{save_class_weights, save_dataset, Split};
use support_adapt::support::{build_full_support, build_support, SupportSet};
use support_adapt::{
    load_class_weights, load_dataset, train_adapter, zero_shot_predict, Error, Execution,
    TrainConfig,
};

use super::args::*;

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or flag combinations (exit 1).
    Usage(String),
    /// Unreadable, invalid or incompatible data (exit 2).
    Data(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::VariantConstraintViolated { .. }
            | Error::InvalidParameter(_)
            | Error::EmptyGrid
            | Error::MissingAdapter { .. }
            | Error::MissingSupport { .. } => Failure::Usage(e.to_string()),
            other => Failure::Data(other),
        }
    }
}

type CmdResult = Result<(), Failure>;

pub fn run(command: Command, matches: &ArgMatches) -> CmdResult {
    let sub = matches
        .subcommand()
        .map(|(_, m)| m)
        .expect("clap requires a subcommand");
    match command {
        Command::Validate(a) => validate(a),
        Command::ZeroShot(a) => zero_shot(a),
        Command::Train(a) => train(a, sub),
        Command::Eval(a) => eval(a, sub),
        Command::Sweep(a) => sweep(a, sub),
        Command::Fewshot(a) => fewshot(a, sub),
        Command::Joint(a) => joint(a, sub),
        Command::Bench(a) => bench(a, sub),
        Command::MakeSynthetic(a) => make_synthetic(a),
    }
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Refuses to write over any input file.
fn check_output(out: &Path, inputs: &[&Path]) -> CmdResult {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let target = canon(out);
    if inputs.iter().any(|p| canon(p) == target) {
        return Err(Failure::Usage(format!(
            "output {} would overwrite an input file",
            out.display()
        )));
    }
    Ok(())
}

fn write_json(out: &Path, value: &serde_json::Value) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    std::fs::write(out, text + "\n").map_err(|e| Failure::Data(Error::io(out, e)))
}

fn validate(a: ValidateArgs) -> CmdResult {
    let ds = load_dataset(&a.file)?;
    println!("file: {}", a.file.display());
    println!("dim: {}", ds.dim());
    println!("classes: {}", ds.num_classes());
    println!("records: {}", ds.len());
    for (split, n) in Split::ALL.iter().zip(ds.split_counts()) {
        println!("{split}: {n}");
    }
    if let Some(w) = a.weights {
        load_class_weights(&w)?.check_compatible(&ds)?;
        println!("weights: {} compatible", w.display());
    }
    Ok(())
}

fn load_pair(d: &DataArgs) -> Result<LoadedDataset, Failure> {
    let entry = DatasetEntry {
        name: None,
        path: d.data.clone(),
        weights: d.weights.clone(),
    };
    Ok(LoadedDataset::new(
        entry.display_name(),
        load_dataset(&d.data)?,
        load_class_weights(&d.weights)?,
    )?)
}

fn zero_shot(a: ZeroShotArgs) -> CmdResult {
    if let Some(out) = &a.out {
        check_output(out, &[&a.data.data, &a.data.weights])?;
    }
    let ds = load_pair(&a.data)?;
    let acc = zero_shot_predict(&ds.data.split(a.split), &ds.weights, a.scale)?;
    println!("accuracy: {acc:.4}");
    if let Some(out) = &a.out {
        write_json(out, &json!({"variant": "zs-clap", "split": a.split, "accuracy": acc}))?;
    }
    Ok(())
}

/// Predictor config from the head flags. An explicit `--alpha` that
/// contradicts a pinned variant is an error rather than silently ignored.
fn predictor_config(h: &HeadArgs, m: &ArgMatches) -> Result<PredictorConfig, Failure> {
    let mut cfg = PredictorConfig::new(h.variant)
        .with_beta(h.beta)
        .with_scale(h.scale);
    if explicit(m, "alpha") || h.variant.layout().forced_alpha.is_none() {
        cfg = cfg.with_alpha(h.alpha);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(o: &OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: o.lr,
        batch_size: o.batch_size,
        epochs: o.epochs,
        weight_decay: o.weight_decay,
        seed,
        hidden: o.hidden,
        residual_ratio: o.residual,
        ..TrainConfig::default()
    }
}

fn sample(ds: &LoadedDataset, s: &SupportArgs) -> Result<SupportSet, Failure> {
    let train = ds.data.split(Split::Train);
    Ok(match s.shots {
        Shots::K(k) => build_support(&train, k, s.seed)?,
        Shots::Full => build_full_support(&train, s.seed)?,
    })
}

fn train(a: TrainArgs, m: &ArgMatches) -> CmdResult {
    check_output(&a.out, &[&a.data.data, &a.data.weights])?;
    let cfg = predictor_config(&a.head, m)?;
    let tc = train_config(&a.optim, a.support.seed);
    tc.validate()?;
    let ds = load_pair(&a.data)?;
    let support = sample(&ds, &a.support)?;
    let trained = train_adapter(&support, &ds.weights, &tc, &cfg)?;
    save_adapter(&trained.params, &a.out)?;
    let first = trained.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = trained.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} adapter on {} support rows: loss {first:.4} -> {last:.4}, {} params",
        cfg.variant,
        support.len(),
        trained.params.param_count()
    );
    println!("saved {}", a.out.display());
    Ok(())
}

/// Loaded or freshly trained adapter, when the variant has one.
fn obtain_adapter(
    cfg: &PredictorConfig,
    adapter: Option<&PathBuf>,
    optim: &OptimArgs,
    seed: u64,
    support: &SupportSet,
    ds: &LoadedDataset,
) -> Result<Option<AdapterParams>, Failure> {
    if !cfg.variant.needs_adapter() {
        return Ok(None);
    }
    match adapter {
        Some(path) => Ok(Some(load_adapter(path)?)),
        None => {
            let tc = train_config(optim, seed);
            Ok(Some(train_adapter(support, &ds.weights, &tc, cfg)?.params))
        }
    }
}

fn eval(a: EvalArgs, m: &ArgMatches) -> CmdResult {
    if let Some(out) = &a.out {
        let mut inputs = vec![a.data.data.as_path(), a.data.weights.as_path()];
        inputs.extend(a.adapter.as_deref());
        check_output(out, &inputs)?;
    }
    let cfg = predictor_config(&a.head, m)?;
    let ds = load_pair(&a.data)?;
    let needs_support = cfg.variant.needs_support() || cfg.variant.needs_adapter();
    let support = if needs_support {
        Some(sample(&ds, &a.support)?)
    } else {
        None
    };
    let adapter = match &support {
        Some(s) => obtain_adapter(&cfg, a.adapter.as_ref(), &a.optim, a.support.seed, s, &ds)?,
        None => None,
    };
    let predictor = Predictor::new(cfg, adapter.as_ref(), support.as_ref(), &ds.weights)?;
    let acc = predictor.accuracy(&ds.data.split(a.split))?;
    println!("variant: {}", cfg.variant);
    println!("alpha: {} beta: {}", cfg.alpha, cfg.beta);
    println!("accuracy: {acc:.4}");
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({
                "variant": cfg.variant, "alpha": cfg.alpha, "beta": cfg.beta,
                "scale": cfg.scale, "split": a.split, "accuracy": acc,
            }),
        )?;
    }
    Ok(())
}

fn sweep(a: SweepArgs, m: &ArgMatches) -> CmdResult {
    if let Some(out) = &a.out {
        check_output(out, &[&a.data.data, &a.data.weights])?;
    }
    let cfg = predictor_config(&a.head, m)?;
    let ds = load_pair(&a.data)?;
    let support = sample(&ds, &a.support)?;
    let adapter = obtain_adapter(&cfg, None, &a.optim, a.support.seed, &support, &ds)?;
    let val = ds.data.split(Split::Val);

    let layout = cfg.variant.layout();
    let alphas = match layout.forced_alpha {
        Some(f) => vec![f],
        None => a.grid.alpha_grid.clone(),
    };
    let betas = if layout.uses_support() {
        a.grid.beta_grid.clone()
    } else {
        a.grid.beta_grid.iter().copied().take(1).collect()
    };
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::EmptyGrid.into());
    }
    let points: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&x| betas.iter().map(move |&y| (x, y)))
        .collect();
    let accs = Execution::default().try_map(&points, |&(alpha, beta)| {
        let c = cfg.with_alpha(alpha).with_beta(beta);
        Predictor::new(c, adapter.as_ref(), Some(&support), &ds.weights)?
            .accuracy_with(Execution::Sequential, &val)
    })?;
    let best = harness_best(&points, &accs);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "beta", "val_acc"]).expect("in-memory CSV");
    for (&(alpha, beta), acc) in points.iter().zip(&accs) {
        w.write_record([alpha.to_string(), beta.to_string(), acc.to_string()])
            .expect("in-memory CSV");
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8");
    print!("{text}");
    let (ba, bb) = points[best];
    println!("best: alpha {ba} beta {bb} val_acc {:.4}", accs[best]);
    if let Some(out) = &a.out {
        std::fs::write(out, text).map_err(|e| Failure::Data(Error::io(out, e)))?;
    }
    Ok(())
}

/// Highest accuracy; ties keep the earliest point (smaller α, then β).
fn harness_best(points: &[(f64, f64)], accs: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[i].1.total_cmp(&points[j].1))
    });
    let mut best = order[0];
    for &i in &order[1..] {
        if accs[i] > accs[best] {
            best = i;
        }
    }
    best
}

/// Config file (if any) overridden by every flag given on the command line.
fn experiment_spec(a: &ExperimentArgs, m: &ArgMatches) -> Result<ExperimentSpec, Failure> {
    let mut spec = match &a.config {
        Some(p) => ExperimentSpec::from_json_file(p)?,
        None => ExperimentSpec::default(),
    };
    if explicit(m, "data") || explicit(m, "weights") {
        if a.data.len() != a.weights.len() {
            return Err(Failure::Usage(format!(
                "{} --data files but {} --weights files",
                a.data.len(),
                a.weights.len()
            )));
        }
        spec.datasets = a
            .data
            .iter()
            .zip(&a.weights)
            .map(|(d, w)| DatasetEntry {
                name: None,
                path: d.clone(),
                weights: w.clone(),
            })
            .collect();
    }
    macro_rules! take {
        ($id:literal, $field:expr, $value:expr) => {
            if explicit(m, $id) {
                $field = $value;
            }
        };
    }
    take!("variant", spec.variants, a.variant.clone());
    take!("shots", spec.shots, a.shots.clone());
    take!("seed", spec.seeds, a.seed.clone());
    take!("alpha_grid", spec.alpha_grid, a.grid.alpha_grid.clone());
    take!("beta_grid", spec.beta_grid, a.grid.beta_grid.clone());
    take!("alpha", spec.alpha, a.alpha);
    take!("beta", spec.beta, a.beta);
    take!("scale", spec.scale, a.scale);
    take!("hidden", spec.train.hidden, a.optim.hidden);
    take!("residual", spec.train.residual_ratio, a.optim.residual);
    take!("lr", spec.train.lr, a.optim.lr);
    take!("epochs", spec.train.epochs, a.optim.epochs);
    take!("batch_size", spec.train.batch_size, a.optim.batch_size);
    take!("weight_decay", spec.train.weight_decay, a.optim.weight_decay);
    take!("out", spec.output, a.out.clone());
    spec.validate_plan()?;
    if spec.datasets.is_empty() {
        return Err(Failure::Usage(
            "no datasets: pass --data/--weights or a --config listing datasets".into(),
        ));
    }
    if let Some(out) = &spec.output {
        let mut inputs: Vec<&Path> = Vec::new();
        for d in &spec.datasets {
            inputs.push(&d.path);
            inputs.push(&d.weights);
        }
        inputs.extend(a.config.as_deref());
        check_output(out, &inputs)?;
    }
    Ok(spec)
}

fn emit(table: &harness::ResultTable, spec: &ExperimentSpec) -> CmdResult {
    print!("{}", table.to_markdown());
    if let Some(out) = &spec.output {
        table.save_csv(out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn fewshot(a: ExperimentArgs, m: &ArgMatches) -> CmdResult {
    let spec = experiment_spec(&a, m)?;
    let table = harness::run_experiment(&spec)?;
    emit(&table, &spec)
}

fn joint(a: ExperimentArgs, m: &ArgMatches) -> CmdResult {
    let mut spec = experiment_spec(&a, m)?;
    if !explicit(m, "variant") && a.config.is_none() {
        spec.variants = vec![support_adapt::Variant::AdapterOnly];
    }
    let data = spec.load_datasets()?;
    let table = harness::run_joint_vs_independent(&spec, &data)?;
    emit(&table, &spec)
}

fn bench(a: ExperimentArgs, m: &ArgMatches) -> CmdResult {
    let spec = experiment_spec(&a, m)?;
    let data = spec.load_datasets()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "variant", "shots", "train_s", "infer_ms", "params"])
        .expect("in-memory CSV");
    println!("| dataset | variant | shots | train s | infer ms/query | params |");
    println!("|---|---|---|---|---|---|");
    for ds in &data {
        for &variant in &spec.variants {
            for &shots in &spec.shots {
                let t = time_variant(&spec, ds, variant, shots)?;
                println!(
                    "| {} | {variant} | {shots} | {:.4} | {:.5} | {} |",
                    ds.name, t.train_s, t.infer_ms, t.params
                );
                w.write_record([
                    ds.name.clone(),
                    variant.to_string(),
                    shots.to_string(),
                    t.train_s.to_string(),
                    t.infer_ms.to_string(),
                    t.params.to_string(),
                ])
                .expect("in-memory CSV");
            }
        }
    }
    println!("\nmedians over {} repetitions", harness::TIMING_REPETITIONS);
    if let Some(out) = &spec.output {
        let bytes = w.into_inner().expect("in-memory CSV");
        std::fs::write(out, bytes).map_err(|e| Failure::Data(Error::io(out, e)))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn make_synthetic(a: SyntheticArgs) -> CmdResult {
    if a.out == a.weights_out {
        return Err(Failure::Usage("--out and --weights-out must differ".into()));
    }
    let (ds, w) = synthetic::make_shift_benchmark(
        a.classes,
        a.dim,
        a.shots_available,
        a.shift,
        a.noise,
        a.seed,
    )?;
    save_dataset(&ds, &a.out)?;
    save_class_weights(&w, &a.weights_out)?;
    let [tr, va, te] = ds.split_counts();
    println!(
        "wrote {} ({} records: train {tr}, val {va}, test {te}) and {}",
        a.out.display(),
        ds.len(),
        a.weights_out.display()
    );
    Ok(())
}
