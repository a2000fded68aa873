//! The `srnn` command line.

use std::ffi::OsString;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{profile_csv, ranked_alpha_profile, state_trace, token_prototypes};
use crate::autodiff::check_gradients_with;
use crate::automata::{equivalent, minimize, to_dot};
use crate::cells::CellKind;
use crate::checkpoint::Checkpoint;
use crate::error::Error;
use crate::extract::extract_dfa_parallel;
use crate::langs::{
    bp_alphabet, gen_bp, gen_palindrome, gen_tomita, read_dataset, tomita_dfa, write_dataset,
    BpSpec, CopySpec, Dataset, PalindromeSpec, TomitaSpec,
};
use crate::model::{Architecture, HeadKind, SrRnn};
use crate::state_reg::Similarity;
use crate::train::{evaluate, train_with, CapMetric, Monitor, Phase, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "srnn",
    version,
    about = "State-regularized RNNs: generate data, train, extract and inspect automata"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/valid/test dataset files.
    Gen(GenArgs),
    /// Train a model and write its checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Extract, minimize and optionally verify a DFA.
    Extract(ExtractArgs),
    /// Export token prototypes, ranked profiles and state traces.
    Inspect(InspectArgs),
    /// Compare analytic and numeric gradients on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tomita,
    Bp,
    Palindrome,
    Copy,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// Tomita grammar number (1-7).
    #[arg(long)]
    pub grammar: Option<u8>,
    /// Small balanced-parentheses recipe (the only one provided).
    #[arg(long)]
    pub small: bool,
    /// Copy task lag T.
    #[arg(long, default_value_t = 100)]
    pub lag: usize,
    /// Copy task span n.
    #[arg(long, default_value_t = 10)]
    pub span: usize,
    /// Training-set size (palindrome, copy).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, env = "SRNN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Accepted for interface symmetry; splits are generated in sequence
    /// because later splits exclude strings of earlier ones.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CapArg {
    Length,
    Depth,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Optional test split evaluated with the restored model.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "gru")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    /// Embedding size (defaults to the hidden size).
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub centroids: usize,
    /// Train the plain recurrent baseline without centroids.
    #[arg(long)]
    pub no_centroids: bool,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value = "dot")]
    pub similarity: Similarity,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    /// Momentum on the preconditioned step (0 disables it).
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Defaults to 32, or 128 for per-step targets.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum, default_value = "length")]
    pub cap_metric: CapArg,
    /// Curriculum phase `CAP[:EPOCHS]` (`all` for no cap); repeatable.
    #[arg(long = "phase")]
    pub phases: Vec<String>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Stop once the training error reaches zero and keep the best
    /// training-error snapshot.
    #[arg(long)]
    pub until_zero_train_error: bool,
    #[arg(long, env = "SRNN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub quiet: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trace datasets (typically train and valid); repeatable.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Tomita grammar to verify against.
    #[arg(long)]
    pub grammar: Option<u8>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub top: usize,
    /// Sequence to trace, compact (`0110`) or space-separated.
    #[arg(long)]
    pub trace: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "gru")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 6)]
    pub d: usize,
    #[arg(long, default_value = "dot")]
    pub similarity: Similarity,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, env = "SRNN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one analytic gradient entry (negative control).
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn gate(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } | Error::NonFinite { .. } | Error::NonDeterministic { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Extract(a) => cmd_extract(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn prepare_out(dir: &Path) -> CliResult {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_manifest(dir: &Path, command: &str, args: &impl Serialize, extra: Value) -> CliResult {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "result": extra,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    write_file(&dir.join("manifest.json"), &(text + "\n"))
}

fn load(path: &Path) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(Failure::usage(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    Ok(read_dataset(path, None)?)
}

fn load_model(path: &Path) -> CliResult<(SrRnn, Checkpoint)> {
    if !path.exists() {
        return Err(Failure::usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let cp = Checkpoint::load(path)?;
    Ok((cp.to_model()?, cp))
}

fn split_summary(name: &str, file: &str, ds: &Dataset, seed: u64) -> Value {
    json!({"split": name, "file": file, "count": ds.len(), "positives": ds.positives(), "seed": seed})
}

fn cmd_gen(a: &GenArgs) -> CliResult {
    prepare_out(&a.out)?;
    let s = a.seed;
    let splits: Vec<(&str, Dataset, u64)> = match a.task {
        Task::Tomita => {
            let g = a
                .grammar
                .ok_or_else(|| Failure::usage("--grammar is required for tomita"))?;
            let train = gen_tomita(&TomitaSpec::train(g, s), &Default::default())?;
            let valid = gen_tomita(&TomitaSpec::valid(g, s + 1), &train.token_set())?;
            vec![("train", train, s), ("valid", valid, s + 1)]
        }
        Task::Bp => {
            let train = gen_bp(&BpSpec::small_train(s), &Default::default())?;
            let valid = gen_bp(&BpSpec::small_valid(s + 1), &train.token_set())?;
            let seen = train.union(&valid)?.token_set();
            let test = gen_bp(&BpSpec::small_test(s + 2), &seen)?;
            vec![
                ("train", train, s),
                ("valid", valid, s + 1),
                ("test", test, s + 2),
            ]
        }
        Task::Palindrome => {
            let n = a.count.unwrap_or(1000);
            let train = gen_palindrome(&PalindromeSpec::train(n, s), &Default::default())?;
            let valid_spec = PalindromeSpec::train((n / 5).max(1), s + 1);
            let valid = gen_palindrome(&valid_spec, &train.token_set())?;
            let test_spec = PalindromeSpec {
                half_len: (26, 50),
                ..PalindromeSpec::train((n / 5).max(1), s + 2)
            };
            let test = gen_palindrome(&test_spec, &Default::default())?;
            vec![
                ("train", train, s),
                ("valid", valid, s + 1),
                ("test", test, s + 2),
            ]
        }
        Task::Copy => {
            let spec = |count, seed| CopySpec {
                lag: a.lag,
                span: a.span,
                count,
                seed,
            };
            let n = a.count.unwrap_or(20_000);
            vec![
                ("train", spec(n, s).generate()?, s),
                ("valid", spec(1000, s + 1).generate()?, s + 1),
                ("test", spec(1000, s + 2).generate()?, s + 2),
            ]
        }
    };
    let mut summary = Vec::new();
    for (name, ds, seed) in &splits {
        let file = format!("{name}.txt");
        write_dataset(a.out.join(&file), ds)?;
        summary.push(split_summary(name, &file, ds, *seed));
        println!(
            "{name}: {} sequences ({} positive) -> {}",
            ds.len(),
            ds.positives(),
            a.out.join(&file).display()
        );
    }
    write_manifest(&a.out, "gen", a, json!({ "splits": summary }))
}

fn parse_phases(specs: &[String]) -> CliResult<Vec<Phase>> {
    specs
        .iter()
        .map(|s| {
            let (cap, epochs) = match s.split_once(':') {
                Some((c, e)) => (c, Some(e)),
                None => (s.as_str(), None),
            };
            let cap = match cap {
                "all" => None,
                c => Some(
                    c.parse()
                        .map_err(|_| Failure::usage(format!("bad phase cap in {s:?}")))?,
                ),
            };
            let epochs = epochs
                .map(|e| {
                    e.parse()
                        .map_err(|_| Failure::usage(format!("bad phase epochs in {s:?}")))
                })
                .transpose()?;
            Ok(Phase { cap, epochs })
        })
        .collect()
}

fn cap_metric(arg: CapArg, alphabet: &[String]) -> CliResult<CapMetric> {
    match arg {
        CapArg::Length => Ok(CapMetric::Length),
        CapArg::Depth => {
            let bp = bp_alphabet();
            let find = |sym: &str| alphabet.iter().position(|a| a == sym);
            match (find(&bp[0]), find(&bp[1])) {
                (Some(open), Some(close)) => Ok(CapMetric::Depth { open, close }),
                _ => Err(Failure::usage(
                    "depth caps need `(` and `)` in the alphabet",
                )),
            }
        }
    }
}

fn per_step(ds: &Dataset) -> bool {
    ds.sequences.first().is_some_and(|s| s.steps().is_some())
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let train_set = load(&a.train)?;
    let valid_set = load(&a.valid)?;
    let test_set = a.test.as_deref().map(load).transpose()?;
    if train_set.alphabet != valid_set.alphabet {
        return Err(Failure::usage("train and valid alphabets differ"));
    }
    prepare_out(&a.out)?;
    let steps = per_step(&train_set);
    let arch = Architecture {
        embed: a.embed.unwrap_or(a.hidden),
        tau: a.tau,
        similarity: a.similarity,
        head: if steps {
            HeadKind::PerStep
        } else {
            HeadKind::Classify
        },
        ..Architecture::classifier(
            a.cell,
            a.hidden,
            (!a.no_centroids).then_some(a.centroids),
            &train_set.alphabet,
        )?
    };
    let config = TrainConfig {
        lr: a.lr,
        rho: a.rho,
        momentum: a.momentum,
        batch_size: a.batch.unwrap_or(if steps { 128 } else { 32 }),
        max_epochs: a.epochs,
        patience: a.patience,
        phases: parse_phases(&a.phases)?,
        cap_metric: cap_metric(a.cap_metric, &train_set.alphabet)?,
        monitor: if a.until_zero_train_error {
            Monitor::TrainThenValid
        } else if steps {
            Monitor::ValidLoss
        } else {
            Monitor::ValidError
        },
        clip: a.clip,
        eval_train: !steps,
        stop_at_zero_train_error: a.until_zero_train_error,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    let mut model = SrRnn::new(arch, a.seed)?;
    let quiet = a.quiet;
    let history = train_with(&config, &mut model, &train_set, &valid_set, |r, _| {
        if !quiet {
            eprintln!(
                "epoch {:>4} phase {} train_loss {:.6} train_err {:.4} valid_loss {:.6} valid_err {:.4}",
                r.epoch, r.phase, r.train_loss, r.train_err, r.valid_loss, r.valid_err
            );
        }
        ControlFlow::Continue(())
    })?;
    let best = *history.best().expect("non-empty history");
    let echo = json!({ "train": config, "args": a });
    Checkpoint::from_model(&model, echo, a.seed).save(&a.out.join("model.json"))?;
    write_file(&a.out.join("history.csv"), &history.to_csv())?;
    let test = test_set.map(|t| evaluate(&model, &t)).transpose()?;
    let mut result = json!({
        "epochs_run": history.epochs.len(),
        "best_epoch": best.epoch,
        "train_err": best.train_err,
        "valid_err": best.valid_err,
        "valid_loss": best.valid_loss,
        "seed": a.seed,
        "outputs": ["model.json", "history.csv"],
    });
    println!(
        "best epoch {} of {}: train_err {} valid_err {} valid_loss {}",
        best.epoch,
        history.epochs.len(),
        best.train_err,
        best.valid_err,
        best.valid_loss
    );
    if let Some(t) = test {
        result["test_err"] = json!(t.error);
        result["test_loss"] = json!(t.loss);
        println!("test_err {} test_loss {}", t.error, t.loss);
    }
    write_manifest(&a.out, "train", a, result)
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let (model, _) = load_model(&a.model)?;
    let ds = load(&a.data)?;
    let r = evaluate(&model, &ds)?;
    println!("error {} loss {}", r.error, r.loss);
    Ok(())
}

fn cmd_extract(a: &ExtractArgs) -> CliResult {
    let (model, _) = load_model(&a.model)?;
    let mut data = load(&a.data[0])?;
    for p in &a.data[1..] {
        data = data.union(&load(p)?)?;
    }
    let truth = a.grammar.map(tomita_dfa).transpose()?;
    prepare_out(&a.out)?;
    let ex = extract_dfa_parallel(&model, &data, a.jobs)?;
    let min = minimize(&ex.complete.dfa);
    write_file(
        &a.out.join("extracted.dot"),
        &to_dot(&ex.raw.dfa, Some(&ex.raw.labels())),
    )?;
    write_file(&a.out.join("minimized.dot"), &to_dot(&min, None))?;
    write_file(
        &a.out.join("counts.csv"),
        &ex.counts.to_csv(model.vocabulary().alphabet()),
    )?;
    let mut report = json!({
        "states_extracted": ex.raw.dfa.num_states(),
        "states_min": min.num_states(),
        "approximate": ex.approximate,
        "start_centroid": ex.counts.start,
    });
    println!(
        "extracted states {} (minimized {})",
        ex.raw.dfa.num_states(),
        min.num_states()
    );
    if ex.approximate {
        println!("note: cells with memory make the extracted automaton approximate");
    }
    let mut verdict = true;
    if let Some(truth) = truth {
        let res = equivalent(&min, &truth)?;
        let truth_min = minimize(&truth);
        verdict = res.equivalent;
        report["equivalent"] = json!(res.equivalent);
        report["counterexample"] = json!(res.counterexample.as_ref().map(|c| c.concat()));
        report["truth_states_min"] = json!(truth_min.num_states());
        println!(
            "equivalent: {}, states(min)={}",
            res.equivalent,
            min.num_states()
        );
        if let Some(c) = &res.counterexample {
            println!("counterexample: {:?}", c.concat());
        }
    }
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_file(&a.out.join("report.json"), &(text + "\n"))?;
    write_manifest(&a.out, "extract", a, report)?;
    if verdict {
        Ok(())
    } else {
        Err(Failure::gate(
            "extracted automaton is not equivalent to the ground truth",
        ))
    }
}

fn cmd_inspect(a: &InspectArgs) -> CliResult {
    let (model, _) = load_model(&a.model)?;
    let ds = load(&a.data)?;
    prepare_out(&a.out)?;
    let table = token_prototypes(&model, &ds, a.top)?;
    write_file(&a.out.join("prototypes.csv"), &table.to_csv())?;
    let profile = ranked_alpha_profile(&model, &ds)?;
    write_file(&a.out.join("ranked_profile.csv"), &profile_csv(&profile))?;
    let mut outputs = vec!["prototypes.csv", "ranked_profile.csv"];
    if let Some(seq) = &a.trace {
        let tokens = Dataset::empty(model.vocabulary().alphabet().to_vec()).encode(seq)?;
        write_file(
            &a.out.join("trace.csv"),
            &state_trace(&model, &tokens)?.to_csv(),
        )?;
        outputs.push("trace.csv");
    }
    println!("ranked profile: {profile:?}");
    write_manifest(
        &a.out,
        "inspect",
        a,
        json!({ "outputs": outputs, "profile": profile }),
    )
}

/// Largest relative gradient error of the full pipeline on a small random
/// classifier and a fixed 3-token sequence.
pub fn pipeline_gradcheck(
    cell: CellKind,
    k: usize,
    d: usize,
    similarity: Similarity,
    eps: f64,
    seed: u64,
    inject_bug: bool,
) -> crate::Result<f64> {
    let alphabet = vec!["0".to_string(), "1".to_string()];
    let arch = Architecture {
        similarity,
        ..Architecture::classifier(cell, d, Some(k), &alphabet)?
    };
    let model = SrRnn::new(arch, seed)?;
    let seqs: Vec<&[usize]> = vec![&[1, 0, 1]];
    let report = check_gradients_with(
        model.params(),
        eps,
        |tape| {
            let (logits, _) = model.classify_on_tape(tape, &seqs)?;
            tape.cross_entropy(logits, &[1])
        },
        |grads| {
            if inject_bug {
                if let Some(g) = grads.per_param.iter_mut().flatten().next() {
                    g[0] += 0.5;
                }
            }
        },
    )?;
    Ok(report.max_rel_error)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult {
    let err = pipeline_gradcheck(a.cell, a.k, a.d, a.similarity, a.eps, a.seed, a.inject_bug)?;
    println!("max relative error {err:e} (tolerance {:e})", a.tol);
    if err < a.tol {
        Ok(())
    } else {
        Err(Failure::gate(format!(
            "gradient check failed: {err:e} >= {:e}",
            a.tol
        )))
    }
}
