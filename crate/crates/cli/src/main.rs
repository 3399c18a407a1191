use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use proofstar::annotate::{annotate_corpus, Pair};
use proofstar::config::{load_config, Config, GeneratorKind, TrainerKind};
use proofstar::eval::{self, AttemptLog, EvalHeader, EvalRow};
use proofstar::generator::{CountPolicy, Generator};
use proofstar::model::{
    read_dataset, read_jsonl, read_problem_set, write_dataset, write_trajectories, Provenance,
    Tactic, Theorem,
};
use proofstar::prover::{EnvFactory, ProverEnv, RuleSet, TacticOutcome, ToyFactory};
use proofstar::search::{pass_at_k, search_all, Method, SearchResult};
use proofstar::star::{
    run_iterations, CommandTrainer, CountPolicyTrainer, Evaluator, IterationConfig, StarError,
    Trainer,
};
use proofstar::store::{self, RunDir};

#[derive(Parser)]
#[command(
    name = "proofstar",
    version,
    about = "Thought-augmented proof search, annotation and expert iteration"
)]
struct Cli {
    /// JSON config merged over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Root of the run store.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate (state, tactic) pairs with oracle rationales.
    Annotate {
        /// JSONL of {state, tactic}.
        #[arg(long)]
        pairs: PathBuf,
        /// Resumable ledger; defaults to one inside the run directory.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Best-first search with the search budget.
    Search(Target),
    /// Sampling search with the search budget and S = 1.
    Sample(Target),
    /// Expert iteration: collect, assemble, train.
    Star {
        #[arg(long)]
        problems: PathBuf,
        /// Annotated seed dataset; overrides star.d_t.
        #[arg(long)]
        d_t: Option<PathBuf>,
        /// Overrides star.iterations.
        #[arg(long)]
        iterations: Option<u32>,
        /// Evaluate each trained policy on these problems with the eval budget.
        #[arg(long)]
        eval_problems: Option<PathBuf>,
    },
    /// Evaluate on a problem set and write reports.
    Eval {
        #[arg(long)]
        problems: PathBuf,
        #[arg(long, value_enum, default_value_t = Decoding::Sampling)]
        decoding: Decoding,
    },
    /// Re-render the reports of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Replay tactics on the toy prover, printing every state.
    Toyprove {
        statement: String,
        /// Tactics to apply; read one per line from stdin when absent.
        tactics: Vec<String>,
        /// Rule file; defaults to prover.rules.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Target {
    #[arg(long, conflicts_with = "theorem", required_unless_present = "theorem")]
    problems: Option<PathBuf>,
    /// A single statement to prove.
    #[arg(long)]
    theorem: Option<String>,
    #[arg(long, default_value = "theorem", requires = "theorem")]
    id: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decoding {
    Search,
    Sampling,
}

impl From<Decoding> for Method {
    fn from(d: Decoding) -> Self {
        match d {
            Decoding::Search => Method::BestFirst,
            Decoding::Sampling => Method::Sampling,
        }
    }
}

/// Failures split by exit code: bad configuration or arguments exit 2,
/// everything that goes wrong while running exits 1.
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait UsageContext<T> {
    fn usage(self) -> Outcome<T>;
    fn run(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn run(self) -> Outcome<T> {
        self.map_err(|e| Failure::Run(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(cli: &Cli) -> Outcome<Config> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).usage()?,
        None => Config {
            base_dir: PathBuf::from("."),
            ..Config::default()
        },
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Outcome<()> {
    let cfg = load(&cli)?;
    match &cli.command {
        Command::Annotate { pairs, ledger } => annotate(&cli, &cfg, pairs, ledger.as_deref()),
        Command::Search(t) => search(&cli, &cfg, t, Method::BestFirst),
        Command::Sample(t) => search(&cli, &cfg, t, Method::Sampling),
        Command::Star {
            problems,
            d_t,
            iterations,
            eval_problems,
        } => star(
            &cli,
            &cfg,
            problems,
            d_t.as_deref(),
            *iterations,
            eval_problems.as_deref(),
        ),
        Command::Eval { problems, decoding } => run_eval(&cli, &cfg, problems, (*decoding).into()),
        Command::Report { run } => report(run),
        Command::Toyprove {
            statement,
            tactics,
            rules,
        } => toyprove(&cfg, statement, tactics, rules.as_deref()),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Annotate { .. } => "annotate",
        Command::Search(_) => "search",
        Command::Sample(_) => "sample",
        Command::Star { .. } => "star",
        Command::Eval { .. } => "eval",
        Command::Report { .. } => "report",
        Command::Toyprove { .. } => "toyprove",
    }
}

/// Runs `body` in a fresh run directory. The manifest is written either
/// way; a failed run records its error as the summary.
fn in_run(
    cli: &Cli,
    cfg: &Config,
    body: impl FnOnce(&RunDir) -> Outcome<serde_json::Value>,
) -> Outcome<()> {
    let run = RunDir::create(&cli.runs_dir, command_name(&cli.command), cfg, cli.seed)
        .with_context(|| format!("creating run under {}", cli.runs_dir.display()))
        .run()?;
    log::info!("run {} at {}", run.run_id, run.path.display());
    let path = run.path.clone();
    let outcome = body(&run);
    let summary = match &outcome {
        Ok(v) => v.clone(),
        Err(Failure::Usage(e) | Failure::Run(e)) => {
            json!({"status": "failed", "error": format!("{e:#}")})
        }
    };
    run.finish(summary).context("writing manifest").run()?;
    println!("run: {}", path.display());
    outcome.map(|_| ())
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .run()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome<()> {
    write_text(
        path,
        &serde_json::to_string_pretty(value).expect("report serializes"),
    )
}

fn problems_from(path: &Path) -> Outcome<Vec<Theorem>> {
    let problems = read_problem_set(path)
        .with_context(|| format!("reading problems {}", path.display()))
        .usage()?;
    if problems.is_empty() {
        return Err(Failure::Usage(anyhow!(
            "{} holds no problems",
            path.display()
        )));
    }
    Ok(problems)
}

fn annotate(cli: &Cli, cfg: &Config, pairs_path: &Path, ledger: Option<&Path>) -> Outcome<()> {
    let opts = cfg.annotate_options().usage()?;
    let oracle = cfg.build_oracle(&opts.template).usage()?;
    let pairs: Vec<Pair> = read_jsonl(pairs_path)
        .with_context(|| format!("reading pairs {}", pairs_path.display()))
        .usage()?;

    in_run(cli, cfg, |run| {
        let ledger = ledger.map_or_else(
            || run.datasets().join("annotation_ledger.jsonl"),
            Path::to_path_buf,
        );
        let (d_t, report) = annotate_corpus(&pairs, oracle.as_ref(), &opts, &ledger).run()?;
        let out = run.datasets().join("d_t.jsonl");
        let file = std::fs::File::create(&out).run()?;
        write_dataset(BufWriter::new(file), &d_t).run()?;
        write_json(&run.reports().join("annotation.json"), &report)?;
        println!(
        "annotated {} of {}: {} mismatched, {} parse failures, {} transport failures, {} filtered",
        report.accepted, report.input, report.mismatched, report.parse_failed, report.transport_failed, report.filtered
    );
        Ok(serde_json::to_value(report).expect("report serializes"))
    })
}

fn search(cli: &Cli, cfg: &Config, target: &Target, method: Method) -> Outcome<()> {
    let problems = match (&target.problems, &target.theorem) {
        (Some(p), _) => problems_from(p)?,
        (None, Some(stmt)) => vec![Theorem::new(target.id.clone(), stmt.clone())],
        (None, None) => unreachable!("clap requires a target"),
    };
    let mut budget = cfg.search_budget();
    if method == Method::Sampling {
        budget.s = 1;
    }
    let scfg = cfg.search_config(budget, cli.seed);
    let env = cfg.build_env().usage()?;
    let gen = cfg.build_generator().usage()?;

    in_run(cli, cfg, |run| {
        let results = search_all(method, &problems, env.as_ref(), gen.as_ref(), &scfg).run()?;
        AttemptLog::from_results(&results)
            .write(&run.trajectories())
            .run()?;
        let table = render_results(&results);
        write_text(
            &run.reports()
                .join(format!("{}.txt", command_name(&cli.command))),
            &table,
        )?;
        let summaries: Vec<_> = results.iter().map(result_summary).collect();
        write_json(
            &run.reports()
                .join(format!("{}.json", command_name(&cli.command))),
            &summaries,
        )?;
        let rate = pass_at_k(&results).run()?;
        print!("{table}");
        println!("pass@{}: {rate:.4}", scfg.budget.k);
        Ok(json!({"method": method.as_str(), "pass_rate": rate, "problems": results.len()}))
    })
}

fn result_summary(r: &SearchResult) -> serde_json::Value {
    json!({
        "theorem_id": r.theorem_id,
        "k": r.k,
        "solved": r.solved,
        "proofs": r.proofs.iter().map(|p| p.tactics().iter().map(|t| t.as_str().to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "generator_calls_total": r.generator_calls_total,
        "errors": r.errors,
    })
}

fn render_results(results: &[SearchResult]) -> String {
    let width = results
        .iter()
        .map(|r| r.theorem_id.len())
        .max()
        .unwrap_or(0)
        .max(7);
    let mut out = format!(
        "{:<width$}  {:<6}  {:>5}  proof\n",
        "theorem", "solved", "calls"
    );
    for r in results {
        let proof = r
            .proofs
            .first()
            .map(|p| {
                p.tactics()
                    .iter()
                    .map(Tactic::as_str)
                    .collect::<Vec<_>>()
                    .join("; ")
            })
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<width$}  {:<6}  {:>5}  {}\n",
            r.theorem_id,
            if r.solved { "yes" } else { "no" },
            r.generator_calls_total,
            proof
        ));
    }
    out
}

fn star(
    cli: &Cli,
    cfg: &Config,
    problems_path: &Path,
    d_t_path: Option<&Path>,
    iterations: Option<u32>,
    eval_problems: Option<&Path>,
) -> Outcome<()> {
    let problems = problems_from(problems_path)?;
    let eval_set = eval_problems.map(problems_from).transpose()?;
    let env = cfg.build_env().usage()?;
    let initial = cfg.build_generator().usage()?;
    let d_t = match d_t_path
        .map(Path::to_path_buf)
        .or_else(|| cfg.star.d_t.as_ref().map(|p| cfg.resolve(p)))
    {
        Some(p) => Some(
            read_dataset(&p, Provenance::OracleAnnotated)
                .with_context(|| format!("reading D_T {}", p.display()))
                .usage()?,
        ),
        None => None,
    };
    let mut trainer: Box<dyn Trainer> = match cfg.star.trainer {
        TrainerKind::Count => {
            let rules = cfg
                .rules()
                .usage()?
                .ok_or_else(|| Failure::Usage(anyhow!("the count trainer needs prover.rules")))?;
            let previous = match (cfg.generator.kind, &cfg.generator.dataset) {
                (GeneratorKind::Count, Some(p)) => {
                    let data = read_dataset(&cfg.resolve(p), Provenance::Sft).usage()?;
                    Some(CountPolicy::fit(&data, rules.clone()).usage()?)
                }
                _ => None,
            };
            Box::new(CountPolicyTrainer::new(rules, previous))
        }
        TrainerKind::Command => Box::new(CommandTrainer {
            template: cfg.star.trainer_command.clone().expect("validated at load"),
        }),
    };

    let mut template =
        IterationConfig::new(problems, cfg.search_config(cfg.star_budget(), cli.seed));
    template.search.budget = cfg.star_budget();
    template.dataset_mode = cfg.star.dataset_mode;
    template.failure_ceiling = cfg.star.failure_ceiling;
    let eval_cfg = cfg.search_config(cfg.eval_budget(), cli.seed);
    let eval_env = env.clone();
    let evaluate = eval_set.as_ref().map(|set| {
        move |g: &dyn Generator| -> Result<f64, StarError> {
            let results = search_all(Method::Sampling, set, eval_env.as_ref(), g, &eval_cfg)?;
            Ok(pass_at_k(&results)?)
        }
    });

    in_run(cli, cfg, |run| {
        let n_iters = iterations.unwrap_or(cfg.star.iterations);
        let reports = run_iterations(
            n_iters,
            &template,
            env.as_ref(),
            initial,
            trainer.as_mut(),
            d_t.as_deref(),
            &run.datasets(),
            evaluate.as_ref().map(|f| f as &Evaluator<'_>),
        )
        .run()?;

        let mut all = Vec::new();
        for i in 1..=n_iters {
            let path = run
                .datasets()
                .join(format!("iter_{i}"))
                .join(store::TRAJECTORIES);
            all.extend(proofstar::model::read_trajectories(&path).run()?);
        }
        let file = std::fs::File::create(run.trajectories()).run()?;
        write_trajectories(BufWriter::new(file), &all).run()?;
        write_json(&run.reports().join("star.json"), &reports)?;
        let text = render_star(&reports);
        write_text(&run.reports().join("star.txt"), &text)?;
        print!("{text}");
        Ok(json!({"iterations": reports}))
    })
}

fn render_star(reports: &[proofstar::star::IterationReport]) -> String {
    let mut out = String::from("iter  solved     rate    pairs  dataset  eval\n");
    for r in reports {
        let eval = r
            .eval_after_training
            .map(|e| format!("{e:.4}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:>4}  {:>9}  {:.4}  {:>5}  {:>7}  {eval}\n",
            r.iteration,
            format!("{}/{}", r.problems_solved, r.problems_attempted),
            r.success_rate,
            r.pairs_after_dedup,
            r.dataset_lines
        ));
    }
    out
}

const PROBLEMS_COPY: &str = "problems.jsonl";

fn run_eval(cli: &Cli, cfg: &Config, problems_path: &Path, decoding: Method) -> Outcome<()> {
    let problems = problems_from(problems_path)?;
    let mut budget = cfg.eval_budget();
    if decoding == Method::Sampling && budget.s != 1 {
        return Err(Failure::Usage(anyhow!(
            "sampling evaluation needs eval.S = 1"
        )));
    }
    budget.validate(decoding == Method::Sampling).usage()?;
    budget.max_proofs_per_problem = 1;
    let scfg = cfg.search_config(budget, cli.seed);
    let env = cfg.build_env().usage()?;
    let gen = cfg.build_generator().usage()?;

    in_run(cli, cfg, |run| {
        std::fs::copy(problems_path, run.datasets().join(PROBLEMS_COPY)).run()?;
        let (row, log) = eval::run_eval(
            &problems,
            env.as_ref(),
            gen.as_ref(),
            &scfg,
            decoding,
            &cfg.eval.approach,
        )
        .run()?;
        log.write(&run.trajectories()).run()?;
        let rendered = render_eval(&row, &problems, &log, &cfg.eval.scaling_ks)?;
        for (name, text) in &rendered {
            write_text(&run.reports().join(name), text)?;
        }
        write_json(&run.reports().join("eval.json"), &row)?;
        print!("{}", rendered[0].1);
        print!("{}", rendered[2].1);
        Ok(json!({"pass_rate": row.pass_rate, "solved": row.solved, "total": row.total}))
    })
}

/// Text and CSV renderings of a row, in a fixed order: eval, eval csv,
/// breakdown, breakdown csv, then the scaling curve when the log is deep
/// enough.
fn render_eval(
    row: &EvalRow,
    problems: &[Theorem],
    log: &AttemptLog,
    ks: &[u32],
) -> Outcome<Vec<(String, String)>> {
    let split = eval::breakdown(problems, log).run()?;
    let mut out = vec![
        (
            "eval.txt".to_string(),
            eval::render_rows(std::slice::from_ref(row)),
        ),
        (
            "eval.csv".to_string(),
            eval::render_rows_csv(std::slice::from_ref(row)),
        ),
        ("breakdown.txt".to_string(), split.render_text()),
        ("breakdown.csv".to_string(), split.render_csv()),
    ];
    let deep = ks.iter().max().is_some_and(|&m| m <= row.header.k);
    if deep && !ks.is_empty() {
        out.push((
            "scaling.txt".to_string(),
            eval::render_curve(&eval::scaling_curve(log, ks).run()?),
        ));
    }
    Ok(out)
}

fn report(run_dir: &Path) -> Outcome<()> {
    let manifest = store::read_manifest(run_dir)
        .with_context(|| format!("reading manifest in {}", run_dir.display()))
        .usage()?;
    let reports = run_dir.join(store::REPORTS);
    match manifest.command.as_str() {
        "eval" => {
            let saved: EvalRow =
                serde_json::from_str(&std::fs::read_to_string(reports.join("eval.json")).run()?)
                    .run()?;
            let problems =
                read_problem_set(&run_dir.join(store::DATASETS).join(PROBLEMS_COPY)).run()?;
            let log = AttemptLog::read(&run_dir.join(store::TRAJECTORIES)).run()?;
            let header: EvalHeader = saved.header;
            let row = eval::row_from_log(header, &problems, &log).run()?;
            let ks: Vec<u32> = manifest
                .config_snapshot
                .pointer("/eval/scaling_ks")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .unwrap_or_default();
            for (name, text) in render_eval(&row, &problems, &log, &ks)? {
                if name.ends_with(".txt") {
                    print!("{text}");
                }
            }
        }
        "star" => {
            let saved: Vec<proofstar::star::IterationReport> =
                serde_json::from_str(&std::fs::read_to_string(reports.join("star.json")).run()?)
                    .run()?;
            print!("{}", render_star(&saved));
        }
        "search" | "sample" => {
            let log = AttemptLog::read(&run_dir.join(store::TRAJECTORIES)).run()?;
            println!("{:<24}  {:>8}  {:>6}", "theorem", "attempts", "solved");
            for (id, attempts) in &log.problems {
                let solved = attempts.iter().any(|t| t.success);
                println!(
                    "{id:<24}  {:>8}  {:>6}",
                    attempts.len(),
                    if solved { "yes" } else { "no" }
                );
            }
        }
        "annotate" => {
            print!(
                "{}",
                std::fs::read_to_string(reports.join("annotation.json")).run()?
            );
            println!();
        }
        other => return Err(Failure::Run(anyhow!("run has unknown command {other:?}"))),
    }
    Ok(())
}

fn toyprove(
    cfg: &Config,
    statement: &str,
    tactics: &[String],
    rules: Option<&Path>,
) -> Outcome<()> {
    let rules = match rules {
        Some(p) => Arc::new(
            RuleSet::load(p)
                .with_context(|| format!("reading rules {}", p.display()))
                .usage()?,
        ),
        None => cfg
            .rules()
            .usage()?
            .ok_or_else(|| Failure::Usage(anyhow!("pass --rules or set prover.rules")))?,
    };
    let factory = ToyFactory::new((*rules).clone());
    let mut env = factory.open().run()?;
    let theorem = Theorem::new("toyprove", statement);
    let mut state = env.init_theorem(&theorem).usage()?;
    println!("state: {}", state.goals_text);

    let tactics: Box<dyn Iterator<Item = String>> = if tactics.is_empty() {
        Box::new(
            std::io::stdin()
                .lock()
                .lines()
                .map_while(Result::ok)
                .filter(|l| !l.trim().is_empty()),
        )
    } else {
        Box::new(tactics.iter().cloned())
    };
    let mut stdout = std::io::stdout();
    for text in tactics {
        let tactic = Tactic::new(text.as_str()).usage()?;
        match env
            .apply_tactic(&state, &tactic, cfg.prover.tactic_timeout_ms)
            .run()?
        {
            TacticOutcome::NewState(next) => {
                println!("{} => {}", tactic.as_str(), next.goals_text);
                state = next;
            }
            TacticOutcome::ProofFinished => {
                println!("{} => proof finished", tactic.as_str());
                return Ok(());
            }
            TacticOutcome::TacticError(e) => println!("{} => error: {e}", tactic.as_str()),
            TacticOutcome::Timeout => println!("{} => timeout", tactic.as_str()),
        }
        let _ = stdout.flush();
    }
    Err(Failure::Run(anyhow!(
        "proof incomplete at {:?}",
        state.goals_text
    )))
}
