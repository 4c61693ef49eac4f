use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use satrisk::evaluator::{evaluate_chain, pipeline_chain, EvalError};
use satrisk::format::sig12;
use satrisk::lumping::lump;
use satrisk::mdp::induce;
use satrisk::model_file::render_model_json;
use satrisk::sat::{lift_policy, transform_mdp, transform_process};
use satrisk::simulator::{empirical_mean_variance, empirical_utility, run_groups};
use satrisk::sweep::{run_sweep, SimulationKnobs, SweepError, SweepParam, SweepPipeline, SweepSpec};
use satrisk::{
    parse_model, parse_policy, render_model, DetChain, LumpError, LumpStrategy, Mdp, MdpBuilder,
    ModelError, Pipeline, Policy, SimError,
};

#[derive(Parser)]
#[command(name = "satrisk", version, about = "Risk of the discounted return in MDPs with stochastic rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model file.
    Validate(ModelArgs),
    /// Exact mean, variance and risks for one or more pipelines.
    Eval(EvalArgs),
    /// Write the state-augmented model, optionally lumped.
    Transform(TransformArgs),
    /// Merge isotopic states of the augmented chain and report the classes.
    Lump(LumpArgs),
    /// Simulate grouped truncated returns of the original process.
    Simulate(SimulateArgs),
    /// Sweep a risk parameter and tabulate every selected pipeline.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model file (TOML, or JSON when the text starts with '{').
    model: PathBuf,
    /// Policy file; overrides a policy embedded in the model.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Replace the model's discount factor.
    #[arg(long)]
    gamma_override: Option<f64>,
}

#[derive(Args)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct Knobs {
    /// Number of groups.
    #[arg(long = "L", default_value_t = 20)]
    groups: usize,
    /// Simulations per group.
    #[arg(long = "M", default_value_t = 500)]
    sims: usize,
    /// Truncation horizon in reward epochs.
    #[arg(long = "N", default_value_t = 200)]
    horizon: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl Knobs {
    fn knobs(&self) -> SimulationKnobs {
        SimulationKnobs {
            groups: self.groups,
            sims: self.sims,
            horizon: self.horizon,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// sat, sat-lumped or simplified; repeatable.
    #[arg(long, default_value = "sat")]
    pipeline: Vec<Pipeline>,
    #[arg(long, value_enum, default_value_t = Strategy::SatKey)]
    lump_strategy: Strategy,
    #[arg(short, default_value_t = 1.0, allow_negative_numbers = true)]
    k: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Pairwise,
    SatKey,
}

impl From<Strategy> for LumpStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Pairwise => LumpStrategy::Pairwise,
            Strategy::SatKey => LumpStrategy::SatKey,
        }
    }
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Lump the augmented chain; needs a policy.
    #[arg(long)]
    lump: bool,
    #[arg(long, value_enum, default_value_t = Strategy::SatKey)]
    lump_strategy: Strategy,
    /// Emit JSON instead of TOML.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LumpArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Strategy::SatKey)]
    lump_strategy: Strategy,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    knobs: Knobs,
    #[arg(short, default_value_t = 1.0, allow_negative_numbers = true)]
    k: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    param: SweepParam,
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    #[arg(long)]
    step: f64,
    /// sat, sat-lumped, simplified or empirical; repeatable.
    #[arg(long, required = true)]
    pipeline: Vec<SweepPipeline>,
    #[command(flatten)]
    knobs: Knobs,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<LumpError> for Failure {
    fn from(e: LumpError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(e) => e.into(),
            EvalError::Lump(e) => e.into(),
            e => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::TooSmall(..) | SimError::BadParameter(_) => Failure::Input(e.to_string()),
            SimError::Intractable(_) | SimError::NotANumber => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Invalid(m) => Failure::Input(m),
            SweepError::Eval(e) => e.into(),
            SweepError::Sim(e) => e.into(),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn read(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(args: &ModelArgs) -> Outcome<(Mdp, Option<Policy>)> {
    let (mut mdp, mut policy) = parse_model(&read(&args.model)?)?;
    if let Some(path) = &args.policy {
        let p = parse_policy(&read(path)?)?;
        p.resolve(&mdp)?;
        policy = Some(p);
    }
    if let Some(g) = args.gamma_override {
        mdp = mdp.with_gamma(g)?;
    }
    Ok((mdp, policy))
}

fn load_with_policy(args: &ModelArgs) -> Outcome<(Mdp, Policy)> {
    match load(args)? {
        (mdp, Some(p)) => Ok((mdp, p)),
        (_, None) => Err(Failure::Input(
            "no policy: embed a [policy] table or pass --policy".into(),
        )),
    }
}

/// A chain as a single-action model whose reward on entering `y` is `r(y)`.
fn chain_model(chain: &DetChain) -> Outcome<(Mdp, Policy)> {
    let mut b = MdpBuilder::new(chain.gamma());
    let mut policy = Policy::new();
    for s in chain.states() {
        b.state(s.clone()).actions(s.clone(), ["pi"]);
        policy.set(s, "pi", 1.0);
    }
    for (x, row) in chain.rows().iter().enumerate() {
        let from = &chain.states()[x];
        for &(y, p) in row {
            let to = &chain.states()[y];
            b.transition(from, "pi", to, p)
                .reward(from, "pi", to, chain.reward()[y], 1.0);
        }
    }
    for (s, &m) in chain.states().iter().zip(chain.initial()) {
        if m > 0.0 {
            b.initial(s.clone(), m);
        }
    }
    Ok((b.build()?, policy))
}

fn cmd_validate(args: ModelArgs) -> Outcome {
    let (mdp, policy) = load(&args)?;
    let actions: usize = (0..mdp.num_states()).map(|x| mdp.actions(x).len()).sum();
    println!(
        "ok: {} states, {} state-action pairs, {} reward values, gamma {}, policy {}",
        mdp.num_states(),
        actions,
        mdp.reward_support().len(),
        sig12(mdp.gamma()),
        if policy.is_some() { "present" } else { "absent" }
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Outcome {
    let (mdp, policy) = load_with_policy(&args.model)?;
    let mut out = String::new();
    if args.output.format == Format::Csv {
        out.push_str("pipeline,mean,variance,k,mean_variance_risk,beta,utility_taylor\n");
    }
    for p in &args.pipeline {
        let chain = pipeline_chain(&mdp, &policy, *p, args.lump_strategy.into())?;
        let r = evaluate_chain(&chain, *p)?;
        let (mv, ut) = (r.mean_variance_risk(args.k), r.utility_taylor(args.beta));
        match args.output.format {
            Format::Csv => {
                let _ = writeln!(
                    out,
                    "{p},{},{},{},{},{},{}",
                    sig12(r.mean),
                    sig12(r.variance),
                    sig12(args.k),
                    sig12(mv),
                    sig12(args.beta),
                    sig12(ut)
                );
            }
            Format::Text => {
                let _ = writeln!(out, "pipeline {p} ({} states)", chain.len());
                let _ = writeln!(out, "  mean                {}", sig12(r.mean));
                let _ = writeln!(out, "  variance            {}", sig12(r.variance));
                let _ = writeln!(out, "  mean-variance k={:<5} {}", sig12(args.k), sig12(mv));
                let _ = writeln!(out, "  utility β={:<9} {}", sig12(args.beta), sig12(ut));
            }
        }
    }
    write(args.output.out.as_deref(), &out)
}

fn cmd_transform(args: TransformArgs) -> Outcome {
    let (mdp, policy) = load(&args.model)?;
    let aug = transform_mdp(&mdp)?;
    let before = aug.len();
    let (model, lifted, after) = if args.lump {
        let policy = policy.ok_or_else(|| Failure::Input("--lump needs a policy".into()))?;
        let report = lump(&transform_process(&mdp, &policy)?, args.lump_strategy.into())?;
        let (m, p) = chain_model(&report.merged_chain)?;
        (m, Some(p), report.size_after)
    } else {
        let lifted = policy.map(|p| lift_policy(&aug, &p)).transpose()?;
        (aug.mdp().clone(), lifted, before)
    };
    let text = if args.json {
        render_model_json(&model, lifted.as_ref())
    } else {
        render_model(&model, lifted.as_ref())
    };
    write(args.out.as_deref(), &text)?;
    eprintln!("size_before {before}\nsize_after {after}");
    Ok(())
}

fn cmd_lump(args: LumpArgs) -> Outcome {
    let (mdp, policy) = load_with_policy(&args.model)?;
    let report = lump(&transform_process(&mdp, &policy)?, args.lump_strategy.into())?;
    let mut out = String::new();
    match args.output.format {
        Format::Csv => {
            out.push_str("class,state\n");
            for (i, class) in report.classes.iter().enumerate() {
                for s in class {
                    let _ = writeln!(out, "{i},{s}");
                }
            }
        }
        Format::Text => {
            let _ = writeln!(
                out,
                "strategy {}: {} -> {} states",
                report.strategy, report.size_before, report.size_after
            );
            for class in &report.classes {
                let _ = writeln!(out, "  {}", class.join(" "));
            }
        }
    }
    write(args.output.out.as_deref(), &out)
}

fn cmd_simulate(args: SimulateArgs) -> Outcome {
    let (mdp, policy) = load_with_policy(&args.model)?;
    let process = induce(&mdp, &policy)?;
    let k = args.knobs.knobs();
    let groups = run_groups(&process, k.groups, k.sims, k.horizon, k.seed)?;
    let text = match args.output.format {
        Format::Csv => groups.to_csv(),
        Format::Text => {
            let mv = empirical_mean_variance(&groups, args.k)?;
            let ut = empirical_utility(&groups, args.beta)?;
            let mean = empirical_mean_variance(&groups, 0.0)?;
            let mut out = format!(
                "L {} M {} N {} seed {}\n",
                k.groups, k.sims, k.horizon, k.seed
            );
            let _ = writeln!(out, "  mean                {} (stderr {})", sig12(mean.value), sig12(mean.stderr));
            let _ = writeln!(out, "  mean-variance k={:<5} {} (stderr {})", sig12(args.k), sig12(mv.value), sig12(mv.stderr));
            let _ = writeln!(out, "  utility β={:<9} {} (stderr {})", sig12(args.beta), sig12(ut.value), sig12(ut.stderr));
            out
        }
    };
    write(args.output.out.as_deref(), &text)
}

fn cmd_sweep(args: SweepArgs) -> Outcome {
    let (mdp, policy) = load_with_policy(&args.model)?;
    let spec = SweepSpec {
        param: args.param,
        from: args.from,
        to: args.to,
        step: args.step,
        pipelines: args.pipeline,
        sim: args.knobs.knobs(),
    };
    let table = run_sweep(&mdp, &policy, &spec)?;
    write(args.out.as_deref(), &table.to_csv())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Lump(a) => cmd_lump(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical error: {m}");
            ExitCode::from(2)
        }
    }
}
