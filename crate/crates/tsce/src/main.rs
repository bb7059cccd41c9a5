//! Command-line front end: data generation, simulation, causal discovery,
//! explanation, tree post-processing, and verbalization as pure
//! file-in/file-out steps.
//!
//! Every error is printed to stderr as a single line `ERROR <CODE>: message`
//! and the process exits nonzero.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use tsce::coinrunner::{
    read_rollouts, run_agent_traced, write_rollouts, Behaviour, GameConfig, Rollout, FRAME_VARS,
};
use tsce::data::{generate_hans, read_csv, write_csv, HansGeneratorConfig, PopulationStatistic};
use tsce::discovery::{discover, DiscoveryConfig, Method};
use tsce::engine::{explain, PanelView, SelectionConfig, SeriesView, WhyQuestion};
use tsce::error::{Result, TsceError};
use tsce::graph::{ContextSet, TemporalCausalGraph};
use tsce::rules::Relation;
use tsce::tree::{ExplanationTree, Mode};
use tsce::treeops::{leave_n_out, mask_graph, mask_tree, path_channel};
use tsce::verbalize::{render_tree, Lexicon};

#[derive(Parser)]
#[command(
    name = "tsce",
    version,
    about = "Temporal structural causal explanations: generate, simulate, discover, explain, verbalize"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic health panel dataset as CSV.
    GenHans {
        /// Number of individuals.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Time horizon (steps per individual).
        #[arg(long, default_value_t = 50)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise scale relative to the structural mean (0 = deterministic).
        #[arg(long, default_value_t = 0.03)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run scripted game episodes and record them as JSONL.
    Simulate {
        /// Agent behaviour: killer | coincollector | optimal.
        #[arg(long)]
        agent: String,
        #[arg(long, default_value_t = 500)]
        rollouts: usize,
        /// Probability of replacing each action with a random one.
        #[arg(long, default_value_t = 0.02)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        width: i32,
        #[arg(long, default_value_t = 10)]
        height: i32,
        #[arg(long)]
        out: PathBuf,
        /// Print an ASCII grid per frame to stdout.
        #[arg(long)]
        render: bool,
    },
    /// Learn per-context lag-1 graphs from recorded rollouts.
    Discover {
        /// granger | lasso.
        #[arg(long)]
        method: String,
        /// Context definition JSON.
        #[arg(long)]
        contexts: PathBuf,
        /// Rollout JSONL produced by `simulate`.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output directory for per-context graph + report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Margin frames around conditioned segments.
        #[arg(long, default_value_t = 12)]
        margin: usize,
        /// Granger significance level.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Noise injected into binary columns before regression.
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build an explanation tree for a why-question.
    Explain {
        /// Panel CSV (individual questions) or rollout JSONL (behaviour
        /// questions).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        contexts: PathBuf,
        /// e.g. "Mobility < mean @ t=49 ind=17" or
        /// "targeting_enemy @ t=23 rollout=0".
        #[arg(long)]
        question: String,
        /// retro | antic.
        #[arg(long, default_value = "retro")]
        mode: String,
        /// Recursion depth K.
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// all | theta:X | topn:N | theta:X+topn:N.
        #[arg(long, default_value = "all")]
        select: String,
        /// Tree JSON output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transform a saved explanation tree (or graph, for mask).
    Treeop {
        #[command(subcommand)]
        op: TreeOpCmd,
    },
    /// Render a saved explanation tree as text.
    Verbalize {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Append "(4.338)"-style coefficient magnitudes.
        #[arg(long)]
        coefficients: bool,
    },
}

#[derive(Subcommand)]
enum TreeOpCmd {
    /// Remove intermediate variables, bridging paths through them. Accepts a
    /// tree or a graph JSON.
    Mask {
        /// Comma-separated variable names.
        #[arg(long)]
        vars: String,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep only the root path to a target node plus bounded surroundings.
    Path {
        /// Target as "Variable:t", e.g. "Health:48".
        #[arg(long)]
        target: String,
        /// Descendant depth kept around each path node.
        #[arg(long, default_value_t = 0)]
        width: usize,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge sequences interrupted by at most N deviating steps.
    LeaveNOut {
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Overwrite the interrupters' indicators to the surrounding pattern.
        #[arg(long)]
        rewrite: bool,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn error_code(e: &TsceError) -> &'static str {
    match e {
        TsceError::VariableNotFound(_) => "VARIABLE_NOT_FOUND",
        TsceError::InvalidGraph(_) => "INVALID_GRAPH",
        TsceError::NoContextMatched(_) => "NO_CONTEXT",
        TsceError::PredicateParse(_) => "PREDICATE_PARSE",
        TsceError::InvalidQuestion(_) => "INVALID_QUESTION",
        TsceError::InvalidArgument(_) => "INVALID_ARGUMENT",
        TsceError::Dataset(_) => "DATASET",
        TsceError::TreeOp(_) => "TREE_OP",
        TsceError::Discovery(_) => "DISCOVERY",
        TsceError::Simulation(_) => "SIMULATION",
        TsceError::Lexicon(_) => "LEXICON",
        TsceError::Io(_) => "IO",
        TsceError::Json(_) => "JSON",
        TsceError::Csv(_) => "CSV",
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("ERROR {}: {}", error_code(&e), e);
        std::process::exit(2);
    }
}

// ---------------------------------------------------------------------------
// Question grammar
// ---------------------------------------------------------------------------

/// Who the question is about.
enum Subject {
    Individual(usize),
    Rollout(usize),
}

/// Parses `<var> <|> <mean|p<k>> @ t=<int> ind=<int>` (statistic questions)
/// or `<var> @ t=<int> rollout=<id>` (behaviour questions).
fn parse_question(s: &str) -> Result<(WhyQuestion, Subject)> {
    let bad = |msg: &str| TsceError::InvalidQuestion(format!("{msg} in {s:?}"));
    let tokens: Vec<&str> = s.split_whitespace().collect();
    let mut it = tokens.iter();
    let variable = it.next().ok_or_else(|| bad("missing variable"))?.to_string();
    let mut relation = None;
    let mut statistic = None;
    let mut next = *it.next().ok_or_else(|| bad("missing '@'"))?;
    if next == "<" || next == ">" {
        relation = Some(if next == "<" {
            Relation::Less
        } else {
            Relation::Greater
        });
        let stat = *it.next().ok_or_else(|| bad("missing statistic"))?;
        statistic = Some(parse_statistic(stat)?);
        next = *it.next().ok_or_else(|| bad("missing '@'"))?;
    }
    if next != "@" {
        return Err(bad("expected '@'"));
    }
    let mut t = None;
    let mut subject = None;
    for kv in it {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| bad("expected key=value"))?;
        let value: usize = value
            .parse()
            .map_err(|_| bad(&format!("invalid integer {value:?}")))?;
        match key {
            "t" => t = Some(value),
            "ind" => subject = Some(Subject::Individual(value)),
            "rollout" => subject = Some(Subject::Rollout(value)),
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    let t = t.ok_or_else(|| bad("missing t="))?;
    let subject = subject.ok_or_else(|| bad("missing ind= or rollout="))?;
    match (&relation, &subject) {
        (Some(_), Subject::Rollout(_)) => {
            return Err(bad("statistic questions need ind=, not rollout="))
        }
        (None, Subject::Individual(_)) => {
            return Err(bad("behaviour questions need rollout=, not ind="))
        }
        _ => {}
    }
    Ok((
        WhyQuestion {
            variable,
            t,
            relation,
            statistic,
        },
        subject,
    ))
}

fn parse_statistic(s: &str) -> Result<PopulationStatistic> {
    if s == "mean" {
        return Ok(PopulationStatistic::Mean);
    }
    if let Some(p) = s.strip_prefix('p') {
        let k: f64 = p.parse().map_err(|_| {
            TsceError::InvalidQuestion(format!("invalid percentile {s:?}"))
        })?;
        let stat = PopulationStatistic::Percentile(k);
        stat.validate()?;
        return Ok(stat);
    }
    Err(TsceError::InvalidQuestion(format!(
        "unknown statistic {s:?} (expected mean or p<k>)"
    )))
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "retro" | "retrospective" => Ok(Mode::Retrospective),
        "antic" | "anticipative" => Ok(Mode::Anticipative),
        other => Err(TsceError::InvalidArgument(format!(
            "unknown mode {other:?} (expected retro or antic)"
        ))),
    }
}

fn load_contexts(path: &Path) -> Result<ContextSet> {
    ContextSet::from_json(&fs::read_to_string(path)?)
}

fn load_tree(path: &Path) -> Result<ExplanationTree> {
    ExplanationTree::from_json(&fs::read_to_string(path)?)
}

fn rollout_series(rollouts: &[Rollout], id: usize) -> Result<SeriesView> {
    let r = rollouts
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| TsceError::Dataset(format!("no rollout with id {id}")))?;
    SeriesView::new(
        FRAME_VARS.iter().map(|s| s.to_string()).collect(),
        r.frames.iter().map(|f| f.values()).collect(),
    )
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenHans {
            n,
            t,
            seed,
            noise,
            out,
        } => {
            let cfg = HansGeneratorConfig::new(n, t, seed).with_noise(noise);
            let dataset = generate_hans(&cfg)?;
            write_csv(&dataset, BufWriter::new(fs::File::create(out)?))?;
            Ok(())
        }
        Cmd::Simulate {
            agent,
            rollouts,
            epsilon,
            seed,
            width,
            height,
            out,
            render,
        } => {
            let behaviour = Behaviour::from_str(&agent)?;
            let config = GameConfig {
                width,
                height,
                ..GameConfig::default()
            };
            let mut all = Vec::with_capacity(rollouts);
            for i in 0..rollouts {
                let mut trace = render.then(Vec::new);
                let r = run_agent_traced(
                    behaviour,
                    i,
                    seed.wrapping_add(i as u64),
                    epsilon,
                    &config,
                    trace.as_mut(),
                )?;
                if let Some(grids) = trace {
                    for (f, grid) in r.frames.iter().zip(&grids) {
                        println!(
                            "rollout {} tick {} score {}\n{}",
                            r.id, f.tick, f.score, grid
                        );
                    }
                }
                all.push(r);
            }
            write_rollouts(BufWriter::new(fs::File::create(out)?), &all)
        }
        Cmd::Discover {
            method,
            contexts,
            input,
            out,
            margin,
            alpha,
            noise,
            seed,
        } => {
            let method = Method::from_str(&method)?;
            let contexts = load_contexts(&contexts)?;
            let rollouts = read_rollouts(BufReader::new(fs::File::open(input)?))?;
            let cfg = DiscoveryConfig {
                method,
                margin,
                alpha_level: alpha,
                noise_sd: noise,
                seed,
                ..DiscoveryConfig::default()
            };
            fs::create_dir_all(&out)?;
            let mut learned = contexts.clone();
            for result in discover(&rollouts, &contexts, &cfg)? {
                fs::write(
                    out.join(format!("{}.graph.json", result.context)),
                    result.graph.to_json()?,
                )?;
                fs::write(
                    out.join(format!("{}.report.json", result.context)),
                    serde_json::to_string_pretty(&result.report)?,
                )?;
                for c in &mut learned.contexts {
                    if c.name == result.context {
                        c.graph = Some(result.graph.clone());
                    }
                }
            }
            // Ready-to-use context file with the learned graphs spliced in.
            fs::write(out.join("contexts.json"), learned.to_json()?)?;
            Ok(())
        }
        Cmd::Explain {
            data,
            contexts,
            question,
            mode,
            depth,
            select,
            out,
        } => {
            let mode = parse_mode(&mode)?;
            let contexts = load_contexts(&contexts)?;
            let (q, subject) = parse_question(&question)?;
            let selection = SelectionConfig::parse(&select, depth)?;
            let tree = match subject {
                Subject::Individual(ind) => {
                    let dataset = read_csv(BufReader::new(fs::File::open(&data)?))?;
                    if ind >= dataset.n() {
                        return Err(TsceError::InvalidQuestion(format!(
                            "individual {ind} out of range (dataset has {})",
                            dataset.n()
                        )));
                    }
                    let view = PanelView {
                        dataset: &dataset,
                        individual: ind,
                        stat: q.statistic.unwrap_or(PopulationStatistic::Mean),
                    };
                    explain(&q, mode, &contexts, &view, &selection)?
                }
                Subject::Rollout(id) => {
                    let rollouts = read_rollouts(BufReader::new(fs::File::open(&data)?))?;
                    let view = rollout_series(&rollouts, id)?;
                    explain(&q, mode, &contexts, &view, &selection)?
                }
            };
            let json = tree.to_json()?;
            match out {
                Some(path) => fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Cmd::Treeop { op } => run_treeop(op),
        Cmd::Verbalize {
            input,
            lexicon,
            coefficients,
        } => {
            let tree = load_tree(&input)?;
            let lexicon = Lexicon::from_path(&lexicon)?;
            println!("{}", render_tree(&tree, &lexicon, coefficients)?);
            Ok(())
        }
    }
}

fn run_treeop(op: TreeOpCmd) -> Result<()> {
    match op {
        TreeOpCmd::Mask { vars, input, out } => {
            let masked = vars
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let raw = fs::read_to_string(&input)?;
            let value: serde_json::Value = serde_json::from_str(&raw)?;
            if value.get("nodes").is_some() {
                let tree = ExplanationTree::from_json(&raw)?;
                fs::write(out, mask_tree(&tree, &masked)?.to_json()?)?;
            } else {
                let graph = TemporalCausalGraph::from_json(&raw)?;
                fs::write(out, mask_graph(&graph, &masked)?.to_json()?)?;
            }
            Ok(())
        }
        TreeOpCmd::Path {
            target,
            width,
            input,
            out,
        } => {
            let (var, t) = target.rsplit_once(':').ok_or_else(|| {
                TsceError::InvalidArgument(format!(
                    "target must be \"Variable:t\", got {target:?}"
                ))
            })?;
            let t: usize = t.parse().map_err(|_| {
                TsceError::InvalidArgument(format!("invalid target time {t:?}"))
            })?;
            let tree = load_tree(&input)?;
            fs::write(out, path_channel(&tree, (var, t), width)?.to_json()?)?;
            Ok(())
        }
        TreeOpCmd::LeaveNOut {
            n,
            rewrite,
            input,
            out,
        } => {
            let tree = load_tree(&input)?;
            fs::write(out, leave_n_out(&tree, n, rewrite)?.to_json()?)?;
            Ok(())
        }
    }
}
