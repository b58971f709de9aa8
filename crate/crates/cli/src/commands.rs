use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use kecr_core::context::encode_conversations;
use kecr_core::corpus::load_corpus;
use kecr_core::evaluator::replay;
use kecr_core::{mi, trainer, Config, EncodedConversation, Engine, KnowledgeGraph, Model, TemplateSet};

use crate::server;

/// An input file that does not exist. Maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("input file not found: {}", .0.display())]
pub struct MissingInput(pub PathBuf);

#[derive(Debug, Parser)]
#[command(name = "kecr", version, about = "Knowledge-graph conversational recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse triples and aliases, expand the graph, and write it as a binary.
    BuildKg {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        aliases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mutual-information pretraining of the graph and context encoders.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV of the MI bound and classifier outputs.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Full training. With `--init`, continues from a checkpoint and runs
    /// only the joint phase.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Replay the held-out split and write metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Interactive terminal conversation.
    Chat {
        #[command(flatten)]
        serve: ServeArgs,
    },
    /// Start the session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[command(flatten)]
        serve: ServeArgs,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub templates: PathBuf,
    /// Inference settings (gamma, damping, top_k). Architecture fields must
    /// match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// External generator endpoint; templates are used when unset or failing.
    #[arg(long)]
    pub generator: Option<String>,
}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(MissingInput(path.to_path_buf()).into());
    }
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            require(p)?;
            Config::load(p)?
        }
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn load_kg(path: &Path) -> anyhow::Result<KnowledgeGraph> {
    require(path)?;
    let kg = KnowledgeGraph::load(path).with_context(|| format!("loading graph {}", path.display()))?;
    Ok(kg.expand())
}

fn load_data(data: &DataArgs, model: &Model, kg: &KnowledgeGraph) -> anyhow::Result<Vec<EncodedConversation>> {
    require(&data.corpus)?;
    let (records, diag) = load_corpus(&data.corpus, kg)?;
    log::info!("corpus: {} conversations, {:?}", records.len(), diag);
    Ok(encode_conversations(records, kg, &model.embedder))
}

/// Loads the checkpoint, graph and templates for serving. A config file may
/// change inference settings but not the architecture.
pub fn load_engine(args: &ServeArgs) -> anyhow::Result<Engine> {
    require(&args.checkpoint)?;
    require(&args.templates)?;
    let kg = load_kg(&args.kg)?;
    let mut model = Model::load(&args.checkpoint)?;
    if let Some(p) = &args.config {
        let cfg = load_config(Some(p), None)?;
        let m = &model.config;
        if (cfg.embed_dim, cfg.rgcn_layers, cfg.norm_mode, cfg.token_buckets)
            != (m.embed_dim, m.rgcn_layers, m.norm_mode, m.token_buckets)
        {
            bail!("config {} does not match the checkpoint architecture", p.display());
        }
        model.config.gamma = cfg.gamma;
        model.config.damping_normalize = cfg.damping_normalize;
        model.config.top_k = cfg.top_k;
    }
    let templates = TemplateSet::load(&args.templates)?;
    let mut engine = Engine::new(model, kg, templates)?;
    if let Some(url) = &args.generator {
        engine = engine.with_adapter(kecr_core::GeneratorAdapter::new(url, std::time::Duration::from_secs(5)));
    }
    Ok(engine)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildKg { triples, aliases, out } => {
            require(&triples)?;
            require(&aliases)?;
            let kg = KnowledgeGraph::load_triples(&triples, &aliases)?.expand();
            kg.save(&out)?;
            println!(
                "entities: {} relations: {} triples: {}",
                kg.entity_count(),
                kg.relation_count(),
                kg.triple_count()
            );
        }
        Command::Pretrain { data, out, trace } => {
            let cfg = load_config(data.config.as_deref(), data.seed)?;
            let kg = load_kg(&data.kg)?;
            let mut model = Model::init(&kg, &cfg);
            let convs = load_data(&data, &model, &kg)?;
            let stats = trainer::pretrain_phase(&mut model, &convs, &kg)?;
            if let Some(t) = trace {
                mi::write_trace(&t, &stats)?;
            }
            model.save(&out)?;
            if let Some(last) = stats.last() {
                println!(
                    "pretrained {} epochs: L_MI {:.5}, pos g {:.4}, neg g {:.4}",
                    stats.len(),
                    last.mean_l_mi,
                    last.pos_mean_g,
                    last.neg_mean_g
                );
            }
        }
        Command::Train { data, out, init } => {
            let kg = load_kg(&data.kg)?;
            let (mut model, pretrain) = match &init {
                Some(p) => {
                    require(p)?;
                    let mut m = Model::load(p)?;
                    if let Some(c) = &data.config {
                        let cfg = load_config(Some(c), None)?;
                        let arch = |c: &Config| (c.embed_dim, c.rgcn_layers, c.norm_mode, c.token_buckets);
                        if arch(&cfg) != arch(&m.config) {
                            bail!("config does not match the architecture of {}", p.display());
                        }
                        m.config = cfg;
                    }
                    if let Some(s) = data.seed {
                        m.config.seed = s;
                    }
                    (m, false)
                }
                None => (Model::init(&kg, &load_config(data.config.as_deref(), data.seed)?), true),
            };
            let convs = load_data(&data, &model, &kg)?;
            let report = trainer::train_phases(&mut model, &convs, &kg, pretrain)?;
            model.save(&out)?;
            match report.best_epoch.and_then(|e| report.joint.get(e)) {
                Some(best) => println!(
                    "trained: best epoch {} (val L_a {:.5}, val L_r {:.5})",
                    best.epoch, best.val_la, best.val_lr
                ),
                None => println!("trained: no joint epochs"),
            }
        }
        Command::Eval {
            checkpoint,
            kg,
            corpus,
            templates,
            out,
        } => {
            let engine = load_engine(&ServeArgs {
                checkpoint,
                kg,
                templates,
                config: None,
                seed: 0,
                generator: None,
            })?;
            require(&corpus)?;
            let (records, _) = load_corpus(&corpus, &engine.kg)?;
            let convs = encode_conversations(records, &engine.kg, &engine.model.embedder);
            let split = trainer::split_conversations(convs.len(), engine.model.config.seed);
            let test: Vec<EncodedConversation> = split.test.iter().map(|&i| convs[i].clone()).collect();
            let result = replay(&engine, &test)?;
            std::fs::write(&out, serde_json::to_string_pretty(&result.metrics)?)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{}", serde_json::to_string(&result.metrics)?);
        }
        Command::Chat { serve } => chat(&load_engine(&serve)?, serve.seed)?,
        Command::Serve { port, serve } => {
            let engine = load_engine(&serve)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(engine, serve.seed, port))?;
        }
    }
    Ok(())
}

fn chat(engine: &Engine, seed: u64) -> anyhow::Result<()> {
    let mut state = engine.new_state();
    let mut last: Option<String> = None;
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    write!(out, "> ")?;
    out.flush()?;
    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            write!(out, "> ")?;
            out.flush()?;
            continue;
        }
        let turn_seed = seed.wrapping_add(state.round as u64);
        let turn = engine.respond(&mut state, last.as_deref(), text, turn_seed)?;
        let path: Vec<&str> = turn
            .reasoning
            .iter()
            .flat_map(|r| [Some(r.start), Some(r.step1.entity), r.step2.map(|s| s.entity)])
            .flatten()
            .map(|e| engine.kg.name(e))
            .collect();
        writeln!(out, "{}", turn.reply)?;
        writeln!(out, "  [{}] {}", turn.action.as_str(), path.join(" -> "))?;
        write!(out, "> ")?;
        out.flush()?;
        last = Some(turn.reply);
    }
    Ok(())
}
