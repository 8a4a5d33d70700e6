use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use convcurate::corpus::{
    derive_artist_collections, load_corpus, make_fixture_corpus, save_corpus,
};
use convcurate::crs::{train_crs, CrsConfig, HistoryTurn, Retriever};
use convcurate::embedder::{
    index_collections, index_items, train_dual_encoder, DualEncoderConfig, EmbeddingIndex,
    EncoderParams, Tokenizer,
};
use convcurate::eval::{
    benchmark_examples, read_benchmark, run_ablation, run_end_to_end, run_eval, run_scaling_sweep,
    synthetic_benchmark, write_benchmark, AblationMode, Bm25Index, Bm25Params, Bm25Ranker,
    EvalOptions, EvalReport, ExperimentConfig, Ranker, Setup,
};
use convcurate::interactive::{Bm25System, EncoderSystem, LiveSystem, SessionConfig, SessionStore};
use convcurate::seqgen::{random_sequences, read_sequences, write_sequences, WalkConfig, Walker};
use convcurate::uttgen::{
    conversations_from_sequences, read_conversations, write_conversations, DatasetConfig,
    FilterRules, InpaintMode, UtteranceSource,
};
use convcurate::{Corpus, Execution};
use convcurate_service::{HttpInpainter, InpainterSettings};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "convcurate",
    version,
    about = "Synthetic curation conversations and conversational retrieval"
)]
struct Cli {
    /// Run batch work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus files.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// The item/collection dual encoder.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Slate sequences from collection walks.
    #[command(subcommand)]
    Seqgen(SeqgenCmd),
    /// User utterances and filtering.
    #[command(subcommand)]
    Uttgen(UttgenCmd),
    /// The conversational retriever.
    #[command(subcommand)]
    Crs(CrsCmd),
    /// Offline evaluation and experiments.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// The live interleaving API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Checks a corpus file and prints a summary.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Adds one artist collection per artist.
    DeriveArtists {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic corpus.
    Fixture {
        #[arg(long, default_value_t = 2000)]
        items: usize,
        #[arg(long, default_value_t = 200)]
        collections: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Trains the dual encoder on collection/member pairs.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON encoder settings; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Builds item and collection indices.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, default_value_t = 5)]
        n_seed: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        items_out: PathBuf,
        #[arg(long)]
        collections_out: PathBuf,
    },
    /// Nearest neighbors of a free-text query.
    Query {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum SeqgenCmd {
    /// Generates slate sequences.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        collections: PathBuf,
        /// JSON walk settings; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One uniformly drawn collection per turn instead of a walk.
        #[arg(long)]
        random: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum UttMode {
    Inpaint,
    Template,
    RandomDescription,
}

#[derive(Subcommand)]
enum UttgenCmd {
    /// Turns sequences into filtered conversations.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long, value_enum, default_value_t = UttMode::Template)]
        mode: UttMode,
        /// Inpainter URL (inpaint mode).
        #[arg(long)]
        endpoint: Option<String>,
        /// Ask the inpainter for all utterances in one request.
        #[arg(long)]
        one_shot: bool,
        /// JSON filter rules; omitted fields take defaults.
        #[arg(long)]
        filters: Option<PathBuf>,
        /// Blocklist terms, one per line.
        #[arg(long)]
        blocklist: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        concurrency: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CrsCmd {
    /// Trains the retriever on conversations, selecting a checkpoint on a
    /// dev benchmark.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        conversations: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// JSON retriever settings; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated checkpoint steps.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// Start from these parameters instead of a random table.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranks items for an utterance with optional history.
    Retrieve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        /// JSON list of {"utterance", "slate"} turns, oldest first.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        utterance: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        slate_cap: usize,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment settings; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Scores systems on a benchmark.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        /// `name=path` of a trained encoder; repeatable.
        #[arg(long)]
        encoder: Vec<String>,
        /// Also score BM25.
        #[arg(long)]
        bm25: bool,
        #[arg(long, value_delimiter = ',', default_value = "10,20,100")]
        ks: Vec<usize>,
        #[arg(long)]
        exclude_seen: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compares training-data generators at a fixed budget.
    Ablate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 5000)]
        budget: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Hits@100 as a function of training-set size.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000,8000")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Generates, trains and compares against baselines in one go.
    EndToEnd {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Rated benchmark from generated conversations: an item is liked iff
    /// it belongs to the conversation's target collection.
    BenchFromSynthetic {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        conversations: PathBuf,
        #[arg(long, default_value_t = 10)]
        shown: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Two or more of `bm25` and `name=encoder-path`, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    systems: Vec<String>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    log_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_rounds: usize,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn write_json<T: Serialize>(value: &T, path: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn encoder(path: &Path) -> Result<(EncoderParams, Tokenizer)> {
    let params =
        EncoderParams::load(path).with_context(|| format!("loading encoder {}", path.display()))?;
    let tok = Tokenizer::with_vocab(params.vocab());
    Ok((params, tok))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Corpus(cmd) => run_corpus(cmd),
        Command::Embed(cmd) => run_embed(cmd, exec),
        Command::Seqgen(cmd) => run_seqgen(cmd, exec),
        Command::Uttgen(cmd) => run_uttgen(cmd, exec),
        Command::Crs(cmd) => run_crs(cmd, exec),
        Command::Eval(cmd) => run_eval_cmd(cmd, exec),
        Command::Serve(args) => serve(args, exec),
    }
}

fn run_corpus(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Validate { corpus: path } => {
            let c = corpus(&path)?;
            println!("items: {}", c.num_items());
            println!("collections: {}", c.num_collections());
            for t in c.types() {
                println!("  {t}: {}", c.collections_of_type(t).count());
            }
        }
        CorpusCmd::DeriveArtists { corpus: path, out } => {
            let derived = derive_artist_collections(&corpus(&path)?);
            save_corpus(&derived, &out)?;
            println!("{} collections", derived.num_collections());
        }
        CorpusCmd::Fixture {
            items,
            collections,
            seed,
            out,
        } => {
            save_corpus(&make_fixture_corpus(items, collections, seed)?, &out)?;
        }
    }
    Ok(())
}

fn run_embed(cmd: EmbedCmd, exec: Execution) -> Result<()> {
    match cmd {
        EmbedCmd::Train {
            corpus: path,
            config,
            steps,
            seed,
            out,
        } => {
            let mut cfg: DualEncoderConfig = read_json_or_default(config.as_ref())?;
            if let Some(s) = steps {
                cfg.sgd.steps = s;
            }
            if let Some(s) = seed {
                cfg.sgd.seed = s;
                cfg.init_seed = s;
            }
            let (params, report) = train_dual_encoder(&corpus(&path)?, &cfg)?;
            params.save(&out)?;
            println!(
                "probe loss {:.4} -> {:.4} after {} steps",
                report.initial_probe_loss, report.final_probe_loss, report.steps
            );
        }
        EmbedCmd::Index {
            corpus: path,
            encoder: enc,
            n_seed,
            seed,
            items_out,
            collections_out,
        } => {
            let c = corpus(&path)?;
            let (params, tok) = encoder(&enc)?;
            index_items(&params, &tok, &c, exec)?.save(&items_out)?;
            index_collections(&params, &tok, &c, n_seed, seed, exec)?.save(&collections_out)?;
        }
        EmbedCmd::Query {
            encoder: enc,
            index,
            text,
            k,
        } => {
            let (params, tok) = encoder(&enc)?;
            let idx = EmbeddingIndex::load(&index)?;
            let q = params.encode(&tok.tokenize(&text)).vector;
            for n in idx.nearest(&q, k) {
                println!("{:.4}\t{}", n.score, n.id);
            }
        }
    }
    Ok(())
}

fn run_seqgen(cmd: SeqgenCmd, exec: Execution) -> Result<()> {
    let SeqgenCmd::Run {
        corpus: path,
        items,
        collections,
        config,
        count,
        seed,
        random,
        out,
    } = cmd;
    let c = corpus(&path)?;
    let cfg: WalkConfig = read_json_or_default(config.as_ref())?;
    let seqs = if random {
        random_sequences(&c, cfg.turns, count, seed, exec)
    } else {
        let items = EmbeddingIndex::load(&items)?;
        let colls = EmbeddingIndex::load(&collections)?;
        Walker::new(&c, &colls, &items, cfg)?.generate_sequences(count, seed, exec)?
    };
    let mut w = create(&out)?;
    write_sequences(&seqs, &mut w)?;
    w.flush()?;
    println!("{} sequences", seqs.len());
    Ok(())
}

fn run_uttgen(cmd: UttgenCmd, exec: Execution) -> Result<()> {
    let UttgenCmd::Run {
        corpus: path,
        sequences,
        mode,
        endpoint,
        one_shot,
        filters,
        blocklist,
        seed,
        concurrency,
        out,
    } = cmd;
    let c = corpus(&path)?;
    let seqs = read_sequences(open(&sequences)?)?;
    let mut rules: FilterRules = read_json_or_default(filters.as_ref())?;
    if let Some(b) = blocklist {
        rules
            .blocklist
            .extend(FilterRules::read_blocklist(open(&b)?)?);
    }
    let cfg = DatasetConfig {
        seed,
        rules,
        inpaint_mode: if one_shot {
            InpaintMode::OneShot
        } else {
            InpaintMode::Iterative
        },
        concurrency,
    };
    let client;
    let source = match mode {
        UttMode::Template => UtteranceSource::Template,
        UttMode::RandomDescription => UtteranceSource::RandomDescription,
        UttMode::Inpaint => {
            let url = endpoint.ok_or_else(|| anyhow!("--endpoint is required in inpaint mode"))?;
            let settings = InpainterSettings::from_env().map_err(|e| anyhow!(e))?;
            client = HttpInpainter::new(url, settings);
            UtteranceSource::Inpaint(&client)
        }
    };
    let ds = conversations_from_sequences(&seqs, &c, source, &cfg, exec)?;
    let mut w = create(&out)?;
    write_conversations(&ds.conversations, &mut w)?;
    w.flush()?;
    eprintln!("{}", serde_json::to_string(&ds.stats)?);
    eprintln!(
        "utterances {:.2}s, filtering {:.2}s",
        ds.timings.utterances.as_secs_f64(),
        ds.timings.filtering.as_secs_f64()
    );
    Ok(())
}

fn run_crs(cmd: CrsCmd, exec: Execution) -> Result<()> {
    match cmd {
        CrsCmd::Train {
            corpus: path,
            conversations,
            dev,
            config,
            checkpoints,
            init,
            seed,
            out,
        } => {
            let c = corpus(&path)?;
            let convs = read_conversations(open(&conversations)?)?;
            let dev = benchmark_examples(&read_benchmark(open(&dev)?)?, false);
            let mut cfg: CrsConfig = read_json_or_default(config.as_ref())?;
            if let Some(cp) = checkpoints {
                cfg.checkpoints = cp;
            }
            cfg.sgd.seed = seed;
            cfg.init_seed = seed;
            let init = init
                .map(|p| encoder(&p).map(|(params, _)| params))
                .transpose()?;
            let (params, report) = train_crs(&convs, &c, &cfg, &dev, init.as_ref(), exec)?;
            params.save(&out)?;
            for cp in &report.checkpoints {
                println!(
                    "step {:>6}  dev hits@10 {:.4}{}",
                    cp.step,
                    cp.dev_hits_at_10,
                    if cp.selected { "  *" } else { "" }
                );
            }
        }
        CrsCmd::Retrieve {
            corpus: path,
            encoder: enc,
            history,
            utterance,
            k,
            slate_cap,
        } => {
            let c = corpus(&path)?;
            let (params, tok) = encoder(&enc)?;
            let items = index_items(&params, &tok, &c, exec)?;
            let history: Vec<HistoryTurn> = read_json_or_default(history.as_ref())?;
            let r = Retriever {
                params: &params,
                items: &items,
                corpus: &c,
                tokenizer: &tok,
                cap: slate_cap,
            };
            for id in r.retrieve(&history, &utterance, k) {
                let title = c.item(&id).map_or("", |i| i.title.as_str());
                println!("{id}\t{title}");
            }
        }
    }
    Ok(())
}

fn experiment(args: &ExperimentArgs, exec: Execution) -> Result<Setup> {
    let mut cfg: ExperimentConfig = read_json_or_default(args.config.as_ref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(Setup::prepare(&cfg, exec)?)
}

fn print_report(r: &EvalReport) {
    let hits = r
        .macro_hits
        .iter()
        .map(|(k, v)| format!("H@{k} {v:.4}"))
        .collect::<Vec<_>>()
        .join("  ");
    println!("{:<28} {hits}", r.system);
}

fn run_eval_cmd(cmd: EvalCmd, exec: Execution) -> Result<()> {
    match cmd {
        EvalCmd::Run {
            corpus: path,
            bench,
            encoder: encoders,
            bm25,
            ks,
            exclude_seen,
            out,
        } => {
            let c = corpus(&path)?;
            let bench = read_benchmark(open(&bench)?)?;
            let opts = EvalOptions {
                ks,
                exclude_seen,
                ..EvalOptions::default()
            };
            if encoders.is_empty() && !bm25 {
                bail!("nothing to evaluate: pass --encoder and/or --bm25");
            }
            let mut reports = Vec::new();
            for spec in &encoders {
                let (name, file) = spec
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--encoder takes name=path, got `{spec}`"))?;
                let (params, tok) = encoder(Path::new(file))?;
                let items = index_items(&params, &tok, &c, exec)?;
                let r = Retriever {
                    params: &params,
                    items: &items,
                    corpus: &c,
                    tokenizer: &tok,
                    cap: convcurate::crs::DEFAULT_SLATE_CAP,
                };
                reports.push(run_eval(name, &r as &dyn Ranker, &bench, &opts, exec)?);
            }
            if bm25 {
                let idx = Bm25Index::from_corpus(&c, Bm25Params::default());
                reports.push(run_eval("bm25", &Bm25Ranker(&idx), &bench, &opts, exec)?);
            }
            for r in &reports {
                print_report(r);
            }
            if out.is_some() {
                write_json(&reports, out.as_ref())?;
            }
        }
        EvalCmd::Ablate { exp, budget, seeds } => {
            let setup = experiment(&exp, exec)?;
            let report = run_ablation(&setup, &AblationMode::ALL, budget, &seeds, exec)?;
            for mode in AblationMode::ALL {
                println!(
                    "{:<20} median H@100 {:.4}",
                    mode.as_str(),
                    report.median(mode)
                );
            }
            if exp.out.is_some() {
                write_json(&report, exp.out.as_ref())?;
            }
        }
        EvalCmd::Sweep { exp, sizes, seeds } => {
            let setup = experiment(&exp, exec)?;
            let report = run_scaling_sweep(&setup, &sizes, &seeds, exec)?;
            for &n in &report.sizes {
                println!("{n:>8} median H@100 {:.4}", report.median(n));
            }
            if exp.out.is_some() {
                write_json(&report, exp.out.as_ref())?;
            }
        }
        EvalCmd::EndToEnd { exp } => {
            let setup = experiment(&exp, exec)?;
            let report = run_end_to_end(&setup, exec)?;
            for r in [
                &report.crs,
                &report.untrained,
                &report.collection_trained,
                &report.bm25,
            ] {
                print_report(r);
            }
            let random = report
                .random
                .iter()
                .map(|(k, v)| format!("H@{k} {v:.4}"))
                .collect::<Vec<_>>()
                .join("  ");
            println!("{:<28} {random}", "random");
            if exp.out.is_some() {
                write_json(&report, exp.out.as_ref())?;
            }
        }
        EvalCmd::BenchFromSynthetic {
            corpus: path,
            conversations,
            shown,
            out,
        } => {
            let c = corpus(&path)?;
            let convs = read_conversations(open(&conversations)?)?;
            let bench = synthetic_benchmark(&convs, &c, shown)?;
            let mut w = create(&out)?;
            write_benchmark(&bench, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn serve(args: ServeArgs, exec: Execution) -> Result<()> {
    let c = Arc::new(corpus(&args.corpus)?);
    let mut systems: Vec<(String, Arc<dyn LiveSystem>)> = Vec::new();
    for spec in &args.systems {
        let system: (String, Arc<dyn LiveSystem>) = if spec == "bm25" {
            (
                "bm25".into(),
                Arc::new(Bm25System(Bm25Index::from_corpus(
                    &c,
                    Bm25Params::default(),
                ))),
            )
        } else {
            let (name, file) = spec
                .split_once('=')
                .ok_or_else(|| anyhow!("systems are `bm25` or name=path, got `{spec}`"))?;
            let (params, tokenizer) = encoder(Path::new(file))?;
            let items = index_items(&params, &tokenizer, &c, exec)?;
            (
                name.to_string(),
                Arc::new(EncoderSystem {
                    params,
                    items,
                    tokenizer,
                    cap: convcurate::crs::DEFAULT_SLATE_CAP,
                    corpus: c.clone(),
                }),
            )
        };
        systems.push(system);
    }
    let config = SessionConfig {
        min_rounds: args.min_rounds,
        ..SessionConfig::default()
    };
    let store = Arc::new(SessionStore::new(c, systems, config, args.log_dir)?);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", args.host, args.port))?;
    eprintln!("listening on http://{addr}");
    tokio::runtime::Runtime::new()?.block_on(convcurate_service::serve(store, addr))?;
    Ok(())
}
