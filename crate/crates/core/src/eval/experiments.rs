use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bm25::{Bm25Index, Bm25Params};
use super::metrics::{macro_hits_grouped, random_hit_probability};
use super::report::{run_eval, Bm25Ranker, EvalOptions, EvalReport};
use super::{
    benchmark_examples, synthetic_benchmark, BenchmarkConversation, EvalError, EvalExample,
};
use crate::corpus::{
    derive_artist_collections, make_fixture_corpus, split_collections, CollectionSplit, Corpus,
};
use crate::crs::{train_crs, CrsConfig, Retriever, SelectionReport};
use crate::embedder::{
    index_collections, index_items, train_dual_encoder, DualEncoderConfig, EmbeddingIndex,
    EncoderParams, TrainReport,
};
use crate::exec::Execution;
use crate::rng;
use crate::seqgen::{random_sequences, WalkConfig, Walker};
use crate::uttgen::{
    conversations_from_sequences, generate_dataset, Conversation, DatasetConfig, DatasetStats,
    UtteranceSource,
};

/// Everything that defines a desk-scale experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_items: usize,
    pub n_collections: usize,
    pub derive_artists: bool,
    /// Train/dev/test fractions of collections, used for walk targets.
    pub split: (f64, f64, f64),
    pub encoder: DualEncoderConfig,
    pub walk: WalkConfig,
    pub crs: CrsConfig,
    pub dataset: DatasetConfig,
    pub train_conversations: usize,
    pub dev_conversations: usize,
    pub test_conversations: usize,
    /// Slate items shown (and rated) per benchmark turn.
    pub shown: usize,
    /// Start CRS training from the collection-trained encoder.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_collections: 200,
            derive_artists: false,
            split: (0.8, 0.1, 0.1),
            encoder: DualEncoderConfig::default(),
            walk: WalkConfig::default(),
            crs: CrsConfig::default(),
            dataset: DatasetConfig::default(),
            train_conversations: 5000,
            dev_conversations: 100,
            test_conversations: 300,
            shown: 10,
            warm_start: false,
            seed: 0,
        }
    }
}

/// The shared, seed-independent part of an experiment: corpus, the
/// collection-trained encoder and its indices, and the dev/test benchmarks.
pub struct Setup {
    pub config: ExperimentConfig,
    pub corpus: Corpus,
    pub split: CollectionSplit,
    pub encoder: EncoderParams,
    pub encoder_report: TrainReport,
    pub collections: EmbeddingIndex,
    pub items: EmbeddingIndex,
    pub dev: Vec<EvalExample>,
    pub test: Vec<BenchmarkConversation>,
}

fn walk_with_pool(base: &WalkConfig, pool: &[String]) -> WalkConfig {
    WalkConfig {
        target_pool: Some(pool.to_vec()),
        ..base.clone()
    }
}

impl Setup {
    pub fn prepare(config: &ExperimentConfig, exec: Execution) -> Result<Self, EvalError> {
        let corpus_seed = rng::derive(config.seed, "corpus");
        let mut corpus = make_fixture_corpus(config.n_items, config.n_collections, corpus_seed)?;
        if config.derive_artists {
            corpus = derive_artist_collections(&corpus);
        }
        let split = split_collections(&corpus, config.split, rng::derive(config.seed, "split"))?;
        let (encoder, encoder_report) = train_dual_encoder(&corpus, &config.encoder)?;
        let tok = &config.encoder.tokenizer;
        let collections = index_collections(
            &encoder,
            tok,
            &corpus,
            config.encoder.n_seed,
            rng::derive(config.seed, "collection-index"),
            exec,
        )?;
        let items = index_items(&encoder, tok, &corpus, exec)?;
        let mut setup = Self {
            config: config.clone(),
            corpus,
            split,
            encoder,
            encoder_report,
            collections,
            items,
            dev: Vec::new(),
            test: Vec::new(),
        };
        let dev_convs = setup.held_out(&setup.split.dev, config.dev_conversations, "dev", exec)?;
        setup.dev = benchmark_examples(
            &synthetic_benchmark(&dev_convs, &setup.corpus, config.shown)?,
            false,
        );
        let test_convs =
            setup.held_out(&setup.split.test, config.test_conversations, "test", exec)?;
        setup.test = synthetic_benchmark(&test_convs, &setup.corpus, config.shown)?;
        Ok(setup)
    }

    fn held_out(
        &self,
        pool: &[String],
        count: usize,
        label: &str,
        exec: Execution,
    ) -> Result<Vec<Conversation>, EvalError> {
        let walker = Walker::new(
            &self.corpus,
            &self.collections,
            &self.items,
            walk_with_pool(&self.config.walk, pool),
        )?;
        let ds = DatasetConfig {
            seed: rng::derive(self.config.seed, label),
            ..self.config.dataset.clone()
        };
        Ok(generate_dataset(
            &walker,
            &self.corpus,
            count,
            UtteranceSource::Template,
            &ds,
            exec,
        )?
        .conversations)
    }

    /// Training conversations for one ablation mode and seed.
    pub fn training_conversations(
        &self,
        mode: AblationMode,
        count: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<(Vec<Conversation>, DatasetStats), EvalError> {
        let ds = DatasetConfig {
            seed: rng::derive(seed, "train"),
            ..self.config.dataset.clone()
        };
        let walker = Walker::new(
            &self.corpus,
            &self.collections,
            &self.items,
            walk_with_pool(&self.config.walk, &self.split.train),
        )?;
        let out = match mode {
            AblationMode::Full => generate_dataset(
                &walker,
                &self.corpus,
                count,
                UtteranceSource::Template,
                &ds,
                exec,
            )?,
            AblationMode::RandomDescription => generate_dataset(
                &walker,
                &self.corpus,
                count,
                UtteranceSource::RandomDescription,
                &ds,
                exec,
            )?,
            AblationMode::RandomSequence => {
                let seqs =
                    random_sequences(&self.corpus, self.config.walk.turns, count, ds.seed, exec);
                conversations_from_sequences(
                    &seqs,
                    &self.corpus,
                    UtteranceSource::Template,
                    &ds,
                    exec,
                )?
            }
        };
        Ok((out.conversations, out.stats))
    }

    /// Trains a CRS on `convs` with training randomness drawn from `seed`.
    pub fn train(
        &self,
        convs: &[Conversation],
        seed: u64,
        exec: Execution,
    ) -> Result<(EncoderParams, SelectionReport), EvalError> {
        let mut crs = self.config.crs.clone();
        crs.sgd.seed = rng::derive(seed, "sgd");
        crs.init_seed = rng::derive(seed, "init");
        let init = self.config.warm_start.then_some(&self.encoder);
        Ok(train_crs(convs, &self.corpus, &crs, &self.dev, init, exec)?)
    }

    pub fn retriever<'a>(
        &'a self,
        params: &'a EncoderParams,
        items: &'a EmbeddingIndex,
    ) -> Retriever<'a> {
        Retriever {
            params,
            items,
            corpus: &self.corpus,
            tokenizer: &self.config.crs.tokenizer,
            cap: self.config.crs.slate_cap,
        }
    }

    /// Test-set report for an encoder.
    pub fn evaluate(
        &self,
        system: &str,
        params: &EncoderParams,
        options: &EvalOptions,
        exec: Execution,
    ) -> Result<EvalReport, EvalError> {
        let items = index_items(params, &self.config.crs.tokenizer, &self.corpus, exec)?;
        run_eval(
            system,
            &self.retriever(params, &items),
            &self.test,
            options,
            exec,
        )
    }

    /// Expected macro Hits@k of a uniformly random ranking on the test set.
    pub fn random_baseline(&self, k: usize) -> Result<f64, EvalError> {
        let n = self.corpus.num_items();
        let examples = benchmark_examples(&self.test, false);
        macro_hits_grouped(examples.iter().map(|e| {
            (
                e.conversation_id.as_str(),
                random_hit_probability(n, e.target.len(), k),
            )
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Walk sequences with templated utterances.
    Full,
    /// One uniformly drawn collection per turn.
    RandomSequence,
    /// Walk sequences, utterances quoting random descriptions.
    RandomDescription,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::Full,
        AblationMode::RandomSequence,
        AblationMode::RandomDescription,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::RandomSequence => "random-sequence",
            AblationMode::RandomDescription => "random-description",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub crs: EvalReport,
    pub untrained: EvalReport,
    pub collection_trained: EvalReport,
    pub bm25: EvalReport,
    pub random: BTreeMap<usize, f64>,
    pub selection: SelectionReport,
    pub dataset: DatasetStats,
}

/// Trains the CRS on generated conversations and compares it with the
/// baselines on the held-out benchmark.
pub fn run_end_to_end(setup: &Setup, exec: Execution) -> Result<EndToEndReport, EvalError> {
    let cfg = &setup.config;
    let options = EvalOptions::default();
    let (convs, dataset) = setup.training_conversations(
        AblationMode::Full,
        cfg.train_conversations,
        cfg.seed,
        exec,
    )?;
    let (params, selection) = setup.train(&convs, cfg.seed, exec)?;
    let crs = setup.evaluate("crs", &params, &options, exec)?;
    let untrained_params = EncoderParams::random(
        cfg.crs.tokenizer.vocab_size,
        cfg.crs.dim,
        rng::derive(cfg.seed, "untrained"),
    )?;
    let untrained = setup.evaluate("untrained-encoder", &untrained_params, &options, exec)?;
    let collection_trained =
        setup.evaluate("collection-trained-encoder", &setup.encoder, &options, exec)?;
    let bm25_index = Bm25Index::from_corpus(&setup.corpus, Bm25Params::default());
    let bm25 = run_eval(
        "bm25",
        &Bm25Ranker(&bm25_index),
        &setup.test,
        &options,
        exec,
    )?;
    let random = options
        .ks
        .iter()
        .map(|&k| Ok((k, setup.random_baseline(k)?)))
        .collect::<Result<_, EvalError>>()?;
    Ok(EndToEndReport {
        crs,
        untrained,
        collection_trained,
        bm25,
        random,
        selection,
        dataset,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Test macro Hits@100 per mode, one entry per seed.
    pub hits_at_100: BTreeMap<AblationMode, Vec<f64>>,
}

impl AblationReport {
    pub fn median(&self, mode: AblationMode) -> f64 {
        self.hits_at_100.get(&mode).map_or(f64::NAN, |v| median(v))
    }
}

/// One CRS per (mode, seed), all with the same budget and evaluated on the
/// same held-out benchmark.
pub fn run_ablation(
    setup: &Setup,
    modes: &[AblationMode],
    budget: usize,
    seeds: &[u64],
    exec: Execution,
) -> Result<AblationReport, EvalError> {
    let options = EvalOptions {
        ks: vec![100],
        ..EvalOptions::default()
    };
    let mut hits_at_100: BTreeMap<AblationMode, Vec<f64>> = BTreeMap::new();
    for &mode in modes {
        for &seed in seeds {
            let (convs, _) = setup.training_conversations(mode, budget, seed, exec)?;
            let (params, _) = setup.train(&convs, seed, exec)?;
            let report = setup.evaluate(mode.as_str(), &params, &options, exec)?;
            hits_at_100.entry(mode).or_default().push(report.hits(100));
        }
    }
    Ok(AblationReport {
        budget,
        seeds: seeds.to_vec(),
        hits_at_100,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Test macro Hits@100 per size, one entry per seed.
    pub hits_at_100: BTreeMap<usize, Vec<f64>>,
}

impl SweepReport {
    pub fn median(&self, size: usize) -> f64 {
        self.hits_at_100.get(&size).map_or(f64::NAN, |v| median(v))
    }
}

/// One CRS per (size, seed); the size-`n` training set is the first `n`
/// conversations of the seed's largest set.
pub fn run_scaling_sweep(
    setup: &Setup,
    sizes: &[usize],
    seeds: &[u64],
    exec: Execution,
) -> Result<SweepReport, EvalError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::Argument(
            "sizes must be non-empty and ascending".into(),
        ));
    }
    let options = EvalOptions {
        ks: vec![100],
        ..EvalOptions::default()
    };
    let largest = *sizes.last().expect("non-empty");
    let mut hits_at_100: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &seed in seeds {
        let (convs, _) = setup.training_conversations(AblationMode::Full, largest, seed, exec)?;
        for &n in sizes {
            let (params, _) = setup.train(&convs[..n], seed, exec)?;
            let report = setup.evaluate("crs", &params, &options, exec)?;
            hits_at_100.entry(n).or_default().push(report.hits(100));
        }
    }
    Ok(SweepReport {
        sizes: sizes.to_vec(),
        seeds: seeds.to_vec(),
        hits_at_100,
    })
}
