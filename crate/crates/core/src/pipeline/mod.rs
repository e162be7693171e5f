//! File-backed pipeline commands. Each `cmd_*` reads its inputs from the
//! workdir, writes its artifacts there and appends them to the run manifest.

pub mod config;
pub mod stages;
pub mod workdir;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;
pub use workdir::{ManifestEntry, Workdir};

use crate::annotation::{self, Annotator, HttpAnnotator, LabelCache, LabelRecord, MockAnnotator, PromptRecord, PromptSpec};
use crate::corpus::{self, expand_problems, Conversation, PassageCollection, PassageFormat, ReformulationProblem};
use crate::dense::{DenseIndex, Embedder, ExternalEmbeddings, HashedTfIdf};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalRun, ReformulationRecord, DEFAULT_KS};
use crate::fusion::{write_alignment_csv, AlignmentPoint, RankedCandidateSet};
use crate::model::SeqModel;
use crate::retrieval::Retrievers;
use crate::sparse::SparseIndex;
use crate::text::Analyzer;
use crate::training::{stage1_train, stage2_train, CheckpointHook};
use config::EmbedderConfig;
use stages::CandidateSet;
use workdir as wd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Index,
    Annotate,
    Stage1,
    GenCandidates,
    Rank,
    Stage2,
    Reformulate,
    Evaluate,
    TraceAlignment,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Index,
        Stage::Annotate,
        Stage::Stage1,
        Stage::GenCandidates,
        Stage::Rank,
        Stage::Stage2,
        Stage::Reformulate,
        Stage::Evaluate,
        Stage::TraceAlignment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Index => "index",
            Stage::Annotate => "annotate",
            Stage::Stage1 => "stage1",
            Stage::GenCandidates => "gen-candidates",
            Stage::Rank => "rank",
            Stage::Stage2 => "stage2",
            Stage::Reformulate => "reformulate",
            Stage::Evaluate => "evaluate",
            Stage::TraceAlignment => "trace-alignment",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    /// Comma-separated stage names.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(Stage::parse).collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A config bound to its locked workdir.
pub struct Run {
    pub config: PipelineConfig,
    pub workdir: Workdir,
    /// Allow overwriting existing indices.
    pub force: bool,
}

impl Run {
    pub fn open(config: PipelineConfig, force: bool) -> Result<Self> {
        let workdir = Workdir::open(&config.paths.workdir)?;
        Ok(Self { config, workdir, force })
    }

    fn record(&self, stage: Stage, name: &str) -> Result<ManifestEntry> {
        self.workdir.record(stage.name(), name, self.config.seed)
    }

    fn passages(&self) -> Result<PassageCollection> {
        let p = self.workdir.require(wd::PASSAGES, "ingest")?;
        corpus::load_passages(&p, PassageFormat::Jsonl)
    }

    fn conversations(&self, name: &str) -> Result<Vec<Conversation>> {
        let p = self.workdir.require(name, "ingest")?;
        Ok(corpus::load_conversations(&p)?.conversations)
    }

    fn problems(&self, name: &str) -> Result<Vec<ReformulationProblem>> {
        Ok(expand_problems(&self.conversations(name)?, true))
    }

    fn labels(&self) -> Result<HashMap<String, String>> {
        let p = self.workdir.require(wd::LABELS, "annotate")?;
        Ok(annotation::load_labels(&p)?.into_iter().map(|l| (l.problem_id, l.label)).collect())
    }

    fn load_model(&self, name: &str, producer: &'static str) -> Result<SeqModel> {
        SeqModel::load(&self.workdir.require(name, producer)?)
    }

    fn indices(&self) -> Result<Indices> {
        let sparse = SparseIndex::load(&self.workdir.require(wd::SPARSE_INDEX, "index")?)?;
        let dense = DenseIndex::load(&self.workdir.require(wd::DENSE_INDEX, "index")?)?;
        let stored: StoredEmbedder = serde_json::from_slice(&std::fs::read(self.workdir.require(wd::EMBEDDER, "index")?)?)?;
        Ok(Indices {
            sparse,
            dense,
            embedder: stored.into_embedder()?,
            depth: self.config.retrieval.depth,
        })
    }
}

/// Loaded sparse and dense indices.
pub struct Indices {
    pub sparse: SparseIndex,
    pub dense: DenseIndex,
    pub embedder: Embedder,
    pub depth: usize,
}

impl Indices {
    pub fn retrievers(&self) -> Retrievers<'_> {
        Retrievers {
            sparse: Some(&self.sparse),
            dense: Some((&self.dense, &self.embedder)),
            depth: self.depth,
        }
    }
}

/// What `index/embedder.json` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredEmbedder {
    HashedTfidf(HashedTfIdf),
    ExternalFile { path: PathBuf },
}

impl StoredEmbedder {
    fn into_embedder(self) -> Result<Embedder> {
        Ok(match self {
            StoredEmbedder::HashedTfidf(h) => Embedder::HashedTfIdf(h),
            StoredEmbedder::ExternalFile { path } => Embedder::ExternalFile(ExternalEmbeddings::load(&path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub passages: usize,
    pub train_conversations: usize,
    pub train_turns: usize,
    pub test_conversations: usize,
    pub test_turns: usize,
    /// Gold ids that do not resolve in the collection.
    pub unresolved_gold: usize,
}

/// Validates the inputs named in the config and copies them into the workdir.
pub fn cmd_ingest(run: &Run) -> Result<IngestSummary> {
    let paths = &run.config.paths;
    let passages = corpus::load_passages(&paths.passages, PassageFormat::from_path(&paths.passages))?;
    let train = corpus::load_conversations(&paths.train_conversations)?;
    let test = corpus::load_conversations(&paths.test_conversations)?;
    let mut unresolved = 0;
    for set in [&train, &test] {
        for w in set.validate_gold(&passages) {
            log::warn!("{w}");
            unresolved += 1;
        }
    }
    corpus::write_passages(&run.workdir.path(wd::PASSAGES), &passages)?;
    corpus::write_conversations(&run.workdir.path(wd::TRAIN), &train.conversations)?;
    corpus::write_conversations(&run.workdir.path(wd::TEST), &test.conversations)?;
    for name in [wd::PASSAGES, wd::TRAIN, wd::TEST] {
        run.record(Stage::Ingest, name)?;
    }
    Ok(IngestSummary {
        passages: passages.len(),
        train_conversations: train.conversations.len(),
        train_turns: train.total_turns,
        test_conversations: test.conversations.len(),
        test_turns: test.total_turns,
        unresolved_gold: unresolved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub doc_count: usize,
    pub bm25: crate::sparse::Bm25Params,
    pub analyzer: Analyzer,
    pub embedder: String,
    pub dim: usize,
    pub depth: usize,
    /// sha256 per index file.
    pub checksums: BTreeMap<String, String>,
}

/// Builds and saves both indices. Refuses to overwrite without `force`.
pub fn cmd_index(run: &Run) -> Result<IndexManifest> {
    let targets = [wd::SPARSE_INDEX, wd::DENSE_INDEX, wd::EMBEDDER];
    if !run.force {
        if let Some(p) = targets.iter().map(|t| run.workdir.path(t)).find(|p| p.exists()) {
            return Err(Error::AlreadyExists(p));
        }
    }
    let passages = run.passages()?;
    let rc = &run.config.retrieval;
    let analyzer = Analyzer::default();
    let sparse = SparseIndex::build(&passages, rc.bm25, analyzer.clone())?;
    let (embedder, stored) = match &rc.embedder {
        EmbedderConfig::HashedTfidf { dim, seed } => {
            let h = HashedTfIdf::fit(passages.as_slice(), *dim, *seed, analyzer.clone())?;
            (Embedder::HashedTfIdf(h.clone()), StoredEmbedder::HashedTfidf(h))
        }
        EmbedderConfig::ExternalFile { path } => (
            Embedder::ExternalFile(ExternalEmbeddings::load(path)?),
            StoredEmbedder::ExternalFile { path: path.clone() },
        ),
    };
    let dense = DenseIndex::build(&passages, &embedder)?;
    sparse.save(&run.workdir.path(wd::SPARSE_INDEX))?;
    dense.save(&run.workdir.path(wd::DENSE_INDEX))?;
    std::fs::write(run.workdir.path(wd::EMBEDDER), serde_json::to_vec(&stored)?)?;
    let mut checksums = BTreeMap::new();
    for t in targets {
        let e = run.record(Stage::Index, t)?;
        checksums.insert(t.to_string(), e.sha256);
    }
    let manifest = IndexManifest {
        doc_count: passages.len(),
        bm25: rc.bm25,
        analyzer,
        embedder: embedder.kind().to_string(),
        dim: dense.dim(),
        depth: rc.depth,
        checksums,
    };
    write_pretty(&run.workdir.path(wd::INDEX_MANIFEST), &manifest)?;
    run.record(Stage::Index, wd::INDEX_MANIFEST)?;
    Ok(manifest)
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Outcome of one annotation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub prompts: usize,
    pub labels: usize,
    pub failures: usize,
    pub demonstrations: usize,
}

/// Renders one prompt per training problem and asks the configured
/// annotator for labels. Demonstrations come from `ranked.jsonl` when it
/// exists; otherwise prompts are zero-shot.
pub fn cmd_annotate(run: &Run, mock_fixtures: Option<&Path>) -> Result<AnnotateSummary> {
    let ac = &run.config.annotation;
    let problems = run.problems(wd::TRAIN)?;
    let m = ac.m.unwrap_or(ac.template.default_m());
    let ranked_path = run.workdir.path(wd::RANKED);
    let demos = if ranked_path.exists() && m > 0 {
        let sets: Vec<RankedCandidateSet> = corpus::read_jsonl(&ranked_path)?;
        let by_id: HashMap<String, &ReformulationProblem> = problems.iter().map(|p| (p.id(), p)).collect();
        let pairs: Vec<(ReformulationProblem, RankedCandidateSet)> = sets
            .into_iter()
            .filter_map(|s| by_id.get(&s.problem_id).map(|p| ((*p).clone(), s)))
            .collect();
        // one spare so a problem never serves as its own demonstration
        annotation::select_demonstrations(&pairs, m + 1)
    } else {
        log::info!("annotate: no ranked candidates, rendering zero-shot prompts");
        Vec::new()
    };
    let prompts: Vec<PromptRecord> = problems
        .iter()
        .map(|p| {
            let id = p.id();
            let own: Vec<_> = demos.iter().filter(|d| d.problem.id() != id).take(m).cloned().collect();
            PromptRecord {
                problem_id: id,
                prompt: annotation::render_prompt(&PromptSpec::new(ac.template, own, p.clone())),
            }
        })
        .collect();
    annotation::write_prompts(&run.workdir.path(wd::PROMPTS), &prompts)?;
    run.record(Stage::Annotate, wd::PROMPTS)?;

    let fixtures = mock_fixtures.map(Path::to_path_buf).or_else(|| ac.mock_fixtures.clone());
    let result = match (&fixtures, &ac.endpoint) {
        (Some(path), _) => annotation::annotate(&MockAnnotator::from_file(path)?, &prompts, ac.parallelism, None),
        (None, Some(endpoint)) => {
            let mut client = HttpAnnotator::new(endpoint.clone(), ac.api_key.clone(), ac.retry());
            client.temperature = ac.temperature;
            client.seed = ac.seed;
            let cache = LabelCache::open(&run.workdir.path(wd::LABEL_CACHE))?;
            log::info!("annotate: {} via {} ({} cached labels)", prompts.len(), client.kind(), cache.len());
            annotation::annotate(&client, &prompts, ac.parallelism, Some(&cache))
        }
        (None, None) => {
            return Err(Error::Config(
                "annotation needs mock fixtures or an endpoint".into(),
            ))
        }
    };
    for (id, e) in &result.failures {
        log::warn!("annotate: `{id}` failed: {e}");
    }
    annotation::write_labels(&run.workdir.path(wd::LABELS), &result.labels)?;
    corpus::write_jsonl(&run.workdir.path(wd::RESPONSES), &result.responses)?;
    let failures: Vec<LabelRecord> = result
        .failures
        .iter()
        .map(|(id, e)| LabelRecord {
            problem_id: id.clone(),
            label: e.clone(),
        })
        .collect();
    corpus::write_jsonl(&run.workdir.path(wd::FAILURES), &failures)?;
    for name in [wd::LABELS, wd::RESPONSES, wd::FAILURES] {
        run.record(Stage::Annotate, name)?;
    }
    Ok(AnnotateSummary {
        prompts: prompts.len(),
        labels: result.labels.len(),
        failures: result.failures.len(),
        demonstrations: demos.len().min(m),
    })
}

/// Training problems that have a label. Missing ones are logged and skipped.
fn labelled(problems: Vec<ReformulationProblem>, labels: &HashMap<String, String>) -> Vec<ReformulationProblem> {
    let (keep, drop): (Vec<_>, Vec<_>) = problems.into_iter().partition(|p| labels.contains_key(&p.id()));
    if !drop.is_empty() {
        log::warn!("{} training problems have no label and are skipped", drop.len());
    }
    keep
}

/// Trains a fresh model on the labels with cross-entropy only.
pub fn cmd_stage1(run: &Run) -> Result<crate::training::TrainReport> {
    let passages = run.passages()?;
    let train = run.conversations(wd::TRAIN)?;
    let labels = run.labels()?;
    let problems = labelled(expand_problems(&train, true), &labels);
    let label_texts: Vec<&str> = problems.iter().map(|p| labels[&p.id()].as_str()).collect();
    let vocab = stages::build_vocabulary(&passages, &train, label_texts);
    let arch = run.config.model.arch(vocab.len());
    let mut model = SeqModel::new(vocab, arch, run.config.seed)?;
    let items = stages::train_items(&model, &problems, &labels, None)?;
    let mut hook = CheckpointHook {
        dir: run.workdir.path(wd::EPOCH_DIR),
        prefix: "s1".into(),
    };
    let report = stage1_train(&mut model, &items, &run.config.stage1_config(), &mut hook)?;
    model.save(&run.workdir.path(wd::CHECKPOINT_S1))?;
    report.write_csv(&run.workdir.path(wd::STAGE1_REPORT))?;
    run.record(Stage::Stage1, wd::CHECKPOINT_S1)?;
    run.record(Stage::Stage1, wd::STAGE1_REPORT)?;
    Ok(report)
}

/// Decodes candidate sets for every training problem with the Stage-1 model.
pub fn cmd_gen_candidates(run: &Run) -> Result<Vec<CandidateSet>> {
    let model = run.load_model(wd::CHECKPOINT_S1, "stage1")?;
    let problems = run.problems(wd::TRAIN)?;
    let sets = stages::generate_candidates(&model, &problems, &run.config.candidates)?;
    corpus::write_jsonl(&run.workdir.path(wd::CANDIDATES), &sets)?;
    run.record(Stage::GenCandidates, wd::CANDIDATES)?;
    Ok(sets)
}

/// Scores candidates against both retrievers and orders each set.
pub fn cmd_rank(run: &Run) -> Result<Vec<RankedCandidateSet>> {
    let sets: Vec<CandidateSet> = corpus::read_jsonl(&run.workdir.require(wd::CANDIDATES, "gen-candidates")?)?;
    let problems = run.problems(wd::TRAIN)?;
    let indices = run.indices()?;
    let ranked = stages::rank_sets(&problems, sets, &indices.retrievers())?;
    corpus::write_jsonl(&run.workdir.path(wd::RANKED), &ranked)?;
    run.record(Stage::Rank, wd::RANKED)?;
    Ok(ranked)
}

/// Continues from the Stage-1 checkpoint with the combined loss.
pub fn cmd_stage2(run: &Run) -> Result<crate::training::TrainReport> {
    let mut model = run.load_model(wd::CHECKPOINT_S1, "stage1")?;
    let ranked: Vec<RankedCandidateSet> = corpus::read_jsonl(&run.workdir.require(wd::RANKED, "rank")?)?;
    let labels = run.labels()?;
    let problems = labelled(run.problems(wd::TRAIN)?, &labels);
    let items = stages::train_items(&model, &problems, &labels, Some(&ranked))?;
    let mut hook = CheckpointHook {
        dir: run.workdir.path(wd::EPOCH_DIR),
        prefix: "s2".into(),
    };
    let report = stage2_train(&mut model, &items, &run.config.stage2_config(), &mut hook)?;
    if report.skipped > 0 {
        log::warn!("stage2: {} items without two candidates were skipped", report.skipped);
    }
    model.save(&run.workdir.path(wd::CHECKPOINT_S2))?;
    report.write_csv(&run.workdir.path(wd::STAGE2_REPORT))?;
    run.record(Stage::Stage2, wd::CHECKPOINT_S2)?;
    run.record(Stage::Stage2, wd::STAGE2_REPORT)?;
    Ok(report)
}

/// Rewrites every test query with the given checkpoint, the Stage-2 one by default.
pub fn cmd_reformulate(run: &Run, checkpoint: Option<&Path>) -> Result<Vec<ReformulationRecord>> {
    let model = match checkpoint {
        Some(p) => SeqModel::load(p)?,
        None => run.load_model(wd::CHECKPOINT_S2, "stage2")?,
    };
    let problems = run.problems(wd::TEST)?;
    let refs = stages::reformulate(&model, &problems, &run.config.reformulate)?;
    let records: Vec<ReformulationRecord> = problems
        .iter()
        .map(|p| {
            let id = p.id();
            ReformulationRecord {
                reformulation: refs[&id].clone(),
                problem_id: id,
            }
        })
        .collect();
    corpus::write_jsonl(&run.workdir.path(wd::REFORMULATIONS), &records)?;
    run.record(Stage::Reformulate, wd::REFORMULATIONS)?;
    Ok(records)
}

pub fn load_reformulations(path: &Path) -> Result<HashMap<String, String>> {
    let records: Vec<ReformulationRecord> = corpus::read_jsonl(path)?;
    Ok(records.into_iter().map(|r| (r.problem_id, r.reformulation)).collect())
}

/// Retrieval metrics of the reformulations (default: the workdir's) on the test problems.
pub fn cmd_evaluate(run: &Run, reformulations: Option<&Path>) -> Result<EvalRun> {
    let path = match reformulations {
        Some(p) => p.to_path_buf(),
        None => run.workdir.require(wd::REFORMULATIONS, "reformulate")?,
    };
    let refs = load_reformulations(&path)?;
    let problems = run.problems(wd::TEST)?;
    let indices = run.indices()?;
    let result = evaluate(&problems, &refs, &indices.retrievers(), &DEFAULT_KS)?;
    result.write_json(&run.workdir.path(wd::REPORT_JSON))?;
    result.write_csv(&run.workdir.path(wd::REPORT_CSV))?;
    run.record(Stage::Evaluate, wd::REPORT_JSON)?;
    run.record(Stage::Evaluate, wd::REPORT_CSV)?;
    Ok(result)
}

/// Mean DICE and cosine to the gold passage after every Stage-2 epoch.
pub fn cmd_trace_alignment(run: &Run) -> Result<Vec<AlignmentPoint>> {
    let files = run.workdir.epoch_checkpoints("s2");
    if files.is_empty() {
        return Err(Error::MissingDependency {
            artifact: format!("{}/s2_epoch1.ckpt", wd::EPOCH_DIR),
            producer: "stage2",
        });
    }
    let models = files.iter().map(|p| SeqModel::load(p)).collect::<Result<Vec<_>>>()?;
    let passages = run.passages()?;
    let problems = run.problems(wd::TEST)?;
    let indices = run.indices()?;
    let points = stages::alignment_trace(
        &models,
        &problems,
        &passages,
        (&indices.dense, &indices.embedder),
        &Analyzer::default(),
        &run.config.reformulate,
    )?;
    write_alignment_csv(&run.workdir.path(wd::ALIGNMENT), &points)?;
    run.record(Stage::TraceAlignment, wd::ALIGNMENT)?;
    Ok(points)
}

/// Runs the chosen stages in pipeline order.
pub fn cmd_pipeline(run: &Run, stages: &[Stage], mock_fixtures: Option<&Path>) -> Result<()> {
    let mut todo = stages.to_vec();
    todo.sort();
    todo.dedup();
    for stage in todo {
        log::info!("running {stage}");
        match stage {
            Stage::Ingest => drop(cmd_ingest(run)?),
            Stage::Index => drop(cmd_index(run)?),
            Stage::Annotate => drop(cmd_annotate(run, mock_fixtures)?),
            Stage::Stage1 => drop(cmd_stage1(run)?),
            Stage::GenCandidates => drop(cmd_gen_candidates(run)?),
            Stage::Rank => drop(cmd_rank(run)?),
            Stage::Stage2 => drop(cmd_stage2(run)?),
            Stage::Reformulate => drop(cmd_reformulate(run, None)?),
            Stage::Evaluate => drop(cmd_evaluate(run, None)?),
            Stage::TraceAlignment => drop(cmd_trace_alignment(run)?),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub problem_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRecord {
    pub problem_id: String,
    pub keywords: String,
}

/// `reformulation answer keywords`, skipping absent or blank parts.
pub fn expand_query(reformulation: &str, answer: Option<&str>, keywords: Option<&str>) -> String {
    [Some(reformulation), answer, keywords]
        .into_iter()
        .flatten()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Appends generated answers and keywords to each reformulation, in the
/// order of the reformulations file.
pub fn cmd_expand_concat(reformulations: &Path, answers: Option<&Path>, keywords: Option<&Path>, out: &Path) -> Result<Vec<ReformulationRecord>> {
    let refs: Vec<ReformulationRecord> = corpus::read_jsonl(reformulations)?;
    let answers: HashMap<String, String> = match answers {
        Some(p) => corpus::read_jsonl::<AnswerRecord>(p)?.into_iter().map(|r| (r.problem_id, r.answer)).collect(),
        None => HashMap::new(),
    };
    let keywords: HashMap<String, String> = match keywords {
        Some(p) => corpus::read_jsonl::<KeywordRecord>(p)?.into_iter().map(|r| (r.problem_id, r.keywords)).collect(),
        None => HashMap::new(),
    };
    let expanded: Vec<ReformulationRecord> = refs
        .into_iter()
        .map(|r| ReformulationRecord {
            reformulation: expand_query(
                &r.reformulation,
                answers.get(&r.problem_id).map(String::as_str),
                keywords.get(&r.problem_id).map(String::as_str),
            ),
            problem_id: r.problem_id,
        })
        .collect();
    corpus::write_jsonl(out, &expanded)?;
    Ok(expanded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_joins_present_parts() {
        assert_eq!(expand_query("q", Some("a"), Some("k1 k2")), "q a k1 k2");
        assert_eq!(expand_query("q", None, Some("k")), "q k");
        assert_eq!(expand_query("q", Some("  "), None), "q");
        assert_eq!(expand_query("q", None, None), "q");
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()).unwrap(), s);
        }
        assert_eq!(Stage::parse_list("rank, stage2").unwrap(), vec![Stage::Rank, Stage::Stage2]);
        assert!(Stage::parse("train").is_err());
    }
}
