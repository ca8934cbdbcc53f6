//! Command implementations behind the CLI. Each command reads its inputs
//! from the output directory, writes its artifacts there, and returns the
//! in-memory result.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::concept::{self, ConceptError, ConceptInventory};
use crate::config::{ConfigError, RunConfig};
use crate::formats::{self, FormatError, ReportTable, VectorTable};
use crate::mapping::{self, MappingError, MappingModel, Variant};
use crate::par::{self, derive_seed, Execution};
use crate::retrieval::{self, RetrievalError, RetrievalReport};
use crate::scenario::{self, CompositionMode, Dataset, QuantKind, ScenarioError, Split};
use crate::vision::{self, Measure, SimilarityProfile, SvmComparison, VisionError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{} not found; run `{command}` first", path.display())]
    MissingInput { path: PathBuf, command: &'static str },
    #[error("{kind} dataset failed validation with {count} violation(s); first: {first}")]
    Validation { kind: QuantKind, count: usize, first: String },
    #[error("{} was built in {} mode but the config asks for {}; rerun `build`", path.display(), found.as_str(), expected.as_str())]
    ModeMismatch {
        path: PathBuf,
        found: CompositionMode,
        expected: CompositionMode,
    },
    #[error("{failed} of {total} models failed to train: {details}")]
    Training { failed: usize, total: usize, details: String },
    #[error("retrieval report invariant violated: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn visual(&self) -> PathBuf {
        self.root.join("visual.tsv")
    }

    pub fn words(&self) -> PathBuf {
        self.root.join("words.tsv")
    }

    pub fn manifest(&self, kind: QuantKind) -> PathBuf {
        self.root.join(format!("{}.manifest.tsv", kind.as_str()))
    }

    pub fn concat_pca(&self, kind: QuantKind) -> PathBuf {
        self.root.join(format!("{}.pca.tsv", kind.as_str()))
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, variant: Variant, expression: scenario::Expression) -> PathBuf {
        self.models().join(format!("{variant}_{expression}.model"))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn run_conf(&self) -> PathBuf {
        self.root.join("run.conf")
    }
}

fn require(path: &Path, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            path: path.to_path_buf(),
            command,
        })
    }
}

fn write_run_conf(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let text = format!(
        "# config_digest {}\n{}",
        cfg.digest(),
        cfg.to_conf_string()
    );
    formats::write_text(&layout.run_conf(), &text)?;
    Ok(())
}

/// Synthesizes (or ingests) the inventory and writes both vector tables.
pub fn cmd_gen(cfg: &RunConfig) -> Result<ConceptInventory> {
    cfg.validate()?;
    let inventory = match (&cfg.visual_input, &cfg.word_input) {
        (Some(v), Some(w)) => concept::ingest_inventory(v, w, cfg.dim)?,
        _ => concept::synthesize_inventory(&cfg.synthesis())?,
    };
    let layout = Layout::new(&cfg.out);
    let prov = cfg.provenance();
    formats::write_vector_table(&layout.visual(), &inventory.visual_table(), Some(&prov))?;
    formats::write_vector_table(&layout.words(), &inventory.word_table(), Some(&prov))?;
    write_run_conf(cfg)?;
    Ok(inventory)
}

pub fn load_inventory(cfg: &RunConfig) -> Result<ConceptInventory> {
    let layout = Layout::new(&cfg.out);
    require(&layout.visual(), "gen")?;
    require(&layout.words(), "gen")?;
    let visual: VectorTable = formats::read_vector_table(&layout.visual())?;
    let words = formats::read_vector_table(&layout.words())?;
    Ok(ConceptInventory::from_tables(visual, words)?)
}

fn check_valid(ds: &Dataset, inventory: &ConceptInventory) -> Result<()> {
    let report = scenario::validate_dataset(ds, inventory);
    match report.violations.first() {
        None => Ok(()),
        Some(first) => Err(PipelineError::Validation {
            kind: ds.kind,
            count: report.violations.len(),
            first: first.to_string(),
        }),
    }
}

/// Builds and validates both datasets in memory.
pub fn build_datasets(inventory: &ConceptInventory, cfg: &RunConfig, exec: Execution) -> Result<[Dataset; 2]> {
    let build = |kind| -> Result<Dataset> {
        let ds = scenario::build_dataset_with(inventory, kind, cfg.mode, cfg.seed, exec)?;
        check_valid(&ds, inventory)?;
        Ok(ds)
    };
    Ok([build(QuantKind::Quantifier)?, build(QuantKind::Cardinal)?])
}

/// Builds both datasets from the stored inventory, validates them and writes
/// the manifests.
pub fn cmd_build(cfg: &RunConfig, exec: Execution) -> Result<[Dataset; 2]> {
    cfg.validate()?;
    let inventory = load_inventory(cfg)?;
    let datasets = build_datasets(&inventory, cfg, exec)?;
    let layout = Layout::new(&cfg.out);
    let prov = cfg.provenance();
    for ds in &datasets {
        formats::write_manifest(&layout.manifest(ds.kind), ds, Some(&prov))?;
        if let Some(pca) = &ds.concat_pca {
            formats::write_text(&layout.concat_pca(ds.kind), &formats::format_pca(pca, Some(&prov)))?;
        }
    }
    write_run_conf(cfg)?;
    Ok(datasets)
}

pub fn load_datasets(cfg: &RunConfig) -> Result<[Dataset; 2]> {
    let layout = Layout::new(&cfg.out);
    let load = |kind| -> Result<Dataset> {
        let path = layout.manifest(kind);
        require(&path, "build")?;
        let (mut ds, _) = formats::read_manifest(&path)?;
        if ds.mode != cfg.mode {
            return Err(PipelineError::ModeMismatch {
                path,
                found: ds.mode,
                expected: cfg.mode,
            });
        }
        if ds.mode == CompositionMode::Concat {
            let pca_path = layout.concat_pca(kind);
            require(&pca_path, "build")?;
            ds.concat_pca = Some(formats::parse_pca(&pca_path, &formats::read_text(&pca_path)?)?);
        }
        Ok(ds)
    };
    Ok([load(QuantKind::Quantifier)?, load(QuantKind::Cardinal)?])
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionReport {
    pub profiles: Vec<SimilarityProfile>,
    pub svm: SvmComparison,
}

pub fn analyze(
    inventory: &ConceptInventory,
    datasets: &[Dataset; 2],
    cfg: &RunConfig,
    exec: Execution,
) -> Result<VisionReport> {
    let mut profiles = Vec::new();
    for ds in datasets {
        for measure in Measure::ALL {
            for split in [Split::Train, Split::Test] {
                profiles.push(vision::similarity_profile(ds, inventory, measure, split)?);
            }
        }
    }
    let svm = vision::svm_compare_with(
        &datasets[0],
        &datasets[1],
        inventory,
        cfg.folds,
        cfg.seed,
        &cfg.svm(),
        exec,
    )?;
    Ok(VisionReport { profiles, svm })
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn vision_tables(report: &VisionReport) -> (Vec<ReportTable>, Vec<ReportTable>) {
    let mut profiles = ReportTable::new(
        "per-class similarity distributions",
        &["kind", "measure", "split", "expression", "count", "min", "q1", "median", "q3", "max", "mean"],
    );
    for p in &report.profiles {
        for (e, class) in &p.per_class {
            let s = &class.stats;
            profiles.push(vec![
                p.kind.to_string(),
                p.measure.to_string(),
                p.split.to_string(),
                e.to_string(),
                s.count.to_string(),
                f6(s.min),
                f6(s.q1),
                f6(s.median),
                f6(s.q3),
                f6(s.max),
                f6(s.mean),
            ]);
        }
    }

    let folds = report.svm.folds;
    let mut headers = vec!["kind".to_string(), "measure".to_string()];
    headers.extend((1..=folds).map(|f| format!("fold_{f}")));
    headers.extend(["cv_accuracy", "train_accuracy", "test_accuracy"].map(String::from));
    let mut cells = ReportTable {
        title: format!("SVM accuracy ({folds}-fold stratified CV on train)"),
        headers,
        rows: Vec::new(),
    };
    for c in &report.svm.cells {
        let mut row = vec![c.kind.to_string(), c.measure.to_string()];
        row.extend(c.fold_accuracies.iter().map(|&a| f4(a)));
        row.extend([f4(c.cv_accuracy), f4(c.train_accuracy), f4(c.test_accuracy)]);
        cells.push(row);
    }

    let mut grid = ReportTable::new("cross-validated accuracy (%)", &["dataset", "cosine_distance", "dot"]);
    for kind in QuantKind::ALL {
        let pct = |m| {
            report
                .svm
                .cell(kind, m)
                .map_or("-".to_string(), |c| format!("{:.1}", 100.0 * c.cv_accuracy))
        };
        grid.push(vec![kind.to_string(), pct(Measure::CosineDistance), pct(Measure::Dot)]);
    }
    (vec![profiles], vec![grid, cells])
}

/// Similarity profiles and the SVM comparison over the stored datasets.
pub fn cmd_analyze(cfg: &RunConfig, exec: Execution) -> Result<VisionReport> {
    cfg.validate()?;
    let inventory = load_inventory(cfg)?;
    let datasets = load_datasets(cfg)?;
    let report = analyze(&inventory, &datasets, cfg, exec)?;
    let layout = Layout::new(&cfg.out);
    let prov = cfg.provenance();
    let (profiles, svm) = vision_tables(&report);
    formats::write_report(&layout.analysis(), "profiles", &profiles, &prov)?;
    formats::write_report(&layout.analysis(), "svm", &svm, &prov)?;
    write_run_conf(cfg)?;
    Ok(report)
}

fn train_seed(seed: u64, variant: Variant, expression: scenario::Expression) -> u64 {
    derive_seed(seed, &[0x7A, variant as u64, expression as u64])
}

/// Trains every variant for every expression of both datasets. Models are
/// returned in (dataset, expression, variant) order; failures are kept per
/// model so one divergence does not hide the others.
pub fn train_all(
    inventory: &ConceptInventory,
    datasets: &[Dataset; 2],
    cfg: &RunConfig,
    exec: Execution,
) -> Result<Vec<std::result::Result<MappingModel, MappingError>>> {
    let mut jobs = Vec::new();
    for ds in datasets {
        for expression in ds.kind.expressions() {
            let pairs = mapping::collect_pairs(ds, inventory, expression, Split::Train)?;
            jobs.push((expression, pairs));
        }
    }
    let tasks: Vec<(usize, Variant)> = (0..jobs.len())
        .flat_map(|j| Variant::ALL.into_iter().map(move |v| (j, v)))
        .collect();
    Ok(par::map_slice(exec, &tasks, |&(j, variant)| {
        let (expression, pairs) = &jobs[j];
        let tc = cfg.train(train_seed(cfg.seed, variant, *expression));
        mapping::train(pairs, *expression, variant, &tc)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub models: Vec<MappingModel>,
}

pub fn cmd_train(cfg: &RunConfig, exec: Execution) -> Result<TrainSummary> {
    cfg.validate()?;
    let inventory = load_inventory(cfg)?;
    let datasets = load_datasets(cfg)?;
    let results = train_all(&inventory, &datasets, cfg, exec)?;
    let layout = Layout::new(&cfg.out);
    let prov = cfg.provenance();

    let mut table = ReportTable::new(
        "training summary",
        &["variant", "expression", "status", "epochs", "initial_loss", "final_loss"],
    );
    let mut models = Vec::new();
    let mut failures = Vec::new();
    let total = results.len();
    let labels: Vec<(Variant, scenario::Expression)> = datasets
        .iter()
        .flat_map(|ds| ds.kind.expressions())
        .flat_map(|e| Variant::ALL.into_iter().map(move |v| (v, e)))
        .collect();
    for ((variant, expression), result) in labels.into_iter().zip(results) {
        match result {
            Ok(m) => {
                formats::write_model(&layout.model(variant, expression), &m, Some(&prov))?;
                table.push(vec![
                    variant.to_string(),
                    expression.to_string(),
                    "ok".into(),
                    m.meta.epochs.to_string(),
                    f6(m.meta.initial_loss),
                    f6(m.meta.final_loss),
                ]);
                models.push(m);
            }
            Err(e) => {
                table.push(vec![
                    variant.to_string(),
                    expression.to_string(),
                    "failed".into(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                ]);
                failures.push(format!("{variant}/{expression}: {e}"));
            }
        }
    }
    table.rows.sort_by(|a, b| {
        let key = |r: &Vec<String>| (r[0].parse::<Variant>().ok(), r[1].parse::<scenario::Expression>().ok());
        key(a).cmp(&key(b))
    });
    formats::write_report(&layout.models(), "summary", &[table], &prov)?;
    write_run_conf(cfg)?;
    if !failures.is_empty() {
        return Err(PipelineError::Training {
            failed: failures.len(),
            total,
            details: failures.join("; "),
        });
    }
    models.sort_by_key(|m| (m.variant, m.expression));
    Ok(TrainSummary { models })
}

pub fn load_models(cfg: &RunConfig) -> Result<Vec<MappingModel>> {
    let layout = Layout::new(&cfg.out);
    let mut models = Vec::new();
    for variant in Variant::ALL {
        for kind in QuantKind::ALL {
            for expression in kind.expressions() {
                let path = layout.model(variant, expression);
                require(&path, "train")?;
                models.push(formats::read_model(&path)?.0);
            }
        }
    }
    Ok(models)
}

pub fn evaluate(
    inventory: &ConceptInventory,
    datasets: &[Dataset; 2],
    models: &[MappingModel],
    exec: Execution,
) -> Result<RetrievalReport> {
    let report = retrieval::evaluate(models, &[&datasets[0], &datasets[1]], inventory, exec)?;
    if let Some(first) = report.check().into_iter().next() {
        return Err(PipelineError::Report(first));
    }
    Ok(report)
}

pub fn retrieval_tables(report: &RetrievalReport) -> (Vec<ReportTable>, Vec<ReportTable>) {
    let variants = report.variants();
    let mut headers = vec!["expression".to_string()];
    for v in &variants {
        headers.push(format!("{v}_mAP"));
        headers.push(format!("{v}_P2"));
    }
    let mut scores = ReportTable {
        title: "retrieval: mAP and P@2 per model".into(),
        headers,
        rows: Vec::new(),
    };
    for kind in QuantKind::ALL {
        for e in kind.expressions() {
            let mut row = vec![e.to_string()];
            for &v in &variants {
                match report.score(v, e) {
                    Some(s) => row.extend([f4(s.map), f4(s.p_at_2)]),
                    None => row.extend(["-".to_string(), "-".to_string()]),
                }
            }
            scores.push(row);
        }
    }

    let mut confusions = Vec::new();
    for kind in QuantKind::ALL {
        let Some(best) = report.best_variant(kind) else { continue };
        let Some(m) = report.confusion(best, kind) else { continue };
        let names = kind.expressions().map(|e| e.to_string());
        let mut headers = vec!["query"];
        headers.extend(names.iter().map(String::as_str));
        let mut t = ReportTable::new(format!("top-2 confusion, {kind} ({best})"), &headers);
        for (r, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(m.counts[r].iter().map(u64::to_string));
            t.push(row);
        }
        confusions.push(t);
    }
    (vec![scores], confusions)
}

pub fn cmd_eval(cfg: &RunConfig, exec: Execution) -> Result<RetrievalReport> {
    cfg.validate()?;
    let inventory = load_inventory(cfg)?;
    let datasets = load_datasets(cfg)?;
    let models = load_models(cfg)?;
    let report = evaluate(&inventory, &datasets, &models, exec)?;
    let layout = Layout::new(&cfg.out);
    let prov = cfg.provenance();
    let (scores, confusions) = retrieval_tables(&report);
    formats::write_report(&layout.eval(), "retrieval", &scores, &prov)?;
    formats::write_report(&layout.eval(), "confusion", &confusions, &prov)?;
    write_run_conf(cfg)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub concept_count: usize,
    pub scenarios: [usize; 2],
    pub vision: VisionReport,
    pub models: usize,
    pub retrieval: RetrievalReport,
}

/// gen, build, analyze, train and eval in sequence.
pub fn cmd_all(cfg: &RunConfig, exec: Execution) -> Result<RunOutcome> {
    let inventory = cmd_gen(cfg)?;
    let datasets = cmd_build(cfg, exec)?;
    let vision = cmd_analyze(cfg, exec)?;
    let trained = cmd_train(cfg, exec)?;
    let retrieval = cmd_eval(cfg, exec)?;
    Ok(RunOutcome {
        concept_count: inventory.len(),
        scenarios: [datasets[0].scenarios.len(), datasets[1].scenarios.len()],
        vision,
        models: trained.models.len(),
        retrieval,
    })
}
