//! The four subcommands. Each writes only inside the configured output
//! directory, and everything except `metadata.txt` is a pure function of the
//! configuration.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crossdepict_core::data::{generate_synthetic, make_scenario, MultiDomainDataset};
use crossdepict_core::eval::{
    assemble_report, benchmark_jobs, eigen_projection, evaluate_accuracy, kl_domain_shift, run_job, BenchmarkConfig,
    BenchmarkReport, DomainShiftReport, EigenProjection, Job, RunResult, RunSeeds,
};
use crossdepict_core::model::Model;
use crossdepict_core::train::{train_metareg, Method, TrainOutcome};
use crossdepict_core::Error as CoreError;

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{load_dataset, training_log, write_checkpoint, write_dataset, write_file};

/// The configured dataset, generated or loaded. Loader warnings go to
/// stderr.
pub fn dataset(config: &RunConfig) -> Result<MultiDomainDataset> {
    match config.dataset.source {
        DataSource::Generate => Ok(generate_synthetic(&config.generator_config()?)?),
        DataSource::Load => {
            let path = config
                .manifest_path()
                .ok_or_else(|| CliError::Config("dataset.manifest is required".into()))?;
            let loaded = load_dataset(&path)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            Ok(loaded.dataset)
        }
    }
}

fn write_common(config: &RunConfig, command: &str) -> Result<()> {
    write_file(&config.out.join("resolved.toml"), config.to_toml())?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_file(
        &config.out.join("metadata.txt"),
        format!(
            "command {command}\nversion {}\nfinished_unix {secs}\n",
            env!("CARGO_PKG_VERSION")
        ),
    )
}

/// Per-domain, per-class counts as an aligned table.
pub fn count_table(dataset: &MultiDomainDataset) -> String {
    let width = dataset.classes().iter().map(|c| c.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<10}", "domain");
    for c in dataset.classes() {
        s.push_str(&format!(" {c:>width$}"));
    }
    s.push('\n');
    for (d, counts) in dataset.domains().iter().zip(dataset.counts()) {
        s.push_str(&format!("{:<10}", d.id));
        for n in counts {
            s.push_str(&format!(" {n:>width$}"));
        }
        s.push('\n');
    }
    s
}

pub struct GenData {
    pub manifest: PathBuf,
    pub counts: String,
}

pub fn gen_data(config: &RunConfig) -> Result<GenData> {
    let ds = dataset(config)?;
    let manifest = write_dataset(&ds, &config.out)?;
    write_common(config, "gen-data")?;
    Ok(GenData {
        manifest,
        counts: count_table(&ds),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub method: String,
    pub held_out: String,
    pub best_step: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

impl TrainSummary {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.method, self.held_out, self.best_step, self.val_acc, self.test_acc
        )
    }
}

/// One run of the configured method on the configured held-out domain,
/// seeded like the corresponding benchmark cell.
pub fn train(config: &RunConfig) -> Result<TrainSummary> {
    let method = config.method(&config.method.name)?;
    let ds = dataset(config)?;
    let held_out = config.method.held_out.as_str();
    let seeds = RunSeeds::new(config.seed, held_out);
    let scenario = make_scenario(&ds, held_out, seeds.split)?;
    let spec = config.benchmark_config()?.feature_spec(ds.dim(), seeds.features);
    let model = Model::init(spec, ds.num_classes(), method.head_mode(), seeds.head)?;
    let train = crossdepict_core::train::TrainConfig {
        seed: seeds.train,
        ..config.train_config()
    };
    let out = &config.out;
    let outcome: TrainOutcome = match &method {
        Method::MetaReg(m) => {
            let r = train_metareg(model, &scenario, &train, m)?;
            let mut log = String::from("meta_iteration\tmeta_test_loss\n");
            for (i, l) in r.meta_losses.iter().enumerate() {
                log.push_str(&format!("{i}\t{l}\n"));
            }
            write_file(&out.join("metareg.tsv"), log)?;
            r.outcome
        }
        m => m.train(model, &scenario, &train)?,
    };
    let best = outcome.best_checkpoint();
    if outcome.best.param_set().digest() != best.digest {
        return Err(CoreError::Audit("deployed model does not match its checkpoint".into()).into());
    }
    scenario.audit()?;
    let summary = TrainSummary {
        method: method.name().into(),
        held_out: held_out.into(),
        best_step: best.step,
        val_acc: best.val_acc,
        test_acc: evaluate_accuracy(&outcome.best, &scenario.test_examples())?,
    };
    write_file(&out.join("log.tsv"), training_log(&outcome))?;
    write_checkpoint(&out.join("best.ckpt"), &outcome.best, config.seed)?;
    write_file(
        &out.join("summary.tsv"),
        format!("method\theld_out\tbest_step\tval_acc\ttest_acc\n{}\n", summary.line()),
    )?;
    write_common(config, "train")?;
    Ok(summary)
}

pub fn worker_count(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

/// Runs `jobs` on up to `workers` threads. After the first failure no new
/// job starts; the failure of the earliest job is returned.
pub fn run_jobs(
    dataset: &MultiDomainDataset,
    config: &BenchmarkConfig,
    jobs: &[Job],
    workers: usize,
    progress: impl Fn(usize, &RunResult) + Sync,
) -> Result<Vec<RunResult>, CoreError> {
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let errors = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&job) = jobs.get(i) else { break };
                match run_job(dataset, config, job) {
                    Ok(r) => {
                        progress(done.fetch_add(1, Ordering::SeqCst) + 1, &r);
                        results.lock().expect("no poisoned lock").push(r);
                    }
                    Err(e) => {
                        failed.store(true, Ordering::SeqCst);
                        errors.lock().expect("no poisoned lock").push((i, e));
                    }
                }
            });
        }
    });
    let mut errors = errors.into_inner().expect("no poisoned lock");
    errors.sort_by_key(|(i, _)| *i);
    match errors.into_iter().next() {
        Some((_, e)) => Err(e),
        None => Ok(results.into_inner().expect("no poisoned lock")),
    }
}

pub fn bench(config: &RunConfig) -> Result<BenchmarkReport> {
    let ds = dataset(config)?;
    let bench = config.benchmark_config()?;
    let jobs = benchmark_jobs(&ds, &bench)?;
    let workers = worker_count(config.bench.workers);
    let total = jobs.len();
    let results = run_jobs(&ds, &bench, &jobs, workers, |k, r| {
        eprintln!(
            "[{k}/{total}] {} held out {} seed {}: val {:.2} test {:.2}",
            r.method, r.held_out, r.seed, r.val_acc, r.test_acc
        );
    })?;
    let report = assemble_report(&ds, &bench, results)?;
    write_report(&config.out, &report)?;
    write_common(config, "bench")?;
    Ok(report)
}

pub fn write_report(dir: &Path, report: &BenchmarkReport) -> Result<()> {
    write_file(&dir.join("report.tsv"), report.to_tsv())?;
    write_file(&dir.join("runs.tsv"), report.runs_tsv())?;
    write_file(&dir.join("report.txt"), report.to_text())
}

pub struct Analysis {
    pub shift: DomainShiftReport,
    pub projection: EigenProjection,
}

impl Analysis {
    pub fn summary(&self) -> String {
        let mut s = format!("mean KL to other domains ({} bins)\n", self.shift.bins);
        for (d, k) in self.shift.domains.iter().zip(self.shift.mean_to_others()) {
            s.push_str(&format!("  {d:<10} {k:.4}\n"));
        }
        s.push_str(&format!(
            "top two principal directions explain {:.2}% of variance\n",
            100.0 * self.projection.explained
        ));
        s
    }
}

pub fn analyze(config: &RunConfig) -> Result<Analysis> {
    let ds = dataset(config)?;
    let shift = kl_domain_shift(&ds, config.analyze.bins)?;
    let projection = eigen_projection(&ds)?;
    write_file(&config.out.join("shift.tsv"), shift.to_tsv())?;
    write_file(&config.out.join("projection.tsv"), projection.to_tsv())?;
    write_common(config, "analyze")?;
    Ok(Analysis { shift, projection })
}
