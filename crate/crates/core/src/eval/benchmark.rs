//! Leave-one-domain-out benchmark: every method is trained once per held-out
//! domain and seed, and deployed on the held-out domain from its best
//! validation checkpoint.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use sha2::{Digest, Sha256};

use super::evaluate_accuracy;
use crate::data::{make_scenario, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::model::{Activation, FeatureNetSpec, Model};
use crate::rng::derive_seed;
use crate::train::{Method, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Feature-net widths after the input layer; the last is the
    /// representation width.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl BenchmarkConfig {
    /// SHA-256 of the configuration's debug rendering, hex encoded.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(format!("{self:?}").as_bytes()))
    }

    pub fn feature_spec(&self, input_dim: usize, seed: u64) -> FeatureNetSpec {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&self.hidden);
        FeatureNetSpec {
            widths,
            activation: self.activation,
            seed,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Seeds of one run, derived from the benchmark seed and the held-out domain
/// only, so every method starts from the same network and sees the same
/// split and batch stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeeds {
    pub features: u64,
    pub head: u64,
    pub split: u64,
    pub train: u64,
}

impl RunSeeds {
    pub fn new(seed: u64, held_out: &str) -> Self {
        Self {
            features: derive_seed(seed, "init/features"),
            head: derive_seed(seed, "init/head"),
            split: derive_seed(seed, &format!("split/{held_out}")),
            train: derive_seed(seed, &format!("train/{held_out}")),
        }
    }
}

/// One training run of the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Job {
    /// Index into [`BenchmarkConfig::methods`].
    pub method: usize,
    /// Index of the held-out domain.
    pub held_out: usize,
    pub seed: u64,
}

/// Jobs ordered by method, held-out domain, then seed.
pub fn benchmark_jobs(dataset: &MultiDomainDataset, config: &BenchmarkConfig) -> Result<Vec<Job>> {
    if dataset.domains().len() < 2 {
        return Err(Error::Config("benchmark needs at least 2 domains".into()));
    }
    if config.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Config("benchmark needs at least one method".into()));
    }
    let mut names: Vec<&str> = config.methods.iter().map(|m| m.name()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("each method may appear only once".into()));
    }
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("benchmark seeds must be distinct".into()));
    }
    let mut jobs = Vec::new();
    for method in 0..config.methods.len() {
        for held_out in 0..dataset.domains().len() {
            for &seed in &config.seeds {
                jobs.push(Job { method, held_out, seed });
            }
        }
    }
    Ok(jobs)
}

/// Result of one run: the best validation checkpoint and its held-out score.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub method: String,
    pub held_out: String,
    pub seed: u64,
    pub best_step: usize,
    /// Source-domain validation accuracy of the selected checkpoint.
    pub val_acc: f64,
    /// Held-out accuracy of the selected checkpoint.
    pub test_acc: f64,
    /// Hex digest of the selected checkpoint's parameters.
    pub digest: String,
}

/// Trains and evaluates one job. Failures carry the method, held-out domain
/// and seed.
pub fn run_job(dataset: &MultiDomainDataset, config: &BenchmarkConfig, job: Job) -> Result<RunResult> {
    let method = config
        .methods
        .get(job.method)
        .ok_or_else(|| Error::Config(format!("no method with index {}", job.method)))?;
    let domain = dataset
        .domains()
        .get(job.held_out)
        .ok_or_else(|| Error::Config(format!("no domain with index {}", job.held_out)))?;
    let context = |e: Error| Error::Run {
        method: method.name().to_string(),
        domain: domain.id.clone(),
        seed: job.seed,
        source: alloc::boxed::Box::new(e),
    };
    run_one(dataset, config, method, &domain.id, job.seed).map_err(context)
}

fn run_one(
    dataset: &MultiDomainDataset,
    config: &BenchmarkConfig,
    method: &Method,
    held_out: &str,
    seed: u64,
) -> Result<RunResult> {
    let seeds = RunSeeds::new(seed, held_out);
    let scenario = make_scenario(dataset, held_out, seeds.split)?;
    let spec = config.feature_spec(dataset.dim(), seeds.features);
    let model = Model::init(spec, dataset.num_classes(), method.head_mode(), seeds.head)?;
    let train = TrainConfig {
        seed: seeds.train,
        ..config.train.clone()
    };
    let outcome = method.train(model, &scenario, &train)?;
    let checkpoint = outcome.best_checkpoint();
    if outcome.best.param_set().digest() != checkpoint.digest {
        return Err(Error::Audit(format!(
            "deployed model does not match checkpoint at step {}",
            checkpoint.step
        )));
    }
    scenario.audit()?;
    let test_acc = evaluate_accuracy(&outcome.best, &scenario.test_examples())?;
    Ok(RunResult {
        method: method.name().to_string(),
        held_out: held_out.to_string(),
        seed,
        best_step: checkpoint.step,
        val_acc: checkpoint.val_acc,
        test_acc,
        digest: hex(&checkpoint.digest),
    })
}

/// Mean over seeds for one (method, held-out domain) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub domain: String,
    pub test_mean: f64,
    /// Sample standard deviation over seeds; zero for a single seed.
    pub test_std: f64,
    pub val_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub cells: Vec<Cell>,
    /// Mean of the cells' held-out accuracies.
    pub average: f64,
    /// Mean of the cells' validation accuracies.
    pub val_average: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub dataset_digest: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub domains: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Every run, ordered like [`benchmark_jobs`].
    pub runs: Vec<RunResult>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    libm::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Builds the report from run results given in any order.
pub fn assemble_report(
    dataset: &MultiDomainDataset,
    config: &BenchmarkConfig,
    results: Vec<RunResult>,
) -> Result<BenchmarkReport> {
    let jobs = benchmark_jobs(dataset, config)?;
    let key = |method: &str, domain: &str, seed: u64| (String::from(method), String::from(domain), seed);
    let mut slots: Vec<Option<RunResult>> = vec![None; jobs.len()];
    let job_keys: Vec<_> = jobs
        .iter()
        .map(|j| key(config.methods[j.method].name(), &dataset.domains()[j.held_out].id, j.seed))
        .collect();
    for r in results {
        let k = key(&r.method, &r.held_out, r.seed);
        let i = job_keys
            .iter()
            .position(|j| *j == k)
            .ok_or_else(|| Error::Audit(format!("unexpected run {k:?}")))?;
        if slots[i].replace(r).is_some() {
            return Err(Error::Audit(format!("duplicate run {k:?}")));
        }
    }
    let runs: Vec<RunResult> = slots
        .into_iter()
        .zip(&job_keys)
        .map(|(r, k)| r.ok_or_else(|| Error::Audit(format!("missing run {k:?}"))))
        .collect::<Result<_>>()?;

    let per_cell = config.seeds.len();
    let domains: Vec<String> = dataset.domains().iter().map(|d| d.id.clone()).collect();
    let rows = config
        .methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let cells: Vec<Cell> = domains
                .iter()
                .enumerate()
                .map(|(d, id)| {
                    let start = (m * domains.len() + d) * per_cell;
                    let chunk = &runs[start..start + per_cell];
                    let test: Vec<f64> = chunk.iter().map(|r| r.test_acc).collect();
                    let val: Vec<f64> = chunk.iter().map(|r| r.val_acc).collect();
                    Cell {
                        domain: id.clone(),
                        test_mean: mean(&test),
                        test_std: sample_std(&test),
                        val_mean: mean(&val),
                    }
                })
                .collect();
            let test: Vec<f64> = cells.iter().map(|c| c.test_mean).collect();
            let val: Vec<f64> = cells.iter().map(|c| c.val_mean).collect();
            ReportRow {
                method: method.name().to_string(),
                average: mean(&test),
                val_average: mean(&val),
                cells,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        dataset_digest: hex(&dataset.digest()),
        config_digest: config.digest(),
        seeds: config.seeds.clone(),
        domains,
        rows,
        runs,
    })
}

/// Runs every job in order on the calling thread.
pub fn run_benchmark(dataset: &MultiDomainDataset, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let results = benchmark_jobs(dataset, config)?
        .into_iter()
        .map(|job| run_job(dataset, config, job))
        .collect::<Result<Vec<_>>>()?;
    assemble_report(dataset, config, results)
}

impl BenchmarkReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Tab-separated held-out accuracies at full precision, one row per
    /// method, preceded by `#` metadata lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        self.write_metadata(&mut s);
        s.push_str("method");
        for d in &self.domains {
            let _ = write!(s, "\t{d}");
        }
        s.push_str("\taverage\tvalidation_average\n");
        for row in &self.rows {
            s.push_str(&row.method);
            for c in &row.cells {
                let _ = write!(s, "\t{}", c.test_mean);
            }
            let _ = writeln!(s, "\t{}\t{}", row.average, row.val_average);
        }
        s
    }

    /// Tab-separated per-run results at full precision.
    pub fn runs_tsv(&self) -> String {
        let mut s = String::new();
        self.write_metadata(&mut s);
        s.push_str("method\theld_out\tseed\tbest_step\tval_acc\ttest_acc\tdigest\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method, r.held_out, r.seed, r.best_step, r.val_acc, r.test_acc, r.digest
            );
        }
        s
    }

    fn write_metadata(&self, s: &mut String) {
        let _ = writeln!(s, "# dataset {}", self.dataset_digest);
        let _ = writeln!(s, "# config {}", self.config_digest);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "# seeds {}", seeds.join(","));
    }

    /// Aligned tables rounded to two decimals: held-out accuracy as
    /// mean ± std over seeds, source validation averages, then the
    /// literature rows.
    pub fn to_text(&self) -> String {
        let mut header = vec![String::from("method")];
        header.extend(self.domains.iter().cloned());
        header.push("average".into());
        let mut table = vec![header];
        let mut val = vec![vec![String::from("method"), String::from("average")]];
        for row in &self.rows {
            let mut line = vec![row.method.clone()];
            for c in &row.cells {
                line.push(if self.seeds.len() > 1 {
                    format!("{:.2} ± {:.2}", c.test_mean, c.test_std)
                } else {
                    format!("{:.2}", c.test_mean)
                });
            }
            line.push(format!("{:.2}", row.average));
            table.push(line);
            val.push(vec![row.method.clone(), format!("{:.2}", row.val_average)]);
        }
        let mut s = String::from("Held-out domain accuracy (%)\n");
        s.push_str(&align(&table));
        s.push_str("\nSource-domain validation accuracy (%)\n");
        s.push_str(&align(&val));
        s.push('\n');
        s.push_str(&literature_table());
        s
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|x| x.chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        for (c, cell) in r.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                s.push_str(cell);
                s.extend(core::iter::repeat_n(' ', pad));
            } else {
                s.push_str("  ");
                s.extend(core::iter::repeat_n(' ', pad));
                s.push_str(cell);
            }
        }
        s.push('\n');
    }
    s
}

/// Published PACS accuracies (AlexNet backbone), for side-by-side display.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiteratureRow {
    pub method: &'static str,
    /// Art painting, cartoon, photo, sketch.
    pub cells: [f64; 4],
    pub printed_average: f64,
}

pub const LITERATURE_DOMAINS: [&str; 4] = ["art painting", "cartoon", "photo", "sketch"];

pub const LITERATURE: [LiteratureRow; 8] = [
    LiteratureRow {
        method: "Full AlexNet",
        cells: [61.18, 65.70, 88.14, 55.95],
        printed_average: 67.74,
    },
    LiteratureRow {
        method: "D-MTAE",
        cells: [60.27, 58.65, 91.12, 47.68],
        printed_average: 64.48,
    },
    LiteratureRow {
        method: "DSN",
        cells: [61.13, 66.54, 83.25, 58.58],
        printed_average: 67.37,
    },
    LiteratureRow {
        method: "DBA-DG",
        cells: [62.86, 66.97, 89.50, 57.51],
        printed_average: 69.21,
    },
    LiteratureRow {
        method: "MLDG",
        cells: [66.23, 66.88, 88.00, 58.96],
        printed_average: 70.01,
    },
    LiteratureRow {
        method: "MetaReg",
        cells: [69.82, 70.35, 91.07, 59.26],
        printed_average: 72.62,
    },
    LiteratureRow {
        method: "Fixed random head",
        cells: [60.25, 68.38, 88.27, 63.01],
        printed_average: 70.00,
    },
    LiteratureRow {
        method: "Fixed orthogonal head",
        cells: [60.81, 67.46, 87.96, 61.96],
        printed_average: 69.55,
    },
];

impl LiteratureRow {
    /// Mean of the four published cells.
    pub fn average(&self) -> f64 {
        self.cells.iter().sum::<f64>() / 4.0
    }

    /// True when the published average is not the mean of the published
    /// cells to within display rounding.
    pub fn average_mismatch(&self) -> bool {
        libm::fabs(self.average() - self.printed_average) > 0.005 + 1e-9
    }
}

/// Literature rows with recomputed averages; rows whose printed average
/// disagrees are marked with `*`.
pub fn literature_table() -> String {
    let mut header = vec![String::from("literature (PACS, not reproduced)")];
    header.extend(LITERATURE_DOMAINS.iter().map(|d| d.to_string()));
    header.push("average".into());
    header.push("printed".into());
    let mut table = vec![header];
    let mut flagged = false;
    for row in &LITERATURE {
        let mut line = vec![row.method.to_string()];
        line.extend(row.cells.iter().map(|c| format!("{c:.2}")));
        line.push(format!("{:.2}", row.average()));
        let mark = if row.average_mismatch() {
            flagged = true;
            "*"
        } else {
            ""
        };
        line.push(format!("{:.2}{mark}", row.printed_average));
        table.push(line);
    }
    let mut s = align(&table);
    if flagged {
        s.push_str("* printed average differs from the mean of the printed cells\n");
    }
    s
}
