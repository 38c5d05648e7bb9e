//! On-disk formats: dataset manifests and data files, model checkpoints,
//! training logs and the analysis tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crossdepict_core::data::{Example, MultiDomainDataset};
use crossdepict_core::eval::ProjectedCentre;
use crossdepict_core::model::{Activation, ClassifierHead, FeatureNetSpec, HeadMode, Model};
use crossdepict_core::train::TrainOutcome;
use crossdepict_core::{ParamSet, Tensor};

use crate::error::{CliError, Result};

pub const MANIFEST_HEADER: &str = "crossdepict-dataset v1";
pub const CHECKPOINT_HEADER: &str = "crossdepict-checkpoint v1";

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

/// Manifest plus one comma-separated data file per domain in `dir`.
/// Returns the manifest path.
///
/// Manifest lines are tab separated: the header, `classes` followed by the
/// class names, then `domain <id> <data file>` per domain. Data rows are the
/// class name followed by the feature values.
pub fn write_dataset(dataset: &MultiDomainDataset, dir: &Path) -> Result<PathBuf> {
    let mut manifest = format!("{MANIFEST_HEADER}\nclasses");
    for c in dataset.classes() {
        manifest.push('\t');
        manifest.push_str(c);
    }
    manifest.push('\n');
    for d in dataset.domains() {
        let file = format!("{}.csv", d.id);
        let path = dir.join(&file);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for e in &d.examples {
            let mut record = vec![dataset.classes()[e.label].clone()];
            record.extend(e.features.data().iter().map(|x| x.to_string()));
            w.write_record(&record).map_err(|e| CliError::data(&path, e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::data(&path, e.to_string()))?;
        write_file(&path, bytes)?;
        manifest.push_str(&format!("domain\t{}\t{file}\n", d.id));
    }
    let path = dir.join("manifest.txt");
    write_file(&path, manifest)?;
    Ok(path)
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: MultiDomainDataset,
    /// Non-fatal findings, such as a domain missing a class.
    pub warnings: Vec<String>,
}

/// Reads a manifest and its data files. Paths in the manifest are relative
/// to the manifest's directory. Features already in `[0, 1]` are kept as is;
/// otherwise all features are min-max scaled to `[0, 1]` together.
pub fn load_dataset(manifest: &Path) -> Result<LoadedDataset> {
    let text = fs::read_to_string(manifest).map_err(CliError::io(manifest))?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
        _ => return Err(CliError::data(manifest, format!("first line must be `{MANIFEST_HEADER}`"))),
    }
    let mut classes: Option<Vec<String>> = None;
    let mut domain_files = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "classes" => classes = Some(fields[1..].iter().map(|s| s.to_string()).collect()),
            "domain" if fields.len() == 3 => domain_files.push((fields[1].to_string(), dir.join(fields[2]))),
            _ => return Err(CliError::data(manifest, format!("line {}: unrecognized entry `{line}`", n + 1))),
        }
    }
    let classes = classes.ok_or_else(|| CliError::data(manifest, "no `classes` line"))?;
    if domain_files.is_empty() {
        return Err(CliError::data(manifest, "no `domain` lines"));
    }

    let mut dim: Option<usize> = None;
    let mut domains = Vec::new();
    for (id, path) in domain_files {
        let file = fs::File::open(&path).map_err(CliError::io(&path))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
        let mut examples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let row = row + 1;
            let record = record.map_err(|e| CliError::data(&path, format!("row {row}: {e}")))?;
            let name = record.get(0).unwrap_or("");
            let label = classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| CliError::data(&path, format!("row {row}: unknown class `{name}`")))?;
            let features = record
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CliError::data(&path, format!("row {row}: {e}")))?;
            if features.iter().any(|x| !x.is_finite()) {
                return Err(CliError::data(&path, format!("row {row}: non-finite feature")));
            }
            match dim {
                None => dim = Some(features.len()),
                Some(d) if d != features.len() => {
                    return Err(CliError::data(
                        &path,
                        format!("row {row}: {} features, expected {d}", features.len()),
                    ))
                }
                _ => {}
            }
            examples.push(Example {
                features: Tensor::vector(features),
                label,
                domain: 0,
            });
        }
        domains.push((id, examples));
    }
    scale_unit(&mut domains);
    let dataset = MultiDomainDataset::new(classes, domains).map_err(|e| CliError::data(manifest, e.to_string()))?;
    let warnings = dataset
        .missing_classes()
        .into_iter()
        .map(|(d, c)| format!("domain {d} has no examples of class {c}"))
        .collect();
    Ok(LoadedDataset { dataset, warnings })
}

fn scale_unit(domains: &mut [(String, Vec<Example>)]) {
    let values = || domains.iter().flat_map(|(_, ex)| ex.iter().flat_map(|e| e.features.data().iter().copied()));
    let lo = values().fold(f64::INFINITY, f64::min);
    let hi = values().fold(f64::NEG_INFINITY, f64::max);
    if lo >= 0.0 && hi <= 1.0 {
        return;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    for (_, ex) in domains.iter_mut() {
        for e in ex.iter_mut() {
            e.features = e.features.map(|x| (x - lo) / span);
        }
    }
}

/// Text header (format, network, head, parameter shapes) ending in `end`,
/// followed by every parameter's little-endian f64 payload in header order.
pub fn write_checkpoint(path: &Path, model: &Model, run_seed: u64) -> Result<()> {
    let params = model.param_set();
    let widths: Vec<String> = model.spec.widths.iter().map(|w| w.to_string()).collect();
    let mut out = format!(
        "{CHECKPOINT_HEADER}\nwidths {}\nactivation {}\nclasses {}\nhead {}\nfeature-seed {}\nhead-seed {}\nrun-seed {run_seed}\nparams {}\n",
        widths.join(","),
        model.spec.activation.name(),
        model.classes(),
        model.head.mode.name(),
        model.spec.seed,
        model.head.seed,
        params.len(),
    )
    .into_bytes();
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(out, "{name} {}", dims.join(",")).expect("vec write");
    }
    out.extend_from_slice(b"end\n");
    for (_, t) in params.iter() {
        out.extend(t.to_le_bytes());
    }
    write_file(path, out)
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub run_seed: u64,
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let err = |m: &str| CliError::data(path, m.to_string());
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| err("missing header terminator"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| err("header is not text"))?;
    let mut payload = &bytes[end + 5..];
    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(err("not a checkpoint file"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| err("truncated header"))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| err(&format!("expected `{key}`, found `{line}`")))
    };
    let num = |s: String| s.parse::<u64>().map_err(|_| err(&format!("bad number `{s}`")));
    let widths = field("widths")?
        .split(',')
        .map(|w| w.parse::<usize>().map_err(|_| err("bad width")))
        .collect::<Result<Vec<_>>>()?;
    let activation = Activation::parse(&field("activation")?).ok_or_else(|| err("bad activation"))?;
    let classes = num(field("classes")?)? as usize;
    let mode = HeadMode::parse(&field("head")?).ok_or_else(|| err("bad head mode"))?;
    let feature_seed = num(field("feature-seed")?)?;
    let head_seed = num(field("head-seed")?)?;
    let run_seed = num(field("run-seed")?)?;
    let count = num(field("params")?)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| err("truncated parameter list"))?;
        let (name, dims) = line.split_once(' ').ok_or_else(|| err("bad parameter line"))?;
        let shape = dims
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|_| err("bad dimension")))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if payload.len() < 8 * n {
            return Err(err("payload too short"));
        }
        let data = payload[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        payload = &payload[8 * n..];
        entries.push((name.to_string(), Tensor::new(shape, data).map_err(|e| err(&e.to_string()))?));
    }
    if !payload.is_empty() {
        return Err(err("trailing bytes after payload"));
    }
    let spec = FeatureNetSpec {
        widths,
        activation,
        seed: feature_seed,
    };
    let m = spec.output_dim();
    let head = ClassifierHead::with_mode(m, classes, head_seed, mode).map_err(|e| err(&e.to_string()))?;
    let mut model = Model::new(spec, head).map_err(|e| err(&e.to_string()))?;
    let params = ParamSet::new(entries).map_err(|e| err(&e.to_string()))?;
    model.set_params(&params).map_err(|e| err(&e.to_string()))?;
    Ok(Checkpoint { model, run_seed })
}

/// Tab-separated `step, lr, loss, val_acc` rows; `val_acc` is empty between
/// evaluations.
pub fn training_log(outcome: &TrainOutcome) -> String {
    let mut s = String::from("step\tlr\tloss\tval_acc\n");
    let mut checkpoints = outcome.checkpoints.iter().peekable();
    for r in &outcome.curve {
        let val = match checkpoints.peek() {
            Some(c) if c.step == r.step + 1 => checkpoints.next().map(|c| c.val_acc.to_string()),
            _ => None,
        };
        s.push_str(&format!("{}\t{}\t{}\t{}\n", r.step, r.lr, r.loss, val.unwrap_or_default()));
    }
    s
}

fn data_rows<'a>(path: &'a Path, text: &'a str, header: &'a str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == header => {}
        _ => return Err(CliError::data(path, format!("expected header `{header}`"))),
    }
    Ok(lines.map(|(n, l)| (n + 1, l.split('\t').collect())))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|_| CliError::data(path, format!("line {line}: bad number `{s}`")))
}

/// Parses the pairwise KL table written by `analyze`.
pub fn read_shift_table(path: &Path, text: &str) -> Result<Vec<(String, String, f64)>> {
    data_rows(path, text, "from\tto\tkl")?
        .map(|(n, f)| match f.as_slice() {
            [a, b, k] => Ok((a.to_string(), b.to_string(), parse_f64(path, n, k)?)),
            _ => Err(CliError::data(path, format!("line {n}: expected 3 fields"))),
        })
        .collect()
}

/// Parses the projected class-centre table written by `analyze`.
pub fn read_projection_table(path: &Path, text: &str) -> Result<Vec<ProjectedCentre>> {
    data_rows(path, text, "class\tdomain\tu\tv")?
        .map(|(n, f)| match f.as_slice() {
            [c, d, u, v] => Ok(ProjectedCentre {
                class: c.to_string(),
                domain: d.to_string(),
                u: parse_f64(path, n, u)?,
                v: parse_f64(path, n, v)?,
            }),
            _ => Err(CliError::data(path, format!("line {n}: expected 4 fields"))),
        })
        .collect()
}
