//! Dataset files, atomic writes and digests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bnmm_core::{validate_dataset, Connectome, Dataset, SubjectRecord};
use sha2::{Digest, Sha256};

use crate::error::{at, CliError, CliResult};

pub const SUBJECTS_FILE: &str = "subjects.csv";
pub const CONNECTOME_SEPARATOR: char = ';';

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(at(dir))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(at(&tmp))?;
        f.write_all(bytes).map_err(at(&tmp))?;
        f.sync_all().map_err(at(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(at(path))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(at(path))?;
    serde_json::from_str(&text).map_err(at(path))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(at(path))?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Refuses to reuse an existing output directory unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let empty = dir.is_dir() && fs::read_dir(dir).map_err(at(dir))?.next().is_none();
        if !empty && !force {
            return Err(CliError::Usage(format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(at(dir))?;
    Ok(())
}

/// Headerless square CSV.
pub fn read_connectome(path: &Path) -> CliResult<Connectome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(at(path))?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(at(path))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>().map_err(|_| {
                    CliError::Data(format!(
                        "{}: row {}, column {}: cannot parse {s:?} as a number",
                        path.display(),
                        r + 1,
                        c + 1
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != n) {
        return Err(CliError::Data(format!(
            "{}: row {} has {} values, expected {n} for a square matrix",
            path.display(),
            r + 1,
            row.len()
        )));
    }
    Connectome::from_rows(&rows).map_err(at(path))
}

pub fn write_connectome(path: &Path, a: &Connectome) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for j in 0..a.size() {
        w.write_record(a.row(j).iter().map(|x| format!("{x:?}")))
            .map_err(at(path))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// A dataset loaded from disk, with the files it came from.
pub struct LoadedData {
    pub dataset: Dataset,
    pub ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Reads `id,outcome,exposure,<covariates...>,connectomes`; connectome
/// paths are `;`-separated and relative to the subjects file.
pub fn read_dataset(subjects: &Path) -> CliResult<LoadedData> {
    let base = subjects.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(subjects)
        .map_err(at(subjects))?;
    let header: Vec<String> = rdr.headers().map_err(at(subjects))?.iter().map(str::to_string).collect();
    let ok = header.len() >= 4
        && header[0] == "id"
        && header[1] == "outcome"
        && header[2] == "exposure"
        && header[header.len() - 1] == "connectomes";
    if !ok {
        return Err(CliError::Data(format!(
            "{}: header must be id,outcome,exposure,[covariates...],connectomes, got {}",
            subjects.display(),
            header.join(",")
        )));
    }
    let covariate_names = header[3..header.len() - 1].to_vec();
    let mut ids = Vec::new();
    let mut records = Vec::new();
    let mut files = vec![subjects.to_path_buf()];
    let mut n_nodes = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(at(subjects))?;
        let line = r + 2;
        let num = |c: usize| -> CliResult<f64> {
            rec[c].parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: line {line}, column {}: cannot parse {:?} as a number",
                    subjects.display(),
                    header[c],
                    &rec[c]
                ))
            })
        };
        let covariates = (3..header.len() - 1).map(num).collect::<CliResult<Vec<_>>>()?;
        let mut connectomes = Vec::new();
        for p in rec[header.len() - 1].split(CONNECTOME_SEPARATOR).filter(|s| !s.is_empty()) {
            let path = base.join(p.trim());
            let a = read_connectome(&path)?;
            if *n_nodes.get_or_insert(a.size()) != a.size() {
                return Err(CliError::Data(format!(
                    "{}: {}x{} matrix, other scans are {}x{}",
                    path.display(),
                    a.size(),
                    a.size(),
                    n_nodes.unwrap_or(0),
                    n_nodes.unwrap_or(0)
                )));
            }
            connectomes.push(a);
            files.push(path);
        }
        ids.push(rec[0].to_string());
        records.push(SubjectRecord {
            outcome: num(1)?,
            exposure: num(2)?,
            covariates,
            connectomes,
        });
    }
    let raw = Dataset {
        subjects: records,
        n_nodes: n_nodes.unwrap_or(0),
        n_covariates: covariate_names.len(),
    };
    let dataset = validate_dataset(raw).map_err(|e| CliError::Data(format!("{}: {e}", subjects.display())))?;
    Ok(LoadedData {
        dataset,
        ids,
        covariate_names,
        files,
    })
}

/// Writes a dataset as `subjects.csv` plus `connectomes/sub{i}_scan{k}.csv`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> CliResult<Vec<PathBuf>> {
    let cdir = dir.join("connectomes");
    fs::create_dir_all(&cdir).map_err(at(&cdir))?;
    let mut files = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "outcome".into(), "exposure".into()];
    header.extend((1..=dataset.n_covariates).map(|c| format!("x{c}")));
    header.push("connectomes".into());
    w.write_record(&header).map_err(|e| CliError::Data(e.to_string()))?;
    for (i, s) in dataset.subjects.iter().enumerate() {
        let mut names = Vec::new();
        for (k, a) in s.connectomes.iter().enumerate() {
            let rel = format!("connectomes/sub{i:03}_scan{k}.csv");
            let path = dir.join(&rel);
            write_connectome(&path, a)?;
            files.push(path);
            names.push(rel);
        }
        let mut row = vec![format!("sub{i:03}"), format!("{:?}", s.outcome), format!("{:?}", s.exposure)];
        row.extend(s.covariates[1..].iter().map(|x| format!("{x:?}")));
        row.push(names.join(&CONNECTOME_SEPARATOR.to_string()));
        w.write_record(&row).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let subjects = dir.join(SUBJECTS_FILE);
    write_atomic(&subjects, &bytes)?;
    files.insert(0, subjects);
    Ok(files)
}
