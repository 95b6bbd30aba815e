//! Gelman-Rubin potential scale reduction and long-format trace files.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::effects::{effects_from_draw, Contrast};
use crate::error::{BnmmError, Result};
use crate::types::PosteriorDraws;

pub const TRACE_HEADER: &str = "chain,iteration,parameter,value";

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrfDetail {
    pub psrf: f64,
    pub chain_means: Vec<f64>,
    pub chain_variances: Vec<f64>,
    /// Draws per chain after truncation to the shortest chain.
    pub n_draws: usize,
}

/// Classic PSRF, `sqrt(((n-1)/n W + B/n) / W)`, with chains truncated to
/// the shortest one. `W = 0` gives 1 when `B = 0` and infinity otherwise.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    Ok(gelman_rubin_detail(chains)?.psrf)
}

pub fn gelman_rubin_detail(chains: &[Vec<f64>]) -> Result<PsrfDetail> {
    if chains.len() < 2 {
        return Err(BnmmError::Config(format!(
            "PSRF needs at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 {
        return Err(BnmmError::Config("PSRF needs at least 2 draws per chain".into()));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().zip(&means).map(|(c, &m)| sample_var(c, m)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let nf = n as f64;
    let b = nf * sample_var(&means, grand);
    // variances at the rounding level of the values count as zero
    let scale = chains
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let tiny = (scale * 1e-12).powi(2).max(f64::MIN_POSITIVE);
    let psrf = if w <= tiny {
        if b <= tiny * nf {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (((nf - 1.0) / nf * w + b / nf) / w).sqrt()
    };
    Ok(PsrfDetail {
        psrf,
        chain_means: means,
        chain_variances: vars,
        n_draws: n,
    })
}

/// PSRF after splitting every chain into halves.
pub fn split_gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    gelman_rubin(&split_halves(chains))
}

fn split_halves(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[half..2 * half].to_vec()])
        .collect()
}

/// Named per-chain scalar sequences.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalarStreams {
    /// Parameter name to `[chain][draw]` values, in name order.
    pub streams: BTreeMap<String, Vec<Vec<f64>>>,
    /// Iteration index per `[chain][draw]`.
    pub iterations: Vec<Vec<usize>>,
}

impl ScalarStreams {
    pub fn get(&self, name: &str) -> Option<&Vec<Vec<f64>>> {
        self.streams.get(name)
    }
}

pub const MONITORED: [&str; 7] = ["beta_z", "sigma2_outcome", "sigma2_mediator", "nde", "nie", "te", "n_active"];

/// Relabeling-invariant scalar streams of every chain.
pub fn monitored_scalars(draws: &PosteriorDraws, contrast: Contrast) -> ScalarStreams {
    let mut out = ScalarStreams::default();
    let mut cols: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(draws.n_chains()); MONITORED.len()];
    for chain in &draws.chains {
        let mut per = vec![Vec::with_capacity(chain.draws.len()); MONITORED.len()];
        for d in &chain.draws {
            let e = effects_from_draw(d, contrast);
            let active = d
                .tau
                .values()
                .iter()
                .zip(d.gamma.values())
                .filter(|(&t, &g)| t && g)
                .count() as f64;
            let row = [d.beta_z, d.sigma2_outcome, d.sigma2_mediator, e.nde, e.nie, e.te, active];
            for (c, v) in per.iter_mut().zip(row) {
                c.push(v);
            }
        }
        for (c, p) in cols.iter_mut().zip(per) {
            c.push(p);
        }
        out.iterations.push(chain.draws.iter().map(|d| d.iteration).collect());
    }
    for (name, c) in MONITORED.iter().zip(cols) {
        out.streams.insert(name.to_string(), c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrReport {
    pub entries: BTreeMap<String, PsrfDetail>,
    pub split: bool,
}

impl GrReport {
    pub fn psrf(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|d| d.psrf)
    }

    pub fn max_psrf(&self) -> f64 {
        self.entries.values().map(|d| d.psrf).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// PSRF of every monitored stream.
pub fn gr_report(draws: &PosteriorDraws, contrast: Contrast, split: bool) -> Result<GrReport> {
    let streams = monitored_scalars(draws, contrast);
    let mut entries = BTreeMap::new();
    for (name, chains) in &streams.streams {
        let detail = if split {
            gelman_rubin_detail(&split_halves(chains))?
        } else {
            gelman_rubin_detail(chains)?
        };
        entries.insert(name.clone(), detail);
    }
    Ok(GrReport { entries, split })
}

/// Writes `chain,iteration,parameter,value` rows, chain-major then draw,
/// then parameter name.
pub fn write_trace<W: Write>(streams: &ScalarStreams, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| BnmmError::Io(e.to_string());
    w.write_record(TRACE_HEADER.split(',')).map_err(io)?;
    for (c, iters) in streams.iterations.iter().enumerate() {
        for (d, &it) in iters.iter().enumerate() {
            for (name, chains) in &streams.streams {
                let v = chains[c][d];
                w.write_record([c.to_string(), it.to_string(), name.clone(), format_f64(v)])
                    .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| BnmmError::Io(e.to_string()))?;
    Ok(())
}

/// Shortest decimal that round-trips.
fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_trace<R: Read>(input: R) -> Result<ScalarStreams> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| BnmmError::Io(e.to_string()))?;
    if header.trim_end_matches(['\r', '\n']) != TRACE_HEADER {
        return Err(BnmmError::Io(format!("unexpected trace header {header:?}")));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut out = ScalarStreams::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| BnmmError::Io(e.to_string()))?;
        let bad = |what: &str| BnmmError::Io(format!("bad trace {what}: {rec:?}"));
        let chain: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("chain"))?;
        let it: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("iteration"))?;
        let name = rec.get(2).ok_or_else(|| bad("parameter"))?.to_string();
        let v: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("value"))?;
        if out.iterations.len() <= chain {
            out.iterations.resize(chain + 1, Vec::new());
        }
        if out.iterations[chain].last() != Some(&it) {
            out.iterations[chain].push(it);
        }
        let s = out.streams.entry(name).or_default();
        if s.len() <= chain {
            s.resize(chain + 1, Vec::new());
        }
        s[chain].push(v);
    }
    Ok(out)
}
