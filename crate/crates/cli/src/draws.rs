//! Columnar CSV codec for posterior draws.

use std::io::{Read, Write};

use bnmm_core::{n_pairs, pair_of, BlockPairTable, ChainDraws, Draw, PosteriorDraws};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Dimensions needed to decode a draws file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawsLayout {
    pub n_blocks: usize,
    pub n_nodes: usize,
    pub n_coef: usize,
}

const SCALARS: [&str; 5] = ["beta_z", "sigma2_outcome", "sigma2_mediator", "sigma2_alpha_z", "sigma2_beta_m"];
const PAIR_FIELDS: [&str; 6] = ["beta_m", "alpha_z", "tau", "gamma", "edge_var", "meas_var"];

pub fn header(layout: &DrawsLayout) -> Vec<String> {
    let mut h: Vec<String> = vec!["chain".into(), "iteration".into()];
    h.extend(SCALARS.iter().map(|s| s.to_string()));
    h.extend((0..layout.n_coef).map(|c| format!("beta_x_{c}")));
    h.extend((0..layout.n_blocks).map(|q| format!("pi_{q}")));
    h.extend((0..layout.n_nodes).map(|v| format!("label_{v}")));
    for p in 0..n_pairs(layout.n_blocks) {
        let (q, r) = pair_of(p, layout.n_blocks);
        h.extend(PAIR_FIELDS.iter().map(|f| format!("{f}_{q}_{r}")));
    }
    h
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_draws<W: Write>(draws: &PosteriorDraws, layout: &DrawsLayout, out: W) -> CliResult<()> {
    let err = |e: csv::Error| CliError::Data(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(layout)).map_err(err)?;
    for (c, chain) in draws.chains.iter().enumerate() {
        for d in &chain.draws {
            let mut row = vec![c.to_string(), d.iteration.to_string()];
            row.extend(
                [d.beta_z, d.sigma2_outcome, d.sigma2_mediator, d.sigma2_alpha_z, d.sigma2_beta_m]
                    .into_iter()
                    .map(num),
            );
            row.extend(d.beta_x.iter().copied().map(num));
            row.extend(d.pi.iter().copied().map(num));
            row.extend(d.labels.iter().map(usize::to_string));
            for p in 0..d.tau.len() {
                row.push(num(d.beta_m[p]));
                row.push(num(d.alpha_z[p]));
                row.push(u8::from(d.tau[p]).to_string());
                row.push(u8::from(d.gamma[p]).to_string());
                row.push(num(d.edge_variance[p]));
                row.push(num(d.measurement_variance[p]));
            }
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

/// Decodes a draws file; run-level fields come from the caller.
pub fn read_draws<R: Read>(
    input: R,
    layout: &DrawsLayout,
    seeds: &[u64],
    n_iter: usize,
    burn_in: usize,
    thin: usize,
) -> CliResult<PosteriorDraws> {
    let mut rdr = csv::Reader::from_reader(input);
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header(layout) {
        return Err(CliError::Data("draws header does not match the manifest layout".into()));
    }
    let q = layout.n_blocks;
    let s = n_pairs(q);
    let mut chains: Vec<ChainDraws> = seeds
        .iter()
        .map(|&seed| ChainDraws {
            seed,
            draws: Vec::new(),
        })
        .collect();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let bad = |what: &str| CliError::Data(format!("draws line {}: bad {what}", line + 2));
        let mut it = rec.iter();
        let mut next = |what: &str| it.next().ok_or_else(|| bad(what));
        let f = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let u = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(what));
        let chain = u(next("chain")?, "chain")?;
        let iteration = u(next("iteration")?, "iteration")?;
        let mut sc = [0.0; 5];
        for (x, name) in sc.iter_mut().zip(SCALARS) {
            *x = f(next(name)?, name)?;
        }
        let beta_x = (0..layout.n_coef).map(|_| f(next("beta_x")?, "beta_x")).collect::<CliResult<Vec<_>>>()?;
        let pi = (0..q).map(|_| f(next("pi")?, "pi")).collect::<CliResult<Vec<_>>>()?;
        let labels = (0..layout.n_nodes)
            .map(|_| u(next("label")?, "label"))
            .collect::<CliResult<Vec<_>>>()?;
        if labels.iter().any(|&g| g >= q) {
            return Err(bad("label"));
        }
        let mut cols: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(s)).collect();
        for _ in 0..s {
            for (k, c) in cols.iter_mut().enumerate() {
                c.push(f(next(PAIR_FIELDS[k])?, PAIR_FIELDS[k])?);
            }
        }
        let table = |v: Vec<f64>| BlockPairTable::from_values(q, v).expect("pair count matches");
        let flags = |v: &[f64]| BlockPairTable::from_values(q, v.iter().map(|&x| x != 0.0).collect()).expect("pair count matches");
        let draw = Draw {
            iteration,
            beta_z: sc[0],
            sigma2_outcome: sc[1],
            sigma2_mediator: sc[2],
            sigma2_alpha_z: sc[3],
            sigma2_beta_m: sc[4],
            beta_x,
            pi,
            labels,
            tau: flags(&cols[2]),
            gamma: flags(&cols[3]),
            beta_m: table(cols[0].clone()),
            alpha_z: table(cols[1].clone()),
            edge_variance: table(cols[4].clone()),
            measurement_variance: table(cols[5].clone()),
        };
        chains
            .get_mut(chain)
            .ok_or_else(|| bad("chain index"))?
            .draws
            .push(draw);
    }
    Ok(PosteriorDraws {
        n_blocks: q,
        n_nodes: layout.n_nodes,
        n_iter,
        burn_in,
        thin,
        chains,
    })
}
