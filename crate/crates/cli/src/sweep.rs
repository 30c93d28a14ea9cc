use std::fs;

use flrq::linalg::{amax, fro_norm, rank1_subtract};
use flrq::quantize::{dequantize, quantize_with};
use flrq::{r1_step, FlrqError, Matrix, QuantSpec, SketchConfig, SketchRng};

use crate::args::{GlobalArgs, RankSweepArgs};
use crate::error::CliError;
use crate::layers::{read_optional_calibration, read_weight};
use crate::table::Table;

pub const SWEEP_FILE: &str = "rank_sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub r: usize,
    pub amax: f64,
    pub amax_envelope: f64,
    pub rel_error: f64,
}

/// Relative error of `W ≈ dequant(Q(R)) + (W − R)`, i.e. of `R − dequant(Q(R))`.
fn rel_error(residual: &Matrix, spec: QuantSpec, x: Option<&Matrix>, denom: f64) -> Result<f64, CliError> {
    let q = quantize_with(residual, spec)?;
    let diff = residual.sub(&dequantize(&q))?;
    let num = match x {
        Some(x) => fro_norm(&diff.matmul(x)?),
        None => fro_norm(&diff),
    };
    Ok(if denom > 0.0 { num / denom } else { 0.0 })
}

/// Greedy deflation of the unscaled weight, quantizing the residual at every rank.
pub fn sweep(
    w: &Matrix,
    x: Option<&Matrix>,
    max_rank: usize,
    it: usize,
    spec: QuantSpec,
    seed: u64,
) -> Result<Vec<SweepRow>, CliError> {
    let denom = match x {
        Some(x) => fro_norm(&w.matmul(x)?),
        None => fro_norm(w),
    };
    let cfg = SketchConfig { it, seed, reorthogonalize: false };
    let mut rng = SketchRng::new(seed);
    let mut residual = w.clone();
    let mut envelope = f64::INFINITY;
    let mut rows = Vec::with_capacity(max_rank + 1);
    for r in 0..=max_rank {
        if r > 0 {
            if fro_norm(&residual) == 0.0 {
                eprintln!("warning: residual exhausted at rank {}", r - 1);
                break;
            }
            let pair = match r1_step(&residual, &cfg, &mut rng) {
                Ok(p) => p,
                Err(FlrqError::DegenerateProjection { .. }) => {
                    eprintln!("warning: degenerate projection at rank {r}, stopping");
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            residual = rank1_subtract(&residual, &pair.left, &pair.right)?;
        }
        let a = amax(&residual)?;
        envelope = envelope.min(a);
        rows.push(SweepRow {
            r,
            amax: a,
            amax_envelope: envelope,
            rel_error: rel_error(&residual, spec, x, denom)?,
        });
    }
    Ok(rows)
}

pub fn to_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(vec!["r", "amax", "amax_envelope", "rel_error"]);
    for row in rows {
        t.push(vec![row.r.into(), row.amax.into(), row.amax_envelope.into(), row.rel_error.into()]);
    }
    t
}

pub fn run(global: &GlobalArgs, args: &RankSweepArgs) -> Result<Vec<SweepRow>, CliError> {
    let w = read_weight(&args.input)?;
    let calib = read_optional_calibration(&args.input)?;
    if let Some(c) = &calib {
        if c.x.rows() != w.cols() {
            return Err(CliError::data(format!(
                "calibration has {} channels, weight has {} columns",
                c.x.rows(),
                w.cols()
            )));
        }
    }
    let limit = w.rows().min(w.cols());
    let max_rank = if args.max_rank > limit {
        eprintln!("warning: --max-rank {} clamped to min(m, n) = {limit}", args.max_rank);
        limit
    } else {
        args.max_rank
    };
    let spec = QuantSpec::new(args.d, args.group_size, args.mode.into())?;
    let rows = sweep(&w, calib.as_ref().map(|c| &c.x), max_rank, args.it, spec, global.seed)?;
    let path = match &args.output {
        Some(p) => p.clone(),
        None => {
            fs::create_dir_all(&global.out_dir)?;
            global.out_dir.join(SWEEP_FILE)
        }
    };
    to_table(&rows).write_csv_file(&path)?;
    eprintln!("wrote {} rows to {}", rows.len(), path.display());
    Ok(rows)
}
