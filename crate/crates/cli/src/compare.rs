use std::fs;
use std::time::Instant;

use flrq::linalg::fro_norm;
use flrq::{deflate, svd_oracle, SketchConfig};

use crate::args::{CompareSvdArgs, GlobalArgs};
use crate::error::CliError;
use crate::layers::read_weight;
use crate::table::Table;

pub const COMPARE_FILE: &str = "compare_svd.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rank: usize,
    pub it: usize,
    pub weight_norm: f64,
    pub svd_residual: f64,
    pub sketch_residual: f64,
    pub svd_ms: f64,
    pub sketch_ms: f64,
}

impl Comparison {
    pub fn ratio(&self) -> f64 {
        if self.svd_residual > 0.0 {
            self.sketch_residual / self.svd_residual
        } else if self.sketch_residual == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["method", "rank", "it", "residual", "rel_residual", "ratio_to_svd", "wall_ms"]);
        let rel = |v: f64| if self.weight_norm > 0.0 { v / self.weight_norm } else { 0.0 };
        t.push(vec![
            "svd".into(),
            self.rank.into(),
            "".into(),
            self.svd_residual.into(),
            rel(self.svd_residual).into(),
            1.0.into(),
            self.svd_ms.into(),
        ]);
        t.push(vec![
            "r1_sketch".into(),
            self.rank.into(),
            self.it.into(),
            self.sketch_residual.into(),
            rel(self.sketch_residual).into(),
            self.ratio().into(),
            self.sketch_ms.into(),
        ]);
        t
    }
}

pub fn run(global: &GlobalArgs, args: &CompareSvdArgs) -> Result<Comparison, CliError> {
    let w = read_weight(&args.input)?;
    let limit = w.rows().min(w.cols());
    if args.r == 0 || args.r > limit {
        return Err(CliError::usage(format!("--r must satisfy 1 <= r <= min(m, n) = {limit}")));
    }
    let t0 = Instant::now();
    let svd = svd_oracle(&w)?;
    let svd_residual = fro_norm(&w.sub(&svd.truncated(args.r))?);
    let svd_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let cfg = SketchConfig { it: args.it, seed: global.seed, reorthogonalize: false };
    let d = deflate(&w, args.r, &cfg)?;
    let sketch_residual = fro_norm(&w.sub(&d.factors.reconstruct())?);
    let sketch_ms = t1.elapsed().as_secs_f64() * 1e3;
    if d.truncated {
        eprintln!("warning: residual exhausted at rank {}", d.factors.rank());
    }

    let cmp = Comparison {
        rank: args.r,
        it: args.it,
        weight_norm: fro_norm(&w),
        svd_residual,
        sketch_residual,
        svd_ms,
        sketch_ms,
    };
    let table = cmp.to_table();
    fs::create_dir_all(&global.out_dir)?;
    table.write_csv_file(&global.out_dir.join(COMPARE_FILE))?;
    table.write_csv(std::io::stdout().lock())?;
    Ok(cmp)
}
