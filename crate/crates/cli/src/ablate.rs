use std::collections::BTreeMap;
use std::fs;

use flrq::io::extra_bits;
use flrq::linalg::fro_norm;
use flrq::quantize::quantize_matrix;
use flrq::{
    deflate, flrq_layer, gen_layer, layer_error, layer_seed, BlcConfig, CalibrationBatch, Family, LowRankFactors,
    Matrix, RankSelectionConfig, SketchConfig, SynthSpec,
};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{AblateArgs, Ablation, GlobalArgs};
use crate::error::CliError;
use crate::layers::{discover, layer_name, load};
use crate::pool;
use crate::quantize::layer_config;
use crate::table::{Cell, Table};

pub const IT_VALUES: [usize; 4] = [0, 1, 2, 4];

struct Workload {
    name: String,
    weight: Matrix,
    calib: CalibrationBatch,
}

fn workloads(global: &GlobalArgs, args: &AblateArgs) -> Result<Vec<Workload>, CliError> {
    if let Some(input) = &args.input {
        return discover(input)?
            .iter()
            .map(|l| {
                let (weight, calib) = load(l)?;
                Ok(Workload { name: l.name.clone(), weight, calib })
            })
            .collect();
    }
    if args.layers == 0 {
        return Err(CliError::usage("--layers must be >= 1"));
    }
    (0..args.layers)
        .map(|i| {
            let s = gen_layer(&SynthSpec {
                m: args.m,
                n: args.n,
                family: Family::OutlierChannels { count: args.count, boost: args.boost },
                seed: layer_seed(global.seed, i as u64),
                tokens: args.tokens,
            })?;
            Ok(Workload { name: layer_name(i), weight: s.weight, calib: s.calibration })
        })
        .collect()
}

fn rtn_rel(w: &Workload, cfg: &BlcConfig) -> Result<f64, CliError> {
    let (m, n) = w.weight.shape();
    let q = quantize_matrix(&w.weight, cfg.rank.d, cfg.group_size, cfg.mode)?;
    Ok(layer_error(&w.weight, &q, &LowRankFactors::empty(m, n), &w.calib.x)?.rel)
}

fn ablate_it(w: &Workload, args: &AblateArgs, cfg: &BlcConfig) -> Result<Vec<Vec<Cell>>, CliError> {
    let (m, n) = w.weight.shape();
    let rank = args.rank.min(m.min(n));
    let norm = fro_norm(&w.weight);
    IT_VALUES
        .iter()
        .map(|&it| {
            let d = deflate(&w.weight, rank, &SketchConfig { it, seed: cfg.rank.seed, reorthogonalize: false })?;
            let residual = *d.residual_norms.last().expect("non-empty");
            let layer = flrq_layer(
                &w.weight,
                &w.calib,
                &BlcConfig { rank: RankSelectionConfig { it, ..cfg.rank }, ..cfg.clone() },
            )?;
            Ok(vec![
                w.name.clone().into(),
                it.into(),
                d.factors.rank().into(),
                residual.into(),
                (if norm > 0.0 { residual / norm } else { 0.0 }).into(),
                layer.rank().into(),
                layer.error.rel.into(),
            ])
        })
        .collect()
}

fn ablate_blc(w: &Workload, args: &AblateArgs, cfg: &BlcConfig) -> Result<Vec<Vec<Cell>>, CliError> {
    let off = flrq_layer(&w.weight, &w.calib, &BlcConfig { epochs: 1, ..cfg.clone() })?;
    let on = flrq_layer(&w.weight, &w.calib, &BlcConfig { epochs: args.blc_epochs, ..cfg.clone() })?;
    Ok(vec![vec![
        w.name.clone().into(),
        rtn_rel(w, cfg)?.into(),
        off.error.rel.into(),
        on.error.rel.into(),
        off.rank().into(),
        on.rank().into(),
        on.best_epoch.into(),
    ]])
}

fn ablate_x(w: &Workload, args: &AblateArgs, cfg: &BlcConfig) -> Result<Vec<Vec<Cell>>, CliError> {
    let (m, n) = w.weight.shape();
    args.x_values
        .iter()
        .map(|&x| {
            let layer = flrq_layer(&w.weight, &w.calib, &BlcConfig { rank: RankSelectionConfig { x, ..cfg.rank }, ..cfg.clone() })?;
            Ok(vec![
                w.name.clone().into(),
                x.into(),
                layer.rank().into(),
                extra_bits(cfg.rank.d_fp, layer.rank(), m, n).into(),
                layer.error.rel.into(),
            ])
        })
        .collect()
}

fn ablate_fixed_vs_flex(w: &Workload, args: &AblateArgs, cfg: &BlcConfig) -> Result<Vec<Vec<Cell>>, CliError> {
    let (m, n) = w.weight.shape();
    let flex = flrq_layer(&w.weight, &w.calib, cfg)?;
    let fixed = flrq_layer(&w.weight, &w.calib, &BlcConfig { fixed_rank: Some(args.fixed), ..cfg.clone() })?;
    Ok([("flex", &flex), ("fixed", &fixed)]
        .into_iter()
        .map(|(method, l)| {
            vec![
                w.name.clone().into(),
                method.into(),
                l.rank().into(),
                extra_bits(cfg.rank.d_fp, l.rank(), m, n).into(),
                l.error.rel.into(),
            ]
        })
        .collect())
}

fn header(which: Ablation) -> Vec<&'static str> {
    match which {
        Ablation::It => vec!["layer", "it", "rank", "residual", "rel_residual", "flrq_rank", "flrq_rel_error"],
        Ablation::Blc => vec![
            "layer",
            "plain_rel_error",
            "blc_off_rel_error",
            "blc_on_rel_error",
            "blc_off_rank",
            "blc_on_rank",
            "best_epoch",
        ],
        Ablation::X => vec!["layer", "x", "rank", "extra_bits", "rel_error"],
        Ablation::FixedVsFlex => vec!["layer", "method", "rank", "extra_bits", "rel_error"],
    }
}

/// Column means, grouped by the value of `key` when given.
pub fn means(table: &Table, key: Option<&str>) -> BTreeMap<String, BTreeMap<String, f64>> {
    let key_col = key.and_then(|k| table.column(k));
    let mut sums: BTreeMap<String, (usize, BTreeMap<String, f64>)> = BTreeMap::new();
    for row in &table.rows {
        let group = match key_col {
            Some(c) => match &row[c] {
                Cell::Text(s) => s.clone(),
                Cell::Int(v) => v.to_string(),
                Cell::Float(v) => v.to_string(),
            },
            None => "all".to_string(),
        };
        let entry = sums.entry(group).or_default();
        entry.0 += 1;
        for (i, cell) in row.iter().enumerate() {
            if Some(i) == key_col {
                continue;
            }
            if let Some(v) = cell.as_f64() {
                *entry.1.entry(table.header[i].to_string()).or_default() += v;
            }
        }
    }
    sums.into_iter()
        .map(|(g, (count, cols))| (g, cols.into_iter().map(|(c, s)| (c, s / count as f64)).collect()))
        .collect()
}

pub fn run(global: &GlobalArgs, args: &AblateArgs) -> Result<Table, CliError> {
    let default_bits = if args.which == Ablation::Blc { 2 } else { 4 };
    let cfg = args.quant.blc_config_or_bits(global.seed, default_bits)?;
    if args.which == Ablation::Blc && args.blc_epochs == 0 {
        return Err(CliError::usage("--blc-epochs must be >= 1"));
    }
    if args.which == Ablation::FixedVsFlex && args.fixed == 0 {
        return Err(CliError::usage("--fixed must be >= 1"));
    }
    if args.which == Ablation::It && args.rank == 0 {
        return Err(CliError::usage("--rank must be >= 1"));
    }
    let work = workloads(global, args)?;
    let rows: Vec<Result<Vec<Vec<Cell>>, CliError>> = pool(global.threads)?.install(|| {
        work.par_iter()
            .enumerate()
            .map(|(i, w)| {
                let cfg = layer_config(&cfg, global.seed, i);
                match args.which {
                    Ablation::It => ablate_it(w, args, &cfg),
                    Ablation::Blc => ablate_blc(w, args, &cfg),
                    Ablation::X => ablate_x(w, args, &cfg),
                    Ablation::FixedVsFlex => ablate_fixed_vs_flex(w, args, &cfg),
                }
                .map_err(|e| e.context(&w.name))
            })
            .collect()
    });
    let mut table = Table::new(header(args.which));
    for r in rows {
        for row in r? {
            table.push(row);
        }
    }

    let group = match args.which {
        Ablation::It => Some("it"),
        Ablation::X => Some("x"),
        Ablation::FixedVsFlex => Some("method"),
        Ablation::Blc => None,
    };
    let summary = means(&table, group);
    fs::create_dir_all(&global.out_dir)?;
    let stem = format!("ablate_{}", args.which.name());
    table.write_csv_file(&global.out_dir.join(format!("{stem}.csv")))?;
    let echo = json!({
        "command": "ablate",
        "which": args.which.name(),
        "seed": global.seed,
        "input": args.input.as_ref().map(|p| p.display().to_string()),
        "layers": work.len(),
        "blc": cfg,
        "means": summary,
    });
    fs::write(global.out_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&echo)? + "\n")?;
    for (g, cols) in &summary {
        let cols: Vec<String> = cols.iter().map(|(c, v)| format!("{c}={v:.6}")).collect();
        println!("{g}: {}", cols.join(" "));
    }
    Ok(table)
}
