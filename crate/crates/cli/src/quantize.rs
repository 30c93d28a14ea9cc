use std::fs;
use std::time::Instant;

use flrq::io::{write_bundle, LayerBundle, LayerSummary, Report};
use flrq::quantize::quantize_matrix;
use flrq::{flrq_layer, layer_error, layer_seed, BlcConfig, LowRankFactors, RankSelectionConfig};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{GlobalArgs, QuantizeArgs};
use crate::error::CliError;
use crate::layers::{discover, load, LayerSource};
use crate::pool;

pub const REPORT_FILE: &str = "report.json";

struct LayerOutput {
    summary: LayerSummary,
    bundle: LayerBundle,
}

/// Config with the rank-selection seed replaced by the layer's own seed.
pub fn layer_config(cfg: &BlcConfig, global_seed: u64, index: usize) -> BlcConfig {
    BlcConfig {
        rank: RankSelectionConfig {
            seed: layer_seed(global_seed, index as u64),
            ..cfg.rank
        },
        ..cfg.clone()
    }
}

fn quantize_one(index: usize, source: &LayerSource, cfg: &BlcConfig, global_seed: u64) -> Result<LayerOutput, CliError> {
    let cfg = layer_config(cfg, global_seed, index);
    let (w, calib) = load(source)?;
    let layer = flrq_layer(&w, &calib, &cfg)?;
    let (m, n) = w.shape();
    let rtn = quantize_matrix(&w, cfg.rank.d, cfg.group_size, cfg.mode)?;
    let rtn_rel = layer_error(&w, &rtn, &LowRankFactors::empty(m, n), &calib.x)?.rel;
    Ok(LayerOutput {
        summary: LayerSummary::from_layer(&source.name, &layer, cfg.rank.d_fp, Some(rtn_rel)),
        bundle: LayerBundle::from_layer(&layer, cfg.rank.seed, serde_json::to_value(&cfg)?),
    })
}

pub fn run(global: &GlobalArgs, args: &QuantizeArgs) -> Result<Report, CliError> {
    let start = Instant::now();
    let cfg = args.quant.blc_config(global.seed)?;
    let layers = discover(&args.input)?;
    let outputs: Vec<Result<LayerOutput, CliError>> = pool(global.threads)?.install(|| {
        layers
            .par_iter()
            .enumerate()
            .map(|(i, l)| quantize_one(i, l, &cfg, global.seed))
            .collect()
    });

    fs::create_dir_all(&global.out_dir)?;
    let mut summaries = Vec::with_capacity(layers.len());
    for (source, out) in layers.iter().zip(outputs) {
        let out = out.map_err(|e| e.context(&source.name))?;
        write_bundle(global.out_dir.join(&source.name), &out.bundle)?;
        let s = &out.summary;
        eprintln!(
            "{}: rank {} ({}) rel_error {:.6} rtn_rel_error {:.6} best epoch {}",
            s.name,
            s.rank,
            s.stop_reason,
            s.rel_error,
            s.rtn_rel_error.unwrap_or(f64::NAN),
            s.blc_best_epoch
        );
        summaries.push(out.summary);
    }

    let config = json!({
        "command": "quantize",
        "input": args.input.display().to_string(),
        "seed": global.seed,
        "blc": cfg,
    });
    let report = Report::new(summaries, config, global.timings.then(|| start.elapsed().as_secs_f64()));
    fs::write(global.out_dir.join(REPORT_FILE), report.to_json())?;
    Ok(report)
}
