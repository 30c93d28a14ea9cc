use std::fs;

use flrq::io::{write_container_file, TensorContainer};
use flrq::{gen_layer, layer_seed, SynthSpec};
use serde_json::json;

use crate::args::{GenSynthArgs, GlobalArgs};
use crate::error::CliError;
use crate::layers::{layer_name, CALIB_FILE, WEIGHT_FILE};

pub fn run(global: &GlobalArgs, args: &GenSynthArgs) -> Result<Vec<SynthSpec>, CliError> {
    if args.layers == 0 {
        return Err(CliError::usage("--layers must be >= 1"));
    }
    let mut specs = Vec::with_capacity(args.layers);
    for i in 0..args.layers {
        let spec = SynthSpec {
            m: args.m,
            n: args.n,
            family: args.family(),
            seed: layer_seed(global.seed, i as u64),
            tokens: args.tokens,
        };
        let layer = gen_layer(&spec)?;
        let dir = global.out_dir.join(layer_name(i));
        fs::create_dir_all(&dir)?;
        write_container_file(dir.join(WEIGHT_FILE), &TensorContainer::from_matrix(&layer.weight))?;
        write_container_file(dir.join(CALIB_FILE), &TensorContainer::from_matrix(&layer.calibration.x))?;
        specs.push(spec);
    }
    let echo = json!({
        "command": "gen-synth",
        "seed": global.seed,
        "layers": specs,
    });
    fs::write(global.out_dir.join("synth.json"), serde_json::to_string_pretty(&echo)? + "\n")?;
    eprintln!("wrote {} layer(s) to {}", args.layers, global.out_dir.display());
    Ok(specs)
}
