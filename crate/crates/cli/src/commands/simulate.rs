use rdvdl_core::data::write_csv;
use rdvdl_core::sim::{simulate_fault, simulate_normal, FaultSpec, PlantConfig};

use crate::args::SimulateArgs;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, write_text};
use crate::scenario::Scenario;

const DEFAULT_FAULTS: [u8; 3] = [1, 5, 9];

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let plant = PlantConfig::awe();
    let (samples, seed, specs) = match &args.scenario {
        Some(path) => {
            let sc = Scenario::load(path)?;
            let specs = sc.fault_specs(&plant)?;
            (sc.samples.unwrap_or(args.samples), sc.seed.unwrap_or(args.seed), specs)
        }
        None if args.normal_only => (args.samples, args.seed, Vec::new()),
        None => {
            let ids: &[u8] = if args.fault_id.is_empty() {
                &DEFAULT_FAULTS
            } else {
                &args.fault_id
            };
            let specs = ids
                .iter()
                .map(|&id| {
                    let mut spec = FaultSpec::preset(id, args.onset as usize)?;
                    spec.propagate = args.propagate;
                    Ok(spec)
                })
                .collect::<CliResult<Vec<_>>>()?;
            (args.samples, args.seed, specs)
        }
    };
    let mut ids: Vec<u8> = specs.iter().map(|s| s.fault_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("each fault may appear only once per run".into()));
    }
    if samples < 2 {
        return Err(CliError::Config("at least 2 samples are required".into()));
    }

    ensure_dir(&args.output_dir)?;
    let normal = simulate_normal(&plant, samples, seed)?;
    let path = args.output_dir.join("normal.csv");
    write_csv(&path, &normal)?;
    println!("wrote {} ({samples} samples, seed {seed})", path.display());
    for spec in &specs {
        let data = simulate_fault(&plant, samples, seed, spec)?;
        let path = args.output_dir.join(format!("fault_{}.csv", spec.fault_id));
        write_csv(&path, &data)?;
        let tags: Vec<&str> = spec.columns().iter().map(|&c| plant.names[c].as_str()).collect();
        println!(
            "wrote {} (fault {}: {}; onset {}; {})",
            path.display(),
            spec.fault_id,
            spec.description,
            spec.onset_index,
            tags.join(", ")
        );
    }
    let manifest = serde_json::json!({
        "samples": samples,
        "seed": seed,
        "faults": specs,
    });
    write_text(
        &args.output_dir.join("scenario.json"),
        &serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?,
    )?;
    Ok(())
}
