use pathquant_core::encode_png;
use pathquant_core::fixture::{random_spec, render, FixtureError, FixtureLayout, FixtureSpec};
use pathquant_server::Config;

use crate::{Failure, FixtureArgs, Outcome};

pub fn run(config: &Config, args: &FixtureArgs) -> Outcome {
    let spec = match (&args.spec, &args.random) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path.display(), e))?;
            let spec: FixtureSpec =
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            spec.validate().map_err(invalid)?;
            spec
        }
        (None, Some(v)) => {
            let [k, p, seed] = v[..] else { unreachable!("clap enforces three values") };
            let layout = FixtureLayout { width: args.width, height: args.height, ..FixtureLayout::default() };
            random_spec(&layout, k as usize, p as usize, seed).map_err(invalid)?
        }
        (None, None) => unreachable!("clap requires --spec or --random"),
    };
    let stains = config.stain_matrix().map_err(|e| Failure::usage(e.to_string()))?;
    crate::write(&args.out, &encode_png(&render(&spec, &stains)))?;
    if let Some(path) = &args.truth {
        let json = serde_json::to_string_pretty(&spec.truth()).expect("truth serializes");
        crate::write(path, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn invalid(e: FixtureError) -> Failure {
    Failure::usage(e.to_string())
}
