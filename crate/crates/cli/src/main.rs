use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use levlab_cli::args::{Cli, Command};
use levlab_cli::commands;
use levlab_cli::server::{self, AppState};
use serde_json::Value;

fn emit(value: &Value, out: Option<&Path>) -> levlab::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> levlab::Result<()> {
    let store = commands::store(cli.data_dir);
    match cli.command {
        Command::DerivePlant(a) => emit(&commands::derive_plant(&a)?, a.out.as_deref()),
        Command::Simulate(a) => {
            let out = commands::simulate(&a, &store)?;
            match &a.out {
                Some(p) => out.trace.save_csv(p)?,
                None => print!("{}", out.trace.to_csv_string()),
            }
            if let Some(p) = &a.metrics_out {
                emit(&out.report, Some(p))?;
            }
            if a.out.is_some() {
                emit(&out.report, None)?;
            } else {
                eprintln!("{}", serde_json::to_string_pretty(&out.report).expect("json values serialize"));
            }
            Ok(())
        }
        Command::Metrics(a) => emit(&commands::metrics(&a)?, a.out.as_deref()),
        Command::Rootlocus(a) => emit(&commands::rootlocus(&a)?, a.out.as_deref()),
        Command::Tune(a) => emit(&commands::tune(&a)?, a.out.as_deref()),
        Command::CalibFit(a) => emit(&commands::calib_fit(&a)?, a.out.as_deref()),
        Command::HilDevice(a) => commands::hil_device(&a),
        Command::HilLoop(a) => {
            let out = commands::hil_loop(&a, &store)?;
            if let Some(p) = &a.out {
                out.trace.save_csv(p)?;
            }
            emit(&out.report, None)
        }
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&a.listen).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                server::serve(listener, AppState::new(store)).await
            })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // usage errors exit 2, --help and --version exit 0
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
