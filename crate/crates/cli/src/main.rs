use std::process::ExitCode;

use barbot::server::{self, AppState};
use barbot::{run, Cli, CliError, Command, Context};
use barbot_core::corpus::SharedIndex;
use barbot_core::orchestrator::Engine;
use barbot_core::perception::SnapshotCell;
use clap::error::ErrorKind;
use clap::Parser;

fn serve(ctx: &Context, bind: std::net::SocketAddr, detections: Option<&std::path::Path>) -> Result<(), CliError> {
    let snapshot = match detections {
        Some(path) => ctx.snapshot(path)?,
        None => ctx.demo_snapshot(),
    };
    let engine = Engine::new(SharedIndex::new(ctx.corpus()?), SnapshotCell::new(snapshot), ctx.rules()?, &ctx.config);
    let state = AppState::new(engine, ctx.config.perception.clone(), ctx.config.recipes_dir.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("runtime", e.to_string()))?;
    runtime.block_on(server::serve(state, bind)).map_err(|e| CliError::new("serve", format!("{bind}: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::new("usage", e.to_string().trim_end()).with_exit_code(2);
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    let result = Context::load(cli.config.as_deref(), cli.recipes.clone()).and_then(|ctx| match cli.command {
        Command::Serve { bind, detections } => serve(&ctx, bind, detections.as_deref()),
        command => run(&ctx, command, &mut std::io::stdout().lock()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code.clamp(1, 255) as u8)
        }
    }
}
