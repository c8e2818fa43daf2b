//! Broker and learning server in one process, listening on TCP.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use knobtune::protocol::{TcpBroker, DEFAULT_PORT};
use knobtune::server::{self, CsvStorage, ServerConfig};
use log::{error, info};

#[derive(Debug, Parser)]
#[command(about = "Collects measurements from application instances and broadcasts their knowledge")]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Directory with one sub-directory of CSV files per application.
    #[arg(long, default_value = "knobtune-data")]
    storage: PathBuf,
    /// Expected client heartbeat period, in seconds.
    #[arg(long, default_value_t = 5.0)]
    heartbeat: f64,
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new().filter_level(args.log_level).init();
    if !(args.heartbeat > 0.0) {
        error!("--heartbeat must be positive");
        return ExitCode::FAILURE;
    }
    let broker = match TcpBroker::bind(("0.0.0.0", args.port)) {
        Ok(b) => b,
        Err(e) => {
            error!("cannot listen on port {}: {e}", args.port);
            return ExitCode::FAILURE;
        }
    };
    let config = ServerConfig {
        heartbeat: Duration::from_secs_f64(args.heartbeat),
    };
    let _server = match server::start(broker.broker(), Arc::new(CsvStorage::new(&args.storage)), config) {
        Ok(s) => s,
        Err(e) => {
            error!("{e}");
            return ExitCode::FAILURE;
        }
    };
    info!("listening on {}, storing under {}", broker.local_addr(), args.storage.display());
    loop {
        std::thread::park();
    }
}
