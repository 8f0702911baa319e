//! Mock external classifier speaking the endpoint protocol.
//!
//! Reads `{"id","text"}` lines on stdin and answers `{"id","scores":{"S","A","O"}}`,
//! or serves `POST /predict` with `--http ADDR`.

use anyhow::{Context, Result};
use clap::Parser;
use solidarity_cli::mock::MockBehavior;

#[derive(Parser)]
#[command(name = "mock-endpoint", version)]
struct Args {
    /// Serve HTTP on this address instead of stdio (port 0 picks a free port)
    #[arg(long)]
    http: Option<String>,
    /// JSONL of {"id","label"} rows to answer with fixed labels
    #[arg(long)]
    table: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Answer with the wrong id (to exercise protocol checks)
    #[arg(long)]
    wrong_id: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut mock = MockBehavior {
        wrong_id: args.wrong_id,
        delay_ms: args.delay_ms,
        ..Default::default()
    };
    if let Some(p) = &args.table {
        let data = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        mock.load_table(&data)?;
    }
    match &args.http {
        Some(addr) => {
            let server = tiny_http::Server::http(addr).map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
            let bound = server.server_addr().to_ip().context("non-IP listen address")?;
            println!("listening on {bound}");
            std::io::Write::flush(&mut std::io::stdout())?;
            mock.serve_http(&server)
        }
        None => mock.serve_stdio(std::io::stdin().lock(), std::io::stdout().lock()),
    }
}
