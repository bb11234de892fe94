//! Starts the HTTP/JSON service on a trained run.
//!
//! cargo run --release --example serve -- <run_dir> [port]
//!
//! curl localhost:8080/api/meta
//! curl -X POST localhost:8080/api/query/relation \
//!      -d '{"camera_id": 0, "pixel": [32, 40], "text": "supporting"}'

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use rfield::service::{serve, ServeState};

#[tokio::main]
async fn main() -> rfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = args.next().unwrap_or_else(|| "demo_run".into());
    let port: u16 = args.next().and_then(|s| s.parse().ok()).unwrap_or(8080);
    let run = Path::new(&run);
    let state = Arc::new(ServeState::load(&run.join("checkpoint.rfld"), &run.join("dataset"))?);
    serve(state, SocketAddr::from(([127, 0, 0, 1], port)), |a| println!("listening on http://{a}")).await
}
