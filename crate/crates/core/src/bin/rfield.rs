//! rfield: generate, train, query, extract scene graphs, evaluate, serve.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rfield::graph::SceneGraph;
use rfield::pipeline::{self, GenerateConfig, GraphConfig, QueryRequest};
use rfield::query::{Direction, QueryOptions};
use rfield::relseg::{evaluate, load_scenes, prepare_bundled, read_bench, RelsegOptions};
use rfield::service::{serve, ServeState};
use rfield::train::TrainConfig;
use rfield::{io, Result};

#[derive(Parser)]
#[command(name = "rfield", version, about = "Relationship-augmented radiance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a field on a dataset; writes checkpoint.rfld, train.json, metrics.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Object query (no click) or relationship query (with --click) on one frame.
    Query {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        frame: Option<u32>,
        #[arg(long, value_parser = parse_click)]
        click: Option<[usize; 2]>,
        #[arg(long, default_value = "subj", value_parser = parse_direction)]
        direction: Direction,
        /// Directory for query.png, query.f32 and query.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract a scene graph; writes graph.json and graph_emb.bin.
    Graph {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated object labels to score nodes against.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
    /// Relationship segmentation benchmark; builds the bundled one into --data if bench.json is absent.
    EvalRelseg {
        #[arg(long)]
        data: PathBuf,
        /// Training config used when building the benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Report directory (defaults to --data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP/JSON query service.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn parse_click(s: &str) -> std::result::Result<[usize; 2], String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("'{x}' is not a pixel coordinate"));
    Ok([p(u)?, p(v)?])
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: rfield::Error| e.to_string())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { out, seed, config } => {
            let cfg: GenerateConfig = pipeline::read_config(config.as_deref())?;
            let ds = pipeline::generate(&cfg, seed, &out)?;
            println!("{} images, {} instances, {} relations -> {}", ds.images.len(), ds.graph.nodes.len(), ds.graph.edges.len(), out.display());
        }
        Command::Train { data, out, config, seed } => {
            let mut cfg: TrainConfig = pipeline::read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = pipeline::train_run(&data, &cfg, &out)?;
            let last = outcome.metrics.last();
            println!("{} steps, final loss {:.5} -> {}", cfg.steps, last.map_or(f64::NAN, |m| m.terms.total), out.display());
        }
        Command::Query {
            ckpt,
            data,
            text,
            frame,
            click,
            direction,
            out,
        } => {
            let (field, ds) = pipeline::load_run(&ckpt, &data)?;
            let req = QueryRequest { text: &text, frame, click, direction };
            let r = pipeline::query_run(&field, &ds, &req, &QueryOptions::default())?;
            if let Some(out) = out {
                r.write(&out, "query")?;
            }
            println!("{}", serde_json::to_string(&r.record())?);
        }
        Command::Graph { ckpt, data, out, config, labels } => {
            let cfg: GraphConfig = pipeline::read_config(config.as_deref())?;
            let (field, ds) = pipeline::load_run(&ckpt, &data)?;
            let g = pipeline::graph_run(&field, &ds, &cfg, labels.as_deref(), &out)?;
            print_graph(&g);
        }
        Command::EvalRelseg { data, config, seed, out } => {
            let bench_path = data.join("bench.json");
            let bench = if bench_path.exists() {
                read_bench(&bench_path)?
            } else {
                let cfg: TrainConfig = match config {
                    Some(p) => io::read_json(&p)?,
                    None => TrainConfig {
                        steps: 2000,
                        ..Default::default()
                    },
                };
                prepare_bundled(&data, &cfg, seed, |name| eprintln!("training {name}"))?
            };
            let scenes = load_scenes(&bench, &data, &Default::default(), &Default::default())?;
            let out = out.unwrap_or(data);
            for (filter, name) in [(true, "report.json"), (false, "report_object_only.json")] {
                let r = evaluate(&bench, &scenes, &RelsegOptions { filter, ..Default::default() })?;
                io::write_json(&out.join(name), &r)?;
                println!("{:<12} accuracy {:.3}  mIoU {:.3}  ({} queries)", if filter { "full" } else { "object-only" }, r.accuracy, r.mean_iou, r.queries.len());
            }
        }
        Command::Serve { ckpt, data, port } => {
            let state = Arc::new(ServeState::load(&ckpt, &data)?);
            let rt = tokio::runtime::Runtime::new().map_err(|source| rfield::Error::Io { path: "tokio runtime".into(), source })?;
            rt.block_on(serve(state, SocketAddr::from(([127, 0, 0, 1], port)), |a| println!("listening on http://{a}")))?;
        }
    }
    Ok(())
}

fn print_graph(g: &SceneGraph) {
    for n in &g.nodes {
        println!("node {} {} ({} points)", n.id, n.labels.first().map_or("?", |l| l.label.as_str()), n.members.len());
    }
    for e in &g.edges {
        let label = |id| g.node(id).and_then(|n| n.labels.first()).map_or("?", |l| l.label.as_str());
        println!("edge {} {} {}  rho {:.3}", label(e.subject), e.predicates[0].label, label(e.object), e.rho);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
