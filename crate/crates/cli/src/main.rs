use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use oinf_core::engine::{
    bind, open_peer_link, provisioned_demand, query_servers, run_offline, run_suite, serve, BenchOptions, Config,
    OfflineOptions, PeerLink, Schedule, ServeOptions, ServerCore, Suite,
};
use oinf_core::he::{scheme, Backend};
use oinf_core::nn::{network_by_name, Model, ModelDescriptor, ModelShare};
use oinf_core::transport::{HandshakeConfig, PartyKind};
use oinf_core::triplet::TripletStore;
use oinf_core::{Error, Result, Role, Seed};

#[derive(Parser, Debug)]
#[command(name = "oinf", version, about = "Two-server secure CNN inference")]
struct Cli {
    /// TOML config; OINF_* environment variables override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Server role (1 or 2); overrides the config.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    role: Option<u8>,
    /// Run queries one at a time.
    #[arg(long, global = true, conflicts_with = "async_mode")]
    sync: bool,
    /// Overlap queries (default).
    #[arg(long = "async", global = true)]
    async_mode: bool,
    /// Shorthand for `bench SUITE`.
    #[arg(long, value_name = "SUITE")]
    bench: Option<String>,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Split a model into the two servers' share bundles.
    InitModel(InitModel),
    /// Generate and persist this server's triplets with the peer.
    Offline(Offline),
    /// Run a server daemon.
    Serve(Serve),
    /// Send one image to both servers and print the prediction.
    Query(Query),
    /// Run a benchmark suite locally.
    Bench(Bench),
}

#[derive(Args, Debug)]
struct InitModel {
    /// OIMD model file. Omit with --random.
    model: Option<PathBuf>,
    /// Use random weights for a built-in network (network1..network5).
    #[arg(long, conflicts_with = "model")]
    random: Option<String>,
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Offline {
    /// Queries to provision for (plus headroom).
    #[arg(long, default_value_t = 1)]
    queries: usize,
    /// Disable the overlapped offline pipeline.
    #[arg(long)]
    no_pipeline: bool,
}

#[derive(Args, Debug)]
struct Serve {
    /// Exit after this many client queries.
    #[arg(long)]
    max_queries: Option<u64>,
}

#[derive(Args, Debug)]
struct Query {
    /// JSON array of input values, flattened in CHW order.
    image: PathBuf,
}

#[derive(Args, Debug)]
struct Bench {
    /// triplet, triplet-async, relu, network1..network5, sync-vs-async
    suite: Option<String>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    queries: usize,
    #[arg(long, default_value_t = 10.0)]
    latency_ms: f64,
    /// Also write a tab-separated table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::load(cli.config.as_deref(), std::env::vars())?;
    if cli.role.is_some() {
        cfg.role = cli.role;
    }
    if cli.sync {
        cfg.async_mode = false;
    } else if cli.async_mode {
        cfg.async_mode = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let cmd = match (&cli.cmd, &cli.bench) {
        (Some(c), None) => c,
        (None, Some(s)) => return bench(&cfg, s, &Bench {
            suite: None,
            runs: 5,
            queries: 3,
            latency_ms: 10.0,
            table: None,
        }),
        (Some(_), Some(_)) => return Err(Error::Params("--bench cannot be combined with a subcommand".into())),
        (None, None) => return Err(Error::Params("no command given (try --help)".into())),
    };
    match cmd {
        Cmd::InitModel(a) => init_model(&cfg, a),
        Cmd::Offline(a) => offline(&cfg, a),
        Cmd::Serve(a) => serve_cmd(&cfg, a),
        Cmd::Query(a) => query(&cfg, a),
        Cmd::Bench(a) => {
            let suite = a.suite.clone().ok_or_else(|| Error::Params("bench needs a suite".into()))?;
            bench(&cfg, &suite, a)
        }
    }
}

fn init_model(cfg: &Config, a: &InitModel) -> Result<()> {
    let seed = match a.seed.or(cfg.seed) {
        Some(s) => Seed::from_u64(s),
        None => Seed::from_entropy(),
    };
    fs::create_dir_all(&a.out)?;
    let model = match (&a.model, &a.random) {
        (Some(p), None) => Model::load(p).map_err(|e| Error::Params(format!("{}: {e}", p.display())))?,
        (None, Some(name)) => {
            let desc = network_by_name(name, cfg.ring)?;
            let m = Model::random(desc, 1.0, &mut seed.rng_for("init-random", 0));
            m.save(&a.out.join("model.oimd"))?;
            m
        }
        _ => return Err(Error::Params("give a model file or --random NETWORK".into())),
    };
    let (s1, s2) = model.split(&mut seed.rng_for("init-split", 0))?;
    let desc_path = a.out.join("model.json");
    fs::write(
        &desc_path,
        serde_json::to_string_pretty(&model.desc).map_err(|e| Error::format("descriptor", e.to_string()))?,
    )?;
    s1.save(&a.out.join("share1.oims"))?;
    s2.save(&a.out.join("share2.oims"))?;
    println!("model.name={}", model.desc.name);
    println!("model.hash={:016x}", model.desc.hash());
    println!("model.triplets_per_query={}", model.desc.triplet_demand()?);
    println!("model.descriptor={}", desc_path.display());
    println!("model.share1={}", a.out.join("share1.oims").display());
    println!("model.share2={}", a.out.join("share2.oims").display());
    Ok(())
}

fn he_handshake(cfg: &Config, role: Role, desc: &ModelDescriptor) -> Result<HandshakeConfig> {
    Ok(HandshakeConfig {
        party: match role {
            Role::Server1 => PartyKind::Server1,
            Role::Server2 => PartyKind::Server2,
        },
        ring: desc.ring,
        he_params_hash: Some(cfg.he.params()?.hash()),
        model_hash: desc.hash(),
    })
}

fn peer_link(cfg: &Config, role: Role) -> Result<PeerLink> {
    Ok(match role {
        Role::Server1 => PeerLink::Dial(cfg.peer_addr.clone()),
        Role::Server2 => PeerLink::Listen(bind(&cfg.peer_addr)?),
    })
}

fn load_share(cfg: &Config, role: Role) -> Result<ModelShare> {
    let share = ModelShare::load(&cfg.model_share)
        .map_err(|e| Error::Params(format!("model share {}: {e}", cfg.model_share.display())))?;
    if share.role != role {
        return Err(Error::Params(format!(
            "{} holds the {} share, this is {role}",
            cfg.model_share.display(),
            share.role
        )));
    }
    if share.desc.ring != cfg.ring {
        return Err(Error::Params("model share ring differs from the configured ring".into()));
    }
    Ok(share)
}

fn offline(cfg: &Config, a: &Offline) -> Result<()> {
    let role = cfg.role()?;
    let share = load_share(cfg, role)?;
    let demand = provisioned_demand(share.desc.triplet_demand()?, a.queries);
    let hs = he_handshake(cfg, role, &share.desc)?;
    let mut chan = open_peer_link(role, &hs, peer_link(cfg, role)?, cfg.connect_retries, cfg.max_frame)?;
    let he = scheme(cfg.he.backend, cfg.he.params()?)?;
    if cfg.he.backend == Backend::DealerMock {
        log::warn!("dealer-mock HE backend: triplets are NOT private, use for testing only");
    }
    let opts = OfflineOptions {
        pipelined: !a.no_pipeline,
        stop_after_batches: None,
    };
    let report = run_offline(
        role,
        cfg.ring,
        he,
        demand,
        cfg.batch_len,
        &cfg.triplet_store,
        &cfg.root_seed(),
        &mut chan,
        &opts,
    )?;
    for l in report.lines() {
        println!("{l}");
    }
    Ok(())
}

fn serve_cmd(cfg: &Config, a: &Serve) -> Result<()> {
    let role = cfg.role()?;
    let share = load_share(cfg, role)?;
    if !cfg.triplet_store.exists() {
        return Err(Error::Params(format!(
            "no triplet store at {}; run `oinf offline` first",
            cfg.triplet_store.display()
        )));
    }
    let store = TripletStore::open(&cfg.triplet_store)?;
    let core = ServerCore::new(share, Box::new(std::sync::Mutex::new(store)), cfg.root_seed())?;
    match core.remaining_queries() {
        Some(0) => {
            return Err(Error::Params(format!(
                "triplet store {} cannot cover a query of {} triplets; run `oinf offline` first",
                cfg.triplet_store.display(),
                core.demand()
            )))
        }
        Some(n) => log::info!("offline material covers {n} queries"),
        None => {}
    }
    let opts = ServeOptions {
        schedule: if cfg.async_mode { Schedule::Async } else { Schedule::Sync },
        max_queries: a.max_queries,
        connect_retries: cfg.connect_retries,
        max_frame: cfg.max_frame,
        he_params_hash: Some(cfg.he.params()?.hash()),
        ..Default::default()
    };
    let clients: TcpListener = bind(&cfg.listen_addr)?;
    let report = serve(core, peer_link(cfg, role)?, clients, &opts)?;
    println!("serve.completed={}", report.completed);
    println!("serve.failed={}", report.failed);
    Ok(())
}

fn read_image(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format("image file", e.to_string()))
}

fn query(cfg: &Config, a: &Query) -> Result<()> {
    let text = fs::read_to_string(&cfg.model_descriptor)
        .map_err(|e| Error::Params(format!("model descriptor {}: {e}", cfg.model_descriptor.display())))?;
    let desc: ModelDescriptor = serde_json::from_str(&text).map_err(|e| Error::format("model descriptor", e.to_string()))?;
    desc.validate()?;
    let image = read_image(&a.image)?;
    let mut rng = cfg.root_seed().rng_for("client", 0);
    let report = query_servers(&cfg.server_addrs, &desc, &image, cfg.connect_retries, cfg.max_frame, &mut rng)?;
    for l in report.lines() {
        println!("{l}");
    }
    Ok(())
}

fn bench(cfg: &Config, suite: &str, a: &Bench) -> Result<()> {
    let suite: Suite = suite.parse()?;
    let opts = BenchOptions {
        runs: a.runs.max(5),
        max_runs: a.runs.max(5) * 3,
        seed: cfg.seed.unwrap_or(1),
        backend: cfg.he.backend,
        poly_degree: cfg.he.poly_degree,
        queries: a.queries.max(1),
        query_latency: Duration::from_secs_f64(a.latency_ms.max(0.0) / 1e3),
        ..Default::default()
    };
    let report = run_suite(suite, &opts)?;
    for l in report.lines() {
        println!("{l}");
    }
    if let Some(p) = &a.table {
        fs::write(p, report.table())?;
    }
    Ok(())
}
