use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use futures::StreamExt;
use serde_json::{json, Value};

use peershare::daemon::{DEFAULT_API_PORT, DEFAULT_WIRE_PORT};
use peershare::discovery::{DiscoveryConfig, DISCOVERY_PORT};
use peershare::feedback::{describe_event, FeedbackMessage, Severity};
use peershare::{Daemon, DaemonConfig, EventRecord, PermissionMode};

const EXIT_OPERATIONAL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "peershare",
    version,
    about = "Share files on your LAN and see what happens to them"
)]
struct Cli {
    /// Port of the local daemon's control API.
    #[arg(long, global = true, env = "PEERSHARE_API_PORT", default_value_t = DEFAULT_API_PORT)]
    api_port: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the sharing daemon in the foreground.
    Daemon(DaemonArgs),
    /// Share a file. The mode defaults to read.
    Share {
        path: PathBuf,
        #[arg(long, value_parser = parse_mode, default_value = "read")]
        mode: PermissionMode,
    },
    /// Change the mode of an existing share.
    Mode {
        share_id: String,
        #[arg(value_parser = parse_mode)]
        mode: PermissionMode,
    },
    /// Stop sharing a file (the file stays on disk).
    Unshare {
        share_id: String,
        #[arg(long)]
        confirm: bool,
    },
    /// List your shares.
    Shares,
    /// List peers seen on the network.
    Peers,
    /// List a peer's shared files.
    Browse { peer: String },
    /// Copy a peer's shared file to a local path.
    Get {
        peer: String,
        share_id: String,
        dest: PathBuf,
    },
    /// Replace the content of a peer's shared file.
    Put {
        peer: String,
        share_id: String,
        src: PathBuf,
        #[arg(long)]
        confirm: bool,
    },
    /// Delete a peer's shared file from their machine.
    Delete {
        peer: String,
        share_id: String,
        #[arg(long)]
        confirm: bool,
    },
    /// Show the event log.
    Events {
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 0)]
        since: u64,
        /// Print raw JSON lines.
        #[arg(long)]
        json: bool,
    },
    /// Show daemon identity and counters.
    Status,
}

#[derive(Args, Debug)]
struct DaemonArgs {
    #[arg(long, env = "PEERSHARE_DATA_DIR", default_value = ".peershare")]
    data_dir: PathBuf,
    /// Wire protocol port advertised to peers.
    #[arg(long, default_value_t = DEFAULT_WIRE_PORT)]
    port: u16,
    /// Name shown to other peers.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = DISCOVERY_PORT)]
    discovery_port: u16,
    /// Also announce to this address (repeatable).
    #[arg(long = "announce-to")]
    announce_to: Vec<SocketAddr>,
    /// Do not use multicast; only unicast announce targets.
    #[arg(long)]
    no_multicast: bool,
    /// Directory with the dashboard's static files.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<PermissionMode, String> {
    s.parse()
        .map_err(|e: peershare::mode::ParseModeError| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Operational(String),
}

impl From<reqwest::Error> for CliError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_connect() {
            Self::Operational("cannot reach the daemon; is `peershare daemon` running?".into())
        } else {
            Self::Operational(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_OPERATIONAL);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Operational(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_OPERATIONAL)
        }
    }
}

fn require_confirm(confirm: bool, what: &str) -> Result<(), CliError> {
    if confirm {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} is destructive; pass --confirm to proceed"
        )))
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
}

struct Api {
    base: String,
    http: reqwest::Client,
}

impl Api {
    fn new(port: u16) -> Self {
        Self {
            base: format!("http://127.0.0.1:{port}"),
            http: reqwest::Client::new(),
        }
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<Value, CliError> {
        let resp = req.send().await?;
        let status = resp.status();
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        if status.is_success() {
            Ok(body)
        } else {
            let msg = body["message"].as_str().unwrap_or("request failed");
            let code = body["error"].as_str().unwrap_or("error");
            Err(CliError::Operational(format!(
                "{msg} ({code}, HTTP {})",
                status.as_u16()
            )))
        }
    }

    async fn get(&self, path: &str) -> Result<Value, CliError> {
        self.send(self.http.get(format!("{}{path}", self.base)))
            .await
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, CliError> {
        self.send(self.http.post(format!("{}{path}", self.base)).json(&body))
            .await
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let api = Api::new(cli.api_port);
    match cli.command {
        Command::Daemon(args) => run_daemon(args, cli.api_port).await,
        Command::Share { path, mode } => {
            let path = absolute(&path)?;
            let body = api
                .post("/v1/shares", json!({ "path": path, "mode": mode }))
                .await?;
            print_share_feedback(&body);
            Ok(())
        }
        Command::Mode { share_id, mode } => {
            let body = api
                .send(
                    api.http
                        .patch(format!("{}/v1/shares/{share_id}", api.base))
                        .json(&json!({ "mode": mode })),
                )
                .await?;
            print_share_feedback(&body);
            Ok(())
        }
        Command::Unshare { share_id, confirm } => {
            require_confirm(confirm, "unshare")?;
            let body = api
                .send(
                    api.http
                        .delete(format!("{}/v1/shares/{share_id}?confirm=true", api.base)),
                )
                .await?;
            println!(
                "stopped sharing {} (file left on disk)",
                body["entry"]["display_name"].as_str().unwrap_or("?")
            );
            Ok(())
        }
        Command::Shares => {
            let shares = api.get("/v1/shares").await?;
            for s in shares.as_array().into_iter().flatten() {
                println!(
                    "{}  {:<5}  {:>10}  {}",
                    s["share_id"].as_str().unwrap_or(""),
                    s["mode"].as_str().unwrap_or(""),
                    s["size_bytes"],
                    s["path"].as_str().unwrap_or("")
                );
            }
            Ok(())
        }
        Command::Peers => {
            let peers = api.get("/v1/peers").await?;
            for p in peers.as_array().into_iter().flatten() {
                println!(
                    "{}  {:<16}  {}:{}  {} shares",
                    p["peer_id"].as_str().unwrap_or(""),
                    p["display_name"].as_str().unwrap_or(""),
                    p["address"].as_str().unwrap_or(""),
                    p["port"],
                    p["share_count"]
                );
            }
            Ok(())
        }
        Command::Browse { peer } => {
            let files = api.get(&format!("/v1/peers/{peer}/files")).await?;
            for f in files.as_array().into_iter().flatten() {
                println!(
                    "{}  {:<5}  {:>10}  {}",
                    f["share_id"].as_str().unwrap_or(""),
                    f["mode"].as_str().unwrap_or(""),
                    f["size_bytes"],
                    f["display_name"].as_str().unwrap_or("")
                );
            }
            Ok(())
        }
        Command::Get {
            peer,
            share_id,
            dest,
        } => {
            let dest = absolute(&dest)?;
            let body = api
                .post(
                    "/v1/transfers",
                    json!({ "peer_id": peer, "action": "get", "share_id": share_id, "local_path": dest }),
                )
                .await?;
            println!("copied {} bytes to {}", body["bytes"], dest.display());
            Ok(())
        }
        Command::Put {
            peer,
            share_id,
            src,
            confirm,
        } => {
            require_confirm(confirm, "put")?;
            let src = absolute(&src)?;
            let body = api
                .post(
                    "/v1/transfers",
                    json!({ "peer_id": peer, "action": "put", "share_id": share_id,
                            "local_path": src, "confirm": true }),
                )
                .await?;
            println!("replaced remote content with {} bytes", body["bytes"]);
            Ok(())
        }
        Command::Delete {
            peer,
            share_id,
            confirm,
        } => {
            require_confirm(confirm, "delete")?;
            api.post(
                "/v1/transfers",
                json!({ "peer_id": peer, "action": "delete", "share_id": share_id, "confirm": true }),
            )
            .await?;
            println!("deleted {share_id} on {peer}");
            Ok(())
        }
        Command::Events {
            follow,
            since,
            json,
        } => {
            if follow {
                follow_events(&api, since, json).await
            } else {
                let events = api.get(&format!("/v1/events?since={since}")).await?;
                for e in events.as_array().into_iter().flatten() {
                    print_event(e, json);
                }
                Ok(())
            }
        }
        Command::Status => {
            let body = api.get("/v1/status").await?;
            println!(
                "{}",
                serde_json::to_string_pretty(&body).unwrap_or_default()
            );
            if body["degraded_audit"].as_bool() == Some(true) {
                println!("WARNING: the event log could not be written; audit trail is incomplete");
            }
            Ok(())
        }
    }
}

fn print_share_feedback(body: &Value) {
    let entry = &body["entry"];
    println!(
        "shared {}  {}  [{}]",
        entry["share_id"].as_str().unwrap_or(""),
        entry["display_name"].as_str().unwrap_or(""),
        entry["mode"].as_str().unwrap_or("")
    );
    let Ok(feedback) = serde_json::from_value::<FeedbackMessage>(body["feedback"].clone()) else {
        return;
    };
    match feedback.severity {
        Severity::Danger => println!("!! DANGER: {}", feedback.headline),
        Severity::Caution => println!("! CAUTION: {}", feedback.headline),
        Severity::Info => println!("{}", feedback.headline),
    }
    for c in &feedback.capabilities {
        println!("  - [{}] {}", c.tag, c.text);
    }
}

fn print_event(value: &Value, raw: bool) {
    if raw {
        println!("{value}");
        return;
    }
    match serde_json::from_value::<EventRecord>(value.clone()) {
        Ok(e) => println!(
            "#{:<5} {}  {}",
            e.seq,
            e.when.format("%Y-%m-%d %H:%M:%S"),
            describe_event(&e)
        ),
        Err(_) => println!("{value}"),
    }
}

async fn follow_events(api: &Api, mut since: u64, raw: bool) -> Result<(), CliError> {
    // Reconnects from the last printed seq when the daemon drops us.
    loop {
        let resp = api
            .http
            .get(format!("{}/v1/events/stream?since={since}", api.base))
            .send()
            .await?;
        if !resp.status().is_success() {
            return Err(CliError::Operational(format!(
                "stream refused: HTTP {}",
                resp.status()
            )));
        }
        let mut body = resp.bytes_stream();
        let mut pending = Vec::new();
        while let Some(chunk) = body.next().await {
            let chunk = chunk?;
            pending.extend_from_slice(&chunk);
            while let Some(pos) = pending.iter().position(|b| *b == b'\n') {
                let line: Vec<u8> = pending.drain(..=pos).collect();
                let line = &line[..line.len() - 1];
                if line.is_empty() || line[0] == b':' {
                    continue;
                }
                if let Ok(v) = serde_json::from_slice::<Value>(line) {
                    if let Some(seq) = v["seq"].as_u64() {
                        since = since.max(seq);
                    }
                    print_event(&v, raw);
                }
            }
        }
        tokio::time::sleep(std::time::Duration::from_millis(500)).await;
    }
}

async fn run_daemon(args: DaemonArgs, api_port: u16) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    let name = args
        .name
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "peershare".to_owned());
    let mut cfg = DaemonConfig::new(args.data_dir, name);
    cfg.wire_bind = SocketAddr::new(IpAddr::V4(Ipv4Addr::UNSPECIFIED), args.port);
    cfg.api_bind = SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), api_port);
    cfg.ui_dir = args.ui_dir;
    cfg.discovery = Some(DiscoveryConfig {
        bind: SocketAddr::new(IpAddr::V4(Ipv4Addr::UNSPECIFIED), args.discovery_port),
        multicast: !args.no_multicast,
        targets: args.announce_to,
        ..DiscoveryConfig::default()
    });

    let daemon = Daemon::start(cfg)
        .await
        .map_err(|e| CliError::Operational(e.to_string()))?;
    println!(
        "peershare daemon {} ({}) wire {} api {}",
        daemon.identity().display_name,
        daemon.identity().peer_id,
        daemon.wire_addr(),
        daemon.api_addr()
    );

    wait_for_signal().await;
    daemon.shutdown().await;
    Ok(())
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
