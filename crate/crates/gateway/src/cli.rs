use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ed25519_dalek::pkcs8::EncodePrivateKey;
use ed25519_dalek::SigningKey;
use serde_json::Value;
use sre_bench::{run_ret, run_rlt, run_rmu, RetConfig, RltConfig, RmuConfig, Scenario};
use sre_core::lifecycle::{build_package, encode_public_key, parse_signing_key, PackageSpec};
use sre_core::Scalar;

use crate::client::{Client, ClientError};
use crate::config::{GatewayConfig, DEFAULT_LISTEN};
use crate::server::Gateway;

#[derive(Debug, Parser)]
#[command(name = "gw", version, about = "Semantic rules engine gateway and operator tool")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Remote {
    /// Gateway address, `host:port` or URL.
    #[arg(long, env = "GW_ADDR", default_value = DEFAULT_LISTEN, global = true)]
    pub addr: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build a signed rule package from a script.
    Pack {
        script: PathBuf,
        #[arg(long)]
        name: String,
        /// Private key: PKCS#8 PEM or Base64 seed.
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value = "1.0.0")]
        version: String,
        #[arg(long)]
        description: Option<String>,
        /// Settable parameter with its JSON default, e.g. `threshold=600`.
        #[arg(long = "param", value_name = "KEY=JSON")]
        params: Vec<String>,
        /// Defaults to `<name>.zip`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Create a signing key pair.
    Keygen {
        /// Private key file (PKCS#8 PEM). The Base64 public key goes to `<out>.pub`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a generated building fixture (commissioning and ontology).
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        buildings: u32,
        #[arg(long, default_value_t = 10)]
        floors: u32,
        #[arg(long, default_value_t = 3)]
        rooms: u32,
        /// Temperature sensors only, without heaters and air conditioners.
        #[arg(long)]
        sensors_only: bool,
    },
    /// Upload a package.
    Install {
        package: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// List rules.
    Rules {
        #[command(flatten)]
        remote: Remote,
    },
    Start {
        name: String,
        #[command(flatten)]
        remote: Remote,
    },
    Stop {
        name: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Uninstall a stopped or installed rule.
    Rm {
        name: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Set a rule parameter. VALUE is read as JSON when it is a JSON scalar,
    /// otherwise as a string.
    Set {
        name: String,
        key: String,
        value: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Run a semantic query.
    Query {
        q: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// List registered things.
    Things {
        /// Print the full JSON snapshot.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        remote: Remote,
    },
    /// Follow the event stream, one JSON object per line.
    Events {
        /// Exit after this many events.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        no_devices: bool,
        /// Only device events of this thing.
        #[arg(long)]
        thing: Option<String>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Run a benchmark and write its CSV report.
    Bench {
        metric: BenchMetric,
        /// Comma-separated rule counts.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        /// Comma-separated event rates per second (rlt).
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
        /// Seconds per rlt cell.
        #[arg(long)]
        duration: Option<f64>,
        /// Full rule and rate grids at two minutes per cell.
        #[arg(long = "paper-scale")]
        full_grid: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMetric {
    Ret,
    Rlt,
    Rmu,
}

/// A failed command: message for stderr and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub exit: i32,
    pub message: String,
}

impl Failure {
    fn new(exit: i32, message: impl Into<String>) -> Self {
        Self { exit, message: message.into() }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::new(1, e.to_string())
    }
}

fn io_fail(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(1, format!("{}: {e}", path.display()))
}

/// Reads a command-line parameter value.
pub fn parse_value(text: &str) -> Scalar {
    match serde_json::from_str::<Value>(text) {
        Ok(v @ (Value::Bool(_) | Value::Number(_) | Value::String(_))) => {
            serde_json::from_value(v).expect("scalar JSON")
        }
        _ => Scalar::Text(text.to_owned()),
    }
}

fn parse_param(text: &str) -> Result<(String, Option<Scalar>), Failure> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Failure::new(2, format!("--param expects KEY=JSON, got '{text}'")))?;
    let value = match value.trim() {
        "null" => None,
        v => Some(parse_value(v)),
    };
    Ok((key.trim().to_owned(), value))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| Failure::new(1, e.to_string()));
    match cli.command {
        Command::Serve { config } => {
            let cfg = GatewayConfig::load(&config).map_err(|e| Failure::new(2, e.to_string()))?;
            let gw = Gateway::start(&cfg).map_err(|e| Failure::new(2, e.to_string()))?;
            w(out, format!("listening on {}", gw.base_url()))?;
            out.flush().ok();
            gw.run_until_signal();
        }
        Command::Pack { script, name, key, version, description, params, out: dest } => {
            let text = std::fs::read_to_string(&script).map_err(io_fail(&script))?;
            let key_text = std::fs::read_to_string(&key).map_err(io_fail(&key))?;
            let key = parse_signing_key(&key_text).map_err(|e| Failure::new(1, format!("{}: {e}", key.display())))?;
            let params = params.iter().map(|p| parse_param(p)).collect::<Result<BTreeMap<_, _>, _>>()?;
            let spec = PackageSpec { name: name.clone(), version, description, params };
            let bytes = build_package(&text, &spec, &key).map_err(|e| Failure::new(1, format!("{}: {e}", e.code())))?;
            let dest = dest.unwrap_or_else(|| PathBuf::from(format!("{name}.zip")));
            std::fs::write(&dest, bytes).map_err(io_fail(&dest))?;
            w(out, dest.display().to_string())?;
        }
        Command::Keygen { out: dest } => {
            let key = SigningKey::generate(&mut rand::rngs::OsRng);
            let pem = key
                .to_pkcs8_pem(Default::default())
                .map_err(|e| Failure::new(1, e.to_string()))?;
            std::fs::write(&dest, pem.as_bytes()).map_err(io_fail(&dest))?;
            let public = encode_public_key(&key.verifying_key());
            let pub_path = PathBuf::from(format!("{}.pub", dest.display()));
            std::fs::write(&pub_path, format!("{public}\n")).map_err(io_fail(&pub_path))?;
            w(out, public)?;
        }
        Command::Fixture { out: dir, seed, buildings, floors, rooms, sensors_only } => {
            let scenario = Scenario { seed, buildings, floors, rooms, actuators: !sensors_only, ..Scenario::default() };
            let fx = sre_bench::generate_fixture(&scenario).map_err(|e| Failure::new(2, e.to_string()))?;
            std::fs::create_dir_all(&dir).map_err(io_fail(&dir))?;
            for (file, text) in [("commissioning.json", &fx.commissioning), ("ontology.json", &fx.ontology)] {
                let p = dir.join(file);
                std::fs::write(&p, text).map_err(io_fail(&p))?;
            }
            w(out, format!("{} rooms written to {}", fx.rooms.len(), dir.display()))?;
        }
        Command::Install { package, remote } => {
            let bytes = std::fs::read(&package).map_err(io_fail(&package))?;
            let v = Client::new(&remote.addr).install(bytes)?;
            let verb = if v.updated { "updated" } else { "installed" };
            w(out, format!("{verb} {} {} ({:?})", v.record.name, v.record.version, v.record.state))?;
        }
        Command::Rules { remote } => {
            for r in Client::new(&remote.addr).rules()? {
                let params = serde_json::to_string(&r.params).unwrap_or_default();
                w(out, format!("{}\t{}\t{:?}\t{params}", r.name, r.version, r.state))?;
            }
        }
        Command::Start { name, remote } => {
            let r = Client::new(&remote.addr).start(&name)?;
            w(out, format!("{}: {:?}", r.name, r.state))?;
        }
        Command::Stop { name, remote } => {
            let r = Client::new(&remote.addr).stop(&name)?;
            w(out, format!("{}: {:?}", r.name, r.state))?;
        }
        Command::Rm { name, remote } => {
            Client::new(&remote.addr).uninstall(&name)?;
            w(out, format!("{name}: uninstalled"))?;
        }
        Command::Set { name, key, value, remote } => {
            let value = parse_value(&value);
            Client::new(&remote.addr).set_param(&name, &key, &value)?;
            w(out, format!("{name}.{key} = {value}"))?;
        }
        Command::Query { q, remote } => {
            let result = Client::new(&remote.addr).query(&q)?;
            if let Some(things) = result.get("things").and_then(Value::as_array) {
                for t in things {
                    w(out, t.as_str().unwrap_or_default().to_owned())?;
                }
            } else if let Some(n) = result.get("number").or_else(|| result.get("count")) {
                w(out, n.to_string())?;
            } else {
                w(out, result.to_string())?;
            }
        }
        Command::Things { json, remote } => {
            let things = Client::new(&remote.addr).things()?;
            if json {
                w(out, serde_json::to_string_pretty(&things).expect("json"))?;
            } else {
                for t in things {
                    let tags: Vec<String> = t["tags"]
                        .as_object()
                        .map(|m| m.iter().map(|(k, v)| format!("{k}:{}", v.as_str().unwrap_or_default())).collect())
                        .unwrap_or_default();
                    w(out, format!("{}\t{}", t["id"].as_str().unwrap_or_default(), tags.join(" ")))?;
                }
            }
        }
        Command::Events { count, no_devices, thing, remote } => {
            let mut query = Vec::new();
            if no_devices {
                query.push("devices=false".to_owned());
            }
            if let Some(t) = thing {
                query.push(format!("thing={t}"));
            }
            let stream = Client::new(&remote.addr).events(&query.join("&"))?;
            for (i, ev) in stream.enumerate() {
                w(out, ev?.to_string())?;
                out.flush().ok();
                if count.is_some_and(|c| i + 1 >= c) {
                    break;
                }
            }
        }
        Command::Bench { metric, grid, rates, duration, full_grid, seed, out: dest } => {
            let scenario = Scenario { seed, ..Scenario::default() };
            let bench_fail = |e: sre_bench::BenchError| Failure::new(1, format!("{}: {e}", e.code()));
            let mut report = match metric {
                BenchMetric::Ret => {
                    let mut cfg = RetConfig { scenario, ..RetConfig::default() };
                    if !grid.is_empty() {
                        cfg.rule_counts = grid;
                    }
                    run_ret(&cfg).map_err(bench_fail)?
                }
                BenchMetric::Rlt => {
                    let mut cfg = if full_grid { RltConfig::full_scale() } else { RltConfig::desk() };
                    cfg.scenario = scenario;
                    if !grid.is_empty() {
                        cfg.rule_counts = grid;
                    }
                    if !rates.is_empty() {
                        cfg.rates = rates;
                    }
                    if let Some(d) = duration {
                        cfg.duration = Duration::from_secs_f64(d);
                    }
                    run_rlt(&cfg).map_err(bench_fail)?
                }
                BenchMetric::Rmu => {
                    let mut cfg = RmuConfig { scenario, ..RmuConfig::default() };
                    if !grid.is_empty() {
                        cfg.rule_counts = grid;
                    }
                    run_rmu(&cfg).map_err(bench_fail)?.0
                }
            };
            report.write_csv(&dest).map_err(bench_fail)?;
            w(out, report.render())?;
            w(out, format!("csv: {}", dest.display()))?;
        }
    }
    Ok(())
}
