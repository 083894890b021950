//! The `inferscan` command line.
//!
//! Every subcommand writes its results to files. Progress and a one-line
//! summary go to stderr. Exit status is 0 on success, 1 when a scan or
//! analysis fails and 2 for usage errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{
    case_table, contingency_table, diurnal_series, heatmap, hop_histogram, source_series, spatial_association,
    temporal_association, traceroute_table, AnalyticsConfig,
};
use crate::backlog::{BacklogConfig, BacklogScanner, ScanKind};
use crate::campaign::{qualify_sim, run_campaign_on, run_sim_campaign, write_campaign_outputs, CampaignConfig};
use crate::classify::Case;
use crate::endpoint::{load_endpoints, EndpointSpec, Role};
use crate::idlescan::{qualify_client, QualifyConfig, ScanRoundConfig};
use crate::simnet::Scenario;
use crate::store::{self, check, ExportFormat, Payload, RecordWriter, ScanRecord};
use crate::tracer::{trace_campaign, PrefixTable, TraceSchedule, TracerConfig};
use crate::transport::{IsnGenerator, SimNetwork, Timestamp};

const ETHICS: &str = "\
Live measurements send spoofed and unsolicited segments to hosts you do not
operate. Before running them:
  * have written authorization for the networks and hosts involved;
  * keep rates low and never fill a server's SYN backlog past the default bound;
  * run a web page on every measurement address explaining the experiment and
    how to opt out, and honour opt-out requests promptly;
  * never use clients whose operators could be put at risk by the traffic.";

#[derive(Debug, Parser)]
#[command(name = "inferscan", version, about = "Indirect TCP/IP connectivity measurements")]
pub struct Cli {
    /// Seed for every random choice; falls back to INFERSCAN_SEED.
    #[arg(long, env = "INFERSCAN_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Worker threads for simulated campaigns.
    #[arg(long, default_value_t = default_workers(), global = true)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Sim,
    Live,
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    #[arg(long, value_enum, default_value_t = TransportKind::Sim)]
    pub transport: TransportKind,
    /// Simulated network (TOML). Required with `--transport sim`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Source address of this machine (live only).
    #[arg(long)]
    pub local_addr: Option<Ipv4Addr>,
    /// Confirms you are authorized to measure the listed hosts (live only).
    #[arg(long, default_value_t = false)]
    pub i_have_authorization: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Syn,
    Rst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    Temporal,
    Spatial,
    Tables,
    Hops,
    Diurnal,
    Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableKind {
    Cases,
    Contingency,
    Traceroute,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that clients have a global, quiet IPID counter.
    Qualify {
        #[arg(long)]
        clients: PathBuf,
        #[command(flatten)]
        transport: TransportArgs,
        /// Second prober for live runs.
        #[arg(long)]
        second_addr: Option<Ipv4Addr>,
        /// Observation window in seconds.
        #[arg(long, default_value_t = 300.0)]
        window: f64,
        /// CSV of addr,qualified,reason.
        #[arg(long, default_value = "qualified.csv")]
        out: PathBuf,
    },
    /// Bipartite hybrid idle-scan campaign.
    IdleScan {
        #[arg(long)]
        clients: PathBuf,
        #[arg(long)]
        servers: PathBuf,
        #[command(flatten)]
        transport: TransportArgs,
        #[arg(long, default_value_t = 3)]
        rounds: u32,
        #[arg(long, default_value_t = 0)]
        start_hour: u8,
        /// Spoofed SYNs per second during the perturbation phase.
        #[arg(long, default_value_t = 5.0)]
        spoof_rate: f64,
        /// Skip client qualification (simulation only).
        #[arg(long, default_value_t = false)]
        no_qualify: bool,
        /// Zero this many low bits of client addresses when writing.
        #[arg(long, default_value_t = 0)]
        redact_client_bits: u8,
        #[arg(long, default_value = "data.jsonl")]
        out: PathBuf,
        #[arg(long, default_value = "report.csv")]
        report: PathBuf,
    },
    /// SYN or RST backlog scan of one relay.
    BacklogScan {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        relay: SocketAddrV4,
        #[command(flatten)]
        transport: TransportArgs,
        /// Spoofed fill SYNs (default 145 for SYN scans, 140 for RST scans).
        #[arg(long)]
        fill: Option<u32>,
        /// Probe SYNs (default 5 for SYN scans, 10 for RST scans).
        #[arg(long)]
        probes: Option<u32>,
        #[arg(long, default_value_t = 500.0)]
        stagger_ms: f64,
        #[arg(long, default_value_t = 0)]
        epoch: u32,
        /// Read a full retransmission count in an RST scan as "dropped".
        #[arg(long, default_value_t = false)]
        paper_literal_verdicts: bool,
        /// Second vantage point inside the filtered region.
        #[arg(long)]
        vps_addr: Option<Ipv4Addr>,
        /// Records are appended.
        #[arg(long, default_value = "data.jsonl")]
        out: PathBuf,
    },
    /// Hourly dual-port traceroutes.
    Trace {
        #[arg(long)]
        dests: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [9001u16, 9002])]
        ports: Vec<u16>,
        #[arg(long, default_value_t = 24)]
        hours: u32,
        #[arg(long, default_value_t = 2)]
        days: u32,
        #[arg(long, default_value_t = 0)]
        start_hour: u8,
        #[arg(long)]
        prefix_table: PathBuf,
        #[command(flatten)]
        transport: TransportArgs,
        #[arg(long, default_value = "runs.jsonl")]
        out: PathBuf,
    },
    /// Run a scenario's campaign, or the bare network for its duration.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Overrides the scenario's campaign rounds.
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long, default_value_t = 0)]
        redact_client_bits: u8,
    },
    /// Keep only records whose checks all passed.
    Prune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistics and tables from stored records.
    Analyze {
        #[arg(value_enum)]
        analysis: Analysis,
        #[arg(long)]
        input: PathBuf,
        /// Analytics settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which table `tables` writes.
        #[arg(long, value_enum, default_value_t = TableKind::Cases)]
        table: TableKind,
        /// Needed by `hops`.
        #[arg(long)]
        prefix_table: Option<PathBuf>,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination; exit status 2.
    Usage(String),
    /// The work itself failed; exit status 1.
    Failed(String),
}

impl CliError {
    fn failed(e: impl std::fmt::Display) -> Self {
        CliError::Failed(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` and runs the subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

enum Backend {
    Sim(Scenario),
    #[cfg_attr(not(feature = "live"), allow(dead_code))]
    Live(Ipv4Addr),
}

fn backend(t: &TransportArgs) -> CliResult<Backend> {
    match t.transport {
        TransportKind::Sim => {
            let path = t
                .scenario
                .as_ref()
                .ok_or_else(|| CliError::Usage("--transport sim needs --scenario".into()))?;
            Ok(Backend::Sim(Scenario::load(path).map_err(CliError::failed)?))
        }
        TransportKind::Live => {
            if t.scenario.is_some() {
                return Err(CliError::Usage("--scenario cannot be used with --transport live".into()));
            }
            eprintln!("{ETHICS}");
            if !t.i_have_authorization {
                return Err(CliError::Usage(
                    "live measurements require --i-have-authorization".into(),
                ));
            }
            let addr = t
                .local_addr
                .ok_or_else(|| CliError::Usage("--transport live needs --local-addr".into()))?;
            if !cfg!(feature = "live") {
                return Err(CliError::Failed("this build has no live backend (enable the `live` feature)".into()));
            }
            Ok(Backend::Live(addr))
        }
    }
}

#[cfg(feature = "live")]
fn live_transport(addr: Ipv4Addr) -> CliResult<crate::transport::LiveTransport> {
    crate::transport::LiveTransport::open(crate::transport::LiveConfig::new(addr)).map_err(CliError::failed)
}

#[cfg(not(feature = "live"))]
fn live_transport(_addr: Ipv4Addr) -> CliResult<crate::transport::SimTransport> {
    Err(CliError::Failed("this build has no live backend".into()))
}

fn mm_addr(s: &Scenario) -> CliResult<Ipv4Addr> {
    s.vantage("mm")
        .or_else(|| s.vantages.first().map(|v| v.addr))
        .ok_or_else(|| CliError::Failed("scenario declares no vantage point".into()))
}

fn endpoints(path: &Path) -> CliResult<Vec<EndpointSpec>> {
    load_endpoints(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> CliResult {
    let seed = cli.seed;
    let workers = cli.workers.max(1);
    match cli.command {
        Command::Qualify {
            clients,
            transport,
            second_addr,
            window,
            out,
        } => {
            let be = backend(&transport)?;
            let clients = endpoints(&clients)?;
            let cfg = QualifyConfig {
                window,
                ..QualifyConfig::default()
            };
            let mut rows = Vec::new();
            match be {
                Backend::Sim(s) => {
                    for (i, c) in clients.iter().enumerate() {
                        let q = qualify_sim(&s, c, &cfg, seed ^ i as u64).map_err(CliError::failed)?;
                        rows.push((c.addr, q));
                    }
                }
                Backend::Live(addr) => {
                    let second = second_addr
                        .ok_or_else(|| CliError::Usage("live qualification needs --second-addr".into()))?;
                    let (a, b) = (live_transport(addr)?, live_transport(second)?);
                    let mut isn = IsnGenerator::new(seed);
                    for c in &clients {
                        let q = qualify_client([&a, &b], c, &cfg, &mut isn).map_err(CliError::failed)?;
                        rows.push((c.addr, q));
                    }
                }
            }
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["addr", "qualified", "reason"]).map_err(CliError::failed)?;
            for (addr, q) in &rows {
                let reason = match q {
                    crate::idlescan::Qualification::Qualified => "",
                    crate::idlescan::Qualification::Disqualified(d) => d.label(),
                };
                w.write_record([addr.to_string(), q.is_qualified().to_string(), reason.to_string()])
                    .map_err(CliError::failed)?;
            }
            w.flush().map_err(CliError::failed)?;
            let ok = rows.iter().filter(|(_, q)| q.is_qualified()).count();
            eprintln!("{ok} of {} clients qualified", rows.len());
            Ok(())
        }

        Command::IdleScan {
            clients,
            servers,
            transport,
            rounds,
            start_hour,
            spoof_rate,
            no_qualify,
            redact_client_bits,
            out,
            report,
        } => {
            let be = backend(&transport)?;
            let clients = endpoints(&clients)?;
            let servers = endpoints(&servers)?;
            let cfg = CampaignConfig {
                seed,
                rounds,
                start_hour,
                round: ScanRoundConfig {
                    spoof_rate,
                    ..ScanRoundConfig::default()
                },
                qualify: !no_qualify,
                workers,
                ..CampaignConfig::default()
            };
            let records = match be {
                Backend::Sim(s) => {
                    let rep = run_sim_campaign(&s, &clients, &servers, &cfg).map_err(CliError::failed)?;
                    for (c, q) in &rep.disqualified {
                        eprintln!("disqualified {}: {q:?}", c.addr);
                    }
                    rep.records
                }
                Backend::Live(addr) => {
                    let t = live_transport(addr)?;
                    run_campaign_on(&t, &clients, &servers, &cfg).map_err(CliError::failed)?
                }
            };
            write_campaign_outputs(&records, &out, &report, redact_client_bits).map_err(CliError::failed)?;
            summary(&records);
            Ok(())
        }

        Command::BacklogScan {
            kind,
            relay,
            transport,
            fill,
            probes,
            stagger_ms,
            epoch,
            paper_literal_verdicts,
            vps_addr,
            out,
        } => {
            let kind = match kind {
                KindArg::Syn => ScanKind::Syn,
                KindArg::Rst => ScanKind::Rst,
            };
            let mut cfg = BacklogConfig {
                stagger_ms,
                paper_literal_verdicts,
                ..BacklogConfig::default()
            };
            match kind {
                ScanKind::Syn => {
                    cfg.syn_fill = fill.unwrap_or(cfg.syn_fill);
                    cfg.syn_probes = probes.unwrap_or(cfg.syn_probes);
                }
                ScanKind::Rst => {
                    cfg.rst_fill = fill.unwrap_or(cfg.rst_fill);
                    cfg.rst_probes = probes.unwrap_or(cfg.rst_probes);
                }
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let relay = EndpointSpec::new(*relay.ip(), relay.port(), Role::TorRelay);
            let record = match backend(&transport)? {
                Backend::Sim(s) => {
                    let mm = mm_addr(&s)?;
                    let vps = vps_addr
                        .or_else(|| s.vantage("vps"))
                        .ok_or_else(|| CliError::Usage("no VPS: pass --vps-addr or name a vantage \"vps\"".into()))?;
                    let mut sim = s.clone().with_seed(seed).build_bare();
                    s.ensure_server(&mut sim, &relay);
                    let net = SimNetwork::new(sim);
                    let (a, b) = (net.transport(mm), net.transport(vps));
                    BacklogScanner::new(&a, &b, cfg, seed)
                        .with_epoch(epoch)
                        .scan(kind, &relay)
                        .map_err(CliError::failed)?
                }
                Backend::Live(addr) => {
                    let a = live_transport(addr)?;
                    let b = live_transport(vps_addr.unwrap_or(addr))?;
                    BacklogScanner::new(&a, &b, cfg, seed)
                        .with_epoch(epoch)
                        .scan(kind, &relay)
                        .map_err(CliError::failed)?
                }
            };
            let valid = record.baseline.answered > 0 && record.verdict.is_valid();
            let rec = ScanRecord::new(
                Payload::BacklogScan(record.clone()),
                [(check::STABLE_FLAG, true), (check::BASELINE, valid)],
            );
            let mut w = RecordWriter::append_to(&out).map_err(CliError::failed)?;
            w.append(&rec).map_err(CliError::failed)?;
            w.flush().map_err(CliError::failed)?;
            eprintln!(
                "{:?} scan of {}: {:?} (retransmissions {:?})",
                kind, relay.addr, record.verdict, record.observed_retransmissions
            );
            Ok(())
        }

        Command::Trace {
            dests,
            ports,
            hours,
            days,
            start_hour,
            prefix_table,
            transport,
            out,
        } => {
            let [filtered, control] = ports[..] else {
                return Err(CliError::Usage("--ports takes exactly two ports: filtered,control".into()));
            };
            let be = backend(&transport)?;
            let dests = endpoints(&dests)?;
            let table = PrefixTable::load(&prefix_table).map_err(CliError::failed)?;
            let cfg = TracerConfig {
                filtered_port: filtered,
                control_port: control,
                ..TracerConfig::default()
            };
            let schedule = TraceSchedule {
                hours,
                days,
                start_hour,
            };
            let addrs: Vec<Ipv4Addr> = dests.iter().map(|d| d.addr).collect();
            let mut isn = IsnGenerator::new(seed);
            let runs = match be {
                Backend::Sim(s) => {
                    let mut sim = s.clone().with_seed(seed).build_bare();
                    sim.set_start_hour(start_hour);
                    for d in &dests {
                        s.ensure_client(&mut sim, d);
                    }
                    let net = SimNetwork::new(sim);
                    let t = net.transport(mm_addr(&s)?);
                    trace_campaign(&t, &addrs, &table, &schedule, &cfg, &mut isn).map_err(CliError::failed)?
                }
                Backend::Live(addr) => {
                    let t = live_transport(addr)?;
                    trace_campaign(&t, &addrs, &table, &schedule, &cfg, &mut isn).map_err(CliError::failed)?
                }
            };
            let mut w = RecordWriter::new(create(&out)?);
            for r in &runs {
                let labelled = r.entry_label.is_some_and(|l| l != crate::tracer::EntryLabel::Other);
                w.append(&ScanRecord::new(Payload::Traceroute(r.clone()), [(check::ENTRY_LABEL, labelled)]))
                    .map_err(CliError::failed)?;
            }
            w.flush().map_err(CliError::failed)?;
            let done = runs.iter().filter(|r| r.finished()).count();
            eprintln!("{} traceroutes, {done} reached their destination", runs.len());
            Ok(())
        }

        Command::Simulate {
            scenario,
            out_dir,
            rounds,
            redact_client_bits,
        } => {
            let s = Scenario::load(&scenario).map_err(CliError::failed)?;
            std::fs::create_dir_all(&out_dir).map_err(CliError::failed)?;
            match &s.campaign {
                Some(c) => {
                    let clients = endpoints(&c.clients)?;
                    let servers = endpoints(&c.servers)?;
                    let cfg = CampaignConfig {
                        seed,
                        rounds: rounds.unwrap_or(c.rounds),
                        start_hour: c.start_hour,
                        workers,
                        ..CampaignConfig::default()
                    };
                    let rep = run_sim_campaign(&s, &clients, &servers, &cfg).map_err(CliError::failed)?;
                    write_campaign_outputs(
                        &rep.records,
                        &out_dir.join("data.jsonl"),
                        &out_dir.join("report.csv"),
                        redact_client_bits,
                    )
                    .map_err(CliError::failed)?;
                    summary(&rep.records);
                }
                None => {
                    let until = s
                        .duration_s
                        .ok_or_else(|| CliError::Usage("scenario has neither [campaign] nor duration_s".into()))?;
                    let events = create(&out_dir.join("events.jsonl"))?;
                    let net = SimNetwork::new(s.clone().with_seed(seed).build()).with_trace(events);
                    net.advance(Timestamp::from_secs_f64(until)).map_err(CliError::failed)?;
                    net.flush_trace().map_err(CliError::failed)?;
                    eprintln!("simulated {until} s");
                }
            }
            Ok(())
        }

        Command::Prune { input, out } => {
            let records = store::load(&input).map_err(CliError::failed)?;
            let kept = store::prune_campaign(&records);
            let fmt = ExportFormat::from_path(&out).map_err(|e| CliError::Usage(e.to_string()))?;
            store::export(&kept.admitted, &out, fmt).map_err(CliError::failed)?;
            match kept.retention() {
                Some(r) => eprintln!("kept {} of {} records ({:.1}%)", kept.admitted.len(), kept.total, 100.0 * r),
                None => eprintln!("no records"),
            }
            Ok(())
        }

        Command::Analyze {
            analysis,
            input,
            config,
            table,
            prefix_table,
            out,
        } => {
            let cfg: AnalyticsConfig = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(CliError::failed)?;
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                }
                None => AnalyticsConfig::default(),
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let records = store::prune_campaign(&store::load(&input).map_err(CliError::failed)?).admitted;
            analyze(analysis, table, &records, &cfg, prefix_table.as_deref(), &out)
        }
    }
}

fn summary(records: &[ScanRecord]) {
    let kept = store::prune_campaign(records);
    let idle = store::idle_records(&kept.admitted);
    let count = |f: fn(&Case) -> bool| idle.iter().filter(|r| f(&r.label.case)).count();
    eprintln!(
        "{} rounds, {} admitted: {} S2C, {} none, {} C2S, {} error",
        records.len(),
        kept.admitted.len(),
        count(|c| *c == Case::ServerToClientDrop),
        count(|c| *c == Case::NoPacketsDropped),
        count(|c| *c == Case::ClientToServerDrop),
        count(|c| c.is_error()),
    );
}

fn xy<W: Write, X: ToString, Y: ToString>(w: W, header: [&str; 2], rows: impl IntoIterator<Item = (X, Y)>) -> CliResult {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header).map_err(CliError::failed)?;
    for (x, y) in rows {
        w.write_record([x.to_string(), y.to_string()]).map_err(CliError::failed)?;
    }
    w.flush().map_err(CliError::failed)
}

fn analyze(
    analysis: Analysis,
    table: TableKind,
    records: &[ScanRecord],
    cfg: &AnalyticsConfig,
    prefix_table: Option<&Path>,
    out: &Path,
) -> CliResult {
    let w = create(out)?;
    let idle = || store::idle_records(records);
    match analysis {
        Analysis::Temporal => {
            let s = source_series(&idle(), Case::NoPacketsDropped, cfg);
            let p = temporal_association(&s, cfg.max_lag, cfg.lag_mode, cfg.averaging);
            eprintln!("{} sources, {} lags", s.len(), p.len());
            xy(w, ["lag", "probability"], p.iter().enumerate().map(|(i, v)| (i + 1, v)))
        }
        Analysis::Spatial => {
            let s = source_series(&idle(), Case::NoPacketsDropped, cfg);
            let rows: Vec<(usize, String)> = (1..=cfg.k)
                .map(|k| {
                    let r = spatial_association(&s, k).map_or_else(|_| "undefined".to_string(), |r| r.to_string());
                    (k, r)
                })
                .collect();
            eprintln!("{} sources", s.len());
            xy(w, ["k", "pearson"], rows)
        }
        Analysis::Tables => match table {
            TableKind::Cases => case_table(&idle()).write_csv(w).map_err(CliError::failed),
            TableKind::Contingency => {
                let t = contingency_table(&store::backlog_records(records));
                for warn in &t.warnings {
                    eprintln!("warning: {warn}");
                }
                t.write_csv(w).map_err(CliError::failed)
            }
            TableKind::Traceroute => traceroute_table(&store::traceroute_records(records), cfg.filtered_port)
                .write_csv(w)
                .map_err(CliError::failed),
        },
        Analysis::Hops => {
            let path = prefix_table.ok_or_else(|| CliError::Usage("hops needs --prefix-table".into()))?;
            let t = PrefixTable::load(path).map_err(CliError::failed)?;
            let h = hop_histogram(&store::traceroute_records(records), &t, &cfg.target_region, cfg.filtered_port);
            xy(w, ["hops", "count"], h)
        }
        Analysis::Diurnal => xy(
            w,
            ["hour", "unfiltered"],
            diurnal_series(&store::traceroute_records(records), cfg.filtered_port),
        ),
        Analysis::Heatmap => {
            let s = source_series(&idle(), Case::NoPacketsDropped, cfg);
            let mut w = csv::Writer::from_writer(w);
            w.write_record(["lat", "lon", "count"]).map_err(CliError::failed)?;
            for (lat, lon, n) in heatmap(&s) {
                w.write_record([lat.to_string(), lon.to_string(), n.to_string()])
                    .map_err(CliError::failed)?;
            }
            w.flush().map_err(CliError::failed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["inferscan", "prune", "--bogus"]), ExitCode::from(2));
        assert_eq!(
            run(["inferscan", "trace", "--dests", "x", "--prefix-table", "y"]),
            ExitCode::from(2),
            "sim without scenario"
        );
    }

    #[test]
    fn live_requires_authorization() {
        let t = TransportArgs {
            transport: TransportKind::Live,
            scenario: None,
            local_addr: Some(Ipv4Addr::LOCALHOST),
            i_have_authorization: false,
        };
        assert!(matches!(backend(&t), Err(CliError::Usage(_))));
    }
}
