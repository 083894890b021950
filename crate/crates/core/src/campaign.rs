//! Simulated idle-scan campaigns over the bipartite client × server
//! schedule.
//!
//! Every assignment runs in a fresh simulator seeded from the campaign
//! seed, the slot and the pair, so results do not depend on how the slot's
//! assignments are spread over worker threads.

use std::net::Ipv4Addr;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::case_table;
use crate::classify::{classify_series, Case, CaseLabel, ClassifyConfig, ErrorReason};
use crate::endpoint::{EndpointSpec, Role};
use crate::idlescan::{
    qualify_client, schedule_bipartite, IdleScanError, IdleScanRecord, IdleScanner, Qualification,
    QualifyConfig, RoundOutcome, ScanRoundConfig, ScheduleConfig, Slot,
};
use crate::simnet::Scenario;
use crate::store::{check, idle_records, prune_campaign, Payload, RecordWriter, ScanRecord, StoreError};
use crate::transport::{splitmix64, IsnGenerator, SimNetwork, Timestamp, Transport};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    IdleScan(#[from] IdleScanError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub rounds: u32,
    pub start_hour: u8,
    pub round: ScanRoundConfig,
    pub classify: ClassifyConfig,
    /// Qualify clients first and drop those that fail.
    pub qualify: bool,
    pub qualify_cfg: QualifyConfig,
    /// Relays need the stable flag and this much uptime.
    pub min_uptime_days: f64,
    pub workers: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 3,
            start_hour: 0,
            round: ScanRoundConfig::default(),
            classify: ClassifyConfig::default(),
            qualify: true,
            qualify_cfg: QualifyConfig::default(),
            min_uptime_days: 5.0,
            workers: 1,
        }
    }
}

/// Relays must carry the stable flag and enough uptime; other server
/// roles are not filtered.
pub fn server_eligible(server: &EndpointSpec, min_uptime_days: f64) -> bool {
    !matches!(server.role, Role::TorRelay | Role::TorDir)
        || (server.stable_flag && server.uptime_days >= min_uptime_days)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    /// Every scheduled round, admitted or not, in schedule order.
    pub records: Vec<ScanRecord>,
    pub disqualified: Vec<(EndpointSpec, Qualification)>,
    pub ineligible_servers: Vec<EndpointSpec>,
}

fn pick_vantages(scenario: &Scenario) -> Result<(Ipv4Addr, Ipv4Addr), CampaignError> {
    let mm = scenario
        .vantage("mm")
        .or_else(|| scenario.vantages.first().map(|v| v.addr))
        .ok_or_else(|| CampaignError::Scenario("no vantage point declared".into()))?;
    let second = scenario
        .vantage("vps")
        .or_else(|| scenario.vantages.iter().map(|v| v.addr).find(|a| *a != mm))
        .ok_or_else(|| CampaignError::Scenario("qualification needs a second vantage point".into()))?;
    Ok((mm, second))
}

fn derive(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a.wrapping_mul(0x1_0000_0001) ^ b.rotate_left(29)))
}

/// Checks one client in its own simulator.
pub fn qualify_sim(
    scenario: &Scenario,
    client: &EndpointSpec,
    cfg: &QualifyConfig,
    seed: u64,
) -> Result<Qualification, CampaignError> {
    let (mm, vps) = pick_vantages(scenario)?;
    let mut sim = scenario.clone().with_seed(seed).build_bare();
    scenario.ensure_client(&mut sim, client);
    let net = SimNetwork::new(sim);
    let (a, b) = (net.transport(mm), net.transport(vps));
    let mut isn = IsnGenerator::new(seed);
    qualify_client([&a, &b], client, cfg, &mut isn).map_err(|e| IdleScanError::Transport(e).into())
}

fn run_assignment(
    scenario: &Scenario,
    mm: Ipv4Addr,
    client: &EndpointSpec,
    server: &EndpointSpec,
    slot: &Slot,
    seed: u64,
    cfg: &CampaignConfig,
) -> Result<ScanRecord, CampaignError> {
    let mut sim = scenario.clone().with_seed(seed).build_bare();
    sim.set_start_hour(slot.hour);
    scenario.ensure_client(&mut sim, client);
    scenario.ensure_server(&mut sim, server);
    let net = SimNetwork::new(sim);
    let t = net.transport(mm);
    let mut scanner = IdleScanner::new(&t, cfg.round.clone(), seed);
    let out = scanner.run_scan_round(client, server)?;
    Ok(round_record(&out, client, server, slot, cfg))
}

fn round_record(
    out: &RoundOutcome,
    client: &EndpointSpec,
    server: &EndpointSpec,
    slot: &Slot,
    cfg: &CampaignConfig,
) -> ScanRecord {
    let (label, diagnostics) = match (&out.series, &out.voided) {
        (Some(series), None) => {
            let (label, iv) = classify_series(series, &cfg.classify);
            (label, iv.map(|i| i.diagnostics))
        }
        _ => (
            CaseLabel {
                case: Case::Error(ErrorReason::InvalidSeries),
                amplitude: None,
                confidence: 0.0,
            },
            None,
        ),
    };
    let rec = IdleScanRecord {
        client: client.clone(),
        server: server.clone(),
        round: slot.round,
        slot: slot.index,
        hour: slot.hour,
        timestamp: Timestamp::ZERO + slot.start,
        label,
        diagnostics,
        voided: out.voided.clone(),
    };
    ScanRecord::new(
        Payload::IdleScan(rec),
        [
            (check::CLIENT_LIVELINESS, out.client_ok()),
            (check::SERVER_LIVELINESS, out.server_ok() && out.voided.is_none()),
            (check::STABLE_FLAG, server_eligible(server, cfg.min_uptime_days)),
        ],
    )
}

/// Runs the schedule one assignment at a time over a single transport,
/// starting each slot at its offset from the transport's current time.
/// Clients are assumed to be qualified already.
pub fn run_campaign_on(
    tr: &dyn Transport,
    clients: &[EndpointSpec],
    servers: &[EndpointSpec],
    cfg: &CampaignConfig,
) -> Result<Vec<ScanRecord>, CampaignError> {
    cfg.round.validate()?;
    let eligible: Vec<EndpointSpec> = servers
        .iter()
        .filter(|s| server_eligible(s, cfg.min_uptime_days))
        .cloned()
        .collect();
    if clients.is_empty() || eligible.is_empty() {
        return Ok(Vec::new());
    }
    let slots = schedule_bipartite(
        clients,
        &eligible,
        &ScheduleConfig {
            seed: cfg.seed,
            rounds: cfg.rounds,
            slot_duration: cfg.round.round_duration().as_secs_f64().ceil(),
            start_hour: cfg.start_hour,
        },
    )?;
    let t0 = tr.now();
    let mut scanner = IdleScanner::new(tr, cfg.round.clone(), cfg.seed);
    let mut records = Vec::new();
    for slot in &slots {
        if tr.now() < t0 + slot.start {
            tr.wait_until(t0 + slot.start).map_err(IdleScanError::from)?;
        }
        for a in &slot.assignments {
            let (c, s) = (&clients[a.client], &eligible[a.server]);
            let out = scanner.run_scan_round(c, s)?;
            records.push(round_record(&out, c, s, slot, cfg));
        }
    }
    Ok(records)
}

/// Qualifies clients, filters relays, schedules every remaining pair
/// `cfg.rounds` times and runs each assignment.
pub fn run_sim_campaign(
    scenario: &Scenario,
    clients: &[EndpointSpec],
    servers: &[EndpointSpec],
    cfg: &CampaignConfig,
) -> Result<CampaignReport, CampaignError> {
    cfg.round.validate()?;
    let (mm, _) = pick_vantages(scenario)?;

    let mut qualified = Vec::new();
    let mut disqualified = Vec::new();
    for (i, c) in clients.iter().enumerate() {
        let q = if cfg.qualify {
            qualify_sim(scenario, c, &cfg.qualify_cfg, derive(cfg.seed, u64::MAX, i as u64))?
        } else {
            Qualification::Qualified
        };
        if q.is_qualified() {
            qualified.push(c.clone());
        } else {
            disqualified.push((c.clone(), q));
        }
    }
    let (eligible, ineligible): (Vec<EndpointSpec>, Vec<EndpointSpec>) = servers
        .iter()
        .cloned()
        .partition(|s| server_eligible(s, cfg.min_uptime_days));
    if qualified.is_empty() || eligible.is_empty() {
        return Ok(CampaignReport {
            records: Vec::new(),
            disqualified,
            ineligible_servers: ineligible,
        });
    }

    let slot_duration = cfg.round.round_duration().as_secs_f64().ceil();
    let slots = schedule_bipartite(
        &qualified,
        &eligible,
        &ScheduleConfig {
            seed: cfg.seed,
            rounds: cfg.rounds,
            slot_duration,
            start_hour: cfg.start_hour,
        },
    )?;

    let workers = cfg.workers.max(1);
    let mut records = Vec::new();
    for slot in &slots {
        let jobs: Vec<(usize, usize, u64)> = slot
            .assignments
            .iter()
            .map(|a| (a.client, a.server, derive(cfg.seed, slot.index as u64, ((a.client as u64) << 32) | a.server as u64)))
            .collect();
        let mut results: Vec<Option<Result<ScanRecord, CampaignError>>> = (0..jobs.len()).map(|_| None).collect();
        let chunk = jobs.len().div_ceil(workers).max(1);
        std::thread::scope(|s| {
            for (out, work) in results.chunks_mut(chunk).zip(jobs.chunks(chunk)) {
                let (qualified, eligible) = (&qualified, &eligible);
                s.spawn(move || {
                    for (o, (c, sv, seed)) in out.iter_mut().zip(work) {
                        *o = Some(run_assignment(scenario, mm, &qualified[*c], &eligible[*sv], slot, *seed, cfg));
                    }
                });
            }
        });
        for r in results {
            records.push(r.expect("every job ran")?);
        }
    }
    Ok(CampaignReport {
        records,
        disqualified,
        ineligible_servers: ineligible,
    })
}

/// Writes `data.jsonl` with every record and `report.csv` with the case
/// table of the admitted ones.
pub fn write_campaign_outputs(
    records: &[ScanRecord],
    data: &Path,
    report: &Path,
    redact_client_bits: u8,
) -> Result<(), CampaignError> {
    let mut w = RecordWriter::create(data)?.redact_client_bits(redact_client_bits);
    for r in records {
        w.append(r)?;
    }
    w.flush()?;
    let kept = prune_campaign(records);
    let table = case_table(&idle_records(&kept.admitted));
    let f = std::fs::File::create(report).map_err(StoreError::from)?;
    table.write_csv(f).map_err(|e| CampaignError::Report(e.to_string()))
}

/// Virtual time a campaign of `slots` slots covers.
pub fn campaign_span(cfg: &ScanRoundConfig, slots: usize) -> Duration {
    Duration::from_secs_f64(cfg.round_duration().as_secs_f64().ceil() * slots as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{PairPolicy, PairPreset};

    #[test]
    fn relay_filter() {
        let a = Ipv4Addr::new(1, 1, 1, 1);
        assert!(!server_eligible(&EndpointSpec::new(a, 9001, Role::TorRelay), 5.0));
        assert!(!server_eligible(&EndpointSpec::new(a, 9001, Role::TorRelay).stable(4.0), 5.0));
        assert!(server_eligible(&EndpointSpec::new(a, 9001, Role::TorRelay).stable(5.0), 5.0));
        assert!(server_eligible(&EndpointSpec::new(a, 80, Role::Web), 5.0));
    }

    #[test]
    fn single_pair_campaign_is_reproducible() {
        let p = PairPreset::new(PairPolicy::DropServerToClient, 3);
        let cfg = CampaignConfig {
            seed: 11,
            rounds: 1,
            qualify: false,
            workers: 2,
            ..CampaignConfig::default()
        };
        let server = p.server().stable(10.0);
        let a = run_sim_campaign(&p.scenario(), &[p.client()], &[server.clone()], &cfg).unwrap();
        let b = run_sim_campaign(&p.scenario(), &[p.client()], &[server], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 1);
        assert!(a.records[0].admitted);
        match &a.records[0].payload {
            Payload::IdleScan(r) => assert_eq!(r.label.case, Case::ServerToClientDrop),
            _ => unreachable!(),
        }
    }
}
