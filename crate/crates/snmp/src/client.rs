use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicI32, Ordering};
use std::time::Duration;

use nss_core::features::CounterSnapshot;
use serde::{Deserialize, Serialize};
use tokio::net::UdpSocket;
use tokio::time::Instant;

use crate::clock::Clock;
use crate::codec::{decode_message, encode_message, Message, Pdu, PduKind, Value};
use crate::oids::{parse_if_counter, poll_oids, sys_uptime};

pub const DEFAULT_PORT: u16 = 161;
pub const DEFAULT_COMMUNITY: &str = "public";
pub const DEFAULT_POLL_INTERVAL_S: u32 = 10;
pub const MAX_POLL_INTERVAL_S: u32 = 300;

/// A polled device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub id: String,
    pub host: IpAddr,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_community")]
    pub community: String,
    pub if_indexes: Vec<u32>,
    #[serde(default = "default_interval")]
    pub poll_interval_s: u32,
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

fn default_community() -> String {
    DEFAULT_COMMUNITY.to_string()
}

fn default_interval() -> u32 {
    DEFAULT_POLL_INTERVAL_S
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TargetError {
    #[error("target id must not be empty")]
    EmptyId,
    #[error("target {0}: poll_interval_s must be within 1..=300, got {1}")]
    Interval(String, u32),
    #[error("target {0}: if_indexes must not be empty")]
    NoInterfaces(String),
}

impl Target {
    pub fn new(id: impl Into<String>, addr: SocketAddr, if_indexes: Vec<u32>) -> Self {
        Self {
            id: id.into(),
            host: addr.ip(),
            port: addr.port(),
            community: default_community(),
            if_indexes,
            poll_interval_s: DEFAULT_POLL_INTERVAL_S,
        }
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if self.id.trim().is_empty() {
            return Err(TargetError::EmptyId);
        }
        if !(1..=MAX_POLL_INTERVAL_S).contains(&self.poll_interval_s) {
            return Err(TargetError::Interval(self.id.clone(), self.poll_interval_s));
        }
        if self.if_indexes.is_empty() {
            return Err(TargetError::NoInterfaces(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollOptions {
    pub attempts: u32,
    /// Per-attempt wait, in real time.
    pub timeout: Duration,
}

impl Default for PollOptions {
    fn default() -> Self {
        Self { attempts: 3, timeout: Duration::from_secs(2) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PollError {
    #[error("target {target} unreachable after {attempts} attempts")]
    TargetUnreachable { target: String, attempts: u32 },
    #[error("agent returned error-status {status} at index {index}")]
    Snmp { status: i32, index: i32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

impl PollError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, Self::TargetUnreachable { .. })
    }
}

/// A snapshot plus the counters the agent could not supply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolledSnapshot {
    pub snapshot: CounterSnapshot,
    pub missing: Vec<String>,
}

impl PolledSnapshot {
    pub fn degraded(&self) -> bool {
        !self.missing.is_empty()
    }
}

static NEXT_REQUEST_ID: AtomicI32 = AtomicI32::new(1);

fn next_request_id() -> i32 {
    NEXT_REQUEST_ID.fetch_add(1, Ordering::Relaxed) & 0x7FFF_FFFF
}

/// One GetRequest for sysUpTime.0 and the eight interface counters.
///
/// Retries with the same request id; responses with any other id, or that fail
/// to decode, are ignored. The snapshot is timestamped when the answered
/// request was sent.
pub async fn poll_once(
    target: &Target,
    if_index: u32,
    opts: &PollOptions,
    clock: &Clock,
) -> Result<PolledSnapshot, PollError> {
    let addr = target.addr();
    let local: SocketAddr = if addr.is_ipv4() {
        (std::net::Ipv4Addr::UNSPECIFIED, 0).into()
    } else {
        (std::net::Ipv6Addr::UNSPECIFIED, 0).into()
    };
    let socket = UdpSocket::bind(local).await?;
    socket.connect(addr).await?;
    let request_id = next_request_id();
    let request = encode_message(&Message::v2c(
        target.community.as_bytes(),
        Pdu::get(request_id, poll_oids(if_index)),
    ));

    let mut buf = vec![0u8; 65_535];
    for _ in 0..opts.attempts {
        let sent_at = clock.now_ms();
        let deadline = Instant::now() + opts.timeout;
        if socket.send(&request).await.is_err() {
            tokio::time::sleep_until(deadline).await;
            continue;
        }
        loop {
            match tokio::time::timeout_at(deadline, socket.recv(&mut buf)).await {
                Err(_) => break,
                Ok(Err(_)) => {
                    // e.g. ICMP port unreachable; wait out the attempt
                    tokio::time::sleep_until(deadline).await;
                    break;
                }
                Ok(Ok(n)) => match decode_message(&buf[..n]) {
                    Ok(msg)
                        if msg.pdu.kind == PduKind::Response && msg.pdu.request_id == request_id =>
                    {
                        return assemble(target, if_index, sent_at, msg.pdu);
                    }
                    _ => continue,
                },
            }
        }
    }
    Err(PollError::TargetUnreachable { target: target.id.clone(), attempts: opts.attempts })
}

fn assemble(target: &Target, if_index: u32, ts_ms: u64, pdu: Pdu) -> Result<PolledSnapshot, PollError> {
    if pdu.error_status != 0 {
        return Err(PollError::Snmp { status: pdu.error_status, index: pdu.error_index });
    }
    let uptime_oid = sys_uptime();
    let mut uptime = None;
    let mut counters = std::collections::BTreeMap::new();
    for vb in pdu.varbinds {
        if vb.oid == uptime_oid {
            match vb.value {
                Value::TimeTicks(t) => uptime = Some(t),
                other => return Err(PollError::Protocol(format!("sysUpTime has type {other:?}"))),
            }
            continue;
        }
        let Some((name, idx)) = parse_if_counter(&vb.oid) else { continue };
        if idx != if_index {
            continue;
        }
        match vb.value {
            Value::Counter32(v) => {
                counters.insert(name.to_string(), v);
            }
            Value::NoSuchInstance | Value::NoSuchObject => {}
            other => return Err(PollError::Protocol(format!("{} has type {other:?}", vb.oid))),
        }
    }
    let uptime_ticks =
        uptime.ok_or_else(|| PollError::Protocol("response lacks sysUpTime.0".into()))?;
    let missing = crate::oids::IF_COLUMNS
        .iter()
        .map(|&(_, name)| name)
        .filter(|name| !counters.contains_key(*name))
        .map(str::to_string)
        .collect();
    Ok(PolledSnapshot {
        snapshot: CounterSnapshot {
            target: target.id.clone(),
            if_index,
            ts_ms,
            uptime_ticks,
            counters,
        },
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_validation() {
        let mut t = Target::new("sw1", "127.0.0.1:161".parse().unwrap(), vec![1]);
        assert!(t.validate().is_ok());
        t.poll_interval_s = 301;
        assert!(t.validate().is_err());
        t.poll_interval_s = 0;
        assert!(t.validate().is_err());
        t.poll_interval_s = 5;
        t.if_indexes.clear();
        assert!(t.validate().is_err());
    }

    #[test]
    fn target_defaults_from_json() {
        let t: Target =
            serde_json::from_str(r#"{"id":"a","host":"10.0.0.1","if_indexes":[2]}"#).unwrap();
        assert_eq!((t.port, t.community.as_str(), t.poll_interval_s), (161, "public", 10));
    }
}
