//! SNMP v2c collector: a strict BER codec for the Get/Response subset, a UDP
//! client that polls MIB-II interface counters, and a jittered scheduler.

pub mod client;
pub mod clock;
pub mod codec;
pub mod oids;
pub mod scheduler;

pub use client::{poll_once, PollError, PollOptions, PolledSnapshot, Target, TargetError};
pub use clock::Clock;
pub use codec::{
    decode_message, encode_message, DecodeError, DecodeErrorKind, Message, Oid, Pdu, PduKind,
    Value, VarBind,
};
pub use scheduler::{PollEvent, Poller, Scheduler, SchedulerConfig, SchedulerError, SnmpPoller};
