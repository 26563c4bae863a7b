//! MIB-II object identifiers polled per interface.

use nss_core::features::{
    IN_DISCARDS, IN_ERRORS, IN_NUCAST_PKTS, IN_OCTETS, IN_UCAST_PKTS, OUT_DISCARDS, OUT_ERRORS,
    OUT_OCTETS,
};

use crate::codec::Oid;

/// sysUpTime.0
pub const SYS_UPTIME: [u32; 9] = [1, 3, 6, 1, 2, 1, 1, 3, 0];

/// ifEntry (1.3.6.1.2.1.2.2.1); a column OID is this plus the column number.
pub const IF_ENTRY: [u32; 9] = [1, 3, 6, 1, 2, 1, 2, 2, 1];

/// (ifEntry column, counter name), in request order.
pub const IF_COLUMNS: [(u32, &str); 8] = [
    (10, IN_OCTETS),
    (16, OUT_OCTETS),
    (14, IN_ERRORS),
    (20, OUT_ERRORS),
    (13, IN_DISCARDS),
    (19, OUT_DISCARDS),
    (12, IN_NUCAST_PKTS),
    (11, IN_UCAST_PKTS),
];

pub fn sys_uptime() -> Oid {
    Oid::new(SYS_UPTIME.to_vec()).expect("valid constant")
}

/// `ifEntry.<column>.<if_index>`
pub fn if_counter(column: u32, if_index: u32) -> Oid {
    let mut arcs = IF_ENTRY.to_vec();
    arcs.push(column);
    arcs.push(if_index);
    Oid::new(arcs).expect("valid constant prefix")
}

/// The nine OIDs of one interface poll: uptime first, then the counters.
pub fn poll_oids(if_index: u32) -> Vec<Oid> {
    std::iter::once(sys_uptime())
        .chain(IF_COLUMNS.iter().map(|&(col, _)| if_counter(col, if_index)))
        .collect()
}

/// Inverse of [`if_counter`] for the supported columns: `(counter name, if_index)`.
pub fn parse_if_counter(oid: &Oid) -> Option<(&'static str, u32)> {
    let arcs = oid.arcs();
    if arcs.len() != IF_ENTRY.len() + 2 || arcs[..IF_ENTRY.len()] != IF_ENTRY {
        return None;
    }
    let column = arcs[IF_ENTRY.len()];
    let name = IF_COLUMNS.iter().find(|&&(c, _)| c == column)?.1;
    Some((name, arcs[IF_ENTRY.len() + 1]))
}
