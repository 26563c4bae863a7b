//! BER encoding of the SNMP v2c message subset.
//!
//! ```text
//! Message ::= SEQUENCE { version INTEGER, community OCTET STRING, data PDU }
//! PDU     ::= [A0|A1|A2] { request-id INTEGER, error-status INTEGER,
//!                          error-index INTEGER, SEQUENCE OF VarBind }
//! VarBind ::= SEQUENCE { name OBJECT IDENTIFIER, value ANY }
//! ```
//!
//! Decoding is strict: definite lengths only, minimal integers, no trailing
//! bytes. Errors carry the byte offset where parsing stopped. The one leniency
//! is varbind values: an unknown tag decodes to [`Value::Opaque`].

use std::fmt;
use std::str::FromStr;

const TAG_INTEGER: u8 = 0x02;
const TAG_OCTET_STRING: u8 = 0x04;
const TAG_NULL: u8 = 0x05;
const TAG_OID: u8 = 0x06;
const TAG_SEQUENCE: u8 = 0x30;
const TAG_COUNTER32: u8 = 0x41;
const TAG_GAUGE32: u8 = 0x42;
const TAG_TIMETICKS: u8 = 0x43;
const TAG_NO_SUCH_OBJECT: u8 = 0x80;
const TAG_NO_SUCH_INSTANCE: u8 = 0x81;

/// SNMP v2c `version` field value.
pub const VERSION_2C: i64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Oid(Vec<u32>);

impl Oid {
    pub fn new(arcs: Vec<u32>) -> Result<Self, OidError> {
        if arcs.len() < 2 {
            return Err(OidError::TooShort);
        }
        if arcs[0] > 2 || (arcs[0] < 2 && arcs[1] > 39) {
            return Err(OidError::BadRoot(arcs[0], arcs[1]));
        }
        if arcs[0] == 2 && arcs[1] > u32::MAX - 80 {
            return Err(OidError::ArcOverflow);
        }
        Ok(Self(arcs))
    }

    pub fn arcs(&self) -> &[u32] {
        &self.0
    }

    /// This OID with one more arc appended.
    pub fn child(&self, arc: u32) -> Self {
        let mut arcs = self.0.clone();
        arcs.push(arc);
        Self(arcs)
    }
}

impl fmt::Display for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for Oid {
    type Err = OidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let arcs = s
            .trim_start_matches('.')
            .split('.')
            .map(|part| {
                let n: u64 = part.parse().map_err(|_| OidError::Syntax(s.to_string()))?;
                u32::try_from(n).map_err(|_| OidError::ArcOverflow)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(arcs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OidError {
    #[error("an OID needs at least two arcs")]
    TooShort,
    #[error("invalid leading arcs {0}.{1}")]
    BadRoot(u32, u32),
    #[error("OID arc exceeds 2^32-1")]
    ArcOverflow,
    #[error("malformed OID '{0}'")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Integer(i64),
    OctetString(Vec<u8>),
    Null,
    Oid(Oid),
    Counter32(u32),
    Gauge32(u32),
    TimeTicks(u32),
    NoSuchObject,
    NoSuchInstance,
    /// Any other tag, kept verbatim.
    Opaque { tag: u8, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBind {
    pub oid: Oid,
    pub value: Value,
}

impl VarBind {
    pub fn new(oid: Oid, value: Value) -> Self {
        Self { oid, value }
    }

    /// Request form: the value is NULL.
    pub fn null(oid: Oid) -> Self {
        Self { oid, value: Value::Null }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PduKind {
    GetRequest,
    GetNextRequest,
    Response,
}

impl PduKind {
    fn tag(self) -> u8 {
        match self {
            Self::GetRequest => 0xA0,
            Self::GetNextRequest => 0xA1,
            Self::Response => 0xA2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0xA0 => Some(Self::GetRequest),
            0xA1 => Some(Self::GetNextRequest),
            0xA2 => Some(Self::Response),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdu {
    pub kind: PduKind,
    pub request_id: i32,
    pub error_status: i32,
    pub error_index: i32,
    pub varbinds: Vec<VarBind>,
}

impl Pdu {
    pub fn get(request_id: i32, oids: impl IntoIterator<Item = Oid>) -> Self {
        Self {
            kind: PduKind::GetRequest,
            request_id,
            error_status: 0,
            error_index: 0,
            varbinds: oids.into_iter().map(VarBind::null).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub version: i64,
    pub community: Vec<u8>,
    pub pdu: Pdu,
}

impl Message {
    pub fn v2c(community: impl Into<Vec<u8>>, pdu: Pdu) -> Self {
        Self { version: VERSION_2C, community: community.into(), pdu }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeErrorKind {
    #[error("truncated input")]
    Truncated,
    #[error("trailing bytes")]
    TrailingBytes,
    #[error("indefinite length")]
    IndefiniteLength,
    #[error("length field too large")]
    LengthOverflow,
    #[error("expected tag 0x{expected:02x}, found 0x{found:02x}")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("unsupported PDU tag 0x{0:02x}")]
    UnsupportedPdu(u8),
    #[error("multi-byte tag 0x{0:02x}")]
    UnsupportedTag(u8),
    #[error("non-minimal integer encoding")]
    NonMinimalInteger,
    #[error("integer out of range")]
    IntegerOverflow,
    #[error("malformed object identifier")]
    InvalidOid,
    #[error("NULL with content")]
    InvalidNull,
}

// ---------------------------------------------------------------- encoding

fn push_length(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
        return;
    }
    let bytes = (len as u64).to_be_bytes();
    let skip = bytes.iter().take_while(|&&b| b == 0).count();
    out.push(0x80 | (8 - skip) as u8);
    out.extend_from_slice(&bytes[skip..]);
}

fn push_tlv(out: &mut Vec<u8>, tag: u8, content: &[u8]) {
    out.push(tag);
    push_length(out, content.len());
    out.extend_from_slice(content);
}

/// Minimal two's-complement big-endian bytes.
fn signed_bytes(v: i64) -> Vec<u8> {
    let bytes = v.to_be_bytes();
    let mut start = 0;
    while start < 7 {
        let (b, next) = (bytes[start], bytes[start + 1]);
        let redundant = (b == 0x00 && next & 0x80 == 0) || (b == 0xFF && next & 0x80 != 0);
        if !redundant {
            break;
        }
        start += 1;
    }
    bytes[start..].to_vec()
}

fn push_oid(out: &mut Vec<u8>, oid: &Oid) {
    let arcs = oid.arcs();
    let mut content = Vec::with_capacity(arcs.len() + 4);
    push_base128(&mut content, arcs[0] * 40 + arcs[1]);
    for &arc in &arcs[2..] {
        push_base128(&mut content, arc);
    }
    push_tlv(out, TAG_OID, &content);
}

fn push_base128(out: &mut Vec<u8>, mut v: u32) {
    let mut tmp = [0u8; 5];
    let mut i = tmp.len();
    loop {
        i -= 1;
        tmp[i] = (v & 0x7F) as u8;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    let n = tmp.len();
    for (j, b) in tmp[i..].iter().enumerate() {
        out.push(if i + j + 1 < n { b | 0x80 } else { *b });
    }
}

fn push_value(out: &mut Vec<u8>, value: &Value) {
    match value {
        Value::Integer(v) => push_tlv(out, TAG_INTEGER, &signed_bytes(*v)),
        Value::OctetString(b) => push_tlv(out, TAG_OCTET_STRING, b),
        Value::Null => push_tlv(out, TAG_NULL, &[]),
        Value::Oid(o) => push_oid(out, o),
        Value::Counter32(v) => push_tlv(out, TAG_COUNTER32, &signed_bytes(i64::from(*v))),
        Value::Gauge32(v) => push_tlv(out, TAG_GAUGE32, &signed_bytes(i64::from(*v))),
        Value::TimeTicks(v) => push_tlv(out, TAG_TIMETICKS, &signed_bytes(i64::from(*v))),
        Value::NoSuchObject => push_tlv(out, TAG_NO_SUCH_OBJECT, &[]),
        Value::NoSuchInstance => push_tlv(out, TAG_NO_SUCH_INSTANCE, &[]),
        Value::Opaque { tag, bytes } => push_tlv(out, *tag, bytes),
    }
}

pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut varbinds = Vec::new();
    for vb in &msg.pdu.varbinds {
        let mut inner = Vec::new();
        push_oid(&mut inner, &vb.oid);
        push_value(&mut inner, &vb.value);
        push_tlv(&mut varbinds, TAG_SEQUENCE, &inner);
    }
    let mut pdu = Vec::new();
    push_tlv(&mut pdu, TAG_INTEGER, &signed_bytes(i64::from(msg.pdu.request_id)));
    push_tlv(&mut pdu, TAG_INTEGER, &signed_bytes(i64::from(msg.pdu.error_status)));
    push_tlv(&mut pdu, TAG_INTEGER, &signed_bytes(i64::from(msg.pdu.error_index)));
    push_tlv(&mut pdu, TAG_SEQUENCE, &varbinds);

    let mut body = Vec::new();
    push_tlv(&mut body, TAG_INTEGER, &signed_bytes(msg.version));
    push_tlv(&mut body, TAG_OCTET_STRING, &msg.community);
    push_tlv(&mut body, msg.pdu.kind.tag(), &pdu);

    let mut out = Vec::with_capacity(body.len() + 4);
    push_tlv(&mut out, TAG_SEQUENCE, &body);
    out
}

// ---------------------------------------------------------------- decoding

/// A window of the input; `base` is the absolute offset of `buf[0]`.
struct Reader<'a> {
    buf: &'a [u8],
    base: usize,
    pos: usize,
}

struct Tlv<'a> {
    tag: u8,
    /// Absolute offset of the tag byte.
    at: usize,
    content: Reader<'a>,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, base: 0, pos: 0 }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError { offset: self.offset(), kind }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn byte(&mut self) -> Result<u8, DecodeError> {
        let b = *self.buf.get(self.pos).ok_or_else(|| self.err(DecodeErrorKind::Truncated))?;
        self.pos += 1;
        Ok(b)
    }

    fn tlv(&mut self) -> Result<Tlv<'a>, DecodeError> {
        let at = self.offset();
        let tag = self.byte()?;
        if tag & 0x1F == 0x1F {
            // multi-byte tags never occur in SNMP
            return Err(DecodeError { offset: at, kind: DecodeErrorKind::UnsupportedTag(tag) });
        }
        let len_at = self.offset();
        let first = self.byte()?;
        let len = if first < 0x80 {
            usize::from(first)
        } else if first == 0x80 {
            return Err(DecodeError { offset: len_at, kind: DecodeErrorKind::IndefiniteLength });
        } else {
            let n = usize::from(first & 0x7F);
            if n > 4 {
                return Err(DecodeError { offset: len_at, kind: DecodeErrorKind::LengthOverflow });
            }
            let mut len = 0usize;
            for _ in 0..n {
                len = (len << 8) | usize::from(self.byte()?);
            }
            len
        };
        if len > self.buf.len() - self.pos {
            return Err(DecodeError { offset: len_at, kind: DecodeErrorKind::Truncated });
        }
        let content = Reader { buf: &self.buf[self.pos..self.pos + len], base: self.offset(), pos: 0 };
        self.pos += len;
        Ok(Tlv { tag, at, content })
    }

    fn expect(&mut self, tag: u8) -> Result<Tlv<'a>, DecodeError> {
        let tlv = self.tlv()?;
        if tlv.tag != tag {
            return Err(DecodeError {
                offset: tlv.at,
                kind: DecodeErrorKind::UnexpectedTag { expected: tag, found: tlv.tag },
            });
        }
        Ok(tlv)
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(self.err(DecodeErrorKind::TrailingBytes))
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos.min(self.buf.len())..]
    }
}

fn decode_signed(r: &Reader<'_>) -> Result<i64, DecodeError> {
    let b = r.rest();
    if b.is_empty() {
        return Err(r.err(DecodeErrorKind::Truncated));
    }
    if b.len() > 1
        && ((b[0] == 0x00 && b[1] & 0x80 == 0) || (b[0] == 0xFF && b[1] & 0x80 != 0))
    {
        return Err(r.err(DecodeErrorKind::NonMinimalInteger));
    }
    if b.len() > 8 {
        return Err(r.err(DecodeErrorKind::IntegerOverflow));
    }
    let mut v: i64 = if b[0] & 0x80 != 0 { -1 } else { 0 };
    for &byte in b {
        v = (v << 8) | i64::from(byte);
    }
    Ok(v)
}

fn decode_i32(r: &Reader<'_>) -> Result<i32, DecodeError> {
    i32::try_from(decode_signed(r)?).map_err(|_| r.err(DecodeErrorKind::IntegerOverflow))
}

fn decode_u32(r: &Reader<'_>) -> Result<u32, DecodeError> {
    u32::try_from(decode_signed(r)?).map_err(|_| r.err(DecodeErrorKind::IntegerOverflow))
}

fn decode_oid(r: &Reader<'_>) -> Result<Oid, DecodeError> {
    let b = r.rest();
    if b.is_empty() {
        return Err(r.err(DecodeErrorKind::InvalidOid));
    }
    let mut arcs = Vec::new();
    let mut acc: u64 = 0;
    let mut started = false;
    for (i, &byte) in b.iter().enumerate() {
        let at = DecodeError { offset: r.offset() + i, kind: DecodeErrorKind::InvalidOid };
        if !started && byte == 0x80 {
            // leading 0x80 pads a sub-identifier
            return Err(at);
        }
        started = true;
        acc = (acc << 7) | u64::from(byte & 0x7F);
        if acc > u64::from(u32::MAX) {
            return Err(at);
        }
        if byte & 0x80 == 0 {
            if arcs.is_empty() {
                let v = acc as u32;
                let (first, second) = match v {
                    0..=39 => (0, v),
                    40..=79 => (1, v - 40),
                    _ => (2, v - 80),
                };
                arcs.push(first);
                arcs.push(second);
            } else {
                arcs.push(acc as u32);
            }
            acc = 0;
            started = false;
        }
    }
    if started {
        return Err(DecodeError { offset: r.offset() + b.len(), kind: DecodeErrorKind::InvalidOid });
    }
    Oid::new(arcs).map_err(|_| r.err(DecodeErrorKind::InvalidOid))
}

fn decode_empty(r: &Reader<'_>) -> Result<(), DecodeError> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(r.err(DecodeErrorKind::InvalidNull))
    }
}

fn decode_value(tlv: Tlv<'_>) -> Result<Value, DecodeError> {
    let r = &tlv.content;
    Ok(match tlv.tag {
        TAG_INTEGER => Value::Integer(decode_signed(r)?),
        TAG_OCTET_STRING => Value::OctetString(r.rest().to_vec()),
        TAG_NULL => {
            decode_empty(r)?;
            Value::Null
        }
        TAG_OID => Value::Oid(decode_oid(r)?),
        TAG_COUNTER32 => Value::Counter32(decode_u32(r)?),
        TAG_GAUGE32 => Value::Gauge32(decode_u32(r)?),
        TAG_TIMETICKS => Value::TimeTicks(decode_u32(r)?),
        TAG_NO_SUCH_OBJECT => {
            decode_empty(r)?;
            Value::NoSuchObject
        }
        TAG_NO_SUCH_INSTANCE => {
            decode_empty(r)?;
            Value::NoSuchInstance
        }
        tag => Value::Opaque { tag, bytes: r.rest().to_vec() },
    })
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut top = Reader::new(bytes);
    let mut msg = top.expect(TAG_SEQUENCE)?.content;
    top.finish()?;

    let version = decode_signed(&msg.expect(TAG_INTEGER)?.content)?;
    let community = msg.expect(TAG_OCTET_STRING)?.content.rest().to_vec();
    let pdu_tlv = msg.tlv()?;
    let kind = PduKind::from_tag(pdu_tlv.tag).ok_or(DecodeError {
        offset: pdu_tlv.at,
        kind: DecodeErrorKind::UnsupportedPdu(pdu_tlv.tag),
    })?;
    msg.finish()?;

    let mut pdu = pdu_tlv.content;
    let request_id = decode_i32(&pdu.expect(TAG_INTEGER)?.content)?;
    let error_status = decode_i32(&pdu.expect(TAG_INTEGER)?.content)?;
    let error_index = decode_i32(&pdu.expect(TAG_INTEGER)?.content)?;
    let mut list = pdu.expect(TAG_SEQUENCE)?.content;
    pdu.finish()?;

    let mut varbinds = Vec::new();
    while !list.is_empty() {
        let mut vb = list.expect(TAG_SEQUENCE)?.content;
        let oid = decode_oid(&vb.expect(TAG_OID)?.content)?;
        let value = decode_value(vb.tlv()?)?;
        vb.finish()?;
        varbinds.push(VarBind { oid, value });
    }

    Ok(Message {
        version,
        community,
        pdu: Pdu { kind, request_id, error_status, error_index, varbinds },
    })
}
