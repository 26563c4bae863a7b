use nss_snmp::{decode_message, encode_message, Message, Oid, Pdu, PduKind, Value, VarBind};
use proptest::prelude::*;

fn oid() -> impl Strategy<Value = Oid> {
    (0u32..=2, prop::collection::vec(any::<u32>(), 0..=14), any::<u32>()).prop_map(|(first, rest, second)| {
        let second = if first < 2 { second % 40 } else { second % (u32::MAX - 80) };
        let mut arcs = vec![first, second];
        arcs.extend(rest);
        Oid::new(arcs).unwrap()
    })
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Integer),
        prop::collection::vec(any::<u8>(), 0..300).prop_map(Value::OctetString),
        Just(Value::Null),
        oid().prop_map(Value::Oid),
        any::<u32>().prop_map(Value::Counter32),
        any::<u32>().prop_map(Value::Gauge32),
        any::<u32>().prop_map(Value::TimeTicks),
        Just(Value::NoSuchObject),
        Just(Value::NoSuchInstance),
        (prop::sample::select(vec![0x40u8, 0x44, 0x46, 0x82, 0x47]), prop::collection::vec(any::<u8>(), 0..20))
            .prop_map(|(tag, bytes)| Value::Opaque { tag, bytes }),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    (
        0i64..=1,
        prop::collection::vec(any::<u8>(), 0..40),
        prop::sample::select(vec![PduKind::GetRequest, PduKind::GetNextRequest, PduKind::Response]),
        any::<i32>(),
        any::<i32>(),
        any::<i32>(),
        prop::collection::vec((oid(), value()).prop_map(|(o, v)| VarBind::new(o, v)), 0..=12),
    )
        .prop_map(|(version, community, kind, request_id, error_status, error_index, varbinds)| Message {
            version,
            community,
            pdu: Pdu { kind, request_id, error_status, error_index, varbinds },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip(m in message()) {
        let bytes = encode_message(&m);
        prop_assert_eq!(decode_message(&bytes).unwrap(), m);
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        if let Err(e) = decode_message(&bytes) {
            prop_assert!(e.offset <= bytes.len());
        }
    }

    #[test]
    fn mutated_messages_never_panic(m in message(), flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8), cut in any::<prop::sample::Index>()) {
        let mut bytes = encode_message(&m);
        for (i, b) in flips {
            let i = i.index(bytes.len());
            bytes[i] = b;
        }
        let end = cut.index(bytes.len() + 1);
        let bytes = &bytes[..end];
        if let Err(e) = decode_message(bytes) {
            prop_assert!(e.offset <= bytes.len());
        }
    }

    #[test]
    fn every_strict_prefix_fails(m in message()) {
        let bytes = encode_message(&m);
        for end in 0..bytes.len() {
            prop_assert!(decode_message(&bytes[..end]).is_err());
        }
    }
}
