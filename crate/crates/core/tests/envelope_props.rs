//! Property checks for the wire codec.

use fedpob_core::{decode_envelope, encode_envelope, MsgType, SyncEnvelope};
use proptest::prelude::*;

fn arb_msg_type() -> impl Strategy<Value = MsgType> {
    prop_oneof![
        Just(MsgType::Hello),
        Just(MsgType::SyncRequest),
        Just(MsgType::DeltaUpload),
        Just(MsgType::SyncBroadcast),
        Just(MsgType::PrefUpload),
        Just(MsgType::ModelBroadcast),
        Just(MsgType::Bye),
    ]
}

fn arb_envelope() -> impl Strategy<Value = SyncEnvelope> {
    (arb_msg_type(), 0u32..64, any::<u64>(), 1u32..6).prop_flat_map(
        |(msg_type, agent, round, d)| {
            let reals = msg_type.payload_reals(d as usize);
            prop::collection::vec(-1e12f64..1e12, reals).prop_map(move |payload| SyncEnvelope {
                msg_type,
                agent_id: agent,
                round,
                d,
                payload,
            })
        },
    )
}

proptest! {
    #[test]
    fn encode_decode_is_identity(env in arb_envelope()) {
        let bytes = encode_envelope(&env).unwrap();
        let back = decode_envelope(&bytes).unwrap();
        prop_assert_eq!(back.msg_type, env.msg_type);
        prop_assert_eq!(back.agent_id, env.agent_id);
        prop_assert_eq!(back.round, env.round);
        prop_assert_eq!(back.d, env.d);
        prop_assert_eq!(back.payload.len(), env.payload.len());
        for (a, b) in back.payload.iter().zip(&env.payload) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn any_truncation_is_rejected(env in arb_envelope(), cut in 0usize..64) {
        let bytes = encode_envelope(&env).unwrap();
        if cut < bytes.len() {
            prop_assert!(decode_envelope(&bytes[..cut]).is_err());
        }
    }
}
