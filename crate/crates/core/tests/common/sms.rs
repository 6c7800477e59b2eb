//! Exhaustive loss-pattern walks over the SMS relay path.
//!
//! Each transmission crosses four legs: sender to server, server to
//! receiver, receiver ACK to server, server ACK to sender. Every pattern of
//! per-leg losses over four transmissions is replayed against the real
//! server, sender and receiver state machines.

use std::collections::BTreeMap;

use meshsim::services::{
    AuthMode, ClientId, Dedupe, Message, MessageKind, MsgId, Phase, ReceiverLog, ReliableSender, SenderAction, Server,
    ServiceParams,
};
use meshsim::topology::NodeId;

const SRC: ClientId = ClientId(1);
const DST: ClientId = ClientId(2);

fn sms() -> Message {
    Message {
        id: MsgId { sender: SRC, seq: 1 },
        kind: MessageKind::Sms,
        src: SRC,
        final_dst: DST,
        relay: NodeId(0),
        payload_bits: 1280.0,
        attempt: 0,
    }
}

fn server_with(dst_online: bool) -> Server {
    let mut s = Server::new(NodeId(0), ServiceParams::default(), BTreeMap::new());
    s.register(SRC, NodeId(1), None, AuthMode::Open, 0.0).unwrap();
    s.register(DST, NodeId(2), None, AuthMode::Open, 0.0).unwrap();
    s.presence_update(SRC, NodeId(1), (0.0, 0.0), 16.0).unwrap();
    if dst_online {
        s.presence_update(DST, NodeId(2), (0.0, 0.0), 16.0).unwrap();
    } else {
        // Silent past the presence timeout.
        assert_eq!(s.expire_stale(16.0), vec![DST]);
    }
    s
}

/// Decodes pattern `code` into `n` transmissions of `bits` legs each.
fn legs(code: u32, n: usize, bits: usize) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| (0..bits).map(|b| code >> (i * bits + b) & 1 == 1).collect())
        .collect()
}

/// Drives `sender` until it settles, consuming one leg pattern per copy.
/// `deliver` sees each copy's legs and reports whether an ACK made it back
/// (`Some(true)`), a queued notice made it back (`Some(false)`), or nothing.
fn drive(sender: &mut ReliableSender, pattern: &[Vec<bool>], mut deliver: impl FnMut(&[bool]) -> Option<bool>) -> f64 {
    let mut now = 20.0;
    let mut action = if sender.state().phase == Phase::Pending {
        sender.start(now)
    } else {
        sender.resume(now)
    };
    let mut copies = pattern.iter();
    while let SenderAction::Transmit(_) = action {
        let legs = copies.next().expect("at most four copies");
        match deliver(legs) {
            Some(true) => {
                sender.on_ack(now);
            }
            Some(false) => sender.on_queued(now),
            None => {}
        }
        if sender.state().phase != Phase::AwaitingAck {
            break;
        }
        now = sender.state().timer_expiry;
        action = sender.on_timeout(now);
    }
    now
}

pub fn online_walk() {
    let mut outcomes = BTreeMap::new();
    for code in 0..1u32 << 16 {
        let pattern = legs(code, 4, 4);
        let server = server_with(true);
        let mut sender = ReliableSender::new(sms(), server.params());
        let mut rx = ReceiverLog::default();
        let mut app = 0;
        let mut reached = false;
        drive(&mut sender, &pattern, |l| {
            if !l[0] {
                return None;
            }
            assert!(server.is_online(DST, 20.0));
            if !l[1] {
                return None;
            }
            reached = true;
            if rx.dedupe(sms().id) == Dedupe::Fresh {
                app += 1;
            }
            // Duplicates are still acknowledged.
            (l[2] && l[3]).then_some(true)
        });
        assert!(sender.transmissions() <= 4, "{code:#x}");
        assert!(sender.state().retries_used <= 3);
        assert_eq!(app, u32::from(reached), "{code:#x}");
        assert!(sender.state().phase.is_terminal());
        if sender.state().phase == Phase::Delivered {
            assert_eq!(app, 1);
        } else {
            assert_eq!(sender.transmissions(), 4);
        }
        assert_eq!(server.queued_for(DST), 0);
        *outcomes.entry((sender.state().phase == Phase::Delivered, app)).or_insert(0u32) += 1;
    }
    // All three outcomes occur: delivered, reached but every ACK lost, never reached.
    assert_eq!(outcomes.len(), 3);
}

pub fn all_acks_lost() {
    let server = server_with(true);
    let mut sender = ReliableSender::new(sms(), server.params());
    let mut rx = ReceiverLog::default();
    let pattern = vec![vec![true, true, false, true]; 4];
    let end = drive(&mut sender, &pattern, |_| {
        rx.dedupe(sms().id);
        None
    });
    assert_eq!(sender.state().phase, Phase::Failed);
    assert_eq!(sender.transmissions(), 4);
    assert_eq!(rx.delivered(), 1);
    // 2 s timers after the copies at 20, 22, 24 and 26.
    assert_eq!(end, 28.0);
}

pub fn offline_walk() {
    for up in 0..1u32 << 8 {
        let first = legs(up, 4, 2);
        for down in 0..1u32 << 8 {
            let second = legs(down, 4, 2);
            let mut server = server_with(false);
            let mut sender = ReliableSender::new(sms(), server.params());
            let mut reached_server = false;
            drive(&mut sender, &first, |l| {
                if !l[0] {
                    return None;
                }
                reached_server = true;
                server.enqueue_offline(sms());
                l[1].then_some(false)
            });
            assert!(sender.transmissions() <= 4);
            assert_eq!(server.queued_for(DST), usize::from(reached_server));
            match sender.state().phase {
                Phase::QueuedOffline => assert!(reached_server),
                Phase::Failed => assert_eq!(sender.transmissions(), 4),
                p => panic!("unexpected phase {p:?}"),
            }
            // A queued sender does not retransmit.
            if sender.state().phase == Phase::QueuedOffline {
                assert_eq!(sender.on_timeout(1e9), SenderAction::Nothing);
            }

            // The receiver comes back; the server flushes through a proxy sender.
            let flushed = server.presence_update(DST, NodeId(2), (0.0, 0.0), 30.0).unwrap();
            assert_eq!(flushed.len(), usize::from(reached_server));
            assert_eq!(server.queued_for(DST), 0);
            let mut rx = ReceiverLog::default();
            let mut app = 0;
            for msg in flushed {
                let mut proxy = ReliableSender::new(msg.clone(), server.params());
                let mut reached = false;
                drive(&mut proxy, &second, |l| {
                    if !l[0] {
                        return None;
                    }
                    reached = true;
                    if rx.dedupe(msg.id) == Dedupe::Fresh {
                        app += 1;
                    }
                    l[1].then_some(true)
                });
                assert!(proxy.transmissions() <= 4);
                assert_eq!(app, u32::from(reached));
                match proxy.state().phase {
                    Phase::Delivered => {
                        if sender.state().phase == Phase::QueuedOffline {
                            assert!(sender.on_ack(40.0));
                            assert_eq!(sender.state().phase, Phase::Delivered);
                        }
                    }
                    Phase::Failed => {
                        // Parked again for the next presence update.
                        assert!(server.enqueue_offline(msg.clone()));
                        assert_eq!(server.queued_for(DST), 1);
                    }
                    p => panic!("unexpected proxy phase {p:?}"),
                }
            }
            assert!(app <= 1);
        }
    }
}

pub fn duplicate_arrival() {
    let mut server = server_with(false);
    assert!(server.enqueue_offline(sms()));
    assert!(!server.enqueue_offline(sms()));
    assert_eq!(server.queued_for(DST), 1);
}
