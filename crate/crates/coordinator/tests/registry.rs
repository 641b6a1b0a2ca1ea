mod common;

use campus_bus::TerminalId;
use campus_coordinator::{CoordError, Delivery, Role, UserAction, WritePlan};
use campus_tag::v1::{self, CardRecord};
use campus_tag::{verify_card, Layout, TagImage, Window};
use campus_terminal::{AccessDecision, DenyReason, EventKind, GrantPath};
use common::*;

fn with_viewer() -> campus_coordinator::Coordinator {
    let mut c = coordinator();
    c.manage_user(
        ADMIN,
        UserAction::Add {
            username: "val".into(),
            role: Role::Viewer,
            password: "v-pass".into(),
        },
        T0,
    )
    .unwrap();
    c
}

#[test]
fn first_registration_and_reissue() {
    let mut c = coordinator();
    let mut net = network(&[vec![1]], 0.0, 0);
    install_all(&mut c, &net);
    let (uid, img) = c.register_card(ADMIN, &student(42, 0b10), 1, T0).unwrap();
    assert_eq!(uid.value() >> 56, 0xE0);
    assert!(verify_card(&key(), &img));
    let rec = CardRecord::read(&img).unwrap();
    assert_eq!(rec.issue_number, 1);
    assert_eq!(rec.personal_id, 42);
    assert_eq!(c.card(uid).unwrap().issue_number, 1);

    assert!(matches!(
        c.register_card(ADMIN, &student(42, 0), 1, T0),
        Err(CoordError::DuplicateActiveCard { personal_id: 42, .. })
    ));

    c.lock_card(ADMIN, uid, &mut net, T0 + 1).unwrap();
    let (uid2, img2) = c.register_card(ADMIN, &student(42, 0), 1, T0 + 2).unwrap();
    assert_ne!(uid, uid2);
    assert_eq!(CardRecord::read(&img2).unwrap().issue_number, 2);
    assert!(c.card(uid).unwrap().locked);
    assert!(!c.card(uid2).unwrap().locked);
}

#[test]
fn uids_are_unique_and_prefixed() {
    let mut c = coordinator();
    let mut seen = std::collections::BTreeSet::new();
    for pid in 0..500 {
        let (uid, _) = c.register_card(ADMIN, &student(pid, 0), 1, T0).unwrap();
        assert_eq!(uid.value() >> 56, 0xE0);
        assert!(seen.insert(uid));
    }
}

#[test]
fn viewer_cannot_register_or_lock() {
    let mut c = with_viewer();
    let mut net = network(&[vec![1]], 0.0, 0);
    assert!(matches!(
        c.register_card("val", &student(1, 0), 1, T0),
        Err(CoordError::AuthDenied { need: Role::Operator })
    ));
    let (uid, _) = c.register_card(ADMIN, &student(1, 0), 1, T0).unwrap();
    assert!(matches!(
        c.lock_card("val", uid, &mut net, T0),
        Err(CoordError::AuthDenied { .. })
    ));
    assert!(matches!(
        c.unlock_card("nobody", uid, &mut net, T0),
        Err(CoordError::AuthDenied { .. })
    ));
    assert!(!c.card(uid).unwrap().locked);
}

#[test]
fn assign_on_local_reader_writes_immediately() {
    let mut c = coordinator();
    let mut net = network(&[vec![1, 2]], 0.0, 0);
    install_all(&mut c, &net);
    let (uid, mut img) = c.register_card(ADMIN, &student(7, 0), 1, T0).unwrap();
    let mut sched = v1::NO_ACCESS;
    sched[0] = Window::new(32, 72);
    let plan = c
        .assign_rights(ADMIN, uid, 0b110, &sched, Some(&mut img), &mut net, T0)
        .unwrap();
    assert_eq!(plan, WritePlan::Immediate);
    assert!(verify_card(&key(), &img));
    assert_eq!(v1::gates(&img), 0b110);
    assert_eq!(v1::schedule(&img), sched);
    assert_eq!(c.card(uid).unwrap().gates, 0b110);
    // nothing was sent to the terminals
    for id in net.terminal_ids() {
        assert_eq!(net.terminal(id).unwrap().pending_writes(uid), 0);
    }
}

#[test]
fn forged_card_on_reader_is_refused() {
    let mut c = coordinator();
    let mut net = network(&[vec![1]], 0.0, 0);
    let (uid, _) = c.register_card(ADMIN, &student(7, 0), 1, T0).unwrap();
    let mut forged = TagImage::blank(uid);
    assert!(matches!(
        c.assign_rights(ADMIN, uid, 1, &v1::ALL_WEEK, Some(&mut forged), &mut net, T0),
        Err(CoordError::UnverifiedCard(_))
    ));
}

#[test]
fn absent_card_queues_one_write_per_gate() {
    let mut c = coordinator();
    let mut net = network(&[vec![1, 2, 3, 4, 5]], 0.0, 0);
    install_all(&mut c, &net);
    let (uid, mut card) = c.register_card(ADMIN, &student(9, 0), 1, T0).unwrap();
    let gates = (1 << 2) | (1 << 4) | (1 << 5);
    let plan = c
        .assign_rights(ADMIN, uid, gates, &v1::ALL_WEEK, None, &mut net, T0)
        .unwrap();
    let WritePlan::Queued(entries) = plan else {
        panic!("expected queued plan")
    };
    assert_eq!(entries.len(), 3);
    assert!(entries.iter().all(|e| e.delivery == Delivery::Delivered));
    let mut served: Vec<u8> = entries.iter().map(|e| e.gate).collect();
    served.sort();
    assert_eq!(served, vec![2, 4, 5]);

    // next sighting at a queued gate brings the card in line with the intent
    let at_gate4 = TerminalId::new(0, 4);
    net.set_time(T0 + 60);
    let read = net.terminal_mut(at_gate4).unwrap().on_tag_read(&card, T0 + 60);
    assert_eq!(read.decision, AccessDecision::Deny(DenyReason::GateNotAllowed));
    card = read.image;
    assert!(verify_card(&key(), &card));
    assert_eq!(v1::gates(&card), c.card(uid).unwrap().gates);
    let read = net.terminal_mut(at_gate4).unwrap().on_tag_read(&card, T0 + 61);
    assert_eq!(read.decision, AccessDecision::Grant(GrantPath::Rules));

    poll_until_done(&mut c, &mut net, at_gate4, T0 + 70);
    let entry = c.card(uid).unwrap();
    assert_eq!(entry.gates, gates);
    assert_eq!(entry.last_seen.as_ref().unwrap().gate, Some(4));
    assert!(c
        .events()
        .iter()
        .any(|e| e.kind == EventKind::CardWritten && e.uid == Some(uid)));
}

#[test]
fn unknown_card_is_rejected() {
    let mut c = coordinator();
    let mut net = network(&[vec![1]], 0.0, 0);
    let ghost = campus_tag::TagUid::from_serial(1);
    assert!(matches!(
        c.assign_rights(ADMIN, ghost, 1, &v1::ALL_WEEK, None, &mut net, T0),
        Err(CoordError::UnknownCard(_))
    ));
    assert!(matches!(
        c.lock_card(ADMIN, ghost, &mut net, T0),
        Err(CoordError::UnknownCard(_))
    ));
}

#[test]
fn lock_lands_on_next_read_at_any_gate() {
    let mut c = coordinator();
    let mut net = network(&[vec![1, 2, 3]], 0.0, 0);
    install_all(&mut c, &net);
    let (uid, card) = c.register_card(ADMIN, &student(5, 0b1110), 1, T0).unwrap();
    let ack = c.lock_card(ADMIN, uid, &mut net, T0 + 10).unwrap();
    assert!(ack.changed);
    assert_eq!(ack.delivered.len(), 3);

    let gate2 = TerminalId::new(0, 2);
    let read = net.terminal_mut(gate2).unwrap().on_tag_read(&card, T0 + 20);
    assert_eq!(read.decision, AccessDecision::Deny(DenyReason::Revoked));
    assert!(v1::is_locked(&read.image));
    assert!(verify_card(&key(), &read.image));
    // the lock now travels with the card
    let gate3 = TerminalId::new(0, 3);
    let again = net.terminal_mut(gate2).unwrap().on_tag_read(&read.image, T0 + 21);
    assert_eq!(again.decision, AccessDecision::Deny(DenyReason::Locked));

    poll_until_done(&mut c, &mut net, gate2, T0 + 30);
    let entry = c.card(uid).unwrap();
    assert!(entry.locked);
    let flags = &entry.fields[v1::FLAGS];
    assert_eq!(flags.value, "01");
    assert_eq!(flags.ts, T0 + 20);

    // unlocking clears the flag on the next sighting
    let ack = c.unlock_card(ADMIN, uid, &mut net, T0 + 40).unwrap();
    assert_eq!(ack.delivered.len(), 3);
    let read = net.terminal_mut(gate3).unwrap().on_tag_read(&again.image, T0 + 50);
    assert_eq!(read.decision, AccessDecision::Deny(DenyReason::Locked));
    assert!(!v1::is_locked(&read.image));
    let read = net.terminal_mut(gate3).unwrap().on_tag_read(&read.image, T0 + 51);
    assert_eq!(read.decision, AccessDecision::Grant(GrantPath::Rules));
}

#[test]
fn unlocking_a_never_locked_card_is_a_noop() {
    let mut c = coordinator();
    let mut net = network(&[vec![1, 2]], 0.0, 0);
    install_all(&mut c, &net);
    let (uid, _) = c.register_card(ADMIN, &student(5, 0b110), 1, T0).unwrap();
    let journal = c.history().len();
    let ack = c.unlock_card(ADMIN, uid, &mut net, T0).unwrap();
    assert!(!ack.changed);
    assert!(ack.delivered.is_empty() && ack.deferred.is_empty());
    assert_eq!(c.history().len(), journal);
    for id in net.terminal_ids() {
        assert_eq!(net.terminal(id).unwrap().pending_writes(uid), 0);
    }
}

#[test]
fn undelivered_commands_wait_in_the_outbox() {
    let mut c = coordinator();
    let mut net = network(&[vec![1, 2]], 0.0, 0);
    install_all(&mut c, &net);
    let (uid, card) = c.register_card(ADMIN, &student(5, 0b110), 1, T0).unwrap();
    net.bus_mut(0).unwrap().set_connected(false);
    let ack = c.lock_card(ADMIN, uid, &mut net, T0).unwrap();
    assert!(ack.delivered.is_empty());
    assert_eq!(ack.deferred.len(), 2);
    let gate1 = TerminalId::new(0, 1);
    assert_eq!(c.pending_commands(gate1), 1);

    net.bus_mut(0).unwrap().set_connected(true);
    c.poll_terminal(&mut net, gate1, T0 + 5).unwrap();
    assert_eq!(c.pending_commands(gate1), 0);
    assert!(net.terminal(gate1).unwrap().revocations().contains(uid));
    let read = net.terminal_mut(gate1).unwrap().on_tag_read(&card, T0 + 6);
    assert_eq!(read.decision, AccessDecision::Deny(DenyReason::Revoked));

    // an unlock before delivery cancels the pending revocation
    let gate2 = TerminalId::new(0, 2);
    net.bus_mut(0).unwrap().set_connected(false);
    c.unlock_card(ADMIN, uid, &mut net, T0 + 7).unwrap();
    assert_eq!(c.pending_commands(gate2), 1);
}

#[test]
fn custom_layout_cards_are_issued_and_honoured() {
    let mut c = coordinator();
    let text = "layout 7\n\
                layout_id 0 2 UINT-LE\n\
                flags 2 1 BITSET\n\
                expiry_date 3 2 DATE-D2000\n\
                holder_type 5 1 UINT-LE\n\
                gate_list 6 8 BITSET\n\
                schedule 14 14 QUARTER-HOUR-PAIR\n\
                personal_id 28 4 UINT-LE\n";
    let layout = Layout::parse(text).unwrap();
    c.add_layout(ADMIN, &layout, T0).unwrap();
    assert!(matches!(
        c.add_layout(ADMIN, &layout, T0),
        Err(CoordError::LayoutExists(7))
    ));
    let (uid, img) = c.register_card(ADMIN, &student(77, 1 << 3), 7, T0).unwrap();
    assert_eq!(u16::from_le_bytes([img.bytes()[0], img.bytes()[1]]), 7);
    let mut net = network(&[vec![3]], 0.0, 0);
    let t = net.terminal_mut(TerminalId::new(0, 1)).unwrap();
    t.add_layout(layout).unwrap();
    assert_eq!(
        t.on_tag_read(&img, T0).decision,
        AccessDecision::Grant(GrantPath::Rules)
    );
    assert_eq!(c.card(uid).unwrap().layout_id, 7);
}
