use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::authn::{AuthFrame, AuthOp, Principal};
use crate::ecc::{Curve, CurvePoint, CurveProfile, KeyPair};
use crate::privacy::{PlainReading, SMC_MODULUS};
use crate::scenarios::{auth_request, data_frame, DeviceKeys};
use crate::simnet::{Topology, TopologySpec};
use crate::southbound::{FlowMatch, FlowMod, MsgType, Packet};

struct Rig {
    gw: Controller,
    topo: Topology,
    curve: &'static Curve,
    gw_pub: CurvePoint,
    head_keys: BTreeMap<NodeId, [u8; 32]>,
    devices: BTreeMap<NodeId, DeviceKeys>,
    rng: ChaCha8Rng,
}

fn rig_with(mods: &[Module], clusters: u32, per_cluster: u32, roles: &[(u32, &str)]) -> Rig {
    let curve = Curve::named(CurveProfile::Toy);
    let topo = Topology::build(&TopologySpec {
        clusters,
        devices_per_cluster: per_cluster,
        link_loss_rate: 0.0,
        seed: 1,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let gw_keys = KeyPair::generate(curve, &mut rng);
    let gw_pub = *gw_keys.public();
    let mut devices = BTreeMap::new();
    let mut manifest = BTreeMap::new();
    for d in topo.devices() {
        let kp = KeyPair::generate(curve, &mut rng);
        manifest.insert(d, curve.encode_point(kp.public()));
        devices.insert(d, DeviceKeys::new(d, kp));
    }
    let head_keys: BTreeMap<NodeId, [u8; 32]> = topo.heads().map(|h| (h, [h.0 as u8; 32])).collect();
    let mut cfg = GatewayConfig::new(ModuleSet::of(mods), curve, 5);
    for (n, r) in roles {
        cfg.roles.insert(NodeId(*n), r.to_string());
    }
    let gw = Controller::new(cfg, topo.clone(), gw_keys, manifest, head_keys.clone()).unwrap();
    Rig {
        gw,
        topo,
        curve,
        gw_pub,
        head_keys,
        devices,
        rng,
    }
}

fn rig(mods: &[Module]) -> Rig {
    rig_with(mods, 2, 4, &[])
}

impl Rig {
    /// Delivers `frame` as if `device` had sent it through its head.
    fn from_device(&mut self, now: Tick, device: NodeId, frame: Vec<u8>) -> Vec<Outbound> {
        let head = self.topo.head_of(device).unwrap();
        let in_port = self.topo.port_of(device).unwrap();
        let bytes = encode(&Message::PacketIn { in_port, frame }).unwrap();
        self.gw.handle(now, head, &bytes)
    }

    fn data(&mut self, now: Tick, device: NodeId, src: NodeId, t: MsgType, payload: Vec<u8>) -> Vec<Outbound> {
        self.from_device(now, device, data_frame(src, NodeId::GATEWAY, t, payload))
    }

    /// Data packets the gateway sent towards `device`.
    fn to_device(&self, out: &[Outbound], device: NodeId) -> Vec<Packet> {
        let authn = self.gw.config().modules.contains(Module::AuthN);
        out.iter()
            .filter_map(|o| {
                let key = authn.then(|| self.head_keys[&o.head]);
                match open_control(key.as_ref(), &o.frame)? {
                    Message::PacketOut { out_port, frame } if self.topo.device_at(o.head, out_port) == Some(device) => {
                        match decode_prefix(&frame).ok()?.0 {
                            Message::Data(p) => Some(p),
                            _ => None,
                        }
                    }
                    _ => None,
                }
            })
            .collect()
    }

    fn join(&mut self, now: Tick, d: NodeId) -> JoinReply {
        let frame = self.devices[&d].join_frame(self.curve);
        let out = self.from_device(now, d, frame);
        let pkt = self
            .to_device(&out, d)
            .into_iter()
            .find(|p| p.msg_type == MsgType::Join)
            .expect("join reply");
        let reply = JoinReply::decode(&pkt.payload).unwrap();
        let mods = self.gw.config().modules.clone();
        if reply.status != JoinStatus::Rejected {
            let (curve, gw_pub) = (self.curve, self.gw_pub);
            self.devices.get_mut(&d).unwrap().accept(
                curve,
                &gw_pub,
                &reply,
                SMC_MODULUS,
                mods.contains(Module::KeyMgmt),
                mods.contains(Module::Privacy),
            )
            .unwrap();
        }
        reply
    }

    fn join_all(&mut self) {
        let ds: Vec<NodeId> = self.topo.devices().collect();
        for (i, d) in ds.into_iter().enumerate() {
            assert_eq!(self.join(1 + i as Tick, d).status, JoinStatus::Accepted);
        }
    }

    fn last_verdict(&self) -> Verdict {
        self.gw
            .observations()
            .iter()
            .rev()
            .find_map(|o| match o {
                Observation::Packet { verdict, .. } => Some(*verdict),
                _ => None,
            })
            .unwrap()
    }
}

#[test]
fn registration_fills_references_for_enabled_modules() {
    let mut r = rig(&Module::ALL);
    r.join_all();
    for rec in r.gw.registry().values() {
        assert_eq!(rec.status, DeviceStatus::Registered);
        assert!(rec.credential_ref.is_some());
        assert!(rec.policy_ref.is_some());
        assert_eq!(rec.epoch, 1);
    }
    r.gw.check_registry(20).unwrap();
    assert!(r.devices.values().all(|d| d.credential.is_some() && d.service_key.is_some()));

    let mut bare = rig(&[Module::KeyMgmt]);
    bare.join_all();
    let rec = &bare.gw.registry()[&NodeId(3)];
    assert!(rec.credential_ref.is_none() && rec.policy_ref.is_none());
}

#[test]
fn second_join_is_rejected() {
    let mut r = rig(&[Module::KeyMgmt, Module::Privacy]);
    assert_eq!(r.join(1, NodeId(3)).status, JoinStatus::Accepted);
    assert_eq!(r.join(2, NodeId(3)).status, JoinStatus::Rejected);
    assert!(r.gw.credentials().live(NodeId(3)).is_some());
    assert_eq!(r.gw.credentials().records().count(), 1);
}

#[test]
fn fifty_devices_get_distinct_credentials() {
    let mut r = rig_with(&[Module::KeyMgmt, Module::Privacy], 5, 10, &[]);
    r.join_all();
    let ids: BTreeSet<u64> = r.gw.registry().values().map(|rec| rec.credential_ref.unwrap()).collect();
    assert_eq!(ids.len(), 50);
    r.gw.check_registry(100).unwrap();
}

#[test]
fn flow_counters_add_up() {
    let mut r = rig(&[Module::KeyMgmt]);
    r.join_all();
    let d = NodeId(4);
    let mut bytes = 0;
    for round in 1..=3 {
        let payload = PlainReading { round, value: 10 }.encode();
        bytes += Packet::new(d, NodeId::GATEWAY, MsgType::Reading, payload.clone()).wire_len();
        r.data(20 * round as Tick, d, d, MsgType::Reading, payload);
    }
    let f = &r.gw.flows()[&FlowKey {
        src: d,
        dst: NodeId::GATEWAY,
        msg_type: MsgType::Reading,
    }];
    assert_eq!((f.packets, f.bytes), (3, bytes));
    assert_eq!(r.gw.audit().count("gateway", "flow"), 3 + 8);
}

#[test]
fn sink_sums_plain_readings() {
    let mut r = rig(&[Module::KeyMgmt]);
    r.join_all();
    for (d, v) in [(3, 5), (4, 7), (5, 9)] {
        r.data(21, NodeId(d), NodeId(d), MsgType::Reading, PlainReading { round: 1, value: v }.encode());
    }
    r.gw.on_period(60);
    let rec = r.gw.sink().iter().find(|s| s.round == 1).unwrap();
    assert_eq!(rec.result.as_ref().unwrap().sum, 21);
    assert_eq!(rec.contributors, vec![NodeId(3), NodeId(4), NodeId(5)]);
}

#[test]
fn private_readings_aggregate_without_plaintext_in_audit() {
    let mut r = rig(&[Module::KeyMgmt, Module::Privacy]);
    r.join_all();
    let curve = r.curve;
    for (d, v) in [(3, 5), (4, 7), (5, 9)] {
        let dev = r.devices.get_mut(&NodeId(d)).unwrap();
        let payload = dev.reading_payload(curve, 1, v, 3, 21, true, &mut r.rng).unwrap();
        r.data(21, NodeId(d), NodeId(d), MsgType::Reading, payload);
        assert_eq!(r.last_verdict(), Verdict::Accepted);
    }
    r.gw.on_period(60);
    let rec = r.gw.sink().iter().find(|s| s.round == 1).unwrap();
    assert_eq!(rec.result.as_ref().unwrap().sum, 21);
    for line in r.gw.audit().lines() {
        if !line.contains("comp=sink") {
            assert!(!line.contains("value="), "{line}");
        }
    }
}

#[test]
fn spoofed_source_is_caught_only_by_mitigation() {
    let mut r = rig(&[Module::KeyMgmt, Module::Mitigation]);
    r.join_all();
    r.data(30, NodeId(3), NodeId(4), MsgType::Reading, PlainReading { round: 1, value: 1 }.encode());
    assert_eq!(r.last_verdict(), Verdict::Spoofed);
    let mut r = rig(&[Module::KeyMgmt]);
    r.join_all();
    r.data(30, NodeId(3), NodeId(4), MsgType::Reading, PlainReading { round: 1, value: 1 }.encode());
    assert_eq!(r.last_verdict(), Verdict::Accepted);
}

#[test]
fn unregistered_source_is_refused() {
    let mut r = rig(&[Module::KeyMgmt]);
    r.data(30, NodeId(3), NodeId(3), MsgType::Reading, PlainReading { round: 1, value: 1 }.encode());
    assert_eq!(r.last_verdict(), Verdict::Unregistered);
}

#[test]
fn control_frames_are_sealed_per_head() {
    let k = [7u8; 32];
    let msg = Message::FlowMod(FlowMod::delete(FlowMatch::from_src(NodeId(3))));
    let sealed = seal_control(Some(&k), &msg);
    assert_eq!(open_control(Some(&k), &sealed), Some(msg.clone()));
    assert_eq!(open_control(Some(&[8u8; 32]), &sealed), None);
    let plain = seal_control(None, &msg);
    assert_eq!(open_control(Some(&k), &plain), None);
    assert_eq!(open_control(None, &plain), Some(msg));
    let mut flipped = sealed.clone();
    flipped[6] ^= 1;
    assert_eq!(open_control(Some(&k), &flipped), None);
}

#[test]
fn removing_a_module_removes_its_dependents() {
    let all = ModuleSet::all();
    let no_keys = all.without(Module::KeyMgmt);
    assert!(!no_keys.contains(Module::Privacy) && !no_keys.contains(Module::AuthN));
    assert_eq!(no_keys.len(), 3);
    assert_eq!(all.without(Module::Trust).len(), 5);
    assert!(no_keys.missing_dependency().is_none());
}

#[test]
fn challenge_response_grants_service() {
    let mut r = rig(&[Module::KeyMgmt, Module::AuthN]);
    r.join_all();
    let d = NodeId(6);
    let out = r.data(30, d, d, MsgType::Auth, auth_request(d, SERVICE_PEER).encode());
    let challenge = r.to_device(&out, d).into_iter().find(|p| p.msg_type == MsgType::Auth).unwrap();
    let challenge = AuthFrame::decode(&challenge.payload).unwrap();
    assert_eq!(challenge.op, AuthOp::Challenge);
    let dev = r.devices[&d].clone();
    let response = dev.answer(&challenge, &mut r.rng).unwrap();
    let out = r.data(31, d, d, MsgType::Auth, response.encode());
    let grant = r.to_device(&out, d).into_iter().find(|p| p.msg_type == MsgType::Auth).unwrap();
    assert_eq!(AuthFrame::decode(&grant.payload).unwrap().op, AuthOp::Grant);
    assert!(r.gw.observations().iter().any(|o| matches!(
        o,
        Observation::Granted { src, principal, service: SERVICE_PEER, .. } if *src == d && *principal == d
    )));
}

#[test]
fn wrong_proof_is_an_auth_failure() {
    let mut r = rig(&[Module::KeyMgmt, Module::AuthN]);
    r.join_all();
    let d = NodeId(6);
    let out = r.data(30, d, d, MsgType::Auth, auth_request(d, SERVICE_PEER).encode());
    let challenge = r.to_device(&out, d).into_iter().find(|p| p.msg_type == MsgType::Auth).unwrap();
    let challenge = AuthFrame::decode(&challenge.payload).unwrap();
    let forged = AuthFrame {
        op: AuthOp::Response,
        principal: Principal::Node(d),
        session: challenge.session,
        nonce: [1; 16],
        proof: [2; 32],
    };
    let out = r.data(31, d, d, MsgType::Auth, forged.encode());
    assert_eq!(r.last_verdict(), Verdict::AuthFailure);
    let reply = r.to_device(&out, d);
    assert!(reply.iter().all(|p| AuthFrame::decode(&p.payload).unwrap().op != AuthOp::Grant));
}

#[test]
fn control_needs_the_operator_role() {
    let mut r = rig_with(&[Module::KeyMgmt, Module::AccessControl], 2, 4, &[(3, "operator")]);
    r.join_all();
    let cmd = ControlFrame {
        command: 1,
        argument: 4,
    };
    r.data(30, NodeId(3), NodeId(3), MsgType::Control, cmd.encode());
    assert_eq!(r.last_verdict(), Verdict::Accepted);
    r.data(31, NodeId(5), NodeId(5), MsgType::Control, cmd.encode());
    assert_eq!(r.last_verdict(), Verdict::Denied);
    let executed: Vec<NodeId> = r
        .gw
        .observations()
        .iter()
        .filter_map(|o| match o {
            Observation::ControlExecuted { src, .. } => Some(*src),
            _ => None,
        })
        .collect();
    assert_eq!(executed, vec![NodeId(3)]);
}

#[test]
fn revocation_blocks_further_traffic() {
    let mut r = rig(&[Module::KeyMgmt]);
    r.join_all();
    let mut out = Vec::new();
    r.gw.revoke_nodes(40, &[NodeId(5)], "test", &mut out);
    assert_eq!(r.gw.status(NodeId(5)), Some(DeviceStatus::Revoked));
    assert!(out.iter().any(|o| matches!(decode_prefix(&o.frame).unwrap().0, Message::Revoke { .. })));
    r.data(41, NodeId(5), NodeId(5), MsgType::Reading, PlainReading { round: 2, value: 1 }.encode());
    assert_eq!(r.last_verdict(), Verdict::Revoked);
    assert!(r.gw.allow_rejoin(NodeId(5)));
    assert_eq!(r.join(50, NodeId(5)).status, JoinStatus::Accepted);
}
