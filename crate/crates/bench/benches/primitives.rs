use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdiot_core::ecc::{derive_shared, sign, verify, Curve, CurveProfile, KeyPair};
use sdiot_core::privacy::{smc_split, SMC_MODULUS};
use sdiot_core::southbound::{Action, FlowMatch, FlowMod, FlowTable, MsgType, Packet};
use sdiot_core::NodeId;

fn ecc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for profile in [CurveProfile::P192, CurveProfile::P256] {
        let curve = Curve::named(profile);
        let a = KeyPair::generate(curve, &mut rng);
        let b = KeyPair::generate(curve, &mut rng);
        let sig = sign(curve, &a, b"reading");
        c.bench_with_input(BenchmarkId::new("ecdh", profile.name()), &(), |bn, _| {
            bn.iter(|| derive_shared(curve, a.secret(), black_box(b.public())).unwrap())
        });
        c.bench_with_input(BenchmarkId::new("sign", profile.name()), &(), |bn, _| {
            bn.iter(|| sign(curve, &a, black_box(b"reading")))
        });
        c.bench_with_input(BenchmarkId::new("verify", profile.name()), &(), |bn, _| {
            bn.iter(|| verify(curve, a.public(), black_box(b"reading"), &sig))
        });
    }
}

fn smc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in [3, 5] {
        c.bench_with_input(BenchmarkId::new("smc_split", m), &m, |bn, &m| {
            bn.iter(|| smc_split(NodeId(3), black_box(417), m, SMC_MODULUS, &mut rng).unwrap())
        });
    }
}

fn flow_match(c: &mut Criterion) {
    let mut table = FlowTable::with_capacity(256);
    for i in 0..64u32 {
        let m = FlowMatch::exact(NodeId(100 + i), NodeId(0), MsgType::Reading);
        table.apply(&FlowMod::add(1000 - i as u16, m, Action::Drop)).unwrap();
    }
    let hit = Packet::new(NodeId(140), NodeId(0), MsgType::Reading, vec![0; 16]);
    let miss = Packet::new(NodeId(7), NodeId(0), MsgType::Reading, vec![0; 16]);
    c.bench_function("flow_match/hit", |bn| bn.iter(|| table.match_packet(black_box(&hit))));
    c.bench_function("flow_match/miss", |bn| bn.iter(|| table.match_packet(black_box(&miss))));
}

criterion_group!(benches, ecc, smc, flow_match);
criterion_main!(benches);
