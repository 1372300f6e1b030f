use std::collections::BTreeMap;

use proptest::prelude::*;

use sdiot_core::abac::{evaluate, parse_tree, AccessTree, AttrValue, Effect, Op, Predicate};
use sdiot_core::privacy::AggregateMode;
use sdiot_core::scenarios::{parse_scenario, AttackKind, AttackSpec, PolicySpec, PolicyTarget, ScenarioSpec};
use sdiot_core::trust::{record_encounter, weighted_trust, TrustState};
use sdiot_core::{CurveProfile, Module, ModuleSet, NodeId};

fn modules() -> impl Strategy<Value = ModuleSet> {
    proptest::sample::subsequence(Module::ALL.to_vec(), 0..=6).prop_map(|mods| {
        let mut set = ModuleSet::of(&mods);
        for m in mods {
            for r in m.requires() {
                set.insert(*r);
            }
        }
        set
    })
}

fn tree() -> impl Strategy<Value = AccessTree> {
    let leaf = (0..3usize, 0..4i64, any::<bool>()).prop_map(|(n, v, text)| {
        let name = ["role", "zone", "level"][n];
        let value = if text { AttrValue::Str(format!("v{v}")) } else { AttrValue::Int(v) };
        AccessTree::leaf(Predicate::new(name, Op::Eq, value))
    });
    leaf.prop_recursive(3, 16, 3, |inner| {
        (proptest::collection::vec(inner, 1..=3), 0..3usize).prop_map(|(children, g)| match g {
            0 => AccessTree::and(children),
            1 => AccessTree::or(children),
            _ => AccessTree::threshold(children.len().div_ceil(2), children),
        })
    })
}

prop_compose! {
    fn attack(devices: Vec<NodeId>, duration: u64)
        (kind in proptest::sample::select(AttackKind::ALL.to_vec()),
         picks in proptest::sample::subsequence(devices, 3),
         start in 0..duration / 2,
         len in 1..duration / 2,
         rate in 1u32..10,
         coop in 0.0f64..=1.0) -> AttackSpec {
        let attackers = if kind == AttackKind::Ddos { picks[..2].to_vec() } else { vec![picks[0]] };
        let victim = kind.needs_victim().then_some(picks[2]);
        let mut a = AttackSpec::new(kind, attackers[0], victim, start, start + len);
        a.attackers = attackers;
        a.rate = rate;
        a.cooperation = coop;
        a
    }
}

fn spec() -> impl Strategy<Value = ScenarioSpec> {
    (1u32..=3, 3u32..=5, 200u64..5000).prop_flat_map(|(clusters, per, duration)| {
        let devices: Vec<NodeId> = (clusters + 1..=clusters + clusters * per).map(NodeId).collect();
        (
            (any::<u64>(), modules(), 0.0f64..0.5, "[a-z][a-z0-9_]{0,12}"),
            (2u64..50, 1u64..5000, 0u64..100, 0.0f64..=1.0, 0..3usize, 2usize..6),
            (0.01f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0u64..10),
            proptest::collection::vec(attack(devices.clone(), duration), 0..4),
            proptest::sample::subsequence(devices.clone(), 0..3),
            (proptest::option::of(tree()), proptest::collection::vec((tree(), proptest::sample::select(devices), any::<bool>()), 0..3)),
            0..3usize,
        )
            .prop_map(move |(top, traffic, trust, attacks, operators, policies, curve)| {
                let mut s = ScenarioSpec::default().with_seed(top.0).with_modules(top.1);
                s.name = top.3;
                s.duration = duration;
                s.topology.clusters = clusters;
                s.topology.devices_per_cluster = per;
                s.topology.link_loss_rate = top.2;
                s.traffic.reading_period = traffic.0;
                s.traffic.max_reading = traffic.1;
                s.traffic.service_period = traffic.2;
                s.traffic.honest_cooperation = traffic.3;
                s.traffic.aggregate = [AggregateMode::Sum, AggregateMode::Mean, AggregateMode::Count][traffic.4];
                s.traffic.aggregators = traffic.5;
                s.trust.alpha = trust.0;
                s.trust.initial = trust.1;
                s.trust.threshold = trust.2;
                s.trust.min_history = trust.3;
                s.curve = [CurveProfile::Toy, CurveProfile::P192, CurveProfile::P256][curve];
                s.attacks = attacks;
                s.operators = operators;
                let (template, node_policies) = policies;
                if let Some(tree) = template {
                    s.policies.push(PolicySpec { applies_to: PolicyTarget::Devices, effect: Effect::Permit, tree });
                }
                for (tree, node, permit) in node_policies {
                    let effect = if permit { Effect::Permit } else { Effect::Deny };
                    s.policies.push(PolicySpec { applies_to: PolicyTarget::Node(node), effect, tree });
                }
                s
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scenario_text_roundtrips(s in spec()) {
        prop_assert!(s.validate().is_ok(), "{:?}", s.validate());
        let text = s.render();
        let back = parse_scenario(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.render(), text);
    }

    #[test]
    fn access_tree_text_roundtrips(t in tree(), role in 0..4i64, zone in 0..4i64) {
        let back = parse_tree(&t.to_string()).unwrap();
        prop_assert_eq!(&back, &t);
        let attrs = BTreeMap::from([
            ("role".to_string(), AttrValue::Int(role)),
            ("zone".to_string(), AttrValue::Str(format!("v{zone}"))),
        ]);
        prop_assert_eq!(evaluate(&back, &attrs), evaluate(&t, &attrs));
    }

    #[test]
    fn reputation_stays_in_unit_interval(
        r0 in 0.0f64..=1.0,
        alpha in 0.0f64..=1.0,
        outcomes in proptest::collection::vec(any::<bool>(), 0..300),
    ) {
        let mut s = TrustState::fresh(NodeId(3), NodeId(4), r0);
        for e in outcomes {
            s = record_encounter(s, e, alpha);
            prop_assert!((0.0..=1.0).contains(&s.reputation));
        }
    }

    #[test]
    fn weighted_trust_ignores_rater_order(
        entries in proptest::collection::vec((0.01f64..10.0, 0.0f64..=1.0), 1..12),
        seed in any::<u64>(),
    ) {
        let weights: Vec<(NodeId, f64)> = entries.iter().enumerate().map(|(i, (w, _))| (NodeId(i as u32), *w)).collect();
        let trusts: BTreeMap<NodeId, f64> = entries.iter().enumerate().map(|(i, (_, t))| (NodeId(i as u32), *t)).collect();
        let mut shuffled = weights.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize ^ i.wrapping_mul(2654435761)) % (i + 1));
        }
        let a = weighted_trust(&weights, &trusts).unwrap();
        let b = weighted_trust(&shuffled, &trusts).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }
}
