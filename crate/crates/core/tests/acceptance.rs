//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use sdiot_core::abac::{evaluate, parse_tree, AccessTree, AttributeSet, Op, Predicate};
use sdiot_core::authn::{compute_proof, AuthError, Authenticator, FailReason, Principal, Role, SessionState};
use sdiot_core::ecc::{derive_shared, Curve, CurvePoint, KeyPair, U256};
use sdiot_core::privacy::{completion, smc_combine, smc_split, AggregateMode, AggregatorSet, SMC_MODULUS};
use sdiot_core::scenarios::{library_scenario, matrix_suite, run_scenario, AttackKind, AttackSpec, Outcome, LIBRARY};
use sdiot_core::trust::{record_encounter, trust_value, weighted_trust, TrustConfig, TrustState, TrustStore};
use sdiot_core::NodeId;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Affine arithmetic on the toy curve y² = x³ + 2x + 2 over F₁₇, kept
/// apart from the library implementation.
mod toy {
    pub const P: i64 = 17;
    pub const A: i64 = 2;
    pub const B: i64 = 2;
    pub const G: (i64, i64) = (5, 1);
    pub const N: u64 = 19;

    pub type Pt = Option<(i64, i64)>;

    fn m(v: i64) -> i64 {
        v.rem_euclid(P)
    }

    fn inv(v: i64) -> i64 {
        (1..P).find(|i| m(v * i) == 1).expect("nonzero element")
    }

    pub fn on_curve(pt: Pt) -> bool {
        pt.is_none_or(|(x, y)| m(y * y) == m(x * x * x + A * x + B))
    }

    pub fn add(p: Pt, q: Pt) -> Pt {
        let (Some((x1, y1)), Some((x2, y2))) = (p, q) else {
            return p.or(q);
        };
        if x1 == x2 && m(y1 + y2) == 0 {
            return None;
        }
        let l = if x1 == x2 {
            m((3 * x1 * x1 + A) * inv(m(2 * y1)))
        } else {
            m((y2 - y1) * inv(m(x2 - x1)))
        };
        let x3 = m(l * l - x1 - x2);
        Some((x3, m(l * (x1 - x3) - y1)))
    }

    /// `k·pt` by k-fold addition.
    pub fn repeated(k: u64, pt: Pt) -> Pt {
        (0..k).fold(None, |acc, _| add(acc, pt))
    }
}

fn to_toy(pt: &CurvePoint) -> toy::Pt {
    match pt {
        CurvePoint::Infinity => None,
        CurvePoint::Affine { x, y } => Some((x.low_u64() as i64, y.low_u64() as i64)),
    }
}

fn ecdh_correctness() -> Check {
    let t = Instant::now();
    let curve = Curve::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let a = KeyPair::generate(curve, &mut rng);
        let b = KeyPair::generate(curve, &mut rng);
        let ka = derive_shared(curve, a.secret(), b.public()).map_err(|e| e.to_string())?;
        let kb = derive_shared(curve, b.secret(), a.public()).map_err(|e| e.to_string())?;
        ensure(ka == kb, || format!("agreement {i}: keys differ"))?;
        let (sa, sb) = (a.secret().expose().low_u64(), b.secret().expose().low_u64());
        let shared = toy::repeated(sa * sb % toy::N, Some(toy::G));
        let (x, _) = shared.ok_or(format!("agreement {i}: oracle gives infinity"))?;
        let expected: [u8; 32] = Sha256::digest([x as u8]).into();
        ensure(ka.0 == expected, || format!("agreement {i}: key differs from oracle"))?;
        ensure(to_toy(a.public()) == toy::repeated(sa, Some(toy::G)), || format!("agreement {i}: public key"))?;
    }
    let el = t.elapsed();
    ensure(el < Duration::from_secs(5), || format!("took {el:?}"))?;
    Ok(format!("1000 agreements match the repeated-addition oracle in {el:.2?}"))
}

fn group_law() -> Check {
    let curve = Curve::toy();
    let g = curve.generator();
    let mut oracle: toy::Pt = None;
    for k in 0..=toy::N {
        let got = curve.scalar_mul(&U256::from_u64(k), &g).map_err(|e| e.to_string())?;
        ensure(to_toy(&got) == oracle, || format!("k={k}: {got:?} vs {oracle:?}"))?;
        ensure(curve.is_on_curve(&got) && toy::on_curve(oracle), || format!("k={k} off the curve"))?;
        oracle = toy::add(oracle, Some(toy::G));
    }
    Ok(format!("k·G equals enumeration for every k in [0, {}]", toy::N))
}

fn smc_soundness() -> Check {
    let q = SMC_MODULUS;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut completions = 0;
    for case in 0..1000 {
        let devices = rng.gen_range(1..=50);
        let m = rng.gen_range(2..=5);
        let values: Vec<u64> = (0..devices).map(|_| rng.gen_range(0..1_000_000)).collect();
        let mut agg = AggregatorSet::new(m, q);
        let mut subtotals = vec![0u128; m];
        let mut sets = Vec::new();
        for (i, v) in values.iter().enumerate() {
            let set = smc_split(NodeId(i as u32 + 3), *v, m, q, &mut rng).map_err(|e| e.to_string())?;
            for (j, s) in set.shares.iter().enumerate() {
                subtotals[j] = (subtotals[j] + *s as u128) % q as u128;
            }
            agg.accept(&set).map_err(|e| e.to_string())?;
            sets.push(set);
        }
        let truth = values.iter().map(|v| *v as u128).sum::<u128>() % q as u128;
        let sub: Vec<Option<u64>> = subtotals.iter().map(|s| Some(*s as u64)).collect();
        let combined = smc_combine(&sub, q, AggregateMode::Sum, devices as u64).map_err(|e| e.to_string())?;
        let via_set = agg.combine(AggregateMode::Sum).map_err(|e| e.to_string())?;
        ensure(combined.sum as u128 == truth && via_set.sum as u128 == truth, || {
            format!("case {case}: {} / {} vs {truth}", combined.sum, via_set.sum)
        })?;
        if case % 5 == 0 {
            let set = &sets[rng.gen_range(0..sets.len())];
            let drop = rng.gen_range(0..m);
            let known: Vec<u64> = set.shares.iter().enumerate().filter(|(j, _)| *j != drop).map(|(_, s)| *s).collect();
            for _ in 0..10 {
                let candidate = rng.gen_range(0..q);
                let c = completion(&known, candidate, q);
                let total = (known.iter().map(|s| *s as u128).sum::<u128>() + c as u128) % q as u128;
                ensure(c < q && total == candidate as u128, || format!("case {case}: no completion to {candidate}"))?;
                completions += 1;
            }
        }
    }
    ensure(completions >= 100, || format!("only {completions} completion checks"))?;
    Ok(format!("1000 vectors exact, {completions} (m-1)-subsets complete to arbitrary secrets"))
}

fn trust_formulas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = NodeId(3);
    let b = NodeId(4);
    for stream in 0..200 {
        let alpha: f64 = rng.gen_range(0.01..1.0);
        let r0: f64 = rng.gen();
        let outcomes: Vec<bool> = (0..50).map(|_| rng.gen_bool(0.6)).collect();
        let mut s = TrustState::fresh(a, b, r0);
        for e in &outcomes {
            s = record_encounter(s, *e, alpha);
        }
        // closed form of the moving average
        let n = outcomes.len() as i32;
        let mut expected = (1.0 - alpha).powi(n) * r0;
        for (i, e) in outcomes.iter().enumerate() {
            if *e {
                expected += alpha * (1.0 - alpha).powi(n - 1 - i as i32);
            }
        }
        ensure((trust_value(&s) - expected).abs() <= 1e-12, || {
            format!("stream {stream}: {} vs {expected}", trust_value(&s))
        })?;
    }
    for case in 0..1000 {
        let k = rng.gen_range(1..8);
        let weights: Vec<(NodeId, f64)> = (0..k).map(|i| (NodeId(i), rng.gen_range(0.01..5.0))).collect();
        let trusts: BTreeMap<NodeId, f64> = (0..k).map(|i| (NodeId(i), rng.gen())).collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let direct: f64 = weights.iter().map(|(n, w)| w * trusts[n]).sum::<f64>() / total;
        let got = weighted_trust(&weights, &trusts).map_err(|e| e.to_string())?;
        ensure((got - direct).abs() <= 1e-12, || format!("weights case {case}: {got} vs {direct}"))?;
    }
    let mut encounters = 0u64;
    for _ in 0..1000 {
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let mut s = TrustState::fresh(a, b, rng.gen());
        for _ in 0..1000 {
            s = record_encounter(s, rng.gen(), alpha);
            encounters += 1;
            ensure((0.0..=1.0).contains(&s.reputation), || format!("R = {} left [0, 1]", s.reputation))?;
        }
    }
    Ok(format!("moving average and weighting within 1e-12, R in [0, 1] over {encounters} encounters"))
}

fn separation_run(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = TrustStore::new(TrustConfig {
        alpha: 0.1,
        ..TrustConfig::default()
    });
    let (honest, bad, rater) = (NodeId(4), NodeId(5), NodeId(3));
    for t in 0..200 {
        store.record(rater, honest, rng.gen_bool(0.95), t);
        store.record(rater, bad, rng.gen_bool(0.20), t);
    }
    (
        store.neighborhood_trust(honest, &[rater]).expect("history").0,
        store.neighborhood_trust(bad, &[rater]).expect("history").0,
    )
}

fn trust_separation() -> Check {
    let (h, m) = separation_run(5);
    ensure(h > 0.7 && 0.7 > m, || format!("honest {h:.4}, malicious {m:.4}"))?;
    ensure(separation_run(5) == (h, m), || "rerun differs".into())?;
    Ok(format!("honest {h:.4} > 0.7 > malicious {m:.4}, rerun identical"))
}

/// Every tree of depth at most 3 over binary attributes a, b, c, built
/// from literals `x = 0`, `x = 1` and two-input and, or, th(1) and th(2)
/// gates, each paired with its truth table as an 8-bit mask.
fn all_trees() -> Vec<(AccessTree, u8)> {
    let names = ["a", "b", "c"];
    let mut leaves = Vec::new();
    for (i, n) in names.iter().enumerate() {
        let ones: u8 = (0..8).filter(|row| row >> i & 1 == 1).fold(0, |m, row| m | 1 << row);
        leaves.push((AccessTree::leaf(Predicate::new(n, Op::Eq, 1i64)), ones));
        leaves.push((AccessTree::leaf(Predicate::new(n, Op::Eq, 0i64)), !ones));
    }
    let grow = |below: &[(AccessTree, u8)]| {
        let mut out = leaves.clone();
        for (l, lm) in below {
            for (r, rm) in below {
                let pair = vec![l.clone(), r.clone()];
                out.push((AccessTree::and(pair.clone()), lm & rm));
                out.push((AccessTree::or(pair.clone()), lm | rm));
                out.push((AccessTree::threshold(1, pair.clone()), lm | rm));
                out.push((AccessTree::threshold(2, pair), lm & rm));
            }
        }
        out
    };
    let depth2 = grow(&leaves);
    grow(&depth2)
}

fn abac_equivalence() -> Check {
    let t = Instant::now();
    let trees = all_trees();
    let rows: Vec<AttributeSet> = (0..8)
        .map(|row| {
            ["a", "b", "c"]
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), ((row >> i) & 1).into()))
                .collect()
        })
        .collect();
    for (tree, mask) in &trees {
        ensure(tree.depth() <= 3, || format!("{tree} too deep"))?;
        for (row, attrs) in rows.iter().enumerate() {
            let want = mask >> row & 1 == 1;
            ensure(evaluate(tree, attrs) == want, || format!("{tree} on row {row}: expected {want}"))?;
        }
        let back = parse_tree(&tree.to_string()).map_err(|e| format!("{tree}: {e}"))?;
        ensure(&back == tree, || format!("{tree} does not reparse"))?;
    }
    let el = t.elapsed();
    ensure(el < Duration::from_secs(10), || format!("took {el:?}"))?;
    Ok(format!("{} trees agree with their truth tables in {el:.2?}", trees.len()))
}

fn auth_negative() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dev = Principal::Node(NodeId(3));
    let svc = Principal::Service(1);
    let (dev_key, svc_key): ([u8; 32], [u8; 32]) = (rng.gen(), rng.gen());
    let mut auth = Authenticator::new(8, 50, 1000);
    auth.register_key(dev, dev_key, 0);
    auth.register_key(svc, svc_key, 0);
    let mut mutual = 0;
    let half = |auth: &mut Authenticator, rng: &mut ChaCha8Rng| -> Result<(u64, [u8; 16]), String> {
        let s = auth.begin(dev, svc, 1).map_err(|e| e.to_string())?;
        let nr: [u8; 16] = rng.gen();
        let proof = compute_proof(&svc_key, &s.nonce_i, svc);
        let st = auth.verify(s.id, Role::Responder, &proof, Some(nr), 1).map_err(|e| e.to_string())?;
        ensure(st == SessionState::HalfAuthenticated, || format!("responder step gave {st:?}"))?;
        Ok((s.id, nr))
    };
    for _ in 0..1000 {
        let (id, nr) = half(&mut auth, &mut rng)?;
        let wrong: [u8; 32] = rng.gen();
        if auth.verify(id, Role::Initiator, &compute_proof(&wrong, &nr, dev), None, 2) == Ok(SessionState::Mutual) {
            mutual += 1;
        }
        let s = auth.begin(dev, svc, 1).map_err(|e| e.to_string())?;
        let forged = compute_proof(&wrong, &s.nonce_i, svc);
        if auth.verify(s.id, Role::Responder, &forged, Some(rng.gen()), 2).is_ok() {
            mutual += 1;
        }
    }
    for bit in 0..256 {
        let (id, nr) = half(&mut auth, &mut rng)?;
        let mut proof = compute_proof(&dev_key, &nr, dev);
        proof[bit / 8] ^= 1 << (bit % 8);
        if auth.verify(id, Role::Initiator, &proof, None, 2) == Ok(SessionState::Mutual) {
            mutual += 1;
        }
    }
    ensure(mutual == 0, || format!("{mutual} forged sessions completed"))?;
    // an honest run, then replays of its material
    let (id, nr) = half(&mut auth, &mut rng)?;
    let proof = compute_proof(&dev_key, &nr, dev);
    let st = auth.verify(id, Role::Initiator, &proof, None, 2).map_err(|e| e.to_string())?;
    ensure(st == SessionState::Mutual, || "honest session did not complete".into())?;
    let replayed = auth.verify(id, Role::Initiator, &proof, None, 3);
    ensure(replayed == Err(AuthError::Failed(id, FailReason::Replay)), || format!("proof replay gave {replayed:?}"))?;
    let s = auth.begin(dev, svc, 3).map_err(|e| e.to_string())?;
    let resp = compute_proof(&svc_key, &s.nonce_i, svc);
    let reused = auth.verify(s.id, Role::Responder, &resp, Some(nr), 3);
    ensure(reused == Err(AuthError::Failed(s.id, FailReason::Replay)), || format!("nonce replay gave {reused:?}"))?;
    Ok("0 of 2000 wrong-key and 256 bit-flipped proofs authenticated; replays rejected".into())
}

fn matrix() -> Check {
    let t = Instant::now();
    let grid = matrix_suite();
    let el = t.elapsed();
    let failing: Vec<String> = grid
        .cells
        .iter()
        .filter(|c| c.status != sdiot_core::scenarios::CellStatus::Pass)
        .map(|c| format!("{} / {}: {:?}", c.threat, c.module.name(), c.status))
        .collect();
    ensure(failing.is_empty(), || failing.join("; "))?;
    ensure(el < Duration::from_secs(120), || format!("took {el:?}"))?;
    Ok(format!("{} of {} cells pass in {el:.2?}", grid.passed(), grid.cells.len()))
}

fn mitigation_calibration() -> Check {
    let spec = library_scenario("calibration").ok_or("no calibration scenario")?.map_err(|e| e.to_string())?;
    let w = spec.detector.window;
    ensure(spec.duration / w >= 100, || "calibration shorter than 100 windows".into())?;
    let clean = run_scenario(&spec).map_err(|e| e.to_string())?;
    ensure(clean.report.alerts.is_empty(), || format!("{} alerts on honest traffic", clean.report.alerts.len()))?;
    let b = clean.report.baseline_rate.ok_or("no baseline learned")?;
    let rate = (50.0 * b / w as f64).ceil() as u32;
    let mut attacked = spec.clone();
    attacked
        .attacks
        .push(AttackSpec::new(AttackKind::Dos, NodeId(5), None, 20 * w, spec.duration));
    attacked.attacks[0].rate = rate;
    let out = run_scenario(&attacked).map_err(|e| e.to_string())?;
    let o = &out.report.outcomes[0];
    let Outcome::Detected { latency } = o.outcome else {
        return Err(format!("50x flood was {}", o.outcome));
    };
    ensure(latency <= 2 * w, || format!("latency {latency}"))?;
    ensure(o.countermeasure.is_some() && o.after_countermeasure == 0, || {
        format!("{} deliveries after the countermeasure", o.after_countermeasure)
    })?;
    Ok(format!(
        "{} windows without alerts; baseline {b:.2}/window, flood {rate}/tick flagged after {latency} ticks, 0 deliveries after the drop rule",
        spec.duration / w
    ))
}

fn determinism() -> Check {
    let mut bytes = 0;
    for (name, _) in LIBRARY {
        let spec = library_scenario(name).expect("listed").map_err(|e| e.to_string())?;
        let a = run_scenario(&spec).map_err(|e| e.to_string())?;
        let b = run_scenario(&spec).map_err(|e| e.to_string())?;
        let audit = a.audit.to_text();
        ensure(audit == b.audit.to_text(), || format!("{name}: audit differs"))?;
        ensure(a.report.render_text() == b.report.render_text(), || format!("{name}: report differs"))?;
        ensure(a.report.render_kv() == b.report.render_kv(), || format!("{name}: kv report differs"))?;
        bytes += audit.len();
    }
    Ok(format!("{} scenarios rerun byte-identical ({bytes} audit bytes)", LIBRARY.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("ECDH correctness", ecdh_correctness),
        ("EC group law", group_law),
        ("SMC soundness", smc_soundness),
        ("trust formulas", trust_formulas),
        ("trust separation", trust_separation),
        ("ABAC equivalence", abac_equivalence),
        ("auth negative suite", auth_negative),
        ("coverage matrix", matrix),
        ("mitigation calibration", mitigation_calibration),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} {name}: PASS {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
