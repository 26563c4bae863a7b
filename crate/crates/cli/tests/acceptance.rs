//! Acceptance suite: one check per primary criterion, each printed as a
//! PASS/FAIL line. Exits non-zero when any criterion fails.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use nss_core::classifier::{
    apply_stage1_update, apply_stage2_update, potential, stage1_needs_update, train_stage1, train_stage2,
    ClassLabel, FeatureVector, KernelParams, PotentialModel, TrainParams, TrainingSample,
    UpdateVariant,
};
use nss_core::features::{counter_delta, CounterSnapshot, CursorEvent, DeltaOutcome, StreamCursor};
use nss_core::store::{decode_artifact, encode_artifact, to_canonical_bytes, LabeledSample, ModelStore};
use nss_core::training::{classify_raw, train_model, RawSample, TrainingOptions};
use nss_lab::{
    desk_scenarios, fixtures_dir, gaussian_fixture, generate_trace, labeled_dataset, run_agent, AgentConfig,
    AgentSource, GaussianFixture, Scenario, ScenarioKind, Trace,
};
use nss_service::{ClassConfig, ServiceConfig, ServiceEvent};
use nss_snmp::{decode_message, encode_message, Clock, Message, Oid, Pdu, PduKind, Value, VarBind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const FIXTURE_SEED: u64 = 7;

fn fixture() -> GaussianFixture {
    gaussian_fixture(FIXTURE_SEED)
}

// ---------------------------------------------------------------- kernel

fn oracle_kernel(x: &[f64], y: &[f64], alpha: f64) -> f64 {
    let mut r2 = 0.0;
    for i in 0..x.len() {
        r2 += (x[i] - y[i]) * (x[i] - y[i]);
    }
    1.0 / (1.0 + alpha * r2)
}

fn fv(v: Vec<f64>) -> FeatureVector {
    FeatureVector::new(v).expect("finite")
}

fn kernel_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    const N: usize = 10_000;
    for case in 0..N {
        let dim = rng.random_range(1..=8);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let alpha = 10f64.powf(rng.random_range(-3.0..2.0));
        let k = KernelParams::new(alpha).map_err(err)?;
        let (xv, yv) = (fv(x.clone()), fv(y.clone()));
        let f = potential(&xv, &yv, &k).map_err(err)?;
        let ctx = || format!("case {case}: x={x:?} y={y:?} alpha={alpha}");
        ensure(f > 0.0 && f <= 1.0, || format!("range: f={f}; {}", ctx()))?;
        ensure((f - oracle_kernel(&x, &y, alpha)).abs() <= 1e-12, || format!("oracle; {}", ctx()))?;
        ensure(potential(&xv, &xv, &k).map_err(err)? == 1.0, || format!("f(x,x) != 1; {}", ctx()))?;
        let back = potential(&yv, &xv, &k).map_err(err)?;
        ensure((f - back).abs() <= 1e-12, || format!("symmetry; {}", ctx()))?;
        // farther along the same ray
        let t = rng.random_range(1.0..4.0);
        let far: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + t * (b - a)).collect();
        let f_far = potential(&xv, &fv(far), &k).map_err(err)?;
        ensure(f_far <= f + 1e-12, || format!("distance monotonicity: {f_far} > {f}; {}", ctx()))?;
        let k2 = KernelParams::new(alpha * rng.random_range(1.0..10.0)).map_err(err)?;
        let f_alpha = potential(&xv, &yv, &k2).map_err(err)?;
        ensure(f_alpha <= f + 1e-12, || format!("alpha monotonicity: {f_alpha} > {f}; {}", ctx()))?;
    }
    Ok(format!("{N} random triples"))
}

// ---------------------------------------------------------------- classify vs oracle

struct RandomModel {
    alpha: f64,
    epsilon: f64,
    classes: usize,
    /// (vector, weight, owner)
    vectors: Vec<(Vec<f64>, f64, usize)>,
}

fn oracle_potentials(m: &RandomModel, y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.classes);
    for q in 0..m.classes {
        let mut total = 0.0;
        for (x, w, owner) in &m.vectors {
            if *owner == q {
                total += w * oracle_kernel(x, y, m.alpha);
            }
        }
        out.push(total);
    }
    out
}

/// Label per the decision rule: argmax with ties to the lowest id, and a gap
/// to the runner-up inside a positive epsilon is unidentified.
fn oracle_label(pots: &[f64], epsilon: f64) -> Option<usize> {
    let mut best = 0;
    for q in 1..pots.len() {
        if pots[q] > pots[best] {
            best = q;
        }
    }
    let runner_up = (0..pots.len()).filter(|&q| q != best).map(|q| pots[q]).fold(f64::NEG_INFINITY, f64::max);
    let margin = pots[best] - runner_up;
    if epsilon > 0.0 && margin <= epsilon {
        None
    } else {
        Some(best)
    }
}

fn classifier_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = 0;
    let mut unidentified = 0;
    for case in 0..100 {
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(1..=8);
        let n = rng.random_range(1..=50);
        let mut m = RandomModel {
            alpha: 10f64.powf(rng.random_range(-2.0..1.0)),
            epsilon: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) },
            classes,
            vectors: Vec::new(),
        };
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..3.0) };
            m.vectors.push((v, w, i % classes));
        }
        // classification needs some positive weight
        m.vectors[0].1 = 1.0;
        let labels: Vec<ClassLabel> = (0..classes).map(|i| ClassLabel::new(i, format!("c{i}"))).collect();
        let mut model =
            PotentialModel::new(labels, dim, KernelParams::new(m.alpha).map_err(err)?, m.epsilon).map_err(err)?;
        for (v, w, owner) in &m.vectors {
            model.push_weighted(fv(v.clone()), *w, *owner).map_err(err)?;
        }
        for _ in 0..20 {
            let y: Vec<f64> = if rng.random_bool(0.2) {
                m.vectors[rng.random_range(0..n)].0.clone()
            } else {
                (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()
            };
            let d = model.classify(&fv(y.clone())).map_err(err)?;
            let expect = oracle_potentials(&m, &y);
            for (q, (a, b)) in d.potentials.iter().zip(&expect).enumerate() {
                ensure((a - b).abs() <= 1e-12, || format!("model {case} class {q}: {a} vs oracle {b}"))?;
            }
            let label = oracle_label(&expect, m.epsilon);
            ensure(d.label.class_id() == label, || format!("model {case}: label {:?} vs oracle {label:?}", d.label))?;
            queries += 1;
            unidentified += usize::from(label.is_none());
        }
    }
    Ok(format!("100 models, {queries} queries, {unidentified} unidentified, potentials within 1e-12"))
}

// ---------------------------------------------------------------- stage 1

fn accuracy(model: &PotentialModel, set: &[TrainingSample]) -> Result<f64, String> {
    let mut ok = 0;
    for s in set {
        if model.classify(&s.vector).map_err(err)?.label.class_id() == Some(s.label.id) {
            ok += 1;
        }
    }
    Ok(ok as f64 / set.len() as f64)
}

fn stage1_convergence() -> Outcome {
    let fx = fixture();
    let out = train_stage1(&fx.train, &TrainParams::default(), KernelParams::default()).map_err(err)?;
    ensure(out.converged && out.passes <= 20, || format!("converged={} passes={}", out.converged, out.passes))?;
    let train_acc = accuracy(&out.model, &fx.train)?;
    let test_acc = accuracy(&out.model, &fx.test)?;
    ensure(train_acc == 1.0, || format!("training accuracy {train_acc}"))?;
    ensure(test_acc >= 0.95, || format!("held-out accuracy {test_acc}"))?;
    Ok(format!("{} passes, training accuracy {train_acc}, held-out accuracy {test_acc}", out.passes))
}

fn best_competitor(pots: &[f64], own: usize) -> usize {
    let mut best = None;
    for (q, &p) in pots.iter().enumerate() {
        if q != own && best.is_none_or(|b: usize| p > pots[b]) {
            best = Some(q);
        }
    }
    best.expect("two classes")
}

/// Replays the stage-one loop update by update and checks each step's effect.
fn stage1_replay(fx: &GaussianFixture, variant: UpdateVariant) -> Result<(PotentialModel, usize), String> {
    let params = TrainParams { update_variant: variant, ..TrainParams::default() };
    let mut model = PotentialModel::new(fx.classes.clone(), 2, KernelParams::default(), params.epsilon).map_err(err)?;
    let mut updates = 0;
    for _ in 0..params.max_passes {
        let mut clean = true;
        for s in &fx.train {
            let own = s.label.id;
            if !stage1_needs_update(&model, &s.vector, own, params.epsilon).map_err(err)? {
                continue;
            }
            clean = false;
            let before = model.potentials(&s.vector).map_err(err)?;
            let g = best_competitor(&before, own);
            let next = apply_stage1_update(&model, &s.vector, own, &params).map_err(err)?;
            let after = next.potentials(&s.vector).map_err(err)?;
            ensure(after[own] > before[own], || {
                format!("{variant:?} update {updates}: K(true) {} -> {}", before[own], after[own])
            })?;
            if variant == UpdateVariant::B {
                ensure(after[g] <= before[g], || {
                    format!("B update {updates}: K(competitor) {} -> {}", before[g], after[g])
                })?;
            }
            model = next;
            updates += 1;
        }
        if clean {
            break;
        }
    }
    Ok((model, updates))
}

fn stage1_step_property() -> Outcome {
    let fx = fixture();
    let (replayed, a_updates) = stage1_replay(&fx, UpdateVariant::A)?;
    let trained = train_stage1(&fx.train, &TrainParams::default(), KernelParams::default()).map_err(err)?;
    ensure(replayed.weighted_vectors() == trained.model.weighted_vectors(), || {
        "replayed variant A run differs from train_stage1".into()
    })?;
    let (_, b_updates) = stage1_replay(&fx, UpdateVariant::B)?;
    Ok(format!("variant A: {a_updates} updates, variant B: {b_updates} updates, all steps checked"))
}

// ---------------------------------------------------------------- stage 2

fn desk_samples(interval: u64) -> Result<Vec<TrainingSample>, String> {
    Ok(labeled_dataset(&desk_scenarios(50, interval, 11), interval).map_err(err)?.samples)
}

fn full_train(seq: &[TrainingSample]) -> Result<(PotentialModel, PotentialModel), String> {
    let params = TrainParams::default();
    let s1 = train_stage1(seq, &params, KernelParams::default()).map_err(err)?;
    let s2 = train_stage2(&s1.model, seq, &params).map_err(err)?;
    Ok((s1.model, s2.model))
}

fn stage2_bookkeeping() -> Outcome {
    let fixtures = [("gaussian", fixture().train), ("desk", desk_samples(10)?)];
    let mut checks = 0;
    let mut worst: f64 = 0.0;
    for (name, seq) in &fixtures {
        let (s1, s2) = full_train(seq)?;
        let sum1: u64 = s1.stage2_c().iter().sum();
        let sum2: u64 = s2.stage2_c().iter().sum();
        ensure(sum1 == sum2 && sum2 == seq.len() as u64, || format!("{name}: sum c {sum1} -> {sum2}"))?;

        let (_, again) = full_train(seq)?;
        ensure(to_canonical_bytes(&s2).map_err(err)? == to_canonical_bytes(&again).map_err(err)?, || {
            format!("{name}: two runs differ")
        })?;

        for entry in s2.memory().iter().filter(|e| e.training).take(60) {
            let Some(from) = entry.class else { continue };
            for to in (0..s2.class_count()).filter(|&q| q != from) {
                let there = apply_stage2_update(&s2, &entry.vector, from, to).map_err(err)?;
                let back = apply_stage2_update(&there, &entry.vector, to, from).map_err(err)?;
                ensure(back.stage2_c() == s2.stage2_c(), || format!("{name}: c not restored"))?;
                for (a, b) in back.stage2_s().iter().zip(s2.stage2_s()) {
                    worst = worst.max((a - b).abs());
                    ensure((a - b).abs() <= 1e-12, || format!("{name}: S {a} vs {b}"))?;
                }
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} update/inverse pairs (max |dS| {worst:e}), sum c conserved, runs bit-identical"))
}

// ---------------------------------------------------------------- epsilon margin

fn epsilon_margin() -> Outcome {
    let fx = fixture();
    let (_, model) = full_train(&fx.train)?;
    let mut margins = Vec::new();
    for s in &fx.test {
        margins.push(model.classify(&s.vector).map_err(err)?.margin);
    }
    let mut sorted = margins.clone();
    sorted.sort_by(f64::total_cmp);
    // nearest-rank 10th percentile
    let rank = (0.1 * sorted.len() as f64).ceil() as usize;
    let epsilon = sorted[rank - 1];
    ensure(epsilon > 0.0, || "10th-percentile margin is zero".into())?;
    let gated = model.with_epsilon(epsilon).map_err(err)?;
    let mut unidentified = 0;
    for (s, &m) in fx.test.iter().zip(&margins) {
        let d = gated.classify(&s.vector).map_err(err)?;
        let inside = m <= epsilon;
        ensure(d.label.is_unidentified() == inside, || {
            format!("margin {m} vs epsilon {epsilon}: got {:?}", d.label)
        })?;
        unidentified += usize::from(inside);
    }
    Ok(format!("epsilon {epsilon:.6}: {unidentified}/{} test points unidentified, exactly those inside", fx.test.len()))
}

// ---------------------------------------------------------------- counter wrap

fn snapshot(ts_ms: u64, uptime: u32, value: u32) -> CounterSnapshot {
    CounterSnapshot {
        target: "t".into(),
        if_index: 1,
        ts_ms,
        uptime_ticks: uptime,
        counters: [("in_octets".to_string(), value)].into_iter().collect(),
    }
}

fn rates_of(trace: &Trace) -> Result<Vec<Vec<f64>>, String> {
    let mut cursor = StreamCursor::new();
    let mut rows = Vec::new();
    for s in &trace.snapshots {
        if let CursorEvent::Rates(r) = cursor.push(s.clone()).map_err(err)? {
            rows.push(r.raw_features().map_err(err)?);
        }
    }
    Ok(rows)
}

fn counter_wrap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut wrapped = 0;
    for case in 0..10_000 {
        let prev: u32 = if case % 2 == 0 { u32::MAX - rng.random_range(0..1_000_000) } else { rng.random() };
        let increment: u32 = rng.random();
        let curr = prev.wrapping_add(increment);
        let expect = (i64::from(curr) - i64::from(prev)).rem_euclid(1 << 32) as u32;
        ensure(expect == increment, || "oracle broken".into())?;
        let d = counter_delta(&snapshot(1_000, 100, prev), &snapshot(11_000, 1_100, curr)).map_err(err)?;
        let DeltaOutcome::Deltas(d) = d else { return Err(format!("case {case}: reported a reset")) };
        ensure(d.values["in_octets"] == increment, || {
            format!("case {case}: {prev} -> {curr}: delta {} expected {increment}", d.values["in_octets"])
        })?;
        wrapped += usize::from(curr < prev);
    }

    let plain = Trace::read(&fixtures_dir().join("wrap_twin_plain.jsonl")).map_err(err)?;
    let twin = Trace::read(&fixtures_dir().join("wrap_twin_wrapped.jsonl")).map_err(err)?;
    ensure(twin.has_wrap() && !plain.has_wrap(), || "fixture wrap flags".into())?;
    let interval = plain.meta.as_ref().map_or(5, |m| m.poll_interval_s);
    let ds = labeled_dataset(&desk_scenarios(30, interval, 21), interval).map_err(err)?;
    let samples: Vec<RawSample> = ds
        .raw
        .iter()
        .zip(&ds.samples)
        .map(|(r, s)| RawSample { features: r.clone(), label: s.label.name.clone() })
        .collect();
    let names: Vec<String> = ds.classes.iter().map(|c| c.name.clone()).collect();
    let (artifact, _) = train_model(
        &samples,
        &names,
        nss_core::features::default_feature_order(),
        &TrainingOptions::default(),
        0,
    )
    .map_err(err)?;
    let (a, b) = (rates_of(&plain)?, rates_of(&twin)?);
    ensure(a == b && !a.is_empty(), || "twin traces give different rates".into())?;
    for (i, (ra, rb)) in a.iter().zip(&b).enumerate() {
        let (_, da) = classify_raw(&artifact, ra).map_err(err)?;
        let (_, db) = classify_raw(&artifact, rb).map_err(err)?;
        ensure(da == db, || format!("interval {i}: {:?} vs {:?}", da.label, db.label))?;
    }
    Ok(format!("10000 random deltas ({wrapped} wrapped) exact; {} twin intervals classify identically", a.len()))
}

// ---------------------------------------------------------------- SNMP codec

fn random_oid(rng: &mut ChaCha8Rng) -> Oid {
    let first = rng.random_range(0..=2u32);
    let second = if first < 2 { rng.random_range(0..40) } else { rng.random_range(0..1_000_000) };
    let mut arcs = vec![first, second];
    for _ in 0..rng.random_range(0..=14) {
        arcs.push(if rng.random_bool(0.3) { rng.random() } else { rng.random_range(0..200) });
    }
    Oid::new(arcs).expect("valid arcs")
}

fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| rng.random()).collect()
}

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.random_range(0..10) {
        0 => Value::Integer(rng.random()),
        1 => Value::OctetString(random_bytes(rng, 300)),
        2 => Value::Null,
        3 => Value::Oid(random_oid(rng)),
        4 => Value::Counter32(rng.random()),
        5 => Value::Gauge32(rng.random()),
        6 => Value::TimeTicks(rng.random()),
        7 => Value::NoSuchObject,
        8 => Value::NoSuchInstance,
        _ => {
            let tags = [0x40u8, 0x44, 0x46, 0x47];
            Value::Opaque { tag: tags[rng.random_range(0..tags.len())], bytes: random_bytes(rng, 20) }
        }
    }
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let kinds = [PduKind::GetRequest, PduKind::GetNextRequest, PduKind::Response];
    let varbinds = (0..rng.random_range(0..=12)).map(|_| VarBind::new(random_oid(rng), random_value(rng))).collect();
    Message {
        version: rng.random_range(0..=1),
        community: random_bytes(rng, 40),
        pdu: Pdu {
            kind: kinds[rng.random_range(0..3)],
            request_id: rng.random(),
            error_status: rng.random_range(0..=18),
            error_index: rng.random_range(0..=12),
            varbinds,
        },
    }
}

fn vector_value(kind: &str, v: &Json) -> Result<Value, String> {
    let hexed = |v: &Json| hex::decode(v.as_str().unwrap_or_default()).map_err(err);
    Ok(match kind {
        "integer" => Value::Integer(v.as_i64().ok_or("integer")?),
        "octet_string" => Value::OctetString(hexed(v)?),
        "null" => Value::Null,
        "oid" => Value::Oid(v.as_str().ok_or("oid")?.parse().map_err(err)?),
        "counter32" => Value::Counter32(v.as_u64().ok_or("counter32")? as u32),
        "gauge32" => Value::Gauge32(v.as_u64().ok_or("gauge32")? as u32),
        "timeticks" => Value::TimeTicks(v.as_u64().ok_or("timeticks")? as u32),
        "no_such_object" => Value::NoSuchObject,
        "no_such_instance" => Value::NoSuchInstance,
        "ip_address" => Value::Opaque { tag: 0x40, bytes: hexed(v)? },
        other => return Err(format!("unknown vector type {other}")),
    })
}

fn vector_message(v: &Json) -> Result<Message, String> {
    let kind = match v["kind"].as_str() {
        Some("get_request") => PduKind::GetRequest,
        Some("get_next_request") => PduKind::GetNextRequest,
        Some("response") => PduKind::Response,
        other => return Err(format!("unknown pdu {other:?}")),
    };
    let varbinds = v["varbinds"]
        .as_array()
        .ok_or("varbinds")?
        .iter()
        .map(|vb| {
            let oid: Oid = vb["oid"].as_str().ok_or("oid")?.parse().map_err(err)?;
            Ok(VarBind::new(oid, vector_value(vb["type"].as_str().ok_or("type")?, &vb["value"])?))
        })
        .collect::<Result<_, String>>()?;
    Ok(Message {
        version: v["version"].as_i64().ok_or("version")?,
        community: hex::decode(v["community"].as_str().ok_or("community")?).map_err(err)?,
        pdu: Pdu {
            kind,
            request_id: v["request_id"].as_i64().ok_or("request_id")? as i32,
            error_status: v["error_status"].as_i64().ok_or("error_status")? as i32,
            error_index: v["error_index"].as_i64().ok_or("error_index")? as i32,
            varbinds,
        },
    })
}

fn snmp_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut corpus = Vec::new();
    for i in 0..1000 {
        let m = random_message(&mut rng);
        let bytes = encode_message(&m);
        let back = decode_message(&bytes).map_err(|e| format!("message {i}: {e}"))?;
        ensure(back == m, || format!("message {i} did not round-trip"))?;
        ensure(encode_message(&back) == bytes, || format!("message {i}: re-encoding differs"))?;
        corpus.push(bytes);
    }

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../snmp/tests/fixtures/ber_vectors.json");
    let vectors: Vec<Json> = serde_json::from_slice(&std::fs::read(&path).map_err(err)?).map_err(err)?;
    ensure(vectors.len() >= 10, || format!("only {} frozen vectors", vectors.len()))?;
    for v in &vectors {
        let name = v["name"].as_str().unwrap_or("?");
        let expected = hex::decode(v["hex"].as_str().ok_or("hex")?).map_err(err)?;
        let msg = vector_message(v)?;
        ensure(encode_message(&msg) == expected, || format!("vector {name}: encoding differs"))?;
        ensure(decode_message(&expected).map_err(err)? == msg, || format!("vector {name}: decoding differs"))?;
    }

    // half mutated valid messages, half raw noise; a panic aborts the run and
    // the slowest single decode bounds hangs
    let mut slowest = Duration::ZERO;
    let mut accepted = 0;
    for i in 0..100_000 {
        let input: Vec<u8> = if i % 2 == 0 {
            let mut b = corpus[rng.random_range(0..corpus.len())].clone();
            for _ in 0..rng.random_range(1..8) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            let cut = rng.random_range(0..=b.len());
            b.truncate(cut);
            b
        } else {
            random_bytes(&mut rng, 256)
        };
        let started = Instant::now();
        let result = std::panic::catch_unwind(|| decode_message(&input));
        slowest = slowest.max(started.elapsed());
        match result {
            Err(_) => return Err(format!("decoder panicked on input {}", hex::encode(&input))),
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(e)) => ensure(e.offset <= input.len(), || {
                format!("error offset {} past input length {}", e.offset, input.len())
            })?,
        }
    }
    ensure(slowest < Duration::from_millis(100), || format!("slowest decode took {slowest:?}"))?;
    Ok(format!(
        "1000 round trips, {} frozen vectors, 100000 fuzz inputs ({accepted} decoded, slowest {slowest:?})",
        vectors.len()
    ))
}

// ---------------------------------------------------------------- end to end

const E2E_SCALE: f64 = 20.0;
const E2E_INTERVAL_S: u64 = 2;
const E2E_PHASE_S: u64 = 60;

fn class_config() -> Vec<ClassConfig> {
    ScenarioKind::PRESETS
        .iter()
        .map(|k| ClassConfig { name: k.label().into(), color: "#888888".into(), strategy: format!("on-{}", k.as_str()) })
        .collect()
}

async fn end_to_end() -> Outcome {
    let wall = Instant::now();
    let clock = Clock::scaled(E2E_SCALE);
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = ServiceConfig::with_classes(class_config());
    cfg.listen = "127.0.0.1:0".parse().map_err(err)?;
    cfg.data_dir = dir.path().to_path_buf();
    cfg.clock_scale = E2E_SCALE;
    let svc = nss_service::start_with_clock(cfg, clock).await.map_err(err)?;
    let http = reqwest::Client::new();
    let api = format!("{}/api/v1", svc.url());

    // train on the generated desk dataset at the polling interval
    let ds = labeled_dataset(&desk_scenarios(50, E2E_INTERVAL_S, 500), E2E_INTERVAL_S).map_err(err)?;
    for (i, (raw, s)) in ds.raw.iter().zip(&ds.samples).enumerate() {
        svc.shared()
            .add_sample(LabeledSample {
                source_id: format!("desk:{i}"),
                label: s.label.name.clone(),
                features: raw.clone(),
                labeled_at_ms: 0,
            })
            .map_err(err)?;
    }
    let resp = http.post(format!("{api}/train")).json(&json!({})).send().await.map_err(err)?;
    ensure(resp.status().is_success(), || format!("training failed: {}", resp.status()))?;

    let mut events = svc.shared().subscribe();
    let start_ms = clock.now_ms();
    let schedule = ScenarioKind::PRESETS
        .iter()
        .enumerate()
        .map(|(i, &k)| Scenario::preset(k, E2E_PHASE_S, 900 + i as u64))
        .collect();
    let agent = run_agent(
        "127.0.0.1:0".parse().map_err(err)?,
        AgentSource::Schedule(schedule),
        AgentConfig { clock, ..AgentConfig::default() },
    )
    .await
    .map_err(err)?;
    // the schedule started somewhere in [start_ms, started_by]
    let started_by = clock.now_ms();
    let target = json!({
        "id": "desk", "host": "127.0.0.1", "port": agent.local_addr().port(),
        "if_indexes": [1], "poll_interval_s": E2E_INTERVAL_S,
    });
    let resp = http.post(format!("{api}/targets")).json(&target).send().await.map_err(err)?;
    ensure(resp.status().is_success(), || format!("adding target failed: {}", resp.status()))?;

    let end_ms = start_ms + 4 * E2E_PHASE_S * 1000;
    let mut records = Vec::new();
    let mut states: Vec<(u64, Option<String>)> = Vec::new();
    while clock.now_ms() < end_ms + E2E_INTERVAL_S * 1000 {
        match tokio::time::timeout(Duration::from_millis(200), events.recv()).await {
            Ok(Ok(ServiceEvent::Record(r))) => records.push(r),
            Ok(Ok(ServiceEvent::State(s))) => {
                states.push((clock.now_ms(), s.decision.map(|d| d.label.name().to_string())));
            }
            Ok(Ok(_)) | Err(_) => {}
            Ok(Err(e)) => return Err(format!("event stream: {e}")),
        }
    }

    // phase boundaries as the agent reports them
    let mut switches = Vec::new();
    let mut t = started_by;
    let mut kind = agent.kind_at(t);
    while t + 10 < end_ms {
        t += 10;
        let k = agent.kind_at(t);
        if k != kind {
            switches.push((t, k.ok_or("agent lost its schedule")?));
            kind = k;
        }
    }
    ensure(switches.len() == 3, || format!("expected 3 scenario switches, saw {}", switches.len()))?;

    let first_ts = records.first().map(|r| r.ts_ms).ok_or("no records")?;
    let scored: Vec<_> =
        records.iter().filter(|r| r.ts_ms >= first_ts + E2E_INTERVAL_S * 1000 && r.ts_ms <= end_ms).collect();
    let mut correct = 0;
    for r in &scored {
        let expected = agent.kind_at(r.ts_ms).map(|k| k.label());
        let got = r.decision.as_ref().map(|d| d.label.name());
        correct += usize::from(expected.is_some() && got == expected);
    }
    let acc = correct as f64 / scored.len().max(1) as f64;

    let mut worst_latency = 0;
    for &(at, kind) in &switches {
        let seen = states
            .iter()
            .find(|(ts, label)| *ts >= at && label.as_deref() == Some(kind.label()))
            .map(|(ts, _)| ts - at);
        let latency = seen.ok_or_else(|| format!("switch to {} at {at} never shown", kind.label()))?;
        worst_latency = worst_latency.max(latency);
    }

    let elapsed = wall.elapsed();
    svc.shutdown().await;
    agent.shutdown();
    let detail = format!(
        "{correct}/{} post-warmup records correct ({:.1}%), worst switch latency {:.2} intervals, {:.1} s wall",
        scored.len(),
        acc * 100.0,
        worst_latency as f64 / (E2E_INTERVAL_S * 1000) as f64,
        elapsed.as_secs_f64()
    );
    ensure(scored.len() >= 100, || format!("too few records: {detail}"))?;
    ensure(acc >= 0.9, || detail.clone())?;
    ensure(worst_latency <= 2 * E2E_INTERVAL_S * 1000, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(30), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- persistence

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn_server(config: &Path) -> Result<Server, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_nss"))
        .args(["serve", "--config", config.to_str().ok_or("path")?, "--listen", "127.0.0.1:0"])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(err)?;
    let mut lines = BufReader::new(child.stderr.take().ok_or("stderr")?).lines();
    let url = loop {
        match lines.next() {
            Some(Ok(line)) => {
                if let Some(u) = line.strip_prefix("nss: listening on ") {
                    break u.trim().to_string();
                }
            }
            _ => return Err("server exited before listening".into()),
        }
    };
    std::thread::spawn(move || lines.for_each(drop));
    Ok(Server { child, url })
}

async fn get(http: &reqwest::Client, url: String) -> Result<Json, String> {
    http.get(url).send().await.map_err(err)?.json().await.map_err(err)
}

async fn post(http: &reqwest::Client, url: String, body: &Json) -> Result<Json, String> {
    let resp = http.post(&url).json(body).send().await.map_err(err)?;
    let status = resp.status();
    let body: Json = resp.json().await.map_err(err)?;
    ensure(status.is_success(), || format!("{url}: {status} {body}"))?;
    Ok(body)
}

async fn persisted_view(http: &reqwest::Client, url: &str) -> Result<(Json, Json, Json), String> {
    let model = get(http, format!("{url}/api/v1/model")).await?;
    let history = get(http, format!("{url}/api/v1/history?limit=1000")).await?;
    let samples = get(http, format!("{url}/api/v1/samples")).await?;
    Ok((model, history, samples))
}

async fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("data");
    let config = dir.path().join("nss.toml");
    let mut toml = format!("data_dir = {:?}\n", data);
    for c in class_config() {
        toml.push_str(&format!("[[classes]]\nname = {:?}\nstrategy = {:?}\n", c.name, c.strategy));
    }
    std::fs::write(&config, toml).map_err(err)?;
    let http = reqwest::Client::new();

    let server = spawn_server(&config)?;
    let url = server.url.clone();
    for (target, kind, seed) in [("a", ScenarioKind::Normal, 1), ("b", ScenarioKind::BroadcastStorm, 2)] {
        let trace = generate_trace(&Scenario::preset(kind, 200, seed), 10).map_err(err)?;
        let snaps: Vec<CounterSnapshot> = trace
            .snapshots
            .into_iter()
            .map(|mut s| {
                s.target = target.into();
                s
            })
            .collect();
        let results = post(&http, format!("{url}/api/v1/snapshots"), &serde_json::to_value(&snaps).map_err(err)?).await?;
        for r in results.as_array().ok_or("ingest reply")? {
            if let Some(id) = r["record"]["id"].as_u64() {
                post(&http, format!("{url}/api/v1/records/{id}/label"), &json!({"label": kind.label()})).await?;
            }
        }
    }
    // a relabel must survive as the latest label
    post(&http, format!("{url}/api/v1/records/1/label"), &json!({"label": "Congestion"})).await?;
    let report = post(&http, format!("{url}/api/v1/train"), &json!({})).await?;
    let model_id = report["model_id"].as_str().ok_or("model id")?.to_string();
    let before = persisted_view(&http, &url).await?;
    let file_before = ModelStore::open(data.join("models")).map_err(err)?.raw(&model_id).map_err(err)?;

    // SIGKILL: no shutdown path runs
    drop(server);
    let server = spawn_server(&config)?;
    let after = persisted_view(&http, &server.url).await?;
    drop(server);

    ensure(after.0 == before.0, || format!("active model differs: {} vs {}", before.0["id"], after.0["id"]))?;
    ensure(after.1 == before.1, || "history differs after restart".into())?;
    ensure(after.2 == before.2, || "labels differ after restart".into())?;
    let file_after = ModelStore::open(data.join("models")).map_err(err)?.raw(&model_id).map_err(err)?;
    ensure(file_before == file_after, || "model file changed".into())?;
    let (id, artifact) = decode_artifact(&file_after).map_err(err)?;
    let (id2, bytes) = encode_artifact(&artifact).map_err(err)?;
    ensure(id == model_id && id2 == model_id && bytes == file_after, || "model re-encoding is not byte-stable".into())?;
    let records = before.1["total"].as_u64().unwrap_or(0);
    let samples = before.2.as_array().map_or(0, Vec::len);
    Ok(format!("model {model_id}, {records} records and {samples} labels identical after kill -9; model bytes stable"))
}

// ---------------------------------------------------------------- runner

fn report(name: &str, outcome: Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name}: {why}");
            false
        }
    }
}

#[tokio::main]
async fn main() {
    println!("acceptance criteria");
    let mut ok = true;
    ok &= report("kernel properties", kernel_properties());
    ok &= report("classifier matches brute-force oracle", classifier_oracle());
    ok &= report("stage-1 convergence", stage1_convergence());
    ok &= report("stage-1 step property", stage1_step_property());
    ok &= report("stage-2 bookkeeping", stage2_bookkeeping());
    ok &= report("epsilon margin", epsilon_margin());
    ok &= report("counter wrap", counter_wrap());
    ok &= report("SNMP codec", snmp_codec());
    ok &= report("end-to-end desk scenario", end_to_end().await);
    ok &= report("persistence across kill -9", persistence().await);
    if !ok {
        std::process::exit(1);
    }
}
