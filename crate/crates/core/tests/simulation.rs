mod common;

use std::collections::BTreeMap;

use common::spec;
use ctxscope_core::rng;
use ctxscope_core::rules::{self, RuleMultipliers};
use ctxscope_core::simgen::{
    self, AnomalyEvent, AnomalyKind, EventLogEntry, EventPlan, NetworkEffects, ScenarioKind, ScenarioSpec,
};
use ctxscope_core::telemetry::{SensorReading, WindowFrame};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

fn count<'a>(rs: &'a [SensorReading], stream: &str) -> BTreeMap<&'a str, usize> {
    let mut per = BTreeMap::new();
    for r in rs.iter().filter(|r| r.stream_id == stream) {
        *per.entry(r.channel_id.as_str()).or_default() += 1;
    }
    per
}

fn series(readings: &[SensorReading], channel: &str) -> Vec<f64> {
    readings.iter().filter(|r| r.channel_id == channel).map(|r| r.value).collect()
}

#[test]
fn clean_means_sit_within_three_standard_errors() {
    // 100 full cycles of the slow sinusoid, 12,000 samples per channel
    for kind in [ScenarioKind::Smartgrid, ScenarioKind::Healthcare] {
        let s = ScenarioSpec {
            duration_s: 60_000,
            ..spec(kind, 31, 0)
        };
        let (readings, _) = simgen::generate_scenario(&s).unwrap();
        for ch in kind.channels() {
            let x = series(&readings, ch);
            assert!(x.len() >= 10_000);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let baseline = kind.baseline(ch).unwrap();
            assert!(
                (mean - baseline).abs() <= 3.0 * sd / n.sqrt(),
                "{ch}: mean {mean} vs {baseline} (se {})",
                sd / n.sqrt()
            );
        }
    }
}

#[test]
fn spike_adds_the_offset_to_the_clean_signal() {
    let s = spec(ScenarioKind::Smartgrid, 5, 1800);
    let (clean, schemas) = simgen::generate_scenario(&s).unwrap();
    let ev = AnomalyEvent {
        kind: AnomalyKind::Spike,
        stream_id: "smartgrid-000".into(),
        channels: vec!["voltage".into()],
        start_index: 100,
        duration: 4,
        magnitude: 5.0,
    };
    let out = simgen::inject_anomalies(&clean, &schemas, &[ev], &s).unwrap();
    // regenerate independently and add 5σ by hand
    let (again, _) = simgen::generate_scenario(&s).unwrap();
    let before = series(&again, "voltage");
    let after: Vec<&SensorReading> = out.readings.iter().filter(|r| r.channel_id == "voltage").collect();
    for (i, r) in after.iter().enumerate() {
        if (100..104).contains(&i) {
            assert_eq!(r.value, before[i] + 5.0 * 2.3, "sample {i}");
            assert_eq!(r.truth_label, Some(1));
        } else {
            assert_eq!(r.value, before[i]);
            assert_eq!(r.truth_label, Some(0));
        }
    }
    let current: Vec<f64> = series(&out.readings, "current");
    assert_eq!(current, series(&again, "current"));
}

#[test]
fn dropout_removes_the_covered_samples() {
    let s = ScenarioSpec {
        streams: 2,
        ..spec(ScenarioKind::Healthcare, 6, 600)
    };
    let (clean, schemas) = simgen::generate_scenario(&s).unwrap();
    let ev = AnomalyEvent {
        kind: AnomalyKind::Dropout,
        stream_id: "healthcare-001".into(),
        channels: vec![],
        start_index: 40,
        duration: 6,
        magnitude: 1.0,
    };
    let out = simgen::inject_anomalies(&clean, &schemas, &[ev], &s).unwrap();
    for ch in ["heart_rate", "spo2"] {
        assert_eq!(count(&clean, "healthcare-001")[ch] - count(&out.readings, "healthcare-001")[ch], 6);
    }
    assert_eq!(count(&clean, "healthcare-000"), count(&out.readings, "healthcare-000"));
    let holes: Vec<usize> = out
        .log
        .iter()
        .filter_map(|e| match e {
            EventLogEntry::Hole { sample_index, channel, .. } if channel == "spo2" => Some(*sample_index),
            _ => None,
        })
        .collect();
    assert_eq!(holes, (40..46).collect::<Vec<_>>());
    match &out.log[0] {
        EventLogEntry::Event { removed, start_ts, end_ts, .. } => {
            assert_eq!(*removed, 12);
            assert_eq!((*start_ts, *end_ts), (200_000, 225_000));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn labels_mark_exactly_the_covered_samples() {
    let s = ScenarioSpec {
        streams: 4,
        ..spec(ScenarioKind::Smartgrid, 17, 7200)
    };
    let plan = EventPlan {
        per_stream: 3,
        kinds: vec![
            AnomalyKind::Spike,
            AnomalyKind::Drift,
            AnomalyKind::Stuck,
            AnomalyKind::Spoof,
            AnomalyKind::DosBurst,
        ],
        magnitude: [3.0, 6.0],
        duration: [2, 9],
        warmup_s: 600,
    };
    let events = simgen::plan_events(&s, &plan).unwrap();
    let (clean, schemas) = simgen::generate_scenario(&s).unwrap();
    let out = simgen::inject_anomalies(&clean, &schemas, &events, &s).unwrap();
    for r in &out.readings {
        let idx = (r.timestamp_ms / s.sample_period_ms) as usize;
        let covered = events.iter().any(|e| {
            e.stream_id == r.stream_id
                && (e.kind.is_stream_wide() || e.channels.contains(&r.channel_id))
                && (e.start_index..e.start_index + e.duration).contains(&idx)
        });
        assert_eq!(r.truth_label, Some(u8::from(covered)), "{r:?}");
    }
}

/// Independent replay of the substream derivation: FNV-1a over
/// `seed_le ‖ label 0x1f ‖ ...`, then the SplitMix64 finalizer.
fn replay_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut feed = |b: u8| h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    seed.to_le_bytes().into_iter().for_each(&mut feed);
    for l in labels {
        l.bytes().for_each(&mut feed);
        feed(0x1f);
    }
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[test]
fn network_loss_replays_from_the_seed() {
    let s = spec(ScenarioKind::Smartgrid, 8, 2500);
    let (clean, _) = simgen::generate_scenario(&s).unwrap();
    assert_eq!(clean.len(), 1000);
    let fx = NetworkEffects {
        loss_prob: 0.5,
        latency_ms: 0,
        jitter_ms: 0,
        seed: 99,
    };
    let a = simgen::apply_network_effects(&clean, &fx).unwrap();
    let b = simgen::apply_network_effects(&clean, &fx).unwrap();
    assert_eq!(a, b);
    let expected: Vec<&SensorReading> = clean
        .iter()
        .filter(|r| {
            let ts = r.timestamp_ms.to_string();
            let mut g = Pcg64::seed_from_u64(replay_seed(99, &["net", &r.stream_id, &r.channel_id, &ts, "0"]));
            g.gen::<f64>() >= 0.5
        })
        .collect();
    assert_eq!(a.len(), expected.len());
    assert!(a.iter().zip(expected).all(|(x, y)| x == y));
    assert!((400..600).contains(&a.len()), "{}", a.len());
    assert_eq!(replay_seed(99, &["x"]), rng::substream_seed(99, &["x"]));
}

#[test]
fn jitter_stays_within_bounds() {
    let s = spec(ScenarioKind::Healthcare, 2, 300);
    let (clean, _) = simgen::generate_scenario(&s).unwrap();
    let fx = NetworkEffects {
        loss_prob: 0.0,
        latency_ms: 120,
        jitter_ms: 40,
        seed: 3,
    };
    let out = simgen::apply_network_effects(&clean, &fx).unwrap();
    assert_eq!(out.len(), clean.len());
    for r in &out {
        let base = r.timestamp_ms - 120;
        let slot = base / 5000 * 5000;
        assert!(base - slot <= 40, "{r:?}");
    }
    assert!(out.windows(2).all(|p| p[0].timestamp_ms <= p[1].timestamp_ms));
}

#[test]
fn rules_fit_a_gaussian_channel() {
    let mut g = Pcg64::seed_from_u64(10);
    let x: Vec<f64> = (0..10_000).map(|_| 10.0 + g.sample::<f64, _>(StandardNormal)).collect();
    let w = WindowFrame::from_rows("g", 0, std::slice::from_ref(&x)).unwrap();
    let set = rules::fit_rules(&[w], &["g".into()], RuleMultipliers::default()).unwrap();
    // recompute mean and σ directly
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let r = &set.rules[0];
    assert!((r.lower - (mean - 3.0 * sd)).abs() < 1e-9);
    assert!((r.upper - (mean + 3.0 * sd)).abs() < 1e-9);
    // N(10, 1): bounds ≈ [7, 13] up to sampling error (σ̂ within ~2%)
    assert!((r.lower - 7.0).abs() < 0.1 && (r.upper - 13.0).abs() < 0.1, "{r:?}");
    // differences of iid N(0,1) have σ √2
    assert!((r.max_step - 4.0 * 2f64.sqrt()).abs() < 0.15, "{}", r.max_step);
}

#[test]
fn rules_rarely_fire_on_their_own_calibration_windows() {
    for (kind, seed) in [(ScenarioKind::Smartgrid, 40), (ScenarioKind::Healthcare, 41)] {
        let (windows, channels) = common::clean_windows(kind, seed, 3600);
        let set = rules::fit_rules(&windows, &channels, RuleMultipliers::default()).unwrap();
        let fired = windows
            .iter()
            .filter(|w| rules::rule_detect(w, &set).unwrap().label == 1)
            .count();
        let rate = fired as f64 / windows.len() as f64;
        assert!(rate <= 0.02, "{kind:?}: {fired}/{} windows fired", windows.len());
    }
}
