use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use joulediff::delta::{self, ExecView};
use joulediff::diff::{parse_unified_diff, ChangeSet};
use joulediff::faultloc::{tarantula, tarantula_scores, LineSpectrum, Spectrum};
use joulediff::model::{CoverageMap, LineRef, MeasurementRecord, MetricKind, TestId, Version};
use joulediff::probes::powercap::wrapping_delta;
use joulediff::runner::{Interleaving, MeasurementLog, RunPlan};
use joulediff::select::{select_tests, TestSelection};
use joulediff::stats::{self, ConclusivenessVerdict, Direction};

fn tid(i: usize) -> TestId {
    TestId::new(format!("t{i}")).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..1e4, 1..40)
}

fn sample4() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..1e4, 4..40)
}

type Instance = (Vec<(u8, u32, bool)>, Vec<Vec<u64>>, Vec<f64>);

/// (file index, line, version, per-test counts) for up to 5 changed lines.
fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=5, 1usize..=8).prop_flat_map(|(n_lines, n_tests)| {
        (
            prop::collection::btree_set((0u8..2, 1u32..30, any::<bool>()), n_lines..=n_lines)
                .prop_map(|s| s.into_iter().collect::<Vec<_>>()),
            prop::collection::vec(prop::collection::vec(prop_oneof![3 => Just(0u64), 2 => 1u64..6], n_tests), n_lines),
            prop::collection::vec(-50.0f64..50.0, n_tests),
        )
    })
}

struct Built {
    change: ChangeSet,
    selection: TestSelection,
    v1: CoverageMap,
    v2: CoverageMap,
    deltas: BTreeMap<TestId, f64>,
}

fn build(lines: &[(u8, u32, bool)], counts: &[Vec<u64>], deltas: &[f64]) -> Option<Built> {
    let mut change = ChangeSet::default();
    let mut v1 = CoverageMap::new(Version::V1);
    let mut v2 = CoverageMap::new(Version::V2);
    for (i, (f, l, added)) in lines.iter().enumerate() {
        let version = if *added { Version::V2 } else { Version::V1 };
        let lr = LineRef::new(&format!("src/f{f}.rs"), *l, version).unwrap();
        for (t, c) in counts[i].iter().enumerate() {
            if *c > 0 {
                let cov = if *added { &mut v2 } else { &mut v1 };
                cov.insert(tid(t), &lr.file, lr.line, *c).unwrap();
            }
        }
        if *added {
            change.additions.insert(lr);
        } else {
            change.deletions.insert(lr);
        }
    }
    for t in 0..deltas.len() {
        v1.add_test(tid(t));
        v2.add_test(tid(t));
    }
    let selection = select_tests(&change, &v1, &v2, &BTreeSet::new()).unwrap();
    if selection.selected.is_empty() {
        return None;
    }
    let deltas = selection
        .selected
        .iter()
        .map(|t| (t.clone(), deltas[t.as_str()[1..].parse::<usize>().unwrap()]))
        .collect();
    Some(Built {
        change,
        selection,
        v1,
        v2,
        deltas,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stddev_scales_and_ignores_translation(xs in sample(), a in 0.01f64..100.0, c in -1e3f64..1e3) {
        let s = stats::population_stddev(&xs).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| a * x).collect();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!(close(stats::population_stddev(&scaled).unwrap(), a * s, 1e-9));
        prop_assert!(close(stats::population_stddev(&shifted).unwrap(), s, 1e-6));
    }

    #[test]
    fn dispersion_ratios_are_scale_free(xs in sample4(), a in 0.01f64..100.0) {
        let scaled: Vec<f64> = xs.iter().map(|x| a * x).collect();
        prop_assert!(close(stats::coefficient_of_variation(&scaled).unwrap(), stats::coefficient_of_variation(&xs).unwrap(), 1e-9));
        prop_assert!(close(
            stats::quartile_coefficient_of_dispersion(&scaled).unwrap(),
            stats::quartile_coefficient_of_dispersion(&xs).unwrap(),
            1e-9
        ));
        prop_assert!(close(stats::median(&scaled).unwrap(), a * stats::median(&xs).unwrap(), 1e-9));
    }

    #[test]
    fn summary_ignores_order(xs in sample(), seed in any::<u64>()) {
        let mut ys = xs.clone();
        let mut g = joulediff::rng::SplitMix::new(seed);
        for i in (1..ys.len()).rev() {
            ys.swap(i, g.range(0, i as u64) as usize);
        }
        prop_assert_eq!(stats::summarize(&xs).unwrap(), stats::summarize(&ys).unwrap());
    }

    #[test]
    fn range_test_is_symmetric(a in sample(), b in sample()) {
        let ab = stats::ranges_disjoint(&a, &b).unwrap();
        let ba = stats::ranges_disjoint(&b, &a).unwrap();
        let flipped = match ab {
            ConclusivenessVerdict::Conclusive(Direction::Increase) => ConclusivenessVerdict::Conclusive(Direction::Decrease),
            ConclusivenessVerdict::Conclusive(Direction::Decrease) => ConclusivenessVerdict::Conclusive(Direction::Increase),
            ConclusivenessVerdict::Inconclusive => ConclusivenessVerdict::Inconclusive,
        };
        prop_assert_eq!(ba, flipped);
    }

    #[test]
    fn wrap_correction_is_bounded(max in 1u64..u64::MAX / 2, s in any::<u64>(), d in any::<u64>()) {
        let start = s % max;
        let consumed = d % max;
        let end = (start + consumed) % max;
        let got = wrapping_delta(start, end, max);
        prop_assert_eq!(got, consumed);
        prop_assert!(got < max);
    }

    #[test]
    fn weights_normalize((lines, counts, ds) in instance()) {
        let Some(b) = build(&lines, &counts, &ds) else { return Ok(()) };
        let w = delta::line_weights(&b.change, &b.selection, &b.v1, &b.v2).unwrap();
        let phi: f64 = w.iter().map(|x| x.phi).sum();
        prop_assert!((phi - 1.0).abs() < 1e-12);
        let theta: u64 = w.iter().map(|x| x.theta).sum();
        let omega = delta::test_weights(b.selection.selected.iter().cloned(), &w, ExecView::new(&b.v1, &b.v2)).unwrap();
        prop_assert!(omega.values().all(|o| *o > 0.0));
        // Σ_t ω(t) = Σ_l φ(l)·θ(l)
        let lhs: f64 = omega.values().sum();
        let rhs: f64 = w.iter().map(|x| x.phi * x.theta as f64).sum();
        prop_assert!(close(lhs, rhs, 1e-12), "{} {} Θ={}", lhs, rhs, theta);
    }

    #[test]
    fn weighted_delta_is_linear((lines, counts, ds) in instance(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
        let Some(b) = build(&lines, &counts, &ds) else { return Ok(()) };
        let w = delta::line_weights(&b.change, &b.selection, &b.v1, &b.v2).unwrap();
        let view = ExecView::new(&b.v1, &b.v2);
        let other: BTreeMap<TestId, f64> = b.deltas.iter().map(|(t, d)| (t.clone(), d * 0.5 - 1.0)).collect();
        let mixed: BTreeMap<TestId, f64> = b.deltas.iter().map(|(t, d)| (t.clone(), a * d + c * other[t])).collect();
        let f = |m: &BTreeMap<TestId, f64>| delta::weighted_delta(MetricKind::EnergyPkg, m, &w, view).unwrap().delta_omega;
        prop_assert!((f(&mixed) - (a * f(&b.deltas) + c * f(&other))).abs() < 1e-9);
    }

    #[test]
    fn selection_grows_with_the_change((lines, counts, ds) in instance()) {
        let Some(b) = build(&lines, &counts, &ds) else { return Ok(()) };
        let mut smaller = b.change.clone();
        if let Some(first) = smaller.additions.iter().next().cloned() {
            smaller.additions.remove(&first);
        } else if let Some(first) = smaller.deletions.iter().next().cloned() {
            smaller.deletions.remove(&first);
        }
        let sub = select_tests(&smaller, &b.v1, &b.v2, &BTreeSet::new()).unwrap();
        prop_assert!(sub.selected.is_subset(&b.selection.selected));
        // every selected test executes at least one changed line
        let view = ExecView::new(&b.v1, &b.v2);
        for t in &b.selection.selected {
            prop_assert!(b.change.changed_lines().any(|l| view.exec(l, t) > 0));
        }
    }

    #[test]
    fn tarantula_bounds_and_monotonicity(f in 1usize..20, p in 0usize..20, ef in 0usize..20, ep in 0usize..20) {
        let ef = ef.min(f);
        let ep = ep.min(p);
        let s = tarantula(ef, ep, f, p);
        prop_assert!((0.0..=1.0).contains(&s));
        if ef < f {
            prop_assert!(tarantula(ef + 1, ep, f, p) >= s);
        }
        if ep < p {
            prop_assert!(tarantula(ef, ep + 1, f, p) <= s);
        }
    }

    #[test]
    fn ranking_is_sorted_permutation(specs in prop::collection::vec((0usize..5, 0usize..5), 1..10)) {
        let lines: BTreeMap<LineRef, LineSpectrum> = specs
            .iter()
            .enumerate()
            .map(|(i, (ef, ep))| (LineRef::new("a.rs", i as u32 + 1, Version::V2).unwrap(), LineSpectrum { e_f: *ef, e_p: *ep }))
            .collect();
        let spectrum = Spectrum { lines: lines.clone(), failing_total: 5, passing_total: 5 };
        let r = tarantula_scores(&spectrum).unwrap();
        prop_assert_eq!(r.entries.len(), lines.len());
        for w in r.entries.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].line < w[1].line));
        }
        let ranked: BTreeSet<_> = r.entries.iter().map(|e| e.line.clone()).collect();
        prop_assert_eq!(ranked, lines.keys().cloned().collect::<BTreeSet<_>>());
    }

    #[test]
    fn coverage_json_round_trip(entries in prop::collection::btree_map((0usize..6, 0u8..3, 1u32..500), 1u64..1000, 0..30)) {
        let mut cov = CoverageMap::new(Version::V2);
        for ((t, f, l), c) in &entries {
            cov.insert(tid(*t), &format!("pkg/m{f}.rs"), *l, *c).unwrap();
        }
        let back = CoverageMap::from_json_str(&cov.to_json_string()).unwrap();
        prop_assert_eq!(back, cov);
    }

    #[test]
    fn measurement_log_round_trip(vals in prop::collection::vec((0usize..4, any::<bool>(), 0u32..5, 1e-3f64..1e9, 1e-6f64..10.0), 0..20)) {
        let log = MeasurementLog {
            records: vals
                .iter()
                .map(|(t, v2, i, e, d)| MeasurementRecord {
                    test: tid(*t),
                    version: if *v2 { Version::V2 } else { Version::V1 },
                    iteration: *i,
                    values: BTreeMap::from([(MetricKind::EnergyPkg, *e), (MetricKind::DurationSeconds, *d)]),
                    probe_id: "p".into(),
                })
                .collect(),
            plan_digest: None,
        };
        prop_assert_eq!(MeasurementLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }

    #[test]
    fn schedule_covers_every_slot_once(n in 1usize..5, reps in 1u32..5, warm in 0u32..3, block in any::<bool>()) {
        let mut plan = RunPlan::new((0..n).map(tid).collect(), ".".into(), ".".into(), "x {test_id}".into());
        plan.repetitions = reps;
        plan.warmup_runs = warm;
        plan.interleaving = if block { Interleaving::BlockPerVersion } else { Interleaving::AlternatingPairs };
        let sched = plan.schedule();
        prop_assert_eq!(sched.len(), n * 2 * (reps + warm) as usize);
        let measured: BTreeSet<_> = sched.iter().filter(|s| !s.warmup).map(|s| (s.test.clone(), s.version, s.iteration)).collect();
        prop_assert_eq!(measured.len(), n * 2 * reps as usize);
        // warmups of a (test, version) precede its measured runs
        for t in &plan.tests {
            for v in Version::BOTH {
                let kinds: Vec<bool> = sched.iter().filter(|s| &s.test == t && s.version == v).map(|s| s.warmup).collect();
                prop_assert!(kinds.windows(2).all(|w| w[0] || !w[1]));
            }
        }
    }

    #[test]
    fn generated_diffs_parse_back(edits in prop::collection::btree_set((0u8..3, 1u32..200), 1..10)) {
        let changes: Vec<joulediff::simlab::LineChange> = edits
            .iter()
            .map(|(f, l)| joulediff::simlab::LineChange { file: format!("src/f{f}.rs"), line: *l, cost_delta_uj: 0.0 })
            .collect();
        let cs = parse_unified_diff(&joulediff::simlab::diff_text(&changes)).unwrap();
        let want: BTreeSet<(String, u32)> = edits.iter().map(|(f, l)| (format!("src/f{f}.rs"), *l)).collect();
        let adds: BTreeSet<(String, u32)> = cs.additions.iter().map(|l| (l.file.clone(), l.line)).collect();
        let dels: BTreeSet<(String, u32)> = cs.deletions.iter().map(|l| (l.file.clone(), l.line)).collect();
        prop_assert_eq!(&adds, &want);
        prop_assert_eq!(&dels, &want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simlab_is_deterministic(seed in any::<u64>()) {
        let gs = joulediff::simlab::GeneratorSettings::default();
        let s = joulediff::simlab::generate_rq2_scenario(seed, &gs);
        prop_assert_eq!(s.run().unwrap(), s.run().unwrap());
    }

    #[test]
    fn reports_rederive_their_verdict(seed in any::<u64>(), noise in 0.0f64..0.2) {
        let gs = joulediff::simlab::GeneratorSettings { noise_rel: noise, ..Default::default() };
        let s = joulediff::simlab::generate_rq3_scenario(seed, &gs);
        let joulediff::simlab::Experiment::Rq3 { target, payload_uj, decoys, reps } = &s.experiment else { unreachable!() };
        let mut changes = decoys.clone();
        changes.push(joulediff::simlab::LineChange { file: target.file.clone(), line: target.line, cost_delta_uj: *payload_uj as f64 });
        let settings = joulediff::report::AnalysisSettings::default();
        let (report, _) = joulediff::simlab::simulate_change(&s.project, &changes, *reps, &settings).unwrap();
        prop_assert_eq!(report.check_consistency(), Ok(()));
        let text = report.to_canonical_json().unwrap();
        prop_assert_eq!(joulediff::report::DeltaReport::from_json(&text).unwrap(), report);
    }

    #[test]
    fn burn_is_reproducible(seed in any::<u64>(), payload in 1u64..200, quantum in 1u64..30, every in 1u64..4) {
        let mut spec = joulediff::probes::SimulatedProbeSpec::new(0, 0.0);
        spec.energy_quantum_uj = quantum;
        let cfg = joulediff::probes::ProbeConfig::simulated([MetricKind::EnergyPkg], spec);
        let a = joulediff::mutator::consume_energy(&cfg, payload, joulediff::mutator::SeedSource::FixedSeed(seed), every).unwrap();
        let b = joulediff::mutator::consume_energy(&cfg, payload, joulediff::mutator::SeedSource::FixedSeed(seed), every).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.consumed_uj >= payload && a.consumed_uj < payload + quantum);
        // reads happen at consumed = k·quantum, with `every` applications between reads
        prop_assert_eq!(a.iterations, 1 + (a.consumed_uj / quantum - 1) * every);
    }
}
