use std::collections::BTreeSet;

use neglect_core::assessment::{resume, run_assessment, EngineError, EventKind, Phase, Response, ResponderError, Selection, StopReason};
use neglect_core::domain::{Acquisition, FovPoint, Mode, SpawnLayout, SpawnPoint};
use neglect_core::gp::{GpModel, Hyperparams};
use neglect_core::store::SessionStore;
use neglect_core::subject_sim::{NeglectField, SimulatedSubject};
use neglect_core::{Responder, SessionConfig, SessionState, StopRule};

fn budget_config(n: usize, seed: u64) -> SessionConfig {
    SessionConfig { n_stimuli: n, stop: StopRule::FixedBudget { budget: n }, seed, ..Default::default() }
}

fn subject(config: &SessionConfig) -> SimulatedSubject {
    SimulatedSubject::new(NeglectField::hemifield(0.0, 0.9), config.t_max_s, config.difficulty, config.seed)
}

/// Fails on trial `fail_at`, otherwise defers to a simulated subject.
struct Flaky {
    inner: SimulatedSubject,
    fail_at: usize,
}

impl Responder for Flaky {
    fn respond(&mut self, spawn: &SpawnPoint, trial: usize) -> Result<Response, ResponderError> {
        if trial == self.fail_at {
            return Err(ResponderError("headset removed".into()));
        }
        self.inner.respond(spawn, trial)
    }
}

fn ids(s: &SessionState) -> Vec<u32> {
    s.measurements.iter().map(|m| m.spawn_id).collect()
}

#[test]
fn fixed_budget_yields_exact_count() {
    let cfg = budget_config(12, 3);
    let s = run_assessment(cfg.clone(), &mut subject(&cfg)).unwrap();
    assert_eq!(s.measurements.len(), 12);
    assert_eq!(ids(&s).into_iter().collect::<BTreeSet<_>>().len(), 12);
    assert_eq!(s.phase, Phase::Finished { reason: StopReason::Budget });
    assert_eq!(s.model.as_ref().unwrap().len(), 12);
}

#[test]
fn exhausting_the_layout_stops() {
    let cfg = SessionConfig { layout: SpawnLayout { cols: 4, rows: 3, jitter_frac: 0.1 }, ..budget_config(20, 8) };
    let s = run_assessment(cfg.clone(), &mut subject(&cfg)).unwrap();
    assert_eq!(s.measurements.len(), 12);
    assert_eq!(s.phase, Phase::Finished { reason: StopReason::Exhausted });
}

#[test]
fn identical_inputs_give_identical_sessions() {
    for acquisition in [Acquisition::Us, Acquisition::Ivr] {
        let cfg = SessionConfig { acquisition, ..budget_config(20, 41) };
        let a = run_assessment(cfg.clone(), &mut subject(&cfg)).unwrap();
        let b = run_assessment(cfg.clone(), &mut subject(&cfg)).unwrap();
        assert_eq!(a.to_json(true), b.to_json(true));
        let other = run_assessment(SessionConfig { seed: 42, ..cfg.clone() }, &mut subject(&cfg)).unwrap();
        assert_ne!(ids(&a), ids(&other));
    }
}

#[test]
fn interrupted_session_resumes_to_the_same_measurements() {
    let cfg = budget_config(25, 99);
    let reference = run_assessment(cfg.clone(), &mut subject(&cfg)).unwrap();
    for k in [0, 3, 5, 11, 24] {
        let err = run_assessment(cfg.clone(), &mut Flaky { inner: subject(&cfg), fail_at: k }).unwrap_err();
        let EngineError::Interrupted { state, .. } = err else { panic!("expected interruption") };
        assert_eq!(state.measurements.len(), k);
        assert_eq!(state.phase, Phase::Idle);
        // Persist and reload between the two halves.
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        store.commit(&state, 0).unwrap();
        let loaded = store.load(&state.session_id).unwrap();
        let done = resume(loaded, &mut subject(&cfg)).unwrap();
        assert_eq!(done.measurements, reference.measurements, "interrupted at {k}");
        assert_eq!(done.model, reference.model);
        assert!(done.events.windows(2).all(|w| w[0].wall_ms <= w[1].wall_ms && w[0].seq + 1 == w[1].seq));
    }
}

#[test]
fn resume_guards() {
    let cfg = budget_config(8, 1);
    let err = run_assessment(cfg.clone(), &mut Flaky { inner: subject(&cfg), fail_at: 6 }).unwrap_err();
    let EngineError::Interrupted { state, .. } = err else { panic!() };
    let mut tampered = (*state).clone();
    tampered.config.t_max_s = 20.0;
    assert!(matches!(resume(tampered, &mut subject(&cfg)), Err(EngineError::ConfigMismatch { .. })));

    // A state whose budget is already spent finishes without new trials.
    let mut spent = (*state).clone();
    let mut step = subject(&cfg);
    while spent.measurements.len() < 8 {
        let sp = spent.next_stimulus(0).unwrap().unwrap();
        let r = step.respond(&sp, spent.measurements.len()).unwrap();
        spent.submit_response(sp.id, r.raw_time_s, r.found, 0).unwrap();
    }
    assert!(spent.is_finished());
    let mut idle = spent.clone();
    idle.phase = Phase::Idle;
    let done = resume(idle, &mut Flaky { inner: subject(&cfg), fail_at: 0 }).unwrap();
    assert_eq!(done.measurements.len(), 8);
    assert!(done.is_finished());
    assert!(matches!(resume(spent, &mut subject(&cfg)), Err(EngineError::AlreadyFinished)));
}

#[test]
fn warmup_trials_are_logged_but_not_fitted() {
    let cfg = SessionConfig { warmup_trials: 3, ..budget_config(15, 12) };
    let s = run_assessment(cfg.clone(), &mut subject(&cfg)).unwrap();
    assert_eq!(s.measurements.len(), 15);
    assert!(s.measurements[..3].iter().all(|m| m.warmup));
    assert!(s.measurements[3..].iter().all(|m| !m.warmup));
    assert_eq!(s.model.as_ref().unwrap().len(), 12);
    let shown: Vec<Selection> = s
        .events
        .iter()
        .filter_map(|e| match e.event {
            EventKind::StimulusShown { selection, .. } => Some(selection),
            _ => None,
        })
        .collect();
    assert_eq!(&shown[..3], &[Selection::Warmup; 3]);
    assert_eq!(&shown[3..8], &[Selection::Initial; 5]);
    assert!(shown[8..].iter().all(|&s| s == Selection::Acquired));
}

#[test]
fn model_exists_from_the_initial_design_on() {
    let cfg = budget_config(10, 2);
    let mut s = SessionState::new("m", cfg.clone()).unwrap();
    let sub = subject(&cfg);
    while let Some(sp) = s.next_stimulus(0).unwrap() {
        let m = sub.measure(&sp, s.measurements.len());
        s.submit_response(sp.id, m.raw_time_s, m.found, 0).unwrap();
        assert_eq!(s.model.is_some(), s.measurements.len() >= cfg.n_init);
    }
    let refits: Vec<(usize, bool)> = s
        .events
        .iter()
        .filter_map(|e| match e.event {
            EventKind::Refit { n, reoptimized, .. } => Some((n, reoptimized)),
            _ => None,
        })
        .collect();
    assert_eq!(refits.first(), Some(&(5, true)));
    assert_eq!(refits.len(), 6);
}

#[test]
fn convergence_rule_stops_on_a_flat_field() {
    let cfg = SessionConfig { n_stimuli: 80, stop: StopRule::convergence(), seed: 6, ..Default::default() };
    let mut sub = SimulatedSubject::new(NeglectField { noise_cv: 0.05, ..NeglectField::uniform(4.0) }, 30.0, 0, 6);
    let s = run_assessment(cfg, &mut sub).unwrap();
    assert_eq!(s.phase, Phase::Finished { reason: StopReason::Converged });
    assert!(s.measurements.len() < 80);
    assert_eq!(s.snapshots.len(), 3);
}

#[test]
fn treatment_session_cues_near_the_border() {
    // A model that is slow left of zero and fast to the right.
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..21 {
        for j in 0..7 {
            let p = FovPoint::new(-50.0 + 5.0 * i as f64, -27.0 + 9.0 * j as f64);
            y.push(if p.azimuth_deg < 0.0 { 0.9 } else { 0.1 });
            x.push(p);
        }
    }
    let model = GpModel::with_hyperparams(x, &y, Hyperparams::new(0.2, 6.0, 1e-3).unwrap()).unwrap();
    let cfg = SessionConfig { mode: Mode::Treatment, ..budget_config(12, 4) };
    let mut s = SessionState::new_treatment("t1", cfg.clone(), model.clone(), "assess-1").unwrap();
    let mut sub = subject(&cfg);
    let mut shown = Vec::new();
    while let Some(sp) = s.next_stimulus(0).unwrap() {
        assert!(s.border.as_ref().unwrap().distance_to(&sp.pos) <= cfg.treatment.band_deg);
        let window: Vec<u32> = shown.iter().rev().take(cfg.treatment.history_window).copied().collect();
        assert!(!window.contains(&sp.id));
        shown.push(sp.id);
        let r = sub.respond(&sp, s.measurements.len()).unwrap();
        s.submit_response(sp.id, r.raw_time_s, r.found, 0).unwrap();
    }
    assert_eq!(s.measurements.len(), 12);
    // Treatment never refits.
    assert_eq!(s.model.as_ref(), Some(&model));
}

#[test]
fn uncertainty_sampling_matches_random_on_a_hemifield() {
    use neglect_core::benchmark::{run_benchmark, BenchmarkSpec, Strategy};
    let field = NeglectField::hemifield(0.0, 0.9);
    let base = SessionConfig { layout: SpawnLayout { cols: 20, rows: 10, jitter_frac: 0.25 }, ..SessionConfig::default() };
    let seeds: Vec<u64> = (0..50).collect();
    let spec = BenchmarkSpec {
        profiles: vec![("hemifield".into(), field)],
        strategies: vec![Strategy::Us, Strategy::Random],
        budgets: vec![40],
        seeds: seeds.clone(),
        base,
    };
    let rows = run_benchmark(&spec).unwrap();
    let rmse = |st: Strategy, seed: u64| rows.iter().find(|r| r.strategy == st && r.seed == seed).unwrap().rmse;
    let wins = seeds.iter().filter(|&&s| rmse(Strategy::Us, s) <= rmse(Strategy::Random, s)).count();
    assert!(wins >= 40, "US beat random in {wins}/50 seeds");
}
