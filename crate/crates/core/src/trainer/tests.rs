use super::*;

fn tiny(suite: &str) -> ExperimentConfig {
    let text = format!(
        "suite = {suite}
budget.N = 400
budget.steps_per_iteration = 100
budget.train_ratio = 0.05
budget.prefill_steps = 100
eval.interval = 200
eval.episodes = 2
eval.random_episodes = 20
replay.fifo_steps = 128
replay.ltdm_chunks = 4
replay.chunk_size = 32
replay.batch_size = 4
replay.batch_length = 8
wm.deter = 16
wm.stoch_units = 4
wm.stoch_classes = 4
wm.embed = 16
wm.hidden = 16
wm.layers = 1
agent.hidden = 16
agent.layers = 1
agent.horizon = 5
agent.dream_starts = 8
"
    );
    ExperimentConfig::from_text(&text).unwrap()
}

#[test]
fn config_text_round_trips() {
    let mut cfg = tiny("distinct4");
    cfg.set("reward_scale.chain", "0.1").unwrap();
    cfg.set("reward_scale.bandit", "0.001").unwrap();
    cfg.set("reward_scale.keydoor", "1").unwrap();
    cfg.set("reward_scale.goalgrid", "2").unwrap();
    cfg.set("task_order", "3,2,1,0").unwrap();
    let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    back.validate().unwrap();
    assert_eq!(back.tasks().unwrap()[0].label, "goalgrid");
}

#[test]
fn config_rejects_bad_input() {
    assert_eq!(
        ExperimentConfig::from_text("budget.M = 3"),
        Err(ConfigError::UnknownKey("budget.M".into()))
    );
    assert_eq!(
        ExperimentConfig::from_text("suite = a\nsuite = b"),
        Err(ConfigError::Duplicate("suite".into()))
    );
    assert!(matches!(
        ExperimentConfig::from_text("# comment\n\njust words"),
        Err(ConfigError::Syntax { line: 3, .. })
    ));
    assert!(matches!(
        ExperimentConfig::from_text("budget.N = many"),
        Err(ConfigError::Value { .. })
    ));
    assert!(matches!(
        ExperimentConfig::from_text("mode = greedy"),
        Err(ConfigError::Value { .. })
    ));
    assert!(matches!(
        ExperimentConfig::from_text("reward_scale.chain = -1"),
        Err(ConfigError::Value { .. })
    ));

    let invalid = |k: &str, v: &str| {
        let mut c = tiny("distinct4");
        c.set(k, v).unwrap();
        matches!(c.validate(), Err(ConfigError::Invalid(_)))
    };
    assert!(invalid("budget.N", "450"));
    assert!(invalid("replay.batch_length", "33"));
    assert!(invalid("task_order", "0,1,1,2"));
    assert!(invalid("suite", "atari"));
    assert!(invalid("reward_scale.chain", "0.5"));
    assert!(invalid("seeds", ""));
    assert!(invalid("agent.gamma", "1.5"));
    assert!(invalid("replay.fifo_steps", "16"));
}

#[test]
fn experiment_hash_tracks_comparable_settings() {
    let a = tiny("shared4");
    let mut b = a.clone();
    b.set("mode", "fifo_only").unwrap();
    b.set("seeds", "9").unwrap();
    b.set("output", "elsewhere").unwrap();
    assert_eq!(a.experiment_hash(), b.experiment_hash());
    b.set("budget.N", "800").unwrap();
    assert_ne!(a.experiment_hash(), b.experiment_hash());
}

#[test]
fn zero_iterations_give_initial_evaluations_only() {
    let mut cfg = tiny("distinct4");
    cfg.set("budget.N", "0").unwrap();
    let rec = run_continual(&cfg, 3).unwrap();
    assert_eq!(rec.rows.len(), 4);
    assert!(rec.rows.iter().all(|r| r.global_step == 0));
    assert_eq!(rec.steps_per_task, vec![0; 4]);
    assert!(rec.losses.is_empty());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let cfg = tiny("distinct4");
    let a = run_continual(&cfg, 5).unwrap();
    let b = run_continual(&cfg, 5).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.losses, b.losses);
    let c = run_continual(&cfg, 6).unwrap();
    assert!(a.losses != c.losses);
}

#[test]
fn step_and_chunk_accounting_is_exact() {
    let cfg = tiny("distinct4");
    for mode in [Mode::Wmar, Mode::FifoOnly] {
        let rec = run_mode(&cfg, mode, 1, &RunOptions::default()).unwrap();
        assert_eq!(rec.steps_per_task, vec![400; 4]);
        let acc = &rec.accounting;
        assert_eq!(acc.steps_collected, 1600);
        assert_eq!(acc.chunks_emitted * 32 + acc.steps_in_carry, acc.steps_collected);
        assert_eq!(acc.memory_checks, acc.chunks_emitted);
        assert!(acc.peak_stored_steps <= acc.memory_bound);
        assert_eq!(acc.memory_bound, 128 + 4 * 32);
        match mode {
            Mode::Wmar => assert_eq!(acc.chunks_offered_long_term, acc.chunks_emitted),
            _ => assert_eq!(acc.chunks_offered_long_term, 0),
        }
    }
}

#[test]
fn evaluation_covers_every_task_at_every_point() {
    let cfg = tiny("distinct4");
    let rec = run_continual(&cfg, 2).unwrap();
    let steps: Vec<u64> = rec.rows.iter().step_by(4).map(|r| r.global_step).collect();
    assert_eq!(steps, (0..=8).map(|i| i * 200).collect::<Vec<_>>());
    for chunk in rec.rows.chunks(4) {
        let labels: Vec<&str> = chunk.iter().map(|r| r.eval_task.as_str()).collect();
        assert_eq!(labels, ["chain", "bandit", "keydoor", "goalgrid"]);
        assert!(chunk.iter().all(|r| r.global_step == chunk[0].global_step));
    }
    let trained: Vec<&str> = rec.rows.iter().step_by(4).map(|r| r.task_trained.as_str()).collect();
    assert_eq!(
        trained,
        ["chain", "chain", "chain", "bandit", "bandit", "keydoor", "keydoor", "goalgrid", "goalgrid"]
    );
    let curves = rec.curves().unwrap();
    assert_eq!(curves.len(), 4);
}

#[test]
fn single_task_equals_one_task_suite() {
    let suite = tiny("shared4");
    let one = tiny("shared4[2]");
    let a = run_single_task(&suite, 2, 4).unwrap();
    let b = run_continual(&one, 4).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.mode, Mode::SingleTask);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let mut cfg = tiny("distinct4");
    cfg.set("run.checkpoint_every", "1").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = run_continual(&cfg, 8).unwrap();

    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after_iterations: Some(6),
    };
    let tasks = cfg.tasks().unwrap();
    let mut t = Trainer::new(&cfg, Mode::Wmar, tasks.clone(), tasks, 8).unwrap();
    assert!(t.run(&opts).unwrap().is_none());
    drop(t);
    let mut resumed = Trainer::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(resumed.global_step(), 600);
    let rec = resumed.run(&RunOptions::default()).unwrap().unwrap();
    assert_eq!(rec.rows, full.rows);
    assert_eq!(rec.losses, full.losses);
    assert_eq!(rec.accounting, full.accounting);

    let tasks = cfg.tasks().unwrap();
    let mut straight = Trainer::new(&cfg, Mode::Wmar, tasks.clone(), tasks, 8).unwrap();
    straight.run(&RunOptions::default()).unwrap();
    assert_eq!(resumed.world_model().to_bytes().unwrap(), straight.world_model().to_bytes().unwrap());
    assert_eq!(resumed.agent().to_bytes().unwrap(), straight.agent().to_bytes().unwrap());
}

#[test]
fn non_finite_loss_aborts_with_crash_checkpoint() {
    let mut cfg = tiny("distinct4");
    for (l, s) in [("chain", "1"), ("bandit", "1e300"), ("keydoor", "1"), ("goalgrid", "1")] {
        cfg.set(&format!("reward_scale.{l}"), s).unwrap();
    }
    cfg.set("task_order", "1,0,2,3").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after_iterations: None,
    };
    match run_continual_with(&cfg, 0, &opts) {
        Err(TrainerError::NonFinite {
            checkpoint: Some(path), ..
        }) => {
            let t = Trainer::load(&path).unwrap();
            assert!(t.global_step() > 0);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn ablation_memory_matches_wmar() {
    let cfg = tiny("shared4");
    let tasks = cfg.tasks().unwrap();
    let w = Trainer::new(&cfg, Mode::Wmar, tasks.clone(), tasks.clone(), 0).unwrap();
    let f = Trainer::new(&cfg, Mode::FifoOnly, tasks.clone(), tasks, 0).unwrap();
    assert_eq!(w.buffer().memory_bound(), f.buffer().memory_bound());
    assert_eq!(f.buffer().fifo.capacity_steps(), 2 * cfg.replay.fifo_steps);
    assert_eq!(f.buffer().ltdm.capacity_chunks(), 0);
}

#[test]
fn random_baseline_rows() {
    let cfg = tiny("distinct4");
    let a = run_random(&cfg, 0).unwrap();
    assert_eq!(a.rows.len(), 4);
    assert!(a.rows.iter().all(|r| r.global_step == 0 && r.task_trained == r.eval_task));
    assert_eq!(a.rows, run_random(&cfg, 0).unwrap().rows);
    // 20 random episodes on the ×100 bandit average well above zero
    assert!(a.rows[1].episodic_reward > 100.0);
}

#[test]
fn seeds_run_in_parallel_in_order() {
    let out = run_seeds(&[5, 1, 9, 3], 3, |s| s * 2);
    assert_eq!(out, vec![10, 2, 18, 6]);
    assert!(run_seeds(&[], 2, |s| s).is_empty());
}
