use nihrl_core::env::{TaskEnv, TaskKind, TaskSpec};
use nihrl_core::train::{evaluate_hierarchy, pretrain, tasktrain, NoMonitor, RunConfig, EVAL_SEED};
use nihrl_core::Persist;

fn tiny() -> RunConfig {
    let mut c = RunConfig::default();
    c.network.hidden = vec![16, 16];
    c.pretrain.total_samples = 2_000;
    c.pretrain.warmup_samples = 1_000;
    c.pretrain.updates_per_cycle = 5;
    c.pretrain.eval_interval = 0;
    c.tasktrain.total_samples = 2_000;
    c.tasktrain.updates_per_cycle = 5;
    c.tasktrain.eval_interval = 1_000;
    c.tasktrain.eval_episodes = 2;
    c.task = TaskSpec { horizon: 200, ..TaskSpec::of(TaskKind::Hurdles) };
    c
}

fn snapshot<P: Persist<f32>>(p: &P) -> Vec<u32> {
    p.tensors().iter().flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn pretrained_low_level_drives_task_training_unchanged() {
    let cfg = tiny();
    let pre = pretrain(&cfg, &mut NoMonitor).unwrap();
    assert_eq!(pre.samples, 2_000);
    let before = snapshot(&pre.low.agent.policy);
    let task = tasktrain(&cfg, &pre.low.agent.policy, &mut NoMonitor).unwrap();
    assert_eq!(snapshot(&pre.low.agent.policy), before);
    assert_eq!(task.metrics.iter().map(|m| m.sample_count).collect::<Vec<_>>(), [1_000, 2_000]);

    let mut env = TaskEnv::new(cfg.task.clone(), cfg.body.clone());
    let score = evaluate_hierarchy(&task.high.agent.policy, &pre.low.agent.policy, &mut env, cfg.hrl.k, 2, EVAL_SEED).unwrap();
    assert_eq!(Some(score), task.final_score);
    assert!(score >= -1.0);
}

#[test]
fn same_seed_same_run() {
    let cfg = tiny();
    let a = pretrain(&cfg, &mut NoMonitor).unwrap();
    let b = pretrain(&cfg, &mut NoMonitor).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(snapshot(&a.low.agent.critic), snapshot(&b.low.agent.critic));
}
