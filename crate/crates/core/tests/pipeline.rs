use factorgnn::checkpoint::Checkpoint;
use factorgnn::eval::TaskMetrics;
use factorgnn::network::StNetwork;
use factorgnn::pipeline::{evaluate, generate, prepare, train_model, RunConfig, PERSISTENCE};
use factorgnn::TaskId;

fn small(seed: u64, epochs: usize) -> RunConfig {
    let text = format!(
        "seed = {seed}\nepochs = {epochs}\nn_series = 4\nn_times = 600\nblocks = 2\nshift_spacing = 40,60\n\
         input_len = 16\nwindows = 5,10,20\nstride = 4\ntest_stride = 4\nchannels = 4\nfeature_dim = 6\n\
         head_hidden = 5\nattn_dim = 4\nbatch_size = 8\n"
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn validation_pf_loss_does_not_rise_early() {
    let seeds = 10;
    let mut settled = 0;
    for seed in 0..seeds {
        let cfg = small(seed, 5);
        let (raw, _) = generate(&cfg).unwrap();
        let data = prepare(&raw, &cfg, None).unwrap();
        let (_, report) = train_model(&cfg, &data, None).unwrap();
        let val: Vec<f64> = report.log.iter().filter(|r| r.task == TaskId::Pf).map(|r| r.val_metric).collect();
        assert_eq!(val.len(), 5);
        assert!(val.iter().all(|v| v.is_finite()), "{val:?}");
        if val.windows(2).all(|w| w[1] <= w[0]) {
            settled += 1;
        }
    }
    assert!(settled * 10 >= 8 * seeds, "{settled}/{seeds} runs nonincreasing");
}

#[test]
fn checkpoint_bytes_reproduce_metrics() {
    let cfg = small(3, 2);
    let (raw, _) = generate(&cfg).unwrap();
    let data = prepare(&raw, &cfg, None).unwrap();
    let (ckpt, _) = train_model(&cfg, &data, None).unwrap();
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert_eq!(back, ckpt);
    let score = |c: &Checkpoint| {
        let net = StNetwork::from_params(c.network.clone(), c.params.clone()).unwrap();
        evaluate(&net, &data).unwrap()
    };
    assert_eq!(score(&back), score(&ckpt));

    // Reusing the stored statistics rebuilds identical samples.
    let again = prepare(&raw, &cfg, Some(&back.normalization)).unwrap();
    assert_eq!(again.samples, data.samples);
}

#[test]
fn resumed_training_continues_from_checkpoint() {
    let cfg = small(4, 1);
    let (raw, _) = generate(&cfg).unwrap();
    let data = prepare(&raw, &cfg, None).unwrap();
    let (first, _) = train_model(&cfg, &data, None).unwrap();
    let (second, report) = train_model(&cfg, &data, Some(first.clone())).unwrap();
    assert_eq!(report.epochs_run, 1);
    assert_ne!(second.params, first.params);
    assert_eq!(second.network, first.network);
    assert!(TaskId::ALL.iter().all(|t| second.state.records.contains_key(t)));
}

#[test]
fn untrained_model_matches_persistence() {
    let cfg = small(5, 0);
    let (raw, _) = generate(&cfg).unwrap();
    let data = prepare(&raw, &cfg, None).unwrap();
    let (ckpt, _) = train_model(&cfg, &data, None).unwrap();
    let net = StNetwork::from_params(ckpt.network, ckpt.params).unwrap();
    let report = evaluate(&net, &data).unwrap();
    let mae = |label: &str| match &report.rows[label] {
        TaskMetrics::Regression(m) => m.mae,
        TaskMetrics::Classification(_) => panic!("{label} is a regression row"),
    };
    assert_eq!(mae("pf"), mae(PERSISTENCE));
}
