use hamlearn_autodiff::{AdamState, Checkpoint, ParamStore, Tape};
use hamlearn_core::query::generate_dataset;
use hamlearn_core::{DatasetEntry, HamiltonianModel, QueryGrid, StateVector};
use hamlearn_learners::losses::amps_to_columns;
use hamlearn_learners::nnqs::{preps_from_dataset, NnqsEnsemble};
use hamlearn_learners::{
    build_spin_chain, ipinn_train, shots_for, standard_settings, IpinnTrainer, LrSchedule,
    SpinChainSpec, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn task(dt: f64) -> (HamiltonianModel, [f64; 2], Vec<DatasetEntry>) {
    let spec = SpinChainSpec::uniform(2, 1.0, 0.5);
    let model = build_spin_chain(&spec).unwrap();
    let truth = [1.0, 0.5];
    let settings = standard_settings(2).unwrap();
    let times = QueryGrid::uniform_times(dt, 1.0);
    let shots = shots_for(10_000, settings.len(), times.len());
    let grid = QueryGrid::new(settings, times, shots).unwrap();
    let dataset = generate_dataset(&model, None, &grid, 101).unwrap();
    (model, truth, dataset)
}

struct Knobs {
    dt: f64,
    epochs: usize,
    lr: f64,
    warmup: usize,
    p_points: usize,
    anneal: bool,
}

fn scratch(seeds: &[u64], k: &Knobs) {
    let (model, truth, dataset) = task(k.dt);
    for &seed in seeds {
        let cfg = TrainConfig {
            epochs: k.epochs,
            lr: k.lr,
            hidden: vec![32, 32],
            seed,
            physics_warmup: k.warmup,
            p_points: k.p_points,
            lr_schedule: if k.anneal {
                LrSchedule::CosineTo(0.05)
            } else {
                LrSchedule::Constant
            },
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        let r = ipinn_train(&model, &dataset, &cfg, Some(&truth), None).unwrap();
        for row in r.trace.iter().step_by(k.epochs / 10) {
            println!(
                "  ep {:>5}: Ld {:+.4} Lp {:8.4} Li {:.4} theta=({:+.4},{:+.4}) mse {:.2e}",
                row.epoch,
                row.l_data,
                row.l_physics,
                row.l_initial,
                row.params[0],
                row.params[1],
                row.mse.unwrap()
            );
        }
        println!(
            "seed {seed}: theta=({:+.4},{:+.4}) mse={:.2e} wall={:.0?}",
            r.theta_hat[0],
            r.theta_hat[1],
            r.final_mse.unwrap(),
            start.elapsed()
        );
    }
}

fn stability(k: &Knobs) {
    let (model, truth, dataset) = task(k.dt);
    let cfg = TrainConfig {
        epochs: k.epochs,
        lr: k.lr,
        hidden: vec![32, 32],
        seed: 1,
        physics_warmup: 0,
        p_points: k.p_points,
        lr_schedule: if k.anneal {
            LrSchedule::CosineTo(0.05)
        } else {
            LrSchedule::Constant
        },
        ..TrainConfig::default()
    };

    // Stability probe: pretrain the ensemble to the exact evolved
    // amplitudes (supervised), set theta to the truth, then let the real
    // objective take over and watch whether it holds or walks away.
    let preps = preps_from_dataset(&dataset);
    let mut trainer = IpinnTrainer::new(&model, preps.clone(), cfg.clone()).unwrap();
    let ck = trainer.checkpoint();

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ensemble = NnqsEnsemble::build(
        &model,
        preps.clone(),
        &cfg.hidden,
        cfg.t_max,
        None,
        cfg.theta_box,
        &mut store,
        &mut rng,
    )
    .unwrap();
    assert_eq!(store.len(), ck.store.len());

    let zero = StateVector::zero_state(2).unwrap();
    let dense_times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
    let mut targets = Vec::new();
    for prep in &preps {
        let psi0 = prep.apply(&zero).unwrap();
        let mut amps = Vec::new();
        for &t in &dense_times {
            amps.extend_from_slice(model.evolve(&psi0, t).unwrap().amplitudes());
        }
        targets.push(amps_to_columns(&amps));
    }

    let mut adam = AdamState::with_hyperparams(store.len(), 3e-3, 0.9, 0.999, 1e-8);
    for epoch in 0..4_000 {
        let mut tape = Tape::new();
        let mut loss = None;
        for (l, target) in targets.iter().enumerate() {
            let psi = ensemble
                .forward_collocation(&mut tape, &store, l, &dense_times)
                .unwrap();
            let tgt = tape.constant(target.clone());
            let diff = tape.sub(psi, tgt);
            let sq = tape.abs_sq_rows(diff);
            let s = tape.sum(sq);
            loss = Some(match loss {
                Some(acc) => tape.add(acc, s),
                None => s,
            });
        }
        let loss = loss.unwrap();
        if epoch % 2_000 == 0 {
            println!("pretrain ep {epoch}: L2 {:.6}", tape.scalar_value(loss));
        }
        let grads = tape.backward(loss, store.len()).unwrap();
        adam.step(store.data_mut(), &grads).unwrap();
    }

    store.data_mut()[0] = truth[0];
    store.data_mut()[1] = truth[1];

    let injected = Checkpoint {
        store,
        adam: AdamState::with_hyperparams(ck.store.len(), cfg.lr, 0.9, 0.999, 1e-8),
        rng_seed: ck.rng_seed,
        rng_stream: ck.rng_stream,
        rng_word_pos: ck.rng_word_pos,
        epoch: 0,
    };
    trainer.restore(&injected).unwrap();
    let trace = trainer
        .train_on(&dataset, cfg.epochs, Some(&truth), None)
        .unwrap();
    for row in trace.iter().step_by(cfg.epochs / 10) {
        println!(
            "ep {:>5}: Ld {:+.4} Lp {:.4} Li {:.4} theta=({:+.4},{:+.4}) mse {:.2e}",
            row.epoch,
            row.l_data,
            row.l_physics,
            row.l_initial,
            row.params[0],
            row.params[1],
            row.mse.unwrap()
        );
    }
    let last = trace.last().unwrap();
    println!(
        "held at truth? theta=({:+.4},{:+.4}) mse={:.2e}",
        last.params[0],
        last.params[1],
        last.mse.unwrap()
    );
}

// Does negating the theta init flip which basin a probe reaches?
fn basin(k: &Knobs) {
    let (model, truth, dataset) = task(k.dt);
    let preps = preps_from_dataset(&dataset);
    for master in [1u64, 2, 3] {
        for r in 0..5u64 {
            let cfg = TrainConfig {
                epochs: k.epochs,
                lr: k.lr,
                hidden: vec![32, 32],
                seed: master + 1_000 * r,
                physics_warmup: k.warmup,
                p_points: k.p_points,
                lr_schedule: LrSchedule::Constant,
                ..TrainConfig::default()
            };
            for negate in [false, true] {
                let mut trainer = IpinnTrainer::new(&model, preps.clone(), cfg.clone()).unwrap();
                if negate {
                    let mut ck = trainer.checkpoint();
                    for slot in 0..2 {
                        ck.store.data_mut()[slot] = -ck.store.data_mut()[slot];
                    }
                    trainer.restore(&ck).unwrap();
                }
                let trace = trainer
                    .train_on(&dataset, k.epochs, Some(&truth), None)
                    .unwrap();
                let tail = &trace[trace.len() - 100..];
                let ld = tail.iter().map(|r| r.l_data).sum::<f64>() / 100.0;
                let li = tail.iter().map(|r| r.l_initial).sum::<f64>() / 100.0;
                let last = trace.last().unwrap();
                println!(
                    "master {master} probe {r} neg={negate:<5} theta=({:+.3},{:+.3}) \
                     Ld {ld:.4} Li {li:.4} mse {:.2e}",
                    last.params[0],
                    last.params[1],
                    last.mse.unwrap()
                );
            }
        }
        println!();
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let knobs = Knobs {
        dt: args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1),
        epochs: args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3_000),
        lr: args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3e-3),
        warmup: args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1_500),
        p_points: args.get(6).map(|s| s.parse().unwrap()).unwrap_or(50),
        anneal: args.get(7).map(|s| s == "anneal").unwrap_or(false),
    };
    match args.get(1).map(String::as_str) {
        Some("stability") => stability(&knobs),
        Some("scratch") => scratch(&[1, 2, 3], &knobs),
        Some("basin") => basin(&knobs),
        other => {
            panic!("usage: tune stability|scratch|basin DT EPOCHS LR WARMUP P [anneal], got {other:?}")
        }
    }
}
