use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spiking_gamma::kernel::{impulse_response, rescale_for_timestep, superpose, KernelConfig};
use spiking_gamma::learning::gradcheck::random_case;
use spiking_gamma::learning::{GradientBuffers, Optimizer, OptimizerConfig};
use spiking_gamma::network::{BucketLayout, NormKind};
use spiking_gamma::runtime::{Checkpoint, RunConfig, TaskConfig};
use spiking_gamma::sigma_delta::{
    encode_step, reconstruct_at_receiver, SigmaDeltaState, SpikeMode, SpikeReceiver, ThresholdConfig,
};

fn alphas_strategy() -> impl Strategy<Value = Vec<f64>> {
    (1usize..=12, 0.01f64..1.0).prop_map(|(k, f)| KernelConfig::new(k, f).alphas().unwrap())
}

fn spikes_strategy(horizon: usize) -> impl Strategy<Value = Vec<(usize, f64)>> {
    proptest::collection::btree_map(0..horizon, 0.0f64..3.0, 0..20).prop_map(|m| m.into_iter().collect())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_response_is_linear(
        alphas in alphas_strategy(),
        a in spikes_strategy(200),
        b in spikes_strategy(200),
        ca in -2.0f64..2.0,
        cb in -2.0f64..2.0,
    ) {
        let table = impulse_response(&alphas, 200).unwrap();
        let mut mixed: Vec<(usize, f64)> = a.iter().map(|&(t, m)| (t, ca * m))
            .chain(b.iter().map(|&(t, m)| (t, cb * m)))
            .collect();
        mixed.sort_by_key(|s| s.0);
        let t = 199;
        let lhs = superpose(&table, &mixed, t).unwrap();
        let ra = superpose(&table, &a, t).unwrap();
        let rb = superpose(&table, &b, t).unwrap();
        let rhs: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| ca * x + cb * y).collect();
        prop_assert!(max_diff(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn kernel_response_is_time_invariant(
        alphas in alphas_strategy(),
        spikes in spikes_strategy(100),
        shift in 1usize..100,
    ) {
        let table = impulse_response(&alphas, 200).unwrap();
        let shifted: Vec<(usize, f64)> = spikes.iter().map(|&(t, m)| (t + shift, m)).collect();
        for t in [100, 150, 199 - shift] {
            let a = superpose(&table, &spikes, t).unwrap();
            let b = superpose(&table, &shifted, t + shift).unwrap();
            prop_assert!(max_diff(&a, &b) <= 1e-12);
        }
    }

    #[test]
    fn rescaling_composes(alphas in alphas_strategy(), r1 in 0.1f64..8.0, r2 in 0.1f64..8.0) {
        let twice = rescale_for_timestep(&rescale_for_timestep(&alphas, r1).unwrap(), r2).unwrap();
        let once = rescale_for_timestep(&alphas, r1 * r2).unwrap();
        prop_assert!(max_diff(&twice, &once) <= 1e-12);
        let back = rescale_for_timestep(&rescale_for_timestep(&alphas, r1).unwrap(), 1.0 / r1).unwrap();
        prop_assert!(max_diff(&back, &alphas) <= 1e-12);
    }

    /// Both receiver modes rebuild the sender's buckets exactly.
    #[test]
    fn receivers_track_the_encoder(
        alphas in alphas_strategy(),
        signal in proptest::collection::vec(0.0f64..5.0, 1..300),
        theta0 in 0.05f64..1.0,
        mf in 0.0f64..0.5,
    ) {
        let cfg = ThresholdConfig { theta0, mf };
        let mut sender = SigmaDeltaState::new(alphas.clone());
        let mut graded = SpikeReceiver::new(alphas.len(), SpikeMode::Graded, cfg);
        let mut binary = SpikeReceiver::new(alphas.len(), SpikeMode::Binary, cfg);
        let mut spikes = Vec::new();
        for (t, &y) in signal.iter().enumerate() {
            let e = encode_step(y, &mut sender, &cfg);
            let event = e.spike.then_some(e.magnitude);
            graded.receive(event, &alphas);
            binary.receive(event, &alphas);
            if e.spike {
                spikes.push((t, e.magnitude));
            }
            prop_assert_eq!(graded.buckets(), sender.buckets().values());
            prop_assert!(max_diff(binary.buckets(), sender.buckets().values()) <= 1e-12);
        }
        let rebuilt = reconstruct_at_receiver(&spikes, &alphas, signal.len() - 1).unwrap();
        prop_assert_eq!(rebuilt.as_slice(), sender.buckets().values());
    }

    #[test]
    fn config_round_trips_through_toml(
        hidden in proptest::collection::vec(1usize..512, 0..4),
        buckets in 1usize..64,
        rate_factor in 0.0f64..1.0,
        theta0 in 0.01f64..1.0,
        lr in 1e-6f64..1.0,
        epochs in 0usize..1000,
        seed in any::<u64>(),
        time_scale in 1usize..8,
    ) {
        let mut cfg = RunConfig::from_toml_str("[task]\nkind = \"coincidence\"\n").unwrap();
        cfg.model.hidden = hidden;
        cfg.model.buckets = buckets;
        cfg.model.rate_factor = rate_factor;
        cfg.model.theta0 = theta0;
        cfg.training.lr = lr;
        cfg.training.epochs = epochs;
        cfg.training.seed = seed;
        if let TaskConfig::Coincidence(t) = &mut cfg.task {
            t.time_scale = time_scale;
        }
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trips_bit_exactly(seed in any::<u64>(), per_synapse in any::<bool>(), steps in 0usize..4) {
        let layout = if per_synapse { BucketLayout::PerSynapse } else { BucketLayout::PerNeuron };
        let mut net = random_case(seed, layout, NormKind::Layer).unwrap().net;
        let mut optimizer = Optimizer::new(OptimizerConfig::default(), &net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            let mut grads = GradientBuffers::zeros_like(&net);
            for layer in &mut grads.layers {
                for group in layer.groups_mut() {
                    group.iter_mut().for_each(|g| *g = rng.random_range(-1.0..1.0));
                }
            }
            optimizer.step(&mut net, &grads, 0);
        }
        let ck = Checkpoint {
            config: RunConfig::from_toml_str("[task]\nkind = \"delay\"\n").unwrap(),
            net,
            optimizer,
            epoch: steps,
            seed,
            peak_test_accuracy: None,
        };
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = Checkpoint::read(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back.net, &ck.net);
        prop_assert_eq!(&back.optimizer, &ck.optimizer);
        prop_assert_eq!(back.epoch, ck.epoch);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let net = random_case(3, BucketLayout::PerNeuron, NormKind::None).unwrap().net;
    let ck = Checkpoint {
        config: RunConfig::from_toml_str("[task]\nkind = \"delay\"\n").unwrap(),
        optimizer: Optimizer::new(OptimizerConfig::default(), &net).unwrap(),
        net,
        epoch: 0,
        seed: 0,
        peak_test_accuracy: None,
    };
    let mut bytes = Vec::new();
    ck.write(&mut bytes).unwrap();
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::read(&bytes[..cut]).is_err(), "accepted {cut} of {} bytes", bytes.len());
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::read(extra.as_slice()).is_err());
    let mut wrong_version = bytes;
    wrong_version[4] = 99;
    assert!(Checkpoint::read(wrong_version.as_slice()).is_err());
}
