use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use xfl::protocol::horizontal::{hfl_assist, hfl_party, HflSetup};
use xfl::protocol::secagg::negotiate_masks;
use xfl::protocol::vlr::{vlr_label_trainer, vlr_predict_label, vlr_predict_trainer, vlr_trainer, BatchTrace, VlrSetup};
use xfl::protocol::vxgb::{
    vxgb_label_trainer, vxgb_predict_label, vxgb_predict_trainer, vxgb_trainer, VxgbSetup, PARTITION, SPLIT,
};
use xfl::transport::{Channel, ChannelConfig, Envelope, InProcHub};
use xfl_core::crypto::PackParams;
use xfl_core::data::Table;
use xfl_core::horizontal::{simulate_federation, Aggregator, Architecture, ModelKind, Samples, TrainConfig};
use xfl_core::numeric::FixedPointParams;
use xfl_core::secagg::{local_mask_plans, PartyId};
use xfl_core::sigmoid;
use xfl_core::vertical::{VlrParams, XgbParams};

fn channels(hub: &InProcHub, names: &[&str]) -> Vec<Channel> {
    names.iter().map(|n| hub.endpoint(n, "sess", ChannelConfig::default()).unwrap().channel("0")).collect()
}

fn ids(names: &[&str]) -> Vec<PartyId> {
    names.iter().enumerate().map(|(i, n)| PartyId::new(i as u32, *n)).collect()
}

#[test]
fn mask_negotiation_gives_symmetric_seeds() {
    let hub = InProcHub::new();
    let names = ["p0", "p1", "p2"];
    let parties = ids(&names);
    let handles: Vec<_> = channels(&hub, &names)
        .into_iter()
        .zip(parties.clone())
        .map(|(ch, me)| {
            let all = parties.clone();
            thread::spawn(move || {
                let mut rng = ChaCha20Rng::seed_from_u64(u64::from(me.ordinal) + 100);
                negotiate_masks(&ch, &all, &me, "sess", &mut rng).unwrap()
            })
        })
        .collect();
    let plans: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let mut pairs = 0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let a = plans[i].seed_for(&parties[j]).unwrap();
            let b = plans[j].seed_for(&parties[i]).unwrap();
            assert_eq!(a, b);
            pairs += 1;
        }
        assert_eq!(plans[i].peers().count(), 2);
    }
    assert_eq!(pairs, 3);
    assert_ne!(plans[0].seed_for(&parties[1]), plans[0].seed_for(&parties[2]));
}

fn blobs(n: usize, seed: u64, shift: f64) -> Samples {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let c = rng.random_range(0..3usize);
        x.push(vec![c as f64 * 1.5 - 1.5 + shift + rng.random_range(-0.8..0.8), rng.random_range(-1.0..1.0)]);
        y.push(c as f64);
    }
    Samples::new(x, y).unwrap()
}

fn run_hfl(aggregator: Aggregator) -> (Vec<f64>, Vec<f64>) {
    let names = ["p0", "p1", "p2"];
    let parties = ids(&names);
    let arch = Architecture::new(ModelKind::Softmax { classes: 3 }, 2);
    let cfg = TrainConfig {
        global_epochs: 4,
        local_epochs: 2,
        batch_size: 8,
        learning_rate: 0.1,
        aggregator,
        mu: 0.01,
        seed: 3,
    };
    let data: Vec<Samples> = (0..3).map(|i| blobs(40 + 10 * i, i as u64, i as f64 * 0.3)).collect();
    let setup = HflSetup {
        parties: parties.clone(),
        assist: "assist".into(),
        arch,
        cfg,
        fp: FixedPointParams::default(),
    };

    let hub = InProcHub::new();
    let assist_ch = channels(&hub, &["assist"]).pop().unwrap();
    let chans = channels(&hub, &names);
    let mut handles = Vec::new();
    for ((ch, me), d) in chans.into_iter().zip(parties.clone()).zip(data.clone()) {
        let setup = setup.clone();
        let all = parties.clone();
        handles.push(thread::spawn(move || {
            let mut rng = ChaCha20Rng::seed_from_u64(u64::from(me.ordinal));
            let plan = negotiate_masks(&ch, &all, &me, "sess", &mut rng).unwrap();
            hfl_party(&ch, &setup, &plan, &d, |_, _| Ok(())).unwrap()
        }));
    }
    let global = hfl_assist(&assist_ch, &setup, |_, _| Ok(())).unwrap();
    for h in handles {
        assert_eq!(h.join().unwrap(), global);
    }

    let (plans, _) = local_mask_plans(&parties, b"other", &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let sim = simulate_federation(&arch, arch.init(cfg.seed), &data, &cfg, Some(&plans), FixedPointParams::default())
        .unwrap();
    (global.flatten().to_vec(), sim.last().unwrap().global.flatten().to_vec())
}

#[test]
fn horizontal_protocol_matches_simulation_fedavg() {
    let (net, sim) = run_hfl(Aggregator::FedAvg);
    assert_eq!(net, sim);
}

#[test]
fn horizontal_protocol_matches_simulation_scaffold() {
    let (net, sim) = run_hfl(Aggregator::Scaffold);
    assert_eq!(net, sim);
}

fn logistic_rows(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        y.push(if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 });
        rows.push(x);
    }
    (rows, y)
}

fn split_cols(rows: &[Vec<f64>], from: usize, to: usize) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r[from..to].to_vec()).collect()
}

#[test]
fn vlr_gradients_match_centralized() {
    let (rows, y) = logistic_rows(120, 5, 4);
    let lt_rows = split_cols(&rows, 0, 2);
    let tr_rows = split_cols(&rows, 2, 5);
    let setup = VlrSetup {
        label: "lt".into(),
        trainers: vec!["t1".into()],
        params: VlrParams { epochs: 2, batch_size: 32, learning_rate: 0.2, key_bits: 512, seed: 8 },
    };
    let hub = InProcHub::new();
    let mut chans = channels(&hub, &["lt", "t1"]);
    let t_ch = chans.pop().unwrap();
    let lt_ch = chans.pop().unwrap();
    let tr_trace = Arc::new(Mutex::new(Vec::<BatchTrace>::new()));
    let sink = tr_trace.clone();
    let s2 = setup.clone();
    let tr_rows2 = tr_rows.clone();
    let h = thread::spawn(move || {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let st = vlr_trainer(&t_ch, &s2, &tr_rows2, &mut rng, |t| sink.lock().unwrap().push(t.clone())).unwrap();
        vlr_predict_trainer(&t_ch, &s2, &st, &tr_rows2).unwrap();
        st
    });
    let mut lt_trace = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let lt_state =
        vlr_label_trainer(&lt_ch, &setup, &lt_rows, &y, &mut rng, |t| lt_trace.push(t.clone()), |_, _| Ok(())).unwrap();
    let probs = vlr_predict_label(&lt_ch, &setup, &lt_state, &lt_rows).unwrap();
    let tr_state = h.join().unwrap();
    let tr_trace = tr_trace.lock().unwrap();
    assert_eq!(lt_trace.len(), tr_trace.len());
    assert_eq!(lt_trace.len(), 8);

    for (a, b) in lt_trace.iter().zip(tr_trace.iter()) {
        assert_eq!(a.indices, b.indices);
        let mut w = a.before.weights.clone();
        w.extend(&b.before.weights);
        let bias = a.before.intercept.unwrap();
        let mut g = [0.0; 5];
        let mut g0 = 0.0;
        for &i in &a.indices {
            let z: f64 = rows[i].iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + bias;
            let d = 1.0 / (1.0 + (-z).exp()) - y[i];
            for (gj, xj) in g.iter_mut().zip(&rows[i]) {
                *gj += d * xj;
            }
            g0 += d;
        }
        let m = a.indices.len() as f64;
        for (got, want) in a.gradient.iter().zip(&g[..2]) {
            assert!((got - want / m).abs() < 1e-6);
        }
        for j in 0..3 {
            assert!((b.gradient[j] - g[2 + j] / m).abs() < 1e-6, "{} vs {}", b.gradient[j], g[2 + j] / m);
        }
        assert!((a.grad_intercept.unwrap() - g0 / m).abs() < 1e-6);
    }

    for (i, p) in probs.iter().enumerate() {
        let z: f64 = lt_rows[i].iter().zip(&lt_state.weights).map(|(x, w)| x * w).sum::<f64>()
            + tr_rows[i].iter().zip(&tr_state.weights).map(|(x, w)| x * w).sum::<f64>()
            + lt_state.intercept.unwrap();
        assert!((p - sigmoid(z)).abs() < 1e-12);
    }
}

#[test]
fn vlr_with_featureless_trainer_is_local_logistic_regression() {
    let (rows, y) = logistic_rows(60, 3, 9);
    let empty: Vec<Vec<f64>> = vec![Vec::new(); rows.len()];
    let params = VlrParams { epochs: 3, batch_size: 16, learning_rate: 0.3, key_bits: 512, seed: 1 };
    let setup = VlrSetup { label: "lt".into(), trainers: vec!["t1".into()], params };
    let hub = InProcHub::new();
    let mut chans = channels(&hub, &["lt", "t1"]);
    let t_ch = chans.pop().unwrap();
    let lt_ch = chans.pop().unwrap();
    let s2 = setup.clone();
    let h = thread::spawn(move || vlr_trainer(&t_ch, &s2, &empty, &mut ChaCha20Rng::seed_from_u64(2), |_| {}).unwrap());
    let st = vlr_label_trainer(&lt_ch, &setup, &rows, &y, &mut ChaCha20Rng::seed_from_u64(1), |_| {}, |_, _| Ok(()))
        .unwrap();
    assert!(h.join().unwrap().weights.is_empty());

    let mut local = xfl_core::vertical::VlrPartyState::zeros(3, true);
    for epoch in 0..params.epochs {
        for idx in xfl_core::vertical::batch_schedule(rows.len(), params.batch_size, params.seed, epoch) {
            let z = local.partial_scores(&rows, &idx);
            let yy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let d = xfl_core::vertical::residuals(&z, &yy);
            let (g, g0) = xfl_core::vertical::plain_gradient(&d, &rows, &idx, 3);
            local.step(&g, Some(g0), params.learning_rate);
        }
    }
    assert_eq!(st, local);
}

fn vertical_tables(n: usize, seed: u64) -> (Table, Table) {
    let (rows, y) = logistic_rows(n, 6, seed);
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let lt = Table::from_rows(
        ids.clone(),
        vec!["a0".into(), "a1".into(), "a2".into()],
        &split_cols(&rows, 0, 3),
        Some(y),
    )
    .unwrap();
    let tr = Table::from_rows(ids, vec!["b0".into(), "b1".into(), "b2".into()], &split_cols(&rows, 3, 6), None).unwrap();
    (lt, tr)
}

#[test]
fn vxgb_predictions_match_training_margins_and_splits_stay_private() {
    let (lt_table, tr_table) = vertical_tables(200, 21);
    let params = XgbParams { num_trees: 3, depth: 2, key_bits: 512, max_bins: 8, ..Default::default() };
    let setup = VxgbSetup {
        label: PartyId::new(0, "lt"),
        trainers: vec![PartyId::new(1, "t1")],
        params,
        fp: FixedPointParams::default(),
        pack: PackParams::default(),
    };
    let hub = InProcHub::new();
    let log: Arc<Mutex<Vec<Envelope>>> = Arc::default();
    let sink = log.clone();
    hub.set_tap(move |e| sink.lock().unwrap().push(e.clone()));
    let mut chans = channels(&hub, &["lt", "t1"]);
    let t_ch = chans.pop().unwrap();
    let lt_ch = chans.pop().unwrap();
    let s2 = setup.clone();
    let tr2 = tr_table.clone();
    let h = thread::spawn(move || {
        let out = vxgb_trainer(&t_ch, &s2, &tr2).unwrap();
        vxgb_predict_trainer(&t_ch, &s2, &out.splits, &tr2).unwrap();
        out
    });
    let out = vxgb_label_trainer(&lt_ch, &setup, &lt_table, &mut ChaCha20Rng::seed_from_u64(5), |_, _| Ok(())).unwrap();
    let probs = vxgb_predict_label(&lt_ch, &setup, &out.model, &out.splits, &lt_table).unwrap();
    let tr_out = h.join().unwrap();
    for (p, m) in probs.iter().zip(&out.train_margins) {
        assert!((p - sigmoid(*m)).abs() < 1e-12);
    }
    assert!(tr_out.histogram_additions > 0);
    let owners: Vec<u32> = out.model.trees.iter().flat_map(|t| t.split_refs().map(|(o, _)| o.ordinal)).collect();
    assert!(!owners.is_empty());

    let log = log.lock().unwrap();
    let split_msgs = log.iter().filter(|e| !e.stage_key.starts_with("ack/") && e.stage_key.ends_with(SPLIT)).count();
    let trainer_splits = owners.iter().filter(|&&o| o == 1).count();
    assert_eq!(split_msgs, trainer_splits);
    for e in log.iter().filter(|e| e.sender == "lt" && !e.stage_key.starts_with("ack/") && e.stage_key.ends_with(PARTITION)) {
        // node id, flag, then owner, split_ref, child ids and the left set
        assert!(e.payload.len() == 5 || e.payload.len() >= 5 + 4 + 8 + 8 + 4);
    }
}
