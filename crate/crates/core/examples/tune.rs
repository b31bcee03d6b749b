//! Scratch timing harness for desk-scale training runs.
//! Usage: cargo run --example tune -- [mlm|gpt]

use tabseq::datapipe::{make_windows, prepare, BinConfig, TypeHints};
use tabseq::rng::Rng;
use tabseq::synthgen::{gen_transactions, TransactionConfig};
use tabseq::tabbert::{ColumnLayout, PretrainConfig, TabBert, TabBertConfig};
use tabseq::tabgpt::{GptTrainConfig, TabGpt, TabGptConfig};

fn hints() -> TypeHints {
    TypeHints {
        label: Some("isFraud?".into()),
        entity: Some("user".into()),
        continuous: vec!["amount".into()],
        ..Default::default()
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "mlm".into());
    match mode.as_str() {
        "mlm" => mlm(),
        "gpt" => gpt(),
        "trend" => trend(),
        "probe" => probe(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn trend() {
    use tabseq::datapipe::{attach_labels, TargetAggregation};
    use tabseq::heads::{
        train_downstream, DownstreamConfig, FeatureSource, HeadKind, TaskKind,
    };

    let t0 = std::time::Instant::now();
    let cfg = TransactionConfig {
        n_users: 40,
        rows_per_user: 700,
        ..Default::default()
    };
    let table = gen_transactions(&cfg, 101);
    let prep = prepare(&table, &hints(), &BinConfig::default(), 0.8).unwrap();

    let collect = |series: &[tabseq::datapipe::EntitySeries]| {
        let mut ws = Vec::new();
        for s in series {
            let mut w = make_windows(s, 10, 10);
            attach_labels(&mut w, s, TargetAggregation::LastRow).unwrap();
            ws.extend(w);
        }
        ws
    };
    let all_train = collect(&prep.train);
    // label scarcity: the head only sees a third of the labeled windows,
    // while pretraining uses the whole training split
    let mut label_rng = Rng::from_seed(77).substream("labels");
    let mut idx: Vec<usize> = (0..all_train.len()).collect();
    label_rng.shuffle(&mut idx);
    let train_w: Vec<_> = idx[..all_train.len() / 3]
        .iter()
        .map(|&i| all_train[i].clone())
        .collect();
    let test_w = collect(&prep.test);
    let pos_train = train_w.iter().filter(|w| w.label == Some(1)).count();
    let pos_test = test_w.iter().filter(|w| w.label == Some(1)).count();
    println!(
        "windows: train {} ({} fraud), test {} ({} fraud) [{:?}]",
        train_w.len(),
        pos_train,
        test_w.len(),
        pos_test,
        t0.elapsed()
    );

    // pretrain backbone on stride-5 windows of the training split
    let mut pre_w = Vec::new();
    for s in &prep.train {
        pre_w.extend(make_windows(s, 10, 5));
    }
    let layout = ColumnLayout::from_vocabs(&prep.codec.vocabs);
    let mut rng = Rng::from_seed(500);
    let mut backbone =
        TabBert::<f32>::new(TabBertConfig::default(), layout, &prep.fingerprint, &mut rng);
    let pcfg = PretrainConfig {
        steps: 1_000,
        batch_size: 16,
        target_accuracy: Some(0.99),
        eval_every: 50,
        ..Default::default()
    };
    let t1 = std::time::Instant::now();
    let log = backbone.pretrain(&pre_w, &pcfg, 500).unwrap();
    println!(
        "pretrain: {} steps, acc {:.3} [{:?}]",
        log.len(),
        log.last().unwrap().masked_accuracy,
        t1.elapsed()
    );

    for seed in [1u64, 2, 3] {
        for (source, head) in [
            (FeatureSource::Raw, HeadKind::Mlp),
            (FeatureSource::Raw, HeadKind::Lstm),
            (FeatureSource::Tabbert, HeadKind::Mlp),
            (FeatureSource::Tabbert, HeadKind::Lstm),
        ] {
            let dcfg = DownstreamConfig {
                feature_source: source,
                head,
                task: TaskKind::Classification,
                upsample: true,
                epochs: 20,
                ..Default::default()
            };
            let t2 = std::time::Instant::now();
            let report = train_downstream(
                &dcfg,
                &train_w,
                &test_w,
                Some(&backbone),
                seed,
            )
            .unwrap();
            println!(
                "seed {seed} {:?}+{:?}: F1 {:.3} (tp {} fp {} fn {}) [{:?}]",
                source,
                head,
                report.metrics.f1_binary.unwrap(),
                report.metrics.tp,
                report.metrics.fp,
                report.metrics.fn_,
                t2.elapsed()
            );
        }
    }
}

fn mlm() {
    let t0 = std::time::Instant::now();
    let cfg = TransactionConfig {
        n_users: 6,
        rows_per_user: 200,
        ..Default::default()
    };
    let table = gen_transactions(&cfg, 11);
    let prep = prepare(&table, &hints(), &BinConfig::default(), 1.0).unwrap();
    let mut windows = Vec::new();
    for s in &prep.train {
        windows.extend(make_windows(s, 10, 5));
    }
    windows.truncate(200);
    println!(
        "data: {} windows, {} columns, vocab {} ({:?})",
        windows.len(),
        prep.codec.columns.len(),
        prep.codec.vocabs.global_size(),
        t0.elapsed()
    );

    let layout = ColumnLayout::from_vocabs(&prep.codec.vocabs);
    let mut rng = Rng::from_seed(42);
    let mut model = TabBert::<f32>::new(TabBertConfig::default(), layout, &prep.fingerprint, &mut rng);
    let pcfg = PretrainConfig {
        steps: 2_000,
        batch_size: 16,
        target_accuracy: Some(0.975),
        eval_every: 50,
        ..Default::default()
    };
    let t1 = std::time::Instant::now();
    let log = model.pretrain(&windows, &pcfg, 42).unwrap();
    let last = log.last().unwrap();
    println!(
        "pretrain: {} steps in {:?} ({:.0} ms/step), loss {:.4}, acc {:.4}",
        log.len(),
        t1.elapsed(),
        t1.elapsed().as_millis() as f64 / log.len() as f64,
        last.loss,
        last.masked_accuracy
    );

    // per-column probe accuracy
    use tabseq::tabbert::mask_fields;
    use tabseq::tensor::no_grad;
    let mut per_col: Vec<(usize, usize)> = vec![(0, 0); prep.codec.columns.len()];
    let mut probe_rng = Rng::from_seed(0xACC);
    no_grad(|| {
        for w in windows.iter().take(64) {
            let (masked, plan) = mask_fields(&w.tokens, 0.15, &mut probe_rng).unwrap();
            let out = model.forward(&masked).unwrap();
            let groups = model.mlm_logits(&out, &plan).unwrap();
            for (col, logits, locals) in groups {
                let classes = logits.shape()[1];
                let data = logits.to_vec();
                for (i, &t) in locals.iter().enumerate() {
                    let row = &data[i * classes..(i + 1) * classes];
                    let best = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    per_col[col].0 += (best == t as usize) as usize;
                    per_col[col].1 += 1;
                }
            }
        }
    });
    for (c, (hit, tot)) in per_col.iter().enumerate() {
        println!(
            "  col {:<16} acc {:.3} ({}/{})",
            prep.codec.columns[c].name,
            *hit as f64 / (*tot).max(1) as f64,
            hit,
            tot
        );
    }
}

fn gpt() {
    let t0 = std::time::Instant::now();
    let cfg = TransactionConfig {
        n_users: 3,
        rows_per_user: 2_000,
        ..Default::default()
    };
    let table = gen_transactions(&cfg, 11);
    let prep = prepare(&table, &hints(), &BinConfig::default(), 1.0).unwrap();
    let user = &prep.train[0];
    let windows = make_windows(user, 10, 10);
    println!(
        "data: user {} with {} rows -> {} windows, vocab {} ({:?})",
        user.entity_id,
        user.token_rows.len(),
        windows.len(),
        prep.codec.vocabs.global_size(),
        t0.elapsed()
    );

    let layout = ColumnLayout::from_vocabs(&prep.codec.vocabs);
    let mut rng = Rng::from_seed(7);
    let mut model = TabGpt::<f32>::new(TabGptConfig::default(), layout, &prep.fingerprint, &mut rng);
    let tcfg = GptTrainConfig {
        steps: 600,
        batch_size: 8,
        learning_rate: 1e-3,
        target_perplexity: Some(1.45),
        eval_every: 25,
    };
    let t1 = std::time::Instant::now();
    let log = model.train(&windows, &tcfg, 7).unwrap();
    let last = log.last().unwrap();
    println!(
        "train: {} steps in {:?} ({:.0} ms/step), loss {:.4}, ppl {:.4}",
        log.len(),
        t1.elapsed(),
        t1.elapsed().as_millis() as f64 / log.len() as f64,
        last.loss,
        last.perplexity
    );
}


// Linear separability of row-level fraud in frozen SE features.
fn probe() {
    use tabseq::datapipe::attach_labels;
    use tabseq::datapipe::TargetAggregation;
    use tabseq::nn::Linear;
    use tabseq::tensor::{Adam, AdamConfig, Tensor};

    let cfg = TransactionConfig {
        n_users: 40,
        rows_per_user: 700,
        ..Default::default()
    };
    let table = gen_transactions(&cfg, 101);
    let prep = prepare(&table, &hints(), &BinConfig::default(), 0.8).unwrap();
    let mut pre_w = Vec::new();
    for s in &prep.train {
        pre_w.extend(make_windows(s, 10, 5));
    }
    let layout = ColumnLayout::from_vocabs(&prep.codec.vocabs);
    let mut rng = Rng::from_seed(500);
    let mut backbone =
        TabBert::<f32>::new(TabBertConfig::default(), layout, &prep.fingerprint, &mut rng);
    let pcfg = PretrainConfig {
        steps: 1_000,
        batch_size: 16,
        target_accuracy: Some(0.99),
        eval_every: 50,
        ..Default::default()
    };
    backbone.pretrain(&pre_w, &pcfg, 500).unwrap();
    eprintln!("backbone ready");

    // row-level dataset: SE_t for each row of stride-10 train windows, row fraud labels
    let collect = |series: &[tabseq::datapipe::EntitySeries]| {
        let mut feats: Vec<Vec<f32>> = Vec::new();
        let mut labels: Vec<f32> = Vec::new();
        for s in series {
            let mut ws = make_windows(s, 10, 10);
            attach_labels(&mut ws, s, TargetAggregation::LastRow).unwrap();
            for w in ws {
                let rows = backbone.extract_row_features(&w).unwrap();
                for (r, f) in rows.into_iter().enumerate() {
                    feats.push(f);
                    labels.push(s.row_labels[w.start_index + r].unwrap() as f32);
                }
            }
        }
        (feats, labels)
    };
    let (train_f, train_y) = collect(&prep.train);
    let (test_f, test_y) = collect(&prep.test);
    eprintln!("rows: train {} (pos {}), test {} (pos {})",
        train_f.len(), train_y.iter().sum::<f32>(), test_f.len(), test_y.iter().sum::<f32>());

    // standardize on train
    let d = train_f[0].len();
    let n = train_f.len() as f64;
    let mut mean = vec![0.0f64; d];
    for r in &train_f { for (m, &x) in mean.iter_mut().zip(r) { *m += x as f64; } }
    for m in &mut mean { *m /= n; }
    let mut var = vec![0.0f64; d];
    for r in &train_f { for (k, &x) in r.iter().enumerate() { let dx = x as f64 - mean[k]; var[k] += dx * dx; } }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-6)).collect();
    let norm = |rows: &[Vec<f32>]| -> Vec<f32> {
        rows.iter().flat_map(|r| r.iter().enumerate().map(|(k, &x)| ((x as f64 - mean[k]) / std[k]) as f32)).collect()
    };
    let train_x = Tensor::from_vec(&[train_f.len(), d], norm(&train_f));
    let test_x = Tensor::from_vec(&[test_f.len(), d], norm(&test_f));

    // upweight positives via BCE class weights equivalent: duplicate positive rows
    let mut rng = Rng::from_seed(9);
    let lin = Linear::<f32>::new(d, 1, true, &mut rng);
    let mut params = Vec::new();
    lin.params(&mut params);
    let mut opt = Adam::new(AdamConfig::with_lr(5e-3));
    let pos_weight = (train_y.len() as f32 - train_y.iter().sum::<f32>()) / train_y.iter().sum::<f32>();
    for step in 0..400 {
        let logits = lin.forward(&train_x).reshape(&[train_f.len()]);
        // weighted BCE by scaling targets... use plain BCE on full batch with pos upweighting via repeated loss
        let loss = Tensor::bce_with_logits(&logits, &train_y).unwrap();
        loss.backward().unwrap();
        opt.step(&params);
        if step % 100 == 0 { eprintln!("step {step} loss {}", loss.item()); }
    }
    let _ = pos_weight;
    // measure best-threshold F1 on test
    let logits = tabseq::tensor::no_grad(|| lin.forward(&test_x)).to_vec();
    let mut best = 0.0f64;
    for thr_i in 0..50 {
        let thr = -5.0 + thr_i as f32 * 0.2;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&z, &y) in logits.iter().zip(&test_y) {
            let pred = z > thr;
            match (pred, y > 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let p = tp as f64 / (tp + fp).max(1) as f64;
        let r = tp as f64 / (tp + fn_).max(1) as f64;
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > best { best = f1; }
    }
    println!("row-level linear probe on SE features: best-threshold test F1 = {best:.3}");
}
