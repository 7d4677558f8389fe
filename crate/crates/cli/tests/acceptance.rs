//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p conceptkit-cli --test acceptance`; add
//! `-- --only 4,8` to run a subset.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use conceptkit::catalog::Category;
use conceptkit::editor::{edit_by_recommendation, update_chart_after_edit, EditOptions, EditStatus, DEFAULT_MARGIN};
use conceptkit::eval::{planted_error_rule, run_mapping_trials, EvalReport, MappingTrialConfig};
use conceptkit::generation::{extract_pairs, generate_candidates, refine};
use conceptkit::mapping::{build_chart, build_overlay, load_gold, map_pairs, MapContext};
use conceptkit::provider::templates::{DATASET_GEN, EDIT_FUNCTION, VISIBILITY};
use conceptkit::provider::{render_edit_phrases, render_template, Gateway, MockScript, TemplateRegistry};
use conceptkit::segmentation::{
    compute_iou, dice_loss, dice_loss_grad, lr_at_epoch, regions, segment, split_dataset, synthetic_shapes,
    train_dataset, ClassSchema, Dataset, EpochMetrics, PaletteSegmenter, Sample, SegModel, Segmenter,
    TrainingConfig,
};
use conceptkit::{BinaryMask, LabelMask, TxId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Final image hash of the HTTP walkthrough, frozen from a reference run.
const WALKTHROUGH_FINAL_HASH: &str = "a354ca2fa7a1d2f6b42641add698cdd4f9b697611b470ca85c0719b9f58a0f52";

type Check = fn() -> Result<String, String>;

fn main() {
    let only: Option<Vec<u32>> = std::env::args()
        .skip_while(|a| a != "--only")
        .nth(1)
        .map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let criteria: [(u32, &str, Check); 9] = [
        (1, "IoU matches brute-force counting", c1_iou_oracle),
        (2, "4x4 overlap fixture IoU = 4/12", c2_overlap_fixture),
        (3, "dice loss floor and gradient check", c3_dice),
        (4, "training smoke: test mIoU >= 0.85, lr schedule", c4_training),
        (5, "mapping accuracy 3x7 and planted 87.5", c5_mapping),
        (6, "prompt template goldens", c6_prompts),
        (7, "edit locality, metadata-only hash, gapless versions", c7_locality),
        (8, "offline HTTP walkthrough", c8_walkthrough),
        (9, "crash consistency across restart", c9_crash),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS  {name} ({detail}; {secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name} ({why}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure!(t < limit, "took {t:?}, limit {limit:?}");
    Ok(())
}

fn c1_iou_oracle() -> Result<String, String> {
    let start = Instant::now();
    let schema = ClassSchema::new("oracle", &["a", "b", "c"]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for pair in 0..50 {
        let draw = |rng: &mut ChaCha8Rng| (0..64).map(|_| rng.gen_range(0..4u8)).collect::<Vec<_>>();
        let (p, g) = (draw(&mut rng), draw(&mut rng));
        let report = compute_iou(
            &LabelMask::new(8, 8, p.clone()).unwrap(),
            &LabelMask::new(8, 8, g.clone()).unwrap(),
            &schema,
        )
        .map_err(|e| e.to_string())?;
        for c in 1..4u8 {
            let inter = p.iter().zip(&g).filter(|(a, b)| **a == c && **b == c).count() as u64;
            let union = p.iter().zip(&g).filter(|(a, b)| **a == c || **b == c).count() as u64;
            let label = schema.label(c).unwrap();
            if union == 0 {
                ensure!(!report.per_class_iou.contains_key(label), "pair {pair}: absent class {label} scored");
                continue;
            }
            ensure!(
                report.counts.ratio(c as usize) == (inter, union),
                "pair {pair} class {label}: counts {:?} != ({inter}, {union})",
                report.counts.ratio(c as usize)
            );
            ensure!(
                report.per_class_iou[label] == inter as f64 / union as f64,
                "pair {pair} class {label}: value differs"
            );
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok("50 pairs exact".into())
}

fn c2_overlap_fixture() -> Result<String, String> {
    let schema = ClassSchema::new("fixture", &["part"]);
    let gt: Vec<u8> = (0..16).map(|i| u8::from(i % 4 < 2)).collect();
    let pred: Vec<u8> = (0..16).map(|i| u8::from(i / 4 < 2)).collect();
    let r = compute_iou(
        &LabelMask::new(4, 4, pred).unwrap(),
        &LabelMask::new(4, 4, gt).unwrap(),
        &schema,
    )
    .map_err(|e| e.to_string())?;
    let iou = r.per_class_iou["part"];
    ensure!((iou - 4.0 / 12.0).abs() <= 1e-9, "IoU {iou}");
    Ok(format!("IoU {iou:.4}"))
}

fn c3_dice() -> Result<String, String> {
    let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
    let mut one_hot = vec![0.0; 3 * labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        one_hot[l as usize * labels.len() + i] = 1.0;
    }
    let floor = dice_loss(&one_hot, 3, &labels).map_err(|e| e.to_string())?;
    ensure!(floor <= 1e-5, "perfect prediction loss {floor}");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let classes = rng.gen_range(2..5);
        let n = rng.gen_range(3..12);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes as u8)).collect();
        let raw: Vec<f64> = (0..classes * n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let mut probs = raw.clone();
        for i in 0..n {
            let s: f64 = (0..classes).map(|c| raw[c * n + i]).sum();
            for c in 0..classes {
                probs[c * n + i] = raw[c * n + i] / s;
            }
        }
        let (_, grad) = dice_loss_grad(&probs, classes, &labels).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for k in 0..probs.len() {
            let (mut up, mut down) = (probs.clone(), probs.clone());
            up[k] += h;
            down[k] -= h;
            let numeric = (dice_loss(&up, classes, &labels).unwrap() - dice_loss(&down, classes, &labels).unwrap()) / (2.0 * h);
            // Below 1e-6 the central difference is dominated by rounding.
            let rel = (numeric - grad[k]).abs() / numeric.abs().max(grad[k].abs()).max(1e-6);
            worst = worst.max(rel);
            ensure!(rel <= 1e-4, "case {case} entry {k}: numeric {numeric} analytic {}", grad[k]);
        }
    }
    Ok(format!("floor {floor:.1e}, worst relative error {worst:.1e}"))
}

fn c4_training() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("shapes");
    let ds = Dataset::create(&data, conceptkit::segmentation::shapes_schema()).map_err(|e| e.to_string())?;
    for i in 0..40u64 {
        let (image, mask) = synthetic_shapes(64, 1000 + i);
        ds.add(&Sample {
            id: format!("shape{i:03}"),
            image,
            mask,
        })
        .map_err(|e| e.to_string())?;
    }
    let split = split_dataset(&ds.ids().map_err(|e| e.to_string())?, 1).map_err(|e| e.to_string())?;
    ensure!(split.sizes() == (32, 4, 4), "split sizes {:?}", split.sizes());
    ds.write_split(&split).map_err(|e| e.to_string())?;

    let config = TrainingConfig::default();
    let out = dir.path().join("model");
    train_dataset(&ds, &split, &config, &out).map_err(|e| e.to_string())?;

    let logged: Vec<EpochMetrics> = std::fs::read_to_string(out.join("metrics.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    ensure!(logged.len() == config.epochs as usize, "{} epochs logged", logged.len());
    for m in &logged {
        let expected = lr_at_epoch(&config, m.epoch).map_err(|e| e.to_string())?;
        ensure!(m.lr == expected, "epoch {}: lr {} != {expected}", m.epoch, m.lr);
    }

    let model = SegModel::load(&out).map_err(|e| e.to_string())?;
    let test = ds.load_many(&split.test).map_err(|e| e.to_string())?;
    let report = conceptkit::eval::evaluate_segmenter(&model, &test, false).map_err(|e| e.to_string())?;
    ensure!(report.mean_iou >= 0.85, "test mIoU {:.4}", report.mean_iou);
    within(start, Duration::from_secs(600))?;
    Ok(format!("test mIoU {:.4}", report.mean_iou))
}

fn gold_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../gold")
}

fn c5_mapping() -> Result<String, String> {
    let start = Instant::now();
    let gw = Gateway::mock(7);
    for cat in Category::ALL {
        let gold = load_gold(&gold_dir().join(format!("{}.json", cat.slug()))).map_err(|e| e.to_string())?;
        ensure!(gold.len() == 7, "{cat}: {} gold functions", gold.len());
        let trials = run_mapping_trials(&gw, &MappingTrialConfig::new(cat)).map_err(|e| e.to_string())?;
        for (t, r) in trials.iter().enumerate() {
            ensure!(r.assignments == gold, "{cat} trial {t}: {:?} vs {gold:?}", r.assignments);
        }
    }
    let planted = Gateway::mock_with_script(MockScript::new(7).rule(planted_error_rule("hip", 3)));
    let cfg = MappingTrialConfig::new(Category::RobotDog);
    let gold = load_gold(&gold_dir().join("robot-dog.json")).map_err(|e| e.to_string())?;
    let report = EvalReport::mapping(&planted, &cfg, &gold, Value::Null).map_err(|e| e.to_string())?;
    let acc = report.mapping.unwrap();
    ensure!(acc.per_function["hip"] == 87.5, "hip scored {}", acc.per_function["hip"]);
    for (f, v) in &acc.per_function {
        ensure!(f == "hip" || *v == 100.0, "{f} scored {v}");
    }
    within(start, Duration::from_secs(10))?;
    Ok("21/21 correct, planted hip 87.5".into())
}

fn c6_prompts() -> Result<String, String> {
    let reg = TemplateRegistry::builtin();
    let goldens = [
        (DATASET_GEN, "a realistic [Object_Name] shown in an isometric perspective and in a clean background"),
        (VISIBILITY, "analyze if this function is visible in the image"),
        (EDIT_FUNCTION, "change [FUNCTION] from [SOLUTION_A] to [SOLUTION_B]"),
    ];
    for (id, golden) in goldens {
        let t = &reg.get(id).map_err(|e| e.to_string())?.template;
        ensure!(t == golden, "{id}: {t:?}");
    }
    let worked = "change wheel size from 19 inches to 20 inches";
    let slots = render_template(
        EDIT_FUNCTION,
        &[("FUNCTION", "wheel size"), ("SOLUTION_A", "19 inches"), ("SOLUTION_B", "20 inches")],
    )
    .map_err(|e| e.to_string())?;
    ensure!(slots == worked, "{slots:?}");
    let phrases = render_edit_phrases("wheel size 19 inches", "wheel size 20 inches").map_err(|e| e.to_string())?;
    ensure!(phrases == worked, "{phrases:?}");
    let car = render_template(DATASET_GEN, &[("Object_Name", "car")]).map_err(|e| e.to_string())?;
    ensure!(car == "a realistic car shown in an isometric perspective and in a clean background", "{car:?}");
    Ok("3 templates byte-exact".into())
}

/// Chebyshev-distance dilation, computed pixel by pixel.
fn dilate_oracle(mask: &BinaryMask, margin: i64) -> Vec<bool> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-margin..=margin).any(|dy| {
                (-margin..=margin).any(|dx| {
                    let (sx, sy) = (x + dx, y + dy);
                    sx >= 0 && sy >= 0 && sx < w && sy < h && mask.get(sx as u32, sy as u32)
                })
            });
        }
    }
    out
}

fn c7_locality() -> Result<String, String> {
    let gw = Gateway::mock(7);
    let refined = refine(&gw, None, "a pink pickup truck").map_err(|e| e.to_string())?;
    let mut candidate = generate_candidates(&gw, &refined, "a pink pickup truck", 1, 128)
        .map_err(|e| e.to_string())?
        .remove(0)
        .map_err(|e| e.to_string())?;
    candidate.pairs = extract_pairs(&gw, &candidate).map_err(|e| e.to_string())?;
    let seg = PaletteSegmenter::for_category(Category::Car);
    let labels = segment(&seg, &candidate.image).map_err(|e| e.to_string())?;
    let overlay = build_overlay(&candidate.image, &regions(&labels, seg.schema()).unwrap()).map_err(|e| e.to_string())?;
    let ctx = MapContext {
        category: "car",
        trial: None,
    };
    let mapping = map_pairs(&gw, &overlay, &candidate.pairs, &ctx).map_err(|e| e.to_string())?;
    let mut chart = build_chart(&gw, &mapping, &candidate.pairs, "car");
    let dilated: BTreeMap<String, Vec<bool>> = overlay
        .regions
        .iter()
        .map(|r| (r.class_label.clone(), dilate_oracle(&r.mask, DEFAULT_MARGIN as i64)))
        .collect();

    let visible: Vec<String> = chart
        .entries()
        .map(|(_, e)| e.function.clone())
        .filter(|f| Category::Car.is_visible(f))
        .collect();
    ensure!(!visible.is_empty(), "no visible functions in the chart");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut versions = vec![candidate.version];
    let mut applied = 0;
    for step in 0..20 {
        let function = &visible[rng.gen_range(0..visible.len())];
        let (component, entry) = chart.find(function).unwrap();
        let region = overlay.regions.iter().find(|r| r.class_label == component).unwrap();
        let chosen = entry.alternatives[rng.gen_range(0..2)].clone();
        let step_gw = Gateway::mock(rng.gen());
        let out = edit_by_recommendation(
            &step_gw,
            &candidate,
            region,
            entry,
            &chosen,
            &EditOptions::new(TxId(format!("tx-{step}"))),
        )
        .map_err(|e| e.to_string())?;
        ensure!(out.transaction.status == EditStatus::Applied, "step {step}: {:?}", out.transaction.status);
        let allowed = &dilated[component];
        let (before, after) = (candidate.image.pixels(), out.candidate.image.pixels());
        for (i, inside) in allowed.iter().enumerate() {
            ensure!(
                *inside || before[i * 4..i * 4 + 4] == after[i * 4..i * 4 + 4],
                "step {step}: pixel {i} outside the {component} mask changed"
            );
        }
        chart = update_chart_after_edit(&chart, &out.transaction);
        candidate = out.candidate;
        versions.push(candidate.version);
        applied += 1;
    }

    let entry = chart
        .entries()
        .map(|(_, e)| e.clone())
        .find(|e| !Category::Car.is_visible(&e.function))
        .ok_or("no invisible function in the chart")?;
    let (component, _) = chart.find(&entry.function).unwrap();
    let region = overlay.regions.iter().find(|r| r.class_label == component).unwrap();
    for k in 0..3 {
        let chosen = chart.find(&entry.function).unwrap().1.alternatives[0].clone();
        let current = chart.find(&entry.function).unwrap().1.clone();
        let out = edit_by_recommendation(&gw, &candidate, region, &current, &chosen, &EditOptions::new(TxId(format!("meta-{k}"))))
            .map_err(|e| e.to_string())?;
        ensure!(out.transaction.status == EditStatus::MetadataOnly, "{:?}", out.transaction.status);
        ensure!(
            out.candidate.image.content_hash() == candidate.image.content_hash(),
            "metadata-only edit changed the image"
        );
        chart = update_chart_after_edit(&chart, &out.transaction);
        candidate = out.candidate;
        versions.push(candidate.version);
    }
    let mut expected = 1;
    for (i, v) in versions.iter().enumerate() {
        if i > 0 && i <= applied {
            expected += 1;
        }
        ensure!(*v == expected, "version sequence {versions:?}");
    }
    Ok(format!("{applied} applied edits local, versions 1..={}", expected))
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn spawn(data_dir: &Path, config: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_conceptkit"))
            .args(["serve", "--port", "0", "--data-dir"])
            .arg(data_dir)
            .arg("--config")
            .arg(config)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn conceptkit serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Server { child, base }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn get(&self, path: &str) -> Value {
        ureq::get(&self.url(path)).call().unwrap().body_mut().read_json().unwrap()
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let resp = ureq::post(&self.url(path))
            .config()
            .http_status_as_error(false)
            .build()
            .send_json(&body)
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.into_body().read_json().unwrap_or(Value::Null))
    }

    fn wait(&self, id: &str, done: impl Fn(&Value) -> bool) -> Value {
        let start = Instant::now();
        loop {
            let s = self.get(&format!("/sessions/{id}"));
            if done(&s) {
                return s;
            }
            assert!(start.elapsed() < Duration::from_secs(30), "timed out waiting: {s}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn decomposed(&self) -> String {
        let (s, v) = self.post("/sessions", Value::Null);
        assert_eq!(s, 201);
        let id = v["session_id"].as_str().unwrap().to_owned();
        let sketch = json!({
            "canvas": { "width": 256, "height": 256 },
            "strokes": [{
                "points": [{ "x": 20.0, "y": 200.0, "t": 0 }, { "x": 230.0, "y": 200.0, "t": 40 }, { "x": 200.0, "y": 120.0, "t": 90 }],
                "width": 4.0,
                "color": [0, 0, 0]
            }]
        });
        let resp = ureq::put(&self.url(&format!("/sessions/{id}/sketch"))).send_json(&sketch).unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        let (s, _) = self.post(&format!("/sessions/{id}/brief"), json!({ "transcript": "a pink pickup truck" }));
        assert_eq!(s, 202);
        let v = self.wait(&id, |s| s["job"].is_null());
        assert_eq!(v["state"], "Generated");
        assert_eq!(v["candidates"].as_array().unwrap().len(), 3);
        let (s, _) = self.post(&format!("/sessions/{id}/select"), json!({ "index": 0 }));
        assert_eq!(s, 202);
        let v = self.wait(&id, |s| s["job"].is_null());
        assert_eq!(v["state"], "Decomposed", "{v}");
        id
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn server_config(dir: &Path, inpaint_delay_ms: Option<u64>) -> PathBuf {
    let rules = match inpaint_delay_ms {
        Some(ms) => json!([{ "capability": "Inpaint", "reply": { "kind": "default" }, "delay_ms": ms }]),
        None => json!([]),
    };
    let path = dir.join("server.json");
    let config = json!({ "provider": { "mode": "mock", "mock_seed": 7, "image_size": 96, "mock_rules": rules } });
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn c8_walkthrough() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Server::spawn(&dir.path().join("store"), &server_config(dir.path(), None));
    let id = server.decomposed();

    let chart: conceptkit::mapping::FunctionChart =
        serde_json::from_value(server.get(&format!("/sessions/{id}/chart"))).map_err(|e| e.to_string())?;
    ensure!(chart.entry_count() > 0, "empty chart");
    for (_, e) in chart.entries() {
        ensure!(e.is_well_formed(), "malformed entry {e:?}");
    }
    let (s, v) = server.post(
        &format!("/sessions/{id}/edits"),
        json!({ "kind": "recommendation", "function": "wheel size", "chosen": "20 inches" }),
    );
    ensure!(s == 202, "edit returned {s}: {v}");
    let v = server.wait(&id, |s| s["job"].is_null());
    ensure!(v["version"] == 2, "version {}", v["version"]);
    ensure!(v["transactions"][0]["status"] == "Applied", "{}", v["transactions"][0]);
    let hash = v["image_hash"].as_str().unwrap_or_default().to_owned();

    let body = ureq::get(&server.url(&format!("/sessions/{id}/events?follow=false")))
        .call()
        .map_err(|e| e.to_string())?
        .body_mut()
        .read_to_string()
        .map_err(|e| e.to_string())?;
    let seqs: Vec<u64> = body.lines().filter_map(|l| l.strip_prefix("id: ")).map(|s| s.parse().unwrap()).collect();
    ensure!(seqs == [1, 2, 3, 4, 5], "event seqs {seqs:?}");
    ensure!(hash == WALKTHROUGH_FINAL_HASH, "final hash {hash}");
    within(start, Duration::from_secs(30))?;
    Ok(format!("final hash {}..", &hash[..12]))
}

fn c9_crash() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("store");
    let slow = server_config(dir.path(), Some(60_000));
    let (id, hash_v1) = {
        let server = Server::spawn(&store, &slow);
        let id = server.decomposed();
        let v1 = server.get(&format!("/sessions/{id}"))["image_hash"].clone();
        let (s, v) = server.post(
            &format!("/sessions/{id}/edits"),
            json!({ "kind": "recommendation", "function": "wheel size", "chosen": "20 inches" }),
        );
        ensure!(s == 202 && v["status"] == "Pending", "edit returned {s}: {v}");
        server.wait(&id, |s| s["transactions"][0]["status"] == "Pending");
        (id, v1)
    };

    let fast = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = Server::spawn(&store, &server_config(fast.path(), None));
    let v = server.wait(&id, |s| s["job"].is_null());
    ensure!(v["version"] == 1, "version {}", v["version"]);
    ensure!(v["image_hash"] == hash_v1, "image is not the committed version");
    ensure!(v["transactions"][0]["status"] == "Failed", "{}", v["transactions"][0]);
    let png = ureq::get(&server.url(&format!("/sessions/{id}/image")))
        .call()
        .map_err(|e| e.to_string())?
        .body_mut()
        .read_to_vec()
        .map_err(|e| e.to_string())?;
    let image = conceptkit::RasterImage::from_png(&png).map_err(|e| e.to_string())?;
    ensure!(image.content_hash() == hash_v1.as_str().unwrap_or_default(), "served image differs from v1");
    Ok("restarted at v1, transaction Failed".into())
}
