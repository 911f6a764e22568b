use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use obbdet::data::{write_detections, Dataset, DetectionRecord};
use obbdet::heads::Detection;

fn obbdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obbdet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = obbdet(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_config_parses_back() {
    let text = ok(&["config"]);
    let cfg = obbdet::train::RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, obbdet::train::RunConfig::default());
}

#[test]
fn unknown_override_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = obbdet(&["gen-data", "--out", s(dir.path()), "--set", "train.scene.bogus=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn ground_truth_as_detections_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("val");
    ok(&["gen-data", "--split", "val", "--set", "val.count=5", "--out", s(&data_dir)]);
    let data = Dataset::load(&data_dir).unwrap();
    assert_eq!(data.samples.len(), 5);
    let records: Vec<DetectionRecord> = data
        .samples
        .iter()
        .flat_map(|smp| {
            smp.objects.iter().map(|o| {
                let d = Detection {
                    obb: o.obb,
                    score: 1.0,
                    class_id: o.class_id,
                };
                DetectionRecord::new(&smp.id, &data.classes, &d)
            })
        })
        .collect();
    let dets = dir.path().join("gt.jsonl");
    write_detections(fs::File::create(&dets).unwrap(), &records).unwrap();
    let report = dir.path().join("report.json");
    let table = ok(&["eval", "--from", s(&dets), "--dataset", s(&data_dir), "--out", s(&report)]);
    assert!(table.contains("mAP"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["voc07"]["map"].as_f64(), Some(1.0));
    assert_eq!(v["voc12"]["map"].as_f64(), Some(1.0));
}

#[test]
fn train_eval_render_round() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let sets = ["--set", "train.count=4", "--set", "val.count=2"];
    let mut args = vec!["train", "--epochs", "1", "--seed", "3", "--out", s(&run)];
    args.extend_from_slice(&sets);
    let text = ok(&args);
    assert!(text.contains("epoch   1"));
    let ck = run.join("checkpoint.bin");
    assert!(ck.exists() && run.join("losses.csv").exists() && run.join("run.log").exists());

    // Resuming a finished run trains nothing more.
    let mut args = vec!["train", "--epochs", "1", "--seed", "3", "--out", s(&run), "--checkpoint", s(&ck)];
    args.extend_from_slice(&sets);
    assert!(ok(&args).contains("trained 0 steps"));

    let dets = dir.path().join("dets.jsonl");
    ok(&["eval", "--checkpoint", s(&ck), "--detections", s(&dets)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(v["images"].as_u64(), Some(2));
    assert!(dets.exists());

    let data_dir = dir.path().join("val");
    ok(&["gen-data", "--split", "val", "--set", "val.count=2", "--out", s(&data_dir)]);
    let ppm = dir.path().join("out.ppm");
    ok(&["render", "--checkpoint", s(&ck), "--dataset", s(&data_dir), "--index", "1", "--out", s(&ppm)]);
    let bytes = fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6"));
}

#[test]
fn dota_import_tiles_and_keeps_objects() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels, out) = (dir.path().join("images"), dir.path().join("labels"), dir.path().join("tiles"));
    fs::create_dir_all(&images).unwrap();
    fs::create_dir_all(&labels).unwrap();
    image::GrayImage::from_pixel(200, 120, image::Luma([90u8]))
        .save(images.join("P0001.png"))
        .unwrap();
    fs::write(
        labels.join("P0001.txt"),
        "imagesource:synthetic\ngsd:0.5\n10 10 40 10 40 30 10 30 plane 0\n150 60 180 60 180 80 150 80 ship 1\n",
    )
    .unwrap();
    let text = ok(&[
        "import-dota", "--images", s(&images), "--labels", s(&labels), "--tile", "128", "--stride", "96", "--out", s(&out),
    ]);
    assert!(text.contains("2 tiles"), "{text}");
    let data = Dataset::load(&out).unwrap();
    assert_eq!(data.classes, vec!["plane".to_string(), "ship".to_string()]);
    assert_eq!(data.samples[0].id, "P0001__0_0");
    assert_eq!(data.samples[0].objects.len(), 1);
    let ship = &data.samples[1].objects[0];
    assert!(ship.difficult);
    assert!((ship.obb.cx - (165.0 - 72.0)).abs() < 1e-9);
    assert!(data.samples.iter().all(|t| t.width == 128 && t.height == 128));
}

#[test]
fn bench_reports_throughput() {
    let text = ok(&["bench-iou", "--n", "2000"]);
    assert!(text.contains("pairs/s"));
}
