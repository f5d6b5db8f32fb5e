use std::fs;
use std::path::Path;

use rgse::checkpoint;
use rgse::commands::{cmd_ablate, read_grid, run_grid};
use rgse::manifest::read_manifests;

const LAYER_GRID: &str = r#"
[base]
data.source = "synth"
synth.train = 24
synth.test = 8
synth.max_len = 8
model.kind = "hybrid"
model.d_model = 8
model.heads = 2
model.layers = 6
model.ffn_dim = 16
train.epochs = 1

[baseline]
rgse.layers = []

[[cells]]
id = "1-6"
set = { "rgse.layers" = [1, 6] }

[[cells]]
id = "1-1"
set = { "rgse.layers" = [1, 1] }

[[cells]]
id = "1-2"
set = { "rgse.layers" = [1, 2] }

[[cells]]
id = "1-3"
set = { "rgse.layers" = [1, 3] }

[[cells]]
id = "1-4"
set = { "rgse.layers" = [1, 4] }

[[cells]]
id = "4-6"
set = { "rgse.layers" = [4, 6] }

[[cells]]
id = "not-a-grid-key"
set = { "train.lr" = 0.5 }

[[cells]]
id = "out-of-range"
set = { "rgse.layers" = [5, 9] }
"#;

const VARIANT_GRID: &str = r#"
[base]
data.source = "synth"
synth.train = 300
synth.test = 60
synth.max_len = 10
model.encoder = "bigru_rgse"
model.d_emb = 16
model.d_hidden = 16
train.lr = 0.005
train.epochs = 6

[baseline]
rgse.variant = "forward"

[[cells]]
id = "bi_past"
set = { "rgse.variant" = "bi_past" }

[[cells]]
id = "bi_total"
set = { "rgse.variant" = "bi_total" }
"#;

struct Row {
    id: String,
    setting: String,
    val: f64,
    delta: Option<f64>,
}

fn rows(path: &Path) -> (Vec<String>, Vec<Row>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            Row {
                id: rec[0].to_string(),
                setting: rec[1].to_string(),
                val: rec[3].parse().unwrap(),
                delta: (&rec[4] != "-").then(|| rec[4].parse().unwrap()),
            }
        })
        .collect();
    (header, rows)
}

fn grid_file(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("grid.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn layer_placement_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let csv_path = cmd_ablate(&grid_file(dir.path(), LAYER_GRID), &out, 1).unwrap();
    let (header, rows) = rows(&csv_path);
    assert_eq!(header, ["cell_id", "setting", "steps_per_sec", "val_score", "delta"]);
    let ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["baseline", "1-6", "1-1", "1-2", "1-3", "1-4", "4-6"]);
    assert_eq!(rows[0].setting, "none");
    assert_eq!(rows[0].delta, None);
    for r in &rows[1..] {
        assert_eq!(r.setting, format!("[{}]", r.id));
        assert_eq!(r.delta, Some(r.val - rows[0].val));
        let (_, meta) = checkpoint::load(&out.join("cells").join(&r.id).join("model.params")).unwrap();
        assert_eq!(meta.config["rgse.layers"], r.setting);
        assert_eq!(read_manifests(&out.join("cells").join(&r.id)).unwrap().len(), 1);
    }
    assert!(!out.join("cells").join("not-a-grid-key").exists());
    let top = read_manifests(&out).unwrap();
    assert_eq!(top[0].command, "ablate");
    assert_eq!(top[0].artifacts, ["ablation.csv"]);
}

#[test]
fn deltas_are_exact_differences() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let csv_path = cmd_ablate(&grid_file(dir.path(), VARIANT_GRID), &out, 2).unwrap();
    let (_, rows) = rows(&csv_path);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().any(|r| r.val > 0.0), "no cell learned anything");
    for r in &rows[1..] {
        assert_eq!(r.delta.unwrap().to_bits(), (r.val - rows[0].val).to_bits());
    }

    // the same grid run serially gives the same scores
    let serial = dir.path().join("serial");
    let (_, again) = self::rows(&cmd_ablate(&dir.path().join("grid.toml"), &serial, 1).unwrap());
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!((a.val.to_bits(), a.delta.map(f64::to_bits)), (b.val.to_bits(), b.delta.map(f64::to_bits)));
    }
}

#[test]
fn empty_grid_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid_file(dir.path(), "[base]\nmodel.kind = \"hybrid\"\n");
    let out = dir.path().join("out");
    let rows = run_grid(&read_grid(&grid).unwrap(), &out, 1).unwrap();
    assert!(rows.is_empty());
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap(), "cell_id,setting,steps_per_sec,val_score,delta\n");
    assert!(!out.join("cells").exists());
}

#[test]
fn unknown_grid_section_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid_file(dir.path(), "[bases]\nmodel.kind = \"hybrid\"\n");
    assert_eq!(read_grid(&grid).unwrap_err().exit_code(), 2);
}
