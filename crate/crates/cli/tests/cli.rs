use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
world.classes = 2
world.image_height = 32
world.image_width = 32
world.grid_height = 4
world.grid_width = 4
world.visual_channels = 8
world.audio_dim = 8
data.train_scenes = 12
data.test_scenes = 6
train.batch = 4
train.steps = 3
fh.min_size = 4
";

fn avloc_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avloc"))
        .args(args)
        .env("AVLOC_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn avloc(args: &[&str]) -> Output {
    avloc_threads(args, "1")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.txt");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn gen_train_eval_localize() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root, "pcm = on\npcm.cycles = 2\n");
    let data = root.join("data");
    let run = root.join("run");
    let eval = root.join("eval");
    let heat = root.join("heat");

    let o = avloc(&["gen", "--config", &cfg, "--out", &s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("train").is_dir() && data.join("test").is_dir());
    assert!(data.join("config.txt").is_file());

    let o = avloc(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out",
        &s(&run),
        "--data",
        &s(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("checkpoint").is_dir());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(resolved.lines().any(|l| l == "seed = 3"));
    assert!(resolved.lines().any(|l| l == "pcm.cycles = 2"));

    let o = avloc(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        &s(&eval),
        "--data",
        &s(&data),
        "--checkpoint",
        &s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.csv",
        "summary.txt",
        "success_curve.txt",
        "energies.csv",
        "config.txt",
    ] {
        assert!(eval.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);
    let energies = fs::read_to_string(eval.join("energies.csv")).unwrap();
    assert_eq!(energies.lines().count(), 4);

    let o = avloc(&[
        "localize",
        "--config",
        &cfg,
        "--out",
        &s(&heat),
        "--data",
        &s(&data),
        "--checkpoint",
        &s(&run),
        "--scene",
        "12",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(heat.join("scene_00012_heatmap.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
    assert!(heat.join("scene_00012_overlay.ppm").is_file());

    let o = avloc(&[
        "localize",
        "--config",
        &cfg,
        "--out",
        &s(&heat),
        "--data",
        &s(&data),
        "--checkpoint",
        &s(&run),
        "--scene",
        "0",
    ]);
    assert_eq!(code(&o), 1, "scene 0 is in the train split");
}

#[test]
fn mismatched_checkpoint_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root, "");
    let data = root.join("data");
    let run = root.join("run");
    assert_eq!(
        code(&avloc(&["gen", "--config", &cfg, "--out", &s(&data)])),
        0
    );
    assert_eq!(
        code(&avloc(&[
            "train",
            "--config",
            &cfg,
            "--out",
            &s(&run),
            "--data",
            &s(&data)
        ])),
        0
    );
    let o = avloc(&[
        "eval",
        "--config",
        &cfg,
        "--set",
        "pcm=on",
        "--out",
        &s(&root.join("e")),
        "--data",
        &s(&data),
        "--checkpoint",
        &s(&run),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint does not match"));
}

#[test]
fn empty_test_split_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root, "");
    let data = root.join("data");
    let run = root.join("run");
    assert_eq!(
        code(&avloc(&["gen", "--config", &cfg, "--out", &s(&data)])),
        0
    );
    assert_eq!(
        code(&avloc(&[
            "train",
            "--config",
            &cfg,
            "--out",
            &s(&run),
            "--data",
            &s(&data)
        ])),
        0
    );
    let empty = root.join("empty");
    fs::create_dir_all(empty.join("test")).unwrap();
    let o = avloc(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        &s(&root.join("e")),
        "--data",
        &s(&empty),
        "--checkpoint",
        &s(&run),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("o"));
    assert_eq!(code(&avloc(&[])), 1);
    assert_eq!(code(&avloc(&["frobnicate"])), 1);
    assert_eq!(code(&avloc(&["gen", "--seed", "minus-one"])), 1);
    assert_eq!(
        code(&avloc(&["gen", "--out", &out, "--set", "no.such.key=1"])),
        1
    );
    assert_eq!(
        code(&avloc(&[
            "gen",
            "--out",
            &out,
            "--set",
            "sacl.proportion=0"
        ])),
        1
    );
    assert_eq!(
        code(&avloc(&["gen", "--config", "/nonexistent/config.txt"])),
        1
    );
    assert_eq!(
        code(&avloc(&[
            "ablate", "--axis", "depth", "--data", &out, "--out", &out
        ])),
        1
    );
    assert_eq!(code(&avloc(&["--help"])), 0);
}

#[test]
fn corrupted_gradient_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    let o = avloc(&["gradcheck", "--corrupt", "--out", &s(&out)]);
    assert_eq!(code(&o), 2);
    let report = fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    assert!(report
        .lines()
        .any(|l| l.starts_with("corrupted square") && l.ends_with("FAIL")));
    assert!(out.join("config.txt").is_file());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root, "scheme = sacl\nsacl.mask = fh\n");
    let data = root.join("data");
    assert_eq!(
        code(&avloc(&["gen", "--config", &cfg, "--out", &s(&data)])),
        0
    );
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let run = root.join(format!("run{threads}"));
        let eval = root.join(format!("eval{threads}"));
        let args = [
            "train",
            "--config",
            &cfg,
            "--out",
            &s(&run),
            "--data",
            &s(&data),
        ];
        assert_eq!(code(&avloc_threads(&args, threads)), 0);
        let args = [
            "eval",
            "--config",
            &cfg,
            "--out",
            &s(&eval),
            "--data",
            &s(&data),
            "--checkpoint",
            &s(&run),
        ];
        assert_eq!(code(&avloc_threads(&args, threads)), 0);
        let mut files = Vec::new();
        let mut ckpt: Vec<_> = fs::read_dir(run.join("checkpoint"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        ckpt.sort();
        for f in ckpt.iter().chain([&run.join("train_log.csv")]) {
            files.push(fs::read(f).unwrap());
        }
        for f in ["metrics.csv", "summary.txt"] {
            files.push(fs::read(eval.join(f)).unwrap());
        }
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
}
