use std::path::Path;
use std::process::{Command, Output};

use microforge_core::synth::DiskField;

fn mf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microforge")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TOY_ARGS: [&str; 10] = [
    "--synthetic.size=64",
    "--cut.patch_size=16",
    "--cut.patch_count=32",
    "--net.latent_dim=8",
    "--net.mapping_depth=2",
    "--net.channels=8:8,16:4,32:4",
    "--train.iterations=2",
    "--generate.count=4",
    "--quilt.rows=2",
    "--quilt.cols=2",
];

#[test]
fn pipeline_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let mut args = vec!["pipeline", "--out", "run"];
    args.extend(TOY_ARGS);
    let ok = mf(&args, cwd);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(cwd.join("run/report.json").is_file());

    let verify = mf(&["report", "run", "--verify"], cwd);
    assert_eq!(code(&verify), 0);
    let rebuilt = mf(&["report", "run"], cwd);
    assert_eq!(code(&rebuilt), 0);

    assert_eq!(code(&mf(&["pipeline", "--no.such.key=1"], cwd)), 2);
    assert_eq!(code(&mf(&["pipeline", "--exemplar", "missing.png"], cwd)), 2);
    assert_eq!(code(&mf(&["pipeline", "--config", "missing.cfg"], cwd)), 2);
    // a directory without run artifacts fails in the report stage
    std::fs::create_dir(cwd.join("empty")).unwrap();
    assert_eq!(code(&mf(&["report", "empty"], cwd)), 3);
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("a.cfg"), "out = from_file\ntrain.iterations = 1\n").unwrap();
    let mut args = vec!["ablation", "--modes", "progressive", "--config", "a.cfg"];
    args.extend(TOY_ARGS);
    // one mode is not a comparison
    assert_eq!(code(&mf(&args, cwd)), 2);
    args[2] = "progressive,sideways";
    assert_eq!(code(&mf(&args, cwd)), 2);
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let ex = DiskField { size: 48, ..DiskField::default() }.render(3);
    microforge::io::write_image(&cwd.join("ex.png"), &ex).unwrap();

    let run = |args: &[&str]| {
        let o = mf(args, cwd);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    run(&["cut", "ex.png", "p.mgpt", "--patch-size", "16", "--count", "16", "--seed", "1"]);
    run(&["train", "p.mgpt", "c.mgck", "--trace", "t.csv", "--net.latent_dim=4", "--net.mapping_depth=1", "--net.channels=8:4,16:2", "--train.iterations=1"]);
    let trace = std::fs::read_to_string(cwd.join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    run(&["generate", "c.mgck", "gen", "--count", "3", "--batch", "2"]);
    run(&["quilt", "gen", "mosaic.png", "--rows", "2", "--cols", "3"]);
    let m = microforge::io::read_image(&cwd.join("mosaic.png")).unwrap();
    assert_eq!((m.width(), m.height()), (16 * 3 - 2 * 2, 16 * 2 - 2));
    run(&["postprocess", "gen", "bin"]);
    run(&["postprocess", "ex.png", "ex_bin.png", "--recipe", "alporas"]);
    let stats = run(&["stats", "bin"]);
    let csv = String::from_utf8(stats.stdout).unwrap();
    assert!(csv.starts_with("id,area,perimeter,euler\n"));
    assert_eq!(csv.lines().count(), 4);
    run(&["stats", "bin", "--compare", "bin", "--out", "cmp"]);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(cwd.join("cmp/minkowski.json")).unwrap()).unwrap();
    assert_eq!(json["area"]["delta"], 0.0);
    let homog = run(&["homog", "ex_bin.png"]);
    assert!(String::from_utf8(homog.stdout).unwrap().starts_with("id,E,nu,"));

    assert_eq!(code(&mf(&["homog", "ex_bin.png", "--nu-solid", "0.7"], cwd)), 2);
    assert_eq!(code(&mf(&["stats", "gen"], cwd)), 2);
    assert_eq!(code(&mf(&["generate", "p.mgpt", "x"], cwd)), 2);
}
