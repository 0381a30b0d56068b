use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focal-petr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn focal-petr")
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = bin(&["gen", "--seed", "3", "--out", name], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.json")).unwrap());
    let stdout = bin(&["gen", "--seed", "3"], dir.path()).stdout;
    assert_eq!(stdout, a);
}

#[test]
fn sweep_writes_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["sweep", "--out", "sweep.csv"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(csv.lines().nth(1).unwrap().starts_with("0.25,"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.25"));

    let custom = bin(&["sweep", "--ratios", "0.5,1"], dir.path());
    assert!(custom.status.success());
}

#[test]
fn run_dumps_one_attention_map_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["run", "--seed", "5", "--dump-attn", "attn", "--out", "report.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pgms = fs::read_dir(dir.path().join("attn"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 3);
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(report.matches("\"layer\":").count(), 3);
}

#[test]
fn targets_and_dump_maps_write_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(bin(&["gen", "--seed", "1", "--out", "s.json"], dir.path()).status.success());
    let out = bin(&["targets", "--scene", "s.json", "--out", "t.csv"], dir.path());
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(table.starts_with("camera,row,col,class,owner,l,t,r,b,H,du,dv,y"));
    assert_eq!(table.lines().count(), 1 + 6 * 4 * 8);

    let out = bin(&["dump-maps", "--scene", "s.json", "--scores", "random", "--out", "maps"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["tokens.csv", "cam0_P.pgm", "cam5_sampled.pgm", "cam2_H.txt"] {
        assert!(dir.path().join("maps").join(f).exists(), "{f}");
    }
}

#[test]
fn petr_and_random_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        ["run", "--mode", "petr", "--scores", "random"],
        ["run", "--mode", "focal", "--scores", "oracle"],
    ] {
        let out = bin(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("\"foreground_recall\""));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Usage and input errors exit 1.
    assert_eq!(bin(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["run", "--mode", "other"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["run", "--rho", "2"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["targets", "--scene", "missing.json"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("bad.json"), "{ \"cameras\": 0 }").unwrap();
    let out = bin(&["gen", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(bin(&["--help"], dir.path()).status.code(), Some(0));

    // Contract violations exit 2: a head whose query count is zero.
    fs::write(
        dir.path().join("head.json"),
        fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/reference_head.json"))
            .unwrap()
            .replace("\"queries\": 900", "\"queries\": 0"),
    )
    .unwrap();
    let out = bin(&["sweep", "--config", "head.json"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
