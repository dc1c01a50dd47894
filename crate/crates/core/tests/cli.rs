use std::path::Path;
use std::process::{Command, Output};

fn ardm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ardm"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ardm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn gen_data_prints_entropy_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "markov.cfg", "dims = 8\ndata.kind = markov\ndata.transitions = 0.9,0.1;0.1,0.9\ndata.train = 100\n");
    let out = ok(d, &["--config", "markov.cfg", "--seed", "3", "gen-data", "--out", "a"]);
    assert!(out.contains("rate 0.46900 bits/dim"), "{out}");
    ok(d, &["--config", "markov.cfg", "--seed", "3", "gen-data", "--out", "b"]);
    for split in ["train.bin", "val.bin", "test.bin"] {
        assert_eq!(std::fs::read(d.join("a").join(split)).unwrap(), std::fs::read(d.join("b").join(split)).unwrap());
    }

    write(d, "uniform.cfg", "dims = 4\ndata.kind = iid\ndata.probs = 0.25,0.25,0.25,0.25\n");
    let out = ok(d, &["--config", "uniform.cfg", "gen-data", "--out", "u"]);
    assert!(out.contains("entropy: 2.00000 bits/dim"), "{out}");

    write(d, "bad.cfg", "dims = 4\ndata.kind = iid\ndata.probs = 0.5,0.6\n");
    assert_eq!(ardm(d, &["--config", "bad.cfg", "gen-data", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.cfg", "dims = 4\nclasses = 2\nlearnig_rate = 1\nbatchsize = 3\n");
    let out = ardm(dir.path(), &["--config", "c.cfg", "--checkpoint", "ck", "train"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learnig_rate") && err.contains("batchsize"), "{err}");
}

#[test]
fn train_schedule_sample_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "m.cfg",
        "dims = 6\nclasses = 2\nhidden = 8\ndepth = 1\nsteps = 60\nbatch = 8\nwarmup = 5\nlog_every = 0\n\
         data.kind = markov\ndata.transitions = 0.9,0.1;0.1,0.9\ndata.train = 200\ndata.val = 50\ndata.test = 50\n",
    );
    ok(d, &["--config", "m.cfg", "gen-data", "--out", "data"]);
    let out = ok(d, &["--config", "m.cfg", "--checkpoint", "ck", "train"]);
    assert!(out.contains("trained to step 60"), "{out}");

    let table = ok(d, &["--checkpoint", "ck", "schedule", "--budget", "6", "--out", "s6"]);
    assert!(table.contains("widths: 1 1 1 1 1 1"), "{table}");
    let one = ok(d, &["--checkpoint", "ck", "schedule", "--budget", "1"]);
    assert!(one.contains("widths: 6\n"), "{one}");
    assert_eq!(ardm(d, &["--checkpoint", "ck", "schedule", "--budget", "7"]).status.code(), Some(2));

    let sequential = ok(d, &["--checkpoint", "ck", "--seed", "9", "sample", "--count", "5"]);
    let parallel = ok(d, &["--checkpoint", "ck", "--seed", "9", "sample", "--count", "5", "--budget", "6"]);
    assert_eq!(sequential, parallel);
    assert_eq!(sequential.lines().count(), 5);

    let eval = ok(d, &["--checkpoint", "ck", "eval", "--data", "data/test.bin", "--passes", "2", "--exact"]);
    assert!(eval.contains("bits/dim") && eval.contains("exact nll"), "{eval}");
    let again = ok(d, &["--checkpoint", "ck", "eval", "--data", "data/test.bin", "--passes", "2", "--exact"]);
    assert_eq!(eval, again);

    let resumed = ok(d, &["--checkpoint", "ck", "train", "--resume", "--steps", "80"]);
    assert!(resumed.contains("trained to step 80"), "{resumed}");
}

#[test]
fn raw_file_round_trip_with_upscaling() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "u.cfg", "dims = 16\nclasses = 256\nbranching = 4\nhidden = 8\ndepth = 1\nsteps = 3\nbatch = 4\n");
    let blob: Vec<u8> = (0..1000u32).map(|i| (i * 37 % 251) as u8).collect();
    std::fs::write(d.join("blob"), &blob).unwrap();
    std::fs::write(d.join("train.bin"), {
        let mut b = Vec::new();
        b.extend(16u32.to_le_bytes());
        b.extend(256u32.to_le_bytes());
        b.extend(62u64.to_le_bytes());
        b.extend(&blob[..992]);
        b
    })
    .unwrap();
    ok(d, &["--config", "u.cfg", "--checkpoint", "ck", "train", "--train", "train.bin"]);
    let report =
        ok(d, &["--checkpoint", "ck", "compress", "blob", "blob.ardx", "--raw", "--budget", "4", "--candidates", "2"]);
    assert!(report.contains("63 records, 1008 network calls"), "{report}");
    ok(d, &["--checkpoint", "ck", "decompress", "blob.ardx", "blob.out"]);
    assert_eq!(std::fs::read(d.join("blob.out")).unwrap(), blob);

    ok(d, &["--checkpoint", "ck", "compress", "train.bin", "train.ardx"]);
    ok(d, &["--checkpoint", "ck", "decompress", "train.ardx", "train.out"]);
    assert_eq!(std::fs::read(d.join("train.out")).unwrap(), std::fs::read(d.join("train.bin")).unwrap());

    write(d, "other.cfg", "dims = 16\nclasses = 256\nbranching = 4\nhidden = 8\ndepth = 1\nsteps = 0\n");
    ok(d, &["--config", "other.cfg", "--checkpoint", "other", "train", "--train", "train.bin"]);
    let refused = ardm(d, &["--checkpoint", "other", "decompress", "blob.ardx", "x"]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("hash mismatch"));
}

#[test]
fn budgeted_compression_of_a_long_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "long.cfg", "dims = 3072\nclasses = 256\nbranching = 16\nhidden = 4\ndepth = 1\nsteps = 0\n");
    let record: Vec<u8> = (0..3072u32).map(|i| (i * 7 % 256) as u8).collect();
    std::fs::write(d.join("rec"), &record).unwrap();
    let mut ds = Vec::new();
    ds.extend(3072u32.to_le_bytes());
    ds.extend(256u32.to_le_bytes());
    ds.extend(1u64.to_le_bytes());
    ds.extend(&record);
    std::fs::write(d.join("one.bin"), ds).unwrap();
    ok(d, &["--config", "long.cfg", "--checkpoint", "ck", "train", "--train", "one.bin"]);
    let report = ok(d, &["--checkpoint", "ck", "compress", "rec", "rec.ardx", "--raw", "--budget", "50"]);
    assert!(report.contains("1 records, 100 network calls"), "{report}");
    ok(d, &["--checkpoint", "ck", "decompress", "rec.ardx", "rec.out"]);
    assert_eq!(std::fs::read(d.join("rec.out")).unwrap(), record);
}

#[test]
fn zero_step_checkpoint_matches_initialization_and_precision_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "z.cfg",
        "dims = 4\nclasses = 3\nhidden = 4\ndepth = 1\nsteps = 0\ndata.kind = iid\ndata.probs = 0.5,0.25,0.25\n",
    );
    ok(d, &["--config", "z.cfg", "--checkpoint", "a", "train"]);
    ok(d, &["--config", "z.cfg", "--checkpoint", "b", "--precision", "64", "train"]);
    assert_eq!(std::fs::read(d.join("a")).unwrap(), std::fs::read(d.join("b")).unwrap());
    ok(d, &["--config", "z.cfg", "gen-data", "--out", "data"]);
    let eval = ok(d, &["--checkpoint", "a", "eval", "--data", "data/val.bin", "--passes", "3"]);
    assert!(eval.starts_with("nll: 1.58496 ± 0.00000 bits/dim"), "{eval}");
}
