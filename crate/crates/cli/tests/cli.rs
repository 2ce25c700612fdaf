use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remiforge_core::generate::{random_score, ScoreShape};
use remiforge_core::write_midi;

fn remiforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remiforge")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_piece(path: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ScoreShape {
        min_bars: 4,
        max_bars: 6,
        ..ScoreShape::default()
    };
    fs::write(path, write_midi(&random_score(&mut rng, &shape))).unwrap();
}

#[test]
fn tokens_survive_a_midi_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (mid, tok, back, tok2) = (
        dir.path().join("a.mid"),
        dir.path().join("a.tokens"),
        dir.path().join("b.mid"),
        dir.path().join("b.tokens"),
    );
    write_piece(&mid, 1);
    assert!(remiforge(&["tokenize", s(&mid), "--out", s(&tok)]).status.success());
    assert!(remiforge(&["detokenize", s(&tok), "--out", s(&back)]).status.success());
    assert!(remiforge(&["tokenize", s(&back), "--out", s(&tok2)]).status.success());
    assert_eq!(fs::read(&tok).unwrap(), fs::read(&tok2).unwrap());
}

#[test]
fn ids_and_names_decode_alike() {
    let dir = tempfile::tempdir().unwrap();
    let mid = dir.path().join("a.mid");
    write_piece(&mid, 2);
    let names = remiforge(&["tokenize", s(&mid)]).stdout;
    let ids = remiforge(&["tokenize", s(&mid), "--ids"]).stdout;
    fs::write(dir.path().join("n.txt"), names).unwrap();
    fs::write(dir.path().join("i.txt"), ids).unwrap();
    for f in ["n", "i"] {
        let out = dir.path().join(format!("{f}.mid"));
        assert!(remiforge(&["detokenize", s(&dir.path().join(format!("{f}.txt"))), "--out", s(&out)]).status.success());
    }
    assert_eq!(fs::read(dir.path().join("n.mid")).unwrap(), fs::read(dir.path().join("i.mid")).unwrap());
}

#[test]
fn fad_of_a_set_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    fs::write(&a, "1,2,3\n0.5,1,-1\n2,0,1\n-1,1,0\n").unwrap();
    let out = remiforge(&["fad", "--a", s(&a), "--b", s(&a)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0.000000\n");
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(remiforge(&["tokenize"]).status.code(), Some(1));
    assert_eq!(remiforge(&["no-such-command"]).status.code(), Some(1));
    let mid = dir.path().join("a.mid");
    write_piece(&mid, 3);
    let out = remiforge(&["tokenize", s(&mid), "--composer", "Liszt"]);
    assert_eq!(out.status.code(), Some(1));

    let garbage = dir.path().join("bad.mid");
    fs::write(&garbage, b"MThd nonsense").unwrap();
    assert_eq!(remiforge(&["tokenize", s(&garbage)]).status.code(), Some(2));
    let missing = dir.path().join("missing.mid");
    assert_eq!(remiforge(&["tokenize", s(&missing)]).status.code(), Some(2));
    assert!(remiforge(&["--help"]).status.success());
}

#[test]
fn failed_runs_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tokens");
    fs::write(&bad, "Composer_None Tempo_120 BOS Bar Beat_3\n").unwrap();
    let out = dir.path().join("out.mid");
    assert_eq!(remiforge(&["detokenize", s(&bad), "--out", s(&out)]).status.code(), Some(2));
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| e.unwrap().path() != out));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn training_is_reproducible_and_checkpoints_sample() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("toy.toml");
    fs::write(
        &config,
        "[model]\nn_layers = 1\nhidden = 16\nheads = 2\ncontext = 128\n\n\
         [data]\nsource = \"synthetic\"\npretrain_pieces = 6\nfinetune_per_style = 2\n\n\
         [pretrain]\nsteps = 3\nbatch_size = 2\n\n[finetune]\nsteps = 2\nbatch_size = 2\n",
    )
    .unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let r = remiforge(&["train", "--config", s(&config), "--seed", "4", "--out", s(&out)]);
            assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
            out
        })
        .collect();
    for file in ["pretrained.ckpt", "model.ckpt", "run.json"] {
        assert_eq!(fs::read(runs[0].join(file)).unwrap(), fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
    let ckpt = runs[0].join("model.ckpt");
    let sample = remiforge(&["sample", "--checkpoint", s(&ckpt), "--composer", "bach", "--max-new", "20", "--seed", "1"]);
    assert!(sample.status.success());
    assert!(String::from_utf8(sample.stdout).unwrap().starts_with("Composer_Bach\nTempo_120\nBOS\n"));
}

#[test]
fn vocabulary_listing_has_every_id() {
    let out = remiforge(&["vocab"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 170);
    assert_eq!(lines[0], "0\tPad");
}
