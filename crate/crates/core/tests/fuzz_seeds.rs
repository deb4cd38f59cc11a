//! Replays the checked-in fuzz corpus through every decoder on stable Rust.
//!
//! `LCSAC_WRITE_SEEDS=1 cargo test --test fuzz_seeds` regenerates the seeds.

use std::fs;
use std::path::{Path, PathBuf};

use lcsac::codec::{decode_checkpoint, encode_checkpoint};
use lcsac::config::RunConfig;
use lcsac::metrics::RunMetrics;
use lcsac::params::ParamSet;
use lcsac::plot::{read_curve_csv, render_svg};
use lcsac::replay::{ContextBuffer, RlBuffer, RlTuple, Transition};
use lcsac::sac::{SacAgent, SacConfig};
use lcsac::trainer::{run_training, stream, RunOptions};

fn corpus(target: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target)
}

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = corpus(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.iter().map(|p| fs::read(p).unwrap()).collect()
}

/// Valid encodings plus truncated and bit-flipped variants.
fn write_variants(target: &str, valid: &[Vec<u8>]) {
    let dir = corpus(target);
    fs::create_dir_all(&dir).unwrap();
    for (i, v) in valid.iter().enumerate() {
        fs::write(dir.join(format!("valid_{i}")), v).unwrap();
        fs::write(dir.join(format!("truncated_{i}")), &v[..v.len() / 2]).unwrap();
        let mut flipped = v.clone();
        if let Some(b) = flipped.get_mut(v.len() / 3) {
            *b ^= 0x5a;
        }
        fs::write(dir.join(format!("flipped_{i}")), flipped).unwrap();
    }
    fs::write(dir.join("empty"), b"").unwrap();
}

fn generate() {
    let mut agent_rng = stream(0, 0);
    let agent = SacAgent::new(
        SacConfig {
            hidden: vec![4],
            ..SacConfig::default()
        },
        2,
        1,
        1,
        &mut agent_rng,
    )
    .unwrap();
    let ckpts = vec![encode_checkpoint(&agent.checkpoint()), encode_checkpoint(&ParamSet::default())];
    write_variants("decode_checkpoint", &ckpts);

    let mut cb = ContextBuffer::new(2, 1, 8);
    let mut rl = RlBuffer::new(1, 2, 1, 8);
    for k in 0..11 {
        let x = k as f64;
        cb.push(&Transition {
            s: vec![x, -x],
            a: vec![0.5],
            r: -x,
            s_next: vec![x + 1.0, -x],
            done: k % 4 == 3,
        })
        .unwrap();
        rl.push(&RlTuple {
            c: vec![x],
            s: vec![x, 0.0],
            a: vec![-0.5],
            r: -x,
            s_next: vec![x, 1.0],
            c_next: vec![x + 0.5],
            done: k % 5 == 4,
        })
        .unwrap();
    }
    write_variants("context_snapshot", &[cb.encode_snapshot(), ContextBuffer::new(1, 1, 3).encode_snapshot()]);
    write_variants("rl_snapshot", &[rl.encode_snapshot(), RlBuffer::new(0, 1, 1, 2).encode_snapshot()]);

    let configs = vec![
        b"{}".to_vec(),
        RunConfig::default().to_json_pretty().into_bytes(),
        br#"{"env": {"name": "DriftingMass"}, "train": {"seed": 3, "encoder_every": null}}"#.to_vec(),
    ];
    write_variants("run_config", &configs);

    let mut cfg = RunConfig::default();
    cfg.sac.hidden = vec![8];
    cfg.encoder.context_dim = 2;
    cfg.encoder.embed_width = 4;
    cfg.encoder.lstm_hidden = 4;
    cfg.encoder.batch = 4;
    cfg.encoder.segment_len = 3;
    cfg.train.total_steps = 400;
    cfg.train.warmup = 200;
    cfg.train.rl_updates = Some(2);
    cfg.train.encoder_every = Some(100);
    cfg.train.encoder_updates = 1;
    cfg.train.eval_every = 200;
    cfg.train.eval_episodes = 1;
    let csv = run_training(cfg, RunOptions::default()).unwrap().metrics.to_csv().into_bytes();
    write_variants("metrics_csv", &[csv.clone()]);
    write_variants(
        "curve_csv",
        &[csv, b"step,eval_mean,eval_std\n0,-5,1\n10,-3,0.5\n".to_vec()],
    );
}

#[test]
fn corpus_seeds_decode_without_panicking() {
    if std::env::var_os("LCSAC_WRITE_SEEDS").is_some() {
        generate();
    }
    let mut accepted = 0;
    for bytes in seeds("decode_checkpoint") {
        if let Ok(p) = decode_checkpoint(&bytes) {
            accepted += 1;
            assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
        }
    }
    for bytes in seeds("context_snapshot") {
        if let Ok(b) = ContextBuffer::decode_snapshot(&bytes) {
            accepted += 1;
            assert_eq!(ContextBuffer::decode_snapshot(&b.encode_snapshot()).unwrap().encode_snapshot(), b.encode_snapshot());
        }
    }
    for bytes in seeds("rl_snapshot") {
        if let Ok(b) = RlBuffer::decode_snapshot(&bytes) {
            accepted += 1;
            assert_eq!(RlBuffer::decode_snapshot(&b.encode_snapshot()).unwrap().encode_snapshot(), b.encode_snapshot());
        }
    }
    for bytes in seeds("run_config") {
        if let Ok(c) = RunConfig::load(&String::from_utf8_lossy(&bytes), &[]) {
            accepted += 1;
            assert_eq!(RunConfig::from_json_str(&c.to_json_pretty()).unwrap(), c);
        }
    }
    for bytes in seeds("metrics_csv") {
        if let Ok(m) = RunMetrics::from_csv(&String::from_utf8_lossy(&bytes)) {
            accepted += 1;
            assert_eq!(RunMetrics::from_csv(&m.to_csv()).unwrap().to_csv(), m.to_csv());
        }
    }
    for bytes in seeds("curve_csv") {
        if let Ok(s) = read_curve_csv("seed", &String::from_utf8_lossy(&bytes)) {
            accepted += 1;
            render_svg(&[s]).unwrap();
        }
    }
    // every valid seed is accepted
    assert!(accepted >= 12, "{accepted}");
}
