//! Drives the checked-in fuzz corpus through the same entry points the fuzz
//! targets use, so `cargo test` exercises every seed without a nightly
//! toolchain. The property is the fuzz targets': errors allowed, panics not.

use std::path::PathBuf;

fn corpus(name: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(name);
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap_or_else(|e| panic!("{dir:?}: {e}")) {
        let path = entry.unwrap().path();
        let bytes = std::fs::read(&path).unwrap();
        out.push((path, bytes));
    }
    assert!(!out.is_empty(), "empty corpus {name}");
    out
}

#[test]
fn config_parse_corpus_never_panics() {
    let mut parsed_ok = 0;
    for (path, bytes) in corpus("config_parse") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        let Ok(cfg) = hwnetlab::config::NetworkConfig::parse(text) else {
            continue;
        };
        let _ = cfg.digest();
        let Ok((topo, params)) = cfg.build() else {
            continue;
        };
        let _ = params.at_scale(&topo, 10);
        let _ = hwnetlab::statics::StaticData::compute(topo, params);
        parsed_ok += 1;
        let _ = path;
    }
    assert!(parsed_ok >= 4, "corpus should contain several valid configs");
}

#[test]
fn policy_flag_corpus_never_panics() {
    for (_, bytes) in corpus("policy_flag") {
        if let Ok(text) = std::str::from_utf8(&bytes) {
            let _ = hwnetlab::policies::PolicySpec::parse_flag(text);
        }
    }
}

#[test]
fn control_flag_corpus_never_panics() {
    for (_, bytes) in corpus("control_flag") {
        if let Ok(text) = std::str::from_utf8(&bytes) {
            for (m, pools) in [(1usize, 1usize), (2, 2), (3, 2)] {
                let _ = hwnetlab::diffusion::MarkovControl::parse_flag(text, m, pools);
            }
        }
    }
}

#[test]
fn mutated_configs_never_panic() {
    // Cheap deterministic mutations of the seeds: truncations, byte flips,
    // and duplications.
    for (_, bytes) in corpus("config_parse") {
        for cut in [0, 1, bytes.len() / 2, bytes.len().saturating_sub(1)] {
            let slice = &bytes[..cut.min(bytes.len())];
            if let Ok(text) = std::str::from_utf8(slice) {
                let _ = hwnetlab::config::NetworkConfig::parse(text)
                    .and_then(|cfg| cfg.build().map(|_| ()));
            }
        }
        let mut doubled = bytes.clone();
        doubled.extend_from_slice(&bytes);
        if let Ok(text) = std::str::from_utf8(&doubled) {
            let _ = hwnetlab::config::NetworkConfig::parse(text);
        }
        for i in (0..bytes.len()).step_by(7) {
            let mut flipped = bytes.clone();
            flipped[i] ^= 0x20;
            if let Ok(text) = std::str::from_utf8(&flipped) {
                let _ = hwnetlab::config::NetworkConfig::parse(text)
                    .and_then(|cfg| cfg.build().map(|_| ()));
            }
        }
    }
}
