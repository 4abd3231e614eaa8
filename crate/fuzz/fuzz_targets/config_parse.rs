//! The network config parser (TOML or JSON) must never panic: errors are
//! fine, crashes and runaway allocations are not. Successful parses are
//! pushed through validation and the full static analysis.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = hwnetlab::config::NetworkConfig::parse(text) else {
        return;
    };
    let _ = cfg.digest();
    let Ok((topo, params)) = cfg.build() else {
        return;
    };
    let _ = params.at_scale(&topo, 10);
    let _ = hwnetlab::statics::StaticData::compute(topo, params);
});
