//! The --control flag parser must never panic on arbitrary strings.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    for (m, pools) in [(1usize, 1usize), (2, 2), (3, 2)] {
        let _ = hwnetlab::diffusion::MarkovControl::parse_flag(s, m, pools);
    }
});
