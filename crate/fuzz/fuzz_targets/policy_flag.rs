//! The --policy flag parser must never panic on arbitrary strings.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    let _ = hwnetlab::policies::PolicySpec::parse_flag(s);
});
