#![no_main]

use libfuzzer_sys::fuzz_target;
use xorcast::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        cfg.validate().unwrap();
        let _ = cfg.utilization();
        let _ = cfg.channel.loss_param(cfg.traffic.packet_size);
    }
});
