use crate::checks::{run_suite, Fault};
use crate::error::{Result, EXIT_FAILURE, EXIT_OK};

pub fn attn_check(seed: u64, fault: Option<Fault>, json: bool) -> Result<u8> {
    let results = run_suite(seed, fault)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if json {
        let doc = serde_json::json!({
            "passed": failed.is_empty(),
            "properties": results.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("json serializes"));
    } else {
        for r in &results {
            println!(
                "{:<32} {}  instances={:<5} max_error={:.3e} tolerance={:.0e}",
                r.name,
                if r.passed { "ok  " } else { "FAIL" },
                r.instances,
                r.max_error,
                r.tolerance
            );
        }
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("attention property violated: {}", failed.join(", "));
        Ok(EXIT_FAILURE)
    }
}
