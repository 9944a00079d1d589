//! The generated header must be valid C (and C++ via the compat guards).

use std::path::PathBuf;
use std::process::Command;

fn header_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mvrisk.h")
}

fn syntax_check(compiler: &str, std_flag: &str) {
    let header = header_path();
    assert!(header.exists(), "header not generated at {}", header.display());
    let out = Command::new(compiler)
        .args([std_flag, "-Wall", "-Wextra", "-Werror", "-fsyntax-only"])
        .arg(&header)
        .output();
    let out = match out {
        Ok(o) => o,
        // No compiler on this machine: nothing to check.
        Err(_) => return,
    };
    assert!(
        out.status.success(),
        "{compiler} rejected the header:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn header_is_valid_c99() {
    syntax_check("cc", "-std=c99");
}

#[test]
fn header_is_valid_cpp() {
    let header = header_path();
    let out = Command::new("c++")
        .args(["-x", "c++", "-std=c++11", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&header)
        .output();
    if let Ok(o) = out {
        assert!(
            o.status.success(),
            "c++ rejected the header:\n{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}
