//! Compiles and runs a C program against the generated header and static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "graftbench.h"

int main(void) {
    const char *lines[] = {"low lower lowest", "new newer newest", "wide wider widest"};
    gb_tokenizer *tok = NULL;
    if (gb_tokenizer_train(lines, 3, 60, &tok) != GB_STATUS_OK) return 1;
    uint32_t ids[64];
    size_t n = 0;
    if (gb_tokenizer_encode(tok, "newer lowest", ids, 64, &n) != GB_STATUS_OK) return 2;
    char buf[128];
    size_t len = 0;
    if (gb_tokenizer_decode(tok, ids, n, buf, sizeof buf, &len) != GB_STATUS_OK) return 3;
    if (strcmp(buf, "newer lowest") != 0) return 4;
    gb_tokenizer_free(tok);

    uint32_t preds[] = {0, 1, 1, 1}, golds[] = {0, 0, 1, 1};
    double f1 = 0.0;
    if (gb_weighted_f1(preds, golds, 4, 2, &f1) != GB_STATUS_OK) return 5;
    if (f1 < 0.7333 || f1 > 0.7334) return 6;

    if (gb_tokenizer_load("/nonexistent", "/nonexistent", &tok) != GB_STATUS_IO) return 7;
    if (gb_last_error() == NULL) return 8;
    printf("ok %s\n", gb_version());
    return 0;
}
"#;

/// The static library from a plain `cargo build`, or from a private build
/// next to the test binaries when that is absent.
fn static_library() -> PathBuf {
    // Test binaries live in <target>/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libgraftbench_ffi.a");
    if lib.exists() {
        return lib;
    }
    let target = profile_dir.parent().unwrap().join("c-abi");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = Command::new(cargo)
        .args(["build", "--quiet", "-p", "graftbench-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .expect("cargo");
    assert!(status.success(), "building the static library failed");
    let lib = target.join("debug/libgraftbench_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    lib
}

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/graftbench.h");
    assert!(header.exists(), "header not generated at {}", header.display());

    let lib = static_library();
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    let bin = work.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}
