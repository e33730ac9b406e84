//! Regenerates `include/chanest.h` from the annotated items in `src/lib.rs`.
//! The header is committed so pure-C consumers never need the Rust
//! toolchain; a stale checkout only falls behind when the surface changes,
//! and this script refreshes it on the next build.

use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("chanest.h");

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // Leave the committed header in place rather than failing the whole
        // build: cbindgen parse errors already surface when lib.rs itself
        // fails to compile.
        Err(e) => println!("cargo:warning=cbindgen skipped: {e}"),
    }
}
